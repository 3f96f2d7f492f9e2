import numpy as np
import pytest

from xea import pe
from pe_fixtures import build_pe, fixture_corpus, E_LFANEW


@pytest.fixture(scope="module")
def corpus():
    return fixture_corpus()


def _diff_offsets(a: bytes, b: bytes) -> list[int]:
    assert len(a) == len(b)
    return [i for i in range(len(a)) if a[i] != b[i]]


def test_corpus_parses(corpus):
    assert len(corpus) >= 5
    formats = set()
    for name, raw in corpus.items():
        img = pe.parse(raw)
        formats.add(img.format)
        assert img.n_sections == len(img.sections)
        assert img.n_data_directories == 16
    assert formats == {"pe32", "pe32plus"}


def test_parse_rejects_garbage():
    with pytest.raises(pe.PeParseError):
        pe.parse(b"short")
    with pytest.raises(pe.PeParseError):
        pe.parse(b"ZZ" + b"\0" * 200)
    raw = bytearray(build_pe())
    raw[E_LFANEW:E_LFANEW + 4] = b"XX\0\0"
    with pytest.raises(pe.PeParseError):
        pe.parse(bytes(raw))


def test_timedate_patch_locus(corpus):
    for raw in corpus.values():
        img = pe.parse(raw)
        out = pe.patch_timedate_stamp(img, 0xDEADBEEF)
        assert out.timedate_stamp == 0xDEADBEEF
        locus = img.e_lfanew + 8
        diffs = _diff_offsets(raw, out.raw)
        assert set(diffs) <= set(range(locus, locus + 4))
        assert len(diffs) >= 1


def test_clr_patch_locus(corpus):
    for raw in corpus.values():
        img = pe.parse(raw)
        out = pe.patch_clr_fields(img, size=0x1234, va=0x5678)
        assert out.data_directory(pe.CLR_DIRECTORY_INDEX) == (0x5678, 0x1234)
        locus = img.data_directory_offset + 8 * pe.CLR_DIRECTORY_INDEX
        diffs = _diff_offsets(raw, out.raw)
        assert set(diffs) <= set(range(locus, locus + 8))


def test_clr_patch_requires_directory():
    raw = build_pe("pe32", n_dirs=8)
    with pytest.raises(pe.PePatchError):
        pe.patch_clr_fields(pe.parse(raw), 1, 1)


def test_overlay_append_only(corpus):
    payload = b"overlaid bytes " * 9
    for raw in corpus.values():
        out = pe.append_overlay(pe.parse(raw), payload)
        assert out.raw[:len(raw)] == raw
        assert out.raw[len(raw):] == payload


def test_append_section_roundtrip(corpus):
    content = b"printable! " * 40
    for raw in corpus.values():
        img = pe.parse(raw)
        out = pe.append_section(img, b".xtra", content)
        assert out.n_sections == img.n_sections + 1
        sec = out.sections[-1]
        assert sec.name.rstrip(b"\0") == b".xtra"
        assert out.raw[sec.pointer_to_raw_data:
                       sec.pointer_to_raw_data + len(content)] == content
        # existing bytes unchanged except the bookkeeping headers
        diffs = _diff_offsets(raw, out.raw[:len(raw)])
        entry = img.section_table_offset + img.n_sections * pe.SECTION_HEADER_SIZE
        allowed = set(range(entry, entry + pe.SECTION_HEADER_SIZE))
        allowed |= set(range(img.coff_header_offset + 2, img.coff_header_offset + 4))
        allowed |= set(range(img.optional_header_offset + 56,
                             img.optional_header_offset + 60))
        assert set(diffs) <= allowed
        # reparse of the patched bytes must agree
        again = pe.parse(out.raw)
        assert again.sections == out.sections


def test_append_section_requires_header_slack():
    raw = build_pe("pe32", header_slack=False)
    with pytest.raises(pe.PePatchError):
        pe.append_section(pe.parse(raw), b".xtra", b"data")


def test_append_section_refuses_dirty_slack():
    raw = bytearray(build_pe("pe32"))
    img = pe.parse(bytes(raw))
    entry = img.section_table_offset + img.n_sections * pe.SECTION_HEADER_SIZE
    raw[entry + 3] = 0x7F
    with pytest.raises(pe.PePatchError):
        pe.append_section(pe.parse(bytes(raw)), b".xtra", b"data")
    with pytest.raises(pe.PePatchError):
        pe.append_section(img, b"overlylongname", b"data")


def test_patch_plan_validation():
    with pytest.raises(ValueError):
        pe.PatchPlan((("timedate_stamp", 1), ("timedate_stamp", 2)))
    with pytest.raises(ValueError):
        pe.PatchPlan((("reformat_disk", 1),))


def test_apply_plan_combined(corpus):
    raw = corpus["pe32plus_one_section"]
    plan = pe.PatchPlan((
        ("timedate_stamp", 42),
        ("clr_size", 0x100),
        ("clr_virtual_address", 0x2000),
        ("append_printable_section", (b".buf", b"A" * 64)),
        ("append_overlay", b"tail"),
    ))
    out = pe.apply_plan(pe.parse(raw), plan)
    assert out.timedate_stamp == 42
    assert out.data_directory(pe.CLR_DIRECTORY_INDEX) == (0x2000, 0x100)
    assert out.sections[-1].name.rstrip(b"\0") == b".buf"
    assert out.raw.endswith(b"tail")


def test_printable_counts():
    counts = pe.printable_counts(b"\x00\x01AAB !\x7f\x80\xff")
    assert counts.sum() == 6  # A A B space ! DEL
    assert counts[ord("A") - pe.PRINTABLE_BASE] == 2
    assert counts[0] == 1  # space


def test_build_printable_buffer_reaches_target(corpus):
    g = np.random.default_rng(0)
    h = g.random(pe.N_PRINTABLE)
    h /= h.sum()
    target = pe.CharDistributionTarget(h)
    for raw in corpus.values():
        current = pe.printable_counts(raw)
        buf = pe.build_printable_buffer(current, target)
        assert all(pe.PRINTABLE_BASE <= b < pe.PRINTABLE_BASE + pe.N_PRINTABLE
                   for b in buf)
        combined = current + pe.printable_counts(buf)
        l1 = np.abs(combined / combined.sum() - h).sum()
        assert l1 <= pe.DISTRIBUTION_L1_TOL


def test_build_printable_buffer_size_minimal():
    current = pe.printable_counts(b"zzzzqqqq" * 50)
    h = np.full(pe.N_PRINTABLE, 1.0 / pe.N_PRINTABLE)
    target = pe.CharDistributionTarget(h)
    buf = pe.build_printable_buffer(current, target)
    n = len(buf)
    assert n > 0
    if n > 1:
        # one byte fewer cannot reach the tolerance
        a = pe._buffer_counts_for(n - 1, current.astype(float), h)
        assert pe._l1_after(a, current.astype(float), h) > pe.DISTRIBUTION_L1_TOL


def test_distribution_target_validation():
    with pytest.raises(ValueError):
        pe.CharDistributionTarget(np.full(95, 1 / 95))
    h = np.full(pe.N_PRINTABLE, 1.0 / pe.N_PRINTABLE)
    with pytest.raises(ValueError):
        pe.CharDistributionTarget(h * 2)
    with pytest.raises(ValueError):
        pe.CharDistributionTarget(h, buffer_size_cap=pe.DEFAULT_BUFFER_CAP + 1)


def test_buffer_cap_enforced():
    h = np.zeros(pe.N_PRINTABLE)
    h[0] = 1.0  # all mass on one character
    target = pe.CharDistributionTarget(h, buffer_size_cap=64)
    current = np.zeros(pe.N_PRINTABLE)
    current[1] = 10000.0  # needs a huge buffer to drown this out
    with pytest.raises(pe.CapacityError) as exc:
        pe.build_printable_buffer(current, target)
    assert exc.value.required_size > 64
