"""Minimal PE32/PE32+ parser and byte-level patcher.

Supports exactly the edits the attack needs on real files: the COFF header
timestamp, the CLR data-directory entry (index 14), appending a new section,
and appending overlay bytes, plus construction of a printable-character
buffer that tilts the file's printable distribution toward a target.

Images are immutable values: every patch returns a new, re-parsed image.
The header checksum is zeroed after header patches (the loader ignores it
for non-driver images).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

SECTION_HEADER_SIZE = 40
CLR_DIRECTORY_INDEX = 14
N_PRINTABLE = 96          # byte values 0x20..0x7F
PRINTABLE_BASE = 0x20
DEFAULT_BUFFER_CAP = 4 * 1024 * 1024
DISTRIBUTION_L1_TOL = 0.01

_CHECKSUM_OFFSET = 64     # from optional header start
_SCN_INITIALIZED_DATA = 0x00000040
_SCN_MEM_READ = 0x40000000


class PeParseError(ValueError):
    pass


class PePatchError(ValueError):
    pass


class CapacityError(ValueError):
    def __init__(self, message: str, required_size: int):
        super().__init__(message)
        self.required_size = required_size


@dataclass(frozen=True)
class SectionHeader:
    name: bytes
    virtual_size: int
    virtual_address: int
    size_of_raw_data: int
    pointer_to_raw_data: int
    characteristics: int


@dataclass(frozen=True)
class PeImage:
    raw: bytes
    format: str  # pe32 | pe32plus
    e_lfanew: int
    coff_header_offset: int
    optional_header_offset: int
    optional_header_size: int
    n_data_directories: int
    data_directory_offset: int
    section_table_offset: int
    n_sections: int
    sections: tuple[SectionHeader, ...]
    file_alignment: int
    section_alignment: int
    size_of_image: int
    size_of_headers: int
    timedate_stamp: int

    def data_directory(self, index: int) -> tuple[int, int]:
        """(virtual_address, size) of directory entry ``index``."""
        if index >= self.n_data_directories:
            raise PeParseError(f"data directory {index} not present "
                               f"({self.n_data_directories} entries)")
        off = self.data_directory_offset + 8 * index
        va, size = struct.unpack_from("<II", self.raw, off)
        return va, size


def _u16(data, off):
    return struct.unpack_from("<H", data, off)[0]


def _u32(data, off):
    return struct.unpack_from("<I", data, off)[0]


def parse(data: bytes) -> PeImage:
    if len(data) < 64:
        raise PeParseError(f"file too short for a DOS header ({len(data)} bytes)")
    if data[:2] != b"MZ":
        raise PeParseError("missing MZ magic")
    e_lfanew = _u32(data, 0x3C)
    if len(data) < e_lfanew + 24:
        raise PeParseError("truncated PE headers")
    if data[e_lfanew:e_lfanew + 4] != b"PE\0\0":
        raise PeParseError("missing PE signature")
    coff = e_lfanew + 4
    n_sections = _u16(data, coff + 2)
    timedate = _u32(data, coff + 4)
    opt_size = _u16(data, coff + 16)
    opt = coff + 20
    if len(data) < opt + opt_size:
        raise PeParseError("truncated optional header")
    magic = _u16(data, opt)
    if magic == 0x10B:
        fmt, rva_count_off, dirs_off = "pe32", 92, 96
    elif magic == 0x20B:
        fmt, rva_count_off, dirs_off = "pe32plus", 108, 112
    else:
        raise PeParseError(f"unknown optional header magic 0x{magic:x}")
    section_align = _u32(data, opt + 32)
    file_align = _u32(data, opt + 36)
    if file_align == 0 or file_align & (file_align - 1):
        raise PeParseError(f"file alignment {file_align} is not a power of two")
    size_of_image = _u32(data, opt + 56)
    size_of_headers = _u32(data, opt + 60)
    n_dirs = _u32(data, opt + rva_count_off) if opt_size >= rva_count_off + 4 else 0

    sect_table = opt + opt_size
    if len(data) < sect_table + n_sections * SECTION_HEADER_SIZE:
        raise PeParseError("section table outside file")
    sections = []
    for k in range(n_sections):
        off = sect_table + k * SECTION_HEADER_SIZE
        name = bytes(data[off:off + 8])
        vsize, va, rawsize, rawptr = struct.unpack_from("<IIII", data, off + 8)
        chars = _u32(data, off + 36)
        if rawsize and rawptr + rawsize > len(data):
            raise PeParseError(f"section {name!r} raw data outside file")
        sections.append(SectionHeader(name, vsize, va, rawsize, rawptr, chars))
    return PeImage(
        raw=bytes(data), format=fmt, e_lfanew=e_lfanew, coff_header_offset=coff,
        optional_header_offset=opt, optional_header_size=opt_size,
        n_data_directories=n_dirs, data_directory_offset=opt + dirs_off,
        section_table_offset=sect_table, n_sections=n_sections,
        sections=tuple(sections), file_alignment=file_align,
        section_alignment=section_align, size_of_image=size_of_image,
        size_of_headers=size_of_headers, timedate_stamp=timedate)


def _with_zeroed_checksum(buf: bytearray, image: PeImage) -> None:
    struct.pack_into("<I", buf, image.optional_header_offset + _CHECKSUM_OFFSET, 0)


def patch_timedate_stamp(image: PeImage, value: int) -> PeImage:
    buf = bytearray(image.raw)
    struct.pack_into("<I", buf, image.e_lfanew + 8, value & 0xFFFFFFFF)
    _with_zeroed_checksum(buf, image)
    return parse(bytes(buf))


def patch_clr_fields(image: PeImage, size: int, va: int) -> PeImage:
    if image.n_data_directories <= CLR_DIRECTORY_INDEX:
        raise PePatchError(
            f"optional header has only {image.n_data_directories} data directories; "
            f"CLR entry {CLR_DIRECTORY_INDEX} not present")
    buf = bytearray(image.raw)
    off = image.data_directory_offset + 8 * CLR_DIRECTORY_INDEX
    struct.pack_into("<II", buf, off, va & 0xFFFFFFFF, size & 0xFFFFFFFF)
    _with_zeroed_checksum(buf, image)
    return parse(bytes(buf))


def append_overlay(image: PeImage, content: bytes) -> PeImage:
    return parse(image.raw + content)


def _align_up(n: int, align: int) -> int:
    return n if n % align == 0 else (n // align + 1) * align


def append_section(image: PeImage, name: bytes, content: bytes) -> PeImage:
    """Add a section holding ``content``.  Requires slack in the header region
    for one more section-table entry; header relocation is not attempted."""
    if len(name) > 8:
        raise PePatchError("section name longer than 8 bytes")
    name = name.ljust(8, b"\0")
    entry_off = image.section_table_offset + image.n_sections * SECTION_HEADER_SIZE
    if entry_off + SECTION_HEADER_SIZE > image.size_of_headers:
        raise PePatchError("no header slack for another section entry")
    if any(b != 0 for b in image.raw[entry_off:entry_off + SECTION_HEADER_SIZE]):
        raise PePatchError("header slack is not zeroed; refusing to overwrite")

    raw_off = _align_up(len(image.raw), image.file_alignment)
    raw_size = _align_up(max(len(content), 1), image.file_alignment)
    last_end = image.size_of_headers
    for s in image.sections:
        last_end = max(last_end, s.virtual_address + max(s.virtual_size, s.size_of_raw_data))
    va = _align_up(last_end, image.section_alignment)
    vsize = max(len(content), 1)

    buf = bytearray(image.raw)
    buf.extend(b"\0" * (raw_off - len(buf)))
    buf.extend(content)
    buf.extend(b"\0" * (raw_off + raw_size - len(buf)))

    struct.pack_into("<8sIIII", buf, entry_off, name, vsize, va, raw_size, raw_off)
    struct.pack_into("<I", buf, entry_off + 36, _SCN_INITIALIZED_DATA | _SCN_MEM_READ)
    struct.pack_into("<H", buf, image.coff_header_offset + 2, image.n_sections + 1)
    new_size_of_image = va + _align_up(vsize, image.section_alignment)
    struct.pack_into("<I", buf, image.optional_header_offset + 56, new_size_of_image)
    _with_zeroed_checksum(buf, image)
    return parse(bytes(buf))


PATCH_KINDS = ("timedate_stamp", "clr_size", "clr_virtual_address",
               "append_printable_section", "append_overlay")


@dataclass(frozen=True)
class PatchPlan:
    """Ordered edits to apply to one image; at most one edit per kind."""
    edits: tuple[tuple[str, object], ...]  # (kind, payload)

    def __post_init__(self):
        kinds = [k for k, _ in self.edits]
        if len(kinds) != len(set(kinds)):
            raise ValueError("duplicate edit kind in patch plan")
        unknown = set(kinds) - set(PATCH_KINDS)
        if unknown:
            raise ValueError(f"unknown edit kinds: {sorted(unknown)}")


def apply_plan(image: PeImage, plan: PatchPlan) -> PeImage:
    edits = dict(plan.edits)
    if "timedate_stamp" in edits:
        image = patch_timedate_stamp(image, int(edits["timedate_stamp"]))
    if "clr_size" in edits or "clr_virtual_address" in edits:
        va, size = image.data_directory(CLR_DIRECTORY_INDEX)
        size = int(edits.get("clr_size", size))
        va = int(edits.get("clr_virtual_address", va))
        image = patch_clr_fields(image, size, va)
    if "append_printable_section" in edits:
        name, content = edits["append_printable_section"]
        image = append_section(image, name, content)
    if "append_overlay" in edits:
        image = append_overlay(image, edits["append_overlay"])
    return image


# --- printable-character distribution -------------------------------------

@dataclass(frozen=True)
class CharDistributionTarget:
    histogram: np.ndarray  # (96,) simplex over printable byte values
    buffer_size_cap: int = DEFAULT_BUFFER_CAP

    def __post_init__(self):
        h = np.asarray(self.histogram, dtype=float)
        if h.shape != (N_PRINTABLE,):
            raise ValueError(f"histogram must have {N_PRINTABLE} entries")
        if np.any(h < 0) or abs(h.sum() - 1.0) > 1e-9:
            raise ValueError("histogram must be a simplex")
        if self.buffer_size_cap > DEFAULT_BUFFER_CAP:
            raise ValueError("buffer cap above 4 MiB")
        object.__setattr__(self, "histogram", h)


def printable_counts(data: bytes) -> np.ndarray:
    """Counts of the 96 printable byte values 0x20..0x7F in ``data``."""
    arr = np.frombuffer(data, dtype=np.uint8)
    counts = np.bincount(arr, minlength=256)
    return counts[PRINTABLE_BASE:PRINTABLE_BASE + N_PRINTABLE].astype(np.uint64)


def _buffer_counts_for(n: int, current: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Non-negative integer counts summing to n, closest to the ideal mix."""
    total = current.sum() + n
    ideal = target * total - current
    a = np.maximum(np.round(ideal), 0).astype(np.int64)
    diff = int(n - a.sum())
    resid = ideal - a
    while diff != 0:
        if diff > 0:
            i = int(np.argmax(resid))
            a[i] += 1
            resid[i] -= 1
            diff -= 1
        else:
            adjustable = a > 0
            r = np.where(adjustable, resid, np.inf)
            i = int(np.argmin(r))
            a[i] -= 1
            resid[i] += 1
            diff += 1
    return a


def _l1_after(a: np.ndarray, current: np.ndarray, target: np.ndarray) -> float:
    total = current.sum() + a.sum()
    return float(np.abs((current + a) / total - target).sum())


def build_printable_buffer(current_counts: np.ndarray,
                           target: CharDistributionTarget) -> bytes:
    """Smallest printable buffer that brings the combined distribution within
    L1 distance 0.01 of the target.

    The size is found by geometric growth followed by a binary search between
    the last failing and the first succeeding size.
    """
    current = np.asarray(current_counts, dtype=np.float64)
    if current.shape != (N_PRINTABLE,):
        raise ValueError(f"current_counts must have {N_PRINTABLE} entries")
    t = target.histogram

    def ok(n: int) -> np.ndarray | None:
        a = _buffer_counts_for(n, current, t)
        return a if _l1_after(a, current, t) <= DISTRIBUTION_L1_TOL else None

    hard_limit = 1 << 40
    n, prev = 0, 0
    best = None
    while True:
        a = ok(n)
        if a is not None:
            best = (n, a)
            break
        if n >= hard_limit:
            raise CapacityError("target distribution unreachable", hard_limit)
        prev, n = n, max(1, n * 2)

    lo, hi = prev, best[0]
    while hi - lo > 1:
        mid = (lo + hi) // 2
        a = ok(mid)
        if a is not None:
            best = (mid, a)
            hi = mid
        else:
            lo = mid
    n, a = best
    if n > target.buffer_size_cap:
        raise CapacityError(
            f"buffer of {n} bytes needed, cap is {target.buffer_size_cap}", n)
    return b"".join(bytes([PRINTABLE_BASE + i]) * int(c) for i, c in enumerate(a))
