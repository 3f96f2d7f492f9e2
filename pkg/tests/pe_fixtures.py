"""Builders for small synthetic PE32/PE32+ files used by the patcher tests.

The images are structurally valid for our parser (MZ stub, PE signature,
COFF header, optional header with 16 data directories, section table, aligned
section data) but contain no executable code.
"""

from __future__ import annotations

import struct

E_LFANEW = 0x80
FILE_ALIGN = 0x200
SECTION_ALIGN = 0x1000
SECTION_HEADER_SIZE = 40

_SCN_CODE = 0x00000020 | 0x20000000 | 0x40000000


def build_pe(fmt: str = "pe32", n_sections: int = 1, n_dirs: int = 16,
             timedate: int = 0x5F000001, header_slack: bool = True,
             section_fill: bytes = b"") -> bytes:
    """A minimal valid PE image.

    ``header_slack=False`` shrinks size_of_headers so that no room remains for
    an extra section-table entry.  ``section_fill`` seeds the first section's
    raw data (padded/truncated to one file-alignment unit).
    """
    if fmt == "pe32":
        magic, opt_size, rva_count_off, dirs_off = 0x10B, 96 + 8 * 16, 92, 96
    elif fmt == "pe32plus":
        magic, opt_size, rva_count_off, dirs_off = 0x20B, 112 + 8 * 16, 108, 112
    else:
        raise ValueError(fmt)

    coff = E_LFANEW + 4
    opt = coff + 20
    sect_table = opt + opt_size
    header_end = sect_table + n_sections * SECTION_HEADER_SIZE
    size_of_headers = FILE_ALIGN
    if not header_slack:
        size_of_headers = header_end  # no room for another 40-byte entry
    if header_end > FILE_ALIGN:
        raise ValueError("fixture headers exceed one alignment unit")

    buf = bytearray(max(size_of_headers, header_end))
    buf[0:2] = b"MZ"
    struct.pack_into("<I", buf, 0x3C, E_LFANEW)
    buf[E_LFANEW:E_LFANEW + 4] = b"PE\0\0"

    machine = 0x014C if fmt == "pe32" else 0x8664
    struct.pack_into("<HHIIIHH", buf, coff, machine, n_sections, timedate,
                     0, 0, opt_size, 0x0102)

    struct.pack_into("<H", buf, opt, magic)
    struct.pack_into("<I", buf, opt + 32, SECTION_ALIGN)
    struct.pack_into("<I", buf, opt + 36, FILE_ALIGN)
    struct.pack_into("<I", buf, opt + 60, size_of_headers)
    struct.pack_into("<I", buf, opt + rva_count_off, n_dirs)
    # data directories left zeroed (no CLR metadata yet)

    raw = bytearray(buf.ljust(size_of_headers, b"\0"))
    va = SECTION_ALIGN
    for k in range(n_sections):
        raw_ptr = len(raw)
        data = section_fill[:FILE_ALIGN].ljust(FILE_ALIGN, b"\0") if k == 0 \
            else bytes([0x41 + k]) * FILE_ALIGN
        raw.extend(data)
        off = sect_table + k * SECTION_HEADER_SIZE
        name = f".sec{k}".encode().ljust(8, b"\0")
        struct.pack_into("<8sIIII", raw, off, name, FILE_ALIGN, va,
                         FILE_ALIGN, raw_ptr)
        struct.pack_into("<I", raw, off + 36, _SCN_CODE)
        va += SECTION_ALIGN

    struct.pack_into("<I", raw, opt + 56, va)  # size_of_image
    return bytes(raw)


def fixture_corpus() -> dict[str, bytes]:
    """Named corpus covering both formats and several structural variants."""
    return {
        "pe32_one_section": build_pe("pe32"),
        "pe32plus_one_section": build_pe("pe32plus"),
        "pe32_two_sections": build_pe("pe32", n_sections=2),
        "pe32plus_two_sections": build_pe("pe32plus", n_sections=2),
        "pe32_with_strings": build_pe(
            "pe32", section_fill=b"The quick brown fox! " * 20),
        "pe32plus_with_strings": build_pe(
            "pe32plus", section_fill=b"hello world\0spam\0eggs\0" * 15),
    }
