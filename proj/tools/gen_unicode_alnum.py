#!/usr/bin/env python3
"""Regenerates include/lean_refactor/detail/unicode_alnum_table.hpp.

The proof-length metric classifies characters with Python's str.isalnum, so
the table is produced by the interpreter itself.
"""
import sys
import unicodedata


def ranges():
    out, start = [], None
    for cp in range(0x110000):
        alnum = chr(cp).isalnum()
        if alnum and start is None:
            start = cp
        elif not alnum and start is not None:
            out.append((start, cp - 1))
            start = None
    if start is not None:
        out.append((start, 0x10FFFF))
    return out


def main():
    rs = ranges()
    lines = [
        "// Generated by tools/gen_unicode_alnum.py. Do not edit.",
        f"// Source: Python {sys.version.split()[0]}, Unicode {unicodedata.unidata_version}.",
        "#pragma once",
        "",
        "#include <array>",
        "#include <cstdint>",
        "",
        "namespace lean_refactor::detail {",
        "",
        "struct CodePointRange {",
        "  std::uint32_t first;",
        "  std::uint32_t last;",
        "};",
        "",
        f'inline constexpr const char* kAlnumUnicodeVersion = "{unicodedata.unidata_version}";',
        "",
        f"inline constexpr std::array<CodePointRange, {len(rs)}> kAlnumRanges{{{{",
    ]
    for a, b in rs:
        lines.append(f"    {{0x{a:05X}, 0x{b:05X}}},")
    lines += ["}};", "", "}  // namespace lean_refactor::detail", ""]
    sys.stdout.write("\n".join(lines))


if __name__ == "__main__":
    main()
