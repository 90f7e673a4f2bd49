#!/usr/bin/env python3
"""Regenerates src/unicode_data.cpp from the running CPython's Unicode tables.

The text pipeline lowercases with the same semantics as Python's str.lower()
(per-codepoint mappings plus the final-sigma rule) and splits on str.split()'s
whitespace set. The tables below are extracted empirically so the C++ side
stays in lockstep with the Python interpreter used for reference checks.

Usage: python3 tools/gen_unicode_data.py > src/unicode_data.cpp
"""

import sys

MAX_CP = 0x110000
SURROGATES = range(0xD800, 0xE000)


def codepoints():
    for cp in range(MAX_CP):
        if cp not in SURROGATES:
            yield cp


def ranges(sorted_cps):
    out = []
    for cp in sorted_cps:
        if out and out[-1][1] + 1 == cp:
            out[-1][1] = cp
        else:
            out.append([cp, cp])
    return out


def main():
    lower = {}
    for cp in codepoints():
        lo = chr(cp).lower()
        if lo != chr(cp):
            lower[cp] = [ord(c) for c in lo]

    # A codepoint is "cased" iff a following capital sigma takes the final form.
    cased = [cp for cp in codepoints()
             if (chr(cp) + "Σ").lower().endswith("ς")]
    cased_set = set(cased)
    # Case-ignorable: transparent to the backward scan of the final-sigma rule.
    case_ignorable = [cp for cp in codepoints()
                      if cp not in cased_set
                      and ("A" + chr(cp) + "Σ").lower().endswith("ς")]
    whitespace = [cp for cp in codepoints() if chr(cp).isspace()]

    singles = {cp: m[0] for cp, m in lower.items() if len(m) == 1}
    multis = {cp: m for cp, m in lower.items() if len(m) > 1}

    w = sys.stdout.write
    w("// Generated by tools/gen_unicode_data.py -- do not edit by hand.\n")
    w("// Source interpreter: Python %s, Unicode %s.\n" % (
        ".".join(map(str, sys.version_info[:3])),
        __import__("unicodedata").unidata_version))
    w("#include \"adlink/unicode.hpp\"\n\n")
    w("namespace adlink::uni::detail {\n\n")

    w("const std::pair<uint32_t, uint32_t> kLowerSingle[] = {\n")
    items = sorted(singles.items())
    for i in range(0, len(items), 6):
        row = ", ".join("{0x%X, 0x%X}" % kv for kv in items[i:i + 6])
        w("    %s,\n" % row)
    w("};\n")
    w("const size_t kLowerSingleCount = %d;\n\n" % len(items))

    w("const LowerMulti kLowerMulti[] = {\n")
    for cp, seq in sorted(multis.items()):
        assert len(seq) <= 3
        padded = seq + [0] * (3 - len(seq))
        w("    {0x%X, {0x%X, 0x%X, 0x%X}, %d},\n" % (cp, *padded, len(seq)))
    w("};\n")
    w("const size_t kLowerMultiCount = %d;\n\n" % len(multis))

    for name, cps in (("Cased", cased), ("CaseIgnorable", case_ignorable),
                      ("Whitespace", whitespace)):
        rs = ranges(cps)
        w("const std::pair<uint32_t, uint32_t> k%sRanges[] = {\n" % name)
        for i in range(0, len(rs), 6):
            row = ", ".join("{0x%X, 0x%X}" % (a, b) for a, b in rs[i:i + 6])
            w("    %s,\n" % row)
        w("};\n")
        w("const size_t k%sRangeCount = %d;\n\n" % (name, len(rs)))

    w("}  // namespace adlink::uni::detail\n")


if __name__ == "__main__":
    main()
