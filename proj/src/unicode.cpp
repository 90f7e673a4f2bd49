#include "adlink/unicode.hpp"

#include <algorithm>

namespace adlink::uni {

namespace {

bool in_ranges(const std::pair<uint32_t, uint32_t>* ranges, size_t count, uint32_t cp) {
    auto end = ranges + count;
    auto it = std::upper_bound(ranges, end, cp, [](uint32_t v, const auto& r) { return v < r.first; });
    return it != ranges && cp <= (it - 1)->second;
}

constexpr uint32_t kCapitalSigma = 0x03A3;
constexpr uint32_t kSmallSigma = 0x03C3;
constexpr uint32_t kFinalSigma = 0x03C2;

// U+03A3 takes the final form when scanning backwards over case-ignorable
// codepoints hits a cased one and scanning forwards does not.
uint32_t lower_capital_sigma(const std::vector<uint32_t>& cps, size_t i) {
    size_t j = i;
    bool preceded = false;
    while (j > 0) {
        uint32_t c = cps[--j];
        if (is_case_ignorable(c)) continue;
        preceded = is_cased(c);
        break;
    }
    if (!preceded) return kSmallSigma;
    for (size_t k = i + 1; k < cps.size(); ++k) {
        uint32_t c = cps[k];
        if (is_case_ignorable(c)) continue;
        return is_cased(c) ? kSmallSigma : kFinalSigma;
    }
    return kFinalSigma;
}

}  // namespace

std::vector<uint32_t> decode_utf8(std::string_view text) {
    std::vector<uint32_t> out;
    out.reserve(text.size());
    size_t i = 0;
    const auto* bytes = reinterpret_cast<const unsigned char*>(text.data());
    while (i < text.size()) {
        unsigned char b0 = bytes[i];
        uint32_t cp = kReplacementChar;
        size_t len = 1;
        if (b0 < 0x80) {
            cp = b0;
        } else if ((b0 & 0xE0) == 0xC0) {
            len = 2;
            cp = b0 & 0x1F;
        } else if ((b0 & 0xF0) == 0xE0) {
            len = 3;
            cp = b0 & 0x0F;
        } else if ((b0 & 0xF8) == 0xF0) {
            len = 4;
            cp = b0 & 0x07;
        } else {
            out.push_back(kReplacementChar);
            ++i;
            continue;
        }
        if (i + len > text.size()) {
            out.push_back(kReplacementChar);
            ++i;
            continue;
        }
        bool ok = true;
        for (size_t k = 1; k < len; ++k) {
            unsigned char b = bytes[i + k];
            if ((b & 0xC0) != 0x80) {
                ok = false;
                break;
            }
            cp = (cp << 6) | (b & 0x3F);
        }
        // Reject overlong forms, surrogates and out-of-range values.
        static constexpr uint32_t kMinFor[5] = {0, 0, 0x80, 0x800, 0x10000};
        if (!ok || cp < kMinFor[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
            out.push_back(kReplacementChar);
            ++i;
            continue;
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

void append_utf8(std::string& out, uint32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

std::string encode_utf8(const std::vector<uint32_t>& cps) {
    std::string out;
    out.reserve(cps.size());
    for (uint32_t cp : cps) append_utf8(out, cp);
    return out;
}

bool is_whitespace(uint32_t cp) {
    return in_ranges(detail::kWhitespaceRanges, detail::kWhitespaceRangeCount, cp);
}

bool is_cased(uint32_t cp) {
    return in_ranges(detail::kCasedRanges, detail::kCasedRangeCount, cp);
}

bool is_case_ignorable(uint32_t cp) {
    return in_ranges(detail::kCaseIgnorableRanges, detail::kCaseIgnorableRangeCount, cp);
}

std::vector<uint32_t> to_lower(const std::vector<uint32_t>& cps) {
    std::vector<uint32_t> out;
    out.reserve(cps.size());
    for (size_t i = 0; i < cps.size(); ++i) {
        uint32_t cp = cps[i];
        if (cp == kCapitalSigma) {
            out.push_back(lower_capital_sigma(cps, i));
            continue;
        }
        auto end = detail::kLowerSingle + detail::kLowerSingleCount;
        auto it = std::lower_bound(detail::kLowerSingle, end, cp,
                                   [](const auto& e, uint32_t v) { return e.first < v; });
        if (it != end && it->first == cp) {
            out.push_back(it->second);
            continue;
        }
        auto mend = detail::kLowerMulti + detail::kLowerMultiCount;
        auto mit = std::lower_bound(detail::kLowerMulti, mend, cp,
                                    [](const auto& e, uint32_t v) { return e.cp < v; });
        if (mit != mend && mit->cp == cp) {
            for (uint32_t k = 0; k < mit->len; ++k) out.push_back(mit->seq[k]);
            continue;
        }
        out.push_back(cp);
    }
    return out;
}

}  // namespace adlink::uni
