#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

// Small codepoint toolkit. Lowercasing follows Python's str.lower():
// per-codepoint mappings (a handful expand to more than one codepoint)
// plus the contextual final-sigma rule for U+03A3. Whitespace is the set
// recognized by str.split(). Tables live in unicode_data.cpp and are
// regenerated with tools/gen_unicode_data.py.
namespace adlink::uni {

inline constexpr uint32_t kReplacementChar = 0xFFFD;

// Decodes UTF-8; invalid bytes become U+FFFD (one per offending byte).
std::vector<uint32_t> decode_utf8(std::string_view text);

std::string encode_utf8(const std::vector<uint32_t>& cps);
void append_utf8(std::string& out, uint32_t cp);

bool is_whitespace(uint32_t cp);
bool is_cased(uint32_t cp);
bool is_case_ignorable(uint32_t cp);

// Context-sensitive lowercase of a whole codepoint sequence.
std::vector<uint32_t> to_lower(const std::vector<uint32_t>& cps);

namespace detail {

struct LowerMulti {
    uint32_t cp;
    uint32_t seq[3];
    uint32_t len;
};

extern const std::pair<uint32_t, uint32_t> kLowerSingle[];
extern const size_t kLowerSingleCount;
extern const LowerMulti kLowerMulti[];
extern const size_t kLowerMultiCount;
extern const std::pair<uint32_t, uint32_t> kCasedRanges[];
extern const size_t kCasedRangeCount;
extern const std::pair<uint32_t, uint32_t> kCaseIgnorableRanges[];
extern const size_t kCaseIgnorableRangeCount;
extern const std::pair<uint32_t, uint32_t> kWhitespaceRanges[];
extern const size_t kWhitespaceRangeCount;

}  // namespace detail

}  // namespace adlink::uni
