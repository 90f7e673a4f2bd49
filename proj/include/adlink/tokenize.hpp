#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace adlink::tok {

using TokenId = int32_t;

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kUnkId = 1;
inline constexpr TokenId kClsId = 2;
inline constexpr TokenId kSepId = 3;
inline constexpr TokenId kMaskId = 4;
inline constexpr int kNumSpecialTokens = 5;
inline constexpr std::string_view kContinuationPrefix = "##";

// Word-level tokenizer for emoji-heavy ad text: lowercase, delete ASCII
// punctuation, isolate every emoji codepoint as its own token, split on
// whitespace. Semantics mirror the equivalent Python one-liner pipeline
// exactly (tests hold it to that, string for string).
std::vector<std::string> tokenize_with_emojis(std::string_view text);

// True when the codepoint falls in the emoji/symbol ranges the word
// tokenizer isolates.
bool is_emoji_codepoint(uint32_t cp);

struct Vocabulary {
    // tokens[id] is the token string; ids 0..4 are the special tokens.
    std::vector<std::string> tokens;
    std::unordered_map<std::string, TokenId> token_to_id;

    TokenId id_of(std::string_view token) const;       // -1 when absent
    const std::string& token_of(TokenId id) const;     // throws DataError on range
    size_t size() const { return tokens.size(); }
    bool is_special(TokenId id) const { return id >= 0 && id < kNumSpecialTokens; }

    // One token per line, line number = id. UTF-8.
    std::string serialize() const;
    static Vocabulary deserialize(std::string_view text);
    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);
};

struct WordPieceOptions {
    size_t vocab_size = 2000;
    size_t min_frequency = 2;
};

// Trains a WordPiece vocabulary: alphabet = observed word-initial and
// "##"-prefixed continuation characters, then greedy merges ranked by
// pair_freq / (freq(left) * freq(right)). Ties break on lexicographic
// (left, right) order so identical corpora give identical vocabularies.
// Token order: specials, sorted alphabet, merges in creation order.
Vocabulary train_wordpiece(const std::vector<std::string>& corpus, const WordPieceOptions& opts);

struct TokenSeq {
    std::vector<TokenId> ids;         // length max_len, [CLS] ... [SEP] [PAD]*
    std::vector<uint8_t> attention;   // 1 for real tokens, prefix of 1s
    // Half-open [begin, end) id-index ranges, one per source word.
    std::vector<std::pair<uint32_t, uint32_t>> word_groups;

    size_t attended_len() const;
};

// Greedy longest-match-first WordPiece encoding of the emoji-word tokens.
// A word with an unmatchable piece becomes a single [UNK]. Truncation
// drops whole trailing words so word groups never split.
TokenSeq encode(std::string_view text, const Vocabulary& vocab, size_t max_len);

// Piece sequence for a single word (empty optional => unmatchable).
std::optional<std::vector<TokenId>> word_to_pieces(const std::string& word, const Vocabulary& vocab);

// All pieces of a text without specials, padding or truncation. Feeds
// length statistics and WordPiece-based TF-IDF.
std::vector<TokenId> encode_pieces(std::string_view text, const Vocabulary& vocab);

// Maps ids back to token strings, dropping [PAD]/[CLS]/[SEP] and keeping
// "##" prefixes. Out-of-range ids throw DataError.
std::vector<std::string> decode(const std::vector<TokenId>& ids, const Vocabulary& vocab);

}  // namespace adlink::tok
