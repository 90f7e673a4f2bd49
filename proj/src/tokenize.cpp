#include "adlink/tokenize.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "adlink/common.hpp"
#include "adlink/unicode.hpp"

namespace adlink::tok {

namespace {

// Emoji and symbol blocks isolated by the word tokenizer, merged into
// disjoint sorted intervals. Covers emoticons, pictographs, transport,
// dingbats, variation selectors, regional indicators, general punctuation,
// letterlike/arrow/math symbols and CJK symbol punctuation.
constexpr std::pair<uint32_t, uint32_t> kEmojiRanges[] = {
    {0x2000, 0x206F}, {0x2100, 0x2BFF}, {0x3000, 0x303F},
    {0xFE00, 0xFE0F}, {0x1F000, 0x1F02F}, {0x1F0A0, 0x1F0FF},
    {0x1F100, 0x1F2FF}, {0x1F300, 0x1F64F}, {0x1F680, 0x1FFFF},
};

// The 32 ASCII punctuation characters removed before emoji isolation.
bool is_ascii_punct(uint32_t cp) {
    return (cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) ||
           (cp >= 0x5B && cp <= 0x60) || (cp >= 0x7B && cp <= 0x7E);
}

}  // namespace

bool is_emoji_codepoint(uint32_t cp) {
    for (const auto& [lo, hi] : kEmojiRanges) {
        if (cp < lo) return false;
        if (cp <= hi) return true;
    }
    return false;
}

std::vector<std::string> tokenize_with_emojis(std::string_view text) {
    std::vector<uint32_t> cps = uni::to_lower(uni::decode_utf8(text));

    std::vector<uint32_t> kept;
    kept.reserve(cps.size());
    for (uint32_t cp : cps) {
        if (!is_ascii_punct(cp)) kept.push_back(cp);
    }

    std::vector<std::string> tokens;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    };
    for (uint32_t cp : kept) {
        if (uni::is_whitespace(cp)) {
            flush();
        } else if (is_emoji_codepoint(cp)) {
            flush();
            std::string one;
            uni::append_utf8(one, cp);
            tokens.push_back(std::move(one));
        } else {
            uni::append_utf8(current, cp);
        }
    }
    flush();
    return tokens;
}

TokenId Vocabulary::id_of(std::string_view token) const {
    auto it = token_to_id.find(std::string(token));
    return it == token_to_id.end() ? -1 : it->second;
}

const std::string& Vocabulary::token_of(TokenId id) const {
    if (id < 0 || static_cast<size_t>(id) >= tokens.size())
        throw DataError("token id out of range: " + std::to_string(id));
    return tokens[static_cast<size_t>(id)];
}

std::string Vocabulary::serialize() const {
    std::string out;
    for (const auto& t : tokens) {
        out += t;
        out += '\n';
    }
    return out;
}

Vocabulary Vocabulary::deserialize(std::string_view text) {
    Vocabulary v;
    size_t start = 0;
    while (start < text.size()) {
        size_t nl = text.find('\n', start);
        if (nl == std::string_view::npos) nl = text.size();
        std::string token(text.substr(start, nl - start));
        if (!token.empty() && token.back() == '\r') token.pop_back();
        TokenId id = static_cast<TokenId>(v.tokens.size());
        if (!v.token_to_id.emplace(token, id).second)
            throw DataError("duplicate token in vocabulary: " + token);
        v.tokens.push_back(std::move(token));
        start = nl + 1;
    }
    static const char* kSpecials[] = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    if (v.tokens.size() < kNumSpecialTokens)
        throw DataError("vocabulary too small for special tokens");
    for (int i = 0; i < kNumSpecialTokens; ++i) {
        if (v.tokens[static_cast<size_t>(i)] != kSpecials[i])
            throw DataError("vocabulary id " + std::to_string(i) + " must be " + kSpecials[i]);
    }
    return v;
}

void Vocabulary::save(const std::string& path) const {
    write_file(path, serialize());
}

Vocabulary Vocabulary::load(const std::string& path) {
    return deserialize(read_file(path));
}

namespace {

struct TrainerWord {
    std::vector<std::string> units;
    size_t freq = 0;
};

std::string merge_token(const std::string& left, const std::string& right) {
    // "a" + "##b" -> "ab"; "##a" + "##b" -> "##ab".
    return left + right.substr(kContinuationPrefix.size());
}

}  // namespace

Vocabulary train_wordpiece(const std::vector<std::string>& corpus, const WordPieceOptions& opts) {
    if (corpus.empty()) throw DataError("train_wordpiece: empty corpus");

    std::map<std::string, size_t> word_freq;
    for (const auto& text : corpus) {
        for (auto& w : tokenize_with_emojis(text)) ++word_freq[w];
    }

    // Words as unit sequences: the first codepoint plain, the rest with
    // the continuation prefix. The observed units form the alphabet.
    std::vector<TrainerWord> words;
    std::set<std::string> alphabet;
    for (const auto& [word, freq] : word_freq) {
        TrainerWord tw;
        tw.freq = freq;
        std::vector<uint32_t> cps = uni::decode_utf8(word);
        for (size_t i = 0; i < cps.size(); ++i) {
            std::string unit = i == 0 ? "" : std::string(kContinuationPrefix);
            uni::append_utf8(unit, cps[i]);
            alphabet.insert(unit);
            tw.units.push_back(std::move(unit));
        }
        if (!tw.units.empty()) words.push_back(std::move(tw));
    }

    if (opts.vocab_size < kNumSpecialTokens + alphabet.size())
        throw DataError("train_wordpiece: vocab_size " + std::to_string(opts.vocab_size) +
                        " smaller than specials + alphabet (" +
                        std::to_string(kNumSpecialTokens + alphabet.size()) + ")");

    Vocabulary vocab;
    auto add_token = [&vocab](const std::string& t) {
        TokenId id = static_cast<TokenId>(vocab.tokens.size());
        vocab.tokens.push_back(t);
        vocab.token_to_id.emplace(t, id);
    };
    for (const char* s : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"}) add_token(s);
    for (const auto& unit : alphabet) add_token(unit);

    while (vocab.size() < opts.vocab_size) {
        // Recount unit and adjacent-pair frequencies from scratch; corpus
        // sizes here make the clarity worth more than the speed.
        std::map<std::string, size_t> unit_freq;
        std::map<std::pair<std::string, std::string>, size_t> pair_freq;
        for (const auto& tw : words) {
            for (const auto& u : tw.units) unit_freq[u] += tw.freq;
            for (size_t i = 0; i + 1 < tw.units.size(); ++i)
                pair_freq[{tw.units[i], tw.units[i + 1]}] += tw.freq;
        }

        const std::pair<std::string, std::string>* best = nullptr;
        double best_score = 0.0;
        for (const auto& [pair, freq] : pair_freq) {
            if (freq < opts.min_frequency) continue;
            double score = static_cast<double>(freq) /
                           (static_cast<double>(unit_freq[pair.first]) *
                            static_cast<double>(unit_freq[pair.second]));
            // Strict > keeps the lexicographically smallest pair on ties
            // because std::map iterates in sorted order.
            if (best == nullptr || score > best_score) {
                best = &pair;
                best_score = score;
            }
        }
        if (best == nullptr) break;

        std::string merged = merge_token(best->first, best->second);
        // Two distinct merge routes can yield the same string (a+##bc and
        // ab+##c both give abc); the second route only rewrites words.
        if (!vocab.token_to_id.count(merged)) add_token(merged);

        for (auto& tw : words) {
            std::vector<std::string> next;
            next.reserve(tw.units.size());
            size_t i = 0;
            while (i < tw.units.size()) {
                if (i + 1 < tw.units.size() && tw.units[i] == best->first &&
                    tw.units[i + 1] == best->second) {
                    next.push_back(merged);
                    i += 2;
                } else {
                    next.push_back(tw.units[i]);
                    ++i;
                }
            }
            tw.units = std::move(next);
        }
    }

    return vocab;
}

std::optional<std::vector<TokenId>> word_to_pieces(const std::string& word, const Vocabulary& vocab) {
    std::vector<uint32_t> cps = uni::decode_utf8(word);
    std::vector<TokenId> pieces;
    size_t start = 0;
    while (start < cps.size()) {
        size_t end = cps.size();
        TokenId found = -1;
        while (end > start) {
            std::string candidate = start > 0 ? std::string(kContinuationPrefix) : "";
            for (size_t i = start; i < end; ++i) uni::append_utf8(candidate, cps[i]);
            TokenId id = vocab.id_of(candidate);
            if (id >= 0) {
                found = id;
                break;
            }
            --end;
        }
        if (found < 0) return std::nullopt;
        pieces.push_back(found);
        start = end;
    }
    return pieces;
}

size_t TokenSeq::attended_len() const {
    size_t n = 0;
    while (n < attention.size() && attention[n]) ++n;
    return n;
}

TokenSeq encode(std::string_view text, const Vocabulary& vocab, size_t max_len) {
    if (max_len < 3) throw DataError("encode: max_len must be at least 3");

    std::vector<std::vector<TokenId>> word_pieces;
    for (const auto& word : tokenize_with_emojis(text)) {
        auto pieces = word_to_pieces(word, vocab);
        if (pieces.has_value()) {
            word_pieces.push_back(std::move(*pieces));
        } else {
            word_pieces.push_back({kUnkId});
        }
    }

    TokenSeq seq;
    seq.ids.assign(max_len, kPadId);
    seq.attention.assign(max_len, 0);
    seq.ids[0] = kClsId;
    size_t pos = 1;
    for (const auto& pieces : word_pieces) {
        if (pos + pieces.size() + 1 > max_len) break;  // drop whole trailing words
        seq.word_groups.emplace_back(static_cast<uint32_t>(pos),
                                     static_cast<uint32_t>(pos + pieces.size()));
        for (TokenId id : pieces) seq.ids[pos++] = id;
    }
    seq.ids[pos++] = kSepId;
    for (size_t i = 0; i < pos; ++i) seq.attention[i] = 1;
    return seq;
}

std::vector<TokenId> encode_pieces(std::string_view text, const Vocabulary& vocab) {
    std::vector<TokenId> out;
    for (const auto& word : tokenize_with_emojis(text)) {
        auto pieces = word_to_pieces(word, vocab);
        if (pieces.has_value()) {
            out.insert(out.end(), pieces->begin(), pieces->end());
        } else {
            out.push_back(kUnkId);
        }
    }
    return out;
}

std::vector<std::string> decode(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
    std::vector<std::string> out;
    for (TokenId id : ids) {
        const std::string& token = vocab.token_of(id);  // range check
        if (id == kPadId || id == kClsId || id == kSepId) continue;
        out.push_back(token);
    }
    return out;
}

}  // namespace adlink::tok
