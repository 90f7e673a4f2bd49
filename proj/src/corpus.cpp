#include "adlink/corpus.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <set>
#include <sstream>

#include "adlink/common.hpp"

namespace adlink::corpus {

using nlohmann::json;

namespace {

int64_t require_int(const json& row, const char* key, const std::string& where) {
    auto it = row.find(key);
    if (it == row.end()) throw DataError(where + ": missing column '" + key + "'");
    if (!it->is_number_integer())
        throw DataError(where + ": column '" + key + "' must be an integer");
    return it->get<int64_t>();
}

std::string require_string(const json& row, const char* key, const std::string& where) {
    auto it = row.find(key);
    if (it == row.end()) throw DataError(where + ": missing column '" + key + "'");
    if (!it->is_string()) throw DataError(where + ": column '" + key + "' must be a string");
    return it->get<std::string>();
}

}  // namespace

std::vector<AdRecord> parse_ads(const std::string& content, const std::string& origin) {
    std::vector<AdRecord> out;
    size_t line_no = 0;
    size_t start = 0;
    while (start < content.size()) {
        size_t nl = content.find('\n', start);
        if (nl == std::string::npos) nl = content.size();
        std::string_view line(content.data() + start, nl - start);
        start = nl + 1;
        ++line_no;
        if (line.empty()) continue;
        std::string where = origin + ":" + std::to_string(line_no);

        json row = json::parse(line, nullptr, false);
        if (row.is_discarded()) throw DataError(where + ": malformed JSON line");
        if (!row.is_object()) throw DataError(where + ": line is not a JSON object");

        AdRecord rec;
        rec.url = require_int(row, "url", where);
        rec.site = require_int(row, "site", where);
        rec.post_masked = require_string(row, "post_masked", where);
        rec.post_int = require_int(row, "post_int", where);
        auto phone = row.find("phone_int");
        if (phone == row.end()) throw DataError(where + ": missing column 'phone_int'");
        if (!phone->is_null()) {
            if (!phone->is_number_integer())
                throw DataError(where + ": column 'phone_int' must be an integer or null");
            rec.phone_int = phone->get<int64_t>();
        }
        rec.phash16 = require_string(row, "phash16", where);
        if (rec.phash16.empty()) throw DataError(where + ": column 'phash16' must be nonempty");
        out.push_back(std::move(rec));
    }
    return out;
}

std::vector<AdRecord> load_ads(const std::string& path) {
    return parse_ads(read_file(path), path);
}

std::string serialize_ads(const std::vector<AdRecord>& ads) {
    std::string out;
    for (const auto& rec : ads) {
        json row;
        row["url"] = rec.url;
        row["site"] = rec.site;
        row["post_masked"] = rec.post_masked;
        row["post_int"] = rec.post_int;
        if (rec.phone_int.has_value()) {
            row["phone_int"] = *rec.phone_int;
        } else {
            row["phone_int"] = nullptr;
        }
        row["phash16"] = rec.phash16;
        out += row.dump();
        out += '\n';
    }
    return out;
}

void save_ads(const std::vector<AdRecord>& ads, const std::string& path) {
    write_file(path, serialize_ads(ads));
}

std::string mask_numbers(const std::string& text) {
    std::string out = text;
    for (char& c : out) {
        if (c >= '0' && c <= '9') c = '*';
    }
    return out;
}

void SyntheticCorpusConfig::validate() const {
    auto prob = [](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0)) throw DataError(std::string("synthetic config: ") + name + " must be in [0,1]");
    };
    prob(template_mutation_rate, "template_mutation_rate");
    prob(image_reuse_probability, "image_reuse_probability");
    prob(shared_image_probability, "shared_image_probability");
    if (n_authors < 1) throw DataError("synthetic config: n_authors must be >= 1");
    if (emoji_pool_size < 1) throw DataError("synthetic config: emoji_pool_size must be >= 1");
    auto range = [](std::pair<int64_t, int64_t> r, const char* name) {
        if (r.first < 1 || r.second < r.first)
            throw DataError(std::string("synthetic config: bad range for ") + name);
    };
    range(posts_per_author, "posts_per_author");
    range(images_per_author, "images_per_author");
}

namespace {

// Emojis available to the generator; all are single codepoints inside the
// ranges the word tokenizer isolates.
const char* kEmojiInventory[] = {
    "\U0001F339", "\U0001F451", "\U0001F352", "\U0001F48B", "\U0001F525",
    "\U0001F48E", "⭐", "\U0001F380", "\U0001F4B0", "\U0001F319",
    "\U0001F60D", "\U0001F389", "\U0001F381", "\U0001F3B0", "\U0001F495",
    "\U0001F4AF", "\U0001F64C", "\U0001F60B", "\U0001F485", "\U0001F984",
    "\U0001F353", "\U0001F351", "\U0001F33A", "\U0001F33B", "❤",
    "\U0001F49B", "\U0001F49C", "\U0001F499", "\U0001F49A", "\U0001F608",
    "\U0001F636", "\U0001F31F", "\U0001F4DE", "\U0001F697", "\U0001F3E0",
    "\U0001F554", "\U0001F37E", "\U0001F52E", "\U0001F3B5", "\U0001F4F8",
};
constexpr size_t kEmojiInventorySize = sizeof(kEmojiInventory) / sizeof(kEmojiInventory[0]);

// Fixed pseudo-word lexicon shared by all authors, independent of the
// corpus seed so corpora with different seeds stay comparable.
std::vector<std::string> build_lexicon(size_t count) {
    static const char* kOnsets[] = {"b", "br", "c", "ch", "d", "dr", "f", "fl", "g", "gl",
                                    "j", "k", "kr", "l", "m", "n", "p", "pl", "r", "s",
                                    "sh", "sl", "st", "t", "tr", "v", "w", "z"};
    static const char* kVowels[] = {"a", "e", "i", "o", "u", "ay", "ee", "oo"};
    static const char* kCodas[] = {"", "n", "r", "s", "l", "m", "x", "sh"};
    Rng rng(0x5eedf00dULL);
    std::set<std::string> seen;
    std::vector<std::string> words;
    while (words.size() < count) {
        std::string w;
        size_t syllables = 1 + rng.next_below(3);
        for (size_t s = 0; s < syllables; ++s) {
            w += kOnsets[rng.next_below(28)];
            w += kVowels[rng.next_below(8)];
            if (s + 1 == syllables) w += kCodas[rng.next_below(8)];
        }
        if (w.size() >= 3 && seen.insert(w).second) words.push_back(w);
    }
    return words;
}

std::string fresh_phash(Rng& rng) {
    static const char* digits = "0123456789abcdef";
    std::string h(32, '0');
    for (char& c : h) c = digits[rng.next_below(16)];
    return h;
}

struct TemplateToken {
    enum Kind { Word, Emoji, Digits } kind;
    std::string text;
};

}  // namespace

SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusConfig& config) {
    config.validate();
    Rng rng(config.seed);

    const std::vector<std::string> lexicon = build_lexicon(500);
    const size_t pool_size = std::min<size_t>(static_cast<size_t>(config.emoji_pool_size),
                                              kEmojiInventorySize);
    std::vector<std::string> emoji_pool(kEmojiInventory, kEmojiInventory + pool_size);

    // Global stock-photo hashes that can bridge authors.
    std::vector<std::string> shared_hashes;
    for (int i = 0; i < 8; ++i) shared_hashes.push_back(fresh_phash(rng));

    SyntheticCorpus out;
    std::map<std::string, int64_t> post_id_of_text;
    std::map<int64_t, int64_t> owner_of_post;
    int64_t next_url = 1;

    for (int64_t author = 0; author < config.n_authors; ++author) {
        // Author template: 5-15 words, 1-4 emojis at random positions,
        // sometimes a digit run that masking will star out.
        std::vector<TemplateToken> tmpl;
        int64_t n_words = rng.next_in_range(5, 15);
        for (int64_t i = 0; i < n_words; ++i)
            tmpl.push_back({TemplateToken::Word, lexicon[rng.next_below(lexicon.size())]});
        int64_t n_emojis = rng.next_in_range(1, 4);
        for (int64_t i = 0; i < n_emojis; ++i) {
            TemplateToken t{TemplateToken::Emoji, emoji_pool[rng.next_below(emoji_pool.size())]};
            tmpl.insert(tmpl.begin() + static_cast<int64_t>(rng.next_below(tmpl.size() + 1)), t);
        }
        if (rng.next_bernoulli(0.5)) {
            std::string digits;
            int64_t len = rng.next_in_range(6, 10);
            for (int64_t i = 0; i < len; ++i) digits += static_cast<char>('0' + rng.next_below(10));
            tmpl.push_back({TemplateToken::Digits, digits});
        }

        int64_t n_images = rng.next_in_range(config.images_per_author.first,
                                             config.images_per_author.second);
        std::vector<std::string> author_pool;
        for (int64_t i = 0; i < n_images; ++i) author_pool.push_back(fresh_phash(rng));

        std::optional<int64_t> phone;
        if (rng.next_bernoulli(0.7)) phone = 1000000 + author;

        int64_t n_posts = rng.next_in_range(config.posts_per_author.first,
                                            config.posts_per_author.second);
        for (int64_t p = 0; p < n_posts; ++p) {
            // Mutate the template until the text is not claimed by another
            // author. Same-author repeats are fine (one post, many ads).
            std::string text;
            for (int attempt = 0; attempt < 100; ++attempt) {
                std::vector<std::string> parts;
                for (const auto& t : tmpl) {
                    if (rng.next_bernoulli(config.template_mutation_rate)) {
                        switch (t.kind) {
                            case TemplateToken::Word:
                                if (rng.next_bernoulli(0.3)) continue;  // drop
                                parts.push_back(lexicon[rng.next_below(lexicon.size())]);
                                break;
                            case TemplateToken::Emoji:
                                parts.push_back(emoji_pool[rng.next_below(emoji_pool.size())]);
                                break;
                            case TemplateToken::Digits: {
                                std::string digits;
                                for (size_t i = 0; i < t.text.size(); ++i)
                                    digits += static_cast<char>('0' + rng.next_below(10));
                                parts.push_back(digits);
                                break;
                            }
                        }
                    } else {
                        parts.push_back(t.text);
                    }
                }
                std::string candidate;
                for (size_t i = 0; i < parts.size(); ++i) {
                    if (i) candidate += ' ';
                    candidate += parts[i];
                }
                candidate = mask_numbers(candidate);
                auto it = post_id_of_text.find(candidate);
                if (it == post_id_of_text.end() || owner_of_post.at(it->second) == author) {
                    text = std::move(candidate);
                    break;
                }
            }
            if (text.empty()) continue;  // pathological config; skip the draw

            int64_t post_id;
            auto it = post_id_of_text.find(text);
            if (it != post_id_of_text.end()) {
                post_id = it->second;
            } else {
                post_id = static_cast<int64_t>(post_id_of_text.size()) + 1;
                post_id_of_text.emplace(text, post_id);
                owner_of_post[post_id] = author;
                out.author_of_post[post_id] = author;
                out.text_of_post[post_id] = text;
            }

            int64_t n_rows = 1 + (rng.next_bernoulli(0.3) ? 1 : 0);
            for (int64_t r = 0; r < n_rows; ++r) {
                AdRecord rec;
                rec.url = next_url++;
                rec.site = author % 3;
                rec.post_masked = text;
                rec.post_int = post_id;
                rec.phone_int = phone;
                if (rng.next_bernoulli(config.image_reuse_probability)) {
                    // First row of a post reuses the author's anchor image
                    // so reuse probability 1.0 makes the author one
                    // bipartite component.
                    rec.phash16 = r == 0 ? author_pool.front()
                                         : author_pool[rng.next_below(author_pool.size())];
                } else if (rng.next_bernoulli(config.shared_image_probability)) {
                    rec.phash16 = shared_hashes[rng.next_below(shared_hashes.size())];
                } else {
                    rec.phash16 = fresh_phash(rng);
                }
                out.records.push_back(std::move(rec));
            }
        }
    }
    return out;
}

LengthStats length_stats(const std::vector<std::string>& texts, const tok::Vocabulary& vocab) {
    if (texts.empty()) throw DataError("length_stats: empty corpus");
    LengthStats stats;
    for (const auto& text : texts) {
        size_t len = tok::encode_pieces(text, vocab).size() + 2;  // [CLS] + pieces + [SEP]
        ++stats.histogram[len];
    }
    for (size_t bound : {size_t{64}, size_t{128}, size_t{256}, size_t{512}}) {
        size_t covered = 0;
        for (const auto& [len, count] : stats.histogram) {
            if (len <= bound) covered += count;
        }
        stats.coverage_at[bound] = static_cast<double>(covered) / static_cast<double>(texts.size());
    }
    return stats;
}

}  // namespace adlink::corpus
