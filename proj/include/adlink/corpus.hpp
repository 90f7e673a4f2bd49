#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "adlink/tokenize.hpp"

namespace adlink::corpus {

// One advertisement row. Equal post_masked texts share one post_int and
// '*' is the only digit-replacement character in post_masked.
struct AdRecord {
    int64_t url = 0;
    int64_t site = 0;
    std::string post_masked;
    int64_t post_int = 0;
    std::optional<int64_t> phone_int;
    std::string phash16;

    bool operator==(const AdRecord&) const = default;
};

struct SyntheticCorpusConfig {
    int64_t n_authors = 50;
    std::pair<int64_t, int64_t> posts_per_author = {6, 14};
    double template_mutation_rate = 0.15;
    int64_t emoji_pool_size = 24;
    std::pair<int64_t, int64_t> images_per_author = {1, 4};
    double image_reuse_probability = 0.85;
    // Chance that a non-reused image comes from a small global pool of
    // stock photos, the spurious links that glue authors into a giant
    // component. Never consulted when image_reuse_probability fires, so
    // reuse probability 1.0 keeps every author a clean component.
    double shared_image_probability = 0.35;
    uint64_t seed = 42;

    void validate() const;  // throws DataError
};

struct SyntheticCorpus {
    std::vector<AdRecord> records;
    std::map<int64_t, int64_t> author_of_post;      // ground truth labels
    std::map<int64_t, std::string> text_of_post;    // post_int -> post_masked
};

struct LengthStats {
    std::map<size_t, size_t> histogram;             // encoded length -> docs
    std::map<size_t, double> coverage_at;           // bound -> fraction <= bound
};

// JSONL with columns url, site, post_masked, post_int, phone_int, phash16.
// Unknown keys are ignored; missing phone_int or null means absent.
std::vector<AdRecord> load_ads(const std::string& path);
std::vector<AdRecord> parse_ads(const std::string& content, const std::string& origin);
std::string serialize_ads(const std::vector<AdRecord>& ads);
void save_ads(const std::vector<AdRecord>& ads, const std::string& path);

// Replaces ASCII digits 0-9 with '*'; every other byte is untouched.
std::string mask_numbers(const std::string& text);

// Deterministic template-based corpus: each author owns a word/emoji
// template, posts are mutated copies with digit runs masked, and images
// are reused within (and occasionally across) authors.
SyntheticCorpus generate_synthetic_corpus(const SyntheticCorpusConfig& config);

// Lengths measured in encoded tokens including [CLS]/[SEP], without any
// truncation. Coverage reported at the 64/128/256/512 bounds.
LengthStats length_stats(const std::vector<std::string>& texts, const tok::Vocabulary& vocab);

}  // namespace adlink::corpus
