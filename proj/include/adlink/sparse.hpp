#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "adlink/tokenize.hpp"

namespace adlink::sparse {

enum class IdfVariant {
    // idf(t) = ln(N / n_t), raw tf*idf weights, no normalization.
    PaperFormula,
    // idf(t) = ln((1+N) / (1+n_t)) + 1, L2-normalized vectors. This is
    // the conventional library default and the one used downstream.
    Smoothed,
};

enum class TokenizerKind {
    EmojiWord,   // tokenize_with_emojis terms
    WordPiece,   // subword pieces from a trained vocabulary
};

struct SparseVector {
    // (column, weight) pairs with strictly increasing columns and no
    // zero weights.
    std::vector<std::pair<uint32_t, double>> entries;
    double norm = 0.0;
};

class TfidfModel {
public:
    // Builds term df/idf statistics over the corpus. Column order is
    // lexicographic in the term string. vocab required iff kind is
    // WordPiece.
    static TfidfModel fit(const std::vector<std::string>& corpus, TokenizerKind kind,
                          IdfVariant variant, const tok::Vocabulary* vocab = nullptr);

    SparseVector transform(const std::string& text) const;

    IdfVariant variant() const { return variant_; }
    TokenizerKind tokenizer_kind() const { return kind_; }
    size_t corpus_size() const { return n_docs_; }
    size_t term_count() const { return terms_.size(); }
    // -1 when the term is unknown.
    int64_t column_of(const std::string& term) const;
    double idf_of(const std::string& term) const;       // throws on unknown term
    size_t df_of(const std::string& term) const;        // throws on unknown term

    // Versioned text format: header lines, then one "term\tdf\tidf" per
    // term in column order.
    std::string serialize() const;
    static TfidfModel deserialize(std::string_view content, const tok::Vocabulary* vocab = nullptr);
    void save(const std::string& path) const;
    static TfidfModel load(const std::string& path, const tok::Vocabulary* vocab = nullptr);

private:
    std::vector<std::string> tokenize(const std::string& text) const;

    IdfVariant variant_ = IdfVariant::Smoothed;
    TokenizerKind kind_ = TokenizerKind::EmojiWord;
    size_t n_docs_ = 0;
    std::vector<std::string> terms_;           // column -> term
    std::map<std::string, uint32_t> columns_;  // term -> column
    std::vector<size_t> df_;
    std::vector<double> idf_;
    std::shared_ptr<const tok::Vocabulary> vocab_;
};

// Sum a_i*b_i / (|a||b|); 0 when either norm is 0.
double cosine_sparse(const SparseVector& a, const SparseVector& b);

}  // namespace adlink::sparse
