#include "adlink/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "adlink/common.hpp"

namespace adlink::sparse {

std::vector<std::string> TfidfModel::tokenize(const std::string& text) const {
    if (kind_ == TokenizerKind::EmojiWord) return tok::tokenize_with_emojis(text);
    std::vector<std::string> out;
    for (tok::TokenId id : tok::encode_pieces(text, *vocab_)) out.push_back(vocab_->token_of(id));
    return out;
}

TfidfModel TfidfModel::fit(const std::vector<std::string>& corpus, TokenizerKind kind,
                           IdfVariant variant, const tok::Vocabulary* vocab) {
    if (corpus.empty()) throw DataError("fit_tfidf: empty corpus");
    if (kind == TokenizerKind::WordPiece && vocab == nullptr)
        throw DataError("fit_tfidf: WordPiece tokenizer requires a vocabulary");

    TfidfModel model;
    model.variant_ = variant;
    model.kind_ = kind;
    model.n_docs_ = corpus.size();
    if (vocab != nullptr) model.vocab_ = std::make_shared<tok::Vocabulary>(*vocab);

    std::map<std::string, size_t> df;
    bool any_terms = false;
    for (const auto& text : corpus) {
        auto terms = model.tokenize(text);
        if (!terms.empty()) any_terms = true;
        std::sort(terms.begin(), terms.end());
        terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
        for (const auto& t : terms) ++df[t];
    }
    if (!any_terms) throw DataError("fit_tfidf: corpus contains only empty documents");

    for (const auto& [term, count] : df) {
        uint32_t col = static_cast<uint32_t>(model.terms_.size());
        model.columns_.emplace(term, col);
        model.terms_.push_back(term);
        model.df_.push_back(count);
        double n = static_cast<double>(model.n_docs_);
        double nt = static_cast<double>(count);
        double idf = variant == IdfVariant::PaperFormula ? std::log(n / nt)
                                                         : std::log((1.0 + n) / (1.0 + nt)) + 1.0;
        model.idf_.push_back(idf);
    }
    return model;
}

SparseVector TfidfModel::transform(const std::string& text) const {
    std::map<uint32_t, double> counts;
    size_t in_vocab_total = 0;
    for (const auto& term : tokenize(text)) {
        auto it = columns_.find(term);
        if (it == columns_.end()) continue;  // out-of-vocabulary terms ignored
        ++counts[it->second];
        ++in_vocab_total;
    }

    SparseVector vec;
    if (in_vocab_total == 0) return vec;
    double norm_sq = 0.0;
    for (const auto& [col, count] : counts) {
        double tf = count / static_cast<double>(in_vocab_total);
        double w = tf * idf_[col];
        if (w == 0.0) continue;  // paper-formula idf can be exactly zero
        vec.entries.emplace_back(col, w);
        norm_sq += w * w;
    }
    vec.norm = std::sqrt(norm_sq);
    if (variant_ == IdfVariant::Smoothed && vec.norm > 0.0) {
        for (auto& [col, w] : vec.entries) w /= vec.norm;
        vec.norm = 1.0;
    }
    return vec;
}

int64_t TfidfModel::column_of(const std::string& term) const {
    auto it = columns_.find(term);
    return it == columns_.end() ? -1 : static_cast<int64_t>(it->second);
}

double TfidfModel::idf_of(const std::string& term) const {
    int64_t col = column_of(term);
    if (col < 0) throw DataError("unknown term: " + term);
    return idf_[static_cast<size_t>(col)];
}

size_t TfidfModel::df_of(const std::string& term) const {
    int64_t col = column_of(term);
    if (col < 0) throw DataError("unknown term: " + term);
    return df_[static_cast<size_t>(col)];
}

std::string TfidfModel::serialize() const {
    std::string out = "tfidf-model v1\n";
    out += "variant\t";
    out += variant_ == IdfVariant::PaperFormula ? "paper-formula" : "smoothed";
    out += "\ntokenizer\t";
    out += kind_ == TokenizerKind::EmojiWord ? "emoji-word" : "wordpiece";
    out += "\nn_docs\t" + std::to_string(n_docs_);
    if (vocab_) out += "\nvocab_fnv64\t" + fnv1a64_hex(vocab_->serialize());
    out += "\nterms\t" + std::to_string(terms_.size()) + "\n";
    for (size_t i = 0; i < terms_.size(); ++i) {
        out += terms_[i];
        out += '\t';
        out += std::to_string(df_[i]);
        out += '\t';
        out += format_double(idf_[i]);
        out += '\n';
    }
    return out;
}

TfidfModel TfidfModel::deserialize(std::string_view content, const tok::Vocabulary* vocab) {
    std::istringstream in{std::string(content)};
    std::string line;
    if (!std::getline(in, line) || line != "tfidf-model v1")
        throw DataError("tfidf model: bad or missing version header");

    TfidfModel model;
    size_t term_count = 0;
    std::string vocab_hash;
    while (std::getline(in, line)) {
        size_t tab = line.find('\t');
        if (tab == std::string::npos) throw DataError("tfidf model: malformed header line: " + line);
        std::string key = line.substr(0, tab);
        std::string value = line.substr(tab + 1);
        if (key == "variant") {
            if (value == "paper-formula") model.variant_ = IdfVariant::PaperFormula;
            else if (value == "smoothed") model.variant_ = IdfVariant::Smoothed;
            else throw DataError("tfidf model: unknown variant " + value);
        } else if (key == "tokenizer") {
            if (value == "emoji-word") model.kind_ = TokenizerKind::EmojiWord;
            else if (value == "wordpiece") model.kind_ = TokenizerKind::WordPiece;
            else throw DataError("tfidf model: unknown tokenizer " + value);
        } else if (key == "n_docs") {
            model.n_docs_ = std::stoull(value);
        } else if (key == "vocab_fnv64") {
            vocab_hash = value;
        } else if (key == "terms") {
            term_count = std::stoull(value);
            break;
        } else {
            throw DataError("tfidf model: unknown header key " + key);
        }
    }
    if (model.kind_ == TokenizerKind::WordPiece) {
        if (vocab == nullptr) throw DataError("tfidf model: wordpiece model needs a vocabulary");
        if (!vocab_hash.empty() && fnv1a64_hex(vocab->serialize()) != vocab_hash)
            throw DataError("tfidf model: vocabulary hash mismatch");
        model.vocab_ = std::make_shared<tok::Vocabulary>(*vocab);
    }
    for (size_t i = 0; i < term_count; ++i) {
        if (!std::getline(in, line)) throw DataError("tfidf model: truncated term table");
        size_t t1 = line.find('\t');
        size_t t2 = line.find('\t', t1 == std::string::npos ? t1 : t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw DataError("tfidf model: malformed term line: " + line);
        std::string term = line.substr(0, t1);
        model.columns_.emplace(term, static_cast<uint32_t>(model.terms_.size()));
        model.terms_.push_back(term);
        model.df_.push_back(std::stoull(line.substr(t1 + 1, t2 - t1 - 1)));
        model.idf_.push_back(std::stod(line.substr(t2 + 1)));
    }
    return model;
}

void TfidfModel::save(const std::string& path) const {
    write_file(path, serialize());
}

TfidfModel TfidfModel::load(const std::string& path, const tok::Vocabulary* vocab) {
    return deserialize(read_file(path), vocab);
}

double cosine_sparse(const SparseVector& a, const SparseVector& b) {
    if (a.norm == 0.0 || b.norm == 0.0) return 0.0;
    double dot = 0.0;
    size_t i = 0, j = 0;
    while (i < a.entries.size() && j < b.entries.size()) {
        uint32_t ca = a.entries[i].first;
        uint32_t cb = b.entries[j].first;
        if (ca == cb) {
            dot += a.entries[i].second * b.entries[j].second;
            ++i;
            ++j;
        } else if (ca < cb) {
            ++i;
        } else {
            ++j;
        }
    }
    return dot / (a.norm * b.norm);
}

}  // namespace adlink::sparse
