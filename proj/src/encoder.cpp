#include "adlink/encoder.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace adlink::enc {

using nlohmann::json;

void EncoderConfig::validate() const {
    if (vocab_size <= tok::kNumSpecialTokens)
        throw DataError("encoder config: vocab_size must exceed the special tokens");
    if (max_len < 8) throw DataError("encoder config: max_len must be >= 8");
    if (layers < 1) throw DataError("encoder config: layers must be >= 1");
    if (heads < 1) throw DataError("encoder config: heads must be >= 1");
    if (hidden % heads != 0) throw DataError("encoder config: hidden must be divisible by heads");
    if (ffn_mult < 1) throw DataError("encoder config: ffn_mult must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0))
        throw DataError("encoder config: dropout must be in [0,1)");
}

EncoderModel::EncoderModel(const EncoderConfig& config) : config_(config) {
    config.validate();
    const auto H = static_cast<Eigen::Index>(config.hidden);
    const auto V = static_cast<Eigen::Index>(config.vocab_size);
    const auto L = static_cast<Eigen::Index>(config.max_len);
    const auto F = static_cast<Eigen::Index>(config.ffn_dim());

    Rng rng(config.seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(config.hidden));

    auto add = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols,
                   char init) -> size_t {
        ParamTensor t;
        t.name = name;
        t.value.resize(rows, cols);
        if (init == 'g') {
            for (Eigen::Index r = 0; r < rows; ++r)
                for (Eigen::Index c = 0; c < cols; ++c) t.value(r, c) = rng.next_gaussian() * scale;
        } else {
            t.value.setConstant(init == '1' ? 1.0 : 0.0);
        }
        t.grad = Matrix::Zero(rows, cols);
        params_.push_back(std::move(t));
        return params_.size() - 1;
    };

    tok_emb = add("tok_emb", V, H, 'g');
    pos_emb = add("pos_emb", L, H, 'g');
    emb_ln_g = add("emb_ln_g", 1, H, '1');
    emb_ln_b = add("emb_ln_b", 1, H, '0');
    for (size_t l = 0; l < config.layers; ++l) {
        std::string p = "layer" + std::to_string(l) + ".";
        LayerRefs refs{};
        refs.wq = add(p + "wq", H, H, 'g');
        refs.bq = add(p + "bq", 1, H, '0');
        refs.wk = add(p + "wk", H, H, 'g');
        refs.bk = add(p + "bk", 1, H, '0');
        refs.wv = add(p + "wv", H, H, 'g');
        refs.bv = add(p + "bv", 1, H, '0');
        refs.wo = add(p + "wo", H, H, 'g');
        refs.bo = add(p + "bo", 1, H, '0');
        refs.ln1_g = add(p + "ln1_g", 1, H, '1');
        refs.ln1_b = add(p + "ln1_b", 1, H, '0');
        refs.w1 = add(p + "w1", H, F, 'g');
        refs.b1 = add(p + "b1", 1, F, '0');
        refs.w2 = add(p + "w2", F, H, 'g');
        refs.b2 = add(p + "b2", 1, H, '0');
        refs.ln2_g = add(p + "ln2_g", 1, H, '1');
        refs.ln2_b = add(p + "ln2_b", 1, H, '0');
        layer_refs.push_back(refs);
    }
    mlm_bias = add("mlm_bias", 1, V, '0');
}

ParamTensor& EncoderModel::param(const std::string& name) {
    for (auto& p : params_) {
        if (p.name == name) return p;
    }
    throw DataError("unknown parameter tensor: " + name);
}

size_t EncoderModel::parameter_count() const {
    size_t n = 0;
    for (const auto& p : params_) n += static_cast<size_t>(p.value.size());
    return n;
}

void EncoderModel::zero_grads() {
    for (auto& p : params_) p.grad.setZero();
}

namespace {

constexpr double kLnEps = 1e-12;
constexpr double kMaskedScore = -1e30;

double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

double gelu_grad(double x) {
    double phi = std::exp(-0.5 * x * x) * 0.3989422804014326779;  // 1/sqrt(2*pi)
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * phi;
}

struct LnCache {
    Matrix xhat;               // normalized input
    Eigen::VectorXd inv_std;   // per row
};

Matrix layer_norm(const Matrix& x, const Matrix& g, const Matrix& b, LnCache& cache) {
    const auto D = x.cols();
    cache.xhat.resize(x.rows(), D);
    cache.inv_std.resize(x.rows());
    Matrix out(x.rows(), D);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        double mean = x.row(r).mean();
        double var = (x.row(r).array() - mean).square().sum() / static_cast<double>(D);
        double inv_std = 1.0 / std::sqrt(var + kLnEps);
        cache.inv_std(r) = inv_std;
        cache.xhat.row(r) = (x.row(r).array() - mean) * inv_std;
        out.row(r) = cache.xhat.row(r).cwiseProduct(g.row(0)) + b.row(0);
    }
    return out;
}

// Returns dx; accumulates dg/db.
Matrix layer_norm_backward(const Matrix& dy, const Matrix& g, const LnCache& cache,
                           Matrix& dg, Matrix& db) {
    const auto D = dy.cols();
    Matrix dx(dy.rows(), D);
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        dg.row(0) += dy.row(r).cwiseProduct(cache.xhat.row(r));
        db.row(0) += dy.row(r);
        Eigen::RowVectorXd dxhat = dy.row(r).cwiseProduct(g.row(0));
        double m1 = dxhat.mean();
        double m2 = dxhat.cwiseProduct(cache.xhat.row(r)).mean();
        dx.row(r) = (dxhat.array() - m1 - cache.xhat.row(r).array() * m2) * cache.inv_std(r);
    }
    return dx;
}

struct LayerCache {
    Matrix x_in;
    Matrix q, k, v;
    std::vector<Matrix> probs;  // per head, T x T
    Matrix ctx;
    Matrix attn_out;
    Matrix attn_drop;  // empty when dropout is off
    LnCache ln1;
    Matrix x2;
    Matrix f1;  // pre-GELU
    Matrix ffn_out;
    Matrix ffn_drop;
    LnCache ln2;
};

struct SeqCache {
    std::vector<tok::TokenId> ids;
    size_t att_len = 0;
    Matrix x0;
    LnCache emb_ln;
    Matrix emb_drop;
    Matrix x_emb;
    std::vector<LayerCache> layers;
    Matrix h_final;
};

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
    Matrix mask(rows, cols);
    const double keep_scale = 1.0 / (1.0 - p);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
            mask(r, c) = rng.next_double() < p ? 0.0 : keep_scale;
    return mask;
}

// Full encoder stack for one sequence. T = ids.size() may be shorter than
// the configured max_len; trailing [PAD] rows never influence attended
// rows, so a sequence embeds identically at any padded length.
void forward_core(EncoderModel& model, const std::vector<tok::TokenId>& ids, size_t att_len,
                  SeqCache& cache, Rng* dropout_rng) {
    const auto& cfg = model.config();
    const auto T = static_cast<Eigen::Index>(ids.size());
    const auto H = static_cast<Eigen::Index>(cfg.hidden);
    const auto heads = static_cast<Eigen::Index>(cfg.heads);
    const auto dk = static_cast<Eigen::Index>(cfg.head_dim());
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
    const double p = cfg.dropout;
    const bool use_dropout = dropout_rng != nullptr && p > 0.0;

    if (ids.size() > cfg.max_len)
        throw DataError("sequence length exceeds encoder max_len");

    cache.ids = ids;
    cache.att_len = att_len;
    cache.layers.assign(cfg.layers, LayerCache{});

    cache.x0.resize(T, H);
    const Matrix& E = model.params()[model.tok_emb].value;
    const Matrix& P = model.params()[model.pos_emb].value;
    for (Eigen::Index t = 0; t < T; ++t) {
        tok::TokenId id = ids[static_cast<size_t>(t)];
        if (id < 0 || static_cast<size_t>(id) >= cfg.vocab_size)
            throw DataError("token id out of range for encoder vocabulary");
        cache.x0.row(t) = E.row(id) + P.row(t);
    }
    Matrix x = layer_norm(cache.x0, model.params()[model.emb_ln_g].value,
                          model.params()[model.emb_ln_b].value, cache.emb_ln);
    if (use_dropout) {
        cache.emb_drop = dropout_mask(T, H, p, *dropout_rng);
        x = x.cwiseProduct(cache.emb_drop);
    }
    cache.x_emb = x;

    const auto A = static_cast<Eigen::Index>(att_len);
    for (size_t l = 0; l < cfg.layers; ++l) {
        auto& lc = cache.layers[l];
        const auto& refs = model.layer_refs[l];
        auto& pr = model.params();
        lc.x_in = x;

        lc.q = x * pr[refs.wq].value;
        lc.q.rowwise() += pr[refs.bq].value.row(0);
        lc.k = x * pr[refs.wk].value;
        lc.k.rowwise() += pr[refs.bk].value.row(0);
        lc.v = x * pr[refs.wv].value;
        lc.v.rowwise() += pr[refs.bv].value.row(0);

        lc.ctx.resize(T, H);
        lc.probs.assign(static_cast<size_t>(heads), Matrix());
        for (Eigen::Index h = 0; h < heads; ++h) {
            auto qh = lc.q.middleCols(h * dk, dk);
            auto kh = lc.k.middleCols(h * dk, dk);
            auto vh = lc.v.middleCols(h * dk, dk);
            Matrix scores = qh * kh.transpose() * att_scale;
            if (A < T) scores.rightCols(T - A).setConstant(kMaskedScore);
            Matrix& probs = lc.probs[static_cast<size_t>(h)];
            probs.resize(T, T);
            for (Eigen::Index r = 0; r < T; ++r) {
                double mx = scores.row(r).maxCoeff();
                Eigen::RowVectorXd e = (scores.row(r).array() - mx).exp();
                probs.row(r) = e / e.sum();
            }
            lc.ctx.middleCols(h * dk, dk) = probs * vh;
        }

        lc.attn_out = lc.ctx * pr[refs.wo].value;
        lc.attn_out.rowwise() += pr[refs.bo].value.row(0);
        Matrix attn = lc.attn_out;
        if (use_dropout) {
            lc.attn_drop = dropout_mask(T, H, p, *dropout_rng);
            attn = attn.cwiseProduct(lc.attn_drop);
        }
        lc.x2 = layer_norm(lc.x_in + attn, pr[refs.ln1_g].value, pr[refs.ln1_b].value, lc.ln1);

        lc.f1 = lc.x2 * pr[refs.w1].value;
        lc.f1.rowwise() += pr[refs.b1].value.row(0);
        Matrix g = lc.f1.unaryExpr([](double v) { return gelu(v); });
        lc.ffn_out = g * pr[refs.w2].value;
        lc.ffn_out.rowwise() += pr[refs.b2].value.row(0);
        Matrix ffn = lc.ffn_out;
        if (use_dropout) {
            lc.ffn_drop = dropout_mask(T, H, p, *dropout_rng);
            ffn = ffn.cwiseProduct(lc.ffn_drop);
        }
        x = layer_norm(lc.x2 + ffn, pr[refs.ln2_g].value, pr[refs.ln2_b].value, lc.ln2);
    }
    cache.h_final = x;
}

// Accumulates parameter gradients for one sequence given dLoss/dHidden.
void backward_core(EncoderModel& model, const SeqCache& cache, const Matrix& d_hidden) {
    const auto& cfg = model.config();
    const auto T = static_cast<Eigen::Index>(cache.ids.size());
    const auto heads = static_cast<Eigen::Index>(cfg.heads);
    const auto dk = static_cast<Eigen::Index>(cfg.head_dim());
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));
    auto& pr = model.params();

    Matrix dx = d_hidden;
    for (size_t li = cfg.layers; li-- > 0;) {
        const auto& lc = cache.layers[li];
        const auto& refs = model.layer_refs[li];

        // ffn sublayer
        Matrix d_res2 = layer_norm_backward(dx, pr[refs.ln2_g].value, lc.ln2,
                                            pr[refs.ln2_g].grad, pr[refs.ln2_b].grad);
        Matrix d_ffn = d_res2;
        if (lc.ffn_drop.size() > 0) d_ffn = d_ffn.cwiseProduct(lc.ffn_drop);
        Matrix g = lc.f1.unaryExpr([](double v) { return gelu(v); });
        pr[refs.w2].grad += g.transpose() * d_ffn;
        pr[refs.b2].grad.row(0) += d_ffn.colwise().sum();
        Matrix dg = d_ffn * pr[refs.w2].value.transpose();
        Matrix df1 = dg.cwiseProduct(lc.f1.unaryExpr([](double v) { return gelu_grad(v); }));
        pr[refs.w1].grad += lc.x2.transpose() * df1;
        pr[refs.b1].grad.row(0) += df1.colwise().sum();
        Matrix dx2 = df1 * pr[refs.w1].value.transpose() + d_res2;

        // attention sublayer
        Matrix d_res1 = layer_norm_backward(dx2, pr[refs.ln1_g].value, lc.ln1,
                                            pr[refs.ln1_g].grad, pr[refs.ln1_b].grad);
        Matrix d_attn = d_res1;
        if (lc.attn_drop.size() > 0) d_attn = d_attn.cwiseProduct(lc.attn_drop);
        pr[refs.wo].grad += lc.ctx.transpose() * d_attn;
        pr[refs.bo].grad.row(0) += d_attn.colwise().sum();
        Matrix d_ctx = d_attn * pr[refs.wo].value.transpose();

        Matrix dq(T, cfg.hidden), dkm(T, cfg.hidden), dv(T, cfg.hidden);
        for (Eigen::Index h = 0; h < heads; ++h) {
            const Matrix& probs = lc.probs[static_cast<size_t>(h)];
            auto d_ctx_h = d_ctx.middleCols(h * dk, dk);
            auto vh = lc.v.middleCols(h * dk, dk);
            Matrix d_probs = d_ctx_h * vh.transpose();
            dv.middleCols(h * dk, dk) = probs.transpose() * d_ctx_h;
            Eigen::VectorXd row_dot = (d_probs.cwiseProduct(probs)).rowwise().sum();
            Matrix d_scores =
                probs.cwiseProduct(d_probs - row_dot.replicate(1, T)) * att_scale;
            dq.middleCols(h * dk, dk) = d_scores * lc.k.middleCols(h * dk, dk);
            dkm.middleCols(h * dk, dk) = d_scores.transpose() * lc.q.middleCols(h * dk, dk);
        }

        pr[refs.wq].grad += lc.x_in.transpose() * dq;
        pr[refs.bq].grad.row(0) += dq.colwise().sum();
        pr[refs.wk].grad += lc.x_in.transpose() * dkm;
        pr[refs.bk].grad.row(0) += dkm.colwise().sum();
        pr[refs.wv].grad += lc.x_in.transpose() * dv;
        pr[refs.bv].grad.row(0) += dv.colwise().sum();

        dx = d_res1 + dq * pr[refs.wq].value.transpose() + dkm * pr[refs.wk].value.transpose() +
             dv * pr[refs.wv].value.transpose();
    }

    if (cache.emb_drop.size() > 0) dx = dx.cwiseProduct(cache.emb_drop);
    Matrix dx0 = layer_norm_backward(dx, pr[model.emb_ln_g].value, cache.emb_ln,
                                     pr[model.emb_ln_g].grad, pr[model.emb_ln_b].grad);
    Matrix& dE = pr[model.tok_emb].grad;
    Matrix& dP = pr[model.pos_emb].grad;
    for (Eigen::Index t = 0; t < T; ++t) {
        dE.row(cache.ids[static_cast<size_t>(t)]) += dx0.row(t);
        dP.row(t) += dx0.row(t);
    }
}

}  // namespace

void MaskingPolicy::validate() const {
    if (!(mask_ratio >= 0.0 && mask_ratio < 1.0))
        throw DataError("masking policy: mask_ratio must be in [0,1)");
    double sum = p_mask + p_random + p_keep;
    if (std::abs(sum - 1.0) > 1e-9)
        throw DataError("masking policy: action split must sum to 1");
    if (p_mask < 0.0 || p_random < 0.0 || p_keep < 0.0)
        throw DataError("masking policy: action split must be nonnegative");
}

size_t MaskedBatch::labeled_positions() const {
    size_t n = 0;
    for (const auto& ls : labels)
        for (int32_t l : ls) n += l != kIgnoreLabel;
    return n;
}

MaskedBatch apply_masking(const std::vector<tok::TokenSeq>& batch, const MaskingPolicy& policy,
                          size_t vocab_size, Rng& rng) {
    policy.validate();
    if (vocab_size <= tok::kNumSpecialTokens)
        throw DataError("apply_masking: vocabulary has no maskable tokens");

    MaskedBatch out;
    out.seqs = batch;
    out.labels.reserve(batch.size());
    for (auto& seq : out.seqs) {
        std::vector<int32_t> labels(seq.ids.size(), kIgnoreLabel);
        std::vector<size_t> selected;
        if (policy.mode == MaskingPolicy::Mode::MLM) {
            for (const auto& [begin, end] : seq.word_groups)
                for (uint32_t i = begin; i < end; ++i)
                    if (rng.next_bernoulli(policy.mask_ratio)) selected.push_back(i);
        } else {
            for (const auto& [begin, end] : seq.word_groups) {
                if (!rng.next_bernoulli(policy.mask_ratio)) continue;
                for (uint32_t i = begin; i < end; ++i) selected.push_back(i);
            }
        }
        for (size_t i : selected) {
            labels[i] = seq.ids[i];
            double action = rng.next_double();
            if (action < policy.p_mask) {
                seq.ids[i] = tok::kMaskId;
            } else if (action < policy.p_mask + policy.p_random) {
                seq.ids[i] = static_cast<tok::TokenId>(
                    tok::kNumSpecialTokens +
                    rng.next_below(vocab_size - tok::kNumSpecialTokens));
            }  // else keep the original token
        }
        out.labels.push_back(std::move(labels));
    }
    return out;
}

namespace {

struct HeadBackward {
    std::vector<Matrix> d_hidden;  // per sequence, zero rows except labeled
};

double mlm_loss_and_head(EncoderModel& model, const MaskedBatch& batch,
                         const std::vector<SeqCache>& caches, size_t n_labeled,
                         bool accumulate, bool want_logits, std::vector<Matrix>* logits_out,
                         HeadBackward* hb) {
    const Matrix& E = model.params()[model.tok_emb].value;
    const Matrix& bias = model.params()[model.mlm_bias].value;
    const auto V = E.rows();

    double total_ce = 0.0;
    for (size_t s = 0; s < batch.seqs.size(); ++s) {
        const auto& labels = batch.labels[s];
        const Matrix& h = caches[s].h_final;
        if (want_logits) {
            Matrix z = h * E.transpose();
            z.rowwise() += bias.row(0);
            logits_out->push_back(std::move(z));
        }
        if (hb != nullptr) hb->d_hidden.emplace_back(Matrix::Zero(h.rows(), h.cols()));
        for (size_t t = 0; t < labels.size(); ++t) {
            if (labels[t] == kIgnoreLabel) continue;
            Eigen::VectorXd z = E * h.row(static_cast<Eigen::Index>(t)).transpose() +
                                bias.row(0).transpose();
            double mx = z.maxCoeff();
            Eigen::VectorXd e = (z.array() - mx).exp();
            double sum = e.sum();
            double log_z = mx + std::log(sum);
            total_ce += log_z - z(labels[t]);
            if (accumulate) {
                Eigen::VectorXd p = e / sum;
                p(labels[t]) -= 1.0;
                p /= static_cast<double>(n_labeled);
                // logits = h E^T + b
                model.params()[model.tok_emb].grad +=
                    p * h.row(static_cast<Eigen::Index>(t));
                model.params()[model.mlm_bias].grad.row(0) += p.transpose();
                hb->d_hidden[s].row(static_cast<Eigen::Index>(t)) = (E.transpose() * p).transpose();
            }
        }
        (void)V;
    }
    return total_ce / static_cast<double>(n_labeled);
}

MlmResult run_mlm(EncoderModel& model, const MaskedBatch& batch, const MlmOptions& opts,
                  Rng* dropout_rng) {
    if (batch.seqs.size() != batch.labels.size())
        throw DataError("forward_mlm: batch and labels differ in length");
    MlmResult result;
    result.labeled_positions = batch.labeled_positions();
    if (result.labeled_positions == 0)
        throw DataError("forward_mlm: batch has no labeled positions");

    std::vector<SeqCache> caches(batch.seqs.size());
    for (size_t s = 0; s < batch.seqs.size(); ++s)
        forward_core(model, batch.seqs[s].ids, batch.seqs[s].attended_len(), caches[s],
                     dropout_rng);

    HeadBackward hb;
    result.loss = mlm_loss_and_head(model, batch, caches, result.labeled_positions,
                                    opts.accumulate_grads, opts.want_logits,
                                    &result.logits, opts.accumulate_grads ? &hb : nullptr);
    if (opts.accumulate_grads) {
        for (size_t s = 0; s < batch.seqs.size(); ++s)
            backward_core(model, caches[s], hb.d_hidden[s]);
    }
    return result;
}

}  // namespace

MlmResult forward_mlm(EncoderModel& model, const MaskedBatch& batch, const MlmOptions& opts) {
    return run_mlm(model, batch, opts, nullptr);
}

namespace {

class AdamOptimizer {
public:
    AdamOptimizer(const EncoderModel& model, double lr, size_t warmup_steps)
        : lr_(lr), warmup_steps_(warmup_steps) {
        for (const auto& p : model.params()) {
            m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
            v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
        }
    }

    void step(EncoderModel& model, double grad_clip) {
        ++t_;
        if (grad_clip > 0.0) {
            double norm_sq = 0.0;
            for (const auto& p : model.params()) norm_sq += p.grad.squaredNorm();
            double norm = std::sqrt(norm_sq);
            if (norm > grad_clip) {
                double scale = grad_clip / norm;
                for (auto& p : model.params()) p.grad *= scale;
            }
        }
        double lr = lr_;
        if (warmup_steps_ > 0 && t_ < warmup_steps_)
            lr = lr_ * static_cast<double>(t_) / static_cast<double>(warmup_steps_);
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        auto& params = model.params();
        for (size_t i = 0; i < params.size(); ++i) {
            Matrix& g = params[i].grad;
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
            Matrix m_hat = m_[i] / bc1;
            Matrix v_hat = v_[i] / bc2;
            params[i].value -=
                lr * m_hat.cwiseQuotient(v_hat.cwiseSqrt().array().max(0.0).matrix() +
                                         Matrix::Constant(g.rows(), g.cols(), eps_));
        }
    }

private:
    double lr_;
    size_t warmup_steps_;
    size_t t_ = 0;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    std::vector<Matrix> m_, v_;
};

}  // namespace

PretrainResult pretrain(EncoderModel& model, const tok::Vocabulary& vocab,
                        const std::vector<std::string>& texts, const PretrainOptions& opts) {
    if (texts.empty()) throw DataError("pretrain: empty corpus");
    opts.policy.validate();
    if (vocab.size() != model.config().vocab_size)
        throw DataError("pretrain: vocabulary size does not match encoder config");

    PretrainResult result;
    if (opts.epochs == 0) return result;
    if (opts.checkpoint_dir.empty()) throw DataError("pretrain: checkpoint_dir required");
    std::filesystem::create_directories(opts.checkpoint_dir);
    const std::string vocab_hash = fnv1a64_hex(vocab.serialize());

    std::vector<tok::TokenSeq> seqs;
    seqs.reserve(texts.size());
    for (const auto& t : texts) seqs.push_back(tok::encode(t, vocab, model.config().max_len));

    Rng rng(opts.seed);

    // Static masking fixes labels once; dynamic re-draws them per use.
    std::vector<tok::TokenSeq> static_seqs;
    std::vector<std::vector<int32_t>> static_labels;
    if (!opts.policy.dynamic) {
        MaskedBatch once = apply_masking(seqs, opts.policy, vocab.size(), rng);
        static_seqs = std::move(once.seqs);
        static_labels = std::move(once.labels);
    }

    const size_t n = seqs.size();
    const size_t steps_per_epoch = (n + opts.batch_size - 1) / opts.batch_size;
    const size_t total_steps = steps_per_epoch * opts.epochs;
    const size_t warmup_steps =
        static_cast<size_t>(std::llround(opts.warmup_fraction * static_cast<double>(total_steps)));
    AdamOptimizer optimizer(model, opts.learning_rate, warmup_steps);

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;

    double step_seconds_total = 0.0;
    size_t steps_done = 0;
    for (size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_ce = 0.0;
        size_t epoch_labeled = 0;
        for (size_t start = 0; start < n; start += opts.batch_size) {
            size_t end = std::min(n, start + opts.batch_size);
            MaskedBatch masked;
            if (opts.policy.dynamic) {
                std::vector<tok::TokenSeq> batch;
                for (size_t i = start; i < end; ++i) batch.push_back(seqs[order[i]]);
                masked = apply_masking(batch, opts.policy, vocab.size(), rng);
                // A batch can come up empty under tiny mask ratios; redraw.
                for (int retry = 0; retry < 8 && masked.labeled_positions() == 0; ++retry)
                    masked = apply_masking(batch, opts.policy, vocab.size(), rng);
            } else {
                for (size_t i = start; i < end; ++i) {
                    masked.seqs.push_back(static_seqs[order[i]]);
                    masked.labels.push_back(static_labels[order[i]]);
                }
            }
            if (masked.labeled_positions() == 0) continue;

            auto t0 = std::chrono::steady_clock::now();
            model.zero_grads();
            MlmOptions mopts;
            mopts.accumulate_grads = true;
            MlmResult step = run_mlm(model, masked, mopts,
                                     model.config().dropout > 0.0 ? &rng : nullptr);
            if (!std::isfinite(step.loss))
                throw NumericalError("pretrain: non-finite loss at epoch " +
                                     std::to_string(epoch) + ", batch " +
                                     std::to_string(start / opts.batch_size + 1));
            optimizer.step(model, opts.grad_clip);
            auto t1 = std::chrono::steady_clock::now();
            step_seconds_total += std::chrono::duration<double>(t1 - t0).count();
            ++steps_done;

            epoch_ce += step.loss * static_cast<double>(step.labeled_positions);
            epoch_labeled += step.labeled_positions;
        }
        result.epoch_losses.push_back(epoch_labeled > 0
                                          ? epoch_ce / static_cast<double>(epoch_labeled)
                                          : 0.0);

        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%03zu.ckpt", epoch);
        std::string path = (std::filesystem::path(opts.checkpoint_dir) / name).string();
        save_checkpoint(model, path, vocab_hash);
        result.checkpoint_paths.push_back(path);
    }
    result.mean_step_seconds =
        steps_done > 0 ? step_seconds_total / static_cast<double>(steps_done) : 0.0;
    return result;
}

namespace {

std::vector<Eigen::Index> pooled_rows(const tok::TokenSeq& seq, bool exclude_specials) {
    std::vector<Eigen::Index> rows;
    size_t att = seq.attended_len();
    if (exclude_specials) {
        for (const auto& [begin, end] : seq.word_groups)
            for (uint32_t i = begin; i < end; ++i) rows.push_back(static_cast<Eigen::Index>(i));
        if (!rows.empty()) return rows;
        // Nothing but specials (empty text): fall back to attended rows.
    }
    for (size_t i = 0; i < att; ++i) rows.push_back(static_cast<Eigen::Index>(i));
    return rows;
}

DenseVector mean_pool(const Matrix& h, const std::vector<Eigen::Index>& rows) {
    DenseVector out = DenseVector::Zero(h.cols());
    for (Eigen::Index r : rows) out += h.row(r).transpose();
    return out / static_cast<double>(rows.size());
}

}  // namespace

DenseVector embed(const SentenceEncoder& encoder, std::string_view text) {
    auto& model = const_cast<EncoderModel&>(encoder.model);
    tok::TokenSeq seq = tok::encode(text, encoder.vocab, model.config().max_len);
    SeqCache cache;
    forward_core(model, seq.ids, seq.attended_len(), cache, nullptr);
    return mean_pool(cache.h_final, pooled_rows(seq, encoder.exclude_specials));
}

double cosine_dense(const DenseVector& a, const DenseVector& b) {
    if (a.size() != b.size())
        throw DataError("cosine_dense: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()) + ")");
    double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.dot(b) / (na * nb);
}

namespace {

// d cos(u, v) / du with cached norms.
DenseVector cosine_grad_u(const DenseVector& u, const DenseVector& v, double cos_uv) {
    double nu = u.norm(), nv = v.norm();
    return v / (nu * nv) - u * (cos_uv / (nu * nu));
}

}  // namespace

FinetuneResult finetune_triplet(const EncoderModel& model, const tok::Vocabulary& vocab,
                                const std::vector<Triplet>& triplets,
                                const FinetuneOptions& opts) {
    if (triplets.empty()) throw DataError("finetune_triplet: no triplets");
    FinetuneResult result;
    result.encoder.model = model;
    result.encoder.vocab = vocab;
    result.encoder.exclude_specials = opts.exclude_specials;
    EncoderModel& m = result.encoder.model;

    const size_t max_len = m.config().max_len;
    struct EncodedTriplet {
        tok::TokenSeq a, p, n;
    };
    std::vector<EncodedTriplet> enc;
    enc.reserve(triplets.size());
    for (const auto& t : triplets)
        enc.push_back({tok::encode(t.anchor, vocab, max_len), tok::encode(t.positive, vocab, max_len),
                       tok::encode(t.negative, vocab, max_len)});

    Rng rng(opts.seed);
    AdamOptimizer optimizer(m, opts.learning_rate, 0);
    std::vector<size_t> order(enc.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (size_t epoch = 1; epoch <= opts.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        size_t batches = 0;
        for (size_t start = 0; start < enc.size(); start += opts.batch_size) {
            size_t end = std::min(enc.size(), start + opts.batch_size);
            size_t bsz = end - start;
            m.zero_grads();
            Rng* drop = m.config().dropout > 0.0 ? &rng : nullptr;

            double batch_loss = 0.0;
            for (size_t i = start; i < end; ++i) {
                const auto& tr = enc[order[i]];
                SeqCache ca, cp, cn;
                forward_core(m, tr.a.ids, tr.a.attended_len(), ca, drop);
                forward_core(m, tr.p.ids, tr.p.attended_len(), cp, drop);
                forward_core(m, tr.n.ids, tr.n.attended_len(), cn, drop);
                auto rows_a = pooled_rows(tr.a, opts.exclude_specials);
                auto rows_p = pooled_rows(tr.p, opts.exclude_specials);
                auto rows_n = pooled_rows(tr.n, opts.exclude_specials);
                DenseVector ea = mean_pool(ca.h_final, rows_a);
                DenseVector ep = mean_pool(cp.h_final, rows_p);
                DenseVector en = mean_pool(cn.h_final, rows_n);
                double c_ap = cosine_dense(ea, ep);
                double c_an = cosine_dense(ea, en);
                double loss = std::max(0.0, c_an - c_ap + opts.margin);
                batch_loss += loss;
                if (loss <= 0.0) continue;

                double w = 1.0 / static_cast<double>(bsz);
                DenseVector d_ea = (cosine_grad_u(ea, en, c_an) - cosine_grad_u(ea, ep, c_ap)) * w;
                DenseVector d_ep = -cosine_grad_u(ep, ea, c_ap) * w;
                DenseVector d_en = cosine_grad_u(en, ea, c_an) * w;

                auto backprop = [&m](const SeqCache& cache, const DenseVector& d_e,
                                     const std::vector<Eigen::Index>& rows) {
                    Matrix dh = Matrix::Zero(cache.h_final.rows(), cache.h_final.cols());
                    Eigen::RowVectorXd per_row = d_e.transpose() / static_cast<double>(rows.size());
                    for (Eigen::Index r : rows) dh.row(r) = per_row;
                    backward_core(m, cache, dh);
                };
                backprop(ca, d_ea, rows_a);
                backprop(cp, d_ep, rows_p);
                backprop(cn, d_en, rows_n);
            }
            batch_loss /= static_cast<double>(bsz);
            if (!std::isfinite(batch_loss))
                throw NumericalError("finetune_triplet: non-finite loss at epoch " +
                                     std::to_string(epoch));
            optimizer.step(m, 0.0);
            epoch_loss += batch_loss;
            ++batches;
        }
        result.epoch_losses.push_back(batches > 0 ? epoch_loss / static_cast<double>(batches)
                                                  : 0.0);
    }
    return result;
}

namespace {

constexpr char kCheckpointMagic[8] = {'A', 'D', 'L', 'E', 'N', 'C', '0', '1'};

void append_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

uint64_t read_u64(const std::string& data, size_t offset) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<uint64_t>(static_cast<unsigned char>(data[offset + i])) << (8 * i);
    return v;
}

void append_double_le(std::string& out, double d) {
    uint64_t bits;
    std::memcpy(&bits, &d, sizeof(bits));
    append_u64(out, bits);
}

double read_double_le(const std::string& data, size_t offset) {
    uint64_t bits = read_u64(data, offset);
    double d;
    std::memcpy(&d, &bits, sizeof(d));
    return d;
}

}  // namespace

void save_checkpoint(const EncoderModel& model, const std::string& path,
                     const std::string& vocab_fnv64) {
    const auto& cfg = model.config();
    json header;
    header["format"] = "adlink-encoder";
    header["version"] = 1;
    header["config"] = {{"vocab_size", cfg.vocab_size}, {"max_len", cfg.max_len},
                        {"layers", cfg.layers},         {"heads", cfg.heads},
                        {"hidden", cfg.hidden},         {"ffn_mult", cfg.ffn_mult},
                        {"dropout", cfg.dropout},       {"seed", cfg.seed}};
    header["vocab_fnv64"] = vocab_fnv64;
    json manifest = json::array();
    for (const auto& p : model.params())
        manifest.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
    header["tensors"] = manifest;
    std::string header_str = header.dump();

    std::string out;
    out.append(kCheckpointMagic, sizeof(kCheckpointMagic));
    append_u64(out, header_str.size());
    out += header_str;
    for (const auto& p : model.params())
        for (Eigen::Index r = 0; r < p.value.rows(); ++r)
            for (Eigen::Index c = 0; c < p.value.cols(); ++c) append_double_le(out, p.value(r, c));
    write_file(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::string data = read_file(path);
    if (data.size() < 16 || std::memcmp(data.data(), kCheckpointMagic, 8) != 0)
        throw DataError("checkpoint: bad magic in " + path);
    uint64_t header_len = read_u64(data, 8);
    if (16 + header_len > data.size()) throw DataError("checkpoint: truncated header in " + path);
    json header = json::parse(data.substr(16, header_len), nullptr, false);
    if (header.is_discarded() || header.value("format", "") != "adlink-encoder" ||
        header.value("version", 0) != 1)
        throw DataError("checkpoint: unsupported header in " + path);

    EncoderConfig cfg;
    const auto& jc = header.at("config");
    cfg.vocab_size = jc.at("vocab_size").get<size_t>();
    cfg.max_len = jc.at("max_len").get<size_t>();
    cfg.layers = jc.at("layers").get<size_t>();
    cfg.heads = jc.at("heads").get<size_t>();
    cfg.hidden = jc.at("hidden").get<size_t>();
    cfg.ffn_mult = jc.at("ffn_mult").get<size_t>();
    cfg.dropout = jc.at("dropout").get<double>();
    cfg.seed = jc.at("seed").get<uint64_t>();

    Checkpoint ckpt;
    ckpt.model = EncoderModel(cfg);
    ckpt.vocab_fnv64 = header.value("vocab_fnv64", "");

    const auto& manifest = header.at("tensors");
    if (manifest.size() != ckpt.model.params().size())
        throw DataError("checkpoint: tensor manifest size mismatch in " + path);
    size_t offset = 16 + header_len;
    for (size_t i = 0; i < ckpt.model.params().size(); ++i) {
        auto& p = ckpt.model.params()[i];
        const auto& entry = manifest[i];
        if (entry.at("name").get<std::string>() != p.name ||
            entry.at("rows").get<Eigen::Index>() != p.value.rows() ||
            entry.at("cols").get<Eigen::Index>() != p.value.cols())
            throw DataError("checkpoint: tensor manifest mismatch for " + p.name);
        size_t need = static_cast<size_t>(p.value.size()) * 8;
        if (offset + need > data.size()) throw DataError("checkpoint: truncated tensors in " + path);
        for (Eigen::Index r = 0; r < p.value.rows(); ++r)
            for (Eigen::Index c = 0; c < p.value.cols(); ++c) {
                p.value(r, c) = read_double_le(data, offset);
                offset += 8;
            }
    }
    if (offset != data.size()) throw DataError("checkpoint: trailing bytes in " + path);
    return ckpt;
}

}  // namespace adlink::enc
