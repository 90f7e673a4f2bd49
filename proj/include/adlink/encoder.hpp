#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adlink/common.hpp"
#include "adlink/tokenize.hpp"

namespace adlink::enc {

using Matrix = Eigen::MatrixXd;
using DenseVector = Eigen::VectorXd;

struct EncoderConfig {
    size_t vocab_size = 2000;
    size_t max_len = 64;
    size_t layers = 2;
    size_t heads = 2;
    size_t hidden = 64;
    size_t ffn_mult = 4;
    double dropout = 0.0;
    uint64_t seed = 7;

    size_t head_dim() const { return hidden / heads; }
    size_t ffn_dim() const { return hidden * ffn_mult; }
    void validate() const;  // throws DataError
};

struct ParamTensor {
    std::string name;
    Matrix value;
    Matrix grad;
};

// Bidirectional transformer encoder, post-norm with GELU feed-forward.
// The MLM head is tied to the token embeddings plus a learned bias.
// All arithmetic is double precision; forward/backward are hand-rolled
// so gradients are exact.
class EncoderModel {
public:
    EncoderModel() = default;
    explicit EncoderModel(const EncoderConfig& config);

    const EncoderConfig& config() const { return config_; }
    std::vector<ParamTensor>& params() { return params_; }
    const std::vector<ParamTensor>& params() const { return params_; }
    ParamTensor& param(const std::string& name);         // throws on unknown name
    size_t parameter_count() const;
    void zero_grads();

    // Indices into params() used by the forward/backward kernels.
    struct LayerRefs {
        size_t wq, bq, wk, bk, wv, bv, wo, bo;
        size_t ln1_g, ln1_b, w1, b1, w2, b2, ln2_g, ln2_b;
    };
    size_t tok_emb = 0, pos_emb = 0, emb_ln_g = 0, emb_ln_b = 0, mlm_bias = 0;
    std::vector<LayerRefs> layer_refs;

private:
    EncoderConfig config_;
    std::vector<ParamTensor> params_;
};

struct MaskingPolicy {
    enum class Mode { MLM, WWMLM };
    Mode mode = Mode::MLM;
    double mask_ratio = 0.15;
    double p_mask = 0.8;     // replace with [MASK]
    double p_random = 0.1;   // replace with a random non-special token
    double p_keep = 0.1;     // leave unchanged (still predicted)
    bool dynamic = true;     // re-sample masks on every use

    void validate() const;
};

inline constexpr int32_t kIgnoreLabel = -1;

struct MaskedBatch {
    std::vector<tok::TokenSeq> seqs;
    std::vector<std::vector<int32_t>> labels;  // original ids, kIgnoreLabel elsewhere
    size_t labeled_positions() const;
};

// MLM mode selects attended word-group positions independently with
// probability mask_ratio; WWMLM selects whole word groups with the same
// probability so the expected selected-position fraction matches while
// groups are always labeled in full. Every call draws fresh randomness.
MaskedBatch apply_masking(const std::vector<tok::TokenSeq>& batch, const MaskingPolicy& policy,
                          size_t vocab_size, Rng& rng);

struct MlmResult {
    double loss = 0.0;
    size_t labeled_positions = 0;
    // Per-sequence T x V logit matrices; filled only when requested.
    std::vector<Matrix> logits;
};

struct MlmOptions {
    bool want_logits = false;
    bool accumulate_grads = false;  // backward pass into param grads
};

MlmResult forward_mlm(EncoderModel& model, const MaskedBatch& batch, const MlmOptions& opts = {});

struct PretrainOptions {
    MaskingPolicy policy;
    size_t epochs = 20;
    size_t batch_size = 32;
    double learning_rate = 1e-4;
    double grad_clip = 1.0;
    double warmup_fraction = 0.05;  // linear warm-up over the first steps
    uint64_t seed = 1234;
    std::string checkpoint_dir;
};

struct PretrainResult {
    std::vector<std::string> checkpoint_paths;  // one per epoch
    std::vector<double> epoch_losses;
    double mean_step_seconds = 0.0;  // optimizer loop only, setup excluded
};

// Adam with bias correction and global-norm gradient clipping. Aborts
// with NumericalError naming the epoch/batch if the loss goes non-finite.
PretrainResult pretrain(EncoderModel& model, const tok::Vocabulary& vocab,
                        const std::vector<std::string>& texts, const PretrainOptions& opts);

struct SentenceEncoder {
    EncoderModel model;
    tok::Vocabulary vocab;
    // Mean pooling always skips [PAD]; this flag additionally drops
    // [CLS]/[SEP] (default keeps them).
    bool exclude_specials = false;
};

DenseVector embed(const SentenceEncoder& encoder, std::string_view text);

struct Triplet {
    std::string anchor, positive, negative;
};

struct FinetuneOptions {
    double margin = 0.25;
    size_t epochs = 3;
    size_t batch_size = 32;
    double learning_rate = 1e-4;
    uint64_t seed = 99;
    bool exclude_specials = false;
};

struct FinetuneResult {
    SentenceEncoder encoder;
    std::vector<double> epoch_losses;
};

// Minimizes mean max(0, cos_dist(a,p) - cos_dist(a,n) + margin) over the
// triplets, updating all encoder parameters.
FinetuneResult finetune_triplet(const EncoderModel& model, const tok::Vocabulary& vocab,
                                const std::vector<Triplet>& triplets, const FinetuneOptions& opts);

double cosine_dense(const DenseVector& a, const DenseVector& b);

// Versioned container: JSON header (config, vocab fingerprint, tensor
// shape manifest) + raw little-endian doubles per tensor, row-major.
void save_checkpoint(const EncoderModel& model, const std::string& path,
                     const std::string& vocab_fnv64);
struct Checkpoint {
    EncoderModel model;
    std::string vocab_fnv64;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace adlink::enc
