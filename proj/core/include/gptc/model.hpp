#pragma once

#include "gptc/common.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gptc::vocab {
class SubtokenVocabulary;
}

namespace gptc::model {

class ModelError : public Error {
public:
    using Error::Error;
};

/// Sequence does not fit into N_ctx positions.
class ContextLengthError : public ModelError {
public:
    using ModelError::ModelError;
};

/// Operation not supported by the configured language mode.
class CapabilityError : public ModelError {
public:
    using ModelError::ModelError;
};

enum class LangMode : std::uint8_t {
    none,
    embedding,
    control_codes,
    double_heads,
};

std::string_view to_string(LangMode mode) noexcept;
LangMode parse_lang_mode(std::string_view name);

struct ModelConfig {
    std::size_t n_layers = 4;
    std::size_t d_model = 128;
    std::size_t d_x = 128;
    std::size_t n_heads = 4;
    std::size_t n_ctx = 128;
    std::size_t vocab_size = 2000;
    /// Dropout keep probability during training.
    double keep_prob = 0.9;
    LangMode lang_mode = LangMode::none;
    std::size_t n_lang = 0;
    /// Weight of the classification loss for double_heads.
    double lambda = 0.5;

    /// Throws ModelError describing the first violated constraint.
    void validate() const;
    std::string to_line() const;
    static ModelConfig from_line(std::string_view line);

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename S>
struct BlockParams {
    Mat<S> ln1_g, ln1_b;   // 1 x d
    Mat<S> w_qkv, b_qkv;   // d x 3d, 1 x 3d
    Mat<S> w_o, b_o;       // d x d, 1 x d
    Mat<S> ln2_g, ln2_b;   // 1 x d
    Mat<S> w_fc, b_fc;     // d x 4d, 1 x 4d
    Mat<S> w_proj, b_proj; // 4d x d, 1 x d
};

/// All trainable tensors. The output layer reuses `w_e`; there is no
/// separate |V| x d_x output matrix.
template <typename S>
struct ModelParams {
    ModelConfig config;
    Mat<S> w_e;   // |V| x d_x
    Mat<S> w_p;   // N_ctx x d_x
    Mat<S> w_l;   // N_lang x d_x (embedding mode only, else empty)
    std::vector<BlockParams<S>> blocks;
    Mat<S> a;     // d_model x d_x
    Mat<S> b;     // 1 x |V|
    Mat<S> cls;   // d_model x N_lang (double_heads only, else empty)

    /// Visits every present tensor in checkpoint order.
    template <typename F>
    void for_each_tensor(F&& f);
    template <typename F>
    void for_each_tensor(F&& f) const;

    std::size_t element_count() const;
    /// Same shapes, all zeros.
    ModelParams zeros_like() const;
    bool all_finite() const;
};

/// Parameter count for the configured architecture. With `tied=false` the
/// count of the untied control (separate d_model x |V| output matrix, no A).
std::size_t count_params(const ModelConfig& config, bool tied = true);

struct TensorShape {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
};

/// Tensor names and shapes in checkpoint order.
std::vector<TensorShape> tensor_shapes(const ModelConfig& config);

template <typename S>
ModelParams<S> init_params(const ModelConfig& config, std::uint64_t seed);

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& params);

/// Per-layer keys and values of every processed position.
template <typename S>
struct KVCache {
    std::vector<Mat<S>> k;
    std::vector<Mat<S>> v;

    std::size_t length() const noexcept { return k.empty() ? 0 : static_cast<std::size_t>(k.front().rows()); }
    std::size_t layers() const noexcept { return k.size(); }
};

template <typename S>
KVCache<S> make_cache(const ModelConfig& config);

/// Logits (T x |V|) for `ids` placed after the cached positions. When
/// `cache` is given it is extended with the new positions.
template <typename S>
Mat<S> forward(const ModelParams<S>& params, std::span<const TokenId> ids, int lang = -1,
               KVCache<S>* cache = nullptr);

/// Last-position logits (B x |V|) of several sequences in one pass. Rows of
/// all sequences are stacked for the dense layers; attention runs per
/// sequence. `caches` may be empty or hold one (possibly null) cache per sequence.
template <typename S>
Mat<S> forward_last_batch(const ModelParams<S>& params, std::span<const std::span<const TokenId>> seqs,
                          std::span<const int> langs, std::span<KVCache<S>* const> caches);

struct Sample {
    std::vector<TokenId> ids;
    /// Language index, -1 when unknown.
    int lang = -1;
};

struct LossOptions {
    bool training = false;  // enables dropout
    std::uint64_t dropout_seed = 0;
};

struct SoftTargets {
    const ModelParams<float>* teacher = nullptr;
    double weight = 0.5;
    double temperature = 2.0;
};

/// Mean next-token cross-entropy over every predicted position of the
/// batch (plus lambda times the mean classification loss for
/// double_heads). Accumulates gradients into `grads` when non-null.
template <typename S>
double loss(const ModelParams<S>& params, std::span<const Sample> batch, ModelParams<S>* grads,
            const LossOptions& options = {});

double distill_loss(const ModelParams<float>& params, std::span<const Sample> batch, ModelParams<float>* grads,
                    const LossOptions& options, const SoftTargets& soft);

/// Language index and probabilities from the classification head.
template <typename S>
std::pair<int, std::vector<double>> classify_language(const ModelParams<S>& params, std::span<const TokenId> ids);

/// Student with `student_layers` blocks; block i copies teacher block
/// floor(i * n_teacher / n_student).
ModelParams<float> distill_init(const ModelParams<float>& teacher, std::size_t student_layers);

std::vector<std::size_t> distill_block_map(std::size_t teacher_layers, std::size_t student_layers);

/// Inserts [<LANG:x>, <SEP>] after <BOF> (or at the front when there is no
/// <BOF>). Identity unless mode is control_codes. Rejects already-prefixed input.
std::vector<TokenId> prepend_control_code(std::span<const TokenId> ids, Language lang,
                                          const vocab::SubtokenVocabulary& vocab, LangMode mode);

// ---------------------------------------------------------------------------
// Training

struct TrainSchedule {
    std::size_t epochs = 1;
    std::size_t batch_size = 16;
    double base_lr = 1e-3;
    std::size_t warmup_epochs = 1;
    double decay = 0.98;
    bool cosine = false;
    /// Stops after this many optimizer steps when non-zero.
    std::size_t max_steps = 0;
    /// Stops at the end of an epoch whose mean loss is below this value.
    double target_loss = 0.0;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t seed = 1;
    /// Experimental soft-target distillation.
    SoftTargets soft;
};

struct TrainResult {
    std::vector<double> loss_history;  // one entry per step
    std::vector<double> epoch_loss;    // mean per epoch
    std::size_t steps = 0;
    bool diverged = false;
    std::string message;
};

using StepCallback = std::function<void(std::size_t step, double loss, double lr)>;

/// Learning rate for a 0-based step: linear warm-up over the warm-up epochs,
/// then base * decay^epoch with a 0-based epoch index (or cosine to zero when enabled).
double learning_rate(const TrainSchedule& schedule, std::size_t step, std::size_t steps_per_epoch);

/// AdamW training. Each batch holds samples of one language, chosen
/// uniformly per step. On a non-finite loss the parameters of the last good
/// step are restored and training stops with `diverged` set.
TrainResult train(ModelParams<float>& params, std::span<const Sample> samples, const TrainSchedule& schedule,
                  const StepCallback& on_step = {});

/// Mean loss without dropout and without gradients.
double evaluate_loss(const ModelParams<float>& params, std::span<const Sample> samples);

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(std::ostream& out, const ModelParams<float>& params);
ModelParams<float> load_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const ModelParams<float>& params);
ModelParams<float> load_checkpoint(const std::string& path);

/// FNV-1a over the config line and tensor bytes.
std::uint64_t params_digest(const ModelParams<float>& params);

// ---------------------------------------------------------------------------

template <typename S>
template <typename F>
void ModelParams<S>::for_each_tensor(F&& f) {
    f(std::string("wte"), w_e);
    f(std::string("wpe"), w_p);
    if (w_l.size() != 0) {
        f(std::string("wle"), w_l);
    }
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        auto& blk = blocks[i];
        const std::string p = "h." + std::to_string(i) + ".";
        f(p + "ln_1.g", blk.ln1_g);
        f(p + "ln_1.b", blk.ln1_b);
        f(p + "attn.w_qkv", blk.w_qkv);
        f(p + "attn.b_qkv", blk.b_qkv);
        f(p + "attn.w_o", blk.w_o);
        f(p + "attn.b_o", blk.b_o);
        f(p + "ln_2.g", blk.ln2_g);
        f(p + "ln_2.b", blk.ln2_b);
        f(p + "mlp.w_fc", blk.w_fc);
        f(p + "mlp.b_fc", blk.b_fc);
        f(p + "mlp.w_proj", blk.w_proj);
        f(p + "mlp.b_proj", blk.b_proj);
    }
    f(std::string("proj_a"), a);
    f(std::string("out_bias"), b);
    if (cls.size() != 0) {
        f(std::string("cls_head"), cls);
    }
}

template <typename S>
template <typename F>
void ModelParams<S>::for_each_tensor(F&& f) const {
    const_cast<ModelParams<S>*>(this)->for_each_tensor(
        [&](const std::string& name, Mat<S>& m) { f(name, static_cast<const Mat<S>&>(m)); });
}

}  // namespace gptc::model
