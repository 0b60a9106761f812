#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "belab/dataset.hpp"
#include "belab/nn.hpp"
#include "belab/optim.hpp"
#include "belab/rng.hpp"

namespace belab {

// Bidirectional pre-norm transformer encoder with two heads: a direct
// hidden->vocab projection for masked-token prediction, and the pooled
// first-position tanh head for sequence classification.

struct EncoderConfig {
    std::size_t num_layers = 4;
    std::size_t num_heads = 4;
    std::size_t hidden_size = 128;
    std::size_t ffn_size = 512;
    std::size_t max_positions = 512;
    std::size_t vocab_size = 0;
    std::size_t num_labels = 3;
    double dropout = 0.1;

    std::size_t head_dim() const { return hidden_size / num_heads; }
    void validate() const;
    nlohmann::json to_json() const;
    static EncoderConfig from_json(const nlohmann::json& j);
};

struct Batch {
    std::size_t rows = 0, cols = 0;
    std::vector<std::int32_t> ids;   // rows*cols
    std::vector<std::uint8_t> mask;  // 1 = real token, 0 = pad

    static Batch filled(std::size_t rows, std::size_t cols, std::int32_t pad_id);
};

// Corrupted copy of a batch plus the positions whose original ids the model
// must recover. Empty selection means the batch carries no signal.
struct MlmPlan {
    Batch batch;
    std::vector<std::size_t> positions;  // flat indices into batch.ids
    std::vector<std::int32_t> targets;   // original ids at those positions
};

// Bernoulli(mask_prob) over non-special positions; selected ones become
// 80% mask token, 10% random non-special token, 10% unchanged.
std::optional<MlmPlan> make_mlm_batch(const Batch& clean, const EncoderConfig& cfg,
                                      double mask_prob, Rng& rng);

template <typename T>
class TextEncoder {
public:
    TextEncoder(EncoderConfig cfg, std::uint64_t seed);

    const EncoderConfig& config() const { return cfg_; }
    std::vector<Param<T>*> params();
    void zero_grad();

    // Hidden states [rows*cols*hidden]; the cache for backward lives in the
    // model, so forward/backward pairs must not interleave across batches.
    const std::vector<T>& forward(const Batch& batch, bool training, Rng* dropout_rng);
    void backward(std::vector<T> dhidden);

    // Mean cross-entropy of original ids at the plan's positions.
    double mlm_loss(const MlmPlan& plan);
    double mlm_loss_and_grads(const MlmPlan& plan, bool training, Rng* dropout_rng);

    // Pooled-bos classifier head, logits [rows*num_labels].
    std::vector<T> classify(const Batch& batch, bool training, Rng* dropout_rng);
    double classify_loss(const Batch& batch, const std::vector<std::size_t>& labels);
    struct ClassifyOutcome {
        double loss;
        std::vector<T> logits;
    };
    ClassifyOutcome classify_loss_and_grads(const Batch& batch,
                                            const std::vector<std::size_t>& labels, bool training,
                                            Rng* dropout_rng);

    Param<T>& param(const std::string& name);  // test access

private:
    struct LayerParams {
        Param<T> ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
        Param<T> ln2_g, ln2_b, w1, b1, w2, b2;
    };
    struct LayerCache {
        std::vector<T> x_in, ln1_out, q, k, v;
        LayerNormCache<T> ln1, ln2;
        std::vector<T> probs, probs_dropped, ctx, x_mid, ln2_out, ffn_pre, ffn_act;
        std::vector<std::uint8_t> attn_drop, attn_out_drop, ffn_drop;
    };
    struct Cache {
        Batch batch;
        bool training = false;
        std::vector<std::size_t> pos_index;
        std::vector<std::uint8_t> emb_drop;
        std::vector<LayerCache> layers;
        LayerNormCache<T> ln_f;
        std::vector<T> hidden;
        // classifier head
        std::vector<T> p0, pooled, pooled_dropped;
        std::vector<std::uint8_t> pool_drop;
        // lm head
        std::vector<std::size_t> lm_positions;
        std::vector<T> lm_in;
    };

    void attention_forward(LayerCache& lc, const Batch& batch, LayerParams& lp, bool training,
                           Rng* rng);
    void attention_backward(const LayerCache& lc, const Batch& batch, LayerParams& lp,
                            const std::vector<T>& dattn_out, std::vector<T>& dln1_out);

    EncoderConfig cfg_;
    Param<T> tok_emb_, pos_emb_;
    std::vector<LayerParams> layers_;
    Param<T> ln_f_g_, ln_f_b_;
    Param<T> lm_w_, lm_b_;
    Param<T> pool_w_, pool_b_, cls_w_, cls_b_;
    Cache cache_;
};

using TextEncoderF = TextEncoder<float>;
using TextEncoderD = TextEncoder<double>;

struct FineTuneParams {
    std::size_t batch_size = 9;
    std::size_t epochs = 5;
    double peak_lr = 8.42e-5;
    std::int64_t warmup_steps = 190;
};

struct FineTuneResult {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;  // 1-based; 0 = initial model kept
    double best_val_loss = 0.0;
};

// Trains on shuffled mini-batches under a warmup/decay schedule; the model
// is left holding the snapshot with the lowest validation cross-entropy.
FineTuneResult finetune(TextEncoder<float>& model, const SplitDataset& data,
                        const FineTuneParams& p, std::uint64_t seed);

// Builds [bos, chunk ids, eos] rows for a slice of chunks.
Batch chunks_to_batch(const std::vector<LabeledChunk>& chunks, std::size_t begin,
                      std::size_t count, const EncoderConfig& cfg);

struct PretrainResult {
    std::vector<double> losses;  // per non-skipped step
    std::size_t skipped_batches = 0;
};

// Packs encoded documents into fixed rows and runs masked-token training.
PretrainResult mlm_pretrain(TextEncoder<float>& model,
                            const std::vector<std::vector<std::int32_t>>& docs,
                            std::size_t steps, std::size_t batch_rows, std::size_t seq_len,
                            double peak_lr, std::int64_t warmup_steps, double mask_prob,
                            std::uint64_t seed);

struct ChunkPrediction {
    std::string participant_id;
    std::uint32_t chunk_index = 0;
    Label label = Label::control;
    std::vector<float> logits;
    std::size_t predicted = 0;
};

std::vector<ChunkPrediction> predict_chunks(TextEncoder<float>& model,
                                            const std::vector<LabeledChunk>& chunks,
                                            std::size_t batch_size = 16);

void save_text_encoder(TextEncoder<float>& model, const std::string& dir);
TextEncoder<float> load_text_encoder(const std::string& dir);

}  // namespace belab
