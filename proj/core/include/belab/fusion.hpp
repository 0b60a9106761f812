#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "belab/audio.hpp"
#include "belab/encoder.hpp"
#include "belab/nn.hpp"
#include "belab/optim.hpp"
#include "belab/rng.hpp"

namespace belab {

// One text chunk joined with its participant's recording-level audio logits.
struct FusionSample {
    std::string participant_id;
    std::uint32_t chunk_index = 0;
    Label label = Label::control;
    std::array<float, kNumLabels> text_logits{};
    std::array<float, kNumLabels> audio_logits{};
};

struct FusionOptions {
    bool probabilities = false;     // feed softmaxed outputs instead of raw logits
    bool recording_level = false;   // average a participant's chunk logits first
};

struct PairResult {
    std::vector<FusionSample> samples;
    std::size_t dropped = 0;  // text chunks without a matching audio recording
};

PairResult pair_modalities(const std::vector<ChunkPrediction>& text_preds,
                           const std::vector<AudioPrediction>& audio_preds,
                           const FusionOptions& opts = {});

// Single affine layer from the six stacked logits to the three classes.
template <typename T>
class FusionModel {
public:
    explicit FusionModel(std::uint64_t seed = 0);

    std::vector<Param<T>*> params() { return {&w_, &b_}; }
    void zero_grad();
    Param<T>& weight() { return w_; }  // shape {2*kNumLabels, kNumLabels}
    Param<T>& bias() { return b_; }

    std::array<T, kNumLabels> forward_one(const FusionSample& s) const;
    // x is rows * 2*kNumLabels; returns rows * kNumLabels.
    std::vector<T> forward(const std::vector<T>& x, std::size_t rows);

    struct Outcome {
        double loss = 0.0;
        std::vector<T> logits;
    };
    Outcome loss_and_grads(const std::vector<T>& x, std::size_t rows,
                           const std::vector<std::size_t>& labels);

private:
    Param<T> w_, b_;
    std::vector<T> x_;  // kept for the backward pass
    std::size_t rows_ = 0;
};

using FusionModelF = FusionModel<float>;
using FusionModelD = FusionModel<double>;

struct FusionSplit {
    std::vector<FusionSample> train, validation, test;
};

// Stratified per label with the same floor/half-even/remainder arithmetic
// the text dataset uses.
FusionSplit split_fusion_samples(const std::vector<FusionSample>& samples, std::uint64_t seed);

struct FusionTrainParams {
    std::size_t epochs = 50;
    std::size_t batch_size = 16;
    double lr = 1e-2;
};

struct FusionTrainResult {
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;  // 1-based; 0 = initial model kept
    double best_val_loss = 0.0;
};

// Trains only the fusion layer; the upstream checkpoints are never touched.
FusionTrainResult train_fusion(FusionModel<float>& model, const FusionSplit& split,
                               const FusionTrainParams& p, std::uint64_t seed);

struct FusionPrediction {
    std::string participant_id;
    std::uint32_t chunk_index = 0;
    Label label = Label::control;
    std::array<float, kNumLabels> logits{};
    std::size_t predicted = 0;
};

std::vector<FusionPrediction> predict_fusion(FusionModel<float>& model,
                                             const std::vector<FusionSample>& samples);

void save_fusion_model(FusionModel<float>& model, const FusionOptions& opts,
                       const std::string& dir);
std::pair<FusionModel<float>, FusionOptions> load_fusion_model(const std::string& dir);

}  // namespace belab
