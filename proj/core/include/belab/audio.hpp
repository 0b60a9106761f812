#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "belab/common.hpp"
#include "belab/nn.hpp"
#include "belab/optim.hpp"
#include "belab/rng.hpp"

namespace belab {

// One recording summarized as a fixed-length acoustic feature vector.
struct FeatureVector {
    std::string participant_id;
    Label label = Label::control;
    std::vector<float> values;
};

// Header must read participant_id,label,f_1..f_D; D is inferred from it.
std::vector<FeatureVector> parse_features(const std::string& csv_text);
std::vector<FeatureVector> load_features(const std::string& path);

struct NormStats {
    std::vector<float> mean, stddev;  // per feature; zero-variance features get stddev 1
};

NormStats compute_norm_stats(const std::vector<FeatureVector>& train);
void apply_norm(std::vector<FeatureVector>& records, const NormStats& stats);

// Recordings with transcripts form the test set; the rest are divided into
// train and validation per label, so audio training never sees a recording
// the text models were built from.
struct AudioSplit {
    std::vector<FeatureVector> train, validation, test;
    NormStats stats;  // computed on train only, already applied to all three
};

AudioSplit split_audio(const std::vector<FeatureVector>& all,
                       const std::set<std::string>& transcript_ids, std::uint64_t seed);

struct AudioMlpConfig {
    std::size_t input_dim = 88;  // extended acoustic functional set size
    std::size_t hidden1 = 64;
    std::size_t hidden2 = 32;
    std::size_t num_labels = kNumLabels;
    double dropout = 0.1;

    void validate() const;
    nlohmann::json to_json() const;
    static AudioMlpConfig from_json(const nlohmann::json& j);
};

// Three affine layers with relu and dropout between them.
template <typename T>
class AudioMlp {
public:
    AudioMlp(AudioMlpConfig cfg, std::uint64_t seed);

    const AudioMlpConfig& config() const { return cfg_; }
    std::vector<Param<T>*> params();
    void zero_grad();
    Param<T>& param(const std::string& name);

    // x is rows * input_dim, already normalized; returns rows * num_labels.
    std::vector<T> forward(const std::vector<T>& x, std::size_t rows, bool training,
                           Rng* dropout_rng);

    struct Outcome {
        double loss = 0.0;
        std::vector<T> logits;
    };
    double loss(const std::vector<T>& x, std::size_t rows, const std::vector<std::size_t>& labels);
    Outcome loss_and_grads(const std::vector<T>& x, std::size_t rows,
                           const std::vector<std::size_t>& labels, bool training,
                           Rng* dropout_rng);

private:
    AudioMlpConfig cfg_;
    Param<T> w1_, b1_, w2_, b2_, w3_, b3_;
    struct Cache {
        std::vector<T> x, h1_pre, h1, h2_pre, h2;
        std::vector<std::uint8_t> drop1, drop2;
        bool training = false;
        std::size_t rows = 0;
    } cache_;
};

using AudioMlpF = AudioMlp<float>;
using AudioMlpD = AudioMlp<double>;

struct AudioTrainParams {
    std::size_t epochs = 100;
    std::size_t batch_size = 16;
    double range_lo = 1e-6, range_hi = 1.0;  // lr range test sweep bounds
    std::size_t range_points = 25;
    LrRangeConfig range;
};

struct AudioTrainResult {
    LrRangeResult lr;
    std::vector<EpochStats> epochs;
    std::size_t best_epoch = 0;  // 1-based; 0 = initial model kept
    double best_val_loss = 0.0;
};

// Range test first, then constant-lr Adam training; the model ends up
// holding the snapshot with the lowest validation cross-entropy.
AudioTrainResult train_audio(AudioMlp<float>& model, const AudioSplit& data,
                             const AudioTrainParams& p, std::uint64_t seed);

struct AudioPrediction {
    std::string participant_id;
    Label label = Label::control;
    std::vector<float> logits;
    std::size_t predicted = 0;
};

// Normalizes raw features with the trained stats before the forward pass.
std::vector<AudioPrediction> predict_audio(AudioMlp<float>& model,
                                           const std::vector<FeatureVector>& raw,
                                           const NormStats& stats);

void save_audio_model(AudioMlp<float>& model, const NormStats& stats, const std::string& dir);
std::pair<AudioMlp<float>, NormStats> load_audio_model(const std::string& dir);

}  // namespace belab
