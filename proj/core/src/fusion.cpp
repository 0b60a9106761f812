#include "belab/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "belab/checkpoint.hpp"
#include "belab/dataset.hpp"

namespace belab {

namespace {

constexpr std::size_t kFusionInputs = 2 * kNumLabels;
constexpr double kInitStd = 0.02;

std::array<float, kNumLabels> to_array(const std::vector<float>& logits,
                                       const std::string& participant_id) {
    if (logits.size() != kNumLabels) {
        throw DataError("prediction for participant '" + participant_id + "' has " +
                        std::to_string(logits.size()) + " logits, expected " +
                        std::to_string(kNumLabels));
    }
    std::array<float, kNumLabels> out{};
    std::copy(logits.begin(), logits.end(), out.begin());
    return out;
}

std::array<float, kNumLabels> softmax_triple(std::array<float, kNumLabels> v) {
    float top = *std::max_element(v.begin(), v.end());
    float sum = 0.0f;
    for (auto& x : v) {
        x = std::exp(x - top);
        sum += x;
    }
    for (auto& x : v) x /= sum;
    return v;
}

std::size_t argmax_row(const float* row, std::size_t n) {
    return static_cast<std::size_t>(std::max_element(row, row + n) - row);
}

}  // namespace

PairResult pair_modalities(const std::vector<ChunkPrediction>& text_preds,
                           const std::vector<AudioPrediction>& audio_preds,
                           const FusionOptions& opts) {
    std::map<std::string, std::array<float, kNumLabels>> audio;
    for (const auto& ap : audio_preds) {
        auto [it, inserted] = audio.emplace(ap.participant_id,
                                            to_array(ap.logits, ap.participant_id));
        if (!inserted) {
            throw DataError("duplicate audio prediction for participant '" + ap.participant_id +
                            "'");
        }
    }

    // optionally collapse each participant's chunks into one averaged row
    std::vector<ChunkPrediction> rows;
    if (opts.recording_level) {
        std::vector<std::string> order;
        std::map<std::string, ChunkPrediction> agg;
        std::map<std::string, std::size_t> counts;
        for (const auto& tp : text_preds) {
            auto [it, inserted] = agg.emplace(tp.participant_id, tp);
            if (inserted) {
                order.push_back(tp.participant_id);
                it->second.chunk_index = 0;
                counts[tp.participant_id] = 1;
            } else {
                for (std::size_t i = 0; i < it->second.logits.size(); ++i) {
                    it->second.logits[i] += tp.logits[i];
                }
                ++counts[tp.participant_id];
            }
        }
        for (const auto& pid : order) {
            ChunkPrediction cp = agg.at(pid);
            auto n = static_cast<float>(counts.at(pid));
            for (auto& x : cp.logits) x /= n;
            rows.push_back(std::move(cp));
        }
    } else {
        rows = text_preds;
    }

    PairResult result;
    for (const auto& tp : rows) {
        auto it = audio.find(tp.participant_id);
        if (it == audio.end()) {
            ++result.dropped;
            continue;
        }
        FusionSample s;
        s.participant_id = tp.participant_id;
        s.chunk_index = tp.chunk_index;
        s.label = tp.label;
        s.text_logits = to_array(tp.logits, tp.participant_id);
        s.audio_logits = it->second;
        if (opts.probabilities) {
            s.text_logits = softmax_triple(s.text_logits);
            s.audio_logits = softmax_triple(s.audio_logits);
        }
        result.samples.push_back(std::move(s));
    }
    return result;
}

template <typename T>
FusionModel<T>::FusionModel(std::uint64_t seed) {
    Rng rng(seed);
    w_ = Param<T>("fuse.w", {kFusionInputs, kNumLabels});
    w_.init_normal(rng, kInitStd);
    b_ = Param<T>("fuse.b", {kNumLabels});
}

template <typename T>
void FusionModel<T>::zero_grad() {
    w_.zero_grad();
    b_.zero_grad();
}

template <typename T>
std::array<T, kNumLabels> FusionModel<T>::forward_one(const FusionSample& s) const {
    std::array<T, kFusionInputs> x{};
    for (std::size_t i = 0; i < kNumLabels; ++i) {
        x[i] = static_cast<T>(s.text_logits[i]);
        x[kNumLabels + i] = static_cast<T>(s.audio_logits[i]);
    }
    std::array<T, kNumLabels> y{};
    for (std::size_t j = 0; j < kNumLabels; ++j) {
        T acc = b_.v[j];
        for (std::size_t i = 0; i < kFusionInputs; ++i) acc += x[i] * w_.v[i * kNumLabels + j];
        y[j] = acc;
    }
    return y;
}

template <typename T>
std::vector<T> FusionModel<T>::forward(const std::vector<T>& x, std::size_t rows) {
    if (rows == 0) throw UsageError("empty batch");
    if (x.size() != rows * kFusionInputs) throw UsageError("fusion input must be rows * 6");
    x_ = x;
    rows_ = rows;
    std::vector<T> logits(rows * kNumLabels);
    affine_forward(x.data(), w_, b_, logits.data(), rows, kFusionInputs, kNumLabels);
    return logits;
}

template <typename T>
typename FusionModel<T>::Outcome FusionModel<T>::loss_and_grads(
    const std::vector<T>& x, std::size_t rows, const std::vector<std::size_t>& labels) {
    if (labels.size() != rows) throw UsageError("labels size must match rows");
    std::vector<T> logits = forward(x, rows);
    std::vector<T> dlogits(rows * kNumLabels, T(0));
    double loss = 0.0;
    T weight = T(1) / static_cast<T>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        loss += static_cast<double>(
            softmax_cross_entropy(logits.data() + r * kNumLabels, kNumLabels, labels[r],
                                  dlogits.data() + r * kNumLabels, weight));
    }
    loss /= static_cast<double>(rows);
    affine_backward(x_.data(), dlogits.data(), w_, b_, static_cast<T*>(nullptr), rows,
                    kFusionInputs, kNumLabels);
    return {loss, std::move(logits)};
}

template class FusionModel<float>;
template class FusionModel<double>;

FusionSplit split_fusion_samples(const std::vector<FusionSample>& samples, std::uint64_t seed) {
    std::array<std::vector<std::size_t>, kNumLabels> by_label;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        by_label[static_cast<std::size_t>(samples[i].label)].push_back(i);
    }
    FusionSplit split;
    Rng root(seed);
    for (std::size_t l = 0; l < kNumLabels; ++l) {
        auto& idx = by_label[l];
        if (idx.empty()) {
            throw DataError("stratification error: label '" + std::string(kLabelNames[l]) +
                            "' has no samples");
        }
        Rng fork = root.fork(l);
        fork.shuffle(idx);
        SplitCounts counts = split_counts(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const FusionSample& s = samples[idx[i]];
            if (i < counts.train) {
                split.train.push_back(s);
            } else if (i < counts.train + counts.validation) {
                split.validation.push_back(s);
            } else {
                split.test.push_back(s);
            }
        }
    }
    return split;
}

namespace {

struct Flat {
    std::vector<float> x;
    std::vector<std::size_t> labels;
    std::size_t rows = 0;
};

Flat flatten(const std::vector<FusionSample>& samples) {
    Flat f;
    f.rows = samples.size();
    for (const auto& s : samples) {
        f.x.insert(f.x.end(), s.text_logits.begin(), s.text_logits.end());
        f.x.insert(f.x.end(), s.audio_logits.begin(), s.audio_logits.end());
        f.labels.push_back(static_cast<std::size_t>(s.label));
    }
    return f;
}

struct EvalOutcome {
    double loss = 0.0, acc = 0.0;
};

EvalOutcome evaluate_fusion(FusionModel<float>& model, const Flat& f) {
    EvalOutcome out;
    std::vector<float> logits = model.forward(f.x, f.rows);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < f.rows; ++r) {
        out.loss += static_cast<double>(softmax_cross_entropy<float>(
            logits.data() + r * kNumLabels, kNumLabels, f.labels[r], nullptr));
        if (argmax_row(logits.data() + r * kNumLabels, kNumLabels) == f.labels[r]) ++correct;
    }
    out.loss /= static_cast<double>(f.rows);
    out.acc = static_cast<double>(correct) / static_cast<double>(f.rows);
    return out;
}

}  // namespace

FusionTrainResult train_fusion(FusionModel<float>& model, const FusionSplit& split,
                               const FusionTrainParams& p, std::uint64_t seed) {
    if (split.train.empty() || split.validation.empty()) {
        throw DataError("fusion training needs non-empty train and validation splits");
    }
    if (p.batch_size == 0) throw UsageError("batch_size must be positive");

    Flat train = flatten(split.train);
    Flat val = flatten(split.validation);
    const std::size_t n = train.rows;
    auto params = model.params();
    Rng root(seed);

    FusionTrainResult result;
    EvalOutcome initial = evaluate_fusion(model, val);
    result.best_val_loss = initial.loss;
    auto best_snapshot = snapshot_params(params);

    Adam<float> adam;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t epoch = 1; epoch <= p.epochs; ++epoch) {
        Rng shuffle_rng = root.fork(epoch);
        shuffle_rng.shuffle(order);

        double train_loss = 0.0;
        std::size_t correct = 0;
        for (std::size_t at = 0; at < n; at += p.batch_size) {
            std::size_t rows = std::min(p.batch_size, n - at);
            std::vector<float> bx(rows * kFusionInputs);
            std::vector<std::size_t> bl(rows);
            for (std::size_t r = 0; r < rows; ++r) {
                std::size_t src = order[at + r];
                std::copy_n(train.x.data() + src * kFusionInputs, kFusionInputs,
                            bx.data() + r * kFusionInputs);
                bl[r] = train.labels[src];
            }
            model.zero_grad();
            auto out = model.loss_and_grads(bx, rows, bl);
            adam.step(params, p.lr);
            train_loss += out.loss * static_cast<double>(rows);
            for (std::size_t r = 0; r < rows; ++r) {
                if (argmax_row(out.logits.data() + r * kNumLabels, kNumLabels) == bl[r]) {
                    ++correct;
                }
            }
        }

        EvalOutcome v = evaluate_fusion(model, val);
        if (!std::isfinite(v.loss)) {
            throw NumericError("validation loss became non-finite at epoch " +
                               std::to_string(epoch));
        }
        EpochStats stats;
        stats.train_loss = train_loss / static_cast<double>(n);
        stats.train_acc = static_cast<double>(correct) / static_cast<double>(n);
        stats.val_loss = v.loss;
        stats.val_acc = v.acc;
        result.epochs.push_back(stats);

        if (v.loss < result.best_val_loss) {
            result.best_val_loss = v.loss;
            result.best_epoch = epoch;
            best_snapshot = snapshot_params(params);
        }
    }
    restore_params(params, best_snapshot);
    return result;
}

std::vector<FusionPrediction> predict_fusion(FusionModel<float>& model,
                                             const std::vector<FusionSample>& samples) {
    std::vector<FusionPrediction> preds;
    if (samples.empty()) return preds;
    Flat f = flatten(samples);
    std::vector<float> logits = model.forward(f.x, f.rows);
    preds.reserve(samples.size());
    for (std::size_t r = 0; r < samples.size(); ++r) {
        FusionPrediction p;
        p.participant_id = samples[r].participant_id;
        p.chunk_index = samples[r].chunk_index;
        p.label = samples[r].label;
        std::copy_n(logits.data() + r * kNumLabels, kNumLabels, p.logits.begin());
        p.predicted = argmax_row(p.logits.data(), kNumLabels);
        preds.push_back(std::move(p));
    }
    return preds;
}

namespace {
constexpr const char* kFusionKind = "fusion_head";
}

void save_fusion_model(FusionModel<float>& model, const FusionOptions& opts,
                       const std::string& dir) {
    nlohmann::json cfg = {{"probabilities", opts.probabilities},
                          {"recording_level", opts.recording_level}};
    checkpoint_save(dir, kFusionKind, cfg, model.params());
}

std::pair<FusionModel<float>, FusionOptions> load_fusion_model(const std::string& dir) {
    Checkpoint ckpt = checkpoint_load(dir);
    FusionModel<float> model(0);
    checkpoint_restore(ckpt, kFusionKind, model.params());
    FusionOptions opts;
    opts.probabilities = ckpt.config.value("probabilities", false);
    opts.recording_level = ckpt.config.value("recording_level", false);
    return {std::move(model), std::move(opts)};
}

}  // namespace belab
