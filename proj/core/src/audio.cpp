#include "belab/audio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include "belab/checkpoint.hpp"

namespace belab {

namespace {

constexpr double kInitStd = 0.02;

std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            cells.push_back(line.substr(start));
            return cells;
        }
        cells.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

float parse_feature_cell(const std::string& cell, std::size_t row) {
    double value = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last || !std::isfinite(value)) {
        throw DataError("features row " + std::to_string(row) + ": non-numeric value '" + cell +
                        "'");
    }
    return static_cast<float>(value);
}

std::size_t argmax_row(const float* row, std::size_t n) {
    return static_cast<std::size_t>(std::max_element(row, row + n) - row);
}

}  // namespace

std::vector<FeatureVector> parse_features(const std::string& csv_text) {
    std::istringstream in(csv_text);
    std::string line;
    if (!std::getline(in, line)) throw DataError("features csv is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();

    std::vector<std::string> header = split_csv_row(line);
    if (header.size() < 3 || header[0] != "participant_id" || header[1] != "label") {
        throw DataError("features header must read participant_id,label,f_1..f_D");
    }
    const std::size_t dim = header.size() - 2;

    std::vector<FeatureVector> out;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        ++row;
        std::vector<std::string> cells = split_csv_row(line);
        if (cells.size() != dim + 2) {
            throw DataError("features row " + std::to_string(row) + " has " +
                            std::to_string(cells.size()) + " columns, expected " +
                            std::to_string(dim + 2));
        }
        FeatureVector fv;
        fv.participant_id = cells[0];
        auto label = label_from_string(cells[1]);
        if (!label) {
            throw DataError("features row " + std::to_string(row) + ": unknown label '" +
                            cells[1] + "'");
        }
        fv.label = *label;
        fv.values.reserve(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            fv.values.push_back(parse_feature_cell(cells[i + 2], row));
        }
        out.push_back(std::move(fv));
    }
    return out;
}

std::vector<FeatureVector> load_features(const std::string& path) {
    return parse_features(read_text_file(path));
}

NormStats compute_norm_stats(const std::vector<FeatureVector>& train) {
    if (train.empty()) throw DataError("normalization needs a non-empty train split");
    const std::size_t dim = train[0].values.size();
    NormStats stats;
    stats.mean.assign(dim, 0.0f);
    stats.stddev.assign(dim, 1.0f);
    std::vector<double> mean(dim, 0.0), var(dim, 0.0);
    for (const auto& fv : train) {
        if (fv.values.size() != dim) throw DataError("feature vectors disagree on dimension");
        for (std::size_t j = 0; j < dim; ++j) mean[j] += fv.values[j];
    }
    for (std::size_t j = 0; j < dim; ++j) mean[j] /= static_cast<double>(train.size());
    for (const auto& fv : train) {
        for (std::size_t j = 0; j < dim; ++j) {
            double d = fv.values[j] - mean[j];
            var[j] += d * d;
        }
    }
    for (std::size_t j = 0; j < dim; ++j) {
        double sd = std::sqrt(var[j] / static_cast<double>(train.size()));
        stats.mean[j] = static_cast<float>(mean[j]);
        stats.stddev[j] = sd > 0.0 ? static_cast<float>(sd) : 1.0f;
    }
    return stats;
}

void apply_norm(std::vector<FeatureVector>& records, const NormStats& stats) {
    const std::size_t dim = stats.mean.size();
    for (auto& fv : records) {
        if (fv.values.size() != dim) throw DataError("feature vectors disagree on dimension");
        for (std::size_t j = 0; j < dim; ++j) {
            fv.values[j] = (fv.values[j] - stats.mean[j]) / stats.stddev[j];
        }
    }
}

AudioSplit split_audio(const std::vector<FeatureVector>& all,
                       const std::set<std::string>& transcript_ids, std::uint64_t seed) {
    AudioSplit split;
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < all.size(); ++i) {
        if (transcript_ids.count(all[i].participant_id)) {
            split.test.push_back(all[i]);
        } else {
            pool.push_back(i);
        }
    }
    if (pool.empty()) throw DataError("no recordings left to train on once transcribed ones are held out");

    std::array<std::vector<std::size_t>, kNumLabels> by_label;
    for (std::size_t i : pool) by_label[static_cast<std::size_t>(all[i].label)].push_back(i);
    std::size_t classes = 0;
    for (const auto& v : by_label) classes += v.empty() ? 0 : 1;
    if (classes < 2) {
        throw DataError("stratification error: training pool needs at least two classes");
    }

    Rng root(seed);
    std::vector<std::size_t> train_idx, val_idx;
    for (std::size_t l = 0; l < kNumLabels; ++l) {
        auto& idx = by_label[l];
        if (idx.empty()) continue;
        Rng fork = root.fork(l);
        fork.shuffle(idx);
        // a tenth per class goes to validation, but never the whole class
        std::size_t val_n = idx.size() <= 1
                                ? 0
                                : std::min(idx.size() - 1,
                                           std::max<std::size_t>(1, idx.size() / 10));
        val_idx.insert(val_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(val_n));
        train_idx.insert(train_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(val_n),
                         idx.end());
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(val_idx.begin(), val_idx.end());
    for (std::size_t i : train_idx) split.train.push_back(all[i]);
    for (std::size_t i : val_idx) split.validation.push_back(all[i]);

    split.stats = compute_norm_stats(split.train);
    apply_norm(split.train, split.stats);
    apply_norm(split.validation, split.stats);
    apply_norm(split.test, split.stats);
    return split;
}

void AudioMlpConfig::validate() const {
    if (input_dim == 0 || hidden1 == 0 || hidden2 == 0) {
        throw UsageError("mlp dimensions must be positive");
    }
    if (num_labels < 2) throw UsageError("num_labels must be at least 2");
    if (dropout < 0.0 || dropout >= 1.0) throw UsageError("dropout must lie in [0,1)");
}

nlohmann::json AudioMlpConfig::to_json() const {
    return {{"input_dim", input_dim}, {"hidden1", hidden1},     {"hidden2", hidden2},
            {"num_labels", num_labels}, {"dropout", dropout}};
}

AudioMlpConfig AudioMlpConfig::from_json(const nlohmann::json& j) {
    AudioMlpConfig cfg;
    try {
        cfg.input_dim = j.value("input_dim", cfg.input_dim);
        cfg.hidden1 = j.value("hidden1", cfg.hidden1);
        cfg.hidden2 = j.value("hidden2", cfg.hidden2);
        cfg.num_labels = j.value("num_labels", cfg.num_labels);
        cfg.dropout = j.value("dropout", cfg.dropout);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad mlp config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

template <typename T>
AudioMlp<T>::AudioMlp(AudioMlpConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    w1_ = Param<T>("l1.w", {cfg_.input_dim, cfg_.hidden1});
    w1_.init_normal(rng, kInitStd);
    b1_ = Param<T>("l1.b", {cfg_.hidden1});
    w2_ = Param<T>("l2.w", {cfg_.hidden1, cfg_.hidden2});
    w2_.init_normal(rng, kInitStd);
    b2_ = Param<T>("l2.b", {cfg_.hidden2});
    w3_ = Param<T>("l3.w", {cfg_.hidden2, cfg_.num_labels});
    w3_.init_normal(rng, kInitStd);
    b3_ = Param<T>("l3.b", {cfg_.num_labels});
}

template <typename T>
std::vector<Param<T>*> AudioMlp<T>::params() {
    return {&w1_, &b1_, &w2_, &b2_, &w3_, &b3_};
}

template <typename T>
void AudioMlp<T>::zero_grad() {
    for (auto* p : params()) p->zero_grad();
}

template <typename T>
Param<T>& AudioMlp<T>::param(const std::string& name) {
    for (auto* p : params()) {
        if (p->name == name) return *p;
    }
    throw UsageError("no parameter named '" + name + "'");
}

template <typename T>
std::vector<T> AudioMlp<T>::forward(const std::vector<T>& x, std::size_t rows, bool training,
                                    Rng* dropout_rng) {
    const std::size_t D = cfg_.input_dim, H1 = cfg_.hidden1, H2 = cfg_.hidden2;
    const std::size_t L = cfg_.num_labels;
    if (rows == 0) throw UsageError("empty batch");
    if (x.size() != rows * D) {
        throw DataError("feature dimension mismatch: expected " + std::to_string(D) +
                        " values per row");
    }
    bool use_dropout = training && cfg_.dropout > 0.0;
    if (use_dropout && !dropout_rng) throw UsageError("training forward needs an rng for dropout");

    cache_ = Cache{};
    cache_.x = x;
    cache_.training = training;
    cache_.rows = rows;

    cache_.h1_pre.resize(rows * H1);
    affine_forward(x.data(), w1_, b1_, cache_.h1_pre.data(), rows, D, H1);
    cache_.h1.resize(rows * H1);
    for (std::size_t i = 0; i < cache_.h1.size(); ++i) {
        cache_.h1[i] = cache_.h1_pre[i] > T(0) ? cache_.h1_pre[i] : T(0);
    }
    if (use_dropout) {
        dropout_forward(cache_.h1.data(), cache_.h1.size(), cfg_.dropout, *dropout_rng,
                        cache_.drop1);
    }

    cache_.h2_pre.resize(rows * H2);
    affine_forward(cache_.h1.data(), w2_, b2_, cache_.h2_pre.data(), rows, H1, H2);
    cache_.h2.resize(rows * H2);
    for (std::size_t i = 0; i < cache_.h2.size(); ++i) {
        cache_.h2[i] = cache_.h2_pre[i] > T(0) ? cache_.h2_pre[i] : T(0);
    }
    if (use_dropout) {
        dropout_forward(cache_.h2.data(), cache_.h2.size(), cfg_.dropout, *dropout_rng,
                        cache_.drop2);
    }

    std::vector<T> logits(rows * L);
    affine_forward(cache_.h2.data(), w3_, b3_, logits.data(), rows, H2, L);
    return logits;
}

template <typename T>
double AudioMlp<T>::loss(const std::vector<T>& x, std::size_t rows,
                         const std::vector<std::size_t>& labels) {
    std::vector<T> logits = forward(x, rows, false, nullptr);
    const std::size_t L = cfg_.num_labels;
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        total += static_cast<double>(softmax_cross_entropy<T>(logits.data() + r * L, L, labels[r],
                                                              static_cast<T*>(nullptr)));
    }
    return total / static_cast<double>(rows);
}

template <typename T>
typename AudioMlp<T>::Outcome AudioMlp<T>::loss_and_grads(const std::vector<T>& x,
                                                          std::size_t rows,
                                                          const std::vector<std::size_t>& labels,
                                                          bool training, Rng* dropout_rng) {
    if (labels.size() != rows) throw UsageError("labels size must match rows");
    std::vector<T> logits = forward(x, rows, training, dropout_rng);
    const std::size_t D = cfg_.input_dim, H1 = cfg_.hidden1, H2 = cfg_.hidden2;
    const std::size_t L = cfg_.num_labels;
    bool use_dropout = training && cfg_.dropout > 0.0;

    std::vector<T> dlogits(rows * L, T(0));
    double total = 0.0;
    T weight = T(1) / static_cast<T>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        total += static_cast<double>(softmax_cross_entropy(logits.data() + r * L, L, labels[r],
                                                           dlogits.data() + r * L, weight));
    }
    total /= static_cast<double>(rows);

    std::vector<T> dh2(rows * H2);
    affine_backward(cache_.h2.data(), dlogits.data(), w3_, b3_, dh2.data(), rows, H2, L);
    if (use_dropout) dropout_backward(dh2.data(), dh2.size(), cfg_.dropout, cache_.drop2);
    for (std::size_t i = 0; i < dh2.size(); ++i) {
        if (cache_.h2_pre[i] <= T(0)) dh2[i] = T(0);
    }

    std::vector<T> dh1(rows * H1);
    affine_backward(cache_.h1.data(), dh2.data(), w2_, b2_, dh1.data(), rows, H1, H2);
    if (use_dropout) dropout_backward(dh1.data(), dh1.size(), cfg_.dropout, cache_.drop1);
    for (std::size_t i = 0; i < dh1.size(); ++i) {
        if (cache_.h1_pre[i] <= T(0)) dh1[i] = T(0);
    }

    affine_backward(cache_.x.data(), dh1.data(), w1_, b1_, static_cast<T*>(nullptr), rows, D, H1);
    return {total, std::move(logits)};
}

template class AudioMlp<float>;
template class AudioMlp<double>;

namespace {

struct Flat {
    std::vector<float> x;
    std::vector<std::size_t> labels;
    std::size_t rows = 0;
};

Flat flatten(const std::vector<FeatureVector>& records) {
    Flat f;
    f.rows = records.size();
    if (records.empty()) return f;
    const std::size_t dim = records[0].values.size();
    f.x.reserve(f.rows * dim);
    for (const auto& fv : records) {
        f.x.insert(f.x.end(), fv.values.begin(), fv.values.end());
        f.labels.push_back(static_cast<std::size_t>(fv.label));
    }
    return f;
}

struct EvalOutcome {
    double loss = 0.0, acc = 0.0;
};

EvalOutcome evaluate_audio(AudioMlp<float>& model, const Flat& f) {
    EvalOutcome out;
    std::vector<float> logits = model.forward(f.x, f.rows, false, nullptr);
    const std::size_t L = model.config().num_labels;
    std::size_t correct = 0;
    for (std::size_t r = 0; r < f.rows; ++r) {
        out.loss += static_cast<double>(
            softmax_cross_entropy<float>(logits.data() + r * L, L, f.labels[r], nullptr));
        if (argmax_row(logits.data() + r * L, L) == f.labels[r]) ++correct;
    }
    out.loss /= static_cast<double>(f.rows);
    out.acc = static_cast<double>(correct) / static_cast<double>(f.rows);
    return out;
}

}  // namespace

AudioTrainResult train_audio(AudioMlp<float>& model, const AudioSplit& data,
                             const AudioTrainParams& p, std::uint64_t seed) {
    if (data.train.empty() || data.validation.empty()) {
        throw DataError("audio training needs non-empty train and validation splits");
    }
    if (p.batch_size == 0) throw UsageError("batch_size must be positive");
    if (data.train[0].values.size() != model.config().input_dim) {
        throw DataError("feature dimension mismatch: expected " +
                        std::to_string(model.config().input_dim) + " values per row");
    }

    Flat train = flatten(data.train);
    Flat val = flatten(data.validation);
    const std::size_t n = train.rows, D = model.config().input_dim;
    const std::size_t L = model.config().num_labels;
    auto params = model.params();
    Rng root(seed);

    AudioTrainResult result;
    double initial_loss = model.loss(train.x, n, train.labels);

    // sweep the lr grid on one continuously trained throwaway copy
    auto init_snapshot = snapshot_params(params);
    {
        Adam<float> probe_adam;
        Rng probe_drop = root.fork(1);
        auto run_epoch = [&](double lr) -> double {
            double sum = 0.0;
            try {
                for (std::size_t at = 0; at < n; at += p.batch_size) {
                    std::size_t rows = std::min(p.batch_size, n - at);
                    std::vector<float> bx(train.x.begin() + static_cast<std::ptrdiff_t>(at * D),
                                          train.x.begin() +
                                              static_cast<std::ptrdiff_t>((at + rows) * D));
                    std::vector<std::size_t> bl(train.labels.begin() +
                                                    static_cast<std::ptrdiff_t>(at),
                                                train.labels.begin() +
                                                    static_cast<std::ptrdiff_t>(at + rows));
                    model.zero_grad();
                    auto out = model.loss_and_grads(bx, rows, bl, true, &probe_drop);
                    probe_adam.step(params, lr);
                    sum += out.loss * static_cast<double>(rows);
                }
            } catch (const NumericError&) {
                return std::numeric_limits<double>::infinity();
            }
            return sum / static_cast<double>(n);
        };
        result.lr = lr_range_test(run_epoch, initial_loss,
                                  geometric_grid(p.range_lo, p.range_hi, p.range_points),
                                  p.range);
    }
    restore_params(params, init_snapshot);

    EvalOutcome initial_val = evaluate_audio(model, val);
    result.best_val_loss = initial_val.loss;
    auto best_snapshot = snapshot_params(params);

    Adam<float> adam;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t epoch = 1; epoch <= p.epochs; ++epoch) {
        Rng shuffle_rng = root.fork(0x100 + epoch);
        shuffle_rng.shuffle(order);
        Rng drop_rng = root.fork(0x10000 + epoch);

        double train_loss = 0.0;
        std::size_t correct = 0;
        for (std::size_t at = 0; at < n; at += p.batch_size) {
            std::size_t rows = std::min(p.batch_size, n - at);
            std::vector<float> bx(rows * D);
            std::vector<std::size_t> bl(rows);
            for (std::size_t r = 0; r < rows; ++r) {
                std::size_t src = order[at + r];
                std::copy_n(train.x.data() + src * D, D, bx.data() + r * D);
                bl[r] = train.labels[src];
            }
            model.zero_grad();
            auto out = model.loss_and_grads(bx, rows, bl, true, &drop_rng);
            adam.step(params, result.lr.default_lr);
            train_loss += out.loss * static_cast<double>(rows);
            for (std::size_t r = 0; r < rows; ++r) {
                if (argmax_row(out.logits.data() + r * L, L) == bl[r]) ++correct;
            }
        }

        EvalOutcome v = evaluate_audio(model, val);
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

std::vector<AudioPrediction> predict_audio(AudioMlp<float>& model,
                                           const std::vector<FeatureVector>& raw,
                                           const NormStats& stats) {
    std::vector<AudioPrediction> preds;
    if (raw.empty()) return preds;
    if (stats.mean.size() != model.config().input_dim) {
        throw DataError("normalization stats disagree with the model's feature dimension");
    }
    std::vector<FeatureVector> records = raw;
    apply_norm(records, stats);
    Flat f = flatten(records);
    std::vector<float> logits = model.forward(f.x, f.rows, false, nullptr);
    const std::size_t L = model.config().num_labels;
    preds.reserve(raw.size());
    for (std::size_t r = 0; r < f.rows; ++r) {
        AudioPrediction p;
        p.participant_id = records[r].participant_id;
        p.label = records[r].label;
        p.logits.assign(logits.begin() + static_cast<std::ptrdiff_t>(r * L),
                        logits.begin() + static_cast<std::ptrdiff_t>((r + 1) * L));
        p.predicted = argmax_row(p.logits.data(), L);
        preds.push_back(std::move(p));
    }
    return preds;
}

namespace {
constexpr const char* kAudioKind = "audio_mlp";
}

void save_audio_model(AudioMlp<float>& model, const NormStats& stats, const std::string& dir) {
    Param<float> mean_p("norm.mean", {stats.mean.size()});
    mean_p.v = stats.mean;
    Param<float> std_p("norm.std", {stats.stddev.size()});
    std_p.v = stats.stddev;
    std::vector<Param<float>*> arrays = model.params();
    arrays.push_back(&mean_p);
    arrays.push_back(&std_p);
    checkpoint_save(dir, kAudioKind, model.config().to_json(), arrays);
}

std::pair<AudioMlp<float>, NormStats> load_audio_model(const std::string& dir) {
    Checkpoint ckpt = checkpoint_load(dir);
    if (ckpt.model_kind != kAudioKind) {
        throw DataError("checkpoint holds a '" + ckpt.model_kind + "' model, expected '" +
                        kAudioKind + "'");
    }
    AudioMlpConfig cfg = AudioMlpConfig::from_json(ckpt.config);
    AudioMlp<float> model(cfg, 0);

    auto find = [&](const std::string& name) -> const std::vector<float>& {
        for (std::size_t i = 0; i < ckpt.arrays.size(); ++i) {
            if (ckpt.arrays[i].name == name) return ckpt.values[i];
        }
        throw DataError("checkpoint is missing array '" + name + "'");
    };
    for (auto* p : model.params()) {
        const auto& v = find(p->name);
        if (v.size() != p->size()) {
            throw DataError("checkpoint array '" + p->name + "' has the wrong size");
        }
        p->v = v;
    }
    NormStats stats;
    stats.mean = find("norm.mean");
    stats.stddev = find("norm.std");
    if (stats.mean.size() != cfg.input_dim || stats.stddev.size() != cfg.input_dim) {
        throw DataError("normalization stats disagree with the model's feature dimension");
    }
    return {std::move(model), std::move(stats)};
}

}  // namespace belab
