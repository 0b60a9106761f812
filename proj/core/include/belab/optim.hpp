#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "belab/nn.hpp"

namespace belab {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;  // deliberately lower than the common 0.999
    double eps = 1e-8;
};

template <typename T>
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    std::int64_t step_count() const { return step_count_; }
    const AdamConfig& config() const { return cfg_; }

    // One update over all params at the given lr. Moment buffers attach to
    // the param list on first use; the list must stay stable afterwards.
    void step(const std::vector<Param<T>*>& params, double lr) {
        if (lr < 0.0) throw UsageError("learning rate must be non-negative");
        if (m_.empty()) {
            for (const auto* p : params) {
                m_.emplace_back(p->size(), 0.0);
                v_.emplace_back(p->size(), 0.0);
            }
        }
        ++step_count_;
        double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
        double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            Param<T>& p = *params[pi];
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (std::size_t i = 0; i < p.size(); ++i) {
                auto g = static_cast<double>(p.g[i]);
                if (!std::isfinite(g)) {
                    throw NumericError("non-finite gradient in parameter '" + p.name + "'");
                }
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
                double mhat = m[i] / bc1;
                double vhat = v[i] / bc2;
                p.v[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

    void reset() {
        m_.clear();
        v_.clear();
        step_count_ = 0;
    }

private:
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;  // 64-bit moments for both T
    std::int64_t step_count_ = 0;
};

struct EpochStats {
    double train_loss = 0.0, train_acc = 0.0;
    double val_loss = 0.0, val_acc = 0.0;
};

struct LrSchedule {
    double peak_lr = 0.0;
    std::int64_t warmup_steps = 0;
    std::int64_t total_steps = 0;
};

// Linear 0 -> peak over warmup_steps, then linear peak -> 0 at total_steps.
double lr_at(const LrSchedule& s, std::int64_t step);

struct LrRangeConfig {
    double improve_frac = 0.05;   // lower bound: first lr beating initial loss by this
    double diverge_factor = 4.0;  // upper bound: first lr exceeding factor * best loss
    bool arithmetic_midpoint = false;
};

struct LrRangeResult {
    double lower = 0.0, upper = 0.0, default_lr = 0.0;
    double initial_loss = 0.0;
    std::vector<double> losses;  // one per grid point
};

// Runs one epoch per grid point on a continuously trained model. run_epoch
// trains at the given lr and returns the epoch's mean loss; initial_loss is
// measured before any update. Throws when no lr ever improves on it.
LrRangeResult lr_range_test(const std::function<double(double)>& run_epoch, double initial_loss,
                            const std::vector<double>& lr_grid, const LrRangeConfig& cfg = {});

std::vector<double> geometric_grid(double lo, double hi, std::size_t points);

// Central-difference check: relative error of every analytic gradient
// against (f(x+h) - f(x-h)) / 2h. Call with grads already populated.
struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string worst_param;
    bool passed = true;
};

inline GradCheckResult gradient_check(const std::vector<Param<double>*>& params,
                                      const std::function<double()>& loss_fn, double h = 1e-5,
                                      double tolerance = 1e-4, double abs_floor = 1e-8) {
    GradCheckResult result;
    for (auto* p : params) {
        for (std::size_t i = 0; i < p->size(); ++i) {
            double keep = p->v[i];
            p->v[i] = keep + h;
            double up = loss_fn();
            p->v[i] = keep - h;
            double down = loss_fn();
            p->v[i] = keep;
            double numeric = (up - down) / (2.0 * h);
            double analytic = p->g[i];
            double denom = std::max(std::abs(analytic), std::abs(numeric));
            double err = std::abs(analytic - numeric);
            double rel = denom > 0.0 ? err / denom : 0.0;
            if (rel > result.max_rel_err) {
                result.max_rel_err = rel;
                result.worst_param = p->name + "[" + std::to_string(i) + "]";
            }
            if (err > abs_floor && rel > tolerance) result.passed = false;
        }
    }
    return result;
}

// Deep-copied values for best-snapshot tracking and range-test rewind.
template <typename T>
std::vector<std::vector<T>> snapshot_params(const std::vector<Param<T>*>& params) {
    std::vector<std::vector<T>> snap;
    snap.reserve(params.size());
    for (const auto* p : params) snap.push_back(p->v);
    return snap;
}

template <typename T>
void restore_params(const std::vector<Param<T>*>& params,
                    const std::vector<std::vector<T>>& snap) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->v = snap[i];
}

}  // namespace belab
