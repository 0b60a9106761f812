#include "belab/optim.hpp"

#include <sstream>

namespace belab {

double lr_at(const LrSchedule& s, std::int64_t step) {
    if (s.warmup_steps <= 0 || s.warmup_steps > s.total_steps) {
        throw UsageError("schedule needs 0 < warmup_steps <= total_steps");
    }
    if (step < 0 || step > s.total_steps) {
        throw UsageError("schedule exhausted: step " + std::to_string(step) + " beyond total " +
                         std::to_string(s.total_steps));
    }
    if (step <= s.warmup_steps) {
        return s.peak_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    }
    return s.peak_lr * static_cast<double>(s.total_steps - step) /
           static_cast<double>(s.total_steps - s.warmup_steps);
}

LrRangeResult lr_range_test(const std::function<double(double)>& run_epoch, double initial_loss,
                            const std::vector<double>& lr_grid, const LrRangeConfig& cfg) {
    if (lr_grid.empty()) throw UsageError("lr grid must be non-empty");
    for (std::size_t i = 1; i < lr_grid.size(); ++i) {
        if (lr_grid[i] <= lr_grid[i - 1]) throw UsageError("lr grid must be increasing");
    }

    LrRangeResult r;
    r.initial_loss = initial_loss;
    double best = initial_loss;
    bool have_lower = false, have_upper = false;
    for (double lr : lr_grid) {
        double loss = run_epoch(lr);
        r.losses.push_back(loss);
        if (!have_lower && std::isfinite(loss) &&
            loss < initial_loss * (1.0 - cfg.improve_frac)) {
            r.lower = lr;
            have_lower = true;
        }
        if (!have_upper && (!std::isfinite(loss) || loss > cfg.diverge_factor * best)) {
            r.upper = lr;
            have_upper = true;
            break;  // diverged; later grid points only get worse
        }
        if (std::isfinite(loss)) best = std::min(best, loss);
    }
    if (!have_lower) {
        std::ostringstream trace;
        trace << "lr range test failed: no lr improved initial loss " << initial_loss
              << "; losses:";
        for (std::size_t i = 0; i < r.losses.size(); ++i) {
            trace << " " << lr_grid[i] << "->" << r.losses[i];
        }
        throw NumericError(trace.str());
    }
    if (!have_upper) r.upper = lr_grid.back();
    r.default_lr =
        cfg.arithmetic_midpoint ? (r.lower + r.upper) / 2.0 : std::sqrt(r.lower * r.upper);
    return r;
}

std::vector<double> geometric_grid(double lo, double hi, std::size_t points) {
    if (!(lo > 0.0) || !(hi > lo) || points < 2) {
        if (points == 1 && lo == hi) return {lo};
        throw UsageError("geometric grid needs 0 < lo < hi and >= 2 points");
    }
    std::vector<double> grid(points);
    double ratio = std::pow(hi / lo, 1.0 / static_cast<double>(points - 1));
    double x = lo;
    for (std::size_t i = 0; i < points; ++i) {
        grid[i] = x;
        x *= ratio;
    }
    grid.back() = hi;  // kill accumulated rounding
    return grid;
}

}  // namespace belab
