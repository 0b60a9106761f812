#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "belab/common.hpp"
#include "belab/rng.hpp"

namespace belab {

// One hyperparameter's sampling distribution.
struct ParamSpec {
    enum class Kind { uniform_int, log_uniform, categorical };
    Kind kind = Kind::uniform_int;
    std::int64_t int_lo = 0, int_hi = 0;  // inclusive bounds
    double float_lo = 0.0, float_hi = 0.0;
    std::vector<nlohmann::json> choices;

    nlohmann::json sample(Rng& rng) const;
    static ParamSpec from_json(const nlohmann::json& j);
};

struct SweepSpace {
    std::vector<std::pair<std::string, ParamSpec>> params;  // sorted by name

    nlohmann::json sample(Rng& rng) const;
    static SweepSpace from_json(const nlohmann::json& j);
};

struct RunOutcome {
    bool ok = false;
    double val_ce = std::numeric_limits<double>::infinity();
    double val_acc = 0.0;
    std::string checkpoint;
    std::string error;
};

using TrainerFn = std::function<RunOutcome(const nlohmann::json& config, std::uint64_t seed,
                                           const std::string& run_dir)>;

struct SweepRun {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    nlohmann::json config;
    RunOutcome outcome;
};

struct SweepResult {
    std::vector<SweepRun> runs;
    std::size_t best_index = 0;
};

// Lowest validation cross-entropy wins; ties fall to higher validation
// accuracy, then to the earlier run. Failed runs never win.
std::size_t select_best(const std::vector<SweepRun>& runs);

// Samples n_runs configs, trains each in out_dir/runN, appends one JSON line
// per run to out_dir/runs.jsonl. Throws when every run failed.
SweepResult run_sweep(const SweepSpace& space, const TrainerFn& trainer, std::size_t n_runs,
                      std::uint64_t seed, const std::string& out_dir);

// Replays a runs.jsonl log and reselects the winner from the records alone.
std::size_t reselect_from_log(const std::string& log_path);

}  // namespace belab
