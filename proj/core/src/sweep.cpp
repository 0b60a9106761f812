#include "belab/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace belab {

nlohmann::json ParamSpec::sample(Rng& rng) const {
    switch (kind) {
        case Kind::uniform_int: {
            auto span = static_cast<std::uint64_t>(int_hi - int_lo + 1);
            return int_lo + static_cast<std::int64_t>(rng.below(span));
        }
        case Kind::log_uniform: {
            double lo = std::log(float_lo), hi = std::log(float_hi);
            return std::exp(lo + (hi - lo) * rng.uniform01());
        }
        case Kind::categorical:
            return choices[rng.below(choices.size())];
    }
    throw UsageError("unreachable sweep kind");
}

ParamSpec ParamSpec::from_json(const nlohmann::json& j) {
    ParamSpec spec;
    std::string type = j.value("type", "");
    try {
        if (type == "uniform_int") {
            spec.kind = Kind::uniform_int;
            spec.int_lo = j.at("lo").get<std::int64_t>();
            spec.int_hi = j.at("hi").get<std::int64_t>();
            if (spec.int_lo > spec.int_hi) throw DataError("uniform_int range is empty");
        } else if (type == "log_uniform") {
            spec.kind = Kind::log_uniform;
            spec.float_lo = j.at("lo").get<double>();
            spec.float_hi = j.at("hi").get<double>();
            if (!(spec.float_lo > 0.0) || spec.float_hi < spec.float_lo) {
                throw DataError("log_uniform needs 0 < lo <= hi");
            }
        } else if (type == "categorical") {
            spec.kind = Kind::categorical;
            spec.choices = j.at("choices").get<std::vector<nlohmann::json>>();
            if (spec.choices.empty()) throw DataError("categorical choices are empty");
        } else {
            throw DataError("unknown sweep distribution '" + type + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad sweep spec: ") + e.what());
    }
    return spec;
}

nlohmann::json SweepSpace::sample(Rng& rng) const {
    nlohmann::json config = nlohmann::json::object();
    for (const auto& [name, spec] : params) config[name] = spec.sample(rng);
    return config;
}

SweepSpace SweepSpace::from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.empty()) throw DataError("sweep space must be a non-empty object");
    SweepSpace space;
    for (auto it = j.begin(); it != j.end(); ++it) {
        space.params.emplace_back(it.key(), ParamSpec::from_json(it.value()));
    }
    std::sort(space.params.begin(), space.params.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return space;
}

std::size_t select_best(const std::vector<SweepRun>& runs) {
    std::size_t best = runs.size();
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const RunOutcome& o = runs[i].outcome;
        if (!o.ok) continue;
        if (best == runs.size()) {
            best = i;
            continue;
        }
        const RunOutcome& b = runs[best].outcome;
        if (o.val_ce < b.val_ce || (o.val_ce == b.val_ce && o.val_acc > b.val_acc)) best = i;
    }
    if (best == runs.size()) {
        throw NumericError("all " + std::to_string(runs.size()) + " sweep runs failed");
    }
    return best;
}

namespace {

nlohmann::json run_to_json(const SweepRun& run) {
    nlohmann::json j = {{"run", run.index},    {"seed", run.seed},
                        {"config", run.config}, {"ok", run.outcome.ok}};
    if (run.outcome.ok) {
        j["val_ce"] = run.outcome.val_ce;
        j["val_acc"] = run.outcome.val_acc;
        j["checkpoint"] = run.outcome.checkpoint;
    } else {
        j["error"] = run.outcome.error;
    }
    return j;
}

SweepRun run_from_json(const nlohmann::json& j) {
    SweepRun run;
    run.index = j.at("run").get<std::size_t>();
    run.seed = j.at("seed").get<std::uint64_t>();
    run.config = j.at("config");
    run.outcome.ok = j.at("ok").get<bool>();
    if (run.outcome.ok) {
        run.outcome.val_ce = j.at("val_ce").get<double>();
        run.outcome.val_acc = j.at("val_acc").get<double>();
        run.outcome.checkpoint = j.value("checkpoint", "");
    } else {
        run.outcome.error = j.value("error", "");
    }
    return run;
}

}  // namespace

SweepResult run_sweep(const SweepSpace& space, const TrainerFn& trainer, std::size_t n_runs,
                      std::uint64_t seed, const std::string& out_dir) {
    if (n_runs == 0) throw UsageError("a sweep needs at least one run");
    std::filesystem::create_directories(out_dir);
    std::ofstream log(out_dir + "/runs.jsonl", std::ios::trunc);
    if (!log) throw DataError("cannot write " + out_dir + "/runs.jsonl");

    Rng root(seed);
    SweepResult result;
    for (std::size_t i = 0; i < n_runs; ++i) {
        SweepRun run;
        run.index = i;
        Rng sampler = root.fork(i);
        run.config = space.sample(sampler);
        run.seed = root.fork(0x10000 + i).next();
        std::string run_dir = out_dir + "/run" + std::to_string(i);
        try {
            run.outcome = trainer(run.config, run.seed, run_dir);
            if (run.outcome.ok && !std::isfinite(run.outcome.val_ce)) {
                run.outcome = {};
                run.outcome.error = "non-finite validation loss";
            }
        } catch (const std::exception& e) {
            run.outcome = {};
            run.outcome.error = e.what();
        }
        log << run_to_json(run).dump() << "\n";
        log.flush();
        result.runs.push_back(std::move(run));
    }
    result.best_index = select_best(result.runs);
    return result;
}

std::size_t reselect_from_log(const std::string& log_path) {
    std::string text = read_text_file(log_path);
    std::istringstream in(text);
    std::string line;
    std::vector<SweepRun> runs;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            runs.push_back(run_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("bad sweep log line: " + std::string(e.what()));
        }
    }
    if (runs.empty()) throw DataError("sweep log is empty");
    return select_best(runs);
}

}  // namespace belab
