#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "belab/audio.hpp"
#include "belab/encoder.hpp"
#include "belab/fusion.hpp"

namespace belab {

// Prediction CSV plumbing shared by the pipeline and the CLI.
void write_chunk_preds_csv(const std::string& path, const std::vector<ChunkPrediction>& preds);
std::vector<ChunkPrediction> read_chunk_preds_csv(const std::string& path);
void write_audio_preds_csv(const std::string& path, const std::vector<AudioPrediction>& preds);
std::vector<AudioPrediction> read_audio_preds_csv(const std::string& path);
void write_fusion_preds_csv(const std::string& path, const std::vector<FusionPrediction>& preds);
std::vector<FusionPrediction> read_fusion_preds_csv(const std::string& path);

struct StageStatus {
    std::string name;
    bool skipped = false;
};

struct PipelineReport {
    std::vector<StageStatus> stages;
    std::string out_dir;
};

// Runs clean, tokenizer, pretrain, ingest, finetune, audio, fusion and
// evaluate in order. Each stage records a hash of its configuration and
// input bytes in out_dir/pipeline_state.json and is skipped on rerun while
// the hash still matches and its outputs exist. Stage failures carry the
// stage name and keep their error type.
PipelineReport run_pipeline(const std::string& config_path, const std::string& out_dir,
                            int threads = 1);

}  // namespace belab
