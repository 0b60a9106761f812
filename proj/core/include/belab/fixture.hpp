#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "belab/common.hpp"

namespace belab {

// Deterministic synthetic data shaped like the real inputs: a noisy web
// corpus with planted near-duplicates, one transcript per participant with
// class-specific vocabulary, and well-separated acoustic feature blobs.
struct FixtureConfig {
    std::size_t corpus_lines = 600;  // total, including the planted duplicates
    std::size_t near_duplicates = 50;
    std::array<std::size_t, kNumLabels> participants = {10, 10, 6};
    std::array<std::size_t, kNumLabels> audio_totals = {183, 141, 15};
    std::size_t feature_dim = 16;
    double blob_noise = 0.5;
    std::uint64_t seed = 19;
};

// Originals come first, the mutated copies after them, so keep-first dedup
// retains exactly the originals.
std::vector<std::string> synth_corpus(const FixtureConfig& cfg);

std::string synth_transcript(Label label, std::uint64_t seed);

// Writes corpus.txt, transcripts/*.cha, labels.csv, features.csv,
// transcript_ids.txt and pipeline.json under dir.
void write_fixture(const std::string& dir, const FixtureConfig& cfg = {});

}  // namespace belab
