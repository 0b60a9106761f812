#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "belab/bpe.hpp"
#include "belab/common.hpp"

namespace belab {

struct LabeledChunk {
    std::string participant_id;
    Label label = Label::control;
    std::vector<std::int32_t> ids;  // exactly chunk_size, no specials
    std::uint32_t chunk_index = 0;
};

// Consecutive whole windows; the short tail is dropped unless pad_trailing,
// in which case it is right-padded with pad_id. chunk_size must leave room
// for the bos/eos wrapping applied at model input.
std::vector<LabeledChunk> chunk_tokens(const std::vector<std::int32_t>& ids,
                                       std::size_t chunk_size, const std::string& participant_id,
                                       Label label, bool pad_trailing = false,
                                       std::int32_t pad_id = kPadId);

struct SplitCounts {
    std::size_t train = 0, validation = 0, test = 0;
};

// train = floor(0.8n), validation = round-half-to-even(0.1n), test = rest.
SplitCounts split_counts(std::size_t n);

struct SplitDataset {
    std::vector<LabeledChunk> train, validation, test;
    std::size_t chunk_size = 0;
    std::array<SplitCounts, kNumLabels> per_label{};
};

// Shuffles within each label (rng forked per label off seed) and cuts at the
// split_counts boundaries. group_by_participant keeps each participant's
// chunks in one split, filling targets greedily; exact counts then become
// best-effort.
SplitDataset stratified_split(const std::vector<LabeledChunk>& chunks, std::uint64_t seed,
                              bool group_by_participant = false);

void write_chunks_jsonl(const std::string& path, const std::vector<LabeledChunk>& chunks);
std::vector<LabeledChunk> read_chunks_jsonl(const std::string& path);

// Manifest records chunk identifiers "participant:index" per split.
void write_split_manifest(const std::string& path, const SplitDataset& split,
                          std::uint64_t seed);
SplitDataset apply_split_manifest(const std::string& path,
                                  const std::vector<LabeledChunk>& chunks);

std::unordered_map<std::string, Label> read_labels_csv(const std::string& path);

// Parses every .cha file in transcripts_dir (sorted by filename, stem is the
// participant id), flattens, encodes, strips specials, chunks.
std::vector<LabeledChunk> ingest_transcripts(const std::string& transcripts_dir,
                                             const std::unordered_map<std::string, Label>& labels,
                                             const TokenizerModel& tokenizer,
                                             std::size_t chunk_size,
                                             const std::vector<std::string>& speakers = {},
                                             bool pad_trailing = false);

}  // namespace belab
