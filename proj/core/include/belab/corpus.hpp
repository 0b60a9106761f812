#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "belab/minhash.hpp"

namespace belab {

struct CorpusLine {
    std::string text;
    std::uint64_t line_index = 0;
    std::uint32_t word_count = 0;
};

enum class DropReason { none, nontextual, length };

struct CleanConfig {
    std::uint32_t max_words = 2000;      // lines longer than this are dropped
    std::uint32_t min_words = 3;         // after token filtering
    double min_alpha_ratio = 0.5;        // alphabetic share of non-space bytes
};

struct LineVerdict {
    DropReason drop = DropReason::none;
    CorpusLine line;
    bool kept() const { return drop == DropReason::none; }
};

// Trims and collapses whitespace, strips URL-like tokens and tokens with no
// alphabetic character, then applies the length / minimum-word / alphabetic-
// ratio filters. Throws DataError with the byte offset on invalid UTF-8.
LineVerdict clean_line(std::string_view raw, std::uint64_t line_index,
                       const CleanConfig& cfg = {});

struct CleanStats {
    std::uint64_t input_lines = 0;
    std::uint64_t kept = 0;
    std::uint64_t dropped_nontextual = 0;
    std::uint64_t dropped_length = 0;
    std::uint64_t dropped_duplicate = 0;
};

struct CleanCorpus {
    std::vector<CorpusLine> lines;  // source order
    CleanStats stats;
};

struct DedupConfig {
    double threshold = 0.9;  // strictly-greater comparison
    MinHashConfig minhash;   // num_hashes, shingle_size
    std::uint32_t bands = 32;
};

// Keep-first near-duplicate removal. LSH proposes candidate pairs among
// already-kept lines; a line is dropped only when exact Jaccard against a
// kept candidate exceeds the threshold.
CleanCorpus fuzzy_dedup(std::vector<CorpusLine> lines, const DedupConfig& cfg,
                        CleanStats stats = {});

// Full cleaning pass: clean_line over every raw line (sharded across
// threads, order preserved), then fuzzy_dedup. Output is identical to a
// sequential run regardless of thread count.
CleanCorpus clean_corpus(const std::vector<std::string>& raw_lines, const CleanConfig& clean_cfg,
                         const DedupConfig& dedup_cfg, int threads = 1);

// Seeded random holdout. validation receives round(fraction*n) lines sampled
// without replacement; both halves keep source order.
std::pair<CleanCorpus, CleanCorpus> holdout_split(const CleanCorpus& corpus, double fraction,
                                                  std::uint64_t seed);

std::vector<std::string> read_lines(const std::string& path);
void write_corpus(const std::string& path, const CleanCorpus& corpus);
std::string stats_json(const CleanStats& stats);

}  // namespace belab
