#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "belab/common.hpp"

namespace belab {

// Character shingles of a UTF-8 string. Strings shorter than the shingle
// size yield a single shingle equal to the whole string.
std::vector<std::string_view> char_shingles(std::string_view text, std::uint32_t shingle_size);

// Exact Jaccard similarity over character shingle sets. Symmetric oracle
// used to verify every candidate pair before a drop.
double jaccard_exact(std::string_view a, std::string_view b, std::uint32_t shingle_size);

struct MinHashConfig {
    std::uint32_t num_hashes = 128;
    std::uint32_t shingle_size = 5;
    // Hash family salt. Fixed so signatures of identical texts are identical
    // across runs and processes.
    std::uint64_t family_seed = 0x6d696e68617368ULL;
};

class MinHasher {
  public:
    explicit MinHasher(MinHashConfig cfg);

    std::vector<std::uint64_t> signature(std::string_view text) const;

    // Fraction of matching components; estimates Jaccard similarity.
    static double estimate(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b);

    const MinHashConfig& config() const { return cfg_; }

  private:
    MinHashConfig cfg_;
    std::vector<std::uint64_t> salts_;
};

// Locality-sensitive banding over signatures. Lines sharing any band bucket
// become candidate pairs.
class LshIndex {
  public:
    LshIndex(std::uint32_t num_hashes, std::uint32_t bands);

    // Unique ids of previously inserted signatures sharing at least one band.
    std::vector<std::uint32_t> candidates(std::span<const std::uint64_t> sig) const;

    void insert(std::uint32_t id, std::span<const std::uint64_t> sig);

  private:
    std::uint64_t band_key(std::uint32_t band, std::span<const std::uint64_t> sig) const;

    std::uint32_t num_hashes_;
    std::uint32_t bands_;
    std::uint32_t rows_per_band_;
    std::vector<std::unordered_map<std::uint64_t, std::vector<std::uint32_t>>> buckets_;
};

}  // namespace belab
