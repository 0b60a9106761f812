#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace belab {

// Error taxonomy. The CLI maps these onto exit codes:
// UsageError -> 1, DataError -> 2, NumericError -> 3.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Classification target. Order is fixed: logit/CSV columns follow it.
enum class Label : int { psychotic = 0, control = 1, depressed = 2 };

inline constexpr int kNumLabels = 3;
inline constexpr std::array<const char*, 3> kLabelNames = {"psychotic", "control", "depressed"};

const char* to_string(Label l);
std::optional<Label> label_from_string(std::string_view s);

// ASCII whitespace. std::isspace is locale-sensitive and UB on negative chars.
inline bool is_ascii_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

// Offset of the first invalid UTF-8 byte, or npos if the string is valid.
std::size_t find_invalid_utf8(std::string_view s);

// Byte offsets of codepoint starts, with a final entry equal to s.size().
// Invalid bytes are treated as one unit each so the walk is total.
std::vector<std::uint32_t> utf8_boundaries(std::string_view s);

std::vector<std::string_view> split_whitespace(std::string_view s);

// Trim ends and collapse internal whitespace runs to single spaces.
std::string trim_collapse_whitespace(std::string_view s);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view content);

// 64-bit FNV-1a, used for content fingerprints (pipeline staging, LSH buckets).
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

// Run shard_fn(begin, end) over [0, n) split into contiguous shards, one per
// thread. Shards must write to disjoint preallocated slots so the result is
// identical to a sequential pass.
void parallel_shards(std::size_t n, int threads,
                     const std::function<void(std::size_t, std::size_t)>& shard_fn);

}  // namespace belab
