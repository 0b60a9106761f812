#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "belab/common.hpp"

namespace belab {

// Byte-level BPE in the RoBERTa lineage. Bytes are remapped to printable
// code points so every token string is valid UTF-8; the mapped space
// (U+0120, rendered as a leading marker on word-initial tokens) carries
// word boundaries, which makes decode(encode(t)) == t for arbitrary bytes.

inline constexpr std::int32_t kBosId = 0;
inline constexpr std::int32_t kEosId = 1;
inline constexpr std::int32_t kPadId = 2;
inline constexpr std::int32_t kUnkId = 3;
inline constexpr std::int32_t kMaskId = 4;
inline constexpr std::size_t kNumSpecials = 5;
inline constexpr std::size_t kByteAlphabet = 256;

const std::vector<std::string>& special_tokens();

// byte value -> mapped code point (as UTF-8 string), and the inverse.
std::string byte_to_unicode(unsigned char b);
std::string map_bytes(std::string_view raw);
std::string unmap_bytes(std::string_view mapped);

// Splits text into encode units: each word keeps at most one preceding
// space; other whitespace runs become standalone units. Concatenating the
// pieces reproduces the input byte for byte.
std::vector<std::string_view> pretokenize(std::string_view text);

struct TokenizerModel {
    std::vector<std::string> id_to_token;                    // dense, specials first
    std::unordered_map<std::string, std::int32_t> token_id;  // inverse of id_to_token
    std::vector<std::pair<std::string, std::string>> merges;

    std::size_t vocab_size() const { return id_to_token.size(); }
    bool is_special(std::int32_t id) const {
        return id >= 0 && static_cast<std::size_t>(id) < kNumSpecials;
    }
};

struct TokenSequence {
    std::vector<std::int32_t> ids;
    bool has_bos = false;
    bool has_eos = false;
};

// vocab_size counts specials + byte alphabet + merge tokens. Training scans
// whitespace-delimited pieces, repeatedly merging the most frequent adjacent
// symbol pair; ties prefer the lexicographically smaller (left, right).
// Stops early once no pair occurs at least twice.
TokenizerModel train_bpe(const std::vector<std::string>& corpus_lines, std::size_t vocab_size);

// Tied to one model; reuse across encode calls to skip re-tokenizing
// repeated words and rebuilding the merge-rank table.
struct EncodeCache {
    std::unordered_map<std::string, std::vector<std::int32_t>> pieces;
    std::unordered_map<std::uint64_t, std::int32_t> merge_rank;  // left<<32 | right
    bool primed = false;
};

TokenSequence encode(const TokenizerModel& model, std::string_view text,
                     EncodeCache* cache = nullptr);
std::string decode(const TokenizerModel& model, const std::vector<std::int32_t>& ids);

// Writes vocab.json and merges.txt into dir; load validates both.
void save_tokenizer(const TokenizerModel& model, const std::string& dir);
TokenizerModel load_tokenizer(const std::string& dir);

}  // namespace belab
