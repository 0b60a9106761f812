#include "belab/minhash.hpp"

#include <algorithm>
#include <unordered_set>

#include "belab/rng.hpp"

namespace belab {

std::vector<std::string_view> char_shingles(std::string_view text, std::uint32_t shingle_size) {
    std::vector<std::string_view> out;
    if (shingle_size == 0) throw UsageError("shingle size must be positive");
    auto bounds = utf8_boundaries(text);
    std::size_t n_chars = bounds.size() - 1;
    if (n_chars == 0) return out;
    if (n_chars < shingle_size) {
        out.push_back(text);
        return out;
    }
    out.reserve(n_chars - shingle_size + 1);
    for (std::size_t i = 0; i + shingle_size < bounds.size(); ++i) {
        out.push_back(text.substr(bounds[i], bounds[i + shingle_size] - bounds[i]));
    }
    return out;
}

double jaccard_exact(std::string_view a, std::string_view b, std::uint32_t shingle_size) {
    std::unordered_set<std::string_view> sa, sb;
    for (auto s : char_shingles(a, shingle_size)) sa.insert(s);
    for (auto s : char_shingles(b, shingle_size)) sb.insert(s);
    if (sa.empty() && sb.empty()) return 1.0;
    if (sa.empty() || sb.empty()) return 0.0;
    std::size_t inter = 0;
    const auto& small = sa.size() <= sb.size() ? sa : sb;
    const auto& large = sa.size() <= sb.size() ? sb : sa;
    for (const auto& s : small) {
        if (large.count(s)) ++inter;
    }
    std::size_t uni = sa.size() + sb.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

MinHasher::MinHasher(MinHashConfig cfg) : cfg_(cfg) {
    if (cfg_.num_hashes == 0) throw UsageError("minhash: num_hashes must be positive");
    Rng rng(cfg_.family_seed);
    salts_.resize(cfg_.num_hashes);
    for (auto& s : salts_) s = rng.next();
}

std::vector<std::uint64_t> MinHasher::signature(std::string_view text) const {
    std::vector<std::uint64_t> sig(cfg_.num_hashes, UINT64_MAX);
    for (auto shingle : char_shingles(text, cfg_.shingle_size)) {
        std::uint64_t base = splitmix64(fnv1a64(shingle));
        for (std::uint32_t i = 0; i < cfg_.num_hashes; ++i) {
            std::uint64_t h = splitmix64(base ^ salts_[i]);
            if (h < sig[i]) sig[i] = h;
        }
    }
    return sig;
}

double MinHasher::estimate(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
    if (a.size() != b.size() || a.empty()) {
        throw UsageError("minhash estimate: signature lengths differ");
    }
    std::size_t same = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i]) ++same;
    }
    return static_cast<double>(same) / static_cast<double>(a.size());
}

LshIndex::LshIndex(std::uint32_t num_hashes, std::uint32_t bands)
    : num_hashes_(num_hashes), bands_(bands) {
    if (bands == 0 || num_hashes % bands != 0) {
        throw UsageError("lsh: num_hashes must be divisible by bands");
    }
    rows_per_band_ = num_hashes / bands;
    buckets_.resize(bands);
}

std::uint64_t LshIndex::band_key(std::uint32_t band, std::span<const std::uint64_t> sig) const {
    std::string_view bytes(reinterpret_cast<const char*>(sig.data() + band * rows_per_band_),
                           rows_per_band_ * sizeof(std::uint64_t));
    return fnv1a64(bytes, 0x9e3779b97f4a7c15ULL + band);
}

std::vector<std::uint32_t> LshIndex::candidates(std::span<const std::uint64_t> sig) const {
    std::vector<std::uint32_t> out;
    for (std::uint32_t band = 0; band < bands_; ++band) {
        auto it = buckets_[band].find(band_key(band, sig));
        if (it == buckets_[band].end()) continue;
        out.insert(out.end(), it->second.begin(), it->second.end());
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

void LshIndex::insert(std::uint32_t id, std::span<const std::uint64_t> sig) {
    if (sig.size() != num_hashes_) throw UsageError("lsh: signature length mismatch");
    for (std::uint32_t band = 0; band < bands_; ++band) {
        buckets_[band][band_key(band, sig)].push_back(id);
    }
}

}  // namespace belab
