#include "belab/common.hpp"

#include <fstream>
#include <sstream>
#include <thread>

namespace belab {

const char* to_string(Label l) { return kLabelNames[static_cast<int>(l)]; }

std::optional<Label> label_from_string(std::string_view s) {
    for (int i = 0; i < kNumLabels; ++i) {
        if (s == kLabelNames[i]) return static_cast<Label>(i);
    }
    return std::nullopt;
}

std::size_t find_invalid_utf8(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size()) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        if (c < 0x80) {
            ++i;
            continue;
        }
        std::size_t extra;
        std::uint32_t cp, min_cp;
        if ((c & 0xE0) == 0xC0) {
            extra = 1;
            cp = c & 0x1F;
            min_cp = 0x80;
        } else if ((c & 0xF0) == 0xE0) {
            extra = 2;
            cp = c & 0x0F;
            min_cp = 0x800;
        } else if ((c & 0xF8) == 0xF0) {
            extra = 3;
            cp = c & 0x07;
            min_cp = 0x10000;
        } else {
            return i;
        }
        if (i + extra >= s.size()) return i;
        for (std::size_t k = 1; k <= extra; ++k) {
            unsigned char cc = static_cast<unsigned char>(s[i + k]);
            if ((cc & 0xC0) != 0x80) return i;
            cp = (cp << 6) | (cc & 0x3F);
        }
        if (cp < min_cp || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return i;
        i += extra + 1;
    }
    return std::string_view::npos;
}

std::vector<std::uint32_t> utf8_boundaries(std::string_view s) {
    std::vector<std::uint32_t> out;
    out.reserve(s.size() / 2 + 2);
    std::size_t i = 0;
    while (i < s.size()) {
        out.push_back(static_cast<std::uint32_t>(i));
        unsigned char c = static_cast<unsigned char>(s[i]);
        std::size_t len = 1;
        if ((c & 0xE0) == 0xC0)
            len = 2;
        else if ((c & 0xF0) == 0xE0)
            len = 3;
        else if ((c & 0xF8) == 0xF0)
            len = 4;
        // Clip at continuation bytes that do not belong to a valid sequence.
        std::size_t j = i + 1;
        while (j < i + len && j < s.size() &&
               (static_cast<unsigned char>(s[j]) & 0xC0) == 0x80) {
            ++j;
        }
        i = j;
    }
    out.push_back(static_cast<std::uint32_t>(s.size()));
    return out;
}

std::vector<std::string_view> split_whitespace(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_ascii_space(s[i])) ++i;
        std::size_t start = i;
        while (i < s.size() && !is_ascii_space(s[i])) ++i;
        if (i > start) out.push_back(s.substr(start, i - start));
    }
    return out;
}

std::string trim_collapse_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool in_space = false;
    for (char c : s) {
        if (is_ascii_space(c)) {
            in_space = true;
            continue;
        }
        if (in_space && !out.empty()) out.push_back(' ');
        in_space = false;
        out.push_back(c);
    }
    return out;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, std::string_view content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw DataError("write failed: " + path);
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void parallel_shards(std::size_t n, int threads,
                     const std::function<void(std::size_t, std::size_t)>& shard_fn) {
    if (threads <= 1 || n < 2) {
        shard_fn(0, n);
        return;
    }
    std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    std::vector<std::thread> pool;
    pool.reserve(k);
    std::size_t chunk = (n + k - 1) / k;
    for (std::size_t t = 0; t < k; ++t) {
        std::size_t begin = t * chunk;
        std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back(shard_fn, begin, end);
    }
    for (auto& th : pool) th.join();
}

}  // namespace belab
