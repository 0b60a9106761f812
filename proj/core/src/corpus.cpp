#include "belab/corpus.hpp"

#include <cmath>
#include <exception>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "belab/rng.hpp"

namespace belab {

namespace {

bool is_alpha_byte(unsigned char c) {
    // Multi-byte UTF-8 (accented letters etc.) counts as alphabetic.
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

bool is_url_like(std::string_view token) {
    if (token.find("://") != std::string_view::npos) return true;
    if (token.size() >= 4) {
        std::string_view head = token.substr(0, 4);
        if (head == "www." || head == "WWW." || head == "Www.") return true;
    }
    return false;
}

bool has_alpha(std::string_view token) {
    for (unsigned char c : token) {
        if (is_alpha_byte(c)) return true;
    }
    return false;
}

}  // namespace

LineVerdict clean_line(std::string_view raw, std::uint64_t line_index, const CleanConfig& cfg) {
    std::size_t bad = find_invalid_utf8(raw);
    if (bad != std::string_view::npos) {
        throw DataError("invalid UTF-8 at byte offset " + std::to_string(bad) + " in line " +
                        std::to_string(line_index));
    }
    std::string collapsed = trim_collapse_whitespace(raw);
    auto words = split_whitespace(collapsed);
    if (words.size() > cfg.max_words) {
        return {DropReason::length, {{}, line_index, static_cast<std::uint32_t>(words.size())}};
    }
    std::string filtered;
    filtered.reserve(collapsed.size());
    std::uint32_t kept_words = 0;
    for (auto w : words) {
        if (is_url_like(w) || !has_alpha(w)) continue;
        if (kept_words > 0) filtered.push_back(' ');
        filtered.append(w);
        ++kept_words;
    }
    if (kept_words < cfg.min_words) {
        return {DropReason::nontextual, {{}, line_index, kept_words}};
    }
    std::size_t alpha = 0, non_space = 0;
    for (unsigned char c : filtered) {
        if (c == ' ') continue;
        ++non_space;
        if (is_alpha_byte(c)) ++alpha;
    }
    if (non_space == 0 ||
        static_cast<double>(alpha) / static_cast<double>(non_space) < cfg.min_alpha_ratio) {
        return {DropReason::nontextual, {{}, line_index, kept_words}};
    }
    return {DropReason::none, {std::move(filtered), line_index, kept_words}};
}

CleanCorpus fuzzy_dedup(std::vector<CorpusLine> lines, const DedupConfig& cfg, CleanStats stats) {
    if (!(cfg.threshold > 0.0 && cfg.threshold < 1.0)) {
        throw UsageError("dedup threshold must lie in (0,1)");
    }
    MinHasher hasher(cfg.minhash);
    LshIndex index(cfg.minhash.num_hashes, cfg.bands);

    std::vector<std::vector<std::uint64_t>> sigs(lines.size());
    // Signatures are independent per line; the dedup scan itself stays
    // sequential so keep-first semantics cannot depend on thread timing.
    for (std::size_t i = 0; i < lines.size(); ++i) sigs[i] = hasher.signature(lines[i].text);

    if (stats.input_lines == 0) stats.input_lines = lines.size();
    CleanCorpus out;
    out.stats = stats;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        bool duplicate = false;
        for (std::uint32_t kept_id : index.candidates(sigs[i])) {
            double j = jaccard_exact(lines[i].text, out.lines[kept_id].text,
                                     cfg.minhash.shingle_size);
            if (j > cfg.threshold) {
                duplicate = true;
                break;
            }
        }
        if (duplicate) {
            out.stats.dropped_duplicate++;
        } else {
            index.insert(static_cast<std::uint32_t>(out.lines.size()), sigs[i]);
            out.lines.push_back(std::move(lines[i]));
        }
    }
    out.stats.kept = out.lines.size();
    return out;
}

CleanCorpus clean_corpus(const std::vector<std::string>& raw_lines, const CleanConfig& clean_cfg,
                         const DedupConfig& dedup_cfg, int threads) {
    std::size_t n = raw_lines.size();
    std::vector<LineVerdict> verdicts(n);
    std::vector<std::exception_ptr> errors(n);
    parallel_shards(n, threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            try {
                verdicts[i] = clean_line(raw_lines[i], i, clean_cfg);
            } catch (...) {
                errors[i] = std::current_exception();
                return;
            }
        }
    });
    for (std::size_t i = 0; i < n; ++i) {
        if (errors[i]) std::rethrow_exception(errors[i]);
    }

    CleanStats stats;
    stats.input_lines = n;
    std::vector<CorpusLine> kept;
    kept.reserve(n);
    for (auto& v : verdicts) {
        switch (v.drop) {
            case DropReason::none:
                kept.push_back(std::move(v.line));
                break;
            case DropReason::nontextual:
                stats.dropped_nontextual++;
                break;
            case DropReason::length:
                stats.dropped_length++;
                break;
        }
    }
    return fuzzy_dedup(std::move(kept), dedup_cfg, stats);
}

std::pair<CleanCorpus, CleanCorpus> holdout_split(const CleanCorpus& corpus, double fraction,
                                                  std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw UsageError("holdout fraction must lie in (0,1)");
    }
    std::size_t n = corpus.lines.size();
    if (n == 0) throw DataError("holdout split on empty corpus");
    auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    std::vector<bool> in_validation(n, false);
    for (std::size_t i = 0; i < k; ++i) in_validation[order[i]] = true;

    CleanCorpus train, validation;
    for (std::size_t i = 0; i < n; ++i) {
        (in_validation[i] ? validation : train).lines.push_back(corpus.lines[i]);
    }
    train.stats.input_lines = train.stats.kept = train.lines.size();
    validation.stats.input_lines = validation.stats.kept = validation.lines.size();
    return {std::move(train), std::move(validation)};
}

std::vector<std::string> read_lines(const std::string& path) {
    std::string content = read_text_file(path);
    std::vector<std::string> lines;
    std::size_t start = 0;
    while (start <= content.size()) {
        std::size_t nl = content.find('\n', start);
        if (nl == std::string::npos) {
            if (start < content.size()) lines.push_back(content.substr(start));
            break;
        }
        std::size_t len = nl - start;
        if (len > 0 && content[start + len - 1] == '\r') --len;
        lines.push_back(content.substr(start, len));
        start = nl + 1;
    }
    return lines;
}

void write_corpus(const std::string& path, const CleanCorpus& corpus) {
    std::ostringstream ss;
    for (const auto& line : corpus.lines) ss << line.text << '\n';
    write_text_file(path, ss.str());
}

std::string stats_json(const CleanStats& stats) {
    nlohmann::json j{{"input_lines", stats.input_lines},
                     {"kept", stats.kept},
                     {"dropped_nontextual", stats.dropped_nontextual},
                     {"dropped_length", stats.dropped_length},
                     {"dropped_duplicate", stats.dropped_duplicate}};
    return j.dump(2) + "\n";
}

}  // namespace belab
