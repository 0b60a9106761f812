#include "belab/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "belab/chat.hpp"
#include "belab/rng.hpp"

namespace belab {

std::vector<LabeledChunk> chunk_tokens(const std::vector<std::int32_t>& ids,
                                       std::size_t chunk_size, const std::string& participant_id,
                                       Label label, bool pad_trailing, std::int32_t pad_id) {
    if (chunk_size < 8) throw UsageError("chunk size must be at least 8");
    std::vector<LabeledChunk> chunks;
    std::size_t full = ids.size() / chunk_size;
    chunks.reserve(full + 1);
    for (std::size_t k = 0; k < full; ++k) {
        chunks.push_back({participant_id,
                          label,
                          {ids.begin() + static_cast<std::ptrdiff_t>(k * chunk_size),
                           ids.begin() + static_cast<std::ptrdiff_t>((k + 1) * chunk_size)},
                          static_cast<std::uint32_t>(k)});
    }
    std::size_t tail = ids.size() % chunk_size;
    if (pad_trailing && tail > 0) {
        std::vector<std::int32_t> padded(ids.end() - static_cast<std::ptrdiff_t>(tail),
                                         ids.end());
        padded.resize(chunk_size, pad_id);
        chunks.push_back({participant_id, label, std::move(padded),
                          static_cast<std::uint32_t>(full)});
    }
    return chunks;
}

SplitCounts split_counts(std::size_t n) {
    SplitCounts c;
    c.train = n * 4 / 5;
    // round half to even on n/10
    std::size_t q = n / 10, r = n % 10;
    if (2 * r < 10) {
        c.validation = q;
    } else if (2 * r > 10) {
        c.validation = q + 1;
    } else {
        c.validation = (q % 2 == 0) ? q : q + 1;
    }
    c.test = n - c.train - c.validation;
    return c;
}

SplitDataset stratified_split(const std::vector<LabeledChunk>& chunks, std::uint64_t seed,
                              bool group_by_participant) {
    std::array<std::vector<std::size_t>, kNumLabels> by_label;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        by_label[static_cast<std::size_t>(chunks[i].label)].push_back(i);
    }
    for (std::size_t l = 0; l < kNumLabels; ++l) {
        if (by_label[l].empty()) {
            throw DataError(std::string("stratification error: label '") + kLabelNames[l] +
                            "' has no chunks");
        }
    }

    SplitDataset out;
    out.chunk_size = chunks.front().ids.size();
    Rng base(seed);
    for (std::size_t l = 0; l < kNumLabels; ++l) {
        auto& idx = by_label[l];
        SplitCounts target = split_counts(idx.size());
        out.per_label[l] = target;
        Rng rng = base.fork(l);

        if (group_by_participant) {
            // shuffle participants, then emit their chunks as blocks
            std::map<std::string, std::vector<std::size_t>> groups;
            for (std::size_t i : idx) groups[chunks[i].participant_id].push_back(i);
            std::vector<const std::vector<std::size_t>*> blocks;
            blocks.reserve(groups.size());
            for (auto& [pid, members] : groups) blocks.push_back(&members);
            rng.shuffle(blocks);
            SplitCounts actual;
            std::size_t taken = 0;
            for (const auto* block : blocks) {
                // whole block goes to the first split whose target is unmet
                std::size_t boundary_train = target.train;
                std::size_t boundary_val = target.train + target.validation;
                std::size_t dest = taken < boundary_train ? 0 : (taken < boundary_val ? 1 : 2);
                auto& field = dest == 0 ? actual.train
                              : dest == 1 ? actual.validation
                                          : actual.test;
                for (std::size_t i : *block) {
                    (dest == 0 ? out.train : dest == 1 ? out.validation : out.test)
                        .push_back(chunks[i]);
                }
                field += block->size();
                taken += block->size();
            }
            out.per_label[l] = actual;
            continue;
        }
        std::vector<std::size_t> order = idx;
        rng.shuffle(order);
        for (std::size_t k = 0; k < order.size(); ++k) {
            const LabeledChunk& c = chunks[order[k]];
            if (k < target.train) {
                out.train.push_back(c);
            } else if (k < target.train + target.validation) {
                out.validation.push_back(c);
            } else {
                out.test.push_back(c);
            }
        }
    }
    return out;
}

namespace {

nlohmann::json chunk_to_json(const LabeledChunk& c) {
    return {{"participant_id", c.participant_id},
            {"label", to_string(c.label)},
            {"chunk_index", c.chunk_index},
            {"ids", c.ids}};
}

LabeledChunk chunk_from_json(const nlohmann::json& j) {
    LabeledChunk c;
    try {
        c.participant_id = j.at("participant_id").get<std::string>();
        auto name = j.at("label").get<std::string>();
        auto label = label_from_string(name);
        if (!label) throw DataError("unknown label '" + name + "'");
        c.label = *label;
        c.chunk_index = j.at("chunk_index").get<std::uint32_t>();
        c.ids = j.at("ids").get<std::vector<std::int32_t>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad chunk record: ") + e.what());
    }
    return c;
}

std::string chunk_key(const LabeledChunk& c) {
    return c.participant_id + ":" + std::to_string(c.chunk_index);
}

}  // namespace

void write_chunks_jsonl(const std::string& path, const std::vector<LabeledChunk>& chunks) {
    std::ostringstream ss;
    for (const auto& c : chunks) ss << chunk_to_json(c).dump() << '\n';
    write_text_file(path, ss.str());
}

std::vector<LabeledChunk> read_chunks_jsonl(const std::string& path) {
    std::vector<LabeledChunk> chunks;
    std::string content = read_text_file(path);
    std::size_t start = 0, line_no = 0;
    while (start < content.size()) {
        std::size_t nl = content.find('\n', start);
        if (nl == std::string::npos) nl = content.size();
        ++line_no;
        std::string_view line(content.data() + start, nl - start);
        start = nl + 1;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("line " + std::to_string(line_no) + ": " + e.what());
        }
        chunks.push_back(chunk_from_json(j));
    }
    return chunks;
}

void write_split_manifest(const std::string& path, const SplitDataset& split,
                          std::uint64_t seed) {
    auto keys = [](const std::vector<LabeledChunk>& cs) {
        std::vector<std::string> out;
        out.reserve(cs.size());
        for (const auto& c : cs) out.push_back(chunk_key(c));
        return out;
    };
    nlohmann::json j{{"chunk_size", split.chunk_size},
                     {"seed", seed},
                     {"train", keys(split.train)},
                     {"validation", keys(split.validation)},
                     {"test", keys(split.test)}};
    write_text_file(path, j.dump(2) + "\n");
}

SplitDataset apply_split_manifest(const std::string& path,
                                  const std::vector<LabeledChunk>& chunks) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad split manifest: ") + e.what());
    }
    std::unordered_map<std::string, const LabeledChunk*> by_key;
    for (const auto& c : chunks) by_key[chunk_key(c)] = &c;

    SplitDataset out;
    out.chunk_size = j.value("chunk_size", std::size_t{0});
    auto fill = [&](const char* name, std::vector<LabeledChunk>& dest) {
        for (const auto& key : j.at(name)) {
            auto it = by_key.find(key.get<std::string>());
            if (it == by_key.end()) {
                throw DataError("split manifest references unknown chunk " +
                                key.get<std::string>());
            }
            dest.push_back(*it->second);
        }
    };
    fill("train", out.train);
    fill("validation", out.validation);
    fill("test", out.test);
    for (std::size_t l = 0; l < kNumLabels; ++l) {
        auto count = [&](const std::vector<LabeledChunk>& cs) {
            return static_cast<std::size_t>(
                std::count_if(cs.begin(), cs.end(),
                              [&](const LabeledChunk& c) {
                                  return static_cast<std::size_t>(c.label) == l;
                              }));
        };
        out.per_label[l] = {count(out.train), count(out.validation), count(out.test)};
    }
    return out;
}

std::unordered_map<std::string, Label> read_labels_csv(const std::string& path) {
    std::unordered_map<std::string, Label> labels;
    std::string content = read_text_file(path);
    std::size_t start = 0, line_no = 0;
    while (start < content.size()) {
        std::size_t nl = content.find('\n', start);
        if (nl == std::string::npos) nl = content.size();
        ++line_no;
        std::string line = content.substr(start, nl - start);
        start = nl + 1;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1 && line == "participant_id,label") continue;
        std::size_t comma = line.find(',');
        if (comma == std::string::npos || comma == 0) {
            throw DataError("labels csv line " + std::to_string(line_no) +
                            ": expected participant_id,label");
        }
        std::string pid = line.substr(0, comma);
        auto label = label_from_string(line.substr(comma + 1));
        if (!label) {
            throw DataError("labels csv line " + std::to_string(line_no) + ": unknown label '" +
                            line.substr(comma + 1) + "'");
        }
        if (!labels.emplace(pid, *label).second) {
            throw DataError("labels csv: duplicate participant " + pid);
        }
    }
    return labels;
}

std::vector<LabeledChunk> ingest_transcripts(const std::string& transcripts_dir,
                                             const std::unordered_map<std::string, Label>& labels,
                                             const TokenizerModel& tokenizer,
                                             std::size_t chunk_size,
                                             const std::vector<std::string>& speakers,
                                             bool pad_trailing) {
    namespace fs = std::filesystem;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(transcripts_dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".cha") {
            files.push_back(entry.path());
        }
    }
    if (files.empty()) throw DataError("no .cha transcripts in " + transcripts_dir);
    std::sort(files.begin(), files.end());

    EncodeCache cache;
    std::vector<LabeledChunk> chunks;
    for (const auto& file : files) {
        std::string pid = file.stem().string();
        auto it = labels.find(pid);
        if (it == labels.end()) throw DataError("no label for participant " + pid);
        Transcript t;
        try {
            t = parse_chat(read_text_file(file.string()));
        } catch (const DataError& e) {
            throw DataError(file.filename().string() + ": " + e.what());
        }
        t.participant_id = pid;
        t.label = it->second;

        TokenSequence seq = encode(tokenizer, flatten(t, speakers), &cache);
        std::vector<std::int32_t> ids;
        ids.reserve(seq.ids.size());
        for (std::int32_t id : seq.ids) {
            if (!tokenizer.is_special(id)) ids.push_back(id);
        }
        auto file_chunks = chunk_tokens(ids, chunk_size, pid, t.label, pad_trailing);
        chunks.insert(chunks.end(), file_chunks.begin(), file_chunks.end());
    }
    return chunks;
}

}  // namespace belab
