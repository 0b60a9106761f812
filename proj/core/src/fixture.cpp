#include "belab/fixture.hpp"

#include <cstdio>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "belab/rng.hpp"

namespace fs = std::filesystem;

namespace belab {

namespace {

const std::vector<std::string> kNeutralSyllables = {
    "ma", "re", "to", "len", "der", "vel", "zon", "wep", "kra", "min",
    "ster", "bor", "hui", "gan", "pel", "oot", "ven", "daal", "lig", "snee"};

// Disjoint per-class pools give each diagnosis its own word distribution.
const std::array<std::vector<std::string>, kNumLabels> kClassSyllables = {{
    {"paz", "vor", "kel", "dri", "mon", "zets", "gla", "rup"},
    {"bin", "tas", "wol", "ges", "nor", "hem", "dak", "lus"},
    {"fies", "mur", "zeb", "kol", "nad", "wim", "tog", "ral"},
}};

std::string make_word(Rng& rng, const std::vector<std::string>& pool) {
    std::size_t syllables = 2 + rng.below(3);
    std::string word;
    for (std::size_t i = 0; i < syllables; ++i) word += pool[rng.below(pool.size())];
    if (rng.below(12) == 0) {
        std::size_t e = word.find('e');
        if (e != std::string::npos) word.replace(e, 1, "ë");
    }
    return word;
}

std::string make_sentence(Rng& rng, const std::vector<std::string>& pool, std::size_t words) {
    std::string line;
    for (std::size_t i = 0; i < words; ++i) {
        if (i) line += ' ';
        line += make_word(rng, pool);
    }
    line += '.';
    return line;
}

// One mid-string letter swap: on a ~300-character line the 5-gram shingle
// sets still overlap with Jaccard well above 0.95.
std::string mutate_line(const std::string& base) {
    std::string out = base;
    std::size_t at = out.size() * 3 / 5;
    while (at < out.size() && !(out[at] >= 'a' && out[at] <= 'z')) ++at;
    if (at == out.size()) at = out.size() / 2;
    out[at] = out[at] == 'q' ? 'z' : 'q';
    return out;
}

std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

std::vector<std::string> synth_corpus(const FixtureConfig& cfg) {
    if (cfg.near_duplicates >= cfg.corpus_lines) {
        throw UsageError("near_duplicates must be fewer than corpus_lines");
    }
    Rng rng(cfg.seed);
    const std::size_t originals = cfg.corpus_lines - cfg.near_duplicates;

    std::vector<std::string> lines;
    std::vector<std::size_t> dup_bases;  // indices of unblemished long lines
    lines.reserve(cfg.corpus_lines);
    for (std::size_t i = 0; i < originals; ++i) {
        if (i % 97 == 5) {
            lines.push_back("12045 77 380 9 " + std::to_string(i));  // no letters: dropped
            continue;
        }
        if (i % 89 == 7) {
            lines.push_back(make_sentence(rng, kNeutralSyllables, 2));  // too short: dropped
            continue;
        }
        if (i == 11) {
            lines.push_back(make_sentence(rng, kNeutralSyllables, 2100));  // over the word cap
            continue;
        }
        std::string line = make_sentence(rng, kNeutralSyllables, 40 + rng.below(11));
        if (i % 41 == 0) line += " www.voorbeeld-site.nl";  // url token, filtered in place
        lines.push_back(line);
        if (i % 41 != 0) dup_bases.push_back(i);
    }
    for (std::size_t d = 0; d < cfg.near_duplicates; ++d) {
        const std::string& base = lines[dup_bases[(d * 7919) % dup_bases.size()]];
        lines.push_back(mutate_line(base));
    }
    return lines;
}

std::string synth_transcript(Label label, std::uint64_t seed) {
    Rng rng(seed);
    const auto& pool = kClassSyllables[static_cast<std::size_t>(label)];

    std::string cha;
    cha += "@UTF8\n";
    cha += "@Begin\n";
    cha += "@Languages:\tnld\n";
    cha += "@Participants:\tPAR Participant, INV Investigator\n";
    std::size_t utterances = 10 + rng.below(5);
    for (std::size_t u = 0; u < utterances; ++u) {
        if (u % 4 == 0) {
            cha += "*INV:\t" + make_sentence(rng, kNeutralSyllables, 3 + rng.below(4)) + "\n";
        }
        std::string text = make_sentence(rng, pool, 7 + rng.below(6));
        if (u % 5 == 1) text = "&eh " + text + " [lacht]";
        if (u % 7 == 2) text = "xxx " + text;
        cha += "*PAR:\t" + text + "\n";
        if (u % 6 == 3) {
            cha += "\t" + make_sentence(rng, pool, 4 + rng.below(3)) + "\n";  // continuation
        }
        if (u % 5 == 4) cha += "%com:\tsynthetisch\n";
    }
    cha += "@End\n";
    return cha;
}

void write_fixture(const std::string& dir, const FixtureConfig& cfg) {
    fs::create_directories(fs::path(dir) / "transcripts");
    Rng root(cfg.seed);

    {
        std::string corpus;
        for (const auto& line : synth_corpus(cfg)) {
            corpus += line;
            corpus += '\n';
        }
        write_text_file((fs::path(dir) / "corpus.txt").string(), corpus);
    }

    std::vector<std::pair<std::string, Label>> participants;
    static const std::array<const char*, kNumLabels> prefixes = {"psy", "con", "dep"};
    for (std::size_t l = 0; l < kNumLabels; ++l) {
        for (std::size_t i = 1; i <= cfg.participants[l]; ++i) {
            char pid[16];
            std::snprintf(pid, sizeof(pid), "%s%02zu", prefixes[l], i);
            participants.emplace_back(pid, static_cast<Label>(l));
        }
    }

    std::string labels_csv = "participant_id,label\n";
    std::string ids_txt;
    for (const auto& [pid, label] : participants) {
        write_text_file((fs::path(dir) / "transcripts" / (pid + ".cha")).string(),
                        synth_transcript(label, root.fork(fnv1a64(pid)).next()));
        labels_csv += pid + "," + std::string(to_string(label)) + "\n";
        ids_txt += pid + "\n";
    }
    write_text_file((fs::path(dir) / "labels.csv").string(), labels_csv);
    write_text_file((fs::path(dir) / "transcript_ids.txt").string(), ids_txt);

    {
        const std::size_t D = cfg.feature_dim;
        Rng noise = root.fork(0xfea7);
        std::string csv = "participant_id,label";
        for (std::size_t j = 1; j <= D; ++j) csv += ",f_" + std::to_string(j);
        csv += "\n";

        auto emit_row = [&](const std::string& pid, Label label) {
            auto c = static_cast<std::size_t>(label);
            csv += pid + "," + std::string(to_string(label));
            for (std::size_t j = 0; j < D; ++j) {
                double mean = (j % kNumLabels == c) ? 3.0 : 0.0;
                csv += "," + format_value(mean + cfg.blob_noise * noise.normal());
            }
            csv += "\n";
        };

        std::array<std::size_t, kNumLabels> remaining = cfg.audio_totals;
        for (const auto& [pid, label] : participants) {
            auto l = static_cast<std::size_t>(label);
            if (remaining[l] == 0) {
                throw UsageError("audio totals are too small for the transcript participants");
            }
            --remaining[l];
            emit_row(pid, label);
        }
        std::size_t serial = 1;
        for (std::size_t l = 0; l < kNumLabels; ++l) {
            for (std::size_t i = 0; i < remaining[l]; ++i, ++serial) {
                char pid[16];
                std::snprintf(pid, sizeof(pid), "aud%03zu", serial);
                emit_row(pid, static_cast<Label>(l));
            }
        }
        write_text_file((fs::path(dir) / "features.csv").string(), csv);
    }

    nlohmann::json pipeline = {
        {"seed", cfg.seed},
        {"corpus", "corpus.txt"},
        {"transcripts_dir", "transcripts"},
        {"labels", "labels.csv"},
        {"features", "features.csv"},
        {"transcript_ids", "transcript_ids.txt"},
        {"clean",
         {{"max_words", 2000},
          {"min_words", 3},
          {"min_alpha_ratio", 0.5},
          {"dedup_threshold", 0.9},
          {"holdout_fraction", 0.1}}},
        {"tokenizer", {{"vocab_size", 320}}},
        {"encoder",
         {{"num_layers", 2},
          {"num_heads", 2},
          {"hidden_size", 32},
          {"ffn_size", 64},
          {"max_positions", 64},
          {"dropout", 0.1}}},
        {"pretrain",
         {{"steps", 40},
          {"batch_rows", 4},
          {"seq_len", 48},
          {"peak_lr", 3e-4},
          {"warmup_steps", 8},
          {"mask_prob", 0.15}}},
        {"chunk", {{"chunk_size", 16}}},
        {"finetune",
         {{"batch_size", 9}, {"epochs", 3}, {"peak_lr", 8.42e-5}, {"warmup_steps", 190}}},
        {"audio",
         {{"epochs", 30}, {"batch_size", 16}, {"hidden1", 64}, {"hidden2", 32}, {"dropout", 0.1}}},
        {"fusion",
         {{"epochs", 40},
          {"batch_size", 16},
          {"lr", 0.01},
          {"probabilities", false},
          {"recording_level", false}}},
    };
    write_text_file((fs::path(dir) / "pipeline.json").string(), pipeline.dump(2) + "\n");
}

}  // namespace belab
