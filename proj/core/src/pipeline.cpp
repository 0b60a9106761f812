#include "belab/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "belab/corpus.hpp"
#include "belab/dataset.hpp"
#include "belab/metrics.hpp"

namespace fs = std::filesystem;

namespace belab {

namespace {

std::string format_float(float v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", static_cast<double>(v));
    return buf;
}

std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            cells.push_back(line.substr(start));
            return cells;
        }
        cells.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

double parse_double(const std::string& cell, const std::string& path, std::size_t row) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc{} || ptr != cell.data() + cell.size()) {
        throw DataError(path + " row " + std::to_string(row) + ": bad number '" + cell + "'");
    }
    return v;
}

std::uint64_t parse_uint(const std::string& cell, const std::string& path, std::size_t row) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc{} || ptr != cell.data() + cell.size()) {
        throw DataError(path + " row " + std::to_string(row) + ": bad number '" + cell + "'");
    }
    return v;
}

Label parse_label(const std::string& cell, const std::string& path, std::size_t row) {
    auto label = label_from_string(cell);
    if (!label) {
        throw DataError(path + " row " + std::to_string(row) + ": unknown label '" + cell + "'");
    }
    return *label;
}

std::vector<std::string> csv_body(const std::string& path, const std::string& expected_header) {
    std::vector<std::string> lines = read_lines(path);
    if (lines.empty() || lines[0] != expected_header) {
        throw DataError(path + ": expected header '" + expected_header + "'");
    }
    lines.erase(lines.begin());
    return lines;
}

std::string logits_header() {
    std::string h;
    for (std::size_t i = 0; i < kNumLabels; ++i) {
        h += ",logit_" + std::string(kLabelNames[i]);
    }
    return h;
}

}  // namespace

void write_chunk_preds_csv(const std::string& path, const std::vector<ChunkPrediction>& preds) {
    std::string out = "participant_id,chunk_index,label" + logits_header() + ",predicted\n";
    for (const auto& p : preds) {
        out += p.participant_id + "," + std::to_string(p.chunk_index) + "," +
               std::string(to_string(p.label));
        for (float v : p.logits) out += "," + format_float(v);
        out += "," + std::string(kLabelNames[p.predicted]) + "\n";
    }
    write_text_file(path, out);
}

std::vector<ChunkPrediction> read_chunk_preds_csv(const std::string& path) {
    std::string header = "participant_id,chunk_index,label" + logits_header() + ",predicted";
    std::vector<ChunkPrediction> preds;
    std::size_t row = 0;
    for (const auto& line : csv_body(path, header)) {
        ++row;
        auto cells = split_csv_row(line);
        if (cells.size() != 4 + kNumLabels) {
            throw DataError(path + " row " + std::to_string(row) + ": wrong column count");
        }
        ChunkPrediction p;
        p.participant_id = cells[0];
        p.chunk_index = static_cast<std::uint32_t>(parse_uint(cells[1], path, row));
        p.label = parse_label(cells[2], path, row);
        for (std::size_t i = 0; i < kNumLabels; ++i) {
            p.logits.push_back(static_cast<float>(parse_double(cells[3 + i], path, row)));
        }
        p.predicted = static_cast<std::size_t>(parse_label(cells[3 + kNumLabels], path, row));
        preds.push_back(std::move(p));
    }
    return preds;
}

void write_audio_preds_csv(const std::string& path, const std::vector<AudioPrediction>& preds) {
    std::string out = "participant_id,label" + logits_header() + ",predicted\n";
    for (const auto& p : preds) {
        out += p.participant_id + "," + std::string(to_string(p.label));
        for (float v : p.logits) out += "," + format_float(v);
        out += "," + std::string(kLabelNames[p.predicted]) + "\n";
    }
    write_text_file(path, out);
}

std::vector<AudioPrediction> read_audio_preds_csv(const std::string& path) {
    std::string header = "participant_id,label" + logits_header() + ",predicted";
    std::vector<AudioPrediction> preds;
    std::size_t row = 0;
    for (const auto& line : csv_body(path, header)) {
        ++row;
        auto cells = split_csv_row(line);
        if (cells.size() != 3 + kNumLabels) {
            throw DataError(path + " row " + std::to_string(row) + ": wrong column count");
        }
        AudioPrediction p;
        p.participant_id = cells[0];
        p.label = parse_label(cells[1], path, row);
        for (std::size_t i = 0; i < kNumLabels; ++i) {
            p.logits.push_back(static_cast<float>(parse_double(cells[2 + i], path, row)));
        }
        p.predicted = static_cast<std::size_t>(parse_label(cells[2 + kNumLabels], path, row));
        preds.push_back(std::move(p));
    }
    return preds;
}

void write_fusion_preds_csv(const std::string& path, const std::vector<FusionPrediction>& preds) {
    std::string out = "participant_id,chunk_index,label" + logits_header() + ",predicted\n";
    for (const auto& p : preds) {
        out += p.participant_id + "," + std::to_string(p.chunk_index) + "," +
               std::string(to_string(p.label));
        for (float v : p.logits) out += "," + format_float(v);
        out += "," + std::string(kLabelNames[p.predicted]) + "\n";
    }
    write_text_file(path, out);
}

std::vector<FusionPrediction> read_fusion_preds_csv(const std::string& path) {
    std::string header = "participant_id,chunk_index,label" + logits_header() + ",predicted";
    std::vector<FusionPrediction> preds;
    std::size_t row = 0;
    for (const auto& line : csv_body(path, header)) {
        ++row;
        auto cells = split_csv_row(line);
        if (cells.size() != 4 + kNumLabels) {
            throw DataError(path + " row " + std::to_string(row) + ": wrong column count");
        }
        FusionPrediction p;
        p.participant_id = cells[0];
        p.chunk_index = static_cast<std::uint32_t>(parse_uint(cells[1], path, row));
        p.label = parse_label(cells[2], path, row);
        for (std::size_t i = 0; i < kNumLabels; ++i) {
            p.logits[i] = static_cast<float>(parse_double(cells[3 + i], path, row));
        }
        p.predicted = static_cast<std::size_t>(parse_label(cells[3 + kNumLabels], path, row));
        preds.push_back(std::move(p));
    }
    return preds;
}

namespace {

// Stage inputs are hashed as (config dump, seed, each file's path + bytes);
// any change reruns the stage and everything downstream of its outputs.
std::string stage_hash(const nlohmann::json& stage_cfg, std::uint64_t seed,
                       const std::vector<std::string>& input_files) {
    std::string blob = stage_cfg.dump();
    blob += "\nseed=" + std::to_string(seed) + "\n";
    for (const auto& f : input_files) {
        blob += f;
        blob += '\0';
        blob += read_text_file(f);
        blob += '\0';
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(blob)));
    return buf;
}

class StageContext {
public:
    StageContext(fs::path out_dir, std::uint64_t seed)
        : out_dir_(std::move(out_dir)), seed_(seed) {
        state_path_ = out_dir_ / "pipeline_state.json";
        if (fs::exists(state_path_)) {
            try {
                state_ = nlohmann::json::parse(read_text_file(state_path_.string()));
            } catch (const nlohmann::json::exception&) {
                state_ = nlohmann::json::object();  // stale state only forces reruns
            }
        } else {
            state_ = nlohmann::json::object();
        }
    }

    // Returns true when the stage was skipped.
    bool run(const std::string& name, const nlohmann::json& cfg,
             const std::vector<std::string>& inputs, const std::vector<std::string>& outputs,
             const std::function<void()>& body) {
        std::string hash;
        try {
            hash = stage_hash(cfg, seed_, inputs);
            bool fresh = state_.contains(name) && state_[name].value("hash", "") == hash;
            if (fresh) {
                for (const auto& out : outputs) {
                    if (!fs::exists(out)) {
                        fresh = false;
                        break;
                    }
                }
            }
            if (fresh) return true;
            body();
            for (const auto& out : outputs) {
                if (!fs::exists(out)) {
                    throw DataError("did not produce expected output " + out);
                }
            }
        } catch (const UsageError& e) {
            throw UsageError("stage " + name + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError("stage " + name + ": " + e.what());
        } catch (const NumericError& e) {
            throw NumericError("stage " + name + ": " + e.what());
        } catch (const std::exception& e) {
            throw DataError("stage " + name + ": " + e.what());
        }
        state_[name] = {{"hash", hash}, {"outputs", outputs}};
        write_text_file(state_path_.string(), state_.dump(2) + "\n");
        return false;
    }

private:
    fs::path out_dir_;
    fs::path state_path_;
    std::uint64_t seed_;
    nlohmann::json state_;
};

std::string resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path.string() : (base / path).string();
}

std::vector<std::string> sorted_cha_files(const std::string& dir) {
    if (!fs::is_directory(dir)) throw DataError("transcript directory not found: " + dir);
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".cha") {
            files.push_back(entry.path().string());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace

PipelineReport run_pipeline(const std::string& config_path, const std::string& out_dir,
                            int threads) {
    nlohmann::json cfg;
    try {
        cfg = nlohmann::json::parse(read_text_file(config_path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad pipeline config: " + std::string(e.what()));
    }
    const fs::path base = fs::path(config_path).parent_path();
    const fs::path out(out_dir);
    fs::create_directories(out);

    const auto seed = cfg.value("seed", std::uint64_t{0});
    const std::string corpus_path = resolve(base, cfg.value("corpus", "corpus.txt"));
    const std::string transcripts_dir = resolve(base, cfg.value("transcripts_dir", "transcripts"));
    const std::string labels_path = resolve(base, cfg.value("labels", "labels.csv"));
    const std::string features_path = resolve(base, cfg.value("features", "features.csv"));
    const std::string tids_path = resolve(base, cfg.value("transcript_ids", "transcript_ids.txt"));

    const nlohmann::json clean_cfg = cfg.value("clean", nlohmann::json::object());
    const nlohmann::json tok_cfg = cfg.value("tokenizer", nlohmann::json::object());
    const nlohmann::json enc_cfg = cfg.value("encoder", nlohmann::json::object());
    const nlohmann::json pre_cfg = cfg.value("pretrain", nlohmann::json::object());
    const nlohmann::json chunk_cfg = cfg.value("chunk", nlohmann::json::object());
    const nlohmann::json ft_cfg = cfg.value("finetune", nlohmann::json::object());
    const nlohmann::json audio_cfg = cfg.value("audio", nlohmann::json::object());
    const nlohmann::json fusion_cfg = cfg.value("fusion", nlohmann::json::object());

    const std::string clean_train = (out / "clean" / "train.txt").string();
    const std::string clean_valid = (out / "clean" / "valid.txt").string();
    const std::string clean_stats = (out / "clean" / "stats.json").string();
    const std::string tok_dir = (out / "tokenizer").string();
    const std::string tok_vocab = tok_dir + "/vocab.json";
    const std::string tok_merges = tok_dir + "/merges.txt";
    const std::string pretrained_dir = (out / "encoder_pretrained").string();
    const std::string pretrained_manifest = pretrained_dir + "/manifest.json";
    const std::string pretrained_weights = pretrained_dir + "/weights.bin";
    const std::string pretrain_log = (out / "pretrain_log.json").string();
    const std::string chunks_path = (out / "chunks.jsonl").string();
    const std::string finetuned_dir = (out / "encoder_finetuned").string();
    const std::string finetuned_manifest = finetuned_dir + "/manifest.json";
    const std::string finetuned_weights = finetuned_dir + "/weights.bin";
    const std::string text_split_path = (out / "text_split.json").string();
    const std::string text_preds_path = (out / "text_preds.csv").string();
    const std::string finetune_log = (out / "finetune_log.json").string();
    const std::string audio_dir = (out / "audio_model").string();
    const std::string audio_preds_path = (out / "audio_preds.csv").string();
    const std::string audio_log = (out / "audio_log.json").string();
    const std::string fusion_dir = (out / "fusion_model").string();
    const std::string fusion_preds_path = (out / "fusion_test_preds.csv").string();
    const std::string fusion_log = (out / "fusion_log.json").string();
    const std::string eval_dir = (out / "eval").string();
    const std::string summary_path = eval_dir + "/summary.json";

    StageContext ctx(out, seed);
    PipelineReport report;
    report.out_dir = out.string();
    auto record = [&](const std::string& name, bool skipped) {
        report.stages.push_back({name, skipped});
    };

    record("clean", ctx.run(
        "clean", clean_cfg, {corpus_path}, {clean_train, clean_valid, clean_stats}, [&] {
            CleanConfig cc;
            cc.max_words = clean_cfg.value("max_words", cc.max_words);
            cc.min_words = clean_cfg.value("min_words", cc.min_words);
            cc.min_alpha_ratio = clean_cfg.value("min_alpha_ratio", cc.min_alpha_ratio);
            DedupConfig dc;
            dc.threshold = clean_cfg.value("dedup_threshold", dc.threshold);
            CleanCorpus cleaned = clean_corpus(read_lines(corpus_path), cc, dc, threads);
            double holdout = clean_cfg.value("holdout_fraction", 0.1);
            auto [train, valid] = holdout_split(cleaned, holdout, seed);
            fs::create_directories(out / "clean");
            write_corpus(clean_train, train);
            write_corpus(clean_valid, valid);
            write_text_file(clean_stats, stats_json(cleaned.stats));
        }));

    record("tokenizer", ctx.run(
        "tokenizer", tok_cfg, {clean_train}, {tok_vocab, tok_merges}, [&] {
            auto vocab_size = tok_cfg.value("vocab_size", std::size_t{4096});
            TokenizerModel tok = train_bpe(read_lines(clean_train), vocab_size);
            save_tokenizer(tok, tok_dir);
        }));

    record("pretrain", ctx.run(
        "pretrain", nlohmann::json{{"pretrain", pre_cfg}, {"encoder", enc_cfg}},
        {clean_train, tok_vocab, tok_merges}, {pretrained_manifest, pretrained_weights,
                                               pretrain_log}, [&] {
            TokenizerModel tok = load_tokenizer(tok_dir);
            EncoderConfig ec = EncoderConfig::from_json(
                [&] {
                    nlohmann::json j = enc_cfg;
                    j["vocab_size"] = tok.vocab_size();
                    return j;
                }());
            TextEncoder<float> model(ec, seed);

            EncodeCache cache;
            std::vector<std::vector<std::int32_t>> docs;
            for (const auto& line : read_lines(clean_train)) {
                docs.push_back(encode(tok, line, &cache).ids);
            }
            PretrainResult res = mlm_pretrain(
                model, docs, pre_cfg.value("steps", std::size_t{100}),
                pre_cfg.value("batch_rows", std::size_t{8}),
                pre_cfg.value("seq_len", std::size_t{128}), pre_cfg.value("peak_lr", 6e-4),
                pre_cfg.value("warmup_steps", std::int64_t{10}),
                pre_cfg.value("mask_prob", 0.15), seed);
            save_text_encoder(model, pretrained_dir);
            nlohmann::json log = {{"losses", res.losses},
                                  {"skipped_batches", res.skipped_batches}};
            write_text_file(pretrain_log, log.dump(2) + "\n");
        }));

    std::vector<std::string> ingest_inputs = sorted_cha_files(transcripts_dir);
    ingest_inputs.push_back(labels_path);
    ingest_inputs.push_back(tok_vocab);
    ingest_inputs.push_back(tok_merges);
    record("ingest", ctx.run("ingest", chunk_cfg, ingest_inputs, {chunks_path}, [&] {
        TokenizerModel tok = load_tokenizer(tok_dir);
        auto labels = read_labels_csv(labels_path);
        auto chunks = ingest_transcripts(transcripts_dir, labels, tok,
                                         chunk_cfg.value("chunk_size", std::size_t{220}));
        if (chunks.empty()) throw DataError("no chunks came out of the transcripts");
        write_chunks_jsonl(chunks_path, chunks);
    }));

    record("finetune", ctx.run(
        "finetune", ft_cfg, {chunks_path, pretrained_manifest, pretrained_weights},
        {finetuned_manifest, finetuned_weights, text_split_path, text_preds_path, finetune_log},
        [&] {
            auto chunks = read_chunks_jsonl(chunks_path);
            SplitDataset split = stratified_split(chunks, seed);
            TextEncoder<float> model = load_text_encoder(pretrained_dir);
            FineTuneParams params;
            params.batch_size = ft_cfg.value("batch_size", params.batch_size);
            params.epochs = ft_cfg.value("epochs", params.epochs);
            params.peak_lr = ft_cfg.value("peak_lr", params.peak_lr);
            params.warmup_steps = ft_cfg.value("warmup_steps", params.warmup_steps);
            FineTuneResult res = finetune(model, split, params, seed);
            save_text_encoder(model, finetuned_dir);
            write_split_manifest(text_split_path, split, seed);
            write_chunk_preds_csv(text_preds_path, predict_chunks(model, chunks));
            nlohmann::json epochs = nlohmann::json::array();
            for (const auto& e : res.epochs) {
                epochs.push_back({{"train_loss", e.train_loss},
                                  {"train_acc", e.train_acc},
                                  {"val_loss", e.val_loss},
                                  {"val_acc", e.val_acc}});
            }
            nlohmann::json log = {{"epochs", epochs},
                                  {"best_epoch", res.best_epoch},
                                  {"best_val_loss", res.best_val_loss}};
            write_text_file(finetune_log, log.dump(2) + "\n");
        }));

    record("audio", ctx.run(
        "audio", audio_cfg, {features_path, tids_path},
        {audio_dir + "/manifest.json", audio_dir + "/weights.bin", audio_preds_path, audio_log},
        [&] {
            auto feats = load_features(features_path);
            if (feats.empty()) throw DataError("features csv has no rows");
            std::vector<std::string> tid_lines = read_lines(tids_path);
            std::set<std::string> tids(tid_lines.begin(), tid_lines.end());
            AudioSplit split = split_audio(feats, tids, seed);

            AudioMlpConfig mc;
            mc.input_dim = feats[0].values.size();
            mc.hidden1 = audio_cfg.value("hidden1", mc.hidden1);
            mc.hidden2 = audio_cfg.value("hidden2", mc.hidden2);
            mc.dropout = audio_cfg.value("dropout", mc.dropout);
            AudioMlp<float> model(mc, seed);

            AudioTrainParams params;
            params.epochs = audio_cfg.value("epochs", params.epochs);
            params.batch_size = audio_cfg.value("batch_size", params.batch_size);
            AudioTrainResult res = train_audio(model, split, params, seed);
            save_audio_model(model, split.stats, audio_dir);
            write_audio_preds_csv(audio_preds_path, predict_audio(model, feats, split.stats));
            nlohmann::json log = {{"lr_lower", res.lr.lower},
                                  {"lr_upper", res.lr.upper},
                                  {"lr_default", res.lr.default_lr},
                                  {"best_epoch", res.best_epoch},
                                  {"best_val_loss", res.best_val_loss}};
            write_text_file(audio_log, log.dump(2) + "\n");
        }));

    record("fusion", ctx.run(
        "fusion", fusion_cfg, {text_preds_path, audio_preds_path},
        {fusion_dir + "/manifest.json", fusion_dir + "/weights.bin", fusion_preds_path,
         fusion_log},
        [&] {
            FusionOptions opts;
            opts.probabilities = fusion_cfg.value("probabilities", false);
            opts.recording_level = fusion_cfg.value("recording_level", false);
            PairResult paired = pair_modalities(read_chunk_preds_csv(text_preds_path),
                                                read_audio_preds_csv(audio_preds_path), opts);
            if (paired.samples.empty()) throw DataError("no fusable samples after pairing");
            FusionSplit split = split_fusion_samples(paired.samples, seed);
            FusionModel<float> model(seed);
            FusionTrainParams params;
            params.epochs = fusion_cfg.value("epochs", params.epochs);
            params.batch_size = fusion_cfg.value("batch_size", params.batch_size);
            params.lr = fusion_cfg.value("lr", params.lr);
            FusionTrainResult res = train_fusion(model, split, params, seed);
            save_fusion_model(model, opts, fusion_dir);
            write_fusion_preds_csv(fusion_preds_path, predict_fusion(model, split.test));
            nlohmann::json log = {{"dropped_chunks", paired.dropped},
                                  {"best_epoch", res.best_epoch},
                                  {"best_val_loss", res.best_val_loss}};
            write_text_file(fusion_log, log.dump(2) + "\n");
        }));

    record("evaluate", ctx.run(
        "evaluate", nlohmann::json::object(),
        {text_preds_path, text_split_path, chunks_path, audio_preds_path, tids_path,
         fusion_preds_path},
        {summary_path}, [&] {
            std::vector<std::string> names(kLabelNames.begin(), kLabelNames.end());
            nlohmann::json summary;

            auto report_for = [&](const std::string& sub, const std::vector<int>& actual,
                                  const std::vector<int>& predicted) {
                ConfusionMatrix cm = confusion(actual, predicted, names);
                ClassMetrics m = metrics(cm);
                write_report(cm, m, fs::path(eval_dir) / sub);
                summary[sub] = {{"samples", actual.size()},
                                {"accuracy", format_percent(m.accuracy)}};
            };

            // text: the finetuned model's predictions on its held-out chunks
            auto text_preds = read_chunk_preds_csv(text_preds_path);
            auto all_chunks = read_chunks_jsonl(chunks_path);
            SplitDataset text_split = apply_split_manifest(text_split_path, all_chunks);
            std::set<std::pair<std::string, std::uint32_t>> test_keys;
            for (const auto& c : text_split.test) {
                test_keys.insert({c.participant_id, c.chunk_index});
            }
            std::vector<int> actual, predicted;
            for (const auto& p : text_preds) {
                if (!test_keys.count({p.participant_id, p.chunk_index})) continue;
                actual.push_back(static_cast<int>(p.label));
                predicted.push_back(static_cast<int>(p.predicted));
            }
            report_for("text", actual, predicted);

            // audio: recordings with transcripts form its test set
            std::vector<std::string> tid_lines = read_lines(tids_path);
            std::set<std::string> tids(tid_lines.begin(), tid_lines.end());
            actual.clear();
            predicted.clear();
            for (const auto& p : read_audio_preds_csv(audio_preds_path)) {
                if (!tids.count(p.participant_id)) continue;
                actual.push_back(static_cast<int>(p.label));
                predicted.push_back(static_cast<int>(p.predicted));
            }
            report_for("audio", actual, predicted);

            // fusion: its own held-out test samples
            actual.clear();
            predicted.clear();
            for (const auto& p : read_fusion_preds_csv(fusion_preds_path)) {
                actual.push_back(static_cast<int>(p.label));
                predicted.push_back(static_cast<int>(p.predicted));
            }
            report_for("fusion", actual, predicted);

            write_text_file(summary_path, summary.dump(2) + "\n");
        }));

    return report;
}

}  // namespace belab
