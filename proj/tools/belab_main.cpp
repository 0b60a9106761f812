#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "belab/audio.hpp"
#include "belab/bpe.hpp"
#include "belab/corpus.hpp"
#include "belab/dataset.hpp"
#include "belab/encoder.hpp"
#include "belab/fixture.hpp"
#include "belab/fusion.hpp"
#include "belab/metrics.hpp"
#include "belab/pipeline.hpp"
#include "belab/sweep.hpp"

namespace fs = std::filesystem;
using namespace belab;

namespace {

struct Globals {
    std::uint64_t seed = 0;
    int threads = 1;
    bool deterministic = false;

    int effective_threads() const { return deterministic ? 1 : threads; }
};

double ce_from_logits(const std::vector<float>& logits, std::size_t label) {
    float top = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (float v : logits) sum += std::exp(static_cast<double>(v - top));
    return std::log(sum) - static_cast<double>(logits[label] - top);
}

nlohmann::json epochs_json(const std::vector<EpochStats>& epochs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : epochs) {
        arr.push_back({{"train_loss", e.train_loss},
                       {"train_acc", e.train_acc},
                       {"val_loss", e.val_loss},
                       {"val_acc", e.val_acc}});
    }
    return arr;
}

void cmd_corpus_clean(const Globals& g, const std::string& in, const std::string& out,
                      const std::string& stats_path, const CleanConfig& cc, double threshold,
                      double holdout_fraction, const std::string& holdout_out) {
    DedupConfig dc;
    dc.threshold = threshold;
    CleanCorpus cleaned = clean_corpus(read_lines(in), cc, dc, g.effective_threads());
    if (holdout_fraction > 0.0) {
        if (holdout_out.empty()) {
            throw UsageError("--holdout-fraction needs --holdout-out");
        }
        auto [train, valid] = holdout_split(cleaned, holdout_fraction, g.seed);
        write_corpus(out, train);
        write_corpus(holdout_out, valid);
    } else {
        write_corpus(out, cleaned);
    }
    if (!stats_path.empty()) write_text_file(stats_path, stats_json(cleaned.stats));
    const CleanStats& s = cleaned.stats;
    std::cout << "kept " << s.kept << " of " << s.input_lines << " lines (nontextual "
              << s.dropped_nontextual << ", length " << s.dropped_length << ", duplicate "
              << s.dropped_duplicate << ")\n";
}

void cmd_tok_train(const std::string& corpus, std::size_t vocab_size, const std::string& out) {
    TokenizerModel tok = train_bpe(read_lines(corpus), vocab_size);
    save_tokenizer(tok, out);
    std::cout << "trained tokenizer: vocab " << tok.vocab_size() << ", merges "
              << tok.merges.size() << "\n";
}

void cmd_tok_encode(const std::string& tok_dir, const std::string& in, const std::string& out) {
    TokenizerModel tok = load_tokenizer(tok_dir);
    EncodeCache cache;
    std::string text;
    std::size_t total = 0;
    for (const auto& line : read_lines(in)) {
        TokenSequence seq = encode(tok, line, &cache);
        for (std::size_t i = 0; i < seq.ids.size(); ++i) {
            if (i) text += ' ';
            text += std::to_string(seq.ids[i]);
        }
        text += '\n';
        total += seq.ids.size();
    }
    write_text_file(out, text);
    std::cout << "encoded " << total << " tokens\n";
}

void cmd_ingest_chunk(const std::string& transcripts, const std::string& labels_path,
                      const std::string& tok_dir, std::size_t chunk_size,
                      const std::vector<std::string>& speakers, bool pad_trailing,
                      const std::string& out) {
    TokenizerModel tok = load_tokenizer(tok_dir);
    auto labels = read_labels_csv(labels_path);
    auto chunks = ingest_transcripts(transcripts, labels, tok, chunk_size, speakers,
                                     pad_trailing);
    write_chunks_jsonl(out, chunks);
    std::cout << "wrote " << chunks.size() << " chunks of " << chunk_size << " tokens\n";
}

void cmd_encoder_pretrain(const Globals& g, const std::string& tok_dir,
                          const std::string& corpus, const std::string& out,
                          EncoderConfig ec, std::size_t steps, std::size_t batch_rows,
                          std::size_t seq_len, double peak_lr, std::int64_t warmup,
                          double mask_prob, const std::string& log_path) {
    TokenizerModel tok = load_tokenizer(tok_dir);
    ec.vocab_size = tok.vocab_size();
    TextEncoder<float> model(ec, g.seed);
    EncodeCache cache;
    std::vector<std::vector<std::int32_t>> docs;
    for (const auto& line : read_lines(corpus)) docs.push_back(encode(tok, line, &cache).ids);
    PretrainResult res =
        mlm_pretrain(model, docs, steps, batch_rows, seq_len, peak_lr, warmup, mask_prob, g.seed);
    save_text_encoder(model, out);
    if (!log_path.empty()) {
        nlohmann::json log = {{"losses", res.losses}, {"skipped_batches", res.skipped_batches}};
        write_text_file(log_path, log.dump(2) + "\n");
    }
    double first = res.losses.empty() ? 0.0 : res.losses.front();
    double last = res.losses.empty() ? 0.0 : res.losses.back();
    std::cout << "pretrained " << res.losses.size() << " steps, loss " << first << " -> " << last
              << "\n";
}

void cmd_encoder_finetune(const Globals& g, const std::string& ckpt, const std::string& chunks_path,
                          const std::string& out, const FineTuneParams& params,
                          bool group_by_participant, const std::string& manifest_path,
                          const std::string& log_path) {
    auto chunks = read_chunks_jsonl(chunks_path);
    SplitDataset split = stratified_split(chunks, g.seed, group_by_participant);
    TextEncoder<float> model = load_text_encoder(ckpt);
    FineTuneResult res = finetune(model, split, params, g.seed);
    save_text_encoder(model, out);
    if (!manifest_path.empty()) write_split_manifest(manifest_path, split, g.seed);
    if (!log_path.empty()) {
        nlohmann::json log = {{"epochs", epochs_json(res.epochs)},
                              {"best_epoch", res.best_epoch},
                              {"best_val_loss", res.best_val_loss}};
        write_text_file(log_path, log.dump(2) + "\n");
    }
    std::cout << "fine-tuned " << res.epochs.size() << " epochs, best validation loss "
              << res.best_val_loss << " at epoch " << res.best_epoch << "\n";
}

void cmd_encoder_predict(const std::string& ckpt, const std::string& chunks_path,
                         const std::string& out, std::size_t batch_size) {
    TextEncoder<float> model = load_text_encoder(ckpt);
    auto chunks = read_chunks_jsonl(chunks_path);
    auto preds = predict_chunks(model, chunks, batch_size);
    write_chunk_preds_csv(out, preds);
    std::cout << "predicted " << preds.size() << " chunks\n";
}

void cmd_audio_train(const Globals& g, const std::string& features_path,
                     const std::string& tids_path, const AudioTrainParams& params,
                     AudioMlpConfig mc, const std::string& out, const std::string& preds_out,
                     const std::string& log_path) {
    auto feats = load_features(features_path);
    if (feats.empty()) throw DataError("features csv has no rows");
    std::vector<std::string> tid_lines = read_lines(tids_path);
    std::set<std::string> tids(tid_lines.begin(), tid_lines.end());
    AudioSplit split = split_audio(feats, tids, g.seed);
    mc.input_dim = feats[0].values.size();
    AudioMlp<float> model(mc, g.seed);
    AudioTrainResult res = train_audio(model, split, params, g.seed);
    save_audio_model(model, split.stats, out);
    if (!preds_out.empty()) {
        write_audio_preds_csv(preds_out, predict_audio(model, feats, split.stats));
    }
    if (!log_path.empty()) {
        nlohmann::json log = {{"lr_lower", res.lr.lower},
                              {"lr_upper", res.lr.upper},
                              {"lr_default", res.lr.default_lr},
                              {"epochs", epochs_json(res.epochs)},
                              {"best_epoch", res.best_epoch},
                              {"best_val_loss", res.best_val_loss}};
        write_text_file(log_path, log.dump(2) + "\n");
    }
    std::cout << "trained audio model: lr " << res.lr.default_lr << " in [" << res.lr.lower
              << ", " << res.lr.upper << "], best validation loss " << res.best_val_loss << "\n";
}

void cmd_audio_predict(const std::string& ckpt, const std::string& features_path,
                       const std::string& out) {
    auto [model, stats] = load_audio_model(ckpt);
    auto preds = predict_audio(model, load_features(features_path), stats);
    write_audio_preds_csv(out, preds);
    std::cout << "predicted " << preds.size() << " recordings\n";
}

void relabel_samples(std::vector<FusionSample>& samples, const std::string& labels_path) {
    auto labels = read_labels_csv(labels_path);
    for (auto& s : samples) {
        auto it = labels.find(s.participant_id);
        if (it == labels.end()) {
            throw DataError("no label for participant " + s.participant_id);
        }
        s.label = it->second;
    }
}

void cmd_fusion_train(const Globals& g, const std::string& text_preds,
                      const std::string& audio_preds, const std::string& labels_path,
                      const FusionOptions& opts, const FusionTrainParams& params,
                      const std::string& out, const std::string& preds_out,
                      const std::string& log_path) {
    PairResult paired =
        pair_modalities(read_chunk_preds_csv(text_preds), read_audio_preds_csv(audio_preds), opts);
    if (paired.samples.empty()) throw DataError("no fusable samples after pairing");
    if (!labels_path.empty()) relabel_samples(paired.samples, labels_path);
    FusionSplit split = split_fusion_samples(paired.samples, g.seed);
    FusionModel<float> model(g.seed);
    FusionTrainResult res = train_fusion(model, split, params, g.seed);
    save_fusion_model(model, opts, out);
    if (!preds_out.empty()) write_fusion_preds_csv(preds_out, predict_fusion(model, split.test));
    if (!log_path.empty()) {
        nlohmann::json log = {{"dropped_chunks", paired.dropped},
                              {"epochs", epochs_json(res.epochs)},
                              {"best_epoch", res.best_epoch},
                              {"best_val_loss", res.best_val_loss}};
        write_text_file(log_path, log.dump(2) + "\n");
    }
    std::cout << "trained fusion layer on " << split.train.size() << " samples ("
              << paired.dropped << " chunks lacked audio), best validation loss "
              << res.best_val_loss << "\n";
}

void cmd_fusion_predict(const std::string& ckpt, const std::string& text_preds,
                        const std::string& audio_preds, const std::string& out) {
    auto [model, opts] = load_fusion_model(ckpt);
    PairResult paired =
        pair_modalities(read_chunk_preds_csv(text_preds), read_audio_preds_csv(audio_preds), opts);
    auto preds = predict_fusion(model, paired.samples);
    write_fusion_preds_csv(out, preds);
    std::cout << "predicted " << preds.size() << " samples (" << paired.dropped
              << " chunks lacked audio)\n";
}

// Accepts any of the three prediction CSVs; label and predicted columns are
// all the confusion matrix needs.
void cmd_eval(const std::string& preds_path, const std::string& out) {
    std::vector<std::string> lines = read_lines(preds_path);
    if (lines.empty()) throw DataError(preds_path + " is empty");
    std::vector<int> actual, predicted;
    auto try_read = [&](auto reader) {
        for (const auto& p : reader(preds_path)) {
            actual.push_back(static_cast<int>(p.label));
            predicted.push_back(static_cast<int>(p.predicted));
        }
    };
    if (lines[0].rfind("participant_id,chunk_index,", 0) == 0) {
        try {
            try_read(read_chunk_preds_csv);
        } catch (const DataError&) {
            actual.clear();
            predicted.clear();
            try_read(read_fusion_preds_csv);
        }
    } else {
        try_read(read_audio_preds_csv);
    }
    std::vector<std::string> names(kLabelNames.begin(), kLabelNames.end());
    ConfusionMatrix cm = confusion(actual, predicted, names);
    ClassMetrics m = metrics(cm);
    write_report(cm, m, out);
    std::cout << render_report_text(cm, m);
}

RunOutcome text_sweep_run(const nlohmann::json& config, std::uint64_t seed,
                          const std::string& run_dir, const std::string& base_ckpt,
                          const std::vector<LabeledChunk>& chunks) {
    SplitDataset split = stratified_split(chunks, seed);
    TextEncoder<float> model = load_text_encoder(base_ckpt);
    FineTuneParams params;
    params.batch_size = config.value("batch_size", params.batch_size);
    params.epochs = config.value("epochs", params.epochs);
    params.peak_lr = config.value("peak_lr", params.peak_lr);
    params.warmup_steps = config.value("warmup_steps", params.warmup_steps);
    FineTuneResult res = finetune(model, split, params, seed);
    save_text_encoder(model, run_dir + "/ckpt");

    auto preds = predict_chunks(model, split.validation, params.batch_size);
    double ce = 0.0;
    std::size_t correct = 0;
    for (const auto& p : preds) {
        ce += ce_from_logits(p.logits, static_cast<std::size_t>(p.label));
        if (p.predicted == static_cast<std::size_t>(p.label)) ++correct;
    }
    RunOutcome out;
    out.ok = true;
    out.val_ce = ce / static_cast<double>(preds.size());
    out.val_acc = static_cast<double>(correct) / static_cast<double>(preds.size());
    out.checkpoint = run_dir + "/ckpt";
    return out;
}

RunOutcome audio_sweep_run(const nlohmann::json& config, std::uint64_t seed,
                           const std::string& run_dir, const std::vector<FeatureVector>& feats,
                           const std::set<std::string>& tids) {
    AudioSplit split = split_audio(feats, tids, seed);
    AudioMlpConfig mc;
    mc.input_dim = feats[0].values.size();
    mc.hidden1 = config.value("hidden1", mc.hidden1);
    mc.hidden2 = config.value("hidden2", mc.hidden2);
    AudioMlp<float> model(mc, seed);
    AudioTrainParams params;
    params.epochs = config.value("epochs", params.epochs);
    params.batch_size = config.value("batch_size", params.batch_size);
    AudioTrainResult res = train_audio(model, split, params, seed);
    save_audio_model(model, split.stats, run_dir + "/ckpt");

    auto preds = predict_audio(model, split.validation, NormStats{
        std::vector<float>(mc.input_dim, 0.0f), std::vector<float>(mc.input_dim, 1.0f)});
    double ce = 0.0;
    std::size_t correct = 0;
    for (const auto& p : preds) {
        ce += ce_from_logits(p.logits, static_cast<std::size_t>(p.label));
        if (p.predicted == static_cast<std::size_t>(p.label)) ++correct;
    }
    RunOutcome out;
    out.ok = true;
    out.val_ce = ce / static_cast<double>(preds.size());
    out.val_acc = static_cast<double>(correct) / static_cast<double>(preds.size());
    out.checkpoint = run_dir + "/ckpt";
    return out;
}

RunOutcome fusion_sweep_run(const nlohmann::json& config, std::uint64_t seed,
                            const std::string& run_dir,
                            const std::vector<FusionSample>& samples) {
    FusionSplit split = split_fusion_samples(samples, seed);
    FusionModel<float> model(seed);
    FusionTrainParams params;
    params.epochs = config.value("epochs", params.epochs);
    params.batch_size = config.value("batch_size", params.batch_size);
    params.lr = config.value("lr", params.lr);
    FusionTrainResult res = train_fusion(model, split, params, seed);
    save_fusion_model(model, {}, run_dir + "/ckpt");

    auto preds = predict_fusion(model, split.validation);
    double ce = 0.0;
    std::size_t correct = 0;
    for (const auto& p : preds) {
        std::vector<float> logits(p.logits.begin(), p.logits.end());
        ce += ce_from_logits(logits, static_cast<std::size_t>(p.label));
        if (p.predicted == static_cast<std::size_t>(p.label)) ++correct;
    }
    RunOutcome out;
    out.ok = true;
    out.val_ce = ce / static_cast<double>(preds.size());
    out.val_acc = static_cast<double>(correct) / static_cast<double>(preds.size());
    out.checkpoint = run_dir + "/ckpt";
    return out;
}

void cmd_sweep(const Globals& g, const std::string& space_path, const std::string& trainer,
               std::size_t runs, const std::string& out, const std::string& base_ckpt,
               const std::string& chunks_path, const std::string& features_path,
               const std::string& tids_path, const std::string& text_preds,
               const std::string& audio_preds) {
    nlohmann::json space_json;
    try {
        space_json = nlohmann::json::parse(read_text_file(space_path));
    } catch (const nlohmann::json::exception& e) {
        throw DataError("bad sweep space: " + std::string(e.what()));
    }
    SweepSpace space = SweepSpace::from_json(space_json);

    TrainerFn fn;
    if (trainer == "text") {
        if (base_ckpt.empty() || chunks_path.empty()) {
            throw UsageError("text sweeps need --ckpt and --chunks");
        }
        auto chunks = read_chunks_jsonl(chunks_path);
        fn = [=](const nlohmann::json& config, std::uint64_t seed, const std::string& run_dir) {
            fs::create_directories(run_dir);
            return text_sweep_run(config, seed, run_dir, base_ckpt, chunks);
        };
    } else if (trainer == "audio") {
        if (features_path.empty() || tids_path.empty()) {
            throw UsageError("audio sweeps need --features and --transcript-ids");
        }
        auto feats = load_features(features_path);
        std::vector<std::string> tid_lines = read_lines(tids_path);
        std::set<std::string> tids(tid_lines.begin(), tid_lines.end());
        fn = [=](const nlohmann::json& config, std::uint64_t seed, const std::string& run_dir) {
            fs::create_directories(run_dir);
            return audio_sweep_run(config, seed, run_dir, feats, tids);
        };
    } else if (trainer == "fusion") {
        if (text_preds.empty() || audio_preds.empty()) {
            throw UsageError("fusion sweeps need --text-preds and --audio-preds");
        }
        PairResult paired = pair_modalities(read_chunk_preds_csv(text_preds),
                                            read_audio_preds_csv(audio_preds), {});
        auto samples = paired.samples;
        fn = [=](const nlohmann::json& config, std::uint64_t seed, const std::string& run_dir) {
            fs::create_directories(run_dir);
            return fusion_sweep_run(config, seed, run_dir, samples);
        };
    } else {
        throw UsageError("--trainer must be text, audio or fusion");
    }

    SweepResult result = run_sweep(space, fn, runs, g.seed, out);
    const SweepRun& best = result.runs[result.best_index];
    std::cout << "best run " << best.index << ": val ce " << best.outcome.val_ce << ", val acc "
              << best.outcome.val_acc << ", config " << best.config.dump() << "\n";
}

void cmd_pipeline(const Globals& g, const std::string& config, const std::string& out) {
    PipelineReport report = run_pipeline(config, out, g.effective_threads());
    for (const auto& s : report.stages) {
        std::cout << (s.skipped ? "skipped " : "ran     ") << s.name << "\n";
    }
    std::cout << "artifacts in " << report.out_dir << "\n";
}

void cmd_fixture(const Globals& g, const std::string& out, std::size_t lines, std::size_t dupes) {
    FixtureConfig cfg;
    cfg.corpus_lines = lines;
    cfg.near_duplicates = dupes;
    cfg.seed = g.seed ? g.seed : cfg.seed;
    write_fixture(out, cfg);
    std::cout << "fixture written to " << out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"psychiatric classification experiments: corpus, tokenizer, text encoder, "
                 "acoustic classifier, late fusion"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--seed", g.seed, "rng seed shared by every stage");
    app.add_option("--threads", g.threads, "worker threads for data cleaning");
    app.add_flag("--deterministic", g.deterministic,
                 "force single-threaded, bit-reproducible execution");

    // corpus clean
    auto* corpus_cmd = app.add_subcommand("corpus", "raw text cleaning");
    corpus_cmd->require_subcommand(1);
    auto* clean = corpus_cmd->add_subcommand("clean", "filter and deduplicate a line corpus");
    struct {
        std::string in, out, stats, holdout_out;
        CleanConfig cc;
        double threshold = 0.9, holdout = 0.0;
    } cl;
    clean->add_option("--in", cl.in)->required();
    clean->add_option("--out", cl.out)->required();
    clean->add_option("--stats", cl.stats);
    clean->add_option("--max-words", cl.cc.max_words);
    clean->add_option("--min-words", cl.cc.min_words);
    clean->add_option("--min-alpha-ratio", cl.cc.min_alpha_ratio);
    clean->add_option("--dedup-threshold", cl.threshold);
    clean->add_option("--holdout-fraction", cl.holdout);
    clean->add_option("--holdout-out", cl.holdout_out);
    clean->callback([&] {
        cmd_corpus_clean(g, cl.in, cl.out, cl.stats, cl.cc, cl.threshold, cl.holdout,
                         cl.holdout_out);
    });

    // tok train / encode
    auto* tok_cmd = app.add_subcommand("tok", "byte-level bpe tokenizer");
    tok_cmd->require_subcommand(1);
    auto* tok_train = tok_cmd->add_subcommand("train", "learn merges from a corpus");
    struct {
        std::string corpus, out;
        std::size_t vocab = 4096;
    } tt;
    tok_train->add_option("--corpus", tt.corpus)->required();
    tok_train->add_option("--vocab-size", tt.vocab)->required();
    tok_train->add_option("--out", tt.out)->required();
    tok_train->callback([&] { cmd_tok_train(tt.corpus, tt.vocab, tt.out); });

    auto* tok_encode = tok_cmd->add_subcommand("encode", "encode lines to token ids");
    struct {
        std::string tok, in, out;
    } te;
    tok_encode->add_option("--tokenizer", te.tok)->required();
    tok_encode->add_option("--in", te.in)->required();
    tok_encode->add_option("--out", te.out)->required();
    tok_encode->callback([&] { cmd_tok_encode(te.tok, te.in, te.out); });

    // ingest chunk
    auto* ingest_cmd = app.add_subcommand("ingest", "transcript ingestion");
    ingest_cmd->require_subcommand(1);
    auto* chunk = ingest_cmd->add_subcommand("chunk", "parse transcripts into token chunks");
    struct {
        std::string transcripts, labels, tok, out;
        std::size_t chunk_size = 220;
        std::vector<std::string> speakers;
        bool pad_trailing = false;
    } ic;
    chunk->add_option("--transcripts", ic.transcripts)->required();
    chunk->add_option("--labels", ic.labels)->required();
    chunk->add_option("--tokenizer", ic.tok)->required();
    chunk->add_option("--chunk-size", ic.chunk_size);
    chunk->add_option("--speaker", ic.speakers, "speaker codes to keep (default: all)");
    chunk->add_flag("--pad-trailing", ic.pad_trailing);
    chunk->add_option("--out", ic.out)->required();
    chunk->callback([&] {
        cmd_ingest_chunk(ic.transcripts, ic.labels, ic.tok, ic.chunk_size, ic.speakers,
                         ic.pad_trailing, ic.out);
    });

    // encoder pretrain / finetune / predict
    auto* enc_cmd = app.add_subcommand("encoder", "transformer text encoder");
    enc_cmd->require_subcommand(1);
    auto* pre = enc_cmd->add_subcommand("pretrain", "masked-token pretraining");
    struct {
        std::string tok, corpus, out, log;
        EncoderConfig ec;
        std::size_t steps = 100, batch_rows = 8, seq_len = 128;
        double peak_lr = 6e-4, mask_prob = 0.15;
        std::int64_t warmup = 10;
    } ep;
    pre->add_option("--tokenizer", ep.tok)->required();
    pre->add_option("--corpus", ep.corpus)->required();
    pre->add_option("--out", ep.out)->required();
    pre->add_option("--steps", ep.steps);
    pre->add_option("--batch-rows", ep.batch_rows);
    pre->add_option("--seq-len", ep.seq_len);
    pre->add_option("--peak-lr", ep.peak_lr);
    pre->add_option("--warmup", ep.warmup);
    pre->add_option("--mask-prob", ep.mask_prob);
    pre->add_option("--layers", ep.ec.num_layers);
    pre->add_option("--heads", ep.ec.num_heads);
    pre->add_option("--hidden", ep.ec.hidden_size);
    pre->add_option("--ffn", ep.ec.ffn_size);
    pre->add_option("--max-positions", ep.ec.max_positions);
    pre->add_option("--dropout", ep.ec.dropout);
    pre->add_option("--log", ep.log);
    pre->callback([&] {
        cmd_encoder_pretrain(g, ep.tok, ep.corpus, ep.out, ep.ec, ep.steps, ep.batch_rows,
                             ep.seq_len, ep.peak_lr, ep.warmup, ep.mask_prob, ep.log);
    });

    auto* fine = enc_cmd->add_subcommand("finetune", "supervised classification training");
    struct {
        std::string ckpt, chunks, out, manifest, log;
        FineTuneParams params;
        bool group = false;
    } ef;
    fine->add_option("--ckpt", ef.ckpt)->required();
    fine->add_option("--chunks", ef.chunks)->required();
    fine->add_option("--out", ef.out)->required();
    fine->add_option("--batch-size", ef.params.batch_size);
    fine->add_option("--epochs", ef.params.epochs);
    fine->add_option("--peak-lr", ef.params.peak_lr);
    fine->add_option("--warmup", ef.params.warmup_steps);
    fine->add_flag("--group-by-participant", ef.group);
    fine->add_option("--split-manifest", ef.manifest);
    fine->add_option("--log", ef.log);
    fine->callback([&] {
        cmd_encoder_finetune(g, ef.ckpt, ef.chunks, ef.out, ef.params, ef.group, ef.manifest,
                             ef.log);
    });

    auto* epr = enc_cmd->add_subcommand("predict", "per-chunk class logits");
    struct {
        std::string ckpt, chunks, out;
        std::size_t batch = 16;
    } eq;
    epr->add_option("--ckpt", eq.ckpt)->required();
    epr->add_option("--chunks", eq.chunks)->required();
    epr->add_option("--out", eq.out)->required();
    epr->add_option("--batch-size", eq.batch);
    epr->callback([&] { cmd_encoder_predict(eq.ckpt, eq.chunks, eq.out, eq.batch); });

    // audio train / predict
    auto* audio_cmd = app.add_subcommand("audio", "acoustic feature classifier");
    audio_cmd->require_subcommand(1);
    auto* at = audio_cmd->add_subcommand("train", "train the feature mlp");
    struct {
        std::string features, tids, out, preds, log;
        AudioTrainParams params;
        AudioMlpConfig mc;
    } aa;
    at->add_option("--features", aa.features)->required();
    at->add_option("--transcript-ids", aa.tids)->required();
    at->add_option("--epochs", aa.params.epochs);
    at->add_option("--batch-size", aa.params.batch_size);
    at->add_option("--hidden1", aa.mc.hidden1);
    at->add_option("--hidden2", aa.mc.hidden2);
    at->add_option("--dropout", aa.mc.dropout);
    at->add_option("--out", aa.out)->required();
    at->add_option("--preds-out", aa.preds);
    at->add_option("--log", aa.log);
    at->callback([&] {
        cmd_audio_train(g, aa.features, aa.tids, aa.params, aa.mc, aa.out, aa.preds, aa.log);
    });

    auto* ap = audio_cmd->add_subcommand("predict", "per-recording class logits");
    struct {
        std::string ckpt, features, out;
    } ab;
    ap->add_option("--ckpt", ab.ckpt)->required();
    ap->add_option("--features", ab.features)->required();
    ap->add_option("--out", ab.out)->required();
    ap->callback([&] { cmd_audio_predict(ab.ckpt, ab.features, ab.out); });

    // fusion train / predict
    auto* fusion_cmd = app.add_subcommand("fusion", "late fusion of text and audio outputs");
    fusion_cmd->require_subcommand(1);
    auto* ft = fusion_cmd->add_subcommand("train", "train the joint output layer");
    struct {
        std::string text, audio, labels, out, preds, log;
        FusionOptions opts;
        FusionTrainParams params;
    } ff;
    ft->add_option("--text-preds", ff.text)->required();
    ft->add_option("--audio-preds", ff.audio)->required();
    ft->add_option("--labels", ff.labels);
    ft->add_option("--epochs", ff.params.epochs);
    ft->add_option("--batch-size", ff.params.batch_size);
    ft->add_option("--lr", ff.params.lr);
    ft->add_flag("--probabilities", ff.opts.probabilities);
    ft->add_flag("--recording-level", ff.opts.recording_level);
    ft->add_option("--out", ff.out)->required();
    ft->add_option("--preds-out", ff.preds);
    ft->add_option("--log", ff.log);
    ft->callback([&] {
        cmd_fusion_train(g, ff.text, ff.audio, ff.labels, ff.opts, ff.params, ff.out, ff.preds,
                         ff.log);
    });

    auto* fp = fusion_cmd->add_subcommand("predict", "fused class logits");
    struct {
        std::string ckpt, text, audio, out;
    } fq;
    fp->add_option("--ckpt", fq.ckpt)->required();
    fp->add_option("--text-preds", fq.text)->required();
    fp->add_option("--audio-preds", fq.audio)->required();
    fp->add_option("--out", fq.out)->required();
    fp->callback([&] { cmd_fusion_predict(fq.ckpt, fq.text, fq.audio, fq.out); });

    // eval
    auto* ev = app.add_subcommand("eval", "confusion matrix and per-class metrics");
    struct {
        std::string preds, out;
    } ee;
    ev->add_option("--preds", ee.preds)->required();
    ev->add_option("--out", ee.out)->required();
    ev->callback([&] { cmd_eval(ee.preds, ee.out); });

    // sweep
    auto* sw = app.add_subcommand("sweep", "random hyperparameter search");
    struct {
        std::string space, trainer = "text", out;
        std::size_t runs = 15;
        std::string ckpt, chunks, features, tids, text_preds, audio_preds;
    } ss;
    sw->add_option("--space", ss.space)->required();
    sw->add_option("--trainer", ss.trainer, "text, audio or fusion");
    sw->add_option("--runs", ss.runs);
    sw->add_option("--out", ss.out)->required();
    sw->add_option("--ckpt", ss.ckpt, "base encoder checkpoint (text)");
    sw->add_option("--chunks", ss.chunks, "chunk jsonl (text)");
    sw->add_option("--features", ss.features, "features csv (audio)");
    sw->add_option("--transcript-ids", ss.tids, "test-set recordings (audio)");
    sw->add_option("--text-preds", ss.text_preds, "text logits csv (fusion)");
    sw->add_option("--audio-preds", ss.audio_preds, "audio logits csv (fusion)");
    sw->callback([&] {
        cmd_sweep(g, ss.space, ss.trainer, ss.runs, ss.out, ss.ckpt, ss.chunks, ss.features,
                  ss.tids, ss.text_preds, ss.audio_preds);
    });

    // pipeline
    auto* pl = app.add_subcommand("pipeline", "run every stage with hash-based skipping");
    struct {
        std::string config, out = "artifacts";
    } pp;
    pl->add_option("--config", pp.config)->required();
    pl->add_option("--out", pp.out);
    pl->callback([&] { cmd_pipeline(g, pp.config, pp.out); });

    // fixture
    auto* fx = app.add_subcommand("fixture", "write a synthetic end-to-end dataset");
    struct {
        std::string out;
        std::size_t lines = 600, dupes = 50;
    } xx;
    fx->add_option("--out", xx.out)->required();
    fx->add_option("--lines", xx.lines);
    fx->add_option("--dupes", xx.dupes);
    fx->callback([&] { cmd_fixture(g, xx.out, xx.lines, xx.dupes); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
