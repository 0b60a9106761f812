#include "belab/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "belab/bpe.hpp"
#include "belab/checkpoint.hpp"

namespace belab {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kMaskedScore = -1e9;

std::size_t argmax_row(const float* row, std::size_t n) {
    return static_cast<std::size_t>(std::max_element(row, row + n) - row);
}

}  // namespace

void EncoderConfig::validate() const {
    if (num_layers == 0 || num_heads == 0 || hidden_size == 0 || ffn_size == 0) {
        throw UsageError("encoder dimensions must be positive");
    }
    if (hidden_size % num_heads != 0) {
        throw UsageError("hidden_size must be divisible by num_heads");
    }
    if (vocab_size <= kNumSpecials) throw UsageError("vocab_size must exceed the special tokens");
    if (num_labels < 2) throw UsageError("num_labels must be at least 2");
    if (dropout < 0.0 || dropout >= 1.0) throw UsageError("dropout must lie in [0,1)");
    if (max_positions == 0) throw UsageError("max_positions must be positive");
}

nlohmann::json EncoderConfig::to_json() const {
    return {{"num_layers", num_layers},     {"num_heads", num_heads},
            {"hidden_size", hidden_size},   {"ffn_size", ffn_size},
            {"max_positions", max_positions}, {"vocab_size", vocab_size},
            {"num_labels", num_labels},     {"dropout", dropout}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
    EncoderConfig cfg;
    try {
        cfg.num_layers = j.value("num_layers", cfg.num_layers);
        cfg.num_heads = j.value("num_heads", cfg.num_heads);
        cfg.hidden_size = j.value("hidden_size", cfg.hidden_size);
        cfg.ffn_size = j.value("ffn_size", cfg.ffn_size);
        cfg.max_positions = j.value("max_positions", cfg.max_positions);
        cfg.vocab_size = j.value("vocab_size", cfg.vocab_size);
        cfg.num_labels = j.value("num_labels", cfg.num_labels);
        cfg.dropout = j.value("dropout", cfg.dropout);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad encoder config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

Batch Batch::filled(std::size_t rows, std::size_t cols, std::int32_t pad_id) {
    Batch b;
    b.rows = rows;
    b.cols = cols;
    b.ids.assign(rows * cols, pad_id);
    b.mask.assign(rows * cols, 0);
    return b;
}

std::optional<MlmPlan> make_mlm_batch(const Batch& clean, const EncoderConfig& cfg,
                                      double mask_prob, Rng& rng) {
    if (mask_prob < 0.0 || mask_prob > 1.0) throw UsageError("mask_prob must lie in [0,1]");
    MlmPlan plan;
    plan.batch = clean;
    auto non_specials = static_cast<std::uint64_t>(cfg.vocab_size - kNumSpecials);
    for (std::size_t i = 0; i < clean.ids.size(); ++i) {
        if (!clean.mask[i] || clean.ids[i] < static_cast<std::int32_t>(kNumSpecials)) continue;
        if (rng.uniform01() >= mask_prob) continue;
        plan.positions.push_back(i);
        plan.targets.push_back(clean.ids[i]);
        double r = rng.uniform01();
        if (r < 0.8) {
            plan.batch.ids[i] = kMaskId;
        } else if (r < 0.9) {
            plan.batch.ids[i] =
                static_cast<std::int32_t>(kNumSpecials + rng.below(non_specials));
        }  // else: keep the original id
    }
    if (plan.positions.empty()) return std::nullopt;
    return plan;
}

template <typename T>
TextEncoder<T>::TextEncoder(EncoderConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const std::size_t H = cfg_.hidden_size, F = cfg_.ffn_size, V = cfg_.vocab_size;
    const std::size_t P = cfg_.max_positions, L = cfg_.num_labels;

    Rng rng(seed);
    auto normal = [&](Param<T>& p) { p.init_normal(rng, kInitStd); };
    auto ones = [](Param<T>& p) { std::fill(p.v.begin(), p.v.end(), T(1)); };

    tok_emb_ = Param<T>("tok_emb", {V, H});
    normal(tok_emb_);
    pos_emb_ = Param<T>("pos_emb", {P, H});
    normal(pos_emb_);

    layers_.resize(cfg_.num_layers);
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
        auto name = [&](const char* s) { return "layer" + std::to_string(l) + "." + s; };
        LayerParams& lp = layers_[l];
        lp.ln1_g = Param<T>(name("ln1.g"), {H});
        ones(lp.ln1_g);
        lp.ln1_b = Param<T>(name("ln1.b"), {H});
        lp.wq = Param<T>(name("attn.wq"), {H, H});
        normal(lp.wq);
        lp.bq = Param<T>(name("attn.bq"), {H});
        lp.wk = Param<T>(name("attn.wk"), {H, H});
        normal(lp.wk);
        lp.bk = Param<T>(name("attn.bk"), {H});
        lp.wv = Param<T>(name("attn.wv"), {H, H});
        normal(lp.wv);
        lp.bv = Param<T>(name("attn.bv"), {H});
        lp.wo = Param<T>(name("attn.wo"), {H, H});
        normal(lp.wo);
        lp.bo = Param<T>(name("attn.bo"), {H});
        lp.ln2_g = Param<T>(name("ln2.g"), {H});
        ones(lp.ln2_g);
        lp.ln2_b = Param<T>(name("ln2.b"), {H});
        lp.w1 = Param<T>(name("ffn.w1"), {H, F});
        normal(lp.w1);
        lp.b1 = Param<T>(name("ffn.b1"), {F});
        lp.w2 = Param<T>(name("ffn.w2"), {F, H});
        normal(lp.w2);
        lp.b2 = Param<T>(name("ffn.b2"), {H});
    }
    ln_f_g_ = Param<T>("ln_f.g", {H});
    ones(ln_f_g_);
    ln_f_b_ = Param<T>("ln_f.b", {H});

    // Zero-initialized vocab projection: the model starts exactly uniform
    // over tokens, so the initial masked loss is ln(vocab_size).
    lm_w_ = Param<T>("lm.w", {H, V});
    lm_b_ = Param<T>("lm.b", {V});

    pool_w_ = Param<T>("pool.w", {H, H});
    normal(pool_w_);
    pool_b_ = Param<T>("pool.b", {H});
    cls_w_ = Param<T>("cls.w", {H, L});
    cls_b_ = Param<T>("cls.b", {L});
}

template <typename T>
std::vector<Param<T>*> TextEncoder<T>::params() {
    std::vector<Param<T>*> out{&tok_emb_, &pos_emb_};
    for (auto& lp : layers_) {
        for (Param<T>* p : {&lp.ln1_g, &lp.ln1_b, &lp.wq, &lp.bq, &lp.wk, &lp.bk, &lp.wv, &lp.bv,
                            &lp.wo, &lp.bo, &lp.ln2_g, &lp.ln2_b, &lp.w1, &lp.b1, &lp.w2,
                            &lp.b2}) {
            out.push_back(p);
        }
    }
    for (Param<T>* p : {&ln_f_g_, &ln_f_b_, &lm_w_, &lm_b_, &pool_w_, &pool_b_, &cls_w_, &cls_b_}) {
        out.push_back(p);
    }
    return out;
}

template <typename T>
void TextEncoder<T>::zero_grad() {
    for (auto* p : params()) p->zero_grad();
}

template <typename T>
Param<T>& TextEncoder<T>::param(const std::string& name) {
    for (auto* p : params()) {
        if (p->name == name) return *p;
    }
    throw UsageError("no parameter named '" + name + "'");
}

template <typename T>
void TextEncoder<T>::attention_forward(LayerCache& lc, const Batch& batch, LayerParams& lp,
                                       bool training, Rng* rng) {
    const std::size_t B = batch.rows, S = batch.cols, H = cfg_.hidden_size;
    const std::size_t nh = cfg_.num_heads, dh = cfg_.head_dim();
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    lc.q.resize(B * S * H);
    lc.k.resize(B * S * H);
    lc.v.resize(B * S * H);
    affine_forward(lc.ln1_out.data(), lp.wq, lp.bq, lc.q.data(), B * S, H, H);
    affine_forward(lc.ln1_out.data(), lp.wk, lp.bk, lc.k.data(), B * S, H, H);
    affine_forward(lc.ln1_out.data(), lp.wv, lp.bv, lc.v.data(), B * S, H, H);

    lc.probs.resize(B * nh * S * S);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < nh; ++h) {
            T* sc = lc.probs.data() + (b * nh + h) * S * S;
            for (std::size_t i = 0; i < S; ++i) {
                const T* qi = lc.q.data() + (b * S + i) * H + h * dh;
                for (std::size_t j = 0; j < S; ++j) {
                    if (!batch.mask[b * S + j]) {
                        sc[i * S + j] = static_cast<T>(kMaskedScore);
                        continue;
                    }
                    const T* kj = lc.k.data() + (b * S + j) * H + h * dh;
                    T dot = T(0);
                    for (std::size_t d = 0; d < dh; ++d) dot += qi[d] * kj[d];
                    sc[i * S + j] = dot * scale;
                }
            }
            softmax_rows(sc, S, S);
        }
    }

    lc.probs_dropped = lc.probs;
    if (training && cfg_.dropout > 0.0) {
        dropout_forward(lc.probs_dropped.data(), lc.probs_dropped.size(), cfg_.dropout, *rng,
                        lc.attn_drop);
    }

    lc.ctx.assign(B * S * H, T(0));
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < nh; ++h) {
            const T* pd = lc.probs_dropped.data() + (b * nh + h) * S * S;
            for (std::size_t i = 0; i < S; ++i) {
                T* ci = lc.ctx.data() + (b * S + i) * H + h * dh;
                for (std::size_t j = 0; j < S; ++j) {
                    T w = pd[i * S + j];
                    if (w == T(0)) continue;
                    const T* vj = lc.v.data() + (b * S + j) * H + h * dh;
                    for (std::size_t d = 0; d < dh; ++d) ci[d] += w * vj[d];
                }
            }
        }
    }
}

template <typename T>
void TextEncoder<T>::attention_backward(const LayerCache& lc, const Batch& batch, LayerParams& lp,
                                        const std::vector<T>& dctx, std::vector<T>& dln1_out) {
    const std::size_t B = batch.rows, S = batch.cols, H = cfg_.hidden_size;
    const std::size_t nh = cfg_.num_heads, dh = cfg_.head_dim();
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    std::vector<T> dprobs(B * nh * S * S, T(0));
    std::vector<T> dv(B * S * H, T(0));
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < nh; ++h) {
            const T* pd = lc.probs_dropped.data() + (b * nh + h) * S * S;
            T* dp = dprobs.data() + (b * nh + h) * S * S;
            for (std::size_t i = 0; i < S; ++i) {
                const T* dci = dctx.data() + (b * S + i) * H + h * dh;
                for (std::size_t j = 0; j < S; ++j) {
                    const T* vj = lc.v.data() + (b * S + j) * H + h * dh;
                    T* dvj = dv.data() + (b * S + j) * H + h * dh;
                    T acc = T(0);
                    T w = pd[i * S + j];
                    for (std::size_t d = 0; d < dh; ++d) {
                        acc += dci[d] * vj[d];
                        if (w != T(0)) dvj[d] += w * dci[d];
                    }
                    dp[i * S + j] = acc;
                }
            }
        }
    }
    if (cache_.training && cfg_.dropout > 0.0) {
        dropout_backward(dprobs.data(), dprobs.size(), cfg_.dropout, lc.attn_drop);
    }

    std::vector<T> dscores(B * nh * S * S);
    softmax_backward_rows(lc.probs.data(), dprobs.data(), dscores.data(), B * nh * S, S);

    std::vector<T> dq(B * S * H, T(0)), dk(B * S * H, T(0));
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t h = 0; h < nh; ++h) {
            const T* ds = dscores.data() + (b * nh + h) * S * S;
            for (std::size_t i = 0; i < S; ++i) {
                T* dqi = dq.data() + (b * S + i) * H + h * dh;
                const T* qi = lc.q.data() + (b * S + i) * H + h * dh;
                for (std::size_t j = 0; j < S; ++j) {
                    T g = ds[i * S + j] * scale;
                    if (g == T(0)) continue;
                    const T* kj = lc.k.data() + (b * S + j) * H + h * dh;
                    T* dkj = dk.data() + (b * S + j) * H + h * dh;
                    for (std::size_t d = 0; d < dh; ++d) {
                        dqi[d] += g * kj[d];
                        dkj[d] += g * qi[d];
                    }
                }
            }
        }
    }

    dln1_out.assign(B * S * H, T(0));
    std::vector<T> tmp(B * S * H);
    affine_backward(lc.ln1_out.data(), dq.data(), lp.wq, lp.bq, tmp.data(), B * S, H, H);
    for (std::size_t i = 0; i < tmp.size(); ++i) dln1_out[i] += tmp[i];
    affine_backward(lc.ln1_out.data(), dk.data(), lp.wk, lp.bk, tmp.data(), B * S, H, H);
    for (std::size_t i = 0; i < tmp.size(); ++i) dln1_out[i] += tmp[i];
    affine_backward(lc.ln1_out.data(), dv.data(), lp.wv, lp.bv, tmp.data(), B * S, H, H);
    for (std::size_t i = 0; i < tmp.size(); ++i) dln1_out[i] += tmp[i];
}

template <typename T>
const std::vector<T>& TextEncoder<T>::forward(const Batch& batch, bool training, Rng* rng) {
    const std::size_t B = batch.rows, S = batch.cols, H = cfg_.hidden_size;
    if (B == 0 || S == 0) throw UsageError("empty batch");
    if (S > cfg_.max_positions) {
        throw DataError("sequence length " + std::to_string(S) + " exceeds max_positions " +
                        std::to_string(cfg_.max_positions));
    }
    if (batch.ids.size() != B * S || batch.mask.size() != B * S) {
        throw UsageError("batch buffers disagree with rows*cols");
    }
    for (std::int32_t id : batch.ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size) {
            throw DataError("token id " + std::to_string(id) + " outside vocab");
        }
    }
    bool use_dropout = training && cfg_.dropout > 0.0;
    if (use_dropout && !rng) throw UsageError("training forward needs an rng for dropout");

    cache_ = Cache{};
    cache_.batch = batch;
    cache_.training = training;

    // position = count of non-pad tokens before this one in its row
    cache_.pos_index.assign(B * S, 0);
    for (std::size_t b = 0; b < B; ++b) {
        std::size_t next = 0;
        for (std::size_t s = 0; s < S; ++s) {
            if (batch.mask[b * S + s]) cache_.pos_index[b * S + s] = next++;
        }
    }

    std::vector<T> x(B * S * H);
    for (std::size_t r = 0; r < B * S; ++r) {
        const T* te = tok_emb_.v.data() + static_cast<std::size_t>(batch.ids[r]) * H;
        const T* pe = pos_emb_.v.data() + cache_.pos_index[r] * H;
        for (std::size_t d = 0; d < H; ++d) x[r * H + d] = te[d] + pe[d];
    }
    if (use_dropout) dropout_forward(x.data(), x.size(), cfg_.dropout, *rng, cache_.emb_drop);

    cache_.layers.resize(cfg_.num_layers);
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
        LayerCache& lc = cache_.layers[l];
        LayerParams& lp = layers_[l];
        lc.x_in = x;

        lc.ln1_out.resize(B * S * H);
        layer_norm_forward(lc.x_in.data(), lp.ln1_g, lp.ln1_b, lc.ln1_out.data(), lc.ln1, B * S,
                           H);
        attention_forward(lc, batch, lp, training, rng);

        std::vector<T> attn_out(B * S * H);
        affine_forward(lc.ctx.data(), lp.wo, lp.bo, attn_out.data(), B * S, H, H);
        if (use_dropout) {
            dropout_forward(attn_out.data(), attn_out.size(), cfg_.dropout, *rng,
                            lc.attn_out_drop);
        }
        lc.x_mid.resize(B * S * H);
        for (std::size_t i = 0; i < x.size(); ++i) lc.x_mid[i] = lc.x_in[i] + attn_out[i];

        lc.ln2_out.resize(B * S * H);
        layer_norm_forward(lc.x_mid.data(), lp.ln2_g, lp.ln2_b, lc.ln2_out.data(), lc.ln2, B * S,
                           H);
        const std::size_t F = cfg_.ffn_size;
        lc.ffn_pre.resize(B * S * F);
        affine_forward(lc.ln2_out.data(), lp.w1, lp.b1, lc.ffn_pre.data(), B * S, H, F);
        lc.ffn_act.resize(B * S * F);
        for (std::size_t i = 0; i < lc.ffn_pre.size(); ++i) lc.ffn_act[i] = gelu(lc.ffn_pre[i]);
        std::vector<T> ffn_out(B * S * H);
        affine_forward(lc.ffn_act.data(), lp.w2, lp.b2, ffn_out.data(), B * S, F, H);
        if (use_dropout) {
            dropout_forward(ffn_out.data(), ffn_out.size(), cfg_.dropout, *rng, lc.ffn_drop);
        }
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = lc.x_mid[i] + ffn_out[i];
    }

    cache_.hidden.resize(B * S * H);
    layer_norm_forward(x.data(), ln_f_g_, ln_f_b_, cache_.hidden.data(), cache_.ln_f, B * S, H);
    return cache_.hidden;
}

template <typename T>
void TextEncoder<T>::backward(std::vector<T> dhidden) {
    const Batch& batch = cache_.batch;
    const std::size_t B = batch.rows, S = batch.cols, H = cfg_.hidden_size;
    const std::size_t F = cfg_.ffn_size;
    bool use_dropout = cache_.training && cfg_.dropout > 0.0;

    std::vector<T> dx(B * S * H);
    layer_norm_backward(dhidden.data(), ln_f_g_, ln_f_b_, cache_.ln_f, dx.data(), B * S, H);

    for (std::size_t l = cfg_.num_layers; l-- > 0;) {
        LayerCache& lc = cache_.layers[l];
        LayerParams& lp = layers_[l];

        // dx holds the gradient of the block output x_mid + drop(ffn_out)
        std::vector<T> dffn_out = dx;
        if (use_dropout) dropout_backward(dffn_out.data(), dffn_out.size(), cfg_.dropout, lc.ffn_drop);
        std::vector<T> dffn_act(B * S * F);
        affine_backward(lc.ffn_act.data(), dffn_out.data(), lp.w2, lp.b2, dffn_act.data(), B * S,
                        F, H);
        for (std::size_t i = 0; i < dffn_act.size(); ++i) {
            dffn_act[i] *= gelu_grad(lc.ffn_pre[i]);
        }
        std::vector<T> dln2_out(B * S * H);
        affine_backward(lc.ln2_out.data(), dffn_act.data(), lp.w1, lp.b1, dln2_out.data(), B * S,
                        H, F);
        std::vector<T> dx_mid(B * S * H);
        layer_norm_backward(dln2_out.data(), lp.ln2_g, lp.ln2_b, lc.ln2, dx_mid.data(), B * S, H);
        for (std::size_t i = 0; i < dx.size(); ++i) dx_mid[i] += dx[i];

        // dx_mid is the gradient of x_in + drop(attn_out)
        std::vector<T> dattn_out = dx_mid;
        if (use_dropout) {
            dropout_backward(dattn_out.data(), dattn_out.size(), cfg_.dropout, lc.attn_out_drop);
        }
        std::vector<T> dctx(B * S * H);
        affine_backward(lc.ctx.data(), dattn_out.data(), lp.wo, lp.bo, dctx.data(), B * S, H, H);
        std::vector<T> dln1_out;
        attention_backward(lc, batch, lp, dctx, dln1_out);
        std::vector<T> dx_in(B * S * H);
        layer_norm_backward(dln1_out.data(), lp.ln1_g, lp.ln1_b, lc.ln1, dx_in.data(), B * S, H);
        for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = dx_mid[i] + dx_in[i];
    }

    if (use_dropout) dropout_backward(dx.data(), dx.size(), cfg_.dropout, cache_.emb_drop);
    for (std::size_t r = 0; r < B * S; ++r) {
        T* tg = tok_emb_.g.data() + static_cast<std::size_t>(batch.ids[r]) * H;
        T* pg = pos_emb_.g.data() + cache_.pos_index[r] * H;
        for (std::size_t d = 0; d < H; ++d) {
            tg[d] += dx[r * H + d];
            pg[d] += dx[r * H + d];
        }
    }
}

template <typename T>
double TextEncoder<T>::mlm_loss(const MlmPlan& plan) {
    forward(plan.batch, false, nullptr);
    const std::size_t H = cfg_.hidden_size, V = cfg_.vocab_size;
    const std::size_t n = plan.positions.size();
    std::vector<T> lm_in(n * H);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(cache_.hidden.data() + plan.positions[i] * H, H, lm_in.data() + i * H);
    }
    std::vector<T> logits(n * V);
    affine_forward(lm_in.data(), lm_w_, lm_b_, logits.data(), n, H, V);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        loss += static_cast<double>(softmax_cross_entropy<T>(
            logits.data() + i * V, V, static_cast<std::size_t>(plan.targets[i]),
            static_cast<T*>(nullptr)));
    }
    return loss / static_cast<double>(n);
}

template <typename T>
double TextEncoder<T>::mlm_loss_and_grads(const MlmPlan& plan, bool training, Rng* dropout_rng) {
    if (plan.positions.empty()) throw UsageError("mlm plan has no prediction positions");
    forward(plan.batch, training, dropout_rng);
    const std::size_t B = plan.batch.rows, S = plan.batch.cols;
    const std::size_t H = cfg_.hidden_size, V = cfg_.vocab_size;
    const std::size_t n = plan.positions.size();

    cache_.lm_positions = plan.positions;
    cache_.lm_in.resize(n * H);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(cache_.hidden.data() + plan.positions[i] * H, H, cache_.lm_in.data() + i * H);
    }
    std::vector<T> logits(n * V);
    affine_forward(cache_.lm_in.data(), lm_w_, lm_b_, logits.data(), n, H, V);

    std::vector<T> dlogits(n * V, T(0));
    double loss = 0.0;
    T weight = T(1) / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
        loss += static_cast<double>(
            softmax_cross_entropy(logits.data() + i * V, V,
                                  static_cast<std::size_t>(plan.targets[i]),
                                  dlogits.data() + i * V, weight));
    }
    loss /= static_cast<double>(n);

    std::vector<T> dlm_in(n * H);
    affine_backward(cache_.lm_in.data(), dlogits.data(), lm_w_, lm_b_, dlm_in.data(), n, H, V);
    std::vector<T> dhidden(B * S * H, T(0));
    for (std::size_t i = 0; i < n; ++i) {
        T* dst = dhidden.data() + plan.positions[i] * H;
        const T* src = dlm_in.data() + i * H;
        for (std::size_t d = 0; d < H; ++d) dst[d] += src[d];
    }
    backward(std::move(dhidden));
    return loss;
}

template <typename T>
std::vector<T> TextEncoder<T>::classify(const Batch& batch, bool training, Rng* dropout_rng) {
    forward(batch, training, dropout_rng);
    const std::size_t B = batch.rows, S = batch.cols, H = cfg_.hidden_size;
    const std::size_t L = cfg_.num_labels;

    cache_.p0.resize(B * H);
    for (std::size_t b = 0; b < B; ++b) {
        std::copy_n(cache_.hidden.data() + b * S * H, H, cache_.p0.data() + b * H);
    }
    cache_.pooled.resize(B * H);
    affine_forward(cache_.p0.data(), pool_w_, pool_b_, cache_.pooled.data(), B, H, H);
    for (auto& x : cache_.pooled) x = std::tanh(x);
    cache_.pooled_dropped = cache_.pooled;
    if (training && cfg_.dropout > 0.0) {
        if (!dropout_rng) throw UsageError("training forward needs an rng for dropout");
        dropout_forward(cache_.pooled_dropped.data(), cache_.pooled_dropped.size(), cfg_.dropout,
                        *dropout_rng, cache_.pool_drop);
    }
    std::vector<T> logits(B * L);
    affine_forward(cache_.pooled_dropped.data(), cls_w_, cls_b_, logits.data(), B, H, L);
    return logits;
}

template <typename T>
double TextEncoder<T>::classify_loss(const Batch& batch, const std::vector<std::size_t>& labels) {
    std::vector<T> logits = classify(batch, false, nullptr);
    const std::size_t L = cfg_.num_labels;
    double loss = 0.0;
    for (std::size_t b = 0; b < batch.rows; ++b) {
        loss += static_cast<double>(softmax_cross_entropy<T>(logits.data() + b * L, L, labels[b],
                                                             static_cast<T*>(nullptr)));
    }
    return loss / static_cast<double>(batch.rows);
}

template <typename T>
typename TextEncoder<T>::ClassifyOutcome TextEncoder<T>::classify_loss_and_grads(
    const Batch& batch, const std::vector<std::size_t>& labels, bool training, Rng* dropout_rng) {
    if (labels.size() != batch.rows) throw UsageError("labels size must match batch rows");
    std::vector<T> logits = classify(batch, training, dropout_rng);
    const std::size_t B = batch.rows, S = batch.cols, H = cfg_.hidden_size;
    const std::size_t L = cfg_.num_labels;

    std::vector<T> dlogits(B * L, T(0));
    double loss = 0.0;
    T weight = T(1) / static_cast<T>(B);
    for (std::size_t b = 0; b < B; ++b) {
        loss += static_cast<double>(softmax_cross_entropy(logits.data() + b * L, L, labels[b],
                                                          dlogits.data() + b * L, weight));
    }
    loss /= static_cast<double>(B);

    std::vector<T> dpooled(B * H);
    affine_backward(cache_.pooled_dropped.data(), dlogits.data(), cls_w_, cls_b_, dpooled.data(),
                    B, H, L);
    if (training && cfg_.dropout > 0.0) {
        dropout_backward(dpooled.data(), dpooled.size(), cfg_.dropout, cache_.pool_drop);
    }
    for (std::size_t i = 0; i < dpooled.size(); ++i) {
        dpooled[i] *= T(1) - cache_.pooled[i] * cache_.pooled[i];
    }
    std::vector<T> dp0(B * H);
    affine_backward(cache_.p0.data(), dpooled.data(), pool_w_, pool_b_, dp0.data(), B, H, H);

    std::vector<T> dhidden(B * S * H, T(0));
    for (std::size_t b = 0; b < B; ++b) {
        std::copy_n(dp0.data() + b * H, H, dhidden.data() + b * S * H);
    }
    backward(std::move(dhidden));
    return {loss, std::move(logits)};
}

template class TextEncoder<float>;
template class TextEncoder<double>;

Batch chunks_to_batch(const std::vector<LabeledChunk>& chunks, std::size_t begin,
                      std::size_t count, const EncoderConfig& cfg) {
    if (count == 0 || begin + count > chunks.size()) throw UsageError("bad batch slice");
    std::size_t chunk_len = chunks[begin].ids.size();
    std::size_t cols = chunk_len + 2;
    if (cols > cfg.max_positions) {
        throw DataError("chunk size " + std::to_string(chunk_len) +
                        " plus specials exceeds max_positions " +
                        std::to_string(cfg.max_positions));
    }
    Batch b = Batch::filled(count, cols, kPadId);
    for (std::size_t r = 0; r < count; ++r) {
        const auto& chunk = chunks[begin + r];
        if (chunk.ids.size() != chunk_len) {
            throw DataError("chunks in one batch must share a length");
        }
        b.ids[r * cols] = kBosId;
        std::copy(chunk.ids.begin(), chunk.ids.end(), b.ids.begin() + r * cols + 1);
        b.ids[r * cols + cols - 1] = kEosId;
        std::fill_n(b.mask.begin() + r * cols, cols, std::uint8_t{1});
    }
    return b;
}

namespace {

struct EvalOutcome {
    double loss = 0.0, acc = 0.0;
};

EvalOutcome evaluate_split(TextEncoder<float>& model, const std::vector<LabeledChunk>& chunks,
                           std::size_t batch_size) {
    EvalOutcome out;
    std::size_t correct = 0;
    const std::size_t L = model.config().num_labels;
    for (std::size_t at = 0; at < chunks.size(); at += batch_size) {
        std::size_t count = std::min(batch_size, chunks.size() - at);
        Batch batch = chunks_to_batch(chunks, at, count, model.config());
        std::vector<float> logits = model.classify(batch, false, nullptr);
        for (std::size_t r = 0; r < count; ++r) {
            auto label = static_cast<std::size_t>(chunks[at + r].label);
            out.loss += static_cast<double>(softmax_cross_entropy<float>(
                logits.data() + r * L, L, label, nullptr));
            if (argmax_row(logits.data() + r * L, L) == label) ++correct;
        }
    }
    out.loss /= static_cast<double>(chunks.size());
    out.acc = static_cast<double>(correct) / static_cast<double>(chunks.size());
    return out;
}

}  // namespace

FineTuneResult finetune(TextEncoder<float>& model, const SplitDataset& data,
                        const FineTuneParams& p, std::uint64_t seed) {
    if (data.train.empty() || data.validation.empty()) {
        throw DataError("fine-tuning needs non-empty train and validation splits");
    }
    if (p.batch_size == 0) throw UsageError("batch_size must be positive");

    const std::size_t n = data.train.size();
    const std::size_t steps_per_epoch = (n + p.batch_size - 1) / p.batch_size;
    const auto total = static_cast<std::int64_t>(p.epochs * steps_per_epoch);

    FineTuneResult result;
    Rng root(seed);
    Adam<float> adam;
    auto params = model.params();

    EvalOutcome initial = evaluate_split(model, data.validation, p.batch_size);
    result.best_val_loss = initial.loss;
    auto best_snapshot = snapshot_params(params);

    if (p.epochs == 0) return result;
    LrSchedule sched{p.peak_lr, std::clamp<std::int64_t>(p.warmup_steps, 1, total), total};

    std::vector<LabeledChunk> order = data.train;
    std::int64_t step = 0;
    for (std::size_t epoch = 1; epoch <= p.epochs; ++epoch) {
        Rng shuffle_rng = root.fork(epoch);
        shuffle_rng.shuffle(order);
        Rng drop_rng = root.fork(0x10000 + epoch);

        double train_loss = 0.0;
        std::size_t correct = 0;
        for (std::size_t at = 0; at < n; at += p.batch_size) {
            std::size_t count = std::min(p.batch_size, n - at);
            Batch batch = chunks_to_batch(order, at, count, model.config());
            std::vector<std::size_t> labels(count);
            for (std::size_t r = 0; r < count; ++r) {
                labels[r] = static_cast<std::size_t>(order[at + r].label);
            }
            ++step;
            model.zero_grad();
            auto outcome = model.classify_loss_and_grads(batch, labels, true, &drop_rng);
            adam.step(params, lr_at(sched, step));
            train_loss += outcome.loss * static_cast<double>(count);
            const std::size_t L = model.config().num_labels;
            for (std::size_t r = 0; r < count; ++r) {
                if (argmax_row(outcome.logits.data() + r * L, L) == labels[r]) ++correct;
            }
        }

        EvalOutcome val = evaluate_split(model, data.validation, p.batch_size);
        if (!std::isfinite(val.loss)) {
            std::ostringstream trace;
            trace << "validation loss became non-finite at epoch " << epoch << "; prior losses:";
            for (const auto& e : result.epochs) trace << " " << e.val_loss;
            throw NumericError(trace.str());
        }
        EpochStats stats;
        stats.train_loss = train_loss / static_cast<double>(n);
        stats.train_acc = static_cast<double>(correct) / static_cast<double>(n);
        stats.val_loss = val.loss;
        stats.val_acc = val.acc;
        result.epochs.push_back(stats);

        if (val.loss < result.best_val_loss) {
            result.best_val_loss = val.loss;
            result.best_epoch = epoch;
            best_snapshot = snapshot_params(params);
        }
    }
    restore_params(params, best_snapshot);
    return result;
}

PretrainResult mlm_pretrain(TextEncoder<float>& model,
                            const std::vector<std::vector<std::int32_t>>& docs,
                            std::size_t steps, std::size_t batch_rows, std::size_t seq_len,
                            double peak_lr, std::int64_t warmup_steps, double mask_prob,
                            std::uint64_t seed) {
    if (batch_rows == 0 || seq_len == 0) throw UsageError("batch_rows and seq_len must be positive");
    if (seq_len > model.config().max_positions) {
        throw DataError("seq_len exceeds the model's max_positions");
    }

    Rng root(seed);
    std::vector<std::size_t> doc_order(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) doc_order[i] = i;
    Rng doc_rng = root.fork(1);
    doc_rng.shuffle(doc_order);

    // pack the shuffled token stream into fixed rows, padding the tail
    std::vector<std::int32_t> stream;
    for (std::size_t i : doc_order) {
        stream.insert(stream.end(), docs[i].begin(), docs[i].end());
    }
    if (stream.empty()) throw DataError("pretraining corpus produced no tokens");
    std::size_t num_rows = (stream.size() + seq_len - 1) / seq_len;
    std::vector<std::int32_t> rows(num_rows * seq_len, kPadId);
    std::vector<std::uint8_t> row_mask(num_rows * seq_len, 0);
    for (std::size_t i = 0; i < stream.size(); ++i) {
        rows[i] = stream[i];
        row_mask[i] = 1;
    }

    PretrainResult result;
    Adam<float> adam;
    auto params = model.params();
    LrSchedule sched{peak_lr, std::clamp<std::int64_t>(warmup_steps, 1,
                                                       static_cast<std::int64_t>(steps)),
                     static_cast<std::int64_t>(steps)};
    Rng mask_rng = root.fork(2);
    Rng drop_rng = root.fork(3);

    std::size_t cursor = 0;
    for (std::size_t step = 1; step <= steps; ++step) {
        Batch batch = Batch::filled(batch_rows, seq_len, kPadId);
        for (std::size_t r = 0; r < batch_rows; ++r) {
            std::size_t src = (cursor + r) % num_rows;
            std::copy_n(rows.data() + src * seq_len, seq_len, batch.ids.begin() + r * seq_len);
            std::copy_n(row_mask.data() + src * seq_len, seq_len,
                        batch.mask.begin() + r * seq_len);
        }
        cursor = (cursor + batch_rows) % num_rows;

        auto plan = make_mlm_batch(batch, model.config(), mask_prob, mask_rng);
        if (!plan) {
            ++result.skipped_batches;
            continue;
        }
        model.zero_grad();
        double loss = model.mlm_loss_and_grads(*plan, true, &drop_rng);
        adam.step(params, lr_at(sched, static_cast<std::int64_t>(step)));
        result.losses.push_back(loss);
    }
    return result;
}

std::vector<ChunkPrediction> predict_chunks(TextEncoder<float>& model,
                                            const std::vector<LabeledChunk>& chunks,
                                            std::size_t batch_size) {
    std::vector<ChunkPrediction> preds;
    preds.reserve(chunks.size());
    const std::size_t L = model.config().num_labels;
    for (std::size_t at = 0; at < chunks.size(); at += batch_size) {
        std::size_t count = std::min(batch_size, chunks.size() - at);
        Batch batch = chunks_to_batch(chunks, at, count, model.config());
        std::vector<float> logits = model.classify(batch, false, nullptr);
        for (std::size_t r = 0; r < count; ++r) {
            ChunkPrediction p;
            p.participant_id = chunks[at + r].participant_id;
            p.chunk_index = chunks[at + r].chunk_index;
            p.label = chunks[at + r].label;
            p.logits.assign(logits.begin() + static_cast<std::ptrdiff_t>(r * L),
                            logits.begin() + static_cast<std::ptrdiff_t>((r + 1) * L));
            p.predicted = argmax_row(p.logits.data(), L);
            preds.push_back(std::move(p));
        }
    }
    return preds;
}

namespace {
constexpr const char* kEncoderKind = "text_encoder";
}

void save_text_encoder(TextEncoder<float>& model, const std::string& dir) {
    checkpoint_save(dir, kEncoderKind, model.config().to_json(), model.params());
}

TextEncoder<float> load_text_encoder(const std::string& dir) {
    Checkpoint ckpt = checkpoint_load(dir);
    EncoderConfig cfg = EncoderConfig::from_json(ckpt.config);
    TextEncoder<float> model(cfg, 0);
    checkpoint_restore(ckpt, kEncoderKind, model.params());
    return model;
}

}  // namespace belab
