#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "belab/common.hpp"
#include "belab/rng.hpp"

// Dense kernels shared by the text encoder and the feature classifier.
// Everything runs on one thread; determinism outranks throughput at this
// scale. T is float in training and double in gradient-check builds.

namespace belab {

template <typename T>
struct Param {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<T> v, g;

    Param() = default;
    Param(std::string n, std::vector<std::size_t> s) : name(std::move(n)), shape(std::move(s)) {
        std::size_t total = 1;
        for (std::size_t d : shape) total *= d;
        v.assign(total, T(0));
        g.assign(total, T(0));
    }
    std::size_t size() const { return v.size(); }
    void zero_grad() { std::fill(g.begin(), g.end(), T(0)); }
    void init_normal(Rng& rng, double stddev) {
        for (auto& x : v) x = static_cast<T>(rng.normal(0.0, stddev));
    }
};

// C[m,n] = A[m,k] * B[k,n]
template <typename T>
void matmul_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    std::fill(c, c + m * n, T(0));
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            T aip = a[i * k + p];
            if (aip == T(0)) continue;
            const T* brow = b + p * n;
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

// C[m,n] = A[m,k] * B[n,k]^T
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const T* arow = a + i * k;
            const T* brow = b + j * k;
            T acc = T(0);
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            c[i * n + j] = acc;
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]  (accumulating: used for weight gradients)
template <typename T>
void matmul_tn_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            T aip = a[i * k + p];
            if (aip == T(0)) continue;
            const T* brow = b + i * n;
            T* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
}

// y[m,n] = x[m,k] * w[k,n] + b[n]
template <typename T>
void affine_forward(const T* x, const Param<T>& w, const Param<T>& b, T* y, std::size_t m,
                    std::size_t k, std::size_t n) {
    matmul_nn(x, w.v.data(), y, m, k, n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) y[i * n + j] += b.v[j];
    }
}

// Accumulates into w.g/b.g; writes dx (pass nullptr to skip input grads).
template <typename T>
void affine_backward(const T* x, const T* dy, Param<T>& w, Param<T>& b, T* dx, std::size_t m,
                     std::size_t k, std::size_t n) {
    matmul_tn_acc(x, dy, w.g.data(), m, k, n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) b.g[j] += dy[i * n + j];
    }
    if (dx) matmul_nt(dy, w.v.data(), dx, m, n, k);
}

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
struct LayerNormCache {
    std::vector<T> xhat;       // m*n
    std::vector<T> inv_sigma;  // m
};

template <typename T>
void layer_norm_forward(const T* x, const Param<T>& gamma, const Param<T>& beta, T* y,
                        LayerNormCache<T>& cache, std::size_t m, std::size_t n) {
    cache.xhat.resize(m * n);
    cache.inv_sigma.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = x + i * n;
        T mean = std::accumulate(row, row + n, T(0)) / static_cast<T>(n);
        T var = T(0);
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<T>(n);
        T inv = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        cache.inv_sigma[i] = inv;
        for (std::size_t j = 0; j < n; ++j) {
            T xh = (row[j] - mean) * inv;
            cache.xhat[i * n + j] = xh;
            y[i * n + j] = gamma.v[j] * xh + beta.v[j];
        }
    }
}

template <typename T>
void layer_norm_backward(const T* dy, Param<T>& gamma, Param<T>& beta,
                         const LayerNormCache<T>& cache, T* dx, std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* dyr = dy + i * n;
        const T* xh = cache.xhat.data() + i * n;
        T sum_dxh = T(0), sum_dxh_xh = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            T dxh = dyr[j] * gamma.v[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[j];
            gamma.g[j] += dyr[j] * xh[j];
            beta.g[j] += dyr[j];
        }
        T inv = cache.inv_sigma[i];
        T mean_dxh = sum_dxh / static_cast<T>(n);
        T mean_dxh_xh = sum_dxh_xh / static_cast<T>(n);
        for (std::size_t j = 0; j < n; ++j) {
            T dxh = dyr[j] * gamma.v[j];
            dx[i * n + j] = inv * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
        }
    }
}

template <typename T>
T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x / std::sqrt(T(2))));
}

template <typename T>
T gelu_grad(T x) {
    T phi_big = T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
    T phi_small = std::exp(-x * x / T(2)) / std::sqrt(T(2) * static_cast<T>(M_PI));
    return phi_big + x * phi_small;
}

// In-place row softmax with max-subtraction; -inf entries become exact 0.
template <typename T>
void softmax_rows(T* x, std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        T* row = x + i * n;
        T mx = *std::max_element(row, row + n);
        T sum = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
    }
}

// ds = p ⊙ (dp − rowsum(dp ⊙ p)), rows of length n
template <typename T>
void softmax_backward_rows(const T* p, const T* dp, T* ds, std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* pr = p + i * n;
        const T* dpr = dp + i * n;
        T dot = T(0);
        for (std::size_t j = 0; j < n; ++j) dot += dpr[j] * pr[j];
        for (std::size_t j = 0; j < n; ++j) ds[i * n + j] = pr[j] * (dpr[j] - dot);
    }
}

// loss = -log softmax(logits)[label]; grad = softmax - onehot (accumulated
// into grad scaled by weight). Max-subtraction keeps huge logits finite.
template <typename T>
T softmax_cross_entropy(const T* logits, std::size_t num_classes, std::size_t label, T* grad,
                        T weight = T(1)) {
    if (num_classes < 2) throw UsageError("cross-entropy needs at least 2 classes");
    if (label >= num_classes) {
        throw DataError("class label " + std::to_string(label) + " out of range for " +
                        std::to_string(num_classes) + " classes");
    }
    for (std::size_t j = 0; j < num_classes; ++j) {
        if (!std::isfinite(static_cast<double>(logits[j]))) {
            throw NumericError("non-finite logit in cross-entropy");
        }
    }
    T mx = *std::max_element(logits, logits + num_classes);
    T sum = T(0);
    for (std::size_t j = 0; j < num_classes; ++j) sum += std::exp(logits[j] - mx);
    T log_sum = std::log(sum);
    T loss = -(logits[label] - mx - log_sum);
    if (grad) {
        for (std::size_t j = 0; j < num_classes; ++j) {
            T p = std::exp(logits[j] - mx) / sum;
            grad[j] += weight * (p - (j == label ? T(1) : T(0)));
        }
    }
    return loss;
}

// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
// The mask is recorded for the backward pass.
template <typename T>
void dropout_forward(T* x, std::size_t n, double p, Rng& rng, std::vector<std::uint8_t>& mask) {
    if (p < 0.0 || p >= 1.0) throw UsageError("dropout probability must lie in [0,1)");
    mask.assign(n, 1);
    if (p == 0.0) return;
    T scale = static_cast<T>(1.0 / (1.0 - p));
    for (std::size_t i = 0; i < n; ++i) {
        if (rng.uniform01() < p) {
            mask[i] = 0;
            x[i] = T(0);
        } else {
            x[i] *= scale;
        }
    }
}

template <typename T>
void dropout_backward(T* dx, std::size_t n, double p, const std::vector<std::uint8_t>& mask) {
    if (p == 0.0) return;
    T scale = static_cast<T>(1.0 / (1.0 - p));
    for (std::size_t i = 0; i < n; ++i) dx[i] = mask[i] ? dx[i] * scale : T(0);
}

// Standalone convenience form: identity at inference.
std::vector<float> dropout_apply(const std::vector<float>& x, double p, bool training,
                                 std::uint64_t seed);

}  // namespace belab
