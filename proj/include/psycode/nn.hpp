#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "psycode/common.hpp"
#include "psycode/jsonl.hpp"
#include "psycode/random.hpp"

namespace psycode::nn {

/// Dense row-major tensor with an optional gradient buffer of equal shape.
template <typename T>
struct BasicTensor {
    std::vector<std::size_t> shape;
    std::vector<T> values;
    std::vector<T> grad;

    BasicTensor() = default;
    explicit BasicTensor(std::vector<std::size_t> s, T fill = T{0})
        : shape(std::move(s)), values(count(shape), fill) {}

    static std::size_t count(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

    std::size_t size() const { return values.size(); }
    bool has_grad() const { return !grad.empty(); }
    void enable_grad() { grad.assign(values.size(), T{0}); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T{0}); }

    T* data() { return values.data(); }
    const T* data() const { return values.data(); }
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

// ---------------------------------------------------------------------------
// 1-D convolution + ReLU + max over time

/// Cache of the forward pass needed by the backward pass.
struct ConvPoolCache {
    std::vector<std::size_t> argmax;  // per map; npos when ReLU clipped the max
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
};

/// input [seq_len x emb_dim], filters [width x emb_dim x n_maps], bias [n_maps].
/// Only the first `valid_windows` window positions compete in the max (the
/// rest cover padding). Output [n_maps] = max_t ReLU(conv(t)).
template <typename T>
void conv1d_maxpool_forward(std::span<const T> input, std::size_t seq_len, std::size_t emb_dim,
                            std::span<const T> filters, std::span<const T> bias, std::size_t width,
                            std::size_t n_maps, std::size_t valid_windows, std::span<T> output,
                            ConvPoolCache& cache) {
    if (width == 0 || seq_len < width) {
        throw std::invalid_argument("conv1d: sequence length " + std::to_string(seq_len) +
                                    " shorter than filter width " + std::to_string(width));
    }
    if (input.size() != seq_len * emb_dim || filters.size() != width * emb_dim * n_maps ||
        bias.size() != n_maps || output.size() != n_maps) {
        throw std::invalid_argument("conv1d: shape mismatch");
    }
    const std::size_t windows = std::min(seq_len - width + 1, std::max<std::size_t>(valid_windows, 1));
    std::vector<T> best(n_maps, -std::numeric_limits<T>::infinity());
    std::vector<std::size_t> best_t(n_maps, 0);
    std::vector<T> acc(n_maps);
    for (std::size_t t = 0; t < windows; ++t) {
        std::copy(bias.begin(), bias.end(), acc.begin());
        for (std::size_t w = 0; w < width; ++w) {
            const T* x = input.data() + (t + w) * emb_dim;
            const T* f = filters.data() + w * emb_dim * n_maps;
            for (std::size_t e = 0; e < emb_dim; ++e) {
                const T xv = x[e];
                if (xv == T{0}) continue;
                const T* row = f + e * n_maps;
                T* a = acc.data();
                for (std::size_t m = 0; m < n_maps; ++m) a[m] += xv * row[m];
            }
        }
        for (std::size_t m = 0; m < n_maps; ++m) {
            if (acc[m] > best[m]) {
                best[m] = acc[m];
                best_t[m] = t;
            }
        }
    }
    cache.argmax.assign(n_maps, ConvPoolCache::npos);
    for (std::size_t m = 0; m < n_maps; ++m) {
        if (best[m] > T{0}) {
            output[m] = best[m];
            cache.argmax[m] = best_t[m];
        } else {
            output[m] = T{0};
        }
    }
}

/// Accumulates gradients into grad_input (may be empty to skip), grad_filters
/// and grad_bias.
template <typename T>
void conv1d_maxpool_backward(std::span<const T> input, std::size_t emb_dim, std::span<const T> filters,
                             std::size_t width, std::size_t n_maps, const ConvPoolCache& cache,
                             std::span<const T> grad_output, std::span<T> grad_input,
                             std::span<T> grad_filters, std::span<T> grad_bias) {
    for (std::size_t m = 0; m < n_maps; ++m) {
        const std::size_t t = cache.argmax[m];
        const T g = grad_output[m];
        if (t == ConvPoolCache::npos || g == T{0}) continue;
        grad_bias[m] += g;
        for (std::size_t w = 0; w < width; ++w) {
            const std::size_t row = t + w;
            for (std::size_t e = 0; e < emb_dim; ++e) {
                const std::size_t fi = (w * emb_dim + e) * n_maps + m;
                grad_filters[fi] += g * input[row * emb_dim + e];
                if (!grad_input.empty()) grad_input[row * emb_dim + e] += g * filters[fi];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Dense layer, ReLU, softmax cross-entropy

/// y = W x + b with W [out x in] row-major.
template <typename T>
void dense_forward(std::span<const T> x, std::span<const T> weights, std::span<const T> bias,
                   std::span<T> y) {
    const std::size_t out = bias.size();
    const std::size_t in = x.size();
    if (weights.size() != out * in || y.size() != out) {
        throw std::invalid_argument("dense: dimension mismatch (in=" + std::to_string(in) +
                                    ", out=" + std::to_string(out) +
                                    ", weights=" + std::to_string(weights.size()) + ")");
    }
    for (std::size_t o = 0; o < out; ++o) {
        const T* w = weights.data() + o * in;
        T acc = bias[o];
        for (std::size_t i = 0; i < in; ++i) acc += w[i] * x[i];
        y[o] = acc;
    }
}

/// Accumulates dW, db and (unless empty) dx.
template <typename T>
void dense_backward(std::span<const T> x, std::span<const T> weights, std::span<const T> grad_y,
                    std::span<T> grad_x, std::span<T> grad_weights, std::span<T> grad_bias) {
    const std::size_t out = grad_y.size();
    const std::size_t in = x.size();
    for (std::size_t o = 0; o < out; ++o) {
        const T g = grad_y[o];
        grad_bias[o] += g;
        if (g == T{0}) continue;
        T* gw = grad_weights.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) gw[i] += g * x[i];
        if (!grad_x.empty()) {
            const T* w = weights.data() + o * in;
            for (std::size_t i = 0; i < in; ++i) grad_x[i] += g * w[i];
        }
    }
}

template <typename T>
void relu_forward(std::span<T> v) {
    for (auto& x : v) x = x > T{0} ? x : T{0};
}

/// grad *= 1[activation > 0], using the post-ReLU activations.
template <typename T>
void relu_backward(std::span<const T> activation, std::span<T> grad) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!(activation[i] > T{0})) grad[i] = T{0};
    }
}

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
    T mx = -std::numeric_limits<T>::infinity();
    for (T z : logits) mx = std::max(mx, z);
    std::vector<T> p(logits.size());
    T sum = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (auto& x : p) x /= sum;
    return p;
}

/// Cross-entropy of softmax(logits) against `label`; writes d loss / d logits.
template <typename T>
T softmax_xent(std::span<const T> logits, std::size_t label, std::span<T> grad_logits) {
    if (label >= logits.size()) throw std::invalid_argument("softmax_xent: label out of range");
    const auto p = softmax(logits);
    T mx = -std::numeric_limits<T>::infinity();
    for (T z : logits) mx = std::max(mx, z);
    T lse = 0;
    for (T z : logits) lse += std::exp(z - mx);
    const T loss = std::log(lse) + mx - logits[label];
    if (!grad_logits.empty()) {
        for (std::size_t i = 0; i < logits.size(); ++i) grad_logits[i] = p[i] - (i == label ? T{1} : T{0});
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Dropout

enum class Mode { train, eval };

/// Inverted dropout in place. Returns the per-element scale (0 or
/// 1/(1-rate)) for the backward pass; empty in eval mode or at rate 0.
template <typename T>
std::vector<T> dropout(std::span<T> values, double rate, Mode mode, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout rate must be in [0, 1)");
    if (mode == Mode::eval || rate == 0.0) return {};
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    std::vector<T> mask(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        mask[i] = rng.uniform() < rate ? T{0} : keep_scale;
        values[i] *= mask[i];
    }
    return mask;
}

template <typename T>
void dropout_backward(std::span<const T> mask, std::span<T> grad) {
    if (mask.empty()) return;
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= mask[i];
}

// ---------------------------------------------------------------------------
// Nesterov-accelerated Adam

template <typename T>
struct NamedParam {
    std::string name;
    BasicTensor<T>* tensor;
};

template <typename T>
struct NadamState {
    double learning_rate = 0.002;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::int64_t t = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
};

/// One Nadam update of every parameter from its gradient buffer:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   m_hat = b1 m / (1 - b1^(t+1)) + (1-b1) g / (1 - b1^t),  v_hat = v / (1 - b2^t)
///   p <- p - lr m_hat / (sqrt(v_hat) + eps)
template <typename T>
void nadam_step(std::span<const NamedParam<T>> params, NadamState<T>& state) {
    for (const auto& p : params) {
        if (p.tensor->grad.size() != p.tensor->values.size()) {
            throw std::invalid_argument("parameter " + p.name + " has no gradient buffer");
        }
        for (T g : p.tensor->grad) {
            if (!std::isfinite(static_cast<double>(g))) {
                throw TrainingError("non-finite gradient in parameter " + p.name);
            }
        }
    }
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.tensor->size(), T{0});
            state.v.emplace_back(p.tensor->size(), T{0});
        }
    }
    if (state.m.size() != params.size()) throw std::invalid_argument("nadam: parameter count changed");
    ++state.t;
    const double b1 = state.beta1;
    const double b2 = state.beta2;
    const double t = static_cast<double>(state.t);
    const double c_next = 1.0 - std::pow(b1, t + 1.0);
    const double c_now = 1.0 - std::pow(b1, t);
    const double c_v = 1.0 - std::pow(b2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& tensor = *params[k].tensor;
        auto& m = state.m[k];
        auto& v = state.v[k];
        if (m.size() != tensor.size()) throw std::invalid_argument("nadam: shape changed for " + params[k].name);
        for (std::size_t i = 0; i < tensor.size(); ++i) {
            const double g = tensor.grad[i];
            const double mi = b1 * m[i] + (1.0 - b1) * g;
            const double vi = b2 * v[i] + (1.0 - b2) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double m_hat = b1 * mi / c_next + (1.0 - b1) * g / c_now;
            const double v_hat = vi / c_v;
            tensor.values[i] -= static_cast<T>(state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon));
        }
    }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
};

/// Compares `analytic` with central differences of `loss` obtained by
/// perturbing `values` in place (restored afterwards). Relative error is
/// |a - n| / max(|a|, |n|, floor).
GradCheckResult check_gradient(const std::function<double()>& loss, std::span<double> values,
                               std::span<const double> analytic, double step = 1e-5, double floor = 1e-6);

// ---------------------------------------------------------------------------
// Checkpoints: u64 little-endian header length, JSON header, raw float data.

struct Checkpoint {
    Json meta = Json::object();
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor& get(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);

}  // namespace psycode::nn
