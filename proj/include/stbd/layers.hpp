#pragma once

// Transformer building blocks: scaled dot-product attention, multi-head
// attention, position-wise feed-forward, sinusoidal positions, masks.

#include <cmath>
#include <cstdint>
#include <vector>

#include "stbd/tensor.hpp"

namespace stbd {

struct AttentionConfig {
    std::size_t d_m = 64;
    std::size_t h = 4;

    AttentionConfig() = default;
    AttentionConfig(std::size_t d_model, std::size_t heads) : d_m(d_model), h(heads) {
        if (h == 0 || d_m == 0 || d_m % h != 0)
            throw UsageError("AttentionConfig: d_m must be positive and divisible by h");
    }
    std::size_t d_head() const { return d_m / h; }
};

// Boolean attend-allowed matrix, true = query row may look at key column.
struct Mask {
    std::size_t rows = 0, cols = 0;
    std::vector<std::uint8_t> allow;

    Mask() = default;
    Mask(std::size_t r, std::size_t c, bool value) : rows(r), cols(c), allow(r * c, value ? 1 : 0) {}

    bool at(std::size_t i, std::size_t j) const { return allow[i * cols + j] != 0; }
    void set(std::size_t i, std::size_t j, bool v) { allow[i * cols + j] = v ? 1 : 0; }

    static Mask all_allowed(std::size_t r, std::size_t c) { return Mask(r, c, true); }

    void validate() const {
        for (std::size_t i = 0; i < rows; ++i) {
            bool any = false;
            for (std::size_t j = 0; j < cols && !any; ++j) any = at(i, j);
            if (!any)
                throw UsageError("Mask: query row " + std::to_string(i) + " has no allowed key");
        }
    }
};

// Lower-triangular mask including the diagonal.
inline Mask causal_mask(std::size_t t) {
    if (t < 1) throw UsageError("causal_mask: t must be >= 1");
    Mask m(t, t, false);
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j <= i; ++j) m.set(i, j, true);
    return m;
}

struct AttentionResult {
    Tensor output;
    Tensor weights;  // t_q x t_k, rows sum to 1
};

// softmax(Q K^T / sqrt(d_k)) V with disallowed scores pushed to -1e9
// before the softmax, so masked weights come out (numerically) zero.
inline AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                            const Mask& mask) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2)
        throw ShapeError("scaled_dot_attention: rank-2 inputs required");
    if (q.dim(1) != k.dim(1))
        throw ShapeError("scaled_dot_attention: d_q != d_k (" + shape_str(q.shape()) + " vs " +
                         shape_str(k.shape()) + ")");
    if (k.dim(0) != v.dim(0))
        throw ShapeError("scaled_dot_attention: t_k != t_v");
    const std::size_t tq = q.dim(0), tk = k.dim(0);
    if (mask.rows != tq || mask.cols != tk)
        throw ShapeError("scaled_dot_attention: mask shape mismatch");
    mask.validate();

    Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(q.dim(1))));
    bool any_masked = false;
    for (auto a : mask.allow)
        if (!a) {
            any_masked = true;
            break;
        }
    if (any_masked) {
        Tensor bias({tq, tk});
        for (std::size_t i = 0; i < tq * tk; ++i) bias.data()[i] = mask.allow[i] ? 0.0 : -1e9;
        scores = add(scores, bias);
    }
    Tensor weights = softmax_stable(scores, 1);
    return {matmul(weights, v), weights};
}

struct MultiHeadResult {
    Tensor output;
    std::vector<Tensor> head_weights;
};

struct MultiHeadLayer {
    AttentionConfig cfg;
    std::vector<Tensor> w_q, w_k, w_v;  // per head, d_m x d_head
    Tensor w_o;                         // h*d_v x d_m

    MultiHeadLayer() = default;
    explicit MultiHeadLayer(const AttentionConfig& c) : cfg(c) {
        const std::size_t dh = cfg.d_head();
        for (std::size_t i = 0; i < cfg.h; ++i) {
            w_q.emplace_back(Shape{cfg.d_m, dh});
            w_k.emplace_back(Shape{cfg.d_m, dh});
            w_v.emplace_back(Shape{cfg.d_m, dh});
        }
        w_o = Tensor(Shape{cfg.h * dh, cfg.d_m});
    }

    MultiHeadResult forward(const Tensor& q, const Tensor& k, const Tensor& v,
                            const Mask& mask) const {
        std::vector<Tensor> heads;
        std::vector<Tensor> weights;
        heads.reserve(cfg.h);
        for (std::size_t i = 0; i < cfg.h; ++i) {
            auto r = scaled_dot_attention(matmul(q, w_q[i]), matmul(k, w_k[i]),
                                          matmul(v, w_v[i]), mask);
            heads.push_back(r.output);
            weights.push_back(r.weights);
        }
        Tensor cat = cfg.h == 1 ? heads[0] : concat_cols(heads);
        return {matmul(cat, w_o), std::move(weights)};
    }
};

struct FeedForwardLayer {
    Tensor w1, b1, w2, b2;
    double dropout_p = 0.0;

    FeedForwardLayer() = default;
    FeedForwardLayer(std::size_t d_m, std::size_t d_f, double p = 0.0) : dropout_p(p) {
        if (d_f == 0) throw UsageError("FeedForwardLayer: d_f must be positive");
        w1 = Tensor(Shape{d_m, d_f});
        b1 = Tensor(Shape{d_f});
        w2 = Tensor(Shape{d_f, d_m});
        b2 = Tensor(Shape{d_m});
    }

    // max(0, x W1 + b1) W2 + b2, dropout on the inner activation at train time
    Tensor forward(const Tensor& x, bool training, std::mt19937_64& rng) const {
        Tensor inner = relu(add(matmul(x, w1), b1));
        inner = dropout(inner, dropout_p, rng, training);
        return add(matmul(inner, w2), b2);
    }
};

// PE(pos,2i) = sin(pos / 10000^(2i/d_m)), PE(pos,2i+1) = cos(same).
inline Tensor sinusoidal_positions(std::size_t max_len, std::size_t d_m) {
    if (d_m % 2 != 0) throw UsageError("sinusoidal_positions: d_m must be even");
    Tensor pe({max_len, d_m});
    for (std::size_t pos = 0; pos < max_len; ++pos)
        for (std::size_t i = 0; i < d_m / 2; ++i) {
            const double angle =
                static_cast<double>(pos) /
                std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d_m));
            pe.data()[pos * d_m + 2 * i] = std::sin(angle);
            pe.data()[pos * d_m + 2 * i + 1] = std::cos(angle);
        }
    return pe;
}

}  // namespace stbd
