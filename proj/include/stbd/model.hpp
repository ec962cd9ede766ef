#pragma once

// Encoder stack plus a shared-weight bidirectional decoder. Both decoding
// directions run through one parameter set as independent streams; the
// direction is selected purely by the <L2R>/<R2L> start token.

#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stbd/data.hpp"
#include "stbd/layers.hpp"
#include "stbd/tensor.hpp"

namespace stbd {

enum class NormPlacement { Pre, Post };

struct ModelConfig {
    std::size_t n_enc_layers = 2;
    std::size_t n_dec_layers = 2;
    std::size_t d_m = 64;
    std::size_t d_f = 256;
    std::size_t h = 4;
    double dropout = 0.1;
    std::size_t vocab_size = 35;  // includes the 5 specials
    std::size_t input_dim = 240;  // stacked feature width after downsample3
    std::size_t max_positions = 256;
    NormPlacement norm = NormPlacement::Pre;
    bool tie_embeddings = false;
    std::uint64_t init_seed = 1;

    void validate() const {
        if (d_m == 0 || d_f == 0 || h == 0 || vocab_size == 0 || input_dim == 0 ||
            max_positions == 0)
            throw UsageError("ModelConfig: all sizes must be positive");
        if (d_m % h != 0) throw UsageError("ModelConfig: d_m must be divisible by h");
        if (d_m % 2 != 0) throw UsageError("ModelConfig: d_m must be even");
        if (vocab_size <= Vocabulary::kNumSpecials)
            throw UsageError("ModelConfig: vocab_size must exceed the special token count");
    }
};

struct EncoderOutput {
    Tensor hidden;  // n x d_m
    std::size_t frame_count = 0;
};

struct DecodeOutput {
    Tensor logits;                        // len x vocab
    std::optional<Tensor> cross_attention;  // len x frames, final layer, head-averaged
};

class Model {
public:
    explicit Model(const ModelConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        build();
        init_weights();
    }

    const ModelConfig& config() const { return cfg_; }

    // named trainable parameters, in a fixed registration order
    const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }

    Tensor param(const std::string& name) const {
        for (const auto& [n, t] : params_)
            if (n == name) return t;
        throw UsageError("Model: no parameter named " + name);
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : params_) n += t.numel();
        return n;
    }

    void zero_grad() {
        for (auto& [name, t] : params_) t.zero_grad();
    }

    EncoderOutput encode(const Tensor& features, bool training = false,
                         std::mt19937_64* rng = nullptr) const {
        if (features.rank() != 2 || features.dim(1) != cfg_.input_dim)
            throw ShapeError("encode: features must be n x " + std::to_string(cfg_.input_dim));
        const std::size_t n = features.dim(0);
        if (n == 0) throw UsageError("encode: empty input");
        if (n > cfg_.max_positions) throw UsageError("encode: input longer than max_positions");
        std::mt19937_64 fallback(0);
        std::mt19937_64& r = rng ? *rng : fallback;

        Tensor x = dropout(add(add(matmul(features, input_w_), input_b_), positions(n)),
                           cfg_.dropout, r, training);
        Mask full = Mask::all_allowed(n, n);
        for (std::size_t l = 0; l < cfg_.n_enc_layers; ++l) {
            x = sublayer(x, [&](const Tensor& in) { return enc_self_[l].forward(in, in, in, full).output; },
                         enc_ln1_[l], training, r);
            x = sublayer(x, [&](const Tensor& in) { return enc_ffn_[l].forward(in, training, r); },
                         enc_ln2_[l], training, r);
        }
        if (cfg_.norm == NormPlacement::Pre) x = apply_ln(x, enc_ln_final_);
        return {x, n};
    }

    // One decoding direction. Self-attention is causal over the stream's own
    // tokens only; cross-attention reads the shared encoder states.
    DecodeOutput decode_stream(const EncoderOutput& enc, const std::vector<int>& input_ids,
                               bool training = false, std::mt19937_64* rng = nullptr,
                               bool capture_attention = false) const {
        if (input_ids.empty()) throw UsageError("decode_stream: empty stream");
        if (input_ids.size() > cfg_.max_positions)
            throw UsageError("decode_stream: stream longer than max_positions");
        const std::size_t t = input_ids.size();
        std::mt19937_64 fallback(0);
        std::mt19937_64& r = rng ? *rng : fallback;

        Tensor x = dropout(add(embedding(embed_, input_ids), positions(t)), cfg_.dropout, r,
                           training);
        Mask causal = causal_mask(t);
        Mask cross = Mask::all_allowed(t, enc.frame_count);
        std::optional<Tensor> attn;
        for (std::size_t l = 0; l < cfg_.n_dec_layers; ++l) {
            x = sublayer(x, [&](const Tensor& in) { return dec_self_[l].forward(in, in, in, causal).output; },
                         dec_ln1_[l], training, r);
            const bool last = (l + 1 == cfg_.n_dec_layers);
            x = sublayer(x,
                         [&](const Tensor& in) {
                             auto mh = dec_cross_[l].forward(in, enc.hidden, enc.hidden, cross);
                             if (last && capture_attention) attn = average_heads(mh.head_weights);
                             return mh.output;
                         },
                         dec_ln2_[l], training, r);
            x = sublayer(x, [&](const Tensor& in) { return dec_ffn_[l].forward(in, training, r); },
                         dec_ln3_[l], training, r);
        }
        if (cfg_.norm == NormPlacement::Pre) x = apply_ln(x, dec_ln_final_);
        Tensor logits = cfg_.tie_embeddings ? matmul(x, transpose(embed_))
                                            : add(matmul(x, out_w_), out_b_);
        return {logits, attn};
    }

    std::pair<DecodeOutput, DecodeOutput> decode_bidirectional(
        const EncoderOutput& enc, const DecoderStream& l2r, const DecoderStream& r2l,
        bool training = false, std::mt19937_64* rng = nullptr) const {
        if (l2r.input.empty() || r2l.input.empty())
            throw UsageError("decode_bidirectional: empty stream");
        return {decode_stream(enc, l2r.input, training, rng),
                decode_stream(enc, r2l.input, training, rng)};
    }

private:
    struct LnParams {
        Tensor gain, bias;
    };

    Tensor positions(std::size_t t) const {
        Tensor pe({t, cfg_.d_m});
        std::copy_n(pos_table_.data().data(), t * cfg_.d_m, pe.data().data());
        return pe;
    }

    Tensor apply_ln(const Tensor& x, const LnParams& ln) const {
        return layer_norm(x, ln.gain, ln.bias);
    }

    // residual dropout on the sublayer output before the add
    Tensor sublayer(const Tensor& x, const std::function<Tensor(const Tensor&)>& fn,
                    const LnParams& ln, bool training, std::mt19937_64& rng) const {
        if (cfg_.norm == NormPlacement::Pre)
            return add(x, dropout(fn(apply_ln(x, ln)), cfg_.dropout, rng, training));
        return apply_ln(add(x, dropout(fn(x), cfg_.dropout, rng, training)), ln);
    }

    static Tensor average_heads(const std::vector<Tensor>& weights) {
        Tensor acc = weights[0];
        for (std::size_t i = 1; i < weights.size(); ++i) acc = add(acc, weights[i]);
        return scale(acc, 1.0 / static_cast<double>(weights.size()));
    }

    Tensor reg(const std::string& name, Shape shape) {
        Tensor t(std::move(shape), 0.0, true);
        params_.emplace_back(name, t);
        return t;
    }

    void reg_mha(const std::string& prefix, MultiHeadLayer& mha) {
        mha = MultiHeadLayer(AttentionConfig(cfg_.d_m, cfg_.h));
        const std::size_t dh = mha.cfg.d_head();
        for (std::size_t i = 0; i < cfg_.h; ++i) {
            mha.w_q[i] = reg(prefix + ".wq." + std::to_string(i), {cfg_.d_m, dh});
            mha.w_k[i] = reg(prefix + ".wk." + std::to_string(i), {cfg_.d_m, dh});
            mha.w_v[i] = reg(prefix + ".wv." + std::to_string(i), {cfg_.d_m, dh});
        }
        mha.w_o = reg(prefix + ".wo", {cfg_.h * dh, cfg_.d_m});
    }

    void reg_ffn(const std::string& prefix, FeedForwardLayer& ffn) {
        ffn = FeedForwardLayer(cfg_.d_m, cfg_.d_f, cfg_.dropout);
        ffn.w1 = reg(prefix + ".w1", {cfg_.d_m, cfg_.d_f});
        ffn.b1 = reg(prefix + ".b1", {cfg_.d_f});
        ffn.w2 = reg(prefix + ".w2", {cfg_.d_f, cfg_.d_m});
        ffn.b2 = reg(prefix + ".b2", {cfg_.d_m});
    }

    LnParams reg_ln(const std::string& prefix) {
        LnParams ln;
        ln.gain = reg(prefix + ".gain", {cfg_.d_m});
        ln.bias = reg(prefix + ".bias", {cfg_.d_m});
        return ln;
    }

    void build() {
        input_w_ = reg("input.w", {cfg_.input_dim, cfg_.d_m});
        input_b_ = reg("input.b", {cfg_.d_m});
        embed_ = reg("embed", {cfg_.vocab_size, cfg_.d_m});
        for (std::size_t l = 0; l < cfg_.n_enc_layers; ++l) {
            const std::string p = "enc." + std::to_string(l);
            enc_self_.emplace_back();
            reg_mha(p + ".self", enc_self_.back());
            enc_ln1_.push_back(reg_ln(p + ".ln1"));
            enc_ffn_.emplace_back();
            reg_ffn(p + ".ffn", enc_ffn_.back());
            enc_ln2_.push_back(reg_ln(p + ".ln2"));
        }
        enc_ln_final_ = reg_ln("enc.ln_final");
        for (std::size_t l = 0; l < cfg_.n_dec_layers; ++l) {
            const std::string p = "dec." + std::to_string(l);
            dec_self_.emplace_back();
            reg_mha(p + ".self", dec_self_.back());
            dec_ln1_.push_back(reg_ln(p + ".ln1"));
            dec_cross_.emplace_back();
            reg_mha(p + ".cross", dec_cross_.back());
            dec_ln2_.push_back(reg_ln(p + ".ln2"));
            dec_ffn_.emplace_back();
            reg_ffn(p + ".ffn", dec_ffn_.back());
            dec_ln3_.push_back(reg_ln(p + ".ln3"));
        }
        dec_ln_final_ = reg_ln("dec.ln_final");
        if (!cfg_.tie_embeddings) {
            out_w_ = reg("out.w", {cfg_.d_m, cfg_.vocab_size});
            out_b_ = reg("out.b", {cfg_.vocab_size});
        }
        pos_table_ = sinusoidal_positions(cfg_.max_positions, cfg_.d_m);
    }

    void init_weights() {
        std::mt19937_64 rng(cfg_.init_seed);
        for (auto& [name, t] : params_) {
            const bool is_bias = t.rank() == 1 && name.find(".gain") == std::string::npos;
            const bool is_gain = name.find(".gain") != std::string::npos;
            if (is_gain) {
                std::fill(t.data().begin(), t.data().end(), 1.0);
            } else if (is_bias) {
                std::fill(t.data().begin(), t.data().end(), 0.0);
            } else if (name == "embed") {
                // unit variance keeps token identity comparable to the
                // positional encoding that is added on top
                std::normal_distribution<double> dist(0.0, 1.0);
                for (auto& v : t.data()) v = dist(rng);
            } else {
                // Xavier/Glorot uniform
                const double fan_in = static_cast<double>(t.dim(0));
                const double fan_out = static_cast<double>(t.dim(1));
                const double limit = std::sqrt(6.0 / (fan_in + fan_out));
                std::uniform_real_distribution<double> dist(-limit, limit);
                for (auto& v : t.data()) v = dist(rng);
            }
        }
    }

    ModelConfig cfg_;
    std::vector<std::pair<std::string, Tensor>> params_;

    Tensor input_w_, input_b_, embed_, out_w_, out_b_, pos_table_;
    std::vector<MultiHeadLayer> enc_self_, dec_self_, dec_cross_;
    std::vector<FeedForwardLayer> enc_ffn_, dec_ffn_;
    std::vector<LnParams> enc_ln1_, enc_ln2_, dec_ln1_, dec_ln2_, dec_ln3_;
    LnParams enc_ln_final_, dec_ln_final_;
};

}  // namespace stbd
