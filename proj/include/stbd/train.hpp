#pragma once

// Joint bidirectional loss, Adam with the warmup schedule, dynamic
// length-based batching, the epoch loop with dev-CER tracking, and
// best-N checkpoint selection.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <vector>

#include "stbd/checkpoint.hpp"
#include "stbd/data.hpp"
#include "stbd/decode.hpp"
#include "stbd/model.hpp"
#include "stbd/tensor.hpp"

namespace stbd {

struct OptimizerConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
    double k = 1.0;
    std::size_t warmup_steps = 400;  // paper full-scale value: 16000
    double clip_norm = 5.0;          // 0 disables clipping

    void validate() const {
        if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0)
            throw UsageError("OptimizerConfig: betas must lie in (0,1)");
        if (eps <= 0.0) throw UsageError("OptimizerConfig: eps must be positive");
        if (warmup_steps < 1) throw UsageError("OptimizerConfig: warmup_steps must be >= 1");
    }
};

struct LossConfig {
    double alpha = 0.5;
    double label_smoothing = 0.0;

    void validate() const {
        if (alpha <= 0.0 || alpha >= 1.0) throw UsageError("LossConfig: alpha must lie in (0,1)");
        if (label_smoothing < 0.0 || label_smoothing >= 1.0)
            throw UsageError("LossConfig: label_smoothing must lie in [0,1)");
    }
};

// lr = k * min(step^-0.5, step * warmup^-1.5)
inline double lr_at(std::size_t step, const OptimizerConfig& cfg) {
    if (step == 0) throw UsageError("lr_at: step must be >= 1");
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(cfg.warmup_steps);
    return cfg.k * std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
}

// L_total = alpha * L_L2R + (1-alpha) * L_R2L, each a mean token-level
// cross-entropy over non-pad positions.
inline Tensor joint_loss(const Tensor& logits_l2r, const std::vector<int>& targets_l2r,
                         const std::vector<std::uint8_t>& mask_l2r, const Tensor& logits_r2l,
                         const std::vector<int>& targets_r2l,
                         const std::vector<std::uint8_t>& mask_r2l, const LossConfig& cfg) {
    cfg.validate();
    std::size_t n_l2r = 0, n_r2l = 0;
    Tensor ce_l2r =
        cross_entropy_sum(logits_l2r, targets_l2r, mask_l2r, &n_l2r, cfg.label_smoothing);
    Tensor ce_r2l =
        cross_entropy_sum(logits_r2l, targets_r2l, mask_r2l, &n_r2l, cfg.label_smoothing);
    return add(scale(ce_l2r, cfg.alpha / static_cast<double>(n_l2r)),
               scale(ce_r2l, (1.0 - cfg.alpha) / static_cast<double>(n_r2l)));
}

// ---- Adam -----------------------------------------------------------------

struct AdamState {
    std::size_t step = 0;
    std::vector<std::vector<double>> m, v;  // per parameter, data-shaped
};

inline void adam_step(AdamState& state, const std::vector<std::pair<std::string, Tensor>>& params,
                      double lr, const OptimizerConfig& cfg) {
    if (lr <= 0.0) throw UsageError("adam_step: lr must be positive");
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].second.numel(), 0.0);
            state.v[i].assign(params[i].second.numel(), 0.0);
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor p = params[i].second;
        if (p.grad().empty()) continue;  // unreachable parameter this step
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < p.numel(); ++j) {
            const double g = p.grad()[j];
            if (!std::isfinite(g))
                throw NumericError("adam_step: non-finite gradient in parameter '" +
                                   params[i].first + "'");
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p.data()[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

inline double clip_gradients(const std::vector<std::pair<std::string, Tensor>>& params,
                             double max_norm) {
    double sq = 0.0;
    for (const auto& [name, p] : params)
        for (double g : p.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double s = max_norm / norm;
        for (const auto& [name, p] : params) {
            Tensor t = p;
            for (auto& g : t.grad()) g *= s;
        }
    }
    return norm;
}

// ---- batching ---------------------------------------------------------------

// Sort by frame length, then pack greedily under the frame cap. Every
// utterance appears exactly once; batch order is shuffled per epoch by
// the caller's seeded generator.
inline std::vector<std::vector<std::size_t>> make_batches(const Corpus& corpus,
                                                          const std::vector<std::size_t>& idx,
                                                          std::size_t max_frames_per_batch) {
    std::vector<std::size_t> order = idx;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return corpus.utts[a].n_frames < corpus.utts[b].n_frames;
    });
    std::vector<std::vector<std::size_t>> batches;
    std::vector<std::size_t> cur;
    std::size_t cur_frames = 0;
    for (auto i : order) {
        const std::size_t f = corpus.utts[i].n_frames;
        if (f > max_frames_per_batch)
            throw UsageError("make_batches: utterance " + corpus.utts[i].id +
                             " exceeds the frame cap");
        if (cur_frames + f > max_frames_per_batch && !cur.empty()) {
            batches.push_back(std::move(cur));
            cur.clear();
            cur_frames = 0;
        }
        cur.push_back(i);
        cur_frames += f;
    }
    if (!cur.empty()) batches.push_back(std::move(cur));
    return batches;
}

// ---- training loop -----------------------------------------------------------

enum class TrainMode { STBD, STL2R, STR2L };

inline const char* train_mode_name(TrainMode m) {
    switch (m) {
        case TrainMode::STBD: return "stbd";
        case TrainMode::STL2R: return "st-l2r";
        default: return "st-r2l";
    }
}

struct TrainConfig {
    OptimizerConfig optim;
    LossConfig loss;
    TrainMode mode = TrainMode::STBD;
    std::size_t epochs = 30;
    std::size_t max_frames_per_batch = 600;
    std::size_t average_best = 5;
    std::uint64_t seed = 1;
};

struct EpochStats {
    std::size_t epoch = 0;
    std::size_t step = 0;
    double train_loss = 0.0;
    double dev_cer = 0.0;
};

class Trainer {
public:
    Trainer(Model& model, const Corpus& corpus, const CmvnStats& cmvn, const TrainConfig& cfg)
        : model_(model), corpus_(corpus), cmvn_(cmvn), cfg_(cfg), rng_(cfg.seed) {
        cfg_.optim.validate();
        cfg_.loss.validate();
        // precompute encoder inputs (CMVN + 3x stacking)
        enc_inputs_.resize(corpus.utts.size());
        for (std::size_t i = 0; i < corpus.utts.size(); ++i) {
            const auto& u = corpus.utts[i];
            auto norm = apply_cmvn(cmvn_, u.frames);
            std::size_t rows = 0;
            auto stacked = downsample3(norm, u.n_frames, u.feat_dim, &rows);
            enc_inputs_[i] = Tensor({rows, u.feat_dim * 3}, std::move(stacked));
        }
    }

    const std::vector<EpochStats>& history() const { return history_; }
    AdamState& state() { return state_; }

    Tensor encoder_input(std::size_t utt_idx) const { return enc_inputs_[utt_idx]; }

    // One full pass over the training split; returns mean batch loss and
    // greedy dev CER.
    EpochStats train_epoch() {
        auto batches = make_batches(corpus_, corpus_.train_idx, cfg_.max_frames_per_batch);
        std::shuffle(batches.begin(), batches.end(), rng_);
        double loss_sum = 0.0;
        std::size_t loss_n = 0;
        for (const auto& batch : batches) {
            const double l = train_batch(batch);
            if (!std::isfinite(l))
                throw NumericError("train_epoch: non-finite loss at step " +
                                   std::to_string(state_.step + 1));
            loss_sum += l;
            ++loss_n;
        }
        EpochStats s;
        s.epoch = history_.size() + 1;
        s.step = state_.step;
        s.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(loss_n, 1));
        s.dev_cer = evaluate_greedy_cer(corpus_.dev_idx);
        history_.push_back(s);
        return s;
    }

    // Greedy decode in the model's primary direction; corpus-level CER.
    double evaluate_greedy_cer(const std::vector<std::size_t>& idx) const {
        const Direction dir =
            cfg_.mode == TrainMode::STR2L ? Direction::R2L : Direction::L2R;
        DecodeConfig dcfg;
        std::size_t dist = 0, ref_len = 0;
        for (auto i : idx) {
            auto enc = model_.encode(enc_inputs_[i]);
            auto scorer = make_model_scorer(model_, enc);
            auto hyp = greedy_decode(scorer, model_.config().vocab_size, dir,
                                     max_output_length(model_, enc, dcfg), dcfg);
            std::vector<int> tokens = hyp.tokens;
            if (dir == Direction::R2L) std::reverse(tokens.begin(), tokens.end());
            dist += edit_distance(corpus_.utts[i].reference, tokens);
            ref_len += corpus_.utts[i].reference.size();
        }
        return ref_len ? static_cast<double>(dist) / static_cast<double>(ref_len) : 0.0;
    }

    void append_curve_row(std::ostream& os, const EpochStats& s) const {
        os << s.epoch << ',' << s.step << ',' << s.train_loss << ',' << s.dev_cer << '\n';
    }

private:
    double train_batch(const std::vector<std::size_t>& batch) {
        model_.zero_grad();
        // sum CE and token counts per direction across the batch, then take
        // per-direction means so alpha weighting is length-independent
        Tensor ce_l2r = Tensor::scalar(0.0), ce_r2l = Tensor::scalar(0.0);
        std::size_t n_l2r = 0, n_r2l = 0;
        const bool want_l2r = cfg_.mode != TrainMode::STR2L;
        const bool want_r2l = cfg_.mode != TrainMode::STL2R;
        for (auto i : batch) {
            auto [l2r, r2l] = build_streams(corpus_.utts[i].reference);
            auto enc = model_.encode(enc_inputs_[i], true, &rng_);
            if (want_l2r) {
                auto out = model_.decode_stream(enc, l2r.input, true, &rng_);
                std::vector<std::uint8_t> sel(l2r.target.size(), 1);
                std::size_t n = 0;
                ce_l2r = add(ce_l2r, cross_entropy_sum(out.logits, l2r.target, sel, &n,
                                                       cfg_.loss.label_smoothing));
                n_l2r += n;
            }
            if (want_r2l) {
                auto out = model_.decode_stream(enc, r2l.input, true, &rng_);
                std::vector<std::uint8_t> sel(r2l.target.size(), 1);
                std::size_t n = 0;
                ce_r2l = add(ce_r2l, cross_entropy_sum(out.logits, r2l.target, sel, &n,
                                                       cfg_.loss.label_smoothing));
                n_r2l += n;
            }
        }
        Tensor loss = Tensor::scalar(0.0);
        const double alpha = cfg_.mode == TrainMode::STBD ? cfg_.loss.alpha
                             : cfg_.mode == TrainMode::STL2R ? 1.0
                                                             : 0.0;
        if (want_l2r) loss = add(loss, scale(ce_l2r, alpha / static_cast<double>(n_l2r)));
        if (want_r2l) loss = add(loss, scale(ce_r2l, (1.0 - alpha) / static_cast<double>(n_r2l)));
        backward(loss);
        clip_gradients(model_.parameters(), cfg_.optim.clip_norm);
        adam_step(state_, model_.parameters(), lr_at(state_.step + 1, cfg_.optim), cfg_.optim);
        return loss.item();
    }

    Model& model_;
    const Corpus& corpus_;
    CmvnStats cmvn_;
    TrainConfig cfg_;
    std::mt19937_64 rng_;
    AdamState state_;
    std::vector<Tensor> enc_inputs_;
    std::vector<EpochStats> history_;
};

// Pick the N entries with the lowest dev CER (ties broken by earlier epoch).
inline std::vector<std::size_t> select_best_epochs(const std::vector<EpochStats>& history,
                                                   std::size_t n) {
    std::vector<std::size_t> order(history.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return history[a].dev_cer < history[b].dev_cer;
    });
    if (order.size() > n) order.resize(n);
    return order;
}

}  // namespace stbd
