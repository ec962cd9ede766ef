#pragma once

// Beam search over a step scorer. The scorer abstraction lets tests drive
// the search with lookup tables; the trained model plugs in through
// make_model_scorer. Bidirectional search runs the two directions as
// independent unidirectional searches and pools finished hypotheses.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "stbd/data.hpp"
#include "stbd/model.hpp"

namespace stbd {

struct Hypothesis {
    Direction direction = Direction::L2R;
    std::vector<int> tokens;  // emitted body, <EOS> excluded
    double score = 0.0;       // sum of token log-probs, <EOS> included once finished
    bool finished = false;
    bool forced = false;  // hit the length cap and was force-finished

    int last_token() const { return tokens.empty() ? Vocabulary::kEos : tokens.back(); }
};

enum class DecodeMode { L2ROnly, R2LOnly, Bidirectional };

struct DecodeConfig {
    std::size_t beam_size = 2;
    double length_penalty = 0.6;
    bool gnmt_penalty = true;  // ((5+|Y|)/6)^p; false = plain |Y|^p
    std::size_t extra_length = 10;  // max output = frames + extra, capped by max_positions
    bool capture_attention = false;
    DecodeMode mode = DecodeMode::Bidirectional;
};

// score / lp(|Y|) with |Y| = body tokens plus <EOS>.
inline double length_penalized_score(const Hypothesis& hyp, const DecodeConfig& cfg) {
    const double len = static_cast<double>(hyp.tokens.size() + 1);
    const double lp = cfg.gnmt_penalty ? std::pow((5.0 + len) / 6.0, cfg.length_penalty)
                                       : std::pow(len, cfg.length_penalty);
    return hyp.score / lp;
}

// log-probs over the full vocabulary for the next emission, given the
// body emitted so far in the given direction
using StepScorer =
    std::function<std::vector<double>(Direction, const std::vector<int>& body)>;

namespace detail {

// total order: higher score, then lower last token id, then shorter
inline bool better(double sa, int la, std::size_t na, double sb, int lb, std::size_t nb) {
    if (sa != sb) return sa > sb;
    if (la != lb) return la < lb;
    return na < nb;
}

inline bool hyp_better_raw(const Hypothesis& a, const Hypothesis& b) {
    return better(a.score, a.last_token(), a.tokens.size(), b.score, b.last_token(),
                  b.tokens.size());
}

}  // namespace detail

inline bool hyp_better_penalized(const Hypothesis& a, const Hypothesis& b,
                                 const DecodeConfig& cfg) {
    const double pa = length_penalized_score(a, cfg), pb = length_penalized_score(b, cfg);
    if (pa != pb) return pa > pb;
    // prefer L2R on exact ties, then the raw-score order
    if (a.direction != b.direction) return a.direction == Direction::L2R;
    return detail::hyp_better_raw(a, b);
}

// Standard beam search. Each step every alive hypothesis expands over the
// emittable vocabulary (specials other than <EOS> excluded); the best
// `slots` candidates survive, finished ones move to the done pool and give
// up their slot. Pruning uses raw cumulative log-prob; the length penalty
// only ranks the finished pool.
inline std::vector<Hypothesis> beam_search_unidirectional(const StepScorer& scorer,
                                                          std::size_t vocab_size, Direction dir,
                                                          std::size_t beam_size,
                                                          std::size_t max_len,
                                                          const DecodeConfig& cfg) {
    if (beam_size < 1) throw UsageError("beam_search: beam size must be >= 1");
    if (vocab_size <= Vocabulary::kNumSpecials)
        throw UsageError("beam_search: vocabulary has no emittable tokens");

    auto emittable = [](int tok) {
        return tok == Vocabulary::kEos || !Vocabulary::is_special(tok);
    };

    std::vector<Hypothesis> alive{Hypothesis{dir, {}, 0.0, false, false}};
    std::vector<Hypothesis> done;
    std::size_t slots = beam_size;

    for (std::size_t step = 0; step <= max_len && !alive.empty() && slots > 0; ++step) {
        std::vector<Hypothesis> candidates;
        candidates.reserve(alive.size() * vocab_size);
        for (const auto& h : alive) {
            const std::vector<double> logp = scorer(dir, h.tokens);
            if (logp.size() != vocab_size)
                throw UsageError("beam_search: scorer returned wrong vocabulary size");
            if (h.tokens.size() == max_len) {
                // length cap: force-finish instead of expanding
                Hypothesis f = h;
                f.score += logp[Vocabulary::kEos];
                f.finished = true;
                f.forced = true;
                done.push_back(std::move(f));
                continue;
            }
            for (int tok = 0; tok < static_cast<int>(vocab_size); ++tok) {
                if (!emittable(tok)) continue;
                Hypothesis c = h;
                c.score += logp[static_cast<std::size_t>(tok)];
                if (tok == Vocabulary::kEos) {
                    c.finished = true;
                } else {
                    c.tokens.push_back(tok);
                }
                candidates.push_back(std::move(c));
            }
        }
        std::sort(candidates.begin(), candidates.end(), detail::hyp_better_raw);
        if (candidates.size() > slots) candidates.resize(slots);
        alive.clear();
        for (auto& c : candidates) {
            if (c.finished) {
                done.push_back(std::move(c));
                --slots;
            } else {
                alive.push_back(std::move(c));
            }
        }
    }
    std::sort(done.begin(), done.end(),
              [&](const Hypothesis& a, const Hypothesis& b) {
                  return hyp_better_penalized(a, b, cfg);
              });
    return done;
}

struct BidirectionalResult {
    Hypothesis best;               // R2L winners already reversed to natural order
    Direction winning_direction = Direction::L2R;
    std::vector<Hypothesis> pool;  // all finished hypotheses, penalized order
};

// Half the beam decodes under <L2R>, half under <R2L> (odd sizes give the
// extra slot to L2R). The winner is the penalized argmax over the pooled
// finished hypotheses; an R2L winner is reversed before returning.
inline BidirectionalResult beam_search_bidirectional(const StepScorer& scorer,
                                                     std::size_t vocab_size, std::size_t max_len,
                                                     const DecodeConfig& cfg) {
    const std::size_t n = cfg.beam_size;
    const std::size_t n_l2r = n == 1 ? 1 : (n + 1) / 2;
    const std::size_t n_r2l = n == 1 ? 1 : n / 2;

    auto l2r = beam_search_unidirectional(scorer, vocab_size, Direction::L2R, n_l2r, max_len, cfg);
    auto r2l = beam_search_unidirectional(scorer, vocab_size, Direction::R2L, n_r2l, max_len, cfg);

    BidirectionalResult res;
    res.pool = l2r;
    res.pool.insert(res.pool.end(), r2l.begin(), r2l.end());
    std::sort(res.pool.begin(), res.pool.end(),
              [&](const Hypothesis& a, const Hypothesis& b) {
                  return hyp_better_penalized(a, b, cfg);
              });
    if (res.pool.empty()) throw UsageError("beam_search_bidirectional: no finished hypothesis");
    res.best = res.pool.front();
    res.winning_direction = res.best.direction;
    if (res.best.direction == Direction::R2L)
        std::reverse(res.best.tokens.begin(), res.best.tokens.end());
    return res;
}

// ---- model adapter ---------------------------------------------------------

inline std::vector<double> log_softmax_row(const Tensor& logits, std::size_t row) {
    const std::size_t v = logits.dim(1);
    const double* lr = logits.data().data() + row * v;
    double mx = *std::max_element(lr, lr + v);
    double denom = 0.0;
    for (std::size_t j = 0; j < v; ++j) denom += std::exp(lr[j] - mx);
    const double logz = std::log(denom) + mx;
    std::vector<double> out(v);
    for (std::size_t j = 0; j < v; ++j) out[j] = lr[j] - logz;
    return out;
}

inline StepScorer make_model_scorer(const Model& model, const EncoderOutput& enc) {
    if (enc.frame_count == 0) throw UsageError("make_model_scorer: empty encoder output");
    return [&model, enc](Direction dir, const std::vector<int>& body) {
        std::vector<int> input;
        input.push_back(dir == Direction::L2R ? Vocabulary::kL2R : Vocabulary::kR2L);
        input.insert(input.end(), body.begin(), body.end());
        DecodeOutput out = model.decode_stream(enc, input);
        return log_softmax_row(out.logits, input.size() - 1);
    };
}

inline std::size_t max_output_length(const Model& model, const EncoderOutput& enc,
                                     const DecodeConfig& cfg) {
    std::size_t cap = enc.frame_count + cfg.extra_length;
    // the decoder input carries one start token in front of the body
    if (cap + 1 > model.config().max_positions) cap = model.config().max_positions - 1;
    return cap;
}

// Teacher-forced rerun that captures final-layer cross-attention for the
// given hypothesis, one row per emitted body token in emission order.
inline Tensor capture_attention(const Model& model, const EncoderOutput& enc,
                                const Hypothesis& hyp_in_emission_order) {
    const auto& hyp = hyp_in_emission_order;
    if (hyp.tokens.empty()) throw UsageError("capture_attention: hypothesis has no tokens");
    std::vector<int> input;
    input.push_back(hyp.direction == Direction::L2R ? Vocabulary::kL2R : Vocabulary::kR2L);
    input.insert(input.end(), hyp.tokens.begin(), hyp.tokens.end());
    DecodeOutput out = model.decode_stream(enc, input, false, nullptr, true);
    if (!out.cross_attention)
        throw UsageError("capture_attention: attention was not captured");
    const Tensor& w = *out.cross_attention;
    const std::size_t m = hyp.tokens.size(), f = enc.frame_count;
    Tensor rows({m, f});
    std::copy_n(w.data().data(), m * f, rows.data().data());
    return rows;
}

// Fraction of consecutive argmax steps moving the expected way.
inline double attention_monotonicity(const Tensor& attn, Direction dir) {
    const std::size_t m = attn.dim(0), f = attn.dim(1);
    if (m < 2) return 1.0;
    std::vector<std::size_t> am(m);
    for (std::size_t r = 0; r < m; ++r) {
        const double* row = attn.data().data() + r * f;
        am[r] = static_cast<std::size_t>(std::max_element(row, row + f) - row);
    }
    std::size_t good = 0;
    for (std::size_t r = 1; r < m; ++r) {
        const bool ok = dir == Direction::L2R ? am[r] >= am[r - 1] : am[r] <= am[r - 1];
        if (ok) ++good;
    }
    return static_cast<double>(good) / static_cast<double>(m - 1);
}

// Convenience greedy decode (beam 1) in one direction; returns the body in
// emission order.
inline Hypothesis greedy_decode(const StepScorer& scorer, std::size_t vocab_size, Direction dir,
                                std::size_t max_len, const DecodeConfig& cfg) {
    auto done = beam_search_unidirectional(scorer, vocab_size, dir, 1, max_len, cfg);
    return done.front();
}

}  // namespace stbd
