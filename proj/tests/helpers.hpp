#pragma once

// Test-only oracles and fixtures, independent of the implementation paths
// they check.

#include <functional>
#include <random>
#include <vector>

#include "stbd/data.hpp"
#include "stbd/decode.hpp"
#include "stbd/model.hpp"

namespace stbd::testing {

// Central-difference check of d(loss)/d(param) for every registered
// parameter, sampling up to `samples` components per parameter. Returns
// the max relative error seen.
inline double full_model_grad_check(Model& model, const std::function<Tensor()>& loss_fn,
                                    std::mt19937_64& rng, std::size_t samples = 3,
                                    double step = 1e-5) {
    model.zero_grad();
    Tensor loss = loss_fn();
    backward(loss);
    double worst = 0.0;
    for (const auto& [name, p] : model.parameters()) {
        Tensor param = p;  // shares storage
        std::vector<double> analytic =
            param.grad().empty() ? std::vector<double>(param.numel(), 0.0) : param.grad();
        std::uniform_int_distribution<std::size_t> pick(0, param.numel() - 1);
        for (std::size_t s = 0; s < std::min(samples, param.numel()); ++s) {
            const std::size_t i = pick(rng);
            const double saved = param.data()[i];
            param.data()[i] = saved + step;
            const double fp = loss_fn().item();
            param.data()[i] = saved - step;
            const double fm = loss_fn().item();
            param.data()[i] = saved;
            const double numeric = (fp - fm) / (2.0 * step);
            const double rel = std::abs(analytic[i] - numeric) /
                               (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

// quadratic-time Levenshtein DP, coded independently of data.hpp's
// row-rolling version
inline std::size_t edit_distance_oracle(const std::vector<int>& a, const std::vector<int>& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::vector<std::size_t>> d(n + 1, std::vector<std::size_t>(m + 1, 0));
    for (std::size_t i = 0; i <= n; ++i) d[i][0] = i;
    for (std::size_t j = 0; j <= m; ++j) d[0][j] = j;
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t del = d[i - 1][j] + 1;
            const std::size_t ins = d[i][j - 1] + 1;
            const std::size_t sub = d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            d[i][j] = std::min({del, ins, sub});
        }
    return d[n][m];
}

// A random lookup-table scorer: log-probs depend on the emitted prefix
// through a hash, deterministic per seed. Emissions outside
// {content tokens, <EOS>} get probability epsilon.
class LookupScorer {
public:
    LookupScorer(std::uint64_t seed, std::size_t vocab_size) : seed_(seed), vocab_(vocab_size) {}

    std::vector<double> operator()(Direction dir, const std::vector<int>& body) const {
        std::uint64_t h = seed_ ^ (dir == Direction::L2R ? 0x9e3779b97f4a7c15ULL : 0x7f4a7c159e3779b9ULL);
        for (int t : body) h = h * 6364136223846793005ULL + static_cast<std::uint64_t>(t) + 1442695040888963407ULL;
        std::mt19937_64 rng(h);
        std::uniform_real_distribution<double> dist(0.05, 1.0);
        std::vector<double> w(vocab_, 1e-12);
        double sum = 0.0;
        for (std::size_t t = 0; t < vocab_; ++t) {
            if (static_cast<int>(t) == Vocabulary::kEos || !Vocabulary::is_special(static_cast<int>(t)))
                w[t] = dist(rng);
            sum += w[t];
        }
        std::vector<double> logp(vocab_);
        for (std::size_t t = 0; t < vocab_; ++t) logp[t] = std::log(w[t] / sum);
        return logp;
    }

    std::size_t vocab_size() const { return vocab_; }

private:
    std::uint64_t seed_;
    std::size_t vocab_;
};

// Exhaustive enumeration of every emission sequence up to max_len: bodies of
// content tokens, each closed by <EOS> (sequences at the cap are closed the
// same way, mirroring force-finish). Returns all finished hypotheses.
inline std::vector<Hypothesis> enumerate_all(const LookupScorer& scorer, Direction dir,
                                             std::size_t max_len) {
    std::vector<int> content;
    for (int t = 0; t < static_cast<int>(scorer.vocab_size()); ++t)
        if (!Vocabulary::is_special(t)) content.push_back(t);

    std::vector<Hypothesis> out;
    std::function<void(std::vector<int>&, double)> rec = [&](std::vector<int>& body,
                                                             double score) {
        const auto logp = scorer(dir, body);
        Hypothesis h;
        h.direction = dir;
        h.tokens = body;
        h.score = score + logp[Vocabulary::kEos];
        h.finished = true;
        h.forced = body.size() == max_len;
        out.push_back(h);
        if (body.size() == max_len) return;
        for (int t : content) {
            body.push_back(t);
            rec(body, score + logp[static_cast<std::size_t>(t)]);
            body.pop_back();
        }
    };
    std::vector<int> body;
    rec(body, 0.0);
    return out;
}

}  // namespace stbd::testing
