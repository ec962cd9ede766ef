#pragma once

// End-to-end plumbing shared by the CLI and the acceptance harness:
// training runs with per-epoch checkpoints, split decoding with direction
// statistics, beam sweeps and attention export.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "stbd/checkpoint.hpp"
#include "stbd/config.hpp"
#include "stbd/decode.hpp"
#include "stbd/train.hpp"

namespace stbd {

inline Tensor encoder_input(const Utterance& u, const CmvnStats& cmvn) {
    auto norm = apply_cmvn(cmvn, u.frames);
    std::size_t rows = 0;
    auto stacked = downsample3(norm, u.n_frames, u.feat_dim, &rows);
    return Tensor({rows, u.feat_dim * 3}, std::move(stacked));
}

inline std::string format_float(double v, int sig = 6) {
    std::ostringstream os;
    os << std::setprecision(sig) << v;
    return os.str();
}

// ---- generate ---------------------------------------------------------------

inline void run_generate(const RunConfig& cfg) {
    Corpus corpus = generate_toy_corpus(cfg.data);
    CmvnStats stats = fit_cmvn(corpus, corpus.train_idx);
    CorpusPaths paths{cfg.data_dir};
    save_corpus(corpus, stats, paths);
}

// ---- train ------------------------------------------------------------------

struct TrainRunResult {
    std::vector<EpochStats> history;
    std::filesystem::path averaged_checkpoint;
    std::vector<std::size_t> averaged_epochs;  // 1-based
};

inline TrainRunResult run_train(const RunConfig& cfg, Model& model, const Corpus& corpus,
                                const CmvnStats& cmvn, std::ostream* log = nullptr) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    Trainer trainer(model, corpus, cmvn, cfg.train);

    std::ofstream curve(fs::path(cfg.out_dir) / "curve.csv");
    curve << "epoch,step,train_loss,dev_cer\n";
    std::vector<fs::path> epoch_paths;
    for (std::size_t e = 0; e < cfg.train.epochs; ++e) {
        EpochStats s = trainer.train_epoch();
        curve << s.epoch << ',' << s.step << ',' << format_float(s.train_loss) << ','
              << format_float(s.dev_cer) << '\n';
        curve.flush();
        if (log)
            *log << "epoch " << s.epoch << " loss " << format_float(s.train_loss) << " dev_cer "
                 << format_float(s.dev_cer) << "\n";
        std::map<std::string, std::string> meta{
            {"epoch", std::to_string(s.epoch)},
            {"dev_cer", format_float(s.dev_cer, 17)},
            {"mode", train_mode_name(cfg.train.mode)}};
        fs::path p = fs::path(cfg.out_dir) / ("epoch" + std::to_string(s.epoch) + ".ckpt");
        save_checkpoint(Checkpoint::from_model(model, meta), p);
        epoch_paths.push_back(p);
    }

    TrainRunResult res;
    res.history = trainer.history();
    auto best = select_best_epochs(res.history, cfg.train.average_best);
    std::vector<Checkpoint> cks;
    for (auto b : best) {
        cks.push_back(load_checkpoint(epoch_paths[b]));
        res.averaged_epochs.push_back(b + 1);
    }
    Checkpoint avg = average_checkpoints(cks);
    avg.metadata["mode"] = train_mode_name(cfg.train.mode);
    res.averaged_checkpoint = fs::path(cfg.out_dir) / "averaged.ckpt";
    save_checkpoint(avg, res.averaged_checkpoint);
    return res;
}

// ---- decode -----------------------------------------------------------------

struct UttDecodeResult {
    std::string utt_id;
    Direction direction = Direction::L2R;
    double penalized_score = 0.0;
    double raw_score = 0.0;
    std::vector<int> tokens;  // natural (L2R) order
};

struct DecodeSummary {
    std::vector<UttDecodeResult> results;  // ordered by utterance id
    double r2l_fraction = 0.0;
    double corpus_cer = 0.0;
};

inline UttDecodeResult decode_utterance(const Model& model, const Utterance& u,
                                        const CmvnStats& cmvn, const DecodeConfig& cfg) {
    UttDecodeResult r;
    r.utt_id = u.id;
    auto enc = model.encode(encoder_input(u, cmvn));
    auto scorer = make_model_scorer(model, enc);
    const std::size_t max_len = max_output_length(model, enc, cfg);
    const std::size_t vocab = model.config().vocab_size;
    if (cfg.mode == DecodeMode::Bidirectional) {
        auto res = beam_search_bidirectional(scorer, vocab, max_len, cfg);
        r.direction = res.winning_direction;
        r.tokens = res.best.tokens;
        r.raw_score = res.best.score;
        r.penalized_score = length_penalized_score(res.best, cfg);
    } else {
        const Direction dir = cfg.mode == DecodeMode::L2ROnly ? Direction::L2R : Direction::R2L;
        auto done =
            beam_search_unidirectional(scorer, vocab, dir, cfg.beam_size, max_len, cfg);
        const Hypothesis& best = done.front();
        r.direction = dir;
        r.tokens = best.tokens;
        if (dir == Direction::R2L) std::reverse(r.tokens.begin(), r.tokens.end());
        r.raw_score = best.score;
        r.penalized_score = length_penalized_score(best, cfg);
    }
    return r;
}

inline DecodeSummary decode_split(const Model& model, const Corpus& corpus,
                                  const CmvnStats& cmvn, const std::vector<std::size_t>& idx,
                                  const DecodeConfig& cfg, std::size_t jobs = 1) {
    DecodeSummary sum;
    sum.results.resize(idx.size());
    auto work = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i)
            sum.results[i] = decode_utterance(model, corpus.utts[idx[i]], cmvn, cfg);
    };
    if (jobs <= 1 || idx.size() < 2) {
        work(0, idx.size());
    } else {
        const std::size_t n = std::min(jobs, idx.size());
        std::vector<std::thread> threads;
        for (std::size_t t = 0; t < n; ++t) {
            const std::size_t lo = idx.size() * t / n, hi = idx.size() * (t + 1) / n;
            threads.emplace_back(work, lo, hi);
        }
        for (auto& th : threads) th.join();
    }
    std::size_t r2l = 0, dist = 0, ref_len = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (sum.results[i].direction == Direction::R2L) ++r2l;
        dist += edit_distance(corpus.utts[idx[i]].reference, sum.results[i].tokens);
        ref_len += corpus.utts[idx[i]].reference.size();
    }
    sum.r2l_fraction =
        idx.empty() ? 0.0 : static_cast<double>(r2l) / static_cast<double>(idx.size());
    sum.corpus_cer = ref_len ? static_cast<double>(dist) / static_cast<double>(ref_len) : 0.0;
    return sum;
}

inline void write_hypotheses_csv(const DecodeSummary& sum, const Vocabulary& vocab,
                                 const std::filesystem::path& path,
                                 const std::filesystem::path& score_sidecar = {}) {
    std::ofstream f(path);
    if (!f) throw DataError("write_hypotheses_csv: cannot write " + path.string());
    f << "utt_id,direction,penalized_score,raw_score,tokens\n";
    for (const auto& r : sum.results) {
        f << r.utt_id << ',' << direction_name(r.direction) << ','
          << format_float(r.penalized_score) << ',' << format_float(r.raw_score) << ',';
        for (std::size_t i = 0; i < r.tokens.size(); ++i) {
            if (i) f << ' ';
            f << vocab.token(r.tokens[i]);
        }
        f << '\n';
    }
    if (!score_sidecar.empty()) {
        std::ofstream s(score_sidecar);
        s << std::setprecision(17);
        for (const auto& r : sum.results)
            s << r.utt_id << ' ' << r.penalized_score << ' ' << r.raw_score << '\n';
    }
}

// ---- eval -------------------------------------------------------------------

struct EvalReport {
    double corpus_cer = 0.0;
    std::vector<std::pair<std::string, double>> per_utt;
};

inline EvalReport evaluate_hypotheses(const Corpus& corpus, const std::vector<std::size_t>& idx,
                                      const DecodeSummary& sum) {
    EvalReport rep;
    std::size_t dist = 0, ref_len = 0;
    if (idx.size() != sum.results.size())
        throw DataError("evaluate_hypotheses: reference/hypothesis count mismatch");
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& u = corpus.utts[idx[i]];
        if (u.id != sum.results[i].utt_id)
            throw DataError("evaluate_hypotheses: id mismatch, missing " + u.id);
        const std::size_t d = edit_distance(u.reference, sum.results[i].tokens);
        rep.per_utt.emplace_back(u.id, static_cast<double>(d) /
                                           static_cast<double>(u.reference.size()));
        dist += d;
        ref_len += u.reference.size();
    }
    rep.corpus_cer = ref_len ? static_cast<double>(dist) / static_cast<double>(ref_len) : 0.0;
    return rep;
}

// ---- attention export ---------------------------------------------------------

inline void write_pgm(const Tensor& m, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw DataError("write_pgm: cannot write " + path.string());
    const std::size_t rows = m.dim(0), cols = m.dim(1);
    double mx = 0.0;
    for (double v : m.data()) mx = std::max(mx, v);
    if (mx <= 0.0) mx = 1.0;
    f << "P2\n" << cols << ' ' << rows << "\n255\n";
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            if (c) f << ' ';
            f << static_cast<int>(std::lround(m.at(r, c) / mx * 255.0));
        }
        f << '\n';
    }
}

inline void write_matrix_csv(const Tensor& m, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw DataError("write_matrix_csv: cannot write " + path.string());
    const std::size_t rows = m.dim(0), cols = m.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            if (c) f << ',';
            f << format_float(m.at(r, c));
        }
        f << '\n';
    }
}

struct AttentionReport {
    Tensor l2r, r2l;  // emission order per direction
    double l2r_monotone = 0.0;
    double r2l_antimonotone = 0.0;
};

// Greedy-decode the utterance in both directions and capture final-layer
// cross-attention for each.
inline AttentionReport inspect_attention(const Model& model, const Utterance& u,
                                         const CmvnStats& cmvn, const DecodeConfig& cfg) {
    auto enc = model.encode(encoder_input(u, cmvn));
    auto scorer = make_model_scorer(model, enc);
    const std::size_t max_len = max_output_length(model, enc, cfg);
    AttentionReport rep;
    for (Direction dir : {Direction::L2R, Direction::R2L}) {
        Hypothesis hyp = greedy_decode(scorer, model.config().vocab_size, dir, max_len, cfg);
        if (hyp.tokens.empty()) {
            // degenerate empty decode: emit a 1 x frames uniform row
            Tensor flat({1, enc.frame_count}, 1.0 / static_cast<double>(enc.frame_count));
            (dir == Direction::L2R ? rep.l2r : rep.r2l) = flat;
            continue;
        }
        Tensor attn = capture_attention(model, enc, hyp);
        if (dir == Direction::L2R) {
            rep.l2r = attn;
            rep.l2r_monotone = attention_monotonicity(attn, dir);
        } else {
            rep.r2l = attn;
            rep.r2l_antimonotone = attention_monotonicity(attn, dir);
        }
    }
    return rep;
}

// ---- beam sweep ---------------------------------------------------------------

struct BeamSweepRow {
    std::size_t beam = 0;
    double cer = 0.0;
    double r2l_fraction = 0.0;
};

inline std::vector<BeamSweepRow> beam_sweep(const Model& model, const Corpus& corpus,
                                            const CmvnStats& cmvn,
                                            const std::vector<std::size_t>& idx,
                                            const std::vector<std::size_t>& beams,
                                            DecodeConfig cfg, std::size_t jobs = 1) {
    std::vector<BeamSweepRow> rows;
    for (auto n : beams) {
        cfg.beam_size = n;
        auto sum = decode_split(model, corpus, cmvn, idx, cfg, jobs);
        rows.push_back({n, sum.corpus_cer, sum.r2l_fraction});
    }
    return rows;
}

inline void write_beam_sweep_csv(const std::vector<BeamSweepRow>& rows,
                                 const std::filesystem::path& path) {
    std::ofstream f(path);
    f << "beam,cer,r2l_fraction\n";
    for (const auto& r : rows)
        f << r.beam << ',' << format_float(r.cer) << ',' << format_float(r.r2l_fraction) << '\n';
}

}  // namespace stbd
