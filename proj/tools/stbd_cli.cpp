// stbd: synthetic-corpus speech transformer with a bidirectional decoder.
// Subcommands: generate, train, decode, eval, inspect-attention, average.
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "stbd/config.hpp"
#include "stbd/pipeline.hpp"

namespace fs = std::filesystem;
using namespace stbd;

namespace {

int log_level() {
    const char* v = std::getenv("STBD_LOG");
    if (!v) return 0;
    const std::string s = v;
    if (s == "debug") return 2;
    if (s == "info") return 1;
    return 0;
}

struct Common {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::size_t jobs = 1;

    RunConfig load() const {
        RunConfig cfg =
            config_path.empty() ? parse_config_text("") : load_config(config_path);
        if (seed_set) {
            cfg.seed = seed;
            cfg.finalize();
        }
        return cfg;
    }
};

Model load_model(const RunConfig& cfg, const fs::path& ckpt) {
    Model model(cfg.model);
    Checkpoint ck = load_checkpoint(ckpt);
    ck.apply_to(model);
    return model;
}

std::vector<std::size_t>& split_indices(Corpus& corpus, const std::string& split) {
    if (split == "train") return corpus.train_idx;
    if (split == "dev") return corpus.dev_idx;
    if (split == "test") return corpus.test_idx;
    throw ConfigError("unknown split '" + split + "'");
}

int cmd_generate(const Common& common) {
    RunConfig cfg = common.load();
    run_generate(cfg);
    Corpus c = load_corpus(CorpusPaths{cfg.data_dir});
    std::cout << "generated " << (c.train_idx.size() + c.dev_idx.size() + c.test_idx.size())
              << " utterances (" << c.train_idx.size() << " train, " << c.dev_idx.size()
              << " dev, " << c.test_idx.size() << " test) in " << cfg.data_dir << "\n";
    return 0;
}

int cmd_train(const Common& common) {
    RunConfig cfg = common.load();
    Corpus corpus = load_corpus(CorpusPaths{cfg.data_dir});
    if (corpus.vocab.size() != cfg.model.vocab_size)
        throw ConfigError("corpus vocabulary size " + std::to_string(corpus.vocab.size()) +
                          " does not match configured " + std::to_string(cfg.model.vocab_size));
    CmvnStats cmvn = load_cmvn(CorpusPaths{cfg.data_dir}.cmvn());
    Model model(cfg.model);
    std::ostream* log = log_level() >= 1 ? &std::cerr : nullptr;
    TrainRunResult res = run_train(cfg, model, corpus, cmvn, log);
    std::cout << "trained " << res.history.size() << " epochs (" << train_mode_name(cfg.train.mode)
              << "), final dev_cer " << format_float(res.history.back().dev_cer)
              << ", averaged epochs";
    for (auto e : res.averaged_epochs) std::cout << ' ' << e;
    std::cout << " -> " << res.averaged_checkpoint.string() << "\n";
    return 0;
}

int cmd_decode(const Common& common, const std::string& ckpt, const std::string& split,
               const std::string& mode_flag, int beam_override, const std::string& sweep,
               const std::string& dump) {
    RunConfig cfg = common.load();
    Corpus corpus = load_corpus(CorpusPaths{cfg.data_dir});
    CmvnStats cmvn = load_cmvn(CorpusPaths{cfg.data_dir}.cmvn());
    Model model = load_model(cfg, ckpt);
    auto& idx = split_indices(corpus, split);

    DecodeConfig dcfg = cfg.decode;
    if (!mode_flag.empty()) {
        if (mode_flag == "bidirectional") dcfg.mode = DecodeMode::Bidirectional;
        else if (mode_flag == "bs-l2r") dcfg.mode = DecodeMode::L2ROnly;
        else if (mode_flag == "bs-r2l") dcfg.mode = DecodeMode::R2LOnly;
        else throw ConfigError("decode --mode must be bidirectional, bs-l2r or bs-r2l");
    }
    if (beam_override > 0) dcfg.beam_size = static_cast<std::size_t>(beam_override);

    if (!sweep.empty()) {
        std::vector<std::size_t> beams;
        std::istringstream is(sweep);
        std::string part;
        while (std::getline(is, part, ','))
            beams.push_back(static_cast<std::size_t>(std::stoul(part)));
        auto rows = beam_sweep(model, corpus, cmvn, idx, beams, dcfg, common.jobs);
        const fs::path out = dump.empty() ? fs::path(cfg.out_dir) / "beam_sweep.csv"
                                          : fs::path(dump);
        fs::create_directories(out.parent_path().empty() ? "." : out.parent_path());
        write_beam_sweep_csv(rows, out);
        for (const auto& r : rows)
            std::cout << "beam " << r.beam << " cer " << format_float(r.cer) << " r2l_fraction "
                      << format_float(r.r2l_fraction) << "\n";
        std::cout << "sweep written to " << out.string() << "\n";
        return 0;
    }

    auto sum = decode_split(model, corpus, cmvn, idx, dcfg, common.jobs);
    if (!dump.empty()) {
        fs::path out(dump);
        write_hypotheses_csv(sum, corpus.vocab, out,
                             out.parent_path() / (out.stem().string() + "_scores.txt"));
    }
    std::cout << "decoded " << sum.results.size() << " utterances (" << split << "), cer "
              << format_float(sum.corpus_cer) << ", backward-decoded fraction "
              << format_float(sum.r2l_fraction) << "\n";
    return 0;
}

int cmd_eval(const Common& common, const std::string& split, const std::string& hyps_path,
             const std::string& report) {
    RunConfig cfg = common.load();
    Corpus corpus = load_corpus(CorpusPaths{cfg.data_dir});
    auto& idx = split_indices(corpus, split);

    std::ifstream f(hyps_path);
    if (!f) throw DataError("eval: cannot read " + hyps_path);
    std::string line;
    std::getline(f, line);  // header
    std::map<std::string, std::vector<int>> hyps;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::size_t pos = 0;
        for (int c = 0; c < 4; ++c) {
            const auto comma = line.find(',', pos);
            if (comma == std::string::npos) throw DataError("eval: malformed row: " + line);
            cols.push_back(line.substr(pos, comma - pos));
            pos = comma + 1;
        }
        std::istringstream toks(line.substr(pos));
        std::string tok;
        std::vector<int> ids;
        while (toks >> tok) ids.push_back(corpus.vocab.id(tok));
        hyps[cols[0]] = std::move(ids);
    }

    DecodeSummary sum;
    std::vector<std::string> missing;
    for (auto i : idx) {
        const auto& u = corpus.utts[i];
        auto it = hyps.find(u.id);
        if (it == hyps.end()) {
            missing.push_back(u.id);
            continue;
        }
        UttDecodeResult r;
        r.utt_id = u.id;
        r.tokens = it->second;
        sum.results.push_back(std::move(r));
    }
    if (!missing.empty()) {
        std::string msg = "eval: missing hypotheses for ids:";
        for (const auto& m : missing) msg += " " + m;
        throw DataError(msg);
    }
    EvalReport rep = evaluate_hypotheses(corpus, idx, sum);
    if (!report.empty()) {
        std::ofstream r(report);
        r << "utt_id,cer\n";
        for (const auto& [id, c] : rep.per_utt) r << id << ',' << format_float(c) << '\n';
    }
    std::cout << "corpus cer " << format_float(rep.corpus_cer) << " over " << rep.per_utt.size()
              << " utterances\n";
    return 0;
}

int cmd_inspect_attention(const Common& common, const std::string& ckpt, const std::string& utt,
                          const std::string& prefix) {
    RunConfig cfg = common.load();
    Corpus corpus = load_corpus(CorpusPaths{cfg.data_dir});
    CmvnStats cmvn = load_cmvn(CorpusPaths{cfg.data_dir}.cmvn());
    Model model = load_model(cfg, ckpt);

    const Utterance* target = nullptr;
    for (const auto& u : corpus.utts)
        if (u.id == utt) target = &u;
    if (!target) throw DataError("inspect-attention: utterance '" + utt + "' not found");

    DecodeConfig dcfg = cfg.decode;
    dcfg.capture_attention = true;
    AttentionReport rep = inspect_attention(model, *target, cmvn, dcfg);
    write_matrix_csv(rep.l2r, prefix + "_l2r.csv");
    write_pgm(rep.l2r, prefix + "_l2r.pgm");
    write_matrix_csv(rep.r2l, prefix + "_r2l.csv");
    write_pgm(rep.r2l, prefix + "_r2l.pgm");
    std::cout << "l2r monotone fraction " << format_float(rep.l2r_monotone)
              << ", r2l anti-monotone fraction " << format_float(rep.r2l_antimonotone) << "\n";
    return 0;
}

int cmd_average(const std::string& out, const std::vector<std::string>& inputs) {
    std::vector<Checkpoint> cks;
    for (const auto& p : inputs) cks.push_back(load_checkpoint(p));
    Checkpoint avg = average_checkpoints(cks);
    save_checkpoint(avg, out);
    std::cout << "averaged " << inputs.size() << " checkpoints -> " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"speech transformer with a shared-weight bidirectional decoder"};
    app.require_subcommand(1);

    Common common;
    app.add_option("--config", common.config_path, "run configuration file (key = value)");
    auto* seed_opt = app.add_option("--seed", common.seed, "override the config seed");
    app.add_option("--jobs", common.jobs, "decode worker threads");

    auto* gen = app.add_subcommand("generate", "write the synthetic corpus to disk");
    auto* train = app.add_subcommand("train", "train and emit per-epoch checkpoints");

    std::string ckpt, split = "test", mode_flag, sweep, dump, utt, prefix = "attention", report;
    int beam_override = 0;
    auto* dec = app.add_subcommand("decode", "beam-search a split");
    dec->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    dec->add_option("--split", split, "train|dev|test");
    dec->add_option("--mode", mode_flag, "bidirectional|bs-l2r|bs-r2l");
    dec->add_option("--beam", beam_override, "beam size override");
    dec->add_option("--sweep", sweep, "comma-separated beam sizes, emits the sweep CSV");
    dec->add_option("--dump", dump, "hypotheses CSV output path");

    std::string hyps_path;
    auto* ev = app.add_subcommand("eval", "score a hypotheses CSV against a split");
    ev->add_option("--split", split, "train|dev|test");
    ev->add_option("--hyps", hyps_path, "hypotheses CSV from decode --dump")->required();
    ev->add_option("--report", report, "per-utterance CER CSV output");

    auto* insp = app.add_subcommand("inspect-attention", "export cross-attention heatmaps");
    insp->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    insp->add_option("--utt", utt, "utterance id")->required();
    insp->add_option("--out-prefix", prefix, "output path prefix");

    std::string avg_out;
    std::vector<std::string> avg_in;
    auto* avg = app.add_subcommand("average", "elementwise-average checkpoints");
    avg->add_option("--out", avg_out, "output checkpoint")->required();
    avg->add_option("inputs", avg_in, "input checkpoints")->required();

    CLI11_PARSE(app, argc, argv);
    common.seed_set = seed_opt->count() > 0;

    try {
        if (gen->parsed()) return cmd_generate(common);
        if (train->parsed()) return cmd_train(common);
        if (dec->parsed())
            return cmd_decode(common, ckpt, split, mode_flag, beam_override, sweep, dump);
        if (ev->parsed()) return cmd_eval(common, split, hyps_path, report);
        if (insp->parsed()) return cmd_inspect_attention(common, ckpt, utt, prefix);
        if (avg->parsed()) return cmd_average(avg_out, avg_in);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
