#pragma once

// Flat `key = value` run configuration. Every key is validated against the
// documented schema; unknown keys are rejected.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "stbd/data.hpp"
#include "stbd/decode.hpp"
#include "stbd/model.hpp"
#include "stbd/train.hpp"

namespace stbd {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    std::uint64_t seed = 1;
    TrainMode mode = TrainMode::STBD;
    std::string data_dir = "data";
    std::string out_dir = "run";

    ToyCorpusParams data;
    ModelConfig model;
    TrainConfig train;
    DecodeConfig decode;

    // model.vocab_size and input_dim follow the data settings
    void finalize() {
        data.seed = seed;
        model.init_seed = seed;
        train.seed = seed;
        model.vocab_size = data.vocab_size + Vocabulary::kNumSpecials;
        model.input_dim = data.feat_dim * 3;
        model.validate();
        train.optim.validate();
        train.loss.validate();
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_num(const std::string& key, const std::string& v) {
    std::istringstream is(v);
    T out;
    is >> out;
    if (is.fail() || !(is >> std::ws).eof())
        throw ConfigError("config: bad value '" + v + "' for key '" + key + "'");
    return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: bad boolean '" + v + "' for key '" + key + "'");
}

}  // namespace detail

inline void apply_config_entry(RunConfig& c, const std::string& key, const std::string& val) {
    using detail::parse_bool;
    using detail::parse_num;
    static const char* known =
        "seed mode data.dir out.dir "
        "data.n_utts data.vocab_size data.len_min data.len_max "
        "data.frames_per_token_min data.frames_per_token_max data.noise_sigma data.feat_dim "
        "model.n_enc_layers model.n_dec_layers model.d_m model.d_f model.h model.dropout "
        "model.max_positions model.norm model.tie_embeddings "
        "optim.beta1 optim.beta2 optim.eps optim.k optim.warmup_steps optim.clip_norm "
        "loss.alpha loss.label_smoothing "
        "train.epochs train.max_frames_per_batch train.average_best "
        "decode.beam_size decode.length_penalty decode.gnmt_penalty decode.extra_length "
        "decode.mode";

    if (key == "seed") c.seed = parse_num<std::uint64_t>(key, val);
    else if (key == "mode") {
        if (val == "stbd") c.mode = TrainMode::STBD;
        else if (val == "st-l2r") c.mode = TrainMode::STL2R;
        else if (val == "st-r2l") c.mode = TrainMode::STR2L;
        else throw ConfigError("config: mode must be stbd, st-l2r or st-r2l");
        c.train.mode = c.mode;
    }
    else if (key == "data.dir") c.data_dir = val;
    else if (key == "out.dir") c.out_dir = val;
    else if (key == "data.n_utts") c.data.n_utts = parse_num<std::size_t>(key, val);
    else if (key == "data.vocab_size") c.data.vocab_size = parse_num<std::size_t>(key, val);
    else if (key == "data.len_min") c.data.len_min = parse_num<std::size_t>(key, val);
    else if (key == "data.len_max") c.data.len_max = parse_num<std::size_t>(key, val);
    else if (key == "data.frames_per_token_min")
        c.data.frames_per_token_min = parse_num<std::size_t>(key, val);
    else if (key == "data.frames_per_token_max")
        c.data.frames_per_token_max = parse_num<std::size_t>(key, val);
    else if (key == "data.noise_sigma") c.data.noise_sigma = parse_num<double>(key, val);
    else if (key == "data.feat_dim") c.data.feat_dim = parse_num<std::size_t>(key, val);
    else if (key == "model.n_enc_layers") c.model.n_enc_layers = parse_num<std::size_t>(key, val);
    else if (key == "model.n_dec_layers") c.model.n_dec_layers = parse_num<std::size_t>(key, val);
    else if (key == "model.d_m") c.model.d_m = parse_num<std::size_t>(key, val);
    else if (key == "model.d_f") c.model.d_f = parse_num<std::size_t>(key, val);
    else if (key == "model.h") c.model.h = parse_num<std::size_t>(key, val);
    else if (key == "model.dropout") c.model.dropout = parse_num<double>(key, val);
    else if (key == "model.max_positions") c.model.max_positions = parse_num<std::size_t>(key, val);
    else if (key == "model.norm") {
        if (val == "pre") c.model.norm = NormPlacement::Pre;
        else if (val == "post") c.model.norm = NormPlacement::Post;
        else throw ConfigError("config: model.norm must be pre or post");
    }
    else if (key == "model.tie_embeddings") c.model.tie_embeddings = parse_bool(key, val);
    else if (key == "optim.beta1") c.train.optim.beta1 = parse_num<double>(key, val);
    else if (key == "optim.beta2") c.train.optim.beta2 = parse_num<double>(key, val);
    else if (key == "optim.eps") c.train.optim.eps = parse_num<double>(key, val);
    else if (key == "optim.k") c.train.optim.k = parse_num<double>(key, val);
    else if (key == "optim.warmup_steps")
        c.train.optim.warmup_steps = parse_num<std::size_t>(key, val);
    else if (key == "optim.clip_norm") c.train.optim.clip_norm = parse_num<double>(key, val);
    else if (key == "loss.alpha") c.train.loss.alpha = parse_num<double>(key, val);
    else if (key == "loss.label_smoothing")
        c.train.loss.label_smoothing = parse_num<double>(key, val);
    else if (key == "train.epochs") c.train.epochs = parse_num<std::size_t>(key, val);
    else if (key == "train.max_frames_per_batch")
        c.train.max_frames_per_batch = parse_num<std::size_t>(key, val);
    else if (key == "train.average_best") c.train.average_best = parse_num<std::size_t>(key, val);
    else if (key == "decode.beam_size") c.decode.beam_size = parse_num<std::size_t>(key, val);
    else if (key == "decode.length_penalty") c.decode.length_penalty = parse_num<double>(key, val);
    else if (key == "decode.gnmt_penalty") c.decode.gnmt_penalty = parse_bool(key, val);
    else if (key == "decode.extra_length") c.decode.extra_length = parse_num<std::size_t>(key, val);
    else if (key == "decode.mode") {
        if (val == "bidirectional") c.decode.mode = DecodeMode::Bidirectional;
        else if (val == "l2r") c.decode.mode = DecodeMode::L2ROnly;
        else if (val == "r2l") c.decode.mode = DecodeMode::R2LOnly;
        else throw ConfigError("config: decode.mode must be bidirectional, l2r or r2l");
    }
    else
        throw ConfigError("config: unknown key '" + key + "' (known keys: " + known + ")");
}

inline RunConfig parse_config_text(const std::string& text) {
    RunConfig c;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) + " is not key = value");
        apply_config_entry(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    c.finalize();
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot read " + path.string());
    std::ostringstream os;
    os << f.rdbuf();
    return parse_config_text(os.str());
}

}  // namespace stbd
