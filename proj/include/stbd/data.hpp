#pragma once

// Synthetic corpus generation, feature pipeline (global CMVN, 3x frame
// stacking), vocabulary handling, direction stream construction and the
// character error rate metric, plus the on-disk formats for all of it.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "stbd/tensor.hpp"

namespace stbd {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- vocabulary ------------------------------------------------------------

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kEos = 2;
    static constexpr int kL2R = 3;
    static constexpr int kR2L = 4;
    static constexpr int kNumSpecials = 5;

    Vocabulary() { tokens_ = specials(); }

    explicit Vocabulary(const std::vector<std::string>& content_tokens) {
        tokens_ = specials();
        for (const auto& t : content_tokens) tokens_.push_back(t);
        check();
    }

    static Vocabulary synthetic(std::size_t content_size) {
        std::vector<std::string> toks;
        for (std::size_t i = 0; i < content_size; ++i) {
            std::ostringstream os;
            os << 'c' << (i < 10 ? "0" : "") << i;
            toks.push_back(os.str());
        }
        return Vocabulary(toks);
    }

    std::size_t size() const { return tokens_.size(); }
    std::size_t content_size() const { return tokens_.size() - kNumSpecials; }
    int first_content_id() const { return kNumSpecials; }

    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

    int id(const std::string& tok) const {
        for (std::size_t i = 0; i < tokens_.size(); ++i)
            if (tokens_[i] == tok) return static_cast<int>(i);
        return kUnk;
    }

    static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

    void save(const std::filesystem::path& path) const {
        std::ofstream f(path);
        if (!f) throw DataError("Vocabulary::save: cannot write " + path.string());
        for (const auto& t : tokens_) f << t << '\n';
    }

    static Vocabulary load(const std::filesystem::path& path) {
        std::ifstream f(path);
        if (!f) throw DataError("Vocabulary::load: cannot read " + path.string());
        Vocabulary v;
        v.tokens_.clear();
        std::string line;
        while (std::getline(f, line))
            if (!line.empty()) v.tokens_.push_back(line);
        v.check();
        return v;
    }

private:
    static std::vector<std::string> specials() {
        return {"<PAD>", "<UNK>", "<EOS>", "<L2R>", "<R2L>"};
    }
    void check() const {
        auto sp = specials();
        if (tokens_.size() < sp.size()) throw DataError("Vocabulary: missing special tokens");
        for (std::size_t i = 0; i < sp.size(); ++i)
            if (tokens_[i] != sp[i])
                throw DataError("Vocabulary: special token slot " + std::to_string(i) +
                                " holds '" + tokens_[i] + "', expected '" + sp[i] + "'");
        for (std::size_t i = 0; i < tokens_.size(); ++i)
            for (std::size_t j = i + 1; j < tokens_.size(); ++j)
                if (tokens_[i] == tokens_[j])
                    throw DataError("Vocabulary: duplicate token '" + tokens_[i] + "'");
    }

    std::vector<std::string> tokens_;
};

// ---- corpus ----------------------------------------------------------------

struct Utterance {
    std::string id;
    std::size_t n_frames = 0;
    std::size_t feat_dim = 0;
    std::vector<double> frames;  // n_frames x feat_dim, row-major, pre-CMVN
    std::vector<int> reference;  // content token ids, no specials
};

struct Corpus {
    Vocabulary vocab;
    std::vector<Utterance> utts;
    std::vector<std::size_t> train_idx, dev_idx, test_idx;
};

struct ToyCorpusParams {
    std::uint64_t seed = 1;
    std::size_t n_utts = 2000;
    std::size_t vocab_size = 30;  // content tokens
    std::size_t len_min = 3, len_max = 12;
    std::size_t frames_per_token_min = 2, frames_per_token_max = 4;
    double noise_sigma = 0.1;
    std::size_t feat_dim = 80;
};

// Each token is rendered as a run of frames around a fixed random template,
// so the audio-to-text alignment is monotonic by construction.
inline Corpus generate_toy_corpus(const ToyCorpusParams& p) {
    if (p.vocab_size < 2) throw DataError("generate_toy_corpus: vocab_size must be >= 2");
    if (p.len_min < 1 || p.len_max > 50 || p.len_min > p.len_max)
        throw DataError("generate_toy_corpus: length range must sit inside [1,50]");
    if (p.frames_per_token_min < 1 || p.frames_per_token_min > p.frames_per_token_max)
        throw DataError("generate_toy_corpus: invalid frames-per-token range");
    if (p.n_utts == 0) throw DataError("generate_toy_corpus: n_utts must be >= 1");

    std::mt19937_64 rng(p.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<std::vector<double>> templates(p.vocab_size, std::vector<double>(p.feat_dim));
    for (auto& t : templates)
        for (auto& x : t) x = gauss(rng);

    Corpus c;
    c.vocab = Vocabulary::synthetic(p.vocab_size);
    std::uniform_int_distribution<std::size_t> len_dist(p.len_min, p.len_max);
    std::uniform_int_distribution<std::size_t> tok_dist(0, p.vocab_size - 1);
    std::uniform_int_distribution<std::size_t> rep_dist(p.frames_per_token_min,
                                                        p.frames_per_token_max);
    for (std::size_t u = 0; u < p.n_utts; ++u) {
        Utterance ut;
        {
            std::ostringstream os;
            os << "utt" << std::setw(5) << std::setfill('0') << u;
            ut.id = os.str();
        }
        ut.feat_dim = p.feat_dim;
        const std::size_t len = len_dist(rng);
        for (std::size_t i = 0; i < len; ++i) {
            const std::size_t tok = tok_dist(rng);
            ut.reference.push_back(static_cast<int>(tok) + Vocabulary::kNumSpecials);
            const std::size_t reps = rep_dist(rng);
            for (std::size_t r = 0; r < reps; ++r)
                for (std::size_t d = 0; d < p.feat_dim; ++d)
                    ut.frames.push_back(templates[tok][d] + p.noise_sigma * gauss(rng));
        }
        ut.n_frames = ut.frames.size() / p.feat_dim;
        c.utts.push_back(std::move(ut));
    }

    // 80/10/10 split by seeded shuffle
    std::vector<std::size_t> order(c.utts.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 split_rng(p.seed ^ 0x5b1d5b1dULL);
    std::shuffle(order.begin(), order.end(), split_rng);
    const std::size_t n_train = c.utts.size() * 8 / 10;
    const std::size_t n_dev = c.utts.size() / 10;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (i < n_train)
            c.train_idx.push_back(order[i]);
        else if (i < n_train + n_dev)
            c.dev_idx.push_back(order[i]);
        else
            c.test_idx.push_back(order[i]);
    }
    std::sort(c.train_idx.begin(), c.train_idx.end());
    std::sort(c.dev_idx.begin(), c.dev_idx.end());
    std::sort(c.test_idx.begin(), c.test_idx.end());
    return c;
}

// ---- CMVN ------------------------------------------------------------------

struct CmvnStats {
    std::size_t dim = 0;
    std::size_t frame_count = 0;
    std::vector<double> mean;
    std::vector<double> var;
};

inline CmvnStats fit_cmvn(const Corpus& c, const std::vector<std::size_t>& idx) {
    CmvnStats s;
    for (auto i : idx) {
        const auto& u = c.utts[i];
        if (s.dim == 0) {
            s.dim = u.feat_dim;
            s.mean.assign(s.dim, 0.0);
            s.var.assign(s.dim, 0.0);
        }
        for (std::size_t f = 0; f < u.n_frames; ++f)
            for (std::size_t d = 0; d < s.dim; ++d) s.mean[d] += u.frames[f * s.dim + d];
        s.frame_count += u.n_frames;
    }
    if (s.frame_count == 0) throw DataError("fit_cmvn: no frames");
    for (auto& m : s.mean) m /= static_cast<double>(s.frame_count);
    for (auto i : idx) {
        const auto& u = c.utts[i];
        for (std::size_t f = 0; f < u.n_frames; ++f)
            for (std::size_t d = 0; d < s.dim; ++d) {
                const double x = u.frames[f * s.dim + d] - s.mean[d];
                s.var[d] += x * x;
            }
    }
    for (auto& v : s.var) v /= static_cast<double>(s.frame_count);
    return s;
}

inline std::vector<double> apply_cmvn(const CmvnStats& s, const std::vector<double>& frames) {
    if (s.dim == 0 || frames.size() % s.dim != 0)
        throw DataError("apply_cmvn: frame buffer not a multiple of stats dim");
    std::vector<double> out(frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const std::size_t d = i % s.dim;
        out[i] = (frames[i] - s.mean[d]) / std::sqrt(s.var[d] + 1e-10);
    }
    return out;
}

// ---- downsampling ----------------------------------------------------------

// Stack consecutive frame triples into one wide frame; the last group is
// zero-padded when n is not a multiple of 3.
inline std::vector<double> downsample3(const std::vector<double>& frames, std::size_t n,
                                       std::size_t d, std::size_t* out_rows) {
    if (n < 1) throw DataError("downsample3: need at least one frame");
    const std::size_t rows = (n + 2) / 3;
    std::vector<double> out(rows * 3 * d, 0.0);
    for (std::size_t f = 0; f < n; ++f) {
        const std::size_t r = f / 3, slot = f % 3;
        std::copy_n(frames.data() + f * d, d, out.data() + r * 3 * d + slot * d);
    }
    if (out_rows) *out_rows = rows;
    return out;
}

// ---- decoder streams -------------------------------------------------------

enum class Direction { L2R, R2L };

inline const char* direction_name(Direction d) { return d == Direction::L2R ? "L2R" : "R2L"; }

struct DecoderStream {
    Direction direction = Direction::L2R;
    std::vector<int> input;   // starts with <L2R> or <R2L>
    std::vector<int> target;  // input shifted left, <EOS> appended
};

inline std::pair<DecoderStream, DecoderStream> build_streams(const std::vector<int>& reference) {
    if (reference.empty()) throw DataError("build_streams: empty reference");
    for (int t : reference)
        if (Vocabulary::is_special(t))
            throw DataError("build_streams: reference contains special token id " +
                            std::to_string(t));
    DecoderStream l2r, r2l;
    l2r.direction = Direction::L2R;
    l2r.input.push_back(Vocabulary::kL2R);
    l2r.input.insert(l2r.input.end(), reference.begin(), reference.end());
    l2r.target = reference;
    l2r.target.push_back(Vocabulary::kEos);

    std::vector<int> rev(reference.rbegin(), reference.rend());
    r2l.direction = Direction::R2L;
    r2l.input.push_back(Vocabulary::kR2L);
    r2l.input.insert(r2l.input.end(), rev.begin(), rev.end());
    r2l.target = rev;
    r2l.target.push_back(Vocabulary::kEos);
    return {l2r, r2l};
}

// ---- metric ----------------------------------------------------------------

inline std::size_t edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::size_t> prev(m + 1), cur(m + 1);
    std::iota(prev.begin(), prev.end(), 0);
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

// Levenshtein distance over tokens divided by reference length. Not
// clipped at 1.0.
inline double cer(const std::vector<int>& reference, const std::vector<int>& hypothesis) {
    if (reference.empty()) throw DataError("cer: empty reference");
    return static_cast<double>(edit_distance(reference, hypothesis)) /
           static_cast<double>(reference.size());
}

// ---- binary I/O ------------------------------------------------------------

namespace ioutil {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("unexpected end of file (u32)");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
inline void put_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}
inline float get_f32(std::istream& is) {
    std::uint32_t bits = get_u32(is);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}
inline void put_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}
inline double get_f64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw DataError("unexpected end of file (f64)");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace ioutil

inline void save_cmvn(const CmvnStats& s, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("save_cmvn: cannot write " + path.string());
    ioutil::put_u32(f, static_cast<std::uint32_t>(s.dim));
    for (auto m : s.mean) ioutil::put_f64(f, m);
    for (auto v : s.var) ioutil::put_f64(f, v);
}

inline CmvnStats load_cmvn(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("load_cmvn: cannot read " + path.string());
    CmvnStats s;
    s.dim = ioutil::get_u32(f);
    s.mean.resize(s.dim);
    s.var.resize(s.dim);
    for (auto& m : s.mean) m = ioutil::get_f64(f);
    for (auto& v : s.var) v = ioutil::get_f64(f);
    return s;
}

// Per-utterance feature file: u32 frame count, u32 dim, raw f32 values.
inline void save_features(const Utterance& u, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("save_features: cannot write " + path.string());
    ioutil::put_u32(f, static_cast<std::uint32_t>(u.n_frames));
    ioutil::put_u32(f, static_cast<std::uint32_t>(u.feat_dim));
    for (double v : u.frames) ioutil::put_f32(f, static_cast<float>(v));
}

inline void load_features(Utterance& u, const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("load_features: cannot read " + path.string());
    u.n_frames = ioutil::get_u32(f);
    u.feat_dim = ioutil::get_u32(f);
    u.frames.resize(u.n_frames * u.feat_dim);
    for (auto& v : u.frames) v = ioutil::get_f32(f);
}

struct CorpusPaths {
    std::filesystem::path dir;
    std::filesystem::path manifest(const std::string& split) const {
        return dir / (split + ".csv");
    }
    std::filesystem::path vocab() const { return dir / "vocab.txt"; }
    std::filesystem::path cmvn() const { return dir / "cmvn.bin"; }
    std::filesystem::path feats(const std::string& utt_id) const {
        return dir / "feats" / (utt_id + ".bin");
    }
};

inline void save_corpus(const Corpus& c, const CmvnStats& stats, const CorpusPaths& paths) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(paths.dir / "feats", ec);
    if (ec) throw DataError("save_corpus: cannot create " + (paths.dir / "feats").string());
    c.vocab.save(paths.vocab());
    save_cmvn(stats, paths.cmvn());
    auto write_split = [&](const std::string& name, const std::vector<std::size_t>& idx) {
        std::ofstream m(paths.manifest(name));
        if (!m) throw DataError("save_corpus: cannot write manifest " + name);
        m << "utt_id,n_frames,transcript\n";
        for (auto i : idx) {
            const auto& u = c.utts[i];
            m << u.id << ',' << u.n_frames << ',';
            for (std::size_t t = 0; t < u.reference.size(); ++t) {
                if (t) m << ' ';
                m << c.vocab.token(u.reference[t]);
            }
            m << '\n';
            save_features(u, paths.feats(u.id));
        }
    };
    write_split("train", c.train_idx);
    write_split("dev", c.dev_idx);
    write_split("test", c.test_idx);
}

inline Corpus load_corpus(const CorpusPaths& paths) {
    Corpus c;
    c.vocab = Vocabulary::load(paths.vocab());
    auto read_split = [&](const std::string& name, std::vector<std::size_t>& idx) {
        std::ifstream m(paths.manifest(name));
        if (!m) throw DataError("load_corpus: missing manifest " + paths.manifest(name).string());
        std::string line;
        std::getline(m, line);  // header
        while (std::getline(m, line)) {
            if (line.empty()) continue;
            const auto c1 = line.find(',');
            const auto c2 = line.find(',', c1 + 1);
            if (c1 == std::string::npos || c2 == std::string::npos)
                throw DataError("load_corpus: malformed manifest row: " + line);
            Utterance u;
            u.id = line.substr(0, c1);
            std::istringstream toks(line.substr(c2 + 1));
            std::string tok;
            while (toks >> tok) u.reference.push_back(c.vocab.id(tok));
            load_features(u, paths.feats(u.id));
            idx.push_back(c.utts.size());
            c.utts.push_back(std::move(u));
        }
    };
    read_split("train", c.train_idx);
    read_split("dev", c.dev_idx);
    read_split("test", c.test_idx);
    return c;
}

}  // namespace stbd
