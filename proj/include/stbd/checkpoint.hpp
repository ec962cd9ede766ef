#pragma once

// Checkpoint file layout:
//   magic "STBD", u32 LE version, u32 LE tensor count,
//   per tensor: u32 LE name length, UTF-8 name, u32 LE rank,
//               u32 LE dims, raw IEEE-754 LE f32 values,
//   trailing metadata: u32 LE byte length, UTF-8 key=value lines.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "stbd/data.hpp"
#include "stbd/model.hpp"

namespace stbd {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BadMagicError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct VersionError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct TensorShapeError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct TruncatedError : CheckpointError {
    using CheckpointError::CheckpointError;
};

constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::vector<NamedTensor> tensors;
    std::map<std::string, std::string> metadata;

    const NamedTensor* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }

    static Checkpoint from_model(const Model& model,
                                 std::map<std::string, std::string> metadata = {}) {
        Checkpoint ck;
        ck.metadata = std::move(metadata);
        for (const auto& [name, t] : model.parameters()) {
            NamedTensor nt;
            nt.name = name;
            nt.shape = t.shape();
            nt.values.reserve(t.numel());
            for (double v : t.data()) nt.values.push_back(static_cast<float>(v));
            ck.tensors.push_back(std::move(nt));
        }
        return ck;
    }

    void apply_to(Model& model) const {
        // Tensor copies share storage with the registered parameter.
        for (const auto& [name, p] : model.parameters()) {
            Tensor t = p;
            const NamedTensor* nt = find(name);
            if (!nt) throw TensorShapeError("checkpoint: missing tensor '" + name + "'");
            if (nt->shape != t.shape())
                throw TensorShapeError("checkpoint: tensor '" + name + "' has shape " +
                                       shape_str(nt->shape) + ", model expects " +
                                       shape_str(t.shape()));
            for (std::size_t i = 0; i < nt->values.size(); ++i)
                t.data()[i] = static_cast<double>(nt->values[i]);
        }
    }
};

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("save_checkpoint: cannot write " + path.string());
    f.write("STBD", 4);
    ioutil::put_u32(f, ck.version);
    ioutil::put_u32(f, static_cast<std::uint32_t>(ck.tensors.size()));
    for (const auto& t : ck.tensors) {
        ioutil::put_u32(f, static_cast<std::uint32_t>(t.name.size()));
        f.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        ioutil::put_u32(f, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) ioutil::put_u32(f, static_cast<std::uint32_t>(d));
        for (float v : t.values) ioutil::put_f32(f, v);
    }
    std::string meta;
    for (const auto& [k, v] : ck.metadata) meta += k + "=" + v + "\n";
    ioutil::put_u32(f, static_cast<std::uint32_t>(meta.size()));
    f.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    if (!f) throw CheckpointError("save_checkpoint: write failure on " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("load_checkpoint: cannot read " + path.string());
    char magic[4];
    if (!f.read(magic, 4)) throw TruncatedError("load_checkpoint: truncated file (magic)");
    if (std::string(magic, 4) != "STBD")
        throw BadMagicError("load_checkpoint: bad magic in " + path.string());
    Checkpoint ck;
    try {
        ck.version = ioutil::get_u32(f);
        if (ck.version != kCheckpointVersion)
            throw VersionError("load_checkpoint: unsupported version " +
                               std::to_string(ck.version));
        const std::uint32_t count = ioutil::get_u32(f);
        for (std::uint32_t i = 0; i < count; ++i) {
            NamedTensor t;
            const std::uint32_t nlen = ioutil::get_u32(f);
            t.name.resize(nlen);
            if (!f.read(t.name.data(), nlen))
                throw TruncatedError("load_checkpoint: truncated tensor name");
            const std::uint32_t rank = ioutil::get_u32(f);
            std::size_t n = 1;
            for (std::uint32_t d = 0; d < rank; ++d) {
                t.shape.push_back(ioutil::get_u32(f));
                n *= t.shape.back();
            }
            t.values.resize(n);
            for (auto& v : t.values) v = ioutil::get_f32(f);
            for (const auto& prev : ck.tensors)
                if (prev.name == t.name)
                    throw CheckpointError("load_checkpoint: duplicate tensor '" + t.name + "'");
            ck.tensors.push_back(std::move(t));
        }
        const std::uint32_t mlen = ioutil::get_u32(f);
        std::string meta(mlen, '\0');
        if (mlen && !f.read(meta.data(), mlen))
            throw TruncatedError("load_checkpoint: truncated metadata");
        std::size_t pos = 0;
        while (pos < meta.size()) {
            auto nl = meta.find('\n', pos);
            if (nl == std::string::npos) nl = meta.size();
            const std::string line = meta.substr(pos, nl - pos);
            const auto eq = line.find('=');
            if (eq != std::string::npos) ck.metadata[line.substr(0, eq)] = line.substr(eq + 1);
            pos = nl + 1;
        }
    } catch (const DataError& e) {
        throw TruncatedError(std::string("load_checkpoint: ") + e.what());
    }
    return ck;
}

// Elementwise arithmetic mean of every tensor across checkpoints.
inline Checkpoint average_checkpoints(const std::vector<Checkpoint>& cks) {
    if (cks.empty()) throw CheckpointError("average_checkpoints: no checkpoints");
    Checkpoint out = cks[0];
    for (std::size_t c = 1; c < cks.size(); ++c) {
        if (cks[c].tensors.size() != out.tensors.size())
            throw CheckpointError("average_checkpoints: tensor count mismatch");
        for (std::size_t i = 0; i < out.tensors.size(); ++i) {
            auto& acc = out.tensors[i];
            const NamedTensor* t = cks[c].find(acc.name);
            if (!t)
                throw CheckpointError("average_checkpoints: tensor '" + acc.name +
                                      "' missing from checkpoint " + std::to_string(c));
            if (t->shape != acc.shape)
                throw CheckpointError("average_checkpoints: tensor '" + acc.name +
                                      "' shape mismatch");
            for (std::size_t j = 0; j < acc.values.size(); ++j) acc.values[j] += t->values[j];
        }
    }
    const float inv = 1.0f / static_cast<float>(cks.size());
    for (auto& t : out.tensors)
        for (auto& v : t.values) v *= inv;
    out.metadata.clear();
    std::string sources;
    for (std::size_t c = 0; c < cks.size(); ++c) {
        auto it = cks[c].metadata.find("epoch");
        if (c) sources += ";";
        sources += (it != cks[c].metadata.end() ? it->second : std::to_string(c));
    }
    out.metadata["averaged_from"] = sources;
    return out;
}

}  // namespace stbd
