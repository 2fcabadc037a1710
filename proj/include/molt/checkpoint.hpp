#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "molt/encoder.hpp"
#include "molt/multiscale.hpp"
#include "molt/tensor.hpp"

namespace molt {

// Branch checkpoint, little-endian throughout:
//   magic "MOLTCKPT" (8 bytes)
//   version u32 (currently 1)
//   config  7 x i32: image_side, patch_side, embed_dim, num_heads,
//                    num_blocks, num_classes, mlp_hidden
//   count   u32 named tensors, each:
//     name_len u32, name bytes, rank u32, extents u32[rank], doubles raw
// Raw doubles round-trip bit-exactly.

namespace ckpt_detail {

constexpr char kMagic[8] = {'M', 'O', 'L', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
    T value;
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw ParseError(path + ": truncated checkpoint");
    return value;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const EncoderConfig& cfg,
                            const EncoderParams& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write(ckpt_detail::kMagic, sizeof(ckpt_detail::kMagic));
    ckpt_detail::write_pod(out, ckpt_detail::kVersion);
    for (const int v : {cfg.image_side, cfg.patch_side, cfg.embed_dim, cfg.num_heads,
                        cfg.num_blocks, cfg.num_classes, cfg.mlp_hidden}) {
        ckpt_detail::write_pod(out, static_cast<std::int32_t>(v));
    }
    std::uint32_t count = 0;
    params.for_each([&](const std::string&, const Tensor&) { ++count; });
    ckpt_detail::write_pod(out, count);
    params.for_each([&](const std::string& name, const Tensor& t) {
        ckpt_detail::write_pod(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        ckpt_detail::write_pod(out, static_cast<std::uint32_t>(t.rank()));
        for (const int e : t.shape()) ckpt_detail::write_pod(out, static_cast<std::uint32_t>(e));
        out.write(reinterpret_cast<const char*>(t.data().data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    });
    if (!out) throw IoError("write failed: " + path);
}

struct Checkpoint {
    EncoderConfig config;
    EncoderParams params;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, ckpt_detail::kMagic, sizeof(magic)) != 0) {
        throw ParseError(path + ": not a checkpoint file");
    }
    const auto version = ckpt_detail::read_pod<std::uint32_t>(in, path);
    if (version != ckpt_detail::kVersion) {
        throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    Checkpoint ckpt;
    std::int32_t fields[7];
    for (std::int32_t& f : fields) f = ckpt_detail::read_pod<std::int32_t>(in, path);
    ckpt.config = {fields[0], fields[1], fields[2], fields[3], fields[4], fields[5], fields[6]};
    ckpt.config.validate();

    std::map<std::string, Tensor> tensors;
    const auto count = ckpt_detail::read_pod<std::uint32_t>(in, path);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = ckpt_detail::read_pod<std::uint32_t>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto rank = ckpt_detail::read_pod<std::uint32_t>(in, path);
        std::vector<int> shape(rank);
        std::size_t n = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            shape[r] = static_cast<int>(ckpt_detail::read_pod<std::uint32_t>(in, path));
            n *= static_cast<std::size_t>(shape[r]);
        }
        std::vector<double> data(n);
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
        if (!in) throw ParseError(path + ": truncated tensor '" + name + "'");
        tensors.emplace(name, Tensor::from_data(std::move(shape), std::move(data)));
    }

    // Materialize the expected structure, then fill by name.
    Rng rng(0);
    ckpt.params = EncoderParams::init(ckpt.config, rng);
    std::size_t assigned = 0;
    ckpt.params.for_each([&](const std::string& name, Tensor& t) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ParseError(path + ": missing tensor '" + name + "'");
        if (it->second.shape() != t.shape()) {
            throw ParseError(path + ": tensor '" + name + "' has shape " +
                             shape_string(it->second.shape()) + ", expected " +
                             shape_string(t.shape()));
        }
        t = it->second;
        ++assigned;
    });
    if (assigned != tensors.size()) {
        throw ParseError(path + ": checkpoint holds " + std::to_string(tensors.size()) +
                         " tensors, expected " + std::to_string(assigned));
    }
    return ckpt;
}

// One checkpoint per branch plus a manifest listing the three files, one
// path per line relative to the manifest.
inline void save_branch_checkpoints(const std::string& dir, const PyramidConfig& pcfg,
                                    const MultiscaleParams& params) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir + "/checkpoints.txt");
    if (!manifest) throw IoError("cannot write checkpoint manifest: " + dir + "/checkpoints.txt");
    for (int i = 0; i < 3; ++i) {
        const std::string name = "scale" + std::to_string(i) + ".ckpt";
        save_checkpoint(dir + "/" + name, pcfg.scales[i], params.branch[i]);
        manifest << name << '\n';
    }
    if (!manifest) throw IoError("write failed: " + dir + "/checkpoints.txt");
}

struct BranchCheckpoints {
    PyramidConfig pyramid;
    MultiscaleParams params;
};

inline BranchCheckpoints load_branch_checkpoints(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open checkpoint manifest: " + manifest_path);
    const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
    std::vector<std::string> files;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) files.push_back((base / line).string());
    }
    if (files.size() != 3) {
        throw ParseError(manifest_path + ": expected 3 checkpoint paths, found " +
                         std::to_string(files.size()));
    }
    BranchCheckpoints out;
    for (int i = 0; i < 3; ++i) {
        Checkpoint ckpt = load_checkpoint(files[i]);
        out.pyramid.scales[i] = ckpt.config;
        out.params.branch[i] = std::move(ckpt.params);
    }
    out.pyramid.validate();
    return out;
}

}  // namespace molt
