#pragma once

#include <array>
#include <utility>
#include <vector>

#include "molt/cam.hpp"
#include "molt/encoder.hpp"
#include "molt/imageops.hpp"
#include "molt/tensor.hpp"

namespace molt {

// Three branches with strictly increasing image sides and shared embedding
// width, head count, depth and class count. Branches share no weights.
struct PyramidConfig {
    std::array<EncoderConfig, 3> scales;

    void validate() const {
        for (const EncoderConfig& c : scales) c.validate();
        if (!(scales[0].image_side < scales[1].image_side &&
              scales[1].image_side < scales[2].image_side)) {
            throw ParameterError("pyramid sides must be strictly increasing");
        }
        for (int i = 1; i < 3; ++i) {
            if (scales[i].embed_dim != scales[0].embed_dim ||
                scales[i].num_heads != scales[0].num_heads ||
                scales[i].num_blocks != scales[0].num_blocks ||
                scales[i].num_classes != scales[0].num_classes ||
                scales[i].mlp_hidden != scales[0].mlp_hidden) {
                throw ParameterError(
                    "pyramid branches must share embed_dim, heads, blocks, classes, mlp_hidden");
            }
        }
    }

    int num_classes() const { return scales[0].num_classes; }
    int top_grid() const { return scales[2].grid(); }
};

struct MultiscaleParams {
    std::array<EncoderParams, 3> branch;

    static MultiscaleParams init(const PyramidConfig& pcfg, Rng& rng) {
        pcfg.validate();
        MultiscaleParams p;
        for (int i = 0; i < 3; ++i) p.branch[i] = EncoderParams::init(pcfg.scales[i], rng);
        return p;
    }

    template <typename Fn>
    void for_each(Fn&& fn) {
        for (int i = 0; i < 3; ++i) {
            branch[i].for_each([&](const std::string& name, Tensor& t) {
                fn("scale" + std::to_string(i) + "." + name, t);
            });
        }
    }

    template <typename Fn>
    void for_each(Fn&& fn) const {
        for (int i = 0; i < 3; ++i) {
            branch[i].for_each([&](const std::string& name, const Tensor& t) {
                fn("scale" + std::to_string(i) + "." + name, t);
            });
        }
    }

    void set_requires_grad(bool flag) {
        for (EncoderParams& p : branch) p.set_requires_grad(flag);
    }
};

enum class FuseMode { mean, max };

struct CombinedCam {
    Tensor map;                                // [N3 x N3 x C]
    std::array<Tensor, 3> per_scale_normalized;  // each [N3 x N3 x C], values in [0,1]
};

inline std::array<Tensor, 3> build_pyramid(const Tensor& image, const PyramidConfig& pcfg) {
    require_rank(image, 3, "build_pyramid");
    std::array<Tensor, 3> levels;
    for (int i = 0; i < 3; ++i) {
        levels[i] =
            bilinear_resize(image, pcfg.scales[i].image_side, pcfg.scales[i].image_side);
    }
    return levels;
}

struct ScaleRun {
    std::array<Cam, 3> cams;
    std::array<Tensor, 3> scores;  // each [C]
};

// Feed each pyramid level through its own branch; no state is shared.
inline ScaleRun run_scales(const Tensor& image, const MultiscaleParams& params,
                           const PyramidConfig& pcfg) {
    pcfg.validate();
    const std::array<Tensor, 3> levels = build_pyramid(image, pcfg);
    ScaleRun run;
    for (int i = 0; i < 3; ++i) {
        const EncoderConfig& cfg = pcfg.scales[i];
        EncodeResult enc = encode(levels[i], params.branch[i], cfg);
        ClassScoreMap smap = class_score_map(enc.embeddings, params.branch[i].score_kernel, cfg);
        run.scores[i] = class_scores(smap);
        Tensor fg = foreground_map(average_attention(enc.stack), cfg);
        run.cams[i] = build_cam(fg, smap, i);
    }
    return run;
}

// One class channel: upsample each scale's channel to the finest grid,
// min-max normalize, then combine pointwise.
inline Tensor fuse_channel(const std::array<Cam, 3>& cams, int class_id,
                           FuseMode mode = FuseMode::mean) {
    const int c = cams[0].map.shape()[2];
    if (class_id < 0 || class_id >= c) {
        throw ParameterError("fuse_channel: class " + std::to_string(class_id) +
                             " out of range [0, " + std::to_string(c) + ")");
    }
    int top_h = 0, top_w = 0;
    for (const Cam& cam : cams) {
        top_h = std::max(top_h, cam.map.shape()[0]);
        top_w = std::max(top_w, cam.map.shape()[1]);
    }
    Tensor combined({top_h, top_w});
    auto& o = combined.data_mut();
    for (int i = 0; i < 3; ++i) {
        Tensor level = minmax_normalize(
            bilinear_resize(channel_slice(cams[i].map, class_id), top_h, top_w));
        if (mode == FuseMode::mean) {
            for (std::size_t j = 0; j < o.size(); ++j) o[j] += level.data()[j] / 3.0;
        } else {
            for (std::size_t j = 0; j < o.size(); ++j) o[j] = std::max(o[j], level.data()[j]);
        }
    }
    return combined;
}

// All class channels plus the normalized per-scale constituents.
inline CombinedCam fuse_cams(const std::array<Cam, 3>& cams, FuseMode mode = FuseMode::mean) {
    const int c = cams[0].map.shape()[2];
    int top_h = 0, top_w = 0;
    for (const Cam& cam : cams) {
        top_h = std::max(top_h, cam.map.shape()[0]);
        top_w = std::max(top_w, cam.map.shape()[1]);
    }
    CombinedCam out;
    out.map = Tensor({top_h, top_w, c});
    for (int i = 0; i < 3; ++i) out.per_scale_normalized[i] = Tensor({top_h, top_w, c});
    for (int ch = 0; ch < c; ++ch) {
        for (int i = 0; i < 3; ++i) {
            Tensor level = minmax_normalize(
                bilinear_resize(channel_slice(cams[i].map, ch), top_h, top_w));
            auto& dst = out.per_scale_normalized[i].data_mut();
            for (int y = 0; y < top_h; ++y)
                for (int x = 0; x < top_w; ++x)
                    dst[(static_cast<std::size_t>(y) * top_w + x) * c + ch] = level(y, x);
        }
        Tensor fused = fuse_channel(cams, ch, mode);
        auto& dst = out.map.data_mut();
        for (int y = 0; y < top_h; ++y)
            for (int x = 0; x < top_w; ++x)
                dst[(static_cast<std::size_t>(y) * top_w + x) * c + ch] = fused(y, x);
    }
    return out;
}

// Mean of the per-branch softmax probabilities. argmax gives Top-1; the
// sorted order gives Top-k.
inline Tensor combine_scores(const std::array<Tensor, 3>& scores) {
    const int c = scores[0].shape()[0];
    for (const Tensor& s : scores) {
        require_rank(s, 1, "combine_scores");
        if (s.shape()[0] != c) throw DimensionError("combine_scores: lengths differ");
    }
    Tensor out({c});
    auto& o = out.data_mut();
    for (const Tensor& s : scores) {
        Tensor p = softmax(s, 0);
        for (int i = 0; i < c; ++i) o[i] += p(i) / 3.0;
    }
    return out;
}

}  // namespace molt
