#pragma once

#include <utility>

#include "molt/autodiff.hpp"
#include "molt/encoder.hpp"
#include "molt/tensor.hpp"

namespace molt {

struct ClassScoreMap {
    Tensor map;  // [N x N x C]
};

struct Cam {
    Tensor map;  // [N x N x C]
    int scale_id = 0;
};

// Heads averaged, blocks summed: rows of the result sum to the block count.
inline Tensor average_attention(const AttentionStack& stack) {
    if (stack.maps.empty()) throw ContractError("average_attention: empty stack");
    const Tensor& first = stack.maps.front();
    Tensor out(first.shape());
    auto& o = out.data_mut();
    const double head_weight = 1.0 / stack.num_heads;
    for (const Tensor& a : stack.maps) {
        require_same_shape(a, first, "average_attention");
        for (std::size_t i = 0; i < o.size(); ++i) o[i] += head_weight * a.data()[i];
    }
    return out;
}

// Attention weights linking patch tokens to the class token: row 0 of the
// averaged map without its class-token entry, reshaped row-major to N x N.
// Row 0 is the class-token query row, the one that accumulates patch
// evidence into the classification token.
inline Tensor foreground_map(const Tensor& abar, const EncoderConfig& cfg) {
    require_rank(abar, 2, "foreground_map");
    const int l = cfg.tokens(), n = cfg.grid();
    if (abar.shape()[0] != l || abar.shape()[1] != l) {
        throw DimensionError("foreground_map: attention " + shape_string(abar.shape()) +
                             " does not match " + std::to_string(l) + " tokens");
    }
    Tensor out({n, n});
    auto& o = out.data_mut();
    for (int j = 1; j < l; ++j) o[j - 1] = abar(0, j);
    return out;
}

// Drop the class token, reshape to N x N x D, apply the 1x1xDxC convolution.
inline ClassScoreMap class_score_map(const Tensor& embeddings, const Tensor& score_kernel,
                                     const EncoderConfig& cfg) {
    const int l = cfg.tokens(), n = cfg.grid(), d = cfg.embed_dim;
    if (embeddings.rank() != 2 || embeddings.shape()[0] != l || embeddings.shape()[1] != d) {
        throw DimensionError("class_score_map: embeddings " + shape_string(embeddings.shape()) +
                             " do not match config (" + std::to_string(l) + " x " +
                             std::to_string(d) + ")");
    }
    Tensor patch_tokens = slice_rows(embeddings, 1, l);
    Tensor grid = reshape(patch_tokens, {n, n, d});
    return {conv2d(grid, score_kernel, 0)};
}

// s = GAP(S); argmax(s) is the branch's class prediction.
inline Tensor class_scores(const ClassScoreMap& smap) { return global_avg_pool(smap.map); }

// cam[x, y, c] = fg[x, y] * S[x, y, c].
inline Cam build_cam(const Tensor& fg, const ClassScoreMap& smap, int scale_id = 0) {
    require_rank(fg, 2, "build_cam");
    require_rank(smap.map, 3, "build_cam");
    if (fg.shape()[0] != smap.map.shape()[0] || fg.shape()[1] != smap.map.shape()[1]) {
        throw DimensionError("build_cam: spatial extents differ, " + shape_string(fg.shape()) +
                             " vs " + shape_string(smap.map.shape()));
    }
    const int h = fg.shape()[0], w = fg.shape()[1], c = smap.map.shape()[2];
    Cam cam{Tensor({h, w, c}), scale_id};
    auto& o = cam.map.data_mut();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double weight = fg(y, x);
            for (int ch = 0; ch < c; ++ch)
                o[(static_cast<std::size_t>(y) * w + x) * c + ch] = weight * smap.map(y, x, ch);
        }
    return cam;
}

}  // namespace molt
