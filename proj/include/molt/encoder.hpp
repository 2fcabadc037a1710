#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "molt/autodiff.hpp"
#include "molt/rng.hpp"
#include "molt/tensor.hpp"

namespace molt {

// One object localization transformer branch. The image is cut into an
// N x N grid of patches (N = image_side / patch_side); token 0 is the class
// token, followed by the N^2 patch tokens in row-major patch order.
struct EncoderConfig {
    int image_side = 160;
    int patch_side = 16;
    int embed_dim = 64;
    int num_heads = 4;
    int num_blocks = 4;
    int num_classes = 2;
    int mlp_hidden = 256;

    int grid() const { return image_side / patch_side; }
    int tokens() const { return grid() * grid() + 1; }
    int head_dim() const { return embed_dim / num_heads; }
    int patch_values() const { return 3 * patch_side * patch_side; }

    void validate() const {
        if (image_side <= 0 || patch_side <= 0 || embed_dim <= 0 || num_heads <= 0 ||
            num_blocks <= 0 || num_classes <= 0 || mlp_hidden <= 0) {
            throw ParameterError("encoder config fields must be positive");
        }
        if (image_side % patch_side != 0) {
            throw ParameterError("image side " + std::to_string(image_side) +
                                 " not divisible by patch side " + std::to_string(patch_side));
        }
        if (embed_dim % num_heads != 0) {
            throw ParameterError("embed dim " + std::to_string(embed_dim) +
                                 " not divisible by head count " + std::to_string(num_heads));
        }
    }
};

struct BlockParams {
    Tensor ln1_gamma, ln1_beta;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gamma, ln2_beta;
    Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

// Per-block, per-head attention matrices in execution order:
// maps[b * num_heads + m].
struct AttentionStack {
    int num_blocks = 0;
    int num_heads = 0;
    std::vector<Tensor> maps;

    const Tensor& at(int block, int head) const {
        return maps[static_cast<std::size_t>(block) * num_heads + head];
    }
};

struct EncoderParams {
    Tensor patch_proj_w;  // [3*patch^2 x D]
    Tensor patch_proj_b;  // [D]
    Tensor class_token;   // [D]
    Tensor pos_embedding; // [L x D]
    std::vector<BlockParams> blocks;
    Tensor score_kernel;  // [1 x 1 x D x C]

    // Visits every parameter tensor with a stable name, in checkpoint order.
    template <typename Self, typename Fn>
    static void visit(Self& self, Fn&& fn) {
        fn("patch_proj_w", self.patch_proj_w);
        fn("patch_proj_b", self.patch_proj_b);
        fn("class_token", self.class_token);
        fn("pos_embedding", self.pos_embedding);
        for (std::size_t b = 0; b < self.blocks.size(); ++b) {
            const std::string p = "block" + std::to_string(b) + ".";
            auto& blk = self.blocks[b];
            fn(p + "ln1_gamma", blk.ln1_gamma);
            fn(p + "ln1_beta", blk.ln1_beta);
            fn(p + "wq", blk.wq);
            fn(p + "bq", blk.bq);
            fn(p + "wk", blk.wk);
            fn(p + "bk", blk.bk);
            fn(p + "wv", blk.wv);
            fn(p + "bv", blk.bv);
            fn(p + "wo", blk.wo);
            fn(p + "bo", blk.bo);
            fn(p + "ln2_gamma", blk.ln2_gamma);
            fn(p + "ln2_beta", blk.ln2_beta);
            fn(p + "mlp_w1", blk.mlp_w1);
            fn(p + "mlp_b1", blk.mlp_b1);
            fn(p + "mlp_w2", blk.mlp_w2);
            fn(p + "mlp_b2", blk.mlp_b2);
        }
        fn("score_kernel", self.score_kernel);
    }

    template <typename Fn>
    void for_each(Fn&& fn) {
        visit(*this, std::forward<Fn>(fn));
    }

    template <typename Fn>
    void for_each(Fn&& fn) const {
        visit(*this, std::forward<Fn>(fn));
    }

    void set_requires_grad(bool flag) {
        for_each([flag](const std::string&, Tensor& t) { t.set_requires_grad(flag); });
    }

    // Closed form for the total parameter count:
    //   P = patch dim, D = embed dim, L = tokens, H = mlp hidden,
    //   B = blocks, C = classes
    //   count = P*D + D            (patch projection)
    //         + D                  (class token)
    //         + L*D                (position embedding)
    //         + B * (4*D + 4*D*D + 4*D + D*H + H + H*D + D)
    //           (two layer-norm affines; q/k/v/o with biases; 2-layer MLP)
    //         + D*C                (1x1 score kernel)
    static std::size_t parameter_count(const EncoderConfig& cfg) {
        const std::size_t p = static_cast<std::size_t>(cfg.patch_values());
        const std::size_t d = static_cast<std::size_t>(cfg.embed_dim);
        const std::size_t l = static_cast<std::size_t>(cfg.tokens());
        const std::size_t hidden = static_cast<std::size_t>(cfg.mlp_hidden);
        const std::size_t c = static_cast<std::size_t>(cfg.num_classes);
        const std::size_t per_block = 4 * d + 4 * d * d + 4 * d + d * hidden + hidden +
                                      hidden * d + d;
        return p * d + d + d + l * d + static_cast<std::size_t>(cfg.num_blocks) * per_block +
               d * c;
    }

    static EncoderParams init(const EncoderConfig& cfg, Rng& rng) {
        cfg.validate();
        const double sigma = 0.02;
        auto trunc = [&](std::vector<int> shape) {
            Tensor t(shape);
            for (double& v : t.data_mut()) v = rng.truncated_normal(sigma);
            return t;
        };
        const int d = cfg.embed_dim;
        EncoderParams params;
        params.patch_proj_w = trunc({cfg.patch_values(), d});
        params.patch_proj_b = Tensor({d});
        params.class_token = trunc({d});
        params.pos_embedding = trunc({cfg.tokens(), d});
        params.blocks.resize(cfg.num_blocks);
        for (BlockParams& blk : params.blocks) {
            blk.ln1_gamma = Tensor({d}, 1.0);
            blk.ln1_beta = Tensor({d});
            blk.wq = trunc({d, d});
            blk.bq = Tensor({d});
            blk.wk = trunc({d, d});
            blk.bk = Tensor({d});
            blk.wv = trunc({d, d});
            blk.bv = Tensor({d});
            blk.wo = trunc({d, d});
            blk.bo = Tensor({d});
            blk.ln2_gamma = Tensor({d}, 1.0);
            blk.ln2_beta = Tensor({d});
            blk.mlp_w1 = trunc({d, cfg.mlp_hidden});
            blk.mlp_b1 = Tensor({cfg.mlp_hidden});
            blk.mlp_w2 = trunc({cfg.mlp_hidden, d});
            blk.mlp_b2 = Tensor({d});
        }
        params.score_kernel = trunc({1, 1, d, cfg.num_classes});
        return params;
    }
};

namespace enc_detail {

constexpr double kLayerNormEps = 1e-5;

inline Tensor ln_plain(const Tensor& x, double eps = kLayerNormEps) {
    const Tensor ones({x.shape()[1]}, 1.0);
    const Tensor zeros({x.shape()[1]});
    return layer_norm(x, ones, zeros, 1, eps);
}

}  // namespace enc_detail

// Pixels in [0, 1] standardized with fixed per-channel mean 0.5, std 0.5.
inline Tensor standardize_pixels(const Tensor& image) {
    Tensor out(image.shape());
    auto& o = out.data_mut();
    for (std::size_t i = 0; i < image.size(); ++i) o[i] = (image.data()[i] - 0.5) / 0.5;
    return out;
}

// [H x H x 3] -> [N^2 x 3*patch^2]; row j holds patch (j / N, j % N)
// flattened channel-last. Pixels partition exactly, so the rows reassemble
// into the original image.
inline Tensor patchify(const Tensor& image, const EncoderConfig& cfg) {
    require_rank(image, 3, "patchify");
    if (image.shape()[0] != cfg.image_side || image.shape()[1] != cfg.image_side ||
        image.shape()[2] != 3) {
        throw DimensionError("patchify: image " + shape_string(image.shape()) +
                             " does not match configured side " +
                             std::to_string(cfg.image_side));
    }
    const int n = cfg.grid(), ps = cfg.patch_side;
    Tensor out({n * n, cfg.patch_values()});
    auto& o = out.data_mut();
    std::size_t row = 0;
    for (int gy = 0; gy < n; ++gy) {
        for (int gx = 0; gx < n; ++gx, ++row) {
            double* dst = o.data() + row * cfg.patch_values();
            for (int py = 0; py < ps; ++py)
                for (int px = 0; px < ps; ++px)
                    for (int ch = 0; ch < 3; ++ch)
                        *dst++ = image(gy * ps + py, gx * ps + px, ch);
        }
    }
    return out;
}

// LayerNorm(concat(class_token, patches * W + b) + position_embedding).
inline Tensor embed_tokens(const Tensor& patches, const EncoderParams& params,
                           const EncoderConfig& cfg) {
    if (patches.rank() != 2 || patches.shape()[1] != cfg.patch_values()) {
        throw DimensionError("embed_tokens: patch rows " + shape_string(patches.shape()) +
                             " do not match projection input " +
                             std::to_string(cfg.patch_values()));
    }
    Tensor projected = add_rowvec(matmul(patches, params.patch_proj_w), params.patch_proj_b);
    Tensor cls = reshape(params.class_token, {1, cfg.embed_dim});
    Tensor tokens = concat_rows(cls, projected);
    return enc_detail::ln_plain(add(tokens, params.pos_embedding));
}

struct MsaOutput {
    Tensor out;                 // [L x D]
    std::vector<Tensor> attention;  // one [L x L] row-stochastic matrix per head
};

// Scaled dot-product attention over num_heads column slices of the
// projected q/k/v; scaling is 1/sqrt(D/M).
inline MsaOutput msa_forward(const Tensor& z, const BlockParams& block,
                             const EncoderConfig& cfg) {
    const int dh = cfg.head_dim();
    const double scaling = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor q = add_rowvec(matmul(z, block.wq), block.bq);
    Tensor k = add_rowvec(matmul(z, block.wk), block.bk);
    Tensor v = add_rowvec(matmul(z, block.wv), block.bv);
    MsaOutput result;
    std::vector<Tensor> heads;
    heads.reserve(cfg.num_heads);
    for (int m = 0; m < cfg.num_heads; ++m) {
        Tensor qm = slice_cols(q, m * dh, (m + 1) * dh);
        Tensor km = slice_cols(k, m * dh, (m + 1) * dh);
        Tensor vm = slice_cols(v, m * dh, (m + 1) * dh);
        Tensor attn = softmax(scale(matmul(qm, transpose(km)), scaling), 1);
        result.attention.push_back(attn);
        heads.push_back(matmul(attn, vm));
    }
    result.out = add_rowvec(matmul(concat_cols(heads), block.wo), block.bo);
    return result;
}

struct BlockOutput {
    Tensor z;
    std::vector<Tensor> attention;
};

// z' = z + MSA(LN(z)); z_next = z' + MLP(LN(z')), MLP = two layers with GELU.
inline BlockOutput block_forward(const Tensor& z, const BlockParams& block,
                                 const EncoderConfig& cfg) {
    Tensor zn1 = layer_norm(z, block.ln1_gamma, block.ln1_beta, 1, enc_detail::kLayerNormEps);
    MsaOutput msa = msa_forward(zn1, block, cfg);
    Tensor z1 = add(z, msa.out);
    Tensor zn2 = layer_norm(z1, block.ln2_gamma, block.ln2_beta, 1, enc_detail::kLayerNormEps);
    Tensor hidden = gelu(add_rowvec(matmul(zn2, block.mlp_w1), block.mlp_b1));
    Tensor mlp = add_rowvec(matmul(hidden, block.mlp_w2), block.mlp_b2);
    return {add(z1, mlp), std::move(msa.attention)};
}

struct EncodeResult {
    Tensor embeddings;  // [L x D]
    AttentionStack stack;
};

inline EncodeResult encode(const Tensor& image, const EncoderParams& params,
                           const EncoderConfig& cfg) {
    cfg.validate();
    Tensor patches = patchify(standardize_pixels(image), cfg);
    Tensor z = embed_tokens(patches, params, cfg);
    EncodeResult result;
    result.stack.num_blocks = cfg.num_blocks;
    result.stack.num_heads = cfg.num_heads;
    result.stack.maps.reserve(static_cast<std::size_t>(cfg.num_blocks) * cfg.num_heads);
    for (int b = 0; b < cfg.num_blocks; ++b) {
        BlockOutput out = block_forward(z, params.blocks[b], cfg);
        z = out.z;
        for (Tensor& a : out.attention) result.stack.maps.push_back(std::move(a));
    }
    result.embeddings = z;
    return result;
}

}  // namespace molt
