#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "molt/encoder.hpp"
#include "support/oracles.hpp"

using molt::EncoderConfig;
using molt::EncoderParams;
using molt::Tensor;

namespace {

EncoderConfig micro_config() {
    // N = 2, L = 5.
    EncoderConfig cfg;
    cfg.image_side = 4;
    cfg.patch_side = 2;
    cfg.embed_dim = 8;
    cfg.num_heads = 2;
    cfg.num_blocks = 1;
    cfg.num_classes = 2;
    cfg.mlp_hidden = 16;
    return cfg;
}

Tensor random_image(int side, molt::Rng& rng) {
    return oracle::random_tensor({side, side, 3}, rng, 0.0, 1.0);
}

void zero_all(EncoderParams& params) {
    params.for_each([](const std::string&, Tensor& t) {
        for (double& v : t.data_mut()) v = 0.0;
    });
}

}  // namespace

// --- patchify ----------------------------------------------------------------

TEST(Patchify, SinglePixelPatchesKeepRasterOrder) {
    EncoderConfig cfg;
    cfg.image_side = 2;
    cfg.patch_side = 1;
    cfg.embed_dim = 4;
    cfg.num_heads = 1;
    cfg.num_blocks = 1;
    Tensor image({2, 2, 3});
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x)
            for (int c = 0; c < 3; ++c) image.at(y, x, c) = 10.0 * (2 * y + x) + c;
    Tensor patches = molt::patchify(image, cfg);
    ASSERT_EQ(patches.shape(), (std::vector<int>{4, 3}));
    for (int j = 0; j < 4; ++j)
        for (int c = 0; c < 3; ++c) EXPECT_EQ(patches(j, c), 10.0 * j + c);
}

TEST(Patchify, WholeImagePatchIsFlattenedImage) {
    molt::Rng rng(71);
    EncoderConfig cfg;
    cfg.image_side = 3;
    cfg.patch_side = 3;
    cfg.embed_dim = 4;
    cfg.num_heads = 1;
    cfg.num_blocks = 1;
    Tensor image = random_image(3, rng);
    Tensor patches = molt::patchify(image, cfg);
    ASSERT_EQ(patches.shape(), (std::vector<int>{1, 27}));
    EXPECT_EQ(patches.data(), image.data());
}

TEST(Patchify, ReassemblyReproducesImage) {
    molt::Rng rng(73);
    EncoderConfig cfg;
    cfg.image_side = 6;
    cfg.patch_side = 2;
    cfg.embed_dim = 4;
    cfg.num_heads = 1;
    cfg.num_blocks = 1;
    Tensor image = random_image(6, rng);
    Tensor patches = molt::patchify(image, cfg);
    const int n = cfg.grid(), ps = cfg.patch_side;
    Tensor rebuilt({6, 6, 3});
    for (int j = 0; j < n * n; ++j) {
        const int gy = j / n, gx = j % n;
        int idx = 0;
        for (int py = 0; py < ps; ++py)
            for (int px = 0; px < ps; ++px)
                for (int c = 0; c < 3; ++c)
                    rebuilt.at(gy * ps + py, gx * ps + px, c) = patches(j, idx++);
    }
    EXPECT_EQ(rebuilt.data(), image.data());
}

TEST(Patchify, RejectsWrongSide) {
    EncoderConfig cfg = micro_config();
    EXPECT_THROW(molt::patchify(Tensor({8, 8, 3}), cfg), molt::DimensionError);
}

// --- embed_tokens --------------------------------------------------------------

TEST(EmbedTokens, AllZeroParametersGiveZeroTokens) {
    EncoderConfig cfg = micro_config();
    molt::Rng rng(79);
    EncoderParams params = EncoderParams::init(cfg, rng);
    zero_all(params);
    Tensor patches = molt::patchify(random_image(cfg.image_side, rng), cfg);
    Tensor tokens = molt::embed_tokens(patches, params, cfg);
    ASSERT_EQ(tokens.shape(), (std::vector<int>{cfg.tokens(), cfg.embed_dim}));
    for (const double v : tokens.data()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(EmbedTokens, ShapeLawHoldsAcrossConfigs) {
    molt::Rng rng(83);
    for (const int grid : {1, 2, 3}) {
        EncoderConfig cfg = micro_config();
        cfg.image_side = 2 * grid;
        Tensor patches = molt::patchify(random_image(cfg.image_side, rng), cfg);
        Tensor tokens = molt::embed_tokens(patches, EncoderParams::init(cfg, rng), cfg);
        EXPECT_EQ(tokens.shape(), (std::vector<int>{grid * grid + 1, cfg.embed_dim}));
    }
}

TEST(EmbedTokens, PatchPermutationPermutesTokenRows) {
    EncoderConfig cfg = micro_config();
    molt::Rng rng(89);
    EncoderParams params = EncoderParams::init(cfg, rng);
    for (double& v : params.pos_embedding.data_mut()) v = 0.0;  // isolate the projection
    Tensor patches = molt::patchify(random_image(cfg.image_side, rng), cfg);
    Tensor swapped = patches.clone();
    for (int c = 0; c < cfg.patch_values(); ++c)
        std::swap(swapped.at(1, c), swapped.at(2, c));
    Tensor tokens = molt::embed_tokens(patches, params, cfg);
    Tensor tokens_swapped = molt::embed_tokens(swapped, params, cfg);
    for (int d = 0; d < cfg.embed_dim; ++d) {
        EXPECT_DOUBLE_EQ(tokens_swapped(2, d), tokens(3, d));
        EXPECT_DOUBLE_EQ(tokens_swapped(3, d), tokens(2, d));
        EXPECT_DOUBLE_EQ(tokens_swapped(0, d), tokens(0, d));
        EXPECT_DOUBLE_EQ(tokens_swapped(1, d), tokens(1, d));
    }
}

// --- msa_forward ----------------------------------------------------------------

TEST(MsaForward, AttentionRowsSumToOne) {
    EncoderConfig cfg = micro_config();
    molt::Rng rng(97);
    EncoderParams params = EncoderParams::init(cfg, rng);
    Tensor z = oracle::random_tensor({cfg.tokens(), cfg.embed_dim}, rng);
    molt::MsaOutput out = molt::msa_forward(z, params.blocks[0], cfg);
    ASSERT_EQ(out.attention.size(), static_cast<std::size_t>(cfg.num_heads));
    for (const Tensor& a : out.attention) {
        for (int i = 0; i < cfg.tokens(); ++i) {
            double row = 0.0;
            for (int j = 0; j < cfg.tokens(); ++j) row += a(i, j);
            EXPECT_NEAR(row, 1.0, 1e-9);
        }
    }
}

TEST(MsaForward, ZeroQueryProjectionGivesUniformAttention) {
    EncoderConfig cfg = micro_config();
    molt::Rng rng(101);
    EncoderParams params = EncoderParams::init(cfg, rng);
    for (double& v : params.blocks[0].wq.data_mut()) v = 0.0;
    for (double& v : params.blocks[0].bq.data_mut()) v = 0.0;
    Tensor z = oracle::random_tensor({cfg.tokens(), cfg.embed_dim}, rng);
    molt::MsaOutput out = molt::msa_forward(z, params.blocks[0], cfg);
    const double uniform = 1.0 / cfg.tokens();
    for (const Tensor& a : out.attention)
        for (const double v : a.data()) EXPECT_NEAR(v, uniform, 1e-12);
}

TEST(MsaForward, SingleHeadHandCase) {
    EncoderConfig cfg;
    cfg.image_side = 1;  // unused here
    cfg.patch_side = 1;
    cfg.embed_dim = 1;
    cfg.num_heads = 1;
    cfg.num_blocks = 1;
    cfg.num_classes = 1;
    cfg.mlp_hidden = 1;
    molt::BlockParams block;
    block.wq = Tensor::from_data({1, 1}, {1.0});
    block.bq = Tensor({1});
    block.wk = Tensor::from_data({1, 1}, {1.0});
    block.bk = Tensor({1});
    block.wv = Tensor::from_data({1, 1}, {2.0});
    block.bv = Tensor({1});
    block.wo = Tensor::from_data({1, 1}, {1.0});
    block.bo = Tensor({1});
    Tensor z = Tensor::from_data({2, 1}, {1.0, 0.0});
    molt::MsaOutput out = molt::msa_forward(z, block, cfg);
    // scores = [[1,0],[0,0]]; softmax row 0 = [e, 1]/(e+1); row 1 uniform.
    const double e = std::exp(1.0);
    EXPECT_NEAR(out.attention[0](0, 0), e / (e + 1.0), 1e-12);
    EXPECT_NEAR(out.attention[0](0, 1), 1.0 / (e + 1.0), 1e-12);
    EXPECT_NEAR(out.attention[0](1, 0), 0.5, 1e-12);
    // head output = A * v with v = [2, 0].
    EXPECT_NEAR(out.out(0, 0), 2.0 * e / (e + 1.0), 1e-12);
    EXPECT_NEAR(out.out(1, 0), 1.0, 1e-12);
}

// --- block_forward ---------------------------------------------------------------

TEST(BlockForward, ZeroWeightsActAsResidualIdentity) {
    EncoderConfig cfg = micro_config();
    molt::Rng rng(107);
    EncoderParams params = EncoderParams::init(cfg, rng);
    molt::BlockParams& block = params.blocks[0];
    for (Tensor* t : {&block.wq, &block.bq, &block.wk, &block.bk, &block.wv, &block.bv,
                      &block.wo, &block.bo, &block.mlp_w1, &block.mlp_b1, &block.mlp_w2,
                      &block.mlp_b2}) {
        for (double& v : t->data_mut()) v = 0.0;
    }
    Tensor z = oracle::random_tensor({cfg.tokens(), cfg.embed_dim}, rng);
    molt::BlockOutput out = molt::block_forward(z, block, cfg);
    EXPECT_EQ(out.z.data(), z.data());
}

TEST(BlockForward, PreservesShape) {
    EncoderConfig cfg = micro_config();
    molt::Rng rng(109);
    EncoderParams params = EncoderParams::init(cfg, rng);
    Tensor z = oracle::random_tensor({cfg.tokens(), cfg.embed_dim}, rng);
    molt::BlockOutput out = molt::block_forward(z, params.blocks[0], cfg);
    EXPECT_EQ(out.z.shape(), z.shape());
    EXPECT_EQ(out.attention.size(), static_cast<std::size_t>(cfg.num_heads));
}

TEST(BlockForward, GradientMatchesFiniteDifferences) {
    EncoderConfig cfg = micro_config();
    molt::Rng rng(113);
    EncoderParams params = EncoderParams::init(cfg, rng);
    Tensor z = oracle::random_tensor({cfg.tokens(), cfg.embed_dim}, rng);
    const auto check = oracle::grad_check({z}, [&] {
        return molt::sum(molt::block_forward(z, params.blocks[0], cfg).z);
    });
    EXPECT_GT(check.compared, 0u);
    EXPECT_LT(check.max_rel_err, 1e-4);
}

// --- encode ------------------------------------------------------------------------

TEST(Encode, StackHasBlocksTimesHeadsMatrices) {
    EncoderConfig cfg = micro_config();
    cfg.num_blocks = 3;
    molt::Rng rng(127);
    EncoderParams params = EncoderParams::init(cfg, rng);
    molt::EncodeResult out = molt::encode(random_image(cfg.image_side, rng), params, cfg);
    EXPECT_EQ(out.stack.maps.size(), static_cast<std::size_t>(3 * cfg.num_heads));
    for (const Tensor& a : out.stack.maps)
        EXPECT_EQ(a.shape(), (std::vector<int>{cfg.tokens(), cfg.tokens()}));
    EXPECT_EQ(out.embeddings.shape(), (std::vector<int>{cfg.tokens(), cfg.embed_dim}));
}

TEST(Encode, PureAndDeterministic) {
    EncoderConfig cfg = micro_config();
    molt::Rng rng(131);
    EncoderParams params = EncoderParams::init(cfg, rng);
    Tensor image = random_image(cfg.image_side, rng);
    molt::EncodeResult a = molt::encode(image, params, cfg);
    molt::EncodeResult b = molt::encode(image, params, cfg);
    EXPECT_EQ(a.embeddings.data(), b.embeddings.data());
    for (std::size_t i = 0; i < a.stack.maps.size(); ++i)
        EXPECT_EQ(a.stack.maps[i].data(), b.stack.maps[i].data());
}

// Standalone re-implementation of the B=1, M=1, N=2 forward pass with plain
// loops, sharing nothing with the library kernels.
namespace {

struct NamedTensors {
    std::map<std::string, Tensor> map;
    const Tensor& operator()(const std::string& name) const { return map.at(name); }
};

std::vector<double> oracle_layer_norm_rows(const std::vector<double>& x, int rows, int cols,
                                           double eps) {
    std::vector<double> out(x.size());
    for (int i = 0; i < rows; ++i) {
        double mean = 0.0, var = 0.0;
        for (int j = 0; j < cols; ++j) mean += x[static_cast<std::size_t>(i) * cols + j];
        mean /= cols;
        for (int j = 0; j < cols; ++j) {
            const double d = x[static_cast<std::size_t>(i) * cols + j] - mean;
            var += d * d;
        }
        var /= cols;
        for (int j = 0; j < cols; ++j)
            out[static_cast<std::size_t>(i) * cols + j] =
                (x[static_cast<std::size_t>(i) * cols + j] - mean) / std::sqrt(var + eps);
    }
    return out;
}

molt::EncodeResult encode_oracle(const Tensor& image, const NamedTensors& p,
                                 const EncoderConfig& cfg) {
    const int n = cfg.grid(), ps = cfg.patch_side, d = cfg.embed_dim, l = cfg.tokens();
    const int pv = cfg.patch_values();
    // standardize + patchify
    std::vector<double> patches(static_cast<std::size_t>(n) * n * pv);
    for (int gy = 0; gy < n; ++gy)
        for (int gx = 0; gx < n; ++gx) {
            int idx = 0;
            for (int py = 0; py < ps; ++py)
                for (int px = 0; px < ps; ++px)
                    for (int c = 0; c < 3; ++c)
                        patches[(static_cast<std::size_t>(gy) * n + gx) * pv + idx++] =
                            (image(gy * ps + py, gx * ps + px, c) - 0.5) / 0.5;
        }
    // projection + class token + position embedding
    std::vector<double> tokens(static_cast<std::size_t>(l) * d);
    for (int j = 0; j < d; ++j) tokens[j] = p("class_token")(j);
    for (int r = 0; r < n * n; ++r)
        for (int j = 0; j < d; ++j) {
            double s = p("patch_proj_b")(j);
            for (int k = 0; k < pv; ++k)
                s += patches[static_cast<std::size_t>(r) * pv + k] * p("patch_proj_w")(k, j);
            tokens[(static_cast<std::size_t>(r) + 1) * d + j] = s;
        }
    for (int i = 0; i < l; ++i)
        for (int j = 0; j < d; ++j)
            tokens[static_cast<std::size_t>(i) * d + j] += p("pos_embedding")(i, j);
    std::vector<double> z = oracle_layer_norm_rows(tokens, l, d, 1e-5);

    // one block, one head
    std::vector<double> zn(z.size());
    {
        std::vector<double> normed = oracle_layer_norm_rows(z, l, d, 1e-5);
        for (int i = 0; i < l; ++i)
            for (int j = 0; j < d; ++j) {
                const std::size_t idx = static_cast<std::size_t>(i) * d + j;
                zn[idx] = normed[idx] * p("block0.ln1_gamma")(j) + p("block0.ln1_beta")(j);
            }
    }
    auto project = [&](const char* w, const char* b) {
        std::vector<double> out(static_cast<std::size_t>(l) * d);
        for (int i = 0; i < l; ++i)
            for (int j = 0; j < d; ++j) {
                double s = p(b)(j);
                for (int k = 0; k < d; ++k) s += zn[static_cast<std::size_t>(i) * d + k] * p(w)(k, j);
                out[static_cast<std::size_t>(i) * d + j] = s;
            }
        return out;
    };
    const std::vector<double> q = project("block0.wq", "block0.bq");
    const std::vector<double> k = project("block0.wk", "block0.bk");
    const std::vector<double> v = project("block0.wv", "block0.bv");
    std::vector<double> attn(static_cast<std::size_t>(l) * l);
    const double scaling = 1.0 / std::sqrt(static_cast<double>(d));
    for (int i = 0; i < l; ++i) {
        std::vector<double> row(l);
        for (int j = 0; j < l; ++j) {
            double s = 0.0;
            for (int t = 0; t < d; ++t)
                s += q[static_cast<std::size_t>(i) * d + t] * k[static_cast<std::size_t>(j) * d + t];
            row[j] = s * scaling;
        }
        const std::vector<double> sm = oracle::softmax_loops(row);
        for (int j = 0; j < l; ++j) attn[static_cast<std::size_t>(i) * l + j] = sm[j];
    }
    std::vector<double> head(static_cast<std::size_t>(l) * d, 0.0);
    for (int i = 0; i < l; ++i)
        for (int j = 0; j < l; ++j)
            for (int t = 0; t < d; ++t)
                head[static_cast<std::size_t>(i) * d + t] +=
                    attn[static_cast<std::size_t>(i) * l + j] * v[static_cast<std::size_t>(j) * d + t];
    std::vector<double> z1(z.size());
    for (int i = 0; i < l; ++i)
        for (int j = 0; j < d; ++j) {
            double s = p("block0.bo")(j);
            for (int t = 0; t < d; ++t)
                s += head[static_cast<std::size_t>(i) * d + t] * p("block0.wo")(t, j);
            z1[static_cast<std::size_t>(i) * d + j] = z[static_cast<std::size_t>(i) * d + j] + s;
        }
    // MLP with GELU
    std::vector<double> zn2(z1.size());
    {
        std::vector<double> normed = oracle_layer_norm_rows(z1, l, d, 1e-5);
        for (int i = 0; i < l; ++i)
            for (int j = 0; j < d; ++j) {
                const std::size_t idx = static_cast<std::size_t>(i) * d + j;
                zn2[idx] = normed[idx] * p("block0.ln2_gamma")(j) + p("block0.ln2_beta")(j);
            }
    }
    const int hdim = cfg.mlp_hidden;
    std::vector<double> out(z1);
    for (int i = 0; i < l; ++i) {
        std::vector<double> hidden(hdim);
        for (int j = 0; j < hdim; ++j) {
            double s = p("block0.mlp_b1")(j);
            for (int t = 0; t < d; ++t)
                s += zn2[static_cast<std::size_t>(i) * d + t] * p("block0.mlp_w1")(t, j);
            hidden[j] = s * 0.5 * (1.0 + std::erf(s / std::sqrt(2.0)));
        }
        for (int j = 0; j < d; ++j) {
            double s = p("block0.mlp_b2")(j);
            for (int t = 0; t < hdim; ++t) s += hidden[t] * p("block0.mlp_w2")(t, j);
            out[static_cast<std::size_t>(i) * d + j] += s;
        }
    }
    molt::EncodeResult result;
    result.embeddings = Tensor::from_data({l, d}, out);
    result.stack.num_blocks = 1;
    result.stack.num_heads = 1;
    result.stack.maps.push_back(Tensor::from_data({l, l}, attn));
    return result;
}

}  // namespace

TEST(Encode, MatchesStandaloneSequentialOracle) {
    EncoderConfig cfg;
    cfg.image_side = 4;
    cfg.patch_side = 2;
    cfg.embed_dim = 4;
    cfg.num_heads = 1;
    cfg.num_blocks = 1;
    cfg.num_classes = 2;
    cfg.mlp_hidden = 6;
    molt::Rng rng(137);
    EncoderParams params = EncoderParams::init(cfg, rng);
    NamedTensors named;
    params.for_each([&](const std::string& name, Tensor& t) { named.map.emplace(name, t); });
    Tensor image = random_image(cfg.image_side, rng);

    molt::EncodeResult got = molt::encode(image, params, cfg);
    molt::EncodeResult want = encode_oracle(image, named, cfg);
    ASSERT_EQ(got.embeddings.size(), want.embeddings.size());
    for (std::size_t i = 0; i < got.embeddings.size(); ++i)
        EXPECT_NEAR(got.embeddings.data()[i], want.embeddings.data()[i], 1e-9);
    ASSERT_EQ(got.stack.maps.size(), 1u);
    for (std::size_t i = 0; i < got.stack.maps[0].size(); ++i)
        EXPECT_NEAR(got.stack.maps[0].data()[i], want.stack.maps[0].data()[i], 1e-9);
}

TEST(Encode, AttentionRowStochasticUnderRandomParams) {
    molt::Rng rng(139);
    for (int trial = 0; trial < 5; ++trial) {
        EncoderConfig cfg = micro_config();
        cfg.num_blocks = 1 + trial % 3;
        EncoderParams params = EncoderParams::init(cfg, rng);
        molt::EncodeResult out = molt::encode(random_image(cfg.image_side, rng), params, cfg);
        for (const Tensor& a : out.stack.maps) {
            for (int i = 0; i < cfg.tokens(); ++i) {
                double row = 0.0;
                for (int j = 0; j < cfg.tokens(); ++j) {
                    EXPECT_GE(a(i, j), 0.0);
                    row += a(i, j);
                }
                EXPECT_NEAR(row, 1.0, 1e-6);
            }
        }
    }
}

// --- parameter bookkeeping -----------------------------------------------------

TEST(EncoderParams, CountFormulaMatchesConstructedTensors) {
    molt::Rng rng(149);
    for (int trial = 0; trial < 10; ++trial) {
        EncoderConfig cfg;
        cfg.patch_side = 1 + static_cast<int>(rng.next_u64() % 3);
        cfg.image_side = cfg.patch_side * (1 + static_cast<int>(rng.next_u64() % 4));
        cfg.num_heads = 1 + static_cast<int>(rng.next_u64() % 3);
        cfg.embed_dim = cfg.num_heads * (2 + static_cast<int>(rng.next_u64() % 3));
        cfg.num_blocks = 1 + static_cast<int>(rng.next_u64() % 3);
        cfg.num_classes = 1 + static_cast<int>(rng.next_u64() % 5);
        cfg.mlp_hidden = 2 + static_cast<int>(rng.next_u64() % 8);
        EncoderParams params = EncoderParams::init(cfg, rng);
        std::size_t total = 0;
        params.for_each([&](const std::string&, Tensor& t) { total += t.size(); });
        EXPECT_EQ(total, EncoderParams::parameter_count(cfg));
    }
}

TEST(EncoderConfig, ValidationCatchesBadCombos) {
    EncoderConfig cfg = micro_config();
    cfg.image_side = 5;  // not divisible by patch_side 2
    EXPECT_THROW(cfg.validate(), molt::ParameterError);
    cfg = micro_config();
    cfg.num_heads = 3;  // 8 % 3 != 0
    EXPECT_THROW(cfg.validate(), molt::ParameterError);
    cfg = micro_config();
    cfg.embed_dim = 0;
    EXPECT_THROW(cfg.validate(), molt::ParameterError);
}

TEST(EncoderParams, InitIsSeedDeterministic) {
    EncoderConfig cfg = micro_config();
    molt::Rng a(42), b(42);
    EncoderParams pa = EncoderParams::init(cfg, a);
    EncoderParams pb = EncoderParams::init(cfg, b);
    bool equal = true;
    pa.for_each([&](const std::string& name, Tensor& t) {
        pb.for_each([&](const std::string& other, Tensor& u) {
            if (name == other && t.data() != u.data()) equal = false;
        });
    });
    EXPECT_TRUE(equal);
}
