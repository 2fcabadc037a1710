#include <gtest/gtest.h>

#include <cmath>

#include "molt/train.hpp"
#include "support/oracles.hpp"

using molt::ClassScoreMap;
using molt::LabeledExample;
using molt::PyramidConfig;
using molt::Tensor;
using molt::TrainConfig;

namespace {

// Three branches at N = 2 each: sides (4, 8, 12) with patch sides (2, 4, 6).
PyramidConfig micro_pyramid() {
    PyramidConfig p;
    p.scales[0] = {4, 2, 8, 2, 1, 2, 8};
    p.scales[1] = {8, 4, 8, 2, 1, 2, 8};
    p.scales[2] = {12, 6, 8, 2, 1, 2, 8};
    return p;
}

std::vector<LabeledExample> tiny_dataset(int n, int side, molt::Rng& rng) {
    std::vector<LabeledExample> out;
    for (int i = 0; i < n; ++i)
        out.push_back({oracle::random_tensor({side, side, 3}, rng, 0.0, 1.0), i % 2});
    return out;
}

std::vector<std::vector<double>> snapshot(molt::MultiscaleParams& params) {
    std::vector<std::vector<double>> out;
    params.for_each([&](const std::string&, Tensor& t) { out.push_back(t.data()); });
    return out;
}

}  // namespace

// --- cross_entropy_loss -----------------------------------------------------------

TEST(CrossEntropyLoss, UniformScoresGiveLogC) {
    ClassScoreMap smap{Tensor({3, 3, 4}, 0.7)};
    Tensor loss = molt::cross_entropy_loss(smap, 2);
    EXPECT_NEAR(loss(0), std::log(4.0), 1e-12);
}

TEST(CrossEntropyLoss, PeakedScoreMapDrivesLossToZero) {
    Tensor map({2, 2, 3});
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) map.at(y, x, 1) = 50.0;
    Tensor loss = molt::cross_entropy_loss(ClassScoreMap{map}, 1);
    EXPECT_NEAR(loss(0), 0.0, 1e-9);
}

TEST(CrossEntropyLoss, MatchesIndependentScalarPipeline) {
    molt::Rng rng(379);
    Tensor map = oracle::random_tensor({3, 2, 3}, rng);
    const int y = 2;
    Tensor loss = molt::cross_entropy_loss(ClassScoreMap{map}, y);
    const auto pooled = oracle::gap_loops(map.data(), 3, 2, 3);
    const auto probs = oracle::softmax_loops(pooled);
    EXPECT_NEAR(loss(0), -std::log(probs[y]), 1e-12);
}

TEST(CrossEntropyLoss, AlwaysNonNegative) {
    molt::Rng rng(383);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor map = oracle::random_tensor({2, 2, 5}, rng, -3.0, 3.0);
        Tensor loss = molt::cross_entropy_loss(ClassScoreMap{map}, trial % 5);
        EXPECT_GE(loss(0), 0.0);
    }
}

TEST(CrossEntropyLoss, RejectsInvalidClass) {
    ClassScoreMap smap{Tensor({2, 2, 3})};
    EXPECT_THROW(molt::cross_entropy_loss(smap, 3), molt::ParameterError);
    EXPECT_THROW(molt::cross_entropy_loss(smap, -1), molt::ParameterError);
}

// --- train_step ----------------------------------------------------------------------

TEST(TrainStep, ZeroLearningRateLeavesParamsUntouched) {
    PyramidConfig pcfg = micro_pyramid();
    molt::Rng rng(389);
    molt::MultiscaleParams params = molt::MultiscaleParams::init(pcfg, rng);
    const auto before = snapshot(params);
    TrainConfig tcfg;
    tcfg.learning_rate = 0.0;
    molt::SgdOptimizer opt(tcfg);
    const auto batch = tiny_dataset(2, 12, rng);
    const double loss = molt::train_step(batch, params, pcfg, tcfg, opt);
    EXPECT_GT(loss, 0.0);
    EXPECT_EQ(snapshot(params), before);
}

TEST(TrainStep, SmallStepDecreasesSingleExampleLoss) {
    PyramidConfig pcfg = micro_pyramid();
    molt::Rng rng(397);
    molt::MultiscaleParams params = molt::MultiscaleParams::init(pcfg, rng);
    TrainConfig tcfg;
    tcfg.learning_rate = 1e-3;
    tcfg.optimizer = molt::OptimizerKind::gradient_descent;
    molt::SgdOptimizer opt(tcfg);
    const auto batch = tiny_dataset(1, 12, rng);
    const double first = molt::train_step(batch, params, pcfg, tcfg, opt);
    const double second = molt::train_step(batch, params, pcfg, tcfg, opt);
    EXPECT_LT(second, first);
}

TEST(TrainStep, ThreeBranchGradientMatchesFiniteDifferences) {
    PyramidConfig pcfg = micro_pyramid();
    molt::Rng rng(401);
    molt::MultiscaleParams params = molt::MultiscaleParams::init(pcfg, rng);
    const LabeledExample example{oracle::random_tensor({12, 12, 3}, rng, 0.0, 1.0), 1};
    std::vector<Tensor> inputs;
    params.for_each([&](const std::string&, Tensor& t) { inputs.push_back(t); });
    const auto check = oracle::grad_check(inputs, [&] {
        const auto levels = molt::build_pyramid(example.image, pcfg);
        Tensor total = Tensor::scalar(0.0);
        for (int i = 0; i < 3; ++i) {
            molt::EncodeResult enc = molt::encode(levels[i], params.branch[i], pcfg.scales[i]);
            ClassScoreMap smap = molt::class_score_map(
                enc.embeddings, params.branch[i].score_kernel, pcfg.scales[i]);
            total = molt::add(total, molt::cross_entropy_loss(smap, example.class_id));
        }
        return total;
    });
    EXPECT_GT(check.compared, 1000u);
    EXPECT_LT(check.max_rel_err, 1e-4);
}

TEST(TrainStep, BranchLossesTouchOnlyTheirOwnParameters) {
    PyramidConfig pcfg = micro_pyramid();
    molt::Rng rng(409);
    molt::MultiscaleParams params = molt::MultiscaleParams::init(pcfg, rng);
    params.set_requires_grad(true);
    const LabeledExample example{oracle::random_tensor({12, 12, 3}, rng, 0.0, 1.0), 0};
    molt::GradTape tape;
    {
        molt::GradTape::Scope scope(tape);
        const auto levels = molt::build_pyramid(example.image, pcfg);
        molt::EncodeResult enc = molt::encode(levels[0], params.branch[0], pcfg.scales[0]);
        ClassScoreMap smap =
            molt::class_score_map(enc.embeddings, params.branch[0].score_kernel, pcfg.scales[0]);
        Tensor loss = molt::cross_entropy_loss(smap, 0);
        tape.backward(loss);
    }
    bool branch0_has_grad = false;
    params.branch[0].for_each([&](const std::string&, Tensor& t) {
        branch0_has_grad = branch0_has_grad || t.has_grad();
    });
    EXPECT_TRUE(branch0_has_grad);
    for (int i = 1; i < 3; ++i) {
        params.branch[i].for_each([&](const std::string& name, Tensor& t) {
            EXPECT_FALSE(t.has_grad()) << "branch " << i << " tensor " << name;
        });
    }
}

TEST(TrainStep, RejectsEmptyBatch) {
    PyramidConfig pcfg = micro_pyramid();
    molt::Rng rng(419);
    molt::MultiscaleParams params = molt::MultiscaleParams::init(pcfg, rng);
    TrainConfig tcfg;
    molt::SgdOptimizer opt(tcfg);
    std::vector<LabeledExample> empty;
    EXPECT_THROW(molt::train_step(empty, params, pcfg, tcfg, opt), molt::ParameterError);
}

// --- train ------------------------------------------------------------------------------

TEST(Train, BitReproducibleForEqualSeeds) {
    PyramidConfig pcfg = micro_pyramid();
    molt::Rng rng(421);
    const auto dataset = tiny_dataset(4, 12, rng);
    TrainConfig tcfg;
    tcfg.epochs = 2;
    tcfg.batch_size = 2;
    tcfg.learning_rate = 0.01;
    tcfg.seed = 555;
    molt::TrainResult a = molt::train(dataset, pcfg, tcfg);
    molt::TrainResult b = molt::train(dataset, pcfg, tcfg);
    EXPECT_EQ(a.epoch_losses, b.epoch_losses);
    EXPECT_EQ(snapshot(a.params), snapshot(b.params));
}

TEST(Train, DifferentSeedsDiverge) {
    PyramidConfig pcfg = micro_pyramid();
    molt::Rng rng(431);
    const auto dataset = tiny_dataset(4, 12, rng);
    TrainConfig tcfg;
    tcfg.epochs = 1;
    tcfg.batch_size = 2;
    tcfg.seed = 1;
    molt::TrainResult a = molt::train(dataset, pcfg, tcfg);
    tcfg.seed = 2;
    molt::TrainResult b = molt::train(dataset, pcfg, tcfg);
    EXPECT_NE(snapshot(a.params), snapshot(b.params));
}

TEST(Train, LossDropsOnSeparableToyData) {
    PyramidConfig pcfg = micro_pyramid();
    // class 0 bright red-ish, class 1 bright blue-ish
    molt::Rng rng(433);
    std::vector<LabeledExample> dataset;
    for (int i = 0; i < 8; ++i) {
        Tensor img({12, 12, 3});
        for (int y = 0; y < 12; ++y)
            for (int x = 0; x < 12; ++x) {
                img.at(y, x, 0) = i % 2 == 0 ? rng.uniform(0.7, 1.0) : rng.uniform(0.0, 0.2);
                img.at(y, x, 1) = 0.3;
                img.at(y, x, 2) = i % 2 == 0 ? rng.uniform(0.0, 0.2) : rng.uniform(0.7, 1.0);
            }
        dataset.push_back({img, i % 2});
    }
    TrainConfig tcfg;
    tcfg.epochs = 5;
    tcfg.batch_size = 4;
    tcfg.learning_rate = 0.05;
    tcfg.seed = 99;
    molt::TrainResult result = molt::train(dataset, pcfg, tcfg);
    EXPECT_LT(result.epoch_losses.back(), result.epoch_losses.front());
}

TEST(Train, WritesCheckpointsWhenConfigured) {
    PyramidConfig pcfg = micro_pyramid();
    molt::Rng rng(439);
    const auto dataset = tiny_dataset(2, 12, rng);
    TrainConfig tcfg;
    tcfg.epochs = 1;
    tcfg.batch_size = 2;
    tcfg.checkpoint_dir = ::testing::TempDir() + "molt_train_ckpt";
    molt::TrainResult result = molt::train(dataset, pcfg, tcfg);
    molt::BranchCheckpoints loaded =
        molt::load_branch_checkpoints(tcfg.checkpoint_dir + "/checkpoints.txt");
    EXPECT_EQ(snapshot(result.params), snapshot(loaded.params));
}

TEST(Train, RejectsEmptyDataset) {
    PyramidConfig pcfg = micro_pyramid();
    TrainConfig tcfg;
    std::vector<LabeledExample> empty;
    EXPECT_THROW(molt::train(empty, pcfg, tcfg), molt::ParameterError);
}
