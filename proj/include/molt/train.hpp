#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "molt/cam.hpp"
#include "molt/checkpoint.hpp"
#include "molt/multiscale.hpp"
#include "molt/rng.hpp"

namespace molt {

enum class OptimizerKind { gradient_descent, momentum };

struct TrainConfig {
    int epochs = 20;
    int batch_size = 8;
    double learning_rate = 0.05;
    std::uint64_t seed = 1234;
    OptimizerKind optimizer = OptimizerKind::momentum;
    double momentum = 0.9;
    // L2 penalty folded into the gradient. Keeps the score map free of the
    // loss-invariant common mode that GAP + softmax cannot see.
    double weight_decay = 0.0;
    std::array<double, 3> scale_loss_weights{1.0, 1.0, 1.0};
    int checkpoint_every = 0;      // epochs between snapshots; 0 = final only
    std::string checkpoint_dir;    // empty = no checkpoints

    void validate() const {
        if (epochs <= 0 || batch_size <= 0 || learning_rate < 0.0) {
            throw ParameterError("train config: epochs and batch size must be positive");
        }
        if (weight_decay < 0.0) throw ParameterError("train config: negative weight decay");
    }
};

struct LabeledExample {
    Tensor image;  // [h x w x 3], values in [0, 1]
    int class_id = 0;
};

// Eq.-style classification loss on the score map: p = softmax(GAP(S)),
// loss = -ln p_y. The path runs through the pooled score map, not the class
// token, so every patch embedding carries gradient.
inline Tensor cross_entropy_loss(const ClassScoreMap& smap, int class_id) {
    const int c = smap.map.shape()[2];
    if (class_id < 0 || class_id >= c) {
        throw ParameterError("cross_entropy_loss: class " + std::to_string(class_id) +
                             " out of range [0, " + std::to_string(c) + ")");
    }
    return cross_entropy_logits(global_avg_pool(smap.map), class_id);
}

// Momentum buffers keyed by parameter visitation order.
class SgdOptimizer {
 public:
    explicit SgdOptimizer(const TrainConfig& cfg) : cfg_(cfg) {}

    void step(MultiscaleParams& params) {
        std::size_t index = 0;
        params.for_each([&](const std::string&, Tensor& t) {
            if (velocity_.size() <= index) velocity_.emplace_back(t.size(), 0.0);
            auto& data = t.data_mut();
            if (t.has_grad()) {
                const auto& g = t.grad();
                const double wd = cfg_.weight_decay;
                if (cfg_.optimizer == OptimizerKind::momentum) {
                    auto& v = velocity_[index];
                    for (std::size_t i = 0; i < data.size(); ++i) {
                        v[i] = cfg_.momentum * v[i] + g[i] + wd * data[i];
                        data[i] -= cfg_.learning_rate * v[i];
                    }
                } else {
                    for (std::size_t i = 0; i < data.size(); ++i)
                        data[i] -= cfg_.learning_rate * (g[i] + wd * data[i]);
                }
                t.clear_grad();
            }
            ++index;
        });
    }

 private:
    TrainConfig cfg_;
    std::vector<std::vector<double>> velocity_;
};

// One optimizer update on the three-branch loss summed over a batch. Each
// branch sees its own pyramid level and contributes an independent loss
// term; branches share no parameters. The gradient is taken of the batch
// mean so the learning rate keeps its meaning across batch sizes. Returns
// the mean per-example loss.
inline double train_step(const std::vector<LabeledExample>& batch, MultiscaleParams& params,
                         const PyramidConfig& pcfg, const TrainConfig& tcfg,
                         SgdOptimizer& optimizer) {
    if (batch.empty()) throw ParameterError("train_step: empty batch");
    params.set_requires_grad(true);
    GradTape tape;
    Tensor mean_loss;
    {
        GradTape::Scope scope(tape);
        Tensor total = Tensor::scalar(0.0);
        for (const LabeledExample& example : batch) {
            const std::array<Tensor, 3> levels = build_pyramid(example.image, pcfg);
            for (int i = 0; i < 3; ++i) {
                const EncoderConfig& cfg = pcfg.scales[i];
                EncodeResult enc = encode(levels[i], params.branch[i], cfg);
                ClassScoreMap smap =
                    class_score_map(enc.embeddings, params.branch[i].score_kernel, cfg);
                Tensor loss = cross_entropy_loss(smap, example.class_id);
                total = add(total, scale(loss, tcfg.scale_loss_weights[i]));
            }
        }
        mean_loss = scale(total, 1.0 / static_cast<double>(batch.size()));
        tape.backward(mean_loss);
    }
    optimizer.step(params);
    return mean_loss(0);
}

struct TrainResult {
    MultiscaleParams params;
    std::vector<double> epoch_losses;  // mean per-example loss per epoch
};

// Seeded initialization, shuffled epochs, periodic checkpoint writes.
// Deterministic for a fixed seed: initialization, the per-epoch permutation
// and every numeric step depend only on the config.
inline TrainResult train(const std::vector<LabeledExample>& dataset, const PyramidConfig& pcfg,
                         const TrainConfig& tcfg) {
    tcfg.validate();
    if (dataset.empty()) throw ParameterError("train: empty dataset");
    pcfg.validate();
    Rng init_rng(tcfg.seed);
    TrainResult result;
    result.params = MultiscaleParams::init(pcfg, init_rng);
    SgdOptimizer optimizer(tcfg);
    Rng shuffle_rng(tcfg.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = shuffle_rng.next_u64() % i;
            std::swap(order[i - 1], order[j]);
        }
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(tcfg.batch_size)) {
            std::vector<LabeledExample> batch;
            for (std::size_t i = start;
                 i < order.size() && i < start + static_cast<std::size_t>(tcfg.batch_size); ++i) {
                batch.push_back(dataset[order[i]]);
            }
            epoch_loss += train_step(batch, result.params, pcfg, tcfg, optimizer) * batch.size();
            seen += batch.size();
        }
        result.epoch_losses.push_back(epoch_loss / static_cast<double>(seen));
        const bool snapshot = tcfg.checkpoint_every > 0 && (epoch + 1) % tcfg.checkpoint_every == 0;
        if (!tcfg.checkpoint_dir.empty() && (snapshot || epoch + 1 == tcfg.epochs)) {
            save_branch_checkpoints(tcfg.checkpoint_dir, pcfg, result.params);
        }
    }
    return result;
}

}  // namespace molt
