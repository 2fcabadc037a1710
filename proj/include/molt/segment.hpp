#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "molt/autodiff.hpp"
#include "molt/imageops.hpp"
#include "molt/rng.hpp"
#include "molt/tensor.hpp"

namespace molt {

// Per-pixel integer cluster labels; labels are dense in [0, num_segments)
// and every label is used.
struct SegmentMap {
    int h = 0, w = 0;
    int num_segments = 0;
    std::vector<std::int32_t> labels;

    std::int32_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * w + x]; }
    std::int32_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * w + x]; }
};

struct SlicParams {
    int target_segments = 100;  // K
    double compactness = 10.0;  // m
    int iterations = 10;

    void validate() const {
        if (target_segments < 1) throw ParameterError("slic: K must be at least 1");
        if (compactness <= 0.0) throw ParameterError("slic: compactness must be positive");
        if (iterations < 1) throw ParameterError("slic: iterations must be at least 1");
    }
};

struct DpcParams {
    int channels = 32;  // Q
    int train_iterations = 64;
    double learning_rate = 0.1;
    int min_clusters = 2;
    std::uint64_t seed = 1;
    // 3x3 conv stack 3 -> Q -> Q -> Q, ReLU between layers; empty until
    // initialized.
    std::vector<Tensor> conv_w;
    std::vector<Tensor> conv_b;

    void validate() const {
        if (min_clusters < 2) throw ParameterError("dpc: min_clusters must be at least 2");
        if (channels < min_clusters) {
            throw ParameterError("dpc: channel count must be at least min_clusters");
        }
        if (train_iterations < 0) throw ParameterError("dpc: negative train iterations");
        if (learning_rate <= 0.0) throw ParameterError("dpc: learning rate must be positive");
    }

    bool initialized() const { return conv_w.size() == 3; }
};

namespace seg_detail {

// Relabels to a dense [0, n) range preserving first-appearance order.
inline void compact_labels(SegmentMap& seg) {
    std::map<std::int32_t, std::int32_t> remap;
    for (std::int32_t& l : seg.labels) {
        auto [it, inserted] = remap.emplace(l, static_cast<std::int32_t>(remap.size()));
        l = it->second;
    }
    seg.num_segments = static_cast<int>(remap.size());
}

inline int distinct_labels(const std::vector<std::int32_t>& labels) {
    std::vector<std::int32_t> copy(labels);
    std::sort(copy.begin(), copy.end());
    return static_cast<int>(std::unique(copy.begin(), copy.end()) - copy.begin());
}

// Seed grid layout: nx * ny <= K, preferring exact-or-one-short counts and
// then the aspect ratio closest to the image's.
inline std::pair<int, int> seed_grid(int h, int w, int k) {
    int best_nx = 1, best_ny = 1;
    int best_err = k;  // K - nx*ny, always >= 0
    double best_aspect = 1e300;
    const double image_aspect = static_cast<double>(w) / h;
    for (int ny = 1; ny <= k && ny <= h; ++ny) {
        const int nx = std::min(k / ny, w);
        if (nx < 1) continue;
        const int err = k - nx * ny;
        const double aspect = std::abs(std::log((static_cast<double>(nx) / ny) / image_aspect));
        const bool better = (err <= 1) == (best_err <= 1)
                                ? (err <= 1 ? aspect < best_aspect : err < best_err)
                                : err <= 1;
        if (better) {
            best_nx = nx;
            best_ny = ny;
            best_err = err;
            best_aspect = aspect;
        }
    }
    return {best_nx, best_ny};
}

struct SlicCenter {
    double r, g, b, x, y;
};

}  // namespace seg_detail

// Classic SLIC with grid-seeded centers and a combined color/space distance
//   d^2 = d_color^2 + m^2 * (d_xy / S)^2
// searched in a 2S x 2S window per center. Color distances use the 0..255
// scale so the default compactness weighs color and space like the original
// formulation. A post-pass relabels orphaned fragments to their dominant
// 4-connected neighbor so every segment is connected.
inline SegmentMap slic_superpixels(const Tensor& image, const SlicParams& params) {
    params.validate();
    require_rank(image, 3, "slic_superpixels");
    const int h = image.shape()[0], w = image.shape()[1];
    if (image.shape()[2] != 3) throw DimensionError("slic_superpixels: expected 3 channels");
    const long long pixels = static_cast<long long>(h) * w;
    if (params.target_segments > pixels) {
        throw ParameterError("slic: K exceeds the pixel count");
    }

    const double spacing = std::sqrt(static_cast<double>(pixels) / params.target_segments);
    const auto [nx, ny] = seg_detail::seed_grid(h, w, params.target_segments);
    std::vector<seg_detail::SlicCenter> centers;
    centers.reserve(static_cast<std::size_t>(nx) * ny);
    for (int gy = 0; gy < ny; ++gy) {
        for (int gx = 0; gx < nx; ++gx) {
            const double cx = (gx + 0.5) * w / nx;
            const double cy = (gy + 0.5) * h / ny;
            const int px = std::min(w - 1, static_cast<int>(cx));
            const int py = std::min(h - 1, static_cast<int>(cy));
            centers.push_back({image(py, px, 0) * 255.0, image(py, px, 1) * 255.0,
                               image(py, px, 2) * 255.0, cx, cy});
        }
    }

    SegmentMap seg{h, w, static_cast<int>(centers.size()),
                   std::vector<std::int32_t>(static_cast<std::size_t>(pixels), 0)};
    std::vector<double> best_dist(static_cast<std::size_t>(pixels));
    const double m_over_s = params.compactness / spacing;

    for (int iter = 0; iter < params.iterations; ++iter) {
        std::fill(best_dist.begin(), best_dist.end(), 1e300);
        for (std::size_t ci = 0; ci < centers.size(); ++ci) {
            const auto& c = centers[ci];
            const int y_lo = std::max(0, static_cast<int>(c.y - 2.0 * spacing));
            const int y_hi = std::min(h, static_cast<int>(c.y + 2.0 * spacing) + 1);
            const int x_lo = std::max(0, static_cast<int>(c.x - 2.0 * spacing));
            const int x_hi = std::min(w, static_cast<int>(c.x + 2.0 * spacing) + 1);
            for (int y = y_lo; y < y_hi; ++y) {
                for (int x = x_lo; x < x_hi; ++x) {
                    const double dr = image(y, x, 0) * 255.0 - c.r;
                    const double dg = image(y, x, 1) * 255.0 - c.g;
                    const double db = image(y, x, 2) * 255.0 - c.b;
                    const double dx = (x + 0.5) - c.x;
                    const double dy = (y + 0.5) - c.y;
                    const double spatial = (dx * dx + dy * dy) * m_over_s * m_over_s;
                    const double dist = dr * dr + dg * dg + db * db + spatial;
                    const std::size_t idx = static_cast<std::size_t>(y) * w + x;
                    if (dist < best_dist[idx]) {
                        best_dist[idx] = dist;
                        seg.labels[idx] = static_cast<std::int32_t>(ci);
                    }
                }
            }
        }
        // Update centers to the mean color/position of their pixels.
        std::vector<seg_detail::SlicCenter> sums(centers.size(), {0, 0, 0, 0, 0});
        std::vector<long long> counts(centers.size(), 0);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const std::int32_t l = seg.at(y, x);
                sums[l].r += image(y, x, 0) * 255.0;
                sums[l].g += image(y, x, 1) * 255.0;
                sums[l].b += image(y, x, 2) * 255.0;
                sums[l].x += x + 0.5;
                sums[l].y += y + 0.5;
                ++counts[l];
            }
        }
        for (std::size_t ci = 0; ci < centers.size(); ++ci) {
            if (counts[ci] == 0) continue;  // empty cluster keeps its center
            const double n = static_cast<double>(counts[ci]);
            centers[ci] = {sums[ci].r / n, sums[ci].g / n, sums[ci].b / n, sums[ci].x / n,
                           sums[ci].y / n};
        }
    }

    // Connectivity pass: components that are not the largest piece of their
    // label get merged into the dominant adjacent label. Each pass strictly
    // reduces the component count, so this terminates.
    for (;;) {
        std::vector<int> comp(static_cast<std::size_t>(pixels), -1);
        std::vector<long long> comp_area;
        std::vector<std::int32_t> comp_label;
        std::vector<int> stack;
        for (int sy = 0; sy < h; ++sy) {
            for (int sx = 0; sx < w; ++sx) {
                const std::size_t start = static_cast<std::size_t>(sy) * w + sx;
                if (comp[start] >= 0) continue;
                const int id = static_cast<int>(comp_area.size());
                const std::int32_t lab = seg.labels[start];
                comp_area.push_back(0);
                comp_label.push_back(lab);
                comp[start] = id;
                stack.assign(1, static_cast<int>(start));
                while (!stack.empty()) {
                    const int idx = stack.back();
                    stack.pop_back();
                    ++comp_area[id];
                    const int y = idx / w, x = idx % w;
                    const int nbr_y[4] = {y - 1, y + 1, y, y};
                    const int nbr_x[4] = {x, x, x - 1, x + 1};
                    for (int k = 0; k < 4; ++k) {
                        if (nbr_y[k] < 0 || nbr_y[k] >= h || nbr_x[k] < 0 || nbr_x[k] >= w)
                            continue;
                        const std::size_t nidx =
                            static_cast<std::size_t>(nbr_y[k]) * w + nbr_x[k];
                        if (comp[nidx] < 0 && seg.labels[nidx] == lab) {
                            comp[nidx] = id;
                            stack.push_back(static_cast<int>(nidx));
                        }
                    }
                }
            }
        }
        // Largest component per label survives; the rest are orphans.
        std::map<std::int32_t, int> main_comp;
        for (int id = 0; id < static_cast<int>(comp_area.size()); ++id) {
            auto it = main_comp.find(comp_label[id]);
            if (it == main_comp.end() || comp_area[id] > comp_area[it->second]) {
                main_comp[comp_label[id]] = id;
            }
        }
        bool changed = false;
        for (int id = 0; id < static_cast<int>(comp_area.size()); ++id) {
            if (main_comp[comp_label[id]] == id) continue;
            // Dominant 4-connected neighboring label of this orphan.
            std::map<std::int32_t, long long> votes;
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    if (comp[static_cast<std::size_t>(y) * w + x] != id) continue;
                    const int nbr_y[4] = {y - 1, y + 1, y, y};
                    const int nbr_x[4] = {x, x, x - 1, x + 1};
                    for (int k = 0; k < 4; ++k) {
                        if (nbr_y[k] < 0 || nbr_y[k] >= h || nbr_x[k] < 0 || nbr_x[k] >= w)
                            continue;
                        const std::size_t nidx =
                            static_cast<std::size_t>(nbr_y[k]) * w + nbr_x[k];
                        if (comp[nidx] != id) votes[seg.labels[nidx]] += 1;
                    }
                }
            }
            if (votes.empty()) continue;  // single-component image
            std::int32_t winner = votes.begin()->first;
            long long best = votes.begin()->second;
            for (const auto& [lab, n] : votes) {
                if (n > best) {
                    winner = lab;
                    best = n;
                }
            }
            for (std::size_t i = 0; i < seg.labels.size(); ++i)
                if (comp[i] == id) seg.labels[i] = winner;
            changed = true;
        }
        if (!changed) break;
    }

    seg_detail::compact_labels(seg);
    return seg;
}

// Fills the conv stack with seeded random weights (zero biases).
inline void dpc_init(DpcParams& params) {
    params.validate();
    Rng rng(params.seed);
    const int q = params.channels;
    auto init_w = [&](int cin, int cout) {
        Tensor t({3, 3, cin, cout});
        const double sigma = std::sqrt(2.0 / (9.0 * cin));
        for (double& v : t.data_mut()) v = rng.normal(0.0, sigma);
        t.set_requires_grad(true);
        return t;
    };
    params.conv_w = {init_w(3, q), init_w(q, q), init_w(q, q)};
    params.conv_b.clear();
    for (int i = 0; i < 3; ++i) {
        Tensor b({q});
        b.set_requires_grad(true);
        params.conv_b.push_back(b);
    }
}

namespace seg_detail {

// Border handling for the extractor: replicate the image margin by the
// stack's receptive radius so border pixels see edge colors instead of
// zeros, then crop the response back to the original extent.
constexpr int kReceptiveRadius = 3;

inline Tensor replicate_pad(const Tensor& image, int radius) {
    const int h = image.shape()[0], w = image.shape()[1], c = image.shape()[2];
    Tensor out({h + 2 * radius, w + 2 * radius, c});
    auto& o = out.data_mut();
    for (int y = 0; y < h + 2 * radius; ++y) {
        const int sy = std::clamp(y - radius, 0, h - 1);
        for (int x = 0; x < w + 2 * radius; ++x) {
            const int sx = std::clamp(x - radius, 0, w - 1);
            for (int ch = 0; ch < c; ++ch)
                o[(static_cast<std::size_t>(y) * (w + 2 * radius) + x) * c + ch] =
                    image(sy, sx, ch);
        }
    }
    return out;
}

}  // namespace seg_detail

// Per-pixel Q-channel response: three padded 3x3 convolutions with ReLU
// between layers over a replicate-padded margin, then per-channel
// standardization over the grid.
inline Tensor dpc_features(const Tensor& image, const DpcParams& params) {
    if (!params.initialized()) throw ContractError("dpc_features: params not initialized");
    require_rank(image, 3, "dpc_features");
    const int h = image.shape()[0], w = image.shape()[1];
    const int radius = seg_detail::kReceptiveRadius;
    Tensor x = seg_detail::replicate_pad(image, radius);
    for (int layer = 0; layer < 3; ++layer) {
        Tensor pre = conv2d(x, params.conv_w[layer], 1);
        const int hh = pre.shape()[0], ww = pre.shape()[1], q = pre.shape()[2];
        Tensor biased = reshape(
            add_rowvec(reshape(pre, {hh * ww, q}), params.conv_b[layer]), {hh, ww, q});
        x = layer < 2 ? relu(biased) : biased;
    }
    return channel_standardize(crop2d(x, radius, radius, h, w));
}

// label(x, y) = argmax over channels (lowest index wins ties), compacted to
// a dense label range.
inline SegmentMap dpc_assign(const Tensor& features) {
    require_rank(features, 3, "dpc_assign");
    const int h = features.shape()[0], w = features.shape()[1], q = features.shape()[2];
    SegmentMap seg{h, w, 0, std::vector<std::int32_t>(static_cast<std::size_t>(h) * w, 0)};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int best = 0;
            double best_v = features(y, x, 0);
            for (int ch = 1; ch < q; ++ch) {
                const double v = features(y, x, ch);
                if (v > best_v) {
                    best_v = v;
                    best = ch;
                }
            }
            seg.at(y, x) = best;
        }
    }
    seg_detail::compact_labels(seg);
    return seg;
}

namespace seg_detail {

// Argmax restricted to an allowed channel set; keeps the label count from
// ever growing during self-supervision.
inline std::vector<std::int32_t> assign_channels(const Tensor& features,
                                                 const std::vector<bool>& allowed) {
    const int h = features.shape()[0], w = features.shape()[1], q = features.shape()[2];
    std::vector<std::int32_t> out(static_cast<std::size_t>(h) * w, 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int best = -1;
            double best_v = 0.0;
            for (int ch = 0; ch < q; ++ch) {
                if (!allowed[ch]) continue;
                const double v = features(y, x, ch);
                if (best < 0 || v > best_v) {
                    best_v = v;
                    best = ch;
                }
            }
            out[static_cast<std::size_t>(y) * w + x] = best;
        }
    }
    return out;
}

// Overwrites each superpixel's labels with that superpixel's majority label
// (ties to the lowest label).
inline std::vector<std::int32_t> superpixel_majority(const std::vector<std::int32_t>& assign,
                                                     const SegmentMap& slic) {
    std::vector<std::map<std::int32_t, long long>> votes(slic.num_segments);
    for (std::size_t i = 0; i < assign.size(); ++i) votes[slic.labels[i]][assign[i]] += 1;
    std::vector<std::int32_t> winner(slic.num_segments, 0);
    for (int s = 0; s < slic.num_segments; ++s) {
        std::int32_t best_label = votes[s].begin()->first;
        long long best_count = votes[s].begin()->second;
        for (const auto& [lab, n] : votes[s]) {
            if (n > best_count) {
                best_label = lab;
                best_count = n;
            }
        }
        winner[s] = best_label;
    }
    std::vector<std::int32_t> out(assign.size());
    for (std::size_t i = 0; i < assign.size(); ++i) out[i] = winner[slic.labels[i]];
    return out;
}

}  // namespace seg_detail

// Iterative self-supervision: assign by argmax, overwrite each superpixel
// with its majority label, train the extractor against those targets with
// per-pixel cross-entropy, and stop when the iteration budget runs out or
// the cluster count would fall below min_clusters. The argmax is restricted
// to channels still present in the previous target map, so the distinct
// label count never increases.
//
// Throws TrainingError if the very first target map is already below
// min_clusters. loss_trace / final_targets / count_trace are optional
// observers.
inline DpcParams dpc_train(const Tensor& image, const SegmentMap& slic, DpcParams params,
                           std::vector<double>* loss_trace = nullptr,
                           std::vector<std::int32_t>* final_targets = nullptr,
                           std::vector<int>* count_trace = nullptr) {
    params.validate();
    require_rank(image, 3, "dpc_train");
    if (slic.h != image.shape()[0] || slic.w != image.shape()[1]) {
        throw DimensionError("dpc_train: superpixel map does not cover the image");
    }
    if (!params.initialized()) dpc_init(params);
    const int h = image.shape()[0], w = image.shape()[1], q = params.channels;

    std::vector<bool> allowed(q, true);
    std::vector<std::int32_t> targets;
    {
        Tensor features = dpc_features(image, params);
        targets = seg_detail::superpixel_majority(
            seg_detail::assign_channels(features, allowed), slic);
    }
    int cluster_count = seg_detail::distinct_labels(targets);
    if (cluster_count < params.min_clusters) {
        throw TrainingError("dpc_train: collapsed to " + std::to_string(cluster_count) +
                            " clusters at iteration 0");
    }
    if (count_trace) count_trace->push_back(cluster_count);
    allowed.assign(q, false);
    for (const std::int32_t t : targets) allowed[t] = true;

    for (int iter = 0; iter < params.train_iterations; ++iter) {
        GradTape tape;
        Tensor features;
        {
            GradTape::Scope scope(tape);
            features = dpc_features(image, params);
            std::vector<int> flat(targets.begin(), targets.end());
            Tensor loss = cross_entropy_rows(reshape(features, {h * w, q}), flat);
            if (loss_trace) loss_trace->push_back(loss(0));
            tape.backward(loss);
        }
        for (int layer = 0; layer < 3; ++layer) {
            for (Tensor* t : {&params.conv_w[layer], &params.conv_b[layer]}) {
                if (!t->has_grad()) continue;
                auto& data = t->data_mut();
                const auto& g = t->grad();
                for (std::size_t i = 0; i < data.size(); ++i)
                    data[i] -= params.learning_rate * g[i];
                t->clear_grad();
            }
        }
        Tensor updated = dpc_features(image, params);
        std::vector<std::int32_t> next = seg_detail::superpixel_majority(
            seg_detail::assign_channels(updated, allowed), slic);
        const int next_count = seg_detail::distinct_labels(next);
        if (next_count < params.min_clusters) break;
        if (count_trace) count_trace->push_back(next_count);
        targets = std::move(next);
        cluster_count = next_count;
        allowed.assign(q, false);
        for (const std::int32_t t : targets) allowed[t] = true;
    }
    if (final_targets) *final_targets = targets;
    return params;
}

// SLIC, then self-supervised training, then the final majority-smoothed
// assignment. A degenerate image that collapses immediately falls back to
// the single-cluster assignment instead of failing.
inline SegmentMap segment_image(const Tensor& image, const SlicParams& slic_params,
                                const DpcParams& dpc_params) {
    SegmentMap slic = slic_superpixels(image, slic_params);
    DpcParams params = dpc_params;
    if (!params.initialized()) dpc_init(params);
    SegmentMap out{slic.h, slic.w, 0, {}};
    try {
        std::vector<std::int32_t> targets;
        dpc_train(image, slic, params, nullptr, &targets);
        out.labels = std::move(targets);
    } catch (const TrainingError&) {
        Tensor features = dpc_features(image, params);
        std::vector<bool> allowed(params.channels, true);
        out.labels = seg_detail::superpixel_majority(
            seg_detail::assign_channels(features, allowed), slic);
    }
    seg_detail::compact_labels(out);
    return out;
}

}  // namespace molt
