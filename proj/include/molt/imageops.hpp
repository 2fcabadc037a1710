#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "molt/tensor.hpp"

namespace molt {

// Corner-aligned bilinear resize of a rank-2 map or rank-3 image. With this
// sampling grid a same-size resize reproduces the input bit for bit.
inline Tensor bilinear_resize(const Tensor& m, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) {
        throw ParameterError("bilinear_resize: target size must be at least 1x1");
    }
    if (m.rank() != 2 && m.rank() != 3) {
        throw DimensionError("bilinear_resize: expected rank 2 or 3, got " +
                             shape_string(m.shape()));
    }
    const int h = m.shape()[0], w = m.shape()[1];
    const int c = m.rank() == 3 ? m.shape()[2] : 1;
    std::vector<int> out_shape = m.rank() == 3 ? std::vector<int>{out_h, out_w, c}
                                               : std::vector<int>{out_h, out_w};
    Tensor out(std::move(out_shape));
    auto& o = out.data_mut();
    const auto& v = m.data();
    const double sy = out_h > 1 ? static_cast<double>(h - 1) / (out_h - 1) : 0.0;
    const double sx = out_w > 1 ? static_cast<double>(w - 1) / (out_w - 1) : 0.0;
    for (int y = 0; y < out_h; ++y) {
        const double fy = y * sy;
        const int y0 = std::min(static_cast<int>(fy), h - 1);
        const int y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = x * sx;
            const int x0 = std::min(static_cast<int>(fx), w - 1);
            const int x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - x0;
            for (int ch = 0; ch < c; ++ch) {
                const double v00 = v[(static_cast<std::size_t>(y0) * w + x0) * c + ch];
                const double v01 = v[(static_cast<std::size_t>(y0) * w + x1) * c + ch];
                const double v10 = v[(static_cast<std::size_t>(y1) * w + x0) * c + ch];
                const double v11 = v[(static_cast<std::size_t>(y1) * w + x1) * c + ch];
                const double top = v00 + wx * (v01 - v00);
                const double bot = v10 + wx * (v11 - v10);
                o[(static_cast<std::size_t>(y) * out_w + x) * c + ch] = top + wy * (bot - top);
            }
        }
    }
    return out;
}

// (m - min) / (max - min). A constant map normalizes to all zeros: a
// featureless map should claim no foreground.
inline Tensor minmax_normalize(const Tensor& m) {
    const auto& v = m.data();
    double lo = v[0], hi = v[0];
    for (const double x : v) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    Tensor out(m.shape());
    auto& o = out.data_mut();
    if (hi > lo) {
        const double span = hi - lo;
        for (std::size_t i = 0; i < v.size(); ++i) o[i] = (v[i] - lo) / span;
    }
    return out;
}

// Channel c of an [h x w x c] tensor as an [h x w] map.
inline Tensor channel_slice(const Tensor& m, int channel) {
    require_rank(m, 3, "channel_slice");
    const int h = m.shape()[0], w = m.shape()[1], c = m.shape()[2];
    if (channel < 0 || channel >= c) {
        throw ParameterError("channel_slice: channel " + std::to_string(channel) +
                             " out of range [0, " + std::to_string(c) + ")");
    }
    Tensor out({h, w});
    auto& o = out.data_mut();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            o[static_cast<std::size_t>(y) * w + x] = m(y, x, channel);
    return out;
}

// Index of the largest value; ties resolve to the lowest index.
inline int argmax(const std::vector<double>& v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

// Indices of the k largest values in descending score order; ties keep the
// lower index first.
inline std::vector<int> top_k(const std::vector<double>& v, int k) {
    std::vector<int> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return v[a] > v[b]; });
    order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(k)));
    return order;
}

}  // namespace molt
