#pragma once

#include <vector>

#include "molt/imageops.hpp"
#include "molt/segment.hpp"
#include "molt/tensor.hpp"

namespace molt {

struct RefineParams {
    double lambda = 0.5;  // weight on the original map

    void validate() const {
        if (!(lambda >= 0.0 && lambda <= 1.0)) {
            throw ParameterError("refine: lambda must lie in [0, 1]");
        }
    }
};

// Each pixel receives the arithmetic mean activation of its segment.
inline Tensor cluster_mean_activation(const Tensor& cam, const SegmentMap& seg) {
    require_rank(cam, 2, "cluster_mean_activation");
    if (cam.shape()[0] != seg.h || cam.shape()[1] != seg.w) {
        throw DimensionError("cluster_mean_activation: map " + shape_string(cam.shape()) +
                             " vs segments " + std::to_string(seg.h) + "x" +
                             std::to_string(seg.w));
    }
    std::vector<double> sums(seg.num_segments, 0.0);
    std::vector<long long> counts(seg.num_segments, 0);
    for (std::size_t i = 0; i < cam.size(); ++i) {
        sums[seg.labels[i]] += cam.data()[i];
        ++counts[seg.labels[i]];
    }
    for (int s = 0; s < seg.num_segments; ++s) sums[s] /= static_cast<double>(counts[s]);
    Tensor out(cam.shape());
    auto& o = out.data_mut();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = sums[seg.labels[i]];
    return out;
}

// lambda * cam + (1 - lambda) * segment means, before the final min-max
// normalization. Exposed separately because the blend preserves per-segment
// means exactly while normalization does not.
inline Tensor refine_blend(const Tensor& cam, const SegmentMap& seg, const RefineParams& p) {
    p.validate();
    Tensor means = cluster_mean_activation(cam, seg);
    Tensor out(cam.shape());
    auto& o = out.data_mut();
    for (std::size_t i = 0; i < o.size(); ++i)
        o[i] = p.lambda * cam.data()[i] + (1.0 - p.lambda) * means.data()[i];
    return out;
}

// Refined map, min-max normalized so downstream thresholding sees [0, 1]
// regardless of whether refinement ran.
inline Tensor refine_cam(const Tensor& cam, const SegmentMap& seg, const RefineParams& p) {
    return minmax_normalize(refine_blend(cam, seg, p));
}

}  // namespace molt
