#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "molt/tensor.hpp"

namespace molt {

// Pixel box, inclusive-exclusive.
struct BBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    bool valid() const { return x0 < x1 && y0 < y1; }
    long long area() const {
        return static_cast<long long>(x1 - x0) * static_cast<long long>(y1 - y0);
    }
    bool operator==(const BBox&) const = default;
};

struct BinaryMask {
    int h = 0, w = 0;
    std::vector<std::uint8_t> data;

    std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * w + x]; }
};

// mask = cam > tau * max(cam); the threshold is relative so per-image
// activation scale does not matter.
inline BinaryMask threshold_mask(const Tensor& cam, double tau) {
    require_rank(cam, 2, "threshold_mask");
    if (!(tau > 0.0 && tau < 1.0)) {
        throw ParameterError("threshold_mask: tau must lie in (0, 1)");
    }
    const int h = cam.shape()[0], w = cam.shape()[1];
    double mx = cam.data()[0];
    for (const double v : cam.data()) mx = std::max(mx, v);
    const double cut = tau * mx;
    BinaryMask mask{h, w, std::vector<std::uint8_t>(cam.size(), 0)};
    for (std::size_t i = 0; i < cam.size(); ++i)
        mask.data[i] = cam.data()[i] > cut ? 1 : 0;
    return mask;
}

// Tight box of the largest 4-connected foreground component. Ties go to the
// component discovered first in raster order. An empty mask falls back to
// the full-image box.
inline BBox largest_component_bbox(const BinaryMask& mask) {
    const int h = mask.h, w = mask.w;
    std::vector<int> label(static_cast<std::size_t>(h) * w, -1);
    std::vector<int> stack;
    long long best_area = 0;
    BBox best{0, 0, w, h};
    bool found = false;
    int next_label = 0;
    for (int sy = 0; sy < h; ++sy) {
        for (int sx = 0; sx < w; ++sx) {
            const std::size_t start = static_cast<std::size_t>(sy) * w + sx;
            if (!mask.data[start] || label[start] >= 0) continue;
            long long area = 0;
            BBox box{sx, sy, sx + 1, sy + 1};
            stack.assign(1, static_cast<int>(start));
            label[start] = next_label;
            while (!stack.empty()) {
                const int idx = stack.back();
                stack.pop_back();
                const int y = idx / w, x = idx % w;
                ++area;
                box.x0 = std::min(box.x0, x);
                box.y0 = std::min(box.y0, y);
                box.x1 = std::max(box.x1, x + 1);
                box.y1 = std::max(box.y1, y + 1);
                const int ny[4] = {y - 1, y + 1, y, y};
                const int nx[4] = {x, x, x - 1, x + 1};
                for (int k = 0; k < 4; ++k) {
                    if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) continue;
                    const std::size_t nidx = static_cast<std::size_t>(ny[k]) * w + nx[k];
                    if (mask.data[nidx] && label[nidx] < 0) {
                        label[nidx] = next_label;
                        stack.push_back(static_cast<int>(nidx));
                    }
                }
            }
            if (area > best_area) {
                best_area = area;
                best = box;
                found = true;
            }
            ++next_label;
        }
    }
    if (!found) return BBox{0, 0, w, h};
    return best;
}

// Intersection over union on pixel areas.
inline double iou(const BBox& a, const BBox& b) {
    if (!a.valid() || !b.valid()) {
        throw ParameterError("iou: boxes must be non-degenerate");
    }
    const int ix0 = std::max(a.x0, b.x0), iy0 = std::max(a.y0, b.y0);
    const int ix1 = std::min(a.x1, b.x1), iy1 = std::min(a.y1, b.y1);
    const long long inter = (ix1 > ix0 && iy1 > iy0)
                                ? static_cast<long long>(ix1 - ix0) * (iy1 - iy0)
                                : 0;
    const long long uni = a.area() + b.area() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

struct EvalRecord {
    std::string image_id;
    std::vector<int> top5;  // distinct class ids, descending score
    BBox pred_box;
    int gt_class = 0;
    std::vector<BBox> gt_boxes;
    double best_iou = 0.0;
};

struct Metrics {
    double top1 = 0.0;
    double top5 = 0.0;
    double gt_known = 0.0;
    std::size_t count = 0;
};

struct PerImageResult {
    std::string image_id;
    bool top1_hit = false;
    bool top5_hit = false;
    double iou = 0.0;
};

// Fills best_iou (max IoU of pred_box against the ground-truth boxes) and
// folds the three metrics. Localization counts only under the strict
// inequality IoU > 0.5.
inline Metrics evaluate(std::vector<EvalRecord>& records,
                        std::vector<PerImageResult>* per_image = nullptr) {
    if (records.empty()) throw ParameterError("evaluate: empty record list");
    Metrics m;
    m.count = records.size();
    for (EvalRecord& r : records) {
        double best = 0.0;
        for (const BBox& gt : r.gt_boxes) best = std::max(best, iou(r.pred_box, gt));
        r.best_iou = best;
        const bool localized = best > 0.5;
        const bool top1_cls = !r.top5.empty() && r.top5.front() == r.gt_class;
        const bool top5_cls =
            std::find(r.top5.begin(), r.top5.end(), r.gt_class) != r.top5.end();
        if (localized) m.gt_known += 1.0;
        if (localized && top1_cls) m.top1 += 1.0;
        if (localized && top5_cls) m.top5 += 1.0;
        if (per_image) per_image->push_back({r.image_id, localized && top1_cls,
                                             localized && top5_cls, best});
    }
    m.top1 /= static_cast<double>(m.count);
    m.top5 /= static_cast<double>(m.count);
    m.gt_known /= static_cast<double>(m.count);
    return m;
}

}  // namespace molt
