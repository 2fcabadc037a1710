#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "molt/localize.hpp"
#include "molt/ppm.hpp"
#include "molt/tensor.hpp"

namespace molt {

namespace render_detail {

inline double ramp_component(double t, double center) {
    return std::clamp(1.5 - std::abs(4.0 * t - center), 0.0, 1.0);
}

inline void draw_box(Tensor& image, const BBox& box, double r, double g, double b) {
    const int h = image.shape()[0], w = image.shape()[1];
    auto paint = [&](int y, int x) {
        if (y < 0 || y >= h || x < 0 || x >= w) return;
        const std::size_t base = (static_cast<std::size_t>(y) * w + x) * 3;
        image.data_mut()[base] = r;
        image.data_mut()[base + 1] = g;
        image.data_mut()[base + 2] = b;
    };
    for (int x = box.x0; x < box.x1; ++x) {
        paint(box.y0, x);
        paint(box.y1 - 1, x);
    }
    for (int y = box.y0; y < box.y1; ++y) {
        paint(y, box.x0);
        paint(y, box.x1 - 1);
    }
}

}  // namespace render_detail

// Activation t in [0, 1] through a fixed jet-like ramp:
//   r = clamp(1.5 - |4t - 3|), g = clamp(1.5 - |4t - 2|), b = clamp(1.5 - |4t - 1|)
// running dark blue -> cyan -> yellow -> red.
inline void heat_color(double t, double& r, double& g, double& b) {
    r = render_detail::ramp_component(t, 3.0);
    g = render_detail::ramp_component(t, 2.0);
    b = render_detail::ramp_component(t, 1.0);
}

// Alpha-blends the colored activation map at 0.5 over the image, then draws
// the predicted box in green and any ground-truth boxes in red.
inline void render_heatmap(const Tensor& cam, const Tensor& image, const std::string& out_path,
                           const std::optional<BBox>& pred_box = std::nullopt,
                           const std::vector<BBox>& gt_boxes = {}) {
    require_rank(cam, 2, "render_heatmap");
    require_rank(image, 3, "render_heatmap");
    if (cam.shape()[0] != image.shape()[0] || cam.shape()[1] != image.shape()[1]) {
        throw DimensionError("render_heatmap: map " + shape_string(cam.shape()) +
                             " vs image " + shape_string(image.shape()));
    }
    const int h = image.shape()[0], w = image.shape()[1];
    Tensor overlay({h, w, 3});
    auto& o = overlay.data_mut();
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double r, g, b;
            heat_color(cam(y, x), r, g, b);
            const std::size_t base = (static_cast<std::size_t>(y) * w + x) * 3;
            o[base] = 0.5 * image(y, x, 0) + 0.5 * r;
            o[base + 1] = 0.5 * image(y, x, 1) + 0.5 * g;
            o[base + 2] = 0.5 * image(y, x, 2) + 0.5 * b;
        }
    }
    for (const BBox& gt : gt_boxes) render_detail::draw_box(overlay, gt, 1.0, 0.0, 0.0);
    if (pred_box) render_detail::draw_box(overlay, *pred_box, 0.0, 1.0, 0.0);
    encode_image(out_path, overlay);
}

}  // namespace molt
