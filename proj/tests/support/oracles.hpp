#pragma once

// Independent reference implementations used only by tests. These stay
// deliberately naive (plain loops, no shared code with the library kernels)
// so they can serve as oracles.

#include <cmath>
#include <functional>
#include <vector>

#include "molt/autodiff.hpp"
#include "molt/rng.hpp"
#include "molt/tensor.hpp"

namespace oracle {

inline molt::Tensor random_tensor(std::vector<int> shape, molt::Rng& rng, double lo = -1.0,
                                  double hi = 1.0) {
    molt::Tensor t(std::move(shape));
    for (double& v : t.data_mut()) v = rng.uniform(lo, hi);
    return t;
}

inline std::vector<double> matmul_loops(const std::vector<double>& a,
                                        const std::vector<double>& b, int r, int k, int c) {
    std::vector<double> out(static_cast<std::size_t>(r) * c, 0.0);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) {
            double s = 0.0;
            for (int p = 0; p < k; ++p)
                s += a[static_cast<std::size_t>(i) * k + p] * b[static_cast<std::size_t>(p) * c + j];
            out[static_cast<std::size_t>(i) * c + j] = s;
        }
    return out;
}

inline std::vector<double> softmax_loops(const std::vector<double>& x) {
    double mx = x[0];
    for (const double v : x) mx = std::max(mx, v);
    std::vector<double> out(x.size());
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) total += (out[i] = std::exp(x[i] - mx));
    for (double& v : out) v /= total;
    return out;
}

inline std::vector<double> gap_loops(const std::vector<double>& m, int h, int w, int c) {
    std::vector<double> out(c, 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch)
                out[ch] += m[(static_cast<std::size_t>(y) * w + x) * c + ch];
    for (double& v : out) v /= static_cast<double>(h) * w;
    return out;
}

// Direct six-loop cross-correlation with zero padding.
inline std::vector<double> conv2d_loops(const std::vector<double>& x, int h, int w, int cin,
                                        const std::vector<double>& k, int kh, int kw, int cout,
                                        int pad) {
    const int oh = h + 2 * pad - kh + 1;
    const int ow = w + 2 * pad - kw + 1;
    std::vector<double> out(static_cast<std::size_t>(oh) * ow * cout, 0.0);
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
            for (int co = 0; co < cout; ++co) {
                double s = 0.0;
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx)
                        for (int ci = 0; ci < cin; ++ci) {
                            const int iy = oy + ky - pad;
                            const int ix = ox + kx - pad;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            s += x[(static_cast<std::size_t>(iy) * w + ix) * cin + ci] *
                                 k[((static_cast<std::size_t>(ky) * kw + kx) * cin + ci) * cout +
                                   co];
                        }
                out[(static_cast<std::size_t>(oy) * ow + ox) * cout + co] = s;
            }
    return out;
}

// Brute-force IoU by counting pixel membership.
inline double iou_pixel_count(int ax0, int ay0, int ax1, int ay1, int bx0, int by0, int bx1,
                              int by1, int span) {
    long long inter = 0, uni = 0;
    for (int y = 0; y < span; ++y)
        for (int x = 0; x < span; ++x) {
            const bool in_a = x >= ax0 && x < ax1 && y >= ay0 && y < ay1;
            const bool in_b = x >= bx0 && x < bx1 && y >= by0 && y < by1;
            if (in_a && in_b) ++inter;
            if (in_a || in_b) ++uni;
        }
    return static_cast<double>(inter) / static_cast<double>(uni);
}

struct GradCheck {
    double max_rel_err = 0.0;
    std::size_t compared = 0;
};

// Central finite differences against tape gradients. loss_fn must rebuild
// the forward pass from the current contents of `inputs` on every call; it
// is invoked under a tape once for the analytic pass and tapelessly for
// every probe.
//
// Elements with |analytic| <= min_mag are outside the check's magnitude
// threshold, except that a large finite difference there still counts as a
// failure (a missing gradient must not hide below the threshold). An
// absolute floor of 1e-9 covers probes where the central difference's own
// truncation error dominates the comparison.
inline GradCheck grad_check(std::vector<molt::Tensor> inputs,
                            const std::function<molt::Tensor()>& loss_fn, double step = 1e-4,
                            double min_mag = 1e-6) {
    for (molt::Tensor& t : inputs) t.set_requires_grad(true);
    std::vector<std::vector<double>> analytic;
    {
        molt::GradTape tape;
        molt::GradTape::Scope scope(tape);
        molt::Tensor loss = loss_fn();
        tape.backward(loss);
        for (molt::Tensor& t : inputs) analytic.push_back(t.grad());
        for (molt::Tensor& t : inputs) t.clear_grad();
    }
    GradCheck result;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto& data = inputs[i].data_mut();
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double saved = data[j];
            data[j] = saved + step;
            const double f_plus = loss_fn()(0);
            data[j] = saved - step;
            const double f_minus = loss_fn()(0);
            data[j] = saved;
            const double fd = (f_plus - f_minus) / (2.0 * step);
            const double g = analytic[i][j];
            if (std::abs(g) <= min_mag) {
                if (std::abs(fd) > 100.0 * min_mag) {
                    result.max_rel_err = 1.0;  // gradient missing entirely
                    ++result.compared;
                }
                continue;
            }
            if (std::abs(g - fd) <= 1e-9) {
                ++result.compared;
                continue;
            }
            const double rel = std::abs(g - fd) / std::max(std::abs(g), std::abs(fd));
            result.max_rel_err = std::max(result.max_rel_err, rel);
            ++result.compared;
        }
    }
    return result;
}

}  // namespace oracle
