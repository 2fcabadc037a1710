#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <unordered_set>
#include <utility>
#include <vector>

#include "molt/tensor.hpp"

namespace molt {

// Reverse-mode tape. Ops executed while a tape is active (via GradTape::Scope)
// append a backward closure; backward() seeds the loss gradient and replays
// the closures in exact reverse execution order. A tape belongs to one logical
// thread; independent computations use independent tapes.
class GradTape {
 public:
    GradTape() = default;
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    class Scope {
     public:
        explicit Scope(GradTape& tape) : previous_(active_slot()) { active_slot() = &tape; }
        ~Scope() { active_slot() = previous_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

     private:
        GradTape* previous_;
    };

    static GradTape* active() { return active_slot(); }

    void record(std::function<void()> fn, const void* output_payload) {
        entries_.push_back(std::move(fn));
        outputs_.insert(output_payload);
    }

    std::size_t num_entries() const { return entries_.size(); }

    void backward(Tensor& loss) {
        if (loss.size() != 1) {
            throw ContractError("backward: loss must be scalar, got " +
                                shape_string(loss.shape()));
        }
        if (!outputs_.count(loss.payload().get())) {
            throw ContractError("backward: loss tensor was not produced on this tape");
        }
        auto& seed = loss.grad_buffer();
        seed[0] += 1.0;
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    }

 private:
    static GradTape*& active_slot() {
        thread_local GradTape* tape = nullptr;
        return tape;
    }

    std::vector<std::function<void()>> entries_;
    std::unordered_set<const void*> outputs_;
};

inline void backward(Tensor& loss, GradTape& tape) { tape.backward(loss); }

namespace detail {

using PayloadPtr = std::shared_ptr<TensorPayload>;

inline std::vector<double>& acc(const PayloadPtr& p) {
    if (p->grad.empty()) p->grad.assign(p->data.size(), 0.0);
    return p->grad;
}

inline bool tracing(std::initializer_list<const Tensor*> inputs) {
    if (!GradTape::active()) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

template <typename Fn>
inline void record_op(Tensor& out, Fn&& fn) {
    out.set_requires_grad(true);
    GradTape::active()->record(std::forward<Fn>(fn), out.payload().get());
}

// Slice geometry for reductions/normalizations along one axis.
struct AxisSlices {
    std::size_t outer, n, inner;
};

inline AxisSlices axis_slices(const Tensor& t, int axis, const char* op) {
    if (axis < 0 || axis >= t.rank()) {
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                             " invalid for " + shape_string(t.shape()));
    }
    AxisSlices s{1, static_cast<std::size_t>(t.shape()[axis]), 1};
    for (int i = 0; i < axis; ++i) s.outer *= static_cast<std::size_t>(t.shape()[i]);
    for (int i = axis + 1; i < t.rank(); ++i) s.inner *= static_cast<std::size_t>(t.shape()[i]);
    return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out(a.shape());
    const std::size_t n = out.size();
    auto& o = out.data_mut();
    for (std::size_t i = 0; i < n; ++i) o[i] = a.data()[i] + b.data()[i];
    if (detail::tracing({&a, &b})) {
        detail::record_op(out, [ap = a.payload(), bp = b.payload(), op = out.payload()] {
            if (op->grad.empty()) return;
            const auto& g = op->grad;
            if (ap->requires_grad) {
                auto& ga = detail::acc(ap);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bp->requires_grad) {
                auto& gb = detail::acc(bp);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        });
    }
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out(a.shape());
    const std::size_t n = out.size();
    auto& o = out.data_mut();
    for (std::size_t i = 0; i < n; ++i) o[i] = a.data()[i] * b.data()[i];
    if (detail::tracing({&a, &b})) {
        detail::record_op(out, [ap = a.payload(), bp = b.payload(), op = out.payload()] {
            if (op->grad.empty()) return;
            const auto& g = op->grad;
            if (ap->requires_grad) {
                auto& ga = detail::acc(ap);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bp->data[i];
            }
            if (bp->requires_grad) {
                auto& gb = detail::acc(bp);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * ap->data[i];
            }
        });
    }
    return out;
}

inline Tensor scale(const Tensor& a, double factor) {
    Tensor out(a.shape());
    const std::size_t n = out.size();
    auto& o = out.data_mut();
    for (std::size_t i = 0; i < n; ++i) o[i] = factor * a.data()[i];
    if (detail::tracing({&a})) {
        detail::record_op(out, [ap = a.payload(), op = out.payload(), factor] {
            if (op->grad.empty() || !ap->requires_grad) return;
            auto& ga = detail::acc(ap);
            for (std::size_t i = 0; i < op->grad.size(); ++i) ga[i] += factor * op->grad[i];
        });
    }
    return out;
}

inline Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (const double v : a.data()) total += v;
    Tensor out = Tensor::scalar(total);
    if (detail::tracing({&a})) {
        detail::record_op(out, [ap = a.payload(), op = out.payload()] {
            if (op->grad.empty() || !ap->requires_grad) return;
            const double g = op->grad[0];
            auto& ga = detail::acc(ap);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        });
    }
    return out;
}

// out[i, j] = m[i, j] + v[j]
inline Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    require_rank(m, 2, "add_rowvec");
    require_rank(v, 1, "add_rowvec");
    if (m.shape()[1] != v.shape()[0]) {
        throw DimensionError("add_rowvec: width " + std::to_string(m.shape()[1]) +
                             " vs vector length " + std::to_string(v.shape()[0]));
    }
    const int rows = m.shape()[0], cols = m.shape()[1];
    Tensor out(m.shape());
    auto& o = out.data_mut();
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            o[static_cast<std::size_t>(i) * cols + j] = m(i, j) + v(j);
    if (detail::tracing({&m, &v})) {
        detail::record_op(out,
                          [mp = m.payload(), vp = v.payload(), op = out.payload(), rows, cols] {
            if (op->grad.empty()) return;
            const auto& g = op->grad;
            if (mp->requires_grad) {
                auto& gm = detail::acc(mp);
                for (std::size_t i = 0; i < g.size(); ++i) gm[i] += g[i];
            }
            if (vp->requires_grad) {
                auto& gv = detail::acc(vp);
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < cols; ++j)
                        gv[j] += g[static_cast<std::size_t>(i) * cols + j];
            }
        });
    }
    return out;
}

inline Tensor reshape(const Tensor& a, std::vector<int> new_shape) {
    Tensor out = Tensor::from_data(std::move(new_shape), a.data());
    if (out.size() != a.size()) {
        throw DimensionError("reshape: size mismatch " + shape_string(a.shape()) + " -> " +
                             shape_string(out.shape()));
    }
    if (detail::tracing({&a})) {
        detail::record_op(out, [ap = a.payload(), op = out.payload()] {
            if (op->grad.empty() || !ap->requires_grad) return;
            auto& ga = detail::acc(ap);
            for (std::size_t i = 0; i < op->grad.size(); ++i) ga[i] += op->grad[i];
        });
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    require_rank(a, 2, "transpose");
    const int rows = a.shape()[0], cols = a.shape()[1];
    Tensor out({cols, rows});
    auto& o = out.data_mut();
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            o[static_cast<std::size_t>(j) * rows + i] = a(i, j);
    if (detail::tracing({&a})) {
        detail::record_op(out, [ap = a.payload(), op = out.payload(), rows, cols] {
            if (op->grad.empty() || !ap->requires_grad) return;
            auto& ga = detail::acc(ap);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < cols; ++j)
                    ga[static_cast<std::size_t>(i) * cols + j] +=
                        op->grad[static_cast<std::size_t>(j) * rows + i];
        });
    }
    return out;
}

inline Tensor slice_rows(const Tensor& a, int r0, int r1) {
    require_rank(a, 2, "slice_rows");
    const int rows = a.shape()[0], cols = a.shape()[1];
    if (r0 < 0 || r1 > rows || r0 >= r1) {
        throw DimensionError("slice_rows: range [" + std::to_string(r0) + ", " +
                             std::to_string(r1) + ") invalid for " + std::to_string(rows) +
                             " rows");
    }
    Tensor out({r1 - r0, cols});
    auto& o = out.data_mut();
    std::copy(a.data().begin() + static_cast<std::size_t>(r0) * cols,
              a.data().begin() + static_cast<std::size_t>(r1) * cols, o.begin());
    if (detail::tracing({&a})) {
        detail::record_op(out, [ap = a.payload(), op = out.payload(), r0, cols] {
            if (op->grad.empty() || !ap->requires_grad) return;
            auto& ga = detail::acc(ap);
            const std::size_t base = static_cast<std::size_t>(r0) * cols;
            for (std::size_t i = 0; i < op->grad.size(); ++i) ga[base + i] += op->grad[i];
        });
    }
    return out;
}

inline Tensor slice_cols(const Tensor& a, int c0, int c1) {
    require_rank(a, 2, "slice_cols");
    const int rows = a.shape()[0], cols = a.shape()[1];
    if (c0 < 0 || c1 > cols || c0 >= c1) {
        throw DimensionError("slice_cols: range [" + std::to_string(c0) + ", " +
                             std::to_string(c1) + ") invalid for " + std::to_string(cols) +
                             " cols");
    }
    const int width = c1 - c0;
    Tensor out({rows, width});
    auto& o = out.data_mut();
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < width; ++j)
            o[static_cast<std::size_t>(i) * width + j] = a(i, c0 + j);
    if (detail::tracing({&a})) {
        detail::record_op(out, [ap = a.payload(), op = out.payload(), rows, cols, c0, width] {
            if (op->grad.empty() || !ap->requires_grad) return;
            auto& ga = detail::acc(ap);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < width; ++j)
                    ga[static_cast<std::size_t>(i) * cols + c0 + j] +=
                        op->grad[static_cast<std::size_t>(i) * width + j];
        });
    }
    return out;
}

inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "concat_rows");
    require_rank(b, 2, "concat_rows");
    if (a.shape()[1] != b.shape()[1]) {
        throw DimensionError("concat_rows: widths differ, " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
    Tensor out({a.shape()[0] + b.shape()[0], a.shape()[1]});
    auto& o = out.data_mut();
    std::copy(a.data().begin(), a.data().end(), o.begin());
    std::copy(b.data().begin(), b.data().end(), o.begin() + a.size());
    if (detail::tracing({&a, &b})) {
        detail::record_op(out, [ap = a.payload(), bp = b.payload(), op = out.payload()] {
            if (op->grad.empty()) return;
            const auto& g = op->grad;
            if (ap->requires_grad) {
                auto& ga = detail::acc(ap);
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
            }
            if (bp->requires_grad) {
                auto& gb = detail::acc(bp);
                const std::size_t off = ap->data.size();
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[off + i];
            }
        });
    }
    return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    const int rows = parts[0].shape()[0];
    int total = 0;
    for (const Tensor& p : parts) {
        require_rank(p, 2, "concat_cols");
        if (p.shape()[0] != rows) {
            throw DimensionError("concat_cols: row counts differ");
        }
        total += p.shape()[1];
    }
    Tensor out({rows, total});
    auto& o = out.data_mut();
    int col = 0;
    for (const Tensor& p : parts) {
        const int w = p.shape()[1];
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < w; ++j)
                o[static_cast<std::size_t>(i) * total + col + j] = p(i, j);
        col += w;
    }
    bool trace = GradTape::active() != nullptr;
    bool any_rg = false;
    for (const Tensor& p : parts) any_rg = any_rg || p.requires_grad();
    if (trace && any_rg) {
        std::vector<detail::PayloadPtr> payloads;
        std::vector<int> widths;
        for (const Tensor& p : parts) {
            payloads.push_back(p.payload());
            widths.push_back(p.shape()[1]);
        }
        detail::record_op(out, [payloads, widths, op = out.payload(), rows, total] {
            if (op->grad.empty()) return;
            const auto& g = op->grad;
            int col = 0;
            for (std::size_t k = 0; k < payloads.size(); ++k) {
                const int w = widths[k];
                if (payloads[k]->requires_grad) {
                    auto& gp = detail::acc(payloads[k]);
                    for (int i = 0; i < rows; ++i)
                        for (int j = 0; j < w; ++j)
                            gp[static_cast<std::size_t>(i) * w + j] +=
                                g[static_cast<std::size_t>(i) * total + col + j];
                }
                col += w;
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

namespace detail {

// C += A[r x k] * B[k x c], ikj order.
inline void gemm_acc(const double* a, const double* b, double* c, int r, int k, int cc) {
    for (int i = 0; i < r; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * cc;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<std::size_t>(p) * cc;
            for (int j = 0; j < cc; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A[r x k] * B^T where B is [c x k].
inline void gemm_bt_acc(const double* a, const double* b, double* c, int r, int k, int cc) {
    for (int i = 0; i < r; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * cc;
        for (int j = 0; j < cc; ++j) {
            const double* brow = b + static_cast<std::size_t>(j) * k;
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] += s;
        }
    }
}

// C += A^T * B where A is [k x r], B is [k x c].
inline void gemm_at_acc(const double* a, const double* b, double* c, int r, int k, int cc) {
    for (int p = 0; p < k; ++p) {
        const double* arow = a + static_cast<std::size_t>(p) * r;
        const double* brow = b + static_cast<std::size_t>(p) * cc;
        for (int i = 0; i < r; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + static_cast<std::size_t>(i) * cc;
            for (int j = 0; j < cc; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    if (a.shape()[1] != b.shape()[0]) {
        throw DimensionError("matmul: inner dimensions disagree, " + shape_string(a.shape()) +
                             " vs " + shape_string(b.shape()));
    }
    const int r = a.shape()[0], k = a.shape()[1], c = b.shape()[1];
    Tensor out({r, c});
    detail::gemm_acc(a.data().data(), b.data().data(), out.data_mut().data(), r, k, c);
    if (detail::tracing({&a, &b})) {
        detail::record_op(out, [ap = a.payload(), bp = b.payload(), op = out.payload(), r, k, c] {
            if (op->grad.empty()) return;
            const double* g = op->grad.data();
            if (ap->requires_grad) {
                // dA = G * B^T
                detail::gemm_bt_acc(g, bp->data.data(), detail::acc(ap).data(), r, c, k);
            }
            if (bp->requires_grad) {
                // dB = A^T * G
                detail::gemm_at_acc(ap->data.data(), g, detail::acc(bp).data(), k, r, c);
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization
// ---------------------------------------------------------------------------

inline Tensor softmax(const Tensor& x, int axis) {
    const auto s = detail::axis_slices(x, axis, "softmax");
    Tensor out(x.shape());
    auto& o = out.data_mut();
    const auto& v = x.data();
    for (std::size_t ou = 0; ou < s.outer; ++ou) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = ou * s.n * s.inner + in;
            double mx = v[base];
            for (std::size_t i = 1; i < s.n; ++i)
                mx = std::max(mx, v[base + i * s.inner]);
            double total = 0.0;
            for (std::size_t i = 0; i < s.n; ++i) {
                const double e = std::exp(v[base + i * s.inner] - mx);
                o[base + i * s.inner] = e;
                total += e;
            }
            for (std::size_t i = 0; i < s.n; ++i) o[base + i * s.inner] /= total;
        }
    }
    if (detail::tracing({&x})) {
        detail::record_op(out, [xp = x.payload(), op = out.payload(), s] {
            if (op->grad.empty() || !xp->requires_grad) return;
            auto& gx = detail::acc(xp);
            const auto& g = op->grad;
            const auto& y = op->data;
            for (std::size_t ou = 0; ou < s.outer; ++ou) {
                for (std::size_t in = 0; in < s.inner; ++in) {
                    const std::size_t base = ou * s.n * s.inner + in;
                    double dot = 0.0;
                    for (std::size_t i = 0; i < s.n; ++i) {
                        const std::size_t idx = base + i * s.inner;
                        dot += g[idx] * y[idx];
                    }
                    for (std::size_t i = 0; i < s.n; ++i) {
                        const std::size_t idx = base + i * s.inner;
                        gx[idx] += y[idx] * (g[idx] - dot);
                    }
                }
            }
        });
    }
    return out;
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int axis,
                         double eps) {
    if (eps <= 0.0) throw ParameterError("layer_norm: eps must be positive");
    const auto s = detail::axis_slices(x, axis, "layer_norm");
    require_rank(gamma, 1, "layer_norm");
    require_rank(beta, 1, "layer_norm");
    if (static_cast<std::size_t>(gamma.shape()[0]) != s.n ||
        static_cast<std::size_t>(beta.shape()[0]) != s.n) {
        throw DimensionError("layer_norm: affine length must equal normalized extent " +
                             std::to_string(s.n));
    }
    Tensor out(x.shape());
    auto& o = out.data_mut();
    const auto& v = x.data();
    // Cache per-slice mean and inverse stddev for the backward pass.
    std::vector<double> means(s.outer * s.inner), inv_std(s.outer * s.inner);
    for (std::size_t ou = 0; ou < s.outer; ++ou) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = ou * s.n * s.inner + in;
            const std::size_t sl = ou * s.inner + in;
            double mean = 0.0;
            for (std::size_t i = 0; i < s.n; ++i) mean += v[base + i * s.inner];
            mean /= static_cast<double>(s.n);
            double var = 0.0;
            for (std::size_t i = 0; i < s.n; ++i) {
                const double d = v[base + i * s.inner] - mean;
                var += d * d;
            }
            var /= static_cast<double>(s.n);
            const double istd = 1.0 / std::sqrt(var + eps);
            means[sl] = mean;
            inv_std[sl] = istd;
            for (std::size_t i = 0; i < s.n; ++i) {
                const double xhat = (v[base + i * s.inner] - mean) * istd;
                o[base + i * s.inner] = gamma(static_cast<int>(i)) * xhat +
                                        beta(static_cast<int>(i));
            }
        }
    }
    if (detail::tracing({&x, &gamma, &beta})) {
        detail::record_op(out, [xp = x.payload(), gp = gamma.payload(), bp = beta.payload(),
                                op = out.payload(), s, means, inv_std] {
            if (op->grad.empty()) return;
            const auto& g = op->grad;
            const auto& v = xp->data;
            const double n = static_cast<double>(s.n);
            for (std::size_t ou = 0; ou < s.outer; ++ou) {
                for (std::size_t in = 0; in < s.inner; ++in) {
                    const std::size_t base = ou * s.n * s.inner + in;
                    const std::size_t sl = ou * s.inner + in;
                    const double mean = means[sl], istd = inv_std[sl];
                    if (xp->requires_grad) {
                        auto& gx = detail::acc(xp);
                        double sum_dg = 0.0, sum_dg_xhat = 0.0;
                        for (std::size_t i = 0; i < s.n; ++i) {
                            const std::size_t idx = base + i * s.inner;
                            const double xhat = (v[idx] - mean) * istd;
                            const double dg = g[idx] * gp->data[i];
                            sum_dg += dg;
                            sum_dg_xhat += dg * xhat;
                        }
                        for (std::size_t i = 0; i < s.n; ++i) {
                            const std::size_t idx = base + i * s.inner;
                            const double xhat = (v[idx] - mean) * istd;
                            const double dg = g[idx] * gp->data[i];
                            gx[idx] += istd * (dg - sum_dg / n - xhat * sum_dg_xhat / n);
                        }
                    }
                    if (gp->requires_grad) {
                        auto& gg = detail::acc(gp);
                        for (std::size_t i = 0; i < s.n; ++i) {
                            const std::size_t idx = base + i * s.inner;
                            gg[i] += g[idx] * (v[idx] - mean) * istd;
                        }
                    }
                    if (bp->requires_grad) {
                        auto& gb = detail::acc(bp);
                        for (std::size_t i = 0; i < s.n; ++i) gb[i] += g[base + i * s.inner];
                    }
                }
            }
        });
    }
    return out;
}

namespace detail {

inline double gauss_cdf(double x) { return 0.5 * (1.0 + std::erf(x * 0.7071067811865475244)); }
inline double gauss_pdf(double x) {
    return 0.3989422804014326779 * std::exp(-0.5 * x * x);
}

}  // namespace detail

// x * Phi(x) with the exact Gaussian CDF.
inline Tensor gelu(const Tensor& x) {
    Tensor out(x.shape());
    auto& o = out.data_mut();
    for (std::size_t i = 0; i < x.size(); ++i) o[i] = x.data()[i] * detail::gauss_cdf(x.data()[i]);
    if (detail::tracing({&x})) {
        detail::record_op(out, [xp = x.payload(), op = out.payload()] {
            if (op->grad.empty() || !xp->requires_grad) return;
            auto& gx = detail::acc(xp);
            for (std::size_t i = 0; i < op->grad.size(); ++i) {
                const double v = xp->data[i];
                gx[i] += op->grad[i] * (detail::gauss_cdf(v) + v * detail::gauss_pdf(v));
            }
        });
    }
    return out;
}

inline Tensor relu(const Tensor& x) {
    Tensor out(x.shape());
    auto& o = out.data_mut();
    for (std::size_t i = 0; i < x.size(); ++i) o[i] = std::max(0.0, x.data()[i]);
    if (detail::tracing({&x})) {
        detail::record_op(out, [xp = x.payload(), op = out.payload()] {
            if (op->grad.empty() || !xp->requires_grad) return;
            auto& gx = detail::acc(xp);
            for (std::size_t i = 0; i < op->grad.size(); ++i)
                if (xp->data[i] > 0.0) gx[i] += op->grad[i];
        });
    }
    return out;
}

// Per-channel mean over the h x w grid: [h x w x c] -> [c].
inline Tensor global_avg_pool(const Tensor& m) {
    require_rank(m, 3, "global_avg_pool");
    const int h = m.shape()[0], w = m.shape()[1], c = m.shape()[2];
    const double cells = static_cast<double>(h) * w;
    if (cells == 0.0) throw DimensionError("global_avg_pool: empty grid");
    Tensor out({c});
    auto& o = out.data_mut();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch) o[ch] += m(y, x, ch);
    for (int ch = 0; ch < c; ++ch) o[ch] /= cells;
    if (detail::tracing({&m})) {
        detail::record_op(out, [mp = m.payload(), op = out.payload(), h, w, c, cells] {
            if (op->grad.empty() || !mp->requires_grad) return;
            auto& gm = detail::acc(mp);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    for (int ch = 0; ch < c; ++ch)
                        gm[(static_cast<std::size_t>(y) * w + x) * c + ch] +=
                            op->grad[ch] / cells;
        });
    }
    return out;
}

// Cross-correlation with zero padding: x[h x w x cin], k[kh x kw x cin x cout].
inline Tensor conv2d(const Tensor& x, const Tensor& kernel, int padding) {
    require_rank(x, 3, "conv2d");
    require_rank(kernel, 4, "conv2d");
    if (padding < 0) throw ParameterError("conv2d: padding must be non-negative");
    const int h = x.shape()[0], w = x.shape()[1], cin = x.shape()[2];
    const int kh = kernel.shape()[0], kw = kernel.shape()[1];
    if (kernel.shape()[2] != cin) {
        throw DimensionError("conv2d: kernel input channels " +
                             std::to_string(kernel.shape()[2]) + " vs image channels " +
                             std::to_string(cin));
    }
    const int cout = kernel.shape()[3];
    const int oh = h + 2 * padding - kh + 1;
    const int ow = w + 2 * padding - kw + 1;
    if (oh <= 0 || ow <= 0) {
        throw DimensionError("conv2d: kernel " + shape_string(kernel.shape()) +
                             " larger than padded input " + shape_string(x.shape()));
    }
    Tensor out({oh, ow, cout});
    auto& o = out.data_mut();
    const auto& xv = x.data();
    const auto& kv = kernel.data();
    for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
            double* orow = o.data() + (static_cast<std::size_t>(oy) * ow + ox) * cout;
            for (int ky = 0; ky < kh; ++ky) {
                const int iy = oy + ky - padding;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < kw; ++kx) {
                    const int ix = ox + kx - padding;
                    if (ix < 0 || ix >= w) continue;
                    const double* xpix = xv.data() + (static_cast<std::size_t>(iy) * w + ix) * cin;
                    const double* kslab =
                        kv.data() + (static_cast<std::size_t>(ky) * kw + kx) * cin * cout;
                    for (int ci = 0; ci < cin; ++ci) {
                        const double xval = xpix[ci];
                        if (xval == 0.0) continue;
                        const double* krow = kslab + static_cast<std::size_t>(ci) * cout;
                        for (int co = 0; co < cout; ++co) orow[co] += xval * krow[co];
                    }
                }
            }
        }
    }
    if (detail::tracing({&x, &kernel})) {
        detail::record_op(out, [xp = x.payload(), kp = kernel.payload(), op = out.payload(), h, w,
                                cin, kh, kw, cout, oh, ow, padding] {
            if (op->grad.empty()) return;
            const auto& g = op->grad;
            double* gx = xp->requires_grad ? detail::acc(xp).data() : nullptr;
            double* gk = kp->requires_grad ? detail::acc(kp).data() : nullptr;
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    const double* grow = g.data() + (static_cast<std::size_t>(oy) * ow + ox) * cout;
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy + ky - padding;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ox + kx - padding;
                            if (ix < 0 || ix >= w) continue;
                            const std::size_t xoff = (static_cast<std::size_t>(iy) * w + ix) * cin;
                            const std::size_t koff =
                                (static_cast<std::size_t>(ky) * kw + kx) * cin * cout;
                            for (int ci = 0; ci < cin; ++ci) {
                                double gxi = 0.0;
                                const double xval = xp->data[xoff + ci];
                                const std::size_t kbase = koff + static_cast<std::size_t>(ci) * cout;
                                for (int co = 0; co < cout; ++co) {
                                    const double gv = grow[co];
                                    gxi += gv * kp->data[kbase + co];
                                    if (gk) gk[kbase + co] += gv * xval;
                                }
                                if (gx) gx[xoff + ci] += gxi;
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

// -ln softmax(logits)[target] for a single logit vector.
inline Tensor cross_entropy_logits(const Tensor& logits, int target) {
    require_rank(logits, 1, "cross_entropy_logits");
    const int c = logits.shape()[0];
    if (target < 0 || target >= c) {
        throw ParameterError("cross_entropy_logits: class " + std::to_string(target) +
                             " out of range [0, " + std::to_string(c) + ")");
    }
    const auto& v = logits.data();
    double mx = v[0];
    for (int i = 1; i < c; ++i) mx = std::max(mx, v[i]);
    double total = 0.0;
    for (int i = 0; i < c; ++i) total += std::exp(v[i] - mx);
    const double lse = mx + std::log(total);
    Tensor out = Tensor::scalar(lse - v[target]);
    if (detail::tracing({&logits})) {
        detail::record_op(out, [lp = logits.payload(), op = out.payload(), c, target, mx, total] {
            if (op->grad.empty() || !lp->requires_grad) return;
            const double g = op->grad[0];
            auto& gl = detail::acc(lp);
            for (int i = 0; i < c; ++i) {
                const double p = std::exp(lp->data[i] - mx) / total;
                gl[i] += g * (p - (i == target ? 1.0 : 0.0));
            }
        });
    }
    return out;
}

// Mean over rows of -ln softmax(row)[target[row]]. Used by the pixel
// clustering loss where each row is one pixel's channel response.
inline Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets) {
    require_rank(logits, 2, "cross_entropy_rows");
    const int rows = logits.shape()[0], c = logits.shape()[1];
    if (static_cast<int>(targets.size()) != rows) {
        throw DimensionError("cross_entropy_rows: " + std::to_string(targets.size()) +
                             " targets for " + std::to_string(rows) + " rows");
    }
    const auto& v = logits.data();
    double loss = 0.0;
    for (int i = 0; i < rows; ++i) {
        const int t = targets[i];
        if (t < 0 || t >= c) {
            throw ParameterError("cross_entropy_rows: target out of range at row " +
                                 std::to_string(i));
        }
        const double* row = v.data() + static_cast<std::size_t>(i) * c;
        double mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double total = 0.0;
        for (int j = 0; j < c; ++j) total += std::exp(row[j] - mx);
        loss += mx + std::log(total) - row[t];
    }
    Tensor out = Tensor::scalar(loss / rows);
    if (detail::tracing({&logits})) {
        detail::record_op(out, [lp = logits.payload(), op = out.payload(), rows, c, targets] {
            if (op->grad.empty() || !lp->requires_grad) return;
            const double g = op->grad[0] / rows;
            auto& gl = detail::acc(lp);
            for (int i = 0; i < rows; ++i) {
                const double* row = lp->data.data() + static_cast<std::size_t>(i) * c;
                double mx = row[0];
                for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
                double total = 0.0;
                for (int j = 0; j < c; ++j) total += std::exp(row[j] - mx);
                double* grow = gl.data() + static_cast<std::size_t>(i) * c;
                for (int j = 0; j < c; ++j) {
                    const double p = std::exp(row[j] - mx) / total;
                    grow[j] += g * (p - (j == targets[i] ? 1.0 : 0.0));
                }
            }
        });
    }
    return out;
}

// Spatial crop of an [h x w x c] tensor.
inline Tensor crop2d(const Tensor& x, int top, int left, int out_h, int out_w) {
    require_rank(x, 3, "crop2d");
    const int h = x.shape()[0], w = x.shape()[1], c = x.shape()[2];
    if (top < 0 || left < 0 || out_h < 1 || out_w < 1 || top + out_h > h || left + out_w > w) {
        throw DimensionError("crop2d: window outside " + shape_string(x.shape()));
    }
    Tensor out({out_h, out_w, c});
    auto& o = out.data_mut();
    for (int y = 0; y < out_h; ++y)
        for (int xx = 0; xx < out_w; ++xx)
            for (int ch = 0; ch < c; ++ch)
                o[(static_cast<std::size_t>(y) * out_w + xx) * c + ch] =
                    x(y + top, xx + left, ch);
    if (detail::tracing({&x})) {
        detail::record_op(out, [xp = x.payload(), op = out.payload(), top, left, out_h, out_w, w,
                                c] {
            if (op->grad.empty() || !xp->requires_grad) return;
            auto& gx = detail::acc(xp);
            for (int y = 0; y < out_h; ++y)
                for (int xx = 0; xx < out_w; ++xx)
                    for (int ch = 0; ch < c; ++ch)
                        gx[(static_cast<std::size_t>(y + top) * w + (xx + left)) * c + ch] +=
                            op->grad[(static_cast<std::size_t>(y) * out_w + xx) * c + ch];
        });
    }
    return out;
}

// Per-channel standardization over the spatial grid: [h x w x q] -> same
// shape, each channel zero mean / unit variance across pixels.
inline Tensor channel_standardize(const Tensor& x, double eps = 1e-5) {
    if (eps <= 0.0) throw ParameterError("channel_standardize: eps must be positive");
    require_rank(x, 3, "channel_standardize");
    const int h = x.shape()[0], w = x.shape()[1], q = x.shape()[2];
    const std::size_t pixels = static_cast<std::size_t>(h) * w;
    Tensor out(x.shape());
    auto& o = out.data_mut();
    const auto& v = x.data();
    std::vector<double> means(q, 0.0), inv_std(q, 0.0);
    for (std::size_t p = 0; p < pixels; ++p)
        for (int ch = 0; ch < q; ++ch) means[ch] += v[p * q + ch];
    for (int ch = 0; ch < q; ++ch) means[ch] /= static_cast<double>(pixels);
    for (std::size_t p = 0; p < pixels; ++p)
        for (int ch = 0; ch < q; ++ch) {
            const double d = v[p * q + ch] - means[ch];
            inv_std[ch] += d * d;
        }
    for (int ch = 0; ch < q; ++ch)
        inv_std[ch] = 1.0 / std::sqrt(inv_std[ch] / static_cast<double>(pixels) + eps);
    for (std::size_t p = 0; p < pixels; ++p)
        for (int ch = 0; ch < q; ++ch)
            o[p * q + ch] = (v[p * q + ch] - means[ch]) * inv_std[ch];
    if (detail::tracing({&x})) {
        detail::record_op(out, [xp = x.payload(), op = out.payload(), pixels, q, means, inv_std] {
            if (op->grad.empty() || !xp->requires_grad) return;
            auto& gx = detail::acc(xp);
            const auto& g = op->grad;
            const double n = static_cast<double>(pixels);
            for (int ch = 0; ch < q; ++ch) {
                double sum_g = 0.0, sum_g_xhat = 0.0;
                for (std::size_t p = 0; p < pixels; ++p) {
                    const std::size_t idx = p * q + ch;
                    sum_g += g[idx];
                    sum_g_xhat += g[idx] * op->data[idx];
                }
                for (std::size_t p = 0; p < pixels; ++p) {
                    const std::size_t idx = p * q + ch;
                    gx[idx] += inv_std[ch] *
                               (g[idx] - sum_g / n - op->data[idx] * sum_g_xhat / n);
                }
            }
        });
    }
    return out;
}

}  // namespace molt
