#pragma once

#include <cstddef>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "molt/error.hpp"

namespace molt {

namespace detail {

struct TensorPayload {
    std::vector<int> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until the first accumulation
    bool requires_grad = false;
};

}  // namespace detail

inline std::string shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// Dense row-major tensor of doubles. A Tensor is a cheap value handle onto a
// shared payload: copies alias the same storage. Payloads are never written
// after construction except for gradient accumulation and the optimizer's
// explicit update step, so concurrent reads are safe.
class Tensor {
 public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, double fill = 0.0, bool requires_grad = false) {
        const std::size_t n = checked_size(shape);
        p_ = std::make_shared<detail::TensorPayload>();
        p_->shape = std::move(shape);
        p_->data.assign(n, fill);
        p_->requires_grad = requires_grad;
    }

    static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                            bool requires_grad = false) {
        const std::size_t n = checked_size(shape);
        if (n != data.size()) {
            throw DimensionError("tensor data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_string(shape));
        }
        Tensor t;
        t.p_ = std::make_shared<detail::TensorPayload>();
        t.p_->shape = std::move(shape);
        t.p_->data = std::move(data);
        t.p_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(double value) { return from_data({1}, {value}); }

    bool defined() const { return static_cast<bool>(p_); }

    const std::vector<int>& shape() const { return p_->shape; }
    int rank() const { return static_cast<int>(p_->shape.size()); }

    int extent(int axis) const {
        if (axis < 0 || axis >= rank()) {
            throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                                 shape_string(p_->shape));
        }
        return p_->shape[axis];
    }

    std::size_t size() const { return p_->data.size(); }

    const std::vector<double>& data() const { return p_->data; }

    // Mutable access to the raw values. Reserved for construction loops and
    // the optimizer's update step; everything else builds new tensors.
    std::vector<double>& data_mut() { return p_->data; }

    bool requires_grad() const { return p_->requires_grad; }
    Tensor& set_requires_grad(bool flag) {
        p_->requires_grad = flag;
        return *this;
    }

    bool has_grad() const { return !p_->grad.empty(); }

    const std::vector<double>& grad() const {
        if (p_->grad.empty()) {
            throw ContractError("gradient requested but not populated; run backward first");
        }
        return p_->grad;
    }

    // Grad buffer, zero-initialized on first use.
    std::vector<double>& grad_buffer() {
        if (p_->grad.empty()) p_->grad.assign(p_->data.size(), 0.0);
        return p_->grad;
    }

    void clear_grad() { p_->grad.clear(); }

    // Unchecked row-major element access.
    double operator()(int i) const { return p_->data[static_cast<std::size_t>(i)]; }
    double operator()(int i, int j) const {
        return p_->data[static_cast<std::size_t>(i) * p_->shape[1] + j];
    }
    double operator()(int i, int j, int k) const {
        return p_->data[(static_cast<std::size_t>(i) * p_->shape[1] + j) * p_->shape[2] + k];
    }
    double& at(int i) { return p_->data[static_cast<std::size_t>(i)]; }
    double& at(int i, int j) {
        return p_->data[static_cast<std::size_t>(i) * p_->shape[1] + j];
    }
    double& at(int i, int j, int k) {
        return p_->data[(static_cast<std::size_t>(i) * p_->shape[1] + j) * p_->shape[2] + k];
    }

    // Deep copy with fresh payload (no grad, same requires_grad flag).
    Tensor clone() const {
        return from_data(p_->shape, p_->data, p_->requires_grad);
    }

    std::shared_ptr<detail::TensorPayload> payload() const { return p_; }

 private:
    static std::size_t checked_size(const std::vector<int>& shape) {
        if (shape.empty()) throw ParameterError("tensor shape must have at least one extent");
        std::size_t n = 1;
        for (const int e : shape) {
            if (e <= 0) {
                throw ParameterError("tensor extents must be positive, got " +
                                     shape_string(shape));
            }
            n *= static_cast<std::size_t>(e);
        }
        return n;
    }

    std::shared_ptr<detail::TensorPayload> p_;
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!same_shape(a, b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                             " vs " + shape_string(b.shape()));
    }
}

inline void require_rank(const Tensor& t, int rank, const char* op) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                             ", got " + shape_string(t.shape()));
    }
}

}  // namespace molt
