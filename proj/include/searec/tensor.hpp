#pragma once

#include <cstddef>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "searec/common.hpp"

namespace searec {

// Dense row-major tensor. Rank 0 = scalar (one value), rank 1 = vector,
// rank 2 = matrix. Gradient storage is lazy and sized like values.
template <typename Real>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<Real> values;
    std::vector<Real> grad;
    bool requires_grad = false;
    bool is_param = false;

    std::size_t numel() const {
        std::size_t n = 1;
        for (std::size_t s : shape) n *= s;
        return n;
    }
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    Real& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
    Real at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
    Real scalar() const { return values[0]; }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), Real(0));
    }
    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), Real(0));
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(";
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ")";
        return os.str();
    }
};

template <typename Real>
using TensorPtr = std::shared_ptr<Tensor<Real>>;

template <typename Real>
TensorPtr<Real> make_tensor(std::vector<std::size_t> shape, bool requires_grad = false) {
    auto t = std::make_shared<Tensor<Real>>();
    t->shape = std::move(shape);
    t->values.assign(t->numel(), Real(0));
    t->requires_grad = requires_grad;
    return t;
}

template <typename Real>
TensorPtr<Real> make_scalar(Real v, bool requires_grad = false) {
    auto t = make_tensor<Real>({}, requires_grad);
    t->values[0] = v;
    return t;
}

template <typename Real>
TensorPtr<Real> make_vector(std::vector<Real> v, bool requires_grad = false) {
    auto t = std::make_shared<Tensor<Real>>();
    t->shape = {v.size()};
    t->values = std::move(v);
    t->requires_grad = requires_grad;
    return t;
}

template <typename Real>
TensorPtr<Real> make_matrix(std::size_t r, std::size_t c, std::vector<Real> v,
                            bool requires_grad = false) {
    if (v.size() != r * c) throw ShapeError("make_matrix: data size does not match " +
                                            std::to_string(r) + "x" + std::to_string(c));
    auto t = std::make_shared<Tensor<Real>>();
    t->shape = {r, c};
    t->values = std::move(v);
    t->requires_grad = requires_grad;
    return t;
}

}  // namespace searec
