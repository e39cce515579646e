#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "advprop/common.hpp"
#include "advprop/rng.hpp"

namespace advprop {

/// Dense n-dimensional array with an optional gradient slot. Real is float
/// for training, double for verification runs.
template <class Real>
struct Tensor {
    Shape shape;
    std::vector<Real> data;
    bool requires_grad = false;
    std::vector<Real> grad;  // empty, or same length as data

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(numel(shape), Real(0)) {}
    Tensor(Shape s, std::vector<Real> values) : shape(std::move(s)), data(std::move(values)) {
        if (data.size() != numel(shape))
            throw GraphError(concat("tensor data length ", data.size(), " does not match shape ", shape_str(shape)));
    }

    std::size_t size() const { return data.size(); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
    }
    void zero_grad() {
        std::fill(grad.begin(), grad.end(), Real(0));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

    static Tensor full(Shape s, Real v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor uniform(Shape s, Real lo, Real hi, uint64_t seed) {
        Tensor t(std::move(s));
        Rng rng(seed);
        for (auto& v : t.data) v = static_cast<Real>(rng.uniform(lo, hi));
        return t;
    }

    static Tensor normal(Shape s, Real mean, Real stddev, uint64_t seed) {
        Tensor t(std::move(s));
        Rng rng(seed);
        for (auto& v : t.data) v = mean + stddev * static_cast<Real>(rng.normal());
        return t;
    }

    /// Identity matrix, shape [n,n].
    static Tensor eye(int n) {
        Tensor t(Shape{n, n});
        for (int i = 0; i < n; ++i) t.data[static_cast<std::size_t>(i) * n + i] = Real(1);
        return t;
    }
};

template <class Real>
bool all_finite(const std::vector<Real>& v) {
    for (Real x : v)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

/// Rows along axis 0, in the order given by `rows`.
template <class Real>
Tensor<Real> gather_rows(const Tensor<Real>& t, const std::vector<int>& rows) {
    if (t.shape.empty()) throw GraphError("gather_rows on scalar tensor");
    Shape out_shape = t.shape;
    out_shape[0] = static_cast<int>(rows.size());
    std::size_t stride = t.size() / static_cast<std::size_t>(t.shape[0]);
    Tensor<Real> out(out_shape);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Real* src = t.data.data() + static_cast<std::size_t>(rows[i]) * stride;
        std::copy(src, src + stride, out.data.data() + i * stride);
    }
    return out;
}

/// Contiguous row slice [begin, end) along axis 0.
template <class Real>
Tensor<Real> slice_rows(const Tensor<Real>& t, int begin, int end) {
    Shape out_shape = t.shape;
    out_shape[0] = end - begin;
    std::size_t stride = t.size() / static_cast<std::size_t>(t.shape[0]);
    Tensor<Real> out(out_shape);
    std::copy(t.data.begin() + begin * static_cast<long>(stride),
              t.data.begin() + end * static_cast<long>(stride), out.data.begin());
    return out;
}

}  // namespace advprop
