#pragma once

#include <vector>

#include "advprop/common.hpp"
#include "advprop/tensor.hpp"

namespace advprop {

/// velocity <- mu * velocity + grad + wd * param;  param <- param - lr * velocity.
/// Rejects non-finite gradients before touching anything.
template <class Real>
void sgd_momentum_update(std::vector<Real>& param, const std::vector<Real>& grad,
                         std::vector<Real>& velocity, Real lr, Real mu, Real wd) {
    if (param.size() != grad.size())
        throw GraphError(concat("sgd update size mismatch: param ", param.size(), " vs grad ", grad.size()));
    if (velocity.size() != param.size()) velocity.assign(param.size(), Real(0));
    if (!all_finite(grad)) throw GraphError("non-finite gradient, update aborted");
    for (std::size_t i = 0; i < param.size(); ++i) {
        velocity[i] = mu * velocity[i] + grad[i] + wd * param[i];
        param[i] -= lr * velocity[i];
    }
}

/// Per-parameter velocity store, aligned with a parameter registry by index.
template <class Real>
struct SgdMomentum {
    Real lr = Real(0.1);
    Real momentum = Real(0.9);
    Real weight_decay = Real(0);
    std::vector<std::vector<Real>> velocity;

    void resize(std::size_t n_params) {
        if (velocity.size() != n_params) velocity.resize(n_params);
    }
};

}  // namespace advprop
