#pragma once

// Shared test utilities: finite-difference oracles, bitwise comparison,
// tiny fixture networks.

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "advprop/data.hpp"
#include "advprop/layers.hpp"
#include "advprop/trainers.hpp"

namespace testutil {

using namespace advprop;

inline double rel_inf_error(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num = std::max(num, std::abs(a[i] - b[i]));
        den = std::max(den, std::abs(b[i]));
    }
    return num / std::max(den, 1e-8);
}

template <class T>
bool bitwise_equal(const std::vector<T>& a, const std::vector<T>& b) {
    if (a.size() != b.size()) return false;
    return a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

/// Central finite differences of a scalar function w.r.t. the values behind
/// `x`. The function must re-evaluate from scratch on every call.
inline std::vector<double> central_diff(std::vector<double>& x, const std::function<double()>& f,
                                        double h = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double keep = x[i];
        x[i] = keep + h;
        double up = f();
        x[i] = keep - h;
        double down = f();
        x[i] = keep;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

/// Values away from the relu/sign kinks so finite differences stay clean.
inline Tensor<double> kink_free_uniform(const Shape& shape, uint64_t seed) {
    Tensor<double> t = Tensor<double>::uniform(shape, -1.0, 1.0, seed);
    for (auto& v : t.data) v += v >= 0 ? 0.05 : -0.05;
    return t;
}

inline CnnSpec tiny_spec(int classes = 3) {
    CnnSpec spec;
    spec.in_channels = 1;
    spec.image_hw = 8;
    spec.classes = classes;
    spec.conv_channels = {3, 4};
    spec.pool = 2;
    return spec;
}

template <class Real>
Network<Real> tiny_net(uint64_t seed, int classes = 3) {
    return build_cnn<Real>(tiny_spec(classes), seed);
}

template <class Real>
Batch<Real> tiny_batch(int n, int classes, uint64_t seed, int hw = 8) {
    Batch<Real> b;
    b.x = Tensor<Real>::uniform({n, 1, hw, hw}, Real(0), Real(1), seed);
    Rng rng(seed ^ 0xbeef);
    b.y.resize(static_cast<std::size_t>(n));
    for (auto& y : b.y) y = static_cast<int>(rng.below(static_cast<uint64_t>(classes)));
    return b;
}

/// A few epochs of vanilla training on separable blobs; returns the dataset
/// used so callers can evaluate attacks against it.
template <class Real>
Dataset<Real> quick_train(Network<Real>& net, int n, int classes, int epochs, uint64_t seed) {
    Dataset<Real> ds = synth_blobs<Real>(n, classes, {1, 8, 8}, 0.8, seed);
    TrainConfig cfg;
    cfg.mode = TrainMode::vanilla;
    cfg.batch_size = 32;
    cfg.shards = 1;
    cfg.shuffle_bn = false;
    cfg.sync_update_speed = false;
    cfg.lr = 0.05;
    cfg.seed = seed;
    SgdMomentum<Real> opt;
    opt.lr = static_cast<Real>(cfg.lr);
    opt.momentum = Real(0.9);
    opt.weight_decay = Real(1e-4);
    CostLedger ledger;
    for (int e = 0; e < epochs; ++e) {
        auto batches = make_batches(ds.size(), cfg.batch_size, 1, derive_seed(seed, SeedStream::epoch_order,
                                                                              static_cast<uint64_t>(e)));
        for (const auto& idx : batches) {
            Batch<Real> b = fetch_batch(ds, idx);
            vanilla_step(net, b, opt, cfg, ledger, cfg.lr);
        }
    }
    return ds;
}

}  // namespace testutil
