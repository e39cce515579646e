#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "advprop/cost_ledger.hpp"
#include "advprop/layers.hpp"
#include "advprop/rng.hpp"
#include "advprop/tensor.hpp"

namespace advprop {

struct AttackConfig {
    double epsilon = 1.0 / 255.0;  // l-inf radius in [0,1] input units
    int steps = 1;                 // K
    bool random_init = true;
    bool targeted = false;
    StatsMode stats_mode = StatsMode::batch;
    double step_size = 0;     // multi-step only; 0 picks the default below
    bool clip_images = false;  // clip x+delta to [0,1] (off: only delta is clipped)

    /// K=1 uses the full radius; multi-step defaults to 2.5 eps / K.
    double alpha() const {
        if (steps == 1) return epsilon;
        return step_size > 0 ? step_size : epsilon * 2.5 / steps;
    }

    void validate() const {
        if (epsilon <= 0) throw ConfigError("attack.epsilon must be > 0");
        if (steps < 1) throw ConfigError("attack.steps must be >= 1");
        if (step_size < 0) throw ConfigError("attack.step_size must be >= 0");
    }
};

/// l-inf perturbation; every element stays in [-eps, eps] after every step.
template <class Real>
struct PerturbationBatch {
    Tensor<Real> delta;
};

template <class Real>
PerturbationBatch<Real> sample_init_noise(const Shape& shape, Real eps, uint64_t seed) {
    if (eps <= Real(0)) throw ConfigError("noise radius must be > 0");
    return {Tensor<Real>::uniform(shape, -eps, eps, seed)};
}

template <class Real>
PerturbationBatch<Real> signed_step(const std::vector<Real>& g, const PerturbationBatch<Real>& p,
                                    Real step, Real eps) {
    if (g.size() != p.delta.size())
        throw GraphError(concat("gradient size ", g.size(), " does not match perturbation ", p.delta.size()));
    if (!all_finite(g)) throw GraphError("non-finite attack gradient");
    PerturbationBatch<Real> out{Tensor<Real>(p.delta.shape)};
    for (std::size_t i = 0; i < g.size(); ++i) {
        Real s = g[i] > Real(0) ? Real(1) : (g[i] < Real(0) ? Real(-1) : Real(0));
        Real v = p.delta.data[i] + step * s;
        out.delta.data[i] = std::min(eps, std::max(-eps, v));
    }
    return out;
}

/// delta' = clip(delta + eps * sign(g), -eps, eps), with sign(0) = 0.
template <class Real>
PerturbationBatch<Real> fgsm_step(const std::vector<Real>& g, const PerturbationBatch<Real>& p, Real eps) {
    return signed_step(g, p, eps, eps);
}

/// x_adv = x + delta with the l-inf bound enforced exactly on the stored
/// values: rounding in x + delta can overshoot the box by an ulp, so nudge
/// back until x_adv - x evaluates within [-eps, eps].
template <class Real>
Tensor<Real> apply_perturbation(const Tensor<Real>& x, const PerturbationBatch<Real>& p, Real eps,
                                bool clip_images) {
    Tensor<Real> out(x.shape);
    for (std::size_t i = 0; i < x.size(); ++i) {
        Real v = x.data[i] + p.delta.data[i];
        if (clip_images) v = std::min(Real(1), std::max(Real(0), v));
        while (v - x.data[i] > eps) v = std::nextafter(v, -std::numeric_limits<Real>::infinity());
        while (v - x.data[i] < -eps) v = std::nextafter(v, std::numeric_limits<Real>::infinity());
        out.data[i] = v;
    }
    return out;
}

inline std::vector<int> draw_wrong_labels(const std::vector<int>& y, int classes, uint64_t seed) {
    Rng rng(seed);
    std::vector<int> t(y.size());
    for (std::size_t i = 0; i < y.size(); ++i)
        t[i] = (y[i] + 1 + static_cast<int>(rng.below(static_cast<uint64_t>(classes - 1)))) % classes;
    return t;
}

/// PGD over the Aux branch. Never updates running statistics, never writes
/// parameters. Untargeted ascends the loss on the true labels, targeted
/// descends on uniformly drawn wrong labels. Statistics shards are
/// contiguous |X|/shards slices, to mirror per-device normalization.
template <class Real>
Tensor<Real> pgd_attack(Network<Real>& net, const Tensor<Real>& x, const std::vector<int>& y,
                        const AttackConfig& cfg, int shards, uint64_t seed,
                        CostLedger* ledger = nullptr) {
    cfg.validate();
    int n = x.ndim() ? x.dim(0) : 0;
    if (n == 0) return Tensor<Real>(x.shape);
    if (shards < 1 || n % shards != 0)
        throw ConfigError(concat("attack batch of ", n, " not divisible into ", shards, " shards"));
    int per = n / shards;
    Real eps = static_cast<Real>(cfg.epsilon);
    Real step = static_cast<Real>(cfg.alpha());
    int classes = net_classes(net);
    Tensor<Real> x_adv(x.shape);
    std::size_t stride = x.size() / static_cast<std::size_t>(n);
    for (int s = 0; s < shards; ++s) {
        Tensor<Real> xs = slice_rows(x, s * per, (s + 1) * per);
        std::vector<int> ys(y.begin() + s * per, y.begin() + (s + 1) * per);
        std::vector<int> attack_labels = ys;
        if (cfg.targeted)
            attack_labels = draw_wrong_labels(ys, classes,
                                              derive_seed(seed, SeedStream::target_labels, static_cast<uint64_t>(s)));
        PerturbationBatch<Real> p{Tensor<Real>(xs.shape)};
        if (cfg.random_init)
            p = sample_init_noise<Real>(xs.shape, eps,
                                        derive_seed(seed, SeedStream::attack_noise, static_cast<uint64_t>(s)));
        for (int it = 0; it < cfg.steps; ++it) {
            Tensor<Real> x_try = apply_perturbation(xs, p, eps, cfg.clip_images);
            x_try.requires_grad = true;
            auto fp = net.forward(x_try, attack_labels, BnBranch::aux, cfg.stats_mode, false);
            fp.graph.backward(std::vector<int>{});
            const auto& g = fp.graph.grad(fp.input);
            p = signed_step(g, p, cfg.targeted ? -step : step, eps);
            if (ledger) ledger->record_pass(PassKind::attack_noise, per);
        }
        Tensor<Real> out = apply_perturbation(xs, p, eps, cfg.clip_images);
        std::copy(out.data.begin(), out.data.end(),
                  x_adv.data.begin() + static_cast<long>(s) * per * static_cast<long>(stride));
    }
    return x_adv;
}

template <class Real>
struct FusedAttackResult {
    Tensor<Real> x_adv;
    GradBindings<Real> g_noise;  // parameter gradients of the noise pass
    double loss = 0;
    double accuracy = 0;
};

/// The one-pass attack of the fast trainer: forward x+delta through Aux with
/// batch statistics, one backward yields both the input gradient (for the
/// FGSM step) and the parameter gradients (reused as the noise-pass training
/// signal). Costs one pass-unit per example instead of two. Updates Aux
/// running statistics, as any training pass does.
template <class Real>
FusedAttackResult<Real> attack_with_grad_reuse(Network<Real>& net, const Tensor<Real>& x,
                                               const std::vector<int>& y, const AttackConfig& cfg,
                                               int shards, uint64_t seed,
                                               CostLedger* ledger = nullptr) {
    cfg.validate();
    if (cfg.targeted) throw ConfigError("gradient reuse requires an untargeted attack");
    if (cfg.steps != 1) throw ConfigError("gradient reuse requires a one-step attack");
    if (cfg.stats_mode != StatsMode::batch)
        throw ConfigError("gradient reuse requires batch-statistics attacks");
    int n = x.ndim() ? x.dim(0) : 0;
    FusedAttackResult<Real> res;
    res.x_adv = Tensor<Real>(x.shape);
    auto registry = net.params();
    res.g_noise.init(registry.size());
    if (n == 0) return res;
    if (shards < 1 || n % shards != 0)
        throw ConfigError(concat("attack batch of ", n, " not divisible into ", shards, " shards"));
    int per = n / shards;
    Real eps = static_cast<Real>(cfg.epsilon);
    std::size_t stride = x.size() / static_cast<std::size_t>(n);
    Real inv_shards = Real(1) / static_cast<Real>(shards);
    for (int s = 0; s < shards; ++s) {
        Tensor<Real> xs = slice_rows(x, s * per, (s + 1) * per);
        std::vector<int> ys(y.begin() + s * per, y.begin() + (s + 1) * per);
        PerturbationBatch<Real> p{Tensor<Real>(xs.shape)};
        if (cfg.random_init)
            p = sample_init_noise<Real>(xs.shape, eps,
                                        derive_seed(seed, SeedStream::attack_noise, static_cast<uint64_t>(s)));
        Tensor<Real> x_noise = apply_perturbation(xs, p, eps, cfg.clip_images);
        x_noise.requires_grad = true;
        auto fp = net.forward(x_noise, ys, BnBranch::aux, StatsMode::batch, true);
        fp.graph.backward(std::vector<int>{});
        for (std::size_t i = 0; i < registry.size(); ++i)
            if (fp.param_leaf[i] >= 0) res.g_noise.accumulate(i, fp.graph.grad(fp.param_leaf[i]), inv_shards);
        p = fgsm_step(fp.graph.grad(fp.input), p, eps);
        Tensor<Real> out = apply_perturbation(xs, p, eps, cfg.clip_images);
        std::copy(out.data.begin(), out.data.end(),
                  res.x_adv.data.begin() + static_cast<long>(s) * per * static_cast<long>(stride));
        res.loss += fp.graph.value(fp.loss)[0] * inv_shards;
        res.accuracy += top1_accuracy(fp.graph.value(fp.logits), fp.graph.node(fp.logits).shape, ys) * inv_shards;
        if (ledger) ledger->record_pass(PassKind::attack_noise, per);
    }
    return res;
}

}  // namespace advprop
