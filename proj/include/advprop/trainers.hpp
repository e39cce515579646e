#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "advprop/attacks.hpp"
#include "advprop/cost_ledger.hpp"
#include "advprop/layers.hpp"
#include "advprop/optim.hpp"
#include "advprop/rational.hpp"
#include "advprop/rng.hpp"

namespace advprop {

// ---------------------------------------------------------------------------
// Configuration

struct TrainConfig {
    TrainMode mode = TrainMode::fast;
    Rational p_adv{1, 5};
    double beta = 0.5;
    int base_epochs = 105;
    std::vector<int> decay_epochs = {30, 60, 90, 100};
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int batch_size = 64;  // clean sub-batch B; the total batch is B/(1-p_adv)
    int shards = 2;
    AttackConfig attack;
    bool shuffle_bn = true;
    bool rebalance = true;
    bool sync_update_speed = true;
    bool equal_budget = true;           // calibrate epochs to the vanilla budget
    bool aux_weight_decay = true;       // decay Aux affine like everything else
    bool rescale_before_combine = false;
    uint64_t seed = 1;

    /// Examples drawn per step. Fast mode widens the batch so the clean
    /// sub-batch stays at B.
    int total_batch() const {
        if (mode != TrainMode::fast || p_adv.is_zero()) return batch_size;
        long long num = static_cast<long long>(batch_size) * p_adv.den;
        long long den = p_adv.den - p_adv.num;
        if (den <= 0 || num % den != 0) return -1;
        return static_cast<int>(num / den);
    }

    int adv_per_batch() const { return total_batch() - (mode == TrainMode::fast ? batch_size : 0); }

    void validate() const {
        if (beta < 0) throw ConfigError("beta must be >= 0");
        if (base_epochs < 1) throw ConfigError("base_epochs must be >= 1");
        for (std::size_t i = 0; i < decay_epochs.size(); ++i) {
            if (decay_epochs[i] < 1) throw ConfigError("decay_epochs entries must be >= 1");
            if (i > 0 && decay_epochs[i] <= decay_epochs[i - 1])
                throw ConfigError("decay_epochs must be strictly increasing");
        }
        if (lr < 0) throw ConfigError("lr must be >= 0");
        if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0,1)");
        if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (shards < 1) throw ConfigError("shards must be >= 1");
        attack.validate();
        if (batch_size % shards != 0)
            throw ConfigError(concat("batch_size ", batch_size, " not divisible by ", shards, " shards"));
        if (batch_size / shards < 2)
            throw ConfigError("per-shard batch must have >= 2 examples for batch statistics");
        if (mode == TrainMode::fast) {
            if (p_adv.num < 0 || p_adv.num > p_adv.den) throw ConfigError("p_adv must be in [0,1]");
            if (p_adv.is_one()) throw ConfigError("p_adv=1 leaves no clean sub-batch in fast mode");
            if (attack.steps != 1) throw ConfigError("fast mode requires a one-step attack (K=1)");
            if (attack.targeted) throw ConfigError("fast mode requires an untargeted attack");
            if (attack.stats_mode != StatsMode::batch)
                throw ConfigError("fast mode requires batch-statistics attacks");
            if (total_batch() < 0)
                throw ConfigError(concat("batch_size ", batch_size, " with p_adv ", to_string(p_adv),
                                         " gives a fractional total batch"));
            int n2 = adv_per_batch();
            if (total_batch() % shards != 0 || (n2 > 0 && n2 % shards != 0))
                throw ConfigError("batch split must divide evenly across shards");
            if (n2 > 0 && n2 / shards < 2)
                throw ConfigError("adversarial sub-batch needs >= 2 examples per shard");
            if (sync_update_speed && (p_adv.is_zero() || p_adv.is_one()))
                throw ConfigError("update-speed sync needs p_adv strictly inside (0,1)");
            if (shuffle_bn && shards == 1)
                throw ConfigError("shuffle_bn with a single shard is vacuous");
        }
    }
};

// ---------------------------------------------------------------------------
// Schedule calibration

/// Nearest integer to num/den with exact halves rounded down (num, den > 0).
inline long long round_half_down(long long num, long long den) {
    return (2 * num + den - 1) / (2 * den);
}

struct Schedule {
    int effective_epochs = 0;
    std::vector<int> effective_decay;

    double lr_multiplier_at(int epoch) const {  // epoch is 0-based
        double m = 1.0;
        for (int d : effective_decay)
            if (epoch >= d) m *= 0.1;
        return m;
    }
};

/// Scales epochs and decay points by the relative per-epoch training cost
/// (a rational), rounding halves down; this is the rule that reproduces the
/// published epoch counts for every p_adv.
inline Schedule calibrate_schedule_factor(int base_epochs, const std::vector<int>& decay_epochs,
                                          Rational cost_factor) {
    if (cost_factor.num <= 0 || base_epochs < 1)
        throw ConfigError("schedule calibration needs a positive cost factor and epochs");
    Schedule s;
    s.effective_epochs =
        static_cast<int>(round_half_down(static_cast<long long>(base_epochs) * cost_factor.den, cost_factor.num));
    if (s.effective_epochs < 1)
        throw ConfigError(concat("calibrated schedule has 0 epochs (T=", base_epochs, ", factor=",
                                 to_string(cost_factor), ")"));
    int prev = 0;
    for (int d : decay_epochs) {
        int e = static_cast<int>(round_half_down(static_cast<long long>(d) * cost_factor.den, cost_factor.num));
        if (e > prev && e <= s.effective_epochs) {
            s.effective_decay.push_back(e);
            prev = e;
        }
    }
    return s;
}

inline Rational cost_factor(TrainMode mode, Rational p_adv, int k) {
    switch (mode) {
        case TrainMode::vanilla: return {1, 1};
        case TrainMode::advprop: return {static_cast<long long>(k) + 2, 1};
        case TrainMode::fast: return {p_adv.den + p_adv.num * k, p_adv.den};
    }
    throw ConfigError("unknown training mode");
}

/// Fast-mode calibration: epochs shrink by (1 + p_adv K).
inline Schedule calibrate_schedule(int base_epochs, const std::vector<int>& decay_epochs,
                                   Rational p_adv, int k) {
    if (p_adv.num < 0 || p_adv.num > p_adv.den || k < 1)
        throw ConfigError("calibrate_schedule needs p_adv in [0,1] and K >= 1");
    return calibrate_schedule_factor(base_epochs, decay_epochs, cost_factor(TrainMode::fast, p_adv, k));
}

inline Schedule schedule_for(const TrainConfig& cfg) {
    Rational f = cfg.equal_budget ? cost_factor(cfg.mode, cfg.p_adv, cfg.attack.steps) : Rational{1, 1};
    return calibrate_schedule_factor(cfg.base_epochs, cfg.decay_epochs, f);
}

// ---------------------------------------------------------------------------
// Batch handling

template <class Real>
struct Batch {
    Tensor<Real> x;
    std::vector<int> y;

    int size() const { return static_cast<int>(y.size()); }
};

template <class Real>
Batch<Real> take_rows(const Batch<Real>& b, const std::vector<int>& rows) {
    Batch<Real> out;
    out.x = gather_rows(b.x, rows);
    out.y.reserve(rows.size());
    for (int r : rows) out.y.push_back(b.y[static_cast<std::size_t>(r)]);
    return out;
}

/// Disjoint cover of the batch: |X2| = p_adv * |X|, assignment drawn from the
/// seed. p_adv of 0 or 1 passes the batch through untouched.
template <class Real>
std::pair<Batch<Real>, Batch<Real>> split_batch(const Batch<Real>& b, Rational p_adv, uint64_t seed) {
    int n = b.size();
    long long n2_num = static_cast<long long>(n) * p_adv.num;
    if (n2_num % p_adv.den != 0)
        throw ConfigError(concat("batch of ", n, " cannot be split at p_adv=", to_string(p_adv)));
    int n2 = static_cast<int>(n2_num / p_adv.den);
    if (n2 == 0) return {b, Batch<Real>{}};
    if (n2 == n) return {Batch<Real>{}, b};
    std::vector<int> perm = random_permutation(n, seed);
    std::vector<int> first(perm.begin(), perm.begin() + (n - n2));
    std::vector<int> second(perm.begin() + (n - n2), perm.end());
    return {take_rows(b, first), take_rows(b, second)};
}

/// Joint (image, label) permutation across equal shards; the recorded
/// permutation inverts exactly.
struct ShufflePermutation {
    std::vector<int> forward;  // new position i holds old element forward[i]

    std::vector<int> inverse() const {
        std::vector<int> inv(forward.size());
        for (std::size_t i = 0; i < forward.size(); ++i)
            inv[static_cast<std::size_t>(forward[i])] = static_cast<int>(i);
        return inv;
    }
};

template <class Real>
ShufflePermutation shuffle_across_shards(Batch<Real>& b, int shards, uint64_t seed) {
    if (shards < 2) throw ConfigError("shuffling across shards needs at least 2 shards");
    if (b.size() % shards != 0)
        throw ConfigError(concat("cannot shuffle ", b.size(), " examples across ", shards, " equal shards"));
    ShufflePermutation p{random_permutation(b.size(), seed)};
    b = take_rows(b, p.forward);
    return p;
}

// ---------------------------------------------------------------------------
// Gradient assembly

template <class Real>
struct GradientBundle {
    GradBindings<Real> clean, noise, adv;
};

/// g = g_clean + beta * g_noise + beta * g_adv; absent components are zero.
/// The clean component is copied untouched so that an empty adversarial
/// branch reproduces the plain clean gradient bit for bit.
template <class Real>
GradBindings<Real> combine_gradients(const GradientBundle<Real>& bundle, double beta) {
    std::size_t n = std::max({bundle.clean.g.size(), bundle.noise.g.size(), bundle.adv.g.size()});
    GradBindings<Real> out;
    out.init(n);
    Real b = static_cast<Real>(beta);
    for (std::size_t i = 0; i < n; ++i) {
        if (i < bundle.clean.g.size() && bundle.clean.present[i]) out.accumulate(i, bundle.clean.g[i], Real(1));
        if (i < bundle.noise.g.size() && bundle.noise.present[i]) out.accumulate(i, bundle.noise.g[i], b);
        if (i < bundle.adv.g.size() && bundle.adv.present[i]) out.accumulate(i, bundle.adv.g[i], b);
    }
    return out;
}

/// Restores a 1:1:1 update-speed ratio across shared / Main-norm / Aux-norm
/// parameters, inverting the 1 : (1-p_adv) : p_adv gradient exposure.
template <class Real>
void rescale_for_update_speed(GradBindings<Real>& g, const std::vector<ParamRole>& roles, Rational p_adv) {
    if (p_adv.is_zero() || p_adv.is_one())
        throw ConfigError("update-speed rescaling degenerates at p_adv of 0 or 1");
    Real main_f = static_cast<Real>(p_adv.den) / static_cast<Real>(p_adv.den - p_adv.num);
    Real aux_f = static_cast<Real>(p_adv.den) / static_cast<Real>(p_adv.num);
    for (std::size_t i = 0; i < g.g.size(); ++i) {
        if (!g.present[i]) continue;
        Real f = Real(1);
        if (roles[i] == ParamRole::main_bn) f = main_f;
        if (roles[i] == ParamRole::aux_bn) f = aux_f;
        if (f == Real(1)) continue;
        for (auto& v : g.g[i]) v *= f;
    }
}

// ---------------------------------------------------------------------------
// Passes and steps

struct PassStats {
    double loss = 0;
    double accuracy = 0;
};

/// One training pass over `shards` contiguous statistic shards. Gradients
/// come back as the mean over the pass's examples.
template <class Real>
PassStats run_training_pass(Network<Real>& net, const Batch<Real>& b, int shards, BnBranch branch,
                            StatsMode stats, bool update_running, GradBindings<Real>* out) {
    int n = b.size();
    if (n % shards != 0)
        throw ConfigError(concat("pass of ", n, " examples not divisible into ", shards, " shards"));
    int per = n / shards;
    auto registry = net.params();
    if (out) out->init(registry.size());
    PassStats st;
    Real inv_shards = Real(1) / static_cast<Real>(shards);
    for (int s = 0; s < shards; ++s) {
        Tensor<Real> xs = slice_rows(b.x, s * per, (s + 1) * per);
        std::vector<int> ys(b.y.begin() + s * per, b.y.begin() + (s + 1) * per);
        auto fp = net.forward(xs, ys, branch, stats, update_running);
        if (out) {
            fp.graph.backward(std::vector<int>{});
            for (std::size_t i = 0; i < registry.size(); ++i)
                if (fp.param_leaf[i] >= 0) out->accumulate(i, fp.graph.grad(fp.param_leaf[i]), inv_shards);
        }
        st.loss += fp.graph.value(fp.loss)[0] * inv_shards;
        st.accuracy += top1_accuracy(fp.graph.value(fp.logits), fp.graph.node(fp.logits).shape, ys) * inv_shards;
    }
    return st;
}

/// Applies one SGD step for every parameter the bundle covers. All gradients
/// are checked finite before any parameter moves, so a rejected step mutates
/// nothing.
template <class Real>
void apply_sgd(Network<Real>& net, const GradBindings<Real>& g, SgdMomentum<Real>& opt, Real lr,
               bool aux_weight_decay) {
    auto registry = net.params();
    opt.resize(registry.size());
    for (std::size_t i = 0; i < registry.size(); ++i)
        if (i < g.g.size() && g.present[i] && !all_finite(g.g[i]))
            throw GraphError(concat("non-finite gradient for '", registry[i].name, "', step aborted"));
    for (std::size_t i = 0; i < registry.size(); ++i) {
        if (i >= g.g.size() || !g.present[i]) continue;
        Real wd = opt.weight_decay;
        if (registry[i].role == ParamRole::aux_bn && !aux_weight_decay) wd = Real(0);
        sgd_momentum_update(registry[i].tensor->data, g.g[i], opt.velocity[i], lr, opt.momentum, wd);
    }
}

template <class Real>
struct StepResult {
    bool applied = false;
    std::string error;
    PassStats clean, noise, adv;
    int n_clean = 0, n_noise = 0, n_adv = 0;
    GradBindings<Real> g_combined;
};

namespace detail {

template <class Real>
struct StatsGuard {
    Network<Real>& net;
    SgdMomentum<Real>& opt;
    std::vector<std::vector<Real>> stats;
    std::vector<std::vector<Real>> velocity;
    explicit StatsGuard(Network<Real>& n, SgdMomentum<Real>& o)
        : net(n), opt(o), stats(snapshot_running_stats(n)), velocity(o.velocity) {}
    void rollback() {
        restore_running_stats(net, stats);
        opt.velocity = velocity;
    }
};

}  // namespace detail

/// One forward+backward on the Main branch and an SGD step: the 1-unit-per-
/// example baseline.
template <class Real>
StepResult<Real> vanilla_step(Network<Real>& net, const Batch<Real>& b, SgdMomentum<Real>& opt,
                              const TrainConfig& cfg, CostLedger& ledger, double lr) {
    StepResult<Real> res;
    detail::StatsGuard<Real> guard(net, opt);
    try {
        GradBindings<Real> g;
        res.clean = run_training_pass(net, b, cfg.shards, BnBranch::main, StatsMode::batch, true, &g);
        ledger.record_pass(PassKind::clean, b.size());
        res.n_clean = b.size();
        apply_sgd(net, g, opt, static_cast<Real>(lr), cfg.aux_weight_decay);
        res.g_combined = std::move(g);
        res.applied = true;
    } catch (const GraphError& e) {
        guard.rollback();
        res.error = e.what();
    } catch (const ConfigError&) {
        guard.rollback();
        throw;
    }
    return res;
}

/// Paired scheme: attack every clean image through Aux, then train the clean
/// batch on Main and the adversarial batch on Aux, summing the two losses.
/// Costs (K+2) units per example.
template <class Real>
StepResult<Real> advprop_step(Network<Real>& net, const Batch<Real>& b, SgdMomentum<Real>& opt,
                              const TrainConfig& cfg, CostLedger& ledger, double lr,
                              uint64_t step_seed) {
    StepResult<Real> res;
    detail::StatsGuard<Real> guard(net, opt);
    try {
        Tensor<Real> x_adv = pgd_attack(net, b.x, b.y, cfg.attack, cfg.shards, step_seed, &ledger);
        GradientBundle<Real> bundle;
        res.clean = run_training_pass(net, b, cfg.shards, BnBranch::main, StatsMode::batch, true, &bundle.clean);
        ledger.record_pass(PassKind::clean, b.size());
        res.n_clean = b.size();
        Batch<Real> adv{std::move(x_adv), b.y};
        res.adv = run_training_pass(net, adv, cfg.shards, BnBranch::aux, StatsMode::batch, true, &bundle.adv);
        ledger.record_pass(PassKind::adversarial, adv.size());
        res.n_adv = adv.size();
        GradBindings<Real> g = combine_gradients(bundle, 1.0);
        apply_sgd(net, g, opt, static_cast<Real>(lr), cfg.aux_weight_decay);
        res.g_combined = std::move(g);
        res.applied = true;
    } catch (const GraphError& e) {
        guard.rollback();
        res.error = e.what();
    } catch (const ConfigError&) {
        guard.rollback();
        throw;
    }
    return res;
}

/// The decoupled, gradient-reusing step: split off p_adv of the batch, run
/// the fused noise/attack pass on it, optionally shuffle the adversarial
/// examples across statistic shards, train them on Aux, train the clean rest
/// on Main, then re-balance, re-scale and take one SGD step. Costs
/// |X1| + 2|X2| units.
template <class Real>
StepResult<Real> fast_advprop_step(Network<Real>& net, const Batch<Real>& b, SgdMomentum<Real>& opt,
                                   const TrainConfig& cfg, CostLedger& ledger, double lr,
                                   int epoch, int64_t step) {
    StepResult<Real> res;
    detail::StatsGuard<Real> guard(net, opt);
    try {
        auto [b1, b2] = split_batch(b, cfg.p_adv,
                                    derive_seed(cfg.seed, SeedStream::batch_split,
                                                static_cast<uint64_t>(epoch), static_cast<uint64_t>(step)));
        GradientBundle<Real> bundle;
        if (b2.size() > 0) {
            auto fused = attack_with_grad_reuse(net, b2.x, b2.y, cfg.attack, cfg.shards,
                                                derive_seed(cfg.seed, SeedStream::attack_noise,
                                                            static_cast<uint64_t>(epoch),
                                                            static_cast<uint64_t>(step)),
                                                &ledger);
            bundle.noise = std::move(fused.g_noise);
            res.noise = {fused.loss, fused.accuracy};
            res.n_noise = b2.size();
            Batch<Real> adv{std::move(fused.x_adv), b2.y};
            if (cfg.shuffle_bn && cfg.shards > 1)
                shuffle_across_shards(adv, cfg.shards,
                                      derive_seed(cfg.seed, SeedStream::shard_shuffle,
                                                  static_cast<uint64_t>(epoch), static_cast<uint64_t>(step)));
            res.adv = run_training_pass(net, adv, cfg.shards, BnBranch::aux, StatsMode::batch, true, &bundle.adv);
            ledger.record_pass(PassKind::adversarial, adv.size());
            res.n_adv = adv.size();
        }
        if (b1.size() > 0) {
            res.clean = run_training_pass(net, b1, cfg.shards, BnBranch::main, StatsMode::batch, true, &bundle.clean);
            ledger.record_pass(PassKind::clean, b1.size());
            res.n_clean = b1.size();
        }
        double beta_eff = cfg.rebalance ? cfg.beta : 1.0;
        auto roles = net.param_roles();
        GradBindings<Real> g;
        if (cfg.rescale_before_combine && cfg.sync_update_speed) {
            rescale_for_update_speed(bundle.clean, roles, cfg.p_adv);
            rescale_for_update_speed(bundle.noise, roles, cfg.p_adv);
            rescale_for_update_speed(bundle.adv, roles, cfg.p_adv);
            g = combine_gradients(bundle, beta_eff);
        } else {
            g = combine_gradients(bundle, beta_eff);
            if (cfg.sync_update_speed) rescale_for_update_speed(g, roles, cfg.p_adv);
        }
        apply_sgd(net, g, opt, static_cast<Real>(lr), cfg.aux_weight_decay);
        res.g_combined = std::move(g);
        res.applied = true;
    } catch (const GraphError& e) {
        guard.rollback();
        res.error = e.what();
    } catch (const ConfigError&) {
        guard.rollback();
        throw;
    }
    return res;
}

/// Deployment contract: Main branch, running statistics, no writes.
template <class Real>
double evaluate(Network<Real>& net, const Tensor<Real>& images, const std::vector<int>& labels,
                int eval_batch = 256, CostLedger* ledger = nullptr) {
    int n = images.ndim() ? images.dim(0) : 0;
    if (n == 0) return 0.0;
    double hits = 0;
    for (int at = 0; at < n; at += eval_batch) {
        int end = std::min(n, at + eval_batch);
        Tensor<Real> xs = slice_rows(images, at, end);
        std::vector<int> ys(labels.begin() + at, labels.begin() + end);
        auto fp = net.forward(xs, ys, BnBranch::main, StatsMode::running, false);
        hits += top1_accuracy(fp.graph.value(fp.logits), fp.graph.node(fp.logits).shape, ys) * (end - at);
        if (ledger) ledger->record_pass(PassKind::eval, end - at);
    }
    return hits / n;
}

// ---------------------------------------------------------------------------
// Leakage diagnostic

struct EpochPassStats {
    int epoch = 0;
    double acc_clean = 0;
    double acc_adv = 0;
    bool has_clean = false;
    bool has_adv = false;
};

struct LeakageReport {
    std::vector<double> gaps;  // adversarial minus clean training accuracy, per epoch
    int longest_positive_run = 0;
    int flag_window = 0;
    bool flagged = false;
};

/// Flags the batch-statistics information leak: adversarial training
/// accuracy exceeding clean training accuracy over a sustained stretch
/// (at least 20% of the logged epochs, and never a single epoch).
inline LeakageReport leakage_diagnostic(const std::vector<EpochPassStats>& log) {
    if (log.empty()) throw ConfigError("leakage diagnostic needs a non-empty run log");
    LeakageReport rep;
    int run = 0;
    for (const auto& e : log) {
        if (!e.has_clean || !e.has_adv)
            throw ConfigError(concat("epoch ", e.epoch, " is missing per-pass training accuracies"));
        double gap = e.acc_adv - e.acc_clean;
        rep.gaps.push_back(gap);
        run = gap > 0 ? run + 1 : 0;
        rep.longest_positive_run = std::max(rep.longest_positive_run, run);
    }
    int epochs = static_cast<int>(log.size());
    rep.flag_window = std::max(2, (epochs + 4) / 5);  // ceil(0.2 * epochs), floor 2
    rep.flagged = rep.longest_positive_run >= rep.flag_window;
    return rep;
}

}  // namespace advprop
