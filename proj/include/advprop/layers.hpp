#pragma once

#include <string>
#include <variant>
#include <vector>

#include "advprop/graph.hpp"
#include "advprop/rng.hpp"
#include "advprop/tensor.hpp"

namespace advprop {

enum class ParamRole : uint8_t { shared, main_bn, aux_bn };
enum class BnBranch : uint8_t { main, aux };
enum class StatsMode : uint8_t { batch, running };

inline const char* to_string(ParamRole r) {
    switch (r) {
        case ParamRole::shared: return "shared";
        case ParamRole::main_bn: return "main_bn";
        case ParamRole::aux_bn: return "aux_bn";
    }
    return "?";
}

/// One set of normalization statistics plus the per-channel affine.
template <class Real>
struct BatchNormState {
    Tensor<Real> scale, shift;
    std::vector<Real> running_mean, running_var;
    Real momentum = Real(0.1);
    Real eps = Real(1e-5);

    BatchNormState() = default;
    explicit BatchNormState(int channels)
        : scale(Tensor<Real>::full({channels}, Real(1))),
          shift(Shape{channels}),
          running_mean(static_cast<std::size_t>(channels), Real(0)),
          running_var(static_cast<std::size_t>(channels), Real(1)) {
        scale.requires_grad = true;
        shift.requires_grad = true;
    }

    int channels() const { return scale.ndim() ? scale.dim(0) : 0; }

    void apply_running_update(const std::vector<Real>& batch_mean, const std::vector<Real>& batch_var) {
        for (std::size_t c = 0; c < running_mean.size(); ++c) {
            running_mean[c] = (Real(1) - momentum) * running_mean[c] + momentum * batch_mean[c];
            running_var[c] = (Real(1) - momentum) * running_var[c] + momentum * batch_var[c];
        }
    }
};

/// Main normalizes clean traffic, Aux normalizes noise/adversarial traffic.
/// The two branches start identical and share no storage.
template <class Real>
struct DualBatchNorm {
    BatchNormState<Real> main, aux;

    DualBatchNorm() = default;
    explicit DualBatchNorm(int channels) : main(channels), aux(channels) {}

    BatchNormState<Real>& branch(BnBranch b) { return b == BnBranch::main ? main : aux; }
    const BatchNormState<Real>& branch(BnBranch b) const { return b == BnBranch::main ? main : aux; }
};

/// Per-channel mean and biased variance of [N,C] or [N,C,H,W] raw values.
template <class Real>
void channel_stats(const std::vector<Real>& x, const Shape& shape,
                   std::vector<Real>& mean, std::vector<Real>& var) {
    int N = shape[0], C = shape[1];
    int spatial = shape.size() == 4 ? shape[2] * shape[3] : 1;
    std::size_t m = static_cast<std::size_t>(N) * spatial;
    mean.assign(static_cast<std::size_t>(C), Real(0));
    var.assign(static_cast<std::size_t>(C), Real(0));
    for (int c = 0; c < C; ++c) {
        Real s = Real(0);
        for (int n = 0; n < N; ++n) {
            const Real* row = x.data() + (static_cast<std::size_t>(n) * C + c) * spatial;
            for (int p = 0; p < spatial; ++p) s += row[p];
        }
        Real mu = s / static_cast<Real>(m);
        Real v = Real(0);
        for (int n = 0; n < N; ++n) {
            const Real* row = x.data() + (static_cast<std::size_t>(n) * C + c) * spatial;
            for (int p = 0; p < spatial; ++p) {
                Real d = row[p] - mu;
                v += d * d;
            }
        }
        mean[static_cast<std::size_t>(c)] = mu;
        var[static_cast<std::size_t>(c)] = v / static_cast<Real>(m);
    }
}

/// Standalone batch-normalization forward on one statistics set. Batch mode
/// normalizes with mini-batch statistics (needs >= 2 examples); Running mode
/// with the stored ones. update_running folds the mini-batch statistics into
/// the running averages with fraction `momentum`, and is the only way this
/// call mutates `state`.
template <class Real>
Tensor<Real> batchnorm_forward(const Tensor<Real>& x, BatchNormState<Real>& state,
                               StatsMode stats_mode, bool update_running) {
    Graph<Real> g;
    Tensor<Real> input = x;
    input.requires_grad = false;
    Tensor<Real> gamma = state.scale;
    Tensor<Real> beta = state.shift;
    gamma.requires_grad = beta.requires_grad = false;
    int xid = g.leaf(input, "x");
    int gid = g.leaf(gamma, "scale");
    int bid = g.leaf(beta, "shift");
    if (update_running && x.dim(0) < 2)
        throw GraphError("running-statistics update requires at least 2 examples");
    int out = g.batch_norm(xid, gid, bid, stats_mode == StatsMode::batch,
                           state.running_mean, state.running_var, state.eps);
    if (update_running) {
        if (stats_mode == StatsMode::batch) {
            state.apply_running_update(g.node(out).bn_mean, g.node(out).bn_var);
        } else {
            std::vector<Real> mean, var;
            channel_stats(x.data, x.shape, mean, var);
            state.apply_running_update(mean, var);
        }
    }
    return Tensor<Real>(g.node(out).shape, g.value(out));
}

// ---------------------------------------------------------------------------
// Network

template <class Real>
struct ConvLayer {
    Tensor<Real> w;  // [Co,Ci,kh,kw], no bias: the following norm layer shifts
    int stride = 1, pad = 1;
};

template <class Real>
struct DenseLayer {
    Tensor<Real> w;  // [in,out]
    Tensor<Real> b;  // [out]
};

struct ReluLayer {};
struct FlattenLayer {};
struct PoolLayer {
    int window = 2;
};

template <class Real>
using Layer = std::variant<ConvLayer<Real>, DualBatchNorm<Real>, ReluLayer, PoolLayer, FlattenLayer, DenseLayer<Real>>;

template <class Real>
struct ParamRef {
    std::string name;
    ParamRole role;
    Tensor<Real>* tensor;
};

template <class Real>
struct BufferRef {
    std::string name;
    std::vector<Real>* values;
};

/// Everything the graph needs to be driven after a forward pass.
template <class Real>
struct ForwardPass {
    Graph<Real> graph;
    int loss = -1;
    int logits = -1;
    int input = -1;
    std::vector<int> param_leaf;  // node id per registry index, -1 when absent
};

template <class Real>
class Network {
  public:
    std::vector<Layer<Real>> layers;

    /// Deterministic parameter registry; order is layer order.
    std::vector<ParamRef<Real>> params() {
        std::vector<ParamRef<Real>> out;
        int conv_i = 0, bn_i = 0;
        for (auto& layer : layers) {
            if (auto* c = std::get_if<ConvLayer<Real>>(&layer)) {
                out.push_back({concat("conv", conv_i, ".w"), ParamRole::shared, &c->w});
                ++conv_i;
            } else if (auto* d = std::get_if<DualBatchNorm<Real>>(&layer)) {
                out.push_back({concat("bn", bn_i, ".main.scale"), ParamRole::main_bn, &d->main.scale});
                out.push_back({concat("bn", bn_i, ".main.shift"), ParamRole::main_bn, &d->main.shift});
                out.push_back({concat("bn", bn_i, ".aux.scale"), ParamRole::aux_bn, &d->aux.scale});
                out.push_back({concat("bn", bn_i, ".aux.shift"), ParamRole::aux_bn, &d->aux.shift});
                ++bn_i;
            } else if (auto* de = std::get_if<DenseLayer<Real>>(&layer)) {
                out.push_back({"dense.w", ParamRole::shared, &de->w});
                out.push_back({"dense.b", ParamRole::shared, &de->b});
            }
        }
        return out;
    }

    std::vector<ParamRole> param_roles() {
        std::vector<ParamRole> roles;
        for (auto& p : params()) roles.push_back(p.role);
        return roles;
    }

    /// Running statistics, for checkpointing and snapshots.
    std::vector<BufferRef<Real>> buffers() {
        std::vector<BufferRef<Real>> out;
        int bn_i = 0;
        for (auto& layer : layers) {
            if (auto* d = std::get_if<DualBatchNorm<Real>>(&layer)) {
                out.push_back({concat("bn", bn_i, ".main.running_mean"), &d->main.running_mean});
                out.push_back({concat("bn", bn_i, ".main.running_var"), &d->main.running_var});
                out.push_back({concat("bn", bn_i, ".aux.running_mean"), &d->aux.running_mean});
                out.push_back({concat("bn", bn_i, ".aux.running_var"), &d->aux.running_var});
                ++bn_i;
            }
        }
        return out;
    }

    /// Builds the graph for one pass. Every dual-norm layer is routed through
    /// `branch`; mixing branches within a pass is impossible by construction.
    ForwardPass<Real> forward(Tensor<Real>& x, const std::vector<int>& labels, BnBranch branch,
                              StatsMode stats_mode, bool update_running) {
        ForwardPass<Real> fp;
        auto registry = params();
        fp.param_leaf.assign(registry.size(), -1);
        fp.input = fp.graph.leaf(x, "input");
        int cur = fp.input;
        // registry order matches layer traversal order, so a forward scan
        // finds each used tensor and skips the unused branch's entries
        int reg_i = 0;
        auto leaf_for = [&](Tensor<Real>* t) {
            while (registry[static_cast<std::size_t>(reg_i)].tensor != t) ++reg_i;
            int id = fp.graph.leaf(*t, registry[static_cast<std::size_t>(reg_i)].name);
            fp.param_leaf[static_cast<std::size_t>(reg_i)] = id;
            return id;
        };
        for (auto& layer : layers) {
            if (auto* c = std::get_if<ConvLayer<Real>>(&layer)) {
                cur = fp.graph.conv2d(cur, leaf_for(&c->w), c->stride, c->pad);
            } else if (auto* d = std::get_if<DualBatchNorm<Real>>(&layer)) {
                BatchNormState<Real>& st = d->branch(branch);
                int gid = leaf_for(&st.scale);
                int bid = leaf_for(&st.shift);
                int out = fp.graph.batch_norm(cur, gid, bid, stats_mode == StatsMode::batch,
                                              st.running_mean, st.running_var, st.eps);
                if (update_running) {
                    if (stats_mode == StatsMode::batch) {
                        st.apply_running_update(fp.graph.node(out).bn_mean, fp.graph.node(out).bn_var);
                    } else {
                        std::vector<Real> mean, var;
                        channel_stats(fp.graph.value(cur), fp.graph.node(cur).shape, mean, var);
                        st.apply_running_update(mean, var);
                    }
                }
                cur = out;
            } else if (std::get_if<ReluLayer>(&layer)) {
                cur = fp.graph.relu(cur);
            } else if (auto* p = std::get_if<PoolLayer>(&layer)) {
                cur = fp.graph.mean_pool(cur, p->window);
            } else if (std::get_if<FlattenLayer>(&layer)) {
                cur = fp.graph.flatten(cur);
            } else if (auto* de = std::get_if<DenseLayer<Real>>(&layer)) {
                int wid = leaf_for(&de->w);  // keep the registry scan in order
                int bid = leaf_for(&de->b);
                cur = fp.graph.add(fp.graph.matmul(cur, wid), bid);
            }
        }
        fp.logits = cur;
        fp.loss = fp.graph.softmax_cross_entropy(cur, labels);
        return fp;
    }
};

/// conv(3x3) -> dual-norm -> relu -> pool, stacked, then a dense head.
struct CnnSpec {
    int in_channels = 1;
    int image_hw = 16;
    int classes = 4;
    std::vector<int> conv_channels = {8, 16};
    int pool = 2;
};

template <class Real>
Network<Real> build_cnn(const CnnSpec& spec, uint64_t seed) {
    Network<Real> net;
    int hw = spec.image_hw;
    int ci = spec.in_channels;
    int pidx = 0;
    for (int co : spec.conv_channels) {
        if (hw % spec.pool != 0)
            throw ConfigError(concat("image size ", spec.image_hw, " not divisible by pooling stages"));
        ConvLayer<Real> conv;
        Real stddev = std::sqrt(Real(2) / static_cast<Real>(ci * 9));
        conv.w = Tensor<Real>::normal({co, ci, 3, 3}, Real(0), stddev,
                                      derive_seed(seed, SeedStream::param_init, static_cast<uint64_t>(pidx++)));
        conv.w.requires_grad = true;
        net.layers.emplace_back(std::move(conv));
        net.layers.emplace_back(DualBatchNorm<Real>(co));
        net.layers.emplace_back(ReluLayer{});
        net.layers.emplace_back(PoolLayer{spec.pool});
        ci = co;
        hw /= spec.pool;
    }
    net.layers.emplace_back(FlattenLayer{});
    DenseLayer<Real> head;
    int features = ci * hw * hw;
    Real stddev = std::sqrt(Real(2) / static_cast<Real>(features));
    head.w = Tensor<Real>::normal({features, spec.classes}, Real(0), stddev,
                                  derive_seed(seed, SeedStream::param_init, static_cast<uint64_t>(pidx++)));
    head.w.requires_grad = true;
    head.b = Tensor<Real>(Shape{spec.classes});
    head.b.requires_grad = true;
    net.layers.emplace_back(std::move(head));
    return net;
}

/// Per-parameter gradients aligned with the registry; slots a pass did not
/// touch stay absent and count as zero downstream.
template <class Real>
struct GradBindings {
    std::vector<std::vector<Real>> g;
    std::vector<char> present;

    void init(std::size_t n) {
        g.assign(n, {});
        present.assign(n, 0);
    }
    bool empty() const { return g.empty(); }

    void accumulate(std::size_t idx, const std::vector<Real>& grad, Real scale) {
        if (!present[idx]) {
            g[idx].assign(grad.size(), Real(0));
            present[idx] = 1;
        }
        for (std::size_t i = 0; i < grad.size(); ++i) g[idx][i] += scale * grad[i];
    }
};

template <class Real>
double top1_accuracy(const std::vector<Real>& logits, const Shape& shape, const std::vector<int>& labels) {
    int m = shape[0], c = shape[1];
    int hits = 0;
    for (int i = 0; i < m; ++i) {
        const Real* row = logits.data() + static_cast<std::size_t>(i) * c;
        int best = 0;
        for (int j = 1; j < c; ++j)
            if (row[j] > row[best]) best = j;
        if (best == labels[static_cast<std::size_t>(i)]) ++hits;
    }
    return m == 0 ? 0.0 : static_cast<double>(hits) / m;
}

template <class Real>
int net_classes(Network<Real>& net) {
    for (auto it = net.layers.rbegin(); it != net.layers.rend(); ++it)
        if (auto* d = std::get_if<DenseLayer<Real>>(&*it)) return d->b.dim(0);
    throw ConfigError("network has no classifier head");
}

// Snapshot / restore of running statistics, for atomic training steps.
template <class Real>
std::vector<std::vector<Real>> snapshot_running_stats(Network<Real>& net) {
    std::vector<std::vector<Real>> snap;
    for (auto& b : net.buffers()) snap.push_back(*b.values);
    return snap;
}

template <class Real>
void restore_running_stats(Network<Real>& net, const std::vector<std::vector<Real>>& snap) {
    auto bufs = net.buffers();
    for (std::size_t i = 0; i < bufs.size(); ++i) *bufs[i].values = snap[i];
}

}  // namespace advprop
