#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "advprop/common.hpp"
#include "advprop/tensor.hpp"

namespace advprop {

enum class OpKind : uint8_t {
    leaf,
    matmul,
    conv2d,
    relu,
    add,
    scale,
    flatten,
    mean_pool,
    batch_norm,
    softmax_xent,
};

inline const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::leaf: return "leaf";
        case OpKind::matmul: return "matmul";
        case OpKind::conv2d: return "conv2d";
        case OpKind::relu: return "relu";
        case OpKind::add: return "add";
        case OpKind::scale: return "scale";
        case OpKind::flatten: return "flatten";
        case OpKind::mean_pool: return "mean_pool";
        case OpKind::batch_norm: return "batch_norm";
        case OpKind::softmax_xent: return "softmax_xent";
    }
    return "?";
}

/// Reverse-mode tape over a fixed primitive set. Nodes evaluate eagerly on
/// creation (so shapes and finiteness are validated at the offending node),
/// activations are retained, and backward() walks the tape once in reverse.
/// Single-threaded with fixed accumulation order: identical inputs give
/// bit-identical values and gradients in a given precision.
template <class Real>
class Graph {
  public:
    struct Node {
        OpKind op;
        int a = -1, b = -1, c = -1;  // input node ids
        Shape shape;
        std::vector<Real> value;
        std::vector<Real> grad;
        bool needs_grad = false;
        std::string name;  // leaves only

        // op-specific
        Real factor = Real(0);            // scale
        int window = 0;                   // mean_pool
        int stride = 1, pad = 0;          // conv2d
        std::vector<int> labels;          // softmax_xent
        std::vector<Real> aux;            // softmax probs
        std::vector<Real> bn_mean, bn_inv_std;  // statistics actually used
        std::vector<Real> bn_var;               // pre-eps variance (batch mode)
        bool bn_batch_stats = false;

        Tensor<Real>* bound = nullptr;  // leaf binding
    };

    int node_count() const { return static_cast<int>(nodes_.size()); }
    const Node& node(int id) const { return nodes_[check_id(id)]; }
    const std::vector<Real>& value(int id) const { return nodes_[check_id(id)].value; }

    /// Gradient of the loss w.r.t. node `id`; valid after backward().
    const std::vector<Real>& grad(int id) const {
        const Node& n = nodes_[check_id(id)];
        if (!backward_done_)
            throw GraphError("gradient requested before backward");
        if (!n.needs_grad)
            throw GraphError(concat("node ", id, " (", op_name(n.op), ") does not track gradients"));
        return n.grad;
    }

    int leaf(Tensor<Real>& t, std::string name) {
        Node n;
        n.op = OpKind::leaf;
        n.shape = t.shape;
        n.value = t.data;
        n.needs_grad = t.requires_grad;
        n.name = std::move(name);
        n.bound = &t;
        return push(std::move(n));
    }

    /// [m,k] x [k,n] -> [m,n]
    int matmul(int a, int b) {
        const Node& A = nodes_[check_id(a)];
        const Node& B = nodes_[check_id(b)];
        if (A.shape.size() != 2 || B.shape.size() != 2 || A.shape[1] != B.shape[0])
            throw GraphError(concat("matmul shape mismatch ", shape_str(A.shape), " x ", shape_str(B.shape)));
        int m = A.shape[0], k = A.shape[1], n = B.shape[1];
        Node out;
        out.op = OpKind::matmul;
        out.a = a;
        out.b = b;
        out.shape = {m, n};
        out.value.assign(static_cast<std::size_t>(m) * n, Real(0));
        for (int i = 0; i < m; ++i)
            for (int kk = 0; kk < k; ++kk) {
                Real av = A.value[static_cast<std::size_t>(i) * k + kk];
                const Real* brow = B.value.data() + static_cast<std::size_t>(kk) * n;
                Real* orow = out.value.data() + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        return push(std::move(out));
    }

    /// x [N,Ci,H,W], w [Co,Ci,kh,kw]; direct convolution.
    int conv2d(int x, int w, int stride, int pad) {
        const Node& X = nodes_[check_id(x)];
        const Node& W = nodes_[check_id(w)];
        if (X.shape.size() != 4 || W.shape.size() != 4 || X.shape[1] != W.shape[1])
            throw GraphError(concat("conv2d shape mismatch ", shape_str(X.shape), " * ", shape_str(W.shape)));
        int N = X.shape[0], Ci = X.shape[1], H = X.shape[2], Wd = X.shape[3];
        int Co = W.shape[0], kh = W.shape[2], kw = W.shape[3];
        int Ho = (H + 2 * pad - kh) / stride + 1;
        int Wo = (Wd + 2 * pad - kw) / stride + 1;
        if (Ho < 1 || Wo < 1)
            throw GraphError(concat("conv2d output degenerate for input ", shape_str(X.shape)));
        Node out;
        out.op = OpKind::conv2d;
        out.a = x;
        out.b = w;
        out.stride = stride;
        out.pad = pad;
        out.shape = {N, Co, Ho, Wo};
        out.value.assign(numel(out.shape), Real(0));
        for (int n = 0; n < N; ++n)
            for (int co = 0; co < Co; ++co)
                for (int ci = 0; ci < Ci; ++ci)
                    for (int i = 0; i < kh; ++i)
                        for (int j = 0; j < kw; ++j) {
                            Real wv = W.value[idx4(co, ci, i, j, Ci, kh, kw)];
                            int oh_lo, oh_hi, ow_lo, ow_hi;
                            valid_range(H, pad, i, stride, Ho, oh_lo, oh_hi);
                            valid_range(Wd, pad, j, stride, Wo, ow_lo, ow_hi);
                            for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                                int ih = oh * stride - pad + i;
                                const Real* xrow = X.value.data() + idx4(n, ci, ih, 0, Ci, H, Wd);
                                Real* orow = out.value.data() + idx4(n, co, oh, 0, Co, Ho, Wo);
                                for (int ow = ow_lo; ow <= ow_hi; ++ow)
                                    orow[ow] += wv * xrow[ow * stride - pad + j];
                            }
                        }
        return push(std::move(out));
    }

    int relu(int x) {
        const Node& X = nodes_[check_id(x)];
        Node out;
        out.op = OpKind::relu;
        out.a = x;
        out.shape = X.shape;
        out.value.resize(X.value.size());
        for (std::size_t i = 0; i < X.value.size(); ++i)
            out.value[i] = X.value[i] > Real(0) ? X.value[i] : Real(0);
        return push(std::move(out));
    }

    /// Same-shape elementwise add, or bias add [m,n] + [n]. The bias case is
    /// the only broadcast in the engine.
    int add(int a, int b) {
        const Node& A = nodes_[check_id(a)];
        const Node& B = nodes_[check_id(b)];
        Node out;
        out.op = OpKind::add;
        out.a = a;
        out.b = b;
        out.shape = A.shape;
        out.value.resize(A.value.size());
        if (A.shape == B.shape) {
            for (std::size_t i = 0; i < A.value.size(); ++i) out.value[i] = A.value[i] + B.value[i];
        } else if (A.shape.size() == 2 && B.shape.size() == 1 && A.shape[1] == B.shape[0]) {
            int m = A.shape[0], n = A.shape[1];
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    out.value[static_cast<std::size_t>(i) * n + j] =
                        A.value[static_cast<std::size_t>(i) * n + j] + B.value[static_cast<std::size_t>(j)];
        } else {
            throw GraphError(concat("add shape mismatch ", shape_str(A.shape), " + ", shape_str(B.shape)));
        }
        return push(std::move(out));
    }

    int scale(int x, Real factor) {
        const Node& X = nodes_[check_id(x)];
        Node out;
        out.op = OpKind::scale;
        out.a = x;
        out.factor = factor;
        out.shape = X.shape;
        out.value.resize(X.value.size());
        for (std::size_t i = 0; i < X.value.size(); ++i) out.value[i] = factor * X.value[i];
        return push(std::move(out));
    }

    /// [N, ...] -> [N, prod(rest)]
    int flatten(int x) {
        const Node& X = nodes_[check_id(x)];
        if (X.shape.empty()) throw GraphError("flatten on scalar");
        Node out;
        out.op = OpKind::flatten;
        out.a = x;
        out.shape = {X.shape[0], static_cast<int>(X.value.size()) / X.shape[0]};
        out.value = X.value;
        return push(std::move(out));
    }

    /// Non-overlapping window average over [N,C,H,W]; H and W must divide.
    int mean_pool(int x, int window) {
        const Node& X = nodes_[check_id(x)];
        if (X.shape.size() != 4)
            throw GraphError(concat("mean_pool expects 4-d input, got ", shape_str(X.shape)));
        int N = X.shape[0], C = X.shape[1], H = X.shape[2], W = X.shape[3];
        if (H % window != 0 || W % window != 0)
            throw GraphError(concat("mean_pool window ", window, " does not divide ", shape_str(X.shape)));
        int Ho = H / window, Wo = W / window;
        Node out;
        out.op = OpKind::mean_pool;
        out.a = x;
        out.window = window;
        out.shape = {N, C, Ho, Wo};
        out.value.assign(numel(out.shape), Real(0));
        Real inv = Real(1) / static_cast<Real>(window * window);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int oh = 0; oh < Ho; ++oh)
                    for (int ow = 0; ow < Wo; ++ow) {
                        Real s = Real(0);
                        for (int i = 0; i < window; ++i)
                            for (int j = 0; j < window; ++j)
                                s += X.value[idx4(n, c, oh * window + i, ow * window + j, C, H, W)];
                        out.value[idx4(n, c, oh, ow, C, Ho, Wo)] = s * inv;
                    }
        return push(std::move(out));
    }

    /// Per-channel normalization of [N,C] or [N,C,H,W] with affine (gamma,
    /// beta are [C] leaves). batch_stats=true computes mini-batch statistics
    /// (two-pass, biased variance) and requires N >= 2; otherwise the given
    /// running statistics are used. Computed batch statistics are exposed via
    /// bn_mean/bn_var for the caller's running-average update.
    int batch_norm(int x, int gamma, int beta, bool batch_stats,
                   const std::vector<Real>& running_mean, const std::vector<Real>& running_var,
                   Real eps) {
        const Node& X = nodes_[check_id(x)];
        const Node& G = nodes_[check_id(gamma)];
        const Node& B = nodes_[check_id(beta)];
        if (X.shape.size() != 2 && X.shape.size() != 4)
            throw GraphError(concat("batch_norm expects 2-d or 4-d input, got ", shape_str(X.shape)));
        int N = X.shape[0], C = X.shape[1];
        int spatial = X.shape.size() == 4 ? X.shape[2] * X.shape[3] : 1;
        if (G.shape != Shape{C} || B.shape != Shape{C})
            throw GraphError(concat("batch_norm affine shape mismatch for ", C, " channels"));
        if (batch_stats && N < 2)
            throw GraphError("batch_norm with batch statistics requires at least 2 examples");
        Node out;
        out.op = OpKind::batch_norm;
        out.a = x;
        out.b = gamma;
        out.c = beta;
        out.shape = X.shape;
        out.bn_batch_stats = batch_stats;
        out.value.resize(X.value.size());
        out.bn_mean.assign(static_cast<std::size_t>(C), Real(0));
        out.bn_inv_std.assign(static_cast<std::size_t>(C), Real(0));
        std::size_t m = static_cast<std::size_t>(N) * spatial;
        if (batch_stats) {
            out.bn_var.assign(static_cast<std::size_t>(C), Real(0));
            for (int c = 0; c < C; ++c) {
                Real s = Real(0);
                for (int n = 0; n < N; ++n) {
                    const Real* row = X.value.data() + (static_cast<std::size_t>(n) * C + c) * spatial;
                    for (int p = 0; p < spatial; ++p) s += row[p];
                }
                Real mean = s / static_cast<Real>(m);
                Real v = Real(0);
                for (int n = 0; n < N; ++n) {
                    const Real* row = X.value.data() + (static_cast<std::size_t>(n) * C + c) * spatial;
                    for (int p = 0; p < spatial; ++p) {
                        Real d = row[p] - mean;
                        v += d * d;
                    }
                }
                v /= static_cast<Real>(m);
                out.bn_mean[c] = mean;
                out.bn_var[c] = v;
                out.bn_inv_std[c] = Real(1) / std::sqrt(v + eps);
            }
        } else {
            if (running_mean.size() != static_cast<std::size_t>(C) || running_var.size() != static_cast<std::size_t>(C))
                throw GraphError("batch_norm running statistics have wrong channel count");
            for (int c = 0; c < C; ++c) {
                out.bn_mean[c] = running_mean[c];
                out.bn_inv_std[c] = Real(1) / std::sqrt(running_var[c] + eps);
            }
        }
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                Real mu = out.bn_mean[c], inv = out.bn_inv_std[c];
                Real g = G.value[static_cast<std::size_t>(c)], bsh = B.value[static_cast<std::size_t>(c)];
                const Real* row = X.value.data() + (static_cast<std::size_t>(n) * C + c) * spatial;
                Real* orow = out.value.data() + (static_cast<std::size_t>(n) * C + c) * spatial;
                for (int p = 0; p < spatial; ++p) orow[p] = g * ((row[p] - mu) * inv) + bsh;
            }
        return push(std::move(out));
    }

    /// Mean softmax cross-entropy over the batch; scalar output. Softmax
    /// probabilities are retained for backward.
    int softmax_cross_entropy(int logits, std::vector<int> labels) {
        const Node& L = nodes_[check_id(logits)];
        if (L.shape.size() != 2)
            throw GraphError(concat("softmax_xent expects [batch,classes] logits, got ", shape_str(L.shape)));
        int m = L.shape[0], C = L.shape[1];
        if (static_cast<int>(labels.size()) != m)
            throw GraphError(concat("softmax_xent got ", labels.size(), " labels for batch of ", m));
        for (int y : labels)
            if (y < 0 || y >= C) throw GraphError(concat("label ", y, " out of range [0,", C, ")"));
        Node out;
        out.op = OpKind::softmax_xent;
        out.a = logits;
        out.shape = {1};
        out.labels = std::move(labels);
        out.aux.resize(L.value.size());
        Real total = Real(0);
        for (int i = 0; i < m; ++i) {
            const Real* row = L.value.data() + static_cast<std::size_t>(i) * C;
            Real mx = row[0];
            for (int j = 1; j < C; ++j) mx = std::max(mx, row[j]);
            Real sum = Real(0);
            for (int j = 0; j < C; ++j) sum += std::exp(row[j] - mx);
            Real lse = mx + std::log(sum);
            Real* prow = out.aux.data() + static_cast<std::size_t>(i) * C;
            for (int j = 0; j < C; ++j) prow[j] = std::exp(row[j] - lse);
            total += lse - row[out.labels[static_cast<std::size_t>(i)]];
        }
        out.value = {total / static_cast<Real>(m)};
        return push(std::move(out));
    }

    /// One reverse sweep from the final scalar node. Gradients of every
    /// reachable differentiable node are computed in a single traversal, so a
    /// joint {parameters, input} request costs the same pass as parameters
    /// alone and yields bit-identical parameter gradients.
    void backward() {
        run_backward();
        for (auto& n : nodes_)
            if (n.op == OpKind::leaf && n.needs_grad && n.bound != nullptr) write_back(n);
    }

    /// Spec surface: populate Tensor::grad for the selected leaves only.
    void backward(const std::vector<int>& leaf_ids) {
        run_backward();
        for (int id : leaf_ids) {
            Node& n = nodes_[check_id(id)];
            if (n.op != OpKind::leaf) throw GraphError(concat("node ", id, " is not a leaf"));
            if (!n.needs_grad) throw GraphError(concat("leaf '", n.name, "' does not require gradients"));
            write_back(n);
        }
    }

  private:
    std::vector<Node> nodes_;
    bool backward_done_ = false;

    std::size_t check_id(int id) const {
        if (id < 0 || id >= static_cast<int>(nodes_.size()))
            throw GraphError(concat("node id ", id, " not in graph"));
        return static_cast<std::size_t>(id);
    }

    static std::size_t idx4(int a, int b, int c, int d, int B, int C, int D) {
        return ((static_cast<std::size_t>(a) * B + b) * C + c) * D + d;
    }

    /// Output positions with in-bounds input for one kernel offset.
    static void valid_range(int in, int pad, int k, int stride, int out, int& lo, int& hi) {
        lo = 0;
        while (lo < out && lo * stride - pad + k < 0) ++lo;
        hi = out - 1;
        while (hi >= 0 && hi * stride - pad + k >= in) --hi;
    }

    int push(Node&& n) {
        if (n.op != OpKind::leaf) {
            n.needs_grad = false;
            for (int in : {n.a, n.b, n.c})
                if (in >= 0 && nodes_[static_cast<std::size_t>(in)].needs_grad) n.needs_grad = true;
        }
        int id = static_cast<int>(nodes_.size());
        if (!all_finite(n.value))
            throw GraphError(concat("non-finite activation in node ", id, " (", op_name(n.op),
                                    n.name.empty() ? "" : concat(" '", n.name, "'"), ")"));
        nodes_.push_back(std::move(n));
        backward_done_ = false;
        return id;
    }

    void write_back(Node& n) {
        n.bound->ensure_grad();
        n.bound->grad = n.grad;
    }

    void run_backward() {
        if (backward_done_) return;
        if (nodes_.empty()) throw GraphError("backward on empty graph (no forward was run)");
        Node& top = nodes_.back();
        if (top.value.size() != 1)
            throw GraphError("backward requires a scalar loss as the final node");
        for (auto& n : nodes_) {
            if (n.needs_grad)
                n.grad.assign(n.value.size(), Real(0));
            else
                n.grad.clear();
        }
        if (top.needs_grad) top.grad[0] = Real(1);
        for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (!n.needs_grad || n.op == OpKind::leaf) continue;
            backward_node(n);
        }
        backward_done_ = true;
    }

    bool wants(int id) const { return id >= 0 && nodes_[static_cast<std::size_t>(id)].needs_grad; }

    void backward_node(Node& n) {
        switch (n.op) {
            case OpKind::matmul: {
                Node& A = nodes_[static_cast<std::size_t>(n.a)];
                Node& B = nodes_[static_cast<std::size_t>(n.b)];
                int m = A.shape[0], k = A.shape[1], c = B.shape[1];
                if (wants(n.a))
                    for (int i = 0; i < m; ++i)
                        for (int kk = 0; kk < k; ++kk) {
                            Real s = Real(0);
                            const Real* drow = n.grad.data() + static_cast<std::size_t>(i) * c;
                            const Real* brow = B.value.data() + static_cast<std::size_t>(kk) * c;
                            for (int j = 0; j < c; ++j) s += drow[j] * brow[j];
                            A.grad[static_cast<std::size_t>(i) * k + kk] += s;
                        }
                if (wants(n.b))
                    for (int i = 0; i < m; ++i)
                        for (int kk = 0; kk < k; ++kk) {
                            Real av = A.value[static_cast<std::size_t>(i) * k + kk];
                            const Real* drow = n.grad.data() + static_cast<std::size_t>(i) * c;
                            Real* brow = B.grad.data() + static_cast<std::size_t>(kk) * c;
                            for (int j = 0; j < c; ++j) brow[j] += av * drow[j];
                        }
                break;
            }
            case OpKind::conv2d: {
                Node& X = nodes_[static_cast<std::size_t>(n.a)];
                Node& W = nodes_[static_cast<std::size_t>(n.b)];
                int N = X.shape[0], Ci = X.shape[1], H = X.shape[2], Wd = X.shape[3];
                int Co = W.shape[0], kh = W.shape[2], kw = W.shape[3];
                int Ho = n.shape[2], Wo = n.shape[3];
                for (int nn = 0; nn < N; ++nn)
                    for (int co = 0; co < Co; ++co)
                        for (int ci = 0; ci < Ci; ++ci)
                            for (int i = 0; i < kh; ++i)
                                for (int j = 0; j < kw; ++j) {
                                    int oh_lo, oh_hi, ow_lo, ow_hi;
                                    valid_range(H, n.pad, i, n.stride, Ho, oh_lo, oh_hi);
                                    valid_range(Wd, n.pad, j, n.stride, Wo, ow_lo, ow_hi);
                                    std::size_t widx = idx4(co, ci, i, j, Ci, kh, kw);
                                    Real wv = W.value[widx];
                                    Real wg = Real(0);
                                    for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                                        int ih = oh * n.stride - n.pad + i;
                                        const Real* drow = n.grad.data() + idx4(nn, co, oh, 0, Co, Ho, Wo);
                                        const Real* xrow = X.value.data() + idx4(nn, ci, ih, 0, Ci, H, Wd);
                                        Real* xgrow = wants(n.a) ? X.grad.data() + idx4(nn, ci, ih, 0, Ci, H, Wd) : nullptr;
                                        for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                                            int iw = ow * n.stride - n.pad + j;
                                            Real d = drow[ow];
                                            wg += xrow[iw] * d;
                                            if (xgrow) xgrow[iw] += wv * d;
                                        }
                                    }
                                    if (wants(n.b)) W.grad[widx] += wg;
                                }
                break;
            }
            case OpKind::relu: {
                Node& X = nodes_[static_cast<std::size_t>(n.a)];
                if (wants(n.a))
                    for (std::size_t i = 0; i < n.grad.size(); ++i)
                        if (X.value[i] > Real(0)) X.grad[i] += n.grad[i];
                break;
            }
            case OpKind::add: {
                Node& A = nodes_[static_cast<std::size_t>(n.a)];
                Node& B = nodes_[static_cast<std::size_t>(n.b)];
                if (wants(n.a))
                    for (std::size_t i = 0; i < n.grad.size(); ++i) A.grad[i] += n.grad[i];
                if (wants(n.b)) {
                    if (A.shape == B.shape) {
                        for (std::size_t i = 0; i < n.grad.size(); ++i) B.grad[i] += n.grad[i];
                    } else {
                        int m = A.shape[0], c = A.shape[1];
                        for (int i = 0; i < m; ++i)
                            for (int j = 0; j < c; ++j)
                                B.grad[static_cast<std::size_t>(j)] += n.grad[static_cast<std::size_t>(i) * c + j];
                    }
                }
                break;
            }
            case OpKind::scale: {
                Node& X = nodes_[static_cast<std::size_t>(n.a)];
                if (wants(n.a))
                    for (std::size_t i = 0; i < n.grad.size(); ++i) X.grad[i] += n.factor * n.grad[i];
                break;
            }
            case OpKind::flatten: {
                Node& X = nodes_[static_cast<std::size_t>(n.a)];
                if (wants(n.a))
                    for (std::size_t i = 0; i < n.grad.size(); ++i) X.grad[i] += n.grad[i];
                break;
            }
            case OpKind::mean_pool: {
                Node& X = nodes_[static_cast<std::size_t>(n.a)];
                if (!wants(n.a)) break;
                int N = n.shape[0], C = n.shape[1], Ho = n.shape[2], Wo = n.shape[3];
                int H = X.shape[2], W = X.shape[3];
                Real inv = Real(1) / static_cast<Real>(n.window * n.window);
                for (int nn = 0; nn < N; ++nn)
                    for (int c = 0; c < C; ++c)
                        for (int oh = 0; oh < Ho; ++oh)
                            for (int ow = 0; ow < Wo; ++ow) {
                                Real d = n.grad[idx4(nn, c, oh, ow, C, Ho, Wo)] * inv;
                                for (int i = 0; i < n.window; ++i)
                                    for (int j = 0; j < n.window; ++j)
                                        X.grad[idx4(nn, c, oh * n.window + i, ow * n.window + j, C, H, W)] += d;
                            }
                break;
            }
            case OpKind::batch_norm:
                backward_batch_norm(n);
                break;
            case OpKind::softmax_xent: {
                Node& L = nodes_[static_cast<std::size_t>(n.a)];
                if (!wants(n.a)) break;
                int m = L.shape[0], C = L.shape[1];
                Real g = n.grad[0] / static_cast<Real>(m);
                for (int i = 0; i < m; ++i) {
                    const Real* prow = n.aux.data() + static_cast<std::size_t>(i) * C;
                    Real* drow = L.grad.data() + static_cast<std::size_t>(i) * C;
                    int y = n.labels[static_cast<std::size_t>(i)];
                    for (int j = 0; j < C; ++j) drow[j] += g * (prow[j] - (j == y ? Real(1) : Real(0)));
                }
                break;
            }
            case OpKind::leaf:
                break;
        }
    }

    void backward_batch_norm(Node& n) {
        Node& X = nodes_[static_cast<std::size_t>(n.a)];
        Node& G = nodes_[static_cast<std::size_t>(n.b)];
        Node& B = nodes_[static_cast<std::size_t>(n.c)];
        int N = X.shape[0], C = X.shape[1];
        int spatial = X.shape.size() == 4 ? X.shape[2] * X.shape[3] : 1;
        Real m = static_cast<Real>(static_cast<std::size_t>(N) * spatial);
        for (int c = 0; c < C; ++c) {
            Real mu = n.bn_mean[static_cast<std::size_t>(c)];
            Real inv = n.bn_inv_std[static_cast<std::size_t>(c)];
            Real gamma = G.value[static_cast<std::size_t>(c)];
            Real sum_dy = Real(0), sum_dy_xhat = Real(0);
            for (int nn = 0; nn < N; ++nn) {
                std::size_t base = (static_cast<std::size_t>(nn) * C + c) * spatial;
                for (int p = 0; p < spatial; ++p) {
                    Real dy = n.grad[base + p];
                    sum_dy += dy;
                    sum_dy_xhat += dy * ((X.value[base + p] - mu) * inv);
                }
            }
            if (wants(n.b)) G.grad[static_cast<std::size_t>(c)] += sum_dy_xhat;
            if (wants(n.c)) B.grad[static_cast<std::size_t>(c)] += sum_dy;
            if (!wants(n.a)) continue;
            if (n.bn_batch_stats) {
                Real k1 = sum_dy / m, k2 = sum_dy_xhat / m;
                for (int nn = 0; nn < N; ++nn) {
                    std::size_t base = (static_cast<std::size_t>(nn) * C + c) * spatial;
                    for (int p = 0; p < spatial; ++p) {
                        Real xhat = (X.value[base + p] - mu) * inv;
                        X.grad[base + p] += gamma * inv * (n.grad[base + p] - k1 - xhat * k2);
                    }
                }
            } else {
                for (int nn = 0; nn < N; ++nn) {
                    std::size_t base = (static_cast<std::size_t>(nn) * C + c) * spatial;
                    for (int p = 0; p < spatial; ++p) X.grad[base + p] += gamma * inv * n.grad[base + p];
                }
            }
        }
    }
};

}  // namespace advprop
