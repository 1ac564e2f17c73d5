#pragma once

#include <cassert>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace handgen {

// Reverse-mode autodiff on tensor-valued nodes. The graph is built define-by-
// run; each op records a backward closure that scatters the node's gradient
// into its parents. Parents are owned by children, so the DAG has no cycles.

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Tensor val;
    Tensor grad; // allocated on demand, same shape as val
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn; // reads this->grad, accumulates into parents

    Tensor& ensure_grad() {
        if (grad.v.empty()) grad = Tensor(val.shape);
        return grad;
    }
};

namespace detail {
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}
} // namespace detail

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev; }
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor t, bool requires_grad = false) : n_(std::make_shared<Node>()) {
        n_->val = std::move(t);
        n_->requires_grad = requires_grad && detail::grad_mode();
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Tensor& val() const { return n_->val; }
    Tensor& val_mut() { return n_->val; }
    const Tensor& grad() const { return n_->grad; }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    NodePtr node() const { return n_; }

    const std::vector<int>& shape() const { return n_->val.shape; }
    int dim(int i) const { return n_->val.dim(i); }
    int64_t numel() const { return n_->val.numel(); }

    void zero_grad() {
        if (n_ && !n_->grad.v.empty()) n_->grad.fill(0.0);
    }

    // detached copy of the value as a fresh leaf
    Var detach() const { return Var(n_->val, false); }

    static Var from_node(NodePtr n) {
        Var v;
        v.n_ = std::move(n);
        return v;
    }

private:
    NodePtr n_;
};

namespace detail {

inline NodePtr make_op(Tensor value, std::vector<NodePtr> parents,
                       std::function<void(Node&)> backward) {
    auto n = std::make_shared<Node>();
    n->val = std::move(value);
    bool need = false;
    if (grad_mode()) {
        for (const auto& p : parents)
            if (p && p->requires_grad) need = true;
    }
    n->requires_grad = need;
    if (need) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward);
    }
    return n;
}

inline void topo_collect(const NodePtr& root, std::vector<Node*>& order) {
    // iterative DFS post-order
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (p && p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
}

} // namespace detail

// Backpropagate from a scalar root (or with an explicit seed gradient).
inline void backward(const Var& root, const Tensor* seed = nullptr) {
    NodePtr r = root.node();
    if (!r || !r->requires_grad) return;
    if (!seed && r->val.numel() != 1)
        throw ValidationError("backward: root must be scalar unless a seed gradient is given");
    std::vector<Node*> order;
    detail::topo_collect(r, order);
    r->ensure_grad();
    if (seed) {
        if (seed->shape != r->val.shape) throw ValidationError("backward: seed shape mismatch");
        for (int64_t i = 0; i < r->grad.numel(); ++i) r->grad[i] += (*seed)[i];
    } else {
        r->grad[0] += 1.0;
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) {
            for (auto& p : n->parents)
                if (p && p->requires_grad) p->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

/*--------------------------------- ops ---------------------------------*/

inline Var add(const Var& a, const Var& b) {
    if (a.shape() != b.shape()) throw ValidationError("add: shape mismatch");
    Tensor out = a.val();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += b.val()[i];
    auto na = a.node(), nb = b.node();
    return Var::from_node(detail::make_op(std::move(out), {na, nb}, [na, nb](Node& n) {
        if (na->requires_grad)
            for (int64_t i = 0; i < n.grad.numel(); ++i) na->grad[i] += n.grad[i];
        if (nb->requires_grad)
            for (int64_t i = 0; i < n.grad.numel(); ++i) nb->grad[i] += n.grad[i];
    }));
}

inline Var sub(const Var& a, const Var& b) {
    if (a.shape() != b.shape()) throw ValidationError("sub: shape mismatch");
    Tensor out = a.val();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b.val()[i];
    auto na = a.node(), nb = b.node();
    return Var::from_node(detail::make_op(std::move(out), {na, nb}, [na, nb](Node& n) {
        if (na->requires_grad)
            for (int64_t i = 0; i < n.grad.numel(); ++i) na->grad[i] += n.grad[i];
        if (nb->requires_grad)
            for (int64_t i = 0; i < n.grad.numel(); ++i) nb->grad[i] -= n.grad[i];
    }));
}

inline Var mul(const Var& a, const Var& b) {
    if (a.shape() != b.shape()) throw ValidationError("mul: shape mismatch");
    Tensor out = a.val();
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b.val()[i];
    auto na = a.node(), nb = b.node();
    return Var::from_node(detail::make_op(std::move(out), {na, nb}, [na, nb](Node& n) {
        if (na->requires_grad)
            for (int64_t i = 0; i < n.grad.numel(); ++i) na->grad[i] += n.grad[i] * nb->val[i];
        if (nb->requires_grad)
            for (int64_t i = 0; i < n.grad.numel(); ++i) nb->grad[i] += n.grad[i] * na->val[i];
    }));
}

// a*x + b with scalar constants
inline Var affine(const Var& x, real a, real b) {
    Tensor out = x.val();
    for (auto& v : out.v) v = a * v + b;
    auto nx = x.node();
    return Var::from_node(detail::make_op(std::move(out), {nx}, [nx, a](Node& n) {
        if (nx->requires_grad)
            for (int64_t i = 0; i < n.grad.numel(); ++i) nx->grad[i] += a * n.grad[i];
    }));
}

inline Var scale(const Var& x, real a) { return affine(x, a, 0.0); }

inline Var silu(const Var& x) {
    Tensor out = x.val();
    for (auto& v : out.v) v = v / (1.0 + std::exp(-v));
    auto nx = x.node();
    return Var::from_node(detail::make_op(std::move(out), {nx}, [nx](Node& n) {
        if (!nx->requires_grad) return;
        for (int64_t i = 0; i < n.grad.numel(); ++i) {
            real v = nx->val[i];
            real s = 1.0 / (1.0 + std::exp(-v));
            nx->grad[i] += n.grad[i] * (s * (1.0 + v * (1.0 - s)));
        }
    }));
}

inline Var sigmoid(const Var& x) {
    Tensor out = x.val();
    for (auto& v : out.v) v = 1.0 / (1.0 + std::exp(-v));
    auto nx = x.node();
    auto out_copy = out; // cache y for backward
    return Var::from_node(detail::make_op(std::move(out), {nx}, [nx, y = std::move(out_copy)](Node& n) {
        if (!nx->requires_grad) return;
        for (int64_t i = 0; i < n.grad.numel(); ++i)
            nx->grad[i] += n.grad[i] * y[i] * (1.0 - y[i]);
    }));
}

inline Var reshape(const Var& x, std::vector<int> shape) {
    Tensor out = x.val().reshaped(std::move(shape));
    auto nx = x.node();
    return Var::from_node(detail::make_op(std::move(out), {nx}, [nx](Node& n) {
        if (!nx->requires_grad) return;
        for (int64_t i = 0; i < n.grad.numel(); ++i) nx->grad[i] += n.grad[i];
    }));
}

// [m,k] x [k,n] -> [m,n]
inline Var matmul(const Var& a, const Var& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
        throw ValidationError("matmul: bad shapes " + a.val().shape_str() + " x " + b.val().shape_str());
    int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            real av = a.val().at2(i, p);
            if (av == 0.0) continue;
            const real* brow = &b.val().v[static_cast<size_t>(p) * n];
            real* orow = &out.v[static_cast<size_t>(i) * n];
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    auto na = a.node(), nb = b.node();
    return Var::from_node(detail::make_op(std::move(out), {na, nb}, [na, nb, m, k, n](Node& nd) {
        if (na->requires_grad) { // dA = dY * B^T
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    real s = 0;
                    const real* grow = &nd.grad.v[static_cast<size_t>(i) * n];
                    const real* brow = &nb->val.v[static_cast<size_t>(p) * n];
                    for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
                    na->grad.at2(i, p) += s;
                }
        }
        if (nb->requires_grad) { // dB = A^T * dY
            for (int p = 0; p < k; ++p)
                for (int i = 0; i < m; ++i) {
                    real av = na->val.at2(i, p);
                    if (av == 0.0) continue;
                    const real* grow = &nd.grad.v[static_cast<size_t>(i) * n];
                    real* brow = &nb->grad.v[static_cast<size_t>(p) * n];
                    for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
                }
        }
    }));
}

// [B,m,k] x [B,k,n] -> [B,m,n]
inline Var bmm(const Var& a, const Var& b) {
    if (a.shape().size() != 3 || b.shape().size() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        throw ValidationError("bmm: bad shapes " + a.val().shape_str() + " x " + b.val().shape_str());
    int B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    Tensor out({B, m, n});
    for (int bb = 0; bb < B; ++bb) {
        const real* A = &a.val().v[static_cast<size_t>(bb) * m * k];
        const real* Bm = &b.val().v[static_cast<size_t>(bb) * k * n];
        real* O = &out.v[static_cast<size_t>(bb) * m * n];
        for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
                real av = A[static_cast<size_t>(i) * k + p];
                const real* brow = &Bm[static_cast<size_t>(p) * n];
                real* orow = &O[static_cast<size_t>(i) * n];
                for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
    }
    auto na = a.node(), nb = b.node();
    return Var::from_node(detail::make_op(std::move(out), {na, nb}, [na, nb, B, m, k, n](Node& nd) {
        for (int bb = 0; bb < B; ++bb) {
            const real* A = &na->val.v[static_cast<size_t>(bb) * m * k];
            const real* Bm = &nb->val.v[static_cast<size_t>(bb) * k * n];
            const real* G = &nd.grad.v[static_cast<size_t>(bb) * m * n];
            if (na->requires_grad) {
                real* dA = &na->grad.v[static_cast<size_t>(bb) * m * k];
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        real s = 0;
                        const real* grow = &G[static_cast<size_t>(i) * n];
                        const real* brow = &Bm[static_cast<size_t>(p) * n];
                        for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
                        dA[static_cast<size_t>(i) * k + p] += s;
                    }
            }
            if (nb->requires_grad) {
                real* dB = &nb->grad.v[static_cast<size_t>(bb) * k * n];
                for (int p = 0; p < k; ++p)
                    for (int i = 0; i < m; ++i) {
                        real av = A[static_cast<size_t>(i) * k + p];
                        if (av == 0.0) continue;
                        const real* grow = &G[static_cast<size_t>(i) * n];
                        real* brow = &dB[static_cast<size_t>(p) * n];
                        for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
                    }
            }
        }
    }));
}

// [..., m, n] -> [..., n, m] on the last two axes
inline Var transpose_last2(const Var& x) {
    auto s = x.shape();
    if (s.size() < 2) throw ValidationError("transpose_last2: rank < 2");
    int n1 = s[s.size() - 2], n2 = s[s.size() - 1];
    int64_t outer = x.numel() / (static_cast<int64_t>(n1) * n2);
    std::vector<int> os = s;
    std::swap(os[os.size() - 2], os[os.size() - 1]);
    Tensor out(os);
    for (int64_t o = 0; o < outer; ++o) {
        const real* src = &x.val().v[static_cast<size_t>(o) * n1 * n2];
        real* dst = &out.v[static_cast<size_t>(o) * n1 * n2];
        for (int i = 0; i < n1; ++i)
            for (int j = 0; j < n2; ++j) dst[static_cast<size_t>(j) * n1 + i] = src[static_cast<size_t>(i) * n2 + j];
    }
    auto nx = x.node();
    return Var::from_node(detail::make_op(std::move(out), {nx}, [nx, outer, n1, n2](Node& nd) {
        if (!nx->requires_grad) return;
        for (int64_t o = 0; o < outer; ++o) {
            const real* g = &nd.grad.v[static_cast<size_t>(o) * n1 * n2];
            real* dx = &nx->grad.v[static_cast<size_t>(o) * n1 * n2];
            for (int i = 0; i < n1; ++i)
                for (int j = 0; j < n2; ++j) dx[static_cast<size_t>(i) * n2 + j] += g[static_cast<size_t>(j) * n1 + i];
        }
    }));
}

// x: [B,N,in], W: [out,in], b: [out] -> [B,N,out]
inline Var linear(const Var& x, const Var& w, const Var& b) {
    auto s = x.shape();
    if (s.size() != 3 || w.shape().size() != 2 || s[2] != w.dim(1))
        throw ValidationError("linear: bad shapes");
    int B = s[0], N = s[1], in = s[2], out_d = w.dim(0);
    Tensor out({B, N, out_d});
    for (int bn = 0; bn < B * N; ++bn) {
        const real* xr = &x.val().v[static_cast<size_t>(bn) * in];
        real* orow = &out.v[static_cast<size_t>(bn) * out_d];
        for (int o = 0; o < out_d; ++o) {
            const real* wr = &w.val().v[static_cast<size_t>(o) * in];
            real s2 = b.defined() ? b.val()[o] : 0.0;
            for (int i = 0; i < in; ++i) s2 += xr[i] * wr[i];
            orow[o] = s2;
        }
    }
    auto nx = x.node(), nw = w.node(), nb = b.defined() ? b.node() : nullptr;
    return Var::from_node(detail::make_op(std::move(out), {nx, nw, nb},
                                          [nx, nw, nb, B, N, in, out_d](Node& nd) {
        int rows = B * N;
        for (int bn = 0; bn < rows; ++bn) {
            const real* g = &nd.grad.v[static_cast<size_t>(bn) * out_d];
            const real* xr = &nx->val.v[static_cast<size_t>(bn) * in];
            if (nx->requires_grad) {
                real* dx = &nx->grad.v[static_cast<size_t>(bn) * in];
                for (int o = 0; o < out_d; ++o) {
                    real go = g[o];
                    if (go == 0.0) continue;
                    const real* wr = &nw->val.v[static_cast<size_t>(o) * in];
                    for (int i = 0; i < in; ++i) dx[i] += go * wr[i];
                }
            }
            if (nw->requires_grad) {
                for (int o = 0; o < out_d; ++o) {
                    real go = g[o];
                    if (go == 0.0) continue;
                    real* dw = &nw->grad.v[static_cast<size_t>(o) * in];
                    for (int i = 0; i < in; ++i) dw[i] += go * xr[i];
                }
            }
            if (nb && nb->requires_grad)
                for (int o = 0; o < out_d; ++o) nb->grad[o] += g[o];
        }
    }));
}

// x: [B,Cin,H,W], w: [Cout,Cin,kh,kw], b: [Cout]
inline Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    auto xs = x.shape();
    auto ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4 || xs[1] != ws[1])
        throw ValidationError("conv2d: bad shapes " + x.val().shape_str() + " w " + w.val().shape_str());
    int B = xs[0], Cin = xs[1], H = xs[2], W = xs[3];
    int Cout = ws[0], kh = ws[2], kw = ws[3];
    int Ho = (H + 2 * pad - kh) / stride + 1;
    int Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw ValidationError("conv2d: empty output");
    Tensor out({B, Cout, Ho, Wo});
    const Tensor& X = x.val();
    const Tensor& Wt = w.val();
    for (int bb = 0; bb < B; ++bb)
        for (int oc = 0; oc < Cout; ++oc) {
            real bias = b.defined() ? b.val()[oc] : 0.0;
            for (int oh = 0; oh < Ho; ++oh)
                for (int ow = 0; ow < Wo; ++ow) {
                    real acc = bias;
                    for (int ic = 0; ic < Cin; ++ic) {
                        const real* xp = &X.v[((static_cast<size_t>(bb) * Cin + ic) * H) * W];
                        const real* wp = &Wt.v[((static_cast<size_t>(oc) * Cin + ic) * kh) * kw];
                        for (int u = 0; u < kh; ++u) {
                            int ih = oh * stride - pad + u;
                            if (ih < 0 || ih >= H) continue;
                            const real* xrow = xp + static_cast<size_t>(ih) * W;
                            const real* wrow = wp + static_cast<size_t>(u) * kw;
                            for (int v = 0; v < kw; ++v) {
                                int iw = ow * stride - pad + v;
                                if (iw < 0 || iw >= W) continue;
                                acc += xrow[iw] * wrow[v];
                            }
                        }
                    }
                    out.at4(bb, oc, oh, ow) = acc;
                }
        }
    auto nx = x.node(), nw = w.node(), nb = b.defined() ? b.node() : nullptr;
    return Var::from_node(detail::make_op(std::move(out), {nx, nw, nb},
                                          [nx, nw, nb, B, Cin, H, W, Cout, kh, kw, Ho, Wo, stride,
                                           pad](Node& nd) {
        bool need_dx = nx->requires_grad;
        bool need_dw = nw->requires_grad;
        bool need_db = nb && nb->requires_grad;
        for (int bb = 0; bb < B; ++bb)
            for (int oc = 0; oc < Cout; ++oc)
                for (int oh = 0; oh < Ho; ++oh)
                    for (int ow = 0; ow < Wo; ++ow) {
                        real g = nd.grad.at4(bb, oc, oh, ow);
                        if (g == 0.0) continue;
                        if (need_db) nb->grad[oc] += g;
                        for (int ic = 0; ic < Cin; ++ic) {
                            for (int u = 0; u < kh; ++u) {
                                int ih = oh * stride - pad + u;
                                if (ih < 0 || ih >= H) continue;
                                for (int v = 0; v < kw; ++v) {
                                    int iw = ow * stride - pad + v;
                                    if (iw < 0 || iw >= W) continue;
                                    if (need_dx)
                                        nx->grad.at4(bb, ic, ih, iw) += g * nw->val.at4(oc, ic, u, v);
                                    if (need_dw)
                                        nw->grad.at4(oc, ic, u, v) += g * nx->val.at4(bb, ic, ih, iw);
                                }
                            }
                        }
                    }
    }));
}

// GroupNorm over [B,C,H,W]; gamma/beta per channel.
inline Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, real eps = 1e-5) {
    auto s = x.shape();
    if (s.size() != 4 || s[1] % groups != 0) throw ValidationError("group_norm: bad shape/groups");
    int B = s[0], C = s[1], H = s[2], W = s[3];
    int cg = C / groups;
    int64_t gsize = static_cast<int64_t>(cg) * H * W;
    Tensor out(s);
    Tensor xhat(s);
    std::vector<real> inv_std(static_cast<size_t>(B) * groups);
    const Tensor& X = x.val();
    for (int bb = 0; bb < B; ++bb)
        for (int g = 0; g < groups; ++g) {
            real mean = 0, var = 0;
            int64_t base = ((static_cast<int64_t>(bb) * C + static_cast<int64_t>(g) * cg) * H) * W;
            for (int64_t i = 0; i < gsize; ++i) mean += X.v[static_cast<size_t>(base + i)];
            mean /= static_cast<real>(gsize);
            for (int64_t i = 0; i < gsize; ++i) {
                real d = X.v[static_cast<size_t>(base + i)] - mean;
                var += d * d;
            }
            var /= static_cast<real>(gsize);
            real istd = 1.0 / std::sqrt(var + eps);
            inv_std[static_cast<size_t>(bb) * groups + g] = istd;
            for (int c = 0; c < cg; ++c) {
                int ch = g * cg + c;
                real ga = gamma.val()[ch], be = beta.val()[ch];
                int64_t cbase = base + static_cast<int64_t>(c) * H * W;
                for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) {
                    real xh = (X.v[static_cast<size_t>(cbase + i)] - mean) * istd;
                    xhat.v[static_cast<size_t>(cbase + i)] = xh;
                    out.v[static_cast<size_t>(cbase + i)] = ga * xh + be;
                }
            }
        }
    auto nx = x.node(), ng = gamma.node(), nbta = beta.node();
    return Var::from_node(detail::make_op(
        std::move(out), {nx, ng, nbta},
        [nx, ng, nbta, B, C, H, W, groups, cg, gsize, xh = std::move(xhat),
         istds = std::move(inv_std)](Node& nd) {
            for (int bb = 0; bb < B; ++bb)
                for (int g = 0; g < groups; ++g) {
                    int64_t base = ((static_cast<int64_t>(bb) * C + static_cast<int64_t>(g) * cg) * H) * W;
                    real istd = istds[static_cast<size_t>(bb) * groups + g];
                    if (ng->requires_grad || nbta->requires_grad) {
                        for (int c = 0; c < cg; ++c) {
                            int ch = g * cg + c;
                            int64_t cbase = base + static_cast<int64_t>(c) * H * W;
                            real dg = 0, db = 0;
                            for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) {
                                real go = nd.grad.v[static_cast<size_t>(cbase + i)];
                                dg += go * xh.v[static_cast<size_t>(cbase + i)];
                                db += go;
                            }
                            if (ng->requires_grad) ng->grad[ch] += dg;
                            if (nbta->requires_grad) nbta->grad[ch] += db;
                        }
                    }
                    if (nx->requires_grad) {
                        // dyh = dy * gamma; dx = istd*(dyh - mean(dyh) - xhat*mean(dyh*xhat))
                        real m1 = 0, m2 = 0;
                        for (int c = 0; c < cg; ++c) {
                            real ga = ng->val[g * cg + c];
                            int64_t cbase = base + static_cast<int64_t>(c) * H * W;
                            for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) {
                                real dyh = nd.grad.v[static_cast<size_t>(cbase + i)] * ga;
                                m1 += dyh;
                                m2 += dyh * xh.v[static_cast<size_t>(cbase + i)];
                            }
                        }
                        m1 /= static_cast<real>(gsize);
                        m2 /= static_cast<real>(gsize);
                        for (int c = 0; c < cg; ++c) {
                            real ga = ng->val[g * cg + c];
                            int64_t cbase = base + static_cast<int64_t>(c) * H * W;
                            for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) {
                                real dyh = nd.grad.v[static_cast<size_t>(cbase + i)] * ga;
                                real xhv = xh.v[static_cast<size_t>(cbase + i)];
                                nx->grad.v[static_cast<size_t>(cbase + i)] += istd * (dyh - m1 - xhv * m2);
                            }
                        }
                    }
                }
        }));
}

// add a per-(batch,channel) bias over spatial dims: x [B,C,H,W] + v [B,C]
inline Var add_channel_bias(const Var& x, const Var& v) {
    auto s = x.shape();
    if (s.size() != 4 || v.shape() != std::vector<int>{s[0], s[1]})
        throw ValidationError("add_channel_bias: bad shapes");
    int B = s[0], C = s[1], HW = s[2] * s[3];
    Tensor out = x.val();
    for (int bc = 0; bc < B * C; ++bc) {
        real bias = v.val()[bc];
        real* p = &out.v[static_cast<size_t>(bc) * HW];
        for (int i = 0; i < HW; ++i) p[i] += bias;
    }
    auto nx = x.node(), nv = v.node();
    return Var::from_node(detail::make_op(std::move(out), {nx, nv}, [nx, nv, B, C, HW](Node& nd) {
        if (nx->requires_grad)
            for (int64_t i = 0; i < nd.grad.numel(); ++i) nx->grad[i] += nd.grad[i];
        if (nv->requires_grad)
            for (int bc = 0; bc < B * C; ++bc) {
                const real* g = &nd.grad.v[static_cast<size_t>(bc) * HW];
                real acc = 0;
                for (int i = 0; i < HW; ++i) acc += g[i];
                nv->grad[bc] += acc;
            }
    }));
}

inline Var upsample_nearest2x(const Var& x) {
    auto s = x.shape();
    if (s.size() != 4) throw ValidationError("upsample_nearest2x: need 4d");
    int B = s[0], C = s[1], H = s[2], W = s[3];
    Tensor out({B, C, H * 2, W * 2});
    for (int bc = 0; bc < B * C; ++bc) {
        const real* src = &x.val().v[static_cast<size_t>(bc) * H * W];
        real* dst = &out.v[static_cast<size_t>(bc) * H * W * 4];
        for (int h = 0; h < 2 * H; ++h)
            for (int w = 0; w < 2 * W; ++w)
                dst[static_cast<size_t>(h) * 2 * W + w] = src[static_cast<size_t>(h / 2) * W + w / 2];
    }
    auto nx = x.node();
    return Var::from_node(detail::make_op(std::move(out), {nx}, [nx, B, C, H, W](Node& nd) {
        if (!nx->requires_grad) return;
        for (int bc = 0; bc < B * C; ++bc) {
            const real* g = &nd.grad.v[static_cast<size_t>(bc) * H * W * 4];
            real* dx = &nx->grad.v[static_cast<size_t>(bc) * H * W];
            for (int h = 0; h < 2 * H; ++h)
                for (int w = 0; w < 2 * W; ++w)
                    dx[static_cast<size_t>(h / 2) * W + w / 2] += g[static_cast<size_t>(h) * 2 * W + w];
        }
    }));
}

// concat along channel axis: [B,C1,H,W] + [B,C2,H,W]
inline Var concat_channels(const Var& a, const Var& b) {
    auto sa = a.shape(), sb = b.shape();
    if (sa.size() != 4 || sb.size() != 4 || sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
        throw ValidationError("concat_channels: bad shapes");
    int B = sa[0], C1 = sa[1], C2 = sb[1], HW = sa[2] * sa[3];
    Tensor out({B, C1 + C2, sa[2], sa[3]});
    for (int bb = 0; bb < B; ++bb) {
        std::copy_n(&a.val().v[static_cast<size_t>(bb) * C1 * HW], static_cast<size_t>(C1) * HW,
                    &out.v[static_cast<size_t>(bb) * (C1 + C2) * HW]);
        std::copy_n(&b.val().v[static_cast<size_t>(bb) * C2 * HW], static_cast<size_t>(C2) * HW,
                    &out.v[static_cast<size_t>(bb) * (C1 + C2) * HW + static_cast<size_t>(C1) * HW]);
    }
    auto na = a.node(), nb = b.node();
    return Var::from_node(detail::make_op(std::move(out), {na, nb}, [na, nb, B, C1, C2, HW](Node& nd) {
        for (int bb = 0; bb < B; ++bb) {
            const real* g = &nd.grad.v[static_cast<size_t>(bb) * (C1 + C2) * HW];
            if (na->requires_grad) {
                real* dst = &na->grad.v[static_cast<size_t>(bb) * C1 * HW];
                for (int64_t i = 0; i < static_cast<int64_t>(C1) * HW; ++i) dst[i] += g[i];
            }
            if (nb->requires_grad) {
                real* dst = &nb->grad.v[static_cast<size_t>(bb) * C2 * HW];
                const real* g2 = g + static_cast<size_t>(C1) * HW;
                for (int64_t i = 0; i < static_cast<int64_t>(C2) * HW; ++i) dst[i] += g2[i];
            }
        }
    }));
}

// x [B,M,N] -> [M,N] for one batch index
inline Var select_batch(const Var& x, int b) {
    auto s = x.shape();
    if (s.size() != 3 || b < 0 || b >= s[0]) throw ValidationError("select_batch: bad index");
    int M = s[1], N = s[2];
    Tensor out({M, N});
    std::copy_n(&x.val().v[static_cast<size_t>(b) * M * N], static_cast<size_t>(M) * N, out.v.data());
    auto nx = x.node();
    return Var::from_node(detail::make_op(std::move(out), {nx}, [nx, b, M, N](Node& nd) {
        if (!nx->requires_grad) return;
        real* dst = &nx->grad.v[static_cast<size_t>(b) * M * N];
        for (int64_t i = 0; i < static_cast<int64_t>(M) * N; ++i) dst[i] += nd.grad[i];
    }));
}

// gather columns: x [M,N], idx -> [M,K]
inline Var gather_cols(const Var& x, const std::vector<int>& idx) {
    auto s = x.shape();
    if (s.size() != 2) throw ValidationError("gather_cols: need 2d");
    int M = s[0], N = s[1], K = static_cast<int>(idx.size());
    for (int j : idx)
        if (j < 0 || j >= N) throw ValidationError("gather_cols: index out of range");
    Tensor out({M, K});
    for (int i = 0; i < M; ++i)
        for (int k = 0; k < K; ++k) out.at2(i, k) = x.val().at2(i, idx[static_cast<size_t>(k)]);
    auto nx = x.node();
    return Var::from_node(detail::make_op(std::move(out), {nx}, [nx, idx, M, K](Node& nd) {
        if (!nx->requires_grad) return;
        for (int i = 0; i < M; ++i)
            for (int k = 0; k < K; ++k) nx->grad.at2(i, idx[static_cast<size_t>(k)]) += nd.grad.at2(i, k);
    }));
}

// softmax over the last axis of [.., N]
inline Var softmax_lastdim(const Var& x) {
    auto s = x.shape();
    int N = s.back();
    int64_t rows = x.numel() / N;
    Tensor out = x.val();
    for (int64_t r = 0; r < rows; ++r) {
        real* p = &out.v[static_cast<size_t>(r) * N];
        real mx = p[0];
        for (int i = 1; i < N; ++i) mx = std::max(mx, p[i]);
        real sum = 0;
        for (int i = 0; i < N; ++i) {
            p[i] = std::exp(p[i] - mx);
            sum += p[i];
        }
        for (int i = 0; i < N; ++i) p[i] /= sum;
    }
    auto nx = x.node();
    auto y = out;
    return Var::from_node(detail::make_op(std::move(out), {nx}, [nx, rows, N, y = std::move(y)](Node& nd) {
        if (!nx->requires_grad) return;
        for (int64_t r = 0; r < rows; ++r) {
            const real* yr = &y.v[static_cast<size_t>(r) * N];
            const real* g = &nd.grad.v[static_cast<size_t>(r) * N];
            real dot = 0;
            for (int i = 0; i < N; ++i) dot += g[i] * yr[i];
            real* dx = &nx->grad.v[static_cast<size_t>(r) * N];
            for (int i = 0; i < N; ++i) dx[i] += yr[i] * (g[i] - dot);
        }
    }));
}

// softmax over axis 0 of [M,K] (each column becomes a distribution over rows)
inline Var softmax_cols(const Var& x) {
    auto s = x.shape();
    if (s.size() != 2) throw ValidationError("softmax_cols: need 2d");
    int M = s[0], K = s[1];
    Tensor out = x.val();
    for (int k = 0; k < K; ++k) {
        real mx = out.at2(0, k);
        for (int i = 1; i < M; ++i) mx = std::max(mx, out.at2(i, k));
        real sum = 0;
        for (int i = 0; i < M; ++i) {
            real e = std::exp(out.at2(i, k) - mx);
            out.at2(i, k) = e;
            sum += e;
        }
        for (int i = 0; i < M; ++i) out.at2(i, k) /= sum;
    }
    auto nx = x.node();
    auto y = out;
    return Var::from_node(detail::make_op(std::move(out), {nx}, [nx, M, K, y = std::move(y)](Node& nd) {
        if (!nx->requires_grad) return;
        for (int k = 0; k < K; ++k) {
            real dot = 0;
            for (int i = 0; i < M; ++i) dot += nd.grad.at2(i, k) * y.at2(i, k);
            for (int i = 0; i < M; ++i)
                nx->grad.at2(i, k) += y.at2(i, k) * (nd.grad.at2(i, k) - dot);
        }
    }));
}

// Depthwise 2D convolution of K column-maps with one fixed kernel, symmetric
// (edge-repeating) reflection at the borders. x: [H*W, K] column-major maps.
// The kernel is a constant, not a graph node.
inline Var blur_cols_fixed(const Var& x, int H, int W, const Tensor& kernel) {
    auto s = x.shape();
    if (s.size() != 2 || s[0] != H * W) throw ValidationError("blur_cols_fixed: bad shapes");
    if (kernel.ndim() != 2 || kernel.dim(0) % 2 == 0 || kernel.dim(1) % 2 == 0)
        throw ValidationError("blur_cols_fixed: kernel must be odd-sized 2d");
    int K = s[1];
    int kh = kernel.dim(0), kw = kernel.dim(1);
    int ch = kh / 2, cw = kw / 2;
    auto reflect = [](int i, int n) {
        while (i < 0 || i >= n) {
            if (i < 0) i = -i - 1;
            if (i >= n) i = 2 * n - 1 - i;
        }
        return i;
    };
    Tensor out({H * W, K});
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            for (int u = 0; u < kh; ++u) {
                int sh = reflect(h + u - ch, H);
                for (int vv = 0; vv < kw; ++vv) {
                    int sw = reflect(w + vv - cw, W);
                    real kv = kernel.at2(u, vv);
                    if (kv == 0.0) continue;
                    const real* src = &x.val().v[static_cast<size_t>(sh * W + sw) * K];
                    real* dst = &out.v[static_cast<size_t>(h * W + w) * K];
                    for (int k = 0; k < K; ++k) dst[k] += kv * src[k];
                }
            }
    auto nx = x.node();
    return Var::from_node(detail::make_op(std::move(out), {nx}, [nx, H, W, K, kernel, ch, cw,
                                                                 reflect](Node& nd) {
        if (!nx->requires_grad) return;
        int kh2 = kernel.dim(0), kw2 = kernel.dim(1);
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
                for (int u = 0; u < kh2; ++u) {
                    int sh = reflect(h + u - ch, H);
                    for (int vv = 0; vv < kw2; ++vv) {
                        int sw = reflect(w + vv - cw, W);
                        real kv = kernel.at2(u, vv);
                        if (kv == 0.0) continue;
                        const real* g = &nd.grad.v[static_cast<size_t>(h * W + w) * K];
                        real* dx = &nx->grad.v[static_cast<size_t>(sh * W + sw) * K];
                        for (int k = 0; k < K; ++k) dx[k] += kv * g[k];
                    }
                }
    }));
}

// column-wise max of [M,K] -> [K]; subgradient goes to the first argmax
inline Var max_cols(const Var& x) {
    auto s = x.shape();
    if (s.size() != 2) throw ValidationError("max_cols: need 2d");
    int M = s[0], K = s[1];
    Tensor out({K});
    std::vector<int> arg(static_cast<size_t>(K), 0);
    for (int k = 0; k < K; ++k) {
        real best = x.val().at2(0, k);
        int bi = 0;
        for (int i = 1; i < M; ++i) {
            real v = x.val().at2(i, k);
            if (v > best) {
                best = v;
                bi = i;
            }
        }
        out[k] = best;
        arg[static_cast<size_t>(k)] = bi;
    }
    auto nx = x.node();
    return Var::from_node(detail::make_op(std::move(out), {nx}, [nx, K, arg = std::move(arg)](Node& nd) {
        if (!nx->requires_grad) return;
        for (int k = 0; k < K; ++k) nx->grad.at2(arg[static_cast<size_t>(k)], k) += nd.grad[k];
    }));
}

// max over all elements -> scalar
inline Var max_all(const Var& x) {
    int64_t n = x.numel();
    if (n == 0) throw ValidationError("max_all: empty");
    real best = x.val()[0];
    int64_t bi = 0;
    for (int64_t i = 1; i < n; ++i)
        if (x.val()[i] > best) {
            best = x.val()[i];
            bi = i;
        }
    Tensor out({1}, best);
    auto nx = x.node();
    return Var::from_node(detail::make_op(std::move(out), {nx}, [nx, bi](Node& nd) {
        if (nx->requires_grad) nx->grad[bi] += nd.grad[0];
    }));
}

inline Var sum_all(const Var& x) {
    Tensor out({1}, x.val().sum());
    auto nx = x.node();
    return Var::from_node(detail::make_op(std::move(out), {nx}, [nx](Node& nd) {
        if (!nx->requires_grad) return;
        for (int64_t i = 0; i < nx->grad.numel(); ++i) nx->grad[i] += nd.grad[0];
    }));
}

inline Var mean_all(const Var& x) {
    int64_t n = x.numel();
    Tensor out({1}, x.val().sum() / static_cast<real>(n));
    auto nx = x.node();
    return Var::from_node(detail::make_op(std::move(out), {nx}, [nx, n](Node& nd) {
        if (!nx->requires_grad) return;
        real g = nd.grad[0] / static_cast<real>(n);
        for (int64_t i = 0; i < nx->grad.numel(); ++i) nx->grad[i] += g;
    }));
}

// mean squared error against a constant target
inline Var mse(const Var& pred, const Tensor& target) {
    if (pred.shape() != target.shape) throw ValidationError("mse: shape mismatch");
    int64_t n = pred.numel();
    real acc = 0;
    for (int64_t i = 0; i < n; ++i) {
        real d = pred.val()[i] - target[i];
        acc += d * d;
    }
    Tensor out({1}, acc / static_cast<real>(n));
    auto np = pred.node();
    return Var::from_node(detail::make_op(std::move(out), {np}, [np, target, n](Node& nd) {
        if (!np->requires_grad) return;
        real g = 2.0 * nd.grad[0] / static_cast<real>(n);
        for (int64_t i = 0; i < n; ++i) np->grad[i] += g * (np->val[i] - target[i]);
    }));
}

} // namespace handgen
