#include "dsadapt/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace dsadapt {

namespace {

thread_local bool g_grad_mode = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool rg = false;
    if (g_grad_mode) {
        for (const auto& p : parents)
            if (p && p->requires_grad) rg = true;
    }
    n->requires_grad = rg;
    if (rg) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(bw);
    }
    return n;
}

void accum(const Var& p, const Tensor& g) {
    if (!p || !p->requires_grad) return;
    p->ensure_grad();
    double* dst = p->grad.data();
    const double* src = g.data();
    for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

bool grad_mode_enabled() { return g_grad_mode; }

NoGradGuard::NoGradGuard() : prev_(g_grad_mode) { g_grad_mode = false; }
NoGradGuard::~NoGradGuard() { g_grad_mode = prev_; }

Var constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = false;
    return n;
}

Var parameter(Tensor v, std::string name) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    n->name = std::move(name);
    return n;
}

Var detach(const Var& x) { return constant(x->value); }

void backward(const Var& root) {
    if (!root) throw std::invalid_argument("backward: null root");
    if (root->value.numel() != 1)
        throw std::invalid_argument("backward: root must be scalar");
    if (!root->requires_grad) return;

    // iterative post-order DFS -> topological order
    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p && p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad.fill(1.0);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

// --- elementwise ---

Var add(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "add");
    Tensor out = a->value;
    const double* bd = b->value.data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bd[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        accum(self.parents[0], self.grad);
        accum(self.parents[1], self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "sub");
    Tensor out = a->value;
    const double* bd = b->value.data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bd[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        accum(self.parents[0], self.grad);
        Tensor neg = self.grad;
        for (std::size_t i = 0; i < neg.numel(); ++i) neg[i] = -neg[i];
        accum(self.parents[1], neg);
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a->value, b->value, "mul");
    Tensor out = a->value;
    const double* bd = b->value.data();
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bd[i];
    return make_node(std::move(out), {a, b}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        Tensor ga = self.grad, gb = self.grad;
        for (std::size_t i = 0; i < ga.numel(); ++i) {
            ga[i] *= bv[i];
            gb[i] *= av[i];
        }
        accum(self.parents[0], ga);
        accum(self.parents[1], gb);
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= s;
    return make_node(std::move(out), {a}, [s](Node& self) {
        Tensor g = self.grad;
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= s;
        accum(self.parents[0], g);
    });
}

Var leaky_relu(const Var& x, double negative_slope) {
    Tensor out = x->value;
    for (std::size_t i = 0; i < out.numel(); ++i)
        if (out[i] < 0.0) out[i] *= negative_slope;
    return make_node(std::move(out), {x}, [negative_slope](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        Tensor g = self.grad;
        for (std::size_t i = 0; i < g.numel(); ++i)
            if (xv[i] < 0.0) g[i] *= negative_slope;
        accum(self.parents[0], g);
    });
}

Var sigmoid(const Var& x) {
    Tensor out = x->value;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = stable_sigmoid(out[i]);
    return make_node(std::move(out), {x}, [](Node& self) {
        Tensor g = self.grad;
        const Tensor& y = self.value;
        for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= y[i] * (1.0 - y[i]);
        accum(self.parents[0], g);
    });
}

Var reshape(const Var& x, std::vector<int> shape) {
    Tensor out = x->value.reshaped(shape);
    return make_node(std::move(out), {x}, [](Node& self) {
        accum(self.parents[0], self.grad.reshaped(self.parents[0]->value.shape()));
    });
}

Var concat_channels(const Var& a, const Var& b) {
    const Tensor& av = a->value;
    const Tensor& bv = b->value;
    if (av.rank() != 3 || bv.rank() != 3 || av.dim(1) != bv.dim(1) || av.dim(2) != bv.dim(2))
        throw std::invalid_argument("concat_channels: incompatible shapes");
    Tensor out({av.dim(0) + bv.dim(0), av.dim(1), av.dim(2)});
    std::copy(av.data(), av.data() + av.numel(), out.data());
    std::copy(bv.data(), bv.data() + bv.numel(), out.data() + av.numel());
    return make_node(std::move(out), {a, b}, [](Node& self) {
        const auto& ap = self.parents[0];
        const auto& bp = self.parents[1];
        std::size_t na = ap->value.numel();
        if (ap->requires_grad) {
            Tensor ga(ap->value.shape());
            std::copy(self.grad.data(), self.grad.data() + na, ga.data());
            accum(ap, ga);
        }
        if (bp->requires_grad) {
            Tensor gb(bp->value.shape());
            std::copy(self.grad.data() + na, self.grad.data() + self.grad.numel(), gb.data());
            accum(bp, gb);
        }
    });
}

// --- reductions ---

Var vsum(const Var& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x->value.numel(); ++i) s += x->value[i];
    return make_node(Tensor::scalar(s), {x}, [](Node& self) {
        Tensor g = Tensor::full(self.parents[0]->value.shape(), self.grad[0]);
        accum(self.parents[0], g);
    });
}

Var vmean(const Var& x) {
    double n = static_cast<double>(x->value.numel());
    return scale(vsum(x), 1.0 / n);
}

// --- linear algebra ---

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
    const Tensor& av = a->value;
    const Tensor& bv = b->value;
    if (av.rank() != 2 || bv.rank() != 2) throw std::invalid_argument("matmul: rank-2 required");
    int m = trans_a ? av.dim(1) : av.dim(0);
    int ka = trans_a ? av.dim(0) : av.dim(1);
    int kb = trans_b ? bv.dim(1) : bv.dim(0);
    int n = trans_b ? bv.dim(0) : bv.dim(1);
    if (ka != kb) throw std::invalid_argument("matmul: inner dimensions differ");

    Tensor out({m, n});
    {
        CMapMat A(av.data(), av.dim(0), av.dim(1));
        CMapMat B(bv.data(), bv.dim(0), bv.dim(1));
        MapMat C(out.data(), m, n);
        if (!trans_a && !trans_b) C.noalias() = A * B;
        else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
        else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
        else C.noalias() = A.transpose() * B.transpose();
    }
    return make_node(std::move(out), {a, b}, [trans_a, trans_b](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        CMapMat A(av.data(), av.dim(0), av.dim(1));
        CMapMat B(bv.data(), bv.dim(0), bv.dim(1));
        CMapMat G(self.grad.data(), self.grad.dim(0), self.grad.dim(1));
        if (self.parents[0]->requires_grad) {
            Tensor ga(av.shape());
            MapMat GA(ga.data(), av.dim(0), av.dim(1));
            // d(opA) = G * opB^T, transposed back if opA was a transpose
            if (!trans_b) {
                if (!trans_a) GA.noalias() = G * B.transpose();
                else GA.noalias() = B * G.transpose();
            } else {
                if (!trans_a) GA.noalias() = G * B;
                else GA.noalias() = B.transpose() * G.transpose();
            }
            accum(self.parents[0], ga);
        }
        if (self.parents[1]->requires_grad) {
            Tensor gb(bv.shape());
            MapMat GB(gb.data(), bv.dim(0), bv.dim(1));
            if (!trans_a) {
                if (!trans_b) GB.noalias() = A.transpose() * G;
                else GB.noalias() = G.transpose() * A;
            } else {
                if (!trans_b) GB.noalias() = A * G;
                else GB.noalias() = G.transpose() * A.transpose();
            }
            accum(self.parents[1], gb);
        }
    });
}

Var dense(const Var& x, const Var& w, const Var& b) {
    const Tensor& xv = x->value;
    const Tensor& wv = w->value;
    if (xv.rank() != 1 || wv.rank() != 2 || wv.dim(1) != xv.dim(0))
        throw std::invalid_argument("dense: shape mismatch");
    int cout = wv.dim(0);
    Tensor out({cout});
    {
        CMapMat W(wv.data(), wv.dim(0), wv.dim(1));
        Eigen::Map<const Eigen::VectorXd> X(xv.data(), xv.dim(0));
        Eigen::Map<Eigen::VectorXd> Y(out.data(), cout);
        Y.noalias() = W * X;
    }
    if (b) {
        if (b->value.rank() != 1 || b->value.dim(0) != cout)
            throw std::invalid_argument("dense: bias shape mismatch");
        for (int i = 0; i < cout; ++i) out[i] += b->value[i];
    }
    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return make_node(std::move(out), std::move(parents), [](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        const Tensor& wv = self.parents[1]->value;
        CMapMat W(wv.data(), wv.dim(0), wv.dim(1));
        Eigen::Map<const Eigen::VectorXd> X(xv.data(), xv.dim(0));
        Eigen::Map<const Eigen::VectorXd> G(self.grad.data(), self.grad.dim(0));
        if (self.parents[0]->requires_grad) {
            Tensor gx(xv.shape());
            Eigen::Map<Eigen::VectorXd> GX(gx.data(), xv.dim(0));
            GX.noalias() = W.transpose() * G;
            accum(self.parents[0], gx);
        }
        if (self.parents[1]->requires_grad) {
            Tensor gw(wv.shape());
            MapMat GW(gw.data(), wv.dim(0), wv.dim(1));
            GW.noalias() = G * X.transpose();
            accum(self.parents[1], gw);
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad)
            accum(self.parents[2], self.grad);
    });
}

// --- conv / spatial ---

int conv_out_dim(int in, int kernel, int stride, int pad) {
    int out = (in + 2 * pad - kernel) / stride + 1;
    if (in + 2 * pad < kernel || out <= 0)
        throw std::invalid_argument("conv2d: input too small for kernel (in=" +
                                    std::to_string(in) + ", k=" + std::to_string(kernel) + ")");
    return out;
}

namespace {

Tensor im2col(const Tensor& x, int kh, int kw, int stride, int pad, int ho, int wo) {
    int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
    Tensor cols({cin * kh * kw, ho * wo});
    for (int c = 0; c < cin; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                double* row = cols.data() +
                              static_cast<std::size_t>((c * kh + ky) * kw + kx) * ho * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    const double* src = x.data() + (static_cast<std::size_t>(c) * h + iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < w) row[oy * wo + ox] = src[ix];
                    }
                }
            }
    return cols;
}

void col2im_accum(const Tensor& cols, Tensor& gx, int kh, int kw, int stride, int pad, int ho,
                  int wo) {
    int cin = gx.dim(0), h = gx.dim(1), w = gx.dim(2);
    for (int c = 0; c < cin; ++c)
        for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
                const double* row = cols.data() +
                                    static_cast<std::size_t>((c * kh + ky) * kw + kx) * ho * wo;
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    double* dst = gx.data() + (static_cast<std::size_t>(c) * h + iy) * w;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * stride + kx - pad;
                        if (ix >= 0 && ix < w) dst[ix] += row[oy * wo + ox];
                    }
                }
            }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    const Tensor& xv = x->value;
    const Tensor& wv = w->value;
    if (xv.rank() != 3 || wv.rank() != 4) throw std::invalid_argument("conv2d: bad ranks");
    if (wv.dim(1) != xv.dim(0))
        throw std::invalid_argument("conv2d: channel mismatch (input " +
                                    std::to_string(xv.dim(0)) + ", weight expects " +
                                    std::to_string(wv.dim(1)) + ")");
    int cout = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    int ho = conv_out_dim(xv.dim(1), kh, stride, pad);
    int wo = conv_out_dim(xv.dim(2), kw, stride, pad);

    Tensor cols = im2col(xv, kh, kw, stride, pad, ho, wo);
    Tensor out({cout, ho, wo});
    {
        CMapMat W(wv.data(), cout, wv.dim(1) * kh * kw);
        CMapMat C(cols.data(), cols.dim(0), cols.dim(1));
        MapMat Y(out.data(), cout, ho * wo);
        Y.noalias() = W * C;
        if (b) {
            for (int c = 0; c < cout; ++c) Y.row(c).array() += b->value[c];
        }
    }
    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    auto cache = std::make_shared<Tensor>(std::move(cols));
    return make_node(std::move(out), std::move(parents),
                     [cache, stride, pad, kh, kw, ho, wo](Node& self) {
                         const Var& xp = self.parents[0];
                         const Var& wp = self.parents[1];
                         int cout = wp->value.dim(0);
                         int kdim = wp->value.dim(1) * kh * kw;
                         CMapMat G(self.grad.data(), cout, ho * wo);
                         if (wp->requires_grad) {
                             Tensor gw(wp->value.shape());
                             MapMat GW(gw.data(), cout, kdim);
                             CMapMat C(cache->data(), kdim, ho * wo);
                             GW.noalias() = G * C.transpose();
                             accum(wp, gw);
                         }
                         if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
                             Tensor gb({cout});
                             for (int c = 0; c < cout; ++c) gb[c] = G.row(c).sum();
                             accum(self.parents[2], gb);
                         }
                         if (xp->requires_grad) {
                             Tensor dcols({kdim, ho * wo});
                             {
                                 CMapMat W(wp->value.data(), cout, kdim);
                                 MapMat DC(dcols.data(), kdim, ho * wo);
                                 DC.noalias() = W.transpose() * G;
                             }
                             Tensor gx(xp->value.shape());
                             col2im_accum(dcols, gx, kh, kw, stride, pad, ho, wo);
                             accum(xp, gx);
                         }
                     });
}

Var upsample_bilinear(const Var& x, int out_h, int out_w) {
    const Tensor& xv = x->value;
    if (xv.rank() != 3) throw std::invalid_argument("upsample_bilinear: rank-3 required");
    int c = xv.dim(0), h = xv.dim(1), w = xv.dim(2);
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("upsample_bilinear: bad output size");

    // precompute interpolation taps (half-pixel centers, clamped)
    struct Tap {
        int i0, i1;
        double w1;  // weight of i1; i0 gets 1-w1
    };
    auto make_taps = [](int in, int out) {
        std::vector<Tap> taps(out);
        double r = static_cast<double>(in) / out;
        for (int o = 0; o < out; ++o) {
            double s = (o + 0.5) * r - 0.5;
            if (s < 0.0) s = 0.0;
            int i0 = static_cast<int>(s);
            if (i0 > in - 1) i0 = in - 1;
            int i1 = std::min(i0 + 1, in - 1);
            taps[o] = {i0, i1, s - i0 > 1.0 ? 1.0 : s - i0};
        }
        return taps;
    };
    auto ty = std::make_shared<std::vector<Tap>>(make_taps(h, out_h));
    auto tx = std::make_shared<std::vector<Tap>>(make_taps(w, out_w));

    Tensor out({c, out_h, out_w});
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < out_h; ++oy) {
            const Tap& a = (*ty)[oy];
            for (int ox = 0; ox < out_w; ++ox) {
                const Tap& bb = (*tx)[ox];
                double v00 = xv.at(ch, a.i0, bb.i0), v01 = xv.at(ch, a.i0, bb.i1);
                double v10 = xv.at(ch, a.i1, bb.i0), v11 = xv.at(ch, a.i1, bb.i1);
                out.at(ch, oy, ox) = (1 - a.w1) * ((1 - bb.w1) * v00 + bb.w1 * v01) +
                                     a.w1 * ((1 - bb.w1) * v10 + bb.w1 * v11);
            }
        }
    return make_node(std::move(out), {x}, [ty, tx, c, out_h, out_w](Node& self) {
        const Var& xp = self.parents[0];
        if (!xp->requires_grad) return;
        Tensor gx(xp->value.shape());
        for (int ch = 0; ch < c; ++ch)
            for (int oy = 0; oy < out_h; ++oy) {
                const Tap& a = (*ty)[oy];
                for (int ox = 0; ox < out_w; ++ox) {
                    const Tap& bb = (*tx)[ox];
                    double g = self.grad.at(ch, oy, ox);
                    gx.at(ch, a.i0, bb.i0) += (1 - a.w1) * (1 - bb.w1) * g;
                    gx.at(ch, a.i0, bb.i1) += (1 - a.w1) * bb.w1 * g;
                    gx.at(ch, a.i1, bb.i0) += a.w1 * (1 - bb.w1) * g;
                    gx.at(ch, a.i1, bb.i1) += a.w1 * bb.w1 * g;
                }
            }
        accum(xp, gx);
    });
}

Var global_avg_pool(const Var& x) {
    const Tensor& xv = x->value;
    if (xv.rank() != 3) throw std::invalid_argument("global_avg_pool: rank-3 required");
    int c = xv.dim(0);
    double inv = 1.0 / (xv.dim(1) * xv.dim(2));
    Tensor out({c});
    for (int ch = 0; ch < c; ++ch) {
        const double* p = xv.data() + static_cast<std::size_t>(ch) * xv.dim(1) * xv.dim(2);
        double s = 0.0;
        for (int i = 0; i < xv.dim(1) * xv.dim(2); ++i) s += p[i];
        out[ch] = s * inv;
    }
    return make_node(std::move(out), {x}, [inv](Node& self) {
        const Var& xp = self.parents[0];
        if (!xp->requires_grad) return;
        const Tensor& xv = xp->value;
        Tensor gx(xv.shape());
        int hw = xv.dim(1) * xv.dim(2);
        for (int ch = 0; ch < xv.dim(0); ++ch) {
            double g = self.grad[ch] * inv;
            double* p = gx.data() + static_cast<std::size_t>(ch) * hw;
            for (int i = 0; i < hw; ++i) p[i] = g;
        }
        accum(xp, gx);
    });
}

Var instance_norm(const Var& x, double eps) {
    const Tensor& xv = x->value;
    if (xv.rank() != 3) throw std::invalid_argument("instance_norm: rank-3 required");
    int c = xv.dim(0);
    int hw = xv.dim(1) * xv.dim(2);
    Tensor out(xv.shape());
    auto inv_std = std::make_shared<std::vector<double>>(c);
    for (int ch = 0; ch < c; ++ch) {
        const double* src = xv.data() + static_cast<std::size_t>(ch) * hw;
        double* dst = out.data() + static_cast<std::size_t>(ch) * hw;
        double mean = 0;
        for (int i = 0; i < hw; ++i) mean += src[i];
        mean /= hw;
        double var = 0;
        for (int i = 0; i < hw; ++i) var += (src[i] - mean) * (src[i] - mean);
        var /= hw;
        double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[ch] = is;
        for (int i = 0; i < hw; ++i) dst[i] = (src[i] - mean) * is;
    }
    return make_node(std::move(out), {x}, [inv_std, c, hw](Node& self) {
        const Var& xp = self.parents[0];
        if (!xp->requires_grad) return;
        Tensor gx(xp->value.shape());
        for (int ch = 0; ch < c; ++ch) {
            const double* y = self.value.data() + static_cast<std::size_t>(ch) * hw;
            const double* g = self.grad.data() + static_cast<std::size_t>(ch) * hw;
            double* dst = gx.data() + static_cast<std::size_t>(ch) * hw;
            double g_mean = 0, gy_mean = 0;
            for (int i = 0; i < hw; ++i) {
                g_mean += g[i];
                gy_mean += g[i] * y[i];
            }
            g_mean /= hw;
            gy_mean /= hw;
            double is = (*inv_std)[ch];
            for (int i = 0; i < hw; ++i) dst[i] = is * (g[i] - g_mean - y[i] * gy_mean);
        }
        accum(xp, gx);
    });
}

Var channel_scale(const Var& x, const Var& v) {
    const Tensor& xv = x->value;
    const Tensor& vv = v->value;
    if (xv.rank() != 3 || vv.rank() != 1 || vv.dim(0) != xv.dim(0))
        throw std::invalid_argument("channel_scale: gate length must equal channel count");
    Tensor out = xv;
    int hw = xv.dim(1) * xv.dim(2);
    for (int c = 0; c < xv.dim(0); ++c) {
        double* p = out.data() + static_cast<std::size_t>(c) * hw;
        for (int i = 0; i < hw; ++i) p[i] *= vv[c];
    }
    return make_node(std::move(out), {x, v}, [hw](Node& self) {
        const Var& xp = self.parents[0];
        const Var& vp = self.parents[1];
        const Tensor& xv = xp->value;
        const Tensor& vv = vp->value;
        if (xp->requires_grad) {
            Tensor gx = self.grad;
            for (int c = 0; c < xv.dim(0); ++c) {
                double* p = gx.data() + static_cast<std::size_t>(c) * hw;
                for (int i = 0; i < hw; ++i) p[i] *= vv[c];
            }
            accum(xp, gx);
        }
        if (vp->requires_grad) {
            Tensor gv(vv.shape());
            for (int c = 0; c < xv.dim(0); ++c) {
                const double* g = self.grad.data() + static_cast<std::size_t>(c) * hw;
                const double* px = xv.data() + static_cast<std::size_t>(c) * hw;
                double s = 0.0;
                for (int i = 0; i < hw; ++i) s += g[i] * px[i];
                gv[c] = s;
            }
            accum(vp, gv);
        }
    });
}

Var row_softmax(const Var& m) {
    const Tensor& mv = m->value;
    if (mv.rank() != 2) throw std::invalid_argument("row_softmax: rank-2 required");
    int rows = mv.dim(0), cols = mv.dim(1);
    Tensor out(mv.shape());
    for (int r = 0; r < rows; ++r) {
        const double* src = mv.data() + static_cast<std::size_t>(r) * cols;
        double* dst = out.data() + static_cast<std::size_t>(r) * cols;
        double mx = src[0];
        for (int i = 1; i < cols; ++i) mx = std::max(mx, src[i]);
        double z = 0.0;
        for (int i = 0; i < cols; ++i) {
            dst[i] = std::exp(src[i] - mx);
            z += dst[i];
        }
        for (int i = 0; i < cols; ++i) dst[i] /= z;
    }
    return make_node(std::move(out), {m}, [rows, cols](Node& self) {
        const Var& mp = self.parents[0];
        if (!mp->requires_grad) return;
        Tensor gm(mp->value.shape());
        for (int r = 0; r < rows; ++r) {
            const double* y = self.value.data() + static_cast<std::size_t>(r) * cols;
            const double* g = self.grad.data() + static_cast<std::size_t>(r) * cols;
            double* dst = gm.data() + static_cast<std::size_t>(r) * cols;
            double dot = 0.0;
            for (int i = 0; i < cols; ++i) dot += y[i] * g[i];
            for (int i = 0; i < cols; ++i) dst[i] = y[i] * (g[i] - dot);
        }
        accum(mp, gm);
    });
}

// --- losses ---

Var softmax_xent_mean(const Var& logits, const Tensor& labels, int ignore_index) {
    const Tensor& lv = logits->value;
    if (lv.rank() != 3) throw std::invalid_argument("softmax_xent_mean: logits must be [K,H,W]");
    int k = lv.dim(0), h = lv.dim(1), w = lv.dim(2);
    if (labels.rank() != 2 || labels.dim(0) != h || labels.dim(1) != w)
        throw std::invalid_argument("softmax_xent_mean: label map shape mismatch");

    auto probs = std::make_shared<Tensor>(softmax_channels(lv));
    auto lab = std::make_shared<Tensor>(labels);
    long n = 0;
    double loss = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int cls = static_cast<int>(labels.at(y, x));
            if (cls == ignore_index) continue;
            if (cls < 0 || cls >= k)
                throw std::invalid_argument("softmax_xent_mean: label id " + std::to_string(cls) +
                                            " out of range");
            ++n;
            loss -= std::log(std::max(probs->at(cls, y, x), 1e-300));
        }
    if (n > 0) loss /= static_cast<double>(n);
    auto count = n;
    return make_node(Tensor::scalar(loss), {logits},
                     [probs, lab, ignore_index, count, k, h, w](Node& self) {
                         const Var& lp = self.parents[0];
                         if (!lp->requires_grad || count == 0) return;
                         double g = self.grad[0] / static_cast<double>(count);
                         Tensor gl(lp->value.shape());
                         for (int y = 0; y < h; ++y)
                             for (int x = 0; x < w; ++x) {
                                 int cls = static_cast<int>(lab->at(y, x));
                                 if (cls == ignore_index) continue;
                                 for (int c = 0; c < k; ++c) {
                                     double p = probs->at(c, y, x);
                                     gl.at(c, y, x) = g * (p - (c == cls ? 1.0 : 0.0));
                                 }
                             }
                         accum(lp, gl);
                     });
}

Var bce_logits_mean(const Var& logits, double target) {
    const Tensor& lv = logits->value;
    double n = static_cast<double>(lv.numel());
    double loss = 0.0;
    for (std::size_t i = 0; i < lv.numel(); ++i) {
        double x = lv[i];
        // max(x,0) - x*t + log(1 + exp(-|x|))
        loss += std::max(x, 0.0) - x * target + std::log1p(std::exp(-std::abs(x)));
    }
    loss /= n;
    return make_node(Tensor::scalar(loss), {logits}, [target, n](Node& self) {
        const Var& lp = self.parents[0];
        if (!lp->requires_grad) return;
        double g = self.grad[0] / n;
        Tensor gl(lp->value.shape());
        for (std::size_t i = 0; i < gl.numel(); ++i)
            gl[i] = g * (stable_sigmoid(lp->value[i]) - target);
        accum(lp, gl);
    });
}

// --- plain-tensor helpers ---

Tensor softmax_channels(const Tensor& logits) {
    if (logits.rank() != 3) throw std::invalid_argument("softmax_channels: [K,H,W] required");
    int k = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
    Tensor out(logits.shape());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double mx = logits.at(0, y, x);
            for (int c = 1; c < k; ++c) mx = std::max(mx, logits.at(c, y, x));
            double z = 0.0;
            for (int c = 0; c < k; ++c) {
                double e = std::exp(logits.at(c, y, x) - mx);
                out.at(c, y, x) = e;
                z += e;
            }
            for (int c = 0; c < k; ++c) out.at(c, y, x) /= z;
        }
    return out;
}

Tensor argmax_channels(const Tensor& scores) {
    if (scores.rank() != 3) throw std::invalid_argument("argmax_channels: [K,H,W] required");
    int k = scores.dim(0), h = scores.dim(1), w = scores.dim(2);
    Tensor out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int best = 0;
            double bv = scores.at(0, y, x);
            for (int c = 1; c < k; ++c)
                if (scores.at(c, y, x) > bv) {
                    bv = scores.at(c, y, x);
                    best = c;
                }
            out.at(y, x) = static_cast<double>(best);
        }
    return out;
}

}  // namespace dsadapt
