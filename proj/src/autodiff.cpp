#include "vmnf/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace vmnf {

namespace {

NodePtr make_node(const char* op, Tensor value, std::vector<NodePtr> parents,
                  std::function<void(Node&)> bw) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backward_fn = std::move(bw);
    return n;
}

// Normalized 2-D view of a rank <= 2 shape: scalar -> 1x1, vector -> 1xN.
struct View2 {
    std::size_t r, c;
};

View2 view2(const Shape& s, const char* op) {
    if (s.size() > 2)
        throw ShapeError(std::string(op) + ": rank > 2 unsupported, got " + shape_str(s));
    if (s.empty()) return {1, 1};
    if (s.size() == 1) return {1, s[0]};
    return {s[0], s[1]};
}

struct BcastPlan {
    View2 out;
    Shape out_shape;
};

BcastPlan bcast_plan(const char* op, const Shape& sa, const Shape& sb) {
    View2 a = view2(sa, op), b = view2(sb, op);
    if ((a.r != b.r && a.r != 1 && b.r != 1) || (a.c != b.c && a.c != 1 && b.c != 1))
        throw ShapeError(std::string(op) + ": shapes " + shape_str(sa) + " and " +
                         shape_str(sb) + " do not broadcast");
    View2 out{std::max(a.r, b.r), std::max(a.c, b.c)};
    std::size_t rank = std::max(sa.size(), sb.size());
    Shape os;
    if (rank == 2)
        os = {out.r, out.c};
    else if (rank == 1)
        os = {out.c};
    return {out, os};
}

// Accumulate a gradient shaped like `out` into an operand with shape `target`,
// summing over broadcast axes.
void reduce_accumulate(const Tensor& g, Tensor& acc, const char* op) {
    View2 go = view2(g.shape(), op), to = view2(acc.shape(), op);
    const double* gd = g.data();
    double* ad = acc.data();
    if (go.r == to.r && go.c == to.c) {
        for (std::size_t i = 0; i < g.size(); ++i) ad[i] += gd[i];
        return;
    }
    for (std::size_t i = 0; i < go.r; ++i) {
        std::size_t ti = to.r == 1 ? 0 : i;
        for (std::size_t j = 0; j < go.c; ++j) {
            std::size_t tj = to.c == 1 ? 0 : j;
            ad[ti * to.c + tj] += gd[i * go.c + j];
        }
    }
}

template <typename Fwd, typename BwdA, typename BwdB>
NodePtr binary_bcast(const char* op, const NodePtr& a, const NodePtr& b, Fwd fwd, BwdA bwa,
                     BwdB bwb) {
    BcastPlan plan = bcast_plan(op, a->value.shape(), b->value.shape());
    View2 av = view2(a->value.shape(), op), bv = view2(b->value.shape(), op);
    Tensor out(plan.out_shape);
    const double* ad = a->value.data();
    const double* bd = b->value.data();
    double* od = out.data();
    const std::size_t oc = plan.out.c;
    if (a->value.same_shape(b->value)) {
        for (std::size_t i = 0; i < out.size(); ++i) od[i] = fwd(ad[i], bd[i]);
    } else {
        for (std::size_t i = 0; i < plan.out.r; ++i) {
            std::size_t ai = av.r == 1 ? 0 : i, bi = bv.r == 1 ? 0 : i;
            for (std::size_t j = 0; j < oc; ++j) {
                std::size_t aj = av.c == 1 ? 0 : j, bj = bv.c == 1 ? 0 : j;
                od[i * oc + j] = fwd(ad[ai * av.c + aj], bd[bi * bv.c + bj]);
            }
        }
    }
    return make_node(op, std::move(out), {a, b}, [op, bwa, bwb](Node& self) {
        const NodePtr& pa = self.parents[0];
        const NodePtr& pb = self.parents[1];
        View2 av2 = view2(pa->value.shape(), op), bv2 = view2(pb->value.shape(), op);
        View2 ov = view2(self.value.shape(), op);
        const double* gd = self.grad.data();
        const double* ad2 = pa->value.data();
        const double* bd2 = pb->value.data();
        for (std::size_t i = 0; i < ov.r; ++i) {
            std::size_t ai = av2.r == 1 ? 0 : i, bi = bv2.r == 1 ? 0 : i;
            for (std::size_t j = 0; j < ov.c; ++j) {
                std::size_t aj = av2.c == 1 ? 0 : j, bj = bv2.c == 1 ? 0 : j;
                double g = gd[i * ov.c + j];
                double va = ad2[ai * av2.c + aj], vb = bd2[bi * bv2.c + bj];
                if (pa->requires_grad) pa->grad.data()[ai * av2.c + aj] += bwa(g, va, vb);
                if (pb->requires_grad) pb->grad.data()[bi * bv2.c + bj] += bwb(g, va, vb);
            }
        }
    });
}

template <typename Fwd, typename Bwd>
NodePtr unary_map(const char* op, const NodePtr& a, Fwd fwd, Bwd bwd_factor) {
    Tensor out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a->value[i]);
    return make_node(op, std::move(out), {a}, [bwd_factor](Node& self) {
        const NodePtr& p = self.parents[0];
        if (!p->requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            p->grad[i] += self.grad[i] * bwd_factor(p->value[i], self.value[i]);
    });
}

// C (+)= A * B with optional transposes, row-major.
void mm_nn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
           std::size_t n, bool accumulate) {
    if (!accumulate) std::fill(C, C + m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* Ai = A + i * k;
        double* Ci = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            double a = Ai[p];
            if (a == 0.0) continue;
            const double* Bp = B + p * n;
            for (std::size_t j = 0; j < n; ++j) Ci[j] += a * Bp[j];
        }
    }
}

// C (+)= A * B^T, A is [m,k], B is [n,k].
void mm_nt(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
           std::size_t n, bool accumulate) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* Ai = A + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* Bj = B + j * k;
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += Ai[p] * Bj[p];
            if (accumulate)
                C[i * n + j] += s;
            else
                C[i * n + j] = s;
        }
    }
}

// C (+)= A^T * B, A is [k,m], B is [k,n].
void mm_tn(const double* A, const double* B, double* C, std::size_t m, std::size_t k,
           std::size_t n, bool accumulate) {
    if (!accumulate) std::fill(C, C + m * n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
        const double* Ap = A + p * m;
        const double* Bp = B + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            double a = Ap[i];
            if (a == 0.0) continue;
            double* Ci = C + i * n;
            for (std::size_t j = 0; j < n; ++j) Ci[j] += a * Bp[j];
        }
    }
}

}  // namespace

NodePtr leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

NodePtr constant(Tensor value) { return leaf(std::move(value), false); }
NodePtr constant_scalar(double v) { return leaf(Tensor::scalar(v), false); }

NodePtr add(const NodePtr& a, const NodePtr& b) {
    return binary_bcast(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
    return binary_bcast(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

NodePtr mul(const NodePtr& a, const NodePtr& b) {
    return binary_bcast(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double g, double, double y) { return g * y; },
        [](double g, double x, double) { return g * x; });
}

NodePtr exp(const NodePtr& a) {
    return unary_map(
        "exp", a, [](double x) { return std::exp(x); },
        [](double, double out) { return out; });
}

NodePtr log(const NodePtr& a) {
    for (std::size_t i = 0; i < a->value.size(); ++i)
        if (!(a->value[i] > 0.0))
            throw DomainError("log: non-positive input " + std::to_string(a->value[i]));
    return unary_map(
        "log", a, [](double x) { return std::log(x); },
        [](double in, double) { return 1.0 / in; });
}

NodePtr tanh(const NodePtr& a) {
    return unary_map(
        "tanh", a, [](double x) { return std::tanh(x); },
        [](double, double out) { return 1.0 - out * out; });
}

NodePtr neg(const NodePtr& a) {
    return unary_map(
        "neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

NodePtr max_const(const NodePtr& a, double c) {
    Tensor out(a->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a->value[i], c);
    return make_node("max_const", std::move(out), {a}, [c](Node& self) {
        const NodePtr& p = self.parents[0];
        if (!p->requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (p->value[i] > c) p->grad[i] += self.grad[i];
    });
}

NodePtr scale(const NodePtr& a, double k) {
    return unary_map(
        "scale", a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}

NodePtr add_const(const NodePtr& a, double c) {
    return unary_map(
        "add_const", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    const Shape& sa = a->value.shape();
    const Shape& sb = b->value.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        throw ShapeError("matmul: incompatible shapes " + shape_str(sa) + " x " + shape_str(sb));
    std::size_t m = sa[0], k = sa[1], n = sb[1];
    Tensor out(Shape{m, n});
    mm_nn(a->value.data(), b->value.data(), out.data(), m, k, n, false);
    return make_node("matmul", std::move(out), {a, b}, [m, k, n](Node& self) {
        const NodePtr& pa = self.parents[0];
        const NodePtr& pb = self.parents[1];
        if (pa->requires_grad)
            mm_nt(self.grad.data(), pb->value.data(), pa->grad.data(), m, n, k, true);
        if (pb->requires_grad)
            mm_tn(pa->value.data(), self.grad.data(), pb->grad.data(), k, m, n, true);
    });
}

NodePtr transpose(const NodePtr& a) {
    const Shape& s = a->value.shape();
    if (s.size() != 2) throw ShapeError("transpose: need rank 2, got " + shape_str(s));
    std::size_t r = s[0], c = s[1];
    Tensor out(Shape{c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.at(j, i) = a->value.at(i, j);
    return make_node("transpose", std::move(out), {a}, [r, c](Node& self) {
        const NodePtr& p = self.parents[0];
        if (!p->requires_grad) return;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) p->grad.data()[i * c + j] += self.grad.at(j, i);
    });
}

NodePtr matrix_inverse(const NodePtr& a) {
    const Shape& s = a->value.shape();
    if (s.size() != 2 || s[0] != s[1])
        throw ShapeError("matrix_inverse: need square matrix, got " + shape_str(s));
    const std::size_t d = s[0];
    // Gauss-Jordan with partial pivoting on [A | I].
    std::vector<double> aug(d * 2 * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) aug[i * 2 * d + j] = a->value.at(i, j);
        aug[i * 2 * d + d + i] = 1.0;
    }
    for (std::size_t col = 0; col < d; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < d; ++r)
            if (std::abs(aug[r * 2 * d + col]) > std::abs(aug[piv * 2 * d + col])) piv = r;
        if (aug[piv * 2 * d + col] == 0.0)
            throw DomainError("matrix_inverse: singular matrix");
        if (piv != col)
            for (std::size_t j = 0; j < 2 * d; ++j)
                std::swap(aug[piv * 2 * d + j], aug[col * 2 * d + j]);
        double inv_p = 1.0 / aug[col * 2 * d + col];
        for (std::size_t j = 0; j < 2 * d; ++j) aug[col * 2 * d + j] *= inv_p;
        for (std::size_t r = 0; r < d; ++r) {
            if (r == col) continue;
            double f = aug[r * 2 * d + col];
            if (f == 0.0) continue;
            for (std::size_t j = 0; j < 2 * d; ++j) aug[r * 2 * d + j] -= f * aug[col * 2 * d + j];
        }
    }
    Tensor out(Shape{d, d});
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) out.at(i, j) = aug[i * 2 * d + d + j];
    // dA = -Y^T g Y^T for Y = A^{-1}
    return make_node("matrix_inverse", std::move(out), {a}, [d](Node& self) {
        const NodePtr& p = self.parents[0];
        if (!p->requires_grad) return;
        std::vector<double> tmp(d * d);
        mm_tn(self.value.data(), self.grad.data(), tmp.data(), d, d, d, false);  // Y^T g
        std::vector<double> ytgyt(d * d);
        mm_nt(tmp.data(), self.value.data(), ytgyt.data(), d, d, d, false);  // (Y^T g) Y^T
        for (std::size_t i = 0; i < d * d; ++i) p->grad.data()[i] -= ytgyt[i];
    });
}

NodePtr sum_all(const NodePtr& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a->value.size(); ++i) s += a->value[i];
    return make_node("sum", Tensor::scalar(s), {a}, [](Node& self) {
        const NodePtr& p = self.parents[0];
        if (!p->requires_grad) return;
        double g = self.grad[0];
        for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += g;
    });
}

NodePtr mean_all(const NodePtr& a) {
    if (a->value.size() == 0) throw ShapeError("mean: empty tensor");
    double s = 0.0;
    for (std::size_t i = 0; i < a->value.size(); ++i) s += a->value[i];
    double inv_n = 1.0 / static_cast<double>(a->value.size());
    return make_node("mean", Tensor::scalar(s * inv_n), {a}, [inv_n](Node& self) {
        const NodePtr& p = self.parents[0];
        if (!p->requires_grad) return;
        double g = self.grad[0] * inv_n;
        for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += g;
    });
}

NodePtr row_sum(const NodePtr& a) {
    const Shape& s = a->value.shape();
    if (s.size() != 2) throw ShapeError("row_sum: need rank 2, got " + shape_str(s));
    std::size_t n = s[0], m = s[1];
    Tensor out(Shape{n});
    for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += a->value.data()[i * m + j];
        out[i] = acc;
    }
    return make_node("row_sum", std::move(out), {a}, [n, m](Node& self) {
        const NodePtr& p = self.parents[0];
        if (!p->requires_grad) return;
        for (std::size_t i = 0; i < n; ++i) {
            double g = self.grad[i];
            for (std::size_t j = 0; j < m; ++j) p->grad.data()[i * m + j] += g;
        }
    });
}

NodePtr col_mean(const NodePtr& a) {
    const Shape& s = a->value.shape();
    if (s.size() != 2) throw ShapeError("col_mean: need rank 2, got " + shape_str(s));
    std::size_t n = s[0], m = s[1];
    if (n == 0) throw ShapeError("col_mean: empty batch");
    Tensor out(Shape{m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out[j] += a->value.data()[i * m + j];
    double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < m; ++j) out[j] *= inv_n;
    return make_node("col_mean", std::move(out), {a}, [n, m, inv_n](Node& self) {
        const NodePtr& p = self.parents[0];
        if (!p->requires_grad) return;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) p->grad.data()[i * m + j] += self.grad[j] * inv_n;
    });
}

NodePtr broadcast_to(const NodePtr& a, const Shape& target) {
    BcastPlan plan = bcast_plan("broadcast", a->value.shape(), target);
    if (plan.out_shape != target && !(target.empty() && plan.out_shape.empty()))
        throw ShapeError("broadcast: cannot expand " + shape_str(a->value.shape()) + " to " +
                         shape_str(target));
    View2 av = view2(a->value.shape(), "broadcast"), ov = view2(target, "broadcast");
    Tensor out(target);
    for (std::size_t i = 0; i < ov.r; ++i) {
        std::size_t ai = av.r == 1 ? 0 : i;
        for (std::size_t j = 0; j < ov.c; ++j) {
            std::size_t aj = av.c == 1 ? 0 : j;
            out.data()[i * ov.c + j] = a->value.data()[ai * av.c + aj];
        }
    }
    return make_node("broadcast", std::move(out), {a}, [](Node& self) {
        const NodePtr& p = self.parents[0];
        if (!p->requires_grad) return;
        reduce_accumulate(self.grad, p->grad, "broadcast");
    });
}

NodePtr reshape(const NodePtr& a, const Shape& target) {
    if (shape_numel(target) != a->value.size())
        throw ShapeError("reshape: " + shape_str(a->value.shape()) + " to " + shape_str(target) +
                         " changes element count");
    Tensor out(target, a->value.vec_data());
    return make_node("reshape", std::move(out), {a}, [](Node& self) {
        const NodePtr& p = self.parents[0];
        if (!p->requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
    });
}

NodePtr gather_cols(const NodePtr& a, std::vector<std::size_t> idx) {
    const Shape& s = a->value.shape();
    if (s.size() != 2) throw ShapeError("gather_cols: need rank 2, got " + shape_str(s));
    std::size_t n = s[0], m = s[1];
    for (std::size_t j : idx)
        if (j >= m) throw IndexError("gather_cols: column " + std::to_string(j) + " out of range");
    Tensor out(Shape{n, idx.size()});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < idx.size(); ++t)
            out.data()[i * idx.size() + t] = a->value.data()[i * m + idx[t]];
    return make_node("gather_cols", std::move(out), {a},
                     [n, m, idx = std::move(idx)](Node& self) {
                         const NodePtr& p = self.parents[0];
                         if (!p->requires_grad) return;
                         for (std::size_t i = 0; i < n; ++i)
                             for (std::size_t t = 0; t < idx.size(); ++t)
                                 p->grad.data()[i * m + idx[t]] +=
                                     self.grad.data()[i * idx.size() + t];
                     });
}

NodePtr concat_cols(const NodePtr& a, const NodePtr& b) {
    const Shape& sa = a->value.shape();
    const Shape& sb = b->value.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[0] != sb[0])
        throw ShapeError("concat_cols: shapes " + shape_str(sa) + " and " + shape_str(sb) +
                         " do not align");
    std::size_t n = sa[0], ma = sa[1], mb = sb[1];
    Tensor out(Shape{n, ma + mb});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < ma; ++j) out.data()[i * (ma + mb) + j] = a->value.data()[i * ma + j];
        for (std::size_t j = 0; j < mb; ++j)
            out.data()[i * (ma + mb) + ma + j] = b->value.data()[i * mb + j];
    }
    return make_node("concat_cols", std::move(out), {a, b}, [n, ma, mb](Node& self) {
        const NodePtr& pa = self.parents[0];
        const NodePtr& pb = self.parents[1];
        for (std::size_t i = 0; i < n; ++i) {
            if (pa->requires_grad)
                for (std::size_t j = 0; j < ma; ++j)
                    pa->grad.data()[i * ma + j] += self.grad.data()[i * (ma + mb) + j];
            if (pb->requires_grad)
                for (std::size_t j = 0; j < mb; ++j)
                    pb->grad.data()[i * mb + j] += self.grad.data()[i * (ma + mb) + ma + j];
        }
    });
}

NodePtr logsumexp(const NodePtr& a) {
    const Shape& s = a->value.shape();
    if (s.empty() || s.size() > 2)
        throw ShapeError("logsumexp: need rank 1 or 2, got " + shape_str(s));
    std::size_t n = s.size() == 2 ? s[0] : 1;
    std::size_t m = s.size() == 2 ? s[1] : s[0];
    if (m == 0) throw ShapeError("logsumexp: empty axis");
    Tensor out(s.size() == 2 ? Shape{n} : Shape{});
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = a->value.data() + i * m;
        double mx = row[0];
        for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        double acc = 0.0;
        for (std::size_t j = 0; j < m; ++j) acc += std::exp(row[j] - mx);
        out[i] = mx + std::log(acc);
    }
    return make_node("logsumexp", std::move(out), {a}, [n, m](Node& self) {
        const NodePtr& p = self.parents[0];
        if (!p->requires_grad) return;
        for (std::size_t i = 0; i < n; ++i) {
            double lse = self.value[i];
            double g = self.grad[i];
            for (std::size_t j = 0; j < m; ++j)
                p->grad.data()[i * m + j] += g * std::exp(p->value.data()[i * m + j] - lse);
        }
    });
}

std::vector<Node*> topo_order(const NodePtr& root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // iterative post-order: parents first, node last
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

void backward_into(const NodePtr& loss) {
    if (loss->value.size() != 1)
        throw ContractError("backward: loss must be scalar, got shape " +
                            shape_str(loss->value.shape()));
    std::vector<Node*> order = topo_order(loss);
    for (Node* n : order) n->grad = Tensor(n->value.shape());
    loss->grad = Tensor(loss->value.shape(), 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->requires_grad && n->backward_fn) n->backward_fn(*n);
    }
}

GradMap backward(const NodePtr& loss, const ParamList& params) {
    for (const Param& p : params) p.node->grad = Tensor(p.node->value.shape());
    backward_into(loss);
    GradMap grads;
    for (const Param& p : params) {
        if (p.node->grad.size() != p.node->value.size())
            p.node->grad = Tensor(p.node->value.shape());
        grads[p.name] = p.node->grad;
    }
    return grads;
}

}  // namespace vmnf
