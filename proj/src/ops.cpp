#include "kmdx/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kmdx/kernels.hpp"

namespace kmdx {

namespace {

Tensor make_out(Shape shape, std::vector<double> value, bool traced) {
    Tensor out = Tensor::from_data(std::move(shape), std::move(value));
    out.node()->needs_grad = traced;
    return out;
}

// Backward closures bail out when the output never received a gradient
// (it did not feed the loss).
const std::vector<double>* out_grad(const NodePtr& n) {
    return n->grad.empty() ? nullptr : &n->grad;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()) + " differ");
}

// b broadcast over the leading dims of a; returns the number of repeats.
long long broadcast_repeats(const Tensor& a, const Tensor& b, const char* op) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sb.size() > sa.size() ||
        !std::equal(sb.rbegin(), sb.rend(), sa.rbegin()))
        throw ShapeError(std::string(op) + ": shape " + shape_str(sb) +
                         " is not a trailing suffix of " + shape_str(sa));
    return a.numel() / b.numel();
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    const long long reps = broadcast_repeats(a, b, "add");
    const long long bn = b.numel();
    std::vector<double> v(a.data());
    for (long long r = 0; r < reps; ++r)
        for (long long i = 0; i < bn; ++i) v[r * bn + i] += b.data()[i];
    const bool traced = detail::tracing({&a, &b});
    Tensor out = make_out(a.shape(), std::move(v), traced);
    if (traced) {
        auto na = a.node(), nb = b.node(), no = out.node();
        Tape::active()->record([na, nb, no, reps, bn] {
            const auto* g = out_grad(no);
            if (!g) return;
            detail::accumulate(na, *g);
            if (nb->needs_grad) {
                std::vector<double> gb(static_cast<size_t>(bn), 0.0);
                for (long long r = 0; r < reps; ++r)
                    for (long long i = 0; i < bn; ++i)
                        gb[i] += (*g)[r * bn + i];
                detail::accumulate(nb, gb);
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    const long long reps = broadcast_repeats(a, b, "sub");
    const long long bn = b.numel();
    std::vector<double> v(a.data());
    for (long long r = 0; r < reps; ++r)
        for (long long i = 0; i < bn; ++i) v[r * bn + i] -= b.data()[i];
    const bool traced = detail::tracing({&a, &b});
    Tensor out = make_out(a.shape(), std::move(v), traced);
    if (traced) {
        auto na = a.node(), nb = b.node(), no = out.node();
        Tape::active()->record([na, nb, no, reps, bn] {
            const auto* g = out_grad(no);
            if (!g) return;
            detail::accumulate(na, *g);
            if (nb->needs_grad) {
                std::vector<double> gb(static_cast<size_t>(bn), 0.0);
                for (long long r = 0; r < reps; ++r)
                    for (long long i = 0; i < bn; ++i)
                        gb[i] -= (*g)[r * bn + i];
                detail::accumulate(nb, gb);
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    const long long n = a.numel();
    std::vector<double> v(static_cast<size_t>(n));
    for (long long i = 0; i < n; ++i) v[i] = a.data()[i] * b.data()[i];
    const bool traced = detail::tracing({&a, &b});
    Tensor out = make_out(a.shape(), std::move(v), traced);
    if (traced) {
        auto na = a.node(), nb = b.node(), no = out.node();
        Tape::active()->record([na, nb, no, n] {
            const auto* g = out_grad(no);
            if (!g) return;
            if (na->needs_grad) {
                std::vector<double> ga(static_cast<size_t>(n));
                for (long long i = 0; i < n; ++i) ga[i] = (*g)[i] * nb->value[i];
                detail::accumulate(na, ga);
            }
            if (nb->needs_grad) {
                std::vector<double> gb(static_cast<size_t>(n));
                for (long long i = 0; i < n; ++i) gb[i] = (*g)[i] * na->value[i];
                detail::accumulate(nb, gb);
            }
        });
    }
    return out;
}

Tensor affine(const Tensor& x, double scale, double shift) {
    const long long n = x.numel();
    std::vector<double> v(static_cast<size_t>(n));
    for (long long i = 0; i < n; ++i) v[i] = scale * x.data()[i] + shift;
    const bool traced = detail::tracing({&x});
    Tensor out = make_out(x.shape(), std::move(v), traced);
    if (traced) {
        auto nx = x.node(), no = out.node();
        Tape::active()->record([nx, no, scale, n] {
            const auto* g = out_grad(no);
            if (!g) return;
            std::vector<double> gx(static_cast<size_t>(n));
            for (long long i = 0; i < n; ++i) gx[i] = scale * (*g)[i];
            detail::accumulate(nx, gx);
        });
    }
    return out;
}

namespace {

struct MatDims {
    int batch;       // 1 for 2-D x 2-D
    int p, q, r;     // effective dims after transposition
    bool a_batched, b_batched;
    Shape out_shape;
};

MatDims matmul_dims(const Tensor& a, const Tensor& b, bool ta, bool tb) {
    const int and_ = a.ndim(), bnd = b.ndim();
    if ((and_ != 2 && and_ != 3) || (bnd != 2 && bnd != 3))
        throw ShapeError("matmul: operands must be 2-D or 3-D, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
    MatDims d{};
    d.a_batched = and_ == 3;
    d.b_batched = bnd == 3;
    const int a0 = a.dim(and_ - 2), a1 = a.dim(and_ - 1);
    const int b0 = b.dim(bnd - 2), b1 = b.dim(bnd - 1);
    d.p = ta ? a1 : a0;
    const int qa = ta ? a0 : a1;
    const int qb = tb ? b1 : b0;
    d.r = tb ? b0 : b1;
    if (qa != qb)
        throw ShapeError("matmul: inner extents of " + shape_str(a.shape()) +
                         (ta ? "^T" : "") + " and " + shape_str(b.shape()) +
                         (tb ? "^T" : "") + " do not match");
    d.q = qa;
    d.batch = 1;
    if (d.a_batched && d.b_batched) {
        if (a.dim(0) != b.dim(0))
            throw ShapeError("matmul: batch extents of " +
                             shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ");
        d.batch = a.dim(0);
    } else if (d.a_batched) {
        d.batch = a.dim(0);
    } else if (d.b_batched) {
        d.batch = b.dim(0);
    }
    if (d.a_batched || d.b_batched)
        d.out_shape = {d.batch, d.p, d.r};
    else
        d.out_shape = {d.p, d.r};
    return d;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    const MatDims d = matmul_dims(a, b, trans_a, trans_b);
    const long long a_step = d.a_batched ? static_cast<long long>(d.p) * d.q : 0;
    const long long b_step = d.b_batched ? static_cast<long long>(d.q) * d.r : 0;
    const long long o_step = static_cast<long long>(d.p) * d.r;
    std::vector<double> v(static_cast<size_t>(d.batch * o_step));
    for (int i = 0; i < d.batch; ++i)
        kernels::matmul(a.data().data() + i * a_step,
                        b.data().data() + i * b_step, v.data() + i * o_step,
                        d.p, d.q, d.r, trans_a, trans_b);
    const bool traced = detail::tracing({&a, &b});
    Tensor out = make_out(d.out_shape, std::move(v), traced);
    if (traced) {
        auto na = a.node(), nb = b.node(), no = out.node();
        Tape::active()->record([na, nb, no, d, trans_a, trans_b, a_step, b_step,
                                o_step] {
            const auto* g = out_grad(no);
            if (!g) return;
            if (na->needs_grad) {
                std::vector<double> ga(na->value.size(), 0.0);
                std::vector<double> tmp(static_cast<size_t>(
                    std::max<long long>(1, static_cast<long long>(d.p) * d.q)));
                for (int i = 0; i < d.batch; ++i) {
                    const double* gc = g->data() + i * o_step;
                    const double* bp = nb->value.data() + i * b_step;
                    double* dst = d.a_batched ? ga.data() + i * a_step : tmp.data();
                    if (!trans_a) {
                        // dA = dC * opB(B)^T
                        kernels::matmul(gc, bp, dst, d.p, d.r, d.q, false,
                                        !trans_b);
                    } else {
                        // A stored (q,p): dA = opB(B) * dC^T
                        kernels::matmul(bp, gc, dst, d.q, d.r, d.p, trans_b,
                                        true);
                    }
                    if (!d.a_batched)
                        for (size_t k = 0; k < ga.size(); ++k) ga[k] += tmp[k];
                }
                detail::accumulate(na, ga);
            }
            if (nb->needs_grad) {
                std::vector<double> gb(nb->value.size(), 0.0);
                std::vector<double> tmp(static_cast<size_t>(
                    std::max<long long>(1, static_cast<long long>(d.q) * d.r)));
                for (int i = 0; i < d.batch; ++i) {
                    const double* gc = g->data() + i * o_step;
                    const double* ap = na->value.data() + i * a_step;
                    double* dst = d.b_batched ? gb.data() + i * b_step : tmp.data();
                    if (!trans_b) {
                        // dB = opA(A)^T * dC
                        kernels::matmul(ap, gc, dst, d.q, d.p, d.r, !trans_a,
                                        false);
                    } else {
                        // B stored (r,q): dB = dC^T * opA(A)
                        kernels::matmul(gc, ap, dst, d.r, d.p, d.q, true,
                                        trans_a);
                    }
                    if (!d.b_batched)
                        for (size_t k = 0; k < gb.size(); ++k) gb[k] += tmp[k];
                }
                detail::accumulate(nb, gb);
            }
        });
    }
    return out;
}

namespace {

struct AxisView {
    long long outer, inner, extent;
};

AxisView axis_view(const Shape& s, int axis) {
    if (axis < 0) axis += static_cast<int>(s.size());
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw ShapeError("axis " + std::to_string(axis) +
                         " invalid for shape " + shape_str(s));
    AxisView v{1, 1, s[static_cast<size_t>(axis)]};
    for (int i = 0; i < axis; ++i) v.outer *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i)
        v.inner *= s[i];
    return v;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
    const AxisView av = axis_view(x.shape(), axis);
    std::vector<double> v(x.data().size());
    if (av.inner == 1) {
        kernels::softmax_rows(x.data().data(), v.data(),
                              static_cast<int>(av.outer),
                              static_cast<int>(av.extent));
    } else {
        std::vector<double> slice(static_cast<size_t>(av.extent));
        for (long long o = 0; o < av.outer; ++o)
            for (long long i = 0; i < av.inner; ++i) {
                const long long base = o * av.extent * av.inner + i;
                for (long long k = 0; k < av.extent; ++k)
                    slice[static_cast<size_t>(k)] =
                        x.data()[base + k * av.inner];
                kernels::softmax_rows_serial(slice.data(), slice.data(), 1,
                                             static_cast<int>(av.extent));
                for (long long k = 0; k < av.extent; ++k)
                    v[base + k * av.inner] = slice[static_cast<size_t>(k)];
            }
    }
    const bool traced = detail::tracing({&x});
    Tensor out = make_out(x.shape(), std::move(v), traced);
    if (traced) {
        auto nx = x.node(), no = out.node();
        Tape::active()->record([nx, no, av] {
            const auto* g = out_grad(no);
            if (!g) return;
            std::vector<double> gx(nx->value.size());
            for (long long o = 0; o < av.outer; ++o)
                for (long long i = 0; i < av.inner; ++i) {
                    const long long base = o * av.extent * av.inner + i;
                    double dot = 0.0;
                    for (long long k = 0; k < av.extent; ++k) {
                        const long long idx = base + k * av.inner;
                        dot += (*g)[idx] * no->value[idx];
                    }
                    for (long long k = 0; k < av.extent; ++k) {
                        const long long idx = base + k * av.inner;
                        gx[idx] = no->value[idx] * ((*g)[idx] - dot);
                    }
                }
            detail::accumulate(nx, gx);
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
    const int d = x.dim(x.ndim() - 1);
    if (gain.numel() != d || bias.numel() != d)
        throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) +
                         " / bias " + shape_str(bias.shape()) +
                         " do not match last extent of " +
                         shape_str(x.shape()));
    if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
    const long long rows = x.numel() / d;
    std::vector<double> v(x.data().size());
    auto mean = std::make_shared<std::vector<double>>(rows);
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    kernels::layer_norm_rows(x.data().data(), gain.data().data(),
                             bias.data().data(), v.data(), mean->data(),
                             inv_std->data(), static_cast<int>(rows), d, eps);
    const bool traced = detail::tracing({&x, &gain, &bias});
    Tensor out = make_out(x.shape(), std::move(v), traced);
    if (traced) {
        auto nx = x.node(), ng = gain.node(), nb = bias.node(),
             no = out.node();
        Tape::active()->record([nx, ng, nb, no, mean, inv_std, rows, d] {
            const auto* g = out_grad(no);
            if (!g) return;
            std::vector<double> gx(nx->needs_grad ? nx->value.size() : 0);
            std::vector<double> ggain(ng->needs_grad ? static_cast<size_t>(d)
                                                     : 0);
            std::vector<double> gbias(nb->needs_grad ? static_cast<size_t>(d)
                                                     : 0);
            for (long long r = 0; r < rows; ++r) {
                const double* xr = nx->value.data() + r * d;
                const double* gr = g->data() + r * d;
                const double mu = (*mean)[r], is = (*inv_std)[r];
                if (!ggain.empty() || !gbias.empty())
                    for (int j = 0; j < d; ++j) {
                        const double xh = (xr[j] - mu) * is;
                        if (!ggain.empty()) ggain[j] += gr[j] * xh;
                        if (!gbias.empty()) gbias[j] += gr[j];
                    }
                if (nx->needs_grad) {
                    double s1 = 0.0, s2 = 0.0;
                    for (int j = 0; j < d; ++j) {
                        const double gd = gr[j] * ng->value[j];
                        const double xh = (xr[j] - mu) * is;
                        s1 += gd;
                        s2 += gd * xh;
                    }
                    s1 /= d;
                    s2 /= d;
                    for (int j = 0; j < d; ++j) {
                        const double gd = gr[j] * ng->value[j];
                        const double xh = (xr[j] - mu) * is;
                        gx[r * d + j] = is * (gd - s1 - xh * s2);
                    }
                }
            }
            if (nx->needs_grad) detail::accumulate(nx, gx);
            if (ng->needs_grad) detail::accumulate(ng, ggain);
            if (nb->needs_grad) detail::accumulate(nb, gbias);
        });
    }
    return out;
}

Tensor sigmoid(const Tensor& x) {
    const long long n = x.numel();
    std::vector<double> v(static_cast<size_t>(n));
    for (long long i = 0; i < n; ++i) {
        const double xi = x.data()[i];
        v[i] = xi >= 0.0 ? 1.0 / (1.0 + std::exp(-xi))
                         : std::exp(xi) / (1.0 + std::exp(xi));
    }
    const bool traced = detail::tracing({&x});
    Tensor out = make_out(x.shape(), std::move(v), traced);
    if (traced) {
        auto nx = x.node(), no = out.node();
        Tape::active()->record([nx, no, n] {
            const auto* g = out_grad(no);
            if (!g) return;
            std::vector<double> gx(static_cast<size_t>(n));
            for (long long i = 0; i < n; ++i) {
                const double y = no->value[i];
                gx[i] = (*g)[i] * y * (1.0 - y);
            }
            detail::accumulate(nx, gx);
        });
    }
    return out;
}

Tensor relu(const Tensor& x) {
    const long long n = x.numel();
    std::vector<double> v(static_cast<size_t>(n));
    for (long long i = 0; i < n; ++i) v[i] = std::max(0.0, x.data()[i]);
    const bool traced = detail::tracing({&x});
    Tensor out = make_out(x.shape(), std::move(v), traced);
    if (traced) {
        auto nx = x.node(), no = out.node();
        Tape::active()->record([nx, no, n] {
            const auto* g = out_grad(no);
            if (!g) return;
            std::vector<double> gx(static_cast<size_t>(n));
            for (long long i = 0; i < n; ++i)
                gx[i] = nx->value[i] > 0.0 ? (*g)[i] : 0.0;
            detail::accumulate(nx, gx);
        });
    }
    return out;
}

Tensor mse(const Tensor& pred, const Tensor& target) {
    check_same_shape(pred, target, "mse");
    const long long n = pred.numel();
    double acc = 0.0;
    for (long long i = 0; i < n; ++i) {
        const double d = pred.data()[i] - target.data()[i];
        acc += d * d;
    }
    const bool traced = detail::tracing({&pred, &target});
    Tensor out = make_out({1}, {acc / n}, traced);
    if (traced) {
        auto np = pred.node(), nt = target.node(), no = out.node();
        Tape::active()->record([np, nt, no, n] {
            const auto* g = out_grad(no);
            if (!g) return;
            const double s = 2.0 * (*g)[0] / n;
            if (np->needs_grad) {
                std::vector<double> gp(static_cast<size_t>(n));
                for (long long i = 0; i < n; ++i)
                    gp[i] = s * (np->value[i] - nt->value[i]);
                detail::accumulate(np, gp);
            }
            if (nt->needs_grad) {
                std::vector<double> gt(static_cast<size_t>(n));
                for (long long i = 0; i < n; ++i)
                    gt[i] = -s * (np->value[i] - nt->value[i]);
                detail::accumulate(nt, gt);
            }
        });
    }
    return out;
}

Tensor cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
    if (probs.ndim() != 2)
        throw ShapeError("cross_entropy: probs must be 2-D, got " +
                         shape_str(probs.shape()));
    const int n = probs.dim(0), c = probs.dim(1);
    if (static_cast<int>(labels.size()) != n)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(n) + " rows");
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || y >= c)
            throw InputError("cross_entropy: label " + std::to_string(y) +
                             " out of range for " + std::to_string(c) +
                             " classes");
        acc -= std::log(probs.data()[static_cast<size_t>(i) * c + y]);
    }
    const bool traced = detail::tracing({&probs});
    Tensor out = make_out({1}, {acc / n}, traced);
    if (traced) {
        auto np = probs.node(), no = out.node();
        auto lab = labels;
        Tape::active()->record([np, no, lab, n, c] {
            const auto* g = out_grad(no);
            if (!g) return;
            std::vector<double> gp(np->value.size(), 0.0);
            for (int i = 0; i < n; ++i) {
                const size_t idx = static_cast<size_t>(i) * c + lab[i];
                gp[idx] = -(*g)[0] / (n * np->value[idx]);
            }
            detail::accumulate(np, gp);
        });
    }
    return out;
}

Tensor cross_entropy_onehot(const Tensor& probs, const Tensor& targets) {
    check_same_shape(probs, targets, "cross_entropy_onehot");
    if (probs.ndim() != 2)
        throw ShapeError("cross_entropy_onehot: probs must be 2-D, got " +
                         shape_str(probs.shape()));
    const int n = probs.dim(0), c = probs.dim(1);
    for (int i = 0; i < n; ++i) {
        double row = 0.0;
        for (int j = 0; j < c; ++j)
            row += probs.data()[static_cast<size_t>(i) * c + j];
        if (std::abs(row - 1.0) > 1e-6)
            throw ContractError(
                "cross_entropy_onehot: probability row " + std::to_string(i) +
                " sums to " + std::to_string(row) + ", expected 1");
    }
    double acc = 0.0;
    for (long long i = 0; i < probs.numel(); ++i) {
        const double t = targets.data()[i];
        if (t != 0.0) acc -= t * std::log(probs.data()[i]);
    }
    const bool traced = detail::tracing({&probs});
    Tensor out = make_out({1}, {acc / n}, traced);
    if (traced) {
        auto np = probs.node(), nt = targets.node(), no = out.node();
        Tape::active()->record([np, nt, no, n] {
            const auto* g = out_grad(no);
            if (!g) return;
            std::vector<double> gp(np->value.size(), 0.0);
            for (size_t i = 0; i < gp.size(); ++i) {
                const double t = nt->value[i];
                if (t != 0.0) gp[i] = -(*g)[0] * t / (n * np->value[i]);
            }
            detail::accumulate(np, gp);
        });
    }
    return out;
}

Tensor cross_entropy_logits(const Tensor& logits,
                            const std::vector<int>& targets, int ignore_id) {
    if (logits.ndim() != 2)
        throw ShapeError("cross_entropy_logits: logits must be 2-D, got " +
                         shape_str(logits.shape()));
    const int n = logits.dim(0), c = logits.dim(1);
    if (static_cast<int>(targets.size()) != n)
        throw ShapeError("cross_entropy_logits: " +
                         std::to_string(targets.size()) + " targets for " +
                         std::to_string(n) + " rows");
    int scored = 0;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
        const int t = targets[i];
        if (t == ignore_id) continue;
        if (t < 0 || t >= c)
            throw InputError("cross_entropy_logits: target " +
                             std::to_string(t) + " out of range for " +
                             std::to_string(c) + " classes");
        ++scored;
        const double* row = logits.data().data() + static_cast<size_t>(i) * c;
        double mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double lse = 0.0;
        for (int j = 0; j < c; ++j) lse += std::exp(row[j] - mx);
        acc += std::log(lse) + mx - row[t];
    }
    if (scored == 0) return Tensor::scalar(0.0);  // no scored positions
    const bool traced = detail::tracing({&logits});
    Tensor out = make_out({1}, {acc / scored}, traced);
    if (traced) {
        auto nl = logits.node(), no = out.node();
        auto tg = targets;
        Tape::active()->record([nl, no, tg, n, c, ignore_id, scored] {
            const auto* g = out_grad(no);
            if (!g) return;
            std::vector<double> gl(nl->value.size(), 0.0);
            const double s = (*g)[0] / scored;
            for (int i = 0; i < n; ++i) {
                if (tg[i] == ignore_id) continue;
                const double* row = nl->value.data() + static_cast<size_t>(i) * c;
                double* grow = gl.data() + static_cast<size_t>(i) * c;
                double mx = row[0];
                for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
                double lse = 0.0;
                for (int j = 0; j < c; ++j) lse += std::exp(row[j] - mx);
                for (int j = 0; j < c; ++j)
                    grow[j] = s * (std::exp(row[j] - mx) / lse -
                                   (j == tg[i] ? 1.0 : 0.0));
            }
            detail::accumulate(nl, gl);
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    const bool traced = detail::tracing({&x});
    Tensor out = make_out({1}, {acc}, traced);
    if (traced) {
        auto nx = x.node(), no = out.node();
        Tape::active()->record([nx, no] {
            const auto* g = out_grad(no);
            if (!g) return;
            detail::accumulate(nx,
                               std::vector<double>(nx->value.size(), (*g)[0]));
        });
    }
    return out;
}

Tensor mean_all(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    const long long n = x.numel();
    const bool traced = detail::tracing({&x});
    Tensor out = make_out({1}, {acc / n}, traced);
    if (traced) {
        auto nx = x.node(), no = out.node();
        Tape::active()->record([nx, no, n] {
            const auto* g = out_grad(no);
            if (!g) return;
            detail::accumulate(
                nx, std::vector<double>(nx->value.size(), (*g)[0] / n));
        });
    }
    return out;
}

Tensor mean_rows(const Tensor& x) {
    if (x.ndim() != 2)
        throw ShapeError("mean_rows: expected 2-D, got " +
                         shape_str(x.shape()));
    const int n = x.dim(0), d = x.dim(1);
    std::vector<double> v(static_cast<size_t>(d), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            v[static_cast<size_t>(j)] += x.data()[static_cast<size_t>(i) * d + j];
    for (double& e : v) e /= n;
    const bool traced = detail::tracing({&x});
    Tensor out = make_out({d}, std::move(v), traced);
    if (traced) {
        auto nx = x.node(), no = out.node();
        Tape::active()->record([nx, no, n, d] {
            const auto* g = out_grad(no);
            if (!g) return;
            std::vector<double> gx(nx->value.size());
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < d; ++j)
                    gx[static_cast<size_t>(i) * d + j] = (*g)[static_cast<size_t>(j)] / n;
            detail::accumulate(nx, gx);
        });
    }
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ContractError("concat_rows: empty input list");
    const int d = xs[0].dim(xs[0].ndim() - 1);
    int rows = 0;
    for (const Tensor& t : xs) {
        if (t.ndim() != 2 || t.dim(1) != d)
            throw ShapeError("concat_rows: incompatible shape " +
                             shape_str(t.shape()) + ", expected [*, " +
                             std::to_string(d) + "]");
        rows += t.dim(0);
    }
    std::vector<double> v;
    v.reserve(static_cast<size_t>(rows) * d);
    for (const Tensor& t : xs)
        v.insert(v.end(), t.data().begin(), t.data().end());
    std::vector<const Tensor*> ptrs;
    for (const Tensor& t : xs) ptrs.push_back(&t);
    bool traced = false;
    for (const Tensor* t : ptrs)
        if (detail::tracing({t})) traced = true;
    Tensor out = make_out({rows, d}, std::move(v), traced);
    if (traced) {
        std::vector<NodePtr> nodes;
        for (const Tensor& t : xs) nodes.push_back(t.node());
        auto no = out.node();
        Tape::active()->record([nodes, no, d] {
            const auto* g = out_grad(no);
            if (!g) return;
            size_t offset = 0;
            for (const NodePtr& n : nodes) {
                if (n->needs_grad) {
                    std::vector<double> gn(g->begin() + offset,
                                           g->begin() + offset +
                                               n->value.size());
                    detail::accumulate(n, gn);
                }
                offset += n->value.size();
            }
        });
    }
    return out;
}

Tensor concat_batch_rows(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) ||
        a.dim(2) != b.dim(2))
        throw ShapeError("concat_batch_rows: incompatible shapes " +
                         shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const int batch = a.dim(0), na = a.dim(1), nb = b.dim(1), d = a.dim(2);
    std::vector<double> v(static_cast<size_t>(batch) * (na + nb) * d);
    for (int i = 0; i < batch; ++i) {
        std::copy(a.data().begin() + static_cast<size_t>(i) * na * d,
                  a.data().begin() + static_cast<size_t>(i + 1) * na * d,
                  v.begin() + static_cast<size_t>(i) * (na + nb) * d);
        std::copy(b.data().begin() + static_cast<size_t>(i) * nb * d,
                  b.data().begin() + static_cast<size_t>(i + 1) * nb * d,
                  v.begin() + static_cast<size_t>(i) * (na + nb) * d +
                      static_cast<size_t>(na) * d);
    }
    const bool traced = detail::tracing({&a, &b});
    Tensor out = make_out({batch, na + nb, d}, std::move(v), traced);
    if (traced) {
        auto nA = a.node(), nB = b.node(), no = out.node();
        Tape::active()->record([nA, nB, no, batch, na, nb, d] {
            const auto* g = out_grad(no);
            if (!g) return;
            if (nA->needs_grad) {
                std::vector<double> ga(nA->value.size());
                for (int i = 0; i < batch; ++i)
                    std::copy(g->begin() + static_cast<size_t>(i) * (na + nb) * d,
                              g->begin() + static_cast<size_t>(i) * (na + nb) * d +
                                  static_cast<size_t>(na) * d,
                              ga.begin() + static_cast<size_t>(i) * na * d);
                detail::accumulate(nA, ga);
            }
            if (nB->needs_grad) {
                std::vector<double> gb(nB->value.size());
                for (int i = 0; i < batch; ++i)
                    std::copy(g->begin() + static_cast<size_t>(i) * (na + nb) * d +
                                  static_cast<size_t>(na) * d,
                              g->begin() +
                                  static_cast<size_t>(i + 1) * (na + nb) * d,
                              gb.begin() + static_cast<size_t>(i) * nb * d);
                detail::accumulate(nB, gb);
            }
        });
    }
    return out;
}

Tensor slice_rows(const Tensor& x, int start, int len) {
    if (x.ndim() != 2)
        throw ShapeError("slice_rows: expected 2-D, got " +
                         shape_str(x.shape()));
    const int n = x.dim(0), d = x.dim(1);
    if (start < 0 || len < 0 || start + len > n)
        throw ShapeError("slice_rows: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of " +
                         std::to_string(n) + " rows");
    std::vector<double> v(x.data().begin() + static_cast<size_t>(start) * d,
                          x.data().begin() +
                              static_cast<size_t>(start + len) * d);
    const bool traced = detail::tracing({&x});
    Tensor out = make_out({len, d}, std::move(v), traced);
    if (traced) {
        auto nx = x.node(), no = out.node();
        Tape::active()->record([nx, no, start, d] {
            const auto* g = out_grad(no);
            if (!g) return;
            std::vector<double> gx(nx->value.size(), 0.0);
            std::copy(g->begin(), g->end(),
                      gx.begin() + static_cast<size_t>(start) * d);
            detail::accumulate(nx, gx);
        });
    }
    return out;
}

Tensor stack_rows(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ContractError("stack_rows: empty input list");
    const long long d = xs[0].numel();
    std::vector<double> v;
    v.reserve(xs.size() * static_cast<size_t>(d));
    bool traced = false;
    for (const Tensor& t : xs) {
        if (t.ndim() != 1 || t.numel() != d)
            throw ShapeError("stack_rows: incompatible shape " +
                             shape_str(t.shape()));
        v.insert(v.end(), t.data().begin(), t.data().end());
        if (detail::tracing({&t})) traced = true;
    }
    Tensor out = make_out({static_cast<int>(xs.size()), static_cast<int>(d)},
                          std::move(v), traced);
    if (traced) {
        std::vector<NodePtr> nodes;
        for (const Tensor& t : xs) nodes.push_back(t.node());
        auto no = out.node();
        Tape::active()->record([nodes, no, d] {
            const auto* g = out_grad(no);
            if (!g) return;
            for (size_t i = 0; i < nodes.size(); ++i) {
                if (!nodes[i]->needs_grad) continue;
                std::vector<double> gn(
                    g->begin() + i * static_cast<size_t>(d),
                    g->begin() + (i + 1) * static_cast<size_t>(d));
                detail::accumulate(nodes[i], gn);
            }
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) +
                         " as " + shape_str(shape));
    const bool traced = detail::tracing({&x});
    Tensor out = make_out(std::move(shape), x.data(), traced);
    if (traced) {
        auto nx = x.node(), no = out.node();
        Tape::active()->record([nx, no] {
            const auto* g = out_grad(no);
            if (!g) return;
            detail::accumulate(nx, *g);
        });
    }
    return out;
}

namespace {

void permute_heads(const double* src, double* dst, int n, int d, int heads,
                   bool splitting) {
    const int dh = d / heads;
    for (int h = 0; h < heads; ++h)
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < dh; ++j) {
                const long long split_idx =
                    (static_cast<long long>(h) * n + i) * dh + j;
                const long long flat_idx =
                    static_cast<long long>(i) * d + h * dh + j;
                if (splitting)
                    dst[split_idx] = src[flat_idx];
                else
                    dst[flat_idx] = src[split_idx];
            }
}

}  // namespace

Tensor split_heads(const Tensor& x, int heads) {
    if (x.ndim() != 2)
        throw ShapeError("split_heads: expected 2-D, got " +
                         shape_str(x.shape()));
    const int n = x.dim(0), d = x.dim(1);
    if (heads <= 0 || d % heads != 0)
        throw ShapeError("split_heads: width " + std::to_string(d) +
                         " not divisible by " + std::to_string(heads) +
                         " heads");
    std::vector<double> v(x.data().size());
    permute_heads(x.data().data(), v.data(), n, d, heads, true);
    const bool traced = detail::tracing({&x});
    Tensor out = make_out({heads, n, d / heads}, std::move(v), traced);
    if (traced) {
        auto nx = x.node(), no = out.node();
        Tape::active()->record([nx, no, n, d, heads] {
            const auto* g = out_grad(no);
            if (!g) return;
            std::vector<double> gx(nx->value.size());
            permute_heads(g->data(), gx.data(), n, d, heads, false);
            detail::accumulate(nx, gx);
        });
    }
    return out;
}

Tensor merge_heads(const Tensor& x) {
    if (x.ndim() != 3)
        throw ShapeError("merge_heads: expected 3-D, got " +
                         shape_str(x.shape()));
    const int heads = x.dim(0), n = x.dim(1), dh = x.dim(2);
    const int d = heads * dh;
    std::vector<double> v(x.data().size());
    permute_heads(x.data().data(), v.data(), n, d, heads, false);
    const bool traced = detail::tracing({&x});
    Tensor out = make_out({n, d}, std::move(v), traced);
    if (traced) {
        auto nx = x.node(), no = out.node();
        Tape::active()->record([nx, no, n, d, heads] {
            const auto* g = out_grad(no);
            if (!g) return;
            std::vector<double> gx(nx->value.size());
            permute_heads(g->data(), gx.data(), n, d, heads, true);
            detail::accumulate(nx, gx);
        });
    }
    return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
    if (table.ndim() != 2)
        throw ShapeError("gather_rows: table must be 2-D, got " +
                         shape_str(table.shape()));
    const int v_rows = table.dim(0), d = table.dim(1);
    std::vector<double> v(ids.size() * static_cast<size_t>(d));
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= v_rows)
            throw InputError("gather_rows: id " + std::to_string(ids[i]) +
                             " out of range for table of " +
                             std::to_string(v_rows) + " rows");
        std::copy(table.data().begin() + static_cast<size_t>(ids[i]) * d,
                  table.data().begin() + static_cast<size_t>(ids[i] + 1) * d,
                  v.begin() + i * static_cast<size_t>(d));
    }
    const bool traced = detail::tracing({&table});
    Tensor out = make_out({static_cast<int>(ids.size()), d}, std::move(v),
                          traced);
    if (traced) {
        auto nt = table.node(), no = out.node();
        auto idv = ids;
        Tape::active()->record([nt, no, idv, d] {
            const auto* g = out_grad(no);
            if (!g) return;
            std::vector<double> gt(nt->value.size(), 0.0);
            for (size_t i = 0; i < idv.size(); ++i)
                for (int j = 0; j < d; ++j)
                    gt[static_cast<size_t>(idv[i]) * d + j] +=
                        (*g)[i * static_cast<size_t>(d) + j];
            detail::accumulate(nt, gt);
        });
    }
    return out;
}

Tensor normalize_rows(const Tensor& x, double eps) {
    if (x.ndim() != 2)
        throw ShapeError("normalize_rows: expected 2-D, got " +
                         shape_str(x.shape()));
    const int n = x.dim(0), d = x.dim(1);
    std::vector<double> v(x.data().size());
    auto norms = std::make_shared<std::vector<double>>(n);
    for (int i = 0; i < n; ++i) {
        double sq = eps;
        for (int j = 0; j < d; ++j) {
            const double e = x.data()[static_cast<size_t>(i) * d + j];
            sq += e * e;
        }
        const double s = std::sqrt(sq);
        (*norms)[static_cast<size_t>(i)] = s;
        for (int j = 0; j < d; ++j)
            v[static_cast<size_t>(i) * d + j] =
                x.data()[static_cast<size_t>(i) * d + j] / s;
    }
    const bool traced = detail::tracing({&x});
    Tensor out = make_out(x.shape(), std::move(v), traced);
    if (traced) {
        auto nx = x.node(), no = out.node();
        Tape::active()->record([nx, no, norms, n, d] {
            const auto* g = out_grad(no);
            if (!g) return;
            std::vector<double> gx(nx->value.size());
            for (int i = 0; i < n; ++i) {
                const double* yr = no->value.data() + static_cast<size_t>(i) * d;
                const double* gr = g->data() + static_cast<size_t>(i) * d;
                double dot = 0.0;
                for (int j = 0; j < d; ++j) dot += gr[j] * yr[j];
                const double s = (*norms)[static_cast<size_t>(i)];
                for (int j = 0; j < d; ++j)
                    gx[static_cast<size_t>(i) * d + j] = (gr[j] - yr[j] * dot) / s;
            }
            detail::accumulate(nx, gx);
        });
    }
    return out;
}

namespace {

void patch_permute(const double* src, double* dst, int S, int p, bool forward) {
    const int g = S / p;
    for (int pi = 0; pi < g; ++pi)
        for (int pj = 0; pj < g; ++pj)
            for (int pk = 0; pk < g; ++pk) {
                const long long patch =
                    (static_cast<long long>(pi) * g + pj) * g + pk;
                for (int oi = 0; oi < p; ++oi)
                    for (int oj = 0; oj < p; ++oj)
                        for (int ok = 0; ok < p; ++ok) {
                            const long long vox =
                                (static_cast<long long>(pi * p + oi) * S +
                                 (pj * p + oj)) * S +
                                (pk * p + ok);
                            const long long flat =
                                patch * p * p * p +
                                (static_cast<long long>(oi) * p + oj) * p + ok;
                            if (forward)
                                dst[flat] = src[vox];
                            else
                                dst[vox] = src[flat];
                        }
            }
}

}  // namespace

Tensor patchify(const Tensor& volume, int patch_side) {
    if (volume.ndim() != 3 || volume.dim(0) != volume.dim(1) ||
        volume.dim(1) != volume.dim(2))
        throw ShapeError("patchify: expected cubic volume, got " +
                         shape_str(volume.shape()));
    const int S = volume.dim(0);
    if (patch_side <= 0 || S % patch_side != 0)
        throw ConfigError("patchify: side " + std::to_string(S) +
                          " not divisible by patch side " +
                          std::to_string(patch_side));
    const int g = S / patch_side;
    std::vector<double> v(volume.data().size());
    patch_permute(volume.data().data(), v.data(), S, patch_side, true);
    const bool traced = detail::tracing({&volume});
    Tensor out = make_out({g * g * g, patch_side * patch_side * patch_side},
                          std::move(v), traced);
    if (traced) {
        auto nx = volume.node(), no = out.node();
        Tape::active()->record([nx, no, S, patch_side] {
            const auto* g2 = out_grad(no);
            if (!g2) return;
            std::vector<double> gx(nx->value.size());
            patch_permute(g2->data(), gx.data(), S, patch_side, false);
            detail::accumulate(nx, gx);
        });
    }
    return out;
}

Tensor unpatchify(const Tensor& patches, int volume_side, int patch_side) {
    const int g = volume_side / patch_side;
    const int p3 = patch_side * patch_side * patch_side;
    if (volume_side % patch_side != 0 || patches.ndim() != 2 ||
        patches.dim(0) != g * g * g || patches.dim(1) != p3)
        throw ShapeError("unpatchify: shape " + shape_str(patches.shape()) +
                         " does not reassemble into side " +
                         std::to_string(volume_side) + " with patch " +
                         std::to_string(patch_side));
    std::vector<double> v(patches.data().size());
    patch_permute(patches.data().data(), v.data(), volume_side, patch_side,
                  false);
    const bool traced = detail::tracing({&patches});
    Tensor out = make_out({volume_side, volume_side, volume_side},
                          std::move(v), traced);
    if (traced) {
        auto nx = patches.node(), no = out.node();
        Tape::active()->record([nx, no, volume_side, patch_side] {
            const auto* g2 = out_grad(no);
            if (!g2) return;
            std::vector<double> gx(nx->value.size());
            patch_permute(g2->data(), gx.data(), volume_side, patch_side,
                          true);
            detail::accumulate(nx, gx);
        });
    }
    return out;
}

}  // namespace kmdx
