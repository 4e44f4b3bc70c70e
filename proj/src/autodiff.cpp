#include "aml/autodiff.hpp"

#include <algorithm>
#include <cmath>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "aml/error.hpp"

namespace aml {

const char* op_name(OpTag tag) noexcept {
    switch (tag) {
        case OpTag::Constant: return "constant";
        case OpTag::Leaf: return "leaf";
        case OpTag::Param: return "param";
        case OpTag::MatMul: return "matmul";
        case OpTag::Add: return "add";
        case OpTag::Sub: return "sub";
        case OpTag::Mul: return "mul";
        case OpTag::Div: return "div";
        case OpTag::Conv1d: return "conv1d";
        case OpTag::MaxPool: return "maxpool";
        case OpTag::Relu: return "relu";
        case OpTag::Tanh: return "tanh";
        case OpTag::Sigmoid: return "sigmoid";
        case OpTag::Exp: return "exp";
        case OpTag::Log: return "log";
        case OpTag::Log1p: return "log1p";
        case OpTag::Concat: return "concat";
        case OpTag::Mean: return "mean";
        case OpTag::Sum: return "sum";
        case OpTag::L2Norm: return "l2norm";
        case OpTag::Reshape: return "reshape";
        case OpTag::Select: return "select";
        case OpTag::Slice: return "slice";
        case OpTag::GatherRows: return "gather_rows";
        case OpTag::Scale: return "scale";
    }
    return "unknown";
}

const Tensor& Var::value() const { return tape_->value(id_); }
Tensor Var::grad() const { return tape_->grad(id_); }

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.op = OpTag::Constant;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
    Node n;
    n.value = std::move(value);
    n.op = OpTag::Leaf;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
    Node n;
    n.value = p.value;
    n.op = OpTag::Param;
    n.param = &p;
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::push(Tensor value, OpTag op, std::vector<std::size_t> parents, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.op = op;
    n.requires_grad = std::any_of(parents.begin(), parents.end(),
                                  [this](std::size_t p) { return nodes_[p].requires_grad; });
    n.parents = std::move(parents);
    if (n.requires_grad) {
        n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Tensor Tape::grad(std::size_t id) const {
    const Node& n = nodes_.at(id);
    // Never touched by backward: gradient is identically zero.
    return n.has_grad ? n.grad : Tensor(n.value.shape());
}

Tensor& Tape::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Tensor(n.value.shape());
        n.has_grad = true;
    }
    return n.grad;
}

Tape::Tape() {
#if defined(__GLIBC__)
    // Every step allocates and frees a few hundred MB of short-lived tensors;
    // keep that memory in the heap instead of returning it to the OS.
    static const bool tuned = [] {
        mallopt(M_MMAP_THRESHOLD, 256 << 20);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
        return true;
    }();
    (void)tuned;
#endif
}

void Tape::backward(Var root) {
    if (root.value().size() != 1) {
        throw ShapeError("backward: root must be scalar, got shape " + shape_string(root.shape()));
    }
    for (auto& n : nodes_) {
        n.has_grad = false;
        n.grad = Tensor();
    }
    grad_buffer(root.id())[0] = 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.has_grad || !n.requires_grad) {
            continue;
        }
        if (n.param != nullptr) {
            auto dst = n.param->grad.values();
            auto src = n.grad.values();
            for (std::size_t k = 0; k < dst.size(); ++k) {
                dst[k] += src[k];
            }
        } else if (n.backward) {
            n.backward(*this, i);
        }
    }
}

namespace ad {
namespace {

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                     shape_string(b));
}

struct AxisSplit {
    std::size_t outer = 1;
    std::size_t n = 1;
    std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.n = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

void check_axis(const char* op, const Shape& s, std::size_t axis) {
    if (axis >= s.size()) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_string(s));
    }
}

Shape without_axis(const Shape& s, std::size_t axis) {
    Shape out = s;
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
    return out;
}

// Broadcast plan: output shape plus per-operand strides (0 on broadcast dims).
struct Broadcast {
    Shape out;
    std::vector<std::size_t> stride_a;
    std::vector<std::size_t> stride_b;
    bool same = false;
};

Broadcast plan_broadcast(const char* op, const Shape& a, const Shape& b) {
    Broadcast p;
    if (a == b) {
        p.out = a;
        p.same = true;
        return p;
    }
    const std::size_t rank = std::max(a.size(), b.size());
    p.out.assign(rank, 1);
    Shape pa(rank, 1), pb(rank, 1);
    std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
    std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
    for (std::size_t i = 0; i < rank; ++i) {
        if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
            mismatch(op, a, b);
        }
        p.out[i] = std::max(pa[i], pb[i]);
    }
    p.stride_a.assign(rank, 0);
    p.stride_b.assign(rank, 0);
    std::size_t sa = 1, sb = 1;
    for (std::size_t i = rank; i-- > 0;) {
        p.stride_a[i] = pa[i] == 1 ? 0 : sa;
        p.stride_b[i] = pb[i] == 1 ? 0 : sb;
        sa *= pa[i];
        sb *= pb[i];
    }
    return p;
}

template <typename F>
void for_each_broadcast(const Broadcast& p, F&& f) {
    const std::size_t total = shape_size(p.out);
    if (p.same) {
        for (std::size_t i = 0; i < total; ++i) f(i, i, i);
        return;
    }
    const std::size_t rank = p.out.size();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < total; ++i) {
        f(i, ia, ib);
        for (std::size_t d = rank; d-- > 0;) {
            ++idx[d];
            ia += p.stride_a[d];
            ib += p.stride_b[d];
            if (idx[d] < p.out[d]) break;
            ia -= p.stride_a[d] * idx[d];
            ib -= p.stride_b[d] * idx[d];
            idx[d] = 0;
        }
    }
}

template <typename Fwd, typename DA, typename DB>
Var binary(OpTag tag, Var a, Var b, Fwd fwd, DA da, DB db) {
    Tape& t = a.tape();
    const Broadcast plan = plan_broadcast(op_name(tag), a.shape(), b.shape());
    Tensor out(plan.out);
    {
        const double* av = a.value().data();
        const double* bv = b.value().data();
        double* ov = out.data();
        for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            ov[i] = fwd(av[ia], bv[ib]);
        });
    }
    const std::size_t ida = a.id(), idb = b.id();
    return t.push(std::move(out), tag, {ida, idb}, [plan, ida, idb, da, db](Tape& tp, std::size_t self) {
        const double* g = tp.grad_buffer(self).data();
        const double* av = tp.value(ida).data();
        const double* bv = tp.value(idb).data();
        if (tp.requires_grad(ida)) {
            double* ga = tp.grad_buffer(ida).data();
            for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                ga[ia] += g[i] * da(av[ia], bv[ib]);
            });
        }
        if (tp.requires_grad(idb)) {
            double* gb = tp.grad_buffer(idb).data();
            for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                gb[ib] += g[i] * db(av[ia], bv[ib]);
            });
        }
    });
}

// Elementwise unary op whose derivative is expressed through input x and output y.
template <typename Fwd, typename Deriv>
Var unary(OpTag tag, Var a, Fwd fwd, Deriv deriv) {
    Tape& t = a.tape();
    Tensor out(a.shape());
    const auto in = a.value().values();
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
    const std::size_t ida = a.id();
    return t.push(std::move(out), tag, {ida}, [ida, deriv](Tape& tp, std::size_t self) {
        const auto g = tp.grad_buffer(self).values();
        const auto x = tp.value(ida).values();
        const auto y = tp.value(self).values();
        auto ga = tp.grad_buffer(ida).values();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
    });
}

}  // namespace

Var add(Var a, Var b) {
    return binary(OpTag::Add, a, b, [](double x, double y) { return x + y; },
                  [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
    return binary(OpTag::Sub, a, b, [](double x, double y) { return x - y; },
                  [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
    return binary(OpTag::Mul, a, b, [](double x, double y) { return x * y; },
                  [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var div(Var a, Var b) {
    return binary(OpTag::Div, a, b, [](double x, double y) { return x / y; },
                  [](double, double y) { return 1.0 / y; },
                  [](double x, double y) { return -x / (y * y); });
}

Var matmul(Var a, Var b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
        mismatch("matmul", sa, sb);
    }
    const std::size_t m = sa[0], k = sa[1], n = sb[1];
    Tensor out(Shape{m, n});
    {
        const double* av = a.value().data();
        const double* bv = b.value().data();
        double* ov = out.data();
        for (std::size_t i = 0; i < m; ++i) {
            double* orow = ov + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double aip = av[i * k + p];
                if (aip == 0.0) continue;
                const double* brow = bv + p * n;
                for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
            }
        }
    }
    const std::size_t ida = a.id(), idb = b.id();
    return a.tape().push(std::move(out), OpTag::MatMul, {ida, idb},
                         [ida, idb, m, k, n](Tape& tp, std::size_t self) {
        const double* g = tp.grad_buffer(self).data();
        const double* av = tp.value(ida).data();
        const double* bv = tp.value(idb).data();
        if (tp.requires_grad(ida)) {
            // dA = G * B^T
            double* ga = tp.grad_buffer(ida).data();
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double* brow = bv + p * n;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    ga[i * k + p] += acc;
                }
            }
        }
        if (tp.requires_grad(idb)) {
            // dB = A^T * G
            double* gb = tp.grad_buffer(idb).data();
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = av[i * k + p];
                    if (aip == 0.0) continue;
                    double* gbrow = gb + p * n;
                    for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                }
            }
        }
    });
}

Var conv1d(Var x, Var w) {
    const Shape& sx = x.shape();
    const Shape& sw = w.shape();
    if (sx.size() != 3 || sw.size() != 3 || sx[1] != sw[1] || sw[2] == 0) {
        mismatch("conv1d", sx, sw);
    }
    const std::size_t batch = sx[0], cin = sx[1], len = sx[2];
    const std::size_t cout = sw[0], width = sw[2];
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((width - 1) / 2);
    const auto L = static_cast<std::ptrdiff_t>(len);

    Tensor out(Shape{batch, cout, len});
    {
        const double* xv = x.value().data();
        const double* wv = w.value().data();
        double* ov = out.data();
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t o = 0; o < cout; ++o) {
                double* orow = ov + (b * cout + o) * len;
                for (std::size_t c = 0; c < cin; ++c) {
                    const double* xrow = xv + (b * cin + c) * len;
                    const double* wrow = wv + (o * cin + c) * width;
                    for (std::size_t kk = 0; kk < width; ++kk) {
                        const double wk = wrow[kk];
                        // y[t] += w[k] * x[t + pad - k]
                        const std::ptrdiff_t shift = pad - static_cast<std::ptrdiff_t>(kk);
                        const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -shift);
                        const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(L, L - shift);
                        for (std::ptrdiff_t t = t0; t < t1; ++t) orow[t] += wk * xrow[t + shift];
                    }
                }
            }
        }
    }
    const std::size_t idx = x.id(), idw = w.id();
    return x.tape().push(std::move(out), OpTag::Conv1d, {idx, idw},
                         [=](Tape& tp, std::size_t self) {
        const double* g = tp.grad_buffer(self).data();
        const double* xv = tp.value(idx).data();
        const double* wv = tp.value(idw).data();
        double* gx = tp.requires_grad(idx) ? tp.grad_buffer(idx).data() : nullptr;
        double* gw = tp.requires_grad(idw) ? tp.grad_buffer(idw).data() : nullptr;
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t o = 0; o < cout; ++o) {
                const double* grow = g + (b * cout + o) * len;
                for (std::size_t c = 0; c < cin; ++c) {
                    const double* xrow = xv + (b * cin + c) * len;
                    const double* wrow = wv + (o * cin + c) * width;
                    for (std::size_t kk = 0; kk < width; ++kk) {
                        const std::ptrdiff_t shift = pad - static_cast<std::ptrdiff_t>(kk);
                        const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -shift);
                        const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(L, L - shift);
                        if (gx != nullptr) {
                            double* gxrow = gx + (b * cin + c) * len;
                            const double wk = wrow[kk];
                            for (std::ptrdiff_t t = t0; t < t1; ++t) gxrow[t + shift] += wk * grow[t];
                        }
                        if (gw != nullptr) {
                            double acc = 0.0;
                            for (std::ptrdiff_t t = t0; t < t1; ++t) acc += grow[t] * xrow[t + shift];
                            gw[(o * cin + c) * width + kk] += acc;
                        }
                    }
                }
            }
        }
    });
}

Var maxpool2(Var x) {
    const Shape& s = x.shape();
    if (s.empty() || s.back() == 0) {
        throw ShapeError("maxpool: needs a non-empty last axis, got shape " + shape_string(s));
    }
    const std::size_t len = s.back();
    const std::size_t rows = shape_size(s) / len;
    const std::size_t out_len = (len + 1) / 2;
    Shape os = s;
    os.back() = out_len;
    Tensor out(os);
    std::vector<std::size_t> argmax(out.size());
    const double* xv = x.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < out_len; ++j) {
            std::size_t best = r * len + 2 * j;
            if (2 * j + 1 < len && xv[best + 1] > xv[best]) ++best;
            out[r * out_len + j] = xv[best];
            argmax[r * out_len + j] = best;
        }
    }
    const std::size_t idx = x.id();
    return x.tape().push(std::move(out), OpTag::MaxPool, {idx},
                         [idx, argmax = std::move(argmax)](Tape& tp, std::size_t self) {
        const double* g = tp.grad_buffer(self).data();
        double* gx = tp.grad_buffer(idx).data();
        for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += g[i];
    });
}

Var relu(Var a) {
    return unary(OpTag::Relu, a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
    return unary(OpTag::Tanh, a, [](double x) { return std::tanh(x); },
                 [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
    return unary(OpTag::Sigmoid, a,
                 [](double x) {
                     if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
                     const double e = std::exp(x);
                     return e / (1.0 + e);
                 },
                 [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var a) {
    return unary(OpTag::Exp, a, [](double x) { return std::exp(x); },
                 [](double, double y) { return y; });
}

Var log(Var a) {
    return unary(OpTag::Log, a, [](double x) { return std::log(x); },
                 [](double x, double) { return 1.0 / x; });
}

Var log1p(Var a) {
    return unary(OpTag::Log1p, a, [](double x) { return std::log1p(x); },
                 [](double x, double) { return 1.0 / (1.0 + x); });
}

Var scale(Var a, double factor) {
    return unary(OpTag::Scale, a, [factor](double x) { return factor * x; },
                 [factor](double, double) { return factor; });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
    if (parts.empty()) {
        throw ShapeError("concat: no inputs");
    }
    const Shape& first = parts[0].shape();
    check_axis("concat", first, axis);
    Shape os = first;
    os[axis] = 0;
    for (const Var& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size()) mismatch("concat", first, s);
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != axis && s[i] != first[i]) mismatch("concat", first, s);
        }
        os[axis] += s[axis];
    }
    const AxisSplit whole = split_at(os, axis);
    Tensor out(os);
    std::vector<std::size_t> ids, offsets, widths;
    std::size_t offset = 0;
    for (const Var& p : parts) {
        const AxisSplit ps = split_at(p.shape(), axis);
        const double* pv = p.value().data();
        for (std::size_t o = 0; o < ps.outer; ++o) {
            std::copy_n(pv + o * ps.n * ps.inner, ps.n * ps.inner,
                        out.data() + (o * whole.n + offset) * whole.inner);
        }
        ids.push_back(p.id());
        offsets.push_back(offset);
        widths.push_back(ps.n);
        offset += ps.n;
    }
    Tape& t = parts[0].tape();
    std::vector<std::size_t> parents = ids;
    return t.push(std::move(out), OpTag::Concat, std::move(parents),
                  [ids, offsets, widths, whole](Tape& tp, std::size_t self) {
        const double* g = tp.grad_buffer(self).data();
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!tp.requires_grad(ids[k])) continue;
            double* gp = tp.grad_buffer(ids[k]).data();
            const std::size_t span = widths[k] * whole.inner;
            for (std::size_t o = 0; o < whole.outer; ++o) {
                const double* src = g + (o * whole.n + offsets[k]) * whole.inner;
                double* dst = gp + o * span;
                for (std::size_t i = 0; i < span; ++i) dst[i] += src[i];
            }
        }
    });
}

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
    return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

namespace {

Var reduce_sum(OpTag tag, Var a, std::size_t axis, double factor) {
    check_axis(op_name(tag), a.shape(), axis);
    const AxisSplit sp = split_at(a.shape(), axis);
    Tensor out(without_axis(a.shape(), axis));
    const double* av = a.value().data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t j = 0; j < sp.n; ++j) {
            const double* src = av + (o * sp.n + j) * sp.inner;
            double* dst = out.data() + o * sp.inner;
            for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
        }
    }
    if (factor != 1.0) {
        for (auto& v : out.values()) v *= factor;
    }
    const std::size_t ida = a.id();
    return a.tape().push(std::move(out), tag, {ida}, [ida, sp, factor](Tape& tp, std::size_t self) {
        const double* g = tp.grad_buffer(self).data();
        double* ga = tp.grad_buffer(ida).data();
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t j = 0; j < sp.n; ++j) {
                double* dst = ga + (o * sp.n + j) * sp.inner;
                const double* src = g + o * sp.inner;
                for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += factor * src[i];
            }
        }
    });
}

}  // namespace

Var mean(Var a, std::size_t axis) {
    check_axis("mean", a.shape(), axis);
    const std::size_t n = a.shape()[axis];
    if (n == 0) {
        throw ShapeError("mean: empty axis in shape " + shape_string(a.shape()));
    }
    return reduce_sum(OpTag::Mean, a, axis, 1.0 / static_cast<double>(n));
}

Var sum(Var a, std::size_t axis) { return reduce_sum(OpTag::Sum, a, axis, 1.0); }

Var sum(Var a) {
    double total = 0.0;
    for (double v : a.value().values()) total += v;
    const std::size_t ida = a.id();
    return a.tape().push(Tensor::scalar(total), OpTag::Sum, {ida}, [ida](Tape& tp, std::size_t self) {
        const double g = tp.grad_buffer(self)[0];
        for (auto& v : tp.grad_buffer(ida).values()) v += g;
    });
}

Var l2norm(Var a, std::size_t axis) {
    check_axis("l2norm", a.shape(), axis);
    const AxisSplit sp = split_at(a.shape(), axis);
    Tensor out(without_axis(a.shape(), axis));
    const double* av = a.value().data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < sp.n; ++j) {
                const double v = av[(o * sp.n + j) * sp.inner + i];
                acc += v * v;
            }
            out[o * sp.inner + i] = std::sqrt(acc);
        }
    }
    const std::size_t ida = a.id();
    return a.tape().push(std::move(out), OpTag::L2Norm, {ida}, [ida, sp](Tape& tp, std::size_t self) {
        const double* g = tp.grad_buffer(self).data();
        const double* y = tp.value(self).data();
        const double* av = tp.value(ida).data();
        double* ga = tp.grad_buffer(ida).data();
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t i = 0; i < sp.inner; ++i) {
                const double norm = y[o * sp.inner + i];
                if (norm == 0.0) continue;  // subgradient 0 at the origin
                const double coef = g[o * sp.inner + i] / norm;
                for (std::size_t j = 0; j < sp.n; ++j) {
                    const std::size_t k = (o * sp.n + j) * sp.inner + i;
                    ga[k] += coef * av[k];
                }
            }
        }
    });
}

Var reshape(Var a, Shape shape) {
    if (shape_size(shape) != a.value().size()) {
        mismatch("reshape", a.shape(), shape);
    }
    const std::size_t ida = a.id();
    return a.tape().push(a.value().reshaped(std::move(shape)), OpTag::Reshape, {ida},
                         [ida](Tape& tp, std::size_t self) {
        const auto g = tp.grad_buffer(self).values();
        auto ga = tp.grad_buffer(ida).values();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length) {
    check_axis("slice", a.shape(), axis);
    if (start + length > a.shape()[axis]) {
        throw ShapeError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + length) + ") exceeds axis " + std::to_string(axis) +
                         " of shape " + shape_string(a.shape()));
    }
    const AxisSplit sp = split_at(a.shape(), axis);
    Shape os = a.shape();
    os[axis] = length;
    Tensor out(os);
    const double* av = a.value().data();
    const std::size_t span = length * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
        std::copy_n(av + (o * sp.n + start) * sp.inner, span, out.data() + o * span);
    }
    const std::size_t ida = a.id();
    return a.tape().push(std::move(out), OpTag::Slice, {ida},
                         [ida, sp, start, span](Tape& tp, std::size_t self) {
        const double* g = tp.grad_buffer(self).data();
        double* ga = tp.grad_buffer(ida).data();
        for (std::size_t o = 0; o < sp.outer; ++o) {
            double* dst = ga + (o * sp.n + start) * sp.inner;
            const double* src = g + o * span;
            for (std::size_t i = 0; i < span; ++i) dst[i] += src[i];
        }
    });
}

Var select(Var a, std::size_t axis, std::size_t index) {
    check_axis("select", a.shape(), axis);
    Var s = slice(a, axis, index, 1);
    return reshape(s, without_axis(a.shape(), axis));
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
    const Shape& s = a.shape();
    if (s.empty()) {
        throw ShapeError("gather_rows: needs rank >= 1, got scalar");
    }
    const std::size_t width = shape_size(s) / std::max<std::size_t>(s[0], 1);
    Shape os = s;
    os[0] = rows.size();
    Tensor out(os);
    const double* av = a.value().data();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= s[0]) {
            throw ShapeError("gather_rows: row " + std::to_string(rows[r]) +
                             " out of range for shape " + shape_string(s));
        }
        std::copy_n(av + rows[r] * width, width, out.data() + r * width);
    }
    const std::size_t ida = a.id();
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return a.tape().push(std::move(out), OpTag::GatherRows, {ida},
                         [ida, idx = std::move(idx), width](Tape& tp, std::size_t self) {
        const double* g = tp.grad_buffer(self).data();
        double* ga = tp.grad_buffer(ida).data();
        for (std::size_t r = 0; r < idx.size(); ++r) {
            double* dst = ga + idx[r] * width;
            const double* src = g + r * width;
            for (std::size_t i = 0; i < width; ++i) dst[i] += src[i];
        }
    });
}

}  // namespace ad
}  // namespace aml
