#include "lrod/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "conv_kernels.hpp"
#include "lrod/error.hpp"

namespace lrod::ops {

namespace {

using ad::Tape;

Tape& tape_of(const Var& a) { return a.tape(); }

// Records an op whose backward rule needs its own output Var.
template <class F>
Var record_self(const char* op, Tensor value, std::vector<Var> parents, F&& fn) {
    Tape& t = tape_of(parents.front());
    auto self = std::make_shared<Var>();
    Var out = t.record(op, std::move(value), std::move(parents),
                       [self, fn = std::forward<F>(fn)](const Var& g) { return fn(*self, g); });
    *self = out;
    return out;
}

template <class F>
Tensor map(const Tensor& a, F f) {
    Tensor out(a.shape());
    auto src = a.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
    return out;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `in` viewed inside `out` (0 on broadcast axes).
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t s = 1;
    for (std::size_t k = in.size(); k-- > 0;) {
        const std::size_t axis = k + (out.size() - in.size());
        strides[axis] = in[k] == 1 ? 0 : s;
        s *= in[k];
    }
    return strides;
}

// Calls f(out_index, in_offset) over every element of `out`.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& strides, F f) {
    const std::size_t n = numel(out);
    const std::size_t rank = out.size();
    if (rank == 0) {
        f(0, 0);
        return;
    }
    std::vector<std::size_t> idx(rank, 0);
    std::size_t off = 0;
    const std::size_t inner = out[rank - 1];
    const std::size_t inner_stride = strides[rank - 1];
    for (std::size_t i = 0; i < n; i += inner) {
        for (std::size_t j = 0; j < inner; ++j) f(i + j, off + j * inner_stride);
        for (std::size_t k = rank - 1; k-- > 0;) {
            ++idx[k];
            off += strides[k];
            if (idx[k] < out[k]) break;
            off -= strides[k] * idx[k];
            idx[k] = 0;
        }
    }
}

template <class F>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, F f) {
    if (a.shape() == b.shape()) {
        Tensor out(a.shape());
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
        return out;
    }
    const Shape shape = broadcast_shape(a.shape(), b.shape(), op);
    Tensor out(shape);
    if (b.size() == 1 && a.shape() == shape) {
        const double bv = b[0];
        for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], bv);
        return out;
    }
    const auto sa = broadcast_strides(a.shape(), shape);
    const auto sb = broadcast_strides(b.shape(), shape);
    // Walk a's and b's offsets with a shared counter.
    std::vector<std::size_t> offa(out.size());
    for_each_broadcast(shape, sa, [&](std::size_t i, std::size_t o) { offa[i] = o; });
    for_each_broadcast(shape, sb, [&](std::size_t i, std::size_t o) { out[i] = f(a[offa[i]], b[o]); });
    return out;
}

Tensor sum_to_value(const Tensor& a, const Shape& shape) {
    if (a.shape() == shape) return a;
    if (broadcast_shape(shape, a.shape(), "sum_to") != a.shape())
        throw ShapeError("sum_to: " + to_string(shape) + " does not broadcast to " + to_string(a.shape()));
    Tensor out(shape);
    const auto strides = broadcast_strides(shape, a.shape());
    for_each_broadcast(a.shape(), strides, [&](std::size_t i, std::size_t o) { out[o] += a[i]; });
    return out;
}

Tensor broadcast_value(const Tensor& a, const Shape& shape) {
    if (a.shape() == shape) return a;
    if (broadcast_shape(a.shape(), shape, "broadcast_to") != shape)
        throw ShapeError("broadcast_to: " + to_string(a.shape()) + " does not broadcast to " + to_string(shape));
    Tensor out(shape);
    const auto strides = broadcast_strides(a.shape(), shape);
    for_each_broadcast(shape, strides, [&](std::size_t i, std::size_t o) { out[i] = a[o]; });
    return out;
}

void check_axis(const Shape& s, std::size_t axis, const char* op) {
    if (axis >= s.size())
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + to_string(s));
}

// outer = prod(dims before axis), inner = prod(dims after axis).
std::pair<std::size_t, std::size_t> outer_inner(const Shape& s, std::size_t axis) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    return {outer, inner};
}

void require_nchw(const Shape& s, const char* op) {
    if (s.size() != 4) throw ShapeError(std::string(op) + " expects an NCHW tensor, got " + to_string(s));
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise arithmetic

Var add(const Var& a, const Var& b) {
    return tape_of(a).record("add", binary(a.value(), b.value(), "add", [](double x, double y) { return x + y; }),
                             {a, b}, [a, b](const Var& g) {
                                 return std::vector<Var>{sum_to(g, a.shape()), sum_to(g, b.shape())};
                             });
}

Var sub(const Var& a, const Var& b) {
    return tape_of(a).record("sub", binary(a.value(), b.value(), "sub", [](double x, double y) { return x - y; }),
                             {a, b}, [a, b](const Var& g) {
                                 return std::vector<Var>{sum_to(g, a.shape()), sum_to(neg(g), b.shape())};
                             });
}

Var mul(const Var& a, const Var& b) {
    return tape_of(a).record("mul", binary(a.value(), b.value(), "mul", [](double x, double y) { return x * y; }),
                             {a, b}, [a, b](const Var& g) {
                                 return std::vector<Var>{sum_to(mul(g, b), a.shape()), sum_to(mul(g, a), b.shape())};
                             });
}

Var div(const Var& a, const Var& b) {
    return tape_of(a).record("div", binary(a.value(), b.value(), "div", [](double x, double y) { return x / y; }),
                             {a, b}, [a, b](const Var& g) {
                                 return std::vector<Var>{sum_to(div(g, b), a.shape()),
                                                         sum_to(neg(div(mul(g, a), mul(b, b))), b.shape())};
                             });
}

Var neg(const Var& a) {
    return tape_of(a).record("neg", map(a.value(), [](double x) { return -x; }), {a},
                             [](const Var& g) { return std::vector<Var>{neg(g)}; });
}

Var scale(const Var& a, double c) {
    return tape_of(a).record("scale", map(a.value(), [c](double x) { return c * x; }), {a},
                             [c](const Var& g) { return std::vector<Var>{scale(g, c)}; });
}

Var add_scalar(const Var& a, double c) {
    return tape_of(a).record("add_scalar", map(a.value(), [c](double x) { return x + c; }), {a},
                             [](const Var& g) { return std::vector<Var>{g}; });
}

Var mul_const(const Var& a, const Tensor& c) {
    auto cst = std::make_shared<const Tensor>(c);
    return tape_of(a).record("mul_const", binary(a.value(), c, "mul_const", [](double x, double y) { return x * y; }),
                             {a}, [a, cst](const Var& g) {
                                 return std::vector<Var>{sum_to(mul_const(g, *cst), a.shape())};
                             });
}

// ---------------------------------------------------------------------------
// Unary

Var exp(const Var& a) {
    return record_self("exp", map(a.value(), [](double x) { return std::exp(x); }), {a},
                       [](const Var& self, const Var& g) { return std::vector<Var>{mul(g, self)}; });
}

Var log(const Var& a) {
    for (double v : a.value().data())
        if (!(v > 0.0)) throw NumericError("log of non-positive value");
    return tape_of(a).record("log", map(a.value(), [](double x) { return std::log(x); }), {a},
                             [a](const Var& g) { return std::vector<Var>{div(g, a)}; });
}

Var sqrt(const Var& a) {
    for (double v : a.value().data())
        if (v < 0.0) throw NumericError("sqrt of negative value");
    return record_self("sqrt", map(a.value(), [](double x) { return std::sqrt(x); }), {a},
                       [](const Var& self, const Var& g) { return std::vector<Var>{div(g, scale(self, 2.0))}; });
}

Var pow(const Var& a, double p) {
    return tape_of(a).record("pow", map(a.value(), [p](double x) { return std::pow(x, p); }), {a},
                             [a, p](const Var& g) {
                                 if (p == 1.0) return std::vector<Var>{g};
                                 return std::vector<Var>{mul(g, scale(pow(a, p - 1.0), p))};
                             });
}

Var square(const Var& a) {
    return tape_of(a).record("square", map(a.value(), [](double x) { return x * x; }), {a},
                             [a](const Var& g) { return std::vector<Var>{mul(g, scale(a, 2.0))}; });
}

Var abs(const Var& a) {
    return tape_of(a).record("abs", map(a.value(), [](double x) { return std::abs(x); }), {a}, [a](const Var& g) {
        return std::vector<Var>{mul_const(g, map(a.value(), [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }))};
    });
}

Var relu(const Var& a) {
    return leaky_relu(a, 0.0);
}

Var leaky_relu(const Var& a, double slope) {
    return tape_of(a).record(slope == 0.0 ? "relu" : "leaky_relu",
                             map(a.value(), [slope](double x) { return x > 0 ? x : slope * x; }), {a},
                             [a, slope](const Var& g) {
                                 return std::vector<Var>{
                                     mul_const(g, map(a.value(), [slope](double x) { return x > 0 ? 1.0 : slope; }))};
                             });
}

Var sigmoid(const Var& a) {
    return record_self("sigmoid",
                       map(a.value(),
                           [](double x) {
                               if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
                               const double e = std::exp(x);
                               return e / (1.0 + e);
                           }),
                       {a}, [](const Var& self, const Var& g) {
                           return std::vector<Var>{mul(g, mul(self, add_scalar(neg(self), 1.0)))};
                       });
}

Var tanh(const Var& a) {
    return record_self("tanh", map(a.value(), [](double x) { return std::tanh(x); }), {a},
                       [](const Var& self, const Var& g) {
                           return std::vector<Var>{mul(g, add_scalar(neg(square(self)), 1.0))};
                       });
}

Var softplus(const Var& a) {
    return tape_of(a).record("softplus",
                             map(a.value(), [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }),
                             {a}, [a](const Var& g) { return std::vector<Var>{mul(g, sigmoid(a))}; });
}

Var smooth_l1(const Var& a) {
    return tape_of(a).record("smooth_l1",
                             map(a.value(),
                                 [](double x) {
                                     const double ax = std::abs(x);
                                     return ax < 1.0 ? 0.5 * x * x : ax - 0.5;
                                 }),
                             {a}, [a](const Var& g) { return std::vector<Var>{mul(g, clamp(a, -1.0, 1.0))}; });
}

Var clamp(const Var& a, double lo, double hi) {
    if (!(lo <= hi)) throw ParameterError("clamp: lo must not exceed hi");
    return tape_of(a).record("clamp", map(a.value(), [lo, hi](double x) { return std::clamp(x, lo, hi); }), {a},
                             [a, lo, hi](const Var& g) {
                                 return std::vector<Var>{mul_const(
                                     g, map(a.value(), [lo, hi](double x) { return (x > lo && x < hi) ? 1.0 : 0.0; }))};
                             });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Var reshape(const Var& a, Shape shape) {
    const Shape from = a.shape();
    return tape_of(a).record("reshape", a.value().reshaped(std::move(shape)), {a},
                             [from](const Var& g) { return std::vector<Var>{reshape(g, from)}; });
}

Var broadcast_to(const Var& a, const Shape& shape) {
    if (a.shape() == shape) return a;
    const Shape from = a.shape();
    return tape_of(a).record("broadcast_to", broadcast_value(a.value(), shape), {a},
                             [from](const Var& g) { return std::vector<Var>{sum_to(g, from)}; });
}

Var sum_to(const Var& a, const Shape& shape) {
    if (a.shape() == shape) return a;
    const Shape from = a.shape();
    return tape_of(a).record("sum_to", sum_to_value(a.value(), shape), {a},
                             [from](const Var& g) { return std::vector<Var>{broadcast_to(g, from)}; });
}

Var slice(const Var& a, std::size_t axis, std::size_t start, std::size_t length) {
    const Shape& s = a.shape();
    check_axis(s, axis, "slice");
    if (length == 0 || start + length > s[axis])
        throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range on axis " + std::to_string(axis) + " of " + to_string(s));
    auto [outer, inner] = outer_inner(s, axis);
    Shape os = s;
    os[axis] = length;
    Tensor out(os);
    const auto& src = a.value();
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(src.data().data() + (o * s[axis] + start) * inner, length * inner,
                    out.data().data() + o * length * inner);
    const std::size_t full = s[axis];
    return tape_of(a).record("slice", std::move(out), {a}, [axis, start, full](const Var& g) {
        return std::vector<Var>{pad_axis(g, axis, start, full)};
    });
}

Var pad_axis(const Var& a, std::size_t axis, std::size_t start, std::size_t full) {
    const Shape& s = a.shape();
    check_axis(s, axis, "pad_axis");
    if (start + s[axis] > full) throw ShapeError("pad_axis: target extent too small for " + to_string(s));
    auto [outer, inner] = outer_inner(s, axis);
    Shape os = s;
    os[axis] = full;
    Tensor out(os);
    const std::size_t len = s[axis];
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(a.value().data().data() + o * len * inner, len * inner,
                    out.data().data() + (o * full + start) * inner);
    return tape_of(a).record("pad_axis", std::move(out), {a}, [axis, start, len](const Var& g) {
        return std::vector<Var>{slice(g, axis, start, len)};
    });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const Shape& s0 = parts[0].shape();
    check_axis(s0, axis, "concat");
    std::size_t total = 0;
    std::vector<std::size_t> lens;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == s0.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == s0[i];
        if (!ok) throw ShapeError("concat: shape " + to_string(s) + " incompatible with " + to_string(s0));
        lens.push_back(s[axis]);
        total += s[axis];
    }
    auto [outer, inner] = outer_inner(s0, axis);
    Shape os = s0;
    os[axis] = total;
    Tensor out(os);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& src = parts[k].value();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(src.data().data() + o * lens[k] * inner, lens[k] * inner,
                        out.data().data() + (o * total + offset) * inner);
        offset += lens[k];
    }
    std::vector<Var> parents(parts.begin(), parts.end());
    return tape_of(parts[0]).record("concat", std::move(out), parents, [axis, lens](const Var& g) {
        std::vector<Var> r;
        std::size_t off = 0;
        for (auto len : lens) {
            r.push_back(slice(g, axis, off, len));
            off += len;
        }
        return r;
    });
}

Var transpose(const Var& a) {
    const Shape& s = a.shape();
    if (s.size() != 2) throw ShapeError("transpose expects rank 2, got " + to_string(s));
    Tensor out({s[1], s[0]});
    for (std::size_t i = 0; i < s[0]; ++i)
        for (std::size_t j = 0; j < s[1]; ++j) out[j * s[0] + i] = a.value()[i * s[1] + j];
    return tape_of(a).record("transpose", std::move(out), {a},
                             [](const Var& g) { return std::vector<Var>{transpose(g)}; });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    const Shape from = a.shape();
    return tape_of(a).record("sum", Tensor::scalar(s), {a},
                             [from](const Var& g) { return std::vector<Var>{broadcast_to(g, from)}; });
}

Var sum_axis(const Var& a, std::size_t axis, bool keepdim) {
    const Shape& s = a.shape();
    check_axis(s, axis, "sum_axis");
    auto [outer, inner] = outer_inner(s, axis);
    Shape kept = s;
    kept[axis] = 1;
    Tensor out(kept);
    const auto& src = a.value();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < s[axis]; ++k)
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += src[(o * s[axis] + k) * inner + i];
    Shape os = kept;
    if (!keepdim) os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
    const Shape from = s;
    return tape_of(a).record("sum_axis", out.reshaped(os), {a}, [from, kept](const Var& g) {
        return std::vector<Var>{broadcast_to(reshape(g, kept), from)};
    });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var dot(const Var& a, const Var& b) {
    require_same_shape(a.shape(), b.shape(), "dot");
    return sum(mul(a, b));
}

Tensor max_along(const Tensor& a, std::size_t axis) {
    const Shape& s = a.shape();
    check_axis(s, axis, "max_along");
    auto [outer, inner] = outer_inner(s, axis);
    Shape kept = s;
    kept[axis] = 1;
    Tensor out(kept, -std::numeric_limits<double>::infinity());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < s[axis]; ++k)
            for (std::size_t i = 0; i < inner; ++i)
                out[o * inner + i] = std::max(out[o * inner + i], a[(o * s[axis] + k) * inner + i]);
    return out;
}

Var softmax(const Var& a, std::size_t axis) {
    Tape& t = tape_of(a);
    const Var e = exp(sub(a, t.constant(max_along(a.value(), axis))));
    return div(e, sum_axis(e, axis, true));
}

Var log_softmax(const Var& a, std::size_t axis) {
    Tape& t = tape_of(a);
    const Var z = sub(a, t.constant(max_along(a.value(), axis)));
    return sub(z, log(sum_axis(exp(z), axis, true)));
}

// ---------------------------------------------------------------------------
// Linear algebra and image operators

Var matmul(const Var& a, const Var& b) {
    return tape_of(a).record("matmul", kernels::matmul(a.value(), b.value()), {a, b}, [a, b](const Var& g) {
        return std::vector<Var>{matmul(g, transpose(b)), matmul(transpose(a), g)};
    });
}

Var conv2d(const Var& x, const Var& w, std::size_t stride, std::size_t pad) {
    const auto geom = kernels::conv_geometry(x.shape(), w.shape(), stride, pad);
    const Shape xs = x.shape(), ws = w.shape();
    return tape_of(x).record("conv2d", kernels::conv2d_forward(x.value(), w.value(), geom), {x, w},
                             [x, w, xs, ws, stride, pad](const Var& g) {
                                 return std::vector<Var>{conv2d_input_grad(g, w, xs, stride, pad),
                                                         conv2d_weight_grad(x, g, ws, stride, pad)};
                             });
}

Var conv2d_input_grad(const Var& g, const Var& w, const Shape& x_shape, std::size_t stride, std::size_t pad) {
    const auto geom = kernels::conv_geometry(x_shape, w.shape(), stride, pad);
    const Shape expect{geom.batch, geom.out_channels, geom.out_height, geom.out_width};
    require_same_shape(g.shape(), expect, "conv2d_input_grad");
    const Shape ws = w.shape();
    return tape_of(g).record("conv2d_input_grad", kernels::conv2d_input_grad(g.value(), w.value(), geom), {g, w},
                             [g, w, ws, stride, pad](const Var& gg) {
                                 return std::vector<Var>{conv2d(gg, w, stride, pad),
                                                         conv2d_weight_grad(gg, g, ws, stride, pad)};
                             });
}

Var conv2d_weight_grad(const Var& x, const Var& g, const Shape& w_shape, std::size_t stride, std::size_t pad) {
    const auto geom = kernels::conv_geometry(x.shape(), w_shape, stride, pad);
    const Shape expect{geom.batch, geom.out_channels, geom.out_height, geom.out_width};
    require_same_shape(g.shape(), expect, "conv2d_weight_grad");
    const Shape xs = x.shape();
    return tape_of(x).record("conv2d_weight_grad", kernels::conv2d_weight_grad(x.value(), g.value(), geom), {x, g},
                             [x, g, xs, stride, pad](const Var& gw) {
                                 return std::vector<Var>{conv2d_input_grad(g, gw, xs, stride, pad),
                                                         conv2d(x, gw, stride, pad)};
                             });
}

Var upsample2x(const Var& x) {
    const Shape& s = x.shape();
    require_nchw(s, "upsample2x");
    const std::size_t H = s[2], W = s[3];
    Tensor out({s[0], s[1], 2 * H, 2 * W});
    const auto& src = x.value();
    for (std::size_t p = 0; p < s[0] * s[1]; ++p)
        for (std::size_t i = 0; i < 2 * H; ++i) {
            const double* row = src.data().data() + (p * H + i / 2) * W;
            double* dst = out.data().data() + (p * 2 * H + i) * 2 * W;
            for (std::size_t j = 0; j < 2 * W; ++j) dst[j] = row[j / 2];
        }
    return tape_of(x).record("upsample2x", std::move(out), {x},
                             [](const Var& g) { return std::vector<Var>{sum_pool2x(g)}; });
}

Var sum_pool2x(const Var& x) {
    const Shape& s = x.shape();
    require_nchw(s, "sum_pool2x");
    if (s[2] % 2 || s[3] % 2) throw ShapeError("sum_pool2x needs even spatial extents, got " + to_string(s));
    const std::size_t H = s[2] / 2, W = s[3] / 2;
    Tensor out({s[0], s[1], H, W});
    const auto& src = x.value();
    for (std::size_t p = 0; p < s[0] * s[1]; ++p)
        for (std::size_t i = 0; i < 2 * H; ++i) {
            const double* row = src.data().data() + (p * 2 * H + i) * 2 * W;
            double* dst = out.data().data() + (p * H + i / 2) * W;
            for (std::size_t j = 0; j < 2 * W; ++j) dst[j / 2] += row[j];
        }
    return tape_of(x).record("sum_pool2x", std::move(out), {x},
                             [](const Var& g) { return std::vector<Var>{upsample2x(g)}; });
}

Var max_pool2x(const Var& x) {
    const Shape& s = x.shape();
    require_nchw(s, "max_pool2x");
    if (s[2] % 2 || s[3] % 2) throw ShapeError("max_pool2x needs even spatial extents, got " + to_string(s));
    const std::size_t H = s[2] / 2, W = s[3] / 2;
    std::vector<std::size_t> index(s[0] * s[1] * H * W);
    const auto& v = x.value();
    for (std::size_t p = 0; p < s[0] * s[1]; ++p)
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) {
                std::size_t best = (p * s[2] + 2 * i) * s[3] + 2 * j;
                for (std::size_t di = 0; di < 2; ++di)
                    for (std::size_t dj = 0; dj < 2; ++dj) {
                        const std::size_t k = (p * s[2] + 2 * i + di) * s[3] + 2 * j + dj;
                        if (v[k] > v[best]) best = k;
                    }
                index[(p * H + i) * W + j] = best;
            }
    return gather(x, std::move(index), {s[0], s[1], H, W});
}

Var gather(const Var& a, std::vector<std::size_t> index, Shape shape) {
    if (index.size() != numel(shape)) throw ShapeError("gather: index count does not match " + to_string(shape));
    Tensor out(shape);
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= a.value().size()) throw ShapeError("gather: index out of range");
        out[i] = a.value()[index[i]];
    }
    auto idx = std::make_shared<const std::vector<std::size_t>>(std::move(index));
    const Shape from = a.shape();
    return tape_of(a).record("gather", std::move(out), {a}, [idx, from](const Var& g) {
        return std::vector<Var>{scatter_add(g, *idx, from)};
    });
}

Var scatter_add(const Var& a, std::vector<std::size_t> index, Shape shape) {
    if (index.size() != a.value().size()) throw ShapeError("scatter_add: index count does not match operand");
    Tensor out(shape);
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= out.size()) throw ShapeError("scatter_add: index out of range");
        out[index[i]] += a.value()[i];
    }
    auto idx = std::make_shared<const std::vector<std::size_t>>(std::move(index));
    const Shape from = a.shape();
    return tape_of(a).record("scatter_add", std::move(out), {a}, [idx, from](const Var& g) {
        return std::vector<Var>{gather(g, *idx, from)};
    });
}

}  // namespace lrod::ops
