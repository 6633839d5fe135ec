#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lrod/tape.hpp"

/// Differentiable primitives. Every operation records a node whose backward
/// rule is expressed with these same primitives, so any result can be
/// differentiated again.
///
/// Broadcasting aligns trailing dimensions; each aligned pair of extents must
/// be equal or one of them must be 1. Anything else needs an explicit reshape.
namespace lrod::ops {

using ad::Var;

// Elementwise arithmetic (broadcasting).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
/// Multiply by a constant tensor (broadcasting); no gradient flows to `c`.
Var mul_const(const Var& a, const Tensor& c);

// Unary functions.
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var pow(const Var& a, double exponent);
Var square(const Var& a);
Var abs(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope = 0.1);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
/// log(1 + exp(a)), computed stably.
Var softplus(const Var& a);
/// Huber with unit threshold: 0.5 a^2 for |a| < 1, |a| - 0.5 otherwise.
Var smooth_l1(const Var& a);
Var clamp(const Var& a, double lo, double hi);

// Shape manipulation.
Var reshape(const Var& a, Shape shape);
Var broadcast_to(const Var& a, const Shape& shape);
/// Sum over broadcast dimensions so the result has `shape`.
Var sum_to(const Var& a, const Shape& shape);
Var slice(const Var& a, std::size_t axis, std::size_t start, std::size_t length);
/// Adjoint of slice: embeds `a` at `start` along `axis` in zeros of extent `full`.
Var pad_axis(const Var& a, std::size_t axis, std::size_t start, std::size_t full);
Var concat(std::span<const Var> parts, std::size_t axis);
Var transpose(const Var& a);  // rank-2 only

// Reductions.
Var sum(const Var& a);
Var sum_axis(const Var& a, std::size_t axis, bool keepdim = false);
Var mean(const Var& a);
Var dot(const Var& a, const Var& b);
Var softmax(const Var& a, std::size_t axis);
Var log_softmax(const Var& a, std::size_t axis);
/// Max along an axis as plain values (keepdim); not differentiable.
Tensor max_along(const Tensor& a, std::size_t axis);

// Linear algebra and image operators (NCHW layout).
Var matmul(const Var& a, const Var& b);
Var conv2d(const Var& x, const Var& w, std::size_t stride, std::size_t pad);
Var conv2d_input_grad(const Var& g, const Var& w, const Shape& x_shape, std::size_t stride, std::size_t pad);
Var conv2d_weight_grad(const Var& x, const Var& g, const Shape& w_shape, std::size_t stride, std::size_t pad);
Var upsample2x(const Var& x);
/// Sum over non-overlapping 2x2 windows (adjoint of upsample2x).
Var sum_pool2x(const Var& x);
Var max_pool2x(const Var& x);
/// out[i] = a[index[i]]; result has `shape`.
Var gather(const Var& a, std::vector<std::size_t> index, Shape shape);
/// out[index[i]] += a[i] into zeros of `shape` (adjoint of gather).
Var scatter_add(const Var& a, std::vector<std::size_t> index, Shape shape);

}  // namespace lrod::ops

namespace lrod::ad {

inline Var operator+(const Var& a, const Var& b) { return ops::add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return ops::sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return ops::mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return ops::div(a, b); }
inline Var operator-(const Var& a) { return ops::neg(a); }
inline Var operator*(double c, const Var& a) { return ops::scale(a, c); }
inline Var operator*(const Var& a, double c) { return ops::scale(a, c); }
inline Var operator+(const Var& a, double c) { return ops::add_scalar(a, c); }
inline Var operator+(double c, const Var& a) { return ops::add_scalar(a, c); }
inline Var operator-(const Var& a, double c) { return ops::add_scalar(a, -c); }
inline Var operator-(double c, const Var& a) { return ops::add_scalar(ops::neg(a), c); }

}  // namespace lrod::ad
