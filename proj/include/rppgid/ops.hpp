#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "rppgid/tape.hpp"

// Differentiable operations recorded on a Tape. Shapes are checked on entry and
// mismatches raise DimensionError; kernel-parity problems raise ConfigError.
namespace rppgid::ops {

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double c);
Var square(Tape& t, Var a);
Var tanh(Tape& t, Var a);
Var relu(Tape& t, Var a);

// Elementwise product with a constant of the same shape.
Var mul_const(Tape& t, Var a, const Tensor& c);

Var sum(Tape& t, Var a);
Var mean(Tape& t, Var a);
// Mean over one axis; the axis is removed from the shape.
Var mean_axis(Tape& t, Var a, std::size_t axis);

Var reshape(Tape& t, Var a, Shape shape);
// [A x B x C] -> [A x C x B]
Var swap_last2(Tape& t, Var a);

// [M x K] * [K x N]
Var matmul(Tape& t, Var a, Var b);
// b broadcast over the last axis of x.
Var add_bias(Tape& t, Var x, Var b);
// b broadcast over axis 1 (channels) of x with rank >= 2.
Var add_channel_bias(Tape& t, Var x, Var b);
// x [B x I] * w [I x O] + b [O]; any leading dims of x are flattened.
Var dense(Tape& t, Var x, Var w, Var b);

// x [B x C x L], k [O x C x K], K odd, zero 'same' padding, cross-correlation.
Var conv1d(Tape& t, Var x, Var k);
// x [B x C x H x W], k [O x C x Kh x Kw], odd extents, zero 'same' padding.
Var conv2d(Tape& t, Var x, Var k);

// Non-overlapping max pooling over the last axis; a trailing remainder is dropped.
Var maxpool_last(Tape& t, Var x, std::size_t factor);
// Non-overlapping mean pooling over axis 2 of [B x C x H x W].
Var avgpool_rows(Tape& t, Var x, std::size_t factor);

// Softmax over the last axis with max subtraction.
Var softmax(Tape& t, Var x);
// -(1/K) sum_k log(max(p[k, label], floor)) over rows of p [K x N].
Var nll(Tape& t, Var probs, std::size_t label, double floor = 1e-12);

// Layer norm over the last axis with affine gamma/beta.
Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5);

// Multi-head scaled dot-product self-attention, x [B x L x D], w* [D x D].
// Returns the concatenated head outputs (no output projection, no residual).
Var attention(Tape& t, Var x, Var wq, Var wk, Var wv, std::size_t heads);

// Row `row`, columns [start, start + len) of a 2-D tensor, as a 1-D tensor.
Var slice_row(Tape& t, Var x, std::size_t row, std::size_t start, std::size_t len);
// Stacks equal-length 1-D tensors into [n x len].
Var stack(Tape& t, std::span<const Var> rows);

// Subtracts the mean of a 1-D tensor.
Var center(Tape& t, Var x);
// Divides a 1-D tensor by its sum.
Var normalize_sum(Tape& t, Var x);

// y = A x for a self-adjoint linear map A on 1-D tensors; the backward pass
// applies the same map to the incoming gradient.
using LinearMap = std::function<std::vector<double>(std::span<const double>)>;
Var apply_self_adjoint(Tape& t, Var x, const LinearMap& a);

// Linear resampling of peak-to-peak clips of a 1-D signal: clip k spans
// samples [starts[k], ends[k]] inclusive and becomes `len` samples.
Var resample_clips(Tape& t, Var x, std::span<const std::size_t> starts,
                   std::span<const std::size_t> ends, std::size_t len);
// Zero-mean, unit-variance rows of [K x L]; rows with no variance become zeros.
Var zscore_rows(Tape& t, Var x);

}  // namespace rppgid::ops
