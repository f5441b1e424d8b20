#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gradcheck.hpp"

namespace rppgid::testing {

struct OpCases {
  ParamStore params;
  std::vector<std::pair<std::string, LossBuilder>> cases;
};

// One scalar loss per differentiable op (or short op chain) over random
// parameters drawn from `seed`.
inline OpCases op_gradient_cases(std::uint64_t seed) {
  Rng rng(seed);
  OpCases out;
  ParamStore& p = out.params;
  p.set("x2", random_tensor({3, 4}, rng));
  p.set("w", random_tensor({4, 5}, rng));
  p.set("b", random_tensor({5}, rng));
  p.set("x3", random_tensor({2, 3, 9}, rng));
  p.set("k1", random_tensor({4, 3, 5}, rng, 0.5));
  p.set("x4", random_tensor({1, 2, 6, 7}, rng));
  p.set("k2", random_tensor({3, 2, 3, 3}, rng, 0.5));
  p.set("cb", random_tensor({3}, rng));
  p.set("tok", random_tensor({2, 3, 4}, rng));
  p.set("wq", random_tensor({4, 4}, rng, 0.5));
  p.set("wk", random_tensor({4, 4}, rng, 0.5));
  p.set("wv", random_tensor({4, 4}, rng, 0.5));
  p.set("gamma", random_tensor({4}, rng));
  p.set("beta", random_tensor({4}, rng));
  p.set("sig", random_tensor({40}, rng));
  p.set("pos", Tensor::vector({0.3, 1.2, 0.7, 2.1, 0.9}));

  const std::uint64_t ws = seed * 31 + 7;
  out.cases = {
      {"dense", [ws](Tape& t, const ParamStore& q) {
         return weighted_sum(t, ops::dense(t, t.param(q, "x2"), t.param(q, "w"), t.param(q, "b")), ws);
       }},
      {"conv1d+tanh", [ws](Tape& t, const ParamStore& q) {
         return weighted_sum(t, ops::tanh(t, ops::conv1d(t, t.param(q, "x3"), t.param(q, "k1"))), ws);
       }},
      {"conv2d+bias+relu", [ws](Tape& t, const ParamStore& q) {
         Var y = ops::add_channel_bias(t, ops::conv2d(t, t.param(q, "x4"), t.param(q, "k2")), t.param(q, "cb"));
         return weighted_sum(t, ops::relu(t, y), ws);
       }},
      {"pools", [ws](Tape& t, const ParamStore& q) {
         Var y = ops::avgpool_rows(t, t.param(q, "x4"), 3);
         return weighted_sum(t, ops::maxpool_last(t, ops::reshape(t, y, {2, 2, 7}), 2), ws);
       }},
      {"attention", [ws](Tape& t, const ParamStore& q) {
         Var y = ops::attention(t, t.param(q, "tok"), t.param(q, "wq"), t.param(q, "wk"), t.param(q, "wv"), 2);
         return weighted_sum(t, y, ws);
       }},
      {"layer_norm", [ws](Tape& t, const ParamStore& q) {
         return weighted_sum(t, ops::layer_norm(t, t.param(q, "tok"), t.param(q, "gamma"), t.param(q, "beta")), ws);
       }},
      {"softmax+nll", [](Tape& t, const ParamStore& q) {
         return ops::nll(t, ops::softmax(t, t.param(q, "x2")), 2);
       }},
      {"mean_axis+swap", [ws](Tape& t, const ParamStore& q) {
         Var y = ops::mean_axis(t, ops::swap_last2(t, t.param(q, "tok")), 1);
         return weighted_sum(t, ops::mul(t, y, y), ws);
       }},
      {"psd-chain", [ws](Tape& t, const ParamStore& q) {
         Var c = ops::center(t, ops::slice_row(t, ops::reshape(t, t.param(q, "sig"), {4, 10}), 1, 2, 8));
         Var s = ops::normalize_sum(t, ops::add(t, ops::square(t, c), t.constant(Tensor({8}, 0.5))));
         Var st = ops::stack(t, std::vector<Var>{s, ops::scale(t, s, 2.0)});
         return weighted_sum(t, ops::sub(t, st, ops::mul(t, st, st)), ws);
       }},
      {"matmul+add_bias+mean", [](Tape& t, const ParamStore& q) {
         Var y = ops::add_bias(t, ops::matmul(t, t.param(q, "x2"), t.param(q, "w")), t.param(q, "b"));
         return ops::mean(t, ops::tanh(t, y));
       }},
      {"mul_const+sum", [](Tape& t, const ParamStore& q) {
         Var y = ops::mul_const(t, t.param(q, "x2"), Tensor({3, 4}, 0.7));
         return ops::sum(t, ops::square(t, y));
       }},
      {"normalize_sum", [ws](Tape& t, const ParamStore& q) {
         Var s = ops::normalize_sum(t, t.param(q, "pos"));
         return weighted_sum(t, s, ws);
       }},
      {"resample+zscore", [ws](Tape& t, const ParamStore& q) {
         const std::vector<std::size_t> starts{2, 11, 25}, ends{11, 25, 33};
         Var c = ops::resample_clips(t, t.param(q, "sig"), starts, ends, 17);
         return weighted_sum(t, ops::zscore_rows(t, c), ws);
       }},
      {"self_adjoint", [ws](Tape& t, const ParamStore& q) {
         // Symmetric 3-point smoother with circular wrap.
         const ops::LinearMap smooth = [](std::span<const double> x) {
           std::vector<double> y(x.size());
           const std::size_t n = x.size();
           for (std::size_t i = 0; i < n; ++i) y[i] = 0.5 * x[i] + 0.25 * (x[(i + 1) % n] + x[(i + n - 1) % n]);
           return y;
         };
         return weighted_sum(t, ops::apply_self_adjoint(t, t.param(q, "sig"), smooth), ws);
       }},
  };
  return out;
}

}  // namespace rppgid::testing
