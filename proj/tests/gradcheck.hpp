#pragma once

#include <cmath>
#include <functional>

#include "rppgid/ops.hpp"
#include "rppgid/params.hpp"
#include "rppgid/tape.hpp"

namespace rppgid::testing {

// Builds a scalar loss on a fresh tape from the given parameters.
using LossBuilder = std::function<Var(Tape&, const ParamStore&)>;

inline double eval_loss(const LossBuilder& build, const ParamStore& p) {
  Tape t;
  return t.value(build(t, p)).item();
}

// Largest norm-wise relative error between reverse-mode and central-difference
// gradients across all parameters.
inline double gradcheck(const LossBuilder& build, const ParamStore& params, double eps = 1e-4) {
  Tape t;
  Var loss = build(t, params);
  const Gradients analytic = grad(t, loss, params);
  const Gradients numeric = finite_diff([&](const ParamStore& p) { return eval_loss(build, p); }, params, eps);
  double worst = 0.0;
  for (const auto& [name, a] : analytic) {
    const Tensor& n = numeric.at(name);
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      diff += (a[i] - n[i]) * (a[i] - n[i]);
      ref += n[i] * n[i];
    }
    const double rel = std::sqrt(diff) / std::max(std::sqrt(ref), 1e-8);
    worst = std::max(worst, rel);
  }
  return worst;
}

// Like gradcheck, but central differences are taken only at up to `per_tensor`
// randomly chosen coordinates of each parameter tensor.
inline double sampled_gradcheck(const LossBuilder& build, const ParamStore& params, std::size_t per_tensor,
                                std::uint64_t seed, double eps = 1e-4) {
  Tape t;
  Var loss = build(t, params);
  const Gradients analytic = grad(t, loss, params);
  Rng rng(seed);
  ParamStore probe = params;
  double worst = 0.0;
  for (const auto& [name, a] : analytic) {
    Tensor& p = probe.get(name);
    double diff = 0.0, ref = 0.0;
    for (std::size_t s = 0; s < std::min(per_tensor, a.size()); ++s) {
      const std::size_t i = a.size() <= per_tensor ? s : rng.index(a.size());
      const double orig = p[i];
      p[i] = orig + eps;
      const double fp = eval_loss(build, probe);
      p[i] = orig - eps;
      const double fm = eval_loss(build, probe);
      p[i] = orig;
      const double n = (fp - fm) / (2.0 * eps);
      diff += (a[i] - n) * (a[i] - n);
      ref += n * n;
    }
    worst = std::max(worst, std::sqrt(diff) / std::max(std::sqrt(ref), 1e-8));
  }
  return worst;
}

// sum(y * w) for a fixed pseudo-random weight tensor w, turning any output into
// a scalar with a non-degenerate gradient.
inline Var weighted_sum(Tape& t, Var y, std::uint64_t seed) {
  Rng rng(seed);
  Tensor w(t.shape(y));
  for (auto& v : w.values()) v = rng.normal();
  return ops::sum(t, ops::mul_const(t, y, w));
}

inline Tensor random_tensor(Shape shape, Rng& rng, double sd = 1.0) {
  Tensor out(std::move(shape));
  for (auto& v : out.values()) v = sd * rng.normal();
  return out;
}

}  // namespace rppgid::testing
