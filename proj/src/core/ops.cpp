#include "rppgid/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "rppgid/error.hpp"

namespace rppgid::ops {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

void require_same(const Tape& t, Var a, Var b, const char* op) {
  require(t.shape(a) == t.shape(b), std::string(op) + ": shape mismatch " + shape_str(t.shape(a)) +
                                        " vs " + shape_str(t.shape(b)));
}

// Accumulates `scale * src` into the gradient slot of `v` if it needs one.
void accumulate(const Tape& t, GradBuffer& gb, Var v, const Tensor& src, double scale = 1.0) {
  if (!t.requires_grad(v)) return;
  auto& dst = gb.at(v);
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += scale * src[i];
}

// Splits a shape into (outer, n, inner) around `axis`.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  require_same(t, a, b, "add");
  Tensor out = t.value(a);
  const auto& bv = t.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return t.record(std::move(out), {a, b}, [a, b](const Tape& tp, const Tensor&, const Tensor& g, GradBuffer& gb) {
    accumulate(tp, gb, a, g);
    accumulate(tp, gb, b, g);
  });
}

Var sub(Tape& t, Var a, Var b) {
  require_same(t, a, b, "sub");
  Tensor out = t.value(a);
  const auto& bv = t.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return t.record(std::move(out), {a, b}, [a, b](const Tape& tp, const Tensor&, const Tensor& g, GradBuffer& gb) {
    accumulate(tp, gb, a, g);
    accumulate(tp, gb, b, g, -1.0);
  });
}

Var mul(Tape& t, Var a, Var b) {
  require_same(t, a, b, "mul");
  Tensor out = t.value(a);
  const auto& bv = t.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return t.record(std::move(out), {a, b}, [a, b](const Tape& tp, const Tensor&, const Tensor& g, GradBuffer& gb) {
    const auto& av = tp.value(a);
    const auto& bv = tp.value(b);
    if (tp.requires_grad(a)) {
      auto& ga = gb.at(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(b)) {
      auto& gbv = gb.at(b);
      for (std::size_t i = 0; i < g.size(); ++i) gbv[i] += g[i] * av[i];
    }
  });
}

Var scale(Tape& t, Var a, double c) {
  Tensor out = t.value(a);
  for (auto& v : out.values()) v *= c;
  return t.record(std::move(out), {a}, [a, c](const Tape& tp, const Tensor&, const Tensor& g, GradBuffer& gb) {
    accumulate(tp, gb, a, g, c);
  });
}

Var square(Tape& t, Var a) {
  Tensor out = t.value(a);
  for (auto& v : out.values()) v *= v;
  return t.record(std::move(out), {a}, [a](const Tape& tp, const Tensor&, const Tensor& g, GradBuffer& gb) {
    const auto& av = tp.value(a);
    auto& ga = gb.at(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.0 * av[i] * g[i];
  });
}

Var tanh(Tape& t, Var a) {
  Tensor out = t.value(a);
  for (auto& v : out.values()) v = std::tanh(v);
  return t.record(std::move(out), {a}, [a](const Tape&, const Tensor& y, const Tensor& g, GradBuffer& gb) {
    auto& ga = gb.at(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += (1.0 - y[i] * y[i]) * g[i];
  });
}

Var relu(Tape& t, Var a) {
  Tensor out = t.value(a);
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return t.record(std::move(out), {a}, [a](const Tape& tp, const Tensor&, const Tensor& g, GradBuffer& gb) {
    const auto& av = tp.value(a);
    auto& ga = gb.at(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] > 0.0) ga[i] += g[i];
    }
  });
}

Var mul_const(Tape& t, Var a, const Tensor& c) {
  require(t.shape(a) == c.shape(), "mul_const: shape mismatch " + shape_str(t.shape(a)) + " vs " +
                                       shape_str(c.shape()));
  Tensor out = t.value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
  return t.record(std::move(out), {a}, [a, c](const Tape&, const Tensor&, const Tensor& g, GradBuffer& gb) {
    auto& ga = gb.at(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c[i];
  });
}

Var sum(Tape& t, Var a) {
  double s = 0.0;
  for (double v : t.value(a).values()) s += v;
  return t.record(Tensor::scalar(s), {a}, [a](const Tape&, const Tensor&, const Tensor& g, GradBuffer& gb) {
    auto& ga = gb.at(a);
    for (auto& v : ga.values()) v += g[0];
  });
}

Var mean(Tape& t, Var a) {
  const auto n = static_cast<double>(t.value(a).size());
  return scale(t, sum(t, a), 1.0 / n);
}

Var mean_axis(Tape& t, Var a, std::size_t axis) {
  const Shape s = t.shape(a);
  require(axis < s.size(), "mean_axis: axis out of range for " + shape_str(s));
  const auto sp = split_axis(s, axis);
  Shape os = s;
  os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor out(os);
  const auto& av = t.value(a);
  const double inv = 1.0 / static_cast<double>(sp.n);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.n; ++j)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += av[(o * sp.n + j) * sp.inner + i] * inv;
  return t.record(std::move(out), {a}, [a, sp, inv](const Tape&, const Tensor&, const Tensor& g, GradBuffer& gb) {
    auto& ga = gb.at(a);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < sp.n; ++j)
        for (std::size_t i = 0; i < sp.inner; ++i) ga[(o * sp.n + j) * sp.inner + i] += g[o * sp.inner + i] * inv;
  });
}

Var reshape(Tape& t, Var a, Shape shape) {
  Tensor out = t.value(a).reshaped(std::move(shape));
  return t.record(std::move(out), {a}, [a](const Tape& tp, const Tensor&, const Tensor& g, GradBuffer& gb) {
    auto& ga = gb.at(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    (void)tp;
  });
}

Var swap_last2(Tape& t, Var a) {
  const Shape s = t.shape(a);
  require(s.size() == 3, "swap_last2: expected rank 3, got " + shape_str(s));
  const std::size_t A = s[0], B = s[1], C = s[2];
  Tensor out({A, C, B});
  const auto& av = t.value(a);
  for (std::size_t i = 0; i < A; ++i)
    for (std::size_t j = 0; j < B; ++j)
      for (std::size_t k = 0; k < C; ++k) out[(i * C + k) * B + j] = av[(i * B + j) * C + k];
  return t.record(std::move(out), {a}, [a, A, B, C](const Tape&, const Tensor&, const Tensor& g, GradBuffer& gb) {
    auto& ga = gb.at(a);
    for (std::size_t i = 0; i < A; ++i)
      for (std::size_t j = 0; j < B; ++j)
        for (std::size_t k = 0; k < C; ++k) ga[(i * B + j) * C + k] += g[(i * C + k) * B + j];
  });
}

namespace {

// c[M x N] += a[M x K] * b[K x N]
void gemm_nn(const double* a, const double* b, double* c, std::size_t M, std::size_t K, std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    double* ci = c + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double aik = a[i * K + k];
      if (aik == 0.0) continue;
      const double* bk = b + k * N;
      for (std::size_t j = 0; j < N; ++j) ci[j] += aik * bk[j];
    }
  }
}

// c[M x K] += g[M x N] * b[K x N]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t M, std::size_t N, std::size_t K) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* gi = g + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double* bk = b + k * N;
      double s = 0.0;
      for (std::size_t j = 0; j < N; ++j) s += gi[j] * bk[j];
      c[i * K + k] += s;
    }
  }
}

// c[K x N] += a[M x K]^T * g[M x N]
void gemm_tn(const double* a, const double* g, double* c, std::size_t M, std::size_t K, std::size_t N) {
  for (std::size_t i = 0; i < M; ++i) {
    const double* gi = g + i * N;
    for (std::size_t k = 0; k < K; ++k) {
      const double aik = a[i * K + k];
      if (aik == 0.0) continue;
      double* ck = c + k * N;
      for (std::size_t j = 0; j < N; ++j) ck[j] += aik * gi[j];
    }
  }
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  const Shape sa = t.shape(a);
  const Shape sb = t.shape(b);
  require(sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0],
          "matmul: cannot multiply " + shape_str(sa) + " by " + shape_str(sb));
  const std::size_t M = sa[0], K = sa[1], N = sb[1];
  Tensor out({M, N});
  gemm_nn(t.value(a).data().data(), t.value(b).data().data(), out.data().data(), M, K, N);
  return t.record(std::move(out), {a, b}, [a, b, M, K, N](const Tape& tp, const Tensor&, const Tensor& g, GradBuffer& gb) {
    if (tp.requires_grad(a)) gemm_nt(g.data().data(), tp.value(b).data().data(), gb.at(a).data().data(), M, N, K);
    if (tp.requires_grad(b)) gemm_tn(tp.value(a).data().data(), g.data().data(), gb.at(b).data().data(), M, K, N);
  });
}

Var add_bias(Tape& t, Var x, Var b) {
  const Shape sx = t.shape(x);
  const Shape sb = t.shape(b);
  require(!sx.empty() && sb.size() == 1 && sb[0] == sx.back(),
          "add_bias: bias " + shape_str(sb) + " does not match " + shape_str(sx));
  const std::size_t O = sb[0];
  Tensor out = t.value(x);
  const auto& bv = t.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % O];
  return t.record(std::move(out), {x, b}, [x, b, O](const Tape& tp, const Tensor&, const Tensor& g, GradBuffer& gb) {
    accumulate(tp, gb, x, g);
    if (tp.requires_grad(b)) {
      auto& gbias = gb.at(b);
      for (std::size_t i = 0; i < g.size(); ++i) gbias[i % O] += g[i];
    }
  });
}

Var add_channel_bias(Tape& t, Var x, Var b) {
  const Shape sx = t.shape(x);
  const Shape sb = t.shape(b);
  require(sx.size() >= 2 && sb.size() == 1 && sb[0] == sx[1],
          "add_channel_bias: bias " + shape_str(sb) + " does not match " + shape_str(sx));
  const auto sp = split_axis(sx, 1);
  Tensor out = t.value(x);
  const auto& bv = t.value(b);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t c = 0; c < sp.n; ++c)
      for (std::size_t i = 0; i < sp.inner; ++i) out[(o * sp.n + c) * sp.inner + i] += bv[c];
  return t.record(std::move(out), {x, b}, [x, b, sp](const Tape& tp, const Tensor&, const Tensor& g, GradBuffer& gb) {
    accumulate(tp, gb, x, g);
    if (tp.requires_grad(b)) {
      auto& gbias = gb.at(b);
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t c = 0; c < sp.n; ++c)
          for (std::size_t i = 0; i < sp.inner; ++i) gbias[c] += g[(o * sp.n + c) * sp.inner + i];
    }
  });
}

Var dense(Tape& t, Var x, Var w, Var b) {
  const Shape sx = t.shape(x);
  const Shape sw = t.shape(w);
  require(!sx.empty() && sw.size() == 2 && sx.back() == sw[0],
          "dense: input " + shape_str(sx) + " does not match weight " + shape_str(sw));
  require(t.shape(b).size() == 1 && t.shape(b)[0] == sw[1],
          "dense: bias " + shape_str(t.shape(b)) + " does not match weight " + shape_str(sw));
  const std::size_t rows = shape_size(sx) / sx.back();
  Var flat = sx.size() == 2 ? x : reshape(t, x, {rows, sx.back()});
  Var y = add_bias(t, matmul(t, flat, w), b);
  if (sx.size() == 2) return y;
  Shape os = sx;
  os.back() = sw[1];
  return reshape(t, y, os);
}

Var conv1d(Tape& t, Var x, Var k) {
  const Shape sx = t.shape(x);
  const Shape sk = t.shape(k);
  require(sx.size() == 3 && sk.size() == 3 && sk[1] == sx[1],
          "conv1d: input " + shape_str(sx) + " does not match kernel " + shape_str(sk));
  if (sk[2] % 2 == 0) throw ConfigError("conv1d: kernel length must be odd, got " + std::to_string(sk[2]));
  const std::size_t B = sx[0], C = sx[1], L = sx[2], O = sk[0], K = sk[2];
  const auto pad = static_cast<std::ptrdiff_t>(K / 2);
  Tensor out({B, O, L});
  const auto& xv = t.value(x);
  const auto& kv = t.value(k);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o) {
      double* y = &out[(b * O + o) * L];
      for (std::size_t c = 0; c < C; ++c) {
        const double* xs = &xv[(b * C + c) * L];
        for (std::size_t j = 0; j < K; ++j) {
          const double w = kv[(o * C + c) * K + j];
          const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(j) - pad;
          const std::size_t l0 = off < 0 ? static_cast<std::size_t>(-off) : 0;
          const std::size_t l1 = off > 0 ? L - static_cast<std::size_t>(off) : L;
          for (std::size_t l = l0; l < l1; ++l) y[l] += w * xs[l + off];
        }
      }
    }
  return t.record(std::move(out), {x, k}, [=](const Tape& tp, const Tensor&, const Tensor& g, GradBuffer& gb) {
    const auto& xv = tp.value(x);
    const auto& kv = tp.value(k);
    const bool gx_needed = tp.requires_grad(x);
    const bool gk_needed = tp.requires_grad(k);
    double* gx = gx_needed ? gb.at(x).data().data() : nullptr;
    double* gk = gk_needed ? gb.at(k).data().data() : nullptr;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t o = 0; o < O; ++o) {
        const double* gy = &g[(b * O + o) * L];
        for (std::size_t c = 0; c < C; ++c) {
          const double* xs = &xv[(b * C + c) * L];
          for (std::size_t j = 0; j < K; ++j) {
            const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(j) - pad;
            const std::size_t l0 = off < 0 ? static_cast<std::size_t>(-off) : 0;
            const std::size_t l1 = off > 0 ? L - static_cast<std::size_t>(off) : L;
            if (gk) {
              double s = 0.0;
              for (std::size_t l = l0; l < l1; ++l) s += gy[l] * xs[l + off];
              gk[(o * C + c) * K + j] += s;
            }
            if (gx) {
              const double w = kv[(o * C + c) * K + j];
              double* gxs = gx + (b * C + c) * L;
              for (std::size_t l = l0; l < l1; ++l) gxs[l + off] += w * gy[l];
            }
          }
        }
      }
  });
}

Var conv2d(Tape& t, Var x, Var k) {
  const Shape sx = t.shape(x);
  const Shape sk = t.shape(k);
  require(sx.size() == 4 && sk.size() == 4 && sk[1] == sx[1],
          "conv2d: input " + shape_str(sx) + " does not match kernel " + shape_str(sk));
  if (sk[2] % 2 == 0 || sk[3] % 2 == 0) {
    throw ConfigError("conv2d: kernel extents must be odd, got " + shape_str(sk));
  }
  const std::size_t B = sx[0], C = sx[1], H = sx[2], W = sx[3], O = sk[0], KH = sk[2], KW = sk[3];
  const auto ph = static_cast<std::ptrdiff_t>(KH / 2);
  const auto pw = static_cast<std::ptrdiff_t>(KW / 2);
  Tensor out({B, O, H, W});
  const auto& xv = t.value(x);
  const auto& kv = t.value(k);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < KH; ++i) {
          const std::ptrdiff_t dh = static_cast<std::ptrdiff_t>(i) - ph;
          for (std::size_t j = 0; j < KW; ++j) {
            const double w = kv[((o * C + c) * KH + i) * KW + j];
            const std::ptrdiff_t dw = static_cast<std::ptrdiff_t>(j) - pw;
            const std::size_t w0 = dw < 0 ? static_cast<std::size_t>(-dw) : 0;
            const std::size_t w1 = dw > 0 ? W - static_cast<std::size_t>(dw) : W;
            for (std::size_t h = 0; h < H; ++h) {
              const std::ptrdiff_t hh = static_cast<std::ptrdiff_t>(h) + dh;
              if (hh < 0 || hh >= static_cast<std::ptrdiff_t>(H)) continue;
              double* y = &out[((b * O + o) * H + h) * W];
              const double* xs = &xv[((b * C + c) * H + static_cast<std::size_t>(hh)) * W];
              for (std::size_t q = w0; q < w1; ++q) y[q] += w * xs[q + dw];
            }
          }
        }
  return t.record(std::move(out), {x, k}, [=](const Tape& tp, const Tensor&, const Tensor& g, GradBuffer& gb) {
    const auto& xv = tp.value(x);
    const auto& kv = tp.value(k);
    double* gx = tp.requires_grad(x) ? gb.at(x).data().data() : nullptr;
    double* gk = tp.requires_grad(k) ? gb.at(k).data().data() : nullptr;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t i = 0; i < KH; ++i) {
            const std::ptrdiff_t dh = static_cast<std::ptrdiff_t>(i) - ph;
            for (std::size_t j = 0; j < KW; ++j) {
              const std::size_t kidx = ((o * C + c) * KH + i) * KW + j;
              const double w = kv[kidx];
              const std::ptrdiff_t dw = static_cast<std::ptrdiff_t>(j) - pw;
              const std::size_t w0 = dw < 0 ? static_cast<std::size_t>(-dw) : 0;
              const std::size_t w1 = dw > 0 ? W - static_cast<std::size_t>(dw) : W;
              double s = 0.0;
              for (std::size_t h = 0; h < H; ++h) {
                const std::ptrdiff_t hh = static_cast<std::ptrdiff_t>(h) + dh;
                if (hh < 0 || hh >= static_cast<std::ptrdiff_t>(H)) continue;
                const double* gy = &g[((b * O + o) * H + h) * W];
                const std::size_t xrow = ((b * C + c) * H + static_cast<std::size_t>(hh)) * W;
                const double* xs = &xv[xrow];
                if (gk) {
                  for (std::size_t q = w0; q < w1; ++q) s += gy[q] * xs[q + dw];
                }
                if (gx) {
                  double* gxs = gx + xrow;
                  for (std::size_t q = w0; q < w1; ++q) gxs[q + dw] += w * gy[q];
                }
              }
              if (gk) gk[kidx] += s;
            }
          }
  });
}

Var maxpool_last(Tape& t, Var x, std::size_t factor) {
  const Shape sx = t.shape(x);
  require(!sx.empty() && factor >= 1 && sx.back() >= factor,
          "maxpool_last: cannot pool " + shape_str(sx) + " by " + std::to_string(factor));
  const std::size_t L = sx.back();
  const std::size_t Lo = L / factor;
  const std::size_t rows = shape_size(sx) / L;
  Shape os = sx;
  os.back() = Lo;
  Tensor out(os);
  auto argmax = std::make_shared<std::vector<std::size_t>>(rows * Lo);
  const auto& xv = t.value(x);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < Lo; ++i) {
      std::size_t best = r * L + i * factor;
      for (std::size_t j = 1; j < factor; ++j) {
        const std::size_t idx = r * L + i * factor + j;
        if (xv[idx] > xv[best]) best = idx;
      }
      out[r * Lo + i] = xv[best];
      (*argmax)[r * Lo + i] = best;
    }
  return t.record(std::move(out), {x}, [x, argmax](const Tape&, const Tensor&, const Tensor& g, GradBuffer& gb) {
    auto& gx = gb.at(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
  });
}

Var avgpool_rows(Tape& t, Var x, std::size_t factor) {
  const Shape sx = t.shape(x);
  require(sx.size() == 4 && factor >= 1 && sx[2] % factor == 0,
          "avgpool_rows: cannot pool " + shape_str(sx) + " rows by " + std::to_string(factor));
  const std::size_t BC = sx[0] * sx[1], H = sx[2], W = sx[3], Ho = H / factor;
  Tensor out({sx[0], sx[1], Ho, W});
  const auto& xv = t.value(x);
  const double inv = 1.0 / static_cast<double>(factor);
  for (std::size_t p = 0; p < BC; ++p)
    for (std::size_t h = 0; h < H; ++h) {
      const double* xs = &xv[(p * H + h) * W];
      double* y = &out[(p * Ho + h / factor) * W];
      for (std::size_t q = 0; q < W; ++q) y[q] += xs[q] * inv;
    }
  return t.record(std::move(out), {x}, [=](const Tape&, const Tensor&, const Tensor& g, GradBuffer& gb) {
    auto& gx = gb.at(x);
    for (std::size_t p = 0; p < BC; ++p)
      for (std::size_t h = 0; h < H; ++h) {
        const double* gy = &g[(p * Ho + h / factor) * W];
        double* gxs = &gx[(p * H + h) * W];
        for (std::size_t q = 0; q < W; ++q) gxs[q] += gy[q] * inv;
      }
  });
}

Var softmax(Tape& t, Var x) {
  const Shape sx = t.shape(x);
  require(!sx.empty() && sx.back() > 0, "softmax: empty last axis in " + shape_str(sx));
  const std::size_t N = sx.back();
  const std::size_t rows = shape_size(sx) / N;
  Tensor out = t.value(x);
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = &out[r * N];
    const double mx = *std::max_element(row, row + N);
    double s = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      row[i] = std::exp(row[i] - mx);
      s += row[i];
    }
    for (std::size_t i = 0; i < N; ++i) row[i] /= s;
  }
  return t.record(std::move(out), {x}, [x, rows, N](const Tape&, const Tensor& y, const Tensor& g, GradBuffer& gb) {
    auto& gx = gb.at(x);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t i = 0; i < N; ++i) dot += g[r * N + i] * y[r * N + i];
      for (std::size_t i = 0; i < N; ++i) gx[r * N + i] += y[r * N + i] * (g[r * N + i] - dot);
    }
  });
}

Var nll(Tape& t, Var probs, std::size_t label, double floor) {
  const Shape sp = t.shape(probs);
  require(sp.size() == 2 && sp[0] > 0, "nll: expected non-empty [K x N], got " + shape_str(sp));
  const std::size_t K = sp[0], N = sp[1];
  if (label >= N) {
    throw ContractError("nll: label " + std::to_string(label) + " out of range for " + std::to_string(N) +
                        " classes");
  }
  const auto& pv = t.value(probs);
  double loss = 0.0;
  for (std::size_t k = 0; k < K; ++k) loss -= std::log(std::max(pv[k * N + label], floor));
  loss /= static_cast<double>(K);
  return t.record(Tensor::scalar(loss), {probs},
                  [probs, label, floor, K, N](const Tape& tp, const Tensor&, const Tensor& g, GradBuffer& gb) {
                    const auto& pv = tp.value(probs);
                    auto& gp = gb.at(probs);
                    for (std::size_t k = 0; k < K; ++k) {
                      const double p = pv[k * N + label];
                      if (p > floor) gp[k * N + label] -= g[0] / (static_cast<double>(K) * p);
                    }
                  });
}

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
  const Shape sx = t.shape(x);
  require(!sx.empty(), "layer_norm: scalar input");
  const std::size_t D = sx.back();
  require(t.shape(gamma) == Shape{D} && t.shape(beta) == Shape{D},
          "layer_norm: affine params must be [" + std::to_string(D) + "]");
  const std::size_t rows = shape_size(sx) / D;
  const auto& xv = t.value(x);
  const auto& gv = t.value(gamma);
  const auto& bv = t.value(beta);
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  Tensor out(sx);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &xv[r * D];
    double mu = 0.0;
    for (std::size_t i = 0; i < D; ++i) mu += row[i];
    mu /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t i = 0; i < D; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(D);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t i = 0; i < D; ++i) {
      const double xh = (row[i] - mu) * is;
      (*xhat)[r * D + i] = xh;
      out[r * D + i] = gv[i] * xh + bv[i];
    }
  }
  return t.record(std::move(out), {x, gamma, beta},
                  [=](const Tape& tp, const Tensor&, const Tensor& g, GradBuffer& gb) {
                    const auto& gv = tp.value(gamma);
                    if (tp.requires_grad(gamma) || tp.requires_grad(beta)) {
                      auto& gg = gb.at(gamma);
                      auto& gbt = gb.at(beta);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t i = 0; i < D; ++i) {
                          gg[i] += g[r * D + i] * (*xhat)[r * D + i];
                          gbt[i] += g[r * D + i];
                        }
                    }
                    if (!tp.requires_grad(x)) return;
                    auto& gx = gb.at(x);
                    const double invD = 1.0 / static_cast<double>(D);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double m1 = 0.0, m2 = 0.0;
                      for (std::size_t i = 0; i < D; ++i) {
                        const double gh = g[r * D + i] * gv[i];
                        m1 += gh;
                        m2 += gh * (*xhat)[r * D + i];
                      }
                      m1 *= invD;
                      m2 *= invD;
                      for (std::size_t i = 0; i < D; ++i) {
                        const double gh = g[r * D + i] * gv[i];
                        gx[r * D + i] += (*inv_std)[r] * (gh - m1 - (*xhat)[r * D + i] * m2);
                      }
                    }
                  });
}

Var attention(Tape& t, Var x, Var wq, Var wk, Var wv, std::size_t heads) {
  const Shape sx = t.shape(x);
  require(sx.size() == 3, "attention: expected [B x L x D], got " + shape_str(sx));
  const std::size_t B = sx[0], L = sx[1], D = sx[2];
  for (Var w : {wq, wk, wv}) {
    require(t.shape(w) == Shape{D, D}, "attention: projection must be [D x D], got " + shape_str(t.shape(w)));
  }
  if (heads == 0 || D % heads != 0) {
    throw ConfigError("attention: model dim " + std::to_string(D) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const std::size_t dh = D / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto& xv = t.value(x);
  // Cached projections [B*L x D] and attention weights [B x heads x L x L].
  auto q = std::make_shared<std::vector<double>>(B * L * D, 0.0);
  auto kk = std::make_shared<std::vector<double>>(B * L * D, 0.0);
  auto v = std::make_shared<std::vector<double>>(B * L * D, 0.0);
  auto p = std::make_shared<std::vector<double>>(B * heads * L * L, 0.0);
  gemm_nn(xv.data().data(), t.value(wq).data().data(), q->data(), B * L, D, D);
  gemm_nn(xv.data().data(), t.value(wk).data().data(), kk->data(), B * L, D, D);
  gemm_nn(xv.data().data(), t.value(wv).data().data(), v->data(), B * L, D, D);
  Tensor out(sx);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h) {
      double* ph = &(*p)[((b * heads + h) * L) * L];
      for (std::size_t i = 0; i < L; ++i) {
        const double* qi = &(*q)[(b * L + i) * D + h * dh];
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < L; ++j) {
          const double* kj = &(*kk)[(b * L + j) * D + h * dh];
          double s = 0.0;
          for (std::size_t d = 0; d < dh; ++d) s += qi[d] * kj[d];
          s *= inv_sqrt;
          ph[i * L + j] = s;
          mx = std::max(mx, s);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
          ph[i * L + j] = std::exp(ph[i * L + j] - mx);
          z += ph[i * L + j];
        }
        for (std::size_t j = 0; j < L; ++j) ph[i * L + j] /= z;
        double* oi = &out[(b * L + i) * D + h * dh];
        for (std::size_t j = 0; j < L; ++j) {
          const double* vj = &(*v)[(b * L + j) * D + h * dh];
          const double w = ph[i * L + j];
          for (std::size_t d = 0; d < dh; ++d) oi[d] += w * vj[d];
        }
      }
    }
  return t.record(std::move(out), {x, wq, wk, wv}, [=](const Tape& tp, const Tensor&, const Tensor& g, GradBuffer& gb) {
    std::vector<double> gq(B * L * D, 0.0), gk(B * L * D, 0.0), gvv(B * L * D, 0.0);
    std::vector<double> gp(L);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < heads; ++h) {
        const double* ph = &(*p)[((b * heads + h) * L) * L];
        for (std::size_t i = 0; i < L; ++i) {
          const double* goi = &g[(b * L + i) * D + h * dh];
          // dL/dP[i, j] and dL/dV[j]
          double dot = 0.0;
          for (std::size_t j = 0; j < L; ++j) {
            const double* vj = &(*v)[(b * L + j) * D + h * dh];
            double* gvj = &gvv[(b * L + j) * D + h * dh];
            double s = 0.0;
            for (std::size_t d = 0; d < dh; ++d) {
              s += goi[d] * vj[d];
              gvj[d] += ph[i * L + j] * goi[d];
            }
            gp[j] = s;
            dot += s * ph[i * L + j];
          }
          const double* qi = &(*q)[(b * L + i) * D + h * dh];
          double* gqi = &gq[(b * L + i) * D + h * dh];
          for (std::size_t j = 0; j < L; ++j) {
            const double gs = ph[i * L + j] * (gp[j] - dot) * inv_sqrt;
            if (gs == 0.0) continue;
            const double* kj = &(*kk)[(b * L + j) * D + h * dh];
            double* gkj = &gk[(b * L + j) * D + h * dh];
            for (std::size_t d = 0; d < dh; ++d) {
              gqi[d] += gs * kj[d];
              gkj[d] += gs * qi[d];
            }
          }
        }
      }
    const auto& xv = tp.value(x);
    const std::size_t R = B * L;
    if (tp.requires_grad(x)) {
      double* gx = gb.at(x).data().data();
      gemm_nt(gq.data(), tp.value(wq).data().data(), gx, R, D, D);
      gemm_nt(gk.data(), tp.value(wk).data().data(), gx, R, D, D);
      gemm_nt(gvv.data(), tp.value(wv).data().data(), gx, R, D, D);
    }
    if (tp.requires_grad(wq)) gemm_tn(xv.data().data(), gq.data(), gb.at(wq).data().data(), R, D, D);
    if (tp.requires_grad(wk)) gemm_tn(xv.data().data(), gk.data(), gb.at(wk).data().data(), R, D, D);
    if (tp.requires_grad(wv)) gemm_tn(xv.data().data(), gvv.data(), gb.at(wv).data().data(), R, D, D);
  });
}

Var slice_row(Tape& t, Var x, std::size_t row, std::size_t start, std::size_t len) {
  const Shape sx = t.shape(x);
  require(sx.size() == 2 && row < sx[0] && start + len <= sx[1],
          "slice_row: row " + std::to_string(row) + " cols [" + std::to_string(start) + ", " +
              std::to_string(start + len) + ") outside " + shape_str(sx));
  const std::size_t C = sx[1];
  const auto& xv = t.value(x);
  std::vector<double> vals(xv.data().begin() + static_cast<std::ptrdiff_t>(row * C + start),
                           xv.data().begin() + static_cast<std::ptrdiff_t>(row * C + start + len));
  return t.record(Tensor::vector(std::move(vals)), {x},
                  [x, row, start, C](const Tape&, const Tensor&, const Tensor& g, GradBuffer& gb) {
                    auto& gx = gb.at(x);
                    for (std::size_t i = 0; i < g.size(); ++i) gx[row * C + start + i] += g[i];
                  });
}

Var stack(Tape& t, std::span<const Var> rows) {
  require(!rows.empty(), "stack: no rows");
  const std::size_t len = t.value(rows[0]).size();
  for (Var r : rows) {
    require(t.shape(r) == Shape{len}, "stack: rows must be 1-D of equal length");
  }
  Tensor out({rows.size(), len});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& rv = t.value(rows[i]);
    std::copy(rv.data().begin(), rv.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * len));
  }
  std::vector<Var> inputs(rows.begin(), rows.end());
  return t.record(std::move(out), inputs, [inputs, len](const Tape& tp, const Tensor&, const Tensor& g, GradBuffer& gb) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (!tp.requires_grad(inputs[i])) continue;
      auto& gr = gb.at(inputs[i]);
      for (std::size_t j = 0; j < len; ++j) gr[j] += g[i * len + j];
    }
  });
}

Var center(Tape& t, Var x) {
  require(t.shape(x).size() == 1, "center: expected 1-D input");
  Tensor out = t.value(x);
  double mu = 0.0;
  for (double v : out.values()) mu += v;
  mu /= static_cast<double>(out.size());
  for (auto& v : out.values()) v -= mu;
  return t.record(std::move(out), {x}, [x](const Tape&, const Tensor&, const Tensor& g, GradBuffer& gb) {
    double gm = 0.0;
    for (double v : g.values()) gm += v;
    gm /= static_cast<double>(g.size());
    auto& gx = gb.at(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] - gm;
  });
}

Var normalize_sum(Tape& t, Var x) {
  require(t.shape(x).size() == 1, "normalize_sum: expected 1-D input");
  Tensor out = t.value(x);
  double s = 0.0;
  for (double v : out.values()) s += v;
  if (!(s > 0.0)) throw NumericError("normalize_sum: non-positive total " + std::to_string(s));
  for (auto& v : out.values()) v /= s;
  return t.record(std::move(out), {x}, [x, s](const Tape&, const Tensor& y, const Tensor& g, GradBuffer& gb) {
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
    auto& gx = gb.at(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += (g[i] - dot) / s;
  });
}

Var apply_self_adjoint(Tape& t, Var x, const LinearMap& a) {
  require(t.shape(x).size() == 1, "apply_self_adjoint: expected 1-D input");
  std::vector<double> y = a(t.value(x).data());
  require(y.size() == t.value(x).size(), "apply_self_adjoint: map changed the length");
  return t.record(Tensor::vector(std::move(y)), {x}, [x, a](const Tape&, const Tensor&, const Tensor& g, GradBuffer& gb) {
    const std::vector<double> back = a(g.data());
    auto& gx = gb.at(x);
    for (std::size_t i = 0; i < back.size(); ++i) gx[i] += back[i];
  });
}

Var resample_clips(Tape& t, Var x, std::span<const std::size_t> starts, std::span<const std::size_t> ends,
                   std::size_t len) {
  require(t.shape(x).size() == 1, "resample_clips: expected 1-D signal");
  require(starts.size() == ends.size() && !starts.empty(), "resample_clips: need matching non-empty clip bounds");
  require(len >= 2, "resample_clips: output length must be >= 2");
  const std::size_t n = t.value(x).size();
  const std::size_t K = starts.size();
  // Per output sample: left source index and weight of the right neighbour.
  auto lo = std::make_shared<std::vector<std::size_t>>(K * len);
  auto wt = std::make_shared<std::vector<double>>(K * len);
  for (std::size_t k = 0; k < K; ++k) {
    require(starts[k] < ends[k] && ends[k] < n, "resample_clips: clip bounds outside signal");
    const double span = static_cast<double>(ends[k] - starts[k]);
    for (std::size_t i = 0; i < len; ++i) {
      const double u = static_cast<double>(starts[k]) + span * static_cast<double>(i) / static_cast<double>(len - 1);
      auto l = static_cast<std::size_t>(std::floor(u));
      double w = u - static_cast<double>(l);
      if (l >= ends[k]) {
        l = ends[k] - 1;
        w = 1.0;
      }
      (*lo)[k * len + i] = l;
      (*wt)[k * len + i] = w;
    }
  }
  const auto& xv = t.value(x);
  Tensor out({K, len});
  for (std::size_t i = 0; i < K * len; ++i) {
    const std::size_t l = (*lo)[i];
    out[i] = (1.0 - (*wt)[i]) * xv[l] + (*wt)[i] * xv[l + 1];
  }
  return t.record(std::move(out), {x}, [x, lo, wt](const Tape&, const Tensor&, const Tensor& g, GradBuffer& gb) {
    auto& gx = gb.at(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t l = (*lo)[i];
      gx[l] += (1.0 - (*wt)[i]) * g[i];
      gx[l + 1] += (*wt)[i] * g[i];
    }
  });
}

Var zscore_rows(Tape& t, Var x) {
  const Shape sx = t.shape(x);
  require(sx.size() == 2 && sx[1] >= 2, "zscore_rows: expected [K x L] with L >= 2, got " + shape_str(sx));
  const std::size_t K = sx[0], L = sx[1];
  const auto& xv = t.value(x);
  Tensor out(sx);
  auto inv_std = std::make_shared<std::vector<double>>(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    const double* row = &xv[k * L];
    double mu = 0.0;
    for (std::size_t i = 0; i < L; ++i) mu += row[i];
    mu /= static_cast<double>(L);
    double var = 0.0;
    for (std::size_t i = 0; i < L; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(L);
    // Constant rows (relative to their magnitude) map to zeros.
    if (var <= 1e-24 * (1.0 + mu * mu)) continue;
    const double is = 1.0 / std::sqrt(var);
    (*inv_std)[k] = is;
    for (std::size_t i = 0; i < L; ++i) out[k * L + i] = (row[i] - mu) * is;
  }
  return t.record(std::move(out), {x}, [x, K, L, inv_std](const Tape&, const Tensor& y, const Tensor& g, GradBuffer& gb) {
    auto& gx = gb.at(x);
    const double invL = 1.0 / static_cast<double>(L);
    for (std::size_t k = 0; k < K; ++k) {
      const double is = (*inv_std)[k];
      if (is == 0.0) continue;
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t i = 0; i < L; ++i) {
        m1 += g[k * L + i];
        m2 += g[k * L + i] * y[k * L + i];
      }
      m1 *= invL;
      m2 *= invL;
      for (std::size_t i = 0; i < L; ++i) gx[k * L + i] += is * (g[k * L + i] - m1 - y[k * L + i] * m2);
    }
  });
}

}  // namespace rppgid::ops
