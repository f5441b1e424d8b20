#include "rppgid/cp2d.hpp"

#include <cmath>

#include "rppgid/error.hpp"
#include "rppgid/ops.hpp"
#include "rppgid/rng.hpp"

namespace rppgid {

ParamStore init_model_g(std::uint64_t seed) {
  ParamStore g(seed);
  Rng rng(seed);
  auto conv = [&](const std::string& name, std::size_t out, std::size_t in, std::size_t k) {
    g.init_normal("g/" + name + ".w", {out, in, k, k}, 1.0 / std::sqrt(static_cast<double>(in * k * k)), rng);
    g.init_zeros("g/" + name + ".b", {out});
  };
  conv("conv1", 16, 3, 3);
  conv("conv2", 32, 16, 3);
  conv("conv3", 32, 32, 3);
  conv("out", 1, 32, 1);
  return g;
}

Tensor st_map_input(const STMap& m) {
  if (m.data.rank() != 3 || m.rows() != kDeidCells || m.data.dim(2) != 3) {
    throw ModelError("G expects a [36 x T x 3] ST map, got " + shape_str(m.data.shape()));
  }
  const std::size_t R = m.rows(), T = m.length();
  Tensor x({1, 3, R, T});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < 3; ++c) x[(c * R + r) * T + t] = m.data[(r * T + t) * 3 + c];
  return x;
}

Var forward_g(Tape& t, const ParamStore& g, Var input, bool trainable) {
  const Shape s = t.shape(input);
  if (s.size() != 4 || s[0] != 1 || s[1] != 3 || s[2] != kDeidCells) {
    throw ModelError("G expects a [1 x 3 x 36 x T] input, got " + shape_str(s));
  }
  auto p = [&](const std::string& name) { return bind_param(t, g, "g/" + name, trainable); };
  auto block = [&](Var x, const std::string& name) {
    return ops::tanh(t, ops::add_channel_bias(t, ops::conv2d(t, x, p(name + ".w")), p(name + ".b")));
  };
  Var x = block(input, "conv1");
  x = ops::avgpool_rows(t, x, 3);
  x = block(x, "conv2");
  x = ops::avgpool_rows(t, x, 3);
  x = block(x, "conv3");
  x = ops::add_channel_bias(t, ops::conv2d(t, x, p("out.w")), p("out.b"));
  const std::size_t T = s[3];
  return ops::reshape(t, x, {kSpatialRows, T});
}

Tensor forward_g(const ParamStore& g, const STMap& m) {
  Tape t;
  return t.value(forward_g(t, g, t.constant(st_map_input(m)), false));
}

std::vector<PatchSample> sample_patch_positions(std::size_t rows, std::size_t T, std::size_t n, Rng& rng) {
  const std::size_t even = T - T % 2;
  const std::size_t len = even / 2;
  if (rows == 0 || len == 0) throw DimensionError("cannot sample patches from a map with no samples");
  std::vector<PatchSample> out(n);
  for (auto& p : out) {
    p.row = rng.index(rows);
    p.start = rng.index(even - len + 1);
    p.length = len;
  }
  return out;
}

std::vector<PatchSample> sample_patches(const Tensor& mr, std::size_t n, std::uint64_t seed) {
  if (mr.rank() != 2) throw DimensionError("patches need a [S x T] map, got " + shape_str(mr.shape()));
  Rng rng(seed);
  auto out = sample_patch_positions(mr.dim(0), mr.dim(1), n, rng);
  for (auto& p : out) {
    const double* row = &mr[p.row * mr.dim(1)];
    p.values.assign(row + p.start, row + p.start + p.length);
  }
  return out;
}

PsdBasis patch_basis(std::size_t length, double fs) {
  if (static_cast<double>(length) < fs) throw DspError("patch shorter than 1 s");
  return psd_basis(length, fs, kBandLo, kBandHi, 2 * length);
}

Psd patch_to_psd(const PatchSample& p, double fs) {
  if (static_cast<double>(p.values.size()) < fs) throw DspError("patch shorter than 1 s");
  return psd(RppgSignal{p.values, fs}, kBandLo, kBandHi, 2 * p.values.size());
}

Var patch_to_psd(Tape& t, Var patch, const PsdBasis& basis) {
  const std::size_t n = t.shape(patch).at(0);
  if (basis.cos.dim(0) != n) throw ContractError("patch length does not match the PSD basis");
  Var row = ops::reshape(t, ops::center(t, patch), {1, n});
  Var re = ops::matmul(t, row, t.constant(basis.cos));
  Var im = ops::matmul(t, row, t.constant(basis.sin));
  Var power = ops::add(t, ops::square(t, re), ops::square(t, im));
  return ops::normalize_sum(t, ops::reshape(t, power, {basis.freqs.size()}));
}

Var patch_psds(Tape& t, Var mr, const std::vector<PatchSample>& patches, const PsdBasis& basis) {
  std::vector<Var> rows;
  rows.reserve(patches.size());
  for (const auto& p : patches) rows.push_back(patch_to_psd(t, ops::slice_row(t, mr, p.row, p.start, p.length), basis));
  return ops::stack(t, rows);
}

namespace {

void check_psd_sets(const Shape& a, const Shape& b) {
  if (a.size() != 2 || a != b) throw ContractError("contrastive loss needs two [n x F] PSD sets of equal shape");
  if (a[0] < 2) throw ContractError("contrastive loss needs n >= 2 PSDs per video");
}

}  // namespace

Var contrastive_loss(Tape& t, Var f, Var f2) {
  check_psd_sets(t.shape(f), t.shape(f2));
  const std::size_t n = t.shape(f)[0], F = t.shape(f)[1];
  const double nd = static_cast<double>(n);
  const Tensor& a = t.value(f);
  const Tensor& b = t.value(f2);
  // Column sums and squared norms give the pairwise sums in O(nF).
  std::vector<double> sa(F, 0.0), sb(F, 0.0);
  double qa = 0.0, qb = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < F; ++k) {
      sa[k] += a[i * F + k];
      sb[k] += b[i * F + k];
      qa += a[i * F + k] * a[i * F + k];
      qb += b[i * F + k] * b[i * F + k];
    }
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t k = 0; k < F; ++k) {
    saa += sa[k] * sa[k];
    sbb += sb[k] * sb[k];
    sab += sa[k] * sb[k];
  }
  const double within = (2.0 * nd * qa - 2.0 * saa) + (2.0 * nd * qb - 2.0 * sbb);
  const double across = nd * qa + nd * qb - 2.0 * sab;
  const double loss = within / (2.0 * nd * (nd - 1.0)) - across / (nd * nd);
  return t.record(Tensor::scalar(loss), {f, f2},
                  [=](const Tape& tp, const Tensor&, const Tensor& g, GradBuffer& gb) {
                    const double go = g.item();
                    const Tensor& av = tp.value(f);
                    const Tensor& bv = tp.value(f2);
                    const double cw = 2.0 / (nd * (nd - 1.0));
                    const double ca = 2.0 / (nd * nd);
                    auto fill = [&](Var v, const Tensor& x, const std::vector<double>& own,
                                    const std::vector<double>& other) {
                      if (!tp.requires_grad(v)) return;
                      Tensor& gx = gb.at(v);
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t k = 0; k < F; ++k) {
                          const double xi = x[i * F + k];
                          gx[i * F + k] += go * (cw * (nd * xi - own[k]) - ca * (nd * xi - other[k]));
                        }
                    };
                    fill(f, av, sa, sb);
                    fill(f2, bv, sb, sa);
                  });
}

double contrastive_loss(const Tensor& f, const Tensor& f2) {
  check_psd_sets(f.shape(), f2.shape());
  const std::size_t n = f.dim(0), F = f.dim(1);
  auto dist = [&](const Tensor& x, std::size_t i, const Tensor& y, std::size_t j) {
    double d = 0.0;
    for (std::size_t k = 0; k < F; ++k) d += (x[i * F + k] - y[j * F + k]) * (x[i * F + k] - y[j * F + k]);
    return d;
  };
  double pos = 0.0, neg = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) pos += dist(f, i, f, j) + dist(f2, i, f2, j);
      neg += dist(f, i, f2, j);
    }
  const double nd = static_cast<double>(n);
  return pos / (2.0 * nd * (nd - 1.0)) - neg / (nd * nd);
}

RppgSignal extract_rppg(const ParamStore& g, const STMap& m) {
  const Tensor mr = forward_g(g, m);
  const std::size_t T = mr.dim(1);
  RppgSignal s{std::vector<double>(T, 0.0), m.fps};
  for (std::size_t r = 0; r < kSpatialRows; ++r)
    for (std::size_t t = 0; t < T; ++t) s.samples[t] += mr[r * T + t] / static_cast<double>(kSpatialRows);
  return bandpass(s);
}

namespace {

std::vector<STMap> windows_of(const STMap& m, double window_s) {
  const auto w = static_cast<std::size_t>(std::llround(window_s * m.fps));
  std::vector<STMap> out;
  if (m.length() < w) {
    out.push_back(m);
    return out;
  }
  for (std::size_t s = 0; s + w <= m.length(); s += w) out.push_back(m.slice(s, w));
  return out;
}

}  // namespace

double mean_ipr(const ParamStore& g, const std::vector<STMap>& maps, double window_s) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& m : maps)
    for (const auto& w : windows_of(m, window_s)) {
      total += ipr(extract_rppg(g, w));
      ++count;
    }
  if (count == 0) throw ConfigError("no validation windows for IPR");
  return total / static_cast<double>(count);
}

Stage1Result train_stage1(const std::vector<STMap>& train, const std::vector<STMap>& val, const Stage1Config& cfg) {
  if (train.size() < 2) throw ConfigError("stage 1 needs at least 2 training videos, got " + std::to_string(train.size()));
  if (cfg.epochs < 0 || cfg.steps_per_epoch < 1) throw ConfigError("stage 1 epochs must be >= 0 and steps >= 1");
  const double fs = train.front().fps;
  const auto w = static_cast<std::size_t>(std::llround(cfg.window_s * fs));
  for (const auto& m : train) {
    if (m.fps != fs) throw ConfigError("training maps disagree on frame rate");
    if (m.length() < w) throw ConfigError("training video shorter than one window");
  }
  const PsdBasis basis = patch_basis(w / 2, fs);

  Rng rng(mix_seed(cfg.seed, fnv1a("stage1")));
  Stage1Result res;
  ParamStore g = init_model_g(mix_seed(cfg.seed, fnv1a("init-g")));
  AdamState adam;
  res.params = g;
  res.best_val_ipr = mean_ipr(g, val, cfg.window_s);
  res.log.push_back({0, 0.0, res.best_val_ipr});

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      const std::size_t a = rng.index(train.size());
      std::size_t b = rng.index(train.size() - 1);
      if (b >= a) ++b;
      Tape t;
      Var psd_sets[2];
      for (int side = 0; side < 2; ++side) {
        const STMap& m = train[side == 0 ? a : b];
        const std::size_t t0 = rng.index(m.length() - w + 1);
        Var mr = forward_g(t, g, t.constant(st_map_input(m.slice(t0, w))));
        const auto patches = sample_patch_positions(kSpatialRows, w, cfg.n_patches, rng);
        psd_sets[side] = patch_psds(t, mr, patches, basis);
      }
      Var loss = contrastive_loss(t, psd_sets[0], psd_sets[1]);
      const auto grads = grad(t, loss, g);
      adam_step(g, grads, cfg.lr, adam);
      res.step_losses.push_back(t.value(loss).item());
      epoch_loss += t.value(loss).item();
    }
    const double v = mean_ipr(g, val, cfg.window_s);
    res.log.push_back({epoch, epoch_loss / cfg.steps_per_epoch, v});
    if (v < res.best_val_ipr) {
      res.best_val_ipr = v;
      res.best_epoch = epoch;
      res.params = g;
    }
  }
  return res;
}

bool align_polarity(ParamStore& g, const std::vector<STMap>& inputs, const std::vector<STMap>& raw) {
  if (inputs.size() != raw.size()) throw ContractError("polarity alignment needs paired maps");
  double score = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto a = extract_rppg(g, inputs[i]);
    const auto b = pos_baseline(raw[i]);
    try {
      score += pearson(a.samples, b.samples);
    } catch (const DspError&) {
      continue;
    }
  }
  if (score >= 0.0) return false;
  for (const char* name : {"g/out.w", "g/out.b"}) {
    for (auto& v : g.get(name).values()) v = -v;
  }
  return true;
}

}  // namespace rppgid
