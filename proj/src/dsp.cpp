#include "rppgid/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "rppgid/error.hpp"

namespace rppgid {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kFreqSlack = 1e-9;

// DFT bin indices k of an n-point grid with lo <= k * fs / n <= hi.
std::vector<std::size_t> band_bins(std::size_t n, double fs, double lo, double hi) {
  std::vector<std::size_t> bins;
  for (std::size_t k = 1; k <= n / 2; ++k) {
    const double f = static_cast<double>(k) * fs / static_cast<double>(n);
    if (f >= lo - kFreqSlack && f <= hi + kFreqSlack) bins.push_back(k);
  }
  return bins;
}

double hann(std::size_t t, std::size_t n) {
  return 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(t) / static_cast<double>(n));
}

// |DFT|^2 of the zero-meaned Hann-windowed x at the given bins of an n_fft grid.
std::vector<double> windowed_power(std::span<const double> x, std::span<const std::size_t> bins, std::size_t n_fft) {
  const std::size_t n = x.size();
  const double mu = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  std::vector<double> xw(n);
  for (std::size_t t = 0; t < n; ++t) xw[t] = (x[t] - mu) * hann(t, n);
  std::vector<double> power;
  power.reserve(bins.size());
  for (std::size_t k : bins) {
    double re = 0.0, im = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double ph = kTwoPi * static_cast<double>((k * t) % n_fft) / static_cast<double>(n_fft);
      re += xw[t] * std::cos(ph);
      im -= xw[t] * std::sin(ph);
    }
    power.push_back(re * re + im * im);
  }
  return power;
}

void check_band(double fs, double lo, double hi) {
  if (!(lo > 0.0 && lo < hi && hi < fs / 2.0)) {
    throw ConfigError("band [" + std::to_string(lo) + ", " + std::to_string(hi) + "] Hz is not inside (0, " +
                      std::to_string(fs / 2.0) + ")");
  }
}

}  // namespace

std::vector<double> bandpass_samples(std::span<const double> x, double fs, double lo, double hi) {
  check_band(fs, lo, hi);
  const std::size_t n = x.size();
  std::vector<double> y(n, 0.0);
  if (n < 2) return y;
  std::vector<double> ct(n), st(n);
  for (std::size_t m = 0; m < n; ++m) {
    ct[m] = std::cos(kTwoPi * static_cast<double>(m) / static_cast<double>(n));
    st[m] = std::sin(kTwoPi * static_cast<double>(m) / static_cast<double>(n));
  }
  for (std::size_t k : band_bins(n, fs, lo, hi)) {
    double a = 0.0, b = 0.0;
    std::size_t m = 0;
    for (std::size_t t = 0; t < n; ++t) {
      a += x[t] * ct[m];
      b += x[t] * st[m];
      m += k;
      if (m >= n) m -= n;
    }
    // Bin k and its mirror n - k; Nyquist never lies inside the band.
    a *= 2.0 / static_cast<double>(n);
    b *= 2.0 / static_cast<double>(n);
    m = 0;
    for (std::size_t t = 0; t < n; ++t) {
      y[t] += a * ct[m] + b * st[m];
      m += k;
      if (m >= n) m -= n;
    }
  }
  return y;
}

RppgSignal bandpass(const RppgSignal& x, double lo, double hi) {
  return RppgSignal{bandpass_samples(x.samples, x.fs, lo, hi), x.fs};
}

PsdBasis psd_basis(std::size_t n, double fs, double lo, double hi, std::size_t n_fft) {
  if (n_fft == 0) n_fft = n;
  if (n_fft < n) throw ConfigError("psd: n_fft shorter than the signal");
  const auto bins = band_bins(n_fft, fs, lo, hi);
  if (bins.empty()) throw DspError("psd: no frequency bins inside the band");
  PsdBasis b{{}, Tensor({n, bins.size()}), Tensor({n, bins.size()})};
  for (std::size_t j = 0; j < bins.size(); ++j) {
    b.freqs.push_back(static_cast<double>(bins[j]) * fs / static_cast<double>(n_fft));
    for (std::size_t t = 0; t < n; ++t) {
      const double ph = kTwoPi * static_cast<double>((bins[j] * t) % n_fft) / static_cast<double>(n_fft);
      b.cos.at(t, j) = hann(t, n) * std::cos(ph);
      b.sin.at(t, j) = hann(t, n) * std::sin(ph);
    }
  }
  return b;
}

Psd psd(const RppgSignal& x, double lo, double hi, std::size_t n_fft) {
  if (static_cast<double>(x.samples.size()) < x.fs) throw DspError("psd: signal shorter than 1 s");
  const std::size_t n = x.samples.size();
  if (n_fft == 0) n_fft = n;
  const auto bins = band_bins(n_fft, x.fs, lo, hi);
  if (bins.empty()) throw DspError("psd: no frequency bins inside the band");
  Psd p;
  p.lo = lo;
  p.hi = hi;
  for (std::size_t k : bins) p.freqs.push_back(static_cast<double>(k) * x.fs / static_cast<double>(n_fft));
  p.power = windowed_power(x.samples, bins, n_fft);
  const double total = std::accumulate(p.power.begin(), p.power.end(), 0.0);
  if (total > 0.0) {
    for (auto& v : p.power) v /= total;
  } else {
    std::fill(p.power.begin(), p.power.end(), 1.0 / static_cast<double>(p.power.size()));
  }
  return p;
}

double dominant_frequency(const Psd& p) {
  if (p.power.empty()) throw DspError("dominant_frequency: empty spectrum");
  // max_element returns the first maximum, i.e. the lowest frequency on ties.
  const auto it = std::max_element(p.power.begin(), p.power.end());
  return p.freqs[static_cast<std::size_t>(it - p.power.begin())];
}

double ipr(const RppgSignal& x) {
  if (x.duration() < 5.0 - 1e-9) throw DspError("ipr: signal shorter than 5 s");
  const std::size_t n = x.samples.size();
  const auto bins = band_bins(n, x.fs, 0.5, std::min(5.0, x.fs / 2.0 - 1e-6));
  const auto power = windowed_power(x.samples, bins, n);
  double total = 0.0, best = -1.0, f_dom = 0.0;
  for (std::size_t j = 0; j < bins.size(); ++j) {
    total += power[j];
    const double f = static_cast<double>(bins[j]) * x.fs / static_cast<double>(n);
    if (f >= kBandLo - kFreqSlack && f <= kBandHi + kFreqSlack && power[j] > best) {
      best = power[j];
      f_dom = f;
    }
  }
  if (!(total > 0.0)) return 1.0;
  double near = 0.0;
  for (std::size_t j = 0; j < bins.size(); ++j) {
    const double f = static_cast<double>(bins[j]) * x.fs / static_cast<double>(n);
    if (std::abs(f - f_dom) <= 0.1 + kFreqSlack) near += power[j];
  }
  return std::clamp(1.0 - near / total, 0.0, 1.0);
}

namespace {

// Linear-interpolated percentile (q in [0, 100]).
double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

std::vector<std::size_t> detect_peaks(const RppgSignal& x) {
  const auto& s = x.samples;
  if (s.size() < 3) throw DspError("insufficient beats");
  const double threshold = percentile(s, 60.0);
  std::vector<std::size_t> candidates;
  for (std::size_t i = 1; i + 1 < s.size(); ++i) {
    if (s[i] > s[i - 1] && s[i] >= s[i + 1] && s[i] > threshold) candidates.push_back(i);
  }
  if (candidates.size() < 2) throw DspError("insufficient beats");

  const double f_dom = dominant_frequency(psd(x));
  const double min_dist = 0.5 * x.fs / f_dom;
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return s[candidates[a]] > s[candidates[b]]; });
  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    const std::size_t c = candidates[idx];
    const bool clear = std::none_of(kept.begin(), kept.end(), [&](std::size_t k) {
      return std::abs(static_cast<double>(k) - static_cast<double>(c)) < min_dist;
    });
    if (clear) kept.push_back(c);
  }
  std::sort(kept.begin(), kept.end());
  if (kept.size() < 2) throw DspError("insufficient beats");
  return kept;
}

ClipPlan plan_clips(std::span<const std::size_t> peaks, double fs) {
  if (peaks.size() < 2) throw DspError("insufficient beats");
  ClipPlan plan;
  for (std::size_t k = 0; k + 1 < peaks.size(); ++k) {
    if (static_cast<double>(peaks[k + 1] - peaks[k]) / fs > kMaxClipSeconds + 1e-12) {
      plan.dropped.push_back(k);
      continue;
    }
    plan.starts.push_back(peaks[k]);
    plan.ends.push_back(peaks[k + 1]);
  }
  return plan;
}

SegmentBatch segment_and_resample(const RppgSignal& x, std::span<const std::size_t> peaks) {
  const ClipPlan plan = plan_clips(peaks, x.fs);
  if (plan.starts.empty()) throw DspError("every clip longer than the 40 bpm limit");
  const std::size_t K = plan.starts.size(), L = kSegmentLength;
  SegmentBatch out{Tensor({K, L}), {peaks.begin(), peaks.end()}, plan.dropped, x.fs};
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t a = plan.starts[k], b = plan.ends[k];
    if (b >= x.samples.size()) throw DspError("peak index outside the signal");
    double* row = &out.segments[k * L];
    for (std::size_t i = 0; i < L; ++i) {
      const double u = static_cast<double>(a) + static_cast<double>(b - a) * static_cast<double>(i) /
                                                   static_cast<double>(L - 1);
      auto l = static_cast<std::size_t>(std::floor(u));
      double w = u - static_cast<double>(l);
      if (l >= b) {
        l = b - 1;
        w = 1.0;
      }
      row[i] = (1.0 - w) * x.samples[l] + w * x.samples[l + 1];
    }
    double mu = 0.0;
    for (std::size_t i = 0; i < L; ++i) mu += row[i];
    mu /= static_cast<double>(L);
    double var = 0.0;
    for (std::size_t i = 0; i < L; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(L);
    if (var <= 1e-24 * (1.0 + mu * mu)) {
      std::fill(row, row + L, 0.0);
      continue;
    }
    const double is = 1.0 / std::sqrt(var);
    for (std::size_t i = 0; i < L; ++i) row[i] = (row[i] - mu) * is;
  }
  return out;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw DspError("pearson: need two equal-length sequences (>= 2)");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) throw DspError("pearson: zero variance");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::vector<double> mean_segment(const Tensor& segments) {
  if (segments.rank() != 2 || segments.dim(0) == 0) throw DspError("mean_segment: empty batch");
  const std::size_t K = segments.dim(0), L = segments.dim(1);
  std::vector<double> m(L, 0.0);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t i = 0; i < L; ++i) m[i] += segments[k * L + i];
  for (auto& v : m) v /= static_cast<double>(K);
  return m;
}

RppgSignal pos_baseline(const STMap& m) {
  const std::size_t R = m.rows(), T = m.length();
  const auto l = static_cast<std::size_t>(std::ceil(1.6 * m.fps));
  if (T < l) throw DspError("pos_baseline: fewer frames than one 1.6 s window");
  std::vector<double> acc(T, 0.0);
  std::vector<double> h(T);
  std::vector<double> s1(l), s2(l);
  for (std::size_t r = 0; r < R; ++r) {
    std::fill(h.begin(), h.end(), 0.0);
    for (std::size_t n = 0; n + l <= T; ++n) {
      double mean[3] = {0, 0, 0};
      for (std::size_t t = 0; t < l; ++t)
        for (std::size_t c = 0; c < 3; ++c) mean[c] += m.data[(r * T + n + t) * 3 + c];
      for (double& v : mean) v /= static_cast<double>(l);
      if (mean[0] <= 0.0 || mean[1] <= 0.0 || mean[2] <= 0.0) continue;
      for (std::size_t t = 0; t < l; ++t) {
        const double* px = &m.data[(r * T + n + t) * 3];
        const double rn = px[0] / mean[0], gn = px[1] / mean[1], bn = px[2] / mean[2];
        s1[t] = gn - bn;
        s2[t] = gn + bn - 2.0 * rn;
      }
      auto sd = [&](const std::vector<double>& v) {
        const double mu = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - mu) * (x - mu);
        return std::sqrt(ss / static_cast<double>(v.size()));
      };
      const double sd2 = sd(s2);
      const double alpha = sd2 > 1e-12 ? sd(s1) / sd2 : 0.0;
      double mu = 0.0;
      for (std::size_t t = 0; t < l; ++t) mu += s1[t] + alpha * s2[t];
      mu /= static_cast<double>(l);
      for (std::size_t t = 0; t < l; ++t) h[n + t] += s1[t] + alpha * s2[t] - mu;
    }
    for (std::size_t t = 0; t < T; ++t) acc[t] += h[t] / static_cast<double>(R);
  }
  return bandpass(RppgSignal{std::move(acc), m.fps});
}

}  // namespace rppgid
