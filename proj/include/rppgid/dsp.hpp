#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rppgid/deid.hpp"
#include "rppgid/tensor.hpp"

namespace rppgid {

inline constexpr double kBandLo = 0.66;  // 40 bpm
inline constexpr double kBandHi = 4.16;  // 250 bpm
inline constexpr std::size_t kSegmentLength = 90;
// Clips longer than 90 samples at 60 Hz (below 40 bpm) are dropped.
inline constexpr double kMaxClipSeconds = 90.0 / 60.0;

struct RppgSignal {
  std::vector<double> samples;
  double fs = 30.0;

  double duration() const { return static_cast<double>(samples.size()) / fs; }
};

// Band-restricted power spectrum normalised to unit mass.
struct Psd {
  std::vector<double> freqs;
  std::vector<double> power;
  double lo = kBandLo;
  double hi = kBandHi;
};

// Peak-to-peak clips resampled to kSegmentLength and z-scored, one per row.
struct SegmentBatch {
  Tensor segments;                      // [K x 90]
  std::vector<std::size_t> source_peaks;
  std::vector<std::size_t> dropped;     // clip indices rejected as too long
  double fs = 30.0;

  std::size_t count() const { return segments.rank() == 2 ? segments.dim(0) : 0; }
};

// Zero-phase ideal band-pass: DFT bins outside [lo, hi] are zeroed. The map is
// linear and self-adjoint.
std::vector<double> bandpass_samples(std::span<const double> x, double fs, double lo = kBandLo, double hi = kBandHi);
RppgSignal bandpass(const RppgSignal& x, double lo = kBandLo, double hi = kBandHi);

// Hann-windowed DFT basis on the band bins of an n_fft-point grid; cos/sin are
// [n x F] and already include the window.
struct PsdBasis {
  std::vector<double> freqs;
  Tensor cos;
  Tensor sin;
};
PsdBasis psd_basis(std::size_t n, double fs, double lo = kBandLo, double hi = kBandHi, std::size_t n_fft = 0);

// Periodogram of the zero-meaned, Hann-windowed signal restricted to the band.
// n_fft = 0 uses the signal length.
Psd psd(const RppgSignal& x, double lo = kBandLo, double hi = kBandHi, std::size_t n_fft = 0);
double dominant_frequency(const Psd& p);

// 1 - (power within 0.1 Hz of the dominant in-band frequency) / (power in 0.5-5 Hz).
double ipr(const RppgSignal& x);

// Local maxima above the 60th percentile, greedily kept by height with a
// minimum spacing of half the dominant period. Sorted ascending.
std::vector<std::size_t> detect_peaks(const RppgSignal& x);

// Clip bounds for consecutive peaks, with over-long clips moved to `dropped`.
struct ClipPlan {
  std::vector<std::size_t> starts;
  std::vector<std::size_t> ends;
  std::vector<std::size_t> dropped;
};
ClipPlan plan_clips(std::span<const std::size_t> peaks, double fs);

SegmentBatch segment_and_resample(const RppgSignal& x, std::span<const std::size_t> peaks);

double pearson(std::span<const double> a, std::span<const double> b);

// Column means of a [K x L] batch.
std::vector<double> mean_segment(const Tensor& segments);

// Plane-orthogonal-to-skin extraction per ST-map row (1.6 s windows,
// overlap-add), averaged over rows and band-passed. Expects raw colours.
RppgSignal pos_baseline(const STMap& m);

}  // namespace rppgid
