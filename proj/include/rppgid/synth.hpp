#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "rppgid/ingest.hpp"

namespace rppgid {

// Two-Gaussian pulse morphology over phase in [0, 1): a systolic bump and a
// later, smaller diastolic bump.
struct SubjectMorph {
  double a1 = 1.0, mu1 = 0.25, sigma1 = 0.07;
  double a2 = 0.4, mu2 = 0.65, sigma2 = 0.1;
  std::uint64_t seed = 0;

  double waveform(double phase) const;
  double systolic_phase() const;
  // n samples over one period starting and ending at the systolic peak.
  std::vector<double> template_from_peak(std::size_t n = 90) const;
  // Magnitude of the k-th Fourier coefficient of one period.
  double harmonic(int k) const;
};

// Draws are rejected until the fundamental exceeds the 2nd and 3rd harmonics
// by this amplitude factor, so the pulse rate is the dominant frequency.
inline constexpr double kFundamentalMargin = 1.2;

struct SessionProfile {
  double base_hr = 72.0;      // bpm
  double hrv = 0.0;           // bpm amplitude of the 0.1 Hz oscillation
  double hr_offset = 0.0;     // bpm, session-specific shift
  double noise = 0.0;         // additive Gaussian sigma
  double modulation = 1.0;    // scale on the colour modulation strength
  double phase0 = 0.0;        // starting phase
  std::uint64_t seed = 0;     // noise stream

  double hr_at(double t) const;
};

SubjectMorph gen_subject(std::uint64_t seed);

// Noise-free phase trajectory of the profile, one value per sample.
std::vector<double> pulse_phase(const SessionProfile& prof, double duration_s, double fs);

CppgTrace gen_cppg(const SubjectMorph& subj, const SessionProfile& prof, double duration_s, double fs);

// Pulse waveform rescaled to [0, 1] (unit peak-to-peak), noise-free.
std::vector<double> pulse_signal(const SubjectMorph& subj, const SessionProfile& prof, double duration_s, double fs);

inline constexpr double kBaseColour[3] = {0.6, 0.45, 0.4};
inline constexpr double kChannelWeight[3] = {0.3, 1.0, 0.5};
inline constexpr double kModulationScale = 0.0045;

FrameSequence render_video(const SubjectMorph& subj, const SessionProfile& prof, double duration_s, double fps,
                           std::size_t H = 36, std::size_t W = 36, std::uint64_t seed = 0);

struct DatasetConfig {
  int n_subjects = 8;
  int sessions = 2;
  double duration_s = 120.0;
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
  double fps = 30.0;
  std::size_t height = 36;
  std::size_t width = 36;
  double video_noise = 0.005;
  double cppg_noise = 0.01;
  double cppg_fs = 60.0;
  double hrv = 2.0;
  int n_external = 0;  // external cPPG subjects; 0 means 2 * n_subjects
  double external_duration_s = 120.0;
};

// Writes videos/, cppg/, external/, landmarks.json, manifest.json and
// external_cppg.json under out_dir and returns the manifest as loaded back.
Manifest gen_dataset(const DatasetConfig& cfg);

}  // namespace rppgid
