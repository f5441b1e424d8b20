#include "rppgid/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"

#include "rppgid/error.hpp"
#include "rppgid/rng.hpp"

namespace rppgid {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kHrvRate = 0.1;  // Hz
constexpr std::size_t kPhaseGrid = 4096;

double bump(double phase, double a, double mu, double sigma) {
  double s = 0.0;
  for (int k = -1; k <= 1; ++k) {
    const double d = phase + k - mu;
    s += a * std::exp(-d * d / (2.0 * sigma * sigma));
  }
  return s;
}

std::pair<double, double> waveform_range(const SubjectMorph& m) {
  double lo = m.waveform(0.0), hi = lo;
  for (std::size_t i = 1; i < kPhaseGrid; ++i) {
    const double v = m.waveform(static_cast<double>(i) / kPhaseGrid);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return {lo, hi};
}

void check_profile(const SessionProfile& prof, double duration_s) {
  if (duration_s < 10.0) throw ConfigError("synthetic recordings must last at least 10 s");
  const double centre = prof.base_hr + prof.hr_offset;
  const double lo = centre - std::abs(prof.hrv), hi = centre + std::abs(prof.hrv);
  if (lo < 40.0 || hi > 180.0) {
    throw ConfigError("heart rate range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                      "] bpm leaves 40-180 bpm");
  }
}

std::string two_digit(int i) {
  std::string s = std::to_string(i);
  return s.size() < 2 ? "0" + s : s;
}

}  // namespace

double SubjectMorph::waveform(double phase) const {
  phase -= std::floor(phase);
  return bump(phase, a1, mu1, sigma1) + bump(phase, a2, mu2, sigma2);
}

double SubjectMorph::systolic_phase() const {
  std::size_t best = 0;
  double best_v = waveform(0.0);
  for (std::size_t i = 1; i < kPhaseGrid; ++i) {
    const double v = waveform(static_cast<double>(i) / kPhaseGrid);
    if (v > best_v) {
      best_v = v;
      best = i;
    }
  }
  // Refine on a finer grid around the coarse maximum.
  double phase = static_cast<double>(best) / kPhaseGrid;
  const double step = 1.0 / (kPhaseGrid * 64.0);
  double refined = phase;
  for (int j = -64; j <= 64; ++j) {
    const double p = phase + j * step;
    const double v = waveform(p);
    if (v > best_v) {
      best_v = v;
      refined = p;
    }
  }
  return refined - std::floor(refined);
}

std::vector<double> SubjectMorph::template_from_peak(std::size_t n) const {
  const double p0 = systolic_phase();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = waveform(p0 + static_cast<double>(i) / static_cast<double>(n - 1));
  return out;
}

double SubjectMorph::harmonic(int k) const {
  constexpr std::size_t n = 512;
  double re = 0.0, im = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ph = static_cast<double>(i) / n;
    const double v = waveform(ph);
    re += v * std::cos(kTwoPi * k * ph);
    im -= v * std::sin(kTwoPi * k * ph);
  }
  return std::hypot(re, im) / n;
}

double SessionProfile::hr_at(double t) const {
  return base_hr + hr_offset + hrv * std::sin(kTwoPi * kHrvRate * t);
}

SubjectMorph gen_subject(std::uint64_t seed) {
  Rng rng(seed);
  SubjectMorph m;
  m.seed = seed;
  do {
    m.a1 = rng.uniform(0.8, 1.2);
    m.mu1 = rng.uniform(0.20, 0.30);
    m.sigma1 = rng.uniform(0.05, 0.10);
    m.a2 = rng.uniform(0.25, 0.50);
    m.mu2 = rng.uniform(0.55, 0.75);
    m.sigma2 = rng.uniform(0.08, 0.15);
  } while (m.harmonic(1) < kFundamentalMargin * std::max(m.harmonic(2), m.harmonic(3)));
  return m;
}

std::vector<double> pulse_phase(const SessionProfile& prof, double duration_s, double fs) {
  const auto n = static_cast<std::size_t>(std::llround(duration_s * fs));
  const double f0 = (prof.base_hr + prof.hr_offset) / 60.0;
  const double w = kTwoPi * kHrvRate;
  std::vector<double> phase(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    // Closed-form integral of hr_at(t) / 60.
    phase[i] = prof.phase0 + f0 * t + prof.hrv / 60.0 * (1.0 - std::cos(w * t)) / w;
  }
  return phase;
}

CppgTrace gen_cppg(const SubjectMorph& subj, const SessionProfile& prof, double duration_s, double fs) {
  check_profile(prof, duration_s);
  const auto phase = pulse_phase(prof, duration_s, fs);
  Rng rng(prof.seed);
  CppgTrace out;
  out.fs = fs;
  out.samples.resize(phase.size());
  for (std::size_t i = 0; i < phase.size(); ++i) {
    out.samples[i] = subj.waveform(phase[i]);
    if (prof.noise > 0.0) out.samples[i] += prof.noise * rng.normal();
  }
  return out;
}

std::vector<double> pulse_signal(const SubjectMorph& subj, const SessionProfile& prof, double duration_s, double fs) {
  check_profile(prof, duration_s);
  const auto [lo, hi] = waveform_range(subj);
  auto s = pulse_phase(prof, duration_s, fs);
  for (auto& v : s) v = (subj.waveform(v) - lo) / (hi - lo);
  return s;
}

FrameSequence render_video(const SubjectMorph& subj, const SessionProfile& prof, double duration_s, double fps,
                           std::size_t H, std::size_t W, std::uint64_t seed) {
  if (H < 6 || W < 6) throw ConfigError("rendered frames must be at least 6x6");
  const auto s = pulse_signal(subj, prof, duration_s, fps);
  double alpha[3];
  for (int c = 0; c < 3; ++c) {
    alpha[c] = kChannelWeight[c] * kModulationScale * prof.modulation;
    // Largest gain is 1.5 and s spans [0, 1].
    const double extreme = kBaseColour[c] + 1.5 * alpha[c];
    if (extreme > 1.0 || extreme < 0.0) throw ConfigError("colour modulation leaves [0, 1]");
  }
  Rng rng(seed);
  std::vector<double> gain(H * W);
  for (auto& g : gain) g = rng.uniform(0.5, 1.5);
  const std::size_t T = s.size();
  Tensor data({T, H, W, 3});
  double* out = &data[0];
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t p = 0; p < H * W; ++p)
      for (int c = 0; c < 3; ++c) {
        double v = kBaseColour[c] + gain[p] * alpha[c] * s[t];
        if (prof.noise > 0.0) v += prof.noise * rng.normal();
        *out++ = std::clamp(v, 0.0, 1.0);
      }
  return FrameSequence{std::move(data), fps};
}

Manifest gen_dataset(const DatasetConfig& cfg) {
  if (cfg.n_subjects < 2) throw ConfigError("need at least 2 subjects, got " + std::to_string(cfg.n_subjects));
  if (cfg.sessions < 1) throw ConfigError("need at least 1 session");
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir / "videos");
  fs::create_directories(cfg.out_dir / "cppg");
  fs::create_directories(cfg.out_dir / "external");

  {
    // One static face box covering most of the frame.
    const double x0 = 0.1 * static_cast<double>(cfg.width), x1 = 0.9 * static_cast<double>(cfg.width - 1);
    const double y0 = 0.1 * static_cast<double>(cfg.height), y1 = 0.9 * static_cast<double>(cfg.height - 1);
    nlohmann::json lm = nlohmann::json::array({nlohmann::json::array({{x0, y0}, {x1, y0}, {x0, y1}, {x1, y1}})});
    std::ofstream os(cfg.out_dir / "landmarks.json");
    if (!os) throw Error("cannot write landmarks under " + cfg.out_dir.string());
    os << lm.dump() << '\n';
  }

  Manifest manifest;
  manifest.base_dir = cfg.out_dir;
  for (int s = 0; s < cfg.n_subjects; ++s) {
    const SubjectMorph subj = gen_subject(mix_seed(cfg.seed, fnv1a("subject#" + std::to_string(s))));
    Rng prof_rng(mix_seed(cfg.seed, fnv1a("profile#" + std::to_string(s))));
    const double base_hr = prof_rng.uniform(60.0, 90.0);
    const double offset = prof_rng.uniform(15.0, 25.0);
    for (int sess = 1; sess <= cfg.sessions; ++sess) {
      const std::string stem = "s" + two_digit(s) + "_sess" + std::to_string(sess);
      SessionProfile prof;
      prof.base_hr = base_hr;
      prof.hr_offset = sess == 1 ? 0.0 : offset;
      prof.hrv = cfg.hrv;
      prof.phase0 = prof_rng.uniform();
      prof.noise = cfg.video_noise;
      const auto vseed = mix_seed(cfg.seed, fnv1a("video#" + stem));
      const auto video = render_video(subj, prof, cfg.duration_s, cfg.fps, cfg.height, cfg.width, vseed);
      save_raw_tensor(cfg.out_dir / "videos" / (stem + ".rppg"), video.data);

      SessionProfile cprof = prof;
      cprof.noise = cfg.cppg_noise;
      cprof.seed = mix_seed(cfg.seed, fnv1a("cppg#" + stem));
      auto trace = gen_cppg(subj, cprof, cfg.duration_s, cfg.cppg_fs);
      save_cppg(cfg.out_dir / "cppg" / (stem + ".csv"), trace);

      ManifestRecord r;
      r.video_path = "videos/" + stem + ".rppg";
      r.subject_id = s;
      r.source_subject_id = s;
      r.session_tag = std::to_string(sess);
      r.fps = cfg.fps;
      r.landmarks_path = "landmarks.json";
      r.cppg_path = "cppg/" + stem + ".csv";
      r.cppg_fs = cfg.cppg_fs;
      manifest.records.push_back(std::move(r));
    }
  }
  save_manifest(cfg.out_dir / "manifest.json", manifest);

  const int n_ext = cfg.n_external > 0 ? cfg.n_external : 2 * cfg.n_subjects;
  nlohmann::json ext = nlohmann::json::array();
  for (int e = 0; e < n_ext; ++e) {
    const std::string stem = "e" + two_digit(e);
    const SubjectMorph subj = gen_subject(mix_seed(cfg.seed, fnv1a("external#" + std::to_string(e))));
    Rng prof_rng(mix_seed(cfg.seed, fnv1a("external-profile#" + std::to_string(e))));
    SessionProfile prof;
    prof.base_hr = prof_rng.uniform(55.0, 110.0);
    prof.hrv = cfg.hrv;
    prof.phase0 = prof_rng.uniform();
    prof.noise = cfg.cppg_noise;
    prof.seed = mix_seed(cfg.seed, fnv1a("external-cppg#" + stem));
    const auto trace = gen_cppg(subj, prof, cfg.external_duration_s, cfg.cppg_fs);
    save_cppg(cfg.out_dir / "external" / (stem + ".csv"), trace);
    ext.push_back({{"cppg_path", "external/" + stem + ".csv"}, {"subject_id", e}, {"fs", cfg.cppg_fs}});
  }
  {
    std::ofstream os(cfg.out_dir / "external_cppg.json");
    if (!os) throw Error("cannot write external_cppg.json");
    os << ext.dump(2) << '\n';
  }
  return load_manifest(cfg.out_dir / "manifest.json");
}

}  // namespace rppgid
