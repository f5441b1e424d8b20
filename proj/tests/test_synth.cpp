#include <gtest/gtest.h>

#include <cmath>

#include "rppgid/dsp.hpp"
#include "rppgid/error.hpp"
#include "rppgid/synth.hpp"
#include "test_util.hpp"

namespace rppgid {
namespace {

TEST(GenSubject, SameSeedSameParameters) {
  const auto a = gen_subject(17), b = gen_subject(17);
  EXPECT_EQ(a.a1, b.a1);
  EXPECT_EQ(a.mu2, b.mu2);
  EXPECT_EQ(a.sigma2, b.sigma2);
  EXPECT_NE(gen_subject(18).a1, a.a1);
}

TEST(GenSubject, ParametersWithinRanges) {
  for (std::uint64_t s = 0; s < 10000; ++s) {
    const auto m = gen_subject(s);
    ASSERT_TRUE(m.a1 >= 0.8 && m.a1 <= 1.2);
    ASSERT_TRUE(m.mu1 >= 0.2 && m.mu1 <= 0.3);
    ASSERT_TRUE(m.sigma1 >= 0.05 && m.sigma1 <= 0.1);
    ASSERT_TRUE(m.a2 >= 0.25 && m.a2 <= 0.5);
    ASSERT_TRUE(m.mu2 >= 0.55 && m.mu2 <= 0.75);
    ASSERT_TRUE(m.sigma2 >= 0.08 && m.sigma2 <= 0.15);
    ASSERT_TRUE(m.a1 > m.a2 && m.mu1 < m.mu2);
    ASSERT_GE(m.harmonic(1), kFundamentalMargin * std::max(m.harmonic(2), m.harmonic(3)));
  }
}

TEST(GenSubject, TemplatesAreDistinct) {
  std::vector<std::vector<double>> t;
  for (std::uint64_t s = 0; s < 100; ++s) t.push_back(gen_subject(1000 + s).template_from_peak(90));
  std::size_t pairs = 0, distinct = 0;
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = i + 1; j < t.size(); ++j) {
      ++pairs;
      if (pearson(t[i], t[j]) < 0.999) ++distinct;
    }
  EXPECT_GE(static_cast<double>(distinct), 0.99 * static_cast<double>(pairs));
}

TEST(GenCppg, ConstantRateGivesIdenticalPeriods) {
  SessionProfile prof;
  prof.base_hr = 60.0;
  const auto c = gen_cppg(gen_subject(3), prof, 10.0, 30.0);
  ASSERT_EQ(c.samples.size(), 300u);
  for (std::size_t i = 0; i + 30 < c.samples.size(); ++i) EXPECT_NEAR(c.samples[i], c.samples[i + 30], 1e-12);
}

TEST(GenCppg, DominantFrequencyIsBaseRate) {
  for (double hr : {55.0, 72.0, 95.0, 130.0}) {
    SessionProfile prof;
    prof.base_hr = hr;
    prof.hrv = 2.0;
    prof.noise = 0.02;
    prof.seed = 4;
    const auto c = gen_cppg(gen_subject(5), prof, 20.0, 30.0);
    EXPECT_NEAR(dominant_frequency(psd(RppgSignal{c.samples, c.fs})), hr / 60.0, 0.1 + 1e-9);
  }
}

TEST(GenCppg, Errors) {
  SessionProfile prof;
  prof.base_hr = 170.0;
  prof.hrv = 15.0;
  EXPECT_THROW(gen_cppg(gen_subject(1), prof, 10.0, 30.0), ConfigError);
  prof = SessionProfile{};
  EXPECT_THROW(gen_cppg(gen_subject(1), prof, 9.0, 30.0), ConfigError);
}

TEST(RenderVideo, NoiseFreePixelsPulseAtHeartRate) {
  SessionProfile prof;
  prof.base_hr = 84.0;
  const auto v = render_video(gen_subject(6), prof, 10.0, 30.0, 8, 8, 3);
  for (std::size_t p : {0u, 13u, 63u}) {
    RppgSignal s{std::vector<double>(v.frames()), 30.0};
    for (std::size_t t = 0; t < v.frames(); ++t) s.samples[t] = v.data[(t * 64 + p) * 3 + 1];
    EXPECT_NEAR(dominant_frequency(psd(s)), 1.4, 0.1 + 1e-9);
  }
}

TEST(RenderVideo, ZeroModulationIsConstant) {
  SessionProfile prof;
  prof.modulation = 0.0;
  const auto v = render_video(gen_subject(6), prof, 10.0, 30.0, 6, 6, 3);
  for (std::size_t i = 0; i < v.data.size(); ++i) ASSERT_EQ(v.data[i], kBaseColour[i % 3]);
}

TEST(RenderVideo, SpatialMeanTracksPulse) {
  SessionProfile prof;
  prof.base_hr = 75.0;
  prof.hrv = 3.0;
  const auto subj = gen_subject(7);
  const auto v = render_video(subj, prof, 10.0, 30.0, 12, 12, 8);
  const auto s = pulse_signal(subj, prof, 10.0, 30.0);
  std::vector<double> mean(v.frames(), 0.0);
  for (std::size_t t = 0; t < v.frames(); ++t)
    for (std::size_t p = 0; p < 144; ++p) mean[t] += v.data[(t * 144 + p) * 3 + 1];
  EXPECT_GE(pearson(mean, s), 0.99);
  const auto [lo, hi] = std::minmax_element(s.begin(), s.end());
  EXPECT_NEAR(*hi - *lo, 1.0, 1e-3);
}

TEST(RenderVideo, ExcessiveModulationRejected) {
  SessionProfile prof;
  prof.modulation = 200.0;
  EXPECT_THROW(render_video(gen_subject(1), prof, 10.0, 30.0, 6, 6, 1), ConfigError);
  EXPECT_THROW(render_video(gen_subject(1), SessionProfile{}, 10.0, 30.0, 5, 6, 1), ConfigError);
}

DatasetConfig small_config(const std::filesystem::path& out, int n) {
  DatasetConfig cfg;
  cfg.n_subjects = n;
  cfg.duration_s = 10.0;
  cfg.height = 12;
  cfg.width = 12;
  cfg.out_dir = out;
  cfg.seed = 3;
  cfg.n_external = 3;
  cfg.external_duration_s = 10.0;
  return cfg;
}

std::size_t count_files(const std::filesystem::path& dir, const std::string& ext) {
  std::size_t n = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) n += e.path().extension() == ext;
  return n;
}

TEST(GenDataset, EightSubjectsCounts) {
  testing::TempDir dir;
  const auto m = gen_dataset(small_config(dir.path(), 8));
  EXPECT_EQ(m.records.size(), 16u);
  EXPECT_EQ(count_files(dir / "videos", ".rppg"), 16u);
  EXPECT_EQ(count_files(dir / "cppg", ".csv"), 16u);
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.json"));
  EXPECT_EQ(m.subject_count(), 8);
}

TEST(GenDataset, PassesIngestRoundTrip) {
  testing::TempDir dir;
  gen_dataset(small_config(dir.path(), 2));
  const auto m = load_manifest(dir / "manifest.json");
  ASSERT_EQ(m.records.size(), 4u);
  for (const auto& r : m.records) {
    const auto v = crop_face(load_frames(m.resolve(r.video_path), r.fps), load_landmarks(m.resolve(*r.landmarks_path)));
    EXPECT_EQ(v.frames(), 300u);
    const auto c = load_cppg(m.resolve(*r.cppg_path), *r.cppg_fs, r.subject_id);
    EXPECT_EQ(c.samples.size(), 600u);
  }
  EXPECT_EQ(m.records[0].session_tag, "1");
  EXPECT_EQ(m.records[1].session_tag, "2");
  const auto ext = load_cppg_set(dir / "external_cppg.json", 30.0);
  ASSERT_EQ(ext.size(), 3u);
  EXPECT_EQ(ext[2].subject_id, 2);
  EXPECT_EQ(ext[0].fs, 30.0);
}

TEST(GenDataset, SameSeedIsByteIdentical) {
  testing::TempDir a, b;
  std::filesystem::create_directories(a / "x");
  std::filesystem::create_directories(b / "x");
  gen_dataset(small_config(a / "x", 2));
  gen_dataset(small_config(b / "x", 2));
  std::size_t files = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(a / "x")) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), a / "x");
    EXPECT_EQ(testing::read_bytes(e.path()), testing::read_bytes(b / "x" / rel.string())) << rel;
    ++files;
  }
  EXPECT_EQ(files, 4u + 4u + 3u + 3u);
}

TEST(GenDataset, NeedsTwoSubjects) {
  testing::TempDir dir;
  EXPECT_THROW(gen_dataset(small_config(dir.path(), 1)), ConfigError);
}

}  // namespace
}  // namespace rppgid
