#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gradcheck.hpp"
#include "rppgid/cp2d.hpp"
#include "rppgid/error.hpp"
#include "rppgid/ops.hpp"
#include "rppgid/synth.hpp"

namespace rppgid {
namespace {

using testing::random_tensor;
using testing::sampled_gradcheck;
using testing::weighted_sum;

STMap random_map(std::size_t T, std::uint64_t seed) {
  Rng rng(seed);
  return STMap{random_tensor({36, T, 3}, rng), 30.0};
}

TEST(ForwardG, OutputShape) {
  const auto g = init_model_g(1);
  EXPECT_EQ(forward_g(g, random_map(300, 2)).shape(), (Shape{4, 300}));
  EXPECT_EQ(forward_g(g, random_map(61, 3)).shape(), (Shape{4, 61}));
}

TEST(ForwardG, ZeroInputGivesZeroOutput) {
  const auto g = init_model_g(4);
  const Tensor y = forward_g(g, STMap{Tensor({36, 90, 3}), 30.0});
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(ForwardG, ShapeMismatchIsModelError) {
  const auto g = init_model_g(5);
  EXPECT_THROW(forward_g(g, STMap{Tensor({30, 90, 3}), 30.0}), ModelError);
}

TEST(ForwardG, ParameterNamesAreGrouped) {
  const auto g = init_model_g(6);
  EXPECT_EQ(g.size(), 8u);
  for (const auto& [name, _] : g) EXPECT_EQ(name.rfind("g/", 0), 0u);
  EXPECT_EQ(g.get("g/conv2.w").shape(), (Shape{32, 16, 3, 3}));
}

class GGradient : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(GGradient, MeanOutputMatchesFiniteDifferences) {
  const std::uint64_t seed = GetParam();
  ParamStore g = init_model_g(seed);
  Rng rng(seed + 100);
  for (auto& [name, v] : g)
    if (name.find(".b") != std::string::npos) v = random_tensor(v.shape(), rng, 0.1);
  const Tensor x = st_map_input(random_map(8, seed + 200));
  const auto build = [&](Tape& t, const ParamStore& p) { return ops::mean(t, forward_g(t, p, t.constant(x))); };
  EXPECT_LE(sampled_gradcheck(build, g, 6, seed), 1e-4);
}

TEST_P(GGradient, ContrastiveLossThroughModelMatchesFiniteDifferences) {
  const std::uint64_t seed = GetParam();
  const ParamStore g = init_model_g(seed);
  const Tensor xa = st_map_input(random_map(60, seed + 300));
  const Tensor xb = st_map_input(random_map(60, seed + 400));
  const PsdBasis basis = patch_basis(30, 30.0);
  Rng rng(seed + 500);
  const auto pa = sample_patch_positions(4, 60, 4, rng);
  const auto pb = sample_patch_positions(4, 60, 4, rng);
  const auto build = [&](Tape& t, const ParamStore& p) {
    Var fa = patch_psds(t, forward_g(t, p, t.constant(xa)), pa, basis);
    Var fb = patch_psds(t, forward_g(t, p, t.constant(xb)), pb, basis);
    return contrastive_loss(t, fa, fb);
  };
  EXPECT_LE(sampled_gradcheck(build, g, 6, seed), 1e-3);
}

TEST_P(GGradient, PatchPsdAndLossMatchFiniteDifferences) {
  const std::uint64_t seed = GetParam();
  Rng rng(seed);
  ParamStore p(seed);
  p.set("a", random_tensor({3, 45}, rng));
  p.set("b", random_tensor({3, 45}, rng));
  const PsdBasis basis = patch_basis(45, 30.0);
  const auto psds = [&](Tape& t, Var x) {
    std::vector<Var> rows;
    for (std::size_t r = 0; r < 3; ++r) rows.push_back(patch_to_psd(t, ops::slice_row(t, x, r, 0, 45), basis));
    return ops::stack(t, rows);
  };
  const auto bin = [&](Tape& t, const ParamStore& q) { return weighted_sum(t, psds(t, t.param(q, "a")), seed); };
  EXPECT_LE(testing::gradcheck(bin, p), 1e-4);
  const auto loss = [&](Tape& t, const ParamStore& q) {
    return contrastive_loss(t, psds(t, t.param(q, "a")), psds(t, t.param(q, "b")));
  };
  EXPECT_LE(testing::gradcheck(loss, p), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Seeds, GGradient, ::testing::Range<std::uint64_t>(0, 10));

TEST(SamplePatches, CountLengthAndDeterminism) {
  Rng rng(1);
  const Tensor mr = random_tensor({4, 300}, rng);
  const auto a = sample_patches(mr, 16, 9);
  ASSERT_EQ(a.size(), 16u);
  for (const auto& p : a) {
    EXPECT_EQ(p.length, 150u);
    EXPECT_EQ(p.values.size(), 150u);
    EXPECT_LE(p.start + p.length, 300u);
    EXPECT_EQ(p.values[7], mr.at(p.row, p.start + 7));
  }
  const auto b = sample_patches(mr, 16, 9);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(a[i].row, b[i].row);
    EXPECT_EQ(a[i].start, b[i].start);
  }
}

TEST(SamplePatches, OddLengthTruncates) {
  Rng rng(2);
  const Tensor mr = random_tensor({4, 301}, rng);
  for (const auto& p : sample_patches(mr, 50, 3)) {
    EXPECT_EQ(p.length, 150u);
    EXPECT_LE(p.start + p.length, 300u);
  }
}

TEST(SamplePatches, RowsAreUniform) {
  Rng rng(3);
  const auto patches = sample_patch_positions(4, 300, 10000, rng);
  std::array<double, 4> counts{};
  for (const auto& p : patches) counts[p.row] += 1.0;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - 2500.0) * (c - 2500.0) / 2500.0;
  // 99th percentile of chi-square with 3 degrees of freedom.
  EXPECT_LT(chi2, 11.345);
}

TEST(PatchToPsd, SinusoidPeakAndNormalization) {
  PatchSample p{0, 0, 150, {}};
  for (std::size_t i = 0; i < 150; ++i) p.values.push_back(std::sin(2.0 * std::numbers::pi * 1.2 * i / 30.0));
  const Psd q = patch_to_psd(p, 30.0);
  EXPECT_NEAR(dominant_frequency(q), 1.2, 0.1 + 1e-9);
  EXPECT_NEAR(q.freqs[1] - q.freqs[0], 0.1, 1e-12);
  double total = 0;
  for (double v : q.power) total += v;
  EXPECT_NEAR(total, 1.0, 1e-12);

  Tape t;
  const Var v = patch_to_psd(t, t.constant(Tensor({150}, p.values)), patch_basis(150, 30.0));
  for (std::size_t k = 0; k < q.power.size(); ++k) EXPECT_NEAR(t.value(v)[k], q.power[k], 1e-12);
  PatchSample shortp{0, 0, 20, std::vector<double>(20, 1.0)};
  EXPECT_THROW(patch_to_psd(shortp, 30.0), DspError);
}

TEST(ContrastiveLoss, IdenticalPsdsGiveZero) {
  Tensor f({3, 4}, 0.25);
  EXPECT_EQ(contrastive_loss(f, f), 0.0);
  Tape t;
  EXPECT_NEAR(t.value(contrastive_loss(t, t.constant(f), t.constant(f))).item(), 0.0, 1e-15);
}

TEST(ContrastiveLoss, OrthogonalHandCase) {
  const Tensor f = Tensor::matrix({{1, 0}, {1, 0}});
  const Tensor f2 = Tensor::matrix({{0, 1}, {0, 1}});
  EXPECT_EQ(contrastive_loss(f, f2), -2.0);
  Tape t;
  EXPECT_EQ(t.value(contrastive_loss(t, t.constant(f), t.constant(f2))).item(), -2.0);
}

TEST(ContrastiveLoss, FusedMatchesPairwiseDefinition) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = random_tensor({5, 7}, rng), b = random_tensor({5, 7}, rng);
    Tape t;
    EXPECT_NEAR(t.value(contrastive_loss(t, t.constant(a), t.constant(b))).item(), contrastive_loss(a, b), 1e-12);
  }
}

TEST(ContrastiveLoss, SymmetryPermutationAndMonotonicity) {
  Rng rng(5);
  const Tensor a = random_tensor({4, 6}, rng), b = random_tensor({4, 6}, rng);
  EXPECT_NEAR(contrastive_loss(a, b), contrastive_loss(b, a), 1e-12);
  Tensor ap = a;
  for (std::size_t k = 0; k < 6; ++k) std::swap(ap.at(0, k), ap.at(3, k));
  EXPECT_NEAR(contrastive_loss(ap, b), contrastive_loss(a, b), 1e-12);
  // Moving a's rows halfway toward their mean shrinks the positive term only.
  Tensor closer = a;
  for (std::size_t k = 0; k < 6; ++k) {
    double m = 0;
    for (std::size_t i = 0; i < 4; ++i) m += a.at(i, k) / 4;
    for (std::size_t i = 0; i < 4; ++i) closer.at(i, k) = 0.5 * (a.at(i, k) + m);
  }
  double before = 0, after = 0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t k = 0; k < 6; ++k) {
        before += std::pow(a.at(i, k) - b.at(j, k), 2);
        after += std::pow(closer.at(i, k) - b.at(j, k), 2);
      }
  // Hold the cross-video term fixed by correcting with its change.
  const double corrected = contrastive_loss(closer, b) + (after - before) / 16.0;
  EXPECT_LT(corrected, contrastive_loss(a, b));
}

TEST(ContrastiveLoss, ContractErrors) {
  EXPECT_THROW(contrastive_loss(Tensor({1, 3}), Tensor({1, 3})), ContractError);
  EXPECT_THROW(contrastive_loss(Tensor({2, 3}), Tensor({2, 4})), ContractError);
}

TEST(ExtractRppg, LengthAndEqualRows) {
  const auto g = init_model_g(7);
  const auto m = random_map(150, 8);
  EXPECT_EQ(extract_rppg(g, m).samples.size(), 150u);
  // Zero conv3 weights and a bias make all four rows equal constants after
  // tanh; the 1x1 output then yields identical rows.
  ParamStore flat = g;
  for (auto& v : flat.get("g/conv3.w").values()) v = 0.0;
  const Tensor mr = forward_g(flat, m);
  for (std::size_t r = 1; r < 4; ++r)
    for (std::size_t t = 0; t < 150; ++t) EXPECT_EQ(mr.at(r, t), mr.at(0, t));
  const auto s = extract_rppg(flat, m);
  RppgSignal row0{std::vector<double>(mr.data().begin(), mr.data().begin() + 150), 30.0};
  const auto b = bandpass(row0);
  for (std::size_t t = 0; t < 150; ++t) EXPECT_NEAR(s.samples[t], b.samples[t], 1e-12);
}

std::vector<STMap> synthetic_maps(int n, double seconds, std::uint64_t seed, bool normalized) {
  std::vector<STMap> out;
  for (int i = 0; i < n; ++i) {
    SessionProfile prof;
    prof.base_hr = 60.0 + 7.0 * i;
    prof.noise = 0.005;
    const auto v = render_video(gen_subject(seed + i), prof, seconds, 30.0, 12, 12, seed + 50 + i);
    const auto m = build_st_map(permute(downsample(v), seed + i, 30.0));
    out.push_back(normalized ? normalize_st_map(m) : m);
  }
  return out;
}

TEST(TrainStage1, ZeroEpochsKeepsInitialization) {
  const auto maps = synthetic_maps(2, 12.0, 1, true);
  Stage1Config cfg;
  cfg.epochs = 0;
  cfg.seed = 3;
  const auto r = train_stage1(maps, maps, cfg);
  EXPECT_EQ(r.params, init_model_g(mix_seed(3, fnv1a("init-g"))));
  ASSERT_EQ(r.log.size(), 1u);
  EXPECT_EQ(r.best_epoch, 0);
  EXPECT_EQ(r.log[0].val_ipr, r.best_val_ipr);
  EXPECT_GE(r.best_val_ipr, 0.0);
}

TEST(TrainStage1, SingleVideoIsConfigError) {
  const auto maps = synthetic_maps(1, 12.0, 1, true);
  EXPECT_THROW(train_stage1(maps, maps, Stage1Config{}), ConfigError);
}

TEST(TrainStage1, DeterministicLossTrajectory) {
  const auto maps = synthetic_maps(3, 12.0, 2, true);
  Stage1Config cfg;
  cfg.epochs = 2;
  cfg.steps_per_epoch = 2;
  cfg.seed = 11;
  const auto a = train_stage1(maps, maps, cfg);
  const auto b = train_stage1(maps, maps, cfg);
  EXPECT_EQ(a.step_losses, b.step_losses);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.log.size(), 3u);
}

TEST(AlignPolarity, FlipsAnticorrelatedOutput) {
  const auto raw = synthetic_maps(2, 12.0, 4, false);
  std::vector<STMap> norm;
  for (const auto& m : raw) norm.push_back(normalize_st_map(m));
  ParamStore g = init_model_g(9);
  align_polarity(g, norm, raw);
  double r = 0;
  for (std::size_t i = 0; i < 2; ++i) r += pearson(extract_rppg(g, norm[i]).samples, pos_baseline(raw[i]).samples);
  EXPECT_GE(r, 0.0);
  ParamStore flipped = g;
  for (auto& v : flipped.get("g/out.w").values()) v = -v;
  for (auto& v : flipped.get("g/out.b").values()) v = -v;
  EXPECT_TRUE(align_polarity(flipped, norm, raw));
  EXPECT_EQ(flipped, g);
}

}  // namespace
}  // namespace rppgid
