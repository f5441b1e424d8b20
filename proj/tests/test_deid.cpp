#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "rppgid/deid.hpp"
#include "rppgid/error.hpp"
#include "rppgid/rng.hpp"
#include "test_util.hpp"

namespace rppgid {
namespace {

FrameSequence random_video(std::size_t T, std::size_t H, std::size_t W, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({T, H, W, 3});
  for (auto& v : t.values()) v = rng.uniform();
  return FrameSequence{std::move(t), 30.0};
}

TEST(Downsample, ConstantFrame) {
  const FrameSequence v{Tensor({2, 17, 23, 3}, 0.375), 30.0};
  const Tensor d = downsample(v);
  EXPECT_EQ(d.shape(), (Shape{2, 6, 6, 3}));
  for (double x : d.values()) EXPECT_NEAR(x, 0.375, 1e-15);
}

TEST(Downsample, SixBySixIsIdentity) {
  const auto v = random_video(3, 6, 6, 1);
  EXPECT_EQ(downsample(v), v.data);
}

TEST(Downsample, SingleOnesBlock) {
  Tensor t({1, 12, 12, 3});
  for (std::size_t h = 4; h < 6; ++h)
    for (std::size_t w = 8; w < 10; ++w)
      for (std::size_t c = 0; c < 3; ++c) t[(h * 12 + w) * 3 + c] = 1.0;
  const Tensor d = downsample(FrameSequence{t, 30.0});
  std::size_t ones = 0;
  for (std::size_t cell = 0; cell < 36; ++cell) {
    const double v = d[cell * 3];
    if (v == 1.0) {
      ++ones;
      EXPECT_EQ(cell, 2u * 6 + 4);
    } else {
      EXPECT_EQ(v, 0.0);
    }
  }
  EXPECT_EQ(ones, 1u);
}

TEST(Downsample, RemainderGoesToLastBlock) {
  // 13 rows: blocks of 2, the last one holds rows 10..12.
  Tensor t({1, 13, 6, 3});
  for (std::size_t w = 0; w < 6; ++w) t[(12 * 6 + w) * 3] = 3.0;
  const Tensor d = downsample(FrameSequence{t, 30.0});
  EXPECT_NEAR(d[(5 * 6) * 3], 1.0, 1e-15);
  EXPECT_EQ(d[(4 * 6) * 3], 0.0);
}

TEST(Downsample, TooSmallFrameRejected) {
  EXPECT_THROW(downsample(FrameSequence{Tensor({1, 5, 8, 3}), 30.0}), DeidError);
}

TEST(Downsample, FrameByFrameEqualsBatch) {
  const auto v = random_video(4, 14, 11, 2);
  const Tensor batch = apply_permutation(downsample(v), make_permutation(9));
  for (std::size_t t = 0; t < 4; ++t) {
    Tensor one({1, 14, 11, 3});
    std::copy(&v.data[t * 14 * 11 * 3], &v.data[(t + 1) * 14 * 11 * 3], &one[0]);
    const Tensor single = apply_permutation(downsample(FrameSequence{one, 30.0}), make_permutation(9));
    for (std::size_t i = 0; i < 108; ++i) ASSERT_EQ(single[i], batch[t * 108 + i]);
  }
}

bool is_bijection(const Permutation& p) {
  std::set<std::size_t> s(p.begin(), p.end());
  return s.size() == kDeidCells && *s.rbegin() == kDeidCells - 1;
}

TEST(Permute, InverseRestoresOriginal) {
  const Tensor d = downsample(random_video(3, 12, 12, 3));
  const auto vd = permute(d, 77, 30.0);
  EXPECT_TRUE(is_bijection(vd.permutation));
  EXPECT_EQ(apply_permutation(vd.data, invert(vd.permutation)), d);
}

TEST(Permute, PerFrameMultisetAndMeanPreserved) {
  const Tensor d = downsample(random_video(5, 18, 18, 4));
  const auto vd = permute(d, 1234, 30.0);
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t c = 0; c < 3; ++c) {
      std::vector<double> a, b;
      for (std::size_t i = 0; i < 36; ++i) {
        a.push_back(d[(t * 36 + i) * 3 + c]);
        b.push_back(vd.data[(t * 36 + i) * 3 + c]);
      }
      double ma = 0, mb = 0;
      for (std::size_t i = 0; i < 36; ++i) {
        ma += a[i];
        mb += b[i];
      }
      EXPECT_NEAR(ma / 36, mb / 36, 1e-12);
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      EXPECT_EQ(a, b);
    }
}

TEST(Permute, SamePermutationForEveryFrame) {
  const Tensor d = downsample(random_video(6, 12, 12, 5));
  const auto vd = permute(d, 42, 30.0);
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t i = 0; i < 36; ++i)
      for (std::size_t c = 0; c < 3; ++c)
        ASSERT_EQ(vd.data[(t * 36 + i) * 3 + c], d[(t * 36 + vd.permutation[i]) * 3 + c]);
}

TEST(Permute, DistinctSeedsGiveDistinctPermutations) {
  for (std::uint64_t k = 0; k < 100; ++k) {
    const auto a = make_permutation(video_seed("videos/a" + std::to_string(k), k, 7));
    const auto b = make_permutation(video_seed("videos/b" + std::to_string(k), k, 7));
    EXPECT_TRUE(is_bijection(a));
    EXPECT_NE(a, b);
  }
  EXPECT_EQ(make_permutation(5), make_permutation(5));
}

DeidVideo video_from_cells(const Tensor& cells, double fps) {
  Permutation id;
  std::iota(id.begin(), id.end(), std::size_t{0});
  return DeidVideo{cells, id, 0, fps};
}

TEST(BuildStMap, ConstantVideoGivesConstantMap) {
  const auto m = build_st_map(video_from_cells(Tensor({60, 6, 6, 3}, 0.25), 30.0));
  EXPECT_EQ(m.data.shape(), (Shape{36, 60, 3}));
  for (double v : m.data.values()) EXPECT_EQ(v, 0.25);
}

TEST(BuildStMap, CellZeroCarriesSinusoid) {
  Tensor cells({300, 6, 6, 3}, 0.5);
  for (std::size_t t = 0; t < 300; ++t) cells[t * 108 + 1] = std::sin(0.2 * static_cast<double>(t));
  const auto m = build_st_map(video_from_cells(cells, 30.0));
  EXPECT_EQ(m.data.shape(), (Shape{36, 300, 3}));
  for (std::size_t t = 0; t < 300; ++t) EXPECT_EQ(m.data[t * 3 + 1], std::sin(0.2 * static_cast<double>(t)));
  EXPECT_EQ(m.rows(), 36u);
  EXPECT_EQ(m.length(), 300u);
}

TEST(BuildStMap, TooShortRejected) {
  EXPECT_THROW(build_st_map(video_from_cells(Tensor({59, 6, 6, 3}), 30.0)), DeidError);
}

TEST(NormalizeStMap, MeanFiveVarianceOne) {
  Tensor cells({60, 6, 6, 3}, 2.0);
  for (std::size_t t = 0; t < 60; ++t) cells[t * 108] = 5.0 + (t % 2 == 0 ? 1.0 : -1.0);
  const auto m = normalize_st_map(build_st_map(video_from_cells(cells, 30.0)));
  double mu = 0, var = 0;
  for (std::size_t t = 0; t < 60; ++t) mu += m.data[t * 3];
  mu /= 60;
  for (std::size_t t = 0; t < 60; ++t) var += (m.data[t * 3] - mu) * (m.data[t * 3] - mu);
  EXPECT_NEAR(mu, 0.0, 1e-12);
  EXPECT_NEAR(var / 60, 1.0, 1e-12);
  // Constant series become zeros.
  for (std::size_t t = 0; t < 60; ++t) EXPECT_EQ(m.data[(60 + t) * 3], 0.0);
}

TEST(NormalizeStMap, RandomInputRowMeansVanish) {
  Rng rng(11);
  Tensor cells({90, 6, 6, 3});
  for (auto& v : cells.values()) v = rng.uniform(0.2, 0.9);
  const auto m = normalize_st_map(build_st_map(video_from_cells(cells, 30.0)));
  for (std::size_t r = 0; r < 36; ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      double mu = 0;
      for (std::size_t t = 0; t < 90; ++t) mu += m.data[(r * 90 + t) * 3 + c];
      EXPECT_LT(std::abs(mu / 90), 1e-10);
    }
}

TEST(StMap, SliceAndResample) {
  Rng rng(12);
  Tensor cells({121, 6, 6, 3});
  for (auto& v : cells.values()) v = rng.uniform();
  const auto m = build_st_map(video_from_cells(cells, 60.0));
  const auto s = m.slice(10, 20);
  EXPECT_EQ(s.data.shape(), (Shape{36, 20, 3}));
  EXPECT_EQ(s.data[(5 * 20 + 3) * 3 + 2], m.data[(5 * 121 + 13) * 3 + 2]);
  EXPECT_THROW(m.slice(111, 20), DimensionError);
  const auto r = resample_st_map(m, 30.0);
  EXPECT_EQ(r.fps, 30.0);
  EXPECT_EQ(r.length(), 61u);
  EXPECT_EQ(r.data[(7 * 61 + 10) * 3 + 1], m.data[(7 * 121 + 20) * 3 + 1]);
}

TEST(DeidIo, RoundTripWithSidecar) {
  testing::TempDir dir;
  Rng rng(13);
  Tensor cells({4, 6, 6, 3});
  for (auto& v : cells.values()) v = static_cast<float>(rng.uniform());
  const auto vd = permute(cells, 99, 30.0);
  save_deid(dir / "v.deid", vd);
  EXPECT_TRUE(std::filesystem::exists(deid_sidecar_path(dir / "v.deid")));
  const auto back = load_deid(dir / "v.deid");
  EXPECT_EQ(back.data, vd.data);
  EXPECT_EQ(back.permutation, vd.permutation);
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.fps, 30.0);
  std::filesystem::remove(deid_sidecar_path(dir / "v.deid"));
  EXPECT_THROW(load_deid(dir / "v.deid"), MissingArtifact);
}

}  // namespace
}  // namespace rppgid
