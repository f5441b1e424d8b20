#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "roc_oracle.hpp"
#include "rppgid/error.hpp"
#include "rppgid/eval.hpp"
#include "rppgid/rng.hpp"

namespace rppgid {
namespace {

TEST(RocEerAuc, PerfectSeparation) {
  const auto r = roc_eer_auc({0.9, 0.8}, {0.1, 0.2});
  EXPECT_EQ(r.eer, 0.0);
  EXPECT_EQ(r.auc, 1.0);
}

TEST(RocEerAuc, IdenticalMultisetsGiveHalf) {
  const auto r = roc_eer_auc({0.3, 0.5, 0.7, 0.5}, {0.5, 0.7, 0.3, 0.5});
  EXPECT_DOUBLE_EQ(r.auc, 0.5);
  EXPECT_NEAR(r.eer, 0.5, 1e-12);
}

TEST(RocEerAuc, HandCase) {
  const auto r = roc_eer_auc({0.9, 0.2}, {0.8, 0.1});
  EXPECT_DOUBLE_EQ(r.auc, 0.75);
  EXPECT_NEAR(r.eer, 0.5, 1e-12);
}

TEST(RocEerAuc, EmptySideIsError) {
  EXPECT_THROW(roc_eer_auc({}, {0.1}), EvalError);
  EXPECT_THROW(roc_eer_auc({0.1}, {}), EvalError);
}

TEST(RocEerAuc, MatchesBruteForceOnRandomSets) {
  Rng rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t np = 1 + rng.index(30), nn = 1 + rng.index(30);
    const bool coarse = trial % 3 == 0;  // many ties
    auto draw = [&](double shift) {
      const double v = rng.normal() + shift;
      return coarse ? std::round(v * 2.0) / 2.0 : v;
    };
    std::vector<double> pos(np), neg(nn);
    for (auto& v : pos) v = draw(0.8);
    for (auto& v : neg) v = draw(0.0);
    const auto got = roc_eer_auc(pos, neg);
    const auto want = testing::brute_force_roc(pos, neg);
    ASSERT_EQ(got.auc, want.auc) << trial;
    ASSERT_NEAR(got.eer, want.eer, 1e-9) << trial;
  }
}

TEST(RocEerAuc, MonotoneTransformAndSymmetry) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> pos(12), neg(17);
    for (auto& v : pos) v = rng.normal() + 0.5;
    for (auto& v : neg) v = rng.normal();
    auto f = [](std::vector<double> v) {
      for (auto& x : v) x = std::exp(3.0 * x) + 1.0;
      return v;
    };
    auto negate = [](std::vector<double> v) {
      for (auto& x : v) x = -x;
      return v;
    };
    const auto base = roc_eer_auc(pos, neg);
    EXPECT_NEAR(roc_eer_auc(f(pos), f(neg)).auc, base.auc, 1e-15);
    EXPECT_NEAR(roc_eer_auc(negate(neg), negate(pos)).eer, base.eer, 1e-12);
  }
}

TEST(PerSubjectEval, PerfectAndUniformScores) {
  std::vector<ScoreRow> perfect, uniform;
  for (int s = 0; s < 3; ++s)
    for (std::size_t w = 0; w < 4; ++w) {
      std::vector<double> one_hot(3, 0.0);
      one_hot[static_cast<std::size_t>(s)] = 1.0;
      perfect.push_back({s, one_hot, "1", w});
      uniform.push_back({s, std::vector<double>(3, 1.0 / 3.0), "1", w});
    }
  const auto p = per_subject_eval(perfect, 3);
  EXPECT_EQ(p.mean_eer, 0.0);
  EXPECT_EQ(p.mean_auc, 1.0);
  const auto u = per_subject_eval(uniform, 3);
  for (const auto& s : u.per_subject) EXPECT_DOUBLE_EQ(s.auc, 0.5);
}

TEST(PerSubjectEval, HandTableMatchesBruteForce) {
  const std::vector<ScoreRow> rows{
      {0, {0.6, 0.3, 0.1}, "1", 0}, {0, {0.4, 0.4, 0.2}, "1", 1}, {1, {0.5, 0.3, 0.2}, "1", 0},
      {1, {0.2, 0.7, 0.1}, "1", 1}, {2, {0.1, 0.2, 0.7}, "1", 0}, {2, {0.3, 0.3, 0.4}, "1", 1},
  };
  const auto rep = per_subject_eval(rows, 3);
  ASSERT_EQ(rep.per_subject.size(), 3u);
  double mean_eer = 0, mean_auc = 0;
  for (int s = 0; s < 3; ++s) {
    std::vector<double> pos, neg;
    for (const auto& r : rows) (r.true_subject == s ? pos : neg).push_back(r.scores[static_cast<std::size_t>(s)]);
    const auto want = testing::brute_force_roc(pos, neg);
    EXPECT_NEAR(rep.per_subject[static_cast<std::size_t>(s)].eer, want.eer, 1e-12);
    EXPECT_DOUBLE_EQ(rep.per_subject[static_cast<std::size_t>(s)].auc, want.auc);
    mean_eer += want.eer / 3;
    mean_auc += want.auc / 3;
  }
  EXPECT_NEAR(rep.mean_eer, mean_eer, 1e-12);
  EXPECT_NEAR(rep.mean_auc, mean_auc, 1e-12);
}

TEST(PerSubjectEval, SubjectWithoutWindowsIsSkipped) {
  const std::vector<ScoreRow> rows{{0, {0.9, 0.1, 0.0}, "1", 0}, {1, {0.2, 0.8, 0.0}, "1", 0}};
  const auto rep = per_subject_eval(rows, 3);
  ASSERT_EQ(rep.skipped.size(), 1u);
  EXPECT_EQ(rep.skipped[0], 2);
  EXPECT_EQ(rep.per_subject.size(), 2u);
  EXPECT_THROW(per_subject_eval({{0, {1.0}, "1", 0}}, 3), EvalError);
}

Tensor rows_of(const std::vector<std::vector<double>>& r) {
  Tensor t({r.size(), r[0].size()});
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < r[0].size(); ++j) t.at(i, j) = r[i][j];
  return t;
}

TEST(MorphologyReport, IdentityAndNegation) {
  const Tensor a = rows_of({{1, 3, 2, 5}, {0, 2, 2, 4}});
  const Tensor neg = rows_of({{-1, -3, -2, -5}, {0, -2, -2, -4}});
  const auto same = morphology_report({{0, a}}, {{0, a}});
  EXPECT_NEAR(same.pearson.at(0), 1.0, 1e-12);
  EXPECT_NEAR(same.mean, 1.0, 1e-12);
  const auto flipped = morphology_report({{0, a}}, {{0, neg}});
  EXPECT_NEAR(flipped.pearson.at(0), -1.0, 1e-12);
}

TEST(MorphologyReport, EmptyBatchIsSkipped) {
  const Tensor a = rows_of({{1, 3, 2, 5}});
  const auto rep = morphology_report({{0, a}, {1, a}}, {{0, a}});
  ASSERT_EQ(rep.skipped.size(), 1u);
  EXPECT_EQ(rep.skipped[0], 1);
  EXPECT_EQ(rep.pearson.size(), 1u);
}

Manifest two_subject_manifest(bool second_session) {
  Manifest m;
  auto add = [&](const std::string& path, int subj, const std::string& sess) {
    ManifestRecord r;
    r.video_path = path;
    r.subject_id = subj;
    r.session_tag = sess;
    r.fps = 30;
    m.records.push_back(r);
  };
  add("a1", 0, "1");
  add("b1", 1, "1");
  if (second_session) add("a2", 0, "2");
  return m;
}

TEST(SplitDataset, ThreeHundredSecondVideo) {
  const auto parts = split_video(0, 300.0, 10.0);
  ASSERT_EQ(parts.size(), 3u);
  EXPECT_EQ(parts[0].split, Split::Train);
  EXPECT_EQ(parts[0].span.start_s, 0.0);
  EXPECT_EQ(parts[0].span.end_s, 180.0);
  EXPECT_EQ(parts[1].span.start_s, 180.0);
  EXPECT_EQ(parts[1].span.end_s, 240.0);
  EXPECT_EQ(parts[2].split, Split::TestIntra);
  EXPECT_EQ(parts[2].span.end_s, 300.0);
}

TEST(SplitDataset, BoundariesFloorToWholeSeconds) {
  const auto parts = split_video(0, 123.7, 10.0);
  EXPECT_EQ(parts[0].span.end_s, 74.0);
  EXPECT_EQ(parts[1].span.end_s, 98.0);
  EXPECT_EQ(parts[2].span.end_s, 123.7);
  EXPECT_EQ(std::floor(parts[1].span.start_s), parts[1].span.start_s);
}

TEST(SplitDataset, SessionsAndCoverage) {
  const auto without = split_dataset(two_subject_manifest(false), {120.0, 120.0}, 10.0);
  for (const auto& s : without) EXPECT_NE(s.split, Split::TestCross);
  EXPECT_EQ(without.size(), 6u);
  const auto with = split_dataset(two_subject_manifest(true), {120.0, 120.0, 90.0}, 10.0);
  ASSERT_EQ(with.size(), 7u);
  EXPECT_EQ(with.back().split, Split::TestCross);
  EXPECT_EQ(with.back().record, 2u);
  EXPECT_EQ(with.back().span.end_s, 90.0);
  // Session-1 parts tile each video exactly once.
  for (std::size_t rec = 0; rec < 2; ++rec) {
    double covered = 0.0, cursor = 0.0;
    for (const auto& s : with)
      if (s.record == rec) {
        EXPECT_EQ(s.span.start_s, cursor);
        cursor = s.span.end_s;
        covered += s.span.length();
      }
    EXPECT_EQ(covered, 120.0);
  }
}

TEST(SplitDataset, ShortVideoIsError) {
  EXPECT_THROW(split_dataset(two_subject_manifest(false), {49.0, 120.0}, 10.0), EvalError);
}

}  // namespace
}  // namespace rppgid
