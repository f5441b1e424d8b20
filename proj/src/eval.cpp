#include "rppgid/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "rppgid/dsp.hpp"
#include "rppgid/error.hpp"

namespace rppgid {

RocResult roc_eer_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  if (pos.empty() || neg.empty()) throw EvalError("roc needs at least one positive and one negative score");
  const double np = static_cast<double>(pos.size()), nn = static_cast<double>(neg.size());

  struct Entry {
    double score;
    bool positive;
  };
  std::vector<Entry> all;
  all.reserve(pos.size() + neg.size());
  for (double s : pos) all.push_back({s, true});
  for (double s : neg) all.push_back({s, false});
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score > b.score; });

  RocResult r;
  double auc_pairs = 0.0;  // pairs with pos > neg, ties counted 1/2
  double tp = 0.0, fp = 0.0;
  double prev_fpr = 0.0, prev_fnr = 1.0;
  bool found = false;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    double tie_pos = 0.0, tie_neg = 0.0;
    while (j < all.size() && all[j].score == all[i].score) {
      (all[j].positive ? tie_pos : tie_neg) += 1.0;
      ++j;
    }
    // Positives in this group beat every negative scored strictly lower.
    auc_pairs += tie_pos * (nn - fp - tie_neg) + 0.5 * tie_pos * tie_neg;
    tp += tie_pos;
    fp += tie_neg;
    const double fpr = fp / nn, fnr = 1.0 - tp / np;
    if (!found && fpr - fnr >= 0.0) {
      const double d0 = prev_fpr - prev_fnr, d1 = fpr - fnr;
      const double u = d1 == d0 ? 0.0 : -d0 / (d1 - d0);
      r.eer = prev_fpr + u * (fpr - prev_fpr);
      found = true;
    }
    prev_fpr = fpr;
    prev_fnr = fnr;
    i = j;
  }
  r.auc = auc_pairs / (np * nn);
  return r;
}

EvalReport per_subject_eval(const std::vector<ScoreRow>& rows, int n_subjects) {
  EvalReport rep;
  for (const auto& row : rows) {
    if (static_cast<int>(row.scores.size()) != n_subjects) {
      throw EvalError("score row has " + std::to_string(row.scores.size()) + " entries for " +
                      std::to_string(n_subjects) + " subjects");
    }
  }
  for (int s = 0; s < n_subjects; ++s) {
    std::vector<double> pos, neg;
    for (const auto& row : rows) (row.true_subject == s ? pos : neg).push_back(row.scores[static_cast<std::size_t>(s)]);
    if (pos.empty() || neg.empty()) {
      rep.skipped.push_back(s);
      continue;
    }
    const auto r = roc_eer_auc(pos, neg);
    rep.per_subject.push_back({s, r.eer, r.auc, pos.size(), neg.size()});
  }
  if (!rep.per_subject.empty()) {
    for (const auto& s : rep.per_subject) {
      rep.mean_eer += s.eer;
      rep.mean_auc += s.auc;
    }
    rep.mean_eer /= static_cast<double>(rep.per_subject.size());
    rep.mean_auc /= static_cast<double>(rep.per_subject.size());
  } else {
    rep.mean_eer = rep.mean_auc = std::nan("");
  }
  return rep;
}

MorphologyReport morphology_report(const std::map<int, Tensor>& rppg_segments,
                                   const std::map<int, Tensor>& cppg_segments) {
  MorphologyReport rep;
  std::set<int> subjects;
  for (const auto& [s, _] : rppg_segments) subjects.insert(s);
  for (const auto& [s, _] : cppg_segments) subjects.insert(s);
  for (int s : subjects) {
    const auto a = rppg_segments.find(s);
    const auto b = cppg_segments.find(s);
    const auto empty = [](const Tensor& t) { return t.rank() != 2 || t.dim(0) == 0; };
    if (a == rppg_segments.end() || b == cppg_segments.end() || empty(a->second) || empty(b->second)) {
      rep.skipped.push_back(s);
      continue;
    }
    rep.pearson[s] = pearson(mean_segment(a->second), mean_segment(b->second));
  }
  if (!rep.pearson.empty()) {
    for (const auto& [_, r] : rep.pearson) rep.mean += r;
    rep.mean /= static_cast<double>(rep.pearson.size());
  } else {
    rep.mean = std::nan("");
  }
  return rep;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::TestIntra:
      return "test-intra";
    case Split::TestCross:
      return "test-cross";
  }
  return "?";
}

std::vector<VideoSplit> split_video(std::size_t record, double duration_s, double window_s) {
  if (duration_s < 5.0 * window_s) {
    throw EvalError("split error: video of " + std::to_string(duration_s) + " s is shorter than 5 windows of " +
                    std::to_string(window_s) + " s");
  }
  const double train_end = std::floor(0.6 * duration_s + 1e-9);
  const double val_end = std::floor(0.8 * duration_s + 1e-9);
  return {{record, Split::Train, {0.0, train_end}},
          {record, Split::Val, {train_end, val_end}},
          {record, Split::TestIntra, {val_end, duration_s}}};
}

std::vector<VideoSplit> split_dataset(const Manifest& manifest, const std::vector<double>& durations_s,
                                      double window_s) {
  if (durations_s.size() != manifest.records.size()) throw ContractError("one duration per manifest record");
  std::vector<VideoSplit> out;
  std::set<int> enrolled;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    if (manifest.records[i].session_tag == kEnrollSession) {
      auto parts = split_video(i, durations_s[i], window_s);
      out.insert(out.end(), parts.begin(), parts.end());
      enrolled.insert(manifest.records[i].subject_id);
    } else {
      out.push_back({i, Split::TestCross, {0.0, durations_s[i]}});
    }
  }
  for (const auto& r : manifest.records) {
    if (!enrolled.count(r.subject_id)) {
      throw EvalError("subject " + std::to_string(r.source_subject_id) + " has no session-1 video");
    }
  }
  return out;
}

}  // namespace rppgid
