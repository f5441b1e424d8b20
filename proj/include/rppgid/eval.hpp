#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rppgid/ingest.hpp"
#include "rppgid/tensor.hpp"

namespace rppgid {

struct RocResult {
  double eer = 0.0;
  double auc = 0.0;
};

// AUC from the rank statistic (ties count one half); EER where FPR = FNR on the
// piecewise-linear ROC through every distinct threshold.
RocResult roc_eer_auc(const std::vector<double>& pos, const std::vector<double>& neg);

struct ScoreRow {
  int true_subject = 0;
  std::vector<double> scores;
  std::string session;
  std::size_t window_index = 0;
};

struct SubjectResult {
  int subject = 0;
  double eer = 0.0;
  double auc = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

struct EvalReport {
  std::vector<SubjectResult> per_subject;
  std::vector<int> skipped;
  double mean_eer = 0.0;
  double mean_auc = 0.0;
};

// One-vs-rest over subjects 0..n_subjects-1, macro-averaged.
EvalReport per_subject_eval(const std::vector<ScoreRow>& rows, int n_subjects);

struct MorphologyReport {
  std::map<int, double> pearson;
  std::vector<int> skipped;
  double mean = 0.0;
};

// Pearson between the mean rPPG segment and the mean cPPG segment per subject.
MorphologyReport morphology_report(const std::map<int, Tensor>& rppg_segments,
                                   const std::map<int, Tensor>& cppg_segments);

enum class Split { Train, Val, TestIntra, TestCross };
const char* split_name(Split s);

struct Interval {
  double start_s = 0.0;
  double end_s = 0.0;
  double length() const { return end_s - start_s; }
};

struct VideoSplit {
  std::size_t record = 0;
  Split split = Split::Train;
  Interval span;
};

// Temporal 60/20/20 split of a session-1 video; boundaries floored to whole seconds.
std::vector<VideoSplit> split_video(std::size_t record, double duration_s, double window_s);

// Session-1 ("1") videos are split temporally; every other session goes whole to
// test-cross. durations_s is indexed like manifest.records.
std::vector<VideoSplit> split_dataset(const Manifest& manifest, const std::vector<double>& durations_s,
                                      double window_s);

}  // namespace rppgid
