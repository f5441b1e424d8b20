#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rppgid/cp2d.hpp"
#include "rppgid/dsp.hpp"
#include "rppgid/params.hpp"
#include "rppgid/tape.hpp"

namespace rppgid {

inline constexpr std::size_t kFeatureDim = 64;
inline constexpr std::size_t kTokenDim = 32;
inline constexpr std::size_t kTokens = 22;  // 90 -> 45 -> 22 after two /2 poolings
inline constexpr std::size_t kHeads = 2;
inline constexpr std::size_t kEncoderLayers = 2;

// PPG-Morph model H under "h/": conv1d 1->16->32 (k5, ReLU, maxpool /2), a
// learned positional embedding, two post-norm encoder layers, token mean-pool
// and a dense 32->64 feature.
ParamStore init_model_h(std::uint64_t seed);
// Classification head (dense 64->n + softmax) under `prefix`, e.g. "hr/" or "hc/".
ParamStore init_head(const std::string& prefix, std::size_t n_classes, std::uint64_t seed);

Var forward_h(Tape& t, const ParamStore& h, Var segments, bool trainable = true);
Tensor forward_h(const ParamStore& h, const Tensor& segments);
Var forward_head(Tape& t, const ParamStore& head, const std::string& prefix, Var features, bool trainable = true);

// -(1/K) sum_k log(max(y[k, label], 1e-12)).
Var ce_loss(Tape& t, Var probs, std::size_t label);
double ce_loss(const Tensor& probs, std::size_t label);

// The four parameter groups of the combined stage-2 checkpoint.
struct MorphModel {
  ParamStore g, h, hr, hc;

  ParamStore merged() const;
  static MorphModel split(const ParamStore& all);
  std::size_t n_rppg() const;
  std::size_t n_cppg() const;
  std::array<std::uint64_t, 4> fingerprints() const;
};

struct LabeledMap {
  STMap input;  // normalized ST map
  int label = 0;
};

struct LabeledTrace {
  RppgSignal signal;  // at the pipeline rate
  int label = 0;
};

struct Stage2Data {
  std::vector<LabeledMap> train;
  std::vector<LabeledMap> val;
  int n_rppg = 0;
  std::vector<LabeledTrace> cppg;
  int n_cppg = 0;
};

struct Stage2Config {
  int steps = 300;  // alternation units
  double lr = 1e-3;
  double window_s = 10.0;
  std::size_t batch = 4;  // windows per mini-step, each from a different video / cPPG identity
  int eval_every = 50;
  std::size_t val_window_beats = 5;
  bool hybrid = true;
  bool audit = false;  // record parameter fingerprints around every mini-step
  std::uint64_t seed = 0;
};

struct Stage2LogEntry {
  int step = 0;
  std::string branch;  // "rppg", "cppg" or "val"
  double loss = 0.0;
  double val_eer = 0.0;
  bool skipped = false;
  std::string note;
};

struct UpdateAudit {
  int step = 0;
  std::string branch;
  std::array<std::uint64_t, 4> before{};  // g, h, hr, hc
  std::array<std::uint64_t, 4> after{};
};

struct Stage2Result {
  MorphModel model;
  int best_step = 0;
  double best_val_eer = 0.0;
  double best_val_loss = 0.0;
  std::vector<Stage2LogEntry> log;
  std::vector<UpdateAudit> audit;
};

// One rPPG mini-step (updates g, h, hr) then, in hybrid mode, one cPPG
// mini-step (updates h, hc) per alternation unit. A mini-step averages the
// cross-entropy of `batch` windows.
Stage2Result train_stage2(const Stage2Data& data, const ParamStore& g_checkpoint, const Stage2Config& cfg);

// Per-segment class probabilities [K x N_rppg] for a normalized ST map.
struct SegmentScores {
  RppgSignal rppg;
  SegmentBatch segments;
  Tensor probs;
};
SegmentScores score_segments(const MorphModel& m, const STMap& input);

// Averages consecutive non-overlapping groups of `window_beats` rows; a trailing
// partial group is dropped.
std::vector<std::vector<double>> window_scores(const Tensor& probs, std::size_t window_beats);

std::vector<std::vector<double>> authenticate(const MorphModel& m, const STMap& input, std::size_t window_beats);

}  // namespace rppgid
