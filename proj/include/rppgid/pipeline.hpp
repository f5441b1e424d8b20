#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rppgid/cp2d.hpp"
#include "rppgid/deid.hpp"
#include "rppgid/eval.hpp"
#include "rppgid/ingest.hpp"
#include "rppgid/morph.hpp"

namespace rppgid {

// Every model-facing signal runs at this rate.
inline constexpr double kCanonicalFs = 30.0;

// Runs fn(0..n-1) on up to `threads` workers; results must be written by index.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

// Crops, downsamples and permutes every video of a raw manifest, copies cPPG
// files, and writes out_dir/manifest.json (de-identified). Returns it loaded back.
Manifest deidentify_dataset(const Manifest& raw, const std::filesystem::path& out_dir, std::uint64_t seed,
                            unsigned threads = 1);

// ST map of one de-identified record resampled to the canonical rate.
STMap load_st_map(const Manifest& deid, std::size_t record);

// A split portion of one video. `input` is normalized over the portion itself.
struct Portion {
  std::size_t record = 0;
  int subject = 0;
  std::string session;
  Split split = Split::Train;
  Interval span;
  STMap raw;
  STMap input;
  std::optional<RppgSignal> cppg;  // ground truth at the canonical rate, unfiltered
};

std::vector<Portion> load_portions(const Manifest& deid, double window_s, unsigned threads = 1);
std::vector<const Portion*> select(const std::vector<Portion>& portions, Split split);

// Inputs only; the label-free view handed to stage 1.
std::vector<STMap> stage1_inputs(const std::vector<Portion>& portions, Split split);
std::vector<STMap> stage1_raw(const std::vector<Portion>& portions, Split split);

std::vector<LabeledTrace> load_external_cppg(const std::filesystem::path& path);
Stage2Data stage2_data(const std::vector<Portion>& portions, int n_rppg, const std::vector<LabeledTrace>& external);

// Peak-to-peak segments of a band-passed ground-truth trace.
SegmentBatch cppg_segments(const RppgSignal& cppg);

struct WindowReport {
  std::size_t window_beats = 0;
  EvalReport intra;
  EvalReport cross;
};

struct EvaluationResult {
  std::vector<ScoreRow> rows;  // session holds the split name; one set per window length
  std::vector<std::size_t> row_window_beats;
  std::vector<WindowReport> windows;
  MorphologyReport morphology;
  std::map<int, std::vector<double>> rppg_templates;
  std::map<int, std::vector<double>> cppg_templates;
  std::vector<std::string> notes;  // portions skipped for too few beats
};

// Scores every test portion at each window length and compares mean
// test-intra segments against the ground-truth cPPG.
EvaluationResult evaluate(const MorphModel& m, const std::vector<Portion>& portions,
                          const std::vector<std::size_t>& window_beats, unsigned threads = 1);

// Mean-template morphology of the stage-1 extraction on the test-intra portions.
MorphologyReport stage1_morphology(const ParamStore& g, const std::vector<Portion>& portions);

}  // namespace rppgid
