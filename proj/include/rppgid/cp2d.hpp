#pragma once

#include <cstdint>
#include <vector>

#include "rppgid/deid.hpp"
#include "rppgid/dsp.hpp"
#include "rppgid/params.hpp"
#include "rppgid/tape.hpp"

namespace rppgid {

inline constexpr std::size_t kSpatialRows = 4;
inline constexpr std::size_t kPatchCount = 16;

// rPPG model G: conv2d 3->16->32->32 (3x3, tanh), row average pooling by 3
// after the first two blocks (36 -> 12 -> 4), then a 1x1 conv to one channel.
// Parameters live under "g/".
ParamStore init_model_g(std::uint64_t seed);

// [36 x T x 3] map -> [1 x 3 x 36 x T] network input.
Tensor st_map_input(const STMap& m);

// Returns the [4 x T] rPPG ST map. Frozen parameters enter the tape as constants.
Var forward_g(Tape& t, const ParamStore& g, Var input, bool trainable = true);
Tensor forward_g(const ParamStore& g, const STMap& m);

struct PatchSample {
  std::size_t row = 0;
  std::size_t start = 0;
  std::size_t length = 0;
  std::vector<double> values;
};

// n patches of length floor(T/2) (odd T drops its last sample), row and offset
// uniform from rng.
std::vector<PatchSample> sample_patch_positions(std::size_t rows, std::size_t T, std::size_t n, Rng& rng);
std::vector<PatchSample> sample_patches(const Tensor& mr, std::size_t n, std::uint64_t seed);

// Patch PSDs use a 2x zero-padded DFT so a 5 s patch has 0.1 Hz bins.
PsdBasis patch_basis(std::size_t length, double fs);
Psd patch_to_psd(const PatchSample& p, double fs);
Var patch_to_psd(Tape& t, Var patch, const PsdBasis& basis);
// [n x F] PSDs of the patches taken from mr [rows x T].
Var patch_psds(Tape& t, Var mr, const std::vector<PatchSample>& patches, const PsdBasis& basis);

// Pull same-video PSDs together and push cross-video PSDs apart:
// sum_{i!=j}(|f_i-f_j|^2 + |f'_i-f'_j|^2) / (2n(n-1)) - sum_{i,j}|f_i-f'_j|^2 / n^2.
Var contrastive_loss(Tape& t, Var f, Var f2);
double contrastive_loss(const Tensor& f, const Tensor& f2);

// Mean over the four output rows, band-passed.
RppgSignal extract_rppg(const ParamStore& g, const STMap& m);

struct Stage1Config {
  int epochs = 30;
  int steps_per_epoch = 8;
  double lr = 1e-3;
  double window_s = 10.0;
  std::size_t n_patches = kPatchCount;
  std::uint64_t seed = 0;
};

struct Stage1LogEntry {
  int epoch = 0;
  double loss = 0.0;  // mean training loss of the epoch (0 for the initial entry)
  double val_ipr = 0.0;
};

struct Stage1Result {
  ParamStore params;
  int best_epoch = 0;
  double best_val_ipr = 0.0;
  std::vector<Stage1LogEntry> log;
  std::vector<double> step_losses;
};

// Mean IPR of extracted rPPG over non-overlapping windows of each map.
double mean_ipr(const ParamStore& g, const std::vector<STMap>& maps, double window_s);

// Trains on unlabeled normalized ST maps only. Epoch 0 is the initialization.
Stage1Result train_stage1(const std::vector<STMap>& train, const std::vector<STMap>& val,
                          const Stage1Config& cfg);

// The contrastive loss is blind to sign; flips G's output when its rPPG
// anti-correlates with the POS baseline on the given maps. Returns true if flipped.
bool align_polarity(ParamStore& g, const std::vector<STMap>& inputs, const std::vector<STMap>& raw);

}  // namespace rppgid
