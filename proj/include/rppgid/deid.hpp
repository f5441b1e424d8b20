#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "rppgid/ingest.hpp"
#include "rppgid/tensor.hpp"

namespace rppgid {

inline constexpr std::size_t kDeidGrid = 6;
inline constexpr std::size_t kDeidCells = kDeidGrid * kDeidGrid;

using Permutation = std::array<std::size_t, kDeidCells>;

// [T x 6 x 6 x 3] video whose cells were shuffled by `permutation`: output
// cell i holds input cell permutation[i], identically in every frame.
struct DeidVideo {
  Tensor data;
  Permutation permutation{};
  std::uint64_t seed = 0;
  double fps = 30.0;
};

// [36 x T x 3]: row r is the colour time series of de-identified cell r.
struct STMap {
  Tensor data;
  double fps = 30.0;

  std::size_t rows() const { return data.dim(0); }
  std::size_t length() const { return data.dim(1); }
  // Columns [start, start + len).
  STMap slice(std::size_t start, std::size_t len) const;
};

// Block means over a 6x6 grid; the last block on each axis takes the remainder.
Tensor downsample(const FrameSequence& v);

// Seeded Fisher-Yates shuffle of the 36 cells.
Permutation make_permutation(std::uint64_t video_seed);
Permutation invert(const Permutation& p);
DeidVideo permute(const Tensor& downsampled, std::uint64_t video_seed, double fps);
Tensor apply_permutation(const Tensor& downsampled, const Permutation& p);

STMap build_st_map(const DeidVideo& vd);
// Per (row, channel) z-score over time; zero-variance series become zeros.
STMap normalize_st_map(const STMap& m);
// Linear time resampling of every (row, channel) series.
STMap resample_st_map(const STMap& m, double fps_out);

// Seed for a manifest record: FNV-1a of the stored video path and record index.
std::uint64_t video_seed(const std::string& video_path, std::size_t record_index, std::uint64_t global_seed);

// Raw tensor file plus sidecar JSON {permutation, seed, fps}.
void save_deid(const std::filesystem::path& tensor_path, const DeidVideo& vd);
DeidVideo load_deid(const std::filesystem::path& tensor_path);
std::filesystem::path deid_sidecar_path(const std::filesystem::path& tensor_path);

}  // namespace rppgid
