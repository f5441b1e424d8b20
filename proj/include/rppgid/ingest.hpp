#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rppgid/tensor.hpp"

namespace rppgid {

// Video tensor [T x H x W x 3] with values in [0, 1].
struct FrameSequence {
  Tensor data;
  double fps = 30.0;

  std::size_t frames() const { return data.dim(0); }
  std::size_t height() const { return data.dim(1); }
  std::size_t width() const { return data.dim(2); }
};

using Point = std::array<double, 2>;  // (x, y) in pixels

// Boundary landmarks, either one set per frame or a single static set.
struct LandmarkSet {
  std::vector<std::vector<Point>> frames;
};

struct CppgTrace {
  std::vector<double> samples;
  double fs = 0.0;
  int subject_id = 0;

  double duration() const { return static_cast<double>(samples.size()) / fs; }
};

struct ManifestRecord {
  std::string video_path;
  int subject_id = 0;         // dense 0..N-1 after loading
  int source_subject_id = 0;  // as written in the file
  std::string session_tag;
  double fps = 0.0;
  std::optional<std::string> landmarks_path;
  std::optional<std::string> cppg_path;
  std::optional<double> cppg_fs;
};

struct Manifest {
  std::vector<ManifestRecord> records;
  std::filesystem::path base_dir;  // relative paths resolve against this
  bool deidentified = false;        // records point at de-identified tensors

  int subject_count() const;
  std::filesystem::path resolve(const std::string& p) const;
};

// Session tag of enrollment videos; every other session is cross-session test data.
inline constexpr const char* kEnrollSession = "1";

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

// Raw frame file: "RPPG", u32 version=1, u32 T, H, W, C, then f32 LE row-major.
inline constexpr std::uint32_t kFrameFormatVersion = 1;
FrameSequence load_frames(const std::filesystem::path& path, double fps);
Tensor load_raw_tensor(const std::filesystem::path& path);
void save_raw_tensor(const std::filesystem::path& path, const Tensor& data);

LandmarkSet load_landmarks(const std::filesystem::path& path);

// Static crop: union bounding box of all landmarks, padded 10% per side and
// clamped to the frame; the same box is cut from every frame.
FrameSequence crop_face(const FrameSequence& v, const LandmarkSet& lm);

// Single-column CSV of samples.
CppgTrace load_cppg(const std::filesystem::path& path, double fs, int subject_id);
void save_cppg(const std::filesystem::path& path, const CppgTrace& trace);

// External cPPG identity set: JSON array of {cppg_path, subject_id, fs};
// subject ids are relabeled densely.
std::vector<CppgTrace> load_cppg_set(const std::filesystem::path& path, double target_fs);

// Linear interpolation onto a uniform fs_out grid covering the same duration.
std::vector<double> resample(std::span<const double> x, double fs_in, double fs_out);

}  // namespace rppgid
