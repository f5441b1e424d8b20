#include "rppgid/deid.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "rppgid/error.hpp"
#include "rppgid/rng.hpp"

namespace rppgid {

STMap STMap::slice(std::size_t start, std::size_t len) const {
  const std::size_t R = rows(), T = length();
  if (start + len > T) throw DimensionError("ST map slice outside " + std::to_string(T) + " frames");
  Tensor out({R, len, 3});
  for (std::size_t r = 0; r < R; ++r)
    std::copy(&data[(r * T + start) * 3], &data[(r * T + start + len) * 3], &out[r * len * 3]);
  return STMap{std::move(out), fps};
}

Tensor downsample(const FrameSequence& v) {
  const std::size_t T = v.frames(), H = v.height(), W = v.width();
  if (H < kDeidGrid || W < kDeidGrid) {
    throw DeidError("frame " + std::to_string(H) + "x" + std::to_string(W) + " is smaller than the 6x6 grid");
  }
  const std::size_t bh = H / kDeidGrid, bw = W / kDeidGrid;
  auto cell_of = [](std::size_t i, std::size_t block) { return std::min(i / block, kDeidGrid - 1); };
  std::array<double, kDeidCells> counts{};
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < W; ++w) counts[cell_of(h, bh) * kDeidGrid + cell_of(w, bw)] += 1.0;

  Tensor out({T, kDeidGrid, kDeidGrid, 3});
  for (std::size_t t = 0; t < T; ++t) {
    double* cell = &out[t * kDeidCells * 3];
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t ch = cell_of(h, bh);
      const double* px = &v.data[((t * H + h) * W) * 3];
      for (std::size_t w = 0; w < W; ++w) {
        double* dst = cell + (ch * kDeidGrid + cell_of(w, bw)) * 3;
        dst[0] += px[w * 3];
        dst[1] += px[w * 3 + 1];
        dst[2] += px[w * 3 + 2];
      }
    }
    for (std::size_t c = 0; c < kDeidCells; ++c)
      for (std::size_t k = 0; k < 3; ++k) cell[c * 3 + k] /= counts[c];
  }
  return out;
}

Permutation make_permutation(std::uint64_t video_seed) {
  Permutation p;
  std::iota(p.begin(), p.end(), std::size_t{0});
  Rng rng(video_seed);
  for (std::size_t i = kDeidCells - 1; i > 0; --i) std::swap(p[i], p[rng.index(i + 1)]);
  return p;
}

Permutation invert(const Permutation& p) {
  Permutation inv{};
  for (std::size_t i = 0; i < kDeidCells; ++i) inv[p[i]] = i;
  return inv;
}

Tensor apply_permutation(const Tensor& downsampled, const Permutation& p) {
  if (downsampled.rank() != 4 || downsampled.dim(1) != kDeidGrid || downsampled.dim(2) != kDeidGrid ||
      downsampled.dim(3) != 3) {
    throw DeidError("expected [T x 6 x 6 x 3], got " + shape_str(downsampled.shape()));
  }
  const std::size_t T = downsampled.dim(0);
  Tensor out(downsampled.shape());
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < kDeidCells; ++i)
      for (std::size_t k = 0; k < 3; ++k) out[(t * kDeidCells + i) * 3 + k] = downsampled[(t * kDeidCells + p[i]) * 3 + k];
  return out;
}

DeidVideo permute(const Tensor& downsampled, std::uint64_t video_seed, double fps) {
  DeidVideo vd;
  vd.permutation = make_permutation(video_seed);
  vd.data = apply_permutation(downsampled, vd.permutation);
  vd.seed = video_seed;
  vd.fps = fps;
  return vd;
}

STMap build_st_map(const DeidVideo& vd) {
  const std::size_t T = vd.data.dim(0);
  if (static_cast<double>(T) < 2.0 * vd.fps) {
    throw DeidError("video of " + std::to_string(T) + " frames is shorter than 2 s");
  }
  Tensor m({kDeidCells, T, 3});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t r = 0; r < kDeidCells; ++r)
      for (std::size_t k = 0; k < 3; ++k) m[(r * T + t) * 3 + k] = vd.data[(t * kDeidCells + r) * 3 + k];
  return STMap{std::move(m), vd.fps};
}

STMap normalize_st_map(const STMap& m) {
  const std::size_t R = m.rows(), T = m.length();
  STMap out{Tensor(m.data.shape()), m.fps};
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t k = 0; k < 3; ++k) {
      double mu = 0.0;
      for (std::size_t t = 0; t < T; ++t) mu += m.data[(r * T + t) * 3 + k];
      mu /= static_cast<double>(T);
      double var = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        const double d = m.data[(r * T + t) * 3 + k] - mu;
        var += d * d;
      }
      var /= static_cast<double>(T);
      if (var <= 1e-20 * (1.0 + mu * mu)) continue;
      const double is = 1.0 / std::sqrt(var);
      for (std::size_t t = 0; t < T; ++t) out.data[(r * T + t) * 3 + k] = (m.data[(r * T + t) * 3 + k] - mu) * is;
    }
  return out;
}

STMap resample_st_map(const STMap& m, double fps_out) {
  if (fps_out == m.fps) return m;
  const std::size_t R = m.rows(), T = m.length();
  std::vector<double> series(T);
  Tensor out;
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t k = 0; k < 3; ++k) {
      for (std::size_t t = 0; t < T; ++t) series[t] = m.data[(r * T + t) * 3 + k];
      const auto y = resample(series, m.fps, fps_out);
      if (out.size() == 0) out = Tensor({R, y.size(), 3});
      for (std::size_t t = 0; t < y.size(); ++t) out[(r * y.size() + t) * 3 + k] = y[t];
    }
  return STMap{std::move(out), fps_out};
}

std::uint64_t video_seed(const std::string& video_path, std::size_t record_index, std::uint64_t global_seed) {
  return mix_seed(fnv1a(video_path + "#" + std::to_string(record_index)), global_seed);
}

std::filesystem::path deid_sidecar_path(const std::filesystem::path& tensor_path) {
  auto p = tensor_path;
  p += ".json";
  return p;
}

void save_deid(const std::filesystem::path& tensor_path, const DeidVideo& vd) {
  save_raw_tensor(tensor_path, vd.data);
  nlohmann::json side{{"permutation", vd.permutation}, {"seed", vd.seed}, {"fps", vd.fps}};
  std::ofstream os(deid_sidecar_path(tensor_path));
  if (!os) throw Error("cannot write sidecar for " + tensor_path.string());
  os << side.dump(2) << '\n';
}

DeidVideo load_deid(const std::filesystem::path& tensor_path) {
  DeidVideo vd;
  vd.data = load_raw_tensor(tensor_path);
  if (vd.data.dim(1) != kDeidGrid || vd.data.dim(2) != kDeidGrid || vd.data.dim(3) != 3) {
    throw FormatError(tensor_path.string() + " is not a de-identified [T x 6 x 6 x 3] tensor");
  }
  const auto side_path = deid_sidecar_path(tensor_path);
  std::ifstream is(side_path);
  if (!is) throw MissingArtifact(side_path.string());
  try {
    const auto side = nlohmann::json::parse(is);
    vd.permutation = side.at("permutation").get<Permutation>();
    vd.seed = side.at("seed").get<std::uint64_t>();
    vd.fps = side.at("fps").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed sidecar " + side_path.string() + ": " + e.what());
  }
  return vd;
}

}  // namespace rppgid
