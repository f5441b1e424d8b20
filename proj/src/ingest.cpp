#include "rppgid/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"

#include "rppgid/binary_io.hpp"
#include "rppgid/error.hpp"

namespace rppgid {

using nlohmann::json;

int Manifest::subject_count() const {
  std::set<int> ids;
  for (const auto& r : records) ids.insert(r.subject_id);
  return static_cast<int>(ids.size());
}

std::filesystem::path Manifest::resolve(const std::string& p) const {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

namespace {

std::string record_prefix(std::size_t i) { return "manifest record " + std::to_string(i) + ": "; }

template <typename T>
T required(const json& rec, const char* field, std::size_t i) {
  if (!rec.contains(field)) throw IngestError(record_prefix(i) + "missing field '" + field + "'");
  try {
    return rec.at(field).get<T>();
  } catch (const json::exception&) {
    throw IngestError(record_prefix(i) + "field '" + field + "' has the wrong type");
  }
}

template <typename T>
std::optional<T> optional_field(const json& rec, const char* field, std::size_t i) {
  if (!rec.contains(field) || rec.at(field).is_null()) return std::nullopt;
  try {
    return rec.at(field).get<T>();
  } catch (const json::exception&) {
    throw IngestError(record_prefix(i) + "field '" + field + "' has the wrong type");
  }
}

}  // namespace

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw MissingArtifact(path.string());
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::exception& e) {
    throw IngestError("malformed manifest " + path.string() + ": " + e.what());
  }
  Manifest m;
  m.base_dir = path.parent_path();
  const json* records = &doc;
  if (doc.is_object()) {
    m.deidentified = doc.value("deidentified", false);
    if (!doc.contains("records")) throw IngestError("manifest object lacks 'records'");
    records = &doc.at("records");
  }
  if (!records->is_array()) throw IngestError("manifest must be a JSON array of records");
  if (records->empty()) throw IngestError("empty manifest");

  for (std::size_t i = 0; i < records->size(); ++i) {
    const json& rec = (*records)[i];
    if (!rec.is_object()) throw IngestError(record_prefix(i) + "not an object");
    ManifestRecord r;
    r.video_path = required<std::string>(rec, "video_path", i);
    r.source_subject_id = required<int>(rec, "subject_id", i);
    r.session_tag = required<std::string>(rec, "session_tag", i);
    r.fps = required<double>(rec, "fps", i);
    if (!(r.fps > 0.0)) throw IngestError(record_prefix(i) + "fps must be positive");
    r.landmarks_path = optional_field<std::string>(rec, "landmarks_path", i);
    r.cppg_path = optional_field<std::string>(rec, "cppg_path", i);
    r.cppg_fs = optional_field<double>(rec, "cppg_fs", i);
    if (r.cppg_path && !(r.cppg_fs && *r.cppg_fs > 0.0)) {
      throw IngestError(record_prefix(i) + "missing field 'cppg_fs' for cppg_path");
    }
    m.records.push_back(std::move(r));
  }

  std::map<int, int> relabel;
  for (const auto& r : m.records) relabel.emplace(r.source_subject_id, 0);
  int next = 0;
  for (auto& [src, dense] : relabel) dense = next++;
  for (auto& r : m.records) r.subject_id = relabel.at(r.source_subject_id);
  std::set<std::string> seen;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    if (!seen.insert(m.records[i].video_path).second) {
      throw IngestError(record_prefix(i) + "video '" + m.records[i].video_path + "' listed twice");
    }
  }
  return m;
}

void save_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  json recs = json::array();
  for (const auto& r : manifest.records) {
    json j{{"video_path", r.video_path},
           {"subject_id", r.source_subject_id},
           {"session_tag", r.session_tag},
           {"fps", r.fps}};
    if (r.landmarks_path) j["landmarks_path"] = *r.landmarks_path;
    if (r.cppg_path) j["cppg_path"] = *r.cppg_path;
    if (r.cppg_fs) j["cppg_fs"] = *r.cppg_fs;
    recs.push_back(std::move(j));
  }
  std::ofstream os(path);
  if (!os) throw Error("cannot write manifest " + path.string());
  if (manifest.deidentified) {
    os << json{{"deidentified", true}, {"records", recs}}.dump(2) << '\n';
  } else {
    os << recs.dump(2) << '\n';
  }
}

Tensor load_raw_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifact(path.string());
  binio::expect_magic(is, "RPPG");
  const auto version = binio::read_le<std::uint32_t>(is, "version");
  if (version != kFrameFormatVersion) throw FormatError("unsupported frame file version " + std::to_string(version));
  Shape shape(4);
  for (auto& d : shape) d = binio::read_le<std::uint32_t>(is, "header");
  const std::size_t n = shape_size(shape);
  std::vector<char> raw(n * 4);
  if (!is.read(raw.data(), static_cast<std::streamsize>(raw.size()))) {
    throw FormatError("truncated payload in " + path.string() + ": header promises " + std::to_string(n) +
                      " floats");
  }
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int b = 3; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(raw[i * 4 + static_cast<std::size_t>(b)]);
    float f;
    std::memcpy(&f, &bits, 4);
    data[i] = f;
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_raw_tensor(const std::filesystem::path& path, const Tensor& data) {
  if (data.rank() != 4) throw DimensionError("raw frame files hold rank-4 tensors, got " + shape_str(data.shape()));
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os.write("RPPG", 4);
  binio::write_le<std::uint32_t>(os, kFrameFormatVersion);
  for (std::size_t d : data.shape()) binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  std::vector<char> raw(data.size() * 4);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto f = static_cast<float>(data[i]);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int b = 0; b < 4; ++b) raw[i * 4 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  os.write(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!os) throw Error("failed writing " + path.string());
}

FrameSequence load_frames(const std::filesystem::path& path, double fps) {
  Tensor t = load_raw_tensor(path);
  if (t.dim(3) != 3) throw FormatError("expected 3 colour channels, got " + std::to_string(t.dim(3)));
  if (t.dim(0) < 1) throw FormatError("frame file holds no frames");
  if (!(fps > 0.0)) throw IngestError("fps must be positive");
  for (double v : t.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw FormatError("pixel value outside [0, 1] in " + path.string());
  }
  return FrameSequence{std::move(t), fps};
}

LandmarkSet load_landmarks(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw MissingArtifact(path.string());
  LandmarkSet lm;
  try {
    const json doc = json::parse(is);
    for (const auto& frame : doc) {
      std::vector<Point> pts;
      for (const auto& p : frame) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      lm.frames.push_back(std::move(pts));
    }
  } catch (const json::exception& e) {
    throw IngestError("malformed landmark file " + path.string() + ": " + e.what());
  }
  return lm;
}

FrameSequence crop_face(const FrameSequence& v, const LandmarkSet& lm) {
  double x0 = INFINITY, y0 = INFINITY, x1 = -INFINITY, y1 = -INFINITY;
  std::size_t count = 0;
  for (const auto& frame : lm.frames)
    for (const auto& p : frame) {
      x0 = std::min(x0, p[0]);
      x1 = std::max(x1, p[0]);
      y0 = std::min(y0, p[1]);
      y1 = std::max(y1, p[1]);
      ++count;
    }
  if (count == 0) throw IngestError("no landmarks to crop with");
  if (lm.frames.size() != 1 && lm.frames.size() != v.frames()) {
    throw IngestError("landmark set has " + std::to_string(lm.frames.size()) + " entries for " +
                      std::to_string(v.frames()) + " frames");
  }
  const double bw = x1 - x0, bh = y1 - y0;
  if (bw <= 0.0 || bh <= 0.0) throw IngestError("degenerate box");
  const auto W = static_cast<double>(v.width()), H = static_cast<double>(v.height());
  const auto c0 = static_cast<std::size_t>(std::clamp(std::floor(x0 - 0.1 * bw), 0.0, W));
  const auto c1 = static_cast<std::size_t>(std::clamp(std::ceil(x1 + 0.1 * bw), 0.0, W));
  const auto r0 = static_cast<std::size_t>(std::clamp(std::floor(y0 - 0.1 * bh), 0.0, H));
  const auto r1 = static_cast<std::size_t>(std::clamp(std::ceil(y1 + 0.1 * bh), 0.0, H));
  if (c1 <= c0 || r1 <= r0) throw IngestError("degenerate box");

  const std::size_t T = v.frames(), Wi = v.width(), Hi = v.height();
  const std::size_t Ho = r1 - r0, Wo = c1 - c0;
  Tensor out({T, Ho, Wo, 3});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t r = 0; r < Ho; ++r) {
      const double* src = &v.data[((t * Hi + r0 + r) * Wi + c0) * 3];
      std::copy(src, src + Wo * 3, &out[((t * Ho + r) * Wo) * 3]);
    }
  return FrameSequence{std::move(out), v.fps};
}

CppgTrace load_cppg(const std::filesystem::path& path, double fs, int subject_id) {
  if (!(fs > 0.0)) throw IngestError("cPPG sample rate must be positive");
  std::ifstream is(path);
  if (!is) throw MissingArtifact(path.string());
  CppgTrace trace{{}, fs, subject_id};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    auto e = line.find_last_not_of(" \t\r,");
    double v = 0.0;
    const char* first = line.data() + b;
    const char* last = line.data() + e + 1;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
      throw FormatError(path.string() + ": non-numeric value at line " + std::to_string(lineno));
    }
    trace.samples.push_back(v);
  }
  if (static_cast<double>(trace.samples.size()) < 2.0 * fs) throw IngestError("trace shorter than 2 s");
  return trace;
}

void save_cppg(const std::filesystem::path& path, const CppgTrace& trace) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  char buf[64];
  for (double v : trace.samples) {
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    os.write(buf, ptr - buf);
    os.put('\n');
  }
}

std::vector<CppgTrace> load_cppg_set(const std::filesystem::path& path, double target_fs) {
  std::ifstream is(path);
  if (!is) throw MissingArtifact(path.string());
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::exception& e) {
    throw IngestError("malformed cPPG set " + path.string() + ": " + e.what());
  }
  if (!doc.is_array() || doc.empty()) throw IngestError("cPPG set must be a non-empty JSON array");
  std::map<int, int> relabel;
  for (std::size_t i = 0; i < doc.size(); ++i) relabel.emplace(required<int>(doc[i], "subject_id", i), 0);
  int next = 0;
  for (auto& [src, dense] : relabel) dense = next++;
  std::vector<CppgTrace> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto file = required<std::string>(doc[i], "cppg_path", i);
    const double fs = required<double>(doc[i], "fs", i);
    std::filesystem::path p(file);
    if (!p.is_absolute()) p = path.parent_path() / p;
    CppgTrace t = load_cppg(p, fs, relabel.at(required<int>(doc[i], "subject_id", i)));
    if (fs != target_fs) {
      t.samples = resample(t.samples, fs, target_fs);
      t.fs = target_fs;
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<double> resample(std::span<const double> x, double fs_in, double fs_out) {
  if (!(fs_in > 0.0 && fs_out > 0.0)) throw ConfigError("resample: rates must be positive");
  if (x.size() < 2 || fs_in == fs_out) return {x.begin(), x.end()};
  const double duration = static_cast<double>(x.size() - 1) / fs_in;
  const auto n_out = static_cast<std::size_t>(std::llround(duration * fs_out)) + 1;
  if (n_out < 2) return {x.front()};
  std::vector<double> y(n_out);
  const double step = static_cast<double>(x.size() - 1) / static_cast<double>(n_out - 1);
  for (std::size_t i = 0; i < n_out; ++i) {
    const double u = step * static_cast<double>(i);
    auto l = static_cast<std::size_t>(u);
    if (l >= x.size() - 1) {
      y[i] = x.back();
      continue;
    }
    const double w = u - static_cast<double>(l);
    y[i] = (1.0 - w) * x[l] + w * x[l + 1];
  }
  y.back() = x.back();
  return y;
}

}  // namespace rppgid
