#include "rppgid/params.hpp"

#include <cmath>
#include <fstream>

#include "rppgid/binary_io.hpp"
#include "rppgid/error.hpp"

namespace rppgid {

void ParamStore::set(const std::string& name, Tensor value) { entries_[name] = std::move(value); }

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::init_normal(const std::string& name, Shape shape, double std, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = std * rng.normal();
  set(name, std::move(t));
}

void ParamStore::init_zeros(const std::string& name, Shape shape) { set(name, Tensor(std::move(shape))); }

void ParamStore::init_constant(const std::string& name, Shape shape, double v) {
  set(name, Tensor(std::move(shape), v));
}

void ParamStore::merge(const ParamStore& other) {
  for (const auto& [name, value] : other) set(name, value);
}

ParamStore ParamStore::subset(const std::string& prefix) const {
  ParamStore out(seed_);
  for (const auto& [name, value] : entries_) {
    if (name.compare(0, prefix.size(), prefix) == 0) out.set(name, value);
  }
  return out;
}

std::uint64_t ParamStore::fingerprint() const {
  std::uint64_t h = fnv1a("");
  for (const auto& [name, value] : entries_) {
    h = fnv1a(name, h);
    for (std::size_t d : value.shape()) h = fnv1a(std::to_string(d) + ",", h);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(value.data().data()), value.size() * sizeof(double)), h);
  }
  return h;
}

void adam_step(ParamStore& params, const Gradients& grads, double lr, AdamState& state) {
  if (grads.size() != params.size()) {
    throw ContractError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                        std::to_string(params.size()) + " parameters");
  }
  for (const auto& [name, value] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw ContractError("adam_step: no gradient for '" + name + "'");
    if (it->second.shape() != value.shape()) {
      throw ContractError("adam_step: gradient shape mismatch for '" + name + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(kAdamBeta1, t);
  const double c2 = 1.0 - std::pow(kAdamBeta2, t);
  for (auto& [name, value] : params) {
    const Tensor& g = grads.at(name);
    auto [mit, m_new] = state.m.try_emplace(name, value.shape());
    auto [vit, v_new] = state.v.try_emplace(name, value.shape());
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * g[i];
      v[i] = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      value[i] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
    }
  }
}

Gradients finite_diff(const std::function<double(const ParamStore&)>& f, const ParamStore& params, double eps) {
  Gradients out;
  ParamStore probe = params;
  for (const auto& [name, value] : params) {
    Tensor g(value.shape());
    Tensor& p = probe.get(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + eps;
      const double fp = f(probe);
      p[i] = orig - eps;
      const double fm = f(probe);
      p[i] = orig;
      g[i] = (fp - fm) / (2.0 * eps);
    }
    out.emplace(name, std::move(g));
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open checkpoint for writing: " + path.string());
  os.write("PIDC", 4);
  binio::write_le<std::uint32_t>(os, kCheckpointVersion);
  binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, value] : params) {
    binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(value.rank()));
    for (std::size_t d : value.shape()) binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (double v : value.values()) binio::write_le<double>(os, v);
  }
  if (!os) throw Error("failed writing checkpoint: " + path.string());
}

ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingArtifact(path.string());
  binio::expect_magic(is, "PIDC");
  const auto version = binio::read_le<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = binio::read_le<std::uint32_t>(is, "entry count");
  ParamStore out;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto name_len = binio::read_le<std::uint32_t>(is, "name length");
    if (name_len > (1u << 16)) throw FormatError("implausible parameter name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw FormatError("truncated input while reading name");
    const auto rank = binio::read_le<std::uint32_t>(is, "rank");
    if (rank > 8) throw FormatError("implausible tensor rank for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = binio::read_le<std::uint32_t>(is, "extent");
    std::vector<double> data(shape_size(shape));
    for (auto& v : data) v = binio::read_le<double>(is, "payload");
    if (out.contains(name)) throw FormatError("duplicate parameter '" + name + "'");
    out.set(name, Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

}  // namespace rppgid
