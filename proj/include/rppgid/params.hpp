#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>

#include "rppgid/rng.hpp"
#include "rppgid/tensor.hpp"

namespace rppgid {

// Named trainable tensors. Iteration follows name order, so anything derived
// from iteration (init, checkpoints, hashes) is deterministic.
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(std::uint64_t seed) : seed_(seed) {}

  void set(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  std::size_t size() const { return entries_.size(); }
  std::uint64_t seed() const { return seed_; }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }

  // Gaussian init with standard deviation `std`.
  void init_normal(const std::string& name, Shape shape, double std, Rng& rng);
  void init_zeros(const std::string& name, Shape shape);
  void init_constant(const std::string& name, Shape shape, double v);

  // Copies entries of `other` into this store (overwriting same names).
  void merge(const ParamStore& other);
  // Entries whose name starts with `prefix`.
  ParamStore subset(const std::string& prefix) const;

  // FNV-1a over names, shapes and raw payload bytes.
  std::uint64_t fingerprint() const;

  friend bool operator==(const ParamStore& a, const ParamStore& b) { return a.entries_ == b.entries_; }

 private:
  std::map<std::string, Tensor> entries_;
  std::uint64_t seed_ = 0;
};

using Gradients = std::map<std::string, Tensor>;

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::uint64_t step = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// One Adam update in place. `grads` must be keyed exactly like `params`.
void adam_step(ParamStore& params, const Gradients& grads, double lr, AdamState& state);

// Central differences (f(p+eps) - f(p-eps)) / (2 eps) for every coordinate.
Gradients finite_diff(const std::function<double(const ParamStore&)>& f, const ParamStore& params,
                      double eps = 1e-4);

// Checkpoint file: "PIDC", u32 version, u32 entry count, then per entry
// u32 name length, name bytes, u32 rank, u32 extents, f64 LE payload.
inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const std::filesystem::path& path, const ParamStore& params);
ParamStore load_checkpoint(const std::filesystem::path& path);

}  // namespace rppgid
