#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "texparse/archive.hpp"
#include "texparse/autograd.hpp"

namespace texparse {

/// Named collection of parameter leaves. Iteration order is lexicographic,
/// which fixes the optimizer update order and checkpoint layout.
class ParamSet {
 public:
  ag::Var& add(const std::string& name, Tensor init, bool trainable = true);
  const ag::Var& at(const std::string& name) const;
  ag::Var& at(const std::string& name);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }
  std::size_t numel() const;

  std::map<std::string, ag::Var>& items() { return params_; }
  const std::map<std::string, ag::Var>& items() const { return params_; }

  void zero_grad();

  /// Every parameter flattened to a matrix [dim0, numel/dim0] ([1, n] for vectors).
  TensorArchive to_archive(DType dtype, const std::string& prefix = "") const;
  /// Overwrites values from an archive; shapes must agree element-for-element.
  void load(const TensorArchive& archive, const std::string& prefix = "");

 private:
  std::map<std::string, ag::Var> params_;
};

/// Seeded Gaussian initialiser, N(0, std^2).
Tensor randn(const Shape& shape, double stddev, std::mt19937_64& rng);

/// Stable 64-bit FNV-1a hash, used wherever a seed is derived from a string.
std::uint64_t fnv1a(const std::string& s, std::uint64_t seed = 0);

/// Derives an independent stream seed from a base seed and up to three indices.
std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

}  // namespace texparse
