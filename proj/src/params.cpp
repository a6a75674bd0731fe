#include "texparse/params.hpp"

#include <stdexcept>

namespace texparse {

ag::Var& ParamSet::add(const std::string& name, Tensor init, bool trainable) {
  if (params_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  auto [it, _] = params_.emplace(name, trainable ? ag::parameter(std::move(init)) : ag::constant(std::move(init)));
  return it->second;
}

const ag::Var& ParamSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter '" + name + "'");
  return it->second;
}

ag::Var& ParamSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter '" + name + "'");
  return it->second;
}

std::size_t ParamSet::numel() const {
  std::size_t n = 0;
  for (const auto& [_, v] : params_) n += v.value().numel();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& [_, v] : params_) v.zero_grad();
}

TensorArchive ParamSet::to_archive(DType dtype, const std::string& prefix) const {
  TensorArchive ar;
  for (const auto& [name, v] : params_) {
    const Tensor& t = v.value();
    const int rows = t.rank() >= 2 ? t.dim(0) : 1;
    const int cols = static_cast<int>(t.numel() / static_cast<std::size_t>(rows));
    ar.put(WeightMatrix(prefix + name, rows, cols, t.values()), dtype);
  }
  return ar;
}

void ParamSet::load(const TensorArchive& archive, const std::string& prefix) {
  for (auto& [name, v] : params_) {
    const WeightMatrix& m = archive.get(prefix + name);
    Tensor& t = v.mutable_value();
    if (m.size() != t.numel()) {
      throw ArchiveError("entry '" + prefix + name + "' has " + std::to_string(m.size()) + " values, parameter " +
                         shape_str(t.shape()) + " needs " + std::to_string(t.numel()));
    }
    std::copy(m.values().begin(), m.values().end(), t.data());
  }
}

Tensor randn(const Shape& shape, double stddev, std::mt19937_64& rng) {
  Tensor t(shape);
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

std::uint64_t fnv1a(const std::string& s, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ULL ^ seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  // splitmix64 finaliser over a running combination.
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(base);
  h = mix(h ^ a);
  h = mix(h ^ b);
  h = mix(h ^ c);
  return h;
}

}  // namespace texparse
