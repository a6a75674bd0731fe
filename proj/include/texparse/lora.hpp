#pragma once

#include <string>
#include <vector>

#include "texparse/archive.hpp"

namespace texparse {

/// Low-rank update for one named base matrix: delta = (alpha / rank) * B * A,
/// with B of shape d x r and A of shape r x k.
struct LoraAdapter {
  std::string name;
  WeightMatrix B;
  WeightMatrix A;
  double alpha = 1.0;
  int rank = 1;

  double scale() const { return alpha / rank; }
  /// Checks the internal shape contract (B.cols == A.rows == rank, alpha > 0).
  void validate() const;
};

/// W + (alpha / r) * B * A. The input is left untouched; a zero update leaves
/// every entry bitwise identical.
WeightMatrix merge_lora(const WeightMatrix& base, const LoraAdapter& adapter);

/// Merges every adapter into its base entry and copies the rest. The header
/// metadata gains a "lora_merge" manifest listing name, alpha, rank and scale.
TensorArchive merge_model(const TensorArchive& base, const std::vector<LoraAdapter>& adapters);

/// Reads adapters stored as "<name>.lora_A" (r x k) and "<name>.lora_B" (d x r).
std::vector<LoraAdapter> adapters_from_archive(const TensorArchive& archive, double alpha, int rank);

/// Inverse of adapters_from_archive.
TensorArchive adapters_to_archive(const std::vector<LoraAdapter>& adapters, DType dtype = DType::F32);

}  // namespace texparse
