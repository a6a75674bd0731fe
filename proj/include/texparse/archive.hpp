#pragma once

// Named-tensor container used for base weights, LoRA adapters and training
// checkpoints.
//
// File layout:
//   u64 little-endian header length N
//   N bytes UTF-8 JSON: {"__metadata__": {...},
//                        "<name>": {"dtype": "F32"|"F64", "shape": [d, k],
//                                   "data_offsets": [begin, end]}, ...}
//   payload: little-endian values, offsets relative to the payload start
//
// Entries are written in lexicographic name order, so write(read(bytes)) == bytes.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace texparse {

enum class DType { F32, F64 };

std::string dtype_name(DType dt);
DType parse_dtype(const std::string& name);

/// Dense d x k real matrix with an immutable shape.
class WeightMatrix {
 public:
  WeightMatrix() = default;
  WeightMatrix(std::string name, int rows, int cols, double fill = 0.0);
  WeightMatrix(std::string name, int rows, int cols, std::vector<double> values);

  const std::string& name() const { return name_; }
  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }

  double operator()(int r, int c) const { return values_[static_cast<std::size_t>(r) * cols_ + c]; }
  double& operator()(int r, int c) { return values_[static_cast<std::size_t>(r) * cols_ + c]; }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  bool all_finite() const;
  WeightMatrix renamed(std::string name) const;

  friend bool operator==(const WeightMatrix&, const WeightMatrix&) = default;

 private:
  std::string name_;
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> values_;
};

/// Bitwise equality of values (distinguishes -0.0 from 0.0 and compares NaN payloads).
bool bitwise_equal(const WeightMatrix& a, const WeightMatrix& b);

class ArchiveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TensorArchive {
 public:
  struct Entry {
    WeightMatrix matrix;
    DType dtype = DType::F32;
  };

  void put(WeightMatrix m, DType dtype = DType::F32);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const WeightMatrix& get(const std::string& name) const;
  DType dtype(const std::string& name) const;
  std::vector<std::string> names() const;
  std::size_t size() const { return entries_.size(); }
  const std::map<std::string, Entry>& entries() const { return entries_; }

  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

  std::vector<std::uint8_t> serialize() const;
  static TensorArchive deserialize(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

 private:
  std::map<std::string, Entry> entries_;
  nlohmann::json metadata_ = nlohmann::json::object();
};

}  // namespace texparse
