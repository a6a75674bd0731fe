#include "texparse/lora.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "texparse/tensor.hpp"

namespace texparse {
namespace {

const std::string kSuffixA = ".lora_A";
const std::string kSuffixB = ".lora_B";

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void LoraAdapter::validate() const {
  if (rank <= 0) throw ShapeError("adapter '" + name + "': rank must be positive, got " + std::to_string(rank));
  if (!(alpha > 0)) throw std::invalid_argument("adapter '" + name + "': alpha must be positive");
  if (B.cols() != rank) {
    throw ShapeError("adapter '" + name + "': B has " + std::to_string(B.cols()) + " columns, rank is " +
                     std::to_string(rank));
  }
  if (A.rows() != rank) {
    throw ShapeError("adapter '" + name + "': A has " + std::to_string(A.rows()) + " rows, rank is " +
                     std::to_string(rank));
  }
}

WeightMatrix merge_lora(const WeightMatrix& base, const LoraAdapter& adapter) {
  adapter.validate();
  const int d = base.rows(), k = base.cols(), r = adapter.rank;
  if (adapter.B.rows() != d) {
    throw ShapeError("adapter '" + adapter.name + "': B rows (d) = " + std::to_string(adapter.B.rows()) +
                     " but base '" + base.name() + "' has d = " + std::to_string(d));
  }
  if (adapter.A.cols() != k) {
    throw ShapeError("adapter '" + adapter.name + "': A cols (k) = " + std::to_string(adapter.A.cols()) +
                     " but base '" + base.name() + "' has k = " + std::to_string(k));
  }
  if (r > std::min(d, k)) {
    throw ShapeError("adapter '" + adapter.name + "': rank r = " + std::to_string(r) + " exceeds min(d, k) = " +
                     std::to_string(std::min(d, k)));
  }

  const double s = adapter.scale();
  WeightMatrix out = base;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < k; ++j) {
      double ba = 0.0;
      for (int t = 0; t < r; ++t) ba += adapter.B(i, t) * adapter.A(t, j);
      const double delta = s * ba;
      // Skipping exact zeros keeps -0.0 entries intact.
      if (delta != 0.0) out(i, j) += delta;
    }
  }
  return out;
}

TensorArchive merge_model(const TensorArchive& base, const std::vector<LoraAdapter>& adapters) {
  std::set<std::string> seen;
  for (const auto& a : adapters) {
    if (!base.contains(a.name)) throw ArchiveError("adapter '" + a.name + "' does not match any base entry");
    if (!seen.insert(a.name).second) throw ArchiveError("duplicate adapter for entry '" + a.name + "'");
  }

  TensorArchive out = base;
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& a : adapters) {
    out.put(merge_lora(base.get(a.name), a), base.dtype(a.name));
    manifest.push_back({{"name", a.name}, {"alpha", a.alpha}, {"rank", a.rank}, {"scale", a.scale()}});
  }
  if (!adapters.empty()) out.metadata()["lora_merge"] = manifest;
  return out;
}

std::vector<LoraAdapter> adapters_from_archive(const TensorArchive& archive, double alpha, int rank) {
  std::vector<LoraAdapter> out;
  for (const auto& name : archive.names()) {
    if (!ends_with(name, kSuffixA)) {
      if (!ends_with(name, kSuffixB)) throw ArchiveError("adapter archive entry '" + name + "' is not a LoRA factor");
      continue;
    }
    const std::string target = name.substr(0, name.size() - kSuffixA.size());
    const std::string bname = target + kSuffixB;
    if (!archive.contains(bname)) throw ArchiveError("adapter '" + target + "' has A but no B factor");
    LoraAdapter a{target, archive.get(bname), archive.get(name), alpha, rank};
    a.validate();
    out.push_back(std::move(a));
  }
  for (const auto& name : archive.names()) {
    if (ends_with(name, kSuffixB) && !archive.contains(name.substr(0, name.size() - kSuffixB.size()) + kSuffixA)) {
      throw ArchiveError("adapter '" + name.substr(0, name.size() - kSuffixB.size()) + "' has B but no A factor");
    }
  }
  return out;
}

TensorArchive adapters_to_archive(const std::vector<LoraAdapter>& adapters, DType dtype) {
  TensorArchive ar;
  for (const auto& a : adapters) {
    ar.put(a.A.renamed(a.name + kSuffixA), dtype);
    ar.put(a.B.renamed(a.name + kSuffixB), dtype);
  }
  return ar;
}

}  // namespace texparse
