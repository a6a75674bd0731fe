#pragma once

// Binary masks and the pixel-set helpers shared by evaluation, dataset IO and
// inference.

#include <cstdint>
#include <vector>

namespace texparse {

struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0 or 1

  Mask() = default;
  Mask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}

  std::size_t size() const { return bits.size(); }
  bool operator[](std::size_t i) const { return bits[i] != 0; }
  bool at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int y, int x, bool v = true) { bits[static_cast<std::size_t>(y) * width + x] = v; }
  long long area() const;

  friend bool operator==(const Mask& a, const Mask& b) {
    return a.height == b.height && a.width == b.width && a.bits == b.bits;
  }
};

/// Exact intersection / union pixel counts.
struct IoUCount {
  long long inter = 0;
  long long uni = 0;
  double value() const { return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0; }
  /// inter / uni >= pct / 100, compared in integers.
  bool at_least(int pct) const { return uni > 0 && inter * 100 >= static_cast<long long>(pct) * uni; }
};

IoUCount overlap(const Mask& a, const Mask& b);
Mask mask_union(const Mask& a, const Mask& b);
/// a with every pixel of b cleared.
Mask mask_minus(const Mask& a, const Mask& b);

/// 8-connected components, ordered by first pixel in raster order.
std::vector<Mask> connected_components(const Mask& m);

/// Person masks from labeled part masks: the union of all parts, split into
/// connected components. Returns the member part indices of each person too.
std::vector<Mask> merge_fpp(const std::vector<Mask>& parts, std::vector<std::vector<int>>* members = nullptr);

}  // namespace texparse
