#include "texparse/mask.hpp"

#include <stdexcept>
#include <string>

namespace texparse {
namespace {

void check_same(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument("mask sizes differ: " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                                " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

}  // namespace

long long Mask::area() const {
  long long n = 0;
  for (auto b : bits) n += b != 0;
  return n;
}

IoUCount overlap(const Mask& a, const Mask& b) {
  check_same(a, b);
  IoUCount c;
  for (std::size_t i = 0; i < a.size(); ++i) {
    c.inter += a[i] && b[i];
    c.uni += a[i] || b[i];
  }
  return c;
}

Mask mask_union(const Mask& a, const Mask& b) {
  check_same(a, b);
  Mask out = a;
  for (std::size_t i = 0; i < a.size(); ++i) out.bits[i] = a[i] || b[i];
  return out;
}

Mask mask_minus(const Mask& a, const Mask& b) {
  check_same(a, b);
  Mask out = a;
  for (std::size_t i = 0; i < a.size(); ++i) out.bits[i] = a[i] && !b[i];
  return out;
}

std::vector<Mask> connected_components(const Mask& m) {
  std::vector<int> comp(m.size(), -1);
  std::vector<Mask> out;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < m.size(); ++start) {
    if (!m[start] || comp[start] >= 0) continue;
    const int id = static_cast<int>(out.size());
    out.emplace_back(m.height, m.width);
    comp[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      out.back().bits[p] = 1;
      const int y = static_cast<int>(p) / m.width, x = static_cast<int>(p) % m.width;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || xx < 0 || yy >= m.height || xx >= m.width) continue;
          const std::size_t q = static_cast<std::size_t>(yy) * m.width + xx;
          if (m[q] && comp[q] < 0) {
            comp[q] = id;
            stack.push_back(q);
          }
        }
      }
    }
  }
  return out;
}

std::vector<Mask> merge_fpp(const std::vector<Mask>& parts, std::vector<std::vector<int>>* members) {
  if (members) members->clear();
  if (parts.empty()) return {};
  Mask all(parts[0].height, parts[0].width);
  for (const Mask& p : parts) all = mask_union(all, p);
  std::vector<Mask> people = connected_components(all);
  if (members) {
    members->resize(people.size());
    for (std::size_t i = 0; i < parts.size(); ++i) {
      for (std::size_t k = 0; k < people.size(); ++k) {
        if (overlap(parts[i], people[k]).inter > 0) {
          (*members)[k].push_back(static_cast<int>(i));
          break;
        }
      }
    }
  }
  return people;
}

}  // namespace texparse
