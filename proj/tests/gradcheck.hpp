#pragma once

// Central-difference gradient oracle shared by unit and acceptance tests.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "texparse/autograd.hpp"

namespace gradcheck {

struct Result {
  double worst_rel = 0.0;
  int checked = 0;
  int failed = 0;
  std::string first_failure;
};

/// Compares analytic gradients of loss() w.r.t. every entry of vars against
/// central differences. An entry passes when |a - n| <= rtol * max(|a|, |n|) + atol.
inline Result check(const std::function<texparse::ag::Var()>& loss, std::vector<texparse::ag::Var> vars,
                    double step = 1e-3, double rtol = 1e-4, double atol = 1e-8, int max_entries_per_var = 64) {
  using namespace texparse;
  for (auto& v : vars) v.zero_grad();
  ag::Var root = loss();
  ag::backward(root);
  std::vector<Tensor> analytic;
  for (auto& v : vars) analytic.push_back(v.grad().empty() ? Tensor(v.shape()) : v.grad());

  Result r;
  ag::NoGradGuard ng;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    Tensor& val = vars[k].mutable_value();
    const std::size_t n = val.numel();
    const std::size_t stride = n > static_cast<std::size_t>(max_entries_per_var) ? n / max_entries_per_var : 1;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = val[i];
      val[i] = orig + step;
      const double up = loss().item();
      val[i] = orig - step;
      const double down = loss().item();
      val[i] = orig;
      const double num = (up - down) / (2 * step);
      const double a = analytic[k][i];
      const double err = std::abs(a - num);
      const double scale = std::max(std::abs(a), std::abs(num));
      ++r.checked;
      // Entries decided by the absolute floor do not count toward worst_rel.
      if (rtol * scale > atol) r.worst_rel = std::max(r.worst_rel, err / scale);
      if (err > rtol * scale + atol) {
        if (!r.failed) {
          r.first_failure = "var " + std::to_string(k) + " entry " + std::to_string(i) + ": analytic " +
                            std::to_string(a) + " numeric " + std::to_string(num);
        }
        ++r.failed;
      }
    }
  }
  return r;
}

}  // namespace gradcheck
