#include "texparse/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <limits>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace texparse::ag {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

thread_local bool g_grad_enabled = true;

ConstMap as_mat(const Tensor& t, int rows, int cols) { return ConstMap(t.data(), rows, cols); }
MutMap as_mat(Tensor& t, int rows, int cols) { return MutMap(t.data(), rows, cols); }

// Message built only on failure.
#define require(ok, what)                  \
  do {                                     \
    if (!(ok)) throw ShapeError(what);     \
  } while (0)

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const Var& a, int rank, const char* op) {
  if (a.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.shape()));
  }
}

template <typename F, typename D>
Var unary(const Var& a, F f, D df) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
  return make_op(std::move(out), {a}, [df](const Tensor& g, const std::vector<Node*>& in) {
    if (!in[0]->requires_grad) return;
    const Tensor& xv = in[0]->value;
    Tensor& gx = in[0]->grad_buffer();
    for (std::size_t i = 0; i < xv.numel(); ++i) gx[i] += g[i] * df(xv[i]);
  });
}

struct Interp1D {
  std::vector<int> i0, i1;
  std::vector<double> w1;
};

Interp1D interp_table(int in, int out) {
  Interp1D t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w1.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = i0 < in - 1 ? i0 + 1 : i0;
    t.i0[o] = i0;
    t.i1[o] = i1;
    t.w1[o] = src - i0;
  }
  return t;
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

void Node::accumulate(const Tensor& g) {
  Tensor& buf = grad_buffer();
  for (std::size_t i = 0; i < g.numel(); ++i) buf[i] += g[i];
}

double Var::item() const {
  if (value().numel() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape()));
  return value()[0];
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(n);
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(n);
}

Var make_op(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  const bool need = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                                  [](const Var& v) { return v.requires_grad(); });
  if (need) {
    n->requires_grad = true;
    n->inputs.reserve(inputs.size());
    for (const Var& v : inputs) n->inputs.push_back(v.ptr());
    n->backward = std::move(backward);
  }
  return Var(n);
}

void backward(const Var& root) {
  if (root.value().numel() != 1) throw ShapeError("backward() needs a scalar root");
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && !child->inputs.empty() && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += 1.0;
  std::vector<Node*> raw;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward || node->grad.empty()) continue;
    raw.clear();
    for (const auto& p : node->inputs) raw.push_back(p.get());
    node->backward(node->grad, raw);
  }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
  require_same(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_op(std::move(out), {a, b}, [](const Tensor& g, const std::vector<Node*>& in) {
    if (in[0]->requires_grad) in[0]->accumulate(g);
    if (in[1]->requires_grad) in[1]->accumulate(g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_op(std::move(out), {a, b}, [](const Tensor& g, const std::vector<Node*>& in) {
    if (in[0]->requires_grad) in[0]->accumulate(g);
    if (in[1]->requires_grad) {
      Tensor& gb = in[1]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_op(std::move(out), {a, b}, [](const Tensor& g, const std::vector<Node*>& in) {
    if (in[0]->requires_grad) {
      Tensor& ga = in[0]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * in[1]->value[i];
    }
    if (in[1]->requires_grad) {
      Tensor& gb = in[1]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * in[0]->value[i];
    }
  });
}

Var div(const Var& a, const Var& b) {
  require_same(a, b, "div");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] / b.value()[i];
  return make_op(std::move(out), {a, b}, [](const Tensor& g, const std::vector<Node*>& in) {
    if (in[0]->requires_grad) {
      Tensor& ga = in[0]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] / in[1]->value[i];
    }
    if (in[1]->requires_grad) {
      Tensor& gb = in[1]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) {
        const double d = in[1]->value[i];
        gb[i] -= g[i] * in[0]->value[i] / (d * d);
      }
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double) { return s; });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double) { return 1.0; });
}

Var mul_by(const Var& a, const Var& s) {
  require(s.value().numel() == 1, "mul_by: scale must have one element, got " + shape_str(s.shape()));
  const double sv = s.value()[0];
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * sv;
  return make_op(std::move(out), {a, s}, [](const Tensor& g, const std::vector<Node*>& in) {
    const double sv = in[1]->value[0];
    if (in[0]->requires_grad) {
      Tensor& ga = in[0]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * sv;
    }
    if (in[1]->requires_grad) {
      double acc = 0;
      for (std::size_t i = 0; i < g.numel(); ++i) acc += g[i] * in[0]->value[i];
      in[1]->grad_buffer()[0] += acc;
    }
  });
}

Var reciprocal(const Var& a) {
  return unary(a, [](double x) { return 1.0 / x; }, [](double x) { return -1.0 / (x * x); });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var sigmoid(const Var& a) {
  auto f = [](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  };
  return unary(a, f, [f](double x) {
    const double s = f(x);
    return s * (1.0 - s);
  });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x) { return x > 0 ? 1.0 : 0.0; });
}

Var gelu(const Var& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [](double x) { return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x); });
}

Var silu(const Var& a) {
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  return unary(
      a, [sig](double x) { return x * sig(x); },
      [sig](double x) {
        const double s = sig(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Var clamp_min(const Var& a, double lo) {
  return unary(a, [lo](double x) { return x < lo ? lo : x; }, [lo](double x) { return x < lo ? 0.0 : 1.0; });
}

// ----------------------------------------------------------------- reductions

Var sum(const Var& a) {
  double s = 0;
  for (double v : a.value().values()) s += v;
  return make_op(Tensor({1}, s), {a}, [](const Tensor& g, const std::vector<Node*>& in) {
    if (!in[0]->requires_grad) return;
    Tensor& ga = in[0]->grad_buffer();
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g[0];
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().numel());
  require(n > 0, "mean of empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var logsumexp(const Var& a) {
  const auto& v = a.value().values();
  require(!v.empty(), "logsumexp of empty tensor");
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0;
  for (double x : v) s += std::exp(x - m);
  const double lse = m + std::log(s);
  return make_op(Tensor({1}, lse), {a}, [lse](const Tensor& g, const std::vector<Node*>& in) {
    if (!in[0]->requires_grad) return;
    Tensor& ga = in[0]->grad_buffer();
    const Tensor& x = in[0]->value;
    for (std::size_t i = 0; i < x.numel(); ++i) ga[i] += g[0] * std::exp(x[i] - lse);
  });
}

Var sum_cols(const Var& a) {
  require_rank(a, 2, "sum_cols");
  const int R = a.dim(0), C = a.dim(1);
  Tensor out({R});
  for (int r = 0; r < R; ++r) {
    double s = 0;
    for (int c = 0; c < C; ++c) s += a.value().at(r, c);
    out[r] = s;
  }
  return make_op(std::move(out), {a}, [R, C](const Tensor& g, const std::vector<Node*>& in) {
    if (!in[0]->requires_grad) return;
    Tensor& ga = in[0]->grad_buffer();
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < C; ++c) ga.at(r, c) += g[r];
  });
}

// ------------------------------------------------------------------- matrices

Var matmul(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int M = a.dim(0), K = a.dim(1), N = b.dim(1);
  require(b.dim(0) == K, "matmul: inner dimension " + std::to_string(K) + " vs " + std::to_string(b.dim(0)));
  Tensor out({M, N});
  as_mat(out, M, N).noalias() = as_mat(a.value(), M, K) * as_mat(b.value(), K, N);
  return make_op(std::move(out), {a, b}, [M, K, N](const Tensor& g, const std::vector<Node*>& in) {
    auto G = as_mat(g, M, N);
    if (in[0]->requires_grad) as_mat(in[0]->grad_buffer(), M, K).noalias() += G * as_mat(in[1]->value, K, N).transpose();
    if (in[1]->requires_grad) as_mat(in[1]->grad_buffer(), K, N).noalias() += as_mat(in[0]->value, M, K).transpose() * G;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const int M = a.dim(0), K = a.dim(1), N = b.dim(0);
  require(b.dim(1) == K, "matmul_nt: inner dimension " + std::to_string(K) + " vs " + std::to_string(b.dim(1)));
  Tensor out({M, N});
  as_mat(out, M, N).noalias() = as_mat(a.value(), M, K) * as_mat(b.value(), N, K).transpose();
  return make_op(std::move(out), {a, b}, [M, K, N](const Tensor& g, const std::vector<Node*>& in) {
    auto G = as_mat(g, M, N);
    if (in[0]->requires_grad) as_mat(in[0]->grad_buffer(), M, K).noalias() += G * as_mat(in[1]->value, N, K);
    if (in[1]->requires_grad) as_mat(in[1]->grad_buffer(), N, K).noalias() += G.transpose() * as_mat(in[0]->value, M, K);
  });
}

Var transpose(const Var& a) {
  require_rank(a, 2, "transpose");
  const int R = a.dim(0), C = a.dim(1);
  Tensor out({C, R});
  as_mat(out, C, R) = as_mat(a.value(), R, C).transpose();
  return make_op(std::move(out), {a}, [R, C](const Tensor& g, const std::vector<Node*>& in) {
    if (in[0]->requires_grad) as_mat(in[0]->grad_buffer(), R, C) += as_mat(g, C, R).transpose();
  });
}

Var add_row_bias(const Var& x, const Var& bias) {
  require_rank(x, 2, "add_row_bias");
  const int R = x.dim(0), C = x.dim(1);
  require(static_cast<int>(bias.value().numel()) == C,
          "add_row_bias: bias has " + std::to_string(bias.value().numel()) + " entries, rows have " + std::to_string(C));
  Tensor out = x.value();
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) out.at(r, c) += bias.value()[c];
  return make_op(std::move(out), {x, bias}, [R, C](const Tensor& g, const std::vector<Node*>& in) {
    if (in[0]->requires_grad) in[0]->accumulate(g);
    if (in[1]->requires_grad) {
      Tensor& gb = in[1]->grad_buffer();
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) gb[c] += g.at(r, c);
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  Var y = matmul_nt(x, weight);
  return bias.defined() ? add_row_bias(y, bias) : y;
}

Var softmax_rows(const Var& x, const std::vector<unsigned char>& keep) {
  require_rank(x, 2, "softmax_rows");
  const int R = x.dim(0), C = x.dim(1);
  require(keep.empty() || keep.size() == static_cast<std::size_t>(R) * C, "softmax_rows: keep mask size");
  Tensor out({R, C});
  for (int r = 0; r < R; ++r) {
    bool any = keep.empty();
    if (!any)
      for (int c = 0; c < C; ++c) any = any || keep[static_cast<std::size_t>(r) * C + c];
    auto kept = [&](int c) { return !any || keep.empty() || keep[static_cast<std::size_t>(r) * C + c]; };
    double m = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < C; ++c)
      if (kept(c)) m = std::max(m, x.value().at(r, c));
    double s = 0;
    for (int c = 0; c < C; ++c) {
      const double e = kept(c) ? std::exp(x.value().at(r, c) - m) : 0.0;
      out.at(r, c) = e;
      s += e;
    }
    for (int c = 0; c < C; ++c) out.at(r, c) /= s;
  }
  auto y = std::make_shared<Tensor>(out);
  return make_op(std::move(out), {x}, [y, R, C](const Tensor& g, const std::vector<Node*>& in) {
    if (!in[0]->requires_grad) return;
    Tensor& gx = in[0]->grad_buffer();
    for (int r = 0; r < R; ++r) {
      double dot = 0;
      for (int c = 0; c < C; ++c) dot += g.at(r, c) * y->at(r, c);
      for (int c = 0; c < C; ++c) gx.at(r, c) += y->at(r, c) * (g.at(r, c) - dot);
    }
  });
}

Var layernorm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
  require_rank(x, 2, "layernorm_rows");
  const int R = x.dim(0), C = x.dim(1);
  require(static_cast<int>(gamma.value().numel()) == C && static_cast<int>(beta.value().numel()) == C,
          "layernorm_rows: affine parameters must have " + std::to_string(C) + " entries");
  auto xhat = std::make_shared<Tensor>(Shape{R, C});
  auto inv_std = std::make_shared<std::vector<double>>(R);
  Tensor out({R, C});
  for (int r = 0; r < R; ++r) {
    double mu = 0;
    for (int c = 0; c < C; ++c) mu += x.value().at(r, c);
    mu /= C;
    double var = 0;
    for (int c = 0; c < C; ++c) {
      const double d = x.value().at(r, c) - mu;
      var += d * d;
    }
    var /= C;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (int c = 0; c < C; ++c) {
      const double h = (x.value().at(r, c) - mu) * is;
      xhat->at(r, c) = h;
      out.at(r, c) = h * gamma.value()[c] + beta.value()[c];
    }
  }
  return make_op(std::move(out), {x, gamma, beta},
                 [xhat, inv_std, R, C](const Tensor& g, const std::vector<Node*>& in) {
                   const Tensor& gam = in[1]->value;
                   if (in[1]->requires_grad || in[2]->requires_grad) {
                     Tensor& gg = in[1]->grad_buffer();
                     Tensor& gb = in[2]->grad_buffer();
                     for (int r = 0; r < R; ++r)
                       for (int c = 0; c < C; ++c) {
                         gg[c] += g.at(r, c) * xhat->at(r, c);
                         gb[c] += g.at(r, c);
                       }
                   }
                   if (!in[0]->requires_grad) return;
                   Tensor& gx = in[0]->grad_buffer();
                   for (int r = 0; r < R; ++r) {
                     double m1 = 0, m2 = 0;
                     for (int c = 0; c < C; ++c) {
                       const double dh = g.at(r, c) * gam[c];
                       m1 += dh;
                       m2 += dh * xhat->at(r, c);
                     }
                     m1 /= C;
                     m2 /= C;
                     for (int c = 0; c < C; ++c) {
                       const double dh = g.at(r, c) * gam[c];
                       gx.at(r, c) += (*inv_std)[r] * (dh - m1 - xhat->at(r, c) * m2);
                     }
                   }
                 });
}

Var row(const Var& x, int r) {
  require_rank(x, 2, "row");
  const int R = x.dim(0), C = x.dim(1);
  require(r >= 0 && r < R, "row: index " + std::to_string(r) + " out of range " + std::to_string(R));
  Tensor out({C});
  std::copy_n(x.value().data() + static_cast<std::size_t>(r) * C, C, out.data());
  return make_op(std::move(out), {x}, [r, C](const Tensor& g, const std::vector<Node*>& in) {
    if (!in[0]->requires_grad) return;
    double* gx = in[0]->grad_buffer().data() + static_cast<std::size_t>(r) * C;
    for (int c = 0; c < C; ++c) gx[c] += g[c];
  });
}

Var slice_cols(const Var& x, int begin, int end) {
  require_rank(x, 2, "slice_cols");
  const int R = x.dim(0), C = x.dim(1);
  require(0 <= begin && begin <= end && end <= C, "slice_cols: range out of bounds");
  const int W = end - begin;
  Tensor out({R, W});
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < W; ++c) out.at(r, c) = x.value().at(r, begin + c);
  return make_op(std::move(out), {x}, [R, W, begin](const Tensor& g, const std::vector<Node*>& in) {
    if (!in[0]->requires_grad) return;
    Tensor& gx = in[0]->grad_buffer();
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < W; ++c) gx.at(r, begin + c) += g.at(r, c);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const int R = parts[0].dim(0);
  int C = 0;
  for (const Var& p : parts) {
    require_rank(p, 2, "concat_cols");
    require(p.dim(0) == R, "concat_cols: row count mismatch");
    C += p.dim(1);
  }
  Tensor out({R, C});
  int off = 0;
  for (const Var& p : parts) {
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < p.dim(1); ++c) out.at(r, off + c) = p.value().at(r, c);
    off += p.dim(1);
  }
  return make_op(std::move(out), parts, [R](const Tensor& g, const std::vector<Node*>& in) {
    int off = 0;
    for (Node* n : in) {
      const int W = n->value.dim(1);
      if (n->requires_grad) {
        Tensor& gp = n->grad_buffer();
        for (int r = 0; r < R; ++r)
          for (int c = 0; c < W; ++c) gp.at(r, c) += g.at(r, off + c);
      }
      off += W;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const int C = parts[0].dim(1);
  int R = 0;
  for (const Var& p : parts) {
    require_rank(p, 2, "concat_rows");
    require(p.dim(1) == C, "concat_rows: column count mismatch");
    R += p.dim(0);
  }
  Tensor out({R, C});
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.data() + off);
    off += p.value().numel();
  }
  return make_op(std::move(out), parts, [](const Tensor& g, const std::vector<Node*>& in) {
    std::size_t off = 0;
    for (Node* n : in) {
      const std::size_t cnt = n->value.numel();
      if (n->requires_grad) {
        Tensor& gp = n->grad_buffer();
        for (std::size_t i = 0; i < cnt; ++i) gp[i] += g[off + i];
      }
      off += cnt;
    }
  });
}

Var stack(const std::vector<Var>& scalars) {
  Tensor out({static_cast<int>(scalars.size())});
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    require(scalars[i].value().numel() == 1, "stack: inputs must be scalars");
    out[i] = scalars[i].value()[0];
  }
  return make_op(std::move(out), scalars, [](const Tensor& g, const std::vector<Node*>& in) {
    for (std::size_t i = 0; i < in.size(); ++i)
      if (in[i]->requires_grad) in[i]->grad_buffer()[0] += g[i];
  });
}

Var div_rows(const Var& x, const Var& d) {
  require_rank(x, 2, "div_rows");
  const int R = x.dim(0), C = x.dim(1);
  require(static_cast<int>(d.value().numel()) == R, "div_rows: divisor count mismatch");
  Tensor out({R, C});
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) out.at(r, c) = x.value().at(r, c) / d.value()[r];
  return make_op(std::move(out), {x, d}, [R, C](const Tensor& g, const std::vector<Node*>& in) {
    const Tensor& xv = in[0]->value;
    const Tensor& dv = in[1]->value;
    if (in[0]->requires_grad) {
      Tensor& gx = in[0]->grad_buffer();
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) gx.at(r, c) += g.at(r, c) / dv[r];
    }
    if (in[1]->requires_grad) {
      Tensor& gd = in[1]->grad_buffer();
      for (int r = 0; r < R; ++r) {
        double acc = 0;
        for (int c = 0; c < C; ++c) acc += g.at(r, c) * xv.at(r, c);
        gd[r] -= acc / (dv[r] * dv[r]);
      }
    }
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make_op(std::move(out), {a}, [](const Tensor& g, const std::vector<Node*>& in) {
    if (in[0]->requires_grad) in[0]->accumulate(g);
  });
}

// --------------------------------------------------------------- feature maps

Var conv2d(const Var& x, const Var& weight, const Var& bias, int kernel, int stride, int pad) {
  require_rank(x, 3, "conv2d");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int K = C * kernel * kernel;
  require_rank(weight, 2, "conv2d weight");
  require(weight.dim(1) == K, "conv2d: weight expects " + std::to_string(weight.dim(1) / (kernel * kernel)) +
                                  " input channels, got " + std::to_string(C));
  const int O = weight.dim(0);
  const int Ho = (H + 2 * pad - kernel) / stride + 1;
  const int Wo = (W + 2 * pad - kernel) / stride + 1;
  require(Ho > 0 && Wo > 0, "conv2d: input " + shape_str(x.shape()) + " smaller than kernel");
  const int P = Ho * Wo;

  auto cols = std::make_shared<Tensor>(Shape{K, P});
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < kernel; ++ky)
      for (int kx = 0; kx < kernel; ++kx) {
        double* dst = cols->data() + static_cast<std::size_t>((c * kernel + ky) * kernel + kx) * P;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[oy * Wo + ox] = (iy >= 0 && iy < H && ix >= 0 && ix < W) ? x.value().at(c, iy, ix) : 0.0;
          }
        }
      }

  Tensor out({O, Ho, Wo});
  as_mat(out, O, P).noalias() = as_mat(weight.value(), O, K) * as_mat(*cols, K, P);
  const bool has_bias = bias.defined();
  if (has_bias) {
    require(static_cast<int>(bias.value().numel()) == O, "conv2d: bias size mismatch");
    for (int o = 0; o < O; ++o) {
      double* dst = out.data() + static_cast<std::size_t>(o) * P;
      for (int p = 0; p < P; ++p) dst[p] += bias.value()[o];
    }
  }
  std::vector<Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_op(std::move(out), inputs,
                 [cols, C, H, W, K, O, P, Ho, Wo, kernel, stride, pad, has_bias](const Tensor& g,
                                                                                  const std::vector<Node*>& in) {
                   auto G = as_mat(g, O, P);
                   if (in[1]->requires_grad) as_mat(in[1]->grad_buffer(), O, K).noalias() += G * as_mat(*cols, K, P).transpose();
                   if (has_bias && in[2]->requires_grad) {
                     Tensor& gb = in[2]->grad_buffer();
                     for (int o = 0; o < O; ++o) gb[o] += G.row(o).sum();
                   }
                   if (!in[0]->requires_grad) return;
                   Tensor gcols({K, P});
                   as_mat(gcols, K, P).noalias() = as_mat(in[1]->value, O, K).transpose() * G;
                   Tensor& gx = in[0]->grad_buffer();
                   for (int c = 0; c < C; ++c)
                     for (int ky = 0; ky < kernel; ++ky)
                       for (int kx = 0; kx < kernel; ++kx) {
                         const double* src = gcols.data() + static_cast<std::size_t>((c * kernel + ky) * kernel + kx) * P;
                         for (int oy = 0; oy < Ho; ++oy) {
                           const int iy = oy * stride - pad + ky;
                           if (iy < 0 || iy >= H) continue;
                           for (int ox = 0; ox < Wo; ++ox) {
                             const int ix = ox * stride - pad + kx;
                             if (ix >= 0 && ix < W) gx.at(c, iy, ix) += src[oy * Wo + ox];
                           }
                         }
                       }
                 });
}

Var avgpool2d(const Var& x, int k) {
  require_rank(x, 3, "avgpool2d");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  require(k >= 1 && H % k == 0 && W % k == 0,
          "avgpool2d: spatial size " + shape_str(x.shape()) + " not divisible by " + std::to_string(k));
  const int Ho = H / k, Wo = W / k;
  const double inv = 1.0 / (k * k);
  Tensor out({C, Ho, Wo});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) out.at(c, y / k, xx / k) += x.value().at(c, y, xx) * inv;
  return make_op(std::move(out), {x}, [C, H, W, k, inv](const Tensor& g, const std::vector<Node*>& in) {
    if (!in[0]->requires_grad) return;
    Tensor& gx = in[0]->grad_buffer();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) gx.at(c, y, xx) += g.at(c, y / k, xx / k) * inv;
  });
}

Tensor resize_bilinear(const Tensor& x, int height, int width) {
  if (x.rank() != 3) throw ShapeError("resize_bilinear: expected [C,H,W], got " + shape_str(x.shape()));
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H == height && W == width) return x;
  const Interp1D ty = interp_table(H, height), tx = interp_table(W, width);
  Tensor out({C, height, width});
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < height; ++oy) {
      const double wy = ty.w1[oy];
      for (int ox = 0; ox < width; ++ox) {
        const double wx = tx.w1[ox];
        const double top = (1 - wx) * x.at(c, ty.i0[oy], tx.i0[ox]) + wx * x.at(c, ty.i0[oy], tx.i1[ox]);
        const double bot = (1 - wx) * x.at(c, ty.i1[oy], tx.i0[ox]) + wx * x.at(c, ty.i1[oy], tx.i1[ox]);
        out.at(c, oy, ox) = (1 - wy) * top + wy * bot;
      }
    }
  return out;
}

Var resize_bilinear(const Var& x, int height, int width) {
  require_rank(x, 3, "resize_bilinear");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (H == height && W == width) return x;
  Tensor out = resize_bilinear(x.value(), height, width);
  auto ty = std::make_shared<Interp1D>(interp_table(H, height));
  auto tx = std::make_shared<Interp1D>(interp_table(W, width));
  return make_op(std::move(out), {x}, [ty, tx, C, height, width](const Tensor& g, const std::vector<Node*>& in) {
    if (!in[0]->requires_grad) return;
    Tensor& gx = in[0]->grad_buffer();
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < height; ++oy) {
        const double wy = ty->w1[oy];
        for (int ox = 0; ox < width; ++ox) {
          const double wx = tx->w1[ox];
          const double v = g.at(c, oy, ox);
          gx.at(c, ty->i0[oy], tx->i0[ox]) += v * (1 - wy) * (1 - wx);
          gx.at(c, ty->i0[oy], tx->i1[ox]) += v * (1 - wy) * wx;
          gx.at(c, ty->i1[oy], tx->i0[ox]) += v * wy * (1 - wx);
          gx.at(c, ty->i1[oy], tx->i1[ox]) += v * wy * wx;
        }
      }
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  const int H = parts[0].dim(1), W = parts[0].dim(2);
  int C = 0;
  for (const Var& p : parts) {
    require_rank(p, 3, "concat_channels");
    require(p.dim(1) == H && p.dim(2) == W, "concat_channels: spatial size mismatch " + shape_str(p.shape()) +
                                                " vs " + shape_str(parts[0].shape()));
    C += p.dim(0);
  }
  Tensor out({C, H, W});
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(), out.data() + off);
    off += p.value().numel();
  }
  return make_op(std::move(out), parts, [](const Tensor& g, const std::vector<Node*>& in) {
    std::size_t off = 0;
    for (Node* n : in) {
      const std::size_t cnt = n->value.numel();
      if (n->requires_grad) {
        Tensor& gp = n->grad_buffer();
        for (std::size_t i = 0; i < cnt; ++i) gp[i] += g[off + i];
      }
      off += cnt;
    }
  });
}

Var sparse_apply(const Var& x, const SparseMap& map) {
  require_rank(x, 2, "sparse_apply");
  const int R = x.dim(0), M = x.dim(1);
  require(M == map.in_size, "sparse_apply: input width " + std::to_string(M) + " vs map " + std::to_string(map.in_size));
  const int P = map.out_size();
  Tensor out({R, P});
  for (int r = 0; r < R; ++r) {
    const double* src = x.value().data() + static_cast<std::size_t>(r) * M;
    for (int p = 0; p < P; ++p) {
      double s = 0;
      for (std::size_t t = 0; t < map.index[p].size(); ++t) s += map.weight[p][t] * src[map.index[p][t]];
      out.at(r, p) = s;
    }
  }
  auto m = std::make_shared<SparseMap>(map);
  return make_op(std::move(out), {x}, [m, R, M, P](const Tensor& g, const std::vector<Node*>& in) {
    if (!in[0]->requires_grad) return;
    Tensor& gx = in[0]->grad_buffer();
    for (int r = 0; r < R; ++r) {
      double* dst = gx.data() + static_cast<std::size_t>(r) * M;
      for (int p = 0; p < P; ++p)
        for (std::size_t t = 0; t < m->index[p].size(); ++t) dst[m->index[p][t]] += m->weight[p][t] * g.at(r, p);
    }
  });
}

}  // namespace texparse::ag
