#pragma once

// Minimal tape-based reverse-mode differentiation over Tensor values.
//
// Every op returns a Var. When gradient recording is enabled and at least one
// input requires a gradient, the result keeps its inputs alive and registers
// a backward closure; otherwise the result is a detached constant.

#include <functional>
#include <memory>
#include <vector>

#include "texparse/tensor.hpp"

namespace texparse::ag {

struct Node;

using BackwardFn = std::function<void(const Tensor& grad_out, const std::vector<Node*>& inputs)>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  /// Gradient buffer, zero-initialised on first use.
  Tensor& grad_buffer();
  void accumulate(const Tensor& g);
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

  /// Scalar value of a one-element Var.
  double item() const;
  void zero_grad();

 private:
  std::shared_ptr<Node> node_;
};

bool grad_enabled();

/// Disables graph recording in its scope.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

/// Builds a result node. The backward closure runs only when the result is
/// recorded; it receives the inputs in the order given.
Var make_op(Tensor value, std::vector<Var> inputs, BackwardFn backward);

/// Runs reverse accumulation from a one-element root (seed gradient 1).
void backward(const Var& root);

// Elementwise, equal shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// a * s where s is a one-element Var.
Var mul_by(const Var& a, const Var& s);
Var reciprocal(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var gelu(const Var& a);
Var silu(const Var& a);
Var clamp_min(const Var& a, double lo);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);
Var logsumexp(const Var& a);
/// [R, C] -> [R]
Var sum_cols(const Var& a);

// Matrices.
Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);
/// x [R, in] * W^T [in, out] + bias [out]; bias may be undefined.
Var linear(const Var& x, const Var& weight, const Var& bias);
/// Adds bias [C] to every row of x [R, C].
Var add_row_bias(const Var& x, const Var& bias);
/// Row softmax. Entries with keep[r*C + c] == 0 are excluded; rows with no
/// kept entry fall back to the unmasked softmax. keep may be empty.
Var softmax_rows(const Var& x, const std::vector<unsigned char>& keep = {});
Var layernorm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
/// Row r as a [C] vector.
Var row(const Var& x, int r);
Var slice_cols(const Var& x, int begin, int end);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
/// One-element Vars -> [n].
Var stack(const std::vector<Var>& scalars);
/// x [R, C] with row r divided by d [R].
Var div_rows(const Var& x, const Var& d);
Var reshape(const Var& a, Shape shape);

// Feature maps [C, H, W].
/// weight [O, C*k*k], bias [O] (may be undefined).
Var conv2d(const Var& x, const Var& weight, const Var& bias, int kernel, int stride, int pad);
Var avgpool2d(const Var& x, int k);
/// Bilinear resampling with half-pixel centres (align_corners = false).
Var resize_bilinear(const Var& x, int height, int width);
Var concat_channels(const std::vector<Var>& parts);

/// Sparse linear map applied to each row: out[r, p] = sum_t w[p][t] * x[r, idx[p][t]].
struct SparseMap {
  int in_size = 0;
  std::vector<std::vector<int>> index;
  std::vector<std::vector<double>> weight;
  int out_size() const { return static_cast<int>(index.size()); }
};
Var sparse_apply(const Var& x, const SparseMap& map);

// Plain tensor helpers shared by ops and callers that do not need gradients.
Tensor resize_bilinear(const Tensor& x, int height, int width);

}  // namespace texparse::ag
