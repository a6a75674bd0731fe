#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "texparse/autograd.hpp"
#include "texparse/params.hpp"

using namespace texparse;

namespace {

ag::Var rand_param(const Shape& s, std::mt19937_64& rng, double std = 1.0) { return ag::parameter(randn(s, std, rng)); }

// Weighted sum with fixed random weights, so every output entry reaches the loss.
ag::Var probe(const ag::Var& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ag::sum(ag::mul(x, ag::constant(randn(x.shape(), 1.0, rng))));
}

void expect_ok(const gradcheck::Result& r) {
  EXPECT_EQ(r.failed, 0) << r.first_failure << " (worst rel " << r.worst_rel << ")";
  EXPECT_GT(r.checked, 0);
}

}  // namespace

TEST(Autograd, ElementwiseOps) {
  std::mt19937_64 rng(1);
  auto a = rand_param({3, 4}, rng), b = rand_param({3, 4}, rng);
  expect_ok(gradcheck::check([&] { return probe(ag::mul(ag::add(a, b), ag::sub(a, ag::scale(b, 0.5))), 2); }, {a, b}));
  expect_ok(gradcheck::check([&] { return probe(ag::exp(ag::scale(a, 0.3)), 3); }, {a}));
  expect_ok(gradcheck::check([&] { return probe(ag::gelu(a), 4); }, {a}));
  expect_ok(gradcheck::check([&] { return probe(ag::silu(a), 5); }, {a}));
  expect_ok(gradcheck::check([&] { return probe(ag::sigmoid(a), 6); }, {a}));
  expect_ok(gradcheck::check([&] { return probe(ag::log(ag::add_scalar(ag::sigmoid(a), 0.1)), 7); }, {a}));
  expect_ok(gradcheck::check([&] { return probe(ag::reciprocal(ag::add_scalar(ag::exp(a), 1.0)), 8); }, {a}));
}

TEST(Autograd, Reductions) {
  std::mt19937_64 rng(2);
  auto a = rand_param({4, 5}, rng);
  auto s = rand_param({1}, rng);
  expect_ok(gradcheck::check([&] { return ag::logsumexp(a); }, {a}));
  expect_ok(gradcheck::check([&] { return ag::mean(ag::mul(a, a)); }, {a}));
  expect_ok(gradcheck::check([&] { return probe(ag::sum_cols(a), 9); }, {a}));
  expect_ok(gradcheck::check([&] { return probe(ag::mul_by(a, s), 10); }, {a, s}));
  expect_ok(gradcheck::check([&] { return probe(ag::div_rows(a, ag::add_scalar(ag::exp(ag::sum_cols(a)), 1.0)), 11); }, {a}));
}

TEST(Autograd, MatrixOps) {
  std::mt19937_64 rng(3);
  auto a = rand_param({3, 4}, rng), b = rand_param({4, 2}, rng), c = rand_param({5, 4}, rng);
  auto w = rand_param({6, 4}, rng), bias = rand_param({6}, rng);
  expect_ok(gradcheck::check([&] { return probe(ag::matmul(a, b), 12); }, {a, b}));
  expect_ok(gradcheck::check([&] { return probe(ag::matmul_nt(a, c), 13); }, {a, c}));
  expect_ok(gradcheck::check([&] { return probe(ag::transpose(a), 14); }, {a}));
  expect_ok(gradcheck::check([&] { return probe(ag::linear(a, w, bias), 15); }, {a, w, bias}));
  expect_ok(gradcheck::check([&] { return probe(ag::add_row_bias(a, ag::row(c, 1)), 16); }, {a, c}));
  expect_ok(gradcheck::check([&] { return probe(ag::concat_cols({a, ag::slice_cols(a, 1, 3)}), 17); }, {a}));
  expect_ok(gradcheck::check([&] { return probe(ag::concat_rows({a, c}), 18); }, {a, c}));
  expect_ok(gradcheck::check([&] { return probe(ag::reshape(ag::stack({ag::sum(a), ag::mean(c)}), {1, 2}), 19); }, {a, c}));
}

TEST(Autograd, SoftmaxAndLayerNorm) {
  std::mt19937_64 rng(4);
  auto a = rand_param({3, 5}, rng), g = rand_param({5}, rng), b = rand_param({5}, rng);
  std::vector<unsigned char> keep(15, 1);
  keep[1] = keep[7] = keep[8] = 0;
  for (int c = 0; c < 5; ++c) keep[10 + c] = 0;  // fully masked row falls back to plain softmax
  expect_ok(gradcheck::check([&] { return probe(ag::softmax_rows(a), 20); }, {a}));
  expect_ok(gradcheck::check([&] { return probe(ag::softmax_rows(a, keep), 21); }, {a}));
  expect_ok(gradcheck::check([&] { return probe(ag::layernorm_rows(a, g, b), 22); }, {a, g, b}));

  const Tensor s = ag::softmax_rows(a, keep).value();
  EXPECT_EQ(s.at(0, 1), 0.0);
  double row2 = 0;
  for (int c = 0; c < 5; ++c) row2 += s.at(2, c);
  EXPECT_NEAR(row2, 1.0, 1e-12);
  EXPECT_GT(s.at(2, 0), 0.0);
}

TEST(Autograd, FeatureMapOps) {
  std::mt19937_64 rng(5);
  auto x = rand_param({2, 6, 6}, rng), w = rand_param({3, 2 * 9}, rng), b = rand_param({3}, rng);
  auto w1 = rand_param({3, 2 * 4}, rng);
  expect_ok(gradcheck::check([&] { return probe(ag::conv2d(x, w, b, 3, 1, 1), 23); }, {x, w, b}));
  expect_ok(gradcheck::check([&] { return probe(ag::conv2d(x, w, b, 3, 2, 1), 24); }, {x, w, b}));
  expect_ok(gradcheck::check([&] { return probe(ag::conv2d(x, w1, ag::Var(), 2, 2, 0), 25); }, {x, w1}));
  expect_ok(gradcheck::check([&] { return probe(ag::avgpool2d(x, 2), 26); }, {x}));
  expect_ok(gradcheck::check([&] { return probe(ag::resize_bilinear(x, 12, 9), 27); }, {x}));
  expect_ok(gradcheck::check([&] { return probe(ag::resize_bilinear(x, 3, 4), 28); }, {x}));
  expect_ok(gradcheck::check([&] { return probe(ag::concat_channels({x, ag::scale(x, 2.0)}), 29); }, {x}));
}

TEST(Autograd, ConvMatchesDirectLoop) {
  std::mt19937_64 rng(6);
  const Tensor x = randn({2, 5, 7}, 1.0, rng), w = randn({3, 18}, 1.0, rng), b = randn({3}, 1.0, rng);
  const Tensor y = ag::conv2d(ag::constant(x), ag::constant(w), ag::constant(b), 3, 2, 1).value();
  ASSERT_EQ(y.shape(), (Shape{3, 3, 4}));
  for (int o = 0; o < 3; ++o)
    for (int oy = 0; oy < 3; ++oy)
      for (int ox = 0; ox < 4; ++ox) {
        double s = b[o];
        for (int c = 0; c < 2; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
              if (iy < 0 || iy >= 5 || ix < 0 || ix >= 7) continue;
              s += w.at(o, (c * 3 + ky) * 3 + kx) * x.at(c, iy, ix);
            }
        EXPECT_NEAR(y.at(o, oy, ox), s, 1e-12);
      }
}

TEST(Autograd, BilinearResizeKnownValues) {
  // 1-D ramp upsampled x2 with half-pixel centres: edges clamp, interior interpolates.
  Tensor x({1, 1, 2}, std::vector<double>{0.0, 1.0});
  const Tensor y = ag::resize_bilinear(x, 1, 4);
  EXPECT_DOUBLE_EQ(y[0], 0.0);
  EXPECT_DOUBLE_EQ(y[1], 0.25);
  EXPECT_DOUBLE_EQ(y[2], 0.75);
  EXPECT_DOUBLE_EQ(y[3], 1.0);
  const Tensor same = ag::resize_bilinear(x, 1, 2);
  EXPECT_EQ(same.values(), x.values());
}

TEST(Autograd, SparseApply) {
  std::mt19937_64 rng(7);
  auto x = rand_param({2, 5}, rng);
  ag::SparseMap m;
  m.in_size = 5;
  m.index = {{0, 1}, {4}, {2, 3, 2}};
  m.weight = {{0.25, 0.75}, {1.0}, {0.5, 0.2, 0.3}};
  expect_ok(gradcheck::check([&] { return probe(ag::sparse_apply(x, m), 30); }, {x}));
}

TEST(Autograd, NoGradProducesConstants) {
  auto p = ag::parameter(Tensor({2}, 1.0));
  ag::NoGradGuard ng;
  auto y = ag::mul(p, p);
  EXPECT_FALSE(y.requires_grad());
}
