// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "vidgan/ops.hpp"

namespace vidgan {
namespace {

using testing::expect_gradients_match;
using testing::random_tensor;
using V = std::vector<Var>;
using G = Graph<double>;

TEST(OpsGrad, Conv3dSamePadding) {
  Rng rng(1);
  expect_gradients_match([](G& g, const V& v) { return ops::conv3d(g, v[0], v[1], v[2], {1, 1, 1}); },
                         {random_tensor({2, 3, 3, 4, 5}, rng), random_tensor({4, 3, 3, 3, 3}, rng),
                          random_tensor({4}, rng)});
}

TEST(OpsGrad, Conv3dPointwiseAndFrameKernel) {
  Rng rng(2);
  expect_gradients_match([](G& g, const V& v) { return ops::conv3d(g, v[0], v[1], v[2], {}); },
                         {random_tensor({2, 3, 2, 3, 3}, rng), random_tensor({2, 3, 1, 1, 1}, rng),
                          random_tensor({2}, rng)});
  expect_gradients_match([](G& g, const V& v) { return ops::conv3d(g, v[0], v[1], Var{}, {0, 1, 1}); },
                         {random_tensor({1, 2, 2, 4, 4}, rng), random_tensor({3, 2, 1, 3, 3}, rng)});
}

TEST(OpsGrad, Linear) {
  Rng rng(3);
  expect_gradients_match([](G& g, const V& v) { return ops::linear(g, v[0], v[1], v[2]); },
                         {random_tensor({3, 5}, rng), random_tensor({4, 5}, rng), random_tensor({4}, rng)});
}

TEST(OpsGrad, Elementwise) {
  Rng rng(4);
  auto x = random_tensor({2, 3, 4}, rng, -2, 2);
  for (Index i = 0; i < x.size(); ++i)
    if (std::abs(x[i]) < 1e-3) x[i] = 0.5;
  expect_gradients_match([](G& g, const V& v) { return ops::relu(g, v[0]); }, {x});
  expect_gradients_match([](G& g, const V& v) { return ops::tanh(g, v[0]); }, {x});
  expect_gradients_match([](G& g, const V& v) { return ops::sigmoid(g, v[0]); }, {x});
  expect_gradients_match([](G& g, const V& v) { return ops::softplus(g, v[0]); }, {x});
  expect_gradients_match([](G& g, const V& v) { return ops::scale(g, v[0], -2.5); }, {x});
  expect_gradients_match([](G& g, const V& v) { return ops::mul(g, v[0], v[1]); },
                         {x, random_tensor({2, 3, 4}, rng)});
  expect_gradients_match([](G& g, const V& v) { return ops::add(g, v[0], v[1]); },
                         {x, random_tensor({2, 3, 4}, rng)});
}

TEST(OpsGrad, Reductions) {
  Rng rng(5);
  expect_gradients_match([](G& g, const V& v) { return ops::sum(g, v[0]); }, {random_tensor({3, 4}, rng)});
  expect_gradients_match([](G& g, const V& v) { return ops::mean(g, v[0]); }, {random_tensor({3, 4}, rng)});
  expect_gradients_match([](G& g, const V& v) { return ops::sum_spatial(g, v[0]); },
                         {random_tensor({2, 3, 2, 2, 2}, rng)});
  expect_gradients_match([](G& g, const V& v) { return ops::row_dot(g, v[0], v[1]); },
                         {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)});
  expect_gradients_match(
      [](G& g, const V& v) { return ops::softmax_cross_entropy(g, v[0], {0, 2, 1}); },
      {random_tensor({3, 3}, rng, -3, 3)});
}

TEST(OpsGrad, ShapeOps) {
  Rng rng(6);
  expect_gradients_match([](G& g, const V& v) { return ops::concat(g, {v[0], v[1]}, 1); },
                         {random_tensor({2, 2, 3}, rng), random_tensor({2, 1, 3}, rng)});
  expect_gradients_match([](G& g, const V& v) { return ops::strided_slice(g, v[0], 2, 1, 2, 3); },
                         {random_tensor({1, 2, 7, 2, 2}, rng)});
  expect_gradients_match([](G& g, const V& v) { return ops::broadcast_thw(g, v[0], 2, 3, 2); },
                         {random_tensor({2, 3}, rng)});
  expect_gradients_match([](G& g, const V& v) { return ops::unpool2x(g, v[0]); },
                         {random_tensor({1, 2, 2, 2, 3}, rng)});
  expect_gradients_match([](G& g, const V& v) { return ops::downsample(g, v[0]); },
                         {random_tensor({1, 2, 3, 5, 4}, rng)});
  expect_gradients_match([](G& g, const V& v) { return ops::gather_rows(g, v[0], {2, 0, 2}); },
                         {random_tensor({3, 4}, rng)});
  expect_gradients_match([](G& g, const V& v) { return ops::reshape(g, v[0], {6, 2}); },
                         {random_tensor({3, 4}, rng)});
}

TEST(OpsGrad, Normalization) {
  Rng rng(7);
  expect_gradients_match([](G& g, const V& v) { return ops::batch_normalize(g, v[0], 2e-5); },
                         {random_tensor({3, 2, 2, 2, 2}, rng)}, 7, 1e-5, 1e-5);
  const std::vector<double> mean{0.1, -0.2}, var{0.5, 2.0};
  expect_gradients_match(
      [&](G& g, const V& v) { return ops::fixed_normalize(g, v[0], std::span<const double>(mean),
                                                          std::span<const double>(var), 2e-5); },
      {random_tensor({2, 2, 1, 2, 2}, rng)});
  expect_gradients_match([](G& g, const V& v) { return ops::channel_affine(g, v[0], v[1], v[2]); },
                         {random_tensor({2, 3, 1, 2, 2}, rng), random_tensor({3}, rng),
                          random_tensor({3}, rng)});
  expect_gradients_match([](G& g, const V& v) { return ops::channel_affine(g, v[0], v[1], v[2]); },
                         {random_tensor({2, 3, 1, 2, 2}, rng), random_tensor({2, 3}, rng),
                          random_tensor({2, 3}, rng)});
}

TEST(Ops, DownsampleAveragesWithFrontPadding) {
  G g(false);
  Tensor<double> x({1, 1, 3, 1, 1}, std::vector<double>{2, 4, 6});
  const Tensor<double>& y = g.value(ops::downsample(g, g.leaf(x)));
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 1, 1}));
  EXPECT_DOUBLE_EQ(y[0], 1.0);  // (0 + 2) / 2
  EXPECT_DOUBLE_EQ(y[1], 5.0);  // (4 + 6) / 2
}

TEST(Ops, DownsampleLeavesUnitAxesAlone) {
  G g(false);
  Tensor<double> x({1, 1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  const Tensor<double>& y = g.value(ops::downsample(g, g.leaf(x)));
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y[0], 2.5);
}

TEST(Ops, ConvMatchesDirectLoop) {
  Rng rng(8);
  auto x = random_tensor({1, 2, 3, 4, 4}, rng), w = random_tensor({3, 2, 3, 3, 3}, rng);
  G g(false);
  const Tensor<double>& y = g.value(ops::conv3d(g, g.leaf(x), g.leaf(w), Var{}, {1, 1, 1}));
  for (Index co = 0; co < 3; ++co)
    for (Index t = 0; t < 3; ++t)
      for (Index i = 0; i < 4; ++i)
        for (Index j = 0; j < 4; ++j) {
          double acc = 0;
          for (Index ci = 0; ci < 2; ++ci)
            for (Index a = 0; a < 3; ++a)
              for (Index b = 0; b < 3; ++b)
                for (Index c = 0; c < 3; ++c) {
                  const Index tt = t + a - 1, ii = i + b - 1, jj = j + c - 1;
                  if (tt < 0 || tt >= 3 || ii < 0 || ii >= 4 || jj < 0 || jj >= 4) continue;
                  acc += w[(((co * 2 + ci) * 3 + a) * 3 + b) * 3 + c] * x.at(0, ci, tt, ii, jj);
                }
          EXPECT_NEAR(y.at(0, co, t, i, j), acc, 1e-12);
        }
}

TEST(Ops, DualGemmCarriesTangent) {
  using D = Dual<double>;
  Graph<D> g(false);
  Tensor<D> x({1, 2}, std::vector<D>{D(1, 1), D(2, 0)});
  Tensor<D> w({1, 2}, std::vector<D>{D(3, 0), D(4, 1)});
  const Tensor<D>& y = g.value(ops::linear(g, g.leaf(x), g.leaf(w), Var{}));
  EXPECT_DOUBLE_EQ(y[0].v, 11.0);
  EXPECT_DOUBLE_EQ(y[0].d, 3.0 + 2.0);
}

}  // namespace
}  // namespace vidgan
