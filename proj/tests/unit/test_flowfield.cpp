#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "forecast/errors.hpp"
#include "forecast/flowfield.hpp"

using namespace forecast::flowfield;
using forecast::Tensor;

namespace {

Tensor gaussian(std::size_t rows, std::size_t cols, double r0, double c0, double sigma = 1.0) {
  Tensor y({rows, cols});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      const double dr = static_cast<double>(i) - r0, dc = static_cast<double>(j) - c0;
      y[i * cols + j] = std::exp(-(dr * dr + dc * dc) / (2 * sigma * sigma));
    }
  return y;
}

Tensor stack(const std::vector<Tensor>& frames) {
  const std::size_t rows = frames[0].dim(0), cols = frames[0].dim(1);
  Tensor out({frames.size(), rows, cols});
  for (std::size_t t = 0; t < frames.size(); ++t)
    std::copy(frames[t].raw(), frames[t].raw() + rows * cols, out.raw() + t * rows * cols);
  return out;
}

Tensor translating_blob(std::size_t steps) {
  std::vector<Tensor> frames;
  for (std::size_t t = 0; t < steps; ++t) frames.push_back(gaussian(8, 10, 3.5, 2.0 + t, 1.5));
  return stack(frames);
}

}  // namespace

TEST(ShiftedViews, ThreeByThreeDistinctEntries) {
  const Tensor y({3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  const auto v = shifted_views(y);
  EXPECT_EQ(v.up[0], 2.0);
  EXPECT_EQ(v.down[0], 8.0);
  EXPECT_EQ(v.left[0], 4.0);
  EXPECT_EQ(v.right[0], 6.0);
}

TEST(ShiftedViews, ConstantAndTooSmall) {
  const auto v = shifted_views(Tensor({4, 5}, 3.0));
  EXPECT_EQ(v.up.shape(), (forecast::Shape{2, 3}));
  for (const Tensor* t : {&v.up, &v.down, &v.left, &v.right})
    for (double x : t->data()) EXPECT_EQ(x, 3.0);
  EXPECT_THROW(shifted_views(Tensor({2, 5})), forecast::DomainError);
}

TEST(FlowMatrix, ConstantFieldIsZero) {
  const auto f = flow_matrix(Tensor({5, 6}, 4.5), Tensor({5, 6}, 4.5));
  EXPECT_EQ(f.shape(), (forecast::Shape{3, 4, 2}));
  for (double x : f.data()) EXPECT_EQ(x, 0.0);
}

TEST(FlowMatrix, ThreeByThreeHandOracle) {
  const Tensor y({3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  // same frame: vertical 2*5 - 2 - 8 = 0, horizontal 2*5 - 4 - 6 = 0
  const auto same = flow_matrix(y, y);
  EXPECT_EQ(same[0], 0.0);
  EXPECT_EQ(same[1], 0.0);
  const Tensor prev({3, 3}, std::vector<double>{0.5, 1, -2, 3, 9, 4, 1, 7, 2});
  const auto f = flow_matrix(y, prev);
  // y interior 5; up 1, down 7, left 3, right 4
  EXPECT_NEAR(f[0], (5.0 - 1) + (5.0 - 7), 1e-12);
  EXPECT_NEAR(f[1], (5.0 - 3) + (5.0 - 4), 1e-12);
  const auto g = flow_matrix(prev, prev);
  EXPECT_NEAR(g[0], 2 * 9.0 - 1 - 7, 1e-12);
  EXPECT_NEAR(g[1], 2 * 9.0 - 3 - 4, 1e-12);
}

TEST(FlowMatrix, FiveByFiveTranslatedBlob) {
  // unit Gaussian at (2, 1) moves to (2, 2); g(r^2) = exp(-r^2 / 2)
  const Tensor prev = gaussian(5, 5, 2, 1), cur = gaussian(5, 5, 2, 2);
  const auto f = flow_matrix(cur, prev);
  const auto g = [](double r2) { return std::exp(-r2 / 2); };
  auto at = [&](std::size_t i, std::size_t j, std::size_t c) { return f[((i - 1) * 3 + (j - 1)) * 2 + c]; };
  // centre (2, 2): y = 1; up/down prev at distance^2 2; left is the old peak; right at distance^2 4
  EXPECT_NEAR(at(2, 2, 0), 2 * (1 - g(2)), 1e-12);
  EXPECT_NEAR(at(2, 2, 1), (1 - 1) + (1 - g(4)), 1e-12);
  // leading edge (2, 3): y = g(1); up/down at distance^2 5; left g(1); right g(9)
  EXPECT_NEAR(at(2, 3, 0), 2 * (g(1) - g(5)), 1e-12);
  EXPECT_NEAR(at(2, 3, 1), (g(1) - g(1)) + (g(1) - g(9)), 1e-12);
  // trailing edge (2, 1): y = g(1); left g(1) and right g(1) -> no horizontal flow
  EXPECT_NEAR(at(2, 1, 1), 0.0, 1e-12);
  EXPECT_GT(at(2, 3, 1), 0.0);
  EXPECT_GT(at(2, 3, 1), at(2, 1, 1));
  // motion raises the horizontal component at the leading edge over the static field
  const auto still = flow_matrix(cur, cur);
  EXPECT_GT(at(2, 3, 1), still[((1) * 3 + 2) * 2 + 1]);
}

TEST(FlowMatrix, ShapeMismatch) {
  EXPECT_THROW(flow_matrix(Tensor({4, 4}), Tensor({4, 5})), forecast::DomainError);
}

TEST(FlowMatrix, ScalingAndShiftProperties) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor a({6, 7}), b({6, 7});
    for (double& x : a.data()) x = u(rng);
    for (double& x : b.data()) x = u(rng);
    const auto f = flow_matrix(a, b);
    Tensor as = a, bs = b, ac = a, bc = b;
    const double s = 0.1 + std::abs(u(rng)), c = u(rng) * 100;
    for (std::size_t i = 0; i < a.size(); ++i) {
      as[i] *= s;
      bs[i] *= s;
      ac[i] += c;
      bc[i] += c;
    }
    const auto fs = flow_matrix(as, bs), fc = flow_matrix(ac, bc);
    for (std::size_t v = 0; v < f.size() / 2; ++v) {
      const double n = std::hypot(f[2 * v], f[2 * v + 1]), ns = std::hypot(fs[2 * v], fs[2 * v + 1]);
      EXPECT_NEAR(fc[2 * v], f[2 * v], 1e-12 * (1 + std::abs(c)) * 10);
      EXPECT_NEAR(fc[2 * v + 1], f[2 * v + 1], 1e-12 * (1 + std::abs(c)) * 10);
      EXPECT_NEAR(ns, s * n, 1e-12 * (1 + s * n));
      if (n > 1e-12) {
        EXPECT_NEAR(fs[2 * v] / ns, f[2 * v] / n, 1e-9);
        EXPECT_NEAR(fs[2 * v + 1] / ns, f[2 * v + 1] / n, 1e-9);
      }
    }
  }
}

TEST(FlowSequence, ShapeAndZeroForStaticSeries) {
  const auto seq = flow_sequence(stack({Tensor({4, 4}, 1.0), Tensor({4, 4}, 1.0), Tensor({4, 4}, 1.0)}));
  EXPECT_EQ(seq.shape(), (forecast::Shape{2, 2, 2, 2}));
  for (double x : seq.data()) EXPECT_EQ(x, 0.0);
}

TEST(VectorAngle, Conventions) {
  EXPECT_EQ(vector_angle_degrees({0, 0}, {0, 0}), 0.0);
  EXPECT_EQ(vector_angle_degrees({0, 0}, {1, 0}), 90.0);
  EXPECT_NEAR(vector_angle_degrees({1, 0}, {0, 2}), 90.0, 1e-12);
  EXPECT_NEAR(vector_angle_degrees({1, 0}, {-1, 0}), 180.0, 1e-12);
  EXPECT_EQ(vector_angle_degrees({1, 2}, {1, 2}), 0.0);
}

TEST(Perturbation, IdentityGivesZeroAndUnitRatio) {
  const auto s = perturbation_diagnostic(translating_blob(5), [](double v, std::size_t, std::size_t) { return v; });
  EXPECT_EQ(s.mean_angle_degrees, 0.0);
  EXPECT_EQ(s.mean_magnitude_ratio, 1.0);
  EXPECT_EQ(s.vectors, 4u * 6 * 8);
}

TEST(Perturbation, PositiveScalingKeepsDirections) {
  for (double c : {0.3, 2.5, 40.0}) {
    const auto s =
        perturbation_diagnostic(translating_blob(5), [c](double v, std::size_t, std::size_t) { return c * v; });
    EXPECT_NEAR(s.mean_angle_degrees, 0.0, 1e-9);
    EXPECT_NEAR(s.mean_magnitude_ratio, c, 1e-9 * c);
  }
}

TEST(Perturbation, SignFlipReorientsVectors) {
  std::mt19937_64 rng(32);
  std::vector<double> signs(8 * 10);
  for (double& s : signs) s = (rng() & 1) ? 1.0 : -1.0;
  const auto s = perturbation_diagnostic(
      translating_blob(5), [&](double v, std::size_t i, std::size_t j) { return signs[i * 10 + j] * v; });
  EXPECT_GT(s.mean_angle_degrees, 0.0);
}
