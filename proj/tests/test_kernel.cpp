#include "common.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace hs_test;

TEST(FundamentalSolution, CausalityIsExact) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    const Vec2 x(u(rng), u(rng)), y(u(rng), u(rng));
    const double s = u(rng), t = s - std::abs(u(rng));
    for (int n = 1; n <= 3; ++n) {
      EXPECT_EQ(fundamental_solution(n, x, t, y, s), 0.0);
      EXPECT_EQ(normal_derivative_kernel(n, x, t, y, s, Vec2(1.0, 0.0)), 0.0);
    }
  }
}

TEST(FundamentalSolution, OneDimensionalUnitValue) {
  EXPECT_NEAR(fundamental_solution(1, Vec2(0.3, 0.0), 1.0 / (4.0 * kPi), Vec2(0.3, 0.0), 0.0), 1.0, 1e-15);
}

TEST(FundamentalSolution, PlanarMassIsOne) {
  const Vec2 y(0.1, -0.2);
  const double s = 0.0, t = 0.05;
  // tensor Gauss on [-L, L]² around y, split into panels
  const double L = 2.0;
  const int panels = 16;
  double acc = 0.0;
  const auto& r = quad::gauss_legendre<20>();
  const double w = 2.0 * L / panels;
  for (int px = 0; px < panels; ++px)
    for (int py = 0; py < panels; ++py)
      for (std::size_t i = 0; i < r.size(); ++i)
        for (std::size_t j = 0; j < r.size(); ++j) {
          const Vec2 x(y.x() - L + (px + 0.5 + 0.5 * r.nodes[i]) * w, y.y() - L + (py + 0.5 + 0.5 * r.nodes[j]) * w);
          acc += 0.25 * w * w * r.weights[i] * r.weights[j] * fundamental_solution(2, x, t, y, s);
        }
  EXPECT_NEAR(acc, 1.0, 1e-6);
}

TEST(FundamentalSolution, UnderflowGivesExactZero) {
  const double v = fundamental_solution(2, Vec2(10.0, 0.0), 1e-4, Vec2(0.0, 0.0), 0.0);
  EXPECT_EQ(v, 0.0);
  EXPECT_FALSE(std::isnan(v));
}

TEST(FundamentalSolution, SpatialSymmetry) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 50; ++k) {
    const Vec2 x(u(rng), u(rng)), y(u(rng), u(rng));
    const double t = 0.5 + 0.5 * u(rng) + 1.0;
    EXPECT_DOUBLE_EQ(fundamental_solution(2, x, t, y, 0.3), fundamental_solution(2, y, t, x, 0.3));
  }
}

TEST(FundamentalSolution, HeatEquationResidual) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  const Vec2 y(0.0, 0.0);
  const double s = 0.0, e = 1e-3;
  for (int k = 0; k < 20; ++k) {
    const Vec2 x(u(rng), u(rng));
    const double t = 0.2 + 0.1 * (u(rng) + 0.5);
    auto G = [&](const Vec2& p, double tt) { return fundamental_solution(2, p, tt, y, s); };
    // fourth-order central differences
    auto d2 = [&](const Vec2& dir) {
      return (-G(x + 2 * e * dir, t) + 16 * G(x + e * dir, t) - 30 * G(x, t) + 16 * G(x - e * dir, t) -
              G(x - 2 * e * dir, t)) /
             (12 * e * e);
    };
    const double gt = (-G(x, t + 2 * e) + 8 * G(x, t + e) - 8 * G(x, t - e) + G(x, t - 2 * e)) / (12 * e);
    const double lap_x = d2(Vec2(1, 0)), lap_y = d2(Vec2(0, 1));
    const double scale = std::max({std::abs(gt), std::abs(lap_x), std::abs(lap_y)});
    EXPECT_LE(std::abs(gt - lap_x - lap_y), 1e-4 * scale);
  }
}

TEST(NormalDerivativeKernel, PerpendicularNormalGivesZero) {
  const Vec2 x(0.3, 0.1), y(0.3, -0.4);
  EXPECT_EQ(normal_derivative_kernel(2, x, 1.0, y, 0.2, Vec2(1.0, 0.0)), 0.0);
}

TEST(NormalDerivativeKernel, MatchesFiniteDifference) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 30; ++k) {
    const Vec2 x(u(rng), u(rng)), y(u(rng), u(rng));
    const double ang = kPi * u(rng);
    const Vec2 nu(std::cos(ang), std::sin(ang));
    const double s = 0.1, t = 0.4 + 0.3 * std::abs(u(rng));
    const double e = 1e-5;
    const double fd = (fundamental_solution(2, x + e * nu, t, y, s) - fundamental_solution(2, x - e * nu, t, y, s)) / (2 * e);
    const double m = normal_derivative_kernel(2, x, t, y, s, nu);
    EXPECT_NEAR(m, fd, 1e-6 * std::max(std::abs(m), 1e-3 * fundamental_solution(2, x, t, y, s)));
  }
}

namespace {
// x, y on the unit circle with chord 2^{-k/2} and s - t = 2^{-k}; normals are the circle normals.
std::vector<KernelSample> diagonal_sequence() {
  std::vector<KernelSample> v;
  for (int k = 1; k <= 20; ++k) {
    const double chord = std::pow(2.0, -0.5 * k);
    const double phi = 2.0 * std::asin(0.5 * chord);
    KernelSample sm;
    sm.t = 0.0;
    sm.s = std::pow(2.0, -k);
    sm.x = Vec2(1.0, 0.0);
    sm.y = Vec2(std::cos(phi), std::sin(phi));
    sm.nu_x = sm.x;
    sm.nu_y = sm.y;
    v.push_back(sm);
  }
  return v;
}
}  // namespace

TEST(KernelDecayBounds, SingleFarSampleEqualsDirectEvaluation) {
  KernelSample sm;
  sm.x = Vec2(0.0, 0.0);
  sm.y = Vec2(2.0, 0.0);
  sm.t = 0.0;
  sm.s = 1.0;
  sm.nu_y = Vec2(1.0, 0.0);
  const BoundReport r = check_kernel_decay_bounds(2, 0.25, {sm});
  const double direct = std::abs(normal_derivative_kernel(2, sm.y, sm.s, sm.x, sm.t, sm.nu_y)) * std::pow(1.0, 0.25) *
                        std::pow(2.0, 2.0 - 0.5);
  EXPECT_NEAR(r.m_sup, direct, 1e-14 * direct);
  EXPECT_TRUE(std::isfinite(r.dm_sup));
}

TEST(KernelDecayBounds, DiagonalSequenceStabilizes) {
  const BoundReport r = check_kernel_decay_bounds(2, 0.25, diagonal_sequence());
  EXPECT_LE(r.m_tail_spread, 2.0);
  EXPECT_LE(r.dm_tail_spread, 2.0);
  EXPECT_TRUE(r.bounded);
}

TEST(KernelDecayBounds, ExtremeExponentsBounded) {
  for (double a : {0.01, 0.49}) {
    const BoundReport r = check_kernel_decay_bounds(2, a, diagonal_sequence());
    EXPECT_TRUE(r.bounded) << "alpha=" << a;
  }
}

TEST(KernelDecayBounds, ArgumentErrors) {
  EXPECT_THROW(check_kernel_decay_bounds(2, 0.25, {}), ArgumentError);
  EXPECT_THROW(check_kernel_decay_bounds(2, 0.5, diagonal_sequence()), ArgumentError);
}

TEST(TraceConstant, MatchesClosedForms) {
  // independent oracle: Gamma-function values of the radial moments
  for (int n = 1; n <= 3; ++n) {
    const double moment = 0.5 * std::tgamma(0.5 * n);
    EXPECT_NEAR(trace_constant_gamma(n), moment / std::pow(std::sqrt(kPi), n), 1e-15);
  }
  EXPECT_NEAR(trace_constant_gamma(1), 0.5, 1e-10);
  EXPECT_NEAR(trace_constant_gamma(2), 1.0 / (2.0 * kPi), 1e-10);
  EXPECT_NEAR(trace_constant_gamma(3), 1.0 / (4.0 * kPi), 1e-10);
  EXPECT_THROW(trace_constant_gamma(4), ArgumentError);
}
