#include "common.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace hs_test;

namespace {
BoundaryMesh unit_circle(int n) { return build_boundary_mesh(DomainShape::disk({0.0, 0.0}, 1.0), n); }
}  // namespace

TEST(BoundaryNorm, ConstantOnUnitCircle) {
  const BoundaryMesh m = unit_circle(32);
  const Eigen::VectorXd c = Eigen::VectorXd::Constant(32, -1.7);
  for (double s : {-0.5, 0.0, 0.5}) EXPECT_NEAR(boundary_norm(m, c, s), 1.7 * std::sqrt(kTwoPi), 1e-12);
}

TEST(BoundaryNorm, SingleCosineMode) {
  const BoundaryMesh m = unit_circle(64);
  for (int k : {1, 3, 7}) {
    Eigen::VectorXd v(64);
    for (int i = 0; i < 64; ++i) v[i] = std::cos(k * m.angles[std::size_t(i)]);
    for (double s : {-0.5, 0.0, 0.5})
      EXPECT_NEAR(boundary_norm(m, v, s), std::sqrt(kPi) * std::pow(1.0 + k * k, 0.5 * s), 1e-12);
  }
}

TEST(BoundaryNorm, EndpointsAreEuclidean) {
  const BoundaryMesh m = build_boundary_mesh(DomainShape::interval(0.0, 1.0), 2);
  EXPECT_DOUBLE_EQ(boundary_norm(m, Eigen::Vector2d(3.0, 4.0), 0.5), 5.0);
  EXPECT_DOUBLE_EQ(boundary_norm(m, Eigen::Vector2d(3.0, 4.0), -0.5), 5.0);
}

TEST(BoundaryNorm, LengthMismatchThrows) {
  EXPECT_THROW(boundary_norm(unit_circle(16), Eigen::VectorXd::Ones(15), 0.5), ArgumentError);
}

TEST(BoundaryNorm, OrderingScalingAndDuality) {
  const BoundaryMesh m = build_boundary_mesh(DomainShape::star({0.0, 0.0}, 1.0, {0.0, 0.1}, {0.0, 0.0, 0.05}), 48);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd u(48), v(48);
    for (int i = 0; i < 48; ++i) {
      u[i] = g(rng);
      v[i] = g(rng);
    }
    const double nm = boundary_norm(m, u, -0.5), n0 = boundary_norm(m, u, 0.0), np = boundary_norm(m, u, 0.5);
    EXPECT_LE(nm, n0 * (1 + 1e-14));
    EXPECT_LE(n0, np * (1 + 1e-14));
    EXPECT_NEAR(boundary_norm(m, -2.5 * u, 0.5), 2.5 * np, 1e-12 * np);
    EXPECT_GT(nm, 0.0);
    // pairing in the parameter measure L/(2π) dθ
    const double pairing = m.length() / 48.0 * u.dot(v);
    EXPECT_LE(std::abs(pairing), boundary_norm(m, u, 0.5) * boundary_norm(m, v, -0.5) * (1 + 1e-12));
  }
}

TEST(BoundaryNorm, SquaredNormMatchesMatrixForm) {
  const BoundaryMesh m = unit_circle(24);
  const Eigen::MatrixXd G = boundary_norm_matrix(m, 0.5);
  Eigen::VectorXd v(24);
  for (int i = 0; i < 24; ++i) v[i] = std::sin(2.0 * m.angles[std::size_t(i)]) + 0.3;
  EXPECT_NEAR(std::sqrt(v.dot(G * v)), boundary_norm(m, v, 0.5), 1e-12);
}

TEST(SpaceTimeNorm, TimeConstantAndSine) {
  const BoundaryMesh m = unit_circle(32);
  const double T = 2.0;
  Eigen::VectorXd u0(32);
  for (int i = 0; i < 32; ++i) u0[i] = 1.0 + std::cos(m.angles[std::size_t(i)]);
  const double b = boundary_norm(m, u0, 0.5);
  const TimeGrid tg(40, T);
  Eigen::MatrixXd c(32, tg.size()), s(32, tg.size());
  for (int j = 0; j < tg.size(); ++j) {
    c.col(j) = u0;
    s.col(j) = std::sin(kPi * tg.node(j) / T) * u0;
  }
  EXPECT_NEAR(space_time_norm(m, tg, c, 0.5), std::sqrt(T) * b, 1e-12);
  // trapezoid integrates sin² over a full period exactly for J ≥ 2
  EXPECT_NEAR(space_time_norm(m, tg, s, 0.5), std::sqrt(T / 2.0) * b, 1e-3);
  EXPECT_EQ(space_time_norm(m, tg, Eigen::MatrixXd::Zero(32, tg.size()), 0.5), 0.0);
}

TEST(SpaceTimeNorm, RefinementStable) {
  auto field_norm = [](int nodes, int steps) {
    const BoundaryMesh m = build_boundary_mesh(DomainShape::star({0.0, 0.0}, 1.0, {0.0, 0.1}, {}), nodes);
    const TimeGrid tg(steps, 1.0);
    Eigen::MatrixXd v(nodes, tg.size());
    for (int j = 0; j < tg.size(); ++j)
      for (int i = 0; i < nodes; ++i)
        v(i, j) = std::exp(-tg.node(j)) * (1.0 + 0.5 * std::cos(m.angles[std::size_t(i)]) +
                                           0.2 * std::sin(3.0 * m.angles[std::size_t(i)]));
    return space_time_norm(m, tg, v, -0.5);
  };
  const double a = field_norm(32, 10), b = field_norm(64, 20);
  EXPECT_LT(rel(a, b), 1e-2);
}
