#include "common.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace hs_test;

namespace {

CoefficientSpace disk_space(double radius, Vec2 centre, int nodes, int modes, int steps, double T = 1.0) {
  CoefficientSpace cs;
  cs.parts = {build_boundary_mesh(DomainShape::disk(centre, radius), nodes)};
  cs.modes = modes;
  cs.time = TimeGrid(steps, T);
  return cs;
}

Eigen::VectorXd random_coefficients(int n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

DensityFn smooth_density(unsigned seed, bool vanish_at_zero) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double a0 = u(rng), a1 = u(rng), a2 = u(rng), a3 = u(rng);
  return [=](std::size_t, double th, double t) {
    const double time = vanish_at_zero ? t * (1.0 + a3 * t) : 1.0 + a3 * t;
    return time * (1.0 + a0 * std::cos(th) + a1 * std::sin(th) + a2 * std::cos(2.0 * th));
  };
}

}  // namespace

TEST(SingleLayer, ZeroDensity) {
  const CoefficientSpace cs = disk_space(1.0, {0.0, 0.0}, 32, 4, 6);
  EXPECT_EQ(single_layer_evaluate(cs, Eigen::VectorXd::Zero(cs.size()), Vec2(0.2, 0.1), 0.7), 0.0);
  const OperatorMatrix K0 = single_layer_operator(cs, cs);
  EXPECT_EQ((K0.matrix * Eigen::VectorXd::Zero(cs.size())).norm(), 0.0);
  EXPECT_TRUE(K0.causal());
}

TEST(SingleLayer, OneEndpointOneHatMatchesKernelIntegral) {
  CoefficientSpace cs;
  cs.parts = {build_boundary_mesh(DomainShape::interval(0.0, 1.0), 2)};
  cs.time = TimeGrid(8, 1.0);
  const int j = 3;
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(cs.size());
  phi[cs.index(j, 0)] = 1.0;
  const double x = 0.3, t = 0.8, dt = cs.time.dt(), tj = cs.time.node(j);
  auto hat = [&](double tau) { return std::max(0.0, 1.0 - std::abs(tau - tj) / dt); };
  const double oracle = quad::adaptive([&](double tau) { return heat_kernel(1, x * x, t - tau) * hat(tau); },
                                       tj - dt, tj, 1e-14) +
                        quad::adaptive([&](double tau) { return heat_kernel(1, x * x, t - tau) * hat(tau); }, tj,
                                       tj + dt, 1e-14);
  EXPECT_NEAR(single_layer_evaluate(cs, phi, Vec2(x, 0.0), t), oracle, 1e-10 * oracle);
}

TEST(SingleLayer, SatisfiesHeatEquationAtInteriorProbes) {
  const CoefficientSpace cs = disk_space(1.0, {0.0, 0.0}, 32, 3, 8);
  const Eigen::VectorXd phi = random_coefficients(cs.size(), 5);
  auto u = [&](double x, double y, double t) { return single_layer_evaluate(cs, phi, Vec2(x, y), t); };
  const double h = 0.02, k = 0.005;
  for (const Vec2& p : {Vec2(0.1, 0.2), Vec2(-0.4, 0.3), Vec2(0.5, -0.5)}) {
    const double t = 0.6, x = p.x(), y = p.y();
    // fourth-order central differences
    auto d2 = [&](double m2, double m1, double c, double p1, double p2) {
      return (-m2 + 16.0 * m1 - 30.0 * c + 16.0 * p1 - p2) / (12.0 * h * h);
    };
    const double c = u(x, y, t);
    const double lap = d2(u(x - 2 * h, y, t), u(x - h, y, t), c, u(x + h, y, t), u(x + 2 * h, y, t)) +
                       d2(u(x, y - 2 * h, t), u(x, y - h, t), c, u(x, y + h, t), u(x, y + 2 * h, t));
    const double ut = (u(x, y, t - 2 * k) - 8.0 * u(x, y, t - k) + 8.0 * u(x, y, t + k) - u(x, y, t + 2 * k)) /
                      (12.0 * k);
    EXPECT_LE(std::abs(ut - lap), 1e-3 * std::max(std::abs(ut), std::abs(lap)));
  }
}

TEST(BoundaryOperatorN, ZeroAndCausal) {
  const CoefficientSpace cs = disk_space(1.0, {0.0, 0.0}, 32, 4, 6);
  NDiagnostics diag;
  const OperatorMatrix N = operator_n(cs, {}, &diag);
  EXPECT_EQ((N.matrix * Eigen::VectorXd::Zero(cs.size())).norm(), 0.0);
  EXPECT_TRUE(N.causal());
  EXPECT_LE(diag.ratio, 0.75);
}

TEST(BoundaryOperatorN, InteriorFluxLimitMinusNIsHalfDensity) {
  const CoefficientSpace cs = disk_space(1.0, {0.0, 0.0}, 32, 3, 6);
  const OperatorMatrix N = operator_n(cs);
  const auto base = [&] {
    std::vector<LayerTarget> t;
    for (std::size_t i = 0; i < cs.parts[0].size(); ++i) t.push_back({cs.parts[0].nodes[i], cs.parts[0].normals[i]});
    return t;
  }();
  std::vector<double> hs{0.02, 0.01, 0.005};
  std::vector<Eigen::MatrixXd> interior;
  for (double h : hs) {
    std::vector<LayerTarget> tg;
    for (const auto& b : base) tg.push_back({b.point - h * b.normal, b.normal});
    interior.push_back(
        detail::assemble_blocks(layer_kernel(cs, tg, LayerKernel::target_flux), cs, cs, false));
  }
  // Richardson on the h, h/2, h/4 sequence (error expansion in powers of h)
  const Eigen::MatrixXd r1 = 2.0 * interior[1] - interior[0], r2 = 2.0 * interior[2] - interior[1];
  const Eigen::MatrixXd limit = (4.0 * r2 - r1) / 3.0;
  const Eigen::VectorXd phi = random_coefficients(cs.size(), 9);
  const Eigen::VectorXd lhs = limit * phi - N.matrix * phi;
  EXPECT_LE((lhs - 0.5 * phi).norm(), 1e-2 * phi.norm());
}

TEST(BoundaryOperatorN, OffsetExtrapolationMatchesPrincipalValue) {
  const CoefficientSpace cs = disk_space(1.0, {0.0, 0.0}, 32, 3, 6);
  NOptions pv;
  pv.method = NMethod::principal_value;
  const OperatorMatrix a = operator_n(cs), b = operator_n(cs, pv);
  EXPECT_LE((a.matrix - b.matrix).norm(), 1e-2 * b.matrix.norm());
}

TEST(BoundaryEquation, RoundTripAndZeroData) {
  const CoefficientSpace cs = disk_space(1.0, {0.0, 0.0}, 32, 4, 8);
  const OperatorMatrix N = operator_n(cs);
  const Eigen::VectorXd phi0 = random_coefficients(cs.size(), 3);
  const Eigen::VectorXd f = 0.5 * phi0 + N.matrix * phi0;
  double residual = 1.0;
  const Eigen::VectorXd phi = solve_boundary_equation(N, f, &residual);
  EXPECT_LE((phi - phi0).norm(), 1e-8 * phi0.norm());
  EXPECT_LE(residual, 1e-8);
  EXPECT_EQ(solve_boundary_equation(N, Eigen::VectorXd::Zero(cs.size())).norm(), 0.0);
  EXPECT_THROW(solve_boundary_equation(N, Eigen::VectorXd::Zero(3)), ArgumentError);
}

namespace {
double representation_error(double h, int steps) {
  Scene s = reference_scene();
  s.cavities.clear();
  Discretization d = reference_discretization();
  d.h = h;
  d.steps = steps;
  d.modes = 4;
  d.outer_nodes = 32;
  const CoefficientSpace flux = outer_flux_space(s, d), trace = outer_trace_space(s, d);
  const OperatorMatrix L0 = assemble_ntd(s, d, false);
  const OperatorMatrix N = operator_n(flux);
  const OperatorMatrix K0 = single_layer_operator(flux, trace);
  double worst = 0.0;
  for (unsigned seed : {1u, 2u, 3u}) {
    const Eigen::VectorXd f = random_coefficients(flux.size(), seed);
    const Eigen::VectorXd u_layer = K0.matrix * solve_boundary_equation(N, f);
    const Eigen::VectorXd u_pde = L0.matrix * f;
    worst = std::max(worst, (u_layer - u_pde).norm() / u_pde.norm());
  }
  return worst;
}
}  // namespace

TEST(BoundaryEquation, SingleLayerReproducesForwardTrace) {
  const double coarse = representation_error(1.0 / 16, 8);
  const double fine = representation_error(1.0 / 32, 8);
  EXPECT_LE(fine, 5e-2);
  EXPECT_LT(fine, coarse);
}

TEST(OperatorK, ZeroAndCausal) {
  const CoefficientSpace outer = disk_space(1.0, {0.0, 0.0}, 32, 3, 6);
  const CoefficientSpace cav = disk_space(0.3, {0.2, 0.0}, 32, 3, 6);
  const OperatorMatrix K = operator_k(outer, cav);
  EXPECT_EQ((K.matrix * Eigen::VectorXd::Zero(outer.size())).norm(), 0.0);
  EXPECT_TRUE(K.causal());
  EXPECT_GT(K.matrix.norm(), 0.0);
  const OperatorMatrix Ks = operator_kstar(cav, outer);
  EXPECT_EQ((Ks.matrix * Eigen::VectorXd::Zero(cav.size())).norm(), 0.0);
  EXPECT_TRUE(Ks.anticausal());
  EXPECT_FALSE(Ks.causal());
}

TEST(OperatorK, LayerFactorizationMatchesPdeH) {
  const Scene s = reference_scene();
  Discretization d = reference_discretization();
  d.steps = 10;
  d.modes = 6;
  d.outer_nodes = 32;
  d.cavity_nodes = 32;
  const OperatorMatrix H = operator_h(s, d);
  const OperatorMatrix N = operator_n(H.domain);
  const OperatorMatrix K = operator_k(H.domain, H.codomain);
  for (unsigned seed : {11u, 12u, 13u}) {
    const Eigen::VectorXd f = random_coefficients(H.domain.size(), seed);
    const Eigen::VectorXd hf = H.matrix * f;
    const Eigen::VectorXd kf = K.matrix * solve_boundary_equation(N, f);
    EXPECT_LE((hf - kf).norm(), 5e-2 * hf.norm()) << "seed " << seed;
  }
}

TEST(OperatorKstar, AdjointIdentityOnRandomPairs) {
  const Scene s = reference_scene();
  const std::vector<BoundaryMesh> outer{build_boundary_mesh(s.outer, 32)};
  const std::vector<BoundaryMesh> cav{build_boundary_mesh(s.cavities[0], 32)};
  for (unsigned k = 0; k < 4; ++k) {
    const AdjointPairing pr = adjoint_pairings(outer, cav, smooth_density(2 * k, true), smooth_density(2 * k + 1, true),
                                               s.final_time);
    EXPECT_GT(std::abs(pr.k_eta), 0.0);
    EXPECT_LE(std::abs(pr.k_eta - pr.psi_kstar), 1e-8 * pr.psi_norm * pr.eta_norm);
  }
}

TEST(OperatorKstar, ZeroDensityPairing) {
  const Scene s = reference_scene();
  const std::vector<BoundaryMesh> outer{build_boundary_mesh(s.outer, 16)};
  const std::vector<BoundaryMesh> cav{build_boundary_mesh(s.cavities[0], 16)};
  const DensityFn zero = [](std::size_t, double, double) { return 0.0; };
  const AdjointPairing pr = adjoint_pairings(outer, cav, smooth_density(1, true), zero, s.final_time);
  EXPECT_EQ(pr.k_eta, 0.0);
  EXPECT_EQ(pr.psi_kstar, 0.0);
}

TEST(JumpRelation, ZeroDensity) {
  const std::vector<BoundaryMesh> cav{build_boundary_mesh(DomainShape::disk({0.2, 0.0}, 0.3), 64)};
  const DensityFn zero = [](std::size_t, double, double) { return 0.0; };
  const JumpLimits jl = jump_relation_limits(cav, zero, 0, 0.4, 0.5, 1.0, {0.04, 0.02, 0.01, 0.005});
  EXPECT_EQ(jl.inner, 0.0);
  EXPECT_EQ(jl.outer, 0.0);
  EXPECT_EQ(jl.pv, 0.0);
}

TEST(JumpRelation, OneSidedLimitsAtRandomProbes) {
  const std::vector<BoundaryMesh> cav{build_boundary_mesh(DomainShape::disk({0.2, 0.0}, 0.3), 64)};
  const DensityFn eta = smooth_density(21, false);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> th(0.0, kTwoPi), tt(0.2, 0.8);
  double emax = 0.0, dev = 0.0, jump = 0.0;
  for (int k = 0; k < 10; ++k) {
    const double theta = th(rng), s = tt(rng);
    const JumpLimits jl = jump_relation_limits(cav, eta, 0, theta, s, 1.0, {0.04, 0.02, 0.01, 0.005});
    emax = std::max(emax, std::abs(jl.eta));
    // ν points out of D, so x - hν lies inside the cavity
    dev = std::max({dev, std::abs(jl.inner - jl.pv + 0.5 * jl.eta), std::abs(jl.outer - jl.pv - 0.5 * jl.eta)});
    jump = std::max(jump, std::abs((jl.outer - jl.inner) - jl.eta));
  }
  EXPECT_LE(dev, 1e-2 * emax);
  EXPECT_LE(jump, 2e-2 * emax);
}

TEST(JumpRelation, PsiDensityTendsToTraceConstant) {
  const auto eta = [](double t) { return std::sin(2.0 * t) + 0.5; };
  for (int n : {1, 2}) {
    const double target = trace_constant_gamma(n) * eta(0.4);
    double prev = std::numeric_limits<double>::infinity();
    for (double r : {1e-1, 1e-2, 1e-3, 1e-4}) {
      const double err = std::abs(psi_density(n, r, 0.4, 1.0, eta) - target);
      EXPECT_LT(err, prev) << "n=" << n << " r=" << r;
      prev = err;
    }
    EXPECT_LE(prev, 1e-3 * std::abs(target));
  }
}

TEST(JumpRelation, RejectsShortOffsetSequence) {
  const std::vector<BoundaryMesh> cav{build_boundary_mesh(DomainShape::disk({0.2, 0.0}, 0.3), 32)};
  EXPECT_THROW(jump_relation_limits(cav, smooth_density(1, false), 0, 0.0, 0.5, 1.0, {0.01}), ArgumentError);
}
