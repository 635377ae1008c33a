#include "common.hpp"

#include <boost/math/special_functions/bessel.hpp>
#include <gtest/gtest.h>

#include <random>

using namespace hs_test;

namespace {

// x² - x + 1/6 = Σ_m cos(2πmx)/(π²m²)
double bernoulli2(double x) { return x * x - x + 1.0 / 6.0; }

// Unit inward flux at both ends of (0,1), zero initial data.
double step_response_1d(double x, double t) {
  double u = 2.0 * t + bernoulli2(x);
  for (int m = 1; m <= 200; ++m)
    u -= std::exp(-4.0 * kPi * kPi * m * m * t) * std::cos(kTwoPi * m * x) / (kPi * kPi * m * m);
  return u;
}

// Flux ramping linearly from 0 to 1 over (0, dt), then constant: Duhamel average of the step response.
double ramp_response_1d(double x, double t, double dt) {
  double u = 2.0 * (t * dt - 0.5 * dt * dt) + bernoulli2(x) * dt;
  for (int m = 1; m <= 200; ++m) {
    const double a = 4.0 * kPi * kPi * m * m;
    u -= std::cos(kTwoPi * m * x) / (kPi * kPi * m * m) * (std::exp(-a * (t - dt)) - std::exp(-a * t)) / a;
  }
  return u / dt;
}

// Unit disk, unit inward flux: 2t + r²/2 - 1/4 - Σ c_k e^{-j_k² t} J0(j_k r), j_k zeros of J1.
double disk_response(double r, double t) {
  double u = 2.0 * t + 0.5 * r * r - 0.25;
  for (int k = 1; k <= 40; ++k) {
    const double j = boost::math::cyl_bessel_j_zero(1.0, k);
    // ∫₀¹ (r²/2 - 1/4) J0(jr) r dr = J0(j)/j² and ∫₀¹ J0(jr)² r dr = J0(j)²/2 when J1(j) = 0
    const double c = 2.0 / (j * j * boost::math::cyl_bessel_j(0, j));
    u -= c * std::exp(-j * j * t) * boost::math::cyl_bessel_j(0, j * r);
  }
  return u;
}

SpaceTimeBoundaryField constant_flux(const BoundaryMesh& m, const TimeGrid& tg, double v) {
  SpaceTimeBoundaryField f(m, tg);
  f.values.setConstant(v);
  return f;
}

Discretization disc_1d(double h, int steps, TimeScheme scheme = TimeScheme::crank_nicolson, int substeps = 4) {
  Discretization d;
  d.h = h;
  d.steps = steps;
  d.solver.scheme = scheme;
  d.solver.substeps = substeps;
  return d;
}

}  // namespace

TEST(HeatSolver, ZeroFluxGivesZeroField) {
  const Scene s = reference_scene();
  Discretization d = reference_discretization();
  d.h = 1.0 / 16;
  d.steps = 5;
  const HeatSolver solver = make_solver(s, d);
  const auto outer = outer_boundary_mesh(s, d);
  std::vector<SpaceTimeBoundaryField> cav;
  for (const auto& bm : cavity_boundary_meshes(s, d)) cav.emplace_back(bm, solver.time());
  const HeatField u = solve_heat_neumann(solver, SpaceTimeBoundaryField(outer, solver.time()), cav);
  EXPECT_EQ(u.values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(HeatSolver, OneDimensionalCosineSeriesOracle) {
  const Scene s = interval_scene(0.4, 0.6, false);
  const Discretization d = disc_1d(0.0125, 40);
  const HeatSolver solver = make_solver(s, d);
  const auto outer = outer_boundary_mesh(s, d);
  EnergyReport rep;
  const HeatField u = solve_heat_neumann(solver, constant_flux(outer, solver.time(), 1.0), {}, &rep);
  const TimeGrid& tg = solver.time();
  // constant-in-time flux data starts at t = 0, so the mass is exactly 2t
  for (int j = 0; j < tg.size(); ++j) EXPECT_NEAR(u.mass(j), 2.0 * tg.node(j), 1e-12);
  double err = 0.0, scale = 0.0;
  for (std::size_t c = 0; c < solver.mesh().size(); ++c) {
    const double x = solver.mesh().centroids[c].x();
    err = std::max(err, std::abs(u.values(Eigen::Index(c), tg.steps) - step_response_1d(x, 1.0)));
    scale = std::max(scale, std::abs(step_response_1d(x, 1.0)));
  }
  EXPECT_LE(err / scale, 1e-3);
  EXPECT_LE(rep.relative(), 1e-10);
}

TEST(HeatSolver, DiskRadialBesselOracle) {
  Scene s = reference_scene();
  s.cavities.clear();
  s.final_time = 0.25;
  Discretization d = reference_discretization();
  const HeatSolver solver = make_solver(s, d);
  const auto outer = outer_boundary_mesh(s, d);
  EnergyReport rep;
  const HeatField u = solve_heat_neumann(solver, constant_flux(outer, solver.time(), 1.0), {}, &rep);
  const TimeGrid& tg = solver.time();
  for (int j = 0; j < tg.size(); ++j) EXPECT_NEAR(u.mass(j), kTwoPi * tg.node(j), 1e-3 * kTwoPi * s.final_time);
  double err = 0.0, scale = 0.0;
  for (double r : {0.0, 0.2, 0.4, 0.6, 0.8, 0.95})
    for (double th : {0.0, 1.0, 2.5}) {
      const Vec2 p(r * std::cos(th), r * std::sin(th));
      const double exact = disk_response(r, s.final_time);
      err = std::max(err, std::abs(u.value_at(p, tg.steps) - exact));
      scale = std::max(scale, std::abs(exact));
    }
  EXPECT_LE(err / scale, 1e-2);
  EXPECT_LE(rep.relative(), 1e-10);
}

TEST(HeatSolver, EnergyBalanceWithCavities) {
  const Scene s = reference_scene();
  Discretization d = reference_discretization();
  d.steps = 10;
  for (TimeScheme scheme : {TimeScheme::backward_euler, TimeScheme::crank_nicolson}) {
    d.solver.scheme = scheme;
    const HeatSolver solver = make_solver(s, d);
    const auto outer = outer_boundary_mesh(s, d);
    SpaceTimeBoundaryField f(outer, solver.time());
    for (int j = 0; j < solver.time().size(); ++j)
      for (std::size_t i = 0; i < outer.size(); ++i)
        f.values(Eigen::Index(i), j) = std::cos(outer.angles[i]) + 0.3 * std::sin(3.0 * solver.time().node(j));
    std::vector<SpaceTimeBoundaryField> cav;
    for (const auto& bm : cavity_boundary_meshes(s, d)) cav.push_back(constant_flux(bm, solver.time(), 0.5));
    EnergyReport rep;
    solve_heat_neumann(solver, f, cav, &rep);
    EXPECT_GT(rep.max_load, 0.0);
    EXPECT_LE(rep.max_residual, 1e-10 * rep.max_load);
  }
}

namespace {

// u = e^{-t} cos 2x on (0,1): zero flux at 0, flux -2 sin2 e^{-t} at 1, source 3 e^{-t} cos 2x.
double mms_error(double h, int steps, TimeScheme scheme) {
  const Scene s = interval_scene(0.4, 0.6, false);
  const Discretization d = disc_1d(h, steps, scheme, 1);
  const HeatSolver solver = make_solver(s, d);
  const InteriorMesh& mesh = solver.mesh();
  const std::size_t n = mesh.size();
  std::vector<double> lo(n), hi(n);
  for (std::size_t c = 0; c < n; ++c) {
    const double x = mesh.centroids[c].x();
    lo[c] = c == 0 ? 0.0 : 0.5 * (x + mesh.centroids[c - 1].x());
    hi[c] = c + 1 == n ? 1.0 : 0.5 * (x + mesh.centroids[c + 1].x());
  }
  Eigen::VectorXd u0(n);
  for (std::size_t c = 0; c < n; ++c) u0[Eigen::Index(c)] = std::cos(2.0 * mesh.centroids[c].x());
  const auto& right = mesh.pieces[0][1];
  const HeatField u = solver.solve_interval(
      [&](double ta, double tb, Eigen::VectorXd& b) {
        const double et = (std::exp(-ta) - std::exp(-tb)) / (tb - ta);
        for (std::size_t c = 0; c < n; ++c)
          b[Eigen::Index(c)] += 3.0 * et * 0.5 * (std::sin(2.0 * hi[c]) - std::sin(2.0 * lo[c]));
        b[right.cell] += -2.0 * std::sin(2.0) * et;
      },
      &u0);
  double err = 0.0;
  for (std::size_t c = 0; c < n; ++c)
    err = std::max(err, std::abs(u.values(Eigen::Index(c), steps) - std::exp(-1.0) * std::cos(2.0 * mesh.centroids[c].x())));
  return err;
}

}  // namespace

TEST(HeatSolver, ManufacturedSolutionSpatialOrder) {
  const double e1 = mms_error(0.1, 400, TimeScheme::crank_nicolson);
  const double e2 = mms_error(0.05, 400, TimeScheme::crank_nicolson);
  const double e3 = mms_error(0.025, 400, TimeScheme::crank_nicolson);
  EXPECT_GE(std::log2(e1 / e2), 1.8);
  EXPECT_GE(std::log2(e2 / e3), 1.8);
}

TEST(HeatSolver, ManufacturedSolutionTemporalOrder) {
  const double e1 = mms_error(1.0 / 400, 10, TimeScheme::backward_euler);
  const double e2 = mms_error(1.0 / 400, 20, TimeScheme::backward_euler);
  const double e3 = mms_error(1.0 / 400, 40, TimeScheme::backward_euler);
  EXPECT_GE(std::log2(e1 / e2), 0.9);
  EXPECT_GE(std::log2(e2 / e3), 0.9);
}

TEST(AdjointField, ZeroDataGivesZeroField) {
  const Scene s = interval_scene();
  const HeatSolver solver = make_solver(s, disc_1d(0.05, 10));
  std::vector<SpaceTimeBoundaryField> g;
  for (const auto& bm : cavity_boundary_meshes(s, disc_1d(0.05, 10))) g.emplace_back(bm, solver.time());
  EXPECT_EQ(solve_adjoint_field(solver, g).values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(AdjointField, ImpulseAtCavityEndpoint) {
  const Scene s = interval_scene();
  const Discretization d = disc_1d(0.0125, 40);
  const HeatSolver solver = make_solver(s, d);
  const TimeGrid& tg = solver.time();
  std::vector<SpaceTimeBoundaryField> g;
  for (const auto& bm : cavity_boundary_meshes(s, d)) g.emplace_back(bm, tg);
  // ν points out of the cavity (toward x = 0 at 0.4), so a negative flux value pushes heat into Ω∖D̄
  g[0].values(0, 1) = -1.0;
  EnergyReport rep;
  const HeatField z = solve_adjoint_field(solver, g, &rep);
  const Eigen::SparseMatrix<double> T = solver.trace_operator(outer_boundary_mesh(s, d));
  std::vector<double> trace;
  for (int j = 0; j < tg.size(); ++j) trace.push_back((T * z.values.col(j))[0]);
  for (double v : trace) EXPECT_GE(v, -1e-14);
  const auto peak = std::size_t(std::max_element(trace.begin(), trace.end()) - trace.begin());
  EXPECT_GT(peak, 0u);
  EXPECT_LT(peak, trace.size() - 1);
  for (std::size_t j = 1; j <= peak; ++j) EXPECT_GE(trace[j], trace[j - 1] - 1e-14);
  for (std::size_t j = peak + 1; j < trace.size(); ++j) EXPECT_LE(trace[j], trace[j - 1] + 1e-14);
  // the hat at t_1 carries ∫ = dt of influx
  EXPECT_NEAR(z.mass(tg.steps), tg.dt(), 1e-12);
  EXPECT_LE(rep.relative(), 1e-10);
}

TEST(AdjointField, Linearity) {
  const Scene s = reference_scene();
  Discretization d = reference_discretization();
  d.h = 1.0 / 16;
  d.steps = 6;
  const HeatSolver solver = make_solver(s, d);
  const auto cm = cavity_boundary_meshes(s, d);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  std::vector<SpaceTimeBoundaryField> a{SpaceTimeBoundaryField(cm[0], solver.time())}, b = a, sum = a;
  for (Eigen::Index i = 0; i < a[0].values.size(); ++i) {
    a[0].values.data()[i] = g(rng);
    b[0].values.data()[i] = g(rng);
    sum[0].values.data()[i] = a[0].values.data()[i] + b[0].values.data()[i];
  }
  const Eigen::MatrixXd lhs = solve_adjoint_field(solver, sum).values;
  const Eigen::MatrixXd rhs = solve_adjoint_field(solver, a).values + solve_adjoint_field(solver, b).values;
  EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12 * rhs.cwiseAbs().maxCoeff());
}

TEST(NtDMap, EmptyCavityListMatchesCavityFree) {
  const Scene s = interval_scene(0.4, 0.6, false);
  const Discretization d = disc_1d(0.05, 10);
  const OperatorMatrix a = assemble_ntd(s, d, true), b = assemble_ntd(s, d, false);
  EXPECT_EQ((a.matrix - b.matrix).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(operator_norm(operator_f(a, b)), 0.0);
}

TEST(NtDMap, ConstantFluxColumnMatchesSeries) {
  const Scene s = interval_scene(0.4, 0.6, false);
  const Discretization d = disc_1d(0.0125, 40);
  const OperatorMatrix L = assemble_ntd(s, d, false);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(L.domain.size());
  const Eigen::VectorXd r = L.matrix * ones;
  const int J = L.codomain.steps();
  const double dt = L.codomain.time.dt();
  for (int j : {J / 4, J / 2, J}) {
    const double t = L.codomain.time.node(j);
    for (int e = 0; e < 2; ++e)
      EXPECT_LE(rel(r[L.codomain.index(j, e)], ramp_response_1d(double(e), t, dt)), 1e-3) << "j=" << j << " e=" << e;
  }
}

TEST(NtDMap, CausalBlockStructure) {
  const Scene s = reference_scene();
  Discretization d = reference_discretization();
  d.h = 1.0 / 16;
  d.steps = 6;
  d.modes = 4;
  d.outer_nodes = 32;
  d.cavity_nodes = 32;
  const OperatorMatrix ld = assemble_ntd(s, d, true), l0 = assemble_ntd(s, d, false);
  EXPECT_TRUE(ld.causal());
  EXPECT_TRUE(l0.causal());
  const OperatorMatrix F = operator_f(ld, l0);
  EXPECT_TRUE(F.causal());
  EXPECT_GT(operator_norm(F), 0.0);
  EXPECT_EQ((F.matrix * Eigen::VectorXd::Zero(F.domain.size())).norm(), 0.0);
}

TEST(NtDMap, FGrowsWithNestedCavities) {
  const Discretization d = disc_1d(0.0125, 20);
  double prev = 0.0;
  for (double half : {0.05, 0.1, 0.15}) {
    const Scene s = interval_scene(0.5 - half, 0.5 + half);
    const double n = operator_norm(operator_f(assemble_ntd(s, d, true), assemble_ntd(s, d, false)));
    EXPECT_GT(n, prev);
    prev = n;
  }
}

TEST(OperatorH, ZeroFluxAndRotationInvariance) {
  Scene s = reference_scene();
  s.cavities = {DomainShape::disk({0.0, 0.0}, 0.4)};
  Discretization d = reference_discretization();
  d.steps = 8;
  const OperatorMatrix H = operator_h(s, d);
  EXPECT_EQ((H.matrix * Eigen::VectorXd::Zero(H.domain.size())).norm(), 0.0);
  // spatially constant flux excites only the constant cavity mode
  Eigen::VectorXd f = Eigen::VectorXd::Zero(H.domain.size());
  for (int j = 1; j <= H.domain.steps(); ++j) f[H.domain.index(j, 0)] = 1.0;
  const Eigen::VectorXd hf = H.matrix * f;
  double constant = 0.0, other = 0.0;
  for (int j = 1; j <= H.codomain.steps(); ++j)
    for (int m = 0; m < H.codomain.spatial_dofs(); ++m)
      (m == 0 ? constant : other) = std::max(m == 0 ? constant : other, std::abs(hf[H.codomain.index(j, m)]));
  EXPECT_GT(constant, 0.0);
  EXPECT_LE(other, 2e-2 * constant);
}

TEST(Factorization, OneDimensionalResidual) {
  const Scene s = interval_scene();
  const Discretization d = disc_1d(0.0125, 40);
  const OperatorMatrix F = operator_f(assemble_ntd(s, d, true), assemble_ntd(s, d, false));
  const double r = verify_factorization(F, operator_a(s, d), operator_h(s, d));
  EXPECT_LE(r, 5e-2);
}

TEST(Factorization, NoCavityResidualIsZero) {
  const Scene s = interval_scene(0.4, 0.6, false);
  const Discretization d = disc_1d(0.05, 10);
  const OperatorMatrix F = operator_f(assemble_ntd(s, d, true), assemble_ntd(s, d, false));
  EXPECT_EQ(operator_norm(F), 0.0);
}

namespace {
double image_series(double x, double y, double tau) {
  double g = 0.0;
  for (int m = -20; m <= 20; ++m)
    g += heat_kernel(1, (x - y + 2.0 * m) * (x - y + 2.0 * m), tau) + heat_kernel(1, (x + y + 2.0 * m) * (x + y + 2.0 * m), tau);
  return g;
}
}  // namespace

TEST(GreenFunction, OneDimensionalImageSeries) {
  const Scene s = interval_scene(0.4, 0.6, false);
  const Discretization d = disc_1d(1.0 / 400, 400, TimeScheme::crank_nicolson, 16);
  const HeatSolver solver = make_solver(s, d);
  const BoundaryMesh outer = outer_boundary_mesh(s, d);
  for (double y : {0.3, 0.55}) {
    const double src = 0.1;
    const GreenFunction gf = green_function_neumann(solver, outer, Vec2(y, 0.0), src, true);
    double err = 0.0;
    for (int j = 1; j <= solver.time().steps; ++j) {
      const double t = solver.time().node(j);
      for (int e = 0; e < 2; ++e) {
        const double exact = t > src ? image_series(double(e), y, t - src) : 0.0;
        err = std::max(err, std::abs(gf.trace.values(e, j) - exact));
      }
    }
    EXPECT_LE(err, 1e-4) << "y=" << y;
    EXPECT_LE(gf.flux_residual, 1e-2);
  }
}

TEST(GreenFunction, CorrectedFieldConservesUnitMass) {
  Scene s = reference_scene();
  s.cavities.clear();
  Discretization d = reference_discretization();
  d.h = 1.0 / 64;
  const HeatSolver solver = make_solver(s, d);
  const BoundaryMesh outer = outer_boundary_mesh(s, d);
  const double src = 0.1;
  const GreenFunction gf = green_function_neumann(solver, outer, Vec2(0.0, 0.0), src, true);
  for (int j = 1; j <= solver.time().steps; ++j) {
    const double t = solver.time().node(j);
    if (t <= src) continue;
    // ∫_{|x|<1} Γ = 1 - e^{-1/(4τ)} for a source at the centre
    const double free_mass = -std::expm1(-1.0 / (4.0 * (t - src)));
    EXPECT_NEAR(gf.corrector.mass(j) + free_mass, 1.0, 1e-3) << "t=" << t;
  }
  EXPECT_LE(gf.flux_residual, 1e-2);
}

TEST(GreenFunction, SourceOnBoundaryRejected) {
  const Scene s = interval_scene(0.4, 0.6, false);
  const Discretization d = disc_1d(0.05, 10);
  const HeatSolver solver = make_solver(s, d);
  EXPECT_THROW(green_function_neumann(solver, outer_boundary_mesh(s, d), Vec2(0.0, 0.0), 0.1), ArgumentError);
  EXPECT_THROW(green_function_neumann(solver, outer_boundary_mesh(s, d), Vec2(0.5, 0.0), 1.0), ArgumentError);
}
