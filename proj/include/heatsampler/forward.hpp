#pragma once

#include "heatsampler/errors.hpp"
#include "heatsampler/fields.hpp"
#include "heatsampler/geometry.hpp"
#include "heatsampler/interior_mesh.hpp"
#include "heatsampler/kernel.hpp"
#include "heatsampler/parallel.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace heatsampler {

enum class TimeScheme { backward_euler, crank_nicolson };

struct SolverOptions {
  TimeScheme scheme = TimeScheme::backward_euler;
  /// Solver steps per time-grid interval; data are interpolated linearly in time.
  int substeps = 1;
  int threads = 0;
};

/// Discrete energy balance: (mass(t_{k+1}) - mass(t_k))/Δt against the total load.
struct EnergyReport {
  double max_residual = 0.0;
  double max_load = 0.0;
  double relative() const { return max_load > 0.0 ? max_residual / max_load : max_residual; }
};

/// Implicit finite-volume heat solver V du/dt + L u = b(t) on a fixed mesh.
class HeatSolver {
 public:
  /// b ← average load rate over [ta, tb] (boundary fluxes integrated over pieces plus sources).
  using IntervalLoad = std::function<void(double ta, double tb, Eigen::VectorXd& b)>;
  /// b ← load rate at time t.
  using PointLoad = std::function<void(double t, Eigen::VectorXd& b)>;

  HeatSolver(std::shared_ptr<const InteriorMesh> mesh, TimeGrid time, SolverOptions opt = {})
      : mesh_(std::move(mesh)), time_(time), opt_(opt) {
    if (opt_.substeps < 1) throw ArgumentError("substeps must be positive");
    const double ds = substep();
    const double theta = opt_.scheme == TimeScheme::backward_euler ? 1.0 : 0.5;
    Eigen::SparseMatrix<double> A = theta * mesh_->laplacian;
    for (std::size_t c = 0; c < mesh_->size(); ++c) A.coeffRef(Eigen::Index(c), Eigen::Index(c)) += mesh_->volumes[c] / ds;
    A.makeCompressed();
    factor_ = std::make_shared<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>(A);
    if (factor_->info() != Eigen::Success) throw SolverError("heat system factorization failed");
  }

  const InteriorMesh& mesh() const { return *mesh_; }
  std::shared_ptr<const InteriorMesh> mesh_ptr() const { return mesh_; }
  const TimeGrid& time() const { return time_; }
  const SolverOptions& options() const { return opt_; }
  double substep() const { return time_.dt() / opt_.substeps; }

  HeatField solve_interval(const IntervalLoad& load, const Eigen::VectorXd* initial = nullptr,
                           EnergyReport* report = nullptr) const {
    const Eigen::Index n = Eigen::Index(mesh_->size());
    const Eigen::Map<const Eigen::VectorXd> vol(mesh_->volumes.data(), n);
    HeatField field{mesh_, time_, Eigen::MatrixXd::Zero(n, time_.size())};
    Eigen::VectorXd u = initial ? *initial : Eigen::VectorXd::Zero(n);
    if (u.size() != n) throw ArgumentError("initial data length does not match mesh");
    field.values.col(0) = u;
    Eigen::VectorXd b(n), rhs(n), un(n);
    const double ds = substep();
    const bool cn = opt_.scheme == TimeScheme::crank_nicolson;
    for (int j = 1; j <= time_.steps; ++j) {
      for (int k = 0; k < opt_.substeps; ++k) {
        const double ta = time_.node(j - 1) + k * ds;
        const double tb = (k + 1 == opt_.substeps) ? time_.node(j) : ta + ds;
        b.setZero();
        load(ta, tb, b);
        rhs = vol.cwiseProduct(u) / ds + b;
        if (cn) rhs -= 0.5 * (mesh_->laplacian * u);
        un = factor_->solve(rhs);
        if (report) {
          const double load_sum = b.sum();
          const double dm = vol.dot(un - u) / ds;
          report->max_residual = std::max(report->max_residual, std::abs(dm - load_sum));
          report->max_load = std::max(report->max_load, b.cwiseAbs().sum());
        }
        u.swap(un);
      }
      field.values.col(j) = u;
    }
    return field;
  }

  /// Point-sampled load: backward Euler uses b(t_b), Crank-Nicolson the endpoint mean.
  HeatField solve_sampled(const PointLoad& load, const Eigen::VectorXd* initial = nullptr,
                          EnergyReport* report = nullptr) const {
    const bool cn = opt_.scheme == TimeScheme::crank_nicolson;
    Eigen::VectorXd tmp(Eigen::Index(mesh_->size()));
    return solve_interval(
        [&](double ta, double tb, Eigen::VectorXd& b) {
          load(tb, b);
          if (cn) {
            tmp.setZero();
            load(ta, tmp);
            b = 0.5 * (b + tmp);
          }
        },
        initial, report);
  }

  /// Boundary fluxes on tagged boundaries, each given on its own boundary mesh.
  struct FluxData {
    int tag = 0;
    const SpaceTimeBoundaryField* field = nullptr;
  };

  HeatField solve(const std::vector<FluxData>& fluxes, EnergyReport* report = nullptr) const {
    std::vector<Eigen::SparseMatrix<double>> inj;
    for (const auto& f : fluxes) {
      if (f.field->time.steps != time_.steps) throw ArgumentError("flux time grid does not match solver");
      inj.push_back(injection(f.tag, f.field->mesh));
    }
    return solve_sampled(
        [&](double t, Eigen::VectorXd& b) {
          for (std::size_t q = 0; q < fluxes.size(); ++q) b += inj[q] * interpolate_in_time(*fluxes[q].field, t);
        },
        nullptr, report);
  }

  /// Linear interpolation of nodal values between time nodes.
  static Eigen::VectorXd interpolate_in_time(const SpaceTimeBoundaryField& f, double t) {
    const double dt = f.time.dt();
    const double x = std::clamp(t / dt, 0.0, double(f.time.steps));
    const int j = std::min(int(std::floor(x)), f.time.steps - 1);
    const double a = x - j;
    return (1.0 - a) * f.values.col(j) + a * f.values.col(j + 1);
  }

  /// Cells × nodes map from nodal flux values to cell loads. Cavity fluxes are
  /// given with ν outward from the cavity, which points into the cells.
  Eigen::SparseMatrix<double> injection(int tag, const BoundaryMesh& bm) const {
    if (tag < 0 || tag >= mesh_->num_tags()) throw ArgumentError("unknown boundary tag");
    const double sign = tag == 0 ? 1.0 : -1.0;
    std::vector<Eigen::Triplet<double>> trip;
    for (const auto& pc : mesh_->pieces[tag]) {
      if (bm.dim == 1) {
        trip.emplace_back(pc.cell, int(pc.theta), sign * pc.weight);
        continue;
      }
      const Eigen::VectorXd w = trig_weights(bm, pc.theta);
      for (Eigen::Index l = 0; l < w.size(); ++l) trip.emplace_back(pc.cell, int(l), sign * pc.weight * w[l]);
    }
    Eigen::SparseMatrix<double> B(Eigen::Index(mesh_->size()), Eigen::Index(bm.size()));
    B.setFromTriplets(trip.begin(), trip.end());
    return B;
  }

  /// Nodes × cells map to point values at the boundary nodes.
  Eigen::SparseMatrix<double> trace_operator(const BoundaryMesh& bm) const {
    return point_operator(bm.nodes, [](const Stencil& st, std::size_t) { return st.value; });
  }

  /// Nodes × cells map to ν·∇u at the nodes (ν from the boundary mesh).
  Eigen::SparseMatrix<double> normal_derivative_operator(const BoundaryMesh& bm) const {
    return point_operator(bm.nodes, [&](const Stencil& st, std::size_t i) {
      return Eigen::VectorXd(bm.normals[i].x() * st.dx + bm.normals[i].y() * st.dy);
    });
  }

 private:
  template <class Rows>
  Eigen::SparseMatrix<double> point_operator(const std::vector<Vec2>& pts, Rows rows) const {
    std::vector<Eigen::Triplet<double>> trip;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Stencil st = mesh_->stencil(pts[i]);
      const Eigen::VectorXd w = rows(st, i);
      for (std::size_t k = 0; k < st.cells.size(); ++k) trip.emplace_back(int(i), st.cells[k], w[Eigen::Index(k)]);
    }
    Eigen::SparseMatrix<double> R(Eigen::Index(pts.size()), Eigen::Index(mesh_->size()));
    R.setFromTriplets(trip.begin(), trip.end());
    return R;
  }

  std::shared_ptr<const InteriorMesh> mesh_;
  TimeGrid time_;
  SolverOptions opt_;
  std::shared_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> factor_;
};

/// Resolution parameters shared by all discrete operators.
struct Discretization {
  double h = 1.0 / 32.0;
  int outer_nodes = 64;
  int cavity_nodes = 64;
  int steps = 20;
  int modes = 10;
  SolverOptions solver;
  double flux_order = -0.5;
  double trace_order = 0.5;
  InteriorMeshOptions mesh;
};

inline BoundaryMesh outer_boundary_mesh(const Scene& scene, const Discretization& d) {
  return build_boundary_mesh(scene.outer, d.outer_nodes);
}

inline std::vector<BoundaryMesh> cavity_boundary_meshes(const Scene& scene, const Discretization& d) {
  std::vector<BoundaryMesh> out;
  for (const auto& c : scene.cavities) out.push_back(build_boundary_mesh(c, d.cavity_nodes));
  return out;
}

/// L²((0,T); H^{-1/2}(∂Ω)) flux coefficients.
inline CoefficientSpace outer_flux_space(const Scene& scene, const Discretization& d) {
  return CoefficientSpace{{outer_boundary_mesh(scene, d)}, d.modes, TimeGrid(d.steps, scene.final_time), d.flux_order};
}

/// L²((0,T); H^{1/2}(∂Ω)) trace coefficients.
inline CoefficientSpace outer_trace_space(const Scene& scene, const Discretization& d) {
  return CoefficientSpace{{outer_boundary_mesh(scene, d)}, d.modes, TimeGrid(d.steps, scene.final_time), d.trace_order};
}

/// L²((0,T); H^{-1/2}(∂D)) flux coefficients, one part per cavity.
inline CoefficientSpace cavity_flux_space(const Scene& scene, const Discretization& d) {
  return CoefficientSpace{cavity_boundary_meshes(scene, d), d.modes, TimeGrid(d.steps, scene.final_time),
                          d.flux_order};
}

inline std::shared_ptr<const InteriorMesh> make_mesh(const Scene& scene, const Discretization& d) {
  return std::make_shared<const InteriorMesh>(build_interior_mesh(scene, d.h, d.mesh));
}

inline HeatSolver make_solver(const Scene& scene, const Discretization& d) {
  return HeatSolver(make_mesh(scene, d), TimeGrid(d.steps, scene.final_time), d.solver);
}

/// Solves the forward problem with outer flux f and one flux per cavity (ν outward from the cavity).
inline HeatField solve_heat_neumann(const HeatSolver& solver, const SpaceTimeBoundaryField& outer_flux,
                                    const std::vector<SpaceTimeBoundaryField>& cavity_flux,
                                    EnergyReport* report = nullptr) {
  std::vector<HeatSolver::FluxData> data{{0, &outer_flux}};
  if (!cavity_flux.empty() && int(cavity_flux.size()) != solver.mesh().num_tags() - 1)
    throw ArgumentError("one flux per cavity is required");
  for (std::size_t c = 0; c < cavity_flux.size(); ++c) data.push_back({int(c) + 1, &cavity_flux[c]});
  return solver.solve(data, report);
}

/// z^g: zero outer flux, flux g on the cavity boundaries.
inline HeatField solve_adjoint_field(const HeatSolver& solver, const std::vector<SpaceTimeBoundaryField>& cavity_flux,
                                     EnergyReport* report = nullptr) {
  if (int(cavity_flux.size()) != solver.mesh().num_tags() - 1) throw ArgumentError("one flux per cavity is required");
  std::vector<HeatSolver::FluxData> data;
  for (std::size_t c = 0; c < cavity_flux.size(); ++c) data.push_back({int(c) + 1, &cavity_flux[c]});
  return solver.solve(data, report);
}

namespace detail {

// Time-invariant linear map: load column c applied with the hat at t_1,
// responses read out at t_1..t_J and placed in block-Toeplitz form.
inline Eigen::MatrixXd causal_operator(const HeatSolver& solver, const Eigen::MatrixXd& load_cols,
                                       const Eigen::MatrixXd& readout) {
  const TimeGrid& tg = solver.time();
  const int J = tg.steps;
  const int nin = int(load_cols.cols()), nout = int(readout.rows());
  std::vector<Eigen::MatrixXd> resp{std::size_t(nin)};
  parallel_for(std::size_t(nin), resolve_threads(solver.options().threads), [&](std::size_t c) {
    const Eigen::VectorXd col = load_cols.col(Eigen::Index(c));
    const double t1 = tg.node(1), dt = tg.dt();
    const HeatField u = solver.solve_sampled([&](double t, Eigen::VectorXd& b) {
      const double hat = std::max(0.0, 1.0 - std::abs(t - t1) / dt);
      if (hat > 0.0) b += hat * col;
    });
    Eigen::MatrixXd r(nout, J);
    for (int j = 1; j <= J; ++j) r.col(j - 1) = readout * u.values.col(j);
    resp[c] = std::move(r);
  });
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(Eigen::Index(nout) * J, Eigen::Index(nin) * J);
  for (int c = 0; c < nin; ++c)
    for (int j = 1; j <= J; ++j)
      for (int i = j; i <= J; ++i)
        M.block(Eigen::Index(i - 1) * nout, Eigen::Index(j - 1) * nin + c, nout, 1) = resp[std::size_t(c)].col(i - j);
  return M;
}

inline Eigen::MatrixXd outer_load_columns(const HeatSolver& solver, const CoefficientSpace& flux) {
  return Eigen::MatrixXd(solver.injection(0, flux.parts[0])) * flux.synthesis(0);
}

inline Eigen::MatrixXd outer_trace_readout(const HeatSolver& solver, const CoefficientSpace& trace) {
  return trace.analysis(0) * Eigen::MatrixXd(solver.trace_operator(trace.parts[0]));
}

}  // namespace detail

/// Neumann-to-Dirichlet map on the solver's mesh (Λ_D with cavities, Λ_∅ without).
inline OperatorMatrix assemble_ntd(const HeatSolver& solver, const CoefficientSpace& flux,
                                   const CoefficientSpace& trace, const std::string& label) {
  OperatorMatrix op{label, flux, trace, {}};
  op.matrix = detail::causal_operator(solver, detail::outer_load_columns(solver, flux),
                                      detail::outer_trace_readout(solver, trace));
  return op;
}

inline OperatorMatrix assemble_ntd(const Scene& scene, const Discretization& d, bool with_cavities) {
  const Scene sc = with_cavities ? scene : scene.outer_only();
  const HeatSolver solver = make_solver(sc, d);
  return assemble_ntd(solver, outer_flux_space(scene, d), outer_trace_space(scene, d),
                      (with_cavities && !scene.cavities.empty()) ? "Lambda_D" : "Lambda_0");
}

/// F = Λ_D - Λ_∅.
inline OperatorMatrix operator_f(const OperatorMatrix& lambda_d, const OperatorMatrix& lambda_0) {
  if (lambda_d.matrix.rows() != lambda_0.matrix.rows() || lambda_d.matrix.cols() != lambda_0.matrix.cols())
    throw ArgumentError("NtD maps have different shapes");
  return OperatorMatrix{"F", lambda_d.domain, lambda_d.codomain, lambda_d.matrix - lambda_0.matrix};
}

/// H f = ∂_ν(S f) on ∂D, S the cavity-free solution operator.
inline OperatorMatrix operator_h(const HeatSolver& free_solver, const CoefficientSpace& flux,
                                 const CoefficientSpace& cavity) {
  Eigen::MatrixXd readout(cavity.spatial_dofs(), Eigen::Index(free_solver.mesh().size()));
  for (std::size_t p = 0; p < cavity.parts.size(); ++p)
    readout.middleRows(cavity.part_offset(p), cavity.part_dofs(p)) =
        cavity.analysis(p) * Eigen::MatrixXd(free_solver.normal_derivative_operator(cavity.parts[p]));
  OperatorMatrix op{"H", flux, cavity, {}};
  op.matrix = detail::causal_operator(free_solver, detail::outer_load_columns(free_solver, flux), readout);
  return op;
}

inline OperatorMatrix operator_h(const Scene& scene, const Discretization& d) {
  return operator_h(make_solver(scene.outer_only(), d), outer_flux_space(scene, d), cavity_flux_space(scene, d));
}

/// A g = z^g on ∂Ω.
inline OperatorMatrix operator_a(const HeatSolver& solver, const CoefficientSpace& cavity,
                                 const CoefficientSpace& trace) {
  Eigen::MatrixXd load(Eigen::Index(solver.mesh().size()), cavity.spatial_dofs());
  for (std::size_t p = 0; p < cavity.parts.size(); ++p)
    load.middleCols(cavity.part_offset(p), cavity.part_dofs(p)) =
        Eigen::MatrixXd(solver.injection(int(p) + 1, cavity.parts[p])) * cavity.synthesis(p);
  OperatorMatrix op{"A", cavity, trace, {}};
  op.matrix = detail::causal_operator(solver, load, detail::outer_trace_readout(solver, trace));
  return op;
}

inline OperatorMatrix operator_a(const Scene& scene, const Discretization& d) {
  return operator_a(make_solver(scene, d), cavity_flux_space(scene, d), outer_trace_space(scene, d));
}

/// Γ⁰ = Γ + v with the corrector v cancelling the outer flux of Γ.
struct GreenFunction {
  HeatField corrector;
  SpaceTimeBoundaryField trace;   // Γ⁰ on ∂Ω at t_0..t_J
  double flux_residual = 0.0;     // ‖∂_νΓ⁰‖ / ‖∂_νΓ‖ on ∂Ω, L²((0,T); L²)
  bool near_boundary = false;     // y within one cell of ∂Ω
};

namespace detail {
// ∫ Γ(r,τ)/(2τ) dτ from 0 to τ, closed form.
inline double flux_time_primitive(int n, double r, double tau) {
  if (!(tau > 0.0)) return 0.0;
  if (n == 1) return std::erfc(r / (2.0 * std::sqrt(tau))) / (2.0 * r);
  const double e = r * r / (4.0 * tau);
  return e > kMaxExponent ? 0.0 : std::exp(-e) / (kTwoPi * r * r);
}
}  // namespace detail

/// Neumann Green function of the cavity-free domain with source (y, s).
/// The corrector load is the exact time average of -∂_νΓ over each solver step.
inline GreenFunction green_function_neumann(const HeatSolver& free_solver, const BoundaryMesh& outer, const Vec2& y,
                                            double s, bool check_flux = false) {
  const InteriorMesh& mesh = free_solver.mesh();
  const TimeGrid& tg = free_solver.time();
  const int n = mesh.dim;
  if (!(s > 0.0 && s < tg.final_time)) throw ArgumentError("source time must lie in (0, T)");
  GreenFunction gf;
  const auto& pieces = mesh.pieces[0];
  double dmin = std::numeric_limits<double>::infinity();
  for (const auto& pc : pieces) dmin = std::min(dmin, (pc.point - y).norm());
  for (const Vec2& p : outer.nodes) dmin = std::min(dmin, (p - y).norm());
  gf.near_boundary = dmin < mesh.h;
  if (!(dmin > 0.0)) throw ArgumentError("source point lies on the outer boundary");

  gf.corrector = free_solver.solve_interval([&](double ta, double tb, Eigen::VectorXd& b) {
    if (tb <= s) return;
    const double a = std::max(ta, s);
    for (const auto& pc : pieces) {
      const Vec2 d = pc.point - y;
      const double r = d.norm();
      const double prim = detail::flux_time_primitive(n, r, tb - s) - detail::flux_time_primitive(n, r, a - s);
      // -∂_νΓ = (ν·(x-y))/(2τ) Γ
      b[pc.cell] += pc.weight * pc.normal.dot(d) * prim / (tb - ta);
    }
  });

  gf.trace = SpaceTimeBoundaryField(outer, tg);
  const Eigen::SparseMatrix<double> T = free_solver.trace_operator(outer);
  for (int j = 1; j <= tg.steps; ++j) {
    gf.trace.values.col(j) = T * gf.corrector.values.col(j);
    for (std::size_t i = 0; i < outer.size(); ++i)
      gf.trace.values(Eigen::Index(i), j) += fundamental_solution(n, outer.nodes[i], tg.node(j), y, s);
  }

  if (check_flux) {
    const Eigen::SparseMatrix<double> Nd = free_solver.normal_derivative_operator(outer);
    SpaceTimeBoundaryField g(outer, tg), res(outer, tg);
    for (int j = 1; j <= tg.steps; ++j) {
      for (std::size_t i = 0; i < outer.size(); ++i)
        g.values(Eigen::Index(i), j) = normal_derivative_kernel(n, outer.nodes[i], tg.node(j), y, s, outer.normals[i]);
      res.values.col(j) = g.values.col(j) + Nd * gf.corrector.values.col(j);
    }
    const double ref = g.norm(0.0);
    gf.flux_residual = ref > 0.0 ? res.norm(0.0) / ref : 0.0;
  }
  return gf;
}

}  // namespace heatsampler
