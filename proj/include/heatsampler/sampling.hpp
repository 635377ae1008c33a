#pragma once

#include "heatsampler/errors.hpp"
#include "heatsampler/forward.hpp"
#include "heatsampler/linalg.hpp"
#include "heatsampler/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace heatsampler {

struct SamplingPoint {
  Vec2 y;
  double s = 0.1;
};

enum class AlphaSelection { fixed, morozov };

struct TikhonovConfig {
  /// Fixed α relative to μ₁².
  double alpha_relative = 1e-8;
  AlphaSelection selection = AlphaSelection::fixed;
  double noise_level = 0.0;
  double safety = 1.5;
  /// Candidate α relative to μ₁², decreasing.
  std::vector<double> alpha_grid = default_grid();

  static std::vector<double> default_grid() {
    std::vector<double> g;
    for (int e = 0; e <= 48; ++e) g.push_back(std::pow(10.0, -0.25 * e));
    return g;
  }
};

struct TikhonovDiagnostics {
  double alpha = 0.0;
  double residual = 0.0;
  double rhs_norm = 0.0;
  double solution_norm = 0.0;
  Eigen::VectorXd picard;  // ⟨rhs, g_k⟩ / μ_k
  bool morozov_infeasible = false;
};

struct TikhonovResult {
  Eigen::VectorXd g;
  TikhonovDiagnostics diag;
};

namespace detail {
struct FilterEval {
  Eigen::VectorXd x;  // coefficients in the φ_k basis
  double norm = 0.0;
  double residual = 0.0;
};

inline FilterEval tikhonov_filter(const SingularSystem& ss, const Eigen::VectorXd& c, double out_of_range2,
                                  double alpha) {
  FilterEval f;
  f.x.resize(c.size());
  double res2 = out_of_range2;
  for (Eigen::Index k = 0; k < c.size(); ++k) {
    const double mu = ss.mu[k];
    f.x[k] = mu * c[k] / (alpha + mu * mu);
    const double r = mu * f.x[k] - c[k];
    res2 += r * r;
  }
  f.norm = f.x.norm();
  f.residual = std::sqrt(std::max(0.0, res2));
  return f;
}
}  // namespace detail

/// Norm of the Tikhonov solution g_α = Σ μ_k/(α+μ_k²) ⟨rhs,g_k⟩ φ_k, and its residual,
/// for each α (absolute values).
inline std::vector<std::pair<double, double>> tikhonov_curve(const SingularSystem& ss, const Eigen::VectorXd& rhs,
                                                             const std::vector<double>& alphas) {
  const Eigen::VectorXd c = ss.coefficients(rhs);
  const double total2 = std::pow(ss.codomain_norm(rhs), 2);
  const double oor = std::max(0.0, total2 - c.squaredNorm());
  std::vector<std::pair<double, double>> out;
  for (double a : alphas) {
    const auto f = detail::tikhonov_filter(ss, c, oor, a);
    out.emplace_back(f.norm, f.residual);
  }
  return out;
}

inline TikhonovResult tikhonov_solve(const SingularSystem& ss, const Eigen::VectorXd& rhs, const TikhonovConfig& cfg) {
  if (ss.mu.size() == 0) throw ArgumentError("empty singular system");
  const double mu1 = ss.mu[0];
  const Eigen::VectorXd c = ss.coefficients(rhs);
  const double rhs_norm = ss.codomain_norm(rhs);
  const double oor = std::max(0.0, rhs_norm * rhs_norm - c.squaredNorm());
  TikhonovResult res;
  res.diag.rhs_norm = rhs_norm;
  double alpha = cfg.alpha_relative * mu1 * mu1;
  detail::FilterEval fe;
  if (cfg.selection == AlphaSelection::morozov) {
    if (cfg.alpha_grid.empty()) throw ArgumentError("empty alpha grid");
    const double target = cfg.safety * cfg.noise_level * rhs_norm;
    bool found = false;
    for (double rel : cfg.alpha_grid) {
      alpha = rel * mu1 * mu1;
      fe = detail::tikhonov_filter(ss, c, oor, alpha);
      if (fe.residual <= target) {
        found = true;
        break;
      }
    }
    res.diag.morozov_infeasible = !found;
  } else {
    fe = detail::tikhonov_filter(ss, c, oor, alpha);
  }
  res.diag.alpha = alpha;
  res.diag.residual = fe.residual;
  res.diag.solution_norm = fe.norm;
  res.diag.picard.resize(c.size());
  for (Eigen::Index k = 0; k < c.size(); ++k) res.diag.picard[k] = ss.mu[k] > 0.0 ? c[k] / ss.mu[k] : 0.0;
  res.g = ss.phi * fe.x;
  return res;
}

/// Operator data and the cavity-free solver needed to form right-hand sides.
struct SamplingProblem {
  Scene scene;
  Discretization disc;
  OperatorMatrix F;
  SingularSystem svd;
  std::shared_ptr<const HeatSolver> free_solver;
  BoundaryMesh outer;
  /// Corrector substeps per time step for Γ⁰.
  int corrector_substeps = 4;
};

/// Builds F = Λ_D − Λ_∅ from synthetic data and its singular system.
inline SamplingProblem make_sampling_problem(const Scene& scene, const Discretization& d, int corrector_substeps = 4) {
  SamplingProblem p;
  p.scene = scene;
  p.disc = d;
  const HeatSolver with = make_solver(scene, d);
  const HeatSolver without = make_solver(scene.outer_only(), d);
  const auto flux = outer_flux_space(scene, d), trace = outer_trace_space(scene, d);
  p.F = operator_f(assemble_ntd(with, flux, trace, "Lambda_D"), assemble_ntd(without, flux, trace, "Lambda_0"));
  p.svd = singular_system(p.F);
  SolverOptions co = d.solver;
  co.substeps = std::max(co.substeps, corrector_substeps);
  p.free_solver = std::make_shared<const HeatSolver>(without.mesh_ptr(), without.time(), co);
  p.outer = outer_boundary_mesh(scene, d);
  p.corrector_substeps = corrector_substeps;
  return p;
}

/// Replaces F (e.g. by noisy data) and refreshes the singular system.
inline void set_operator(SamplingProblem& p, OperatorMatrix F) {
  p.F = std::move(F);
  p.svd = singular_system(p.F);
}

/// Γ⁰_{(y,s)} on (∂Ω)_T in trace coefficients (values at t ≤ s are zero).
inline Eigen::VectorXd assemble_rhs(const SamplingProblem& p, const SamplingPoint& sp, bool* near_boundary = nullptr,
                                    SpaceTimeBoundaryField* trace = nullptr) {
  const TimeGrid& tg = p.free_solver->time();
  if (!(sp.s > 0.0 && sp.s <= tg.final_time - tg.dt()))
    throw ArgumentError("sampling time must satisfy 0 < s ≤ T - dt");
  if (!p.scene.outer.contains(sp.y)) throw ArgumentError("sampling point lies outside the domain");
  GreenFunction gf = green_function_neumann(*p.free_solver, p.outer, sp.y, sp.s);
  if (near_boundary) *near_boundary = gf.near_boundary;
  for (int j = 0; j < tg.size(); ++j)
    if (tg.node(j) <= sp.s) gf.trace.values.col(j).setZero();
  if (trace) *trace = gf.trace;
  return p.F.codomain.analyze(gf.trace);
}

struct IndicatorField {
  int dim = 2;
  std::vector<Vec2> points;
  std::vector<double> values;   // 1/‖g^y‖
  std::vector<char> active;     // inside Ω with clearance
  std::vector<char> valid;      // computed successfully
  std::vector<double> alpha;
  std::vector<char> near_boundary;
  // regular grid layout (nx × ny, row-major in x) for marching squares
  int nx = 0, ny = 0;
  Vec2 lower{0.0, 0.0}, upper{0.0, 0.0};
  double s = 0.0;

  std::size_t size() const { return points.size(); }
  double max_valid() const {
    double m = 0.0;
    for (std::size_t i = 0; i < size(); ++i)
      if (active[i] && valid[i]) m = std::max(m, values[i]);
    return m;
  }
  double cell_area() const {
    const double dx = nx > 1 ? (upper.x() - lower.x()) / (nx - 1) : 1.0;
    const double dy = dim == 2 && ny > 1 ? (upper.y() - lower.y()) / (ny - 1) : 1.0;
    return dim == 2 ? dx * dy : dx;
  }
};

/// Regular sampling grid over [lower, upper] (ny = 1 in 1D).
inline IndicatorField make_grid(int dim, Vec2 lower, Vec2 upper, int nx, int ny) {
  if (nx < 1 || ny < 1) throw ArgumentError("grid needs at least one point per direction");
  IndicatorField f;
  f.dim = dim;
  f.nx = nx;
  f.ny = dim == 1 ? 1 : ny;
  f.lower = lower;
  f.upper = upper;
  for (int j = 0; j < f.ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const double x = nx > 1 ? lower.x() + (upper.x() - lower.x()) * i / (nx - 1) : lower.x();
      const double y = (dim == 2 && f.ny > 1) ? lower.y() + (upper.y() - lower.y()) * j / (f.ny - 1) : lower.y();
      f.points.emplace_back(x, dim == 1 ? 0.0 : y);
    }
  const std::size_t n = f.points.size();
  f.values.assign(n, 0.0);
  f.active.assign(n, 0);
  f.valid.assign(n, 0);
  f.alpha.assign(n, 0.0);
  f.near_boundary.assign(n, 0);
  return f;
}

/// I(y) = 1/‖g^y‖ at every grid point inside Ω at least `clearance` from ∂Ω.
inline IndicatorField indicator_scan(const SamplingProblem& p, double s, IndicatorField grid,
                                     const TikhonovConfig& cfg, double clearance, int threads = 0) {
  grid.s = s;
  parallel_for(grid.size(), resolve_threads(threads), [&](std::size_t i) {
    const Vec2& y = grid.points[i];
    if (-p.scene.outer.signed_distance(y) < clearance) return;
    grid.active[i] = 1;
    try {
      bool near = false;
      const Eigen::VectorXd rhs = assemble_rhs(p, SamplingPoint{y, s}, &near);
      const TikhonovResult r = tikhonov_solve(p.svd, rhs, cfg);
      grid.near_boundary[i] = near;
      grid.alpha[i] = r.diag.alpha;
      if (r.diag.solution_norm > 0.0 && std::isfinite(r.diag.solution_norm)) {
        grid.values[i] = 1.0 / r.diag.solution_norm;
        grid.valid[i] = 1;
      }
    } catch (const Error&) {
      grid.valid[i] = 0;
    }
  });
  return grid;
}

struct CavityEstimate {
  std::vector<char> mask;
  std::vector<std::vector<Vec2>> boundaries;  // polylines (2D) or interval endpoint pairs (1D)
  std::vector<std::pair<double, double>> intervals;
  double threshold = 0.5;
  double area = 0.0;
};

namespace detail {
// Joins marching-squares segments into polylines.
inline std::vector<std::vector<Vec2>> join_segments(const std::vector<std::pair<Vec2, Vec2>>& segs) {
  auto key = [](const Vec2& p) { return std::make_pair(std::llround(p.x() * 1e9), std::llround(p.y() * 1e9)); };
  std::multimap<std::pair<long long, long long>, std::size_t> at;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    at.emplace(key(segs[i].first), i);
    at.emplace(key(segs[i].second), i);
  }
  std::vector<char> used(segs.size(), 0);
  std::vector<std::vector<Vec2>> lines;
  for (std::size_t s0 = 0; s0 < segs.size(); ++s0) {
    if (used[s0]) continue;
    used[s0] = 1;
    std::vector<Vec2> line{segs[s0].first, segs[s0].second};
    for (int dir = 0; dir < 2; ++dir) {
      for (;;) {
        const Vec2 end = line.back();
        bool extended = false;
        auto range = at.equal_range(key(end));
        for (auto it = range.first; it != range.second; ++it) {
          const std::size_t k = it->second;
          if (used[k]) continue;
          used[k] = 1;
          line.push_back(key(segs[k].first) == key(end) ? segs[k].second : segs[k].first);
          extended = true;
          break;
        }
        if (!extended) break;
      }
      std::reverse(line.begin(), line.end());
    }
    lines.push_back(std::move(line));
  }
  return lines;
}
}  // namespace detail

/// Mask {I ≥ τ·max I} with boundary curves (marching squares) or interval endpoints.
inline CavityEstimate extract_cavity(const IndicatorField& f, double tau = 0.5) {
  std::size_t active = 0, valid = 0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    active += f.active[i] ? 1 : 0;
    valid += (f.active[i] && f.valid[i]) ? 1 : 0;
  }
  if (active == 0 || valid < 0.9 * double(active)) throw ArgumentError("indicator field is valid on fewer than 90% of points");
  CavityEstimate est;
  est.threshold = tau;
  const double mx = f.max_valid();
  const double level = tau * mx;
  est.mask.assign(f.size(), 0);
  for (std::size_t i = 0; i < f.size(); ++i)
    est.mask[i] = (f.active[i] && f.valid[i] && f.values[i] >= level) ? 1 : 0;
  std::size_t count = 0;
  for (char m : est.mask) count += m;
  if (count == 0) throw ArgumentError("no cavity detected above threshold");
  est.area = double(count) * f.cell_area();

  if (f.dim == 1) {
    const double dx = f.nx > 1 ? (f.upper.x() - f.lower.x()) / (f.nx - 1) : 0.0;
    auto crossing = [&](std::size_t a, std::size_t b) {
      // linear interpolation of the level crossing between neighbouring points
      const double va = (f.active[a] && f.valid[a]) ? f.values[a] : 0.0;
      const double vb = (f.active[b] && f.valid[b]) ? f.values[b] : 0.0;
      if (va == vb) return 0.5 * (f.points[a].x() + f.points[b].x());
      const double t = std::clamp((level - va) / (vb - va), 0.0, 1.0);
      return f.points[a].x() + t * (f.points[b].x() - f.points[a].x());
    };
    std::size_t i = 0;
    while (i < f.size()) {
      if (!est.mask[i]) {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j + 1 < f.size() && est.mask[j + 1]) ++j;
      const double lo = i > 0 ? crossing(i - 1, i) : f.points[i].x() - 0.5 * dx;
      const double hi = j + 1 < f.size() ? crossing(j, j + 1) : f.points[j].x() + 0.5 * dx;
      est.intervals.emplace_back(lo, hi);
      est.boundaries.push_back({Vec2(lo, 0.0), Vec2(hi, 0.0)});
      i = j + 1;
    }
    return est;
  }

  // marching squares on v = I - level over the grid cells
  auto val = [&](int i, int j) {
    const std::size_t k = std::size_t(j) * f.nx + i;
    return ((f.active[k] && f.valid[k]) ? f.values[k] : 0.0) - level;
  };
  auto pt = [&](int i, int j) { return f.points[std::size_t(j) * f.nx + i]; };
  auto lerp = [&](int i0, int j0, int i1, int j1) {
    const double a = val(i0, j0), b = val(i1, j1);
    const double t = (a == b) ? 0.5 : a / (a - b);
    return Vec2(pt(i0, j0) + t * (pt(i1, j1) - pt(i0, j0)));
  };
  std::vector<std::pair<Vec2, Vec2>> segs;
  for (int j = 0; j + 1 < f.ny; ++j)
    for (int i = 0; i + 1 < f.nx; ++i) {
      const bool b0 = val(i, j) >= 0, b1 = val(i + 1, j) >= 0, b2 = val(i + 1, j + 1) >= 0, b3 = val(i, j + 1) >= 0;
      const int c = (b0 ? 1 : 0) | (b1 ? 2 : 0) | (b2 ? 4 : 0) | (b3 ? 8 : 0);
      if (c == 0 || c == 15) continue;
      const Vec2 e0 = lerp(i, j, i + 1, j), e1 = lerp(i + 1, j, i + 1, j + 1), e2 = lerp(i, j + 1, i + 1, j + 1),
                 e3 = lerp(i, j, i, j + 1);
      switch (c) {
        case 1: case 14: segs.emplace_back(e3, e0); break;
        case 2: case 13: segs.emplace_back(e0, e1); break;
        case 3: case 12: segs.emplace_back(e3, e1); break;
        case 4: case 11: segs.emplace_back(e1, e2); break;
        case 6: case 9: segs.emplace_back(e0, e2); break;
        case 7: case 8: segs.emplace_back(e3, e2); break;
        case 5:
          segs.emplace_back(e3, e2);
          segs.emplace_back(e0, e1);
          break;
        case 10:
          segs.emplace_back(e3, e0);
          segs.emplace_back(e1, e2);
          break;
        default: break;
      }
    }
  // grid points exactly on the level give zero-length segments that would split the chains
  segs.erase(std::remove_if(segs.begin(), segs.end(),
                            [](const auto& sg) { return (sg.first - sg.second).norm() == 0.0; }),
             segs.end());
  est.boundaries = detail::join_segments(segs);
  return est;
}

/// Area (length in 1D) of the symmetric difference between a mask and the true cavity set.
inline double symmetric_difference(const IndicatorField& f, const CavityEstimate& est, const Scene& truth) {
  double acc = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const bool in_true = cavity_containing(truth, f.points[i]) >= 0;
    if (bool(est.mask[i]) != in_true) acc += f.cell_area();
  }
  return acc;
}

/// Threshold minimizing the symmetric difference on a scene with known cavities.
inline double calibrate_threshold(const IndicatorField& f, const Scene& truth, int candidates = 91) {
  double best_tau = 0.5, best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < candidates; ++k) {
    const double tau = 0.05 + 0.9 * k / (candidates - 1);
    try {
      const double e = symmetric_difference(f, extract_cavity(f, tau), truth);
      if (e < best) {
        best = e;
        best_tau = tau;
      }
    } catch (const ArgumentError&) {
    }
  }
  return best_tau;
}

enum class Aggregation { median, min, mean };

/// Pointwise aggregation of normalized fields I/max I.
inline IndicatorField multi_sample_aggregate(const std::vector<IndicatorField>& fields,
                                             Aggregation how = Aggregation::median) {
  if (fields.empty()) throw ArgumentError("no fields to aggregate");
  const IndicatorField& ref = fields[0];
  for (const auto& f : fields)
    if (f.size() != ref.size() || f.nx != ref.nx || f.ny != ref.ny) throw ArgumentError("indicator grids differ");
  IndicatorField out = ref;
  std::vector<double> maxes;
  for (const auto& f : fields) maxes.push_back(f.max_valid());
  std::vector<double> v;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    v.clear();
    bool ok = true;
    for (std::size_t k = 0; k < fields.size(); ++k) {
      ok = ok && fields[k].valid[i] && fields[k].active[i];
      v.push_back(maxes[k] > 0.0 ? fields[k].values[i] / maxes[k] : 0.0);
    }
    out.valid[i] = ok;
    if (!ok) {
      out.values[i] = 0.0;
      continue;
    }
    switch (how) {
      case Aggregation::min: out.values[i] = *std::min_element(v.begin(), v.end()); break;
      case Aggregation::mean: {
        double sum = 0.0;
        for (double x : v) sum += x;
        out.values[i] = sum / double(v.size());
        break;
      }
      case Aggregation::median: {
        std::sort(v.begin(), v.end());
        const std::size_t m = v.size() / 2;
        out.values[i] = v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
        break;
      }
    }
  }
  return out;
}

/// Adds a seeded Gaussian perturbation of relative size δ in the weighted
/// operator norm; the upper (acausal) blocks stay zero.
inline OperatorMatrix inject_noise(const OperatorMatrix& op, double delta, std::uint64_t seed) {
  if (delta < 0.0) throw ArgumentError("noise level must be nonnegative");
  if (delta == 0.0) return op;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  OperatorMatrix e{op.label, op.domain, op.codomain, Eigen::MatrixXd::Zero(op.matrix.rows(), op.matrix.cols())};
  const int sdo = op.codomain.spatial_dofs(), sdi = op.domain.spatial_dofs();
  for (Eigen::Index c = 0; c < e.matrix.cols(); ++c)
    for (Eigen::Index r = 0; r < e.matrix.rows(); ++r)
      if (r / sdo >= c / sdi) e.matrix(r, c) = normal(rng);
  const double ne = operator_norm(e), nf = operator_norm(op);
  OperatorMatrix out = op;
  if (ne > 0.0) out.matrix += (delta * nf / ne) * e.matrix;
  return out;
}

/// Seeded relative perturbation of a coefficient vector in a Gram norm.
inline Eigen::VectorXd inject_noise(const Eigen::VectorXd& data, const Eigen::MatrixXd& gram, double delta,
                                    std::uint64_t seed) {
  if (delta < 0.0) throw ArgumentError("noise level must be nonnegative");
  if (delta == 0.0) return data;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::VectorXd e(data.size());
  for (Eigen::Index i = 0; i < e.size(); ++i) e[i] = normal(rng);
  const double ne = std::sqrt(e.dot(gram * e)), nd = std::sqrt(data.dot(gram * data));
  return ne > 0.0 ? Eigen::VectorXd(data + (delta * nd / ne) * e) : data;
}

}  // namespace heatsampler
