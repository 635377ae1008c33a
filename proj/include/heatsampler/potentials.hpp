#pragma once

#include "heatsampler/errors.hpp"
#include "heatsampler/fields.hpp"
#include "heatsampler/geometry.hpp"
#include "heatsampler/kernel.hpp"
#include "heatsampler/parallel.hpp"
#include "heatsampler/quadrature.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <vector>

namespace heatsampler {

/// Spatial quadrature node on a boundary part. `index` is the endpoint index in 1D.
struct SpatialNode {
  Vec2 point;
  Vec2 normal;
  double theta = 0.0;
  double weight = 0.0;  // includes the curve speed
  int index = -1;
};

/// Quadrature on a boundary part adapted to a target point: Gauss panels
/// graded geometrically toward the closest parameter until the innermost
/// panel is shorter than a quarter of the target distance.
inline std::vector<SpatialNode> curve_quadrature(const BoundaryMesh& part, const Vec2& target, int base_panels = 16) {
  std::vector<SpatialNode> out;
  if (part.dim == 1) {
    for (std::size_t i = 0; i < part.size(); ++i)
      out.push_back({part.nodes[i], part.normals[i], double(i), part.weights[i], int(i)});
    return out;
  }
  const StarCurve& c = *part.curve;
  const auto& rule = quad::gauss_legendre<10>();
  auto add_panel = [&](double a, double b) {
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    for (std::size_t k = 0; k < rule.size(); ++k) {
      const double th = mid + half * rule.nodes[k];
      out.push_back({c.point(th), c.normal(th), th, half * rule.weights[k] * c.speed(th), -1});
    }
  };
  const double theta_star = c.closest_parameter(target);
  const double d = (target - c.point(theta_star)).norm();
  double smax = 0.0;
  for (int i = 0; i < 64; ++i) smax = std::max(smax, c.speed(kTwoPi * i / 64));
  const double base = kTwoPi / base_panels;
  if (d > 2.0 * base * smax) {
    for (int p = 0; p < base_panels; ++p) add_panel(p * base, (p + 1) * base);
    return out;
  }
  const double stop = std::max(0.25 * d, 1e-9) / smax;
  double outer = kPi;
  while (outer > stop) {
    const double inner = 0.5 * outer;
    const int pieces = std::max(1, int(std::ceil((outer - inner) / base)));
    const double w = (outer - inner) / pieces;
    for (int p = 0; p < pieces; ++p) {
      add_panel(theta_star + inner + p * w, theta_star + inner + (p + 1) * w);
      add_panel(theta_star - inner - (p + 1) * w, theta_star - inner - p * w);
    }
    outer = inner;
  }
  add_panel(theta_star - outer, theta_star + outer);
  return out;
}

/// Equispaced mesh nodes with trapezoid weights (spectral for smooth periodic integrands).
inline std::vector<SpatialNode> mesh_quadrature(const BoundaryMesh& part) {
  std::vector<SpatialNode> out;
  for (std::size_t i = 0; i < part.size(); ++i)
    out.push_back({part.nodes[i], part.normals[i], part.dim == 1 ? double(i) : part.angles[i], part.weights[i],
                   part.dim == 1 ? int(i) : -1});
  return out;
}

enum class LayerKernel {
  single,       // Γ
  target_flux,  // ∂_{ν(x)} Γ at the target x
  source_flux,  // ∂_{ν(y)} Γ(y,t; x,s) with the density point y as first argument
};

namespace detail {

inline constexpr double kLogCutoff = 4.0943445622221;  // log 60
inline constexpr double kPanelWidth = 0.5;

// ∫_a^b G(σ) dσ and ∫_a^b σ G(σ) dσ with G = Γ_n(r,σ) (flux = false) or
// Γ_n(r,σ)/(2σ) (flux = true), integrated in v = log σ.
inline void time_moments(int n, bool flux, double r2, double a, double b, double& i0, double& i1) {
  i0 = i1 = 0.0;
  if (!(b > a)) return;
  if (r2 == 0.0) {
    if (n == 1 && !flux) {
      const double sa = std::sqrt(std::max(a, 0.0)), sb = std::sqrt(b);
      i0 = (sb - sa) / std::sqrt(kPi);
      i1 = (sb * sb * sb - sa * sa * sa) / (3.0 * std::sqrt(kPi));
      return;
    }
    throw ArgumentError("layer kernel evaluated at coincident points");
  }
  if (r2 / (4.0 * b) > kMaxExponent) return;
  const double vlo = std::log(r2 / 4.0) - kLogCutoff;
  const double va = a > 0.0 ? std::max(std::log(a), vlo) : vlo;
  const double vb = std::log(b);
  if (!(vb > va)) return;
  const int panels = std::max(1, int(std::ceil((vb - va) / kPanelWidth)));
  const double w = (vb - va) / panels;
  const auto& rule = quad::gauss_legendre<10>();
  for (int p = 0; p < panels; ++p) {
    const double mid = va + (p + 0.5) * w, half = 0.5 * w;
    for (std::size_t k = 0; k < rule.size(); ++k) {
      const double sigma = std::exp(mid + half * rule.nodes[k]);
      double g = heat_kernel(n, r2, sigma);
      if (flux) g /= 2.0 * sigma;
      const double f = half * rule.weights[k] * g * sigma;
      i0 += f;
      i1 += f * sigma;
    }
  }
}

// Hat-function time weights for lags d = 0..J-1 (causal, hats t_1..t_J), and
// for the truncated last hat seen from earlier output times (anticausal).
inline void lag_weights(int n, bool flux, double r2, double dt, int J, std::vector<double>& full,
                        std::vector<double>* last) {
  std::vector<double> i0(J), i1(J);
  for (int m = 0; m < J; ++m) time_moments(n, flux, r2, m * dt, (m + 1) * dt, i0[m], i1[m]);
  full.assign(J, 0.0);
  if (last) last->assign(J, 0.0);
  for (int d = 0; d < J; ++d) {
    double w = (d + 1) * dt * i0[d] - i1[d];
    if (d >= 1) {
      const double left = i1[d - 1] - (d - 1) * dt * i0[d - 1];
      w += left;
      if (last) (*last)[d] = left / dt;
    }
    full[d] = w / dt;
  }
}

// Weights of hats j = 1..J for the causal integral ∫_0^t G(t-τ) hat_j(τ) dτ at arbitrary t.
inline Eigen::VectorXd hat_weights_at(int n, bool flux, double r2, const TimeGrid& tg, double t) {
  const int J = tg.steps;
  const double dt = tg.dt();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(J);
  for (int j = 1; j <= J; ++j) {
    const double tj = tg.node(j), tm = tg.node(j - 1);
    if (tm >= t) break;
    double i0, i1;
    // rising part τ ∈ [t_{j-1}, t_j]: σ ∈ [t - t_j, t - t_{j-1}], weight ((t - t_{j-1}) - σ)/dt
    time_moments(n, flux, r2, std::max(0.0, t - tj), t - tm, i0, i1);
    double acc = ((t - tm) * i0 - i1) / dt;
    if (j < J && tj < t) {
      // falling part τ ∈ [t_j, t_{j+1}]: σ ∈ [t - t_{j+1}, t - t_j], weight ((t_{j+1} - t) + σ)/dt
      const double tp = tg.node(j + 1);
      time_moments(n, flux, r2, std::max(0.0, t - tp), t - tj, i0, i1);
      acc += ((tp - t) * i0 + i1) / dt;
    }
    w[j - 1] = acc;
  }
  return w;
}

inline double spatial_prefactor(LayerKernel kind, const Vec2& target, const Vec2& target_normal,
                                const SpatialNode& q) {
  switch (kind) {
    case LayerKernel::single: return 1.0;
    case LayerKernel::target_flux: return -target_normal.dot(target - q.point);
    case LayerKernel::source_flux: return -q.normal.dot(q.point - target);
  }
  return 0.0;
}

inline double basis_value(const BoundaryMesh& part, int m, const SpatialNode& q) {
  if (part.dim == 1) return q.index == m ? 1.0 : 0.0;
  return CoefficientSpace::mode_value(m, q.theta);
}

}  // namespace detail

/// Evaluation target for a layer operator.
struct LayerTarget {
  Vec2 point;
  Vec2 normal{0.0, 0.0};
};

/// Nodal block-Toeplitz representation: lags[d] is targets × spatial density
/// dofs; `last` holds the anticausal weights of the truncated final hat.
struct LagKernel {
  std::vector<Eigen::MatrixXd> lags;
  std::vector<Eigen::MatrixXd> last;
};

/// Layer kernel for densities in `density` (spatial modes × hats) evaluated at targets.
inline LagKernel layer_kernel(const CoefficientSpace& density, const std::vector<LayerTarget>& targets,
                              LayerKernel kind, bool anticausal = false, int threads = 0, int base_panels = 16) {
  const int J = density.steps();
  const double dt = density.time.dt();
  const int sd = density.spatial_dofs();
  const int n = density.parts.empty() ? 2 : density.parts[0].dim;
  const bool flux = kind != LayerKernel::single;
  LagKernel out;
  out.lags.assign(J, Eigen::MatrixXd::Zero(Eigen::Index(targets.size()), sd));
  if (anticausal) out.last.assign(J, Eigen::MatrixXd::Zero(Eigen::Index(targets.size()), sd));
  parallel_for(targets.size(), resolve_threads(threads), [&](std::size_t ti) {
    const LayerTarget& tgt = targets[ti];
    std::vector<double> full, last;
    for (std::size_t p = 0; p < density.parts.size(); ++p) {
      const BoundaryMesh& part = density.parts[p];
      const int off = density.part_offset(p), md = density.part_dofs(p);
      for (const SpatialNode& q : curve_quadrature(part, tgt.point, base_panels)) {
        const double pref = detail::spatial_prefactor(kind, tgt.point, tgt.normal, q);
        if (pref == 0.0) continue;
        const double r2 = (tgt.point - q.point).squaredNorm();
        detail::lag_weights(n, flux, r2, dt, J, full, anticausal ? &last : nullptr);
        for (int m = 0; m < md; ++m) {
          const double e = detail::basis_value(part, m, q);
          if (e == 0.0) continue;
          const double c = q.weight * pref * e;
          for (int d = 0; d < J; ++d) {
            out.lags[d](Eigen::Index(ti), off + m) += c * full[d];
            if (anticausal) out.last[d](Eigen::Index(ti), off + m) += c * last[d];
          }
        }
      }
    }
  });
  return out;
}

namespace detail {
// Projects nodal kernel rows onto the codomain modes and fills the block matrix.
inline Eigen::MatrixXd assemble_blocks(const LagKernel& k, const CoefficientSpace& domain,
                                       const CoefficientSpace& codomain, bool anticausal) {
  const int J = domain.steps();
  const int sdi = domain.spatial_dofs(), sdo = codomain.spatial_dofs();
  int rows = 0;
  for (const auto& part : codomain.parts) rows += int(part.size());
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(sdo, rows);
  for (std::size_t p = 0, r = 0; p < codomain.parts.size(); r += codomain.parts[p].size(), ++p)
    P.block(codomain.part_offset(p), Eigen::Index(r), codomain.part_dofs(p), Eigen::Index(codomain.parts[p].size())) =
        codomain.analysis(p);
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(Eigen::Index(sdo) * J, Eigen::Index(sdi) * J);
  std::vector<Eigen::MatrixXd> proj(J), proj_last;
  for (int d = 0; d < J; ++d) proj[d] = P * k.lags[d];
  if (anticausal)
    for (int d = 0; d < J; ++d) proj_last.push_back(P * k.last[d]);
  for (int i = 1; i <= J; ++i)
    for (int j = 1; j <= J; ++j) {
      auto blk = M.block(Eigen::Index(i - 1) * sdo, Eigen::Index(j - 1) * sdi, sdo, sdi);
      if (!anticausal && j <= i) blk = proj[i - j];
      if (anticausal && j >= i) blk = (j < J) ? proj[j - i] : proj_last[j - i];
    }
  return M;
}

inline std::vector<LayerTarget> node_targets(const CoefficientSpace& space, bool with_normals) {
  std::vector<LayerTarget> t;
  for (const auto& part : space.parts)
    for (std::size_t i = 0; i < part.size(); ++i)
      t.push_back({part.nodes[i], with_normals ? part.normals[i] : Vec2(0.0, 0.0)});
  return t;
}
}  // namespace detail

/// K₀ restricted to the nodes of `codomain` (on or off the density boundary).
inline OperatorMatrix single_layer_operator(const CoefficientSpace& density, const CoefficientSpace& codomain,
                                            int threads = 0) {
  const LagKernel k = layer_kernel(density, detail::node_targets(codomain, false), LayerKernel::single, false, threads);
  return {"K0", density, codomain, detail::assemble_blocks(k, density, codomain, false)};
}

/// K ψ on ∂D: flux of the single layer on ∂Ω through ∂D (ν outward from D).
inline OperatorMatrix operator_k(const CoefficientSpace& density, const CoefficientSpace& cavity, int threads = 0) {
  const LagKernel k = layer_kernel(density, detail::node_targets(cavity, true), LayerKernel::target_flux, false, threads);
  return {"K", density, cavity, detail::assemble_blocks(k, density, cavity, false)};
}

/// K* η on ∂Ω (anticausal).
inline OperatorMatrix operator_kstar(const CoefficientSpace& cavity, const CoefficientSpace& outer, int threads = 0) {
  const LagKernel k = layer_kernel(cavity, detail::node_targets(outer, false), LayerKernel::source_flux, true, threads);
  return {"Kstar", cavity, outer, detail::assemble_blocks(k, cavity, outer, true)};
}

enum class NMethod { offset_richardson, principal_value };

struct NOptions {
  NMethod method = NMethod::offset_richardson;
  /// Coarsest offset distance; the sequence is h, h/2, h/4.
  double offset = 1e-2;
  /// Accept the extrapolation when successive differences shrink at least this fast.
  double max_ratio = 0.75;
  int threads = 0;
};

struct NDiagnostics {
  double ratio = 0.0;
  double last_change = 0.0;
};

/// N φ = ½[∂_ν(K₀φ)|_Ω + ∂_ν(K₀φ)|_{Ω^c}] on ∂Ω. The default evaluates the
/// normal derivatives at x ∓ hν and extrapolates h → 0.
inline OperatorMatrix operator_n(const CoefficientSpace& density, const NOptions& opt = {},
                                 NDiagnostics* diag = nullptr) {
  const CoefficientSpace& cod = density;
  if (opt.method == NMethod::principal_value) {
    const LagKernel k = layer_kernel(density, detail::node_targets(cod, true), LayerKernel::target_flux, false, opt.threads);
    return {"N", density, cod, detail::assemble_blocks(k, density, cod, false)};
  }
  const auto base = detail::node_targets(cod, true);
  std::vector<Eigen::MatrixXd> level;
  for (int l = 0; l < 3; ++l) {
    const double h = opt.offset / double(1 << l);
    std::vector<LayerTarget> tg;
    for (const auto& b : base) tg.push_back({b.point - h * b.normal, b.normal});
    for (const auto& b : base) tg.push_back({b.point + h * b.normal, b.normal});
    const LagKernel k = layer_kernel(density, tg, LayerKernel::target_flux, false, opt.threads);
    LagKernel avg;
    const Eigen::Index nb = Eigen::Index(base.size());
    for (const auto& m : k.lags) avg.lags.push_back(0.5 * (m.topRows(nb) + m.bottomRows(nb)));
    level.push_back(detail::assemble_blocks(avg, density, cod, false));
  }
  const double d1 = (level[1] - level[0]).norm(), d2 = (level[2] - level[1]).norm();
  const double scale = std::max(level[2].norm(), 1e-300);
  const double ratio = d1 > 0.0 ? d2 / d1 : 0.0;
  if (diag) {
    diag->ratio = ratio;
    diag->last_change = d2 / scale;
  }
  if (d2 > 1e-12 * scale && ratio > opt.max_ratio)
    throw AccuracyError("offset extrapolation of N did not converge (ratio " + std::to_string(ratio) + ")");
  return {"N", density, cod, 2.0 * level[2] - level[1]};
}

/// Solves (½I + N) φ = f by forward block substitution in time.
inline Eigen::VectorXd solve_boundary_equation(const OperatorMatrix& N, const Eigen::VectorXd& f,
                                               double* residual = nullptr) {
  const int J = N.domain.steps(), sd = N.domain.spatial_dofs();
  if (f.size() != N.matrix.rows()) throw ArgumentError("right-hand side does not match N");
  const Eigen::MatrixXd diag = 0.5 * Eigen::MatrixXd::Identity(sd, sd) + N.block(1, 1);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(diag);
  if (std::abs(lu.determinant()) < 1e-300) throw SolverError("singular diagonal block in boundary equation");
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(f.size());
  for (int i = 1; i <= J; ++i) {
    Eigen::VectorXd r = f.segment(Eigen::Index(i - 1) * sd, sd);
    for (int j = 1; j < i; ++j) r -= N.block(i, j) * phi.segment(Eigen::Index(j - 1) * sd, sd);
    phi.segment(Eigen::Index(i - 1) * sd, sd) = lu.solve(r);
  }
  if (residual) {
    const Eigen::VectorXd res = 0.5 * phi + N.matrix * phi - f;
    *residual = res.norm() / std::max(f.norm(), 1e-300);
  }
  return phi;
}

/// Callable density: (part, parameter θ or endpoint index, time) → value.
using DensityFn = std::function<double(std::size_t, double, double)>;

/// K₀φ(x, t) for a coefficient vector in `density`, at arbitrary x off the boundary and t ∈ (0, T].
inline double single_layer_evaluate(const CoefficientSpace& density, const Eigen::VectorXd& phi, const Vec2& x,
                                    double t) {
  const int sd = density.spatial_dofs();
  const int n = density.parts[0].dim;
  double u = 0.0;
  for (std::size_t p = 0; p < density.parts.size(); ++p) {
    const BoundaryMesh& part = density.parts[p];
    const int off = density.part_offset(p), md = density.part_dofs(p);
    for (const SpatialNode& q : curve_quadrature(part, x)) {
      const Eigen::VectorXd w = detail::hat_weights_at(n, false, (x - q.point).squaredNorm(), density.time, t);
      for (int m = 0; m < md; ++m) {
        const double e = detail::basis_value(part, m, q);
        if (e == 0.0) continue;
        double acc = 0.0;
        for (int j = 1; j <= density.steps(); ++j) acc += w[j - 1] * phi[Eigen::Index(j - 1) * sd + off + m];
        u += q.weight * e * acc;
      }
    }
  }
  return u;
}

namespace detail {
// ∫_0^{tmax} G(σ) f(σ) dσ in v = log σ with the kernel cutoff.
template <class F>
double log_time_integral(int n, bool flux, double r2, double tmax, F&& f) {
  if (!(tmax > 0.0) || r2 / (4.0 * tmax) > kMaxExponent) return 0.0;
  const double va = std::log(r2 / 4.0) - kLogCutoff, vb = std::log(tmax);
  if (!(vb > va)) return 0.0;
  const int panels = std::max(1, int(std::ceil((vb - va) / kPanelWidth)));
  const double w = (vb - va) / panels;
  const auto& rule = quad::gauss_legendre<10>();
  double acc = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double mid = va + (p + 0.5) * w, half = 0.5 * w;
    for (std::size_t k = 0; k < rule.size(); ++k) {
      const double sigma = std::exp(mid + half * rule.nodes[k]);
      double g = heat_kernel(n, r2, sigma);
      if (flux) g /= 2.0 * sigma;
      acc += half * rule.weights[k] * g * sigma * f(sigma);
    }
  }
  return acc;
}
}  // namespace detail

/// (Kψ)(x, t) for a callable density on the parts of ∂Ω, quadrature on `nodes`.
inline double apply_k(const std::vector<std::vector<SpatialNode>>& nodes, int n, const DensityFn& psi, const Vec2& x,
                      const Vec2& nu_x, double t) {
  double acc = 0.0;
  for (std::size_t p = 0; p < nodes.size(); ++p)
    for (const SpatialNode& q : nodes[p]) {
      const double pref = -nu_x.dot(x - q.point);
      if (pref == 0.0) continue;
      const double th = q.index >= 0 ? double(q.index) : q.theta;
      acc += q.weight * pref *
             detail::log_time_integral(n, true, (x - q.point).squaredNorm(), t,
                                       [&](double sigma) { return psi(p, th, t - sigma); });
    }
  return acc;
}

/// (K*η)(y, s) for a callable density on the parts of ∂D, quadrature on `nodes`.
inline double apply_kstar(const std::vector<std::vector<SpatialNode>>& nodes, int n, const DensityFn& eta,
                          const Vec2& y, double s, double T) {
  double acc = 0.0;
  for (std::size_t p = 0; p < nodes.size(); ++p)
    for (const SpatialNode& q : nodes[p]) {
      const double pref = -q.normal.dot(q.point - y);
      if (pref == 0.0) continue;
      const double th = q.index >= 0 ? double(q.index) : q.theta;
      acc += q.weight * pref *
             detail::log_time_integral(n, true, (q.point - y).squaredNorm(), T - s,
                                       [&](double sigma) { return eta(p, th, s + sigma); });
    }
  return acc;
}

struct AdjointPairing {
  double k_eta = 0.0;      // ⟨Kψ, η⟩ over (∂D)_T
  double psi_kstar = 0.0;  // ⟨ψ, K*η⟩ over (∂Ω)_T
  double psi_norm = 0.0;
  double eta_norm = 0.0;
};

/// Both sides of ⟨Kψ,η⟩ = ⟨ψ,K*η⟩, each as an iterated integral in its own
/// order: inner time integral in log-lag, spatial integrals by the trapezoid
/// rule on the given meshes. The outer time integral uses Gauss panels in
/// log-time, graded toward t = 0 for Kψ and toward t = T for K*η, where the
/// integrands behave like e^{-d²/4t}.
inline AdjointPairing adjoint_pairings(const std::vector<BoundaryMesh>& outer, const std::vector<BoundaryMesh>& cavity,
                                       const DensityFn& psi, const DensityFn& eta, double T, int time_panels = 4) {
  const int n = outer[0].dim;
  std::vector<std::vector<SpatialNode>> on, cn;
  for (const auto& m : outer) on.push_back(mesh_quadrature(m));
  for (const auto& m : cavity) cn.push_back(mesh_quadrature(m));
  double dmin = std::numeric_limits<double>::infinity();
  for (const auto& a : on)
    for (const auto& qa : a)
      for (const auto& b : cn)
        for (const auto& qb : b) dmin = std::min(dmin, (qa.point - qb.point).norm());
  const auto& rule = quad::gauss_legendre<10>();
  // graded rule in τ ∈ (τ_lo, T]
  std::vector<double> tau, wtau;
  const double va = std::min(std::log(dmin * dmin / 4.0) - detail::kLogCutoff, std::log(T) - 1.0), vb = std::log(T);
  const int panels = std::max(time_panels, int(std::ceil((vb - va) / detail::kPanelWidth)));
  const double pw = (vb - va) / panels;
  for (int p = 0; p < panels; ++p)
    for (std::size_t k = 0; k < rule.size(); ++k) {
      const double v = va + (p + 0.5) * pw + 0.5 * pw * rule.nodes[k];
      tau.push_back(std::exp(v));
      wtau.push_back(0.5 * pw * rule.weights[k] * std::exp(v));
    }
  AdjointPairing r;
  for (std::size_t i = 0; i < tau.size(); ++i) {
    const double t = tau[i], s = T - tau[i];
    for (std::size_t c = 0; c < cn.size(); ++c)
      for (const SpatialNode& x : cn[c]) {
        const double th = x.index >= 0 ? double(x.index) : x.theta;
        r.k_eta += wtau[i] * x.weight * eta(c, th, t) * apply_k(on, n, psi, x.point, x.normal, t);
      }
    for (std::size_t o = 0; o < on.size(); ++o)
      for (const SpatialNode& y : on[o]) {
        const double th = y.index >= 0 ? double(y.index) : y.theta;
        r.psi_kstar += wtau[i] * y.weight * psi(o, th, s) * apply_kstar(cn, n, eta, y.point, s, T);
      }
  }
  const double w = T / time_panels;
  for (int p = 0; p < time_panels; ++p)
    for (std::size_t k = 0; k < rule.size(); ++k) {
      const double t = (p + 0.5) * w + 0.5 * w * rule.nodes[k];
      const double wt = 0.5 * w * rule.weights[k];
      for (std::size_t c = 0; c < cn.size(); ++c)
        for (const SpatialNode& x : cn[c]) {
          const double e = eta(c, x.index >= 0 ? double(x.index) : x.theta, t);
          r.eta_norm += wt * x.weight * e * e;
        }
      for (std::size_t o = 0; o < on.size(); ++o)
        for (const SpatialNode& y : on[o]) {
          const double v = psi(o, y.index >= 0 ? double(y.index) : y.theta, t);
          r.psi_norm += wt * y.weight * v * v;
        }
    }
  r.psi_norm = std::sqrt(r.psi_norm);
  r.eta_norm = std::sqrt(r.eta_norm);
  return r;
}

/// ψ(x', y, s) = π^{-n/2} ∫_{σ0}^∞ σ^{n-1} e^{-σ²} η(x', s + r²/(4σ²)) dσ, σ0 = r/(2√(T-s)).
/// `eta_t` is the density at x' as a function of time.
template <class F>
double psi_density(int n, double r, double s, double T, F&& eta_t) {
  const double norm = std::pow(kPi, -0.5 * n);
  if (r == 0.0) return trace_constant_gamma(n) * eta_t(s);
  const double sigma0 = r / (2.0 * std::sqrt(T - s));
  const double smax = 7.0;
  if (sigma0 >= smax) return 0.0;
  const double va = std::log(sigma0), vb = std::log(smax);
  const int panels = std::max(2, int(std::ceil((vb - va) / 0.25)));
  const double w = (vb - va) / panels;
  const auto& rule = quad::gauss_legendre<10>();
  double acc = 0.0;
  for (int p = 0; p < panels; ++p) {
    const double mid = va + (p + 0.5) * w, half = 0.5 * w;
    for (std::size_t k = 0; k < rule.size(); ++k) {
      const double sg = std::exp(mid + half * rule.nodes[k]);
      acc += half * rule.weights[k] * std::pow(sg, n) * std::exp(-sg * sg) * eta_t(s + r * r / (4.0 * sg * sg));
    }
  }
  return norm * acc;
}

/// w(y, s) = (K*η)(y, s) in the ψ-density form: -Σ ∫_{∂D} (ν(x')·(x'-y))/|x'-y|^n ψ(x', y, s) ds.
/// On the boundary itself this is the principal value (the kernel stays bounded).
inline double double_layer_form(const std::vector<BoundaryMesh>& cavity, const DensityFn& eta, const Vec2& y, double s,
                                double T) {
  const int n = cavity[0].dim;
  double acc = 0.0;
  for (std::size_t p = 0; p < cavity.size(); ++p)
    for (const SpatialNode& q : curve_quadrature(cavity[p], y, 32)) {
      const Vec2 d = q.point - y;
      const double r = d.norm();
      if (r == 0.0) continue;  // 1D self term; the kernel vanishes
      const double th = q.index >= 0 ? double(q.index) : q.theta;
      const double kern = q.normal.dot(d) / std::pow(r, n);
      acc -= q.weight * kern * psi_density(n, r, s, T, [&](double t) { return eta(p, th, t); });
    }
  return acc;
}

struct JumpLimits {
  double inner = 0.0;  // x - hν, inside the cavity
  double outer = 0.0;  // x + hν
  double pv = 0.0;
  double eta = 0.0;    // η(x, s)
  std::vector<double> h, inner_values, outer_values;
  double inner_spread = 0.0;  // change between the last two extrapolants
  double outer_spread = 0.0;
};

/// Neville extrapolation of values at h_k to h = 0; returns the table diagonal.
inline std::vector<double> neville_to_zero(const std::vector<double>& h, const std::vector<double>& v) {
  std::vector<double> p = v, diag;
  diag.push_back(p[0]);
  for (std::size_t m = 1; m < h.size(); ++m) {
    for (std::size_t i = 0; i + m < h.size(); ++i)
      p[i] = (h[i + m] * p[i] - h[i] * p[i + 1]) / (h[i + m] - h[i]);
    diag.push_back(p[0]);
  }
  return diag;
}

/// One-sided limits of w = K*η at x ∈ ∂D (part, θ) along the normal, and the principal value.
inline JumpLimits jump_relation_limits(const std::vector<BoundaryMesh>& cavity, const DensityFn& eta, std::size_t part,
                                       double theta, double s, double T, const std::vector<double>& h_seq,
                                       double tolerance = 1e-3) {
  if (h_seq.size() < 2) throw ArgumentError("jump relation needs at least two offsets");
  const BoundaryMesh& m = cavity[part];
  Vec2 x, nu;
  if (m.dim == 1) {
    const int i = int(theta);
    x = m.nodes[i];
    nu = m.normals[i];
  } else {
    x = m.curve->point(theta);
    nu = m.curve->normal(theta);
  }
  JumpLimits jl;
  jl.h = h_seq;
  jl.eta = eta(part, theta, s);
  for (double h : h_seq) {
    jl.inner_values.push_back(double_layer_form(cavity, eta, x - h * nu, s, T));
    jl.outer_values.push_back(double_layer_form(cavity, eta, x + h * nu, s, T));
  }
  const auto di = neville_to_zero(h_seq, jl.inner_values);
  const auto dout = neville_to_zero(h_seq, jl.outer_values);
  jl.inner = di.back();
  jl.outer = dout.back();
  jl.inner_spread = std::abs(di.back() - di[di.size() - 2]);
  jl.outer_spread = std::abs(dout.back() - dout[dout.size() - 2]);
  jl.pv = double_layer_form(cavity, eta, x, s, T);
  const double scale = std::max({std::abs(jl.inner), std::abs(jl.outer), std::abs(jl.eta), 1e-300});
  if (std::max(jl.inner_spread, jl.outer_spread) > tolerance * scale)
    throw AccuracyError("one-sided limit extrapolation did not settle");
  return jl;
}

}  // namespace heatsampler
