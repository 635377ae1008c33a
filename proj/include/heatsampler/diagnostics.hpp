#pragma once

#include "heatsampler/errors.hpp"
#include "heatsampler/geometry.hpp"
#include "heatsampler/kernel.hpp"
#include "heatsampler/norms.hpp"
#include "heatsampler/parallel.hpp"
#include "heatsampler/quadrature.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace heatsampler {

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

/// Least-squares line y = slope·x + intercept with coefficient of determination.
inline LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ArgumentError("linear fit needs at least two paired values");
  const double n = double(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw ArgumentError("linear fit needs distinct abscissae");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0.0 ? std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0) : 1.0;
  return f;
}

struct BlowupReport {
  std::vector<double> parameters;  // d_k or ε_k, strictly decreasing
  std::vector<double> values;
  LinearFit fit;
  bool monotone = false;           // values strictly increasing along the sequence
  std::vector<std::string> warnings;
  // full H¹ values for the Γ divergence study
  std::vector<double> secondary;
  LinearFit secondary_fit;
  double increment_ratio = 0.0;    // last increment over the one before
};

namespace detail {
inline bool strictly_decreasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i] < v[i - 1])) return false;
  return true;
}
inline bool strictly_increasing_tail(const std::vector<double>& v, std::size_t tail) {
  const std::size_t start = v.size() > tail ? v.size() - tail : 0;
  for (std::size_t i = start + 1; i < v.size(); ++i)
    if (!(v[i] > v[i - 1])) return false;
  return v.size() >= 2;
}
// Gauss panels of width ≤ w on [a, b].
template <class F>
double panel_gauss(F&& f, double a, double b, double w) {
  if (!(b > a)) return 0.0;
  const int panels = std::max(1, int(std::ceil((b - a) / w)));
  const double step = (b - a) / panels;
  double sum = 0.0;
  for (int p = 0; p < panels; ++p) sum += quad::gauss<10>(f, a + p * step, a + (p + 1) * step);
  return sum;
}
}  // namespace detail

struct FluxSweepOptions {
  int nodes = 2048;
  double norm_order = -0.5;
  int threads = 0;
};

/// ‖∂_νΓ_{(y_k,s)}‖_{L²((0,T);H^{-1/2}(∂D))} for y_k = x* - d_k ν(x*) approaching x* ∈ ∂D from inside.
inline BlowupReport normal_flux_norm_sweep(const Scene& scene, int cavity, double theta_star, double s,
                                           std::vector<double> distances, const FluxSweepOptions& opt = {}) {
  if (scene.dim != 2) throw ArgumentError("normal flux sweep is defined for planar scenes");
  if (cavity < 0 || cavity >= int(scene.cavities.size())) throw ArgumentError("cavity index out of range");
  if (!(s > 0.0 && s < scene.final_time)) throw ArgumentError("source time must lie in (0, T)");
  if (!detail::strictly_decreasing(distances)) throw ArgumentError("distances must be strictly decreasing");
  const DomainShape& shape = scene.cavities[std::size_t(cavity)];
  const BoundaryMesh mesh = build_boundary_mesh(shape, opt.nodes);
  const StarCurve& curve = *mesh.curve;
  double spacing = 0.0;
  for (std::size_t i = 0; i < mesh.size(); ++i)
    spacing = std::max(spacing, (mesh.nodes[(i + 1) % mesh.size()] - mesh.nodes[i]).norm());

  BlowupReport rep;
  for (double d : distances) {
    if (d < 2.0 * spacing) {
      rep.warnings.push_back("distance " + std::to_string(d) + " is below the boundary mesh resolution; sequence truncated");
      break;
    }
    rep.parameters.push_back(d);
  }
  if (rep.parameters.size() < 2) throw ArgumentError("fewer than two resolvable distances");

  const Vec2 xs = curve.point(theta_star), nu = curve.normal(theta_star);
  const double span = scene.final_time - s;
  rep.values.assign(rep.parameters.size(), 0.0);
  parallel_for(rep.parameters.size(), resolve_threads(opt.threads), [&](std::size_t k) {
    const double d = rep.parameters[k];
    const Vec2 y = xs - d * nu;
    Eigen::VectorXd vals(Eigen::Index(mesh.size()));
    auto integrand = [&](double u) {
      const double tau = std::exp(u);
      for (std::size_t i = 0; i < mesh.size(); ++i)
        vals[Eigen::Index(i)] = normal_derivative_kernel(2, mesh.nodes[i], s + tau, y, s, mesh.normals[i]);
      const double nrm = boundary_norm(mesh, vals, opt.norm_order);
      return nrm * nrm * tau;
    };
    const double lo = std::log(d * d / 4.0) - std::log(60.0);
    rep.values[k] = std::sqrt(detail::panel_gauss(integrand, std::min(lo, std::log(span)), std::log(span), 0.5));
  });
  std::vector<double> lx, ly;
  for (std::size_t k = 0; k < rep.values.size(); ++k) {
    lx.push_back(std::log(rep.parameters[k]));
    ly.push_back(std::log(rep.values[k]));
  }
  rep.fit = linear_fit(lx, ly);
  rep.monotone = detail::strictly_increasing_tail(rep.values, 5);
  return rep;
}

/// Closed form of ξ⁻² ∫_{ξ²/T}^∞ σ e^{-σ/2} dσ.
inline double lower_bound_integral(double xi, double T) {
  if (!(xi > 0.0) || !(T > 0.0)) throw ArgumentError("lower bound integral needs ξ > 0 and T > 0");
  const double a = xi * xi / T;
  return (2.0 * a + 4.0) * std::exp(-0.5 * a) / (xi * xi);
}

inline double lower_bound_integral_quadrature(double xi, double T) {
  if (!(xi > 0.0) || !(T > 0.0)) throw ArgumentError("lower bound integral needs ξ > 0 and T > 0");
  const double a = xi * xi / T;
  return quad::adaptive_to_infinity([](double x) { return x * std::exp(-0.5 * x); }, a) / (xi * xi);
}

struct DivergenceOptions {
  int angles = 720;
  double radial_width = 0.5;  // panel width in r/√τ
  double time_width = 0.5;    // panel width in log τ
  int threads = 0;
};

/// Time-truncated ∫_{s+ε}^T ‖Γ_{(y,s)}(·,t)‖² over Ω∖D̄ for each ε: values hold the L² part,
/// secondary the full H¹ norm. Polar quadrature around y with the angular measure of Ω∖D̄.
inline BlowupReport gamma_h1_divergence(const Scene& scene, const Vec2& y, double s, std::vector<double> eps,
                                        const DivergenceOptions& opt = {}) {
  if (!(s > 0.0 && s < scene.final_time)) throw ArgumentError("source time must lie in (0, T)");
  if (!detail::strictly_decreasing(eps) || eps.empty() || eps.back() <= 0.0)
    throw ArgumentError("ε sequence must be positive and strictly decreasing");
  const double span = scene.final_time - s;
  BlowupReport rep;
  for (double e : eps) {
    if (e >= span) throw ArgumentError("ε must be smaller than T - s");
    if (e < 1e-10 * scene.final_time) {
      rep.warnings.push_back("ε = " + std::to_string(e) + " is below the time quadrature resolution; sequence truncated");
      break;
    }
    rep.parameters.push_back(e);
  }
  if (rep.parameters.size() < 2) throw ArgumentError("fewer than two resolvable cutoffs");
  const int n = scene.dim;

  auto in_region = [&](const Vec2& p) { return scene.outer.contains(p) && cavity_containing(scene, p) < 0; };
  // measure of directions (with r^{n-1}) in which y + r·ω lies in Ω∖D̄
  auto angular = [&](double r) {
    if (n == 1) return double(in_region(y + Vec2(r, 0.0))) + double(in_region(y - Vec2(r, 0.0)));
    int hits = 0;
    for (int a = 0; a < opt.angles; ++a) {
      const double th = kTwoPi * (a + 0.5) / opt.angles;
      hits += in_region(y + r * Vec2(std::cos(th), std::sin(th))) ? 1 : 0;
    }
    return kTwoPi * hits / opt.angles * r;
  };
  double reach = 0.0;
  for (const Vec2& p : detail::sample_boundary(scene.outer)) reach = std::max(reach, (p - y).norm());

  // per-time spatial integrals of Γ² and |∇Γ|²
  auto spatial = [&](double tau, double& l2, double& grad) {
    const double sq = std::sqrt(tau);
    const double rho_max = std::min(reach / sq, 12.0);
    l2 = grad = 0.0;
    const int panels = std::max(1, int(std::ceil(rho_max / opt.radial_width)));
    const double step = rho_max / panels;
    const quad::Rule& rule = quad::gauss_legendre<10>();
    for (int p = 0; p < panels; ++p)
      for (std::size_t q = 0; q < rule.size(); ++q) {
        const double rho = step * (p + 0.5 + 0.5 * rule.nodes[q]);
        const double w = 0.5 * step * rule.weights[q] * sq;
        const double r = rho * sq;
        const double g = heat_kernel(n, r * r, tau);
        const double m = angular(r);
        l2 += w * m * g * g;
        grad += w * m * g * g * r * r / (4.0 * tau * tau);
      }
  };

  // time panels in log τ with breakpoints at every ε_k
  std::vector<double> breaks;
  for (double e : rep.parameters) breaks.push_back(std::log(e));
  std::reverse(breaks.begin(), breaks.end());
  breaks.push_back(std::log(span));
  struct Panel {
    double a, b;
    int segment;
  };
  std::vector<Panel> panels;
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
    const int m = std::max(1, int(std::ceil((breaks[i + 1] - breaks[i]) / opt.time_width)));
    for (int p = 0; p < m; ++p)
      panels.push_back({breaks[i] + (breaks[i + 1] - breaks[i]) * p / m, breaks[i] + (breaks[i + 1] - breaks[i]) * (p + 1) / m,
                        int(i)});
  }
  std::vector<double> pl2(panels.size()), pgr(panels.size());
  parallel_for(panels.size(), resolve_threads(opt.threads), [&](std::size_t k) {
    const quad::Rule& rule = quad::gauss_legendre<10>();
    const double h = 0.5 * (panels[k].b - panels[k].a), c = 0.5 * (panels[k].a + panels[k].b);
    double a2 = 0.0, ag = 0.0;
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const double tau = std::exp(c + h * rule.nodes[q]);
      double l2, grad;
      spatial(tau, l2, grad);
      a2 += h * rule.weights[q] * tau * l2;
      ag += h * rule.weights[q] * tau * grad;
    }
    pl2[k] = a2;
    pgr[k] = ag;
  });
  // segment i covers [ε_{m-1-i}, next break]; the truncated integral for ε_k sums segments ≥ its index
  const std::size_t m = rep.parameters.size();
  std::vector<double> seg2(m, 0.0), segg(m, 0.0);
  for (std::size_t k = 0; k < panels.size(); ++k) {
    seg2[std::size_t(panels[k].segment)] += pl2[k];
    segg[std::size_t(panels[k].segment)] += pgr[k];
  }
  rep.values.assign(m, 0.0);
  rep.secondary.assign(m, 0.0);
  double acc2 = 0.0, accg = 0.0;
  for (std::size_t i = m; i-- > 0;) {
    acc2 += seg2[i];
    accg += segg[i];
    const std::size_t k = m - 1 - i;
    rep.values[k] = acc2;
    rep.secondary[k] = acc2 + accg;
  }
  std::vector<double> lx;
  for (double e : rep.parameters) lx.push_back(std::log(1.0 / e));
  rep.fit = linear_fit(lx, rep.values);
  rep.secondary_fit = linear_fit(lx, rep.secondary);
  rep.monotone = detail::strictly_increasing_tail(rep.values, rep.values.size());
  if (m >= 3) {
    const double d1 = rep.values[m - 1] - rep.values[m - 2], d0 = rep.values[m - 2] - rep.values[m - 3];
    rep.increment_ratio = d0 != 0.0 ? d1 / d0 : 0.0;
  }
  return rep;
}

struct AuxiliaryCheck {
  double norm_sq = 0.0;        // ‖φ‖²_{H¹(D₂)} by quadrature
  double bound = 0.0;          // c²(2πt + π)
  double stated_bound = 0.0;   // c²(2√π t + π)
  double pairing = 0.0;        // ∫_{D₂} e^{-|η|²/(2t)} by quadrature
  double closed_form = 0.0;    // 2t·I(t)
  double i_t = 0.0;
  bool bound_holds = false;
  bool stated_bound_holds = false;
};

/// I(t) = ∫_{D_t} e^{-|γ|²} over the rescaled patch D_t = [-l/√(2t), l/√(2t)]².
inline double auxiliary_integral(double t, double l) {
  if (!(t > 0.0) || !(l > 0.0)) throw ArgumentError("auxiliary integral needs t > 0 and l > 0");
  const double e = std::erf(l / std::sqrt(2.0 * t));
  return kPi * e * e;
}

/// Test function φ(η) = c e^{-|η|²/(4t)} on the patch D₂ = [-l, l]².
inline AuxiliaryCheck auxiliary_test_function_check(double t, double l, double c, double T) {
  if (!(t > 0.0 && t <= T)) throw ArgumentError("auxiliary check needs 0 < t ≤ T");
  if (!(l > 0.0)) throw ArgumentError("patch half-width must be positive");
  AuxiliaryCheck r;
  auto patch = [&](auto&& f) {
    return quad::adaptive([&](double a) { return quad::adaptive([&](double b) { return f(a, b); }, -l, l, 1e-12); },
                          -l, l, 1e-12);
  };
  r.norm_sq = patch([&](double a, double b) {
    const double q = a * a + b * b;
    const double phi2 = c * c * std::exp(-q / (2.0 * t));
    return phi2 * (1.0 + q / (4.0 * t * t));
  });
  r.pairing = patch([&](double a, double b) { return std::exp(-(a * a + b * b) / (2.0 * t)); });
  r.i_t = auxiliary_integral(t, l);
  r.closed_form = 2.0 * t * r.i_t;
  r.bound = c * c * (kTwoPi * t + kPi);
  r.stated_bound = c * c * (2.0 * std::sqrt(kPi) * t + kPi);
  r.bound_holds = r.norm_sq <= r.bound * (1.0 + 1e-12);
  r.stated_bound_holds = r.norm_sq <= r.stated_bound * (1.0 + 1e-12);
  return r;
}

}  // namespace heatsampler
