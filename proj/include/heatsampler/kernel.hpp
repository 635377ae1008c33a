#pragma once

#include "heatsampler/errors.hpp"
#include "heatsampler/geometry.hpp"
#include "heatsampler/quadrature.hpp"

#include <cmath>
#include <vector>

namespace heatsampler {

namespace detail {
// Exponents beyond this are treated as exact zeros.
inline constexpr double kMaxExponent = 700.0;

inline double heat_prefactor(int n, double tau) {
  const double q = 4.0 * kPi * tau;
  switch (n) {
    case 1: return 1.0 / std::sqrt(q);
    case 2: return 1.0 / q;
    case 3: return 1.0 / (q * std::sqrt(q));
    default: return std::pow(q, -0.5 * n);
  }
}
}  // namespace detail

/// Γ(x,t;y,s) = (4π(t-s))^{-n/2} exp(-|x-y|²/(4(t-s))), zero for t ≤ s.
inline double heat_kernel(int n, double r2, double tau) {
  if (!(tau > 0.0)) return 0.0;
  const double e = r2 / (4.0 * tau);
  if (e > detail::kMaxExponent) return 0.0;
  return detail::heat_prefactor(n, tau) * std::exp(-e);
}

inline double fundamental_solution(int n, const Vec2& x, double t, const Vec2& y, double s) {
  return heat_kernel(n, (x - y).squaredNorm(), t - s);
}

/// M(x,t;y,s) = ∂_{ν(x)} Γ = -(ν·(x-y)) / (2(t-s)) · Γ.
inline double normal_derivative_kernel(int n, const Vec2& x, double t, const Vec2& y, double s, const Vec2& nu) {
  const double tau = t - s;
  if (!(tau > 0.0)) return 0.0;
  const Vec2 d = x - y;
  return -nu.dot(d) / (2.0 * tau) * heat_kernel(n, d.squaredNorm(), tau);
}

/// Gradient of Γ with respect to x.
inline Vec2 fundamental_solution_gradient(int n, const Vec2& x, double t, const Vec2& y, double s) {
  const double tau = t - s;
  if (!(tau > 0.0)) return Vec2::Zero();
  const Vec2 d = x - y;
  return -d / (2.0 * tau) * heat_kernel(n, d.squaredNorm(), tau);
}

/// Sample for the layer-kernel decay bounds. M is evaluated as M(y,s;x,t) with
/// s > t, and ν_x, ν_y are the curve normals at x and y.
struct KernelSample {
  Vec2 x;
  double t = 0.0;
  Vec2 y;
  double s = 0.0;
  Vec2 nu_x{1.0, 0.0};
  Vec2 nu_y{1.0, 0.0};
};

struct BoundReport {
  std::vector<double> m_scaled;      // |M|·(s-t)^α |x-y|^{n-2α}
  std::vector<double> dm_scaled;     // |∂_{ν(x)}M| scaled by the two-term weight
  double m_sup = 0.0;
  double dm_sup = 0.0;
  /// max/min over the trailing window; ≤ 2 counts as stabilized.
  double m_tail_spread = 1.0;
  double dm_tail_spread = 1.0;
  bool bounded = false;
};

/// ∂_{ν(x)} of M(y,s;x,t) = -(ν_y·(y-x))/(2τ) Γ(y-x, τ), differentiated in x along ν_x.
inline double normal_derivative_kernel_dx(int n, const KernelSample& k) {
  const double tau = k.s - k.t;
  if (!(tau > 0.0)) return 0.0;
  const Vec2 d = k.y - k.x;
  const double g = heat_kernel(n, d.squaredNorm(), tau);
  // ∂_x [ν_y·d] = -ν_y ; ∂_x Γ = d/(2τ) Γ
  const double term1 = k.nu_y.dot(k.nu_x) / (2.0 * tau) * g;
  const double term2 = -k.nu_y.dot(d) / (2.0 * tau) * (k.nu_x.dot(d) / (2.0 * tau)) * g;
  return term1 + term2;
}

inline BoundReport check_kernel_decay_bounds(int n, double alpha, const std::vector<KernelSample>& samples,
                                             std::size_t tail = 5) {
  if (samples.empty()) throw ArgumentError("decay bound check needs at least one sample");
  if (!(alpha > 0.0 && alpha < 0.5)) throw ArgumentError("alpha must lie in (0, 1/2)");
  BoundReport rep;
  for (const auto& k : samples) {
    const double tau = k.s - k.t;
    const double r = (k.x - k.y).norm();
    if (!(tau > 0.0) || !(r > 0.0)) throw ArgumentError("decay bound samples need s > t and x != y");
    const double m = std::abs(normal_derivative_kernel(n, k.y, k.s, k.x, k.t, k.nu_y));
    rep.m_scaled.push_back(m * std::pow(tau, alpha) * std::pow(r, n - 2.0 * alpha));
    // two-term bound C (s-t)^{-α} (|x-y|^{-n+2α} + |x-y|^{-n-2+2α})
    const double dm = std::abs(normal_derivative_kernel_dx(n, k));
    const double w = std::pow(tau, alpha) / (std::pow(r, -n + 2 * alpha) + std::pow(r, -n - 2 + 2 * alpha));
    rep.dm_scaled.push_back(dm * w);
  }
  auto spread = [&](const std::vector<double>& v) {
    const std::size_t m = std::min(tail, v.size());
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (std::size_t i = v.size() - m; i < v.size(); ++i) {
      lo = std::min(lo, v[i]);
      hi = std::max(hi, v[i]);
    }
    if (hi == 0.0) return 1.0;
    return lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  };
  rep.m_sup = *std::max_element(rep.m_scaled.begin(), rep.m_scaled.end());
  rep.dm_sup = *std::max_element(rep.dm_scaled.begin(), rep.dm_scaled.end());
  rep.m_tail_spread = spread(rep.m_scaled);
  rep.dm_tail_spread = spread(rep.dm_scaled);
  rep.bounded = std::isfinite(rep.m_sup) && std::isfinite(rep.dm_sup) && rep.m_tail_spread <= 2.0 &&
                rep.dm_tail_spread <= 2.0;
  return rep;
}

/// γ_n = π^{-n/2} ∫₀^∞ s^{n-1} e^{-s²} ds.
inline double trace_constant_gamma(int n) {
  if (n < 1 || n > 3) throw ArgumentError("trace constant is defined for n = 1, 2, 3");
  const double integral = quad::adaptive_to_infinity(
      [n](double s) { return std::pow(s, n - 1) * std::exp(-s * s); }, 0.0, 1e-15);
  return integral / std::pow(std::sqrt(kPi), n);
}

}  // namespace heatsampler
