#pragma once

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <limits>
#include <vector>

namespace heatsampler::quad {

/// Gauss-Legendre nodes and weights on [-1, 1].
struct Rule {
  std::vector<double> nodes;
  std::vector<double> weights;
  std::size_t size() const { return nodes.size(); }
};

template <unsigned Points>
const Rule& gauss_legendre() {
  static const Rule rule = [] {
    using G = boost::math::quadrature::gauss<double, Points>;
    Rule r;
    const auto& x = G::abscissa();
    const auto& w = G::weights();
    // boost stores the nonnegative half; mirror it.
    for (std::size_t i = x.size(); i-- > 0;) {
      if (x[i] == 0.0) continue;
      r.nodes.push_back(-x[i]);
      r.weights.push_back(w[i]);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      r.nodes.push_back(x[i]);
      r.weights.push_back(w[i]);
    }
    return r;
  }();
  return rule;
}

/// Fixed-order Gauss-Legendre on [a, b].
template <unsigned Points, class F>
double gauss(F&& f, double a, double b) {
  const Rule& r = gauss_legendre<Points>();
  const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
  double sum = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) sum += r.weights[i] * f(mid + half * r.nodes[i]);
  return half * sum;
}

/// Adaptive Gauss-Kronrod on a finite interval.
template <class F>
double adaptive(F&& f, double a, double b, double tol = 1e-13, unsigned max_depth = 30) {
  double err = 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, max_depth, tol, &err);
}

/// Adaptive double-exponential quadrature on [a, infinity).
template <class F>
double adaptive_to_infinity(F&& f, double a, double tol = 1e-14) {
  boost::math::quadrature::exp_sinh<double> integrator;
  if (a == 0.0) return integrator.integrate(f, tol);
  auto shifted = [&](double x) { return f(x + a); };
  return integrator.integrate(shifted, tol);
}

}  // namespace heatsampler::quad
