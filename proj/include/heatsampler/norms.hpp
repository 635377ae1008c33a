#pragma once

#include "heatsampler/errors.hpp"
#include "heatsampler/geometry.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <vector>

namespace heatsampler {

namespace detail {
inline int signed_mode(int q, int n) { return q <= n / 2 ? q : q - n; }
}  // namespace detail

/// H^s norm of nodal values on a boundary mesh. In 2D the values are weighted
/// by √speed, transformed in the boundary parameter, and the modes weighted by
/// (1+k²)^s. In 1D all H^s norms are the Euclidean norm of the endpoint values.
inline double boundary_norm(const BoundaryMesh& mesh, const Eigen::Ref<const Eigen::VectorXd>& values, double s) {
  if (std::size_t(values.size()) != mesh.size()) throw ArgumentError("field length does not match boundary mesh");
  if (mesh.dim == 1) return values.norm();
  const int n = int(mesh.size());
  std::vector<double> g(n);
  for (int i = 0; i < n; ++i) g[i] = values[i] * std::sqrt(mesh.weights[i] * n / kTwoPi);
  std::vector<std::complex<double>> hat;
  Eigen::FFT<double> fft;
  fft.fwd(hat, g);
  double sum = 0.0;
  for (int q = 0; q < n; ++q) {
    const double k = detail::signed_mode(q, n);
    sum += std::pow(1.0 + k * k, s) * std::norm(hat[q]);
  }
  return std::sqrt(kTwoPi * sum) / n;
}

/// Matrix Q with boundary_norm(v)² = vᵀQv.
inline Eigen::MatrixXd boundary_norm_matrix(const BoundaryMesh& mesh, double s) {
  const int n = int(mesh.size());
  if (mesh.dim == 1) return Eigen::MatrixXd::Identity(n, n);
  std::vector<double> lam(n);
  for (int q = 0; q < n; ++q) {
    const double k = detail::signed_mode(q, n);
    lam[q] = std::pow(1.0 + k * k, s);
  }
  // circulant kernel c(d) = (2π/n²) Σ_q λ_q cos(2π k_q d / n)
  std::vector<double> c(n, 0.0);
  for (int d = 0; d < n; ++d) {
    double acc = 0.0;
    for (int q = 0; q < n; ++q) acc += lam[q] * std::cos(kTwoPi * detail::signed_mode(q, n) * d / n);
    c[d] = kTwoPi * acc / (double(n) * n);
  }
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) w[i] = std::sqrt(mesh.weights[i] * n / kTwoPi);
  Eigen::MatrixXd Q(n, n);
  for (int i = 0; i < n; ++i)
    for (int l = 0; l < n; ++l) Q(i, l) = w[i] * c[(i - l + n) % n] * w[l];
  return Q;
}

/// L²((0,T); H^s) norm of a node × time array with trapezoid weights in time.
inline double space_time_norm(const BoundaryMesh& mesh, const TimeGrid& time, const Eigen::MatrixXd& values,
                              double s) {
  if (values.cols() != time.size() || std::size_t(values.rows()) != mesh.size())
    throw ArgumentError("space-time field shape does not match mesh and time grid");
  double sum = 0.0;
  for (int j = 0; j < time.size(); ++j) {
    const double b = boundary_norm(mesh, values.col(j), s);
    sum += time.weight(j) * b * b;
  }
  return std::sqrt(sum);
}

}  // namespace heatsampler
