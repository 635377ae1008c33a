#pragma once

#include "heatsampler/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace heatsampler {

using Vec2 = Eigen::Vector2d;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

/// Star-shaped closed curve x(θ) = c + r(θ)(cos θ, sin θ) with a truncated
/// Fourier radius r(θ) = r0 + Σ_k (a_k cos kθ + b_k sin kθ). A disk has no
/// coefficients. Parameterization is counterclockwise.
struct StarCurve {
  Vec2 center{0.0, 0.0};
  double r0 = 1.0;
  std::vector<double> cos_coeffs;  // a_1, a_2, ...
  std::vector<double> sin_coeffs;  // b_1, b_2, ...

  double radius(double th) const {
    double r = r0;
    for (std::size_t k = 0; k < cos_coeffs.size(); ++k) r += cos_coeffs[k] * std::cos((k + 1) * th);
    for (std::size_t k = 0; k < sin_coeffs.size(); ++k) r += sin_coeffs[k] * std::sin((k + 1) * th);
    return r;
  }
  double radius_d1(double th) const {
    double r = 0.0;
    for (std::size_t k = 0; k < cos_coeffs.size(); ++k) r -= (k + 1) * cos_coeffs[k] * std::sin((k + 1) * th);
    for (std::size_t k = 0; k < sin_coeffs.size(); ++k) r += (k + 1) * sin_coeffs[k] * std::cos((k + 1) * th);
    return r;
  }
  double radius_d2(double th) const {
    double r = 0.0;
    for (std::size_t k = 0; k < cos_coeffs.size(); ++k) {
      const double kk = double(k + 1) * double(k + 1);
      r -= kk * cos_coeffs[k] * std::cos((k + 1) * th);
    }
    for (std::size_t k = 0; k < sin_coeffs.size(); ++k) {
      const double kk = double(k + 1) * double(k + 1);
      r -= kk * sin_coeffs[k] * std::sin((k + 1) * th);
    }
    return r;
  }

  Vec2 point(double th) const { return center + radius(th) * Vec2(std::cos(th), std::sin(th)); }
  /// dx/dθ
  Vec2 tangent(double th) const {
    const Vec2 e(std::cos(th), std::sin(th)), ep(-std::sin(th), std::cos(th));
    return radius_d1(th) * e + radius(th) * ep;
  }
  /// d²x/dθ²
  Vec2 tangent_d1(double th) const {
    const Vec2 e(std::cos(th), std::sin(th)), ep(-std::sin(th), std::cos(th));
    return (radius_d2(th) - radius(th)) * e + 2.0 * radius_d1(th) * ep;
  }
  double speed(double th) const { return tangent(th).norm(); }
  /// Unit normal pointing out of the enclosed region.
  Vec2 normal(double th) const {
    const Vec2 t = tangent(th);
    return Vec2(t.y(), -t.x()) / t.norm();
  }
  double curvature(double th) const {
    const Vec2 d1 = tangent(th), d2 = tangent_d1(th);
    return (d1.x() * d2.y() - d1.y() * d2.x()) / std::pow(d1.norm(), 3);
  }
  double angle_of(const Vec2& p) const {
    double a = std::atan2(p.y() - center.y(), p.x() - center.x());
    return a < 0.0 ? a + kTwoPi : a;
  }
  bool contains(const Vec2& p) const { return (p - center).norm() < radius(angle_of(p)); }

  /// Parameter of the closest boundary point: dense sampling then Newton on
  /// (x(θ) - p)·x'(θ) = 0.
  double closest_parameter(const Vec2& p, int samples = 512) const {
    double best = 0.0, best_d2 = std::numeric_limits<double>::infinity();
    for (int i = 0; i < samples; ++i) {
      const double th = kTwoPi * i / samples;
      const double d2 = (point(th) - p).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = th;
      }
    }
    double th = best;
    const double step_cap = kTwoPi / samples;
    for (int it = 0; it < 50; ++it) {
      const Vec2 d = point(th) - p, t1 = tangent(th), t2 = tangent_d1(th);
      const double g = d.dot(t1);
      const double gp = t1.squaredNorm() + d.dot(t2);
      if (gp <= 0.0) break;
      double step = g / gp;
      step = std::clamp(step, -step_cap, step_cap);
      th -= step;
      if (std::abs(step) < 1e-15) break;
    }
    th = std::fmod(th, kTwoPi);
    return th < 0.0 ? th + kTwoPi : th;
  }

  /// Negative inside, positive outside.
  double signed_distance(const Vec2& p) const {
    const double th = closest_parameter(p);
    const double d = (point(th) - p).norm();
    return contains(p) ? -d : d;
  }
};

enum class ShapeKind { interval, disk, star };

inline std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::interval: return "interval";
    case ShapeKind::disk: return "disk";
    case ShapeKind::star: return "star";
  }
  return "?";
}

/// Either a 1D interval or a 2D star-shaped region (disk is the coefficient-free case).
struct DomainShape {
  ShapeKind kind = ShapeKind::disk;
  double lo = 0.0, hi = 1.0;  // interval
  StarCurve curve;            // disk / star

  static DomainShape interval(double lo, double hi) {
    DomainShape s;
    s.kind = ShapeKind::interval;
    s.lo = lo;
    s.hi = hi;
    return s;
  }
  static DomainShape disk(Vec2 center, double radius) {
    DomainShape s;
    s.kind = ShapeKind::disk;
    s.curve.center = center;
    s.curve.r0 = radius;
    return s;
  }
  static DomainShape star(Vec2 center, double r0, std::vector<double> a, std::vector<double> b) {
    DomainShape s;
    s.kind = ShapeKind::star;
    s.curve.center = center;
    s.curve.r0 = r0;
    s.curve.cos_coeffs = std::move(a);
    s.curve.sin_coeffs = std::move(b);
    return s;
  }

  int dim() const { return kind == ShapeKind::interval ? 1 : 2; }

  /// Negative inside, positive outside.
  double signed_distance(const Vec2& p) const {
    if (kind == ShapeKind::interval) return std::max(lo - p.x(), p.x() - hi);
    return curve.signed_distance(p);
  }
  bool contains(const Vec2& p) const {
    if (kind == ShapeKind::interval) return p.x() > lo && p.x() < hi;
    return curve.contains(p);
  }
  double measure() const;

  void validate() const {
    if (kind == ShapeKind::interval) {
      if (!(hi > lo)) throw GeometryError("interval must satisfy lo < hi");
      return;
    }
    constexpr int fine = 4096;
    for (int i = 0; i < fine; ++i) {
      const double th = kTwoPi * i / fine;
      if (!(curve.radius(th) > 0.0))
        throw GeometryError("radius function is not positive at theta=" + std::to_string(th));
      if (!std::isfinite(curve.radius_d2(th))) throw GeometryError("radius function is not C2");
    }
  }
};

inline double DomainShape::measure() const {
  if (kind == ShapeKind::interval) return hi - lo;
  // area = ½∮ r(θ)² dθ, trapezoid is spectrally accurate for periodic integrands
  constexpr int n = 4096;
  double a = 0.0;
  for (int i = 0; i < n; ++i) {
    const double r = curve.radius(kTwoPi * i / n);
    a += 0.5 * r * r;
  }
  return a * kTwoPi / n;
}

/// Ω with cavities D over the time window (0, T).
struct Scene {
  int dim = 2;
  DomainShape outer;
  std::vector<DomainShape> cavities;
  double final_time = 1.0;
  /// Required positive gap between cavities and the outer boundary, and between cavities.
  double clearance = 1e-2;

  Scene outer_only() const {
    Scene s = *this;
    s.cavities.clear();
    return s;
  }

  void validate() const;
};

namespace detail {

inline std::vector<Vec2> sample_boundary(const DomainShape& s, int n = 720) {
  if (s.kind == ShapeKind::interval) return {Vec2(s.lo, 0.0), Vec2(s.hi, 0.0)};
  std::vector<Vec2> pts;
  pts.reserve(n);
  for (int i = 0; i < n; ++i) pts.push_back(s.curve.point(kTwoPi * i / n));
  return pts;
}

}  // namespace detail

inline void Scene::validate() const {
  if (dim != 1 && dim != 2) throw GeometryError("dimension must be 1 or 2");
  if (!(final_time > 0.0)) throw GeometryError("final time must be positive");
  if (!(clearance > 0.0)) throw GeometryError("clearance must be positive");
  outer.validate();
  if (outer.dim() != dim) throw GeometryError("outer shape does not match scene dimension");
  for (std::size_t i = 0; i < cavities.size(); ++i) {
    const auto& c = cavities[i];
    c.validate();
    if (c.dim() != dim) throw GeometryError("cavity " + std::to_string(i) + " does not match scene dimension");
    for (const Vec2& p : detail::sample_boundary(c)) {
      if (-outer.signed_distance(p) < clearance)
        throw GeometryError("cavity " + std::to_string(i) + " is closer than the clearance to the outer boundary");
    }
    for (std::size_t j = 0; j < i; ++j) {
      for (const Vec2& p : detail::sample_boundary(c)) {
        if (cavities[j].signed_distance(p) < clearance)
          throw GeometryError("cavities " + std::to_string(j) + " and " + std::to_string(i) +
                              " overlap or are closer than the clearance");
      }
    }
  }
}

/// Nodes, outward unit normals and arc-length quadrature weights of a boundary.
/// For an interval the boundary is its two endpoints with counting measure.
struct BoundaryMesh {
  int dim = 2;
  std::vector<Vec2> nodes;
  std::vector<Vec2> normals;
  std::vector<double> weights;
  std::vector<double> angles;  // boundary parameter per node (2D)
  std::optional<StarCurve> curve;

  std::size_t size() const { return nodes.size(); }
  double length() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }
};

/// Equispaced parameter nodes; the periodic trapezoid rule gives the weights.
inline BoundaryMesh build_boundary_mesh(const DomainShape& shape, int n_nodes) {
  shape.validate();
  BoundaryMesh m;
  if (shape.kind == ShapeKind::interval) {
    m.dim = 1;
    m.nodes = {Vec2(shape.lo, 0.0), Vec2(shape.hi, 0.0)};
    m.normals = {Vec2(-1.0, 0.0), Vec2(1.0, 0.0)};
    m.weights = {1.0, 1.0};
    m.angles = {0.0, 1.0};
    return m;
  }
  if (n_nodes < 4) throw ArgumentError("a 2D boundary mesh needs at least 4 nodes");
  m.dim = 2;
  m.curve = shape.curve;
  const double dth = kTwoPi / n_nodes;
  for (int i = 0; i < n_nodes; ++i) {
    const double th = i * dth;
    m.angles.push_back(th);
    m.nodes.push_back(shape.curve.point(th));
    m.normals.push_back(shape.curve.normal(th));
    m.weights.push_back(shape.curve.speed(th) * dth);
  }
  return m;
}

/// Uniform grid t_j = j·dt on [0, T].
struct TimeGrid {
  int steps = 1;
  double final_time = 1.0;

  TimeGrid() = default;
  TimeGrid(int steps_, double final_time_) : steps(steps_), final_time(final_time_) {
    if (steps < 1) throw ArgumentError("time grid needs at least one step");
    if (!(final_time > 0.0)) throw ArgumentError("final time must be positive");
  }
  double dt() const { return final_time / steps; }
  double node(int j) const { return j == steps ? final_time : j * dt(); }
  int size() const { return steps + 1; }
  /// Trapezoid weight of node j.
  double weight(int j) const { return (j == 0 || j == steps) ? 0.5 * dt() : dt(); }
  TimeGrid refined(int factor) const { return TimeGrid(steps * factor, final_time); }
};

/// Signed distance to the cavity set: negative inside D, positive in Ω∖D̄.
/// Without cavities this is the distance to ∂Ω, positive inside Ω.
inline double signed_distance(const Scene& scene, const Vec2& y) {
  if (scene.cavities.empty()) return -scene.outer.signed_distance(y);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : scene.cavities) best = std::min(best, c.signed_distance(y));
  return best;
}

/// Index of the cavity containing y, or -1.
inline int cavity_containing(const Scene& scene, const Vec2& y) {
  for (std::size_t i = 0; i < scene.cavities.size(); ++i)
    if (scene.cavities[i].contains(y)) return int(i);
  return -1;
}

}  // namespace heatsampler
