#pragma once

#include "heatsampler/errors.hpp"
#include "heatsampler/geometry.hpp"
#include "heatsampler/interior_mesh.hpp"
#include "heatsampler/norms.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <memory>
#include <string>
#include <vector>

namespace heatsampler {

/// Values on boundary nodes × time nodes t_0..t_J.
struct SpaceTimeBoundaryField {
  BoundaryMesh mesh;
  TimeGrid time;
  Eigen::MatrixXd values;

  SpaceTimeBoundaryField() = default;
  SpaceTimeBoundaryField(BoundaryMesh m, TimeGrid t)
      : mesh(std::move(m)), time(t), values(Eigen::MatrixXd::Zero(Eigen::Index(mesh.size()), t.size())) {}

  double norm(double s) const { return space_time_norm(mesh, time, values, s); }
};

/// Cell values × time nodes on an interior mesh.
struct HeatField {
  std::shared_ptr<const InteriorMesh> mesh;
  TimeGrid time;
  Eigen::MatrixXd values;

  double mass(int j) const {
    double m = 0.0;
    for (std::size_t c = 0; c < mesh->size(); ++c) m += mesh->volumes[c] * values(Eigen::Index(c), j);
    return m;
  }
  double value_at(const Vec2& p, int j) const {
    const Stencil st = mesh->stencil(p);
    double v = 0.0;
    for (std::size_t k = 0; k < st.cells.size(); ++k) v += st.value[Eigen::Index(k)] * values(st.cells[k], j);
    return v;
  }
};

/// Periodic (Dirichlet-kernel) interpolation weight of node l for n equispaced
/// nodes, evaluated at parameter offset φ = θ - θ_l.
inline double trig_cardinal(int n, double phi) {
  const double half = 0.5 * phi;
  const double sh = std::sin(half);
  if (std::abs(sh) < 1e-13) return 1.0;
  if (n % 2 == 0) return std::sin(n * half) * std::cos(half) / (n * sh);
  return std::sin(n * half) / (n * sh);
}

/// Interpolation weights of all nodes of a 2D boundary mesh at parameter θ.
inline Eigen::VectorXd trig_weights(const BoundaryMesh& mesh, double theta) {
  const int n = int(mesh.size());
  Eigen::VectorXd w(n);
  for (int l = 0; l < n; ++l) w[l] = trig_cardinal(n, theta - mesh.angles[l]);
  return w;
}

/// Discrete flux/density space: spatial basis per boundary part × time hats at t_1..t_J.
/// 2D parts use the Fourier modes 1, cos kθ, sin kθ (k ≤ K) of the boundary
/// parameter; 1D parts use the two endpoint values. Coefficients are ordered
/// time-major: index = (j-1)·spatial_dofs + local.
struct CoefficientSpace {
  std::vector<BoundaryMesh> parts;
  int modes = 4;  // K
  TimeGrid time;
  double order = 0.0;  // Sobolev order s of the norm

  int part_dofs(std::size_t p) const { return parts[p].dim == 1 ? 2 : 2 * modes + 1; }
  int spatial_dofs() const {
    int n = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) n += part_dofs(p);
    return n;
  }
  int part_offset(std::size_t p) const {
    int n = 0;
    for (std::size_t q = 0; q < p; ++q) n += part_dofs(q);
    return n;
  }
  int steps() const { return time.steps; }
  int size() const { return spatial_dofs() * time.steps; }
  int index(int j, int local) const { return (j - 1) * spatial_dofs() + local; }

  /// Value of spatial basis function m of a 2D part at parameter θ.
  static double mode_value(int m, double theta) {
    if (m == 0) return 1.0;
    const int k = (m + 1) / 2;
    return (m % 2 == 1) ? std::cos(k * theta) : std::sin(k * theta);
  }
  static int mode_order(int m) { return (m + 1) / 2; }

  /// Nodes × part_dofs synthesis matrix.
  Eigen::MatrixXd synthesis(std::size_t p) const {
    const auto& mesh = parts[p];
    const int n = int(mesh.size()), m = part_dofs(p);
    if (mesh.dim == 1) return Eigen::MatrixXd::Identity(2, 2);
    if (2 * modes + 1 > n) throw ArgumentError("boundary mesh too coarse for the requested number of modes");
    Eigen::MatrixXd E(n, m);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < m; ++k) E(i, k) = mode_value(k, mesh.angles[i]);
    return E;
  }
  /// Least-squares projection of nodal values onto the spatial basis.
  Eigen::MatrixXd analysis(std::size_t p) const {
    const Eigen::MatrixXd E = synthesis(p);
    return (E.transpose() * E).ldlt().solve(E.transpose());
  }

  /// Gram matrix of the discrete L²((0,T); H^s) inner product.
  Eigen::MatrixXd gram() const {
    const int sd = spatial_dofs();
    Eigen::MatrixXd Gs = Eigen::MatrixXd::Zero(sd, sd);
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const Eigen::MatrixXd E = synthesis(p);
      const int o = part_offset(p), m = part_dofs(p);
      Gs.block(o, o, m, m) = E.transpose() * boundary_norm_matrix(parts[p], order) * E;
    }
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(size(), size());
    for (int j = 1; j <= steps(); ++j) G.block((j - 1) * sd, (j - 1) * sd, sd, sd) = time.weight(j) * Gs;
    return G;
  }

  /// Coefficients → nodal field of part p at t_0..t_J.
  SpaceTimeBoundaryField synthesize(const Eigen::VectorXd& c, std::size_t p = 0) const {
    SpaceTimeBoundaryField f(parts[p], time);
    const Eigen::MatrixXd E = synthesis(p);
    const int sd = spatial_dofs(), o = part_offset(p), m = part_dofs(p);
    for (int j = 1; j <= steps(); ++j) f.values.col(j) = E * c.segment((j - 1) * sd + o, m);
    return f;
  }
  /// Nodal fields (one per part) at t_0..t_J → coefficients (t_0 column ignored).
  Eigen::VectorXd analyze(const std::vector<const SpaceTimeBoundaryField*>& fields) const {
    if (fields.size() != parts.size()) throw ArgumentError("one field per boundary part is required");
    Eigen::VectorXd c = Eigen::VectorXd::Zero(size());
    const int sd = spatial_dofs();
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const Eigen::MatrixXd P = analysis(p);
      const int o = part_offset(p), m = part_dofs(p);
      for (int j = 1; j <= steps(); ++j) c.segment((j - 1) * sd + o, m) = P * fields[p]->values.col(j);
    }
    return c;
  }
  Eigen::VectorXd analyze(const SpaceTimeBoundaryField& f) const { return analyze({&f}); }

  bool compatible(const CoefficientSpace& o) const {
    if (parts.size() != o.parts.size() || modes != o.modes || time.steps != o.time.steps) return false;
    for (std::size_t p = 0; p < parts.size(); ++p)
      if (parts[p].size() != o.parts[p].size()) return false;
    return true;
  }
};

/// Discrete operator between coefficient spaces.
struct OperatorMatrix {
  std::string label;
  CoefficientSpace domain;
  CoefficientSpace codomain;
  Eigen::MatrixXd matrix;

  Eigen::MatrixXd block(int i, int j) const {
    return matrix.block((i - 1) * codomain.spatial_dofs(), (j - 1) * domain.spatial_dofs(), codomain.spatial_dofs(),
                        domain.spatial_dofs());
  }
  /// Largest absolute entry in blocks strictly above (upper = true) or below the block diagonal.
  double off_triangle_max(bool upper) const {
    double m = 0.0;
    for (int i = 1; i <= codomain.steps(); ++i)
      for (int j = 1; j <= domain.steps(); ++j)
        if ((upper && j > i) || (!upper && j < i)) m = std::max(m, block(i, j).cwiseAbs().maxCoeff());
    return m;
  }
  bool causal() const { return off_triangle_max(true) == 0.0; }
  bool anticausal() const { return off_triangle_max(false) == 0.0; }
};

}  // namespace heatsampler
