#pragma once

#include "heatsampler/errors.hpp"
#include "heatsampler/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <array>
#include <cmath>
#include <numeric>
#include <queue>
#include <vector>

namespace heatsampler {

/// A piece of boundary curve inside one cell. `normal` is the outward normal of
/// the shape that owns the curve (Ω for tag 0, cavity i for tag i+1).
struct BoundaryPiece {
  int cell = -1;
  double theta = 0.0;  // curve parameter at the piece midpoint (1D: endpoint index)
  Vec2 point;
  Vec2 normal;
  double weight = 0.0;  // arc length (1D: 1)
};

/// Linear weights reproducing value and gradient at a point from cell values.
struct Stencil {
  std::vector<int> cells;
  Eigen::VectorXd value;
  Eigen::VectorXd dx;
  Eigen::VectorXd dy;
};

/// Finite-volume discretization of Ω∖D̄. 1D: node-centred uniform intervals,
/// one per connected component. 2D: Cartesian cells clipped to the domain.
/// Boundary tags: 0 = outer boundary, i+1 = cavity i.
struct InteriorMesh {
  int dim = 2;
  double h = 0.0;
  std::vector<Vec2> centroids;
  std::vector<double> volumes;
  Eigen::SparseMatrix<double> laplacian;  // symmetric PSD, (L u)_i = Σ_j T_ij (u_i - u_j)
  std::vector<std::vector<BoundaryPiece>> pieces;

  // 2D grid bookkeeping
  Vec2 origin{0.0, 0.0};
  int nx = 0, ny = 0;
  std::vector<int> cell_of_grid;
  std::vector<std::array<int, 2>> grid_of_cell;
  std::vector<double> wall_distance;  // centroid distance to the nearest boundary curve

  // 1D segments: [first, last] cell index
  std::vector<std::array<int, 2>> segments;

  std::size_t size() const { return volumes.size(); }
  int num_tags() const { return int(pieces.size()); }
  double area() const { return std::accumulate(volumes.begin(), volumes.end(), 0.0); }

  bool connected() const {
    const int n = int(size());
    if (n == 0) return false;
    std::vector<char> seen(n, 0);
    std::queue<int> q;
    q.push(0);
    seen[0] = 1;
    int count = 1;
    while (!q.empty()) {
      const int c = q.front();
      q.pop();
      for (Eigen::SparseMatrix<double>::InnerIterator it(laplacian, c); it; ++it) {
        const int r = int(it.row());
        if (r != c && it.value() != 0.0 && !seen[r]) {
          seen[r] = 1;
          ++count;
          q.push(r);
        }
      }
    }
    return count == n;
  }

  /// Cell whose region contains p, or the nearest cell centroid nearby.
  int locate(const Vec2& p) const;

  /// Quadratic least-squares stencil (2D) or quadratic Lagrange stencil (1D).
  Stencil stencil(const Vec2& p) const;

  /// Sum of boundary piece weights for a tag.
  double boundary_length(int tag) const {
    double s = 0.0;
    for (const auto& pc : pieces[tag]) s += pc.weight;
    return s;
  }
};

namespace detail {

struct Polygon {
  std::vector<Vec2> v;
};

inline double polygon_area(const std::vector<Vec2>& p) {
  double a = 0.0;
  for (std::size_t i = 0, n = p.size(); i < n; ++i) {
    const Vec2& u = p[i];
    const Vec2& w = p[(i + 1) % n];
    a += u.x() * w.y() - w.x() * u.y();
  }
  return 0.5 * a;
}

inline Vec2 polygon_centroid(const std::vector<Vec2>& p, double area) {
  Vec2 c(0.0, 0.0);
  for (std::size_t i = 0, n = p.size(); i < n; ++i) {
    const Vec2& u = p[i];
    const Vec2& w = p[(i + 1) % n];
    const double cr = u.x() * w.y() - w.x() * u.y();
    c += (u + w) * cr;
  }
  return c / (6.0 * area);
}

// Sutherland-Hodgman clip of an arbitrary simple polygon by an axis-aligned box.
inline std::vector<Vec2> clip_to_box(const std::vector<Vec2>& subject, double x0, double y0, double x1, double y1) {
  std::vector<Vec2> out = subject, in;
  auto clip = [&](auto inside, auto intersect) {
    in.swap(out);
    out.clear();
    if (in.empty()) return;
    Vec2 prev = in.back();
    bool prev_in = inside(prev);
    for (const Vec2& cur : in) {
      const bool cur_in = inside(cur);
      if (cur_in) {
        if (!prev_in) out.push_back(intersect(prev, cur));
        out.push_back(cur);
      } else if (prev_in) {
        out.push_back(intersect(prev, cur));
      }
      prev = cur;
      prev_in = cur_in;
    }
  };
  auto at_x = [](const Vec2& a, const Vec2& b, double x) {
    const double t = (x - a.x()) / (b.x() - a.x());
    return Vec2(x, a.y() + t * (b.y() - a.y()));
  };
  auto at_y = [](const Vec2& a, const Vec2& b, double y) {
    const double t = (y - a.y()) / (b.y() - a.y());
    return Vec2(a.x() + t * (b.x() - a.x()), y);
  };
  clip([&](const Vec2& p) { return p.x() >= x0; }, [&](const Vec2& a, const Vec2& b) { return at_x(a, b, x0); });
  clip([&](const Vec2& p) { return p.x() <= x1; }, [&](const Vec2& a, const Vec2& b) { return at_x(a, b, x1); });
  clip([&](const Vec2& p) { return p.y() >= y0; }, [&](const Vec2& a, const Vec2& b) { return at_y(a, b, y0); });
  clip([&](const Vec2& p) { return p.y() <= y1; }, [&](const Vec2& a, const Vec2& b) { return at_y(a, b, y1); });
  return out;
}

// Liang-Barsky: parameter range of segment a→b inside the box.
inline bool clip_segment(const Vec2& a, const Vec2& b, double x0, double y0, double x1, double y1, double& t0,
                         double& t1) {
  t0 = 0.0;
  t1 = 1.0;
  const double dx = b.x() - a.x(), dy = b.y() - a.y();
  const double p[4] = {-dx, dx, -dy, dy};
  const double q[4] = {a.x() - x0, x1 - a.x(), a.y() - y0, y1 - a.y()};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;
      continue;
    }
    const double r = q[i] / p[i];
    if (p[i] < 0.0) {
      if (r > t1) return false;
      t0 = std::max(t0, r);
    } else {
      if (r < t0) return false;
      t1 = std::min(t1, r);
    }
  }
  return t1 > t0;
}

// Per-shape cut information on the Cartesian grid.
struct ShapeCut {
  std::vector<double> area;       // nx*ny
  std::vector<Vec2> centroid;     // nx*ny
  std::vector<double> vface;      // (nx+1)*ny, aperture of vertical face at x = x0 + i h
  std::vector<double> hface;      // nx*(ny+1), aperture of horizontal face at y = y0 + j h
  std::vector<BoundaryPiece> pieces;  // cell field holds the grid index
};

inline ShapeCut cut_shape(const StarCurve& curve, const Vec2& origin, int nx, int ny, double h, int poly_vertices) {
  ShapeCut sc;
  sc.area.assign(std::size_t(nx) * ny, 0.0);
  sc.centroid.assign(std::size_t(nx) * ny, Vec2::Zero());
  sc.vface.assign(std::size_t(nx + 1) * ny, 0.0);
  sc.hface.assign(std::size_t(nx) * (ny + 1), 0.0);

  const int M = poly_vertices;
  std::vector<Vec2> poly(M);
  for (int k = 0; k < M; ++k) poly[k] = curve.point(kTwoPi * k / M);

  auto gidx = [nx](int i, int j) { return i + j * nx; };
  auto cell_x = [&](int i) { return origin.x() + i * h; };
  auto cell_y = [&](int j) { return origin.y() + j * h; };

  // Cells touched by polygon edges, with the edges that touch them.
  std::vector<std::vector<int>> edges_of_cell(std::size_t(nx) * ny);
  std::vector<char> candidate(std::size_t(nx) * ny, 0);
  for (int k = 0; k < M; ++k) {
    const Vec2& a = poly[k];
    const Vec2& b = poly[(k + 1) % M];
    const int i0 = int(std::floor((std::min(a.x(), b.x()) - origin.x()) / h));
    const int i1 = int(std::floor((std::max(a.x(), b.x()) - origin.x()) / h));
    const int j0 = int(std::floor((std::min(a.y(), b.y()) - origin.y()) / h));
    const int j1 = int(std::floor((std::max(a.y(), b.y()) - origin.y()) / h));
    for (int j = std::max(j0, 0); j <= std::min(j1, ny - 1); ++j)
      for (int i = std::max(i0, 0); i <= std::min(i1, nx - 1); ++i) {
        candidate[gidx(i, j)] = 1;
        edges_of_cell[gidx(i, j)].push_back(k);
      }
  }

  // Areas and centroids.
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int g = gidx(i, j);
      const double x0 = cell_x(i), y0 = cell_y(j);
      if (!candidate[g]) {
        const Vec2 c(x0 + 0.5 * h, y0 + 0.5 * h);
        if (curve.contains(c)) {
          sc.area[g] = h * h;
          sc.centroid[g] = c;
        }
        continue;
      }
      const auto clipped = clip_to_box(poly, x0, y0, x0 + h, y0 + h);
      if (clipped.size() < 3) continue;
      const double a = polygon_area(clipped);
      if (a <= 0.0) continue;
      sc.area[g] = std::min(a, h * h);
      sc.centroid[g] = polygon_centroid(clipped, a);
    }

  // Inside length of an axis-aligned face segment p→q.
  auto face_aperture = [&](const Vec2& p, const Vec2& q, const std::vector<int>& edges) {
    std::vector<double> ts{0.0, 1.0};
    const Vec2 d = q - p;
    for (int k : edges) {
      const Vec2& a = poly[k];
      const Vec2& b = poly[(k + 1) % M];
      const Vec2 e = b - a;
      const double den = d.x() * e.y() - d.y() * e.x();
      if (den == 0.0) continue;
      const Vec2 w = a - p;
      const double t = (w.x() * e.y() - w.y() * e.x()) / den;
      const double u = (w.x() * d.y() - w.y() * d.x()) / den;
      if (t > 0.0 && t < 1.0 && u >= 0.0 && u < 1.0) ts.push_back(t);
    }
    std::sort(ts.begin(), ts.end());
    double len = 0.0;
    for (std::size_t m = 0; m + 1 < ts.size(); ++m) {
      const double mid = 0.5 * (ts[m] + ts[m + 1]);
      if (curve.contains(p + mid * d)) len += (ts[m + 1] - ts[m]);
    }
    return len * d.norm();
  };

  std::vector<int> edges;
  auto gather = [&](int ga, int gb) {
    edges.clear();
    if (ga >= 0) edges.insert(edges.end(), edges_of_cell[ga].begin(), edges_of_cell[ga].end());
    if (gb >= 0) edges.insert(edges.end(), edges_of_cell[gb].begin(), edges_of_cell[gb].end());
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  };

  for (int j = 0; j < ny; ++j)
    for (int i = 0; i <= nx; ++i) {
      const int ga = i > 0 ? gidx(i - 1, j) : -1;
      const int gb = i < nx ? gidx(i, j) : -1;
      const Vec2 p(cell_x(i), cell_y(j)), q(cell_x(i), cell_y(j) + h);
      const bool cand = (ga >= 0 && candidate[ga]) || (gb >= 0 && candidate[gb]);
      if (!cand) {
        sc.vface[i + j * (nx + 1)] = curve.contains(0.5 * (p + q)) ? h : 0.0;
        continue;
      }
      gather(ga, gb);
      sc.vface[i + j * (nx + 1)] = face_aperture(p, q, edges);
    }
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int ga = j > 0 ? gidx(i, j - 1) : -1;
      const int gb = j < ny ? gidx(i, j) : -1;
      const Vec2 p(cell_x(i), cell_y(j)), q(cell_x(i) + h, cell_y(j));
      const bool cand = (ga >= 0 && candidate[ga]) || (gb >= 0 && candidate[gb]);
      if (!cand) {
        sc.hface[i + j * nx] = curve.contains(0.5 * (p + q)) ? h : 0.0;
        continue;
      }
      gather(ga, gb);
      sc.hface[i + j * nx] = face_aperture(p, q, edges);
    }

  // Boundary pieces: each polygon edge clipped to every cell it crosses. The
  // weight uses the curve speed at the piece midpoint so that the pieces
  // integrate arc length to spectral accuracy.
  const double dth = kTwoPi / M;
  for (int k = 0; k < M; ++k) {
    const Vec2& a = poly[k];
    const Vec2& b = poly[(k + 1) % M];
    const int i0 = int(std::floor((std::min(a.x(), b.x()) - origin.x()) / h));
    const int i1 = int(std::floor((std::max(a.x(), b.x()) - origin.x()) / h));
    const int j0 = int(std::floor((std::min(a.y(), b.y()) - origin.y()) / h));
    const int j1 = int(std::floor((std::max(a.y(), b.y()) - origin.y()) / h));
    for (int j = std::max(j0, 0); j <= std::min(j1, ny - 1); ++j)
      for (int i = std::max(i0, 0); i <= std::min(i1, nx - 1); ++i) {
        double t0, t1;
        if (!clip_segment(a, b, cell_x(i), cell_y(j), cell_x(i) + h, cell_y(j) + h, t0, t1)) continue;
        const double th = (k + 0.5 * (t0 + t1)) * dth;
        BoundaryPiece pc;
        pc.cell = gidx(i, j);
        pc.theta = th;
        pc.point = curve.point(th);
        pc.normal = curve.normal(th);
        pc.weight = curve.speed(th) * (t1 - t0) * dth;
        sc.pieces.push_back(pc);
      }
  }
  return sc;
}

}  // namespace detail

struct InteriorMeshOptions {
  /// Vertices of the polygon approximating each curve for the cut computation.
  int polygon_vertices = 4096;
  /// Cells with a smaller fluid fraction are merged away.
  double min_volume_fraction = 1e-8;
};

inline InteriorMesh build_interior_mesh(const Scene& scene, double h, const InteriorMeshOptions& opt = {}) {
  scene.validate();
  if (!(h > 0.0)) throw ArgumentError("mesh width must be positive");
  InteriorMesh mesh;
  mesh.dim = scene.dim;
  mesh.pieces.resize(1 + scene.cavities.size());

  if (scene.dim == 1) {
    // Components of Ω∖D̄ between sorted cavity intervals.
    std::vector<int> order(scene.cavities.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return scene.cavities[a].lo < scene.cavities[b].lo; });
    struct End {
      double x;
      int tag;
      double nu;
    };
    std::vector<std::array<End, 2>> comps;
    End left{scene.outer.lo, 0, -1.0};
    for (int c : order) {
      comps.push_back({left, End{scene.cavities[c].lo, c + 1, -1.0}});
      left = End{scene.cavities[c].hi, c + 1, +1.0};
    }
    comps.push_back({left, End{scene.outer.hi, 0, +1.0}});

    std::vector<Eigen::Triplet<double>> trip;
    mesh.h = h;
    for (const auto& comp : comps) {
      const double len = comp[1].x - comp[0].x;
      const int cells = int(std::ceil(len / h - 1e-9));
      if (cells < 2)
        throw GeometryError("interior mesh: a gap of width " + std::to_string(len) +
                            " is spanned by fewer than 2 cells");
      const double hs = len / cells;
      const int first = int(mesh.volumes.size());
      for (int i = 0; i <= cells; ++i) {
        mesh.centroids.emplace_back(comp[0].x + i * hs, 0.0);
        mesh.volumes.push_back((i == 0 || i == cells) ? 0.5 * hs : hs);
      }
      for (int i = 0; i < cells; ++i) {
        const int a = first + i, b = first + i + 1;
        trip.emplace_back(a, a, 1.0 / hs);
        trip.emplace_back(b, b, 1.0 / hs);
        trip.emplace_back(a, b, -1.0 / hs);
        trip.emplace_back(b, a, -1.0 / hs);
      }
      const int last = first + cells;
      mesh.segments.push_back({first, last});
      for (int e = 0; e < 2; ++e) {
        BoundaryPiece pc;
        pc.cell = e == 0 ? first : last;
        pc.point = Vec2(comp[e].x, 0.0);
        pc.normal = Vec2(comp[e].nu, 0.0);
        pc.weight = 1.0;
        // endpoint index within the owning shape's boundary mesh: lo -> 0, hi -> 1
        pc.theta = comp[e].nu < 0.0 ? 0.0 : 1.0;
        mesh.pieces[comp[e].tag].push_back(pc);
      }
    }
    const int n = int(mesh.volumes.size());
    mesh.laplacian.resize(n, n);
    mesh.laplacian.setFromTriplets(trip.begin(), trip.end());
    return mesh;
  }

  // 2D: Cartesian grid symmetric about the outer centre.
  const StarCurve& oc = scene.outer.curve;
  double rmax = 0.0;
  for (int i = 0; i < 2048; ++i) rmax = std::max(rmax, oc.radius(kTwoPi * i / 2048));
  for (std::size_t c = 0; c < scene.cavities.size(); ++c) {
    double gap = std::numeric_limits<double>::infinity();
    for (const Vec2& p : detail::sample_boundary(scene.cavities[c], 1440))
      gap = std::min(gap, -scene.outer.signed_distance(p));
    if (gap < 2.0 * h)
      throw GeometryError("cavity " + std::to_string(c) + " is within two cells of the outer boundary");
    for (std::size_t d = 0; d < c; ++d) {
      double sep = std::numeric_limits<double>::infinity();
      for (const Vec2& p : detail::sample_boundary(scene.cavities[c], 1440))
        sep = std::min(sep, scene.cavities[d].signed_distance(p));
      if (sep < 2.0 * h)
        throw GeometryError("cavities " + std::to_string(d) + " and " + std::to_string(c) +
                            " are within two cells of each other");
    }
  }
  const int half = int(std::ceil(rmax / h)) + 1;
  mesh.h = h;
  mesh.nx = mesh.ny = 2 * half;
  mesh.origin = oc.center - Vec2(half * h, half * h);
  const int nx = mesh.nx, ny = mesh.ny;

  auto outer_cut = detail::cut_shape(oc, mesh.origin, nx, ny, h, opt.polygon_vertices);
  std::vector<detail::ShapeCut> cav_cuts;
  for (const auto& cav : scene.cavities)
    cav_cuts.push_back(detail::cut_shape(cav.curve, mesh.origin, nx, ny, h, opt.polygon_vertices));

  const std::size_t ng = std::size_t(nx) * ny;
  std::vector<double> vol(ng);
  std::vector<Vec2> cen(ng);
  for (std::size_t g = 0; g < ng; ++g) {
    double a = outer_cut.area[g];
    Vec2 m = a * outer_cut.centroid[g];
    for (const auto& cc : cav_cuts) {
      a -= cc.area[g];
      m -= cc.area[g] * cc.centroid[g];
    }
    vol[g] = a;
    cen[g] = a > 0.0 ? Vec2(m / a) : Vec2::Zero();
  }
  std::vector<double> vface(outer_cut.vface), hface(outer_cut.hface);
  for (const auto& cc : cav_cuts) {
    for (std::size_t f = 0; f < vface.size(); ++f) vface[f] = std::max(0.0, vface[f] - cc.vface[f]);
    for (std::size_t f = 0; f < hface.size(); ++f) hface[f] = std::max(0.0, hface[f] - cc.hface[f]);
  }

  auto gidx = [nx](int i, int j) { return i + j * nx; };
  std::vector<char> keep(ng, 0);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int g = gidx(i, j);
      if (vol[g] <= opt.min_volume_fraction * h * h) continue;
      const double ap = vface[i + j * (nx + 1)] + vface[i + 1 + j * (nx + 1)] + hface[i + j * nx] +
                        hface[i + (j + 1) * nx];
      if (ap <= 1e-12 * h) continue;
      keep[g] = 1;
    }

  // Drop components that are negligibly small (slivers cut off by the grid).
  auto components = [&](std::vector<int>& comp) {
    comp.assign(ng, -1);
    int ncomp = 0;
    for (std::size_t s = 0; s < ng; ++s) {
      if (!keep[s] || comp[s] >= 0) continue;
      std::queue<int> q;
      q.push(int(s));
      comp[s] = ncomp;
      while (!q.empty()) {
        const int g = q.front();
        q.pop();
        const int i = g % nx, j = g / nx;
        const std::array<std::array<int, 3>, 4> nb{{{i - 1, j, i + j * (nx + 1)},
                                                      {i + 1, j, i + 1 + j * (nx + 1)},
                                                      {i, j - 1, -1 - (i + j * nx)},
                                                      {i, j + 1, -1 - (i + (j + 1) * nx)}}};
        for (const auto& e : nb) {
          if (e[0] < 0 || e[0] >= nx || e[1] < 0 || e[1] >= ny) continue;
          const double ap = e[2] >= 0 ? vface[e[2]] : hface[-1 - e[2]];
          const int gn = gidx(e[0], e[1]);
          if (ap > 0.0 && keep[gn] && comp[gn] < 0) {
            comp[gn] = ncomp;
            q.push(gn);
          }
        }
      }
      ++ncomp;
    }
    return ncomp;
  };
  std::vector<int> comp;
  const int ncomp = components(comp);
  if (ncomp > 1) {
    std::vector<double> carea(ncomp, 0.0);
    for (std::size_t g = 0; g < ng; ++g)
      if (keep[g]) carea[comp[g]] += vol[g];
    const double total = std::accumulate(carea.begin(), carea.end(), 0.0);
    int big = 0;
    for (int c = 0; c < ncomp; ++c) {
      if (carea[c] > 1e-6 * total) ++big;
    }
    if (big > 1) throw GeometryError("Ω∖D̄ is not connected at mesh resolution");
    for (std::size_t g = 0; g < ng; ++g)
      if (keep[g] && carea[comp[g]] <= 1e-6 * total) keep[g] = 0;
  }

  mesh.cell_of_grid.assign(ng, -1);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const int g = gidx(i, j);
      if (!keep[g]) continue;
      mesh.cell_of_grid[g] = int(mesh.volumes.size());
      mesh.grid_of_cell.push_back({i, j});
      mesh.volumes.push_back(vol[g]);
      mesh.centroids.push_back(cen[g]);
      double wd = -scene.outer.signed_distance(cen[g]);
      for (const auto& cav : scene.cavities) wd = std::min(wd, cav.signed_distance(cen[g]));
      mesh.wall_distance.push_back(wd);
    }

  std::vector<Eigen::Triplet<double>> trip;
  auto link = [&](int ga, int gb, double ap) {
    const int a = mesh.cell_of_grid[ga], b = mesh.cell_of_grid[gb];
    if (a < 0 || b < 0 || ap <= 0.0) return;
    const double t = ap / h;
    trip.emplace_back(a, a, t);
    trip.emplace_back(b, b, t);
    trip.emplace_back(a, b, -t);
    trip.emplace_back(b, a, -t);
  };
  for (int j = 0; j < ny; ++j)
    for (int i = 1; i < nx; ++i) link(gidx(i - 1, j), gidx(i, j), vface[i + j * (nx + 1)]);
  for (int j = 1; j < ny; ++j)
    for (int i = 0; i < nx; ++i) link(gidx(i, j - 1), gidx(i, j), hface[i + j * nx]);
  const int n = int(mesh.volumes.size());
  mesh.laplacian.resize(n, n);
  mesh.laplacian.setFromTriplets(trip.begin(), trip.end());

  // Attach boundary pieces to kept cells; pieces in dropped cells move to the
  // nearest kept neighbour so no boundary flux is lost.
  auto attach = [&](std::vector<BoundaryPiece> src, std::vector<BoundaryPiece>& dst) {
    for (auto& pc : src) {
      int c = mesh.cell_of_grid[pc.cell];
      if (c < 0) {
        const int gi = pc.cell % nx, gj = pc.cell / nx;
        double best = std::numeric_limits<double>::infinity();
        for (int r = 1; r <= 3 && c < 0; ++r)
          for (int dj = -r; dj <= r; ++dj)
            for (int di = -r; di <= r; ++di) {
              const int i = gi + di, j = gj + dj;
              if (i < 0 || j < 0 || i >= nx || j >= ny) continue;
              const int cand = mesh.cell_of_grid[gidx(i, j)];
              if (cand < 0) continue;
              const double d = (mesh.centroids[cand] - pc.point).norm();
              if (d < best) {
                best = d;
                c = cand;
              }
            }
        if (c < 0) throw GeometryError("boundary piece has no neighbouring cell");
      }
      pc.cell = c;
      dst.push_back(pc);
    }
  };
  attach(std::move(outer_cut.pieces), mesh.pieces[0]);
  for (std::size_t c = 0; c < cav_cuts.size(); ++c) attach(std::move(cav_cuts[c].pieces), mesh.pieces[c + 1]);

  if (!mesh.connected()) throw GeometryError("Ω∖D̄ is not connected at mesh resolution");
  return mesh;
}

inline int InteriorMesh::locate(const Vec2& p) const {
  if (dim == 1) {
    int best = -1;
    double bd = std::numeric_limits<double>::infinity();
    for (const auto& seg : segments) {
      const double lo = centroids[seg[0]].x(), hi = centroids[seg[1]].x();
      if (p.x() >= lo && p.x() <= hi) {
        const double hs = (hi - lo) / (seg[1] - seg[0]);
        return seg[0] + std::clamp(int(std::lround((p.x() - lo) / hs)), 0, seg[1] - seg[0]);
      }
      for (int e : {seg[0], seg[1]}) {
        const double d = std::abs(centroids[e].x() - p.x());
        if (d < bd) {
          bd = d;
          best = e;
        }
      }
    }
    return best;
  }
  const int gi = int(std::floor((p.x() - origin.x()) / h));
  const int gj = int(std::floor((p.y() - origin.y()) / h));
  if (gi >= 0 && gj >= 0 && gi < nx && gj < ny && cell_of_grid[gi + gj * nx] >= 0) return cell_of_grid[gi + gj * nx];
  int best = -1;
  double bd = std::numeric_limits<double>::infinity();
  for (int r = 1; r <= 4 && best < 0; ++r)
    for (int dj = -r; dj <= r; ++dj)
      for (int di = -r; di <= r; ++di) {
        const int i = gi + di, j = gj + dj;
        if (i < 0 || j < 0 || i >= nx || j >= ny) continue;
        const int c = cell_of_grid[i + j * nx];
        if (c < 0) continue;
        const double d = (centroids[c] - p).norm();
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
  return best;
}

inline Stencil InteriorMesh::stencil(const Vec2& p) const {
  Stencil st;
  if (dim == 1) {
    // Quadratic Lagrange interpolation on the three nearest nodes of the segment.
    const int c = locate(p);
    if (c < 0) throw GeometryError("point outside the interior mesh");
    std::array<int, 2> seg{};
    for (const auto& s : segments)
      if (c >= s[0] && c <= s[1]) seg = s;
    int first = std::clamp(c - 1, seg[0], seg[1] - 2);
    st.cells = {first, first + 1, first + 2};
    st.value.resize(3);
    st.dx.resize(3);
    st.dy.setZero(3);
    const double x = p.x();
    const double xs[3] = {centroids[first].x(), centroids[first + 1].x(), centroids[first + 2].x()};
    for (int a = 0; a < 3; ++a) {
      double num = 1.0, den = 1.0, dnum = 0.0;
      for (int b = 0; b < 3; ++b) {
        if (b == a) continue;
        den *= xs[a] - xs[b];
      }
      // derivative of the product Π_{b≠a} (x - x_b)
      for (int b = 0; b < 3; ++b) {
        if (b == a) continue;
        num *= x - xs[b];
        double term = 1.0;
        for (int d = 0; d < 3; ++d)
          if (d != a && d != b) term *= x - xs[d];
        dnum += term;
      }
      st.value[a] = num / den;
      st.dx[a] = dnum / den;
    }
    return st;
  }

  const int gi = int(std::floor((p.x() - origin.x()) / h));
  const int gj = int(std::floor((p.y() - origin.y()) / h));
  // Cut cells carry first-order values, so stencils avoid the first cell layer when they can.
  for (int pass = 0; pass < 2; ++pass) {
    for (double radius : {2.3, 3.2, 4.5}) {
      st.cells.clear();
      const int r = int(std::ceil(radius)) + 1;
      for (int dj = -r; dj <= r; ++dj)
        for (int di = -r; di <= r; ++di) {
          const int i = gi + di, j = gj + dj;
          if (i < 0 || j < 0 || i >= nx || j >= ny) continue;
          const int c = cell_of_grid[i + j * nx];
          if (c < 0) continue;
          if (pass == 0 && !wall_distance.empty() && wall_distance[c] < h) continue;
          if ((centroids[c] - p).norm() <= radius * h) st.cells.push_back(c);
        }
      const int m = int(st.cells.size());
      if (m < 9) continue;
      Eigen::MatrixXd A(m, 6);
      Eigen::VectorXd w(m);
      for (int k = 0; k < m; ++k) {
        const Vec2 d = (centroids[st.cells[k]] - p) / h;
        A.row(k) << 1.0, d.x(), d.y(), d.x() * d.x(), d.x() * d.y(), d.y() * d.y();
        w[k] = std::exp(-0.5 * d.squaredNorm());
      }
      const Eigen::MatrixXd Aw = w.asDiagonal() * A;
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Aw);
      if (qr.rank() < 6) continue;
      // pseudo-inverse rows: coefficients = (AwᵀAw)^{-1} Awᵀ W y
      const Eigen::MatrixXd pinv = qr.solve(Eigen::MatrixXd(w.asDiagonal()));
      st.value = pinv.row(0).transpose();
      st.dx = pinv.row(1).transpose() / h;
      st.dy = pinv.row(2).transpose() / h;
      return st;
    }
  }
  throw GeometryError("no well-posed least-squares stencil near the requested point");
}

}  // namespace heatsampler
