#pragma once

#include "heatsampler/heatsampler.hpp"

#include <cmath>
#include <string>

namespace hs_test {

using namespace heatsampler;

inline Scene interval_scene(double lo = 0.4, double hi = 0.6, bool with_cavity = true) {
  Scene s;
  s.dim = 1;
  s.outer = DomainShape::interval(0.0, 1.0);
  if (with_cavity) s.cavities = {DomainShape::interval(lo, hi)};
  s.final_time = 1.0;
  return s;
}

inline Scene reference_scene() {
  Scene s;
  s.dim = 2;
  s.outer = DomainShape::disk({0.0, 0.0}, 1.0);
  s.cavities = {DomainShape::disk({0.2, 0.0}, 0.3)};
  s.final_time = 1.0;
  return s;
}

inline Discretization reference_discretization() {
  Discretization d;
  d.h = 1.0 / 32.0;
  d.outer_nodes = 64;
  d.cavity_nodes = 64;
  d.steps = 20;
  d.modes = 10;
  d.solver.scheme = TimeScheme::crank_nicolson;
  d.solver.substeps = 4;
  return d;
}

inline double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

inline std::string source_path(const std::string& rel_path) {
  return std::string(HEATSAMPLER_SOURCE_DIR) + "/" + rel_path;
}

}  // namespace hs_test
