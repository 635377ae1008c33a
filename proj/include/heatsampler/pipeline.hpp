#pragma once

#include "heatsampler/diagnostics.hpp"
#include "heatsampler/errors.hpp"
#include "heatsampler/forward.hpp"
#include "heatsampler/io.hpp"
#include "heatsampler/kernel.hpp"
#include "heatsampler/linalg.hpp"
#include "heatsampler/potentials.hpp"
#include "heatsampler/sampling.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace heatsampler {

using io::json;

inline constexpr const char* kConfigSchema = "heatsampler/1";

/// Line number of every value in a JSON text, keyed by JSON pointer.
inline std::map<std::string, int> json_line_map(const std::string& text) {
  std::map<std::string, int> lines;
  std::size_t pos = 0;
  int line = 1;
  auto skip_ws = [&] {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) {
      if (text[pos] == '\n') ++line;
      ++pos;
    }
  };
  auto read_string = [&] {
    std::string out;
    ++pos;  // opening quote
    while (pos < text.size() && text[pos] != '"') {
      if (text[pos] == '\\' && pos + 1 < text.size()) {
        out += text[pos + 1];
        pos += 2;
        continue;
      }
      out += text[pos++];
    }
    ++pos;
    return out;
  };
  auto escape = [](const std::string& k) {
    std::string e;
    for (char c : k) {
      if (c == '~') e += "~0";
      else if (c == '/') e += "~1";
      else e += c;
    }
    return e;
  };
  std::function<void(const std::string&)> value = [&](const std::string& path) {
    skip_ws();
    if (pos >= text.size()) return;
    lines.emplace(path, line);
    const char c = text[pos];
    if (c == '{') {
      ++pos;
      for (;;) {
        skip_ws();
        if (pos >= text.size() || text[pos] == '}') {
          ++pos;
          return;
        }
        if (text[pos] == ',') {
          ++pos;
          continue;
        }
        const int key_line = line;
        const std::string key = read_string();
        skip_ws();
        ++pos;  // colon
        const std::string child = path + "/" + escape(key);
        lines.emplace(child, key_line);
        value(child);
      }
    } else if (c == '[') {
      ++pos;
      int index = 0;
      for (;;) {
        skip_ws();
        if (pos >= text.size() || text[pos] == ']') {
          ++pos;
          return;
        }
        if (text[pos] == ',') {
          ++pos;
          continue;
        }
        value(path + "/" + std::to_string(index++));
      }
    } else if (c == '"') {
      read_string();
    } else {
      while (pos < text.size() && text[pos] != ',' && text[pos] != '}' && text[pos] != ']' &&
             !std::isspace(static_cast<unsigned char>(text[pos])))
        ++pos;
    }
  };
  value("");
  return lines;
}

struct SamplingGrid {
  Vec2 lower{-1.0, -1.0};
  Vec2 upper{1.0, 1.0};
  int nx = 41;
  int ny = 41;
};

struct SamplingSettings {
  std::vector<double> s;  // empty → 0.1·T
  SamplingGrid grid;
  double clearance = 0.05;
  Aggregation aggregation = Aggregation::median;
  TikhonovConfig tikhonov;
  double threshold = 0.5;
  /// Cavities of a known scene (same Ω, T and discretization) used to fit the threshold.
  std::optional<std::vector<DomainShape>> calibration;
};

struct NoiseSettings {
  double level = 0.0;
  std::uint64_t seed = 1;
};

struct ForwardSettings {
  std::string flux = "constant";  // constant | cosine
  double amplitude = 1.0;
  int mode = 1;
  bool with_cavities = true;
};

struct VerifySettings {
  double factorization_tolerance = 5e-2;
  int jump_probes = 10;
  double jump_tolerance = 1e-2;
  int adjoint_pairs = 20;
  double adjoint_tolerance = 1e-8;
  int adjoint_nodes = 32;
};

struct DiagnoseSettings {
  double ray_theta = kPi / 2.0;
  std::vector<double> distances = {0.25, 0.125, 0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625};
  std::vector<double> eps = {1e-2, 3.1622776601683794e-3, 1e-3, 3.1622776601683794e-4, 1e-4,
                             3.1622776601683794e-5, 1e-5, 3.1622776601683794e-6, 1e-6};
  int sweep_nodes = 2048;
};

struct ExperimentConfig {
  std::string mode = "reconstruct";
  Scene scene;
  Discretization disc;
  int corrector_substeps = 4;
  ForwardSettings forward;
  SamplingSettings sampling;
  NoiseSettings noise;
  VerifySettings verify;
  DiagnoseSettings diagnose;
  std::string output = "out";
  int threads = 0;

  std::vector<double> sampling_times() const {
    return sampling.s.empty() ? std::vector<double>{0.1 * scene.final_time} : sampling.s;
  }
};

namespace detail {

inline const char* to_string(TimeScheme s) {
  return s == TimeScheme::backward_euler ? "backward_euler" : "crank_nicolson";
}
inline const char* to_string(Aggregation a) {
  switch (a) {
    case Aggregation::median: return "median";
    case Aggregation::min: return "min";
    case Aggregation::mean: return "mean";
  }
  return "median";
}

inline json shape_to_json(const DomainShape& s) {
  json j;
  j["kind"] = to_string(s.kind);
  if (s.kind == ShapeKind::interval) {
    j["lower"] = s.lo;
    j["upper"] = s.hi;
    return j;
  }
  j["center"] = {s.curve.center.x(), s.curve.center.y()};
  j["radius"] = s.curve.r0;
  if (s.kind == ShapeKind::star) {
    j["cos"] = s.curve.cos_coeffs;
    j["sin"] = s.curve.sin_coeffs;
  }
  return j;
}

// Typed reads with JSON-pointer addressed errors.
class Reader {
 public:
  explicit Reader(const std::map<std::string, int>* lines) : lines_(lines) {}

  [[noreturn]] void fail(const std::string& path, const std::string& msg) const {
    int line = 0;
    if (lines_) {
      // nearest recorded ancestor
      std::string p = path;
      for (;;) {
        auto it = lines_->find(p);
        if (it != lines_->end()) {
          line = it->second;
          break;
        }
        const auto cut = p.rfind('/');
        if (cut == std::string::npos) break;
        p = p.substr(0, cut);
      }
    }
    throw ConfigError((path.empty() ? std::string("/") : path) + ": " + msg, line);
  }

  void allow(const json& j, const std::string& path, std::initializer_list<const char*> keys) const {
    if (!j.is_object()) fail(path, "expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
      bool ok = false;
      for (const char* k : keys) ok = ok || it.key() == k;
      if (!ok) fail(path + "/" + it.key(), "unknown key '" + it.key() + "'");
    }
  }

  double number(const json& j, const std::string& path, const char* key, std::optional<double> dflt = {}) const {
    if (!j.contains(key)) {
      if (dflt) return *dflt;
      fail(path + "/" + key, "missing required number");
    }
    const json& v = j.at(key);
    if (!v.is_number()) fail(path + "/" + key, "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) fail(path + "/" + key, "must be finite");
    return x;
  }
  double positive(const json& j, const std::string& path, const char* key, std::optional<double> dflt = {}) const {
    const double x = number(j, path, key, dflt);
    if (!(x > 0.0)) fail(path + "/" + key, "must be positive");
    return x;
  }
  int count(const json& j, const std::string& path, const char* key, std::optional<int> dflt = {}) const {
    if (!j.contains(key)) {
      if (dflt) return *dflt;
      fail(path + "/" + key, "missing required integer");
    }
    const json& v = j.at(key);
    if (!v.is_number_integer()) fail(path + "/" + key, "expected an integer");
    const long long x = v.get<long long>();
    if (x < 1 || x > 1000000000) fail(path + "/" + key, "must be a positive integer");
    return int(x);
  }
  std::string text(const json& j, const std::string& path, const char* key, std::optional<std::string> dflt = {}) const {
    if (!j.contains(key)) {
      if (dflt) return *dflt;
      fail(path + "/" + key, "missing required string");
    }
    if (!j.at(key).is_string()) fail(path + "/" + key, "expected a string");
    return j.at(key).get<std::string>();
  }
  bool flag(const json& j, const std::string& path, const char* key, bool dflt) const {
    if (!j.contains(key)) return dflt;
    if (!j.at(key).is_boolean()) fail(path + "/" + key, "expected true or false");
    return j.at(key).get<bool>();
  }
  std::vector<double> numbers(const json& j, const std::string& path, const char* key,
                              std::optional<std::vector<double>> dflt = {}) const {
    if (!j.contains(key)) {
      if (dflt) return *dflt;
      fail(path + "/" + key, "missing required array");
    }
    const json& v = j.at(key);
    if (!v.is_array()) fail(path + "/" + key, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) fail(path + "/" + key + "/" + std::to_string(i), "expected a number");
      out.push_back(v[i].get<double>());
    }
    return out;
  }
  Vec2 point(const json& j, const std::string& path, const char* key, std::optional<Vec2> dflt = {}) const {
    if (!j.contains(key) && dflt) return *dflt;
    const auto v = numbers(j, path, key);
    if (v.size() != 2) fail(path + "/" + key, "expected two coordinates");
    return {v[0], v[1]};
  }

  DomainShape shape(const json& j, const std::string& path) const {
    if (!j.is_object()) fail(path, "expected a shape object");
    const std::string kind = text(j, path, "kind");
    DomainShape s;
    if (kind == "interval") {
      allow(j, path, {"kind", "lower", "upper"});
      s = DomainShape::interval(number(j, path, "lower"), number(j, path, "upper"));
    } else if (kind == "disk") {
      allow(j, path, {"kind", "center", "radius"});
      s = DomainShape::disk(point(j, path, "center"), positive(j, path, "radius"));
    } else if (kind == "star") {
      allow(j, path, {"kind", "center", "radius", "cos", "sin"});
      s = DomainShape::star(point(j, path, "center"), positive(j, path, "radius"), numbers(j, path, "cos", std::vector<double>{}),
                            numbers(j, path, "sin", std::vector<double>{}));
    } else {
      fail(path + "/kind", "unknown shape kind '" + kind + "' (interval, disk, star)");
    }
    try {
      s.validate();
    } catch (const GeometryError& e) {
      fail(path, e.what());
    }
    return s;
  }

 private:
  const std::map<std::string, int>* lines_;
};

}  // namespace detail

inline json to_json(const ExperimentConfig& c) {
  json j;
  j["schema"] = kConfigSchema;
  j["mode"] = c.mode;
  json sc;
  sc["final_time"] = c.scene.final_time;
  sc["clearance"] = c.scene.clearance;
  sc["outer"] = detail::shape_to_json(c.scene.outer);
  sc["cavities"] = json::array();
  for (const auto& cav : c.scene.cavities) sc["cavities"].push_back(detail::shape_to_json(cav));
  j["scene"] = sc;
  json d;
  d["h"] = c.disc.h;
  d["outer_nodes"] = c.disc.outer_nodes;
  d["cavity_nodes"] = c.disc.cavity_nodes;
  d["time_steps"] = c.disc.steps;
  d["modes"] = c.disc.modes;
  d["scheme"] = detail::to_string(c.disc.solver.scheme);
  d["substeps"] = c.disc.solver.substeps;
  d["corrector_substeps"] = c.corrector_substeps;
  d["flux_order"] = c.disc.flux_order;
  d["trace_order"] = c.disc.trace_order;
  j["discretization"] = d;
  j["forward"] = {{"flux", c.forward.flux},
                  {"amplitude", c.forward.amplitude},
                  {"mode", c.forward.mode},
                  {"with_cavities", c.forward.with_cavities}};
  json s;
  s["s"] = c.sampling.s;
  s["grid"] = {{"lower", {c.sampling.grid.lower.x(), c.sampling.grid.lower.y()}},
               {"upper", {c.sampling.grid.upper.x(), c.sampling.grid.upper.y()}},
               {"nx", c.sampling.grid.nx},
               {"ny", c.sampling.grid.ny}};
  s["clearance"] = c.sampling.clearance;
  s["aggregation"] = detail::to_string(c.sampling.aggregation);
  s["tikhonov"] = {{"selection", c.sampling.tikhonov.selection == AlphaSelection::fixed ? "fixed" : "morozov"},
                   {"alpha_relative", c.sampling.tikhonov.alpha_relative},
                   {"safety", c.sampling.tikhonov.safety},
                   {"alpha_grid", c.sampling.tikhonov.alpha_grid}};
  s["threshold"] = c.sampling.threshold;
  if (c.sampling.calibration) {
    json cal = json::array();
    for (const auto& cav : *c.sampling.calibration) cal.push_back(detail::shape_to_json(cav));
    s["calibration"] = {{"cavities", cal}};
  } else {
    s["calibration"] = nullptr;
  }
  j["sampling"] = s;
  j["noise"] = {{"level", c.noise.level}, {"seed", c.noise.seed}};
  j["verify"] = {{"factorization_tolerance", c.verify.factorization_tolerance},
                 {"jump_probes", c.verify.jump_probes},
                 {"jump_tolerance", c.verify.jump_tolerance},
                 {"adjoint_pairs", c.verify.adjoint_pairs},
                 {"adjoint_tolerance", c.verify.adjoint_tolerance},
                 {"adjoint_nodes", c.verify.adjoint_nodes}};
  j["diagnose"] = {{"ray_theta", c.diagnose.ray_theta},
                   {"distances", c.diagnose.distances},
                   {"eps", c.diagnose.eps},
                   {"sweep_nodes", c.diagnose.sweep_nodes}};
  j["output"] = c.output;
  j["threads"] = c.threads;
  return j;
}

/// Parses and validates a configuration; errors carry the line of the offending value.
inline ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    int line = 1;
    for (std::size_t i = 0; i < std::min<std::size_t>(e.byte, text.size()) && i + 1 < e.byte; ++i)
      if (text[i] == '\n') ++line;
    throw ConfigError(std::string("malformed JSON: ") + e.what(), line);
  }
  const auto lines = json_line_map(text);
  const detail::Reader r(&lines);
  r.allow(j, "", {"schema", "mode", "scene", "discretization", "forward", "sampling", "noise", "verify", "diagnose",
                  "output", "threads"});
  if (r.text(j, "", "schema") != kConfigSchema)
    r.fail("/schema", std::string("unsupported schema (expected '") + kConfigSchema + "')");

  ExperimentConfig c;
  c.mode = r.text(j, "", "mode", c.mode);
  if (c.mode != "forward" && c.mode != "ntd" && c.mode != "reconstruct" && c.mode != "verify" && c.mode != "diagnose")
    r.fail("/mode", "unknown mode '" + c.mode + "' (forward, ntd, reconstruct, verify, diagnose)");

  if (!j.contains("scene")) r.fail("/scene", "missing scene");
  const json& sc = j.at("scene");
  r.allow(sc, "/scene", {"final_time", "clearance", "outer", "cavities"});
  c.scene.final_time = r.positive(sc, "/scene", "final_time");
  c.scene.clearance = r.positive(sc, "/scene", "clearance", c.scene.clearance);
  if (!sc.contains("outer")) r.fail("/scene/outer", "missing outer domain");
  c.scene.outer = r.shape(sc.at("outer"), "/scene/outer");
  c.scene.dim = c.scene.outer.dim();
  if (sc.contains("cavities")) {
    if (!sc.at("cavities").is_array()) r.fail("/scene/cavities", "expected an array of shapes");
    for (std::size_t i = 0; i < sc.at("cavities").size(); ++i)
      c.scene.cavities.push_back(r.shape(sc.at("cavities")[i], "/scene/cavities/" + std::to_string(i)));
  }
  try {
    c.scene.validate();
  } catch (const GeometryError& e) {
    r.fail("/scene", e.what());
  }

  if (j.contains("discretization")) {
    const json& d = j.at("discretization");
    const std::string p = "/discretization";
    r.allow(d, p, {"h", "outer_nodes", "cavity_nodes", "time_steps", "modes", "scheme", "substeps",
                   "corrector_substeps", "flux_order", "trace_order"});
    c.disc.h = r.positive(d, p, "h", c.disc.h);
    c.disc.outer_nodes = r.count(d, p, "outer_nodes", c.disc.outer_nodes);
    c.disc.cavity_nodes = r.count(d, p, "cavity_nodes", c.disc.cavity_nodes);
    c.disc.steps = r.count(d, p, "time_steps", c.disc.steps);
    c.disc.modes = r.count(d, p, "modes", c.disc.modes);
    const std::string scheme = r.text(d, p, "scheme", detail::to_string(c.disc.solver.scheme));
    if (scheme == "backward_euler") c.disc.solver.scheme = TimeScheme::backward_euler;
    else if (scheme == "crank_nicolson") c.disc.solver.scheme = TimeScheme::crank_nicolson;
    else r.fail(p + "/scheme", "unknown scheme '" + scheme + "' (backward_euler, crank_nicolson)");
    c.disc.solver.substeps = r.count(d, p, "substeps", c.disc.solver.substeps);
    c.corrector_substeps = r.count(d, p, "corrector_substeps", c.corrector_substeps);
    c.disc.flux_order = r.number(d, p, "flux_order", c.disc.flux_order);
    c.disc.trace_order = r.number(d, p, "trace_order", c.disc.trace_order);
    if (c.scene.dim == 2 && 2 * c.disc.modes + 1 > c.disc.outer_nodes)
      r.fail(p + "/modes", "2K+1 Fourier modes exceed the outer boundary nodes");
    if (c.scene.dim == 2 && !c.scene.cavities.empty() && 2 * c.disc.modes + 1 > c.disc.cavity_nodes)
      r.fail(p + "/modes", "2K+1 Fourier modes exceed the cavity boundary nodes");
  }

  if (j.contains("forward")) {
    const json& f = j.at("forward");
    r.allow(f, "/forward", {"flux", "amplitude", "mode", "with_cavities"});
    c.forward.flux = r.text(f, "/forward", "flux", c.forward.flux);
    if (c.forward.flux != "constant" && c.forward.flux != "cosine")
      r.fail("/forward/flux", "unknown flux '" + c.forward.flux + "' (constant, cosine)");
    c.forward.amplitude = r.number(f, "/forward", "amplitude", c.forward.amplitude);
    c.forward.mode = r.count(f, "/forward", "mode", c.forward.mode);
    c.forward.with_cavities = r.flag(f, "/forward", "with_cavities", c.forward.with_cavities);
  }

  if (j.contains("sampling")) {
    const json& s = j.at("sampling");
    const std::string p = "/sampling";
    r.allow(s, p, {"s", "grid", "clearance", "aggregation", "tikhonov", "threshold", "calibration"});
    c.sampling.s = r.numbers(s, p, "s", std::vector<double>{});
    for (std::size_t i = 0; i < c.sampling.s.size(); ++i)
      if (!(c.sampling.s[i] > 0.0 && c.sampling.s[i] < c.scene.final_time))
        r.fail(p + "/s/" + std::to_string(i), "sampling time must lie in (0, T)");
    if (s.contains("grid")) {
      const json& g = s.at("grid");
      r.allow(g, p + "/grid", {"lower", "upper", "nx", "ny"});
      c.sampling.grid.lower = r.point(g, p + "/grid", "lower", c.sampling.grid.lower);
      c.sampling.grid.upper = r.point(g, p + "/grid", "upper", c.sampling.grid.upper);
      c.sampling.grid.nx = r.count(g, p + "/grid", "nx", c.sampling.grid.nx);
      c.sampling.grid.ny = r.count(g, p + "/grid", "ny", c.sampling.grid.ny);
      if (!(c.sampling.grid.upper.x() > c.sampling.grid.lower.x()))
        r.fail(p + "/grid/upper", "grid upper corner must exceed the lower corner");
      if (c.scene.dim == 2 && !(c.sampling.grid.upper.y() > c.sampling.grid.lower.y()))
        r.fail(p + "/grid/upper", "grid upper corner must exceed the lower corner");
    }
    c.sampling.clearance = r.positive(s, p, "clearance", c.sampling.clearance);
    const std::string agg = r.text(s, p, "aggregation", "median");
    if (agg == "median") c.sampling.aggregation = Aggregation::median;
    else if (agg == "min") c.sampling.aggregation = Aggregation::min;
    else if (agg == "mean") c.sampling.aggregation = Aggregation::mean;
    else r.fail(p + "/aggregation", "unknown aggregation '" + agg + "' (median, min, mean)");
    if (s.contains("tikhonov")) {
      const json& t = s.at("tikhonov");
      const std::string tp = p + "/tikhonov";
      r.allow(t, tp, {"selection", "alpha_relative", "safety", "alpha_grid"});
      const std::string sel = r.text(t, tp, "selection", "fixed");
      if (sel == "fixed") c.sampling.tikhonov.selection = AlphaSelection::fixed;
      else if (sel == "morozov") c.sampling.tikhonov.selection = AlphaSelection::morozov;
      else r.fail(tp + "/selection", "unknown selection '" + sel + "' (fixed, morozov)");
      c.sampling.tikhonov.alpha_relative = r.positive(t, tp, "alpha_relative", c.sampling.tikhonov.alpha_relative);
      c.sampling.tikhonov.safety = r.positive(t, tp, "safety", c.sampling.tikhonov.safety);
      c.sampling.tikhonov.alpha_grid = r.numbers(t, tp, "alpha_grid", c.sampling.tikhonov.alpha_grid);
      const auto& g = c.sampling.tikhonov.alpha_grid;
      if (g.empty()) r.fail(tp + "/alpha_grid", "alpha grid must not be empty");
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(g[i] > 0.0)) r.fail(tp + "/alpha_grid/" + std::to_string(i), "alpha grid values must be positive");
        if (i > 0 && !(g[i] < g[i - 1]))
          r.fail(tp + "/alpha_grid/" + std::to_string(i), "alpha grid must be strictly decreasing");
      }
    }
    c.sampling.threshold = r.positive(s, p, "threshold", c.sampling.threshold);
    if (c.sampling.threshold > 1.0) r.fail(p + "/threshold", "threshold must lie in (0, 1]");
    if (s.contains("calibration") && !s.at("calibration").is_null()) {
      const json& cal = s.at("calibration");
      r.allow(cal, p + "/calibration", {"cavities"});
      if (!cal.contains("cavities") || !cal.at("cavities").is_array() || cal.at("cavities").empty())
        r.fail(p + "/calibration/cavities", "calibration needs a non-empty cavity list");
      std::vector<DomainShape> cavs;
      for (std::size_t i = 0; i < cal.at("cavities").size(); ++i)
        cavs.push_back(r.shape(cal.at("cavities")[i], p + "/calibration/cavities/" + std::to_string(i)));
      Scene cs = c.scene;
      cs.cavities = cavs;
      try {
        cs.validate();
      } catch (const GeometryError& e) {
        r.fail(p + "/calibration", e.what());
      }
      c.sampling.calibration = cavs;
    }
  }

  if (j.contains("noise")) {
    const json& n = j.at("noise");
    r.allow(n, "/noise", {"level", "seed"});
    c.noise.level = r.number(n, "/noise", "level", 0.0);
    if (c.noise.level < 0.0) r.fail("/noise/level", "noise level must be nonnegative");
    if (n.contains("seed")) {
      if (!n.at("seed").is_number_unsigned()) r.fail("/noise/seed", "seed must be a nonnegative integer");
      c.noise.seed = n.at("seed").get<std::uint64_t>();
    }
  }

  if (j.contains("verify")) {
    const json& v = j.at("verify");
    const std::string p = "/verify";
    r.allow(v, p, {"factorization_tolerance", "jump_probes", "jump_tolerance", "adjoint_pairs", "adjoint_tolerance",
                   "adjoint_nodes"});
    c.verify.factorization_tolerance = r.positive(v, p, "factorization_tolerance", c.verify.factorization_tolerance);
    c.verify.jump_probes = r.count(v, p, "jump_probes", c.verify.jump_probes);
    c.verify.jump_tolerance = r.positive(v, p, "jump_tolerance", c.verify.jump_tolerance);
    c.verify.adjoint_pairs = r.count(v, p, "adjoint_pairs", c.verify.adjoint_pairs);
    c.verify.adjoint_tolerance = r.positive(v, p, "adjoint_tolerance", c.verify.adjoint_tolerance);
    c.verify.adjoint_nodes = r.count(v, p, "adjoint_nodes", c.verify.adjoint_nodes);
  }

  if (j.contains("diagnose")) {
    const json& d = j.at("diagnose");
    const std::string p = "/diagnose";
    r.allow(d, p, {"ray_theta", "distances", "eps", "sweep_nodes"});
    c.diagnose.ray_theta = r.number(d, p, "ray_theta", c.diagnose.ray_theta);
    c.diagnose.distances = r.numbers(d, p, "distances", c.diagnose.distances);
    c.diagnose.eps = r.numbers(d, p, "eps", c.diagnose.eps);
    c.diagnose.sweep_nodes = r.count(d, p, "sweep_nodes", c.diagnose.sweep_nodes);
    for (const char* key : {"distances", "eps"}) {
      const auto& v = std::string(key) == "distances" ? c.diagnose.distances : c.diagnose.eps;
      if (v.size() < 2) r.fail(p + "/" + key, "needs at least two values");
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (!(v[i] > 0.0)) r.fail(p + "/" + key + "/" + std::to_string(i), "values must be positive");
        if (i > 0 && !(v[i] < v[i - 1]))
          r.fail(p + "/" + key + "/" + std::to_string(i), "values must be strictly decreasing");
      }
    }
  }

  c.output = r.text(j, "", "output", c.output);
  if (j.contains("threads")) {
    if (!j.at("threads").is_number_integer() || j.at("threads").get<long long>() < 0)
      r.fail("/threads", "threads must be a nonnegative integer");
    c.threads = j.at("threads").get<int>();
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

struct RunOptions {
  std::optional<std::filesystem::path> out;
  std::optional<int> threads;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
};

struct CheckResult {
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct RunResult {
  int status = 0;  // 0 ok, 2 tolerance failure
  std::filesystem::path manifest;
  std::vector<CheckResult> checks;
  json summary = json::object();
};

namespace detail {

// Artifacts do not depend on the worker count or on where the run was written.
inline json recorded_config(const ExperimentConfig& c) {
  json j = to_json(c);
  j["threads"] = 0;
  return j;
}

inline std::string scene_hash(const ExperimentConfig& c) {
  json sc = to_json(c)["scene"];
  return io::sha256_hex(sc.dump());
}

inline IndicatorField scan_grid(const ExperimentConfig& c) {
  const SamplingGrid& g = c.sampling.grid;
  if (c.scene.dim == 1)
    return make_grid(1, {c.scene.outer.lo, 0.0}, {c.scene.outer.hi, 0.0}, g.nx, 1);
  return make_grid(2, g.lower, g.upper, g.nx, g.ny);
}

inline void write_indicator(const io::Manifest& m, const std::string& name, const IndicatorField& f) {
  io::CsvWriter w(m.path(name));
  w.header({"x", "y", "indicator", "valid", "alpha"});
  for (std::size_t i = 0; i < f.size(); ++i)
    w.row({f.points[i].x(), f.points[i].y(), f.values[i], double(f.active[i] && f.valid[i]), f.alpha[i]});
}

inline void write_checks(const io::Manifest& m, const std::string& name, const std::vector<CheckResult>& checks) {
  io::CsvWriter w(m.path(name));
  w.header({"check", "value", "tolerance", "pass"});
  for (const auto& c : checks) w.row({c.name}, {c.value, c.tolerance, double(c.pass)});
}

inline SpaceTimeBoundaryField forward_flux(const ExperimentConfig& c, const BoundaryMesh& outer, const TimeGrid& tg) {
  SpaceTimeBoundaryField f(outer, tg);
  for (int j = 0; j < tg.size(); ++j)
    for (std::size_t i = 0; i < outer.size(); ++i) {
      double v = c.forward.amplitude;
      if (c.forward.flux == "cosine") {
        v *= c.scene.dim == 1 ? (i == 0 ? 1.0 : -1.0) : std::cos(c.forward.mode * outer.angles[i]);
      }
      f.values(Eigen::Index(i), j) = v;
    }
  return f;
}

inline void run_forward(const ExperimentConfig& c, io::Manifest& m, RunResult& res) {
  const Scene scene = c.forward.with_cavities ? c.scene : c.scene.outer_only();
  const HeatSolver solver = make_solver(scene, c.disc);
  const BoundaryMesh outer = outer_boundary_mesh(scene, c.disc);
  const auto flux = forward_flux(c, outer, solver.time());
  std::vector<SpaceTimeBoundaryField> cav;
  for (const auto& bm : cavity_boundary_meshes(scene, c.disc)) cav.emplace_back(bm, solver.time());
  EnergyReport rep;
  const HeatField u = solve_heat_neumann(solver, flux, cav, &rep);
  const TimeGrid& tg = solver.time();
  {
    io::CsvWriter w(m.path("heat_field.csv"));
    std::vector<std::string> h{"cell", "x", "y", "volume"};
    for (int j = 0; j < tg.size(); ++j) h.push_back("u_" + std::to_string(j));
    w.header(h);
    const InteriorMesh& mesh = solver.mesh();
    for (std::size_t k = 0; k < mesh.size(); ++k) {
      std::vector<double> row{double(k), mesh.centroids[k].x(), mesh.centroids[k].y(), mesh.volumes[k]};
      for (int j = 0; j < tg.size(); ++j) row.push_back(u.values(Eigen::Index(k), j));
      w.row(row);
    }
  }
  m.add("heat_field.csv");
  {
    const Eigen::SparseMatrix<double> T = solver.trace_operator(outer);
    io::CsvWriter w(m.path("boundary_trace.csv"));
    std::vector<std::string> h{"node", "angle", "x", "y"};
    for (int j = 0; j < tg.size(); ++j) h.push_back("u_" + std::to_string(j));
    w.header(h);
    Eigen::MatrixXd tr(Eigen::Index(outer.size()), tg.size());
    for (int j = 0; j < tg.size(); ++j) tr.col(j) = T * u.values.col(j);
    for (std::size_t i = 0; i < outer.size(); ++i) {
      std::vector<double> row{double(i), outer.angles[i], outer.nodes[i].x(), outer.nodes[i].y()};
      for (int j = 0; j < tg.size(); ++j) row.push_back(tr(Eigen::Index(i), j));
      w.row(row);
    }
  }
  m.add("boundary_trace.csv");
  {
    io::CsvWriter w(m.path("energy.csv"));
    w.header({"step", "time", "mass"});
    for (int j = 0; j < tg.size(); ++j) w.row({double(j), tg.node(j), u.mass(j)});
  }
  m.add("energy.csv");
  {
    io::CsvWriter w(m.path("boundary_mesh.csv"));
    w.header({"boundary", "x", "y", "nx", "ny", "weight"});
    std::vector<BoundaryMesh> all{outer};
    for (const auto& bm : cavity_boundary_meshes(scene, c.disc)) all.push_back(bm);
    for (std::size_t b = 0; b < all.size(); ++b)
      for (std::size_t i = 0; i < all[b].size(); ++i)
        w.row({double(b), all[b].nodes[i].x(), all[b].nodes[i].y(), all[b].normals[i].x(), all[b].normals[i].y(),
               all[b].weights[i]});
  }
  m.add("boundary_mesh.csv");
  const bool ok = rep.relative() <= 1e-10;
  res.checks.push_back({"energy_balance", rep.relative(), 1e-10, ok});
  res.summary = {{"cells", solver.mesh().size()},
                 {"energy_residual", rep.max_residual},
                 {"energy_load", rep.max_load},
                 {"energy_relative", rep.relative()},
                 {"pass", ok}};
  if (!ok) res.status = 2;
}

inline void run_ntd(const ExperimentConfig& c, io::Manifest& m, RunResult& res) {
  const HeatSolver with = make_solver(c.scene, c.disc);
  const HeatSolver without = make_solver(c.scene.outer_only(), c.disc);
  const auto flux = outer_flux_space(c.scene, c.disc), trace = outer_trace_space(c.scene, c.disc);
  const OperatorMatrix ld = assemble_ntd(with, flux, trace, "Lambda_D");
  const OperatorMatrix l0 = assemble_ntd(without, flux, trace, "Lambda_0");
  OperatorMatrix F = operator_f(ld, l0);
  if (c.noise.level > 0.0) F = inject_noise(F, c.noise.level, c.noise.seed);
  auto header = [&](const OperatorMatrix& op) {
    return json{{"label", op.label},
                {"time_steps", op.domain.steps()},
                {"spatial_domain", op.domain.spatial_dofs()},
                {"spatial_codomain", op.codomain.spatial_dofs()},
                {"final_time", c.scene.final_time}};
  };
  io::write_matrix(m.path("lambda_d.hsop"), ld.matrix, header(ld));
  io::write_matrix(m.path("lambda_0.hsop"), l0.matrix, header(l0));
  io::write_matrix(m.path("f.hsop"), F.matrix, header(F));
  m.add("lambda_d.hsop");
  m.add("lambda_0.hsop");
  m.add("f.hsop");
  const SingularSystem ss = singular_system(F);
  {
    io::CsvWriter w(m.path("singular_values.csv"));
    w.header({"k", "mu"});
    for (Eigen::Index k = 0; k < ss.mu.size(); ++k) w.row({double(k), ss.mu[k]});
  }
  m.add("singular_values.csv");
  res.summary = {{"norm_lambda_d", operator_norm(ld)},
                 {"norm_lambda_0", operator_norm(l0)},
                 {"norm_f", ss.mu.size() ? ss.mu[0] : 0.0},
                 {"causal", ld.causal() && l0.causal() && F.causal()},
                 {"noise_level", c.noise.level}};
}

inline void run_reconstruct(const ExperimentConfig& c, io::Manifest& m, RunResult& res) {
  if (c.scene.cavities.empty()) throw ArgumentError("reconstruction needs synthetic data from a scene with cavities");
  SamplingProblem p = make_sampling_problem(c.scene, c.disc, c.corrector_substeps);
  if (c.noise.level > 0.0) set_operator(p, inject_noise(p.F, c.noise.level, c.noise.seed));
  TikhonovConfig tk = c.sampling.tikhonov;
  tk.noise_level = c.noise.level;
  const auto times = c.sampling_times();
  std::vector<IndicatorField> fields;
  for (std::size_t i = 0; i < times.size(); ++i) {
    fields.push_back(indicator_scan(p, times[i], scan_grid(c), tk, c.sampling.clearance, c.threads));
    write_indicator(m, "indicator_s" + std::to_string(i) + ".csv", fields.back());
    m.add("indicator_s" + std::to_string(i) + ".csv");
  }
  const IndicatorField field = fields.size() == 1 ? fields[0] : multi_sample_aggregate(fields, c.sampling.aggregation);
  write_indicator(m, "indicator.csv", field);
  m.add("indicator.csv");

  double tau = c.sampling.threshold;
  json cal = nullptr;
  if (c.sampling.calibration) {
    Scene cs = c.scene;
    cs.cavities = *c.sampling.calibration;
    SamplingProblem cp = make_sampling_problem(cs, c.disc, c.corrector_substeps);
    TikhonovConfig ck = c.sampling.tikhonov;
    ck.selection = AlphaSelection::fixed;
    std::vector<IndicatorField> cf;
    for (double s : times) cf.push_back(indicator_scan(cp, s, scan_grid(c), ck, c.sampling.clearance, c.threads));
    const IndicatorField cfield = cf.size() == 1 ? cf[0] : multi_sample_aggregate(cf, c.sampling.aggregation);
    tau = calibrate_threshold(cfield, cs);
    const CavityEstimate ce = extract_cavity(cfield, tau);
    cal = {{"threshold", tau}, {"symmetric_difference", symmetric_difference(cfield, ce, cs)}};
  }

  const CavityEstimate est = extract_cavity(field, tau);
  {
    io::CsvWriter w(m.path("mask.csv"));
    w.header({"x", "y"});
    for (std::size_t i = 0; i < field.size(); ++i)
      if (est.mask[i]) w.row({field.points[i].x(), field.points[i].y()});
  }
  m.add("mask.csv");
  {
    io::CsvWriter w(m.path("boundary.csv"));
    w.header({"curve", "index", "x", "y"});
    for (std::size_t k = 0; k < est.boundaries.size(); ++k)
      for (std::size_t i = 0; i < est.boundaries[k].size(); ++i)
        w.row({double(k), double(i), est.boundaries[k][i].x(), est.boundaries[k][i].y()});
  }
  m.add("boundary.csv");

  double true_measure = 0.0;
  for (const auto& cav : c.scene.cavities) true_measure += cav.measure();
  const double sd = symmetric_difference(field, est, c.scene);
  std::size_t valid = 0, active = 0, near = 0;
  for (std::size_t i = 0; i < field.size(); ++i) {
    active += field.active[i];
    valid += field.active[i] && field.valid[i];
    near += field.active[i] && field.near_boundary[i];
  }
  json intervals = json::array();
  for (auto [a, b] : est.intervals) intervals.push_back({a, b});
  res.summary = {{"scene_hash", scene_hash(c)},
                 {"s", times},
                 {"threshold", tau},
                 {"calibration", cal},
                 {"active_points", active},
                 {"valid_points", valid},
                 {"near_boundary_points", near},
                 {"estimated_measure", est.area},
                 {"true_measure", true_measure},
                 {"symmetric_difference", sd},
                 {"relative_symmetric_difference", sd / true_measure},
                 {"intervals", intervals},
                 {"noise_level", c.noise.level}};
  json side = {{"scene_hash", scene_hash(c)},
               {"s", times},
               {"alpha_selection", tk.selection == AlphaSelection::fixed ? "fixed" : "morozov"},
               {"threshold", tau},
               {"grid", {{"nx", field.nx}, {"ny", field.ny}}},
               {"config", recorded_config(c)}};
  io::write_json(m.path("indicator.json"), side);
  m.add("indicator.json");
}

// Smooth random densities for the layer-potential checks.
inline DensityFn random_density(std::mt19937_64& rng, bool vanish_at_zero) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double a0 = u(rng), a1 = u(rng), a2 = u(rng), a3 = u(rng), a4 = u(rng);
  return [=](std::size_t, double th, double t) {
    const double time = vanish_at_zero ? t * (1.0 + a3 * t) : 1.0 + a3 * t + a4 * t * t;
    return time * (1.0 + a0 * std::cos(th) + a1 * std::sin(th) + a2 * std::cos(2.0 * th));
  };
}

inline void run_verify(const ExperimentConfig& c, io::Manifest& m, RunResult& res) {
  std::vector<CheckResult>& checks = res.checks;
  if (!c.scene.cavities.empty()) {
    const OperatorMatrix F = operator_f(assemble_ntd(c.scene, c.disc, true), assemble_ntd(c.scene, c.disc, false));
    const double r = verify_factorization(F, operator_a(c.scene, c.disc), operator_h(c.scene, c.disc));
    checks.push_back({"factorization_F_plus_AH", r, c.verify.factorization_tolerance,
                      r <= c.verify.factorization_tolerance});
  }
  const double exact[3] = {0.5, 1.0 / kTwoPi, 1.0 / (4.0 * kPi)};
  for (int n = 1; n <= 3; ++n) {
    const double e = std::abs(trace_constant_gamma(n) - exact[n - 1]);
    checks.push_back({"gamma_" + std::to_string(n), e, 1e-10, e <= 1e-10});
  }
  if (c.scene.dim == 2 && !c.scene.cavities.empty()) {
    std::mt19937_64 rng(c.noise.seed);
    const std::vector<BoundaryMesh> om{build_boundary_mesh(c.scene.outer, c.verify.adjoint_nodes)};
    std::vector<BoundaryMesh> cm;
    for (const auto& cav : c.scene.cavities) cm.push_back(build_boundary_mesh(cav, c.verify.adjoint_nodes));
    double worst = 0.0;
    for (int k = 0; k < c.verify.adjoint_pairs; ++k) {
      const DensityFn psi = random_density(rng, true), eta = random_density(rng, true);
      const AdjointPairing pr = adjoint_pairings(om, cm, psi, eta, c.scene.final_time);
      worst = std::max(worst, std::abs(pr.k_eta - pr.psi_kstar) / (pr.psi_norm * pr.eta_norm));
    }
    checks.push_back({"adjointness", worst, c.verify.adjoint_tolerance, worst <= c.verify.adjoint_tolerance});

    const std::vector<BoundaryMesh> jm{build_boundary_mesh(c.scene.cavities[0], c.disc.cavity_nodes)};
    const DensityFn eta = random_density(rng, false);
    const double s = 0.6 * c.scene.final_time;
    double dev = 0.0, emax = 0.0;
    for (int k = 0; k < c.verify.jump_probes; ++k) {
      const double th = kTwoPi * (k + 0.37) / c.verify.jump_probes;
      const JumpLimits jl = jump_relation_limits(jm, eta, 0, th, s, c.scene.final_time, {0.04, 0.02, 0.01, 0.005});
      dev = std::max({dev, std::abs(jl.inner - (jl.pv - 0.5 * jl.eta)), std::abs(jl.outer - (jl.pv + 0.5 * jl.eta))});
      emax = std::max(emax, std::abs(jl.eta));
    }
    const double rel = emax > 0.0 ? dev / emax : dev;
    checks.push_back({"jump_relation", rel, c.verify.jump_tolerance, rel <= c.verify.jump_tolerance});
  }
  write_checks(m, "verify.csv", checks);
  m.add("verify.csv");
  bool ok = true;
  for (const auto& ch : checks) ok = ok && ch.pass;
  res.status = ok ? 0 : 2;
  res.summary = {{"pass", ok}};
}

inline void run_diagnose(const ExperimentConfig& c, io::Manifest& m, RunResult& res) {
  const double T = c.scene.final_time;
  const double s = c.sampling_times().front();
  json out = json::object();
  if (c.scene.dim == 2 && !c.scene.cavities.empty()) {
    FluxSweepOptions fo;
    fo.nodes = c.diagnose.sweep_nodes;
    fo.threads = c.threads;
    const BlowupReport sweep = normal_flux_norm_sweep(c.scene, 0, c.diagnose.ray_theta, s, c.diagnose.distances, fo);
    io::CsvWriter w(m.path("flux_sweep.csv"));
    w.header({"distance", "norm"});
    for (std::size_t k = 0; k < sweep.values.size(); ++k) w.row({sweep.parameters[k], sweep.values[k]});
    m.add("flux_sweep.csv");
    out["flux_sweep"] = {{"slope", sweep.fit.slope}, {"r2", sweep.fit.r2}, {"monotone", sweep.monotone},
                         {"warnings", sweep.warnings}};
    res.checks.push_back({"flux_sweep_slope", sweep.fit.slope, -0.5, sweep.fit.slope <= -0.5 && sweep.monotone});

    const Vec2 yb = c.scene.cavities[0].curve.point(c.diagnose.ray_theta);
    DivergenceOptions dopt;
    dopt.threads = c.threads;
    const BlowupReport div = gamma_h1_divergence(c.scene, yb, s, c.diagnose.eps, dopt);
    io::CsvWriter wd(m.path("gamma_divergence.csv"));
    wd.header({"eps", "l2_part", "h1"});
    for (std::size_t k = 0; k < div.values.size(); ++k) wd.row({div.parameters[k], div.values[k], div.secondary[k]});
    m.add("gamma_divergence.csv");
    out["gamma_divergence"] = {{"slope", div.fit.slope},
                               {"r2", div.fit.r2},
                               {"h1_r2", div.secondary_fit.r2},
                               {"warnings", div.warnings}};
    res.checks.push_back({"gamma_divergence_r2", div.fit.r2, 0.99, div.fit.r2 >= 0.99});
  }
  {
    io::CsvWriter w(m.path("lower_bound.csv"));
    w.header({"xi", "T", "closed_form", "quadrature"});
    double worst = 0.0;
    for (double xi : {0.05, 0.1, 0.3, 0.7, 1.0, 2.0}) {
      const double a = lower_bound_integral(xi, T), b = lower_bound_integral_quadrature(xi, T);
      worst = std::max(worst, std::abs(a - b) / std::abs(a));
      w.row({xi, T, a, b});
    }
    m.add("lower_bound.csv");
    res.checks.push_back({"lower_bound_quadrature", worst, 1e-10, worst <= 1e-10});
  }
  {
    io::CsvWriter w(m.path("auxiliary.csv"));
    w.header({"t", "l", "c", "norm_sq", "bound", "stated_bound", "pairing", "closed_form"});
    bool ok = true;
    for (double tf : {0.1, 0.5, 1.0})
      for (double l : {0.5, 1.0, 3.0})
        for (double cc : {0.1, 0.3, 0.5}) {
          const auto a = auxiliary_test_function_check(tf * T, l, cc, T);
          ok = ok && a.bound_holds && std::abs(a.pairing - a.closed_form) <= 1e-10 * a.closed_form;
          w.row({tf * T, l, cc, a.norm_sq, a.bound, a.stated_bound, a.pairing, a.closed_form});
        }
    m.add("auxiliary.csv");
    res.checks.push_back({"auxiliary_bounds", ok ? 1.0 : 0.0, 1.0, ok});
  }
  write_checks(m, "diagnostics.csv", res.checks);
  m.add("diagnostics.csv");
  bool ok = true;
  for (const auto& ch : res.checks) ok = ok && ch.pass;
  res.status = ok ? 0 : 2;
  out["pass"] = ok;
  res.summary = out;
}

}  // namespace detail

/// Executes the configured mode and writes artifacts plus manifest.json under the output directory.
inline RunResult run_pipeline(ExperimentConfig cfg, const RunOptions& opt = {}) {
  if (opt.mode) cfg.mode = *opt.mode;
  if (opt.threads) cfg.threads = *opt.threads;
  if (opt.seed) cfg.noise.seed = *opt.seed;
  const std::filesystem::path root = opt.out ? *opt.out : std::filesystem::path(cfg.output);
  cfg.threads = resolve_threads(cfg.threads);
  cfg.disc.solver.threads = cfg.threads;
  std::filesystem::create_directories(root);
  io::Manifest m(root);
  io::write_json(m.path("config.json"), detail::recorded_config(cfg));
  m.add("config.json");
  RunResult res;
  if (cfg.mode == "forward") detail::run_forward(cfg, m, res);
  else if (cfg.mode == "ntd") detail::run_ntd(cfg, m, res);
  else if (cfg.mode == "reconstruct") detail::run_reconstruct(cfg, m, res);
  else if (cfg.mode == "verify") detail::run_verify(cfg, m, res);
  else if (cfg.mode == "diagnose") detail::run_diagnose(cfg, m, res);
  else throw ConfigError("unknown mode '" + cfg.mode + "'");
  io::write_json(m.path("summary.json"), res.summary);
  m.add("summary.json");
  res.manifest = m.write();
  return res;
}

struct FileDiff {
  std::string path;
  std::string status;  // identical | differs | missing_a | missing_b
  double max_abs = 0.0;
  double max_rel = 0.0;
  bool shape_mismatch = false;
};

struct CompareReport {
  std::vector<FileDiff> files;
  bool identical() const {
    for (const auto& f : files)
      if (f.status != "identical") return false;
    return true;
  }
  /// True when every file is present and all numeric CSV cells agree within `rel`.
  bool numerically_equal(double rel = 0.0) const {
    for (const auto& f : files) {
      if (f.status == "missing_a" || f.status == "missing_b") return false;
      if (f.status == "differs" && (f.shape_mismatch || f.max_rel > rel)) return false;
    }
    return true;
  }
};

/// Per-file hash comparison of two manifests plus a numeric diff of differing CSV files.
inline CompareReport compare_runs(const std::filesystem::path& manifest_a, const std::filesystem::path& manifest_b) {
  const json a = io::read_json(manifest_a), b = io::read_json(manifest_b);
  const auto root_a = manifest_a.parent_path(), root_b = manifest_b.parent_path();
  std::map<std::string, std::string> ha, hb;
  for (const auto& f : a.at("files")) ha[f.at("path").get<std::string>()] = f.at("sha256").get<std::string>();
  for (const auto& f : b.at("files")) hb[f.at("path").get<std::string>()] = f.at("sha256").get<std::string>();
  CompareReport rep;
  for (const auto& [path, hash] : ha) {
    FileDiff d{path, "identical"};
    auto it = hb.find(path);
    if (it == hb.end() || !std::filesystem::exists(root_b / path)) {
      d.status = "missing_b";
    } else if (!std::filesystem::exists(root_a / path)) {
      d.status = "missing_a";
    } else if (it->second != hash) {
      d.status = "differs";
      if (path.size() > 4 && path.substr(path.size() - 4) == ".csv") {
        const io::CsvTable ta = io::read_csv(root_a / path), tb = io::read_csv(root_b / path);
        d.shape_mismatch = ta.rows.size() != tb.rows.size() || ta.header != tb.header;
        // deviations over the common rows; a shape change is flagged separately
        for (std::size_t r = 0; r < std::min(ta.rows.size(), tb.rows.size()); ++r) {
          const auto& ra = ta.rows[r];
          const auto& rb = tb.rows[r];
          if (ra.size() != rb.size()) d.shape_mismatch = true;
          for (std::size_t k = 0; k < std::min(ra.size(), rb.size()); ++k) {
            char* ea = nullptr;
            char* eb = nullptr;
            const double x = std::strtod(ra[k].c_str(), &ea), y = std::strtod(rb[k].c_str(), &eb);
            if (*ea != '\0' || *eb != '\0') {
              if (ra[k] != rb[k]) d.max_abs = d.max_rel = std::numeric_limits<double>::infinity();
              continue;
            }
            const double diff = std::abs(x - y);
            d.max_abs = std::max(d.max_abs, diff);
            const double scale = std::max(std::abs(x), std::abs(y));
            if (scale > 0.0) d.max_rel = std::max(d.max_rel, diff / scale);
          }
        }
      } else {
        d.max_abs = d.max_rel = std::numeric_limits<double>::infinity();
      }
    }
    rep.files.push_back(d);
  }
  for (const auto& [path, hash] : hb)
    if (!ha.count(path)) rep.files.push_back({path, "missing_a"});
  return rep;
}

}  // namespace heatsampler
