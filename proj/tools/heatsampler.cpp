#include "heatsampler/heatsampler.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <string>

namespace hs = heatsampler;

namespace {

int run_mode(const std::string& mode, const std::string& config, const std::string& out, int threads,
             std::uint64_t seed, bool threads_set, bool seed_set) {
  hs::ExperimentConfig cfg = hs::load_config(config);
  hs::RunOptions opt;
  opt.mode = mode;
  if (!out.empty()) opt.out = out;
  if (threads_set) opt.threads = threads;
  if (seed_set) opt.seed = seed;
  const hs::RunResult res = hs::run_pipeline(cfg, opt);
  for (const auto& c : res.checks)
    std::printf("%-28s %-4s value=%.6g tol=%.3g\n", c.name.c_str(), c.pass ? "PASS" : "FAIL", c.value, c.tolerance);
  std::printf("manifest: %s\n", res.manifest.string().c_str());
  return res.status;
}

int run_compare(const std::string& a, const std::string& b, double tol) {
  const hs::CompareReport rep = hs::compare_runs(a, b);
  for (const auto& f : rep.files) {
    if (f.status == "identical") continue;
    std::printf("%-32s %-10s max_abs=%.6g max_rel=%.6g\n", f.path.c_str(), f.status.c_str(), f.max_abs, f.max_rel);
  }
  const bool ok = rep.numerically_equal(tol);
  std::printf("%s\n", rep.identical() ? "identical" : ok ? "numerically equal" : "differs");
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linear sampling reconstruction of cavities from heat boundary data"};
  app.require_subcommand(1);
  std::string config, out, mode;
  int threads = 0;
  std::uint64_t seed = 0;
  for (const char* name : {"forward", "ntd", "reconstruct", "verify", "diagnose"}) {
    auto* sub = app.add_subcommand(name, std::string("run the ") + name + " pipeline");
    sub->add_option("--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory (overrides the config)");
    sub->add_option("--threads", threads, "worker threads (0: HEATSAMPLER_THREADS, else 1)")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--seed", seed, "noise seed");
    sub->callback([&, name] { mode = name; });
  }
  std::string ma, mb;
  double tol = 0.0;
  auto* cmp = app.add_subcommand("compare", "diff two run manifests");
  cmp->add_option("manifest_a", ma, "first manifest.json")->required()->check(CLI::ExistingFile);
  cmp->add_option("manifest_b", mb, "second manifest.json")->required()->check(CLI::ExistingFile);
  cmp->add_option("--tolerance", tol, "relative tolerance for numeric CSV cells");
  cmp->callback([&] { mode = "compare"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (mode == "compare") return run_compare(ma, mb, tol);
    bool threads_set = false, seed_set = false;
    for (auto* sub : app.get_subcommands()) {
      threads_set = sub->count("--threads") > 0;
      seed_set = sub->count("--seed") > 0;
    }
    return run_mode(mode, config, out, threads, seed, threads_set, seed_set);
  } catch (const hs::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const hs::GeometryError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
