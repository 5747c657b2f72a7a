#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "ntmc/errors.hpp"
#include "ntmc/harness.hpp"

namespace {

using namespace ntmc;

struct Common {
  std::string config;
  std::string out;
  std::int64_t trials = 0;
  std::optional<std::uint64_t> seed;
  std::optional<double> horizon;
  int threads = 1;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "Output file (default: the config's outputs.csv, else stdout)");
  cmd->add_option("--trials", c.trials, "Override the config's trial count")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", c.seed, "Override the config's master_seed");
  cmd->add_option("--horizon", c.horizon, "Override the config's horizons with a single time")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--threads", c.threads, "Worker threads")->check(CLI::Range(1, 1024));
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = load_config(c.config);
  if (c.trials > 0) cfg.trials = c.trials;
  if (c.seed) cfg.master_seed = *c.seed;
  if (c.horizon) cfg.horizons = {*c.horizon};
  return cfg;
}

TrialPlan plan_of(const ExperimentConfig& cfg, const Common& c) {
  return TrialPlan{cfg.master_seed, 0, cfg.trials, c.threads};
}

// Writes to --out, the config's default path, or stdout.
template <class Fn>
void emit(const Common& c, const std::string& fallback, Fn&& write) {
  const std::string path = !c.out.empty() ? c.out : fallback;
  if (path.empty() || path == "-") {
    write(std::cout);
    return;
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write(os);
  std::cerr << "wrote " << path << "\n";
}

std::string est(const EstimateWithError& e) {
  std::ostringstream ss;
  ss.precision(6);
  ss << e.mean << " +- " << e.std_error << " (" << e.trials_used << " trials";
  if (e.trials_truncated > 0) ss << ", " << e.trials_truncated << " truncated";
  ss << ")";
  return ss.str();
}

PhaseFunction test_function(const std::string& name, const MaterialModel& mm) {
  if (name == "one") return [](const Vec3&, const Vec3&) { return 1.0; };
  if (name == "half") {
    const double cx = mm.domain().centroid().x;
    return [cx](const Vec3& r, const Vec3&) { return r.x > cx ? 1.0 : 0.0; };
  }
  throw ConfigError({"--g: expected \"one\" or \"half\""});
}

SpectralTriple triple_for(const ExperimentConfig& cfg, const Common& c) {
  std::cerr << "building spectral triple on " << cfg.grid->str() << (cfg.refine ? " (refined)" : "") << "\n";
  return build_triple(cfg, c.threads);
}

int run(int argc, char** argv) {
  CLI::App app{"ntmc: Monte Carlo toolkit for the neutron branching process and its random walk"};
  app.require_subcommand(1);

  Common c;
  std::string g_name = "one";
  bool with_w = false;
  auto* nbp = app.add_subcommand("simulate-nbp", "Simulate the branching process; one CSV row per trial");
  add_common(nbp, c);
  nbp->add_option("--g", g_name, "Test function: one | half");
  nbp->add_flag("--with-w", with_w, "Also report W_t (builds the spectral triple)");

  auto* m2o = app.add_subcommand("many-to-one", "Walk estimate of psi_t[g]; one CSV row per trial");
  add_common(m2o, c);
  m2o->add_option("--g", g_name, "Test function: one | half");

  std::string grid_text;
  std::optional<double> dt;
  bool no_refine = false;
  auto* spec = app.add_subcommand("spectral", "Grid eigen-triple; writes phi and phi_tilde as TSV");
  add_common(spec, c);
  spec->add_option("--grid", grid_text, "Grid as NXxNYxNZxNV, e.g. 16x16x16x32");
  spec->add_option("--dt", dt, "Time step")->check(CLI::PositiveNumber);
  spec->add_flag("--no-refine", no_refine, "Skip the characteristic refinement");

  auto* mg = app.add_subcommand("martingale", "W_t at the config horizons; one CSV row per (trial, t)");
  add_common(mg, c);

  auto* sc = app.add_subcommand("spine-check", "Measure-change identity for F = 1 and F = min(N, 10)");
  add_common(sc, c);

  std::vector<double> ms;
  std::int64_t walk_trials = 100'000;
  auto* cs = app.add_subcommand("criticality-scan", "lambda and survival across fission means");
  add_common(cs, c);
  cs->add_option("--m", ms, "Fission means (default: the config's scan list)");
  cs->add_option("--walk-trials", walk_trials, "Trials for the Monte Carlo growth rate")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  ExperimentConfig cfg = resolve(c);
  const MaterialModel& mm = *cfg.model;
  const ParticleState& p0 = cfg.start();
  const TrialPlan plan = plan_of(cfg, c);

  if (*nbp) {
    const PhaseFunction g = test_function(g_name, mm);
    std::optional<SpectralTriple> triple;
    if (with_w) triple.emplace(triple_for(cfg, c));
    const auto rows = nbp_rows(mm, g, triple ? &*triple : nullptr, cfg.initial, cfg.horizon(), plan);
    emit(c, cfg.output, [&](std::ostream& os) { write_csv(os, std::span<const NbpTrialRow>(rows)); });
    Moments mom;
    std::int64_t extinct = 0, truncated = 0;
    for (const auto& r : rows) {
      if (r.truncated) {
        ++truncated;
        continue;
      }
      mom.add(r.functional_value);
      extinct += r.extinct ? 1 : 0;
    }
    if (mom.count() == 0) throw EstimationError("simulate-nbp: every trial truncated");
    std::cerr << "<g, X_t> at t=" << cfg.horizon() << ": " << est(mom.estimate(0, truncated)) << "\n"
              << "extinct fraction: " << static_cast<double>(extinct) / static_cast<double>(mom.count()) << "\n";
    return 0;
  }
  if (*m2o) {
    const PhaseFunction g = test_function(g_name, mm);
    const auto rows = many_to_one_rows(mm, g, p0.r, p0.v, cfg.horizon(), plan);
    emit(c, cfg.output, [&](std::ostream& os) { write_csv(os, std::span<const WalkTrialRow>(rows)); });
    std::vector<std::vector<double>> vals;
    vals.reserve(rows.size());
    for (const auto& r : rows) vals.push_back({r.contribution});
    std::cerr << "psi_t[g] at t=" << cfg.horizon() << ": " << est(summarize(vals).estimate(0)) << "\n";
    return 0;
  }
  if (*spec) {
    if (!grid_text.empty()) cfg.grid = GridSpec::parse(grid_text, dt.value_or(cfg.grid ? cfg.grid->dt : 0.01));
    if (dt && cfg.grid) cfg.grid->dt = *dt;
    if (no_refine) cfg.refine.reset();
    if (!cfg.grid) throw ConfigError({"grid: missing; pass --grid or add a grid section"});
    const SpectralTriple triple = triple_for(cfg, c);
    emit(c, "", [&](std::ostream& os) { triple.write(os); });
    std::cerr << "lambda* = " << format_double(triple.lambda_star()) << "\n";
    return 0;
  }
  if (*mg) {
    const SpectralTriple triple = triple_for(cfg, c);
    const auto rows = martingale_rows(mm, triple, p0.r, p0.v, cfg.horizons, plan);
    emit(c, cfg.output, [&](std::ostream& os) { write_csv(os, std::span<const MartingaleRow>(rows)); });
    for (std::size_t j = 0; j < cfg.horizons.size(); ++j) {
      Moments mom;
      std::int64_t truncated = 0;
      for (std::size_t i = j; i < rows.size(); i += cfg.horizons.size()) {
        if (rows[i].truncated) {
          ++truncated;
        } else {
          mom.add(rows[i].w);
        }
      }
      if (mom.count() == 0) throw EstimationError("martingale: every trial truncated");
      std::cerr << "E[W_t] at t=" << cfg.horizons[j] << ": " << est(mom.estimate(0, truncated)) << "\n";
    }
    return 0;
  }
  if (*sc) {
    const SpectralTriple triple = triple_for(cfg, c);
    const PopulationFunctional capped = [](const Population& x) {
      return static_cast<double>(std::min<std::size_t>(x.count(), 10));
    };
    const auto rows = spine_rows(mm, triple, capped, p0.r, p0.v, cfg.horizon(), plan);
    emit(c, cfg.output, [&](std::ostream& os) { write_csv(os, std::span<const SpineTrialRow>(rows)); });
    const PopulationFunctional one = [](const Population&) { return 1.0; };
    for (const auto& [name, f] : {std::pair{"F = 1", one}, std::pair{"F = min(N, 10)", capped}}) {
      const IdentityCheck chk = measure_change_check(mm, triple, f, p0.r, p0.v, cfg.horizon(), plan);
      std::cerr << name << ": E[W F(X)] = " << est(chk.lhs) << ", spine = " << est(chk.rhs) << ", z = " << chk.z()
                << "\n";
    }
    return 0;
  }
  if (*cs) {
    if (ms.empty()) ms = cfg.scan;
    if (ms.empty()) throw ConfigError({"scan: no fission means; pass --m or add a scan list"});
    ScanOptions opt;
    opt.horizon = cfg.horizon();
    opt.nbp_trials = cfg.trials;
    opt.walk_trials = walk_trials;
    opt.seed = cfg.master_seed;
    opt.threads = c.threads;
    const CriticalityScan scan = criticality_scan(cfg, ms, opt);
    emit(c, cfg.output, [&](std::ostream& os) { write_csv(os, scan); });
    std::cerr << "m* (grid) = " << format_double(scan.m_star_grid) << ", m* (Monte Carlo) = "
              << format_double(scan.m_star_mc) << "\n";
    return 0;
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ntmc::ConfigError& e) {
    for (const auto& msg : e.errors()) std::cerr << "config error: " << msg << "\n";
    return 2;
  } catch (const ntmc::EstimationError& e) {
    std::cerr << "estimation error: " << e.what() << "\n";
    return 3;
  } catch (const ntmc::SpectralError& e) {
    std::cerr << "estimation error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
