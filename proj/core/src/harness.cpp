#include "ntmc/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "ntmc/errors.hpp"

namespace ntmc {

SpectralTriple build_triple(const ExperimentConfig& cfg, int threads) {
  if (!cfg.grid) throw ConfigError({"grid: missing (needed for spectral quantities)"});
  SpectralTriple triple = compute_spectral_triple(cfg.model, *cfg.grid, threads);
  if (!cfg.refine) return triple;
  return refine_characteristics(triple, *cfg.refine);
}

double interpolate_root(std::span<const double> x, std::span<const double> y) {
  for (std::size_t i = 0; i + 1 < std::min(x.size(), y.size()); ++i) {
    if (y[i] == 0.0) return x[i];
    if ((y[i] < 0.0) != (y[i + 1] < 0.0)) return x[i] + (x[i + 1] - x[i]) * y[i] / (y[i] - y[i + 1]);
  }
  if (!y.empty() && y.back() == 0.0) return x[y.size() - 1];
  return std::numeric_limits<double>::quiet_NaN();
}

CriticalityScan criticality_scan(const ExperimentConfig& base, std::span<const double> ms, const ScanOptions& opt) {
  std::vector<double> sorted(ms.begin(), ms.end());
  std::sort(sorted.begin(), sorted.end());
  const ParticleState& p0 = base.start();
  CriticalityScan scan;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const ExperimentConfig cfg = with_fission_mean(base, sorted[i]);
    CriticalityRow row;
    row.m = sorted[i];
    if (cfg.grid) {
      const PhaseGrid grid(*cfg.model, *cfg.grid);
      const StepOperator op(*cfg.model, grid, opt.threads);
      const EigenPair right = power_iterate_right(op, PowerIterationOptions{});
      row.lambda_grid = std::log(right.eigenvalue) / grid.dt();
    }
    row.lambda_mc = estimate_lambda_mc(*cfg.model, p0.r, p0.v, opt.t1, opt.t2,
                                       TrialPlan{hash_keys(opt.seed, {i, 1}), 0, opt.walk_trials, opt.threads});
    const double hs[] = {opt.horizon};
    const BranchingMoments s = survival_moments(*cfg.model, p0.r, p0.v, hs,
                                                TrialPlan{hash_keys(opt.seed, {i, 2}), 0, opt.nbp_trials, opt.threads},
                                                opt.caps);
    if (s.moments.count() == 0) throw EstimationError("criticality_scan: every survival trial truncated");
    row.survival = s.moments.estimate(0, s.truncated);
    scan.rows.push_back(row);
  }
  std::vector<double> lg, lm;
  for (const auto& r : scan.rows) {
    lg.push_back(r.lambda_grid);
    lm.push_back(r.lambda_mc.mean);
  }
  if (base.grid) scan.m_star_grid = interpolate_root(sorted, lg);
  scan.m_star_mc = interpolate_root(sorted, lm);
  return scan;
}

std::vector<MartingaleRow> martingale_rows(const MaterialModel& mm, const SpectralTriple& triple, const Vec3& r,
                                           const Vec3& v, std::span<const double> times, const TrialPlan& plan,
                                           const NbpCaps& caps) {
  const double phi0 = triple.phi(r, v);
  if (!(phi0 > 0.0)) throw SpectralError("martingale_rows: phi is not positive at the start point");
  const PhaseFunction gs[] = {[&](const Vec3& x, const Vec3& u) { return triple.phi(x, u); }};
  const Population start = Population::single(r, v);
  auto per_trial = run_trials(plan, [&](Rng& rng, std::int64_t index) {
    const NbpTally t = tally_nbp(mm, start, times, gs, caps, rng);
    std::vector<MartingaleRow> out(times.size());
    for (std::size_t j = 0; j < times.size(); ++j) {
      out[j].trial_id = index;
      out[j].t = times[j];
      out[j].truncated = t.truncated;
      out[j].n = t.truncated ? -1 : t.counts[j];
      out[j].w = t.truncated ? std::numeric_limits<double>::quiet_NaN()
                             : std::exp(-triple.lambda_star() * times[j]) * t.values[j] / phi0;
    }
    return out;
  });
  std::vector<MartingaleRow> rows;
  rows.reserve(per_trial.size() * times.size());
  for (auto& block : per_trial) rows.insert(rows.end(), block.begin(), block.end());
  return rows;
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

namespace {

std::string fmt(const Vec3& v) { return format_double(v.x) + "," + format_double(v.y) + "," + format_double(v.z); }

}  // namespace

void write_csv(std::ostream& os, std::span<const NbpTrialRow> rows) {
  os << "trial_id,horizon,n_final,extinct,truncated,functional_value,w_final\n";
  for (const auto& r : rows) {
    os << r.trial_id << ',' << format_double(r.horizon) << ',' << r.n_final << ',' << (r.extinct ? 1 : 0) << ','
       << (r.truncated ? 1 : 0) << ',' << format_double(r.functional_value) << ',' << format_double(r.w_final)
       << '\n';
  }
}

void write_csv(std::ostream& os, std::span<const WalkTrialRow> rows) {
  os << "trial_id,t,alive,log_weight,g_value,contribution\n";
  for (const auto& r : rows) {
    os << r.trial_id << ',' << format_double(r.t) << ',' << (r.alive ? 1 : 0) << ',' << format_double(r.log_weight)
       << ',' << format_double(r.g_value) << ',' << format_double(r.contribution) << '\n';
  }
}

void write_csv(std::ostream& os, std::span<const SpineTrialRow> rows) {
  os << "trial_id,t,spine_rx,spine_ry,spine_rz,spine_vx,spine_vy,spine_vz,immigrant_count,F_value\n";
  for (const auto& r : rows) {
    os << r.trial_id << ',' << format_double(r.t) << ',' << fmt(r.spine_r) << ',' << fmt(r.spine_v) << ','
       << r.immigrant_count << ',' << format_double(r.f_value) << '\n';
  }
}

void write_csv(std::ostream& os, std::span<const MartingaleRow> rows) {
  os << "trial_id,t,n,w,truncated\n";
  for (const auto& r : rows) {
    os << r.trial_id << ',' << format_double(r.t) << ',' << r.n << ',' << format_double(r.w) << ','
       << (r.truncated ? 1 : 0) << '\n';
  }
}

void write_csv(std::ostream& os, const CriticalityScan& scan) {
  os << "m,lambda_grid,lambda_mc,lambda_mc_se,survival,survival_se,survival_trials,truncated\n";
  for (const auto& r : scan.rows) {
    os << format_double(r.m) << ',' << format_double(r.lambda_grid) << ',' << format_double(r.lambda_mc.mean) << ','
       << format_double(r.lambda_mc.std_error) << ',' << format_double(r.survival.mean) << ','
       << format_double(r.survival.std_error) << ',' << r.survival.trials_used << ',' << r.survival.trials_truncated
       << '\n';
  }
  os << "# m_star_grid," << format_double(scan.m_star_grid) << '\n';
  os << "# m_star_mc," << format_double(scan.m_star_mc) << '\n';
}

}  // namespace ntmc
