#include "ntmc/spine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ntmc/errors.hpp"
#include "ntmc/flight.hpp"

namespace ntmc {

std::pair<double, double> spine_rates(const SpectralTriple& triple, const Vec3& r, const Vec3& v) {
  const double p = triple.phi(r, v);
  if (!(p > 0.0)) throw SpectralError("spine_rates: phi is not positive");
  const auto [s, f] = triple.source_parts(r);
  return {s / p, f / p};
}

namespace {

// Velocity with density proportional to phi(r, v') k(v').
Vec3 sample_phi_weighted(const MaterialModel& mm, const SpectralTriple& triple, const KernelSpec& k, const Vec3& r,
                         Rng& rng) {
  if (!k.is_isotropic()) {
    std::vector<double> w(k.atoms.size());
    double total = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
      w[j] = k.atoms[j].weight * triple.phi(r, k.atoms[j].velocity);
      total += w[j];
    }
    double u = rng.uniform() * total;
    for (std::size_t j = 0; j < w.size(); ++j) {
      if (u < w[j]) return k.atoms[j].velocity;
      u -= w[j];
    }
    return k.atoms.back().velocity;
  }
  const double bound = triple.phi_bound();
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const Vec3 w = sample_velocity_uniform(mm.vspace(), rng);
    const double p = triple.phi(r, w);
    if (p > bound * (1.0 + 1e-9)) throw SpectralError("spine: rejection envelope violated by phi");
    if (rng.uniform() * bound < p) return w;
  }
  // Acceptance below 0.1%: inverse CDF over the grid velocity nodes.
  const auto& q = triple.grid().velocities();
  std::vector<double> w(q.size());
  double total = 0.0;
  for (std::size_t j = 0; j < q.size(); ++j) {
    w[j] = q.weights[j] * triple.phi(r, q.nodes[j]);
    total += w[j];
  }
  double u = rng.uniform() * total;
  for (std::size_t j = 0; j < w.size(); ++j) {
    if (u < w[j]) return q.nodes[j];
    u -= w[j];
  }
  return q.nodes.back();
}

struct FlightDraw {
  bool collided = false;
  double duration = 0.0;
};

// Flight of the spine from (r, v) for at most t_max.
FlightDraw spine_flight(const MaterialModel& mm, const SpectralTriple& triple, const Vec3& r, const Vec3& v,
                        double t_max, Rng& rng) {
  if (triple.is_constant()) {
    const auto& regs = mm.regions();
    const Flight f = fly(mm, r, v, t_max, [&](std::size_t i) { return regs[i].alpha(); }, rng);
    if (f.end == Flight::End::boundary) throw SpectralError("spine: reached the boundary under a constant phi");
    return {f.end == Flight::End::collision, f.duration};
  }
  const auto prof = triple.collision_profile(r, v);
  std::vector<double> cdf(prof.size(), 0.0);
  for (std::size_t i = 1; i < prof.size(); ++i) {
    cdf[i] = cdf[i - 1] + 0.5 * (prof[i - 1].second + prof[i].second) * (prof[i].first - prof[i - 1].first);
  }
  const double total = cdf.back();
  if (!(total > 0.0)) throw SpectralError("spine: collision source vanishes along the flight");
  const double target = rng.uniform() * total;
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), target);
  const std::size_t i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(1, it - cdf.begin())) - 1;
  const std::size_t j = std::min(i + 1, prof.size() - 1);
  const double ds = prof[j].first - prof[i].first;
  double s = prof[i].first;
  if (ds > 0.0) {
    // Linear density on [s_i, s_j]: solve a x^2 + b x = d.
    const double b = prof[i].second;
    const double a = (prof[j].second - prof[i].second) / (2.0 * ds);
    const double d = target - cdf[i];
    const double disc = std::max(0.0, b * b + 4.0 * a * d);
    const double x = b + std::sqrt(disc) > 0.0 ? 2.0 * d / (b + std::sqrt(disc)) : 0.0;
    s += std::clamp(x, 0.0, ds);
  }
  const double kappa = prof.back().first;
  s = std::min(s, kappa * (1.0 - 1e-9));
  if (s >= t_max) return {false, t_max};
  return {true, s};
}

}  // namespace

SpineStep spine_step(const MaterialModel& mm, const SpectralTriple& triple, SpineState& state, double horizon,
                     Rng& rng) {
  WalkState& sp = state.spine;
  SpineStep step;
  step.r0 = sp.r;
  step.v = sp.v;
  step.t0 = sp.time;
  if (sp.time >= horizon) {
    step.t1 = sp.time;
    return step;
  }
  const FlightDraw f = spine_flight(mm, triple, sp.r, sp.v, horizon - sp.time, rng);
  sp.r = sp.r + sp.v * f.duration;
  sp.time += f.duration;
  step.t1 = sp.time;
  if (!f.collided) {
    sp.time = horizon;
    step.t1 = horizon;
    return step;
  }
  if (!contains(mm.domain(), sp.r)) throw InvariantError("spine: left the domain");
  const auto& reg = mm.region_at(sp.r);
  const auto [s_part, f_part] = triple.source_parts(sp.r);
  if (rng.uniform() * (s_part + f_part) < s_part) {
    step.kind = SpineStep::Kind::scatter;
    sp.v = sample_phi_weighted(mm, triple, reg.scatter_kernel, sp.r, rng);
    return step;
  }

  step.kind = SpineStep::Kind::fission;
  const std::size_t fission_index = state.spine_fission_times.size();
  state.spine_fission_times.push_back(sp.time);
  std::vector<Vec3> kids;
  if (const auto* iid = std::get_if<IidOffspring>(&mm.offspring_mode())) {
    // Size-biased count, one phi-biased velocity, the rest from the kernel.
    double total = 0.0;
    for (std::size_t n = 1; n < iid->pmf.size(); ++n) total += static_cast<double>(n) * iid->pmf[n];
    if (!(total > 0.0)) throw ModelError("spine: offspring law has zero mean");
    double u = rng.uniform() * total;
    std::size_t n = iid->pmf.size() - 1;
    for (std::size_t k = 1; k < iid->pmf.size(); ++k) {
      const double w = static_cast<double>(k) * iid->pmf[k];
      if (u < w) {
        n = k;
        break;
      }
      u -= w;
    }
    const std::size_t biased = static_cast<std::size_t>(rng.below(n));
    for (std::size_t k = 0; k < n; ++k) {
      kids.push_back(k == biased ? sample_phi_weighted(mm, triple, reg.fission_kernel, sp.r, rng)
                                 : reg.fission_kernel.sample(mm.vspace(), rng));
    }
  } else {
    const Vec3 w = sample_phi_weighted(mm, triple, reg.fission_kernel, sp.r, rng);
    kids.assign(static_cast<std::size_t>(mm.n_max()), w);
  }
  // Re-mark the spine with probability phi(r, v_i) / <phi, Z>.
  std::vector<double> weight(kids.size());
  double total = 0.0;
  for (std::size_t k = 0; k < kids.size(); ++k) {
    weight[k] = triple.phi(sp.r, kids[k]);
    total += weight[k];
  }
  if (!(total > 0.0)) throw SpectralError("spine: offspring carry no phi mass");
  double u = rng.uniform() * total;
  std::size_t chosen = kids.size() - 1;
  for (std::size_t k = 0; k < kids.size(); ++k) {
    if (u < weight[k]) {
      chosen = k;
      break;
    }
    u -= weight[k];
  }
  for (std::size_t k = 0; k < kids.size(); ++k) {
    if (k == chosen) continue;
    state.immigrants.push_back({sp.r, kids[k], sp.time});
    state.immigrant_fission.push_back(fission_index);
  }
  sp.v = kids[chosen];
  return step;
}

SpineRun spine_run(const MaterialModel& mm, const SpectralTriple& triple, const Vec3& r, const Vec3& v, double horizon,
                   Rng& rng, const NbpCaps& caps, bool with_immigrants) {
  if (!contains(mm.domain(), r)) throw DomainError("spine_run: start point outside domain");
  SpineRun run;
  run.state.spine = WalkState{r, v, 0.0, 0.0, true};
  while (run.state.spine.time < horizon) {
    if (spine_step(mm, triple, run.state, horizon, rng).kind == SpineStep::Kind::horizon) break;
  }
  run.population.time = horizon;
  run.population.particles.push_back({run.state.spine.r, run.state.spine.v, 0.0});
  if (!with_immigrants) return run;
  std::size_t prev = std::numeric_limits<std::size_t>::max();
  std::uint64_t k = 0;
  for (std::size_t i = 0; i < run.state.immigrants.size(); ++i) {
    const std::size_t fi = run.state.immigrant_fission[i];
    k = fi == prev ? k + 1 : 0;
    prev = fi;
    Rng sub = rng.split(fi, k);
    const ParticleState& imm = run.state.immigrants[i];
    NbpResult res = simulate_nbp(mm, Population{imm.birth_time, {imm}}, horizon, caps, sub);
    if (res.truncated) {
      run.truncated = true;
      return run;
    }
    for (auto& p : res.final.particles) run.population.particles.push_back(p);
  }
  return run;
}

std::size_t OccupationBins::index(const Vec3& r, const Vec3& v) const {
  std::size_t idx[3];
  for (int a = 0; a < 3; ++a) {
    const double w = (box.hi[a] - box.lo[a]) / n[a];
    const int i = static_cast<int>(std::floor((r[a] - box.lo[a]) / w));
    idx[a] = static_cast<std::size_t>(std::clamp(i, 0, n[a] - 1));
  }
  const std::size_t oct = (v.x > 0.0 ? 1u : 0u) | (v.y > 0.0 ? 2u : 0u) | (v.z > 0.0 ? 4u : 0u);
  return ((oct * n[2] + idx[2]) * n[1] + idx[1]) * n[0] + idx[0];
}

namespace {

// Adds the time spent by r0 + v (t - t0) over [ta, tb] to the bins.
void deposit(const OccupationBins& bins, std::vector<double>& mass, const Vec3& r0, const Vec3& v, double t0, double ta,
             double tb) {
  if (tb <= ta) return;
  std::vector<double> cuts{ta, tb};
  for (int a = 0; a < 3; ++a) {
    if (v[a] == 0.0) continue;
    const double w = (bins.box.hi[a] - bins.box.lo[a]) / bins.n[a];
    for (int k = 1; k < bins.n[a]; ++k) {
      const double t = t0 + (bins.box.lo[a] + k * w - r0[a]) / v[a];
      if (t > ta && t < tb) cuts.push_back(t);
    }
  }
  std::sort(cuts.begin(), cuts.end());
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double mid = 0.5 * (cuts[i] + cuts[i + 1]);
    mass[bins.index(r0 + v * (mid - t0), v)] += cuts[i + 1] - cuts[i];
  }
}

// Adds E[time in each bin] of a flight from r0 with velocity v whose length has
// density proportional to the profile (s_i, f_i), linear between samples.
void deposit_expected(const OccupationBins& bins, std::vector<double>& mass, const Vec3& r0, const Vec3& v,
                      const std::vector<std::pair<double, double>>& prof) {
  const std::size_t n = prof.size();
  std::vector<double> cdf(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    cdf[i] = cdf[i - 1] + 0.5 * (prof[i - 1].second + prof[i].second) * (prof[i].first - prof[i - 1].first);
  }
  const double total = cdf.back();
  if (!(total > 0.0)) return;
  const double kappa = prof.back().first;
  std::vector<double> cuts;
  for (int a = 0; a < 3; ++a) {
    if (v[a] == 0.0) continue;
    const double w = (bins.box.hi[a] - bins.box.lo[a]) / bins.n[a];
    for (int k = 1; k < bins.n[a]; ++k) {
      const double t = (bins.box.lo[a] + k * w - r0[a]) / v[a];
      if (t > 0.0 && t < kappa) cuts.push_back(t);
    }
  }
  std::sort(cuts.begin(), cuts.end());
  std::size_t next_cut = 0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double s0 = prof[i].first;
    const double s1 = prof[i + 1].first;
    const double ds = s1 - s0;
    if (!(ds > 0.0)) continue;
    const double a = (prof[i + 1].second - prof[i].second) / (2.0 * ds);
    auto tail = [&](double s) {
      const double x = s - s0;
      return total - cdf[i] - (prof[i].second * x + a * x * x);
    };
    double lo = s0;
    while (lo < s1) {
      while (next_cut < cuts.size() && cuts[next_cut] <= lo) ++next_cut;
      const double hi = next_cut < cuts.size() ? std::min(cuts[next_cut], s1) : s1;
      const double mid = 0.5 * (lo + hi);
      mass[bins.index(r0 + v * mid, v)] += (hi - lo) * std::max(0.0, tail(mid)) / total;
      lo = hi;
    }
  }
}

OccupationBins make_bins(const MaterialModel& mm, std::array<int, 3> spatial) {
  OccupationBins b;
  b.n = spatial;
  b.box = mm.domain().bounds();
  return b;
}

void normalize(std::vector<double>& m) {
  double total = 0.0;
  for (double x : m) total += x;
  if (total > 0.0) {
    for (double& x : m) x /= total;
  }
}

}  // namespace

Occupation spine_marginal_occupation(const MaterialModel& mm, const SpectralTriple& triple, const Vec3& r,
                                     const Vec3& v, double burn_in, double horizon, Rng& rng,
                                     std::array<int, 3> spatial_bins) {
  if (!(horizon > burn_in && burn_in >= 0.0)) throw std::invalid_argument("occupation needs 0 <= burn_in < horizon");
  Occupation occ;
  occ.bins = make_bins(mm, spatial_bins);
  occ.mass.assign(occ.bins.size(), 0.0);
  SpineState state;
  state.spine = WalkState{r, v, 0.0, 0.0, true};
  for (;;) {
    // Flights wholly inside [burn_in, horizon] deposit their expected occupation
    // given the start (renewal-reward with the exact flight-length law).
    bool expected = false;
    if (!triple.is_constant() && state.spine.time >= burn_in) {
      const auto prof = triple.collision_profile(state.spine.r, state.spine.v);
      if (state.spine.time + prof.back().first <= horizon) {
        deposit_expected(occ.bins, occ.mass, state.spine.r, state.spine.v, prof);
        expected = true;
      }
    }
    const SpineStep st = spine_step(mm, triple, state, horizon, rng);
    if (!expected) deposit(occ.bins, occ.mass, st.r0, st.v, st.t0, std::max(st.t0, burn_in), st.t1);
    state.immigrants.clear();
    state.immigrant_fission.clear();
    state.spine_fission_times.clear();
    if (st.kind == SpineStep::Kind::horizon) break;
  }
  normalize(occ.mass);
  return occ;
}

Occupation stationary_reference(const SpectralTriple& triple, std::array<int, 3> spatial_bins) {
  const MaterialModel& mm = triple.model();
  const PhaseGrid& g = triple.grid();
  Occupation occ;
  occ.bins = make_bins(mm, spatial_bins);
  occ.mass.assign(occ.bins.size(), 0.0);
  if (triple.is_refined() && mm.all_isotropic()) {
    const VelocityQuadrature q = VelocityQuadrature::fibonacci_gauss(mm.vspace(), 128, 4);
    for (std::size_t c = 0; c < g.cells(); ++c) {
      if (!g.inside(c)) continue;
      const Vec3 rc = g.center(c);
      for (std::size_t j = 0; j < q.size(); ++j) {
        occ.mass[occ.bins.index(rc, q.nodes[j])] +=
            q.weights[j] * triple.phi(rc, q.nodes[j]) * triple.phi_tilde_at(rc, q.nodes[j]);
      }
    }
  } else {
    const auto phi = triple.phi_nodes();
    const auto pt = triple.phi_tilde_nodes();
    for (std::size_t v = 0; v < g.velocities().size(); ++v) {
      for (std::size_t c = 0; c < g.cells(); ++c) {
        if (!g.inside(c)) continue;
        occ.mass[occ.bins.index(g.center(c), g.velocities().nodes[v])] +=
            g.measure(v) * phi[g.node(c, v)] * pt[g.node(c, v)];
      }
    }
  }
  normalize(occ.mass);
  return occ;
}

double total_variation(const Occupation& a, const Occupation& b) {
  if (a.mass.size() != b.mass.size()) throw std::invalid_argument("total_variation: bin layouts differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.mass.size(); ++i) s += std::abs(a.mass[i] - b.mass[i]);
  return 0.5 * s;
}

double IdentityCheck::z() const {
  const double se = std::hypot(lhs.std_error, rhs.std_error);
  const double d = std::abs(lhs.mean - rhs.mean);
  if (se > 0.0) return d / se;
  return d == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
}

namespace {

TrialPlan spine_side(const TrialPlan& plan) {
  TrialPlan p = plan;
  p.master_seed = hash_keys(plan.master_seed, {0x5b1e});
  return p;
}

}  // namespace

IdentityCheck measure_change_check(const MaterialModel& mm, const SpectralTriple& triple, const PopulationFunctional& f,
                                   const Vec3& r, const Vec3& v, double t, const TrialPlan& plan,
                                   const NbpCaps& caps) {
  const double phi0 = triple.phi(r, v);
  if (!(phi0 > 0.0)) throw SpectralError("measure_change_check: phi is not positive at the start point");
  const double decay = std::exp(-triple.lambda_star() * t);
  const Population start = Population::single(r, v);
  auto lhs_rows = run_trials(plan, [&](Rng& rng, std::int64_t) {
    const NbpResult res = simulate_nbp(mm, start, t, caps, rng);
    if (res.truncated) return std::vector<double>{};
    double w = 0.0;
    for (const auto& p : res.final.particles) w += triple.phi(p.r, p.v);
    return std::vector<double>{decay * w / phi0 * f(res.final)};
  });
  auto rhs_rows = run_trials(spine_side(plan), [&](Rng& rng, std::int64_t) {
    const SpineRun run = spine_run(mm, triple, r, v, t, rng, caps);
    if (run.truncated) return std::vector<double>{};
    return std::vector<double>{f(run.population)};
  });
  auto truncated = [](const auto& rows) {
    std::int64_t n = 0;
    for (const auto& row : rows) n += row.empty() ? 1 : 0;
    return n;
  };
  IdentityCheck out;
  out.lhs = summarize(lhs_rows, plan.first_trial).estimate(0, truncated(lhs_rows));
  out.rhs = summarize(rhs_rows, plan.first_trial).estimate(0, truncated(rhs_rows));
  return out;
}

IdentityCheck spine_com_weight_check(const MaterialModel& mm, const SpectralTriple& triple, const Vec3& r,
                                     const Vec3& v, double t, const PhaseFunction& h, const TrialPlan& plan) {
  const double phi0 = triple.phi(r, v);
  if (!(phi0 > 0.0)) throw SpectralError("spine_com_weight_check: phi is not positive at the start point");
  const WalkSpec spec = WalkSpec::many_to_one(mm);
  auto lhs_rows = run_trials(plan, [&](Rng& rng, std::int64_t) {
    const WalkPath path = simulate_nrw(mm, spec, r, v, t, rng);
    const WalkState s = path.at(t);
    if (!s.alive) return std::vector<double>{0.0};
    const double w = std::exp(-triple.lambda_star() * t + s.log_weight) * triple.phi(s.r, s.v) / phi0;
    return std::vector<double>{w * h(s.r, s.v)};
  });
  auto rhs_rows = run_trials(spine_side(plan), [&](Rng& rng, std::int64_t) {
    const SpineRun run = spine_run(mm, triple, r, v, t, rng, {}, false);
    return std::vector<double>{h(run.state.spine.r, run.state.spine.v)};
  });
  IdentityCheck out;
  out.lhs = summarize(lhs_rows, plan.first_trial).estimate(0);
  out.rhs = summarize(rhs_rows, plan.first_trial).estimate(0);
  return out;
}

std::vector<SpineTrialRow> spine_rows(const MaterialModel& mm, const SpectralTriple& triple,
                                      const PopulationFunctional& f, const Vec3& r, const Vec3& v, double t,
                                      const TrialPlan& plan, const NbpCaps& caps) {
  return run_trials(plan, [&](Rng& rng, std::int64_t index) {
    const SpineRun run = spine_run(mm, triple, r, v, t, rng, caps);
    SpineTrialRow row;
    row.trial_id = index;
    row.t = t;
    row.spine_r = run.state.spine.r;
    row.spine_v = run.state.spine.v;
    row.immigrant_count = run.truncated ? -1 : static_cast<std::int64_t>(run.population.count()) - 1;
    row.f_value = run.truncated ? std::numeric_limits<double>::quiet_NaN() : f(run.population);
    return row;
  });
}

}  // namespace ntmc
