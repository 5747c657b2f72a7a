#include "ntmc/branching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ntmc/errors.hpp"
#include "ntmc/flight.hpp"
#include "ntmc/spectral.hpp"

namespace ntmc {

const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::scatter:
      return "scatter";
    case EventKind::fission:
      return "fission";
    case EventKind::boundary_kill:
      return "boundary_kill";
  }
  return "?";
}

Advance advance_particle(const MaterialModel& mm, const ParticleState& p, double now, double horizon, Rng& rng) {
  if (!contains(mm.domain(), p.r)) throw DomainError("advance_particle: particle outside domain");
  Advance a;
  const auto& regs = mm.regions();
  const Flight f = fly(mm, p.r, p.v, horizon - now, [&](std::size_t i) { return regs[i].sigma(); }, rng);
  a.time = now + f.duration;
  a.r = p.r + p.v * f.duration;
  a.region = f.region;
  switch (f.end) {
    case Flight::End::horizon:
      a.kind = Advance::Kind::survived;
      a.time = horizon;
      break;
    case Flight::End::boundary:
      a.kind = Advance::Kind::boundary_kill;
      break;
    case Flight::End::collision: {
      const auto& reg = regs[f.region];
      a.kind = rng.uniform() * reg.sigma() < reg.sigma_s ? Advance::Kind::scatter : Advance::Kind::fission;
      break;
    }
  }
  return a;
}

namespace {

struct Outcome {
  bool truncated = false;
  double extinction_time = -1.0;
  std::int64_t events = 0;
  std::int64_t survivors = 0;
};

// Depth-first over lines of descent with one RNG stream. on_segment(p, t0, t1, survived)
// is called for every straight piece of a trajectory: p at p.r at time t0, alive on [t0, t1).
template <class OnSegment, class OnEvent>
Outcome run_nbp(const MaterialModel& mm, const Population& initial, double horizon, const NbpCaps& caps, Rng& rng,
                OnSegment&& on_segment, OnEvent&& on_event) {
  struct Item {
    ParticleState p;
    double now;
  };
  Outcome out;
  std::vector<Item> stack;
  for (auto it = initial.particles.rbegin(); it != initial.particles.rend(); ++it) {
    if (!contains(mm.domain(), it->r)) throw DomainError("simulate_nbp: initial particle outside domain");
    stack.push_back({*it, initial.time});
  }
  double last_death = initial.time;
  while (!stack.empty()) {
    Item cur = stack.back();
    stack.pop_back();
    for (;;) {
      const Advance a = advance_particle(mm, cur.p, cur.now, horizon, rng);
      if (a.kind == Advance::Kind::survived) {
        on_segment(cur.p, cur.now, horizon, true);
        ++out.survivors;
        break;
      }
      on_segment(cur.p, cur.now, a.time, false);
      if (++out.events > caps.max_events) {
        out.truncated = true;
        return out;
      }
      ParticleState at{a.r, cur.p.v, cur.p.birth_time};
      if (a.kind == Advance::Kind::boundary_kill) {
        on_event(Event{a.time, EventKind::boundary_kill, at, {}});
        last_death = std::max(last_death, a.time);
        break;
      }
      if (a.kind == Advance::Kind::scatter) {
        ParticleState next{a.r, mm.regions()[a.region].scatter_kernel.sample(mm.vspace(), rng), cur.p.birth_time};
        on_event(Event{a.time, EventKind::scatter, at, {next}});
        cur = {next, a.time};
        continue;
      }
      const OffspringDraw draw = draw_offspring(mm, a.r, cur.p.v, rng);
      std::vector<ParticleState> kids;
      kids.reserve(draw.velocities.size());
      for (const auto& w : draw.velocities) kids.push_back({a.r, w, a.time});
      for (auto it = kids.rbegin(); it != kids.rend(); ++it) stack.push_back({*it, a.time});
      on_event(Event{a.time, EventKind::fission, at, std::move(kids)});
      if (draw.velocities.empty()) last_death = std::max(last_death, a.time);
      if (static_cast<std::int64_t>(stack.size()) + out.survivors > caps.max_particles) {
        out.truncated = true;
        return out;
      }
      break;
    }
  }
  if (out.survivors == 0) out.extinction_time = last_death;
  return out;
}

bool alive_at(double t, double t0, double t1, bool survived) { return t0 <= t && (t < t1 || (survived && t <= t1)); }

}  // namespace

NbpResult simulate_nbp(const MaterialModel& mm, const Population& initial, double horizon, const NbpCaps& caps,
                       Rng& rng, bool record_log) {
  if (horizon < initial.time) throw std::invalid_argument("simulate_nbp: horizon before initial time");
  NbpResult res;
  res.final.time = horizon;
  const Outcome o = run_nbp(
      mm, initial, horizon, caps, rng,
      [&](const ParticleState& p, double t0, double t1, bool survived) {
        if (survived) res.final.particles.push_back({p.r + p.v * (t1 - t0), p.v, p.birth_time});
      },
      [&](Event&& e) {
        if (record_log) res.log.events.push_back(std::move(e));
      });
  res.truncated = o.truncated;
  res.extinction_time = o.truncated ? -1.0 : o.extinction_time;
  res.events = o.events;
  std::stable_sort(res.log.events.begin(), res.log.events.end(),
                   [](const Event& a, const Event& b) { return a.time < b.time; });
  return res;
}

NbpTally tally_nbp(const MaterialModel& mm, const Population& initial, std::span<const double> times,
                   std::span<const PhaseFunction> gs, const NbpCaps& caps, Rng& rng) {
  NbpTally out;
  out.values.assign(times.size() * gs.size(), 0.0);
  out.counts.assign(times.size(), 0);
  const double horizon = times.empty() ? initial.time : *std::max_element(times.begin(), times.end());
  const Outcome o = run_nbp(
      mm, initial, horizon, caps, rng,
      [&](const ParticleState& p, double t0, double t1, bool survived) {
        for (std::size_t j = 0; j < times.size(); ++j) {
          if (!alive_at(times[j], t0, t1, survived)) continue;
          ++out.counts[j];
          const Vec3 r = p.r + p.v * (times[j] - t0);
          for (std::size_t k = 0; k < gs.size(); ++k) out.values[j * gs.size() + k] += gs[k](r, p.v);
        }
      },
      [](Event&&) {});
  out.truncated = o.truncated;
  out.extinction_time = o.extinction_time;
  return out;
}

BranchingMoments branching_moments(const MaterialModel& mm, std::span<const PhaseFunction> gs, const Vec3& r,
                                   const Vec3& v, std::span<const double> times, const TrialPlan& plan,
                                   const NbpCaps& caps) {
  const Population start = Population::single(r, v);
  auto rows = run_trials(plan, [&](Rng& rng, std::int64_t) {
    NbpTally t = tally_nbp(mm, start, times, gs, caps, rng);
    if (t.truncated) return std::vector<double>{};
    return std::move(t.values);
  });
  BranchingMoments out;
  for (const auto& row : rows) out.truncated += row.empty() ? 1 : 0;
  out.moments = summarize(rows, plan.first_trial);
  return out;
}

EstimateWithError estimate_psi_branching(const MaterialModel& mm, const Vec3& r, const Vec3& v, const PhaseFunction& g,
                                         double t, const TrialPlan& plan, const NbpCaps& caps) {
  const PhaseFunction gs[] = {g};
  const double ts[] = {t};
  const BranchingMoments m = branching_moments(mm, gs, r, v, ts, plan, caps);
  if (m.moments.count() == 0 && plan.trials > 0) throw EstimationError("estimate_psi_branching: every trial truncated");
  return m.moments.estimate(0, m.truncated);
}

std::vector<std::pair<double, double>> martingale_trace(const MaterialModel& mm, const SpectralTriple& triple,
                                                        const Vec3& r, const Vec3& v, std::span<const double> times,
                                                        Rng& rng, const NbpCaps& caps) {
  const double phi0 = triple.phi(r, v);
  if (!(phi0 > 0.0)) throw SpectralError("martingale_trace: phi is not positive at the start point");
  const PhaseFunction gs[] = {[&](const Vec3& x, const Vec3& u) { return triple.phi(x, u); }};
  const NbpTally t = tally_nbp(mm, Population::single(r, v), times, gs, caps, rng);
  if (t.truncated) throw EstimationError("martingale_trace: trajectory truncated");
  std::vector<std::pair<double, double>> out;
  for (std::size_t j = 0; j < times.size(); ++j) {
    out.emplace_back(times[j], std::exp(-triple.lambda_star() * times[j]) * t.values[j] / phi0);
  }
  return out;
}

BranchingMoments martingale_moments(const MaterialModel& mm, const SpectralTriple& triple, const Vec3& r,
                                    const Vec3& v, std::span<const double> times, const TrialPlan& plan,
                                    const NbpCaps& caps) {
  const double phi0 = triple.phi(r, v);
  if (!(phi0 > 0.0)) throw SpectralError("martingale: phi is not positive at the start point");
  const PhaseFunction gs[] = {[&](const Vec3& x, const Vec3& u) { return triple.phi(x, u); }};
  const Population start = Population::single(r, v);
  auto rows = run_trials(plan, [&](Rng& rng, std::int64_t) {
    NbpTally t = tally_nbp(mm, start, times, gs, caps, rng);
    if (t.truncated) return std::vector<double>{};
    for (std::size_t j = 0; j < times.size(); ++j) t.values[j] *= std::exp(-triple.lambda_star() * times[j]) / phi0;
    return std::move(t.values);
  });
  BranchingMoments out;
  for (const auto& row : rows) out.truncated += row.empty() ? 1 : 0;
  out.moments = summarize(rows, plan.first_trial);
  return out;
}

EstimateWithError extinction_probability(const MaterialModel& mm, const Vec3& r, const Vec3& v, double horizon,
                                         const TrialPlan& plan, const NbpCaps& caps) {
  const double hs[] = {horizon};
  const BranchingMoments m = survival_moments(mm, r, v, hs, plan, caps);
  if (m.moments.count() == 0 && plan.trials > 0) throw EstimationError("extinction_probability: every trial truncated");
  EstimateWithError e = m.moments.estimate(0, m.truncated);
  e.mean = 1.0 - e.mean;
  return e;
}

BranchingMoments survival_moments(const MaterialModel& mm, const Vec3& r, const Vec3& v,
                                  std::span<const double> horizons, const TrialPlan& plan, const NbpCaps& caps) {
  const Population start = Population::single(r, v);
  auto rows = run_trials(plan, [&](Rng& rng, std::int64_t) {
    const NbpTally t = tally_nbp(mm, start, horizons, {}, caps, rng);
    if (t.truncated) return std::vector<double>{};
    std::vector<double> alive(horizons.size());
    for (std::size_t j = 0; j < horizons.size(); ++j) alive[j] = t.counts[j] > 0 ? 1.0 : 0.0;
    return alive;
  });
  BranchingMoments out;
  for (const auto& row : rows) out.truncated += row.empty() ? 1 : 0;
  out.moments = summarize(rows, plan.first_trial);
  return out;
}

std::vector<NbpTrialRow> nbp_rows(const MaterialModel& mm, const PhaseFunction& g, const SpectralTriple* triple,
                                  const Population& initial, double horizon, const TrialPlan& plan,
                                  const NbpCaps& caps) {
  if (initial.empty()) throw DomainError("nbp_rows: empty initial population");
  double phi0 = 0.0;
  if (triple) {
    for (const auto& p : initial.particles) phi0 += triple->phi(p.r, p.v);
    if (!(phi0 > 0.0)) throw SpectralError("nbp_rows: phi is not positive at the start");
  }
  std::vector<PhaseFunction> gs{g};
  if (triple) gs.emplace_back([triple](const Vec3& x, const Vec3& u) { return triple->phi(x, u); });
  const double ts[] = {horizon};
  return run_trials(plan, [&](Rng& rng, std::int64_t index) {
    const NbpTally t = tally_nbp(mm, initial, ts, gs, caps, rng);
    NbpTrialRow row;
    row.trial_id = index;
    row.horizon = horizon;
    row.truncated = t.truncated;
    row.n_final = t.truncated ? 0 : t.counts[0];
    row.extinct = !t.truncated && t.counts[0] == 0;
    row.functional_value = t.truncated ? 0.0 : t.values[0];
    row.w_final = std::numeric_limits<double>::quiet_NaN();
    if (triple && !t.truncated) row.w_final = std::exp(-triple->lambda_star() * (horizon - initial.time)) * t.values[1] / phi0;
    return row;
  });
}

}  // namespace ntmc
