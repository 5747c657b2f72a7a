#include <doctest.h>

#include "ntmc/branching.hpp"
#include "ntmc/errors.hpp"
#include "ntmc/spectral.hpp"
#include "support.hpp"

using namespace ntmc;
using namespace ntmc::test;

namespace {

const PhaseFunction kOne = [](const Vec3&, const Vec3&) { return 1.0; };
const PhaseFunction kHalf = [](const Vec3& r, const Vec3&) { return r.x > 0.0 ? 1.0 : 0.0; };

}  // namespace

TEST_CASE("advance_particle") {
  SUBCASE("no clocks: boundary kill at the exit time") {
    const auto mm = ball_model(1.0, 0.0, 0.0, 0.0);
    Rng rng(1);
    const Advance a = advance_particle(*mm, {{0.2, 0, 0}, {0.8, 0, 0}, 0.0}, 0.0, 100.0, rng);
    CHECK(a.kind == Advance::Kind::boundary_kill);
    CHECK(a.time == doctest::Approx(1.0));
  }
  SUBCASE("first event time is exponential in a huge domain") {
    const auto mm = free_space();
    Rng rng(2);
    std::vector<double> times;
    times.reserve(1'000'000);
    for (int i = 0; i < 1'000'000; ++i) {
      const Advance a = advance_particle(*mm, {kOrigin, kStartV, 0.0}, 0.0, 1e9, rng);
      REQUIRE(a.kind != Advance::Kind::boundary_kill);
      times.push_back(a.time);
    }
    CHECK(ks_pvalue(times, [](double x) { return 1.0 - std::exp(-1.5 * x); }) > 0.001);
  }
  SUBCASE("short horizon: drift to r + v h") {
    const auto mm = ball_model(1.0, 1e-12, 0.0, 0.0);
    Rng rng(3);
    const Advance a = advance_particle(*mm, {kOrigin, kStartV, 0.0}, 0.0, 0.1, rng);
    CHECK(a.kind == Advance::Kind::survived);
    CHECK(a.time == 0.1);
    CHECK(a.r.x == doctest::Approx(0.075));
  }
}

TEST_CASE("simulate_nbp edge cases") {
  const auto mm = benchmark_a();
  Rng rng(4);
  SUBCASE("empty start stays empty") {
    const NbpResult r = simulate_nbp(*mm, Population{}, 5.0, {}, rng);
    CHECK(r.final.empty());
    CHECK(r.extinction_time == 0.0);
  }
  SUBCASE("pure transport: one boundary kill per particle") {
    const auto pure = ball_model(1.0, 0.0, 0.0, 0.0);
    Population p;
    p.particles = {{kOrigin, kStartV, 0.0}, {{0.3, 0.1, 0}, {0, 0.6, 0}, 0.0}, {{0, 0, -0.5}, {0, 0, 0.9}, 0.0}};
    const NbpResult r = simulate_nbp(*pure, p, 10.0, {}, rng, true);
    REQUIRE(r.log.events.size() == 3);
    for (const auto& e : r.log.events) CHECK(e.kind == EventKind::boundary_kill);
    CHECK(r.final.empty());
  }
  SUBCASE("caps flag truncation") {
    const auto hot = ball_model(10.0, 0.1, 5.0, 2.0);
    const NbpResult r = simulate_nbp(*hot, Population::single(kOrigin, kStartV), 20.0, {1000, 100'000'000}, rng);
    CHECK(r.truncated);
  }
}

TEST_CASE("event logs are ordered, consistent and inside the domain") {
  const auto mm = benchmark_a();
  for (std::int64_t trial = 0; trial < 300; ++trial) {
    Rng rng = Rng::for_trial(5, static_cast<std::uint64_t>(trial));
    const NbpResult r = simulate_nbp(*mm, Population::single(kOrigin, kStartV), 3.0, {}, rng, true);
    double prev = 0.0;
    for (const auto& e : r.log.events) {
      REQUIRE(e.time >= prev);
      prev = e.time;
      if (e.kind == EventKind::fission) {
        REQUIRE((e.offspring.empty() || static_cast<int>(e.offspring.size()) == mm->n_max()));
      }
      if (e.kind != EventKind::boundary_kill) REQUIRE(contains(mm->domain(), e.parent.r));
      for (const auto& k : e.offspring) REQUIRE(contains(mm->domain(), k.r));
    }
    for (const auto& p : r.final.particles) REQUIRE(contains(mm->domain(), p.r));
  }
}

TEST_CASE("event logs do not depend on the thread count") {
  const auto mm = benchmark_a();
  auto digest = [&](Rng& rng, std::int64_t) {
    const NbpResult r = simulate_nbp(*mm, Population::single(kOrigin, kStartV), 2.0, {}, rng, true);
    std::vector<double> out;
    for (const auto& e : r.log.events) {
      out.push_back(e.time);
      out.push_back(static_cast<double>(e.kind));
      out.push_back(e.parent.r.x);
      for (const auto& k : e.offspring) out.push_back(k.v.y);
    }
    return out;
  };
  CHECK(run_trials(TrialPlan{6, 0, 500, 1}, digest) == run_trials(TrialPlan{6, 0, 500, 8}, digest));
}

TEST_CASE("estimate_psi_branching") {
  SUBCASE("free-space closed form") {
    const EstimateWithError e = estimate_psi_branching(*free_space(), kOrigin, kStartV, kOne, 1.0, {7, 0, 100000, 1});
    CHECK(z_score(e.mean, e.std_error, std::exp(0.1), 0.0) < 3.0);
  }
  SUBCASE("zero functional") {
    const EstimateWithError e = estimate_psi_branching(
        *benchmark_a(), kOrigin, kStartV, [](const Vec3&, const Vec3&) { return 0.0; }, 1.0, {7, 0, 1000, 1});
    CHECK(e.mean == 0.0);
    CHECK(e.std_error == 0.0);
  }
  SUBCASE("t = 0 returns g exactly") {
    const PhaseFunction g = [](const Vec3& r, const Vec3& v) { return 2.0 + r.y + v.x; };
    const EstimateWithError e = estimate_psi_branching(*benchmark_a(), {0, 0.3, 0}, kStartV, g, 0.0, {7, 0, 100, 1});
    CHECK(e.mean == doctest::Approx(3.05));
    CHECK(e.std_error == 0.0);
  }
  SUBCASE("every trial truncated") {
    const auto hot = ball_model(10.0, 0.1, 5.0, 2.0);
    CHECK_THROWS_AS(estimate_psi_branching(*hot, kOrigin, kStartV, kOne, 20.0, {7, 0, 3, 1}, {100, 1'000'000}),
                    EstimationError);
  }
}

TEST_CASE("branching and many-to-one agree on benchmark-A") {
  const auto mm = benchmark_a();
  const PhaseFunction gs[] = {kOne, kHalf};
  const double ts[] = {0.5, 1.0, 2.0};
  const BranchingMoments b = branching_moments(*mm, gs, kOrigin, kStartV, ts, {8, 0, 50000, 1});
  const Moments w = many_to_one_moments(*mm, gs, kOrigin, kStartV, ts, {9, 0, 50000, 1});
  for (std::size_t i = 0; i < 6; ++i) {
    const auto x = b.moments.estimate(i);
    const auto y = w.estimate(i);
    CHECK(z_score(x.mean, x.std_error, y.mean, y.std_error) < 3.0);
  }
}

TEST_CASE("semigroup property with a grid inner semigroup") {
  // psi_{t+s}[1] against E[sum over X_t of psi_s[1]], inner values from M_dt^k 1 on two grids.
  const auto mm = benchmark_a();
  const double t = 0.75, s = 0.25;
  const EstimateWithError direct = estimate_psi_branching(*mm, kOrigin, kStartV, kOne, t + s, {10, 0, 40000, 1});

  auto nested = [&](const char* grid_text) {
    const PhaseGrid grid(*mm, GridSpec::parse(grid_text, 0.01));
    const StepOperator op(*mm, grid);
    std::vector<double> f(grid.unknowns(), 1.0), g(grid.unknowns());
    for (int k = 0; k < 25; ++k) {
      op.apply(f, g);
      f.swap(g);
    }
    const auto& nodes = grid.velocities().nodes;
    const PhaseFunction inner = [&](const Vec3& r, const Vec3& v) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < nodes.size(); ++j) {
        if (norm(nodes[j] - v) < norm(nodes[best] - v)) best = j;
      }
      return grid.interpolate_cell_field(std::span<const double>(f).subspan(best * grid.cells(), grid.cells()), r);
    };
    return estimate_psi_branching(*mm, kOrigin, kStartV, inner, t, {11, 0, 40000, 1});
  };
  const EstimateWithError coarse = nested("8x8x8x32");
  const EstimateWithError fine = nested("16x16x16x32");
  const double d_coarse = coarse.mean - direct.mean;
  const double d_fine = fine.mean - direct.mean;
  MESSAGE("direct " << direct.mean << " +- " << direct.std_error << ", nested 8^3 " << coarse.mean << ", 16^3 "
                    << fine.mean << " +- " << fine.std_error);
  CHECK(std::abs(d_fine) < std::abs(d_coarse));
  const double budget = std::abs(d_coarse - d_fine);
  CHECK(std::abs(d_fine) <= 3.0 * std::hypot(direct.std_error, fine.std_error) + budget);
}

TEST_CASE("extinction") {
  SUBCASE("no fission dies out") {
    const auto mm = ball_model(1.0, 1.0, 0.0, 0.0);
    const EstimateWithError e = extinction_probability(*mm, kOrigin, kStartV, 50.0, {12, 0, 2000, 1});
    CHECK(e.mean == 1.0);
  }
  SUBCASE("survival is nonincreasing in the horizon") {
    const double hs[] = {1.0, 2.0, 4.0};
    const BranchingMoments m = survival_moments(*benchmark_a(), kOrigin, kStartV, hs, {13, 0, 5000, 1});
    CHECK(m.moments.mean(0) >= m.moments.mean(1));
    CHECK(m.moments.mean(1) >= m.moments.mean(2));
    CHECK(m.moments.mean(2) > 0.0);
  }
}

TEST_CASE("nbp rows") {
  const auto mm = benchmark_a();
  const auto rows = nbp_rows(*mm, kOne, nullptr, Population::single(kOrigin, kStartV), 1.0, {14, 0, 200, 3});
  REQUIRE(rows.size() == 200);
  for (const auto& r : rows) {
    CHECK(std::isnan(r.w_final));
    CHECK(r.extinct == (r.n_final == 0));
    CHECK(r.functional_value == static_cast<double>(r.n_final));
  }
}
