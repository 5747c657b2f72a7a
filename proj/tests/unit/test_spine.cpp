#include <doctest.h>

#include <numeric>

#include "ntmc/errors.hpp"
#include "ntmc/spine.hpp"
#include "support.hpp"

using namespace ntmc;
using namespace ntmc::test;

namespace {

SpectralTriple refined(const std::shared_ptr<const MaterialModel>& mm, int cells) {
  RefineOptions ro;
  ro.cells = {cells, cells, cells};
  return refine_characteristics(compute_spectral_triple(mm, GridSpec::parse("8x8x8x32", 0.01)), ro);
}

const SpectralTriple& triple_a() {
  static const SpectralTriple t = refined(benchmark_a(), 12);
  return t;
}

const SpectralTriple& triple_a_fine() {
  static const SpectralTriple t = refined(benchmark_a(), 20);
  return t;
}

const PopulationFunctional kOne = [](const Population&) { return 1.0; };

// Checks the fine discrepancy against its SE plus the coarse-to-fine change.
void check_with_budget(const IdentityCheck& coarse, const IdentityCheck& fine) {
  const double d_coarse = coarse.lhs.mean - coarse.rhs.mean;
  const double d_fine = fine.lhs.mean - fine.rhs.mean;
  MESSAGE("coarse " << d_coarse << ", fine " << d_fine << " +- " << std::hypot(fine.lhs.std_error, fine.rhs.std_error));
  CHECK(std::abs(d_fine) <= 3.0 * std::hypot(fine.lhs.std_error, fine.rhs.std_error) + std::abs(d_coarse - d_fine));
}

}  // namespace

TEST_CASE("constant triple gives the ordinary jump rates") {
  const auto mm = benchmark_a();
  const auto grid = std::make_shared<const PhaseGrid>(*mm, GridSpec::parse("4x4x4x8", 0.01));
  const SpectralTriple t = SpectralTriple::constant(mm, grid, 0.1);
  const auto [s, f] = spine_rates(t, {0.2, -0.1, 0.3}, kStartV);
  CHECK(s == doctest::Approx(1.0));
  CHECK(f == doctest::Approx(0.6));
}

TEST_CASE("spine rates under a refined triple are positive and finite") {
  const SpectralTriple& t = triple_a();
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    const Vec3 r = sample_point_uniform(t.model().domain(), rng);
    const Vec3 v = sample_velocity_uniform(t.model().vspace(), rng);
    const auto [s, f] = spine_rates(t, r, v);
    REQUIRE(s > 0.0);
    REQUIRE(f > 0.0);
    REQUIRE(std::isfinite(s + f));
    // Source split follows sigma_s : sigma_f m in a single region.
    REQUIRE(f / s == doctest::Approx(0.6).epsilon(1e-9));
  }
}

TEST_CASE("spine flights follow the exp(-(sigma + lambda) s) S / phi law") {
  const SpectralTriple& t = triple_a();
  const MaterialModel& mm = t.model();
  const Vec3 r0{0.3, -0.2, 0.1};
  const Vec3 v0{-0.2, 0.6, 0.3};
  const double kappa = exit_time(mm.domain(), r0, v0);
  const double rate = mm.regions()[0].sigma() + t.lambda_star();
  // Cumulative law by the trapezoid rule on a fine mesh.
  const int n = 4000;
  std::vector<double> cdf(n + 1, 0.0);
  auto dens = [&](double s) { return std::exp(-rate * s) * t.source_at(r0 + v0 * s); };
  for (int i = 1; i <= n; ++i) {
    const double a = kappa * (i - 1) / n, b = kappa * i / n;
    cdf[i] = cdf[i - 1] + 0.5 * (b - a) * (dens(a) + dens(b));
  }
  CHECK(cdf[n] == doctest::Approx(t.phi(r0, v0)).epsilon(2e-3));
  for (auto& c : cdf) c /= cdf[n];
  auto cdf_at = [&](double s) {
    const double x = std::clamp(s / kappa * n, 0.0, static_cast<double>(n));
    const int i = std::min(static_cast<int>(x), n - 1);
    return cdf[i] + (x - i) * (cdf[i + 1] - cdf[i]);
  };

  std::vector<double> flights;
  Rng rng(2);
  for (int i = 0; i < 200000; ++i) {
    SpineState st;
    st.spine.r = r0;
    st.spine.v = v0;
    const SpineStep step = spine_step(mm, t, st, 1e9, rng);
    REQUIRE(step.kind != SpineStep::Kind::horizon);
    REQUIRE(step.t1 < kappa);
    flights.push_back(step.t1);
  }
  CHECK(ks_pvalue(flights, cdf_at) > 0.001);
}

TEST_CASE("spine fission under shared offspring sheds n_max - 1 immigrants") {
  const SpectralTriple& t = triple_a();
  const MaterialModel& mm = t.model();
  Rng rng(3);
  int fissions = 0;
  SpineState st;
  st.spine.r = kOrigin;
  st.spine.v = kStartV;
  while (fissions < 200) {
    const std::size_t before = st.immigrants.size();
    const SpineStep step = spine_step(mm, t, st, 1e9, rng);
    REQUIRE(contains(mm.domain(), step.r0 + step.v * (step.t1 - step.t0)));
    REQUIRE(contains(mm.domain(), st.spine.r));
    if (step.kind == SpineStep::Kind::fission) {
      ++fissions;
      REQUIRE(st.immigrants.size() - before == static_cast<std::size_t>(mm.n_max() - 1));
      // Shared-velocity offspring: the immigrant moves with the spine.
      REQUIRE(st.immigrants.back().v.x == st.spine.v.x);
    } else {
      REQUIRE(st.immigrants.size() == before);
    }
  }
  CHECK(st.spine_fission_times.size() == 200);
  CHECK(std::is_sorted(st.spine_fission_times.begin(), st.spine_fission_times.end()));
}

TEST_CASE("spine fission fraction matches sigma_f m / alpha") {
  const SpectralTriple& t = triple_a();
  Rng rng(4);
  SpineState st;
  st.spine.r = kOrigin;
  st.spine.v = kStartV;
  int fission = 0, total = 0;
  while (total < 100000) {
    const SpineStep step = spine_step(t.model(), t, st, 1e9, rng);
    fission += step.kind == SpineStep::Kind::fission;
    ++total;
  }
  const double p = 0.6 / 1.6;
  CHECK(std::abs(fission / 1e5 - p) < 4.0 * std::sqrt(p * (1 - p) / 1e5));
}

TEST_CASE("spine run keeps a living spine") {
  const SpectralTriple& t = triple_a();
  for (std::uint64_t i = 0; i < 200; ++i) {
    Rng rng = Rng::for_trial(5, i);
    const SpineRun run = spine_run(t.model(), t, kOrigin, kStartV, 2.0, rng);
    REQUIRE(run.population.count() >= 1);
    REQUIRE(run.population.particles.front().r.x == run.state.spine.r.x);
    for (const auto& p : run.population.particles) REQUIRE(contains(t.model().domain(), p.r));
  }
}

TEST_CASE("occupation masses form a distribution") {
  const SpectralTriple& t = triple_a();
  Rng rng(6);
  const Occupation occ = spine_marginal_occupation(t.model(), t, kOrigin, kStartV, 5.0, 200.0, rng);
  CHECK(std::accumulate(occ.mass.begin(), occ.mass.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  for (double m : occ.mass) CHECK(m >= 0.0);
  const Occupation ref = stationary_reference(t);
  CHECK(std::accumulate(ref.mass.begin(), ref.mass.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(total_variation(ref, ref) == 0.0);
  CHECK(total_variation(occ, ref) <= 1.0);
  CHECK(occ.bins.index({0.9, 0.9, 0.9}, {1, 1, 1}) < occ.bins.size());
}

TEST_CASE("measure change identities") {
  const SpectralTriple& t = triple_a();
  const MaterialModel& mm = t.model();
  SUBCASE("extinction indicator vanishes under the spine measure") {
    const IdentityCheck c = measure_change_check(
        mm, t, [](const Population& p) { return p.count() == 0 ? 1.0 : 0.0; }, kOrigin, kStartV, 1.0, {7, 0, 5000, 1});
    CHECK(c.lhs.mean == 0.0);
    CHECK(c.rhs.mean == 0.0);
  }
  SUBCASE("F = 1 is the martingale mean") {
    const IdentityCheck c = measure_change_check(mm, t, kOne, kOrigin, kStartV, 1.0, {8, 0, 40000, 1});
    const IdentityCheck f = measure_change_check(mm, triple_a_fine(), kOne, kOrigin, kStartV, 1.0, {8, 0, 40000, 1});
    CHECK(c.rhs.mean == 1.0);
    check_with_budget(c, f);
  }
}

TEST_CASE("spine walk change of measure") {
  const PhaseFunction one = [](const Vec3&, const Vec3&) { return 1.0; };
  SUBCASE("h = 1") {
    const IdentityCheck c = spine_com_weight_check(triple_a().model(), triple_a(), kOrigin, kStartV, 1.0, one,
                                                   {9, 0, 40000, 1});
    const IdentityCheck f = spine_com_weight_check(triple_a_fine().model(), triple_a_fine(), kOrigin, kStartV, 1.0,
                                                   one, {9, 0, 40000, 1});
    CHECK(c.rhs.mean == 1.0);
    check_with_budget(c, f);
  }
  SUBCASE("h = speed: discrepancy shrinks under refinement") {
    const PhaseFunction speed = [](const Vec3&, const Vec3& v) { return norm(v); };
    const IdentityCheck coarse =
        spine_com_weight_check(triple_a().model(), triple_a(), kOrigin, kStartV, 1.0, speed, {10, 0, 40000, 1});
    const IdentityCheck fine = spine_com_weight_check(triple_a_fine().model(), triple_a_fine(), kOrigin, kStartV,
                                                      1.0, speed, {10, 0, 40000, 1});
    check_with_budget(coarse, fine);
  }
}

TEST_CASE("martingale behaviour on either side of criticality") {
  const double times[] = {1.0, 2.0, 4.0};
  SUBCASE("supercritical: second moment increments decay") {
    const auto hot = ball_model(1.0, 1.0, 0.5, 2.8);
    const SpectralTriple t = refined(hot, 12);
    REQUIRE(t.lambda_star() > 0.0);
    const double late[] = {2.0, 4.0, 6.0, 8.0};
    const BranchingMoments m = martingale_moments(*hot, t, kOrigin, kStartV, late, {11, 0, 20000, 1});
    double second[4];
    for (std::size_t i = 0; i < 4; ++i) second[i] = m.moments.covariance(i, i) + m.moments.mean(i) * m.moments.mean(i);
    MESSAGE("E[W^2]: " << second[0] << " " << second[1] << " " << second[2] << " " << second[3]);
    CHECK(second[3] - second[2] < second[1] - second[0]);
  }
  SUBCASE("subcritical: W_t -> 0 while its mean stays one") {
    const SpectralTriple& t = triple_a();
    REQUIRE(t.lambda_star() < 0.0);
    const BranchingMoments m = martingale_moments(t.model(), t, kOrigin, kStartV, times, {12, 0, 20000, 1});
    CHECK(z_score(m.moments.mean(0), m.moments.estimate(0).std_error, 1.0, 0.0) < 4.0);
    const BranchingMoments s = survival_moments(t.model(), kOrigin, kStartV, times, {12, 0, 20000, 1});
    CHECK(s.moments.mean(2) < s.moments.mean(0));
    CHECK(s.moments.mean(2) < 0.5);
  }
}

TEST_CASE("spine rows") {
  const SpectralTriple& t = triple_a();
  const auto rows = spine_rows(t.model(), t, [](const Population& p) { return static_cast<double>(p.count()); },
                               kOrigin, kStartV, 1.0, {13, 0, 100, 4});
  REQUIRE(rows.size() == 100);
  for (const auto& r : rows) {
    CHECK(r.f_value == static_cast<double>(r.immigrant_count + 1));
    CHECK(contains(t.model().domain(), r.spine_r));
  }
}
