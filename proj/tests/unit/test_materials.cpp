#include <doctest.h>

#include "ntmc/errors.hpp"
#include "ntmc/materials.hpp"
#include "support.hpp"

using namespace ntmc;
using ntmc::test::region;

namespace {

MaterialModel single(double sigma_s, double sigma_f, double m) {
  return MaterialModel(Domain::ball({0, 0, 0}, 1.0), VelocitySpace(0.5, 1.0), {region(sigma_s, sigma_f, m)});
}

}  // namespace

TEST_CASE("alpha") {
  CHECK(alpha(single(1.0, 0.5, 1.2), {0, 0, 0}, {0.7, 0, 0}) == doctest::Approx(1.6));
  CHECK(alpha(single(0.8, 0.0, 1.2), {0, 0, 0}, {0.7, 0, 0}) == doctest::Approx(0.8));
  CHECK(alpha(single(0.0, 0.7, 0.0), {0, 0, 0}, {0.7, 0, 0}) == 0.0);
  CHECK_THROWS_AS(alpha(single(1.0, 0.5, 1.2), {2, 0, 0}, {0.7, 0, 0}), DomainError);
}

TEST_CASE("pi_density") {
  const MaterialModel mm = single(1.0, 0.5, 1.2);
  CHECK(pi_density(mm, {0, 0, 0}, {0.7, 0, 0}, {0, 0.9, 0}) == doctest::Approx(0.27284).epsilon(1e-4));
  CHECK(pi_density(mm, {0, 0, 0}, {0.7, 0, 0}, {0, 0.9, 0}) == doctest::Approx(1.0 / volume(mm.vspace())));
  CHECK_THROWS_AS(pi_density(single(0.0, 0.7, 0.0), {0, 0, 0}, {0.7, 0, 0}, {0, 0.9, 0}), ModelError);

  const MaterialModel scatter_only = single(1.3, 0.0, 0.0);
  const Vec3 r{0.1, 0.2, 0.0};
  const Vec3 v{0.7, 0, 0};
  const Vec3 w{0, 0, 0.6};
  CHECK(pi_density(scatter_only, r, v, w) == doctest::Approx(scatter_only.regions()[0].scatter_kernel.density(
                                              scatter_only.vspace(), w)));
}

TEST_CASE("pi integrates to one over V") {
  const MaterialModel mm = single(1.0, 0.5, 1.2);
  // Radial Gauss-Legendre (20 points) times a midpoint rule in (cos theta, azimuth) is exact for a constant.
  const double v0 = 0.5, v1 = 1.0;
  static const double x[] = {-0.9931285991850949, -0.9639719272779138, -0.9122344282513259, -0.8391169718222188,
                             -0.7463319064601508, -0.6360536807265150, -0.5108670019508271, -0.3737060887154195,
                             -0.2277858511416451, -0.0765265211334973};
  static const double w[] = {0.0176140071391521, 0.0406014298003869, 0.0626720483341091, 0.0832767415767048,
                             0.1019301198172404, 0.1181945319615184, 0.1316886384491766, 0.1420961093183820,
                             0.1491729864726037, 0.1527533871307258};
  double total = 0.0;
  for (int i = 0; i < 20; ++i) {
    const double xi = i < 10 ? x[i] : -x[19 - i];
    const double wi = i < 10 ? w[i] : w[19 - i];
    const double rho = 0.5 * (v0 + v1) + 0.5 * (v1 - v0) * xi;
    for (int a = 0; a < 16; ++a) {
      for (int b = 0; b < 16; ++b) {
        const double mu = -1.0 + (a + 0.5) / 8.0;
        const double az = (b + 0.5) / 16.0 * 2.0 * M_PI;
        const double s = std::sqrt(1.0 - mu * mu);
        const Vec3 vp{rho * s * std::cos(az), rho * s * std::sin(az), rho * mu};
        total += 0.5 * (v1 - v0) * wi * rho * rho * (2.0 / 16.0) * (2.0 * M_PI / 16.0) *
                 pi_density(mm, {0, 0, 0}, {0.7, 0, 0}, vp);
      }
    }
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("alpha times pi reconstructs the scatter and fission kernels") {
  std::vector<KernelSpec::Atom> atoms{{{0.6, 0, 0}, 0.25}, {{0, -0.9, 0}, 0.75}};
  MaterialRegion inner = region(0.5, 1.0, 1.6);
  inner.region = Domain::ball({0, 0, 0}, 0.5);
  inner.scatter_kernel = KernelSpec::finite(atoms);
  inner.fission_kernel = KernelSpec::finite({{{0.6, 0, 0}, 0.5}, {{0, -0.9, 0}, 0.5}});
  MaterialRegion outer = region(1.5, 0.2, 0.8);
  outer.scatter_kernel = KernelSpec::finite(atoms);
  outer.fission_kernel = KernelSpec::finite(atoms);
  const MaterialModel mm(Domain::box({-1, -1, -1}, {1, 1, 1}), VelocitySpace(0.5, 1.0), {inner, outer});

  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 r = sample_point_uniform(mm.domain(), rng);
    const Vec3 v = sample_velocity_uniform(mm.vspace(), rng);
    const Vec3 w = atoms[rng.below(2)].velocity;
    const MaterialRegion& reg = mm.region_at(r);
    const double expect = reg.sigma_s * reg.scatter_kernel.density(mm.vspace(), w) +
                          reg.sigma_f * reg.fission_mean * reg.fission_kernel.density(mm.vspace(), w);
    REQUIRE(alpha(mm, r, v) * pi_density(mm, r, v, w) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("beta and beta_bar") {
  CHECK(beta(single(1.0, 0.5, 1.2), {0, 0, 0}, {0.7, 0, 0}) == doctest::Approx(0.1));
  CHECK(beta(single(1.0, 0.5, 1.0), {0, 0, 0}, {0.7, 0, 0}) == 0.0);
  CHECK(beta(single(1.0, 0.0, 1.7), {0, 0, 0}, {0.7, 0, 0}) == 0.0);
  CHECK(beta_bar(single(1.0, 0.5, 1.2)) == doctest::Approx(0.1));

  MaterialRegion a = region(1.0, 0.5, 1.2);
  a.region = Domain::ball({0, 0, 0}, 0.5);
  const MaterialRegion b = region(1.0, 0.4, 0.5);  // beta = -0.2
  const MaterialModel two(Domain::ball({0, 0, 0}, 1.0), VelocitySpace(0.5, 1.0), {a, b});
  CHECK(beta_bar(two) == doctest::Approx(0.1));
  CHECK(beta_bar(single(1.0, 0.0, 0.0)) <= 0.0);
  CHECK(beta_bar(single(0.0, 2.0, 0.0)) <= 0.0);

  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const Vec3 r = sample_point_uniform(two.domain(), rng);
    REQUIRE(beta(two, r, {0.7, 0, 0}) >= -two.region_at(r).sigma_f);
  }
}

TEST_CASE("model validation") {
  MaterialRegion part = region(1.0, 0.5, 1.2);
  part.region = Domain::ball({0, 0, 0}, 0.5);
  CHECK_THROWS_WITH_AS(MaterialModel(Domain::ball({0, 0, 0}, 1.0), VelocitySpace(0.5, 1.0), {part}),
                       "regions must cover domain", ModelError);
  CHECK_THROWS_AS(single(-1.0, 0.5, 1.2), ModelError);
  CHECK_THROWS_AS(MaterialModel(Domain::ball({0, 0, 0}, 1.0), VelocitySpace(0.5, 1.0),
                                {[] {
                                  auto r = region(1.0, 0.5, 1.2);
                                  r.scatter_kernel = KernelSpec::finite({{{0.6, 0, 0}, 0.5}});
                                  return r;
                                }()}),
                  ModelError);
  const MaterialModel capture = single(0.0, 0.7, 0.0);
  CHECK_FALSE(capture.warnings().empty());
}

TEST_CASE("n_max") {
  CHECK(single(1.0, 0.5, 1.2).n_max() == 2);
  CHECK(single(1.0, 0.5, 0.4).n_max() == 2);
  CHECK(single(1.0, 0.5, 2.0).n_max() == 2);
  CHECK(single(1.0, 0.5, 2.4).n_max() == 3);
}

TEST_CASE("draw_offspring under the shared-velocity mechanism") {
  const MaterialModel mm = single(1.0, 0.5, 1.2);
  Rng rng(11);
  constexpr int kDraws = 1'000'000;
  double sum_n = 0.0, sum_n2 = 0.0, sum_g = 0.0, sum_g2 = 0.0;
  int twos = 0;
  for (int i = 0; i < kDraws; ++i) {
    const OffspringDraw d = draw_offspring(mm, {0, 0, 0}, {0.7, 0, 0}, rng);
    REQUIRE((d.count() == 0 || d.count() == 2));
    double g = 0.0;
    for (const auto& v : d.velocities) {
      REQUIRE(mm.vspace().contains(v));
      g += norm(v);
    }
    if (d.count() == 2) {
      ++twos;
      REQUIRE(d.velocities[0].x == d.velocities[1].x);
    }
    sum_n += d.count();
    sum_n2 += d.count() * d.count();
    sum_g += g;
    sum_g2 += g * g;
  }
  const double mean_n = sum_n / kDraws;
  CHECK(std::abs(mean_n - 1.2) < 3.0 * std::sqrt((sum_n2 / kDraws - mean_n * mean_n) / kDraws));
  CHECK(std::abs(static_cast<double>(twos) / kDraws - 0.6) < 0.002);

  // int |v'| pi_f dv' = m * E|V| with |V|^3 uniform on [1/8, 1]: E|V| = (3/4)(1 - 1/16)/(7/8) = 45/56.
  const double mean_g = sum_g / kDraws;
  const double se_g = std::sqrt((sum_g2 / kDraws - mean_g * mean_g) / kDraws);
  CHECK(std::abs(mean_g - 1.2 * 45.0 / 56.0) < 3.0 * se_g);

  CHECK_THROWS_AS(draw_offspring(single(1.0, 0.0, 0.0), {0, 0, 0}, {0.7, 0, 0}, rng), ModelError);
}

TEST_CASE("draw_offspring with an iid count law") {
  const MaterialModel mm(Domain::ball({0, 0, 0}, 1.0), VelocitySpace(0.5, 1.0), {region(1.0, 0.5, 1.5)},
                         IidOffspring{{0.25, 0.25, 0.25, 0.25}});
  CHECK(mm.n_max() == 3);
  Rng rng(13);
  std::vector<int> hist(4, 0);
  for (int i = 0; i < 100000; ++i) ++hist[static_cast<std::size_t>(draw_offspring(mm, {0, 0, 0}, {0.7, 0, 0}, rng).count())];
  for (int k = 0; k < 4; ++k) CHECK(std::abs(hist[static_cast<std::size_t>(k)] / 1e5 - 0.25) < 0.005);
  CHECK_THROWS_AS(MaterialModel(Domain::ball({0, 0, 0}, 1.0), VelocitySpace(0.5, 1.0), {region(1.0, 0.5, 1.2)},
                                IidOffspring{{0.25, 0.25, 0.25, 0.25}}),
                  ModelError);
}
