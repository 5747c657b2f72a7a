#include <doctest.h>

#include <sstream>

#include "ntmc/errors.hpp"
#include "ntmc/harness.hpp"
#include "support.hpp"

using namespace ntmc;
using namespace ntmc::test;

namespace {

const std::string kConfigDir = NTMC_CONFIG_DIR;

std::string minimal(const std::string& vspace, const std::string& regions) {
  return R"({"name": "t", "domain": {"shape": "ball", "center": [0, 0, 0], "radius": 1},
             "vspace": )" +
         vspace + R"(, "regions": )" + regions + R"(,
             "initial": [{"r": [0, 0, 0], "v": [0.75, 0, 0]}], "horizons": [1], "trials": 10, "master_seed": 3})";
}

const std::string kRegions = R"([{"sigma_s": 1, "sigma_f": 0.5, "fission_mean": 1.2}])";

std::vector<std::string> errors_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.errors();
  }
  return {};
}

bool mentions(const std::vector<std::string>& errors, const std::string& needle) {
  for (const auto& e : errors) {
    if (e.find(needle) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("shipped configs load") {
  for (const char* name : {"benchmark-a", "free-space", "criticality", "two-region-box"}) {
    CAPTURE(name);
    const ExperimentConfig cfg = load_config(kConfigDir + "/" + name + ".json");
    CHECK(cfg.model);
    CHECK_FALSE(cfg.horizons.empty());
  }
  const ExperimentConfig a = load_config(kConfigDir + "/benchmark-a.json");
  CHECK(a.name == "benchmark-A");
  CHECK(a.trials == 100000);
  CHECK(a.grid->str() == "16x16x16x32");
  CHECK(a.refine->cells == std::array<int, 3>{24, 24, 24});
  CHECK(a.start().v.x == 0.75);
  CHECK(beta_bar(*a.model) == doctest::Approx(0.1));
}

TEST_CASE("schema errors name the offending field") {
  CHECK(errors_of(minimal(R"({"v_min": 0.5, "v_max": 1.0})", kRegions)).empty());
  CHECK(mentions(errors_of(minimal(R"({"v_min": 1.5, "v_max": 1.0})", kRegions)), "vspace.v_min"));
  CHECK(mentions(errors_of(minimal(R"({"v_min": 0.5, "v_max": 1.0})",
                                   R"([{"region": {"shape": "ball", "center": [0, 0, 0], "radius": 0.5},
                                        "sigma_s": 1, "sigma_f": 0.5, "fission_mean": 1.2}])")),
                 "regions must cover domain"));
  CHECK(mentions(errors_of(minimal(R"({"v_min": 0.5, "v_max": 1.0, "colour": 2})", kRegions)), "vspace.colour"));
  CHECK(mentions(errors_of(minimal(R"({"v_min": 0.5, "v_max": 1.0})", R"([{"sigma_s": -1, "sigma_f": 0.5}])")),
                 "regions[0].sigma_s"));
  CHECK(mentions(errors_of("{ not json"), "syntax error"));
  CHECK_THROWS_AS(load_config(kConfigDir + "/missing.json"), ConfigError);
}

TEST_CASE("serialization is a fixpoint and the hash is stable") {
  const ExperimentConfig a = load_config(kConfigDir + "/benchmark-a.json");
  const std::string once = serialize_config(a);
  const ExperimentConfig b = parse_config(once);
  CHECK(serialize_config(b) == once);
  CHECK(config_hash(a) == config_hash(b));
  ExperimentConfig c = a;
  c.master_seed = 2;
  CHECK(config_hash(c) != config_hash(a));
}

TEST_CASE("with_fission_mean") {
  const ExperimentConfig a = load_config(kConfigDir + "/two-region-box.json");
  const ExperimentConfig b = with_fission_mean(a, 2.5);
  for (const auto& r : b.model->regions()) {
    if (r.sigma_f > 0.0) CHECK(r.fission_mean == 2.5);
  }
  CHECK(b.model->n_max() == 3);
  CHECK(a.model->n_max() == 2);
  CHECK_THROWS_AS(with_fission_mean(a, 0.0), ConfigError);
}

TEST_CASE("root interpolation") {
  const double x[] = {1.0, 2.0, 3.0};
  const double y[] = {-1.0, -0.5, 0.5};
  CHECK(interpolate_root(x, y) == doctest::Approx(2.5));
  const double flat[] = {-1.0, -1.0, -1.0};
  CHECK(std::isnan(interpolate_root(x, flat)));
}

TEST_CASE("criticality scan") {
  SUBCASE("free space at m = 1 has zero growth exactly") {
    ExperimentConfig cfg = load_config(kConfigDir + "/free-space.json");
    cfg.grid.reset();
    const double ms[] = {1.0};
    ScanOptions opt;
    opt.walk_trials = 2000;
    opt.nbp_trials = 50;
    opt.horizon = 1.0;
    opt.seed = 4;
    const CriticalityScan s = criticality_scan(cfg, ms, opt);
    REQUIRE(s.rows.size() == 1);
    CHECK(s.rows[0].lambda_mc.mean == 0.0);
    CHECK(std::isnan(s.rows[0].lambda_grid));
  }
  SUBCASE("ball: growth and survival increase with m") {
    ExperimentConfig cfg = load_config(kConfigDir + "/criticality.json");
    cfg.grid = GridSpec::parse("8x8x8x32", 0.01);
    const double ms[] = {2.8, 0.8, 1.8};
    ScanOptions opt;
    opt.walk_trials = 20000;
    opt.nbp_trials = 600;
    opt.horizon = 10.0;
    opt.seed = 5;
    const CriticalityScan s = criticality_scan(cfg, ms, opt);
    REQUIRE(s.rows.size() == 3);
    CHECK(s.rows[0].m == 0.8);
    for (std::size_t i = 1; i < 3; ++i) {
      CHECK(s.rows[i].lambda_grid > s.rows[i - 1].lambda_grid);
      CHECK(s.rows[i].lambda_mc.mean > s.rows[i - 1].lambda_mc.mean);
    }
    CHECK(s.rows[0].survival.mean < 0.01);
    CHECK(s.rows[2].survival.mean > 0.2);
    CHECK(s.m_star_mc > 1.8);
    CHECK(s.m_star_mc < 2.8);
    CHECK(s.m_star_grid > 1.8);
    CHECK(s.m_star_grid < 2.8);

    std::ostringstream os;
    write_csv(os, s);
    CHECK(os.str().find("# m_star_mc") != std::string::npos);
  }
}

TEST_CASE("format_double round-trips") {
  for (double x : {0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.0}) CHECK(std::stod(format_double(x)) == x);
  CHECK(format_double(std::nan("")) == "nan");
}

TEST_CASE("CSV output does not depend on the thread count") {
  const ExperimentConfig cfg = load_config(kConfigDir + "/benchmark-a.json");
  const PhaseFunction one = [](const Vec3&, const Vec3&) { return 1.0; };
  auto csv = [&](int threads) {
    std::ostringstream os;
    const auto nbp = nbp_rows(*cfg.model, one, nullptr, cfg.initial, 1.0, {cfg.master_seed, 0, 300, threads});
    write_csv(os, nbp);
    const auto walk = many_to_one_rows(*cfg.model, one, cfg.start().r, cfg.start().v, 1.0,
                                       {cfg.master_seed, 0, 300, threads});
    write_csv(os, walk);
    return os.str();
  };
  const std::string a = csv(1);
  CHECK(a == csv(8));
  CHECK(a.rfind("trial_id,", 0) == 0);
}
