#include "ntmc/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ntmc/errors.hpp"

namespace ntmc {

using json = nlohmann::ordered_json;

namespace {

class Reader {
 public:
  std::vector<std::string> errors;

  void fail(const std::string& path, const std::string& what) { errors.push_back(path + ": " + what); }

  void known_keys(const json& j, const std::string& path, std::initializer_list<const char*> keys) {
    if (!j.is_object()) return;
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, _] : j.items()) {
      if (!allowed.count(k)) fail(path.empty() ? k : path + "." + k, "unknown field");
    }
  }

  const json* field(const json& j, const std::string& path, const char* key, bool required = true) {
    const std::string p = path.empty() ? key : path + "." + key;
    if (!j.is_object() || !j.contains(key)) {
      if (required) fail(p, "missing");
      return nullptr;
    }
    return &j.at(key);
  }

  std::optional<double> number(const json& j, const std::string& path) {
    if (!j.is_number()) {
      fail(path, "expected a number");
      return std::nullopt;
    }
    const double x = j.get<double>();
    if (!std::isfinite(x)) {
      fail(path, "must be finite");
      return std::nullopt;
    }
    return x;
  }

  std::optional<std::int64_t> integer(const json& j, const std::string& path) {
    if (!j.is_number_integer()) {
      fail(path, "expected an integer");
      return std::nullopt;
    }
    return j.get<std::int64_t>();
  }

  std::optional<Vec3> vec3(const json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 3) {
      fail(path, "expected an array of 3 numbers");
      return std::nullopt;
    }
    Vec3 out;
    bool ok = true;
    for (int a = 0; a < 3; ++a) {
      const auto x = number(j[static_cast<std::size_t>(a)], path + "[" + std::to_string(a) + "]");
      if (x) out[a] = *x;
      ok = ok && x.has_value();
    }
    return ok ? std::optional<Vec3>(out) : std::nullopt;
  }

  std::optional<Domain> domain(const json& j, const std::string& path) {
    if (!j.is_object()) {
      fail(path, "expected an object");
      return std::nullopt;
    }
    const json* shape = field(j, path, "shape");
    if (!shape) return std::nullopt;
    if (*shape == "ball") {
      known_keys(j, path, {"shape", "center", "radius"});
      const json* c = field(j, path, "center");
      const json* r = field(j, path, "radius");
      if (!c || !r) return std::nullopt;
      const auto center = vec3(*c, path + ".center");
      const auto radius = number(*r, path + ".radius");
      if (!center || !radius) return std::nullopt;
      if (!(*radius > 0.0)) {
        fail(path + ".radius", "must be > 0");
        return std::nullopt;
      }
      return Domain::ball(*center, *radius);
    }
    if (*shape == "box") {
      known_keys(j, path, {"shape", "lo", "hi"});
      const json* lo = field(j, path, "lo");
      const json* hi = field(j, path, "hi");
      if (!lo || !hi) return std::nullopt;
      const auto l = vec3(*lo, path + ".lo");
      const auto h = vec3(*hi, path + ".hi");
      if (!l || !h) return std::nullopt;
      for (int a = 0; a < 3; ++a) {
        if (!((*l)[a] < (*h)[a])) {
          fail(path + ".lo", "must be below hi on every axis");
          return std::nullopt;
        }
      }
      return Domain::box(*l, *h);
    }
    fail(path + ".shape", "must be \"ball\" or \"box\"");
    return std::nullopt;
  }

  std::optional<KernelSpec> kernel(const json& j, const std::string& path, const VelocitySpace* vs) {
    known_keys(j, path, {"kind", "atoms"});
    const json* kind = field(j, path, "kind");
    if (!kind) return std::nullopt;
    if (*kind == "isotropic_uniform") return KernelSpec::isotropic();
    if (*kind != "finite_atoms") {
      fail(path + ".kind", "must be \"isotropic_uniform\" or \"finite_atoms\"");
      return std::nullopt;
    }
    const json* atoms = field(j, path, "atoms");
    if (!atoms) return std::nullopt;
    if (!atoms->is_array() || atoms->empty()) {
      fail(path + ".atoms", "expected a non-empty array");
      return std::nullopt;
    }
    std::vector<KernelSpec::Atom> out;
    bool ok = true;
    for (std::size_t i = 0; i < atoms->size(); ++i) {
      const std::string p = path + ".atoms[" + std::to_string(i) + "]";
      const json& a = (*atoms)[i];
      known_keys(a, p, {"velocity", "weight"});
      const json* v = field(a, p, "velocity");
      const json* w = field(a, p, "weight");
      const auto vel = v ? vec3(*v, p + ".velocity") : std::nullopt;
      const auto wt = w ? number(*w, p + ".weight") : std::nullopt;
      if (!vel || !wt) {
        ok = false;
        continue;
      }
      if (*wt < 0.0) fail(p + ".weight", "must be >= 0");
      if (vs && !vs->contains(*vel)) fail(p + ".velocity", "outside the velocity annulus");
      out.push_back({*vel, *wt});
    }
    if (!ok) return std::nullopt;
    return KernelSpec::finite(std::move(out));
  }

  std::optional<std::array<int, 3>> cells(const json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 3) {
      fail(path, "expected an array of 3 integers");
      return std::nullopt;
    }
    std::array<int, 3> out{};
    for (std::size_t a = 0; a < 3; ++a) {
      const auto n = integer(j[a], path + "[" + std::to_string(a) + "]");
      if (!n) return std::nullopt;
      if (*n < 1) {
        fail(path + "[" + std::to_string(a) + "]", "must be >= 1");
        return std::nullopt;
      }
      out[a] = static_cast<int>(*n);
    }
    return out;
  }
};

json vec_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

json domain_json(const Domain& d) {
  if (const auto* b = std::get_if<Ball>(&d.shape())) {
    return json{{"shape", "ball"}, {"center", vec_json(b->center)}, {"radius", b->radius}};
  }
  const auto& x = std::get<AxisBox>(d.shape());
  return json{{"shape", "box"}, {"lo", vec_json(x.lo)}, {"hi", vec_json(x.hi)}};
}

json kernel_json(const KernelSpec& k) {
  if (k.is_isotropic()) return json{{"kind", "isotropic_uniform"}};
  json atoms = json::array();
  for (const auto& a : k.atoms) atoms.push_back(json{{"velocity", vec_json(a.velocity)}, {"weight", a.weight}});
  return json{{"kind", "finite_atoms"}, {"atoms", atoms}};
}

json cells_json(const std::array<int, 3>& c) { return json::array({c[0], c[1], c[2]}); }

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("syntax error: ") + e.what()});
  }
  Reader rd;
  if (!root.is_object()) throw ConfigError({"config: expected a JSON object"});
  rd.known_keys(root, "",
                {"name", "domain", "vspace", "regions", "offspring", "initial", "horizons", "trials", "master_seed",
                 "grid", "scan", "outputs"});

  ExperimentConfig cfg;
  if (const json* n = rd.field(root, "", "name", false)) {
    if (n->is_string()) {
      cfg.name = n->get<std::string>();
    } else {
      rd.fail("name", "expected a string");
    }
  }

  std::optional<Domain> domain;
  if (const json* d = rd.field(root, "", "domain")) domain = rd.domain(*d, "domain");

  std::optional<VelocitySpace> vspace;
  if (const json* v = rd.field(root, "", "vspace")) {
    rd.known_keys(*v, "vspace", {"v_min", "v_max"});
    const json* lo = rd.field(*v, "vspace", "v_min");
    const json* hi = rd.field(*v, "vspace", "v_max");
    const auto a = lo ? rd.number(*lo, "vspace.v_min") : std::nullopt;
    const auto b = hi ? rd.number(*hi, "vspace.v_max") : std::nullopt;
    if (a && b) {
      if (!(*a > 0.0)) {
        rd.fail("vspace.v_min", "must be > 0");
      } else if (!(*a < *b)) {
        rd.fail("vspace.v_min", "must be less than vspace.v_max");
      } else {
        vspace.emplace(*a, *b);
      }
    }
  }
  const VelocitySpace* vs = vspace ? &*vspace : nullptr;

  std::vector<MaterialRegion> regions;
  if (const json* rs = rd.field(root, "", "regions")) {
    if (!rs->is_array() || rs->empty()) {
      rd.fail("regions", "expected a non-empty array");
    } else {
      for (std::size_t i = 0; i < rs->size(); ++i) {
        const std::string p = "regions[" + std::to_string(i) + "]";
        const json& r = (*rs)[i];
        if (!r.is_object()) {
          rd.fail(p, "expected an object");
          continue;
        }
        rd.known_keys(r, p, {"region", "sigma_s", "sigma_f", "fission_mean", "scatter_kernel", "fission_kernel"});
        MaterialRegion reg;
        if (const json* sub = rd.field(r, p, "region", false)) {
          if (!(sub->is_string() && *sub == "rest")) reg.region = rd.domain(*sub, p + ".region");
        }
        for (auto [key, dst] : {std::pair{"sigma_s", &reg.sigma_s}, std::pair{"sigma_f", &reg.sigma_f},
                                std::pair{"fission_mean", &reg.fission_mean}}) {
          const json* x = rd.field(r, p, key, std::string(key) != "fission_mean");
          if (!x) continue;
          const auto val = rd.number(*x, p + "." + key);
          if (!val) continue;
          if (*val < 0.0) rd.fail(p + "." + key, "must be >= 0");
          *dst = *val;
        }
        if (const json* k = rd.field(r, p, "scatter_kernel", false)) {
          if (auto ks = rd.kernel(*k, p + ".scatter_kernel", vs)) reg.scatter_kernel = *ks;
        }
        if (const json* k = rd.field(r, p, "fission_kernel", false)) {
          if (auto ks = rd.kernel(*k, p + ".fission_kernel", vs)) reg.fission_kernel = *ks;
        }
        regions.push_back(std::move(reg));
      }
    }
  }

  OffspringMode offspring = SharedVelocityOffspring{};
  if (const json* o = rd.field(root, "", "offspring", false)) {
    rd.known_keys(*o, "offspring", {"mode", "pmf"});
    const json* mode = rd.field(*o, "offspring", "mode");
    if (mode && *mode == "iid") {
      IidOffspring iid;
      const json* pmf = rd.field(*o, "offspring", "pmf");
      if (pmf && pmf->is_array() && !pmf->empty()) {
        for (std::size_t k = 0; k < pmf->size(); ++k) {
          const auto p = rd.number((*pmf)[k], "offspring.pmf[" + std::to_string(k) + "]");
          iid.pmf.push_back(p.value_or(0.0));
        }
      } else if (pmf) {
        rd.fail("offspring.pmf", "expected a non-empty array");
      }
      offspring = iid;
    } else if (mode && *mode != "shared_velocity") {
      rd.fail("offspring.mode", "must be \"shared_velocity\" or \"iid\"");
    }
  }

  if (const json* in = rd.field(root, "", "initial")) {
    if (!in->is_array() || in->empty()) {
      rd.fail("initial", "expected a non-empty array");
    } else {
      for (std::size_t i = 0; i < in->size(); ++i) {
        const std::string p = "initial[" + std::to_string(i) + "]";
        rd.known_keys((*in)[i], p, {"r", "v"});
        const json* r = rd.field((*in)[i], p, "r");
        const json* v = rd.field((*in)[i], p, "v");
        const auto rr = r ? rd.vec3(*r, p + ".r") : std::nullopt;
        const auto vv = v ? rd.vec3(*v, p + ".v") : std::nullopt;
        if (!rr || !vv) continue;
        if (domain && !contains(*domain, *rr)) rd.fail(p + ".r", "outside the domain");
        if (vs && !vs->contains(*vv)) rd.fail(p + ".v", "outside the velocity annulus");
        cfg.initial.particles.push_back({*rr, *vv, 0.0});
      }
    }
  }

  if (const json* h = rd.field(root, "", "horizons")) {
    if (!h->is_array() || h->empty()) {
      rd.fail("horizons", "expected a non-empty array");
    } else {
      for (std::size_t i = 0; i < h->size(); ++i) {
        const std::string p = "horizons[" + std::to_string(i) + "]";
        const auto t = rd.number((*h)[i], p);
        if (!t) continue;
        if (!(*t > 0.0)) rd.fail(p, "must be > 0");
        if (!cfg.horizons.empty() && !(*t > cfg.horizons.back())) rd.fail(p, "horizons must increase");
        cfg.horizons.push_back(*t);
      }
    }
  }

  if (const json* t = rd.field(root, "", "trials")) {
    const auto n = rd.integer(*t, "trials");
    if (n && *n < 1) rd.fail("trials", "must be >= 1");
    cfg.trials = n.value_or(0);
  }
  if (const json* s = rd.field(root, "", "master_seed")) {
    if (s->is_number_unsigned() || (s->is_number_integer() && s->get<std::int64_t>() >= 0)) {
      cfg.master_seed = s->get<std::uint64_t>();
    } else {
      rd.fail("master_seed", "expected a non-negative integer");
    }
  }

  if (const json* g = rd.field(root, "", "grid", false)) {
    rd.known_keys(*g, "grid", {"cells", "velocity_nodes", "speed_nodes", "dt", "refine"});
    GridSpec gs;
    if (const json* c = rd.field(*g, "grid", "cells")) {
      if (auto cc = rd.cells(*c, "grid.cells")) gs.cells = *cc;
    }
    if (const json* n = rd.field(*g, "grid", "velocity_nodes", false)) {
      const auto k = rd.integer(*n, "grid.velocity_nodes");
      if (k && *k < 1) rd.fail("grid.velocity_nodes", "must be >= 1");
      if (k) gs.velocity_nodes = static_cast<int>(*k);
    }
    if (const json* n = rd.field(*g, "grid", "speed_nodes", false)) {
      const auto k = rd.integer(*n, "grid.speed_nodes");
      if (k && *k < 1) rd.fail("grid.speed_nodes", "must be >= 1");
      if (k) gs.speed_nodes = static_cast<int>(*k);
    }
    if (const json* d = rd.field(*g, "grid", "dt", false)) {
      const auto dt = rd.number(*d, "grid.dt");
      if (dt && !(*dt > 0.0)) rd.fail("grid.dt", "must be > 0");
      if (dt) gs.dt = *dt;
    }
    cfg.grid = gs;
    if (const json* r = rd.field(*g, "grid", "refine", false)) {
      rd.known_keys(*r, "grid.refine", {"cells", "directions", "speeds"});
      RefineOptions ro;
      if (const json* c = rd.field(*r, "grid.refine", "cells", false)) {
        if (auto cc = rd.cells(*c, "grid.refine.cells")) ro.cells = *cc;
      }
      if (const json* n = rd.field(*r, "grid.refine", "directions", false)) {
        const auto k = rd.integer(*n, "grid.refine.directions");
        if (k && *k < 1) rd.fail("grid.refine.directions", "must be >= 1");
        if (k) ro.directions = static_cast<int>(*k);
      }
      if (const json* n = rd.field(*r, "grid.refine", "speeds", false)) {
        const auto k = rd.integer(*n, "grid.refine.speeds");
        if (k && *k < 1) rd.fail("grid.refine.speeds", "must be >= 1");
        if (k) ro.speeds = static_cast<int>(*k);
      }
      cfg.refine = ro;
    }
  }

  if (const json* s = rd.field(root, "", "scan", false)) {
    if (!s->is_array()) {
      rd.fail("scan", "expected an array");
    } else {
      for (std::size_t i = 0; i < s->size(); ++i) {
        const auto m = rd.number((*s)[i], "scan[" + std::to_string(i) + "]");
        if (m && !(*m > 0.0)) rd.fail("scan[" + std::to_string(i) + "]", "must be > 0");
        if (m) cfg.scan.push_back(*m);
      }
    }
  }

  if (const json* o = rd.field(root, "", "outputs", false)) {
    rd.known_keys(*o, "outputs", {"csv"});
    if (const json* c = rd.field(*o, "outputs", "csv", false)) {
      if (c->is_string()) {
        cfg.output = c->get<std::string>();
      } else {
        rd.fail("outputs.csv", "expected a string");
      }
    }
  }

  if (!rd.errors.empty()) throw ConfigError(rd.errors);
  try {
    cfg.model = std::make_shared<const MaterialModel>(*domain, *vspace, std::move(regions), offspring);
  } catch (const ModelError& e) {
    throw ConfigError({e.what()});
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({path.string() + ": cannot read file"});
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  const MaterialModel& mm = *cfg.model;
  json root;
  root["name"] = cfg.name;
  root["domain"] = domain_json(mm.domain());
  root["vspace"] = json{{"v_min", mm.vspace().v_min()}, {"v_max", mm.vspace().v_max()}};
  json regions = json::array();
  for (const auto& r : mm.regions()) {
    json j;
    j["region"] = r.region ? domain_json(*r.region) : json("rest");
    j["sigma_s"] = r.sigma_s;
    j["sigma_f"] = r.sigma_f;
    j["fission_mean"] = r.fission_mean;
    j["scatter_kernel"] = kernel_json(r.scatter_kernel);
    j["fission_kernel"] = kernel_json(r.fission_kernel);
    regions.push_back(j);
  }
  root["regions"] = regions;
  if (const auto* iid = std::get_if<IidOffspring>(&mm.offspring_mode())) {
    root["offspring"] = json{{"mode", "iid"}, {"pmf", iid->pmf}};
  } else {
    root["offspring"] = json{{"mode", "shared_velocity"}};
  }
  json initial = json::array();
  for (const auto& p : cfg.initial.particles) initial.push_back(json{{"r", vec_json(p.r)}, {"v", vec_json(p.v)}});
  root["initial"] = initial;
  root["horizons"] = cfg.horizons;
  root["trials"] = cfg.trials;
  root["master_seed"] = cfg.master_seed;
  if (cfg.grid) {
    json g{{"cells", cells_json(cfg.grid->cells)},
           {"velocity_nodes", cfg.grid->velocity_nodes},
           {"speed_nodes", cfg.grid->speed_nodes},
           {"dt", cfg.grid->dt}};
    if (cfg.refine) {
      json r;
      if (cfg.refine->cells[0] > 0) r["cells"] = cells_json(cfg.refine->cells);
      r["directions"] = cfg.refine->directions;
      r["speeds"] = cfg.refine->speeds;
      g["refine"] = r;
    }
    root["grid"] = g;
  }
  if (!cfg.scan.empty()) root["scan"] = cfg.scan;
  if (!cfg.output.empty()) root["outputs"] = json{{"csv", cfg.output}};
  return root.dump(2) + "\n";
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : serialize_config(cfg)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

ExperimentConfig with_fission_mean(const ExperimentConfig& cfg, double m) {
  const MaterialModel& mm = *cfg.model;
  if (!mm.shared_velocity_mode()) throw ConfigError({"offspring.mode: fission_mean scans need shared_velocity"});
  if (!(m > 0.0) || !std::isfinite(m)) throw ConfigError({"scan: fission_mean must be finite and > 0"});
  std::vector<MaterialRegion> regions = mm.regions();
  for (auto& r : regions) {
    if (r.sigma_f > 0.0) r.fission_mean = m;
  }
  ExperimentConfig out = cfg;
  out.model = std::make_shared<const MaterialModel>(mm.domain(), mm.vspace(), std::move(regions), mm.offspring_mode());
  return out;
}

}  // namespace ntmc
