#include "ntmc/spectral.hpp"

#include <algorithm>
#include <boost/math/special_functions/legendre.hpp>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <thread>

#include "ntmc/errors.hpp"

namespace ntmc {

// ---------------------------------------------------------------------------
// Velocity quadrature
// ---------------------------------------------------------------------------

VelocityQuadrature VelocityQuadrature::fibonacci_gauss(const VelocitySpace& vs, int directions, int speeds) {
  if (directions < 1 || speeds < 1) throw SpectralError("velocity quadrature needs >= 1 direction and speed");
  // Gauss-Legendre on [-1, 1], mapped to [v_min, v_max] and weighted by rho^2.
  std::vector<double> x;
  std::vector<double> w;
  if (speeds == 1) {
    x = {0.0};
    w = {2.0};
  } else {
    for (double z : boost::math::legendre_p_zeros<double>(speeds)) {
      for (double s : {-1.0, 1.0}) {
        if (z == 0.0 && s < 0.0) continue;
        const double xi = s * z;
        const double dp = boost::math::legendre_p_prime(speeds, xi);
        x.push_back(xi);
        w.push_back(2.0 / ((1.0 - xi * xi) * dp * dp));
      }
    }
    std::vector<std::size_t> order(x.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> xs;
    std::vector<double> ws;
    for (auto i : order) {
      xs.push_back(x[i]);
      ws.push_back(w[i]);
    }
    x = std::move(xs);
    w = std::move(ws);
  }
  const double a = vs.v_min();
  const double b = vs.v_max();
  std::vector<double> rho(x.size());
  std::vector<double> rw(x.size());
  double total = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    rho[j] = 0.5 * (a + b) + 0.5 * (b - a) * x[j];
    rw[j] = w[j] * rho[j] * rho[j];
    total += rw[j];
  }
  for (auto& r : rw) r /= total;

  VelocityQuadrature q;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < directions; ++i) {
    const double z = 1.0 - (2.0 * i + 1.0) / directions;
    const double rr = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double ang = golden * i;
    const Vec3 dir{rr * std::cos(ang), rr * std::sin(ang), z};
    for (std::size_t j = 0; j < rho.size(); ++j) {
      q.nodes.push_back(rho[j] * dir);
      q.weights.push_back(rw[j] / directions);
    }
  }
  return q;
}

VelocityQuadrature VelocityQuadrature::from_atoms(const KernelSpec& k) {
  VelocityQuadrature q;
  for (const auto& a : k.atoms) {
    q.nodes.push_back(a.velocity);
    q.weights.push_back(a.weight);
  }
  return q;
}

GridSpec GridSpec::parse(const std::string& text, double dt) {
  GridSpec g;
  g.dt = dt;
  std::vector<int> parts;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, 'x')) {
    try {
      parts.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw std::invalid_argument("grid spec must look like 16x16x16x32");
    }
  }
  if (parts.size() != 4) throw std::invalid_argument("grid spec must look like 16x16x16x32");
  for (int p : parts) {
    if (p < 1) throw std::invalid_argument("grid sizes must be positive");
  }
  g.cells = {parts[0], parts[1], parts[2]};
  g.velocity_nodes = parts[3];
  g.speed_nodes = g.velocity_nodes % 2 == 0 ? 2 : 1;
  return g;
}

std::string GridSpec::str() const {
  return std::to_string(cells[0]) + "x" + std::to_string(cells[1]) + "x" + std::to_string(cells[2]) + "x" +
         std::to_string(velocity_nodes);
}

// ---------------------------------------------------------------------------
// Phase grid
// ---------------------------------------------------------------------------

namespace {

bool same_atoms(const KernelSpec& a, const KernelSpec& b) {
  if (a.atoms.size() != b.atoms.size()) return false;
  for (std::size_t i = 0; i < a.atoms.size(); ++i) {
    if (!(a.atoms[i].velocity == b.atoms[i].velocity)) return false;
  }
  return true;
}

}  // namespace

PhaseGrid::PhaseGrid(const MaterialModel& mm, const GridSpec& spec) : spec_(spec), box_(mm.domain().bounds()) {
  for (int i = 0; i < 3; ++i) {
    if (spec_.cells[i] < 1) throw SpectralError("grid needs at least one cell per axis");
    h_[i] = (box_.hi[i] - box_.lo[i]) / spec_.cells[i];
  }
  cell_volume_ = h_.x * h_.y * h_.z;

  if (mm.all_isotropic()) {
    if (spec_.speed_nodes < 1 || spec_.velocity_nodes % spec_.speed_nodes != 0) {
      throw SpectralError("velocity_nodes must be a multiple of speed_nodes");
    }
    vq_ = VelocityQuadrature::fibonacci_gauss(mm.vspace(), spec_.velocity_nodes / spec_.speed_nodes, spec_.speed_nodes);
    velocity_measure_ = volume(mm.vspace());
  } else {
    const KernelSpec* ref = nullptr;
    for (const auto& reg : mm.regions()) {
      for (const KernelSpec* k : {&reg.scatter_kernel, &reg.fission_kernel}) {
        if (k->is_isotropic()) throw SpectralError("grid oracle needs all-isotropic or all-atom kernels on one atom set");
        if (!ref) ref = k;
        if (!same_atoms(*ref, *k)) throw SpectralError("finite-atom kernels must share one atom set");
      }
    }
    vq_ = VelocityQuadrature::from_atoms(*ref);
    vq_.weights.assign(vq_.nodes.size(), 1.0);
    velocity_measure_ = 1.0;
  }

  const std::size_t nc = static_cast<std::size_t>(spec_.cells[0]) * spec_.cells[1] * spec_.cells[2];
  inside_.assign(nc, 0);
  for (std::size_t c = 0; c < nc; ++c) {
    if (contains(mm.domain(), center(c))) {
      inside_[c] = 1;
      ++n_inside_;
    }
  }
  if (n_inside_ == 0) throw SpectralError("grid has no cell centers inside the domain");
}

std::array<int, 3> PhaseGrid::cell_coords(std::size_t c) const {
  const auto nx = static_cast<std::size_t>(spec_.cells[0]);
  const auto ny = static_cast<std::size_t>(spec_.cells[1]);
  return {static_cast<int>(c % nx), static_cast<int>((c / nx) % ny), static_cast<int>(c / (nx * ny))};
}

Vec3 PhaseGrid::center(std::size_t c) const {
  const auto ijk = cell_coords(c);
  Vec3 p;
  for (int a = 0; a < 3; ++a) p[a] = box_.lo[a] + (ijk[a] + 0.5) * h_[a];
  return p;
}

double PhaseGrid::inner(std::span<const double> f, std::span<const double> g) const {
  double total = 0.0;
  for (std::size_t v = 0; v < vq_.size(); ++v) {
    double part = 0.0;
    const std::size_t off = v * cells();
    for (std::size_t c = 0; c < cells(); ++c) part += f[off + c] * g[off + c];
    total += part * measure(v);
  }
  return total;
}

double PhaseGrid::interpolate_cell_field(std::span<const double> field, const Vec3& r) const {
  std::array<int, 3> base{};
  std::array<double, 3> frac{};
  for (int a = 0; a < 3; ++a) {
    const double u = (r[a] - box_.lo[a]) / h_[a] - 0.5;
    const double fl = std::floor(u);
    base[a] = static_cast<int>(fl);
    frac[a] = u - fl;
  }
  double acc = 0.0;
  double wsum = 0.0;
  for (int corner = 0; corner < 8; ++corner) {
    int idx[3];
    double w = 1.0;
    bool ok = true;
    for (int a = 0; a < 3; ++a) {
      const int bit = (corner >> a) & 1;
      idx[a] = base[a] + bit;
      w *= bit ? frac[a] : 1.0 - frac[a];
      ok = ok && idx[a] >= 0 && idx[a] < spec_.cells[a];
    }
    if (!ok || w == 0.0) continue;
    const std::size_t c = cell_index(idx[0], idx[1], idx[2]);
    if (!inside_[c]) continue;
    acc += w * field[c];
    wsum += w;
  }
  if (wsum > 0.0) return acc / wsum;
  // No interior corner: nearest interior cell.
  double best = std::numeric_limits<double>::infinity();
  double value = 0.0;
  for (std::size_t c = 0; c < cells(); ++c) {
    if (!inside_[c]) continue;
    const Vec3 d = center(c) - r;
    const double dd = dot(d, d);
    if (dd < best) {
      best = dd;
      value = field[c];
    }
  }
  return value;
}

// ---------------------------------------------------------------------------
// Step operator
// ---------------------------------------------------------------------------

StepOperator::StepOperator(const MaterialModel& mm, const PhaseGrid& grid, int threads)
    : grid_(&grid), threads_(std::max(1, threads)) {
  const double dt = grid.dt();
  if (!(dt > 0.0)) throw SpectralError("dt must be positive");
  double max_alpha = 0.0;
  for (const auto& reg : mm.regions()) max_alpha = std::max(max_alpha, reg.alpha());
  if (max_alpha > 0.0 && dt * max_alpha >= 1.0) throw SpectralError("stability: dt must be below 1 / max alpha");
  const double hmin = std::min({grid.h().x, grid.h().y, grid.h().z});
  if (dt * mm.vspace().v_max() >= hmin) throw SpectralError("stability: dt * v_max must be smaller than one cell");

  const auto& vq = grid.velocities();
  const std::size_t nv = vq.size();
  const bool iso = mm.all_isotropic();
  for (const auto& reg : mm.regions()) {
    region_alpha_dt_.push_back(reg.alpha() * dt);
    region_growth_.push_back(std::exp(reg.beta() * dt));
    std::vector<double> q(nv, 0.0);
    const double a = reg.alpha();
    if (a > 0.0) {
      for (std::size_t v = 0; v < nv; ++v) {
        const double ks = iso ? vq.weights[v] : reg.scatter_kernel.atoms[v].weight;
        const double kf = iso ? vq.weights[v] : reg.fission_kernel.atoms[v].weight;
        q[v] = (reg.sigma_s * ks + reg.sigma_f * reg.fission_mean * kf) / a;
      }
    }
    region_q_.push_back(std::move(q));
  }

  cell_region_.resize(grid.cells());
  for (std::size_t c = 0; c < grid.cells(); ++c) {
    cell_region_[c] = static_cast<std::uint32_t>(mm.region_index(grid.center(c)));
  }

  stencil_.resize(nv);
  active_.assign(grid.unknowns(), 0);
  for (std::size_t v = 0; v < nv; ++v) {
    const Vec3 d = vq.nodes[v] * dt;
    for (int a = 0; a < 3; ++a) {
      const double s = d[a] / grid.h()[a];
      const double fl = std::floor(s);
      stencil_[v].base[a] = static_cast<int>(fl);
      stencil_[v].frac[a] = s - fl;
    }
    for (std::size_t c = 0; c < grid.cells(); ++c) {
      if (grid.inside(c) && contains(mm.domain(), grid.center(c) + d)) active_[grid.node(c, v)] = 1;
    }
  }
}

template <class Fn>
void StepOperator::for_velocities(Fn&& fn) const {
  const std::size_t nv = grid_->velocities().size();
  const int nt = std::min<int>(threads_, static_cast<int>(nv));
  if (nt <= 1) {
    for (std::size_t v = 0; v < nv; ++v) fn(v);
    return;
  }
  std::vector<std::thread> pool;
  for (int t = 0; t < nt; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t v = static_cast<std::size_t>(t); v < nv; v += static_cast<std::size_t>(nt)) fn(v);
    });
  }
  for (auto& th : pool) th.join();
}

void StepOperator::advect(std::span<const double> in, std::span<double> out) const {
  const auto& g = *grid_;
  const auto n = g.n();
  for_velocities([&](std::size_t v) {
    const Stencil& st = stencil_[v];
    const std::size_t off = v * g.cells();
    for (std::size_t c = 0; c < g.cells(); ++c) {
      double acc = 0.0;
      if (active_[off + c]) {
        const auto ijk = g.cell_coords(c);
        for (int corner = 0; corner < 8; ++corner) {
          int idx[3];
          double w = 1.0;
          bool ok = true;
          for (int a = 0; a < 3; ++a) {
            const int bit = (corner >> a) & 1;
            idx[a] = ijk[a] + st.base[a] + bit;
            w *= bit ? st.frac[a] : 1.0 - st.frac[a];
            ok = ok && idx[a] >= 0 && idx[a] < n[a];
          }
          if (!ok || w == 0.0) continue;
          const std::size_t src = g.cell_index(idx[0], idx[1], idx[2]);
          if (g.inside(src)) acc += w * in[off + src];
        }
      }
      out[off + c] = acc;
    }
  });
}

void StepOperator::advect_transpose(std::span<const double> in, std::span<double> out) const {
  const auto& g = *grid_;
  const auto n = g.n();
  for_velocities([&](std::size_t v) {
    const Stencil& st = stencil_[v];
    const std::size_t off = v * g.cells();
    std::fill(out.begin() + static_cast<std::ptrdiff_t>(off),
              out.begin() + static_cast<std::ptrdiff_t>(off + g.cells()), 0.0);
    for (std::size_t c = 0; c < g.cells(); ++c) {
      if (!active_[off + c]) continue;
      const double x = in[off + c];
      if (x == 0.0) continue;
      const auto ijk = g.cell_coords(c);
      for (int corner = 0; corner < 8; ++corner) {
        int idx[3];
        double w = 1.0;
        bool ok = true;
        for (int a = 0; a < 3; ++a) {
          const int bit = (corner >> a) & 1;
          idx[a] = ijk[a] + st.base[a] + bit;
          w *= bit ? st.frac[a] : 1.0 - st.frac[a];
          ok = ok && idx[a] >= 0 && idx[a] < n[a];
        }
        if (!ok || w == 0.0) continue;
        const std::size_t dst = g.cell_index(idx[0], idx[1], idx[2]);
        if (g.inside(dst)) out[off + dst] += w * x;
      }
    }
  });
}

void StepOperator::mix(std::span<const double> in, std::span<double> out) const {
  const auto& g = *grid_;
  const std::size_t nv = g.velocities().size();
  const std::size_t nc = g.cells();
  for (std::size_t c = 0; c < nc; ++c) {
    const auto reg = cell_region_[c];
    const double a = region_alpha_dt_[reg];
    const auto& q = region_q_[reg];
    double avg = 0.0;
    for (std::size_t v = 0; v < nv; ++v) avg += q[v] * in[v * nc + c];
    for (std::size_t v = 0; v < nv; ++v) out[v * nc + c] = (1.0 - a) * in[v * nc + c] + a * avg;
  }
}

void StepOperator::mix_transpose(std::span<const double> in, std::span<double> out) const {
  const auto& g = *grid_;
  const std::size_t nv = g.velocities().size();
  const std::size_t nc = g.cells();
  for (std::size_t c = 0; c < nc; ++c) {
    const auto reg = cell_region_[c];
    const double a = region_alpha_dt_[reg];
    const auto& q = region_q_[reg];
    double total = 0.0;
    for (std::size_t v = 0; v < nv; ++v) total += in[v * nc + c];
    for (std::size_t v = 0; v < nv; ++v) out[v * nc + c] = (1.0 - a) * in[v * nc + c] + a * q[v] * total;
  }
}

std::span<const double> StepOperator::mixing_weights(std::size_t cell) const { return region_q_[cell_region_[cell]]; }

void StepOperator::apply(std::span<const double> in, std::span<double> out) const {
  std::vector<double> tmp(in.size());
  advect(in, tmp);
  mix(tmp, out);
  const std::size_t nc = grid_->cells();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= region_growth_[cell_region_[i % nc]];
}

void StepOperator::apply_transpose(std::span<const double> in, std::span<double> out) const {
  const std::size_t nc = grid_->cells();
  std::vector<double> scaled(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) scaled[i] = in[i] * region_growth_[cell_region_[i % nc]];
  std::vector<double> mixed(in.size());
  mix_transpose(scaled, mixed);
  advect_transpose(mixed, out);
}

// ---------------------------------------------------------------------------
// Power iteration
// ---------------------------------------------------------------------------

namespace {

template <class Apply>
EigenPair power_iterate_impl(const PhaseGrid& grid, Apply&& apply, const PowerIterationOptions& opt,
                             std::span<const double> initial) {
  const std::size_t n = grid.unknowns();
  std::vector<double> x(n, 0.0);
  if (initial.size() == n) {
    std::copy(initial.begin(), initial.end(), x.begin());
  } else {
    for (std::size_t v = 0; v < grid.velocities().size(); ++v) {
      for (std::size_t c = 0; c < grid.cells(); ++c) x[grid.node(c, v)] = grid.inside(c) ? 1.0 : 0.0;
    }
  }
  auto sup = [](const std::vector<double>& a) {
    double m = 0.0;
    for (double e : a) m = std::max(m, std::abs(e));
    return m;
  };
  double s = sup(x);
  if (!(s > 0.0)) throw SpectralError("power iteration: zero initial vector");
  for (auto& e : x) e /= s;

  std::vector<double> y(n);
  EigenPair out;
  double prev = std::numeric_limits<double>::quiet_NaN();
  for (int it = 1; it <= opt.max_iters; ++it) {
    apply(x, y);
    double xy = 0.0;
    double xx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      xy += x[i] * y[i];
      xx += x[i] * x[i];
    }
    const double mu = xy / xx;
    double res = 0.0;
    for (std::size_t i = 0; i < n; ++i) res = std::max(res, std::abs(y[i] - mu * x[i]));
    const double ys = sup(y);
    if (!(ys > 0.0) || !std::isfinite(ys)) throw SpectralError("power iteration: iterate vanished");
    for (std::size_t i = 0; i < n; ++i) x[i] = y[i] / ys;
    out.iterations = it;
    out.eigenvalue = mu;
    out.residual = res;
    if (std::abs(mu - prev) < opt.tol && res < opt.residual_tol) {
      out.vector = std::move(x);
      return out;
    }
    prev = mu;
  }
  throw SpectralError("power iteration did not converge in max_iters");
}

}  // namespace

EigenPair power_iterate_right(const StepOperator& op, const PowerIterationOptions& opt,
                              std::span<const double> initial) {
  return power_iterate_impl(
      op.grid(), [&](std::span<const double> a, std::span<double> b) { op.apply(a, b); }, opt, initial);
}

EigenPair power_iterate_left(const StepOperator& op, const PowerIterationOptions& opt,
                             std::span<const double> initial) {
  return power_iterate_impl(
      op.grid(), [&](std::span<const double> a, std::span<double> b) { op.apply_transpose(a, b); }, opt, initial);
}

SpectralTriple power_iterate(std::shared_ptr<const MaterialModel> mm, std::shared_ptr<const PhaseGrid> grid,
                             const StepOperator& op, const PowerIterationOptions& opt) {
  EigenPair right = power_iterate_right(op, opt);
  EigenPair left = power_iterate_left(op, opt);
  for (std::size_t c = 0; c < grid->cells(); ++c) {
    if (!grid->inside(c)) continue;
    for (std::size_t v = 0; v < grid->velocities().size(); ++v) {
      if (!(right.vector[grid->node(c, v)] > 0.0)) {
        throw SpectralError("power iteration: right eigenvector not positive (irreducibility fails?)");
      }
    }
  }
  // phi_tilde as a Lebesgue density, normalized so <phi_tilde, phi> = 1.
  std::vector<double> pt(left.vector.size());
  double pair = 0.0;
  for (std::size_t i = 0; i < pt.size(); ++i) pair += left.vector[i] * right.vector[i];
  if (!(pair > 0.0)) throw SpectralError("power iteration: left and right vectors are orthogonal");
  const std::size_t nc = grid->cells();
  for (std::size_t i = 0; i < pt.size(); ++i) pt[i] = left.vector[i] / pair / grid->measure(i / nc);
  const double lambda = std::log(right.eigenvalue) / grid->dt();
  return SpectralTriple(std::move(mm), std::move(grid), lambda, std::move(right.vector), std::move(pt));
}

SpectralTriple compute_spectral_triple(std::shared_ptr<const MaterialModel> mm, const GridSpec& spec, int threads,
                                       const PowerIterationOptions& opt) {
  auto grid = std::make_shared<const PhaseGrid>(*mm, spec);
  StepOperator op(*mm, *grid, threads);
  return power_iterate(mm, grid, op, opt);
}

// ---------------------------------------------------------------------------
// Spectral triple
// ---------------------------------------------------------------------------

namespace {

struct RayTerms {
  double value = 0.0;   // int_0^kappa e^{-C(s)} F(r + u s) ds
  double moment = 0.0;  // int_0^kappa s e^{-C(s)} F(r + u s) ds
};

// Composite Simpson along the ray r + u s up to the boundary, with
// C(s) = int_0^s (sigma + lambda) exact per region segment. F is the
// multilinear interpolant of a cell field.
RayTerms ray_integral(const MaterialModel& mm, const PhaseGrid& g, double lambda, std::span<const double> field,
                      const Vec3& r, const Vec3& u, std::vector<std::pair<double, double>>* samples = nullptr) {
  const double kappa = exit_time(mm.domain(), r, u);
  const double hmin = std::min({g.h().x, g.h().y, g.h().z});
  int steps = static_cast<int>(std::ceil(norm(u) * kappa / (0.5 * hmin)));
  steps = std::max(4, steps + (steps % 2));
  const double ds = kappa / steps;

  std::vector<std::pair<double, double>> segs;  // (end time, rate)
  if (mm.regions().size() == 1) {
    segs.emplace_back(kappa, mm.regions()[0].sigma() + lambda);
  } else {
    const auto breaks = mm.region_breaks(r, u, kappa);
    double t0 = 0.0;
    for (std::size_t k = 0; k <= breaks.size(); ++k) {
      const double t1 = k < breaks.size() ? breaks[k] : kappa;
      if (t1 <= t0) continue;
      segs.emplace_back(t1, mm.region_at(r + u * (0.5 * (t0 + t1))).sigma() + lambda);
      t0 = t1;
    }
  }

  RayTerms out;
  double depth = 0.0;
  double prev = 0.0;
  std::size_t seg = 0;
  for (int i = 0; i <= steps; ++i) {
    const double s = i * ds;
    while (prev < s) {
      const double end = seg + 1 < segs.size() ? std::min(segs[seg].first, s) : s;
      depth += segs[seg].second * (end - prev);
      prev = end;
      if (prev < s) ++seg;
    }
    const double sp = std::min(s, kappa * (1.0 - 1e-12));
    const double f = std::exp(-depth) * g.interpolate_cell_field(field, r + u * sp);
    if (samples) samples->emplace_back(s, f);
    const double wgt = (i == 0 || i == steps) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    out.value += wgt * f;
    out.moment += wgt * s * f;
  }
  out.value *= ds / 3.0;
  out.moment *= ds / 3.0;
  return out;
}

}  // namespace

SpectralTriple::SpectralTriple(std::shared_ptr<const MaterialModel> mm, std::shared_ptr<const PhaseGrid> grid,
                               double lambda_star, std::vector<double> phi, std::vector<double> phi_tilde)
    : mm_(std::move(mm)),
      grid_(std::move(grid)),
      lambda_(lambda_star),
      phi_(std::move(phi)),
      phi_tilde_(std::move(phi_tilde)) {
  const auto& g = *grid_;
  if (phi_.size() != g.unknowns() || phi_tilde_.size() != g.unknowns()) {
    throw SpectralError("spectral triple: vector sizes do not match the grid");
  }
  const std::size_t nc = g.cells();
  const std::size_t nv = g.velocities().size();
  const bool iso = mm_->all_isotropic();
  source_scatter_.assign(nc, 0.0);
  source_fission_.assign(nc, 0.0);
  for (std::size_t c = 0; c < nc; ++c) {
    if (!g.inside(c)) continue;
    const auto& reg = mm_->region_at(g.center(c));
    double s = 0.0;
    double f = 0.0;
    for (std::size_t v = 0; v < nv; ++v) {
      const double ks = iso ? g.velocities().weights[v] : reg.scatter_kernel.atoms[v].weight;
      const double kf = iso ? g.velocities().weights[v] : reg.fission_kernel.atoms[v].weight;
      s += ks * phi_[g.node(c, v)];
      f += kf * phi_[g.node(c, v)];
    }
    source_scatter_[c] = reg.sigma_s * s;
    source_fission_[c] = reg.sigma_f * reg.fission_mean * f;
  }
  finish();
}

SpectralTriple::SpectralTriple(std::shared_ptr<const MaterialModel> mm, std::shared_ptr<const PhaseGrid> grid,
                               double lambda_star, std::vector<double> phi, std::vector<double> phi_tilde,
                               std::vector<double> source_scatter, std::vector<double> source_fission)
    : mm_(std::move(mm)),
      grid_(std::move(grid)),
      lambda_(lambda_star),
      phi_(std::move(phi)),
      phi_tilde_(std::move(phi_tilde)),
      source_scatter_(std::move(source_scatter)),
      source_fission_(std::move(source_fission)) {
  const auto& g = *grid_;
  if (phi_.size() != g.unknowns() || phi_tilde_.size() != g.unknowns() || source_scatter_.size() != g.cells() ||
      source_fission_.size() != g.cells()) {
    throw SpectralError("spectral triple: vector sizes do not match the grid");
  }
  finish();
}

void SpectralTriple::finish() {
  const auto& g = *grid_;
  const std::size_t nc = g.cells();
  source_.assign(nc, 0.0);
  double smax = 0.0;
  for (std::size_t c = 0; c < nc; ++c) {
    source_[c] = source_scatter_[c] + source_fission_[c];
    smax = std::max(smax, source_[c]);
  }
  std::vector<double> ones(g.unknowns(), 0.0);
  for (std::size_t v = 0; v < g.velocities().size(); ++v) {
    for (std::size_t c = 0; c < nc; ++c) ones[g.node(c, v)] = g.inside(c) ? 1.0 : 0.0;
  }
  phi_tilde_mass_ = g.inner(phi_tilde_, ones);

  double cmin = std::numeric_limits<double>::infinity();
  for (const auto& reg : mm_->regions()) cmin = std::min(cmin, reg.sigma() + lambda_);
  const double kmax = mm_->domain().diameter() / mm_->vspace().v_min();
  const double integral = cmin > 0.0 ? (1.0 - std::exp(-cmin * kmax)) / cmin : kmax * std::exp(-cmin * kmax);
  phi_bound_ = smax * integral;
}

SpectralTriple SpectralTriple::constant(std::shared_ptr<const MaterialModel> mm, std::shared_ptr<const PhaseGrid> grid,
                                        double lambda_star) {
  const std::size_t n = grid->unknowns();
  std::vector<double> phi(n, 0.0);
  std::vector<double> pt(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) phi[i] = grid->inside(i % grid->cells()) ? 1.0 : 0.0;
  SpectralTriple t(std::move(mm), std::move(grid), lambda_star, std::move(phi), std::move(pt));
  t.constant_ = true;
  t.phi_bound_ = 1.0;
  return t;
}

std::pair<double, double> SpectralTriple::source_parts(const Vec3& r) const {
  if (constant_) {
    const auto& reg = mm_->region_at(r);
    return {reg.sigma_s, reg.sigma_f * reg.fission_mean};
  }
  return {grid_->interpolate_cell_field(source_scatter_, r), grid_->interpolate_cell_field(source_fission_, r)};
}

double SpectralTriple::source_at(const Vec3& r) const {
  const auto [s, f] = source_parts(r);
  return s + f;
}

double SpectralTriple::phi(const Vec3& r, const Vec3& v) const {
  if (!contains(mm_->domain(), r)) return 0.0;
  if (constant_) return 1.0;
  return ray_integral(*mm_, *grid_, lambda_, source_, r, v).value;
}

std::vector<std::pair<double, double>> SpectralTriple::collision_profile(const Vec3& r, const Vec3& v) const {
  if (constant_) throw SpectralError("collision_profile: constant triple has no collision source");
  std::vector<std::pair<double, double>> out;
  ray_integral(*mm_, *grid_, lambda_, source_, r, v, &out);
  return out;
}

double SpectralTriple::phi_tilde_at(const Vec3& r, const Vec3& v) const {
  if (!contains(mm_->domain(), r)) return 0.0;
  if (refined_ && mm_->all_isotropic()) return ray_integral(*mm_, *grid_, lambda_, adjoint_source_, r, -1.0 * v).value;
  const auto& nodes = grid_->velocities().nodes;
  std::size_t best = 0;
  double dist = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < nodes.size(); ++j) {
    const Vec3 d = nodes[j] - v;
    if (dot(d, d) < dist) {
      dist = dot(d, d);
      best = j;
    }
  }
  return phi_tilde(r, best);
}

double SpectralTriple::pair_with(const PhaseFunction& g) const {
  const auto& gr = *grid_;
  double total = 0.0;
  for (std::size_t v = 0; v < gr.velocities().size(); ++v) {
    double part = 0.0;
    for (std::size_t c = 0; c < gr.cells(); ++c) {
      if (!gr.inside(c)) continue;
      part += phi_tilde_[gr.node(c, v)] * g(gr.center(c), gr.velocities().nodes[v]);
    }
    total += part * gr.measure(v);
  }
  return total;
}

double SpectralTriple::phi_tilde(const Vec3& r, std::size_t vel) const {
  const std::size_t nc = grid_->cells();
  return grid_->interpolate_cell_field(std::span<const double>(phi_tilde_).subspan(vel * nc, nc), r);
}

void SpectralTriple::write(std::ostream& os) const {
  const auto& g = *grid_;
  os << std::setprecision(17);
  os << "# ntmc spectral triple\n";
  os << "# grid " << g.spec().str() << " dt " << g.dt() << (refined_ ? " refined" : "") << "\n";
  os << "# box " << g.box().lo.x << ' ' << g.box().lo.y << ' ' << g.box().lo.z << ' ' << g.box().hi.x << ' '
     << g.box().hi.y << ' ' << g.box().hi.z << "\n";
  os << "# lambda_star " << lambda_ << "\n";
  os << "# phi_tilde_mass " << phi_tilde_mass_ << "\n";
  os << "cell\tvelocity\tphi\tphi_tilde\n";
  for (std::size_t c = 0; c < g.cells(); ++c) {
    if (!g.inside(c)) continue;
    for (std::size_t v = 0; v < g.velocities().size(); ++v) {
      os << c << '\t' << v << '\t' << phi_[g.node(c, v)] << '\t' << phi_tilde_[g.node(c, v)] << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Characteristic refinement
// ---------------------------------------------------------------------------

SpectralTriple refine_characteristics(const SpectralTriple& triple, const RefineOptions& opt) {
  if (triple.is_constant()) throw SpectralError("refine_characteristics: constant triple");
  const MaterialModel& mm = triple.model();
  std::shared_ptr<const PhaseGrid> grid = triple.grid_;
  if (opt.cells[0] > 0) {
    GridSpec spec = triple.grid().spec();
    spec.cells = opt.cells;
    grid = std::make_shared<const PhaseGrid>(mm, spec);
  }
  const PhaseGrid& g = *grid;
  const PhaseGrid& coarse = triple.grid();
  const std::size_t nc = g.cells();
  const bool iso = mm.all_isotropic();

  VelocityQuadrature q;
  std::vector<double> mu;  // velocity measure of each node
  if (iso) {
    q = VelocityQuadrature::fibonacci_gauss(mm.vspace(), opt.directions, opt.speeds);
    for (double w : q.weights) mu.push_back(w * volume(mm.vspace()));
  } else {
    q = g.velocities();
    mu.assign(q.size(), 1.0);
  }
  const std::size_t nq = q.size();
  // Per region: scatter and fission masses of each node (A_j = a_s + a_f).
  std::vector<std::vector<double>> a_s;
  std::vector<std::vector<double>> a_f;
  for (const auto& reg : mm.regions()) {
    std::vector<double> s(nq);
    std::vector<double> f(nq);
    for (std::size_t j = 0; j < nq; ++j) {
      const double ks = iso ? q.weights[j] : reg.scatter_kernel.atoms[j].weight;
      const double kf = iso ? q.weights[j] : reg.fission_kernel.atoms[j].weight;
      s[j] = reg.sigma_s * ks;
      f[j] = reg.sigma_f * reg.fission_mean * kf;
    }
    a_s.push_back(std::move(s));
    a_f.push_back(std::move(f));
  }
  std::vector<std::size_t> region(nc, 0);
  std::vector<std::size_t> interior;
  for (std::size_t c = 0; c < nc; ++c) {
    if (!g.inside(c)) continue;
    region[c] = mm.region_index(g.center(c));
    interior.push_back(c);
  }

  auto sum = [](const std::vector<double>& x) {
    double s = 0.0;
    for (double e : x) s += e;
    return s;
  };

  // Forward: S <- K_lambda S, lambda <- lambda + log(rho) / tau, where tau is
  // the s-weighted mean so that d log rho / d lambda = -tau.
  double lambda = triple.lambda_star();
  std::vector<double> src(nc, 0.0);
  for (std::size_t c : interior) src[c] = coarse.interpolate_cell_field(triple.source(), g.center(c));
  std::vector<double> next(nc, 0.0);
  std::vector<double> next_s(nc, 0.0);
  std::vector<double> next_f(nc, 0.0);
  bool done = false;
  for (int it = 0; it < opt.max_iters && !done; ++it) {
    double moment = 0.0;
    std::fill(next_s.begin(), next_s.end(), 0.0);
    std::fill(next_f.begin(), next_f.end(), 0.0);
    for (std::size_t c : interior) {
      const Vec3 rc = g.center(c);
      for (std::size_t j = 0; j < nq; ++j) {
        const RayTerms t = ray_integral(mm, g, lambda, src, rc, q.nodes[j]);
        next_s[c] += a_s[region[c]][j] * t.value;
        next_f[c] += a_f[region[c]][j] * t.value;
        moment += (a_s[region[c]][j] + a_f[region[c]][j]) * t.moment;
      }
    }
    for (std::size_t c = 0; c < nc; ++c) next[c] = next_s[c] + next_f[c];
    const double total = sum(next);
    const double src_total = sum(src);
    const double rho = total / src_total;
    const double tau = moment / total;
    double change = 0.0;
    for (std::size_t c : interior) change = std::max(change, std::abs(next[c] / total - src[c] / src_total));
    change *= static_cast<double>(interior.size());
    const double step = std::log(rho) / tau;
    done = std::abs(step) < opt.tol && change < 1e3 * opt.tol;
    lambda += step;
    for (std::size_t c = 0; c < nc; ++c) src[c] = next[c] / total;
    for (std::size_t c = 0; c < nc; ++c) {
      next_s[c] /= total;
      next_f[c] /= total;
    }
  }
  if (!done) throw SpectralError("refine_characteristics: forward iteration did not converge");

  // Adjoint collision density rho(r) at the same lambda.
  std::vector<double> coarse_dens(coarse.cells(), 0.0);
  for (std::size_t c = 0; c < coarse.cells(); ++c) {
    for (std::size_t v = 0; v < coarse.velocities().size(); ++v) {
      coarse_dens[c] += coarse.measure(v) / coarse.cell_volume() * triple.phi_tilde_nodes()[coarse.node(c, v)];
    }
  }
  std::vector<double> dens(nc, 0.0);
  for (std::size_t c : interior) dens[c] = coarse.interpolate_cell_field(coarse_dens, g.center(c));
  std::vector<double> field(nc, 0.0);
  done = false;
  for (int it = 0; it < opt.max_iters && !done; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t j = 0; j < nq; ++j) {
      for (std::size_t c : interior) field[c] = (a_s[region[c]][j] + a_f[region[c]][j]) * dens[c];
      for (std::size_t c : interior) next[c] += ray_integral(mm, g, lambda, field, g.center(c), -1.0 * q.nodes[j]).value;
    }
    const double total = sum(next);
    double change = 0.0;
    const double prev_total = sum(dens);
    for (std::size_t c : interior) change = std::max(change, std::abs(next[c] / total - dens[c] / prev_total));
    change *= static_cast<double>(interior.size());
    done = change < 1e3 * opt.tol;
    for (std::size_t c = 0; c < nc; ++c) dens[c] = next[c] / total;
  }
  if (!done) throw SpectralError("refine_characteristics: adjoint iteration did not converge");

  // Node values by ray reconstruction.
  const std::size_t nv = g.velocities().size();
  std::vector<double> phi(g.unknowns(), 0.0);
  std::vector<double> pt(g.unknowns(), 0.0);
  double phi_max = 0.0;
  for (std::size_t v = 0; v < nv; ++v) {
    const Vec3 vel = g.velocities().nodes[v];
    const double mu_v = g.measure(v) / g.cell_volume();
    // Density of the post-collision law at this node, per unit velocity measure.
    for (std::size_t c : interior) {
      const auto& reg = mm.regions()[region[c]];
      const double ks = iso ? 1.0 / volume(mm.vspace()) : reg.scatter_kernel.atoms[v].weight / mu_v;
      const double kf = iso ? 1.0 / volume(mm.vspace()) : reg.fission_kernel.atoms[v].weight / mu_v;
      field[c] = (reg.sigma_s * ks + reg.sigma_f * reg.fission_mean * kf) * dens[c];
    }
    for (std::size_t c : interior) {
      phi[g.node(c, v)] = ray_integral(mm, g, lambda, src, g.center(c), vel).value;
      pt[g.node(c, v)] = ray_integral(mm, g, lambda, field, g.center(c), -1.0 * vel).value;
      phi_max = std::max(phi_max, phi[g.node(c, v)]);
    }
  }
  for (auto& e : phi) e /= phi_max;
  for (std::size_t c = 0; c < nc; ++c) {
    next_s[c] /= phi_max;
    next_f[c] /= phi_max;
  }
  const double pair = g.inner(pt, phi);
  if (!(pair > 0.0)) throw SpectralError("refine_characteristics: degenerate left vector");
  for (auto& e : pt) e /= pair;
  std::vector<double> adjoint(nc, 0.0);
  if (iso) {
    for (std::size_t c : interior) adjoint[c] = mm.regions()[region[c]].alpha() / volume(mm.vspace()) * dens[c] / pair;
  }

  SpectralTriple out(triple.mm_, grid, lambda, std::move(phi), std::move(pt), std::move(next_s),
                     std::move(next_f));
  out.refined_ = true;
  out.adjoint_source_ = std::move(adjoint);
  return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo readouts
// ---------------------------------------------------------------------------

EstimateWithError estimate_lambda_mc(const MaterialModel& mm, const Vec3& r, const Vec3& v, double t1, double t2,
                                     const TrialPlan& plan) {
  if (!(t1 > 0.0 && t2 > t1)) throw std::invalid_argument("estimate_lambda_mc requires 0 < t1 < t2");
  const PhaseFunction one = [](const Vec3&, const Vec3&) { return 1.0; };
  const PhaseFunction gs[] = {one};
  const double ts[] = {t1, t2};
  const Moments m = many_to_one_moments(mm, gs, r, v, ts, plan);
  return log_ratio(m, 0, 1, t2 - t1);
}

std::vector<std::pair<Vec3, Vec3>> probe_points(const MaterialModel& mm, int count) {
  Rng rng(0x5eedf00dbe5ULL);
  std::vector<std::pair<Vec3, Vec3>> out;
  const Vec3 c = mm.domain().centroid();
  for (int i = 0; i < count; ++i) {
    const Vec3 p = sample_point_uniform(mm.domain(), rng);
    out.emplace_back(c + 0.5 * (p - c), sample_velocity_uniform(mm.vspace(), rng));
  }
  return out;
}

std::vector<ProbeDeviation> pf_convergence_diagnostic(const MaterialModel& mm, const SpectralTriple& triple,
                                                      const PhaseFunction& g, std::span<const double> times,
                                                      const TrialPlan& plan, int probes) {
  const auto pts = probe_points(mm, probes);
  const double target = triple.pair_with(g);
  const PhaseFunction gs[] = {g};
  std::vector<ProbeDeviation> out(times.size());
  for (std::size_t j = 0; j < times.size(); ++j) out[j].t = times[j];
  for (std::size_t p = 0; p < pts.size(); ++p) {
    const auto& [r, v] = pts[p];
    const double ph = triple.phi(r, v);
    TrialPlan sub = plan;
    sub.master_seed = hash_keys(plan.master_seed, {static_cast<std::uint64_t>(p)});
    const Moments m = many_to_one_moments(mm, gs, r, v, times, sub);
    for (std::size_t j = 0; j < times.size(); ++j) {
      const double scale = std::exp(-triple.lambda_star() * times[j]) / ph;
      EstimateWithError e = m.estimate(j);
      e.mean *= scale;
      e.std_error *= scale;
      const double dev = std::abs(e.mean - target);
      if (p == 0 || dev > out[j].deviation) {
        out[j].deviation = dev;
        out[j].std_error = e.std_error;
      }
      out[j].ratios.push_back(e);
    }
  }
  return out;
}

}  // namespace ntmc
