#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ntmc/estimate.hpp"
#include "ntmc/materials.hpp"
#include "ntmc/parallel.hpp"
#include "ntmc/walk.hpp"

namespace ntmc {

/// Discrete velocity set with normalized weights (sum 1) representing the
/// uniform law on V, or the common atom set of finite-atom kernels.
struct VelocityQuadrature {
  std::vector<Vec3> nodes;
  std::vector<double> weights;

  std::size_t size() const { return nodes.size(); }

  /// Spherical Fibonacci directions x Gauss-Legendre speeds (weighted by rho^2).
  static VelocityQuadrature fibonacci_gauss(const VelocitySpace& vs, int directions, int speeds);
  /// Nodes and weights taken from a finite-atom kernel.
  static VelocityQuadrature from_atoms(const KernelSpec& k);
};

struct GridSpec {
  std::array<int, 3> cells{16, 16, 16};
  int velocity_nodes = 32;
  int speed_nodes = 2;
  double dt = 0.01;

  /// Parses "NXxNYxNZxNV" (e.g. "16x16x16x32").
  static GridSpec parse(const std::string& text, double dt);
  std::string str() const;
};

/**
 * Regular lattice of cell centers over the bounding box of D, restricted to
 * cells whose center lies in D, times a velocity quadrature.
 */
class PhaseGrid {
 public:
  PhaseGrid(const MaterialModel& mm, const GridSpec& spec);

  const GridSpec& spec() const { return spec_; }
  const AxisBox& box() const { return box_; }
  const std::array<int, 3>& n() const { return spec_.cells; }
  const Vec3& h() const { return h_; }
  double dt() const { return spec_.dt; }
  const VelocityQuadrature& velocities() const { return vq_; }

  std::size_t cells() const { return inside_.size(); }
  std::size_t unknowns() const { return cells() * vq_.size(); }
  bool inside(std::size_t cell) const { return inside_[cell] != 0; }
  std::size_t interior_cells() const { return n_inside_; }

  std::size_t cell_index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) + static_cast<std::size_t>(spec_.cells[0]) *
                                             (static_cast<std::size_t>(j) + static_cast<std::size_t>(spec_.cells[1]) * k);
  }
  std::array<int, 3> cell_coords(std::size_t c) const;
  Vec3 center(std::size_t c) const;
  /// Node index for (cell, velocity node).
  std::size_t node(std::size_t cell, std::size_t vel) const { return vel * cells() + cell; }

  /// Lebesgue measure of a phase node: cell volume x |V| x velocity weight
  /// (atom grids use the atom weight as velocity measure).
  double measure(std::size_t vel) const { return cell_volume_ * velocity_measure_ * vq_.weights[vel]; }
  double cell_volume() const { return cell_volume_; }
  double velocity_measure() const { return velocity_measure_; }

  /// Lebesgue inner product of two grid functions.
  double inner(std::span<const double> f, std::span<const double> g) const;

  /// Multilinear interpolation of a cell field at r, using only interior cells
  /// (weights renormalized over interior corners; nearest interior cell if none).
  double interpolate_cell_field(std::span<const double> field, const Vec3& r) const;

 private:
  GridSpec spec_;
  AxisBox box_;
  Vec3 h_;
  VelocityQuadrature vq_;
  std::vector<std::uint8_t> inside_;
  std::size_t n_inside_ = 0;
  double cell_volume_ = 0.0;
  double velocity_measure_ = 1.0;
};

/**
 * One-step operator M_dt on grid functions: semi-Lagrangian advection with
 * multilinear interpolation and zero value outside D, then velocity mixing
 * (1 - alpha dt) g + alpha dt (pi g), then the weight exp(beta dt).
 * Applied matrix-free; entries are nonnegative when dt < 1 / max alpha.
 */
class StepOperator {
 public:
  /// Throws SpectralError when dt >= 1 / max alpha or dt v_max exceeds a cell width.
  StepOperator(const MaterialModel& mm, const PhaseGrid& grid, int threads = 1);

  const PhaseGrid& grid() const { return *grid_; }

  void apply(std::span<const double> in, std::span<double> out) const;
  /// Transposed application (left action) with respect to the plain dot product.
  void apply_transpose(std::span<const double> in, std::span<double> out) const;

  /// Individual stages, exposed for tests.
  void advect(std::span<const double> in, std::span<double> out) const;
  void mix(std::span<const double> in, std::span<double> out) const;
  /// Mixing weights (pi quadrature masses) of a cell, summing to 1 when alpha > 0.
  std::span<const double> mixing_weights(std::size_t cell) const;

 private:
  struct Stencil {
    std::array<int, 3> base{};
    std::array<double, 3> frac{};
  };

  const PhaseGrid* grid_;
  int threads_;
  std::vector<std::uint32_t> cell_region_;
  std::vector<double> region_alpha_dt_;
  std::vector<double> region_growth_;
  std::vector<std::vector<double>> region_q_;  // per region: mixing masses per velocity node
  std::vector<Stencil> stencil_;               // per velocity node
  std::vector<std::uint8_t> active_;           // per node: departure point inside D

  void advect_transpose(std::span<const double> in, std::span<double> out) const;
  void mix_transpose(std::span<const double> in, std::span<double> out) const;
  template <class Fn>
  void for_velocities(Fn&& fn) const;
};

struct RefineOptions;

/**
 * Leading eigen-triple on a phase grid: lambda_star, right eigenfunction phi
 * (sup-normalized) and left eigenfunction phi_tilde as a Lebesgue density
 * normalized by <phi_tilde, phi> = 1.
 *
 * Off-grid, phi is reconstructed along characteristics from the grid
 * collision source S(r) = int alpha pi phi(r, v') dv':
 *
 *   phi(r, v) = int_0^kappa exp(-int_0^s (sigma + lambda_star)) S(r + v s) ds,
 *
 * which vanishes on outgoing boundary directions and is exact in v.
 */
class SpectralTriple {
 public:
  SpectralTriple(std::shared_ptr<const MaterialModel> mm, std::shared_ptr<const PhaseGrid> grid, double lambda_star,
                 std::vector<double> phi, std::vector<double> phi_tilde);
  /// As above with the scatter and fission parts of the collision source given per cell.
  SpectralTriple(std::shared_ptr<const MaterialModel> mm, std::shared_ptr<const PhaseGrid> grid, double lambda_star,
                 std::vector<double> phi, std::vector<double> phi_tilde, std::vector<double> source_scatter,
                 std::vector<double> source_fission);

  double lambda_star() const { return lambda_; }
  const PhaseGrid& grid() const { return *grid_; }
  const MaterialModel& model() const { return *mm_; }
  std::span<const double> phi_nodes() const { return phi_; }
  std::span<const double> phi_tilde_nodes() const { return phi_tilde_; }
  /// <phi_tilde, 1>.
  double phi_tilde_mass() const { return phi_tilde_mass_; }
  /// Collision source per cell (zero outside D).
  std::span<const double> source() const { return source_; }

  /// phi(r, v) off-grid; 0 outside D.
  double phi(const Vec3& r, const Vec3& v) const;
  /// Scatter and fission parts of S(r): sigma_s int pi_s phi and sigma_f int pi_f phi.
  std::pair<double, double> source_parts(const Vec3& r) const;
  double source_at(const Vec3& r) const;

  /// <phi_tilde, g> by grid quadrature.
  double pair_with(const PhaseFunction& g) const;
  /// phi_tilde at the node nearest to (r, v) in space, interpolated in space.
  double phi_tilde(const Vec3& r, std::size_t vel) const;

  /// Samples (s, exp(-int_0^s (sigma + lambda)) S(r + v s)) along the ray to the boundary;
  /// their integral is phi(r, v).
  std::vector<std::pair<double, double>> collision_profile(const Vec3& r, const Vec3& v) const;
  /// phi_tilde at an arbitrary velocity: ray reconstruction for refined isotropic
  /// triples, otherwise the nearest velocity node.
  double phi_tilde_at(const Vec3& r, const Vec3& v) const;

  /// Upper bound of phi over D x V.
  double phi_bound() const { return phi_bound_; }

  /// Replace phi off-grid by a constant (used by tests of the spine rates).
  static SpectralTriple constant(std::shared_ptr<const MaterialModel> mm, std::shared_ptr<const PhaseGrid> grid,
                                 double lambda_star);
  bool is_constant() const { return constant_; }
  bool is_refined() const { return refined_; }

  void write(std::ostream& os) const;

 private:
  std::shared_ptr<const MaterialModel> mm_;
  std::shared_ptr<const PhaseGrid> grid_;
  double lambda_;
  std::vector<double> phi_;
  std::vector<double> phi_tilde_;
  std::vector<double> source_;
  std::vector<double> source_scatter_;
  std::vector<double> source_fission_;
  std::vector<double> adjoint_source_;  // refined triples: post-collision density of phi_tilde
  double phi_tilde_mass_ = 0.0;
  double phi_bound_ = 1.0;
  bool constant_ = false;
  bool refined_ = false;

  void finish();
  friend SpectralTriple refine_characteristics(const SpectralTriple&, const RefineOptions&);
};

struct PowerIterationOptions {
  double tol = 1e-10;  // change in the eigenvalue estimate between iterations
  double residual_tol = 1e-9;  // sup-norm residual of the normalized iterate
  int max_iters = 200000;
};

/// Dominant right eigenvector of M (sup-normalized) and its eigenvalue.
struct EigenPair {
  double eigenvalue = 0.0;
  std::vector<double> vector;
  int iterations = 0;
  double residual = 0.0;
};

EigenPair power_iterate_right(const StepOperator& op, const PowerIterationOptions& opt,
                              std::span<const double> initial = {});
EigenPair power_iterate_left(const StepOperator& op, const PowerIterationOptions& opt,
                             std::span<const double> initial = {});

/// Right and left power iteration assembled into a normalized triple.
SpectralTriple power_iterate(std::shared_ptr<const MaterialModel> mm, std::shared_ptr<const PhaseGrid> grid,
                             const StepOperator& op, const PowerIterationOptions& opt = {});

/// Convenience: build grid and operator, iterate.
SpectralTriple compute_spectral_triple(std::shared_ptr<const MaterialModel> mm, const GridSpec& spec, int threads = 1,
                                       const PowerIterationOptions& opt = {});

struct RefineOptions {
  std::array<int, 3> cells{0, 0, 0};  // cell lattice to solve on; zeros keep the triple's grid
  int directions = 32;
  int speeds = 2;
  double tol = 1e-9;
  int max_iters = 2000;
};

/**
 * Re-solves the eigenproblem in characteristic form on the cells of the
 * triple's grid: the collision source S = K_lambda S with
 *
 *   (K_lambda S)(r) = int alpha pi(v') int_0^kappa(r, v') e^{-int (sigma + lambda)} S(r + v' s) ds dv',
 *
 * and likewise the adjoint collision density, with lambda adjusted until the
 * spectral radius of K_lambda is 1. The triple only supplies the starting
 * guess, so the cells may be finer than the grid it came from. Free of the numerical diffusion of the
 * semi-Lagrangian step; phi and phi_tilde nodes are the ray reconstructions.
 */
SpectralTriple refine_characteristics(const SpectralTriple& triple, const RefineOptions& opt = {});

/// Growth rate between t1 and t2 from many-to-one estimates of psi_t[1](r, v).
EstimateWithError estimate_lambda_mc(const MaterialModel& mm, const Vec3& r, const Vec3& v, double t1, double t2,
                                     const TrialPlan& plan);

struct ProbeDeviation {
  double t = 0.0;
  double deviation = 0.0;  // max over probes of |ratio - <phi_tilde, g>|
  double std_error = 0.0;  // SE of the ratio at the maximizing probe
  std::vector<EstimateWithError> ratios;
};

/// Fixed probe set of phase points (deterministic given the model).
std::vector<std::pair<Vec3, Vec3>> probe_points(const MaterialModel& mm, int count = 20);

/// Deviation of exp(-lambda t) psi_t[g] / phi from <phi_tilde, g> over the probe set.
std::vector<ProbeDeviation> pf_convergence_diagnostic(const MaterialModel& mm, const SpectralTriple& triple,
                                                      const PhaseFunction& g, std::span<const double> times,
                                                      const TrialPlan& plan, int probes = 20);

}  // namespace ntmc
