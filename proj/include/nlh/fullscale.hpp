#pragma once

#include <complex>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "nlh/corrector.hpp"
#include "nlh/effective.hpp"
#include "nlh/environment.hpp"
#include "nlh/torus_operator.hpp"

namespace nlh {

/// Periodic box [-B, B) with spacing ε/N_t; node i sits at fast coordinate i/N_t mod 1.
struct PhysicalGrid {
  double eps = 0.0;
  double half_width = 0.0;
  double dx = 0.0;
  int n_t = 0;
  std::size_t nodes = 0;
  bool periodic = true;

  double x(std::size_t i) const { return -half_width + static_cast<double>(i) * dx; }
  int fast_index(std::size_t i) const { return static_cast<int>(i % static_cast<std::size_t>(n_t)); }
  double length() const { return 2.0 * half_width; }
};

/// Smallest commensurate box with half-width ≥ min_half_width (B/ε rounded up to an integer).
PhysicalGrid make_physical_grid(int n_t, double eps, double min_half_width);

/// B = 6 + 4 sqrt(2 Θ T) + |β| T / ε.
double default_half_width(double theta, double horizon, double beta, double eps);

enum class FieldKind { u_eps, u0, U_eps, residual };

struct SimulationField {
  FieldKind kind = FieldKind::u_eps;
  double t = 0.0;
  std::vector<double> values;
  double tail = 0.0;  ///< L² fraction on |x| > B - 1
};

/// ‖u‖_{L²(|x|>B-1)} / ‖u‖_{L²}
double tail_fraction(const PhysicalGrid& grid, std::span<const double> u);
double l2_norm(const PhysicalGrid& grid, std::span<const double> u);
double mass(const PhysicalGrid& grid, std::span<const double> u);

/// Spectral solution of ∂_t u⁰ = Θ ∂²u⁰ on the periodic box.
class HomogenizedSolution {
 public:
  HomogenizedSolution(double theta, const PhysicalGrid& grid, std::span<const double> initial,
                      double tail_tol = 1e-10);
  ~HomogenizedSolution();
  HomogenizedSolution(const HomogenizedSolution&) = delete;
  HomogenizedSolution& operator=(const HomogenizedSolution&) = delete;

  double theta() const { return theta_; }
  const PhysicalGrid& grid() const { return grid_; }
  std::size_t modes() const { return spec_.size(); }
  double wavenumber(std::size_t j) const;
  const std::vector<std::complex<double>>& initial_spectrum() const { return spec_; }

  /// out_i = ∂^order u⁰(x_i - shift, t), order ≤ 3.
  void evaluate(double t, int order, double shift, std::span<double> out) const;

  /// Unnormalized real-to-complex transform of grid values.
  std::vector<std::complex<double>> forward(std::span<const double> values) const;
  /// Inverse of forward (includes the 1/N factor).
  void inverse(std::span<const std::complex<double>> spec, std::span<double> out) const;

 private:
  double theta_;
  PhysicalGrid grid_;
  std::vector<double> initial_;
  std::vector<std::complex<double>> spec_;
  void* fwd_ = nullptr;
  void* bwd_ = nullptr;
};

/// Explicit Euler u ← u + Δt (L^ε_k u + f) with Δt = ε² Δs.
class EpsilonStepper {
 public:
  EpsilonStepper(const EnvironmentModel& env, const GeneratorMatrix& gen, const PhysicalGrid& grid,
                 double ds);

  double dt() const { return dt_; }
  const RescaledOperator& op() const { return op_; }
  void step(int state, std::span<double> u, std::span<const double> forcing = {});

 private:
  RescaledOperator op_;
  double dt_;
  std::vector<double> lu_;
};

/// Number of steps of length ε² Δs covering [0, T]; throws ConfigError if not an integer.
std::size_t step_count(double horizon, double eps, double ds);

struct EpsilonOptions {
  double horizon = 0.5;
  double ds = 0.25;
  double tail_tolerance = 1e-6;
  std::vector<double> snapshot_times;
};

struct EpsilonRun {
  std::vector<SimulationField> snapshots;
  std::vector<double> mass;  ///< per step
  std::vector<double> l2;    ///< per step
  double max_l2_increase = 0.0;
  double dt = 0.0;
  std::size_t steps = 0;
};

/// Unforced ε-problem from u(·,0) = initial; states are the left-point driver states per step.
EpsilonRun solve_epsilon_problem(const EnvironmentModel& env, const GeneratorMatrix& gen,
                                 const PhysicalGrid& grid, std::span<const int> states,
                                 std::span<const double> initial, const EpsilonOptions& opt);

struct AssembleOptions {
  Mode mode = Mode::symmetric;
  double beta = 0.0;
  bool h6 = true;
  bool drop_chi1 = false;   ///< ablation: omit the corrector term
  bool drop_shift = false;  ///< ablation: evaluate u⁰ at x instead of x^ε
};

/// U^ε = ε^{-1}(u^ε - u⁰(x^ε)) - χ1(x/ε, t/ε²) ∂u⁰(x^ε) with x^ε = x - β t/ε.
std::vector<double> assemble_U_eps(std::span<const double> u_eps, const HomogenizedSolution& u0,
                                   std::span<const double> chi1, double t,
                                   const AssembleOptions& opt);

struct FluctuationProcess {
  std::vector<double> times;
  std::vector<double> values;  ///< κ^ε(t), d = 1
  double eps = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

struct KappaOptions {
  double eps = 0.1;
  double horizon = 1.0;
  double ds = 0.25;
  std::size_t burn_steps = 0;
  std::size_t lookahead = 0;
  Mode mode = Mode::symmetric;
  double theta_eff = 0.0;
  std::size_t record_every = 0;  ///< 0 records only the endpoints
};

/// κ^ε(t) = ε^{-1} ∫_0^t Θ̃(s/ε²) ds, with the fast clock started after burn_steps steps.
/// Between grid points the corrector is held and Θ is integrated exactly across driver jumps.
FluctuationProcess kappa_process(const GeneratorMatrix& gen, const DriverPath& path,
                                 const KappaOptions& opt);

/// Gaussian bump exp(-(x-c)²/(2w²)) used as a projection test function.
struct TestFunction {
  double center = 0.0;
  double width = 1.0;
  double operator()(double x) const;
};

double project(const PhysicalGrid& grid, std::span<const double> u, const TestFunction& phi,
               double shift = 0.0);

struct RealizationSetup {
  const EnvironmentModel* env = nullptr;
  const GeneratorMatrix* gen = nullptr;
  const HomogenizedSolution* u0 = nullptr;
  PhysicalGrid grid;
  Mode mode = Mode::symmetric;
  double eps = 0.1;
  double horizon = 0.5;
  double ds = 0.25;
  std::size_t burn_steps = 0;
  std::size_t lookahead = 0;
  double theta_eff = 0.0;
  double beta = 0.0;
  bool h6 = true;
  std::uint64_t seed = 1;
  std::vector<TestFunction> tests;
  double tail_tolerance = 1e-6;
  bool with_r1 = false;           ///< also evolve R^{ε,(1)}
  std::size_t error_samples = 0;  ///< time samples of ‖u^ε - u⁰ - εχ1∂u⁰‖ (0 disables)
  std::int64_t keep_replicate = -1;  ///< replicate whose fields and snapshots are returned
  std::vector<double> snapshot_times;
};

struct RealizationResult {
  std::uint64_t replicate = 0;
  double kappa = 0.0;  ///< κ^ε(T) from the grid Θ̃ values
  std::vector<double> proj;            ///< ⟨U^ε(T), φ⟩
  std::vector<double> proj_no_chi1;    ///< χ1 term omitted
  std::vector<double> proj_no_shift;   ///< u⁰ at x instead of x^ε
  double energy = 0.0;                 ///< ‖U^ε(T)‖²
  double energy_no_chi1 = 0.0;
  double energy_no_shift = 0.0;
  double error_l2 = 0.0;               ///< ‖u^ε - u⁰ - εχ1∂u⁰‖_{L²(box×(0,T))}
  std::vector<double> r1_proj;         ///< ⟨R^{ε,(1)}(T), φ⟩
  double r1_gap = 0.0;                 ///< ‖R^{ε,(1)}(T) - κ^ε(T)∂²u⁰(T)‖
  double mass_drift = 0.0;
  double tail = 0.0;
  std::vector<double> u_final;
  std::vector<double> U_final;
  std::vector<double> chi1_final;
  std::vector<SimulationField> snapshots;  ///< u^ε at the snapshot times
};

/// One full-scale realization on the driver path (seed, replicate).
RealizationResult run_realization(const RealizationSetup& setup, std::uint64_t replicate);

std::vector<RealizationResult> run_realizations(const RealizationSetup& setup,
                                                std::uint64_t first, std::size_t count,
                                                int workers);

/// Driver path and state grid used by a realization: burn-in, the ε-problem window and p lookahead.
struct RealizationPath {
  DriverPath path;
  StateGrid grid;
  std::size_t steps = 0;
};

RealizationPath realization_path(const RealizationSetup& setup, std::uint64_t replicate);

}  // namespace nlh
