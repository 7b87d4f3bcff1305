#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nlh/environment.hpp"
#include "nlh/torus_operator.hpp"

namespace nlh {

/// Driver states sampled at the left end of each step of a uniform fast-time grid.
struct StateGrid {
  double s0 = 0.0;
  double ds = 0.0;
  std::vector<int> states;

  std::size_t size() const { return states.size(); }
  double time(std::size_t n) const { return s0 + static_cast<double>(n) * ds; }
};

StateGrid sample_states(const DriverPath& path, double s0, double ds, std::size_t count);

enum class Normalization { plain_mean, weighted_mean };

/// Torus function trajectory on the grid s_n = s0 + n ds, n = 0..count-1.
struct CorrectorField {
  std::string name;
  Normalization normalization = Normalization::plain_mean;
  double s0 = 0.0;
  double ds = 0.0;
  int points = 0;
  std::size_t count = 0;
  std::vector<double> data;

  CorrectorField() = default;
  CorrectorField(std::string label, int n, std::size_t steps, double start, double step);

  std::span<const double> at(std::size_t n) const {
    return {data.data() + n * static_cast<std::size_t>(points), static_cast<std::size_t>(points)};
  }
  std::span<double> at(std::size_t n) {
    return {data.data() + n * static_cast<std::size_t>(points), static_cast<std::size_t>(points)};
  }
  double time(std::size_t n) const { return s0 + static_cast<double>(n) * ds; }
};

/// Σ_i f_i p_i Δξ (or the plain cell average when p is empty).
double weighted_mean(std::span<const double> f, std::span<const double> p);

/// g_k(ξ_i) = -Σ_m w_m b_k(ξ_i, ξ_i - z_m) z_m
void drift_field_g(const GeneratorMatrix& gen, int k, std::span<double> out);

/// h(ξ) = Σ_m w_m b_k (½ z_m² − χ1(ξ − z_m) z_m) + β χ1(ξ)
void flux_density(const GeneratorMatrix& gen, int k, std::span<const double> chi1, double beta,
                  std::span<double> out);

/// H(ξ) = Σ_m w_m b_k (−z_m³/6 + ½ χ1(ξ − z_m) z_m² − χ2(ξ − z_m) z_m)
void drift_density(const GeneratorMatrix& gen, int k, std::span<const double> chi1,
                   std::span<const double> chi2, std::span<double> out);

enum class RhsKind { g, g_plus_beta, h_minus_theta, H_minus_avg, chi1_itself };

struct RhsInputs {
  const CorrectorField* chi1 = nullptr;
  const CorrectorField* chi2 = nullptr;
  /// Invariant density; must hold one more time point than the rhs trajectory. Empty means p ≡ 1.
  const CorrectorField* p = nullptr;
  std::span<const double> beta;
};

/// Right-hand side trajectory for the corrector of the given kind; one entry per step.
/// Throws SolvabilityError when a step is not p-weighted mean zero to 1e-8.
CorrectorField corrector_rhs(RhsKind kind, const GeneratorMatrix& gen, const StateGrid& grid,
                             const RhsInputs& in);

struct CorrectorSolve {
  CorrectorField field;      ///< window n = burn..count (inclusive)
  double mean_drift = 0.0;   ///< largest change of the weighted mean before renormalization
};

/// Explicit Euler χ^{n+1} = χ^n + Δs (L_{k_n} χ^n + rhs_n) from χ^0 = initial (default 0),
/// renormalized to zero (weighted) mean after each step.
CorrectorSolve solve_stationary_corrector(const GeneratorMatrix& gen, const StateGrid& grid,
                                          const CorrectorField& rhs, Normalization norm,
                                          const CorrectorField* p, std::size_t burn_steps,
                                          std::span<const double> initial = {});

/// Invariant density on n = 0..count, from the reversed-time recursion
/// p^n = p^{n+1} + Δs L*_{k_n} p^{n+1} started at 1 on step count + lookahead.
/// The grid must cover count + lookahead steps.
CorrectorField solve_invariant_density(const GeneratorMatrix& gen, const StateGrid& grid,
                                       std::size_t count, std::size_t lookahead);

struct BetaReport {
  std::vector<double> beta;
  double mean = 0.0;
  double std = 0.0;
  bool h6 = false;  ///< deterministic (std ≤ 1e-8)
};

/// β_n = Σ_i (Σ_m w_m b_k z_m)(ξ_i) p^{n+1}_i Δξ, with unwrapped displacements.
BetaReport compute_beta(const GeneratorMatrix& gen, const StateGrid& grid, const CorrectorField* p,
                        std::size_t count);

struct DecayFit {
  double gamma = 0.0;
  double r2 = 0.0;
  std::vector<double> times;
  std::vector<double> log_norms;
};

/// Difference of two χ1 runs from distinct initial data; the log-norm decay is fitted linearly.
DecayFit estimate_decay(const GeneratorMatrix& gen, const StateGrid& grid, std::uint64_t seed);

enum class Gauge { weighted, plain };

struct SweepOptions {
  Mode mode = Mode::symmetric;
  bool second = true;             ///< also evolve χ2
  std::size_t chi2_start = 0;     ///< step at which χ2 starts from zero
  std::size_t lookahead = 0;      ///< reversed-time burn-in for p beyond the last step
  Gauge chi1_gauge = Gauge::weighted;
  Gauge chi2_gauge = Gauge::weighted;
};

/// Streaming explicit-Euler evolution of χ1 (and χ2, p) along a state grid.
///
/// At index n the accessors expose χ1^n, χ2^n, p^n, p^{n+1}, β_n, the flux h_n and
/// Θ_n = ⟨h_n, p^{n+1}⟩; advance() moves to n + 1. In symmetric mode p ≡ 1 and is not stored.
class CorrectorSweep {
 public:
  CorrectorSweep(const GeneratorMatrix& gen, const StateGrid& grid, std::size_t total,
                 SweepOptions opt);

  std::size_t index() const { return n_; }
  int state() const { return grid_->states[n_]; }
  std::span<const double> chi1() const { return chi1_; }
  std::span<const double> chi2() const { return chi2_; }
  std::span<const double> p() const { return pcur_; }
  std::span<const double> p_next() const { return pnext_; }
  double beta() const { return beta_; }
  double theta() const { return theta_; }
  std::span<const double> flux() const { return h_; }
  bool chi2_active() const { return opt_.second && n_ >= opt_.chi2_start; }
  /// H_n on the torus grid.
  void drift(std::span<double> out) const;
  /// Θ for another state with the current χ1, used for sub-step integration.
  double theta_for_state(int k) const;
  /// Largest |weighted χ1 mean| seen before renormalization.
  double mean_drift() const { return mean_drift_; }
  void advance();

 private:
  std::span<const double> weight(std::size_t s) const;
  void prepare();

  const GeneratorMatrix* gen_;
  const StateGrid* grid_;
  std::size_t total_;
  SweepOptions opt_;
  int np_;
  std::size_t n_ = 0;
  std::vector<double> chi1_, chi2_, next_, lx_, h_, g_, pcur_, pnext_;
  double beta_ = 0.0;
  double theta_ = 0.0;
  double mean_drift_ = 0.0;
  mutable std::vector<double> pbuf_;
  mutable std::size_t chunk_a_ = 0;
  mutable std::size_t chunk_b_ = 0;
  mutable bool have_chunk_ = false;
};

/// Largest stable step: 0.9 / (2 Λ⁺).
double max_stable_step(const EnvironmentModel& env);
void check_step(const EnvironmentModel& env, double ds);

}  // namespace nlh
