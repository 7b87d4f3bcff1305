#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "nlh/corrector.hpp"

namespace nlh {

/// Local flux trajectory h(ξ, s_n) for a χ1 trajectory; β enters only in non-symmetric mode.
CorrectorField local_flux_h(const GeneratorMatrix& gen, const StateGrid& grid,
                            const CorrectorField& chi1, std::span<const double> beta, Mode mode);

struct BatchStats {
  double mean = 0.0;
  double se = 0.0;
  std::vector<double> batch_means;
};

/// Mean and batch-means standard error of a stationary series.
BatchStats batch_means(std::span<const double> x, int batches = 16);

/// Θ^eff and its standard error from the Θ(s_n) series (d = 1).
BatchStats theta_statistics(std::span<const double> theta, int batches = 16);

struct CovarianceEstimate {
  Eigen::MatrixXd c;
  Eigen::MatrixXd se;
  double r_max = 0.0;
  std::vector<double> autocovariance;  ///< R̂(r_k), k = 0..K
};

/// Green-Kubo C = ∫_0^{r_max} (R̂(r) + R̂(r)^T) dr by the trapezoid rule on the sample lags.
/// The series must already be centered. r_floor is the smallest admissible truncation.
CovarianceEstimate fluctuation_covariance(std::span<const double> centered, double ds,
                                          double r_floor, int batches = 16);

struct PsdRoot {
  Eigen::MatrixXd a;
  double clipped_mass = 0.0;
  double tol_neg = 0.0;
};

/// Symmetric square root of sym(C) by eigendecomposition; negative eigenvalues are clipped.
PsdRoot psd_sqrt(const Eigen::MatrixXd& c);

struct ErgodicOptions {
  Mode mode = Mode::symmetric;
  double ds = 0.25;
  double burn_in = 0.0;  ///< fast time; 0 selects 20/γ̂₀
  double production = 2000.0;
  int batches = 16;
  std::uint64_t seed = 1;
  std::uint64_t stream = 0;
  std::size_t keep_steps = 0;  ///< production steps of χ1, χ2, p retained for diagnostics
  double pilot_horizon = 400.0;
  Gauge chi1_gauge = Gauge::weighted;
  Gauge chi2_gauge = Gauge::weighted;
};

struct EffectiveCoefficients {
  Mode mode = Mode::symmetric;
  double ds = 0.0;
  double gamma0 = 0.0;
  double gamma0_r2 = 0.0;
  double burn_in = 0.0;
  double production = 0.0;

  Eigen::MatrixXd theta;
  Eigen::MatrixXd theta_se;
  std::vector<double> theta_series;

  double beta = 0.0;
  double beta_std = 0.0;
  bool h6 = true;

  Eigen::MatrixXd c;
  Eigen::MatrixXd c_se;
  Eigen::MatrixXd a;
  double r_max = 0.0;
  std::vector<double> autocovariance;  ///< R̂ at lags 0..r_max/Δs; empty for a single-state driver
  double clipped_mass = 0.0;

  std::vector<double> h;  ///< H^eff, d³ entries
  std::vector<double> h_se;

  double max_mean_drift = 0.0;  ///< weighted χ1 mean change per step before renormalization

  StateGrid window;  ///< states on the retained steps
  CorrectorField chi1;
  CorrectorField chi2;
  CorrectorField p;  ///< empty in symmetric mode (p ≡ 1)
};

/// Streams χ1, χ2 (and p) along one long driver path and returns the ergodic averages.
EffectiveCoefficients compute_effective(const EnvironmentModel& env, const GeneratorMatrix& gen,
                                        const ErgodicOptions& opt);

/// Burn-in from the pilot decay fit: 20/γ̂₀ rounded up to a whole step.
double default_burn_in(double gamma0, double ds);

}  // namespace nlh
