#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nlh/fullscale.hpp"

namespace nlh {

struct Check {
  std::string name;
  double statistic = 0.0;
  double lower = 0.0;  ///< acceptance interval for the statistic
  double upper = 0.0;
  bool pass = false;
  bool hard = false;   ///< failure aborts the verify stage with a nonzero exit code
  std::size_t samples = 0;
  std::string detail;
};

struct VerificationReport {
  std::vector<Check> checks;

  void add(Check c) { checks.push_back(std::move(c)); }
  void append(const VerificationReport& other);
  bool ok() const;
  bool hard_failure() const;
  const Check& get(const std::string& name) const;
  std::string to_json() const;
  std::string to_text() const;
};

// -- statistics helpers ------------------------------------------------------

double sample_mean(std::span<const double> x);
double sample_variance(std::span<const double> x);
double sample_skewness(std::span<const double> x);
double sample_excess_kurtosis(std::span<const double> x);
double normal_cdf(double z);

/// Asymptotic Kolmogorov tail probability P(D_n > d).
double kolmogorov_pvalue(double d, std::size_t n);

struct KsResult {
  double d = 0.0;
  double p = 1.0;
};

/// One-sample Kolmogorov-Smirnov test against N(mu, sigma²).
KsResult ks_test_normal(std::span<const double> x, double mu, double sigma);

/// Bootstrap standard error of the sample variance.
double bootstrap_variance_se(std::span<const double> x, int resamples, std::uint64_t seed);

// -- checks ------------------------------------------------------------------

/// Compares Var κ^ε(T) with T·C: 4 bootstrap standard errors, the ratio band
/// [0.8, 1.2], a KS normality test at 0.01 and a negative control with C doubled.
VerificationReport clt_report(std::span<const double> kappa, double c, double horizon,
                              std::uint64_t seed, const std::string& prefix = "clt");

struct OrderFit {
  double slope = 0.0;
  double r2 = 0.0;
};

/// Least-squares slope of log e against log ε.
OrderFit order_fit(std::span<const double> eps, std::span<const double> err);

struct MatchResult {
  double mean = 0.0;
  double mean_se = 0.0;
  double z = 0.0;
  double variance = 0.0;
  double var_ratio = 1.0;
  double ks_p = 1.0;
  bool mean_pass = false;
  bool var_pass = false;
  bool ks_pass = false;
  bool pass() const { return mean_pass && var_pass && ks_pass; }
};

/// z-test of the mean (|z| ≤ 3), variance ratio in [0.75, 1.33] and KS against N(mu, var) at 0.01.
MatchResult distribution_match(std::span<const double> samples, double mu, double var);

/// Adds the three tests of a distribution match to the report.
void add_match(VerificationReport& report, const std::string& name, const MatchResult& m,
               std::size_t samples);

/// Ratio of the sample mean of ‖U^ε(T)‖² to E‖v(T)‖², accepted in [0.75, 1.33].
double energy_ratio(std::span<const double> energies, double expected);

// -- expansion residual ------------------------------------------------------

struct ResidualTrajectory {
  double eps = 0.0;
  std::vector<double> times;
  std::vector<double> norms;  ///< ‖ρ(·, t)‖_{L²} / ε
  double max_norm = 0.0;
};

/// Residual of the two-corrector ansatz A = u⁰ + εχ1∂u⁰ + ε²χ2∂²u⁰ under the discrete
/// ε-scheme, after removing the Θ̃ forcing and the first-order drift terms:
///   ρ = D_t A - L^ε A + Θ̃ ∂²u⁰ - εχ1Θ^eff∂³u⁰ + s·εH ∂³u⁰ + εβχ2∂³u⁰,
/// where s = h_sign (+1 is the correct sign). Symmetric mode only.
ResidualTrajectory expansion_residual(const RealizationSetup& setup, std::uint64_t replicate,
                                      std::size_t samples = 20, double h_sign = 1.0);

// -- forced-problem decay checks ---------------------------------------------------

enum class DecayForcing {
  theta_indicator,    ///< θ(t/ε²) U with θ the centered indicator of one driver state
  ell_oscillation,    ///< ℓ(x/ε, t/ε²) U with ℓ = cos 2πξ minus its p-weighted mean
  ell_homogenization  ///< (1 + cos 2πξ) U, compared with the homogenized forced solution
};

struct ForcedRun {
  double eps = 0.0;
  double sup_l2 = 0.0;     ///< max_t ‖v(·, t)‖
  double hom_error = 0.0;  ///< ‖v(T) - w(T)‖ for ell_homogenization
};

/// Solves ∂_t v - L^ε v = forcing·U(x^ε, t), v(0) = 0, with U = u⁰.
ForcedRun forced_problem(const RealizationSetup& setup, std::uint64_t replicate,
                         DecayForcing kind, int indicator_state = 0);

/// Monotone decrease along the ladder within a relative slack (default 20%).
bool decreasing_within(std::span<const double> values, double slack = 0.2);

}  // namespace nlh
