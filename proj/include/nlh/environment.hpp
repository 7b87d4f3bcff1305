#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nlh/common.hpp"

namespace nlh {

enum class KernelFamily { uniform, truncated_gaussian, tabulated };

/// Convolution kernel a on the real line (d = 1).
///
/// Values at a jump discontinuity are the mean of the one-sided limits, so that
/// node-based quadrature of a kernel with jumps on grid nodes keeps its mass.
class Kernel {
 public:
  static Kernel uniform(double half_width);
  static Kernel truncated_gaussian(double sigma, double cutoff_sigmas = 6.0);
  /// Piecewise-linear interpolant of the samples, zero outside [z.front(), z.back()],
  /// rescaled to unit mass.
  static Kernel tabulated(std::vector<double> z, std::vector<double> a);

  double operator()(double z) const;

  KernelFamily family() const { return family_; }
  int dimension() const { return 1; }
  double support_min() const { return zmin_; }
  double support_max() const { return zmax_; }
  /// Largest |z| in the support.
  double half_width() const;
  double sigma() const { return sigma_; }
  const std::vector<double>& table_z() const { return tz_; }
  const std::vector<double>& table_a() const { return ta_; }

  /// Points on which evenness and positivity are checked.
  std::vector<double> tabulation() const;
  bool even() const;

 private:
  KernelFamily family_ = KernelFamily::uniform;
  double zmin_ = -1.0;
  double zmax_ = 1.0;
  double sigma_ = 0.0;
  double scale_ = 0.5;
  std::vector<double> tz_;
  std::vector<double> ta_;
};

struct KernelMoments {
  double m0 = 0.0;  ///< ∫ a
  double m1 = 0.0;  ///< ∫ a |z|
  double m2 = 0.0;  ///< ∫ a |z|^2
  double m3 = 0.0;  ///< ∫ a |z|^3
  double mean = 0.0;
  Eigen::MatrixXd second;  ///< ∫ a z⊗z
};

KernelMoments kernel_moments(const Kernel& kernel);

/// Finite-state continuous-time Markov chain with generator Q (rows sum to zero).
class MarkovDriver {
 public:
  explicit MarkovDriver(Eigen::MatrixXd q);

  int states() const { return static_cast<int>(q_.rows()); }
  const Eigen::MatrixXd& generator() const { return q_; }
  const Eigen::VectorXd& stationary() const { return pi_; }
  /// Smallest decay rate among the non-zero eigenvalues of Q; +inf for a single state.
  double spectral_gap() const { return gap_; }
  /// Prefactor C in ρ(r) ≤ C e^{-λ_gap r}.
  double mixing_constant() const { return mixing_c_; }
  bool reversible() const { return reversible_; }
  double exit_rate(int k) const { return -q_(k, k); }

 private:
  Eigen::MatrixXd q_;
  Eigen::VectorXd pi_;
  double gap_ = 0.0;
  double mixing_c_ = 1.0;
  bool reversible_ = true;
};

/// Right-continuous piecewise-constant path: state states[i] on [times[i], times[i+1]).
struct DriverPath {
  std::vector<double> times;
  std::vector<int> states;
  double horizon = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;

  int state_at(double s) const;
  std::size_t jumps() const { return times.empty() ? 0 : times.size() - 1; }
};

DriverPath sample_path(const MarkovDriver& driver, double horizon, std::uint64_t seed,
                       std::uint64_t stream);

/// Coefficients of the built-in per-state field
/// b(ξ,η) = μ (1 + α c(ξ)c(η) + γ (c(ξ)+c(η)) + δ s(ξ)c(η) + σ c(ξ)),
/// with c(x) = cos 2π(x+φ), s(x) = sin 2π(x+φ).
struct FieldCoefficients {
  double mu = 1.0;
  double alpha = 0.0;
  double gamma = 0.0;
  double delta = 0.0;
  double phase = 0.0;
  double source = 0.0;  ///< σ: depends on the departure point only
};

double field_value(const FieldCoefficients& c, double xi, double eta);

class EnvironmentModel {
 public:
  using FieldFunction = std::function<double(int state, double xi, double eta)>;

  EnvironmentModel(Kernel kernel, MarkovDriver driver, int torus_points,
                   std::vector<Eigen::MatrixXd> fields, double lambda_min, double lambda_max);

  static EnvironmentModel from_coefficients(Kernel kernel, MarkovDriver driver, int torus_points,
                                            const std::vector<FieldCoefficients>& coeffs,
                                            double lambda_min, double lambda_max);
  static EnvironmentModel from_function(Kernel kernel, MarkovDriver driver, int torus_points,
                                        const FieldFunction& f, double lambda_min,
                                        double lambda_max);

  const Kernel& kernel() const { return kernel_; }
  const MarkovDriver& driver() const { return driver_; }
  int torus_points() const { return n_; }
  int states() const { return driver_.states(); }
  double torus_step() const { return 1.0 / n_; }
  const Eigen::MatrixXd& field(int k) const { return fields_[k]; }
  double field(int k, int i, int j) const { return fields_[k](i, j); }
  double lambda_min() const { return lmin_; }
  double lambda_max() const { return lmax_; }
  /// Pointwise symmetry of every b_k together with an even kernel.
  bool symmetric() const { return symmetric_; }
  bool fields_symmetric() const { return fields_symmetric_; }

 private:
  Kernel kernel_;
  MarkovDriver driver_;
  int n_;
  std::vector<Eigen::MatrixXd> fields_;
  double lmin_;
  double lmax_;
  bool symmetric_ = false;
  bool fields_symmetric_ = false;
};

double evaluate_lambda(const EnvironmentModel& env, const DriverPath& path, int i, int j,
                       double s);

enum class CheckStatus { pass, fail, deferred };

struct HypothesisReport {
  struct Item {
    std::string name;
    CheckStatus status = CheckStatus::pass;
    std::string detail;
  };
  std::vector<Item> items;
  double mixing_bound = 0.0;  ///< C / λ_gap

  const Item& get(const std::string& name) const;
  bool passed(const std::string& name) const { return get(name).status == CheckStatus::pass; }
  /// True when nothing failed.
  bool ok() const;
  std::string to_text() const;
};

HypothesisReport validate_hypotheses(const EnvironmentModel& env);

/// Throws ValidationError when a hard hypothesis (H1, H2, H3) fails.
void require_valid(const EnvironmentModel& env);

const char* to_string(CheckStatus s);

}  // namespace nlh
