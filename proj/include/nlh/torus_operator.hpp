#pragma once

#include <array>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "nlh/environment.hpp"

namespace nlh {

struct TorusGrid {
  int n = 0;
  double h = 0.0;
  explicit TorusGrid(int points) : n(points), h(1.0 / points) {}
  double xi(int i) const { return i * h; }
};

/// Node weights w_m = h a(m h), rescaled to unit mass, on the unwrapped offsets m_min..m_max.
/// The displacement attached to w_m is z_m = m h.
struct KernelStencil {
  int m_min = 0;
  int m_max = 0;
  double h = 0.0;
  std::vector<double> w;

  int size() const { return m_max - m_min + 1; }
  double weight(int m) const { return w[m - m_min]; }
  double z(int m) const { return m * h; }
};

KernelStencil make_stencil(const Kernel& kernel, const TorusGrid& grid);

/// ã(ζ) = Σ_m a(ζ + m) sampled on the torus grid.
struct PeriodizedKernel {
  std::vector<double> values;
  int shifts = 0;  ///< number of lattice shifts summed
};

PeriodizedKernel periodize_kernel(const Kernel& kernel, const TorusGrid& grid, double tol = 1e-14,
                                  int max_shifts = 64);

/// Per-state dense generators W_k, with the banded coefficient table used by the
/// local quadratures and the rescaled physical-grid operator.
class GeneratorMatrix {
 public:
  explicit GeneratorMatrix(const EnvironmentModel& env);

  int points() const { return n_; }
  int states() const { return static_cast<int>(w_.size()); }
  double step() const { return 1.0 / n_; }
  const KernelStencil& stencil() const { return stencil_; }
  const PeriodizedKernel& periodized() const { return per_; }

  const Eigen::MatrixXd& matrix(int k) const { return w_[k]; }
  /// D_k(i) = Σ_j W_k(i, j)
  const Eigen::VectorXd& row_sums(int k) const { return d_[k]; }
  const Eigen::VectorXd& col_sums(int k) const { return c_[k]; }
  double max_row_sum() const;

  /// out = L_k φ
  void apply(int k, std::span<const double> phi, std::span<double> out) const;
  /// out = L*_k p
  void apply_adjoint(int k, std::span<const double> p, std::span<double> out) const;

  /// coefficient(k, i, m) = w_m b_k(ξ_i, ξ_{i-m}); row r holds the offsets m_min..m_max.
  double coefficient(int k, int i, int m) const { return band_[k](i, m - stencil_.m_min); }
  const Eigen::MatrixXd& band(int k) const { return band_[k]; }

  /// Σ_m coefficient(k,i,m) z_m^p for p = 1, 2, 3.
  const Eigen::VectorXd& moment(int k, int p) const { return mom_[k][p - 1]; }

 private:
  int n_;
  KernelStencil stencil_;
  PeriodizedKernel per_;
  std::vector<Eigen::MatrixXd> w_;
  std::vector<Eigen::VectorXd> d_;
  std::vector<Eigen::VectorXd> c_;
  std::vector<Eigen::MatrixXd> band_;
  std::vector<std::array<Eigen::VectorXd, 3>> mom_;
};

/// Matrix-free L^ε on a periodic physical grid with spacing ε/N_t.
///
/// The node count must be a multiple of N_t and node i must sit at fast
/// coordinate i/N_t modulo 1. Holds scratch storage: use one instance per thread.
class RescaledOperator {
 public:
  RescaledOperator(const GeneratorMatrix& gen, double eps, std::size_t nodes);

  std::size_t nodes() const { return nodes_; }
  double eps() const { return eps_; }
  /// out = L^ε_k u
  void apply(int k, std::span<const double> u, std::span<double> out) const;

 private:
  const GeneratorMatrix* gen_;
  double eps_;
  std::size_t nodes_;
  int n_t_;
  int m_min_;
  int m_max_;
  std::vector<std::vector<double>> rev_;  // per state: n_t rows of reversed band coefficients
  mutable std::vector<double> ext_;
};

/// Reference (unbanded) evaluation of ε^{-2} Σ_j Δx ε^{-1} a((x_i-x_j)/ε) b(...)(u_j - u_i),
/// used as an independent check of RescaledOperator.
void rescaled_apply_reference(const EnvironmentModel& env, int k, double eps,
                              std::span<const double> u, std::span<double> out);

}  // namespace nlh
