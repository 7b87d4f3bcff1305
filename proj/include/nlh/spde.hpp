#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "nlh/fullscale.hpp"

namespace nlh {

/// dv = Θ ∂²v dt + A ∂²u⁰ dW + H ∂³u⁰ dt on the periodic box, v(0) = 0 (d = 1).
struct LimitProblem {
  double theta = 0.0;
  double a = 0.0;
  double h = 0.0;
  double horizon = 0.0;
  const HomogenizedSolution* u0 = nullptr;  ///< carries the box and Θ^eff used for u⁰
};

/// Brownian increments on a uniform grid of [0, T].
struct BrownianDriver {
  double dt = 0.0;
  std::vector<double> increments;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

BrownianDriver make_brownian(std::size_t steps, double horizon, std::uint64_t seed,
                             std::uint64_t stream);

/// v(·, T) by the exponential integrator: exact heat factor per Fourier mode, forcing
/// evaluated with u⁰ at the right end of each step.
std::vector<double> sample_limit_solution(const LimitProblem& problem, const BrownianDriver& w);

/// Drift-only solution H t ∂³u⁰(·, t).
std::vector<double> drift_solution(const LimitProblem& problem, double t);

struct ProjectionMoments {
  double mean = 0.0;
  double variance = 0.0;
};

/// Mean and Itô-isometry variance of ⟨v(T), φ⟩; the time integral uses Gauss-Legendre nodes.
ProjectionMoments projection_moments(const LimitProblem& problem, const TestFunction& phi);

/// M samples of ⟨v(T), φ_j⟩; row m is replicate m (Brownian stream m).
std::vector<std::vector<double>> sample_limit_projections(const LimitProblem& problem,
                                                          const std::vector<TestFunction>& tests,
                                                          std::size_t samples, std::size_t steps,
                                                          std::uint64_t seed, int workers);

}  // namespace nlh
