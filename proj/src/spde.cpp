#include "nlh/spde.hpp"

#include <cmath>
#include <complex>

#include <boost/math/quadrature/gauss.hpp>

#include "nlh/parallel.hpp"

namespace nlh {

namespace {

using cplx = std::complex<double>;

void check_problem(const LimitProblem& p) {
  if (p.u0 == nullptr) throw DependencyError("limit problem: u⁰ is required");
  if (!(p.theta > 0.0)) throw DomainError("limit problem: Θ^eff must be positive");
  if (p.a < 0.0) throw DomainError("limit problem: A^eff must be non-negative");
  if (!(p.horizon > 0.0)) throw DomainError("limit problem: horizon must be positive");
}

// Σ_i f_i g_i for real fields given by their half spectra.
double pairing(const std::vector<cplx>& f, const std::vector<cplx>& g, std::size_t n) {
  const std::size_t m = f.size();
  double acc = (f[0] * std::conj(g[0])).real();
  for (std::size_t j = 1; j < m; ++j) {
    const double w = (n % 2 == 0 && j == m - 1) ? 1.0 : 2.0;
    acc += w * (f[j] * std::conj(g[j])).real();
  }
  return acc / static_cast<double>(n);
}

// (ik)^order û⁰(k, t)
std::vector<cplx> u0_spectrum(const HomogenizedSolution& u0, double theta, double t, int order) {
  const auto& s0 = u0.initial_spectrum();
  std::vector<cplx> out(s0.size());
  const cplx I(0.0, 1.0);
  for (std::size_t j = 0; j < s0.size(); ++j) {
    const double k = u0.wavenumber(j);
    cplx f = s0[j] * std::exp(-theta * k * k * t);
    for (int o = 0; o < order; ++o) f *= I * k;
    out[j] = f;
  }
  if (order % 2 == 1 && u0.grid().nodes % 2 == 0) out.back() = 0.0;
  return out;
}

}  // namespace

BrownianDriver make_brownian(std::size_t steps, double horizon, std::uint64_t seed,
                             std::uint64_t stream) {
  if (steps == 0 || !(horizon > 0.0)) throw ConfigError("Brownian driver: empty grid");
  BrownianDriver w;
  w.dt = horizon / static_cast<double>(steps);
  w.seed = seed;
  w.stream = stream;
  Rng rng = make_rng(seed, stream);
  const double sd = std::sqrt(w.dt);
  w.increments.resize(steps);
  for (double& x : w.increments) x = sd * standard_normal(rng);
  return w;
}

std::vector<double> sample_limit_solution(const LimitProblem& p, const BrownianDriver& w) {
  check_problem(p);
  const std::size_t steps = w.increments.size();
  if (std::abs(static_cast<double>(steps) * w.dt - p.horizon) > 1e-9 * p.horizon)
    throw ConfigError("limit solution: Brownian grid does not cover [0, T]");
  if (w.dt > p.horizon / 200.0 * (1.0 + 1e-12))
    throw ConfigError("limit solution: Δt must not exceed T/200");
  const HomogenizedSolution& u0 = *p.u0;
  if (std::abs(u0.theta() - p.theta) > 1e-15 * p.theta)
    throw DomainError("limit solution: u⁰ was built with a different Θ^eff");
  const std::size_t m = u0.modes();
  const auto& s0 = u0.initial_spectrum();
  const cplx I(0.0, 1.0);
  std::vector<double> decay(m);
  std::vector<cplx> d2(m), d3(m);
  for (std::size_t j = 0; j < m; ++j) {
    const double k = u0.wavenumber(j);
    decay[j] = std::exp(-p.theta * k * k * w.dt);
    d2[j] = -k * k * s0[j];
    d3[j] = -I * k * k * k * s0[j];
  }
  if (u0.grid().nodes % 2 == 0) d3[m - 1] = 0.0;
  std::vector<cplx> v(m, 0.0), heat(m, 1.0);  // heat = exp(-Θk² t_{n+1})
  for (std::size_t n = 0; n < steps; ++n) {
    const double dw = w.increments[n];
    for (std::size_t j = 0; j < m; ++j) {
      heat[j] *= decay[j];
      v[j] = decay[j] * v[j] + heat[j] * (p.a * dw * d2[j] + p.h * w.dt * d3[j]);
    }
  }
  std::vector<double> out(u0.grid().nodes);
  u0.inverse(v, out);
  return out;
}

std::vector<double> drift_solution(const LimitProblem& p, double t) {
  check_problem(p);
  std::vector<double> out(p.u0->grid().nodes);
  p.u0->evaluate(t, 3, 0.0, out);
  for (double& x : out) x *= p.h * t;
  return out;
}

ProjectionMoments projection_moments(const LimitProblem& p, const TestFunction& phi) {
  check_problem(p);
  const HomogenizedSolution& u0 = *p.u0;
  const PhysicalGrid& g = u0.grid();
  std::vector<double> pv(g.nodes);
  for (std::size_t i = 0; i < g.nodes; ++i) pv[i] = phi(g.x(i));
  const auto ph = u0.forward(pv);
  std::size_t top = 0;
  double amax = 0.0, atail = 0.0;
  for (std::size_t j = 0; j < ph.size(); ++j) amax = std::max(amax, std::abs(ph[j]));
  for (top = static_cast<std::size_t>(0.9 * static_cast<double>(ph.size() - 1)); top < ph.size(); ++top)
    atail = std::max(atail, std::abs(ph[top]));
  if (amax > 0.0 && atail > 1e-10 * amax)
    throw ResolutionError("projection_moments: test function not resolved on the box");

  ProjectionMoments out;
  out.mean = p.h * p.horizon * pairing(u0_spectrum(u0, p.theta, p.horizon, 3), ph, g.nodes) * g.dx;

  // ⟨S(T-s) A ∂²u⁰(s), φ⟩², integrated over s ∈ [0, T].
  auto integrand = [&](double s) {
    const auto d2 = u0_spectrum(u0, p.theta, s, 2);
    std::vector<cplx> prop(d2.size());
    for (std::size_t j = 0; j < d2.size(); ++j) {
      const double k = u0.wavenumber(j);
      prop[j] = d2[j] * std::exp(-p.theta * k * k * (p.horizon - s));
    }
    const double v = p.a * pairing(prop, ph, g.nodes) * g.dx;
    return v * v;
  };
  out.variance = boost::math::quadrature::gauss<double, 20>::integrate(integrand, 0.0, p.horizon);
  return out;
}

std::vector<std::vector<double>> sample_limit_projections(const LimitProblem& problem,
                                                          const std::vector<TestFunction>& tests,
                                                          std::size_t samples, std::size_t steps,
                                                          std::uint64_t seed, int workers) {
  check_problem(problem);
  const PhysicalGrid& g = problem.u0->grid();
  return run_indexed<std::vector<double>>(samples, workers, [&](std::size_t m) {
    const BrownianDriver w = make_brownian(steps, problem.horizon, seed, m);
    const std::vector<double> v = sample_limit_solution(problem, w);
    std::vector<double> row;
    for (const auto& phi : tests) row.push_back(project(g, v, phi));
    return row;
  });
}

}  // namespace nlh
