#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "nlh/environment.hpp"

using namespace nlh;

TEST_CASE("uniform kernel moments") {
  const KernelMoments m = kernel_moments(Kernel::uniform(1.0));
  CHECK(m.m0 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.m2 == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(m.m3 == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(std::abs(m.mean) < 1e-14);
  CHECK(Kernel::uniform(1.0).even());
}

TEST_CASE("truncated gaussian kernel is normalized") {
  const KernelMoments m = kernel_moments(Kernel::truncated_gaussian(0.5, 6.0));
  CHECK(std::abs(m.m0 - 1.0) <= 1e-10);
}

TEST_CASE("tabulated asymmetric kernel first moment against refined quadrature") {
  const int n = 2001;
  std::vector<double> z(n), a(n);
  for (int i = 0; i < n; ++i) {
    z[i] = 5.0 * i / (n - 1);
    a[i] = std::exp(-z[i]);
  }
  const Kernel k = Kernel::tabulated(z, a);
  CHECK_FALSE(k.even());
  // Oracle: composite Simpson with Richardson extrapolation of the piecewise-linear interpolant.
  auto quad = [&](int pieces) {
    double s0 = 0.0, s1 = 0.0;
    const double h = 5.0 / pieces;
    for (int i = 0; i <= pieces; ++i) {
      const double x = i * h;
      const double w = (i == 0 || i == pieces) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      s0 += w * k(x);
      s1 += w * x * k(x);
    }
    return std::pair{s0 * h / 3.0, s1 * h / 3.0};
  };
  const auto c = quad(64000), f = quad(128000);
  const double m0 = f.first + (f.first - c.first) / 15.0;
  const double m1 = f.second + (f.second - c.second) / 15.0;
  const KernelMoments m = kernel_moments(k);
  CHECK(std::abs(m0 - 1.0) < 1e-8);
  CHECK(std::abs(m.m1 - m1) < 1e-8);
  CHECK(std::abs(m.mean - m1) < 1e-8);
}

TEST_CASE("markov driver stationary law and spectral gap") {
  Eigen::MatrixXd q(3, 3);
  q << -1.0, 0.6, 0.4, 0.2, -0.5, 0.3, 0.5, 0.5, -1.0;
  const MarkovDriver d(q);
  const Eigen::VectorXd pi = d.stationary();
  CHECK(std::abs(pi.sum() - 1.0) < 1e-14);
  CHECK((pi.transpose() * q).norm() < 1e-12);
  // Oracle: dense eigenvalues of Q.
  Eigen::EigenSolver<Eigen::MatrixXd> es(q);
  double gap = INFINITY;
  for (int i = 0; i < 3; ++i) {
    const double re = -es.eigenvalues()[i].real();
    if (re > 1e-9) gap = std::min(gap, re);
  }
  CHECK(d.spectral_gap() == doctest::Approx(gap).epsilon(1e-8));
}

TEST_CASE("single-state path has no jumps") {
  const DriverPath p = sample_path(test::frozen(), 50.0, 3, 0);
  CHECK(p.jumps() == 0);
  CHECK(p.state_at(37.0) == 0);
}

TEST_CASE("two-state occupation and path determinism") {
  Eigen::MatrixXd q(2, 2);
  q << -1, 1, 1, -1;
  const MarkovDriver d(q);
  const DriverPath p = sample_path(d, 1000.0, 7, 0);
  double occ = 0.0;
  for (std::size_t i = 0; i + 1 <= p.jumps(); ++i) {
    const double end = i + 1 < p.times.size() ? p.times[i + 1] : p.horizon;
    if (p.states[i] == 0) occ += end - p.times[i];
  }
  if (p.states.back() == 0) occ += p.horizon - p.times.back();
  CHECK(std::abs(occ / 1000.0 - 0.5) <= 3.0 / std::sqrt(1000.0));

  const DriverPath r = sample_path(d, 1000.0, 7, 0);
  CHECK(r.times == p.times);
  CHECK(r.states == p.states);
  CHECK(sample_path(d, 1000.0, 7, 1).times != p.times);
}

TEST_CASE("indicator correlations decay with the spectral gap") {
  const MarkovDriver d = test::chain3(0.5);
  const DriverPath p = sample_path(d, 20000.0, 11, 0);
  const double gap = d.spectral_gap();
  const double dt = 0.5;
  const std::size_t n = static_cast<std::size_t>(20000.0 / dt);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = p.state_at(i * dt) == 0 ? 1.0 : 0.0;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  const std::size_t lag = static_cast<std::size_t>(std::ceil(5.0 / gap / dt));
  double cov = 0.0;
  for (std::size_t i = 0; i + lag < n; ++i) cov += (x[i] - mean) * (x[i + lag] - mean);
  cov /= (n - lag);
  const double corr = cov / var;
  // Effective sample size is reduced by the correlation time 1/gap.
  const double se = 1.0 / std::sqrt(n * dt * gap / 2.0);
  CHECK(corr <= std::exp(-gap * lag * dt / 2.0) + 4.0 * se);
}

TEST_CASE("path stationarity: first and second half occupations agree") {
  const DriverPath p = sample_path(test::chain3(), 8000.0, 5, 2);
  auto occ = [&](double a, double b) {
    double s = 0.0;
    const double dt = 0.25;
    int c = 0;
    for (double t = a; t < b; t += dt, ++c) s += p.state_at(t) == 1;
    return s / c;
  };
  const double se = std::sqrt(2.0 / 9.0 / (4000.0 * 3.0));
  CHECK(std::abs(occ(0, 4000) - occ(4000, 8000)) <= 5.0 * std::sqrt(2.0) * se);
}

TEST_CASE("evaluate_lambda lookups") {
  const auto c = test::constant_env();
  const DriverPath p0 = sample_path(c.driver(), 10.0, 1, 0);
  CHECK(evaluate_lambda(c, p0, 3, 17, 4.2) == 1.0);

  const auto env = test::default_env();
  const DriverPath p = sample_path(env.driver(), 100.0, 2, 0);
  REQUIRE(p.jumps() > 0);
  const double s = p.times[1] + 1e-9;
  const int k1 = p.states[1];
  CHECK(evaluate_lambda(env, p, 4, 9, s) == env.field(k1, 4, 9));
  CHECK(evaluate_lambda(env, p, 4, 9, s) == evaluate_lambda(env, p, 9, 4, s));
}

TEST_CASE("field bounds and symmetry flags") {
  const auto env = test::default_env();
  CHECK(env.symmetric());
  for (int k = 0; k < env.states(); ++k) {
    CHECK(env.field(k).minCoeff() >= 0.5);
    CHECK(env.field(k).maxCoeff() <= 1.5);
  }
  CHECK_FALSE(test::nonsymmetric_env().symmetric());
  CHECK_FALSE(EnvironmentModel::from_coefficients(Kernel::tabulated({0.0, 1.0}, {1.0, 1.0}), test::frozen(), 32,
                                                  {FieldCoefficients{}}, 0.5, 1.5)
                  .symmetric());
}

TEST_CASE("hypothesis validation") {
  const HypothesisReport ok = validate_hypotheses(test::constant_env());
  for (const char* h : {"H1", "H2", "H3", "H5"}) CHECK(ok.passed(h));

  const auto bad = EnvironmentModel::from_function(Kernel::uniform(1.0), test::frozen(), 16,
                                                   [](int, double xi, double) { return xi < 0.5 ? 1.0 : 0.0; }, 0.0, 1.5);
  const HypothesisReport r = validate_hypotheses(bad);
  CHECK_FALSE(r.passed("H2"));
  CHECK(r.get("H2").detail.find("(") != std::string::npos);
  CHECK_THROWS_AS(require_valid(bad), ValidationError);

  const auto env = test::default_env();
  const HypothesisReport d = validate_hypotheses(env);
  const MarkovDriver& drv = env.driver();
  CHECK(d.mixing_bound == doctest::Approx(drv.mixing_constant() / drv.spectral_gap()).epsilon(1e-8));
  Eigen::EigenSolver<Eigen::MatrixXd> es(drv.generator());
  double gap = INFINITY;
  for (int i = 0; i < 3; ++i)
    if (-es.eigenvalues()[i].real() > 1e-9) gap = std::min(gap, -es.eigenvalues()[i].real());
  CHECK(drv.spectral_gap() == doctest::Approx(gap).epsilon(1e-8));
}
