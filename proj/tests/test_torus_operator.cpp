#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "helpers.hpp"
#include "nlh/torus_operator.hpp"

using namespace nlh;

namespace {

std::vector<double> random_vec(int n, unsigned seed) {
  std::mt19937 g(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(g);
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("periodized uniform kernel is constant") {
  const PeriodizedKernel p = periodize_kernel(Kernel::uniform(1.0), TorusGrid(32));
  CHECK(p.shifts == 3);  // 65 stencil offsets cover three periods
  for (double v : p.values) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("kernel inside the fundamental cell needs no wrap") {
  const Kernel k = Kernel::uniform(0.25);
  const TorusGrid g(64);
  const PeriodizedKernel p = periodize_kernel(k, g);
  const KernelStencil st = make_stencil(k, g);
  for (int m = st.m_min; m <= st.m_max; ++m) {
    const int r = ((m % g.n) + g.n) % g.n;
    CHECK(p.values[r] == doctest::Approx(st.weight(m) / g.h).epsilon(1e-14));
  }
}

TEST_CASE("periodized gaussian keeps unit mass") {
  const TorusGrid g(64);
  const PeriodizedKernel p = periodize_kernel(Kernel::truncated_gaussian(0.5, 6.0), g);
  double s = 0.0;
  for (double v : p.values) s += v * g.h;
  CHECK(std::abs(s - 1.0) <= 1e-10);
}

TEST_CASE("generator annihilates constants and matches the dense matrix") {
  const auto env = test::nonsymmetric_env();
  const GeneratorMatrix gen(env);
  const int n = gen.points();
  std::vector<double> one(n, 1.0), out(n);
  for (int k = 0; k < gen.states(); ++k) {
    gen.apply(k, one, out);
    CHECK(test::max_abs(out) == 0.0);
    const auto phi = random_vec(n, 10 + k);
    gen.apply(k, phi, out);
    Eigen::Map<const Eigen::VectorXd> p(phi.data(), n);
    const Eigen::VectorXd ref = gen.matrix(k) * p - gen.row_sums(k).cwiseProduct(p);
    for (int i = 0; i < n; ++i) CHECK(std::abs(out[i] - ref[i]) < 1e-12);
    // Column-sum identity of the dual flow.
    gen.apply_adjoint(k, phi, out);
    double s = 0.0;
    for (double v : out) s += v;
    CHECK(std::abs(s) / n < 1e-13);
    // Duality ⟨Lφ, ψ⟩ = ⟨φ, L*ψ⟩.
    const auto psi = random_vec(n, 20 + k);
    std::vector<double> lphi(n), lpsi(n);
    gen.apply(k, phi, lphi);
    gen.apply_adjoint(k, psi, lpsi);
    CHECK(std::abs(dot(lphi, psi) - dot(phi, lpsi)) < 1e-12);
  }
}

TEST_CASE("entrywise bounds and the explicit-Euler norm bound") {
  const auto env = test::default_env();
  const GeneratorMatrix gen(env);
  const int n = gen.points();
  const auto& per = gen.periodized().values;
  for (int k = 0; k < gen.states(); ++k) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double a = per[((i - j) % n + n) % n] / n;
        CHECK(gen.matrix(k)(i, j) >= 0.5 * a - 1e-15);
        CHECK(gen.matrix(k)(i, j) <= 1.5 * a + 1e-15);
      }
    CHECK(gen.row_sums(k).maxCoeff() + gen.col_sums(k).maxCoeff() <= 2.0 * 1.5 * (1.0 + 1e-12));
  }
}

TEST_CASE("symmetric generator is self-adjoint and conserves mass") {
  const auto env = test::default_env();
  const GeneratorMatrix gen(env);
  const int n = gen.points();
  for (int k = 0; k < gen.states(); ++k) {
    CHECK((gen.matrix(k) - gen.matrix(k).transpose()).cwiseAbs().maxCoeff() < 1e-15);
    for (int t = 0; t < 10; ++t) {
      const auto phi = random_vec(n, 100 + t), psi = random_vec(n, 200 + t);
      std::vector<double> a(n), b(n);
      gen.apply(k, phi, a);
      gen.apply(k, psi, b);
      CHECK(std::abs(dot(a, psi) - dot(phi, b)) < 1e-12);
      double s = 0.0;
      for (double v : a) s += v / n;
      CHECK(std::abs(s) < 1e-13);
    }
  }
}

TEST_CASE("constant coefficients: cosine is an eigenfunction with the discrete symbol") {
  const auto env = test::constant_env(64);
  const GeneratorMatrix gen(env);
  const int n = 64;
  const auto& per = gen.periodized().values;
  double symbol = 0.0;
  for (int r = 0; r < n; ++r) symbol += per[r] / n * std::cos(2.0 * std::numbers::pi * r / n);
  std::vector<double> c(n), out(n);
  for (int i = 0; i < n; ++i) c[i] = std::cos(2.0 * std::numbers::pi * i / n);
  gen.apply(0, c, out);
  for (int i = 0; i < n; ++i) CHECK(std::abs(out[i] - (symbol - 1.0) * c[i]) < 1e-13);
}

TEST_CASE("rescaled operator agrees with the unbanded reference") {
  const auto env = test::nonsymmetric_env(16);
  const GeneratorMatrix gen(env);
  const double eps = 0.25;
  const std::size_t nodes = 16 * 24;
  RescaledOperator op(gen, eps, nodes);
  const auto u = random_vec(static_cast<int>(nodes), 5);
  std::vector<double> a(nodes), b(nodes), one(nodes, 1.0);
  for (int k = 0; k < env.states(); ++k) {
    op.apply(k, u, a);
    rescaled_apply_reference(env, k, eps, u, b);
    for (std::size_t i = 0; i < nodes; ++i) CHECK(std::abs(a[i] - b[i]) < 1e-10 * (1.0 + std::abs(b[i])));
    op.apply(k, one, a);
    CHECK(test::max_abs(a) == 0.0);
  }
}

TEST_CASE("rescaled operator on plane waves: discrete symbol and Taylor limit") {
  const auto env = test::constant_env(32);
  const GeneratorMatrix gen(env);
  const KernelStencil& st = gen.stencil();
  auto run = [&](double eps) {
    // Box of length 2π·q commensurate with ε: L = nodes·ε/32.
    const std::size_t nodes = static_cast<std::size_t>(std::llround(2.0 * std::numbers::pi * 10.0 / eps)) * 32;
    const double len = static_cast<double>(nodes) * eps / 32.0;
    const double k = 2.0 * std::numbers::pi * std::round(len / (2.0 * std::numbers::pi)) / len;
    std::vector<double> u(nodes), out(nodes);
    for (std::size_t i = 0; i < nodes; ++i) u[i] = std::cos(k * i * eps / 32.0);
    RescaledOperator(gen, eps, nodes).apply(0, u, out);
    double sym = 0.0;
    for (int m = st.m_min; m <= st.m_max; ++m) sym += st.weight(m) * std::cos(eps * k * st.z(m));
    sym = (sym - 1.0) / (eps * eps);
    double err_sym = 0.0, err_taylor = 0.0, m2 = 0.0;
    for (int m = st.m_min; m <= st.m_max; ++m) m2 += st.weight(m) * st.z(m) * st.z(m);
    for (std::size_t i = 0; i < nodes; ++i) {
      err_sym = std::max(err_sym, std::abs(out[i] - sym * u[i]));
      err_taylor = std::max(err_taylor, std::abs(out[i] + 0.5 * m2 * k * k * u[i]));
    }
    CHECK(err_sym < 1e-12 / (eps * eps));
    return err_taylor;
  };
  const double e1 = run(0.2), e2 = run(0.1);
  CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.2));
}
