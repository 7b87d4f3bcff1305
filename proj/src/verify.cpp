#include "nlh/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include <json.hpp>

namespace nlh {

void VerificationReport::append(const VerificationReport& other) {
  checks.insert(checks.end(), other.checks.begin(), other.checks.end());
}

bool VerificationReport::ok() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

bool VerificationReport::hard_failure() const {
  return std::any_of(checks.begin(), checks.end(), [](const Check& c) { return c.hard && !c.pass; });
}

const Check& VerificationReport::get(const std::string& name) const {
  for (const auto& c : checks)
    if (c.name == name) return c;
  throw DomainError("verification report: no check named " + name);
}

std::string VerificationReport::to_json() const {
  nlohmann::ordered_json j;
  j["ok"] = ok();
  auto& arr = j["checks"] = nlohmann::ordered_json::array();
  for (const auto& c : checks) {
    nlohmann::ordered_json e;
    e["name"] = c.name;
    e["pass"] = c.pass;
    e["hard"] = c.hard;
    e["statistic"] = c.statistic;
    e["lower"] = c.lower;
    e["upper"] = c.upper;
    e["samples"] = c.samples;
    e["detail"] = c.detail;
    arr.push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

std::string VerificationReport::to_text() const {
  std::ostringstream os;
  char buf[160];
  for (const auto& c : checks) {
    std::snprintf(buf, sizeof buf, "%s %-40s %12.5g in [%.4g, %.4g]", c.pass ? "PASS" : "FAIL",
                  c.name.c_str(), c.statistic, c.lower, c.upper);
    os << buf;
    if (!c.detail.empty()) os << "  " << c.detail;
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------

double sample_mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v;
  return acc / static_cast<double>(x.size());
}

double sample_variance(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = sample_mean(x);
  double acc = 0.0;
  for (double v : x) acc += (v - m) * (v - m);
  return acc / static_cast<double>(x.size() - 1);
}

namespace {

double central_moment(std::span<const double> x, int k) {
  const double m = sample_mean(x);
  double acc = 0.0;
  for (double v : x) acc += std::pow(v - m, k);
  return acc / static_cast<double>(x.size());
}

}  // namespace

double sample_skewness(std::span<const double> x) {
  const double m2 = central_moment(x, 2);
  return m2 > 0.0 ? central_moment(x, 3) / std::pow(m2, 1.5) : 0.0;
}

double sample_excess_kurtosis(std::span<const double> x) {
  const double m2 = central_moment(x, 2);
  return m2 > 0.0 ? central_moment(x, 4) / (m2 * m2) - 3.0 : 0.0;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double kolmogorov_pvalue(double d, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  if (lambda < 0.2) return 1.0;
  double acc = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    acc += (j % 2 == 1 ? 1.0 : -1.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(2.0 * acc, 0.0, 1.0);
}

KsResult ks_test_normal(std::span<const double> x, double mu, double sigma) {
  KsResult r;
  if (x.empty() || !(sigma > 0.0)) return r;
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double f = normal_cdf((s[i] - mu) / sigma);
    r.d = std::max({r.d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  r.p = kolmogorov_pvalue(r.d, s.size());
  return r;
}

double bootstrap_variance_se(std::span<const double> x, int resamples, std::uint64_t seed) {
  if (x.size() < 2) return 0.0;
  Rng rng = make_rng(seed, 0xB0075u);
  std::vector<double> r(x.size()), stats(resamples);
  for (int b = 0; b < resamples; ++b) {
    for (double& v : r) v = x[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(x.size()))];
    stats[b] = sample_variance(r);
  }
  return std::sqrt(sample_variance(stats));
}

// ---------------------------------------------------------------------------

VerificationReport clt_report(std::span<const double> kappa, double c, double horizon,
                              std::uint64_t seed, const std::string& prefix) {
  if (kappa.size() < 100) throw DomainError("clt_report: at least 100 samples are required");
  VerificationReport rep;
  const std::size_t m = kappa.size();
  const double var = sample_variance(kappa);
  const double expected = horizon * c;
  const double se = bootstrap_variance_se(kappa, 2000, seed);
  const double scale = std::max(std::abs(expected), std::abs(var));

  if (scale <= 1e-24) {
    for (const char* n : {".covariance", ".ratio", ".normality", ".negative_control"})
      rep.add({prefix + n, 0.0, 0.0, 0.0, true, false, m, "degenerate: C = 0 and no fluctuations"});
    return rep;
  }
  if (std::abs(expected) <= 1e-24) {
    rep.add({prefix + ".covariance", var, 0.0, 0.0, false, true, m,
             "C = 0 but the empirical variance is non-zero"});
    return rep;
  }
  const double z = se > 0.0 ? (var - expected) / se : 0.0;
  rep.add({prefix + ".covariance", z, -4.0, 4.0, std::abs(z) <= 4.0, false, m,
           "(Var κ - T C) / bootstrap se"});
  const double ratio = var / expected;
  rep.add({prefix + ".ratio", ratio, 0.8, 1.2, ratio >= 0.8 && ratio <= 1.2, false, m,
           "Var κ / (T C)"});
  const KsResult ks = ks_test_normal(kappa, sample_mean(kappa), std::sqrt(var));
  rep.add({prefix + ".normality", ks.p, 0.01, 1.0, ks.p >= 0.01, false, m, "KS p-value"});
  const double zneg = se > 0.0 ? (var - 2.0 * expected) / se : 0.0;
  rep.add({prefix + ".negative_control", zneg, -4.0, 4.0, std::abs(zneg) > 4.0, false, m,
           "covariance test against 2 T C must reject"});
  return rep;
}

OrderFit order_fit(std::span<const double> eps, std::span<const double> err) {
  if (eps.size() != err.size() || eps.size() < 3)
    throw DomainError("order_fit: needs at least three (ε, e) pairs");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    if (!(eps[i] > 0.0) || !(err[i] > 0.0)) throw DomainError("order_fit: errors must be positive");
    lx.push_back(std::log(eps[i]));
    ly.push_back(std::log(err[i]));
  }
  const double mx = sample_mean(lx), my = sample_mean(ly);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  OrderFit f;
  f.slope = sxy / sxx;
  f.r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  return f;
}

MatchResult distribution_match(std::span<const double> samples, double mu, double var) {
  MatchResult r;
  const std::size_t m = samples.size();
  r.mean = sample_mean(samples);
  r.variance = sample_variance(samples);
  r.mean_se = std::sqrt(r.variance / static_cast<double>(m));
  const double scale = std::max({std::abs(var), r.variance, mu * mu, r.mean * r.mean});
  if (scale <= 1e-24) {
    r.mean_pass = r.var_pass = r.ks_pass = true;
    return r;
  }
  r.z = r.mean_se > 0.0 ? (r.mean - mu) / r.mean_se : (r.mean == mu ? 0.0 : INFINITY);
  r.mean_pass = std::abs(r.z) <= 3.0;
  r.var_ratio = var > 0.0 ? r.variance / var : INFINITY;
  r.var_pass = r.var_ratio >= 0.75 && r.var_ratio <= 1.33;
  if (var > 0.0) {
    r.ks_p = ks_test_normal(samples, mu, std::sqrt(var)).p;
    r.ks_pass = r.ks_p >= 0.01;
  } else {
    r.ks_p = 0.0;
    r.ks_pass = false;
  }
  return r;
}

void add_match(VerificationReport& report, const std::string& name, const MatchResult& m,
               std::size_t samples) {
  report.add({name + ".mean_z", m.z, -3.0, 3.0, m.mean_pass, false, samples, "(mean - SPDE mean) / se"});
  report.add({name + ".var_ratio", m.var_ratio, 0.75, 1.33, m.var_pass, false, samples,
              "sample variance / Itô variance"});
  report.add({name + ".ks", m.ks_p, 0.01, 1.0, m.ks_pass, false, samples, "KS p-value against the SPDE law"});
}

double energy_ratio(std::span<const double> energies, double expected) {
  if (!(expected > 0.0)) throw DomainError("energy_ratio: expected energy must be positive");
  return sample_mean(energies) / expected;
}

// ---------------------------------------------------------------------------

ResidualTrajectory expansion_residual(const RealizationSetup& s, std::uint64_t replicate,
                                      std::size_t samples, double h_sign) {
  if (s.mode != Mode::symmetric) throw DomainError("expansion_residual: symmetric mode only");
  if (s.env == nullptr || s.gen == nullptr || s.u0 == nullptr)
    throw DependencyError("expansion_residual: environment, generator and u⁰ are required");
  const PhysicalGrid& g = s.grid;
  const HomogenizedSolution& u0 = *s.u0;
  const double eps = s.eps;

  // χ1 is stationary after burn_steps; χ2 starts there and gets another burn_steps.
  RealizationSetup s2 = s;
  s2.burn_steps = 2 * s.burn_steps;
  const RealizationPath rp = realization_path(s2, replicate);
  const std::size_t steps = rp.steps;
  SweepOptions so;
  so.mode = s.mode;
  so.second = true;
  so.chi2_start = s.burn_steps;
  so.lookahead = s.lookahead;
  CorrectorSweep sweep(*s.gen, rp.grid, s2.burn_steps + steps, so);
  for (std::size_t n = 0; n < s2.burn_steps; ++n) sweep.advance();

  const int nt = g.n_t;
  RescaledOperator op(*s.gen, eps, g.nodes);
  const double dt = eps * eps * s.ds;
  const std::size_t stride = std::max<std::size_t>(1, steps / std::max<std::size_t>(samples, 1));
  std::vector<double> f0(g.nodes), f1(g.nodes), f2(g.nodes), f3(g.nodes), a0(g.nodes), la(g.nodes),
      h(nt), c1(nt), c2(nt);

  ResidualTrajectory out;
  out.eps = eps;
  for (std::size_t n = 0; n < steps; ++n) {
    if (n % stride != 0) {
      sweep.advance();
      continue;
    }
    const double t = static_cast<double>(n) * dt;
    const int k = sweep.state();
    const double tilde = sweep.theta() - s.theta_eff;
    sweep.drift(h);
    std::copy(sweep.chi1().begin(), sweep.chi1().end(), c1.begin());
    std::copy(sweep.chi2().begin(), sweep.chi2().end(), c2.begin());
    u0.evaluate(t, 0, 0.0, f0);
    u0.evaluate(t, 1, 0.0, f1);
    u0.evaluate(t, 2, 0.0, f2);
    u0.evaluate(t, 3, 0.0, f3);
    for (std::size_t i = 0; i < g.nodes; ++i) {
      const int fi = g.fast_index(i);
      a0[i] = f0[i] + eps * c1[fi] * f1[i] + eps * eps * c2[fi] * f2[i];
    }
    op.apply(k, a0, la);
    std::vector<double> rho(g.nodes);
    for (std::size_t i = 0; i < g.nodes; ++i)
      rho[i] = -la[i] + tilde * f2[i] + h_sign * eps * h[g.fast_index(i)] * f3[i];
    std::vector<double> f3n = f3;

    sweep.advance();
    const auto n1 = sweep.chi1();
    const auto n2 = sweep.chi2();
    const double t1 = static_cast<double>(n + 1) * dt;
    u0.evaluate(t1, 0, 0.0, f0);
    u0.evaluate(t1, 1, 0.0, f1);
    u0.evaluate(t1, 2, 0.0, f2);
    for (std::size_t i = 0; i < g.nodes; ++i) {
      const int fi = g.fast_index(i);
      const double a1 = f0[i] + eps * n1[fi] * f1[i] + eps * eps * n2[fi] * f2[i];
      rho[i] += (a1 - a0[i]) / dt - eps * n1[fi] * s.theta_eff * f3n[i] + eps * s.beta * n2[fi] * f3n[i];
    }
    const double norm = l2_norm(g, rho) / eps;
    out.times.push_back(t);
    out.norms.push_back(norm);
    out.max_norm = std::max(out.max_norm, norm);
  }
  return out;
}

// ---------------------------------------------------------------------------

ForcedRun forced_problem(const RealizationSetup& s, std::uint64_t replicate, DecayForcing kind,
                         int indicator_state) {
  if (s.env == nullptr || s.gen == nullptr || s.u0 == nullptr)
    throw DependencyError("forced_problem: environment, generator and u⁰ are required");
  const PhysicalGrid& g = s.grid;
  const HomogenizedSolution& u0 = *s.u0;
  const int nt = g.n_t;
  if (indicator_state < 0 || indicator_state >= s.env->states())
    throw DomainError("forced_problem: indicator state out of range");
  const RealizationPath rp = realization_path(s, replicate);
  const std::size_t steps = rp.steps;
  const bool nonsym = s.mode == Mode::nonsymmetric;
  const double vel = nonsym ? s.beta / s.eps : 0.0;

  SweepOptions so;
  so.mode = s.mode;
  so.second = false;
  so.lookahead = s.lookahead;
  CorrectorSweep sweep(*s.gen, rp.grid, s.burn_steps + steps, so);
  for (std::size_t n = 0; n < s.burn_steps; ++n) sweep.advance();

  std::vector<double> cosv(nt), ell(nt);
  for (int i = 0; i < nt; ++i) cosv[i] = std::cos(2.0 * std::numbers::pi * i / nt);
  const double pik = s.env->driver().stationary()(indicator_state);

  EpsilonStepper stepper(*s.env, *s.gen, g, s.ds);
  const double dt = stepper.dt();
  std::vector<double> v(g.nodes, 0.0), uu(g.nodes), f(g.nodes);
  ForcedRun out;
  out.eps = s.eps;
  double mean_sum = 0.0;
  for (std::size_t n = 0; n < steps; ++n) {
    const double t = static_cast<double>(n) * dt;
    u0.evaluate(t, 0, vel * t, uu);
    const auto pn = sweep.p_next();
    switch (kind) {
      case DecayForcing::theta_indicator: {
        const double th = (sweep.state() == indicator_state ? 1.0 : 0.0) - pik;
        for (std::size_t i = 0; i < g.nodes; ++i) f[i] = th * uu[i];
        break;
      }
      case DecayForcing::ell_oscillation: {
        const double m = weighted_mean(cosv, pn);
        for (int i = 0; i < nt; ++i) ell[i] = cosv[i] - m;
        for (std::size_t i = 0; i < g.nodes; ++i) f[i] = ell[g.fast_index(i)] * uu[i];
        break;
      }
      case DecayForcing::ell_homogenization: {
        for (int i = 0; i < nt; ++i) ell[i] = 1.0 + cosv[i];
        mean_sum += weighted_mean(ell, pn);
        for (std::size_t i = 0; i < g.nodes; ++i) f[i] = ell[g.fast_index(i)] * uu[i];
        break;
      }
    }
    stepper.step(sweep.state(), v, f);
    sweep.advance();
    out.sup_l2 = std::max(out.sup_l2, l2_norm(g, v));
  }
  if (kind == DecayForcing::ell_homogenization) {
    // w = m̄ t u⁰(x^ε, t) solves ∂_t w = Θ ∂²w + m̄ u⁰(x^ε, t) in the moving frame.
    const double T = static_cast<double>(steps) * dt;
    const double mbar = mean_sum / static_cast<double>(steps);
    u0.evaluate(T, 0, vel * T, uu);
    for (std::size_t i = 0; i < g.nodes; ++i) f[i] = v[i] - mbar * T * uu[i];
    out.hom_error = l2_norm(g, f);
  }
  return out;
}

bool decreasing_within(std::span<const double> values, double slack) {
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[i - 1] * (1.0 + slack)) return false;
  return true;
}

}  // namespace nlh
