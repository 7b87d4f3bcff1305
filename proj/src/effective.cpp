#include "nlh/effective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nlh {

CorrectorField local_flux_h(const GeneratorMatrix& gen, const StateGrid& grid,
                            const CorrectorField& chi1, std::span<const double> beta, Mode mode) {
  CorrectorField h("h", gen.points(), chi1.count, chi1.s0, chi1.ds);
  const std::size_t offset = static_cast<std::size_t>(std::llround((chi1.s0 - grid.s0) / grid.ds));
  for (std::size_t n = 0; n < chi1.count; ++n) {
    const double b = (mode == Mode::nonsymmetric && !beta.empty()) ? beta[n] : 0.0;
    flux_density(gen, grid.states[offset + n], chi1.at(n), b, h.at(n));
  }
  return h;
}

BatchStats batch_means(std::span<const double> x, int batches) {
  BatchStats out;
  const std::size_t n = x.size();
  if (n == 0) throw EstimationError("batch_means: empty series");
  out.mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  if (batches < 2 || n < static_cast<std::size_t>(batches)) return out;
  const std::size_t len = n / static_cast<std::size_t>(batches);
  double var = 0.0;
  for (int b = 0; b < batches; ++b) {
    const auto first = x.begin() + static_cast<std::ptrdiff_t>(b * len);
    const double m = std::accumulate(first, first + static_cast<std::ptrdiff_t>(len), 0.0) / static_cast<double>(len);
    out.batch_means.push_back(m);
  }
  const double bm = std::accumulate(out.batch_means.begin(), out.batch_means.end(), 0.0) / batches;
  for (double m : out.batch_means) var += (m - bm) * (m - bm);
  var /= (batches - 1);
  out.se = std::sqrt(var / batches);
  return out;
}

BatchStats theta_statistics(std::span<const double> theta, int batches) {
  if (theta.size() < static_cast<std::size_t>(batches) * 8)
    throw EstimationError("theta_statistics: production window too short for the batch count");
  return batch_means(theta, batches);
}

namespace {

// R̂(k) = (1/(n-k)) Σ x_i x_{i+k}, k = 0..kmax
std::vector<double> autocov(std::span<const double> x, std::size_t kmax) {
  const std::size_t n = x.size();
  std::vector<double> r(kmax + 1, 0.0);
  for (std::size_t k = 0; k <= kmax && k < n; ++k) {
    double acc = 0.0;
    const double* a = x.data();
    const double* b = x.data() + k;
    const std::size_t m = n - k;
    for (std::size_t i = 0; i < m; ++i) acc += a[i] * b[i];
    r[k] = acc / static_cast<double>(m);
  }
  return r;
}

double trapezoid_gk(const std::vector<double>& r, std::size_t kmax, double ds) {
  double acc = 0.5 * r[0];
  for (std::size_t k = 1; k < kmax; ++k) acc += r[k];
  if (kmax > 0) acc += 0.5 * r[kmax];
  return 2.0 * ds * acc;  // R̂ + R̂ᵀ in d = 1
}

}  // namespace

CovarianceEstimate fluctuation_covariance(std::span<const double> centered, double ds,
                                          double r_floor, int batches) {
  CovarianceEstimate out;
  const std::size_t n = centered.size();
  if (n < 64) throw EstimationError("fluctuation_covariance: series too short");
  std::size_t kfloor = static_cast<std::size_t>(std::ceil(r_floor / ds));
  kfloor = std::max<std::size_t>(kfloor, 1);
  if (kfloor * 8 > n) throw MixingError("fluctuation_covariance: truncation lag exceeds an eighth of the window");

  // Extend beyond the floor while the autocovariance is above twice the noise floor.
  std::size_t kcap = std::min(n / 8, kfloor * 4 + 16);
  std::vector<double> r = autocov(centered, kcap);
  const double noise = std::abs(r[0]) / std::sqrt(static_cast<double>(n));
  std::size_t knoise = 0;
  while (knoise < kcap && std::abs(r[knoise]) >= 2.0 * noise) ++knoise;
  const std::size_t kmax = std::max(kfloor, knoise);
  if (kmax >= kcap && std::abs(r[kcap]) >= 2.0 * noise && std::abs(r[kcap]) > 0.05 * std::abs(r[0]))
    throw MixingError("fluctuation_covariance: autocovariance not decayed at the truncation lag");
  r.resize(kmax + 1);
  out.r_max = static_cast<double>(kmax) * ds;
  out.autocovariance = r;
  out.c = Eigen::MatrixXd::Constant(1, 1, trapezoid_gk(r, kmax, ds));

  out.se = Eigen::MatrixXd::Zero(1, 1);
  const std::size_t len = n / static_cast<std::size_t>(std::max(batches, 1));
  if (batches >= 2 && len > 4 * kmax) {
    std::vector<double> cb;
    for (int b = 0; b < batches; ++b) {
      const auto sub = centered.subspan(static_cast<std::size_t>(b) * len, len);
      cb.push_back(trapezoid_gk(autocov(sub, kmax), kmax, ds));
    }
    const double m = std::accumulate(cb.begin(), cb.end(), 0.0) / batches;
    double v = 0.0;
    for (double x : cb) v += (x - m) * (x - m);
    out.se(0, 0) = std::sqrt(v / (batches - 1) / batches);
  }
  return out;
}

PsdRoot psd_sqrt(const Eigen::MatrixXd& c) {
  PsdRoot out;
  const Eigen::MatrixXd s = 0.5 * (c + c.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  Eigen::VectorXd lam = es.eigenvalues();
  const double trace = std::abs(s.trace());
  out.tol_neg = 1e-8 * trace;
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    if (lam(i) < 0.0) {
      if (lam(i) < -out.tol_neg) out.clipped_mass += -lam(i);
      lam(i) = 0.0;
    }
  }
  if (out.clipped_mass > 0.01 * trace)
    throw EstimationError("psd_sqrt: clipped negative mass exceeds 1% of the trace");
  out.a = es.eigenvectors() * lam.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  return out;
}

double default_burn_in(double gamma0, double ds) {
  if (!(gamma0 > 0.0)) throw NonConvergenceError("burn-in: corrector decay rate is not positive");
  return std::ceil(20.0 / gamma0 / ds) * ds;
}


EffectiveCoefficients compute_effective(const EnvironmentModel& env, const GeneratorMatrix& gen,
                                        const ErgodicOptions& opt) {
  require_valid(env);
  check_step(env, opt.ds);
  if (opt.mode == Mode::symmetric && !env.symmetric())
    throw ValidationError("symmetric mode requires an even kernel and symmetric fields");
  const int n = gen.points();
  const double ds = opt.ds;
  const bool nonsym = opt.mode == Mode::nonsymmetric;

  EffectiveCoefficients out;
  out.mode = opt.mode;
  out.ds = ds;

  // Pilot decay run on an independent stream.
  {
    const std::size_t steps = static_cast<std::size_t>(std::ceil(opt.pilot_horizon / ds));
    const DriverPath pilot = sample_path(env.driver(), (steps + 1) * ds, opt.seed, opt.stream + 0x9000);
    const DecayFit fit = estimate_decay(gen, sample_states(pilot, 0.0, ds, steps), opt.seed);
    out.gamma0 = fit.gamma;
    out.gamma0_r2 = fit.r2;
  }
  out.burn_in = opt.burn_in > 0.0 ? std::ceil(opt.burn_in / ds - 1e-9) * ds : default_burn_in(out.gamma0, ds);

  const std::size_t burn = static_cast<std::size_t>(std::llround(out.burn_in / ds));
  const std::size_t prod = static_cast<std::size_t>(std::llround(opt.production / ds));
  if (prod < static_cast<std::size_t>(opt.batches) * 8)
    throw EstimationError("compute_effective: production window too short");
  out.production = static_cast<double>(prod) * ds;
  const std::size_t look = nonsym ? burn : 0;
  const std::size_t total = 2 * burn + prod;  // χ evolves over steps 0..total-1
  const DriverPath path = sample_path(env.driver(), static_cast<double>(total + look + 1) * ds, opt.seed, opt.stream);
  const StateGrid grid = sample_states(path, 0.0, ds, total + std::max<std::size_t>(look, 1));

  const std::size_t keep = std::min(opt.keep_steps, prod);
  if (keep > 0) {
    out.window.s0 = grid.time(2 * burn);
    out.window.ds = ds;
    out.window.states.assign(grid.states.begin() + static_cast<std::ptrdiff_t>(2 * burn),
                             grid.states.begin() + static_cast<std::ptrdiff_t>(2 * burn + keep));
    out.chi1 = CorrectorField("chi1", n, keep + 1, out.window.s0, ds);
    out.chi2 = CorrectorField("chi2", n, keep + 1, out.window.s0, ds);
    out.chi1.normalization = out.chi2.normalization = nonsym ? Normalization::weighted_mean : Normalization::plain_mean;
    if (nonsym) out.p = CorrectorField("p", n, keep + 1, out.window.s0, ds);
  }

  SweepOptions so;
  so.mode = opt.mode;
  so.chi2_start = burn;
  so.lookahead = look;
  so.chi1_gauge = opt.chi1_gauge;
  so.chi2_gauge = opt.chi2_gauge;
  CorrectorSweep sweep(gen, grid, total, so);
  std::vector<double> hh(n);

  out.theta_series.reserve(prod);
  const int nb = opt.batches;
  const std::size_t blen = prod / static_cast<std::size_t>(nb);
  std::vector<double> b_hp(nb, 0.0), b_x1(nb, 0.0), b_x2(nb, 0.0), b_beta(nb, 0.0), b_theta(nb, 0.0);
  std::vector<std::size_t> b_cnt(nb, 0);
  double beta_sum = 0.0, beta_sq = 0.0;

  auto store = [&](std::size_t idx) {
    std::copy(sweep.chi1().begin(), sweep.chi1().end(), out.chi1.at(idx).begin());
    std::copy(sweep.chi2().begin(), sweep.chi2().end(), out.chi2.at(idx).begin());
    if (nonsym) std::copy(sweep.p().begin(), sweep.p().end(), out.p.at(idx).begin());
  };

  for (std::size_t s = 0; s < total; ++s) {
    if (s >= 2 * burn) {
      const std::size_t idx = s - 2 * burn;
      const auto wnext = sweep.p_next();
      const double beta = sweep.beta();
      const double theta = sweep.theta();
      sweep.drift(hh);
      const double hp = weighted_mean(hh, wnext);
      const double x1 = weighted_mean(sweep.chi1(), wnext);
      const double x2 = weighted_mean(sweep.chi2(), wnext);
      out.theta_series.push_back(theta);
      const std::size_t b = std::min<std::size_t>(idx / std::max<std::size_t>(blen, 1), nb - 1);
      b_hp[b] += hp;
      b_x1[b] += x1;
      b_x2[b] += x2;
      b_beta[b] += beta;
      b_theta[b] += theta;
      ++b_cnt[b];
      beta_sum += beta;
      beta_sq += beta * beta;
      if (keep > 0 && idx <= keep) store(idx);
    }
    sweep.advance();
  }
  if (keep > 0 && keep == prod) store(keep);
  out.max_mean_drift = sweep.mean_drift();

  const BatchStats ts = theta_statistics(out.theta_series, nb);
  out.theta = Eigen::MatrixXd::Constant(1, 1, ts.mean);
  out.theta_se = Eigen::MatrixXd::Constant(1, 1, ts.se);

  const double pn = static_cast<double>(prod);
  out.beta = beta_sum / pn;
  out.beta_std = std::sqrt(std::max(0.0, beta_sq / pn - out.beta * out.beta));
  out.h6 = out.beta_std <= 1e-8;

  // H^eff = ⟨H p⟩ − Θ^eff ⟨χ1 p⟩ + β ⟨χ2 p⟩, each averaged over the window.
  auto hsum = [&](std::size_t b) {
    const double c = static_cast<double>(b_cnt[b]);
    return (b_hp[b] - ts.mean * b_x1[b] + (b_beta[b] / c) * b_x2[b]) / c;
  };
  double hp_tot = 0.0, x1_tot = 0.0, x2_tot = 0.0;
  for (int b = 0; b < nb; ++b) {
    hp_tot += b_hp[b];
    x1_tot += b_x1[b];
    x2_tot += b_x2[b];
  }
  out.h = {hp_tot / pn - ts.mean * x1_tot / pn + out.beta * x2_tot / pn};
  {
    std::vector<double> hb(nb);
    for (int b = 0; b < nb; ++b) hb[b] = hsum(b);
    const double m = std::accumulate(hb.begin(), hb.end(), 0.0) / nb;
    double v = 0.0;
    for (double x : hb) v += (x - m) * (x - m);
    out.h_se = {std::sqrt(v / (nb - 1) / nb)};
  }

  std::vector<double> centered(out.theta_series.size());
  for (std::size_t i = 0; i < centered.size(); ++i) centered[i] = out.theta_series[i] - ts.mean;
  const double gap = env.driver().spectral_gap();
  double r_floor = 10.0 / out.gamma0;
  if (std::isfinite(gap)) r_floor = std::max(r_floor, 10.0 / gap);
  // A single-state driver is deterministic: Θ is constant up to corrector transients and C = 0.
  CovarianceEstimate cov;
  if (env.driver().states() == 1) {
    cov.c = Eigen::MatrixXd::Zero(1, 1);
    cov.se = Eigen::MatrixXd::Zero(1, 1);
  } else {
    cov = fluctuation_covariance(centered, ds, r_floor, nb);
  }
  out.c = cov.c;
  out.c_se = cov.se;
  out.autocovariance = cov.autocovariance;
  out.r_max = cov.r_max;
  const PsdRoot root = psd_sqrt(out.c);
  out.a = root.a;
  out.clipped_mass = root.clipped_mass;
  return out;
}

}  // namespace nlh
