#include "nlh/environment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <queue>
#include <sstream>

#include <boost/math/special_functions/gamma.hpp>

namespace nlh {

double standard_normal(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double exponential(Rng& rng, double rate) {
  return -std::log(1.0 - uniform01(rng)) / rate;
}

// ---------------------------------------------------------------------------
// Kernel

Kernel Kernel::uniform(double half_width) {
  if (!(half_width > 0.0)) throw ConfigError("uniform kernel: half_width must be positive");
  Kernel k;
  k.family_ = KernelFamily::uniform;
  k.zmin_ = -half_width;
  k.zmax_ = half_width;
  k.scale_ = 0.5 / half_width;
  return k;
}

Kernel Kernel::truncated_gaussian(double sigma, double cutoff_sigmas) {
  if (!(sigma > 0.0) || !(cutoff_sigmas > 0.0))
    throw ConfigError("truncated gaussian kernel: sigma and cutoff must be positive");
  Kernel k;
  k.family_ = KernelFamily::truncated_gaussian;
  k.sigma_ = sigma;
  k.zmax_ = cutoff_sigmas * sigma;
  k.zmin_ = -k.zmax_;
  k.scale_ = 1.0 / (sigma * std::sqrt(2.0 * std::numbers::pi) *
                    std::erf(cutoff_sigmas / std::numbers::sqrt2));
  return k;
}

Kernel Kernel::tabulated(std::vector<double> z, std::vector<double> a) {
  if (z.size() != a.size() || z.size() < 2)
    throw ConfigError("tabulated kernel: need at least two (z, a) samples of equal length");
  for (std::size_t i = 1; i < z.size(); ++i)
    if (!(z[i] > z[i - 1])) throw ConfigError("tabulated kernel: z must be strictly increasing");
  for (double v : a)
    if (v < 0.0) throw ValidationError("tabulated kernel: negative kernel value");
  double mass = 0.0;
  for (std::size_t i = 1; i < z.size(); ++i) mass += 0.5 * (a[i] + a[i - 1]) * (z[i] - z[i - 1]);
  if (!(mass > 0.0)) throw ValidationError("tabulated kernel: zero mass");
  for (double& v : a) v /= mass;
  Kernel k;
  k.family_ = KernelFamily::tabulated;
  k.zmin_ = z.front();
  k.zmax_ = z.back();
  k.tz_ = std::move(z);
  k.ta_ = std::move(a);
  return k;
}

double Kernel::half_width() const { return std::max(std::abs(zmin_), std::abs(zmax_)); }

double Kernel::operator()(double z) const {
  switch (family_) {
    case KernelFamily::uniform: {
      const double r = zmax_;
      const double az = std::abs(z);
      if (az < r) return scale_;
      if (az == r) return 0.5 * scale_;
      return 0.0;
    }
    case KernelFamily::truncated_gaussian: {
      const double az = std::abs(z);
      if (az > zmax_) return 0.0;
      const double v = scale_ * std::exp(-0.5 * z * z / (sigma_ * sigma_));
      return az == zmax_ ? 0.5 * v : v;
    }
    case KernelFamily::tabulated: {
      if (z < zmin_ || z > zmax_) return 0.0;
      auto it = std::upper_bound(tz_.begin(), tz_.end(), z);
      if (it == tz_.end()) return ta_.back();
      const std::size_t i = static_cast<std::size_t>(it - tz_.begin());
      if (i == 0) return ta_.front();
      const double t = (z - tz_[i - 1]) / (tz_[i] - tz_[i - 1]);
      return (1.0 - t) * ta_[i - 1] + t * ta_[i];
    }
  }
  return 0.0;
}

std::vector<double> Kernel::tabulation() const {
  if (family_ == KernelFamily::tabulated) return tz_;
  const int n = 4001;
  std::vector<double> z(n);
  for (int i = 0; i < n; ++i) z[i] = zmin_ + (zmax_ - zmin_) * i / (n - 1);
  return z;
}

bool Kernel::even() const {
  double worst = 0.0;
  for (double z : tabulation()) worst = std::max(worst, std::abs((*this)(z) - (*this)(-z)));
  return worst <= 1e-12;
}

namespace {

// ∫_{z0}^{z1} z^k (c0 + c1 z) dz
double poly_segment(int k, double z0, double z1, double c0, double c1) {
  const double p1 = std::pow(z1, k + 1) - std::pow(z0, k + 1);
  const double p2 = std::pow(z1, k + 2) - std::pow(z0, k + 2);
  return c0 * p1 / (k + 1) + c1 * p2 / (k + 2);
}

// ∫ |z|^k a and ∫ z a for a piecewise-linear table, exact per segment.
void tabulated_moments(const std::vector<double>& z, const std::vector<double>& a, double m[4],
                       double& mean) {
  for (int k = 0; k < 4; ++k) m[k] = 0.0;
  mean = 0.0;
  for (std::size_t i = 1; i < z.size(); ++i) {
    const double z0 = z[i - 1];
    const double z1 = z[i];
    const double c1 = (a[i] - a[i - 1]) / (z1 - z0);
    const double c0 = a[i - 1] - c1 * z0;
    // Split at the origin so that |z|^k is a polynomial on each piece.
    std::vector<std::pair<double, double>> pieces;
    if (z0 < 0.0 && z1 > 0.0) {
      pieces = {{z0, 0.0}, {0.0, z1}};
    } else {
      pieces = {{z0, z1}};
    }
    for (auto [lo, hi] : pieces) {
      const double sign = (lo + hi) < 0.0 ? -1.0 : 1.0;
      for (int k = 0; k < 4; ++k) m[k] += std::pow(sign, k) * poly_segment(k, lo, hi, c0, c1);
      mean += poly_segment(1, lo, hi, c0, c1);
    }
  }
}

}  // namespace

KernelMoments kernel_moments(const Kernel& kernel) {
  KernelMoments out;
  double m[4] = {0, 0, 0, 0};
  switch (kernel.family()) {
    case KernelFamily::uniform: {
      const double r = kernel.support_max();
      for (int k = 0; k < 4; ++k) m[k] = std::pow(r, k) / (k + 1);
      out.mean = 0.0;
      break;
    }
    case KernelFamily::truncated_gaussian: {
      const double s = kernel.sigma();
      const double r = kernel.support_max();
      const double c = kernel(0.0);
      const double x = r * r / (2.0 * s * s);
      for (int k = 0; k < 4; ++k) {
        const double ak = 0.5 * (k + 1);
        m[k] = c * std::pow(2.0 * s * s, ak) * boost::math::tgamma_lower(ak, x);
      }
      out.mean = 0.0;
      break;
    }
    case KernelFamily::tabulated: {
      tabulated_moments(kernel.table_z(), kernel.table_a(), m, out.mean);
      for (double v : kernel.table_a())
        if (v < 0.0) throw ValidationError("kernel_moments: negative kernel value");
      break;
    }
  }
  out.m0 = m[0];
  out.m1 = m[1];
  out.m2 = m[2];
  out.m3 = m[3];
  out.second = Eigen::MatrixXd::Constant(1, 1, m[2]);
  return out;
}

// ---------------------------------------------------------------------------
// Markov driver

MarkovDriver::MarkovDriver(Eigen::MatrixXd q) : q_(std::move(q)) {
  const Eigen::Index k = q_.rows();
  if (k < 1 || q_.cols() != k) throw ConfigError("driver: generator must be a non-empty square matrix");
  const double scale = std::max(1.0, q_.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j)
      if (i != j && q_(i, j) < 0.0) throw ConfigError("driver: negative off-diagonal rate");
    if (std::abs(q_.row(i).sum()) > 1e-10 * scale) throw ConfigError("driver: generator rows must sum to zero");
  }
  // Irreducibility: every state reaches every other along positive rates.
  for (Eigen::Index src = 0; src < k; ++src) {
    std::vector<bool> seen(k, false);
    std::queue<Eigen::Index> todo;
    todo.push(src);
    seen[src] = true;
    while (!todo.empty()) {
      const auto i = todo.front();
      todo.pop();
      for (Eigen::Index j = 0; j < k; ++j)
        if (!seen[j] && q_(i, j) > 0.0) {
          seen[j] = true;
          todo.push(j);
        }
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end())
      throw ConfigError("driver: generator is not irreducible");
  }

  Eigen::MatrixXd a = q_.transpose();
  a.row(k - 1).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k);
  rhs(k - 1) = 1.0;
  pi_ = a.fullPivLu().solve(rhs);
  if (pi_.minCoeff() <= 0.0) throw ConfigError("driver: stationary law is not positive");

  if (k == 1) {
    gap_ = std::numeric_limits<double>::infinity();
    mixing_c_ = 1.0;
    reversible_ = true;
    return;
  }
  Eigen::EigenSolver<Eigen::MatrixXd> es(q_);
  const Eigen::VectorXcd ev = es.eigenvalues();
  Eigen::Index zero = 0;
  for (Eigen::Index i = 1; i < k; ++i)
    if (std::abs(ev(i)) < std::abs(ev(zero))) zero = i;
  gap_ = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < k; ++i)
    if (i != zero) gap_ = std::min(gap_, -ev(i).real());
  if (!(gap_ > 0.0)) throw ConfigError("driver: spectral gap is not positive");

  reversible_ = true;
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j)
      if (std::abs(pi_(i) * q_(i, j) - pi_(j) * q_(j, i)) > 1e-12 * scale) reversible_ = false;
  if (reversible_) {
    mixing_c_ = 1.0;
  } else {
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(es.eigenvectors());
    const auto& sv = svd.singularValues();
    mixing_c_ = sv(0) / sv(sv.size() - 1);
  }
}

int DriverPath::state_at(double s) const {
  if (s < 0.0 || s > horizon) throw DomainError("driver path: time outside the path horizon");
  auto it = std::upper_bound(times.begin(), times.end(), s);
  return states[static_cast<std::size_t>(it - times.begin()) - 1];
}

DriverPath sample_path(const MarkovDriver& driver, double horizon, std::uint64_t seed,
                       std::uint64_t stream) {
  if (!(horizon > 0.0)) throw DomainError("sample_path: horizon must be positive");
  Rng rng = make_rng(seed, stream);
  DriverPath path;
  path.horizon = horizon;
  path.seed = seed;
  path.stream = stream;
  const auto& pi = driver.stationary();
  const auto& q = driver.generator();
  const int k = driver.states();

  auto draw = [&](auto&& weight, double total) {
    double u = uniform01(rng) * total;
    int last = -1;
    for (int j = 0; j < k; ++j) {
      const double w = weight(j);
      if (w <= 0.0) continue;
      last = j;
      if (u < w) return j;
      u -= w;
    }
    return last;
  };

  int state = draw([&](int j) { return pi(j); }, 1.0);
  double t = 0.0;
  path.times.push_back(0.0);
  path.states.push_back(state);
  while (true) {
    const double rate = driver.exit_rate(state);
    if (rate <= 0.0) break;
    t += exponential(rng, rate);
    if (t >= horizon) break;
    const int from = state;
    state = draw([&](int j) { return j == from ? 0.0 : q(from, j); }, rate);
    path.times.push_back(t);
    path.states.push_back(state);
  }
  return path;
}

// ---------------------------------------------------------------------------
// Environment model

double field_value(const FieldCoefficients& c, double xi, double eta) {
  const double tau = 2.0 * std::numbers::pi;
  const double cx = std::cos(tau * (xi + c.phase));
  const double cy = std::cos(tau * (eta + c.phase));
  const double sx = std::sin(tau * (xi + c.phase));
  return c.mu * (1.0 + c.alpha * cx * cy + c.gamma * (cx + cy) + c.delta * sx * cy + c.source * cx);
}

EnvironmentModel::EnvironmentModel(Kernel kernel, MarkovDriver driver, int torus_points,
                                   std::vector<Eigen::MatrixXd> fields, double lambda_min,
                                   double lambda_max)
    : kernel_(std::move(kernel)),
      driver_(std::move(driver)),
      n_(torus_points),
      fields_(std::move(fields)),
      lmin_(lambda_min),
      lmax_(lambda_max) {
  if (n_ < 4) throw ConfigError("environment: torus.points must be at least 4");
  if (static_cast<int>(fields_.size()) != driver_.states())
    throw ConfigError("environment: one field per driver state is required");
  for (const auto& f : fields_)
    if (f.rows() != n_ || f.cols() != n_) throw ConfigError("environment: field shape mismatch");
  fields_symmetric_ = true;
  for (const auto& f : fields_)
    if ((f - f.transpose()).cwiseAbs().maxCoeff() > 1e-12) fields_symmetric_ = false;
  symmetric_ = fields_symmetric_ && kernel_.even();
}

EnvironmentModel EnvironmentModel::from_function(Kernel kernel, MarkovDriver driver,
                                                 int torus_points, const FieldFunction& f,
                                                 double lambda_min, double lambda_max) {
  std::vector<Eigen::MatrixXd> fields;
  const double h = 1.0 / torus_points;
  for (int k = 0; k < driver.states(); ++k) {
    Eigen::MatrixXd b(torus_points, torus_points);
    for (int i = 0; i < torus_points; ++i)
      for (int j = 0; j < torus_points; ++j) b(i, j) = f(k, i * h, j * h);
    fields.push_back(std::move(b));
  }
  return EnvironmentModel(std::move(kernel), std::move(driver), torus_points, std::move(fields),
                          lambda_min, lambda_max);
}

EnvironmentModel EnvironmentModel::from_coefficients(Kernel kernel, MarkovDriver driver,
                                                     int torus_points,
                                                     const std::vector<FieldCoefficients>& coeffs,
                                                     double lambda_min, double lambda_max) {
  if (static_cast<int>(coeffs.size()) != driver.states())
    throw ConfigError("environment: one coefficient set per driver state is required");
  return from_function(
      std::move(kernel), std::move(driver), torus_points,
      [&](int k, double x, double y) { return field_value(coeffs[k], x, y); }, lambda_min,
      lambda_max);
}

double evaluate_lambda(const EnvironmentModel& env, const DriverPath& path, int i, int j,
                       double s) {
  const int n = env.torus_points();
  if (i < 0 || j < 0 || i >= n || j >= n) throw DomainError("evaluate_lambda: grid index out of range");
  return env.field(path.state_at(s), i, j);
}

// ---------------------------------------------------------------------------
// Hypotheses

const char* to_string(CheckStatus s) {
  switch (s) {
    case CheckStatus::pass: return "pass";
    case CheckStatus::fail: return "fail";
    case CheckStatus::deferred: return "deferred";
  }
  return "?";
}

const HypothesisReport::Item& HypothesisReport::get(const std::string& name) const {
  for (const auto& it : items)
    if (it.name == name) return it;
  throw DomainError("hypothesis report: unknown item " + name);
}

bool HypothesisReport::ok() const {
  return std::none_of(items.begin(), items.end(),
                      [](const Item& i) { return i.status == CheckStatus::fail; });
}

std::string HypothesisReport::to_text() const {
  std::ostringstream os;
  for (const auto& it : items) os << it.name << ": " << to_string(it.status) << "  " << it.detail << "\n";
  return os.str();
}

HypothesisReport validate_hypotheses(const EnvironmentModel& env) {
  HypothesisReport rep;
  std::ostringstream os;

  {
    HypothesisReport::Item it{"H1", CheckStatus::pass, ""};
    const Kernel& a = env.kernel();
    double amin = 0.0;
    for (double z : a.tabulation()) amin = std::min(amin, a(z));
    try {
      const auto m = kernel_moments(a);
      os.str("");
      os << "M0=" << m.m0 << " M3=" << m.m3;
      it.detail = os.str();
      if (amin < 0.0 || std::abs(m.m0 - 1.0) > 1e-10 || !std::isfinite(m.m3)) it.status = CheckStatus::fail;
    } catch (const Error& e) {
      it.status = CheckStatus::fail;
      it.detail = e.what();
    }
    rep.items.push_back(it);
  }

  {
    HypothesisReport::Item it{"H2", CheckStatus::pass, ""};
    os.str("");
    os << "bounds [" << env.lambda_min() << ", " << env.lambda_max() << "]";
    if (!(env.lambda_min() > 0.0)) {
      it.status = CheckStatus::fail;
      os << "; lower bound must be positive";
    }
    for (int k = 0; k < env.states() && it.status == CheckStatus::pass; ++k)
      for (int i = 0; i < env.torus_points() && it.status == CheckStatus::pass; ++i)
        for (int j = 0; j < env.torus_points(); ++j) {
          const double v = env.field(k, i, j);
          if (v < env.lambda_min() || v > env.lambda_max() || !(v > 0.0)) {
            it.status = CheckStatus::fail;
            os << "; state " << k << " pair (" << i << "," << j << ") value " << v;
            break;
          }
        }
    if (it.status == CheckStatus::fail && !(env.lambda_min() > 0.0) && os.str().find("pair") == std::string::npos) {
      // Report the pair attaining the minimum as the offender.
      int bk = 0, bi = 0, bj = 0;
      double best = env.field(0, 0, 0);
      for (int k = 0; k < env.states(); ++k)
        for (int i = 0; i < env.torus_points(); ++i)
          for (int j = 0; j < env.torus_points(); ++j)
            if (env.field(k, i, j) < best) {
              best = env.field(k, i, j);
              bk = k;
              bi = i;
              bj = j;
            }
      os << "; state " << bk << " pair (" << bi << "," << bj << ") value " << best;
    }
    it.detail = os.str();
    rep.items.push_back(it);
  }

  {
    HypothesisReport::Item it{"H3", CheckStatus::pass, ""};
    const auto& d = env.driver();
    rep.mixing_bound = std::isinf(d.spectral_gap()) ? 0.0 : d.mixing_constant() / d.spectral_gap();
    os.str("");
    os << "gap=" << d.spectral_gap() << " C=" << d.mixing_constant() << " bound=" << rep.mixing_bound;
    it.detail = os.str();
    if (!(d.spectral_gap() > 0.0)) it.status = CheckStatus::fail;
    rep.items.push_back(it);
  }

  rep.items.push_back({"H4", CheckStatus::pass, "Gaussian initial datum"});

  {
    HypothesisReport::Item it{"H5", env.symmetric() ? CheckStatus::pass : CheckStatus::fail, ""};
    it.detail = std::string("kernel even=") + (env.kernel().even() ? "yes" : "no") +
                " fields symmetric=" + (env.fields_symmetric() ? "yes" : "no");
    rep.items.push_back(it);
  }

  rep.items.push_back({"H6", CheckStatus::deferred, "checked by compute_beta"});
  return rep;
}

void require_valid(const EnvironmentModel& env) {
  const auto rep = validate_hypotheses(env);
  for (const char* h : {"H1", "H2", "H3"})
    if (!rep.passed(h)) throw ValidationError(std::string("hypothesis ") + h + " fails: " + rep.get(h).detail);
}

}  // namespace nlh
