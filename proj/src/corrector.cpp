#include "nlh/corrector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nlh {

StateGrid sample_states(const DriverPath& path, double s0, double ds, std::size_t count) {
  if (!(ds > 0.0)) throw DomainError("sample_states: ds must be positive");
  const double end = s0 + static_cast<double>(count) * ds;
  if (s0 < 0.0 || end > path.horizon * (1.0 + 1e-12) + 1e-12)
    throw DomainError("sample_states: grid extends beyond the path horizon");
  StateGrid g;
  g.s0 = s0;
  g.ds = ds;
  g.states.resize(count);
  std::size_t seg = 0;
  for (std::size_t n = 0; n < count; ++n) {
    const double s = s0 + static_cast<double>(n) * ds;
    while (seg + 1 < path.times.size() && path.times[seg + 1] <= s) ++seg;
    g.states[n] = path.states[seg];
  }
  return g;
}

CorrectorField::CorrectorField(std::string label, int n, std::size_t steps, double start,
                               double step)
    : name(std::move(label)),
      s0(start),
      ds(step),
      points(n),
      count(steps),
      data(steps * static_cast<std::size_t>(n), 0.0) {}

double weighted_mean(std::span<const double> f, std::span<const double> p) {
  const double h = 1.0 / static_cast<double>(f.size());
  double acc = 0.0;
  if (p.empty()) {
    for (double v : f) acc += v;
  } else {
    for (std::size_t i = 0; i < f.size(); ++i) acc += f[i] * p[i];
  }
  return acc * h;
}

void drift_field_g(const GeneratorMatrix& gen, int k, std::span<double> out) {
  const auto& m1 = gen.moment(k, 1);
  for (int i = 0; i < gen.points(); ++i) out[i] = -m1(i);
}

namespace {

// Σ_m band(i,m) z_m^p f[(i-m) mod n] for each i.
template <int P>
inline double shifted_sum(const GeneratorMatrix& gen, int k, int i, std::span<const double> f) {
  const auto& st = gen.stencil();
  const int n = gen.points();
  const double* row = gen.band(k).data();
  const Eigen::Index ld = gen.band(k).rows();
  int j = ((i - st.m_min) % n + n) % n;
  double acc = 0.0;
  for (int m = st.m_min; m <= st.m_max; ++m) {
    const double z = m * st.h;
    double zp = z;
    if constexpr (P == 2) zp = z * z;
    acc += row[i + static_cast<Eigen::Index>(m - st.m_min) * ld] * zp * f[j];
    if (--j < 0) j = n - 1;
  }
  return acc;
}

}  // namespace

void flux_density(const GeneratorMatrix& gen, int k, std::span<const double> chi1, double beta,
                  std::span<double> out) {
  const auto& m2 = gen.moment(k, 2);
  for (int i = 0; i < gen.points(); ++i)
    out[i] = 0.5 * m2(i) - shifted_sum<1>(gen, k, i, chi1) + beta * chi1[i];
}

void drift_density(const GeneratorMatrix& gen, int k, std::span<const double> chi1,
                   std::span<const double> chi2, std::span<double> out) {
  const auto& m3 = gen.moment(k, 3);
  for (int i = 0; i < gen.points(); ++i)
    out[i] = -m3(i) / 6.0 + 0.5 * shifted_sum<2>(gen, k, i, chi1) - shifted_sum<1>(gen, k, i, chi2);
}

namespace {

std::span<const double> weight_at(const CorrectorField* p, std::size_t n) {
  if (p == nullptr) return {};
  if (n >= p->count) throw DomainError("invariant density trajectory too short");
  return p->at(n);
}

}  // namespace

CorrectorField corrector_rhs(RhsKind kind, const GeneratorMatrix& gen, const StateGrid& grid,
                             const RhsInputs& in) {
  const int n = gen.points();
  std::size_t count = grid.size();
  auto need = [&](const CorrectorField* f, const char* what) {
    if (f == nullptr) throw DependencyError(std::string("corrector_rhs: missing input ") + what);
    count = std::min(count, f->count);
  };
  switch (kind) {
    case RhsKind::g: break;
    case RhsKind::g_plus_beta:
      if (in.beta.size() < count) count = in.beta.size();
      break;
    case RhsKind::h_minus_theta:
      need(in.chi1, "chi1");
      break;
    case RhsKind::H_minus_avg:
      need(in.chi1, "chi1");
      need(in.chi2, "chi2");
      break;
    case RhsKind::chi1_itself:
      need(in.chi1, "chi1");
      break;
  }
  const char* names[] = {"g", "g_plus_beta", "h_minus_theta", "H_minus_avg", "chi1_itself"};
  CorrectorField rhs(names[static_cast<int>(kind)], n, count, grid.s0, grid.ds);
  std::vector<double> tmp(n);
  for (std::size_t s = 0; s < count; ++s) {
    const int k = grid.states[s];
    auto out = rhs.at(s);
    const auto w = weight_at(in.p, s + 1);
    const double beta = in.beta.empty() ? 0.0 : in.beta[s];
    switch (kind) {
      case RhsKind::g:
        drift_field_g(gen, k, out);
        break;
      case RhsKind::g_plus_beta:
        drift_field_g(gen, k, out);
        for (double& v : out) v += beta;
        break;
      case RhsKind::h_minus_theta: {
        flux_density(gen, k, in.chi1->at(s), beta, out);
        const double theta = weighted_mean(out, w);
        for (double& v : out) v -= theta;
        break;
      }
      case RhsKind::H_minus_avg: {
        drift_density(gen, k, in.chi1->at(s), in.chi2->at(s), out);
        const double avg = weighted_mean(out, w);
        for (double& v : out) v -= avg;
        break;
      }
      case RhsKind::chi1_itself: {
        std::copy(in.chi1->at(s).begin(), in.chi1->at(s).end(), out.begin());
        const double avg = weighted_mean(out, w);
        for (double& v : out) v -= avg;
        break;
      }
    }
    const double compat = weighted_mean(out, w);
    if (std::abs(compat) > 1e-8)
      throw SolvabilityError("corrector_rhs: right-hand side is not mean zero at step " +
                             std::to_string(s));
  }
  return rhs;
}

double max_stable_step(const EnvironmentModel& env) { return 0.9 / (2.0 * env.lambda_max()); }

void check_step(const EnvironmentModel& env, double ds) {
  if (!(ds > 0.0) || ds > max_stable_step(env) * (1.0 + 1e-12))
    throw StepSizeError("time step " + std::to_string(ds) + " exceeds the stability bound " +
                        std::to_string(max_stable_step(env)));
}

CorrectorSolve solve_stationary_corrector(const GeneratorMatrix& gen, const StateGrid& grid,
                                          const CorrectorField& rhs, Normalization norm,
                                          const CorrectorField* p, std::size_t burn_steps,
                                          std::span<const double> initial) {
  const int n = gen.points();
  const std::size_t steps = std::min(grid.size(), rhs.count);
  if (burn_steps > steps) throw DomainError("solve_stationary_corrector: burn-in longer than the grid");
  if (norm == Normalization::weighted_mean && p == nullptr)
    throw DependencyError("solve_stationary_corrector: weighted normalization needs p");
  if (grid.ds * gen.max_row_sum() >= 0.5)
    throw StepSizeError("solve_stationary_corrector: step violates the explicit Euler bound");

  std::vector<double> chi(n, 0.0), next(n), lchi(n);
  if (!initial.empty()) std::copy(initial.begin(), initial.end(), chi.begin());
  const CorrectorField* wp = norm == Normalization::weighted_mean ? p : nullptr;
  {
    const double m0 = weighted_mean(chi, weight_at(wp, 0));
    for (double& v : chi) v -= m0;
  }

  CorrectorSolve out;
  out.field = CorrectorField(rhs.name == "g" || rhs.name == "g_plus_beta" ? "chi1" : "chi", n,
                             steps - burn_steps + 1, grid.time(burn_steps), grid.ds);
  out.field.normalization = norm;
  if (burn_steps == 0) std::copy(chi.begin(), chi.end(), out.field.at(0).begin());

  double prev_mean = 0.0;
  for (std::size_t s = 0; s < steps; ++s) {
    const int k = grid.states[s];
    gen.apply(k, chi, lchi);
    const auto r = rhs.at(s);
    for (int i = 0; i < n; ++i) next[i] = chi[i] + grid.ds * (lchi[i] + r[i]);
    const double m = weighted_mean(next, weight_at(wp, s + 1));
    if (!std::isfinite(m)) throw NonConvergenceError("solve_stationary_corrector: non-finite iterate");
    if (s >= burn_steps) out.mean_drift = std::max(out.mean_drift, std::abs(m - prev_mean));
    for (int i = 0; i < n; ++i) chi[i] = next[i] - m;
    prev_mean = 0.0;
    if (s + 1 >= burn_steps) std::copy(chi.begin(), chi.end(), out.field.at(s + 1 - burn_steps).begin());
  }
  return out;
}

CorrectorField solve_invariant_density(const GeneratorMatrix& gen, const StateGrid& grid,
                                       std::size_t count, std::size_t lookahead) {
  const int n = gen.points();
  if (count + lookahead > grid.size())
    throw DomainError("solve_invariant_density: grid shorter than window plus lookahead");
  CorrectorField p("p", n, count + 1, grid.s0, grid.ds);
  p.normalization = Normalization::weighted_mean;
  std::vector<double> cur(n, 1.0), lp(n);
  for (std::size_t s = count + lookahead; s-- > 0;) {
    gen.apply_adjoint(grid.states[s], cur, lp);
    double mass = 0.0;
    for (int i = 0; i < n; ++i) {
      cur[i] += grid.ds * lp[i];
      mass += cur[i];
    }
    mass /= n;
    for (double& v : cur) v /= mass;
    if (s <= count) std::copy(cur.begin(), cur.end(), p.at(s).begin());
  }
  // The terminal point of the window when lookahead is zero.
  if (lookahead == 0) std::fill(p.at(count).begin(), p.at(count).end(), 1.0);
  for (std::size_t s = 0; s <= count; ++s) {
    const auto v = p.at(s);
    if (*std::min_element(v.begin(), v.end()) <= 0.0)
      throw ContractError("solve_invariant_density: density lost positivity");
  }
  return p;
}

BetaReport compute_beta(const GeneratorMatrix& gen, const StateGrid& grid, const CorrectorField* p,
                        std::size_t count) {
  BetaReport rep;
  count = std::min(count, grid.size());
  rep.beta.resize(count);
  for (std::size_t s = 0; s < count; ++s) {
    const auto& m1 = gen.moment(grid.states[s], 1);
    rep.beta[s] = weighted_mean(std::span<const double>(m1.data(), m1.size()), weight_at(p, s + 1));
  }
  if (count > 0) {
    rep.mean = std::accumulate(rep.beta.begin(), rep.beta.end(), 0.0) / static_cast<double>(count);
    double var = 0.0;
    for (double b : rep.beta) var += (b - rep.mean) * (b - rep.mean);
    rep.std = std::sqrt(var / static_cast<double>(count));
  }
  rep.h6 = rep.std <= 1e-8;
  return rep;
}

DecayFit estimate_decay(const GeneratorMatrix& gen, const StateGrid& grid, std::uint64_t seed) {
  const int n = gen.points();
  Rng rng = make_rng(seed, 0xdecaULL);
  std::vector<double> a(n, 0.0), b(n), la(n), lb(n), g(n);
  for (double& v : b) v = 2.0 * uniform01(rng) - 1.0;
  auto center = [&](std::vector<double>& v) {
    const double m = weighted_mean(v, {});
    for (double& x : v) x -= m;
  };
  center(b);
  auto diff_norm = [&]() {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(acc / n);
  };
  const double e0 = diff_norm();
  DecayFit fit;
  for (std::size_t s = 0; s < grid.size(); ++s) {
    const int k = grid.states[s];
    drift_field_g(gen, k, g);
    gen.apply(k, a, la);
    gen.apply(k, b, lb);
    for (int i = 0; i < n; ++i) {
      a[i] += grid.ds * (la[i] + g[i]);
      b[i] += grid.ds * (lb[i] + g[i]);
    }
    center(a);
    center(b);
    const double e = diff_norm();
    if (e < 1e-11 * e0) break;
    if (e <= 0.1 * e0) {
      fit.times.push_back(grid.time(s + 1));
      fit.log_norms.push_back(std::log(e));
    }
  }
  const std::size_t m = fit.times.size();
  if (m < 3) {
    fit.gamma = 0.0;
    fit.r2 = 0.0;
    return fit;
  }
  double tx = 0, ty = 0;
  for (std::size_t i = 0; i < m; ++i) {
    tx += fit.times[i];
    ty += fit.log_norms[i];
  }
  tx /= m;
  ty /= m;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double dx = fit.times[i] - tx;
    const double dy = fit.log_norms[i] - ty;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  const double slope = sxy / sxx;
  fit.gamma = -slope;
  fit.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return fit;
}

}  // namespace nlh

namespace nlh {

namespace {

// Reversed-time recursion for p on rows a..b, using states up to b + look - 1.
void fill_density(const GeneratorMatrix& gen, const std::vector<int>& states, double ds,
                  std::size_t a, std::size_t b, std::size_t look, std::vector<double>& buf) {
  const int n = gen.points();
  buf.assign((b - a + 1) * static_cast<std::size_t>(n), 1.0);
  std::vector<double> cur(n, 1.0), lp(n);
  const std::size_t top = std::min(states.size(), b + look);
  for (std::size_t s = top; s-- > a;) {
    gen.apply_adjoint(states[s], cur, lp);
    double mass = 0.0;
    for (int i = 0; i < n; ++i) {
      cur[i] += ds * lp[i];
      mass += cur[i];
    }
    mass /= n;
    for (double& v : cur) v /= mass;
    if (s <= b) std::copy(cur.begin(), cur.end(), buf.begin() + static_cast<std::ptrdiff_t>((s - a) * n));
  }
  for (double v : buf)
    if (!(v > 0.0)) throw ContractError("invariant density lost positivity");
}

}  // namespace

CorrectorSweep::CorrectorSweep(const GeneratorMatrix& gen, const StateGrid& grid,
                               std::size_t total, SweepOptions opt)
    : gen_(&gen), grid_(&grid), total_(total), opt_(opt), np_(gen.points()) {
  if (grid.size() < total + 1) throw DomainError("corrector sweep: state grid too short");
  if (grid.ds * gen.max_row_sum() >= 0.5)
    throw StepSizeError("corrector sweep: step violates the explicit Euler bound");
  chi1_.assign(np_, 0.0);
  chi2_.assign(np_, 0.0);
  next_.resize(np_);
  lx_.resize(np_);
  h_.resize(np_);
  g_.resize(np_);
  if (opt_.mode == Mode::nonsymmetric) {
    const auto w = weight(0);
    pcur_.assign(w.begin(), w.end());
  }
  prepare();
}

std::span<const double> CorrectorSweep::weight(std::size_t s) const {
  if (opt_.mode == Mode::symmetric) return {};
  if (!have_chunk_ || s < chunk_a_ || s > chunk_b_) {
    const std::size_t chunk = 1 << 15;
    chunk_a_ = s;
    chunk_b_ = std::min(total_ + 1, s + chunk);
    const std::size_t look = std::max<std::size_t>(opt_.lookahead, 1);
    fill_density(*gen_, grid_->states, grid_->ds, chunk_a_, chunk_b_, look, pbuf_);
    have_chunk_ = true;
  }
  return {pbuf_.data() + (s - chunk_a_) * static_cast<std::size_t>(np_), static_cast<std::size_t>(np_)};
}

void CorrectorSweep::prepare() {
  const int k = state();
  if (opt_.mode == Mode::nonsymmetric) {
    const auto w = weight(n_ + 1);
    pnext_.assign(w.begin(), w.end());
    const auto& m1 = gen_->moment(k, 1);
    beta_ = weighted_mean(std::span<const double>(m1.data(), np_), pnext_);
  } else {
    beta_ = 0.0;
  }
  flux_density(*gen_, k, chi1_, beta_, h_);
  theta_ = weighted_mean(h_, pnext_);
}

double CorrectorSweep::theta_for_state(int k) const {
  double beta = 0.0;
  if (opt_.mode == Mode::nonsymmetric) {
    const auto& m1 = gen_->moment(k, 1);
    beta = weighted_mean(std::span<const double>(m1.data(), np_), pnext_);
  }
  std::vector<double> h(np_);
  flux_density(*gen_, k, chi1_, beta, h);
  return weighted_mean(h, pnext_);
}

void CorrectorSweep::drift(std::span<double> out) const {
  drift_density(*gen_, state(), chi1_, chi2_, out);
}

void CorrectorSweep::advance() {
  if (n_ >= total_) throw DomainError("corrector sweep: advanced past the last step");
  const int k = state();
  const double ds = grid_->ds;
  if (chi2_active()) {
    gen_->apply(k, chi2_, lx_);
    for (int i = 0; i < np_; ++i) next_[i] = chi2_[i] + ds * (lx_[i] + h_[i] - theta_);
    const double m = weighted_mean(next_, opt_.chi2_gauge == Gauge::weighted ? std::span<const double>(pnext_) : std::span<const double>{});
    for (int i = 0; i < np_; ++i) chi2_[i] = next_[i] - m;
  }
  drift_field_g(*gen_, k, g_);
  gen_->apply(k, chi1_, lx_);
  for (int i = 0; i < np_; ++i) next_[i] = chi1_[i] + ds * (lx_[i] + g_[i] + beta_);
  const double m = weighted_mean(next_, opt_.chi1_gauge == Gauge::weighted ? std::span<const double>(pnext_) : std::span<const double>{});
  if (!std::isfinite(m)) throw NonConvergenceError("corrector sweep: non-finite iterate");
  if (opt_.chi1_gauge == Gauge::weighted) mean_drift_ = std::max(mean_drift_, std::abs(m));
  for (int i = 0; i < np_; ++i) chi1_[i] = next_[i] - m;
  ++n_;
  if (opt_.mode == Mode::nonsymmetric) pcur_ = pnext_;
  prepare();
}

}  // namespace nlh
