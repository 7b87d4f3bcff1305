#include "nlh/fullscale.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numbers>

#include <fftw3.h>

#include "nlh/parallel.hpp"

namespace nlh {

namespace {

std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

PhysicalGrid make_physical_grid(int n_t, double eps, double min_half_width) {
  if (!(eps > 0.0)) throw ConfigError("physical grid: eps must be positive");
  if (n_t < 4) throw ConfigError("physical grid: torus resolution too small");
  if (!(min_half_width > 0.0)) throw ConfigError("physical grid: box half-width must be positive");
  PhysicalGrid g;
  g.eps = eps;
  g.n_t = n_t;
  const double cells = std::ceil(min_half_width / eps - 1e-9);
  g.half_width = cells * eps;
  g.dx = eps / n_t;
  g.nodes = static_cast<std::size_t>(2.0 * cells) * static_cast<std::size_t>(n_t);
  return g;
}

double default_half_width(double theta, double horizon, double beta, double eps) {
  return 6.0 + 4.0 * std::sqrt(2.0 * std::max(theta, 0.0) * horizon) + std::abs(beta) * horizon / eps;
}

double l2_norm(const PhysicalGrid& grid, std::span<const double> u) {
  double acc = 0.0;
  for (double v : u) acc += v * v;
  return std::sqrt(acc * grid.dx);
}

double mass(const PhysicalGrid& grid, std::span<const double> u) {
  double acc = 0.0;
  for (double v : u) acc += v;
  return acc * grid.dx;
}

double tail_fraction(const PhysicalGrid& grid, std::span<const double> u) {
  double all = 0.0, tail = 0.0;
  const double edge = grid.half_width - 1.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double v2 = u[i] * u[i];
    all += v2;
    if (std::abs(grid.x(i)) > edge) tail += v2;
  }
  return all > 0.0 ? std::sqrt(tail / all) : 0.0;
}

// ---------------------------------------------------------------------------

HomogenizedSolution::HomogenizedSolution(double theta, const PhysicalGrid& grid,
                                         std::span<const double> initial, double tail_tol)
    : theta_(theta), grid_(grid), initial_(initial.begin(), initial.end()) {
  if (!(theta > 0.0)) throw DomainError("homogenized solution: Θ^eff must be positive");
  if (initial.size() != grid.nodes) throw DomainError("homogenized solution: initial data size mismatch");
  const int n = static_cast<int>(grid.nodes);
  const int m = n / 2 + 1;
  double* rin = fftw_alloc_real(n);
  fftw_complex* cbuf = fftw_alloc_complex(m);
  {
    std::lock_guard<std::mutex> lock(plan_mutex());
    fwd_ = fftw_plan_dft_r2c_1d(n, rin, cbuf, FFTW_ESTIMATE);
    bwd_ = fftw_plan_dft_c2r_1d(n, cbuf, rin, FFTW_ESTIMATE);
  }
  fftw_free(rin);
  fftw_free(cbuf);
  spec_ = forward(initial_);

  double top = 0.0, tail = 0.0;
  for (std::size_t j = 0; j < spec_.size(); ++j) {
    const double a = std::abs(spec_[j]);
    top = std::max(top, a);
    if (j >= static_cast<std::size_t>(0.9 * static_cast<double>(spec_.size() - 1))) tail = std::max(tail, a);
  }
  if (top > 0.0 && tail > tail_tol * top)
    throw ResolutionError("homogenized solution: initial data not resolved (spectral tail " +
                          std::to_string(tail / top) + ")");
}

HomogenizedSolution::~HomogenizedSolution() {
  std::lock_guard<std::mutex> lock(plan_mutex());
  if (fwd_) fftw_destroy_plan(static_cast<fftw_plan>(fwd_));
  if (bwd_) fftw_destroy_plan(static_cast<fftw_plan>(bwd_));
}

double HomogenizedSolution::wavenumber(std::size_t j) const {
  return 2.0 * std::numbers::pi * static_cast<double>(j) / grid_.length();
}

std::vector<std::complex<double>> HomogenizedSolution::forward(std::span<const double> values) const {
  const std::size_t n = grid_.nodes;
  const std::size_t m = n / 2 + 1;
  double* rin = fftw_alloc_real(n);
  fftw_complex* cout = fftw_alloc_complex(m);
  std::copy(values.begin(), values.end(), rin);
  fftw_execute_dft_r2c(static_cast<fftw_plan>(fwd_), rin, cout);
  std::vector<std::complex<double>> out(m);
  for (std::size_t j = 0; j < m; ++j) out[j] = {cout[j][0], cout[j][1]};
  fftw_free(rin);
  fftw_free(cout);
  return out;
}

void HomogenizedSolution::inverse(std::span<const std::complex<double>> spec, std::span<double> out) const {
  const std::size_t n = grid_.nodes;
  const std::size_t m = n / 2 + 1;
  double* rout = fftw_alloc_real(n);
  fftw_complex* cin = fftw_alloc_complex(m);
  for (std::size_t j = 0; j < m; ++j) {
    cin[j][0] = spec[j].real();
    cin[j][1] = spec[j].imag();
  }
  fftw_execute_dft_c2r(static_cast<fftw_plan>(bwd_), cin, rout);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = rout[i] * scale;
  fftw_free(rout);
  fftw_free(cin);
}

void HomogenizedSolution::evaluate(double t, int order, double shift, std::span<double> out) const {
  if (order < 0 || order > 3) throw DomainError("homogenized solution: derivative order must be 0..3");
  if (t < 0.0) throw DomainError("homogenized solution: negative time");
  if (t == 0.0 && order == 0 && shift == 0.0) {
    std::copy(initial_.begin(), initial_.end(), out.begin());
    return;
  }
  const std::size_t m = spec_.size();
  std::vector<std::complex<double>> s(m);
  const std::complex<double> I(0.0, 1.0);
  for (std::size_t j = 0; j < m; ++j) {
    const double k = wavenumber(j);
    std::complex<double> f = spec_[j] * std::exp(-theta_ * k * k * t);
    for (int o = 0; o < order; ++o) f *= I * k;
    if (shift != 0.0) f *= std::exp(-I * (k * shift));
    s[j] = f;
  }
  if ((order % 2 == 1 || shift != 0.0) && grid_.nodes % 2 == 0) s[m - 1] = 0.0;
  inverse(s, out);
}

// ---------------------------------------------------------------------------

EpsilonStepper::EpsilonStepper(const EnvironmentModel& env, const GeneratorMatrix& gen,
                               const PhysicalGrid& grid, double ds)
    : op_(gen, grid.eps, grid.nodes), dt_(grid.eps * grid.eps * ds), lu_(grid.nodes) {
  if (grid.n_t != gen.points()) throw ConfigError("physical grid and torus resolution differ");
  if (!(ds > 0.0) || ds > max_stable_step(env) * (1.0 + 1e-12))
    throw ConfigError("ε-problem: Δt = ε²·" + std::to_string(ds) +
                      " exceeds the explicit Euler bound 0.9 ε²/(2Λ⁺)");
}

void EpsilonStepper::step(int state, std::span<double> u, std::span<const double> forcing) {
  op_.apply(state, u, lu_);
  if (forcing.empty()) {
    for (std::size_t i = 0; i < u.size(); ++i) u[i] += dt_ * lu_[i];
  } else {
    for (std::size_t i = 0; i < u.size(); ++i) u[i] += dt_ * (lu_[i] + forcing[i]);
  }
}

std::size_t step_count(double horizon, double eps, double ds) {
  const double r = horizon / (eps * eps * ds);
  const double n = std::round(r);
  if (!(horizon > 0.0) || n < 1.0 || std::abs(r - n) > 1e-9 * std::max(1.0, r))
    throw ConfigError("T / (ε² Δs) = " + std::to_string(r) + " is not a positive integer");
  return static_cast<std::size_t>(n);
}

EpsilonRun solve_epsilon_problem(const EnvironmentModel& env, const GeneratorMatrix& gen,
                                 const PhysicalGrid& grid, std::span<const int> states,
                                 std::span<const double> initial, const EpsilonOptions& opt) {
  if (initial.size() != grid.nodes) throw DomainError("ε-problem: initial data size mismatch");
  EpsilonStepper stepper(env, gen, grid, opt.ds);
  EpsilonRun run;
  run.steps = step_count(opt.horizon, grid.eps, opt.ds);
  run.dt = stepper.dt();
  if (states.size() < run.steps) throw ConfigError("ε-problem: driver path shorter than T/ε²");

  std::vector<std::size_t> snap_steps;
  for (double ts : opt.snapshot_times) {
    if (ts < 0.0 || ts > opt.horizon * (1.0 + 1e-12)) throw ConfigError("ε-problem: snapshot outside [0, T]");
    snap_steps.push_back(static_cast<std::size_t>(std::llround(ts / run.dt)));
  }

  std::vector<double> u(initial.begin(), initial.end());
  const bool dissipative = env.symmetric();
  run.mass.reserve(run.steps + 1);
  run.l2.reserve(run.steps + 1);
  for (std::size_t n = 0;; ++n) {
    run.mass.push_back(mass(grid, u));
    run.l2.push_back(l2_norm(grid, u));
    if (n > 0) run.max_l2_increase = std::max(run.max_l2_increase, run.l2[n] - run.l2[n - 1]);
    for (std::size_t q = 0; q < snap_steps.size(); ++q)
      if (snap_steps[q] == n) {
        SimulationField f;
        f.kind = FieldKind::u_eps;
        f.t = static_cast<double>(n) * run.dt;
        f.values = u;
        f.tail = tail_fraction(grid, u);
        run.snapshots.push_back(std::move(f));
      }
    if (n == run.steps) break;
    stepper.step(states[n], u);
  }
  for (double v : u)
    if (!std::isfinite(v)) throw NumericalError("ε-problem: non-finite solution");
  if (dissipative && run.max_l2_increase > 1e-12 * std::max(run.l2.front(), 1e-300))
    throw NumericalError("ε-problem: L² norm increased in symmetric mode");
  if (tail_fraction(grid, u) > opt.tail_tolerance)
    throw TruncationError("ε-problem: tail mass above tolerance, increase the box");
  return run;
}

// ---------------------------------------------------------------------------

std::vector<double> assemble_U_eps(std::span<const double> u_eps, const HomogenizedSolution& u0,
                                   std::span<const double> chi1, double t,
                                   const AssembleOptions& opt) {
  const PhysicalGrid& g = u0.grid();
  if (u_eps.size() != g.nodes) throw DomainError("assemble_U_eps: field size mismatch");
  if (static_cast<int>(chi1.size()) != g.n_t) throw DomainError("assemble_U_eps: corrector size mismatch");
  if (opt.mode == Mode::nonsymmetric && !opt.h6)
    throw ContractError("assemble_U_eps: moving frame needs a deterministic drift (H6)");
  const double shift = (opt.mode == Mode::nonsymmetric && !opt.drop_shift) ? opt.beta * t / g.eps : 0.0;
  std::vector<double> f(g.nodes), f1(g.nodes), out(g.nodes);
  u0.evaluate(t, 0, shift, f);
  u0.evaluate(t, 1, shift, f1);
  for (std::size_t i = 0; i < g.nodes; ++i) {
    out[i] = (u_eps[i] - f[i]) / g.eps;
    if (!opt.drop_chi1) out[i] -= chi1[g.fast_index(i)] * f1[i];
  }
  return out;
}

// ---------------------------------------------------------------------------

FluctuationProcess kappa_process(const GeneratorMatrix& gen, const DriverPath& path,
                                 const KappaOptions& opt) {
  const std::size_t steps = step_count(opt.horizon, opt.eps, opt.ds);
  const std::size_t total = opt.burn_steps + steps;
  const std::size_t count = total + std::max<std::size_t>(opt.lookahead, 1);
  if (path.horizon < static_cast<double>(count) * opt.ds * (1.0 - 1e-12))
    throw ConfigError("kappa_process: path horizon shorter than the burn-in plus T/ε²");
  const StateGrid grid = sample_states(path, 0.0, opt.ds, count);

  SweepOptions so;
  so.mode = opt.mode;
  so.second = false;
  so.lookahead = opt.lookahead;
  CorrectorSweep sweep(gen, grid, total, so);
  for (std::size_t n = 0; n < opt.burn_steps; ++n) sweep.advance();

  FluctuationProcess out;
  out.eps = opt.eps;
  out.seed = path.seed;
  out.stream = path.stream;
  out.times.push_back(0.0);
  out.values.push_back(0.0);

  const double dt = opt.eps * opt.eps * opt.ds;
  const int S = gen.states();
  std::vector<double> cache(S);
  std::vector<char> have(S);
  std::size_t seg = 0;
  double kappa = 0.0;
  for (std::size_t n = 0; n < steps; ++n) {
    const std::size_t idx = opt.burn_steps + n;
    const double a = grid.time(idx), b = grid.time(idx + 1);
    std::fill(have.begin(), have.end(), 0);
    cache[sweep.state()] = sweep.theta();
    have[sweep.state()] = 1;
    while (seg + 1 < path.times.size() && path.times[seg + 1] <= a) ++seg;
    double acc = 0.0;
    double lo = a;
    std::size_t sg = seg;
    while (lo < b) {
      const double hi = sg + 1 < path.times.size() ? std::min(b, path.times[sg + 1]) : b;
      const int k = path.states[sg];
      if (!have[k]) {
        cache[k] = sweep.theta_for_state(k);
        have[k] = 1;
      }
      acc += (cache[k] - opt.theta_eff) * (hi - lo);
      lo = hi;
      if (lo < b) ++sg;
    }
    kappa += opt.eps * acc;  // ε^{-1} · ε² · ∫ over the fast interval
    sweep.advance();
    const bool last = n + 1 == steps;
    if (last || (opt.record_every > 0 && (n + 1) % opt.record_every == 0)) {
      out.times.push_back(static_cast<double>(n + 1) * dt);
      out.values.push_back(kappa);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

double TestFunction::operator()(double x) const {
  const double z = (x - center) / width;
  return std::exp(-0.5 * z * z);
}

double project(const PhysicalGrid& grid, std::span<const double> u, const TestFunction& phi,
               double shift) {
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) acc += u[i] * phi(grid.x(i) - shift);
  return acc * grid.dx;
}

constexpr std::uint64_t kRealizationStream = 0x100000;

RealizationPath realization_path(const RealizationSetup& s, std::uint64_t replicate) {
  RealizationPath rp;
  rp.steps = step_count(s.horizon, s.eps, s.ds);
  const std::size_t count = s.burn_steps + rp.steps + std::max<std::size_t>(s.lookahead, 1);
  // Realization streams are offset so they never coincide with the effective-coefficient run.
  rp.path = sample_path(s.env->driver(), static_cast<double>(count + 1) * s.ds, s.seed,
                        kRealizationStream + replicate);
  rp.grid = sample_states(rp.path, 0.0, s.ds, count);
  return rp;
}

RealizationResult run_realization(const RealizationSetup& s, std::uint64_t replicate) {
  if (s.env == nullptr || s.gen == nullptr || s.u0 == nullptr)
    throw DependencyError("run_realization: environment, generator and u⁰ are required");
  if (s.mode == Mode::nonsymmetric && !s.h6)
    throw ContractError("run_realization: non-symmetric mode needs a deterministic drift (H6)");
  const PhysicalGrid& g = s.grid;
  const HomogenizedSolution& u0 = *s.u0;
  const RealizationPath rp = realization_path(s, replicate);
  const std::size_t steps = rp.steps;
  const bool nonsym = s.mode == Mode::nonsymmetric;
  const double vel = nonsym ? s.beta / s.eps : 0.0;  // x^ε = x - vel·t

  SweepOptions so;
  so.mode = s.mode;
  so.second = false;
  so.lookahead = s.lookahead;
  CorrectorSweep sweep(*s.gen, rp.grid, s.burn_steps + steps, so);
  for (std::size_t n = 0; n < s.burn_steps; ++n) sweep.advance();

  EpsilonStepper stepper(*s.env, *s.gen, g, s.ds);
  const double dt = stepper.dt();
  std::vector<double> u(g.nodes), f(g.nodes), f1(g.nodes), f2(g.nodes), forcing(g.nodes);
  u0.evaluate(0.0, 0, 0.0, u);
  const double mass0 = mass(g, u);
  std::vector<double> r1;
  std::unique_ptr<EpsilonStepper> r1_stepper;
  if (s.with_r1) {
    r1.assign(g.nodes, 0.0);
    r1_stepper = std::make_unique<EpsilonStepper>(*s.env, *s.gen, g, s.ds);
  }

  RealizationResult out;
  out.replicate = replicate;
  const std::size_t stride = s.error_samples > 0 ? std::max<std::size_t>(1, steps / s.error_samples) : 0;
  std::vector<double> et, ev;
  auto sample_error = [&](double t) {
    const double shift = vel * t;
    u0.evaluate(t, 0, shift, f);
    u0.evaluate(t, 1, shift, f1);
    const auto chi = sweep.chi1();
    double acc = 0.0;
    for (std::size_t i = 0; i < g.nodes; ++i) {
      const double e = u[i] - f[i] - g.eps * chi[g.fast_index(i)] * f1[i];
      acc += e * e;
    }
    et.push_back(t);
    ev.push_back(acc * g.dx);
  };

  const bool keep = s.keep_replicate >= 0 && static_cast<std::uint64_t>(s.keep_replicate) == replicate;
  std::vector<std::size_t> snap;
  if (keep)
    for (double ts : s.snapshot_times) {
      if (ts < 0.0 || ts > s.horizon * (1.0 + 1e-12)) throw ConfigError("snapshot time outside [0, T]");
      snap.push_back(static_cast<std::size_t>(std::llround(ts / dt)));
    }
  auto take_snapshots = [&](std::size_t n) {
    for (std::size_t q : snap)
      if (q == n) {
        SimulationField sf;
        sf.kind = FieldKind::u_eps;
        sf.t = static_cast<double>(n) * dt;
        sf.values = u;
        sf.tail = tail_fraction(g, u);
        out.snapshots.push_back(std::move(sf));
      }
  };

  double kappa = 0.0;
  for (std::size_t n = 0; n < steps; ++n) {
    const double t = static_cast<double>(n) * dt;
    take_snapshots(n);
    if (stride > 0 && n % stride == 0) sample_error(t);
    const int k = sweep.state();
    const double tilde = sweep.theta() - s.theta_eff;
    kappa += s.eps * s.ds * tilde;
    if (s.with_r1) {
      u0.evaluate(t, 2, vel * t, f2);
      for (std::size_t i = 0; i < g.nodes; ++i) forcing[i] = tilde / s.eps * f2[i];
      r1_stepper->step(k, r1, forcing);
    }
    stepper.step(k, u);
    sweep.advance();
  }
  const double T = static_cast<double>(steps) * dt;
  take_snapshots(steps);
  if (stride > 0) {
    sample_error(T);
    double acc = 0.0;
    for (std::size_t q = 1; q < et.size(); ++q) acc += 0.5 * (ev[q] + ev[q - 1]) * (et[q] - et[q - 1]);
    out.error_l2 = std::sqrt(acc);
  }
  for (double v : u)
    if (!std::isfinite(v)) throw NumericalError("run_realization: non-finite solution");
  out.tail = tail_fraction(g, u);
  if (out.tail > s.tail_tolerance)
    throw TruncationError("run_realization: tail mass above tolerance, increase the box");
  out.mass_drift = std::abs(mass(g, u) - mass0);
  out.kappa = kappa;

  AssembleOptions ao;
  ao.mode = s.mode;
  ao.beta = s.beta;
  ao.h6 = s.h6;
  const auto chi = sweep.chi1();
  const std::vector<double> U = assemble_U_eps(u, u0, chi, T, ao);
  ao.drop_chi1 = true;
  const std::vector<double> U_nc = assemble_U_eps(u, u0, chi, T, ao);
  ao.drop_chi1 = false;
  ao.drop_shift = true;
  const std::vector<double> U_ns = nonsym ? assemble_U_eps(u, u0, chi, T, ao) : U;
  const double pshift = vel * T;
  for (const auto& phi : s.tests) {
    out.proj.push_back(project(g, U, phi, pshift));
    out.proj_no_chi1.push_back(project(g, U_nc, phi, pshift));
    out.proj_no_shift.push_back(project(g, U_ns, phi, pshift));
  }
  auto energy = [&](const std::vector<double>& v) {
    const double n = l2_norm(g, v);
    return n * n;
  };
  out.energy = energy(U);
  out.energy_no_chi1 = energy(U_nc);
  out.energy_no_shift = energy(U_ns);

  if (s.with_r1) {
    u0.evaluate(T, 2, pshift, f2);
    for (const auto& phi : s.tests) out.r1_proj.push_back(project(g, r1, phi, pshift));
    double acc = 0.0;
    for (std::size_t i = 0; i < g.nodes; ++i) {
      const double d = r1[i] - kappa * f2[i];
      acc += d * d;
    }
    out.r1_gap = std::sqrt(acc * g.dx);
  }
  if (keep) {
    out.u_final = u;
    out.U_final = U;
    out.chi1_final.assign(chi.begin(), chi.end());
  }
  return out;
}

std::vector<RealizationResult> run_realizations(const RealizationSetup& setup,
                                                std::uint64_t first, std::size_t count,
                                                int workers) {
  return run_indexed<RealizationResult>(count, workers, [&](std::size_t i) {
    return run_realization(setup, first + i);
  });
}

}  // namespace nlh
