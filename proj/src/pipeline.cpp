#include "nlh/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include <json.hpp>

#include "nlh/parallel.hpp"
#include "nlh/spde.hpp"
#include "nlh/verify.hpp"

namespace nlh {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + p.string());
  f << content;
  if (!f) throw ConfigError("write failed: " + p.string());
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw DependencyError("missing artifact " + p.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

json read_json(const fs::path& p) { return json::parse(read_file(p)); }

/// CSV with a leading `# config_hash=` line.
class CsvWriter {
 public:
  CsvWriter(const std::string& hash, const std::vector<std::string>& columns) {
    os_ << "# config_hash=" << hash << "\n";
    for (std::size_t i = 0; i < columns.size(); ++i) os_ << (i ? "," : "") << columns[i];
    os_ << "\n";
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os_ << (i ? "," : "") << cells[i];
    os_ << "\n";
  }
  std::string str() const { return os_.str(); }

 private:
  std::ostringstream os_;
};

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t col(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    throw DependencyError("csv: no column " + name);
  }
  std::vector<double> column(const std::string& name) const {
    const std::size_t c = col(name);
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(r[c]);
    return out;
  }
};

CsvTable read_csv(const fs::path& p) {
  std::istringstream in(read_file(p));
  CsvTable t;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!header) {
      t.columns = cells;
      header = true;
      continue;
    }
    std::vector<double> r;
    for (const auto& c : cells) r.push_back(std::stod(c));
    t.rows.push_back(std::move(r));
  }
  return t;
}

std::string eps_tag(std::size_t i) { return "eps" + std::to_string(i); }

struct Context {
  Config cfg;
  std::string hash;
  fs::path out;
  int workers = 1;
  bool strict = false;
  std::ostream* log = nullptr;
  std::unique_ptr<EnvironmentModel> env;
  std::unique_ptr<GeneratorMatrix> gen;

  void note(const std::string& msg) const {
    if (log) *log << msg << "\n";
  }
  const EnvironmentModel& environment() {
    if (!env) env = std::make_unique<EnvironmentModel>(build_environment(cfg));
    return *env;
  }
  const GeneratorMatrix& generator() {
    if (!gen) gen = std::make_unique<GeneratorMatrix>(environment());
    return *gen;
  }
  json header() const {
    json j;
    j["config_hash"] = hash;
    return j;
  }
};

struct EffectiveSummary {
  double theta = 0.0, theta_se = 0.0, c = 0.0, a = 0.0, h = 0.0, beta = 0.0, burn_in = 0.0;
  bool h6 = true;
};

EffectiveSummary load_effective(const Context& ctx) {
  const json j = read_json(ctx.out / "effective.json");
  EffectiveSummary s;
  s.theta = j["theta"].get<double>();
  s.theta_se = j["theta_se"].get<double>();
  s.c = j["c"].get<double>();
  s.a = j["a"].get<double>();
  s.h = j["h"].get<double>();
  s.beta = j["beta"].get<double>();
  s.burn_in = j["burn_in"].get<double>();
  s.h6 = j["h6"].get<bool>();
  return s;
}

std::vector<double> initial_data(const Config& cfg, const PhysicalGrid& g) {
  const double c = cfg.get_double("initial.center");
  const double w = cfg.get_double("initial.width");
  std::vector<double> v(g.nodes);
  for (std::size_t i = 0; i < g.nodes; ++i) {
    const double z = (g.x(i) - c) / w;
    v[i] = std::exp(-0.5 * z * z);
  }
  return v;
}

/// Grid, u⁰ and realization setup for one ε of the simulate ladder.
struct EpsSetup {
  PhysicalGrid grid;
  std::unique_ptr<HomogenizedSolution> u0;
  RealizationSetup setup;
};

EpsSetup make_eps_setup(Context& ctx, const EffectiveSummary& eff, double eps) {
  const Config& cfg = ctx.cfg;
  const Mode mode = config_mode(cfg);
  const double T = cfg.get_double("simulate.horizon");
  const double ds = cfg.get_double("ds");
  const double beta = mode == Mode::nonsymmetric ? eff.beta : 0.0;
  EpsSetup e;
  // The box also has to carry every test function down to a spectral tail below 1e-10.
  double half = default_half_width(eff.theta, T, beta, eps);
  for (const auto& phi : test_functions(cfg)) half = std::max(half, std::abs(phi.center) + 6.5 * phi.width);
  e.grid = make_physical_grid(ctx.environment().torus_points(), eps, half);
  e.u0 = std::make_unique<HomogenizedSolution>(eff.theta, e.grid, initial_data(cfg, e.grid));
  RealizationSetup& s = e.setup;
  s.env = &ctx.environment();
  s.gen = &ctx.generator();
  s.u0 = e.u0.get();
  s.grid = e.grid;
  s.mode = mode;
  s.eps = eps;
  s.horizon = T;
  s.ds = ds;
  s.burn_steps = static_cast<std::size_t>(std::llround(eff.burn_in / ds));
  s.lookahead = mode == Mode::nonsymmetric ? s.burn_steps : 0;
  s.theta_eff = eff.theta;
  s.beta = beta;
  s.h6 = eff.h6;
  s.seed = cfg.get_uint("seed");
  s.tests = test_functions(cfg);
  s.tail_tolerance = cfg.get_double("simulate.tail_tolerance");
  s.with_r1 = cfg.get_bool("simulate.with_r1");
  s.error_samples = static_cast<std::size_t>(cfg.get_int("simulate.error_samples"));
  return e;
}

// ---------------------------------------------------------------------------
// Stages

void stage_validate(Context& ctx) {
  const HypothesisReport rep = validate_hypotheses(ctx.environment());
  json j = ctx.header();
  j["ok"] = rep.ok();
  j["mixing_bound"] = rep.mixing_bound;
  j["symmetric"] = ctx.environment().symmetric();
  auto& items = j["hypotheses"] = json::array();
  for (const auto& it : rep.items) items.push_back({{"name", it.name}, {"status", to_string(it.status)}, {"detail", it.detail}});
  write_file(ctx.out / "validate.json", j.dump(2) + "\n");
  ctx.note(rep.to_text());
  require_valid(ctx.environment());
  if (config_mode(ctx.cfg) == Mode::symmetric && !ctx.environment().symmetric())
    throw ValidationError("symmetric mode requires an even kernel and symmetric fields (H5)");
}

void stage_correctors(Context& ctx) {
  const EnvironmentModel& env = ctx.environment();
  const GeneratorMatrix& gen = ctx.generator();
  ErgodicOptions o = ergodic_options(ctx.cfg);
  const std::size_t window = static_cast<std::size_t>(std::max<long long>(1, ctx.cfg.get_int("correctors.window")));
  o.keep_steps = window;
  // The corrector window only needs a short production run next to the effective stage.
  o.production = std::min(o.production, std::max(static_cast<double>(window) * o.ds, 2000.0));
  const EffectiveCoefficients e = compute_effective(env, gen, o);

  // Same pilot as compute_effective, kept for the decay curve.
  const std::size_t psteps = static_cast<std::size_t>(std::ceil(o.pilot_horizon / o.ds));
  const DriverPath pilot = sample_path(env.driver(), static_cast<double>(psteps + 1) * o.ds, o.seed, o.stream + 0x9000);
  const DecayFit fit = estimate_decay(gen, sample_states(pilot, 0.0, o.ds, psteps), o.seed);

  json j = ctx.header();
  j["mode"] = to_string(o.mode);
  j["gamma0"] = fit.gamma;
  j["gamma0_r2"] = fit.r2;
  j["burn_in"] = e.burn_in;
  j["window_steps"] = window;
  j["max_mean_drift"] = e.max_mean_drift;
  write_file(ctx.out / "correctors.json", j.dump(2) + "\n");

  CsvWriter decay(ctx.hash, {"s", "log_norm"});
  for (std::size_t i = 0; i < fit.times.size(); ++i) decay.row({num(fit.times[i]), num(fit.log_norms[i])});
  write_file(ctx.out / "decay.csv", decay.str());

  const int n = gen.points();
  const bool nonsym = o.mode == Mode::nonsymmetric;
  CsvWriter w(ctx.hash, {"step", "s", "state", "i", "xi", "chi1", "chi2", "p"});
  for (std::size_t q = 0; q < e.chi1.count; ++q) {
    const int st = q < e.window.size() ? e.window.states[q] : -1;
    for (int i = 0; i < n; ++i)
      w.row({std::to_string(q), num(e.chi1.time(q)), std::to_string(st), std::to_string(i),
             num(static_cast<double>(i) / n), num(e.chi1.at(q)[i]), num(e.chi2.at(q)[i]),
             num(nonsym ? e.p.at(q)[i] : 1.0)});
  }
  write_file(ctx.out / "correctors.csv", w.str());
}

void stage_effective(Context& ctx) {
  const ErgodicOptions o = ergodic_options(ctx.cfg);
  const EffectiveCoefficients e = compute_effective(ctx.environment(), ctx.generator(), o);
  json j = ctx.header();
  j["mode"] = to_string(o.mode);
  j["ds"] = e.ds;
  j["gamma0"] = e.gamma0;
  j["gamma0_r2"] = e.gamma0_r2;
  j["burn_in"] = e.burn_in;
  j["production"] = e.production;
  j["theta"] = e.theta(0, 0);
  j["theta_se"] = e.theta_se(0, 0);
  j["beta"] = e.beta;
  j["beta_std"] = e.beta_std;
  j["h6"] = e.h6;
  j["c"] = e.c(0, 0);
  j["c_se"] = e.c_se(0, 0);
  j["a"] = e.a(0, 0);
  j["r_max"] = e.r_max;
  j["clipped_mass"] = e.clipped_mass;
  j["h"] = e.h[0];
  j["h_se"] = e.h_se[0];
  j["max_mean_drift"] = e.max_mean_drift;
  write_file(ctx.out / "effective.json", j.dump(2) + "\n");

  CsvWriter w(ctx.hash, {"lag", "r", "autocovariance"});
  for (std::size_t k = 0; k < e.autocovariance.size(); ++k)
    w.row({std::to_string(k), num(static_cast<double>(k) * e.ds), num(e.autocovariance[k])});
  write_file(ctx.out / "autocovariance.csv", w.str());
}

void write_field(const fs::path& p, const std::string& hash, const PhysicalGrid& g,
                 const std::vector<std::pair<std::string, const std::vector<double>*>>& fields, double t) {
  json h;
  h["config_hash"] = hash;
  h["format"] = "float64-le";
  h["nodes"] = g.nodes;
  h["x0"] = g.x(0);
  h["dx"] = g.dx;
  h["eps"] = g.eps;
  h["t"] = t;
  auto& names = h["fields"] = json::array();
  for (const auto& f : fields) names.push_back(f.first);
  std::string out = h.dump() + "\n";
  for (const auto& f : fields)
    out.append(reinterpret_cast<const char*>(f.second->data()), f.second->size() * sizeof(double));
  write_file(p, out);
}

void stage_simulate(Context& ctx) {
  const EffectiveSummary eff = load_effective(ctx);
  if (config_mode(ctx.cfg) == Mode::nonsymmetric && !eff.h6)
    throw ContractError("simulate: the drift β is random (H6 fails); the diffusion approximation does not apply");
  const auto eps_list = ctx.cfg.get_list("simulate.eps");
  const std::size_t reps = static_cast<std::size_t>(ctx.cfg.get_int("simulate.replicates"));
  for (std::size_t ie = 0; ie < eps_list.size(); ++ie) {
    EpsSetup es = make_eps_setup(ctx, eff, eps_list[ie]);
    es.setup.keep_replicate = 0;
    es.setup.snapshot_times = ctx.cfg.get_list("simulate.snapshot_times");
    ctx.note("simulate: eps = " + num(eps_list[ie]) + ", " + std::to_string(es.grid.nodes) + " nodes, " +
             std::to_string(reps) + " replicates");
    const auto res = run_realizations(es.setup, 0, reps, ctx.workers);
    const std::size_t nphi = es.setup.tests.size();
    std::vector<std::string> cols = {"replicate", "kappa"};
    for (std::size_t j = 0; j < nphi; ++j) cols.push_back("proj" + std::to_string(j));
    for (std::size_t j = 0; j < nphi; ++j) cols.push_back("proj_no_chi1_" + std::to_string(j));
    for (std::size_t j = 0; j < nphi; ++j) cols.push_back("proj_no_shift_" + std::to_string(j));
    for (const char* c : {"energy", "energy_no_chi1", "energy_no_shift", "error_l2", "mass_drift", "tail"}) cols.push_back(c);
    if (es.setup.with_r1) {
      for (std::size_t j = 0; j < nphi; ++j) cols.push_back("r1_proj" + std::to_string(j));
      cols.push_back("r1_gap");
    }
    CsvWriter w(ctx.hash, cols);
    for (const auto& r : res) {
      std::vector<std::string> row = {std::to_string(r.replicate), num(r.kappa)};
      for (double v : r.proj) row.push_back(num(v));
      for (double v : r.proj_no_chi1) row.push_back(num(v));
      for (double v : r.proj_no_shift) row.push_back(num(v));
      for (double v : {r.energy, r.energy_no_chi1, r.energy_no_shift, r.error_l2, r.mass_drift, r.tail}) row.push_back(num(v));
      if (es.setup.with_r1) {
        for (double v : r.r1_proj) row.push_back(num(v));
        row.push_back(num(r.r1_gap));
      }
      w.row(row);
    }
    write_file(ctx.out / ("simulate_" + eps_tag(ie) + ".csv"), w.str());
    if (!res.empty()) {
      const auto& r0 = res.front();
      write_field(ctx.out / ("field_" + eps_tag(ie) + ".bin"), ctx.hash, es.grid,
                  {{"u_eps", &r0.u_final}, {"U_eps", &r0.U_final}}, es.setup.horizon);
      for (std::size_t q = 0; q < r0.snapshots.size(); ++q)
        write_field(ctx.out / ("snapshot_" + eps_tag(ie) + "_" + std::to_string(q) + ".bin"), ctx.hash, es.grid,
                    {{"u_eps", &r0.snapshots[q].values}}, r0.snapshots[q].t);
    }
  }
}

constexpr std::uint64_t kCltStream = 0x200000;
constexpr std::uint64_t kSpdeStream = 0x300000;

void stage_clt(Context& ctx) {
  const EffectiveSummary eff = load_effective(ctx);
  const Mode mode = config_mode(ctx.cfg);
  if (mode == Mode::nonsymmetric && !eff.h6)
    throw ContractError("clt: the drift β is random (H6 fails)");
  const auto eps_list = ctx.cfg.get_list("clt.eps");
  const double T = ctx.cfg.get_double("clt.horizon");
  const double ds = ctx.cfg.get_double("ds");
  const std::size_t reps = static_cast<std::size_t>(ctx.cfg.get_int("clt.replicates"));
  const std::uint64_t seed = ctx.cfg.get_uint("seed");
  const GeneratorMatrix& gen = ctx.generator();
  const EnvironmentModel& env = ctx.environment();
  CsvWriter w(ctx.hash, {"eps", "replicate", "kappa"});
  for (std::size_t ie = 0; ie < eps_list.size(); ++ie) {
    KappaOptions ko;
    ko.eps = eps_list[ie];
    ko.horizon = T;
    ko.ds = ds;
    ko.burn_steps = static_cast<std::size_t>(std::llround(eff.burn_in / ds));
    ko.lookahead = mode == Mode::nonsymmetric ? ko.burn_steps : 0;
    ko.mode = mode;
    ko.theta_eff = eff.theta;
    const std::size_t steps = step_count(T, ko.eps, ds);
    const double horizon = static_cast<double>(ko.burn_steps + steps + std::max<std::size_t>(ko.lookahead, 1) + 1) * ds;
    ctx.note("clt: eps = " + num(ko.eps) + ", " + std::to_string(reps) + " paths");
    const auto vals = run_indexed<double>(reps, ctx.workers, [&](std::size_t m) {
      const DriverPath path = sample_path(env.driver(), horizon, seed, kCltStream + (ie << 16) + m);
      return kappa_process(gen, path, ko).values.back();
    });
    for (std::size_t m = 0; m < reps; ++m) w.row({num(ko.eps), std::to_string(m), num(vals[m])});
  }
  write_file(ctx.out / "clt.csv", w.str());
}

void stage_spde(Context& ctx) {
  const EffectiveSummary eff = load_effective(ctx);
  const auto eps_list = ctx.cfg.get_list("simulate.eps");
  if (eps_list.empty()) throw ConfigError("simulate.eps is empty");
  EpsSetup es = make_eps_setup(ctx, eff, eps_list.back());
  LimitProblem lp;
  lp.theta = eff.theta;
  lp.a = eff.a;
  lp.h = eff.h;
  lp.horizon = es.setup.horizon;
  lp.u0 = es.u0.get();
  const auto& tests = es.setup.tests;
  json j = ctx.header();
  j["theta"] = lp.theta;
  j["a"] = lp.a;
  j["h"] = lp.h;
  j["horizon"] = lp.horizon;
  j["eps_grid"] = es.grid.eps;
  auto& mom = j["moments"] = json::array();
  for (const auto& phi : tests) {
    const ProjectionMoments pm = projection_moments(lp, phi);
    mom.push_back({{"center", phi.center}, {"width", phi.width}, {"mean", pm.mean}, {"variance", pm.variance}});
  }
  write_file(ctx.out / "spde.json", j.dump(2) + "\n");

  const std::size_t samples = static_cast<std::size_t>(ctx.cfg.get_int("spde.samples"));
  const std::size_t steps = static_cast<std::size_t>(ctx.cfg.get_int("spde.steps"));
  const auto rows = sample_limit_projections(lp, tests, samples, steps, ctx.cfg.get_uint("seed") + kSpdeStream, ctx.workers);
  std::vector<std::string> cols = {"replicate"};
  for (std::size_t q = 0; q < tests.size(); ++q) cols.push_back("proj" + std::to_string(q));
  CsvWriter w(ctx.hash, cols);
  for (std::size_t m = 0; m < rows.size(); ++m) {
    std::vector<std::string> r = {std::to_string(m)};
    for (double v : rows[m]) r.push_back(num(v));
    w.row(r);
  }
  write_file(ctx.out / "spde.csv", w.str());
}

VerificationReport verify_all(Context& ctx) {
  VerificationReport rep;
  const EffectiveSummary eff = load_effective(ctx);
  const Mode mode = config_mode(ctx.cfg);
  const std::uint64_t seed = ctx.cfg.get_uint("seed");

  // Functional CLT for κ^ε(T).
  {
    const CsvTable t = read_csv(ctx.out / "clt.csv");
    const auto eps_col = t.column("eps");
    const auto kap = t.column("kappa");
    const double T = ctx.cfg.get_double("clt.horizon");
    for (double e : ctx.cfg.get_list("clt.eps")) {
      std::vector<double> xs;
      for (std::size_t i = 0; i < kap.size(); ++i)
        if (eps_col[i] == e) xs.push_back(kap[i]);
      if (xs.size() >= 100) rep.append(clt_report(xs, eff.c, T, seed, "clt.eps=" + num(e)));
    }
  }

  const auto eps_list = ctx.cfg.get_list("simulate.eps");
  std::vector<CsvTable> sims;
  for (std::size_t ie = 0; ie < eps_list.size(); ++ie) sims.push_back(read_csv(ctx.out / ("simulate_" + eps_tag(ie) + ".csv")));
  const json sj = read_json(ctx.out / "spde.json");
  const std::size_t nphi = sj["moments"].size();

  // Diffusion approximation at the finest ε against the limit SPDE law.
  if (!sims.empty() && sims.back().rows.size() >= 100) {
    const CsvTable& t = sims.back();
    const std::size_t m = t.rows.size();
    bool control_fails = false;
    for (std::size_t q = 0; q < nphi; ++q) {
      const double mu = sj["moments"][q]["mean"].get<double>();
      const double var = sj["moments"][q]["variance"].get<double>();
      const MatchResult mr = distribution_match(t.column("proj" + std::to_string(q)), mu, var);
      add_match(rep, "diffusion.phi" + std::to_string(q), mr, m);
      if (!distribution_match(t.column("proj_no_chi1_" + std::to_string(q)), mu, var).pass()) control_fails = true;
    }
    EpsSetup es = make_eps_setup(ctx, eff, eps_list.back());
    std::vector<double> f2(es.grid.nodes), f3(es.grid.nodes);
    const double T = es.setup.horizon;
    es.u0->evaluate(T, 2, 0.0, f2);
    es.u0->evaluate(T, 3, 0.0, f3);
    const double n2 = l2_norm(es.grid, f2), n3 = l2_norm(es.grid, f3);
    const double expected = eff.h * eff.h * T * T * n3 * n3 + eff.c * T * n2 * n2;
    if (expected > 0.0) {
      const double er = energy_ratio(t.column("energy"), expected);
      rep.add({"diffusion.energy", er, 0.75, 1.33, er >= 0.75 && er <= 1.33, false, m, "mean ‖U‖² / E‖v(T)‖²"});
      const double en = energy_ratio(t.column("energy_no_chi1"), expected);
      if (en < 0.75 || en > 1.33) control_fails = true;
      rep.add({"diffusion.negative_control", en, 0.75, 1.33, control_fails, false, m,
               "χ1 term omitted: some test must reject (statistic: energy ratio)"});
      if (mode == Mode::nonsymmetric && eff.beta != 0.0) {
        const double ns = energy_ratio(t.column("energy_no_shift"), expected);
        rep.add({"diffusion.frame_control", ns / std::max(er, 1e-300), 5.0, INFINITY, ns >= 5.0 * er, false, m,
                 "energy inflation without the moving frame"});
      }
    }
  }

  // First-order homogenization error and boundedness of U^ε along the ladder.
  if (sims.size() >= 3) {
    std::vector<double> err, unorm;
    for (const auto& t : sims) {
      double a = 0.0, b = 0.0;
      for (double v : t.column("error_l2")) a += v * v;
      for (double v : t.column("energy")) b += v;
      err.push_back(std::sqrt(a / static_cast<double>(t.rows.size())));
      unorm.push_back(std::sqrt(b / static_cast<double>(t.rows.size())));
    }
    const OrderFit f = order_fit(eps_list, err);
    rep.add({"homogenization.order", f.slope, 0.8, INFINITY, f.slope >= 0.8, false, sims.back().rows.size(),
             "slope of ‖u^ε - u⁰ - εχ1∂u⁰‖ (R² = " + num(f.r2) + ")"});
    rep.add({"fullscale.U_bounded", unorm.back() / unorm.front(), 0.0, 2.0, unorm.back() <= 2.0 * unorm.front(),
             false, sims.back().rows.size(), "rms ‖U^ε(T)‖ at the finest ε relative to the coarsest"});
  }

  // Expansion residual and the sign of H.
  if (mode == Mode::symmetric && eps_list.size() >= 3) {
    const std::size_t samples = static_cast<std::size_t>(ctx.cfg.get_int("verify.residual_samples"));
    std::vector<double> good, bad;
    for (double e : eps_list) {
      EpsSetup es = make_eps_setup(ctx, eff, e);
      good.push_back(expansion_residual(es.setup, 0, samples, 1.0).max_norm);
      bad.push_back(expansion_residual(es.setup, 0, samples, -1.0).max_norm);
    }
    const OrderFit g = order_fit(eps_list, good);
    const OrderFit b = order_fit(eps_list, bad);
    rep.add({"residual.order", g.slope, 0.8, INFINITY, g.slope >= 0.8, g.slope < 0.5, 1,
             "slope of the scaled ansatz residual"});
    rep.add({"residual.wrong_sign", b.slope, -INFINITY, 0.5, b.slope < 0.5, false, 1,
             "slope with the sign of H flipped"});
  }

  // Forced-problem decay checks.
  if (eps_list.size() >= 2) {
    const std::size_t reps = static_cast<std::size_t>(ctx.cfg.get_int("verify.decay_replicates"));
    const int state = static_cast<int>(ctx.cfg.get_int("verify.indicator_state"));
    std::vector<double> th, ell, hom;
    for (double e : eps_list) {
      EpsSetup es = make_eps_setup(ctx, eff, e);
      double a = 0.0, b = 0.0, c = 0.0;
      for (std::size_t r = 0; r < reps; ++r) {
        a += forced_problem(es.setup, r, DecayForcing::theta_indicator, state).sup_l2;
        b += forced_problem(es.setup, r, DecayForcing::ell_oscillation).sup_l2;
        c += forced_problem(es.setup, r, DecayForcing::ell_homogenization).hom_error;
      }
      th.push_back(a / reps);
      ell.push_back(b / reps);
      hom.push_back(c / reps);
    }
    auto ratio = [](const std::vector<double>& v) { return v.back() / v.front(); };
    rep.add({"forced.theta_forcing", ratio(th), 0.0, 1.0, decreasing_within(th), false, reps,
             "max_t ‖v‖ decreasing along the ladder (statistic: finest / coarsest)"});
    rep.add({"forced.ell_forcing", ratio(ell), 0.0, 1.0, decreasing_within(ell), false, reps,
             "max_t ‖v‖ decreasing along the ladder (statistic: finest / coarsest)"});
    rep.add({"forced.homogenized_forcing", ratio(hom), 0.0, 1.0, decreasing_within(hom), false, reps,
             "‖v(T) - w(T)‖ decreasing along the ladder (statistic: finest / coarsest)"});
  }

  // Limit SPDE sampler against its exact moments.
  {
    const CsvTable t = read_csv(ctx.out / "spde.csv");
    if (t.rows.size() >= 100)
      for (std::size_t q = 0; q < nphi; ++q) {
        const auto xs = t.column("proj" + std::to_string(q));
        const double mu = sj["moments"][q]["mean"].get<double>();
        const double var = sj["moments"][q]["variance"].get<double>();
        add_match(rep, "spde.phi" + std::to_string(q), distribution_match(xs, mu, var), xs.size());
        const double n = static_cast<double>(xs.size());
        const double sk = sample_skewness(xs), ku = sample_excess_kurtosis(xs);
        const double sks = 4.0 * std::sqrt(6.0 / n), kus = 4.0 * std::sqrt(24.0 / n);
        rep.add({"spde.phi" + std::to_string(q) + ".skewness", sk, -sks, sks, std::abs(sk) <= sks, false, xs.size(), ""});
        rep.add({"spde.phi" + std::to_string(q) + ".kurtosis", ku, -kus, kus, std::abs(ku) <= kus, false, xs.size(), "excess"});
      }
  }
  return rep;
}

void stage_verify(Context& ctx, std::string& text, int& code) {
  const VerificationReport rep = verify_all(ctx);
  json j = json::parse(rep.to_json());
  json out = ctx.header();
  out["ok"] = j["ok"];
  out["checks"] = j["checks"];
  write_file(ctx.out / "report.json", out.dump(2) + "\n");
  text = rep.to_text();
  write_file(ctx.out / "report.txt", "# config_hash=" + ctx.hash + "\n" + text);
  if (rep.hard_failure()) code = 3;
  else if (ctx.strict && !rep.ok()) code = 4;
}

bool outputs_valid(const fs::path& out, const std::vector<std::string>& files, const std::string& hash) {
  for (const auto& f : files)
    if (artifact_hash((out / f).string()) != hash) return false;
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> s = {"validate", "correctors", "effective", "simulate", "clt", "spde", "verify"};
  return s;
}

const std::vector<std::string>& stage_dependencies(const std::string& stage) {
  static const std::map<std::string, std::vector<std::string>> deps = {
      {"validate", {}},
      {"correctors", {"validate"}},
      {"effective", {"validate"}},
      {"simulate", {"effective"}},
      {"clt", {"effective"}},
      {"spde", {"effective"}},
      {"verify", {"effective", "simulate", "clt", "spde"}},
  };
  auto it = deps.find(stage);
  if (it == deps.end()) throw ConfigError("unknown stage '" + stage + "'");
  return it->second;
}

std::vector<std::string> stage_outputs(const std::string& stage, const Config& cfg) {
  if (stage == "validate") return {"validate.json"};
  if (stage == "correctors") return {"correctors.json", "correctors.csv", "decay.csv"};
  if (stage == "effective") return {"effective.json", "autocovariance.csv"};
  if (stage == "simulate") {
    std::vector<std::string> out;
    const auto eps = cfg.get_list("simulate.eps");
    const std::size_t snaps = cfg.get_list("simulate.snapshot_times").size();
    for (std::size_t i = 0; i < eps.size(); ++i) {
      out.push_back("simulate_" + eps_tag(i) + ".csv");
      out.push_back("field_" + eps_tag(i) + ".bin");
      for (std::size_t q = 0; q < snaps; ++q) out.push_back("snapshot_" + eps_tag(i) + "_" + std::to_string(q) + ".bin");
    }
    return out;
  }
  if (stage == "clt") return {"clt.csv"};
  if (stage == "spde") return {"spde.json", "spde.csv"};
  if (stage == "verify") return {"report.json", "report.txt"};
  throw ConfigError("unknown stage '" + stage + "'");
}

std::string artifact_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return "";
  std::string first;
  std::getline(f, first);
  const std::string tag = "# config_hash=";
  if (first.rfind(tag, 0) == 0) return first.substr(tag.size());
  try {
    if (path.size() > 4 && path.compare(path.size() - 4, 4, ".bin") == 0) {
      return json::parse(first)["config_hash"].get<std::string>();
    }
    const json j = read_json(path);
    if (j.contains("config_hash")) return j["config_hash"].get<std::string>();
  } catch (const std::exception&) {
  }
  return "";
}

Config resolve_config(const PipelineOptions& opt) {
  Config cfg = Config::defaults();
  if (opt.config_path.size() > 5 && opt.config_path.compare(opt.config_path.size() - 5, 5, ".json") == 0) {
    // A manifest from an earlier run: replay its canonical config.
    json m;
    try {
      m = read_json(opt.config_path);
    } catch (const std::exception& e) {
      throw ConfigError("cannot read manifest " + opt.config_path + ": " + e.what());
    }
    if (!m.contains("config_text")) throw ConfigError(opt.config_path + ": not a run manifest");
    std::istringstream in(m["config_text"].get<std::string>());
    cfg = Config::parse(in, opt.config_path);
  } else if (!opt.config_path.empty()) {
    cfg = Config::load(opt.config_path);
  }
  for (const auto& [k, v] : opt.overrides) cfg.set(k, v);
  if (opt.seed) cfg.set("seed", std::to_string(*opt.seed));
  if (opt.workers) cfg.set("workers", std::to_string(*opt.workers));
  return cfg;
}

PipelineResult run_pipeline(const PipelineOptions& opt) {
  Context ctx{resolve_config(opt), "", opt.out_dir, 1, opt.strict, opt.log, nullptr, nullptr};
  ctx.hash = sha256_hex(ctx.cfg.canonical());
  ctx.workers = config_workers(ctx.cfg);
  fs::create_directories(ctx.out);

  std::set<std::string> selected;
  for (const auto& s : opt.stages) {
    stage_dependencies(s);  // validates the name
    selected.insert(s);
  }
  if (selected.empty()) selected.insert(stage_names().begin(), stage_names().end());

  PipelineResult result;
  result.config_hash = ctx.hash;
  std::set<std::string> ran;
  for (const auto& name : stage_names()) {
    if (!selected.count(name)) continue;
    const auto outputs = stage_outputs(name, ctx.cfg);
    bool upstream_ran = false;
    for (const auto& d : stage_dependencies(name)) {
      if (ran.count(d)) {
        upstream_ran = true;
        continue;
      }
      if (!outputs_valid(ctx.out, stage_outputs(d, ctx.cfg), ctx.hash))
        throw DependencyError("stage '" + name + "' needs the outputs of '" + d +
                              "' for this config; run '" + d + "' first");
    }
    StageRecord rec;
    rec.name = name;
    rec.seed = ctx.cfg.get_uint("seed");
    rec.outputs = outputs;
    rec.started = utc_now();
    if (!opt.force && !upstream_ran && outputs_valid(ctx.out, outputs, ctx.hash)) {
      rec.status = "skipped";
      ctx.note(name + ": outputs match the config hash, skipped");
    } else {
      ctx.note(name + ": running");
      try {
        if (name == "validate") stage_validate(ctx);
        else if (name == "correctors") stage_correctors(ctx);
        else if (name == "effective") stage_effective(ctx);
        else if (name == "simulate") stage_simulate(ctx);
        else if (name == "clt") stage_clt(ctx);
        else if (name == "spde") stage_spde(ctx);
        else if (name == "verify") stage_verify(ctx, result.report_text, result.exit_code);
      } catch (const Error& e) {
        throw std::runtime_error("stage '" + name + "': " + e.what());
      }
      rec.status = "ran";
      ran.insert(name);
    }
    if (name == "verify" && rec.status == "skipped") {
      const std::string txt = read_file(ctx.out / "report.txt");
      result.report_text = txt.substr(txt.find('\n') + 1);
      const json rj = read_json(ctx.out / "report.json");
      bool hard = false;
      for (const auto& c : rj["checks"])
        if (c["hard"].get<bool>() && !c["pass"].get<bool>()) hard = true;
      if (hard) result.exit_code = 3;
      else if (opt.strict && !rj["ok"].get<bool>()) result.exit_code = 4;
    }
    rec.finished = utc_now();
    result.stages.push_back(rec);
  }

  // Merge with an existing manifest so that single-stage invocations keep earlier records.
  json manifest;
  const fs::path mpath = ctx.out / "manifest.json";
  std::map<std::string, json> records;
  if (fs::exists(mpath)) {
    try {
      const json old = read_json(mpath);
      if (old.value("config_hash", "") == ctx.hash)
        for (const auto& s : old["stages"]) records[s["name"].get<std::string>()] = s;
    } catch (const std::exception&) {
    }
  }
  for (const auto& r : result.stages)
    records[r.name] = json{{"name", r.name}, {"status", r.status}, {"seed", r.seed}, {"outputs", r.outputs},
                           {"started", r.started}, {"finished", r.finished}};
  manifest["config_hash"] = ctx.hash;
  manifest["tool_version"] = kToolVersion;
  manifest["config"] = opt.config_path;
  manifest["name"] = ctx.cfg.get("name");
  manifest["workers"] = ctx.workers;
  auto& st = manifest["stages"] = json::array();
  for (const auto& n : stage_names())
    if (records.count(n)) st.push_back(records[n]);
  manifest["tolerances"] = {{"tail_mass", ctx.cfg.get_double("simulate.tail_tolerance")},
                            {"clt_bootstrap_se", 4.0},
                            {"distribution_significance", 0.01},
                            {"mean_z", 3.0},
                            {"variance_ratio", {0.75, 1.33}},
                            {"slope_pass", 0.8},
                            {"slope_hard_fail", 0.5},
                            {"decay_slack", 0.2}};
  manifest["config_text"] = ctx.cfg.canonical();
  write_file(mpath, manifest.dump(2) + "\n");
  return result;
}

}  // namespace nlh
