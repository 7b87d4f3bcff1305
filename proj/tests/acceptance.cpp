// Acceptance run: one PASS/FAIL line per criterion, nonzero exit when any criterion fails.
//
// Usage: acceptance [output-dir]   (configs are read from NLH_CONFIG_DIR)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nlh/config.hpp"
#include "nlh/corrector.hpp"
#include "nlh/effective.hpp"
#include "nlh/pipeline.hpp"
#include "nlh/verify.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace nlh;

namespace {

fs::path g_out;
const fs::path g_configs = NLH_CONFIG_DIR;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json load_json(const fs::path& p) { return json::parse(slurp(p)); }

std::vector<std::string> with_dependencies(const std::vector<std::string>& wanted) {
  std::set<std::string> need;
  std::function<void(const std::string&)> add = [&](const std::string& s) {
    if (!need.insert(s).second) return;
    for (const auto& d : stage_dependencies(s)) add(d);
  };
  for (const auto& s : wanted) add(s);
  std::vector<std::string> out;
  for (const auto& s : stage_names())
    if (need.count(s)) out.push_back(s);
  return out;
}

PipelineResult run(const std::string& config, const fs::path& out, const std::vector<std::string>& stages,
                   std::map<std::string, std::string> overrides = {}, bool force = false) {
  PipelineOptions o;
  o.config_path = config;
  o.out_dir = out.string();
  o.stages = stages.empty() ? stages : with_dependencies(stages);
  o.overrides = std::move(overrides);
  o.force = force;
  return run_pipeline(o);
}

std::string cfg_path(const std::string& name) { return (g_configs / (name + ".cfg")).string(); }

Eigen::MatrixXd dense_L(const GeneratorMatrix& gen, int k) {
  Eigen::MatrixXd l = gen.matrix(k);
  l.diagonal() -= gen.row_sums(k);
  return l;
}

// 1. Constant coefficients.
Outcome criterion1() {
  // The rectangle-rule second moment of the uniform kernel is within 1e-6 of 1/3 only for N_t ≳ 200.
  const int n = 512;
  const EnvironmentModel env = EnvironmentModel::from_coefficients(
      Kernel::uniform(1.0), MarkovDriver(Eigen::MatrixXd::Zero(1, 1)), n, {FieldCoefficients{}}, 0.5, 1.5);
  const GeneratorMatrix gen(env);
  StateGrid grid;
  grid.ds = 0.25;
  grid.states.assign(250, 0);
  const CorrectorField rhs = corrector_rhs(RhsKind::g, gen, grid, {});
  const CorrectorSolve chi = solve_stationary_corrector(gen, grid, rhs, Normalization::plain_mean, nullptr, 50);
  double chi_max = 0.0;
  for (double v : chi.field.data) chi_max = std::max(chi_max, std::abs(v));
  const CorrectorField p = solve_invariant_density(gen, grid, 100, 140);
  double p_dev = 0.0;
  for (double v : p.data) p_dev = std::max(p_dev, std::abs(v - 1.0));
  const BetaReport b = compute_beta(gen, grid, &p, 100);
  double beta_max = 0.0;
  for (double v : b.beta) beta_max = std::max(beta_max, std::abs(v));

  double theta_dev = 0.0, h_max = 0.0, c_max = 0.0;
  for (Mode mode : {Mode::symmetric, Mode::nonsymmetric}) {
    ErgodicOptions o;
    o.mode = mode;
    o.production = 40;
    o.batches = 4;
    o.burn_in = 5;
    o.pilot_horizon = 20;
    const EffectiveCoefficients e = compute_effective(env, gen, o);
    theta_dev = std::max(theta_dev, std::abs(e.theta(0, 0) - 1.0 / 6.0));
    h_max = std::max(h_max, std::abs(e.h[0]));
    c_max = std::max(c_max, std::abs(e.c(0, 0)));
    beta_max = std::max(beta_max, std::abs(e.beta));
  }
  Outcome r;
  r.pass = chi_max <= 1e-10 && p_dev <= 1e-10 && beta_max <= 1e-10 && theta_dev <= 1e-6 && h_max <= 1e-8 &&
           c_max == 0.0;
  r.detail = "N_t=512 |chi1|=" + fmt("%.2g", chi_max) + " |p-1|=" + fmt("%.2g", p_dev) +
             " |beta|=" + fmt("%.2g", beta_max) + " |Theta-1/6|=" + fmt("%.2g", theta_dev) +
             " |H|=" + fmt("%.2g", h_max) + " C=" + fmt("%.2g", c_max);
  return r;
}

// 2. Corrector stationarity and uniqueness on the shipped default environments.
Outcome criterion2() {
  const EnvironmentModel env = build_environment(Config::load(cfg_path("default-symmetric")));
  const GeneratorMatrix gen(env);
  const int n = gen.points();
  const double ds = 0.25;
  const std::size_t burn = 400, window = 2000;
  const StateGrid grid = sample_states(sample_path(env.driver(), (burn + window + 10) * ds, 77, 0), 0.0, ds,
                                       burn + window + 1);
  const DecayFit fit = estimate_decay(gen, grid, 5);

  // Production-window trajectories from zero and from random initial data.
  const CorrectorField rhs = corrector_rhs(RhsKind::g, gen, grid, {});
  const CorrectorSolve a = solve_stationary_corrector(gen, grid, rhs, Normalization::plain_mean, nullptr, burn);
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> init(n);
  for (double& v : init) v = u(rng);
  const double m0 = weighted_mean(init, {});
  for (double& v : init) v -= m0;
  const CorrectorSolve b =
      solve_stationary_corrector(gen, grid, rhs, Normalization::plain_mean, nullptr, burn, init);
  double agree = 0.0;
  for (std::size_t s = 0; s < a.field.count; ++s) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += std::pow(a.field.at(s)[i] - b.field.at(s)[i], 2);
    agree = std::max(agree, std::sqrt(acc / n));
  }

  // Residual against independently assembled dense operators and drift fields.
  std::vector<Eigen::MatrixXd> l;
  std::vector<Eigen::VectorXd> g;
  for (int k = 0; k < gen.states(); ++k) {
    l.push_back(dense_L(gen, k));
    Eigen::VectorXd gk(n);
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int m = gen.stencil().m_min; m <= gen.stencil().m_max; ++m)
        acc -= gen.stencil().weight(m) * env.field(k, i, ((i - m) % n + n) % n) * gen.stencil().z(m);
      gk[i] = acc;
    }
    g.push_back(gk);
  }
  double residual = 0.0;
  for (std::size_t s = 0; s + 1 < a.field.count; ++s) {
    const int k = grid.states[burn + s];
    const Eigen::Map<const Eigen::VectorXd> x0(a.field.at(s).data(), n), x1(a.field.at(s + 1).data(), n);
    const Eigen::VectorXd res = (x1 - x0) / ds - l[k] * x0 - g[k];
    residual = std::max(residual, res.cwiseAbs().maxCoeff());
  }

  // p-weighted χ1 mean in the non-symmetric default model.
  const EnvironmentModel ens = build_environment(Config::load(cfg_path("default-nonsymmetric")));
  const GeneratorMatrix gns(ens);
  const std::size_t count = 1200, look = 400;
  const StateGrid gg = sample_states(sample_path(ens.driver(), (count + look + 10) * ds, 78, 0), 0.0, ds,
                                     count + look + 1);
  const CorrectorField p = solve_invariant_density(gns, gg, count, look);
  const BetaReport beta = compute_beta(gns, gg, &p, count);
  RhsInputs in;
  in.p = &p;
  in.beta = beta.beta;
  const CorrectorField rhs_ns = corrector_rhs(RhsKind::g_plus_beta, gns, gg, in);
  const CorrectorSolve w = solve_stationary_corrector(gns, gg, rhs_ns, Normalization::weighted_mean, &p, 200);

  Outcome r;
  r.pass = fit.gamma > 0.0 && fit.r2 >= 0.95 && agree <= 1e-7 && residual <= 1e-10 && w.mean_drift <= 1e-7;
  r.detail = "gamma0=" + fmt("%.4g", fit.gamma) + " R2=" + fmt("%.5f", fit.r2) + " two-init L2 gap=" +
             fmt("%.2g", agree) + " residual=" + fmt("%.2g", residual) + " weighted mean drift=" +
             fmt("%.2g", w.mean_drift);
  return r;
}

// 3. Invariant density contract.
Outcome criterion3() {
  const EnvironmentModel env = build_environment(Config::load(cfg_path("default-nonsymmetric")));
  const GeneratorMatrix gen(env);
  const int n = gen.points();
  const std::size_t count = 2000, look = 400;
  const StateGrid grid =
      sample_states(sample_path(env.driver(), (count + look + 10) * 0.25, 31, 0), 0.0, 0.25, count + look + 1);
  const CorrectorField p = solve_invariant_density(gen, grid, count, look);
  double mass_dev = 0.0, pmin = 1e300, pmax = 0.0;
  for (std::size_t s = 0; s < p.count; ++s) {
    const auto v = p.at(s);
    double mass = 0.0;
    for (double x : v) mass += x / n;
    mass_dev = std::max(mass_dev, std::abs(mass - 1.0));
    pmin = std::min(pmin, *std::min_element(v.begin(), v.end()));
    pmax = std::max(pmax, *std::max_element(v.begin(), v.end()));
  }

  const EnvironmentModel fz = build_environment(Config::load(cfg_path("frozen-nonsymmetric")));
  const GeneratorMatrix gf(fz);
  StateGrid fg;
  fg.ds = 0.25;
  fg.states.assign(2200, 0);
  const CorrectorField pf = solve_invariant_density(gf, fg, 100, 2000);
  const Eigen::MatrixXd lt = dense_L(gf, 0).transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(lt, Eigen::ComputeFullV);
  Eigen::VectorXd ref = svd.matrixV().col(lt.cols() - 1);
  ref /= ref.mean();
  double frozen_dev = 0.0;
  for (std::size_t s = 0; s < pf.count; ++s)
    for (int i = 0; i < gf.points(); ++i) frozen_dev = std::max(frozen_dev, std::abs(pf.at(s)[i] - ref[i]));
  const double spread = (ref.array() - 1.0).abs().maxCoeff();

  Outcome r;
  r.pass = mass_dev <= 1e-12 && pmin > 0.0 && frozen_dev <= 1e-8;
  r.detail = "|sum p dxi - 1|=" + fmt("%.2g", mass_dev) + " p in [" + fmt("%.4g", pmin) + ", " +
             fmt("%.4g", pmax) + "] frozen |p - null vector|=" + fmt("%.2g", frozen_dev) +
             " (null vector spread " + fmt("%.3g", spread) + ")";
  return r;
}

// 4. Positive definiteness on every shipped configuration.
Outcome criterion4() {
  Outcome r;
  r.pass = true;
  std::vector<fs::path> cfgs;
  for (const auto& e : fs::directory_iterator(g_configs))
    if (e.path().extension() == ".cfg") cfgs.push_back(e.path());
  std::sort(cfgs.begin(), cfgs.end());
  for (const auto& c : cfgs) {
    const std::string name = c.stem().string();
    double theta = std::nan("");
    try {
      run(c.string(), g_out / name, {"effective"});
      theta = load_json(g_out / name / "effective.json")["theta"].get<double>();
    } catch (const std::exception& e) {
      std::cerr << name << ": " << e.what() << "\n";
    }
    const bool ok = theta > 0.0;
    r.pass = r.pass && ok;
    r.detail += (r.detail.empty() ? "" : " ") + name + "=" + fmt("%.5g", theta);
  }
  r.detail = "min eig sym(Theta): " + r.detail;
  return r;
}

// 5. Non-symmetric machinery on a symmetric environment.
Outcome criterion5() {
  const std::map<std::string, std::string> base = {{"effective.production", "20000"}};
  auto sym = base, ns = base;
  sym["mode"] = "symmetric";
  ns["mode"] = "nonsymmetric";
  run(cfg_path("default-symmetric"), g_out / "c5-symmetric", {"effective"}, sym);
  run(cfg_path("default-symmetric"), g_out / "c5-nonsymmetric", {"effective"}, ns);
  const json a = load_json(g_out / "c5-symmetric" / "effective.json");
  const json b = load_json(g_out / "c5-nonsymmetric" / "effective.json");
  Outcome r;
  r.pass = true;
  for (const auto& [key, se] : std::vector<std::pair<std::string, std::string>>{{"theta", "theta_se"},
                                                                               {"c", "c_se"},
                                                                               {"h", "h_se"}}) {
    const double d = std::abs(a[key].get<double>() - b[key].get<double>());
    const double s = a[se].get<double>();
    r.pass = r.pass && d <= 1e-8 && d <= 3.0 * s + 1e-300;
    r.detail += key + " diff=" + fmt("%.2g", d) + " (" + fmt("%.2g", s > 0 ? d / s : 0.0) + " se) ";
  }
  const double beta = std::abs(b["beta"].get<double>());
  r.pass = r.pass && beta <= 1e-8;
  r.detail += "|beta|=" + fmt("%.2g", beta);
  return r;
}

// 2 ⟨f̃, (-Q)^{-1} f̃⟩_π
double resolvent_c(const MarkovDriver& d, const Eigen::VectorXd& f) {
  const Eigen::VectorXd& pi = d.stationary();
  const Eigen::VectorXd ft = f.array() - pi.dot(f);
  const Eigen::VectorXd g = (-d.generator()).completeOrthogonalDecomposition().solve(ft);
  const Eigen::VectorXd g0 = g.array() - pi.dot(g);
  return 2.0 * (pi.array() * ft.array() * g0.array()).sum();
}

// 6. Functional CLT on the scalar toy.
Outcome criterion6() {
  const Config cfg = Config::load(cfg_path("scalar-toy"));
  const EnvironmentModel env = build_environment(cfg);
  const GeneratorMatrix gen(env);
  Eigen::VectorXd f(gen.states());
  for (int k = 0; k < gen.states(); ++k) f[k] = 0.5 * gen.moment(k, 2).mean();
  const double c = resolvent_c(env.driver(), f);
  const double horizon = cfg.get_double("clt.horizon");

  run(cfg_path("scalar-toy"), g_out / "scalar-toy", {"clt"});
  std::ifstream in(g_out / "scalar-toy" / "clt.csv");
  std::string line;
  std::getline(in, line);  // hash
  std::getline(in, line);  // header
  std::vector<double> kappa;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string eps, rep, k;
    std::getline(ls, eps, ',');
    std::getline(ls, rep, ',');
    std::getline(ls, k, ',');
    if (std::abs(std::stod(eps) - 0.02) < 1e-12) kappa.push_back(std::stod(k));
  }
  const double var = sample_variance(kappa);
  const double ratio = var / (horizon * c);
  // Θ^eff carries a Monte Carlo error that shifts κ by O(T/ε); normality is tested about the sample mean.
  const KsResult ks = ks_test_normal(kappa, sample_mean(kappa), std::sqrt(var));
  Outcome r;
  r.pass = kappa.size() == 400 && ratio >= 0.8 && ratio <= 1.2 && ks.p >= 0.01;
  r.detail = "eps=0.02 M=" + std::to_string(kappa.size()) + " C_oracle=" + fmt("%.5g", c) +
             " Var/(T C)=" + fmt("%.4f", ratio) + " KS p=" + fmt("%.3g", ks.p);
  return r;
}

// 7-10 read the verify report of the full symmetric default pipeline.
json g_report;

const json& check(const std::string& name) {
  for (const auto& c : g_report["checks"])
    if (c["name"] == name) return c;
  throw std::runtime_error("missing check " + name);
}

Outcome from_checks(const std::vector<std::string>& names) {
  Outcome r;
  r.pass = true;
  for (const auto& n : names) {
    const json& c = check(n);
    r.pass = r.pass && c["pass"].get<bool>();
    r.detail += (r.detail.empty() ? "" : " ") + n + "=" + fmt("%.4g", c["statistic"].get<double>()) +
                (c["pass"].get<bool>() ? "" : "(fail)");
  }
  return r;
}

Outcome criterion7() { return from_checks({"homogenization.order"}); }

Outcome criterion8() {
  std::vector<std::string> names;
  for (int i = 0; i < 3; ++i) {
    names.push_back("diffusion.phi" + std::to_string(i) + ".mean_z");
    names.push_back("diffusion.phi" + std::to_string(i) + ".var_ratio");
  }
  names.push_back("diffusion.negative_control");
  Outcome r = from_checks(names);
  r.detail = "eps=0.05 M=" + std::to_string(check("diffusion.phi0.mean_z")["samples"].get<std::size_t>()) + " " +
             r.detail;
  return r;
}

Outcome criterion9() { return from_checks({"residual.order", "residual.wrong_sign"}); }

Outcome criterion10() { return from_checks({"forced.theta_forcing", "forced.ell_forcing"}); }

// 11. Replay from the manifest into a fresh directory.
Outcome criterion11() {
  const fs::path a = g_out / "default-symmetric", b = g_out / "replay";
  fs::remove_all(b);
  run((a / "manifest.json").string(), b, {}, {}, true);
  Outcome r;
  r.pass = true;
  std::size_t files = 0;
  std::vector<std::string> differ;
  for (const auto& e : fs::directory_iterator(a)) {
    const std::string name = e.path().filename().string();
    if (name == "manifest.json") continue;
    ++files;
    if (!fs::exists(b / name) || slurp(e.path()) != slurp(b / name)) differ.push_back(name);
  }
  r.pass = differ.empty() && files > 0;
  r.detail = std::to_string(files) + " artifacts compared, " + std::to_string(differ.size()) + " differ";
  for (const auto& d : differ) r.detail += " " + d;
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  g_out = argc > 1 ? fs::path(argv[1]) : fs::path("acceptance_out");
  fs::create_directories(g_out);

  struct Item {
    int id;
    const char* title;
    std::function<Outcome()> fn;
  };
  bool report_ready = false;
  auto full = [&](std::function<Outcome()> fn) {
    return [&, fn]() {
      if (!report_ready) {
        const PipelineResult pr = run(cfg_path("default-symmetric"), g_out / "default-symmetric", {});
        (void)pr;
        g_report = load_json(g_out / "default-symmetric" / "report.json");
        report_ready = true;
      }
      return fn();
    };
  };
  const std::vector<Item> items = {
      {1, "constant-coefficient ground truth", criterion1},
      {2, "corrector stationarity and uniqueness", criterion2},
      {3, "invariant density contract", criterion3},
      {4, "positive definiteness", full(criterion4)},
      {5, "symmetric-limit consistency", criterion5},
      {6, "functional CLT, scalar toy", criterion6},
      {7, "first-order homogenization", full(criterion7)},
      {8, "diffusion approximation", full(criterion8)},
      {9, "expansion residual and sign arbitration", full(criterion9)},
      {10, "forced-problem decay", full(criterion10)},
      {11, "determinism under manifest replay", full(criterion11)},
  };

  int failed = 0;
  std::ofstream summary(g_out / "acceptance.txt");
  for (const auto& it : items) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = it.fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failed;
    char head[96];
    std::snprintf(head, sizeof head, "criterion %2d %s  %-42s ", it.id, o.pass ? "PASS" : "FAIL", it.title);
    const std::string line = head + o.detail + "  [" + fmt("%.1f", sec) + " s]";
    std::cout << line << std::endl;
    summary << line << "\n";
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(items.size()) - failed, items.size());
  return failed == 0 ? 0 : 1;
}
