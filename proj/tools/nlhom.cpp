// nlhom: command-line front end for the homogenization pipeline.
//
// Every global flag can also be set through the environment with the NLHOM_ prefix
// (NLHOM_CONFIG, NLHOM_OUT, NLHOM_SEED, NLHOM_WORKERS, NLHOM_STRICT). Flags win over the environment.

#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nlh/pipeline.hpp"

namespace {

std::string join_numbers(const std::vector<double>& v) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulation and verification of nonlocal homogenization in a random dynamic environment"};
  app.set_version_flag("--version", std::string(nlh::kToolVersion));
  app.require_subcommand(1, 1);

  nlh::PipelineOptions opt;
  std::uint64_t seed = 0;
  int workers = 0;
  bool quiet = false;
  std::vector<std::string> sets;

  app.add_option("--config,-c", opt.config_path, "configuration file, or a manifest.json to replay")->envname("NLHOM_CONFIG");
  app.add_option("--out,-o", opt.out_dir, "output directory")->envname("NLHOM_OUT");
  auto* seed_opt = app.add_option("--seed", seed, "override the master seed")->envname("NLHOM_SEED");
  auto* workers_opt = app.add_option("--workers", workers, "worker threads (0 = hardware)")->envname("NLHOM_WORKERS");
  app.add_flag("--strict", opt.strict, "soft verification failures give exit code 4")->envname("NLHOM_STRICT");
  app.add_flag("--force", opt.force, "rerun stages even when their outputs are current");
  app.add_flag("--quiet,-q", quiet, "no progress output");
  app.add_option("--set", sets, "override a config key (key=value), repeatable");

  std::map<std::string, CLI::App*> subs;
  for (const auto& name : nlh::stage_names()) subs[name] = app.add_subcommand(name, "run the " + name + " stage");
  auto* pipeline = app.add_subcommand("pipeline", "run the selected stages in dependency order");
  std::vector<std::string> stages;
  pipeline->add_option("--stages", stages, "stage subset (default: all)")->delimiter(',');

  std::vector<double> eps;
  double horizon = 0.0;
  std::vector<double> snapshots;
  std::size_t replicates = 0;
  std::string mode;
  auto* sim = subs["simulate"];
  auto* eps_opt = sim->add_option("--eps", eps, "ε ladder")->delimiter(',');
  auto* hor_opt = sim->add_option("--horizon,-T", horizon, "final time T");
  auto* snap_opt = sim->add_option("--snapshots", snapshots, "snapshot times")->delimiter(',');
  auto* rep_opt = sim->add_option("--replicates,-M", replicates, "realizations per ε");
  for (auto* a : {sim, pipeline})
    a->add_option("--mode", mode, "symmetric or nonsymmetric")->check(CLI::IsMember({"symmetric", "nonsymmetric"}));

  CLI11_PARSE(app, argc, argv);

  if (*seed_opt) opt.seed = seed;
  if (*workers_opt) opt.workers = workers;
  if (!quiet) opt.log = &std::cerr;
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::cerr << "error: --set expects key=value, got '" << kv << "'\n";
      return 2;
    }
    opt.overrides[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  if (!mode.empty()) opt.overrides["mode"] = mode;
  if (*eps_opt) opt.overrides["simulate.eps"] = join_numbers(eps);
  if (*hor_opt) opt.overrides["simulate.horizon"] = join_numbers({horizon});
  if (*snap_opt) opt.overrides["simulate.snapshot_times"] = join_numbers(snapshots);
  if (*rep_opt) opt.overrides["simulate.replicates"] = std::to_string(replicates);

  if (pipeline->parsed()) {
    opt.stages = stages;
  } else {
    for (const auto& [name, sub] : subs)
      if (sub->parsed()) opt.stages = {name};
  }

  try {
    const nlh::PipelineResult r = nlh::run_pipeline(opt);
    if (!r.report_text.empty()) std::cout << r.report_text;
    if (!quiet) std::cerr << "config hash " << r.config_hash << ", outputs in " << opt.out_dir << "\n";
    return r.exit_code;
  } catch (const nlh::DependencyError& e) {
    std::cerr << "ordering error: " << e.what() << "\n";
    return 5;
  } catch (const nlh::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
