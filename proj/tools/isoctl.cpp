// isoctl: sample systems, run optimization sweeps, evaluate persisted systems and
// summarize run directories.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "iso/harness.hpp"
#include "iso/persistence.hpp"
#include "iso/user_sim.hpp"

namespace fs = std::filesystem;

namespace {

struct SweepOptions {
  std::string config;
  std::string preset = "paper";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
};

void add_sweep_flags(CLI::App* cmd, SweepOptions& o) {
  cmd->add_option("--config", o.config, "key = value experiment config file")->check(CLI::ExistingFile);
  cmd->add_option("--preset", o.preset, "base settings before the config file is applied")
      ->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
}

iso::ExperimentConfig resolve(const SweepOptions& o) {
  auto cfg = o.preset == "desk" ? iso::ExperimentConfig::desk() : iso::ExperimentConfig::paper();
  if (!o.config.empty()) cfg = iso::parse_config(iso::read_file(o.config), cfg);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.out_dir = *o.out;
  if (o.threads) cfg.threads = *o.threads;
  cfg.check();
  return cfg;
}

int cmd_gen(const SweepOptions& o) {
  const auto cfg = resolve(o);
  fs::create_directories(cfg.out_dir);
  for (int cf : cfg.cf) {
    for (int i = 0; i < cfg.n_systems; ++i) {
      const auto sys = iso::sample_experiment_system(cfg, i, cf);
      const auto path = cfg.out_dir / ("system_" + std::to_string(i) + "_cf" + std::to_string(cf) + ".json");
      iso::save_system(path, sys.mdp, sys.reward, iso::system_seed(cfg.seed, i));
      std::cout << path.string() << '\n';
    }
  }
  return 0;
}

int cmd_run(const SweepOptions& o) {
  const auto cfg = resolve(o);
  const auto summary = iso::run_experiment(cfg);
  int failed = 0;
  for (const auto& c : summary.cells) failed += c.error ? 1 : 0;
  std::cout << "cells: " << summary.cells.size() << ", failed: " << failed << ", output: " << cfg.out_dir.string()
            << '\n';
  const auto table = iso::report(cfg.out_dir);
  std::cout << iso::format_report(table);
  return 0;
}

int cmd_eval(const std::string& system_path, const std::string& policy_path, const std::string& write_policy) {
  const auto doc = iso::load_system(system_path);
  std::optional<iso::PolicyTable> policy;
  if (!policy_path.empty()) {
    policy = iso::load_policy(policy_path);
  } else {
    policy = iso::soft_value_iteration(doc.mdp, doc.reward).policy;
  }
  if (!write_policy.empty()) iso::save_policy(write_policy, *policy);
  std::printf("%s\n", iso::format_real(iso::expected_start_value(doc.mdp, *policy, doc.reward)).c_str());
  return 0;
}

int cmd_report(const std::string& dir) {
  const auto table = iso::report(dir);
  std::cout << iso::format_report(table);
  return table.rows.empty() ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Optimize simulated interactive systems against rewards recovered from user trajectories"};
  app.require_subcommand(1);

  SweepOptions gen_opts;
  auto* gen = app.add_subcommand("gen", "sample systems and write them as JSON documents");
  add_sweep_flags(gen, gen_opts);

  SweepOptions run_opts;
  auto* run = app.add_subcommand("run", "run the optimization sweep and write CSV output");
  add_sweep_flags(run, run_opts);

  std::string system_path, policy_path, write_policy;
  auto* eval = app.add_subcommand("eval", "expected start value of a persisted system under a policy");
  eval->add_option("--system", system_path, "system document")->required()->check(CLI::ExistingFile);
  eval->add_option("--policy", policy_path, "policy document; defaults to the soft-optimal user policy")
      ->check(CLI::ExistingFile);
  eval->add_option("--write-policy", write_policy, "write the evaluated policy to this path");

  std::string report_dir;
  auto* rep = app.add_subcommand("report", "aggregate run CSVs by behavior and connection factor");
  rep->add_option("dir", report_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen(gen_opts);
    if (*run) return cmd_run(run_opts);
    if (*eval) return cmd_eval(system_path, policy_path, write_policy);
    if (*rep) return cmd_report(report_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
