// fedcam: run, compare and inspect poisoning-defense experiments.
//
//   fedcam run --config cfg.json --out runs/a
//   fedcam compare --config cfg.json --out runs/sweep --defense layercam_ae --defense multi_krum
//   fedcam inspect runs/a

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedcam/experiment.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::string> defenses;
  std::optional<std::size_t> attackers;
  std::optional<std::size_t> rounds;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON experiment config")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "master seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--attackers", o.attackers, "number of malicious clients");
  cmd->add_option("--rounds", o.rounds, "communication rounds");
}

fedcam::ExperimentConfig resolve(const Overrides& o) {
  fedcam::ExperimentConfig cfg = o.config.empty() ? fedcam::ExperimentConfig{} : fedcam::load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.output_dir = *o.out;
  if (o.defenses.size() == 1) cfg.defense = fedcam::defense_kind_from_string(o.defenses.front());
  if (o.attackers) cfg.num_attackers = *o.attackers;
  if (o.rounds) cfg.rounds = *o.rounds;
  if (cfg.output_dir.empty()) cfg.output_dir = "runs/" + fedcam::config_hash(cfg);
  fedcam::require_valid(cfg);
  return cfg;
}

std::string show(const std::optional<double>& v) { return v ? fedcam::csv_cell(v) : "undefined"; }

void print_summary(const fedcam::MetricsSummary& m) {
  std::cout << "  recall " << show(m.pooled.recall) << "  precision " << show(m.pooled.precision) << "  fpr "
            << show(m.pooled.fpr) << "  f1 " << show(m.pooled.f1) << "  auc " << show(m.auc) << "\n"
            << "  final test accuracy " << show(m.final_accuracy) << "\n";
}

int cmd_run(const Overrides& o) {
  const fedcam::ExperimentConfig cfg = resolve(o);
  std::cout << "run " << fedcam::config_hash(cfg) << " -> " << cfg.output_dir << "\n";
  fedcam::RunHooks hooks;
  hooks.on_round = [](const fedcam::RoundRecord& r) {
    std::size_t excluded = 0;
    for (bool in : r.include) excluded += in ? 0 : 1;
    std::cout << "round " << r.round << "  excluded " << excluded << "  acc "
              << (r.test_accuracy ? fedcam::csv_cell(r.test_accuracy) : "-") << std::endl;
  };
  const fedcam::RunResult res = fedcam::run_experiment(cfg, hooks);
  std::cout << "status " << res.manifest.status << "\n";
  print_summary(res.metrics);
  if (!res.ok()) {
    std::cerr << res.manifest.error << "\n";
    return 2;
  }
  return 0;
}

int cmd_compare(const Overrides& o) {
  Overrides base = o;
  base.defenses.clear();
  const fedcam::ExperimentConfig cfg = resolve(base);
  std::vector<fedcam::DefenseKind> list;
  for (const auto& d : o.defenses) list.push_back(fedcam::defense_kind_from_string(d));
  if (list.empty()) list.assign(std::begin(fedcam::kAllDefenses), std::end(fedcam::kAllDefenses));
  for (auto d : list) {
    fedcam::ExperimentConfig probe = cfg;
    probe.defense = d;
    fedcam::require_valid(probe);
  }
  const auto rows = fedcam::compare_defenses(cfg, list);
  int failures = 0;
  for (const auto& r : rows) {
    std::cout << r.defense << " [" << r.status << "]\n";
    print_summary(r.metrics);
    if (r.status != "completed") {
      std::cerr << r.defense << ": " << r.error << "\n";
      ++failures;
    }
  }
  std::cout << "table " << (std::filesystem::path(cfg.output_dir) / "comparison.csv").string() << "\n";
  return failures ? 2 : 0;
}

int cmd_inspect(const std::string& target) {
  std::filesystem::path p(target);
  if (std::filesystem::is_directory(p)) p /= "manifest.json";
  std::ifstream is(p);
  if (!is) {
    std::cerr << "cannot open " << p.string() << "\n";
    return 1;
  }
  const auto m = nlohmann::json::parse(is);
  std::cout << "manifest  " << p.string() << "\n"
            << "status    " << m.value("status", "?") << "\n"
            << "config    " << m.value("config_hash", "?") << "\n"
            << "seed      " << m.value("seed", std::uint64_t{0}) << "\n"
            << "build     " << m.value("build", "?") << "\n"
            << "rounds    " << m.value("rounds_completed", std::size_t{0}) << "\n";
  if (m.contains("failed_round") && !m["failed_round"].is_null()) {
    std::cout << "failed at round " << m["failed_round"] << ": " << m.value("error", "") << "\n";
  }
  if (m.contains("config")) std::cout << m["config"].dump(2) << "\n";
  const auto metrics = p.parent_path() / m.value("metrics_path", "metrics.csv");
  std::ifstream ms(metrics);
  if (ms) std::cout << "\n" << std::string(std::istreambuf_iterator<char>(ms), {});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated-learning poisoning simulator with CAM/autoencoder defenses"};
  app.require_subcommand(1);

  Overrides run_o, cmp_o;
  auto* run = app.add_subcommand("run", "run one experiment");
  add_common(run, run_o);
  run->add_option("--defense", run_o.defenses, "defense name")->expected(1);

  auto* cmp = app.add_subcommand("compare", "run a defense sweep on the same data and seed");
  add_common(cmp, cmp_o);
  cmp->add_option("--defense", cmp_o.defenses, "defense to include (repeatable; default all)");

  std::string target;
  auto* inspect = app.add_subcommand("inspect", "pretty-print a run manifest");
  inspect->add_option("path", target, "run directory or manifest.json")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(run_o);
    if (*cmp) return cmd_compare(cmp_o);
    if (*inspect) return cmd_inspect(target);
  } catch (const fedcam::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
