#pragma once

// Config-driven experiment runner. A run is fully determined by its config
// (including the seed): data generation, partition, initialisation, client
// training, attacks and the defense all draw from streams derived from it.
//
// Precedence: built-in defaults < config file < command-line overrides.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedcam/attack.hpp"
#include "fedcam/autoencoder.hpp"
#include "fedcam/data.hpp"
#include "fedcam/defense.hpp"
#include "fedcam/errors.hpp"
#include "fedcam/io.hpp"
#include "fedcam/layercam.hpp"
#include "fedcam/metrics.hpp"
#include "fedcam/nn.hpp"
#include "fedcam/protocol.hpp"
#include "fedcam/seeding.hpp"

#ifndef FEDCAM_BUILD_ID
#define FEDCAM_BUILD_ID "unknown"
#endif

namespace fedcam {

using nlohmann::json;

struct PartitionSpec {
  bool dirichlet = false;
  double alpha = 0.5;
};

inline std::string to_string(const PartitionSpec& p) {
  if (!p.dirichlet) return "iid";
  std::ostringstream os;
  os << "dirichlet:" << p.alpha;
  return os.str();
}

/// "iid" or "dirichlet:<alpha>".
inline PartitionSpec parse_partition(const std::string& s) {
  if (s == "iid") return {};
  const std::string prefix = "dirichlet:";
  if (s.rfind(prefix, 0) == 0) {
    std::size_t used = 0;
    double a = 0.0;
    try {
      a = std::stod(s.substr(prefix.size()), &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used > 0 && used == s.size() - prefix.size()) return {true, a};
  }
  throw ConfigError("partition must be 'iid' or 'dirichlet:<alpha>', got '" + s + "'");
}

struct ExperimentConfig {
  std::uint64_t seed = 1;

  std::size_t num_benign = 21;
  std::size_t num_attackers = 3;
  std::size_t rounds = 30;

  TrainingOptions training;

  std::size_t num_classes = 10;
  std::size_t image_size = 16;
  std::size_t samples_per_client = 100;
  double noise_sigma = 0.2;
  double test_fraction = 0.2;
  PartitionSpec partition;

  AttackConfig attack;

  DefenseKind defense = DefenseKind::layercam_ae;
  double alpha_threshold = 1.0;
  std::size_t xi = 3;
  std::size_t epsilon = 2;
  bool voting = true;
  BaselineOptions baseline;

  AeOptions ae;

  std::size_t warmup_rounds = 3;

  std::string output_dir;  // empty: keep everything in memory
  bool dump_heatmaps = true;
};

namespace detail {

template <class T>
json opt_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace detail

inline json config_to_json(const ExperimentConfig& c) {
  return {
      {"seed", c.seed},
      {"topology", {{"benign", c.num_benign}, {"attackers", c.num_attackers}, {"rounds", c.rounds}}},
      {"client",
       {{"local_epochs", c.training.local_epochs},
        {"batch_size", c.training.batch_size},
        {"lr", c.training.lr},
        {"optimizer", c.training.optimizer == OptimizerKind::adam ? "adam" : "sgd"}}},
      {"data",
       {{"classes", c.num_classes},
        {"image_size", c.image_size},
        {"samples_per_client", c.samples_per_client},
        {"noise_sigma", c.noise_sigma},
        {"test_fraction", c.test_fraction},
        {"partition", to_string(c.partition)}}},
      {"attack",
       {{"strategy", std::string(to_string(c.attack.strategy))},
        {"radius_factor", c.attack.radius_factor},
        {"radius", detail::opt_json(c.attack.radius)},
        {"steps", c.attack.steps},
        {"step_size", c.attack.step_size},
        {"batch_size", c.attack.batch_size}}},
      {"defense",
       {{"name", std::string(to_string(c.defense))},
        {"alpha", c.alpha_threshold},
        {"xi", c.xi},
        {"epsilon", c.epsilon},
        {"voting", c.voting},
        {"krum_f", detail::opt_json(c.baseline.krum_f)},
        {"krum_m", detail::opt_json(c.baseline.krum_m)},
        {"trim_k", detail::opt_json(c.baseline.trim_k)},
        {"auror_threshold", detail::opt_json(c.baseline.auror_threshold)}}},
      {"autoencoder",
       {{"hidden", c.ae.hidden}, {"epochs", c.ae.epochs}, {"lr", c.ae.lr}, {"weight_decay", c.ae.weight_decay}}},
      {"metrics", {{"warmup_rounds", c.warmup_rounds}}},
      {"output", {{"dir", c.output_dir}, {"heatmaps", c.dump_heatmaps}}},
  };
}

namespace detail {

inline void overlay(json& base, const json& patch, const std::string& path, std::vector<std::string>& unknown) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) {
      unknown.push_back(key);
      continue;
    }
    json& slot = base[it.key()];
    if (slot.is_object() && it.value().is_object()) {
      overlay(slot, it.value(), key, unknown);
    } else {
      slot = it.value();
    }
  }
}

class FieldReader {
 public:
  explicit FieldReader(const json& root) : root_(root) {}

  template <class T>
  void read(const char* section, const char* key, T& out) {
    const std::string name = std::string(section) + "." + key;
    try {
      out = root_.at(section).at(key).get<T>();
    } catch (const std::exception&) {
      bad_.push_back(name);
    }
  }

  template <class T>
  void read(const char* section, const char* key, std::optional<T>& out) {
    const std::string name = std::string(section) + "." + key;
    try {
      const json& v = root_.at(section).at(key);
      out = v.is_null() ? std::nullopt : std::optional<T>(v.get<T>());
    } catch (const std::exception&) {
      bad_.push_back(name);
    }
  }

  template <class F>
  void convert(const char* section, const char* key, F&& f) {
    const std::string name = std::string(section) + "." + key;
    try {
      f(root_.at(section).at(key).get<std::string>());
    } catch (const std::exception&) {
      bad_.push_back(name);
    }
  }

  std::vector<std::string>& bad() { return bad_; }

 private:
  const json& root_;
  std::vector<std::string> bad_;
};

inline std::string join_fields(const std::vector<std::string>& fields) {
  std::string s;
  for (const auto& f : fields) s += (s.empty() ? "" : ", ") + f;
  return s;
}

}  // namespace detail

/// Offending fields of an otherwise well-typed config, with a reason each.
inline std::vector<std::string> validate(const ExperimentConfig& c) {
  std::vector<std::string> bad;
  auto check = [&](bool ok, const char* field, const char* why) {
    if (!ok) bad.push_back(std::string(field) + " (" + why + ")");
  };
  const std::size_t n = c.num_benign + c.num_attackers;
  check(c.num_benign >= 1, "topology.benign", "need at least one benign client");
  check(c.rounds >= 1, "topology.rounds", "must be >= 1");
  check(c.training.batch_size >= 1, "client.batch_size", "must be >= 1");
  check(c.training.lr >= 0.0 && std::isfinite(c.training.lr), "client.lr", "must be finite and >= 0");
  check(c.num_classes >= 2, "data.classes", "must be >= 2");
  check(c.image_size >= 5, "data.image_size", "two 3x3 convolutions need at least 5 pixels");
  check(c.samples_per_client >= 1, "data.samples_per_client", "must be >= 1");
  check(c.noise_sigma >= 0.0, "data.noise_sigma", "must be >= 0");
  check(c.test_fraction > 0.0 && c.test_fraction < 1.0, "data.test_fraction", "must be in (0, 1)");
  check(!c.partition.dirichlet || c.partition.alpha > 0.0, "data.partition", "dirichlet alpha must be > 0");
  check(!c.attack.radius || *c.attack.radius >= 0.0, "attack.radius", "must be >= 0");
  check(c.attack.radius_factor >= 0.0, "attack.radius_factor", "must be >= 0");
  check(c.attack.strategy != AttackStrategy::grad_ascent || c.attack.steps >= 1, "attack.steps",
        "grad_ascent needs at least one step");
  check(c.attack.step_size > 0.0, "attack.step_size", "must be > 0");
  check(c.alpha_threshold >= 0.0, "defense.alpha", "must be >= 0");
  check(c.xi >= 1, "defense.xi", "must be >= 1");
  check(c.epsilon >= 1, "defense.epsilon", "must be >= 1");
  check(!c.voting || c.epsilon <= c.xi, "defense.epsilon", "must not exceed xi unless voting is disabled");
  if (c.defense == DefenseKind::multi_krum || c.defense == DefenseKind::layercam_krum) {
    const std::size_t f = c.baseline.krum_f.value_or(c.num_attackers);
    check(n >= 2 * f + 3, "defense.krum_f", "Krum needs at least 2f+3 clients");
    check(!c.baseline.krum_m || (*c.baseline.krum_m >= 1 && *c.baseline.krum_m <= n), "defense.krum_m",
          "must be in [1, clients]");
  }
  if (c.defense == DefenseKind::trimmed_mean) {
    check(2 * c.baseline.trim_k.value_or(c.num_attackers) < n, "defense.trim_k", "need 2k < clients");
  }
  if (c.defense == DefenseKind::auror) check(n >= 2, "topology", "AUROR needs at least two clients");
  check(c.ae.hidden >= 1, "autoencoder.hidden", "must be >= 1");
  check(c.ae.epochs >= 1, "autoencoder.epochs", "must be >= 1");
  check(c.ae.lr > 0.0, "autoencoder.lr", "must be > 0");
  check(c.ae.weight_decay >= 0.0, "autoencoder.weight_decay", "must be >= 0");
  return bad;
}

inline void require_valid(const ExperimentConfig& c) {
  const auto bad = validate(c);
  if (!bad.empty()) throw ConfigError("invalid config: " + detail::join_fields(bad), bad);
}

/// Defaults overlaid with `j`. Unknown keys and ill-typed values are
/// reported together in one ConfigError.
inline ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object", {"<root>"});
  ExperimentConfig c;
  json merged = config_to_json(c);
  std::vector<std::string> unknown;
  detail::overlay(merged, j, "", unknown);

  detail::FieldReader r(merged);
  try {
    c.seed = merged.at("seed").get<std::uint64_t>();
  } catch (const std::exception&) {
    r.bad().push_back("seed");
  }
  r.read("topology", "benign", c.num_benign);
  r.read("topology", "attackers", c.num_attackers);
  r.read("topology", "rounds", c.rounds);
  r.read("client", "local_epochs", c.training.local_epochs);
  r.read("client", "batch_size", c.training.batch_size);
  r.read("client", "lr", c.training.lr);
  r.convert("client", "optimizer", [&](const std::string& s) {
    if (s == "adam") c.training.optimizer = OptimizerKind::adam;
    else if (s == "sgd") c.training.optimizer = OptimizerKind::sgd;
    else throw ConfigError(s);
  });
  r.read("data", "classes", c.num_classes);
  r.read("data", "image_size", c.image_size);
  r.read("data", "samples_per_client", c.samples_per_client);
  r.read("data", "noise_sigma", c.noise_sigma);
  r.read("data", "test_fraction", c.test_fraction);
  r.convert("data", "partition", [&](const std::string& s) { c.partition = parse_partition(s); });
  r.convert("attack", "strategy", [&](const std::string& s) { c.attack.strategy = attack_strategy_from_string(s); });
  r.read("attack", "radius_factor", c.attack.radius_factor);
  r.read("attack", "radius", c.attack.radius);
  r.read("attack", "steps", c.attack.steps);
  r.read("attack", "step_size", c.attack.step_size);
  r.read("attack", "batch_size", c.attack.batch_size);
  r.convert("defense", "name", [&](const std::string& s) { c.defense = defense_kind_from_string(s); });
  r.read("defense", "alpha", c.alpha_threshold);
  r.read("defense", "xi", c.xi);
  r.read("defense", "epsilon", c.epsilon);
  r.read("defense", "voting", c.voting);
  r.read("defense", "krum_f", c.baseline.krum_f);
  r.read("defense", "krum_m", c.baseline.krum_m);
  r.read("defense", "trim_k", c.baseline.trim_k);
  r.read("defense", "auror_threshold", c.baseline.auror_threshold);
  r.read("autoencoder", "hidden", c.ae.hidden);
  r.read("autoencoder", "epochs", c.ae.epochs);
  r.read("autoencoder", "lr", c.ae.lr);
  r.read("autoencoder", "weight_decay", c.ae.weight_decay);
  r.read("metrics", "warmup_rounds", c.warmup_rounds);
  r.read("output", "dir", c.output_dir);
  r.read("output", "heatmaps", c.dump_heatmaps);

  std::vector<std::string> bad = r.bad();
  for (const auto& u : unknown) bad.push_back(u + " (unknown field)");
  if (!bad.empty()) throw ConfigError("invalid config: " + detail::join_fields(bad), bad);
  require_valid(c);
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string(), {"--config"});
  json j;
  try {
    j = json::parse(is, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what(), {"<root>"});
  }
  return config_from_json(j);
}

/// 64-bit FNV-1a of the canonical JSON text (sorted keys, shortest
/// round-trip numbers), with the output section left out.
inline std::string config_hash(const ExperimentConfig& c) {
  json j = config_to_json(c);
  j.erase("output");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Everything a run derives from the config before round 1.
struct ExperimentData {
  ClassifierArch arch;
  Dataset train;
  Dataset test;
  Partition partition;
  ProbeImage probe;
  ModelParams initial;
};

inline ExperimentData prepare_data(const ExperimentConfig& c) {
  ExperimentData d;
  d.arch.num_classes = c.num_classes;
  d.arch.image_size = c.image_size;
  const double train_share = 1.0 - c.test_fraction;
  const auto per_class = static_cast<std::size_t>(std::ceil(static_cast<double>(c.num_benign * c.samples_per_client) /
                                                            (train_share * static_cast<double>(c.num_classes))));
  const Dataset all = generate_synthetic(c.num_classes, std::max<std::size_t>(per_class, 2), c.noise_sigma,
                                         derive_seed(c.seed, {kStreamData}), 1, c.image_size);
  TrainTestSplit split = stratified_split(all, c.test_fraction, derive_seed(c.seed, {kStreamSplit}));
  d.train = std::move(split.train);
  d.test = std::move(split.test);
  const std::uint64_t ps = derive_seed(c.seed, {kStreamPartition});
  d.partition = c.partition.dirichlet ? partition_dirichlet(d.train, c.num_benign, c.partition.alpha, ps)
                                      : partition_iid(d.train, c.num_benign, ps);
  std::mt19937_64 rng(derive_seed(c.seed, {kStreamProbe}));
  const std::size_t pi = std::uniform_int_distribution<std::size_t>(0, d.test.size() - 1)(rng);
  d.probe = {d.test.images[pi], d.test.labels[pi]};
  d.initial = d.arch.init(derive_seed(c.seed, {kStreamInit}));
  return d;
}

inline Federation make_federation(const ExperimentConfig& c, const ExperimentData& d) {
  Federation fed;
  fed.train = &d.train;
  fed.input_shape = d.arch.input_shape();
  fed.num_attackers = c.num_attackers;
  fed.seed = c.seed;
  double total = 0.0;
  for (std::size_t l = 0; l < d.partition.num_clients(); ++l) {
    fed.clients.push_back({l, ClientRole::benign, c.training, d.partition.client_indices[l]});
    total += d.partition.claimed_sizes[l];
  }
  fed.attacker_claimed_size = total / static_cast<double>(d.partition.num_clients());
  return fed;
}

struct MetricsSummary {
  std::string method;
  ConfusionCounts counts;
  DetectionMetrics pooled;
  std::optional<double> auc;
  DetectionMetrics per_round_mean;
  std::optional<double> per_round_auc;
  std::optional<double> final_accuracy;
  std::size_t rounds_scored = 0;
};

/// Detection metrics over rounds after the warm-up. A client counts as
/// flagged in a round when it is left out of that round's aggregation.
inline MetricsSummary summarize(std::span<const RoundRecord> records, std::size_t warmup) {
  MetricsSummary s;
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<std::vector<double>> per_round(6);
  auto push = [](std::vector<double>& v, const std::optional<double>& x) {
    if (x) v.push_back(*x);
  };
  for (const auto& r : records) {
    s.method = r.method;
    if (r.test_accuracy) s.final_accuracy = r.test_accuracy;
    if (r.round <= warmup) continue;
    ++s.rounds_scored;
    ConfusionCounts round_counts;
    for (std::size_t l = 0; l < r.include.size(); ++l) round_counts.add(!r.include[l], r.malicious.at(l) != 0);
    s.counts += round_counts;
    const DetectionMetrics m = detection_metrics(round_counts);
    push(per_round[0], m.recall);
    push(per_round[1], m.precision);
    push(per_round[2], m.fpr);
    push(per_round[3], m.acc);
    push(per_round[4], m.f1);
    if (r.scores.size() == r.malicious.size()) {
      scores.insert(scores.end(), r.scores.begin(), r.scores.end());
      labels.insert(labels.end(), r.malicious.begin(), r.malicious.end());
      push(per_round[5], auc(r.scores, r.malicious));
    }
  }
  s.pooled = detection_metrics(s.counts);
  if (!scores.empty()) s.auc = auc(scores, labels);
  auto mean = [](const std::vector<double>& v) -> std::optional<double> {
    if (v.empty()) return std::nullopt;
    double t = 0.0;
    for (double x : v) t += x;
    return t / static_cast<double>(v.size());
  };
  s.per_round_mean = {mean(per_round[0]), mean(per_round[1]), mean(per_round[2]), mean(per_round[3]),
                      mean(per_round[4])};
  s.per_round_auc = mean(per_round[5]);
  return s;
}

inline json record_to_json(const RoundRecord& r) {
  json j{{"round", r.round},
         {"method", r.method},
         {"malicious", r.malicious},
         {"include", r.include},
         {"scores", r.scores},
         {"weights", r.weights},
         {"weight_sum", r.weight_sum},
         {"global_updated", r.global_updated},
         {"attack_radius", r.attack_radius},
         {"test_accuracy", detail::opt_json(r.test_accuracy)},
         {"verdicts", nullptr},
         {"votes", detail::opt_json(r.votes)}};
  if (r.verdicts) {
    j["verdicts"] = {{"errors", r.verdicts->errors},
                     {"mean", r.verdicts->mean},
                     {"stddev", r.verdicts->stddev},
                     {"threshold", r.verdicts->threshold},
                     {"flags", r.verdicts->verdicts}};
  }
  return j;
}

inline std::string csv_cell(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

inline const char* kMetricsHeader = "method,aggregation,recall,precision,fpr,acc,f1,auc,final_test_accuracy";

inline std::string metrics_csv_rows(const MetricsSummary& s, const std::string& label) {
  auto row = [&](const char* agg, const DetectionMetrics& m, const std::optional<double>& a) {
    return label + "," + agg + "," + csv_cell(m.recall) + "," + csv_cell(m.precision) + "," + csv_cell(m.fpr) + "," +
           csv_cell(m.acc) + "," + csv_cell(m.f1) + "," + csv_cell(a) + "," + csv_cell(s.final_accuracy) + "\n";
  };
  return row("pooled", s.pooled, s.auc) + row("per_round_mean", s.per_round_mean, s.per_round_auc);
}

struct RunManifest {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string build = FEDCAM_BUILD_ID;
  std::string status = "running";  // running | completed | failed
  std::optional<std::size_t> failed_round;
  std::string error;
  std::size_t rounds_completed = 0;
  std::string rounds_path = "rounds.jsonl";
  std::string metrics_path = "metrics.csv";
  std::string model_path = "model_final.bin";
  std::string heatmap_dir = "heatmaps";
};

inline json manifest_to_json(const RunManifest& m, const ExperimentConfig& c) {
  return {{"config_hash", m.config_hash},
          {"seed", m.seed},
          {"build", m.build},
          {"status", m.status},
          {"failed_round", detail::opt_json(m.failed_round)},
          {"error", m.error},
          {"rounds_completed", m.rounds_completed},
          {"rounds_path", m.rounds_path},
          {"metrics_path", m.metrics_path},
          {"model_path", m.model_path},
          {"heatmap_dir", m.heatmap_dir},
          {"config", config_to_json(c)}};
}

struct RunResult {
  RunManifest manifest;
  ExperimentConfig config;
  std::vector<RoundRecord> records;
  ModelParams final_model;
  MetricsSummary metrics;

  bool ok() const noexcept { return manifest.status == "completed"; }
};

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + p.string());
  os << text;
}

inline void dump_heatmaps(const std::filesystem::path& dir, std::size_t t, const CamRoundTrace& trace) {
  const auto round_dir = dir / ("round_" + std::to_string(t));
  std::filesystem::create_directories(round_dir);
  for (std::size_t l = 0; l < trace.maps.size(); ++l) {
    save_pgm(round_dir / ("client_" + std::to_string(l) + ".pgm"), trace.maps[l].values);
  }
}

}  // namespace detail

struct RunHooks {
  std::function<void(const RoundRecord&)> on_round;
  std::function<void(std::size_t, const CamRoundTrace&)> on_cam_round;
};

/// Runs the configured experiment. A failure inside a round does not throw:
/// the manifest is marked failed with the round index and the completed
/// rounds stay on disk.
inline RunResult run_experiment(const ExperimentConfig& cfg, const RunHooks& hooks = {}) {
  require_valid(cfg);
  RunResult res;
  res.config = cfg;
  res.manifest.config_hash = config_hash(cfg);
  res.manifest.seed = cfg.seed;

  const bool persist = !cfg.output_dir.empty();
  const std::filesystem::path out(cfg.output_dir);
  std::ofstream rounds_file;
  auto write_manifest = [&] {
    if (persist) detail::write_text(out / "manifest.json", manifest_to_json(res.manifest, cfg).dump(2) + "\n");
  };
  if (persist) {
    std::filesystem::create_directories(out);
    write_manifest();
    rounds_file.open(out / res.manifest.rounds_path, std::ios::binary | std::ios::trunc);
    if (!rounds_file) throw Error("cannot write " + (out / res.manifest.rounds_path).string());
  }

  const ExperimentData data = prepare_data(cfg);
  const Federation fed = make_federation(cfg, data);

  AttackConfig attack_cfg = cfg.attack;
  attack_cfg.seed = cfg.seed;
  double last_radius = 0.0;
  AttackHook attack = [&](std::size_t t, const ModelParams& global, std::span<const ModelParams> benign) {
    last_radius = benign.empty() ? attack_cfg.radius.value_or(0.0) : attack_radius(attack_cfg, benign);
    const AttackContext ctx{t, &global, benign, &data.arch, &data.test};
    return craft_updates(attack_cfg, ctx, cfg.num_attackers);
  };

  const std::size_t clients = cfg.num_benign + cfg.num_attackers;
  std::shared_ptr<CamAeDefense> cam_ae;
  std::shared_ptr<CamKrumDefense> cam_krum;
  DefenseHook defense;
  switch (cfg.defense) {
    case DefenseKind::layercam_ae:
    case DefenseKind::gradcam_ae: {
      CamAeOptions o;
      o.method = cfg.defense == DefenseKind::layercam_ae ? CamMethod::layercam : CamMethod::gradcam;
      o.ae = cfg.ae;
      o.alpha = cfg.alpha_threshold;
      o.xi = cfg.xi;
      o.epsilon = cfg.epsilon;
      o.voting = cfg.voting;
      o.seed = cfg.seed;
      cam_ae = std::make_shared<CamAeDefense>(data.arch, data.probe, o, clients);
      defense = [cam_ae](const RoundContext& ctx) { return (*cam_ae)(ctx); };
      break;
    }
    case DefenseKind::layercam_krum:
      cam_krum = std::make_shared<CamKrumDefense>(data.arch, data.probe, cfg.baseline);
      defense = [cam_krum](const RoundContext& ctx) { return (*cam_krum)(ctx); };
      break;
    case DefenseKind::multi_krum:
      defense = [b = cfg.baseline](const RoundContext& ctx) { return multi_krum_defense(b, ctx); };
      break;
    case DefenseKind::trimmed_mean:
      defense = [b = cfg.baseline](const RoundContext& ctx) { return trimmed_mean_defense(b, ctx); };
      break;
    case DefenseKind::auror:
      defense = [b = cfg.baseline](const RoundContext& ctx) { return auror_defense(b, ctx); };
      break;
    case DefenseKind::none: defense = no_defense; break;
  }

  RoundState state;
  state.global = data.initial;
  try {
    for (std::size_t t = 1; t <= cfg.rounds; ++t) {
      RoundRecord rec;
      state = run_round(state, fed, defense, attack, &rec);
      rec.attack_radius = cfg.num_attackers > 0 ? last_radius : 0.0;
      try {
        rec.test_accuracy = test_accuracy(data.arch, state.global, data.test);
      } catch (const std::exception& e) {
        throw RoundError(t, std::string("evaluation: ") + e.what());
      }
      if (persist) {
        rounds_file << record_to_json(rec).dump() << "\n";
        rounds_file.flush();
        if (cfg.dump_heatmaps && (t == 1 || t % cfg.xi == 0)) {
          if (cam_ae) detail::dump_heatmaps(out / res.manifest.heatmap_dir, t, cam_ae->last_round());
          if (cam_krum) detail::dump_heatmaps(out / res.manifest.heatmap_dir, t, cam_krum->last_round());
        }
      }
      if (hooks.on_cam_round) {
        if (cam_ae) hooks.on_cam_round(t, cam_ae->last_round());
        if (cam_krum) hooks.on_cam_round(t, cam_krum->last_round());
      }
      if (hooks.on_round) hooks.on_round(rec);
      res.records.push_back(std::move(rec));
      res.manifest.rounds_completed = t;
    }
    res.manifest.status = "completed";
  } catch (const RoundError& e) {
    res.manifest.status = "failed";
    res.manifest.failed_round = e.round();
    res.manifest.error = e.what();
  }

  res.final_model = state.global;
  res.metrics = summarize(res.records, cfg.warmup_rounds);
  if (persist) {
    rounds_file.close();
    detail::write_text(out / res.manifest.metrics_path,
                       std::string(kMetricsHeader) + "\n" + metrics_csv_rows(res.metrics, std::string(to_string(cfg.defense))));
    save_params(out / res.manifest.model_path, res.final_model);
    write_manifest();
  }
  return res;
}

struct ComparisonRow {
  std::string defense;
  std::string status;
  std::string error;
  MetricsSummary metrics;
};

/// One run per defense from the same seed, data and partition. Failed runs
/// are reported in their row and the sweep continues.
inline std::vector<ComparisonRow> compare_defenses(const ExperimentConfig& base, std::span<const DefenseKind> defenses) {
  std::vector<ComparisonRow> rows;
  const std::filesystem::path out(base.output_dir);
  std::string csv = std::string(kMetricsHeader) + ",status\n";
  for (std::size_t i = 0; i < defenses.size(); ++i) {
    ExperimentConfig cfg = base;
    cfg.defense = defenses[i];
    const std::string name(to_string(defenses[i]));
    if (!base.output_dir.empty()) {
      char prefix[24];
      std::snprintf(prefix, sizeof prefix, "%02zu_", i);
      cfg.output_dir = (out / (prefix + name)).string();
    }
    ComparisonRow row{name, "completed", "", {}};
    try {
      const RunResult r = run_experiment(cfg);
      row.status = r.manifest.status;
      row.error = r.manifest.error;
      row.metrics = r.metrics;
    } catch (const std::exception& e) {
      row.status = "failed";
      row.error = e.what();
    }
    std::istringstream lines(metrics_csv_rows(row.metrics, name));
    for (std::string line; std::getline(lines, line);) csv += line + "," + row.status + "\n";
    rows.push_back(std::move(row));
  }
  if (!base.output_dir.empty()) {
    std::filesystem::create_directories(out);
    detail::write_text(out / "comparison.csv", csv);
  }
  return rows;
}

}  // namespace fedcam
