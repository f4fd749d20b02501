#pragma once

// Communication rounds: broadcast, benign local training, malicious crafting,
// defense, and weighted aggregation over the included clients.
//
// Client order inside a round is fixed: benign clients in the order of
// Federation::clients, followed by the attackers.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedcam/autoencoder.hpp"
#include "fedcam/data.hpp"
#include "fedcam/errors.hpp"
#include "fedcam/nn.hpp"
#include "fedcam/seeding.hpp"

namespace fedcam {

enum class ClientRole { benign, malicious };
enum class OptimizerKind { adam, sgd };
enum class LossKind { cross_entropy, squared_error };

struct TrainingOptions {
  std::size_t local_epochs = 2;
  std::size_t batch_size = 10;
  double lr = 0.01;
  OptimizerKind optimizer = OptimizerKind::adam;
  LossKind loss = LossKind::cross_entropy;
};

struct ClientSpec {
  std::size_t id = 0;
  ClientRole role = ClientRole::benign;
  TrainingOptions training;
  std::vector<std::size_t> shard;  // indices into the training set
};

/// L epochs of shuffled mini-batch optimisation from `global` over the
/// client's shard. Squared-error loss regresses onto the one-hot label.
inline ModelParams local_update(const ClientSpec& client, const ModelParams& global, const Dataset& train,
                                const Shape& input_shape, std::uint64_t seed) {
  if (client.role != ClientRole::benign) throw ConfigError("local_update: client " + std::to_string(client.id) + " is not benign");
  if (client.shard.empty()) throw ConfigError("local_update: client " + std::to_string(client.id) + " has an empty shard");
  const TrainingOptions& opt = client.training;
  if (opt.batch_size == 0) throw ConfigError("local_update: batch_size must be >= 1");
  ModelParams params = global;
  if (opt.local_epochs == 0 || opt.lr == 0.0) return params;

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order = client.shard;
  AdamState adam;
  const AdamOptions adam_opt{opt.lr, 0.9, 0.999, 1e-8, 0.0};
  std::vector<Real> grad(params.size());
  std::vector<Real> target;
  for (std::size_t epoch = 0; epoch < opt.local_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t end = std::min(order.size(), start + opt.batch_size);
      Network net(params, input_shape);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        const ForwardResult fwd = net.forward(train.images.at(idx));
        if (opt.loss == LossKind::cross_entropy) {
          net.accumulate_gradient(softmax_cross_entropy(fwd.output, train.labels[idx]).grad, grad);
        } else {
          target.assign(fwd.output.size(), 0.0);
          target.at(train.labels[idx]) = 1.0;
          net.accumulate_gradient(squared_error(fwd.output, target).grad, grad);
        }
      }
      for (auto& g : grad) g /= static_cast<Real>(end - start);
      if (opt.optimizer == OptimizerKind::adam) {
        adam_update(adam, params.values, grad, adam_opt);
      } else {
        for (std::size_t i = 0; i < grad.size(); ++i) params.values[i] -= opt.lr * grad[i];
      }
    }
  }
  return params;
}

/// D_l / sum of D over included clients for included l, 0 otherwise.
inline std::vector<double> aggregation_weights(std::span<const double> claimed_sizes, const std::vector<bool>& include) {
  if (claimed_sizes.size() != include.size()) throw ShapeError("aggregation: sizes and mask differ in length");
  double total = 0.0;
  for (std::size_t l = 0; l < include.size(); ++l) {
    if (claimed_sizes[l] < 0.0) throw ParameterError("aggregation: negative claimed size");
    if (include[l]) total += claimed_sizes[l];
  }
  if (!(total > 0.0)) throw EmptyAggregationError("aggregation: every client is excluded");
  std::vector<double> w(include.size(), 0.0);
  for (std::size_t l = 0; l < include.size(); ++l) {
    if (include[l]) w[l] = claimed_sizes[l] / total;
  }
  return w;
}

inline ModelParams aggregate(std::span<const ModelParams> uploads, std::span<const double> claimed_sizes,
                             const std::vector<bool>& include) {
  if (uploads.size() != include.size()) throw ShapeError("aggregation: uploads and mask differ in length");
  const auto w = aggregation_weights(claimed_sizes, include);
  ModelParams out = ModelParams::zeros(uploads.front().layers);
  for (std::size_t l = 0; l < uploads.size(); ++l) {
    require_compatible(uploads[l], out, "aggregate");
    if (w[l] == 0.0) continue;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += w[l] * uploads[l].values[i];
  }
  for (double v : out.values) {
    if (!std::isfinite(v)) throw NumericError("aggregation produced a non-finite parameter");
  }
  return out;
}

struct RoundState {
  std::size_t t = 0;  // completed rounds; the next round executed is t + 1
  ModelParams global;
  std::vector<ModelParams> uploads;
  std::vector<double> claimed_sizes;
};

/// What the defense hook sees.
struct RoundContext {
  std::size_t round = 0;  // 1-based
  const ModelParams* global = nullptr;
  std::span<const ModelParams> uploads;
  std::span<const double> claimed_sizes;
  std::size_t num_benign = 0;
};

struct DefenseOutcome {
  std::vector<bool> include;
  std::vector<double> scores;
  std::optional<RoundVerdicts> verdicts;
  std::optional<std::vector<int>> votes;
  std::optional<ModelParams> aggregate_override;  // robust aggregators that bypass the mask
  std::string method = "none";
};

struct RoundRecord {
  std::size_t round = 0;
  std::string method;
  std::vector<int> malicious;  // ground truth, 1 = attacker
  std::vector<bool> include;
  std::vector<double> scores;
  std::optional<RoundVerdicts> verdicts;
  std::optional<std::vector<int>> votes;
  std::vector<double> weights;
  double weight_sum = 0.0;
  bool global_updated = false;
  double attack_radius = 0.0;
  std::optional<double> test_accuracy;
};

using AttackHook = std::function<std::vector<ModelParams>(std::size_t round, const ModelParams& global,
                                                          std::span<const ModelParams> benign)>;
using DefenseHook = std::function<DefenseOutcome(const RoundContext&)>;

inline DefenseOutcome no_defense(const RoundContext& ctx) {
  return {std::vector<bool>(ctx.uploads.size(), true), std::vector<double>(ctx.uploads.size(), 0.0), {}, {}, {}, "none"};
}

struct Federation {
  const Dataset* train = nullptr;
  Shape input_shape;
  std::vector<ClientSpec> clients;  // benign clients
  std::size_t num_attackers = 0;
  double attacker_claimed_size = 0.0;
  std::uint64_t seed = 0;
};

/// Executes round state.t + 1 and returns the advanced state. If every client
/// is excluded the global model carries over unchanged.
inline RoundState run_round(const RoundState& state, const Federation& fed, const DefenseHook& defense,
                            const AttackHook& attack, RoundRecord* record = nullptr) {
  const std::size_t t = state.t + 1;
  try {
    RoundState next;
    next.t = t;
    for (const auto& c : fed.clients) {
      next.uploads.push_back(
          local_update(c, state.global, *fed.train, fed.input_shape, derive_seed(fed.seed, {kStreamClient, t, c.id})));
      next.claimed_sizes.push_back(static_cast<double>(c.shard.size()));
    }
    const std::size_t num_benign = next.uploads.size();
    if (fed.num_attackers > 0) {
      if (!attack) throw ConfigError("attackers configured without an attack hook");
      auto crafted = attack(t, state.global, std::span<const ModelParams>(next.uploads.data(), num_benign));
      if (crafted.size() != fed.num_attackers) throw ShapeError("attack hook returned the wrong number of uploads");
      for (auto& m : crafted) {
        require_compatible(m, state.global, "attack upload");
        next.uploads.push_back(std::move(m));
        next.claimed_sizes.push_back(fed.attacker_claimed_size);
      }
    }

    const RoundContext ctx{t, &state.global, next.uploads, next.claimed_sizes, num_benign};
    DefenseOutcome outcome = defense ? defense(ctx) : no_defense(ctx);
    if (outcome.include.size() != next.uploads.size()) throw ShapeError("defense returned a mask of the wrong length");

    RoundRecord rec;
    rec.round = t;
    rec.method = outcome.method;
    for (std::size_t l = 0; l < next.uploads.size(); ++l) rec.malicious.push_back(l >= num_benign ? 1 : 0);
    rec.include = outcome.include;
    rec.scores = outcome.scores;
    rec.verdicts = outcome.verdicts;
    rec.votes = outcome.votes;

    if (outcome.aggregate_override) {
      next.global = std::move(*outcome.aggregate_override);
      rec.global_updated = true;
      rec.weight_sum = 1.0;
    } else {
      try {
        rec.weights = aggregation_weights(next.claimed_sizes, outcome.include);
        next.global = aggregate(next.uploads, next.claimed_sizes, outcome.include);
        rec.global_updated = true;
        for (double w : rec.weights) rec.weight_sum += w;
      } catch (const EmptyAggregationError&) {
        next.global = state.global;
        rec.weights.assign(next.uploads.size(), 0.0);
      }
    }
    if (record) *record = std::move(rec);
    return next;
  } catch (const RoundError&) {
    throw;
  } catch (const std::exception& e) {
    throw RoundError(t, e.what());
  }
}

}  // namespace fedcam
