#pragma once

// Euclidean-constrained model poisoning. Every crafted upload stays within a
// ball of radius r around the attacker's estimate of the next global model,
// taken to be the mean of the benign uploads it eavesdropped.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedcam/data.hpp"
#include "fedcam/errors.hpp"
#include "fedcam/nn.hpp"
#include "fedcam/seeding.hpp"

namespace fedcam {

enum class AttackStrategy { sign_flip, noise_ball, grad_ascent };

inline std::string_view to_string(AttackStrategy s) {
  switch (s) {
    case AttackStrategy::sign_flip: return "sign_flip";
    case AttackStrategy::noise_ball: return "noise_ball";
    case AttackStrategy::grad_ascent: return "grad_ascent";
  }
  return "?";
}

inline AttackStrategy attack_strategy_from_string(std::string_view s) {
  for (auto k : {AttackStrategy::sign_flip, AttackStrategy::noise_ball, AttackStrategy::grad_ascent}) {
    if (to_string(k) == s) return k;
  }
  throw ParameterError("unknown attack strategy '" + std::string(s) + "'");
}

struct AttackConfig {
  AttackStrategy strategy = AttackStrategy::noise_ball;
  // r = radius_factor * median pairwise distance among benign uploads,
  // unless a fixed radius is given.
  double radius_factor = 0.5;
  std::optional<double> radius;
  std::size_t steps = 10;     // grad_ascent only
  double step_size = 0.5;     // grad_ascent step length as a fraction of r
  std::size_t batch_size = 64;  // grad_ascent: test samples per attacker
  std::uint64_t seed = 0;
};

/// Everything an attacker observes in one round.
struct AttackContext {
  std::size_t round = 0;
  const ModelParams* global = nullptr;
  std::span<const ModelParams> benign;
  const ClassifierArch* arch = nullptr;  // needed by grad_ascent
  const Dataset* test = nullptr;         // needed by grad_ascent
};

inline ModelParams project_to_ball(const ModelParams& candidate, const ModelParams& center, double r) {
  require_compatible(candidate, center, "project_to_ball");
  const double dist = euclidean_distance(candidate.values, center.values);
  if (dist <= r) return candidate;
  ModelParams out = center;
  const double scale = r / dist;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] += scale * (candidate.values[i] - center.values[i]);
  }
  return out;
}

inline ModelParams mean_params(std::span<const ModelParams> uploads) {
  if (uploads.empty()) throw ParameterError("mean_params: no uploads");
  ModelParams out = ModelParams::zeros(uploads.front().layers);
  for (const auto& u : uploads) {
    require_compatible(u, out, "mean_params");
    for (std::size_t i = 0; i < u.values.size(); ++i) out.values[i] += u.values[i];
  }
  for (auto& v : out.values) v /= static_cast<double>(uploads.size());
  return out;
}

inline double median_pairwise_distance(std::span<const ModelParams> uploads) {
  std::vector<double> d;
  for (std::size_t i = 0; i < uploads.size(); ++i) {
    for (std::size_t j = i + 1; j < uploads.size(); ++j) d.push_back(euclidean_distance(uploads[i].values, uploads[j].values));
  }
  if (d.empty()) return 0.0;
  std::sort(d.begin(), d.end());
  const std::size_t m = d.size() / 2;
  return d.size() % 2 ? d[m] : 0.5 * (d[m - 1] + d[m]);
}

inline double attack_radius(const AttackConfig& cfg, std::span<const ModelParams> benign) {
  if (cfg.radius) return *cfg.radius;
  return cfg.radius_factor * median_pairwise_distance(benign);
}

/// `center` plus a seeded Gaussian direction scaled to norm exactly r.
inline ModelParams noise_on_sphere(const ModelParams& center, double r, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> z(center.size());
  for (auto& v : z) v = n(rng);
  const double norm = l2_norm(z);
  ModelParams out = center;
  if (norm == 0.0) return out;
  for (std::size_t i = 0; i < z.size(); ++i) out.values[i] += r * z[i] / norm;
  return out;
}

/// Projected ascent from `center` inside the ball of radius r. Each step moves
/// step_size * r along the normalised gradient; a step is accepted only if it
/// raises the objective, otherwise its length is halved (at most 8 times).
inline ModelParams projected_gradient_ascent(const ModelParams& center, double r, std::size_t steps, double step_size,
                                             const std::function<double(const ModelParams&)>& objective,
                                             const std::function<std::vector<double>(const ModelParams&)>& gradient) {
  ModelParams w = center;
  if (r <= 0.0) return w;
  double current = objective(w);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::vector<double> g = gradient(w);
    const double gnorm = l2_norm(g);
    if (!(gnorm > 0.0) || !std::isfinite(gnorm)) break;
    double len = step_size * r;
    bool accepted = false;
    for (int tries = 0; tries < 9 && !accepted; ++tries, len *= 0.5) {
      ModelParams cand = w;
      for (std::size_t i = 0; i < g.size(); ++i) cand.values[i] += len * g[i] / gnorm;
      cand = project_to_ball(cand, center, r);
      const double value = objective(cand);
      if (value > current) {
        w = std::move(cand);
        current = value;
        accepted = true;
      }
    }
    if (!accepted) break;
  }
  return w;
}

namespace detail {

struct TestLoss {
  const ClassifierArch* arch;
  std::vector<const Tensor*> images;
  std::vector<std::size_t> labels;

  double value(const ModelParams& p) const {
    Network net = arch->network(p);
    double loss = 0.0;
    for (std::size_t i = 0; i < images.size(); ++i) loss += softmax_cross_entropy(net.forward(*images[i]).output, labels[i]).loss;
    return loss / static_cast<double>(images.size());
  }

  std::vector<double> gradient(const ModelParams& p) const {
    Network net = arch->network(p);
    std::vector<double> g(p.size(), 0.0);
    for (std::size_t i = 0; i < images.size(); ++i) {
      const ForwardResult fwd = net.forward(*images[i]);
      net.accumulate_gradient(softmax_cross_entropy(fwd.output, labels[i]).grad, g);
    }
    for (auto& v : g) v /= static_cast<double>(images.size());
    return g;
  }
};

}  // namespace detail

/// Malicious upload of attacker `index` (0-based among the attackers).
inline ModelParams craft_update(const AttackConfig& cfg, const AttackContext& ctx, std::size_t index) {
  if (ctx.global == nullptr) throw ParameterError("craft_update: no global model in context");
  const std::uint64_t seed = derive_seed(cfg.seed, {kStreamAttack, ctx.round, index});
  if (ctx.benign.empty()) {
    return noise_on_sphere(*ctx.global, cfg.radius.value_or(0.0), seed);
  }
  const ModelParams center = mean_params(ctx.benign);
  const double r = attack_radius(cfg, ctx.benign);
  switch (cfg.strategy) {
    case AttackStrategy::noise_ball: return noise_on_sphere(center, r, seed);
    case AttackStrategy::sign_flip: {
      // Step from the broadcast model against the benign consensus direction.
      require_compatible(center, *ctx.global, "craft_update");
      ModelParams cand = *ctx.global;
      const double dn = euclidean_distance(center.values, ctx.global->values);
      if (dn > 0.0) {
        for (std::size_t i = 0; i < cand.values.size(); ++i) {
          cand.values[i] -= r * (center.values[i] - ctx.global->values[i]) / dn;
        }
      }
      return project_to_ball(cand, center, r);
    }
    case AttackStrategy::grad_ascent: {
      if (ctx.arch == nullptr || ctx.test == nullptr || ctx.test->size() == 0) {
        throw ParameterError("craft_update: grad_ascent needs the architecture and a test set");
      }
      detail::TestLoss loss{ctx.arch, {}, {}};
      std::mt19937_64 rng(seed);
      std::uniform_int_distribution<std::size_t> pick(0, ctx.test->size() - 1);
      const std::size_t batch = std::min(cfg.batch_size == 0 ? ctx.test->size() : cfg.batch_size, ctx.test->size());
      for (std::size_t k = 0; k < batch; ++k) {
        const std::size_t i = batch == ctx.test->size() ? k : pick(rng);
        loss.images.push_back(&ctx.test->images[i]);
        loss.labels.push_back(ctx.test->labels[i]);
      }
      return projected_gradient_ascent(
          center, r, cfg.steps, cfg.step_size, [&](const ModelParams& p) { return loss.value(p); },
          [&](const ModelParams& p) { return loss.gradient(p); });
    }
  }
  return center;
}

inline std::vector<ModelParams> craft_updates(const AttackConfig& cfg, const AttackContext& ctx, std::size_t count) {
  std::vector<ModelParams> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) out.push_back(craft_update(cfg, ctx, k));
  return out;
}

}  // namespace fedcam
