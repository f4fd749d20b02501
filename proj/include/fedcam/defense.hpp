#pragma once

// Server-side defenses as round hooks. The CAM defenses turn every upload into
// a heat map on a fixed probe image, score the maps with a freshly trained
// autoencoder and filter through the voting window; the rest wrap the
// distance-based baselines.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedcam/autoencoder.hpp"
#include "fedcam/baselines.hpp"
#include "fedcam/errors.hpp"
#include "fedcam/layercam.hpp"
#include "fedcam/nn.hpp"
#include "fedcam/protocol.hpp"
#include "fedcam/seeding.hpp"
#include "fedcam/voting.hpp"

namespace fedcam {

enum class DefenseKind { layercam_ae, gradcam_ae, layercam_krum, multi_krum, trimmed_mean, auror, none };

inline constexpr DefenseKind kAllDefenses[] = {DefenseKind::layercam_ae, DefenseKind::gradcam_ae,
                                               DefenseKind::layercam_krum, DefenseKind::multi_krum,
                                               DefenseKind::trimmed_mean, DefenseKind::auror, DefenseKind::none};

inline std::string_view to_string(DefenseKind k) {
  switch (k) {
    case DefenseKind::layercam_ae: return "layercam_ae";
    case DefenseKind::gradcam_ae: return "gradcam_ae";
    case DefenseKind::layercam_krum: return "layercam_krum";
    case DefenseKind::multi_krum: return "multi_krum";
    case DefenseKind::trimmed_mean: return "trimmed_mean";
    case DefenseKind::auror: return "auror";
    case DefenseKind::none: return "none";
  }
  return "?";
}

inline DefenseKind defense_kind_from_string(std::string_view s) {
  for (auto k : kAllDefenses) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown defense '" + std::string(s) + "'");
}

inline bool uses_heatmaps(DefenseKind k) {
  return k == DefenseKind::layercam_ae || k == DefenseKind::gradcam_ae || k == DefenseKind::layercam_krum;
}

struct CamAeOptions {
  CamMethod method = CamMethod::layercam;
  AeOptions ae;
  double alpha = 1.0;
  std::size_t xi = 3;
  std::size_t epsilon = 2;
  bool voting = true;
  std::uint64_t seed = 0;  // the AE of round t is initialised from derive_seed(seed, {autoencoder, t})
};

/// Heat maps, reconstruction errors and verdicts of the last processed round.
struct CamRoundTrace {
  std::vector<HeatMap> maps;
  Tensor rows;
  std::optional<RoundVerdicts> verdicts;
  std::vector<double> ae_loss;  // per-epoch training loss of the round's autoencoder
};

inline std::vector<HeatMap> client_heatmaps(CamMethod method, const ClassifierArch& arch,
                                            std::span<const ModelParams> uploads, const ProbeImage& probe,
                                            std::size_t round) {
  std::vector<HeatMap> maps;
  maps.reserve(uploads.size());
  for (std::size_t l = 0; l < uploads.size(); ++l) {
    HeatMap m = cam_map(method, arch, uploads[l], probe);
    m.client_id = l;
    m.round = round;
    maps.push_back(std::move(m));
  }
  return maps;
}

class CamAeDefense {
 public:
  CamAeDefense(ClassifierArch arch, ProbeImage probe, CamAeOptions opt, std::size_t clients)
      : arch_(arch), probe_(std::move(probe)), opt_(opt), votes_(opt.xi, opt.epsilon, clients) {
    if (opt.voting && opt.epsilon > opt.xi) throw ConfigError("epsilon must not exceed xi while voting is enabled");
    if (opt.alpha < 0.0) throw ConfigError("alpha must be >= 0");
  }

  DefenseOutcome operator()(const RoundContext& ctx) {
    trace_.maps = client_heatmaps(opt_.method, arch_, ctx.uploads, probe_, ctx.round);
    trace_.rows = flatten_maps(trace_.maps);
    AeOptions ae_opt = opt_.ae;
    ae_opt.seed = derive_seed(opt_.seed, {kStreamAutoencoder, ctx.round});
    const Autoencoder ae = train_ae(trace_.rows, ae_opt);
    trace_.ae_loss = ae.loss_history;
    const std::vector<double> errors = score(ae, trace_.rows);
    RoundVerdicts rv = threshold_and_verdicts(errors, opt_.alpha);

    DefenseOutcome out;
    out.method = opt_.method == CamMethod::layercam ? "layercam_ae" : "gradcam_ae";
    out.scores = errors;
    if (opt_.voting) {
      votes_.push(rv.verdicts, ctx.round);
      if (is_vote_round(ctx.round, opt_.xi)) out.votes = votes_.decide();
      out.include = include_mask(rv.verdicts, out.votes, ctx.round, opt_.xi);
    } else {
      for (int o : rv.verdicts) out.include.push_back(o != 0);
    }
    trace_.verdicts = rv;
    out.verdicts = std::move(rv);
    return out;
  }

  const CamRoundTrace& last_round() const noexcept { return trace_; }
  const ProbeImage& probe() const noexcept { return probe_; }

 private:
  ClassifierArch arch_;
  ProbeImage probe_;
  CamAeOptions opt_;
  VoteBuffer votes_;
  CamRoundTrace trace_;
};

struct BaselineOptions {
  std::optional<std::size_t> krum_f;           // default: number of attackers
  std::optional<std::size_t> krum_m;           // default: n - f
  std::optional<std::size_t> trim_k;           // default: number of attackers
  std::optional<double> auror_threshold;       // default: mean pairwise upload distance
};

inline std::size_t resolve_f(const BaselineOptions& b, const RoundContext& ctx) {
  return b.krum_f.value_or(ctx.uploads.size() - ctx.num_benign);
}

inline DefenseOutcome from_verdict(DefenseVerdict v) {
  DefenseOutcome out;
  out.include = std::move(v.include);
  out.scores = std::move(v.scores);
  out.method = std::move(v.method);
  return out;
}

inline DefenseOutcome multi_krum_defense(const BaselineOptions& b, const RoundContext& ctx) {
  const std::size_t f = resolve_f(b, ctx);
  const std::size_t n = ctx.uploads.size();
  return from_verdict(multi_krum(ctx.uploads, f, b.krum_m.value_or(n > f ? n - f : 1)));
}

inline DefenseOutcome trimmed_mean_defense(const BaselineOptions& b, const RoundContext& ctx) {
  DefenseOutcome out;
  out.method = "trimmed_mean";
  out.include.assign(ctx.uploads.size(), true);
  out.aggregate_override = trimmed_mean(ctx.uploads, b.trim_k.value_or(ctx.uploads.size() - ctx.num_benign));
  return out;
}

inline DefenseOutcome auror_defense(const BaselineOptions& b, const RoundContext& ctx) {
  const double threshold = b.auror_threshold.value_or(mean_pairwise_distance(ctx.uploads));
  return from_verdict(auror_kmeans(ctx.uploads, threshold));
}

/// Krum on flattened heat maps; keeps the single most central client.
class CamKrumDefense {
 public:
  CamKrumDefense(ClassifierArch arch, ProbeImage probe, BaselineOptions b)
      : arch_(arch), probe_(std::move(probe)), b_(b) {}

  DefenseOutcome operator()(const RoundContext& ctx) {
    trace_.maps = client_heatmaps(CamMethod::layercam, arch_, ctx.uploads, probe_, ctx.round);
    trace_.rows = flatten_maps(trace_.maps);
    return from_verdict(layercam_krum(trace_.rows, resolve_f(b_, ctx)));
  }

  const CamRoundTrace& last_round() const noexcept { return trace_; }

 private:
  ClassifierArch arch_;
  ProbeImage probe_;
  BaselineOptions b_;
  CamRoundTrace trace_;
};

}  // namespace fedcam
