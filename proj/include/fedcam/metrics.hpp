#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "fedcam/data.hpp"
#include "fedcam/errors.hpp"
#include "fedcam/nn.hpp"

namespace fedcam {

/// Confusion counts with "malicious" as the positive class.
struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const noexcept { return tp + fp + tn + fn; }

  void add(bool flagged, bool malicious) {
    if (flagged) {
      ++(malicious ? tp : fp);
    } else {
      ++(malicious ? fn : tn);
    }
  }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) { return a += b; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Empty optionals mark undefined metrics (zero denominators).
struct DetectionMetrics {
  std::optional<double> recall;
  std::optional<double> precision;
  std::optional<double> fpr;
  std::optional<double> acc;
  std::optional<double> f1;
};

inline std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

inline DetectionMetrics detection_metrics(const ConfusionCounts& c) {
  return {ratio(c.tp, c.tp + c.fn), ratio(c.tp, c.tp + c.fp), ratio(c.fp, c.fp + c.tn), ratio(c.tp + c.tn, c.total()),
          ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)};
}

/// Normalised Mann-Whitney U: probability that a random positive outscores a
/// random negative, ties counting one half. Undefined without both classes.
inline std::optional<double> auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] != 0) {
        rank_sum += avg_rank;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

inline std::size_t argmax(std::span<const Real> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline double test_accuracy(const ClassifierArch& arch, const ModelParams& params, const Dataset& test) {
  if (test.size() == 0) throw ParameterError("test_accuracy: empty test set");
  Network net = arch.network(params);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const ForwardResult fwd = net.forward(test.images[i]);
    if (argmax(fwd.output.values()) == test.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

inline double attack_rate(std::size_t attackers, std::size_t benign) {
  if (attackers + benign == 0) throw ParameterError("attack_rate: no clients");
  return static_cast<double>(attackers) / static_cast<double>(attackers + benign);
}

}  // namespace fedcam
