#pragma once

// Synthetic labelled images and client partitioning (IID shards and
// per-class Dirichlet allocation).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "fedcam/errors.hpp"
#include "fedcam/tensor.hpp"

namespace fedcam {

struct Dataset {
  std::vector<Tensor> images;  // each C x S x S, pixels in [0, 1]
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.num_classes = num_classes;
    out.images.reserve(indices.size());
    out.labels.reserve(indices.size());
    for (std::size_t i : indices) {
      out.images.push_back(images.at(i));
      out.labels.push_back(labels.at(i));
    }
    return out;
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::size_t y : labels) ++counts.at(y);
    return counts;
  }
};

/// Noise-free pattern for class `c`: a bar with a class-specific orientation
/// and anchor, plus a Gaussian blob at a second class-specific position.
inline Tensor class_template(std::size_t c, std::size_t num_classes, std::size_t channels = 1,
                             std::size_t size = 16) {
  Tensor img({channels, size, size});
  const double scale = static_cast<double>(size) / 16.0;
  const double theta = static_cast<double>(c) * std::numbers::pi / static_cast<double>(num_classes);
  const double cx = (4.0 + 4.0 * static_cast<double>(c % 3)) * scale;
  const double cy = (4.0 + 4.0 * static_cast<double>((c / 3) % 3)) * scale;
  const double bx = (2.0 + static_cast<double>((3 + 7 * c) % 12)) * scale;
  const double by = (2.0 + static_cast<double>((5 + 3 * c) % 12)) * scale;
  const double st = std::sin(theta), ct = std::cos(theta);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
      const double across = -dx * st + dy * ct;
      const double along = dx * ct + dy * st;
      double v = std::abs(along) < 5.0 * scale ? std::exp(-across * across / (0.8 * scale * scale)) : 0.0;
      const double ex = static_cast<double>(x) - bx, ey = static_cast<double>(y) - by;
      v += std::exp(-(ex * ex + ey * ey) / (3.0 * scale * scale));
      v = std::clamp(v, 0.0, 1.0);
      for (std::size_t ch = 0; ch < channels; ++ch) img.at(ch, y, x) = v;
    }
  }
  return img;
}

/// Class-major synthetic dataset: every sample is its class template plus
/// i.i.d. Gaussian pixel noise, clamped to [0, 1].
inline Dataset generate_synthetic(std::size_t num_classes, std::size_t samples_per_class, double noise_sigma,
                                  std::uint64_t seed, std::size_t channels = 1, std::size_t image_size = 16) {
  if (num_classes < 2) throw ParameterError("generate_synthetic: need at least 2 classes");
  if (samples_per_class < 1) throw ParameterError("generate_synthetic: need at least 1 sample per class");
  if (!(noise_sigma >= 0.0)) throw ParameterError("generate_synthetic: noise_sigma must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset ds;
  ds.num_classes = num_classes;
  ds.images.reserve(num_classes * samples_per_class);
  ds.labels.reserve(num_classes * samples_per_class);
  for (std::size_t c = 0; c < num_classes; ++c) {
    const Tensor tmpl = class_template(c, num_classes, channels, image_size);
    for (std::size_t s = 0; s < samples_per_class; ++s) {
      Tensor img = tmpl;
      if (noise_sigma > 0.0) {
        for (auto& v : img.values()) v = std::clamp(v + noise_sigma * noise(rng), 0.0, 1.0);
      }
      ds.images.push_back(std::move(img));
      ds.labels.push_back(c);
    }
  }
  return ds;
}

struct TrainTestSplit {
  Dataset train;
  Dataset test;
};

/// Per-class split: floor(fraction * n_c) samples of each class (at least one)
/// go to the test set. Both halves keep the original relative order.
inline TrainTestSplit stratified_split(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ParameterError("test_fraction must be in (0, 1)");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(ds.labels[i]).push_back(i);
  std::vector<char> is_test(ds.size(), 0);
  for (auto& idx : by_class) {
    if (idx.size() < 2) throw ParameterError("stratified_split: every class needs at least 2 samples");
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(test_fraction * static_cast<double>(idx.size())));
    for (std::size_t k = 0; k < n_test; ++k) is_test[idx[k]] = 1;
  }
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < ds.size(); ++i) (is_test[i] ? test_idx : train_idx).push_back(i);
  return {ds.subset(train_idx), ds.subset(test_idx)};
}

struct Partition {
  std::vector<std::vector<std::size_t>> client_indices;
  std::vector<double> claimed_sizes;

  std::size_t num_clients() const noexcept { return client_indices.size(); }
};

inline Partition partition_iid(std::size_t dataset_size, std::size_t num_clients, std::uint64_t seed) {
  if (num_clients == 0) throw ParameterError("partition_iid: need at least one client");
  if (num_clients > dataset_size) throw ParameterError("partition_iid: more clients than samples");
  std::vector<std::size_t> order(dataset_size);
  for (std::size_t i = 0; i < dataset_size; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  Partition p;
  const std::size_t base = dataset_size / num_clients, extra = dataset_size % num_clients;
  std::size_t pos = 0;
  for (std::size_t c = 0; c < num_clients; ++c) {
    const std::size_t n = base + (c < extra ? 1 : 0);
    p.client_indices.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                  order.begin() + static_cast<std::ptrdiff_t>(pos + n));
    p.claimed_sizes.push_back(static_cast<double>(n));
    pos += n;
  }
  return p;
}

inline Partition partition_iid(const Dataset& ds, std::size_t num_clients, std::uint64_t seed) {
  return partition_iid(ds.size(), num_clients, seed);
}

/// For each class, client shares are drawn from Dirichlet(alpha) and the
/// class's shuffled samples are cut accordingly. Draws are repeated until every
/// client holds at least one sample.
inline Partition partition_dirichlet(const Dataset& ds, std::size_t num_clients, double alpha, std::uint64_t seed,
                                     std::size_t max_attempts = 10000) {
  if (!(alpha > 0.0)) throw ParameterError("partition_dirichlet: alpha must be > 0");
  if (num_clients == 0) throw ParameterError("partition_dirichlet: need at least one client");
  if (num_clients > ds.size()) throw ParameterError("partition_dirichlet: more clients than samples");
  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(ds.labels[i]).push_back(i);

  for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
    Partition p;
    p.client_indices.assign(num_clients, {});
    for (auto idx : by_class) {
      std::shuffle(idx.begin(), idx.end(), rng);
      std::gamma_distribution<double> gamma(alpha, 1.0);
      std::vector<double> share(num_clients);
      double total = 0.0;
      for (auto& s : share) total += (s = gamma(rng));
      if (!(total > 0.0)) {
        // every draw underflowed (tiny alpha): the class goes to one client
        std::uniform_int_distribution<std::size_t> pick(0, num_clients - 1);
        std::fill(share.begin(), share.end(), 0.0);
        share[pick(rng)] = total = 1.0;
      }
      double cumulative = 0.0;
      std::size_t start = 0;
      for (std::size_t c = 0; c < num_clients; ++c) {
        cumulative += share[c] / total;
        const std::size_t end = c + 1 == num_clients
                                    ? idx.size()
                                    : std::min(idx.size(), static_cast<std::size_t>(cumulative * static_cast<double>(idx.size())));
        for (std::size_t k = start; k < end; ++k) p.client_indices[c].push_back(idx[k]);
        start = std::max(start, end);
      }
    }
    const bool all_nonempty = std::all_of(p.client_indices.begin(), p.client_indices.end(),
                                          [](const auto& v) { return !v.empty(); });
    if (!all_nonempty) continue;
    for (auto& v : p.client_indices) {
      std::sort(v.begin(), v.end());
      p.claimed_sizes.push_back(static_cast<double>(v.size()));
    }
    return p;
  }
  throw ConfigError("partition_dirichlet: could not give every client a sample");
}

}  // namespace fedcam
