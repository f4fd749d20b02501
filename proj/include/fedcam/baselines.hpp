#pragma once

// Distance-based reference defenses: Multi-Krum, coordinate-wise trimmed
// mean and an AUROR-style two-means split. All of them operate on any range
// of points exposing `as_span(point)`, so the same code scores raw uploads
// and flattened heat maps. Ties are broken by the lowest client index.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedcam/errors.hpp"
#include "fedcam/nn.hpp"
#include "fedcam/tensor.hpp"

namespace fedcam {

inline std::span<const Real> as_span(std::span<const Real> s) { return s; }

struct DefenseVerdict {
  std::vector<bool> include;
  std::vector<double> scores;  // larger = more suspicious
  std::string method;
};

/// Row views of an n x d matrix.
inline std::vector<std::span<const Real>> rows_of(const Tensor& m) {
  if (m.rank() != 2) throw ShapeError("rows_of: expected a matrix");
  std::vector<std::span<const Real>> rows;
  const std::size_t d = m.extent(1);
  for (std::size_t r = 0; r < m.extent(0); ++r) rows.emplace_back(m.data() + r * d, d);
  return rows;
}

template <class Points>
std::vector<std::vector<double>> pairwise_squared_distances(const Points& pts) {
  const std::size_t n = std::size(pts);
  std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      d[i][j] = d[j][i] = squared_distance(as_span(pts[i]), as_span(pts[j]));
    }
  }
  return d;
}

template <class Points>
double mean_pairwise_distance(const Points& pts) {
  const std::size_t n = std::size(pts);
  if (n < 2) return 0.0;
  const auto d = pairwise_squared_distances(pts);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) s += std::sqrt(d[i][j]);
  }
  return s / static_cast<double>(n * (n - 1) / 2);
}

/// Krum scores: each point's summed squared distance to its n - f - 2
/// nearest neighbours.
template <class Points>
std::vector<double> krum_scores(const Points& pts, std::size_t f) {
  const std::size_t n = std::size(pts);
  if (n < 2 * f + 3) {
    throw ConfigError("krum: need at least 2f+3 points (n=" + std::to_string(n) + ", f=" + std::to_string(f) + ")");
  }
  const std::size_t neighbours = n - f - 2;
  const auto d = pairwise_squared_distances(pts);
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> others;
    others.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) others.push_back(d[i][j]);
    }
    std::partial_sort(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(neighbours), others.end());
    scores[i] = std::accumulate(others.begin(), others.begin() + static_cast<std::ptrdiff_t>(neighbours), 0.0);
  }
  return scores;
}

/// Keeps the m points with the lowest Krum score.
template <class Points>
DefenseVerdict multi_krum(const Points& pts, std::size_t f, std::size_t m) {
  const std::size_t n = std::size(pts);
  if (m < 1 || m > n) throw ConfigError("multi_krum: selection count must be in [1, n]");
  DefenseVerdict v{std::vector<bool>(n, false), krum_scores(pts, f), "multi_krum"};
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v.scores[a] < v.scores[b]; });
  for (std::size_t k = 0; k < m; ++k) v.include[order[k]] = true;
  return v;
}

/// Krum applied to flattened heat-map rows; only the single winner is kept.
template <class Points>
DefenseVerdict layercam_krum(const Points& heat_rows, std::size_t f) {
  DefenseVerdict v = multi_krum(heat_rows, f, 1);
  v.method = "layercam_krum";
  return v;
}

inline DefenseVerdict layercam_krum(const Tensor& heat_rows, std::size_t f) {
  return layercam_krum(rows_of(heat_rows), f);
}

/// Per coordinate: drop the k largest and k smallest values, average the rest.
template <class Points>
std::vector<Real> trimmed_mean_values(const Points& pts, std::size_t k) {
  const std::size_t n = std::size(pts);
  if (n == 0 || 2 * k >= n) throw ConfigError("trimmed_mean: need 2k < n");
  const std::size_t dim = as_span(pts[0]).size();
  std::vector<Real> out(dim);
  std::vector<Real> column(n);
  for (std::size_t c = 0; c < dim; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto s = as_span(pts[i]);
      if (s.size() != dim) throw AlignmentError("trimmed_mean: points differ in length");
      column[i] = s[c];
    }
    std::sort(column.begin(), column.end());
    Real sum = 0.0;
    for (std::size_t i = k; i < n - k; ++i) sum += column[i];
    out[c] = sum / static_cast<Real>(n - 2 * k);
  }
  return out;
}

inline ModelParams trimmed_mean(std::span<const ModelParams> uploads, std::size_t k) {
  if (uploads.empty()) throw ConfigError("trimmed_mean: no uploads");
  for (const auto& u : uploads) require_compatible(u, uploads.front(), "trimmed_mean");
  return ModelParams(uploads.front().layers, trimmed_mean_values(uploads, k));
}

struct TwoMeansResult {
  std::vector<int> assignment;  // 0 or 1 per point
  std::array<std::vector<Real>, 2> centroids;
  std::vector<double> objective_history;  // within-cluster SSE after each assignment step
  std::size_t iterations = 0;

  double objective() const { return objective_history.empty() ? 0.0 : objective_history.back(); }
};

/// Lloyd's algorithm with k = 2, seeded by the farthest pair of points.
template <class Points>
TwoMeansResult two_means(const Points& pts, std::size_t max_iterations = 100) {
  const std::size_t n = std::size(pts);
  if (n < 2) throw ConfigError("two_means: need at least 2 points");
  const std::size_t dim = as_span(pts[0]).size();
  const auto d = pairwise_squared_distances(pts);
  std::size_t a = 0, b = 1;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (d[i][j] > d[a][b]) a = i, b = j;
    }
  }
  TwoMeansResult r;
  r.centroids[0].assign(as_span(pts[a]).begin(), as_span(pts[a]).end());
  r.centroids[1].assign(as_span(pts[b]).begin(), as_span(pts[b]).end());
  r.assignment.assign(n, -1);
  for (std::size_t it = 0; it < max_iterations; ++it) {
    bool changed = false;
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d0 = squared_distance(as_span(pts[i]), r.centroids[0]);
      const double d1 = squared_distance(as_span(pts[i]), r.centroids[1]);
      const int c = d1 < d0 ? 1 : 0;
      sse += std::min(d0, d1);
      if (c != r.assignment[i]) changed = true;
      r.assignment[i] = c;
    }
    r.objective_history.push_back(sse);
    r.iterations = it + 1;
    if (!changed) break;
    for (int c = 0; c < 2; ++c) {
      std::vector<Real> sum(dim, 0.0);
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (r.assignment[i] != c) continue;
        const auto s = as_span(pts[i]);
        for (std::size_t k = 0; k < dim; ++k) sum[k] += s[k];
        ++count;
      }
      if (count == 0) continue;  // keep the previous centroid
      for (auto& v : sum) v /= static_cast<Real>(count);
      r.centroids[c] = std::move(sum);
    }
  }
  return r;
}

/// Two-means split of the uploads; the smaller cluster is excluded when the
/// centroids are farther apart than `distance_threshold`. On equal sizes the
/// cluster without client 0 counts as the smaller one.
template <class Points>
DefenseVerdict auror_kmeans(const Points& pts, double distance_threshold) {
  const std::size_t n = std::size(pts);
  const TwoMeansResult km = two_means(pts);
  const auto size1 = static_cast<std::size_t>(std::count(km.assignment.begin(), km.assignment.end(), 1));
  const std::size_t size0 = n - size1;
  int minority = size1 < size0 ? 1 : (size0 < size1 ? 0 : 1 - km.assignment[0]);
  const int majority = 1 - minority;
  DefenseVerdict v{std::vector<bool>(n, true), std::vector<double>(n), "auror"};
  const double gap = euclidean_distance(km.centroids[0], km.centroids[1]);
  for (std::size_t i = 0; i < n; ++i) {
    v.scores[i] = euclidean_distance(as_span(pts[i]), km.centroids[majority]);
    if (gap > distance_threshold && km.assignment[i] == minority) v.include[i] = false;
  }
  return v;
}

}  // namespace fedcam
