#pragma once

// Sliding verdict window and block-boundary exclusion votes.
//
// Rounds are numbered from 1. Round t writes row (t - 1) mod xi of the
// window; the window is cleared whenever a new block starts. At a block
// boundary (t mod xi == 0) a client is excluded when it was flagged
// (verdict 0) in at least epsilon rounds of the block.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedcam/errors.hpp"

namespace fedcam {

class VoteBuffer {
 public:
  VoteBuffer(std::size_t xi, std::size_t epsilon, std::size_t clients)
      : xi_(xi), epsilon_(epsilon), clients_(clients), window_(xi, std::vector<int>(clients, 1)), filled_(xi, false) {
    if (xi == 0) throw ParameterError("vote window xi must be >= 1");
  }

  std::size_t xi() const noexcept { return xi_; }
  std::size_t epsilon() const noexcept { return epsilon_; }
  std::size_t clients() const noexcept { return clients_; }
  const std::vector<std::vector<int>>& window() const noexcept { return window_; }

  void push(std::span<const int> verdicts, std::size_t t) {
    if (verdicts.size() != clients_) {
      throw ShapeError("push_verdicts: expected " + std::to_string(clients_) + " verdicts, got " +
                       std::to_string(verdicts.size()));
    }
    if (t == 0) throw ParameterError("push_verdicts: rounds are numbered from 1");
    const std::size_t row = (t - 1) % xi_;
    if (row == 0) reset();
    for (std::size_t l = 0; l < clients_; ++l) {
      const int o = verdicts[l];
      if (o != 0 && o != 1) throw ParameterError("push_verdicts: verdicts must be 0 or 1");
      window_[row][l] = o;
    }
    filled_[row] = true;
  }

  bool block_complete() const {
    for (bool f : filled_) {
      if (!f) return false;
    }
    return true;
  }

  /// Number of rounds in the current block in which each client was flagged.
  std::vector<std::size_t> flag_counts() const {
    std::vector<std::size_t> counts(clients_, 0);
    for (std::size_t r = 0; r < xi_; ++r) {
      if (!filled_[r]) continue;
      for (std::size_t l = 0; l < clients_; ++l) counts[l] += window_[r][l] == 0 ? 1 : 0;
    }
    return counts;
  }

  /// Y_l = 0 (exclude) iff client l was flagged in >= epsilon rounds of the block.
  std::vector<int> decide() const {
    if (!block_complete()) throw StateError("decide: vote block is incomplete");
    std::vector<int> y(clients_, 1);
    const auto counts = flag_counts();
    for (std::size_t l = 0; l < clients_; ++l) y[l] = counts[l] >= epsilon_ ? 0 : 1;
    return y;
  }

  void reset() {
    for (auto& row : window_) std::fill(row.begin(), row.end(), 1);
    std::fill(filled_.begin(), filled_.end(), false);
  }

 private:
  std::size_t xi_;
  std::size_t epsilon_;
  std::size_t clients_;
  std::vector<std::vector<int>> window_;
  std::vector<bool> filled_;
};

inline bool is_vote_round(std::size_t t, std::size_t xi) { return xi > 0 && t % xi == 0; }

/// Aggregation mask for round t: the round's own verdicts off-boundary, the
/// block vote at a boundary.
inline std::vector<bool> include_mask(std::span<const int> verdicts, const std::optional<std::vector<int>>& votes,
                                      std::size_t t, std::size_t xi) {
  std::vector<bool> mask;
  if (!is_vote_round(t, xi)) {
    for (int o : verdicts) mask.push_back(o != 0);
    return mask;
  }
  if (!votes) throw StateError("include_mask: block-boundary round needs a vote decision");
  for (int y : *votes) mask.push_back(y != 0);
  return mask;
}

}  // namespace fedcam
