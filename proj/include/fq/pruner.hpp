// Copyright 2026 The fqlib Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "fq/error.hpp"
#include "fq/tensor.hpp"

namespace fq {

// Per-weight keep indicator; 1 keeps the weight, 0 prunes it. Frozen once built.
struct PruneMask {
  std::vector<std::uint8_t> keep;

  std::size_t size() const noexcept { return keep.size(); }
  bool kept(std::size_t i) const { return keep[i] != 0; }
  std::size_t kept_count() const { return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), 1)); }
  double sparsity() const {
    return keep.empty() ? 0.0 : static_cast<double>(size() - kept_count()) / static_cast<double>(size());
  }

  static PruneMask all_kept(std::size_t n) { return {std::vector<std::uint8_t>(n, 1)}; }

  friend bool operator==(const PruneMask&, const PruneMask&) = default;
};

// Flat indices ordered by ascending magnitude, ties by ascending index.
inline std::vector<std::size_t> magnitude_order(std::span<const float> weights) {
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::fabs(weights[a]) < std::fabs(weights[b]); });
  return order;
}

// One-shot magnitude pruning: masks the floor(target * N) smallest-magnitude
// weights, lower flat index first on ties.
inline PruneMask prune_by_magnitude(std::span<const float> weights, double target_sparsity) {
  require(target_sparsity >= 0.0 && target_sparsity < 1.0, ErrorKind::kInvalidArgument,
          "target sparsity must lie in [0, 1), got " + std::to_string(target_sparsity));
  const std::size_t n = weights.size();
  const auto pruned = static_cast<std::size_t>(std::floor(target_sparsity * static_cast<double>(n) + 1e-9));
  PruneMask mask = PruneMask::all_kept(n);
  const auto order = magnitude_order(weights);
  for (std::size_t i = 0; i < pruned; ++i) mask.keep[order[i]] = 0;
  return mask;
}

inline PruneMask prune_by_magnitude(const Tensor& weights, double target_sparsity) {
  return prune_by_magnitude(weights.values(), target_sparsity);
}

inline Tensor apply_mask(const Tensor& weights, const PruneMask& mask) {
  require(weights.size() == mask.size(), ErrorKind::kInvalidArgument,
          "mask length " + std::to_string(mask.size()) + " != weight count " + std::to_string(weights.size()));
  Tensor out = weights;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!mask.kept(i)) out[i] = 0.0f;
  return out;
}

}  // namespace fq
