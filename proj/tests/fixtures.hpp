// Copyright 2026 The fqlib Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "fq/codec.hpp"
#include "fq/focused_quant.hpp"
#include "fq/pruner.hpp"
#include "fq/rng.hpp"
#include "fq/tensor.hpp"

namespace fq::fixtures {

// Weights drawn from lambda N(mu_m, s_m) + (1 - lambda) N(mu_p, s_p).
inline Tensor bimodal_tensor(std::uint64_t seed, std::size_t n, double mu_m = -0.3, double s_m = 0.05,
                             double mu_p = 0.25, double s_p = 0.04, double lambda = 0.5) {
  SplitMix64 g(seed);
  std::vector<float> w(n);
  for (auto& x : w) x = static_cast<float>(g.uniform() < lambda ? g.normal(mu_m, s_m) : g.normal(mu_p, s_p));
  return Tensor({n}, std::move(w));
}

inline Tensor gaussian_tensor(std::uint64_t seed, std::size_t n, double stddev = 0.05) {
  SplitMix64 g(seed);
  std::vector<float> w(n);
  for (auto& x : w) x = static_cast<float>(g.normal(0.0, stddev));
  return Tensor({n}, std::move(w));
}

inline PruneMask random_mask(std::uint64_t seed, std::size_t n, double prune_fraction) {
  SplitMix64 g(seed);
  PruneMask m = PruneMask::all_kept(n);
  for (auto& k : m.keep) k = g.uniform() < prune_fraction ? 0 : 1;
  return m;
}

// A magnitude-pruned Gaussian layer: the survivors form the two lobes typical
// of sparse layers.
struct SparseLayer {
  Tensor weights;
  PruneMask mask;
};

inline SparseLayer sparse_gaussian_layer(std::uint64_t seed, std::size_t n, double sparsity = 0.75,
                                         double stddev = 0.05) {
  Tensor w = gaussian_tensor(seed, n, stddev);
  PruneMask m = prune_by_magnitude(w, sparsity);
  return {apply_mask(w, m), m};
}

// Replaces spec.weight with the dequantized values of q.
inline QuantizedLayer with_quantization(LayerSpec spec, const LayerQuantization& q) {
  std::vector<float> v(q.symbols.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(q.dequantize(q.symbols[i]));
  spec.weight = Tensor(spec.weight.shape(), std::move(v));
  return {std::move(spec), q};
}

// Random sparse weights for `spec`, quantized in the requested mode.
inline QuantizedLayer random_quantized(LayerSpec spec, std::uint64_t seed, QuantMode mode, double sparsity = 0.5,
                                       int n_bits = 5, float alpha = 1.0f) {
  const std::size_t n = element_count(spec.expected_weight_shape());
  auto l = sparse_gaussian_layer(seed, n, sparsity, 0.1);
  FocusedOptions opt;
  opt.n_bits = n_bits;
  opt.alpha = alpha;
  opt.force_mode = mode;
  const auto r = quantize_focused(l.weights, l.mask, seed, opt);
  spec.weight = l.weights.reshaped(spec.expected_weight_shape());
  return with_quantization(std::move(spec), r.quant);
}

}  // namespace fq::fixtures
