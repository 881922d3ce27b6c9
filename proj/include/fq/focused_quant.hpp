// Copyright 2026 The fqlib Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fq/error.hpp"
#include "fq/mixture.hpp"
#include "fq/pruner.hpp"
#include "fq/shift_quant.hpp"
#include "fq/tensor.hpp"

namespace fq {

enum class QuantMode : std::uint8_t { kShift = 0, kRecentralized = 1 };

inline const char* to_string(QuantMode m) { return m == QuantMode::kShift ? "shift" : "recentralized"; }

inline constexpr int kMinShiftBits = 3;
inline constexpr int kMinRecentralizedBits = 4;
inline constexpr int kMaxTotalBits = 8;

// sign * 2^exponent, or 0 when sign == 0.
struct PowerOfTwo {
  std::int8_t sign = 0;
  std::int8_t exponent = 0;

  double value() const { return sign == 0 ? 0.0 : sign * std::ldexp(1.0, exponent); }

  // sign(v) * 2^round(log2|v|), exponent ties resolved toward the smaller one.
  static PowerOfTwo nearest(double v) {
    if (v == 0.0) return {};
    require(std::isfinite(v), ErrorKind::kInvalidArgument, "cannot round a non-finite mean");
    const double l = std::log2(std::fabs(v));
    const double e = std::ceil(l - 0.5);
    require(e >= -128.0 && e <= 127.0, ErrorKind::kInvalidArgument, "mean exponent out of range");
    return {static_cast<std::int8_t>(v < 0.0 ? -1 : 1), static_cast<std::int8_t>(e)};
  }

  friend bool operator==(const PowerOfTwo&, const PowerOfTwo&) = default;
};

// One n-bit focused-quantization codeword.
//   shift mode:          (n)-bit signed shift code, k = n - 2 exponent bits.
//   recentralized mode:  bit n-1 = component, low n-1 bits = signed shift code
//                        with k = n - 3; the shift zero is written with the spare
//                        sign field (10) so it stays distinct from ZERO, which
//                        is the all-zero word and always decodes to 0.
struct FqSymbol {
  bool zero = true;
  Component component = Component::kMinus;
  ShiftSymbol shift;

  static FqSymbol pruned() { return {}; }
  friend bool operator==(const FqSymbol&, const FqSymbol&) = default;
};

inline int exponent_bits_for(QuantMode mode, int total_bits) {
  return mode == QuantMode::kShift ? total_bits - 2 : total_bits - 3;
}

inline void validate_bits(QuantMode mode, int total_bits) {
  const int lo = mode == QuantMode::kShift ? kMinShiftBits : kMinRecentralizedBits;
  require(total_bits >= lo && total_bits <= kMaxTotalBits, ErrorKind::kInvalidArgument,
          std::string(to_string(mode)) + " quantization needs " + std::to_string(lo) + ".." +
              std::to_string(kMaxTotalBits) + " bits, got " + std::to_string(total_bits));
}

inline std::uint32_t encode_fq_symbol(const FqSymbol& s, QuantMode mode, int total_bits) {
  const int k = exponent_bits_for(mode, total_bits);
  if (mode == QuantMode::kShift) return s.zero ? 0u : shift_code::encode(s.shift, k);
  if (s.zero) return 0u;
  const std::uint32_t inner =
      s.shift.is_zero() ? (shift_code::kSpare << k) : shift_code::encode(s.shift, k);
  return (static_cast<std::uint32_t>(s.component) << (total_bits - 1)) | inner;
}

inline FqSymbol decode_fq_symbol(std::uint32_t code, QuantMode mode, int total_bits) {
  require(code < (1u << total_bits), ErrorKind::kEncoding, "codeword wider than " + std::to_string(total_bits) + " bits");
  const int k = exponent_bits_for(mode, total_bits);
  if (code == 0) return FqSymbol::pruned();
  FqSymbol s;
  s.zero = false;
  if (mode == QuantMode::kShift) {
    s.shift = shift_code::decode(code, k);
    // A non-zero word that decodes to the zero shift would be a second ZERO.
    require(!s.shift.is_zero(), ErrorKind::kEncoding, "non-canonical zero codeword");
    return s;
  }
  s.component = static_cast<Component>(code >> (total_bits - 1));
  const std::uint32_t inner = code & ((1u << (total_bits - 1)) - 1);
  if (shift_code::field_of(inner, k) == shift_code::kSpare) {
    require((inner & ((1u << k) - 1)) == 0, ErrorKind::kEncoding, "centre codeword with exponent bits set");
    s.shift = ShiftSymbol::zero();
  } else {
    s.shift = shift_code::decode(inner, k);
    require(!s.shift.is_zero(), ErrorKind::kEncoding, "shift-zero field outside the ZERO codeword");
  }
  return s;
}

inline bool is_valid_fq_code(std::uint32_t code, QuantMode mode, int total_bits) {
  try {
    decode_fq_symbol(code, mode, total_bits);
    return true;
  } catch (const Error&) {
    return false;
  }
}

// Every codeword of the n-bit alphabet for `mode`, ascending.
inline std::vector<std::uint32_t> fq_alphabet(QuantMode mode, int total_bits) {
  std::vector<std::uint32_t> out;
  for (std::uint32_t c = 0; c < (1u << total_bits); ++c)
    if (is_valid_fq_code(c, mode, total_bits)) out.push_back(c);
  return out;
}

struct LayerQuantization {
  QuantMode mode = QuantMode::kShift;
  int total_bits = 5;
  float alpha = 1.0f;
  ShiftGrid grid;               // the (n-1)-bit grid in recentralized mode
  PowerOfTwo mu_minus;          // recentralized only
  PowerOfTwo mu_plus;           // recentralized only
  float sigma = 1.0f;           // shared across components; recentralized only
  double wsep = 0.0;            // separation measured at decision time
  AssignmentMask assignment;    // recentralized only
  std::vector<std::uint32_t> symbols;

  const PowerOfTwo& mu(Component c) const { return c == Component::kMinus ? mu_minus : mu_plus; }

  // alpha * s * 2^(e-b) in shift mode and alpha * (sigma * s * 2^(e-b) + mu_m)
  // in recentralized mode; ZERO is 0. Evaluated in double in exactly this
  // order so encoder and decoder agree bit for bit.
  double dequantize(std::uint32_t code) const {
    const FqSymbol s = decode_fq_symbol(code, mode, total_bits);
    if (s.zero) return 0.0;
    const double q = dequantize_symbol(s.shift, grid);
    const double a = static_cast<double>(alpha);
    if (mode == QuantMode::kShift) return a * q;
    return a * (static_cast<double>(sigma) * q + mu(s.component).value());
  }

  std::vector<double> dequantized() const {
    std::vector<double> out(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) out[i] = dequantize(symbols[i]);
    return out;
  }

  std::size_t zero_count() const { return static_cast<std::size_t>(std::count(symbols.begin(), symbols.end(), 0u)); }
};

inline QuantMode choose_mode(const MixtureModel& m, double total_variance, double w_sep) {
  return wasserstein_separation(m, total_variance) >= w_sep ? QuantMode::kRecentralized : QuantMode::kShift;
}

// Means snapped to signed powers of two; both components get the
// lambda-weighted average of their standard deviations (rounded to f32, the
// precision the container stores).
inline MixtureModel round_hyperparams(const MixtureModel& m) {
  MixtureModel out = m;
  out.minus.mean = PowerOfTwo::nearest(m.minus.mean).value();
  out.plus.mean = PowerOfTwo::nearest(m.plus.mean).value();
  const double shared = m.minus.weight * m.minus.stddev + m.plus.weight * m.plus.stddev;
  const double sigma = static_cast<double>(static_cast<float>(shared));
  out.minus.stddev = out.plus.stddev = sigma;
  return out;
}

namespace detail {
inline std::vector<double> kept_values(std::span<const float> w, const PruneMask& mask) {
  std::vector<double> v;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (mask.kept(i)) v.push_back(static_cast<double>(w[i]));
  return v;
}

inline int bias_or_default(std::span<const double> values, int k) {
  for (double v : values)
    if (v != 0.0) return select_bias(values, k, true);
  return 0;
}
}  // namespace detail

// Plain n-bit shift quantization of the unpruned weights (k = n - 2).
inline LayerQuantization quantize_shift_layer(const Tensor& weights, const PruneMask& mask, int n_bits,
                                              float alpha = 1.0f) {
  validate_bits(QuantMode::kShift, n_bits);
  require(mask.size() == weights.size(), ErrorKind::kInvalidArgument, "mask length mismatch");
  require(mask.kept_count() > 0, ErrorKind::kDegenerateInput, "every weight is pruned");
  LayerQuantization q;
  q.mode = QuantMode::kShift;
  q.total_bits = n_bits;
  q.alpha = alpha;
  const int k = exponent_bits_for(q.mode, n_bits);
  const auto kept = detail::kept_values(weights.values(), mask);
  q.grid = ShiftGrid{k, detail::bias_or_default(kept, k), true};
  q.symbols.assign(weights.size(), 0u);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!mask.kept(i)) continue;
    const auto r = shift_quantize(static_cast<double>(weights[i]), q.grid);
    q.symbols[i] = encode_fq_symbol({r.symbol.is_zero(), Component::kMinus, r.symbol}, q.mode, n_bits);
  }
  return q;
}

// Recentralized quantization: each unpruned weight is normalised about the
// mean of its assigned component, shift-quantized on a shared (n-1)-bit grid,
// and mapped back. `model` must already carry power-of-two means and a shared
// sigma (see round_hyperparams).
inline LayerQuantization quantize_recentralized(const Tensor& weights, const PruneMask& mask,
                                                const MixtureModel& model, const AssignmentMask& assignment,
                                                int n_bits, float alpha = 1.0f) {
  validate_bits(QuantMode::kRecentralized, n_bits);
  require(mask.size() == weights.size() && assignment.size() == weights.size(), ErrorKind::kInvalidArgument,
          "mask/assignment length mismatch");
  require(model.minus.stddev == model.plus.stddev, ErrorKind::kInvalidArgument,
          "recentralized quantization needs a shared sigma");
  require(model.minus.stddev >= 1e-8, ErrorKind::kDegenerateInput, "component sigma below floor");

  LayerQuantization q;
  q.mode = QuantMode::kRecentralized;
  q.total_bits = n_bits;
  q.alpha = alpha;
  q.mu_minus = PowerOfTwo::nearest(model.minus.mean);
  q.mu_plus = PowerOfTwo::nearest(model.plus.mean);
  require(q.mu_minus.value() == model.minus.mean && q.mu_plus.value() == model.plus.mean,
          ErrorKind::kInvalidArgument, "component means must be powers of two");
  q.sigma = static_cast<float>(model.minus.stddev);
  q.assignment = assignment;

  const double sigma = static_cast<double>(q.sigma);
  std::vector<double> normalized(weights.size(), 0.0);
  std::vector<double> kept;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!mask.kept(i)) continue;
    normalized[i] = (static_cast<double>(weights[i]) - q.mu(assignment.component[i]).value()) / sigma;
    kept.push_back(normalized[i]);
  }
  const int k = exponent_bits_for(q.mode, n_bits);
  q.grid = ShiftGrid{k, detail::bias_or_default(kept, k), true};
  q.symbols.assign(weights.size(), 0u);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!mask.kept(i)) continue;
    const auto r = shift_quantize(normalized[i], q.grid);
    q.symbols[i] = encode_fq_symbol({false, assignment.component[i], r.symbol}, q.mode, n_bits);
  }
  return q;
}

struct FocusedOptions {
  int n_bits = 5;
  double w_sep = 2.0;
  float alpha = 1.0f;
  EmOptions em;
  // Force a mode regardless of the separation test.
  std::optional<QuantMode> force_mode;
};

struct FocusedResult {
  LayerQuantization quant;
  std::optional<MixtureModel> mixture;  // fitted (unrounded) model, when EM ran
  double total_variance = 0.0;
};

// Code for one weight under fixed hyperparameters; ZERO when pruned.
inline std::uint32_t quantize_code(const LayerQuantization& q, double theta, bool kept, std::size_t i) {
  if (!kept) return 0u;
  if (q.mode == QuantMode::kShift) {
    const auto r = shift_quantize(theta, q.grid);
    return encode_fq_symbol({r.symbol.is_zero(), Component::kMinus, r.symbol}, q.mode, q.total_bits);
  }
  const Component c = q.assignment.component[i];
  const auto r = shift_quantize((theta - q.mu(c).value()) / static_cast<double>(q.sigma), q.grid);
  return encode_fq_symbol({false, c, r.symbol}, q.mode, q.total_bits);
}

// Re-derives the symbols of `hp` for new weights, keeping mode, grid, means,
// sigma, assignments and alpha.
inline LayerQuantization requantize(const LayerQuantization& hp, std::span<const float> weights,
                                    const PruneMask& mask) {
  require(mask.size() == weights.size(), ErrorKind::kInvalidArgument, "mask length mismatch");
  require(hp.mode == QuantMode::kShift || hp.assignment.size() == weights.size(), ErrorKind::kInvalidArgument,
          "assignment length mismatch");
  LayerQuantization q = hp;
  q.symbols.resize(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i)
    q.symbols[i] = quantize_code(q, static_cast<double>(weights[i]), mask.kept(i), i);
  return q;
}

// Full per-layer decision: fit the mixture on the unpruned weights, measure the
// separation, and quantize with the recentralized or shift scheme.
inline FocusedResult quantize_focused(const Tensor& weights, const PruneMask& mask, std::uint64_t seed,
                                      const FocusedOptions& opt = {}) {
  require(mask.size() == weights.size(), ErrorKind::kInvalidArgument, "mask length mismatch");
  const auto kept = detail::kept_values(weights.values(), mask);
  require(!kept.empty(), ErrorKind::kDegenerateInput, "every weight is pruned");

  FocusedResult out;
  out.total_variance = population_variance(kept);
  QuantMode mode = QuantMode::kShift;
  double wsep = 0.0;
  const bool distinct = std::adjacent_find(kept.begin(), kept.end(), std::not_equal_to<>()) != kept.end();
  if (distinct && out.total_variance > 0.0) {
    out.mixture = fit_em(std::span<const double>(kept), opt.em);
    wsep = wasserstein_separation(*out.mixture, out.total_variance);
    mode = wsep >= opt.w_sep ? QuantMode::kRecentralized : QuantMode::kShift;
  }
  if (opt.force_mode) mode = *opt.force_mode;
  if (mode == QuantMode::kRecentralized && !out.mixture)
    fail(ErrorKind::kDegenerateInput, "recentralized quantization needs a fitted mixture");

  if (mode == QuantMode::kShift) {
    out.quant = quantize_shift_layer(weights, mask, opt.n_bits, opt.alpha);
  } else {
    const MixtureModel rounded = round_hyperparams(*out.mixture);
    const AssignmentMask assignment = sample_assignments(*out.mixture, weights.values(), seed);
    out.quant = quantize_recentralized(weights, mask, rounded, assignment, opt.n_bits, opt.alpha);
  }
  out.quant.wsep = wsep;
  return out;
}

// Histogram KL(q || p) between the quantized and original value
// distributions over their common range, add-one smoothed so it stays finite.
inline double kl_complexity_cost(std::span<const double> original, std::span<const double> quantized, int bins = 64) {
  require(!original.empty() && !quantized.empty(), ErrorKind::kInvalidArgument, "KL needs non-empty inputs");
  require(bins >= 16, ErrorKind::kInvalidArgument, "KL needs at least 16 bins");
  double lo = original[0], hi = original[0];
  for (auto span : {original, quantized})
    for (double v : span) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  require(hi > lo, ErrorKind::kInvalidArgument, "KL histogram range has zero width");
  auto histogram = [&](std::span<const double> v) {
    std::vector<double> h(static_cast<std::size_t>(bins), 1.0);
    for (double x : v) {
      auto b = static_cast<long>(std::floor((x - lo) / (hi - lo) * bins));
      b = std::clamp(b, 0L, static_cast<long>(bins) - 1);
      h[static_cast<std::size_t>(b)] += 1.0;
    }
    const double total = static_cast<double>(v.size() + static_cast<std::size_t>(bins));
    for (double& x : h) x /= total;
    return h;
  };
  const auto p = histogram(original);
  const auto q = histogram(quantized);
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) kl += q[i] * std::log(q[i] / p[i]);
  return std::max(kl, 0.0);
}

}  // namespace fq
