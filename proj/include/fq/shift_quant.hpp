// Copyright 2026 The fqlib Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fq/error.hpp"

namespace fq {

// Power-of-two grid: {0} U {s * 2^(e - bias) : e in [0, 2^k - 1]}, with
// s in {-1, +1} when signed and s = +1 otherwise.
struct ShiftGrid {
  int exponent_bits = 3;
  int bias = 0;
  bool is_signed = true;

  static constexpr int kMaxExponentBits = 6;
  static constexpr int kMinBias = -32;
  static constexpr int kMaxBias = 32;

  int max_exponent() const { return (1 << exponent_bits) - 1; }
  double min_magnitude() const { return std::ldexp(1.0, -bias); }
  double max_magnitude() const { return std::ldexp(1.0, max_exponent() - bias); }
  std::size_t alphabet_size() const {
    const std::size_t levels = std::size_t{1} << exponent_bits;
    return 1 + (is_signed ? 2 * levels : levels);
  }

  void validate() const {
    require(exponent_bits >= 0 && exponent_bits <= kMaxExponentBits, ErrorKind::kInvalidArgument,
            "exponent bits must lie in [0, 6], got " + std::to_string(exponent_bits));
    require(bias >= kMinBias && bias <= kMaxBias, ErrorKind::kInvalidArgument,
            "bias must lie in [-32, 32], got " + std::to_string(bias));
  }

  // Every representable value, ascending.
  std::vector<double> alphabet() const {
    std::vector<double> out;
    out.reserve(alphabet_size());
    if (is_signed)
      for (int e = max_exponent(); e >= 0; --e) out.push_back(-std::ldexp(1.0, e - bias));
    out.push_back(0.0);
    for (int e = 0; e <= max_exponent(); ++e) out.push_back(std::ldexp(1.0, e - bias));
    return out;
  }

  friend bool operator==(const ShiftGrid&, const ShiftGrid&) = default;
};

// (s, e) or ZERO (sign == 0).
struct ShiftSymbol {
  std::int8_t sign = 0;
  std::uint8_t exponent = 0;

  static constexpr ShiftSymbol zero() { return {}; }
  bool is_zero() const noexcept { return sign == 0; }

  friend bool operator==(const ShiftSymbol&, const ShiftSymbol&) = default;
};

struct ShiftQuantized {
  ShiftSymbol symbol;
  double value = 0.0;
};

inline double dequantize_symbol(ShiftSymbol sym, const ShiftGrid& grid) {
  if (sym.is_zero()) return 0.0;
  require(sym.sign == 1 || sym.sign == -1, ErrorKind::kInvalidArgument, "shift symbol sign must be -1, 0 or +1");
  require(grid.is_signed || sym.sign == 1, ErrorKind::kInvalidArgument, "negative symbol on unsigned grid");
  require(sym.exponent <= grid.max_exponent(), ErrorKind::kInvalidArgument,
          "exponent " + std::to_string(sym.exponent) + " outside [0, " + std::to_string(grid.max_exponent()) + "]");
  return sym.sign * std::ldexp(1.0, static_cast<int>(sym.exponent) - grid.bias);
}

// Nearest alphabet member; ties go to the smaller magnitude, anything beyond
// the largest level clips to it. Every comparison below is exact: the
// thresholds are power-of-two multiples of 1/2 or 3/2.
inline ShiftQuantized shift_quantize(double value, const ShiftGrid& grid) {
  require(std::isfinite(value), ErrorKind::kInvalidArgument, "cannot quantize a non-finite value");
  const double mag = std::fabs(value);
  const int sign = value < 0.0 ? -1 : 1;
  if (mag == 0.0 || (!grid.is_signed && sign < 0)) return {};

  int e = 0;
  if (mag >= grid.max_magnitude()) {
    e = grid.max_exponent();
  } else if (mag <= 0.5 * grid.min_magnitude()) {
    return {};
  } else if (mag < grid.min_magnitude()) {
    e = 0;
  } else {
    int x = 0;
    std::frexp(mag, &x);  // mag = f * 2^x, f in [0.5, 1)
    const double lo = std::ldexp(1.0, x - 1);
    e = x - 1 + grid.bias;
    if (mag > 1.5 * lo) ++e;
  }
  const ShiftSymbol sym{static_cast<std::int8_t>(sign), static_cast<std::uint8_t>(e)};
  return {sym, dequantize_symbol(sym, grid)};
}

// Integer code of a shift symbol with k exponent bits: the top two bits are
// the sign/zero field (00 zero, 01 positive, 11 negative), the low k bits hold
// the exponent. Field value 10 is left free; focused quantization uses it.
namespace shift_code {
inline constexpr std::uint32_t kPositive = 0b01;
inline constexpr std::uint32_t kNegative = 0b11;
inline constexpr std::uint32_t kSpare = 0b10;

inline std::uint32_t encode(ShiftSymbol sym, int exponent_bits) {
  if (sym.is_zero()) return 0;
  const std::uint32_t field = sym.sign > 0 ? kPositive : kNegative;
  return (field << exponent_bits) | sym.exponent;
}

inline std::uint32_t field_of(std::uint32_t code, int exponent_bits) { return (code >> exponent_bits) & 0b11; }

inline ShiftSymbol decode(std::uint32_t code, int exponent_bits) {
  const std::uint32_t field = field_of(code, exponent_bits);
  const auto e = static_cast<std::uint8_t>(code & ((1u << exponent_bits) - 1));
  switch (field) {
    case 0:
      require(e == 0, ErrorKind::kEncoding, "zero shift code with nonzero exponent bits");
      return ShiftSymbol::zero();
    case kPositive: return {1, e};
    case kNegative: return {-1, e};
    default: fail(ErrorKind::kEncoding, "reserved shift sign field");
  }
}
}  // namespace shift_code

// Number of non-zero entries whose magnitude (or value, for unsigned grids)
// lies strictly above the grid's largest level.
inline std::size_t overflow_count(std::span<const double> values, const ShiftGrid& grid) {
  const double maxm = grid.max_magnitude();
  std::size_t n = 0;
  for (double v : values)
    if ((grid.is_signed ? std::fabs(v) : v) > maxm) ++n;
  return n;
}

// Tightest bias in [-32, 32] whose grid lets at most 1/(2^k + 1) of the
// non-zero values overflow (strictly exceed the maximum level). Larger bias
// shrinks the grid, so the overflow count is monotone in the bias and the
// answer is the largest feasible one.
inline int select_bias(std::span<const double> values, int exponent_bits, bool is_signed = true) {
  std::vector<double> mags;
  mags.reserve(values.size());
  for (double v : values) {
    require(std::isfinite(v), ErrorKind::kInvalidArgument, "non-finite value in bias selection");
    if (v != 0.0) mags.push_back(is_signed ? std::fabs(v) : v);
  }
  require(!mags.empty(), ErrorKind::kInvalidArgument, "bias undefined: no non-zero values");
  std::sort(mags.begin(), mags.end(), std::greater<>());

  const std::size_t total = mags.size();
  const std::size_t budget_den = (std::size_t{1} << exponent_bits) + 1;
  ShiftGrid grid{exponent_bits, 0, is_signed};
  grid.validate();
  for (int b = ShiftGrid::kMaxBias; b >= ShiftGrid::kMinBias; --b) {
    grid.bias = b;
    const double maxm = grid.max_magnitude();
    // mags is descending: count entries > maxm.
    const auto it = std::partition_point(mags.begin(), mags.end(), [&](double m) { return m > maxm; });
    const auto overflow = static_cast<std::size_t>(it - mags.begin());
    if (overflow * budget_den <= total) return b;
  }
  return ShiftGrid::kMinBias;
}

}  // namespace fq
