// Copyright 2026 The fqlib Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fq/codec.hpp"
#include "fq/error.hpp"
#include "fq/focused_quant.hpp"
#include "fq/model_store.hpp"
#include "fq/tensor.hpp"

namespace fq {

// 8-bit activations with a power-of-two scale: value = data[i] * 2^exponent.
struct QuantActivation {
  Shape shape;
  std::vector<std::int8_t> data;
  int exponent = 0;

  static constexpr int kMax = 127;

  std::size_t size() const noexcept { return data.size(); }
  double value(std::size_t i) const { return std::ldexp(static_cast<double>(data[i]), exponent); }
  std::vector<double> values() const {
    std::vector<double> out(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out[i] = value(i);
    return out;
  }
  Tensor dequantize() const {
    std::vector<float> v(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) v[i] = static_cast<float>(value(i));
    return Tensor(shape, std::move(v));
  }
};

// Smallest exponent with max_abs / 2^e <= 127; 0 for an all-zero input.
inline int activation_exponent(double max_abs) {
  require(std::isfinite(max_abs) && max_abs >= 0.0, ErrorKind::kInvalidArgument, "activation range must be finite");
  if (max_abs == 0.0) return 0;
  int e = static_cast<int>(std::ceil(std::log2(max_abs / QuantActivation::kMax)));
  while (std::ldexp(static_cast<double>(QuantActivation::kMax), e) < max_abs) ++e;
  while (std::ldexp(static_cast<double>(QuantActivation::kMax), e - 1) >= max_abs) --e;
  return e;
}

inline std::int8_t saturate_int8(double v) {
  return static_cast<std::int8_t>(std::clamp(v, -double{QuantActivation::kMax}, double{QuantActivation::kMax}));
}

// Round half away from zero at a fixed exponent, saturating to [-127, 127].
template <class Values>
QuantActivation quantize_activations(const Values& x, Shape shape, int exponent) {
  QuantActivation q;
  q.shape = std::move(shape);
  q.exponent = exponent;
  q.data.reserve(x.size());
  for (auto v : x) {
    require(std::isfinite(static_cast<double>(v)), ErrorKind::kInvalidArgument, "cannot quantize a non-finite activation");
    q.data.push_back(saturate_int8(std::round(std::ldexp(static_cast<double>(v), -exponent))));
  }
  require(element_count(q.shape) == q.data.size(), ErrorKind::kInvalidArgument, "activation shape mismatch");
  return q;
}

inline QuantActivation quantize_activations(const Tensor& x, int exponent) {
  return quantize_activations(x.data(), x.shape(), exponent);
}

inline QuantActivation quantize_activations(const Tensor& x) {
  double m = 0.0;
  for (float v : x.data()) {
    require(std::isfinite(v), ErrorKind::kInvalidArgument, "cannot quantize a non-finite activation");
    m = std::max(m, static_cast<double>(std::fabs(v)));
  }
  return quantize_activations(x, activation_exponent(m));
}

// Arithmetic policies for the integer kernels. The accumulation loop only
// calls shl/add/sub; scaling goes through mul. Trace counts each kind,
// split by phase.
namespace arith {
struct Plain {
  static std::int32_t shl(std::int32_t x, int e) { return static_cast<std::int32_t>(static_cast<std::uint32_t>(x) << e); }
  static std::int32_t add(std::int32_t a, std::int32_t b) { return a + b; }
  static std::int32_t sub(std::int32_t a, std::int32_t b) { return a - b; }
  static __int128 mul(__int128 a, __int128 b) { return a * b; }
  void begin_accumulate() {}
  void end_accumulate() {}
};

struct Trace {
  struct Counts {
    std::uint64_t shifts = 0, adds = 0, muls = 0;
  };
  Counts accumulate, scaling;
  bool in_accumulate = false;

  Counts& cur() { return in_accumulate ? accumulate : scaling; }
  std::int32_t shl(std::int32_t x, int e) {
    ++cur().shifts;
    return Plain::shl(x, e);
  }
  std::int32_t add(std::int32_t a, std::int32_t b) {
    ++cur().adds;
    return a + b;
  }
  std::int32_t sub(std::int32_t a, std::int32_t b) {
    ++cur().adds;
    return a - b;
  }
  __int128 mul(__int128 a, __int128 b) {
    ++cur().muls;
    return a * b;
  }
  void begin_accumulate() { in_accumulate = true; }
  void end_accumulate() { in_accumulate = false; }
};
}  // namespace arith

// One decoded weight: sign/exponent of the shift part and the component whose
// mean it adds (kNone for shift mode and pruned weights).
struct WeightTerm {
  static constexpr std::uint8_t kNone = 2;
  std::int8_t sign = 0;
  std::uint8_t shift = 0;
  std::uint8_t component = kNone;
};

struct Accumulator {
  std::int32_t a = 0;  // shift terms (sigma folded in when `folded`)
  std::int32_t m = 0;  // component-mean terms, unfolded recentralized only
  friend bool operator==(const Accumulator&, const Accumulator&) = default;
};

// Per-layer shift-add kernel. The real pre-activation-scale value of an
// accumulator is factor_a * a + factor_m * m; multiplying by 2^x (the input
// activation exponent) gives the layer output.
struct ShiftAddKernel {
  QuantMode mode = QuantMode::kShift;
  std::size_t out_channels = 0;
  std::size_t fan_in = 0;
  std::vector<WeightTerm> terms;  // out_channels x fan_in
  bool folded = false;
  int shift_a = 0;
  std::array<int, 2> shift_m{0, 0};
  std::array<std::int8_t, 2> mu_sign{0, 0};
  double factor_a = 0.0;
  double factor_m = 0.0;

  std::span<const WeightTerm> row(std::size_t o) const { return {terms.data() + o * fan_in, fan_in}; }

  static ShiftAddKernel build(const LayerQuantization& q, std::size_t out_channels, std::size_t fan_in) {
    require(q.symbols.size() == out_channels * fan_in, ErrorKind::kInvalidState, "quantization does not cover the layer");
    ShiftAddKernel k;
    k.mode = q.mode;
    k.out_channels = out_channels;
    k.fan_in = fan_in;
    k.terms.resize(q.symbols.size());
    for (std::size_t i = 0; i < q.symbols.size(); ++i) {
      const FqSymbol s = decode_fq_symbol(q.symbols[i], q.mode, q.total_bits);
      if (s.zero) continue;
      WeightTerm& t = k.terms[i];
      t.sign = s.shift.sign;
      t.shift = s.shift.exponent;
      if (q.mode == QuantMode::kRecentralized) t.component = static_cast<std::uint8_t>(s.component);
    }

    const double alpha = static_cast<double>(q.alpha);
    const int b = q.grid.bias;
    const int emax = q.grid.max_exponent();
    const double x_max = QuantActivation::kMax * static_cast<double>(fan_in);
    const double limit = static_cast<double>(std::numeric_limits<std::int32_t>::max());
    if (q.mode == QuantMode::kShift) {
      k.factor_a = alpha * std::ldexp(1.0, -b);
      require(x_max * std::ldexp(1.0, emax) <= limit, ErrorKind::kOverflow, "32-bit accumulator too narrow for layer");
      return k;
    }

    std::array<const PowerOfTwo*, 2> mu{&q.mu_minus, &q.mu_plus};
    int pmin = std::numeric_limits<int>::max(), pmax = std::numeric_limits<int>::min();
    for (int c = 0; c < 2; ++c) {
      k.mu_sign[c] = mu[c]->sign;
      if (mu[c]->sign == 0) continue;
      pmin = std::min(pmin, int{mu[c]->exponent});
      pmax = std::max(pmax, int{mu[c]->exponent});
    }
    const bool any_mu = pmin != std::numeric_limits<int>::max();

    int sigma_exp = 0;
    const bool sigma_pow2 = std::frexp(static_cast<double>(q.sigma), &sigma_exp) == 0.5;
    if (sigma_pow2) {
      const int ps = sigma_exp - 1 - b;  // exponent of sigma * 2^-b
      const int m = any_mu ? std::min(ps, pmin) : ps;
      const int sa = ps - m;
      double bound = std::ldexp(1.0, emax + sa);
      std::array<int, 2> sm{0, 0};
      for (int c = 0; c < 2; ++c)
        if (k.mu_sign[c]) sm[c] = mu[c]->exponent - m;
      if (any_mu) bound += std::ldexp(1.0, std::max(sm[0], sm[1]));
      if (x_max * bound <= limit && sa < 31 && sm[0] < 31 && sm[1] < 31) {
        k.folded = true;
        k.shift_a = sa;
        k.shift_m = sm;
        k.factor_a = alpha * std::ldexp(1.0, m);
        return k;
      }
    }
    k.factor_a = alpha * static_cast<double>(q.sigma) * std::ldexp(1.0, -b);
    require(x_max * std::ldexp(1.0, emax) <= limit, ErrorKind::kOverflow, "32-bit accumulator too narrow for layer");
    if (any_mu) {
      k.factor_m = alpha * std::ldexp(1.0, pmin);
      for (int c = 0; c < 2; ++c)
        if (k.mu_sign[c]) k.shift_m[c] = mu[c]->exponent - pmin;
      require(pmax - pmin < 31 && x_max * std::ldexp(1.0, pmax - pmin) <= limit, ErrorKind::kOverflow,
              "component means too far apart for a 32-bit accumulator");
    }
    return k;
  }

  double real_value(const Accumulator& acc) const {
    return factor_a * static_cast<double>(acc.a) + factor_m * static_cast<double>(acc.m);
  }
};

// Sum over one output's receptive field using only shifts and adds:
// A = sum s_i (x_i << e_i), S_c = sum of activations assigned to component c,
// then the component terms sign(mu_c) (S_c << shift_c) are merged into A
// (sigma folded) or returned separately.
template <class Ops = arith::Plain>
Accumulator dot_shift_add(std::span<const std::int8_t> x, std::span<const WeightTerm> w, const ShiftAddKernel& k,
                          Ops&& ops = Ops{}) {
  require(x.size() == w.size(), ErrorKind::kInvalidArgument, "activation/weight length mismatch");
  ops.begin_accumulate();
  std::int32_t a = 0;
  std::array<std::int32_t, 2> s{0, 0};
  for (std::size_t j = 0; j < w.size(); ++j) {
    const WeightTerm t = w[j];
    const std::int32_t xj = x[j];
    if (t.sign > 0) a = ops.add(a, ops.shl(xj, t.shift));
    else if (t.sign < 0) a = ops.sub(a, ops.shl(xj, t.shift));
    if (t.component != WeightTerm::kNone) s[t.component] = ops.add(s[t.component], xj);
  }
  Accumulator acc;
  if (k.mode == QuantMode::kShift) {
    acc.a = a;
  } else {
    std::int32_t m = 0;
    for (int c = 0; c < 2; ++c) {
      if (k.mu_sign[c] > 0) m = ops.add(m, ops.shl(s[c], k.shift_m[c]));
      else if (k.mu_sign[c] < 0) m = ops.sub(m, ops.shl(s[c], k.shift_m[c]));
    }
    if (k.folded) acc.a = ops.add(ops.shl(a, k.shift_a), m);
    else {
      acc.a = a;
      acc.m = m;
    }
  }
  ops.end_accumulate();
  return acc;
}

// Per-channel affine map applied after the accumulator: z = gain * y + offset,
// from BN (inference form) and/or the layer bias.
struct ChannelAffine {
  std::vector<double> gain;
  std::vector<double> offset;

  static ChannelAffine of(const LayerSpec& spec) {
    ChannelAffine a;
    const std::size_t n = spec.out_channels;
    a.gain.assign(n, 1.0);
    a.offset.assign(n, 0.0);
    for (std::size_t o = 0; o < n; ++o) {
      const double bias = spec.bias ? static_cast<double>((*spec.bias)[o]) : 0.0;
      if (spec.bn) {
        const auto& bn = *spec.bn;
        const double g = static_cast<double>(bn.scale[o]) /
                         std::sqrt(static_cast<double>(bn.variance[o]) + static_cast<double>(BatchNorm::kEpsilon));
        a.gain[o] = g;
        a.offset[o] = static_cast<double>(bn.offset[o]) + g * (bias - static_cast<double>(bn.mean[o]));
      } else {
        a.offset[o] = bias;
      }
    }
    return a;
  }
};

inline __int128 shift_round(__int128 v, int s) {
  if (s <= 0) return v << -s;
  const __int128 mag = v < 0 ? -v : v;
  const __int128 r = (mag + (static_cast<__int128>(1) << (s - 1))) >> s;
  return v < 0 ? -r : r;
}

// Integer BN / requantization stage. Output ints (in units of the output
// LSB) are round((ca*A*2^ta + cm*M*2^tm + ch*2^th)), with ca, cm, ch 16-bit
// per channel and each exponent shared across the layer.
struct QuantBN {
  struct Coeffs {
    std::vector<std::int16_t> c;
    int exponent = 0;
    bool any = false;
  };
  Coeffs a, m, h;
  bool relu = true;

  static constexpr int kMaxSpread = 48;

  static Coeffs quantize(const std::vector<double>& real) {
    Coeffs out;
    double mx = 0.0;
    for (double v : real) mx = std::max(mx, std::fabs(v));
    out.c.assign(real.size(), 0);
    if (mx == 0.0) return out;
    out.any = true;
    int t = static_cast<int>(std::ceil(std::log2(mx / 32767.0)));
    while (std::ldexp(32767.0, t) < mx) ++t;
    out.exponent = t;
    return out;
  }

  static void fill(Coeffs& co, const std::vector<double>& real) {
    for (std::size_t i = 0; i < real.size(); ++i)
      co.c[i] = static_cast<std::int16_t>(std::clamp(std::round(std::ldexp(real[i], -co.exponent)), -32767.0, 32767.0));
  }

  // input_exponent: exponent of the layer's input activations; output_exponent:
  // exponent the requantized outputs are expressed in.
  static QuantBN build(const ShiftAddKernel& k, const ChannelAffine& aff, int input_exponent, int output_exponent,
                       bool relu) {
    const std::size_t n = aff.gain.size();
    std::vector<double> ra(n), rm(n), rh(n);
    for (std::size_t o = 0; o < n; ++o) {
      ra[o] = aff.gain[o] * k.factor_a * std::ldexp(1.0, input_exponent - output_exponent);
      rm[o] = aff.gain[o] * k.factor_m * std::ldexp(1.0, input_exponent - output_exponent);
      rh[o] = std::ldexp(aff.offset[o], -output_exponent);
    }
    QuantBN q;
    q.relu = relu;
    q.a = quantize(ra);
    q.m = quantize(rm);
    q.h = quantize(rh);
    int top = std::numeric_limits<int>::min();
    for (Coeffs* c : {&q.a, &q.m, &q.h})
      if (c->any) top = std::max(top, c->exponent);
    for (Coeffs* c : {&q.a, &q.m, &q.h}) {
      if (!c->any) c->exponent = top == std::numeric_limits<int>::min() ? 0 : top;
      c->exponent = std::max(c->exponent, top - kMaxSpread);
    }
    fill(q.a, ra);
    fill(q.m, rm);
    fill(q.h, rh);
    return q;
  }

  int common_exponent() const { return std::min({a.exponent, m.exponent, h.exponent}); }

  // The pre-rounding value in output-LSB units, as an exact integer at
  // 2^common_exponent.
  template <class Ops = arith::Plain>
  __int128 numerator(std::size_t o, const Accumulator& acc, Ops&& ops = Ops{}) const {
    const int t = common_exponent();
    __int128 v = ops.mul(a.c[o], acc.a) << (a.exponent - t);
    if (acc.m != 0) v += ops.mul(m.c[o], acc.m) << (m.exponent - t);
    v += static_cast<__int128>(h.c[o]) << (h.exponent - t);
    return v;
  }

  double value(std::size_t o, const Accumulator& acc) const {
    return std::ldexp(static_cast<double>(numerator(o, acc)), common_exponent());
  }

  template <class Ops = arith::Plain>
  std::int8_t apply(std::size_t o, const Accumulator& acc, Ops&& ops = Ops{}) const {
    const __int128 r = shift_round(numerator(o, acc, ops), -common_exponent());
    const __int128 lo = relu ? 0 : -QuantActivation::kMax;
    return static_cast<std::int8_t>(std::clamp<__int128>(r, lo, QuantActivation::kMax));
  }
};

struct ConvGeometry {
  std::size_t in_c = 0, in_h = 0, in_w = 0;
  std::size_t out_h = 0, out_w = 0;

  static ConvGeometry of(const LayerSpec& spec, const Shape& input) {
    require(input.size() == 3, ErrorKind::kInvalidArgument, "conv input must be (C, H, W)");
    require(input[0] == spec.in_channels, ErrorKind::kInvalidArgument,
            "layer " + spec.name + ": expected " + std::to_string(spec.in_channels) + " input channels, got " +
                std::to_string(input[0]));
    ConvGeometry g;
    g.in_c = input[0];
    g.in_h = input[1];
    g.in_w = input[2];
    const std::size_t ph = g.in_h + 2 * spec.padding, pw = g.in_w + 2 * spec.padding;
    require(ph >= spec.kernel_h && pw >= spec.kernel_w, ErrorKind::kInvalidArgument,
            "layer " + spec.name + ": kernel larger than padded input");
    g.out_h = (ph - spec.kernel_h) / spec.stride + 1;
    g.out_w = (pw - spec.kernel_w) / spec.stride + 1;
    return g;
  }
};

// Receptive field of output (oy, ox) in (c, ky, kx) order, zero padded.
template <class T>
void gather_patch(std::span<const T> in, const LayerSpec& spec, const ConvGeometry& g, std::size_t oy, std::size_t ox,
                  std::vector<T>& patch) {
  patch.assign(spec.fan_in(), T{});
  std::size_t j = 0;
  for (std::size_t c = 0; c < g.in_c; ++c)
    for (std::size_t ky = 0; ky < spec.kernel_h; ++ky)
      for (std::size_t kx = 0; kx < spec.kernel_w; ++kx, ++j) {
        const long y = static_cast<long>(oy * spec.stride + ky) - static_cast<long>(spec.padding);
        const long x = static_cast<long>(ox * spec.stride + kx) - static_cast<long>(spec.padding);
        if (y < 0 || x < 0 || y >= static_cast<long>(g.in_h) || x >= static_cast<long>(g.in_w)) continue;
        patch[j] = in[(c * g.in_h + static_cast<std::size_t>(y)) * g.in_w + static_cast<std::size_t>(x)];
      }
}

// Raw accumulators of a quantized conv, (O, Ho, Wo) order.
template <class Ops = arith::Plain>
std::vector<Accumulator> conv2d_accumulate(const QuantActivation& input, const LayerSpec& spec,
                                           const ShiftAddKernel& k, Ops&& ops = Ops{}) {
  require(spec.kind == LayerKind::kConv2d, ErrorKind::kInvalidArgument, "layer " + spec.name + " is not a conv");
  const ConvGeometry g = ConvGeometry::of(spec, input.shape);
  std::vector<Accumulator> out(spec.out_channels * g.out_h * g.out_w);
  std::vector<std::int8_t> patch;
  for (std::size_t oy = 0; oy < g.out_h; ++oy)
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      gather_patch<std::int8_t>(input.data, spec, g, oy, ox, patch);
      for (std::size_t o = 0; o < spec.out_channels; ++o)
        out[(o * g.out_h + oy) * g.out_w + ox] = dot_shift_add(std::span<const std::int8_t>(patch), k.row(o), k, ops);
    }
  return out;
}

// Pre-BN conv output in double, one scaling per output: the value the float
// conv on dequantized weights and activations computes.
inline std::vector<double> conv2d_shift_add_real(const QuantActivation& input, const LayerSpec& spec,
                                                 const ShiftAddKernel& k) {
  const auto acc = conv2d_accumulate(input, spec, k);
  std::vector<double> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = std::ldexp(k.real_value(acc[i]), input.exponent);
  return out;
}

// Conv, integer BN, optional ReLU, requantization to int8.
template <class Ops = arith::Plain>
QuantActivation conv2d_quantized(const QuantActivation& input, const LayerSpec& spec, const ShiftAddKernel& k,
                                 const QuantBN& bn, int output_exponent, Ops&& ops = Ops{}) {
  const ConvGeometry g = ConvGeometry::of(spec, input.shape);
  const auto acc = conv2d_accumulate(input, spec, k, ops);
  QuantActivation out;
  out.shape = {spec.out_channels, g.out_h, g.out_w};
  out.exponent = output_exponent;
  out.data.resize(acc.size());
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t i = 0; i < acc.size(); ++i) out.data[i] = bn.apply(i / plane, acc[i], ops);
  return out;
}

template <class Ops = arith::Plain>
std::vector<Accumulator> dense_accumulate(const QuantActivation& input, const LayerSpec& spec, const ShiftAddKernel& k,
                                          Ops&& ops = Ops{}) {
  require(input.size() == spec.in_channels, ErrorKind::kInvalidArgument,
          "layer " + spec.name + ": expected " + std::to_string(spec.in_channels) + " inputs, got " +
              std::to_string(input.size()));
  std::vector<Accumulator> out(spec.out_channels);
  for (std::size_t o = 0; o < spec.out_channels; ++o)
    out[o] = dot_shift_add(std::span<const std::int8_t>(input.data), k.row(o), k, ops);
  return out;
}

// Global average pool over (C, H, W) int8 maps, requantized at
// output_exponent. A power-of-two H*W makes the division a shift.
inline QuantActivation global_average_pool(const QuantActivation& in, int output_exponent) {
  require(in.shape.size() == 3, ErrorKind::kInvalidArgument, "pooling input must be (C, H, W)");
  const std::size_t c = in.shape[0], hw = in.shape[1] * in.shape[2];
  QuantActivation out;
  out.shape = {c};
  out.exponent = output_exponent;
  out.data.resize(c);
  const bool pow2 = (hw & (hw - 1)) == 0;
  const int log_hw = pow2 ? std::countr_zero(hw) : 0;
  for (std::size_t ch = 0; ch < c; ++ch) {
    std::int64_t sum = 0;
    for (std::size_t i = 0; i < hw; ++i) sum += in.data[ch * hw + i];
    const int e = in.exponent - output_exponent;
    __int128 r;
    if (pow2) {
      r = shift_round(sum, log_hw - e);
    } else {
      const __int128 num = static_cast<__int128>(sum) << std::max(0, e);
      const __int128 den = static_cast<__int128>(hw) << std::max(0, -e);
      const __int128 mag = ((num < 0 ? -num : num) * 2 + den) / (2 * den);
      r = num < 0 ? -mag : mag;
    }
    out.data[ch] = static_cast<std::int8_t>(std::clamp<__int128>(r, -QuantActivation::kMax, QuantActivation::kMax));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Float reference path (double precision) on a float model.

struct FeatureMap {
  Shape shape;
  std::vector<double> v;
};

inline FeatureMap conv2d_float(const FeatureMap& in, const LayerSpec& spec) {
  const ConvGeometry g = ConvGeometry::of(spec, in.shape);
  FeatureMap out{{spec.out_channels, g.out_h, g.out_w}, {}};
  out.v.assign(spec.out_channels * g.out_h * g.out_w, 0.0);
  std::vector<double> patch;
  const std::size_t k = spec.fan_in();
  for (std::size_t oy = 0; oy < g.out_h; ++oy)
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      gather_patch<double>(in.v, spec, g, oy, ox, patch);
      for (std::size_t o = 0; o < spec.out_channels; ++o) {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += static_cast<double>(spec.weight[o * k + j]) * patch[j];
        out.v[(o * g.out_h + oy) * g.out_w + ox] = s;
      }
    }
  return out;
}

inline FeatureMap dense_float(const FeatureMap& in, const LayerSpec& spec) {
  require(in.v.size() == spec.in_channels, ErrorKind::kInvalidArgument, "layer " + spec.name + ": input size mismatch");
  FeatureMap out{{spec.out_channels}, std::vector<double>(spec.out_channels, 0.0)};
  for (std::size_t o = 0; o < spec.out_channels; ++o) {
    double s = 0.0;
    for (std::size_t j = 0; j < spec.in_channels; ++j) s += static_cast<double>(spec.weight[o * spec.in_channels + j]) * in.v[j];
    out.v[o] = s;
  }
  return out;
}

inline void apply_affine(FeatureMap& m, const ChannelAffine& a, bool relu) {
  const std::size_t plane = m.v.size() / a.gain.size();
  for (std::size_t i = 0; i < m.v.size(); ++i) {
    const double z = a.gain[i / plane] * m.v[i] + a.offset[i / plane];
    m.v[i] = relu ? std::max(0.0, z) : z;
  }
}

inline FeatureMap global_average_pool_float(const FeatureMap& in) {
  const std::size_t c = in.shape[0], hw = in.shape[1] * in.shape[2];
  FeatureMap out{{c}, std::vector<double>(c, 0.0)};
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += in.v[ch * hw + i];
    out.v[ch] = s / static_cast<double>(hw);
  }
  return out;
}

// Layer order convention: convolutions (conv, BN, ReLU), a global average
// pool, then dense layers with ReLU between them and none after the last.
inline void check_architecture(const Model& m) {
  require(!m.layers.empty(), ErrorKind::kInvalidArgument, "model has no layers");
  bool seen_dense = false;
  for (const auto& l : m.layers) {
    if (l.kind == LayerKind::kDense) seen_dense = true;
    else require(!seen_dense, ErrorKind::kInvalidArgument, "conv layer " + l.name + " follows a dense layer");
  }
}

struct FloatTrace {
  FeatureMap input;
  std::vector<FeatureMap> layer_outputs;  // post-activation
  std::optional<FeatureMap> pooled;
};

// Float forward pass; returns logits (the last layer's pre-activation
// output, or the pooled features for a conv-only model).
inline std::vector<double> forward_float(const Model& model, const Tensor& image, FloatTrace* trace = nullptr) {
  check_architecture(model);
  FeatureMap x{image.shape(), std::vector<double>(image.data().begin(), image.data().end())};
  if (trace) trace->input = x;
  bool pooled = false;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& l = model.layers[i];
    const bool last = i + 1 == model.layers.size();
    if (l.kind == LayerKind::kDense && !pooled && x.shape.size() == 3 && i > 0) {
      x = global_average_pool_float(x);
      if (trace) trace->pooled = x;
      pooled = true;
    }
    if (l.kind == LayerKind::kDense && x.shape.size() != 1) x.shape = {x.v.size()};
    x = l.kind == LayerKind::kConv2d ? conv2d_float(x, l) : dense_float(x, l);
    apply_affine(x, ChannelAffine::of(l), !(last && l.kind == LayerKind::kDense));
    if (trace) trace->layer_outputs.push_back(x);
  }
  if (!pooled && model.layers.back().kind == LayerKind::kConv2d) {
    x = global_average_pool_float(x);
    if (trace) trace->pooled = x;
  }
  return x.v;
}

// ---------------------------------------------------------------------------
// Quantized network.

struct ActivationScales {
  int input = 0;
  std::vector<int> outputs;  // per layer
  int pooled = 0;
};

inline double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

// Activation exponents from the float path over calibration images.
inline ActivationScales calibrate(const Model& model, std::span<const Tensor> images) {
  require(!images.empty(), ErrorKind::kInvalidArgument, "calibration needs at least one image");
  std::vector<double> layer_max(model.layers.size(), 0.0);
  double in_max = 0.0, pool_max = 0.0;
  for (const Tensor& img : images) {
    FloatTrace t;
    forward_float(model, img, &t);
    in_max = std::max(in_max, max_abs(t.input.v));
    for (std::size_t i = 0; i < t.layer_outputs.size(); ++i)
      layer_max[i] = std::max(layer_max[i], max_abs(t.layer_outputs[i].v));
    if (t.pooled) pool_max = std::max(pool_max, max_abs(t.pooled->v));
  }
  ActivationScales s;
  s.input = activation_exponent(in_max);
  for (double m : layer_max) s.outputs.push_back(activation_exponent(m));
  s.pooled = activation_exponent(pool_max);
  return s;
}

struct PreparedLayer {
  const LayerSpec* spec = nullptr;
  ShiftAddKernel kernel;
  ChannelAffine affine;
  QuantBN bn;  // unused for the final dense layer
  int input_exponent = 0;
  int output_exponent = 0;
  bool final = false;
};

struct QuantizedNetwork {
  std::vector<PreparedLayer> layers;
  ActivationScales scales;
  bool pool_before_dense = false;
  std::size_t first_dense = 0;

  // Prepares kernels and integer BN for a compressed model. The returned
  // object refers to `model`, which must outlive it.
  static QuantizedNetwork prepare(const CompressedModel& model, const ActivationScales& scales) {
    Model plain = decompress(model);
    check_architecture(plain);
    require(scales.outputs.size() == model.layers.size(), ErrorKind::kInvalidArgument,
            "activation scales do not match the layer count");
    QuantizedNetwork net;
    net.scales = scales;
    net.first_dense = model.layers.size();
    int x_exp = scales.input;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
      const auto& ql = model.layers[i];
      require(ql.quant.symbols.size() == ql.spec.weight.size(), ErrorKind::kInvalidState,
              "layer " + ql.spec.name + " is not quantized");
      PreparedLayer p;
      p.spec = &ql.spec;
      p.final = i + 1 == model.layers.size();
      if (ql.spec.kind == LayerKind::kDense && net.first_dense == model.layers.size()) {
        net.first_dense = i;
        if (i > 0) {
          net.pool_before_dense = true;
          x_exp = scales.pooled;
        }
      }
      p.input_exponent = x_exp;
      p.output_exponent = scales.outputs[i];
      p.kernel = ShiftAddKernel::build(ql.quant, ql.spec.out_channels, ql.spec.fan_in());
      p.affine = ChannelAffine::of(ql.spec);
      const bool relu = !(p.final && ql.spec.kind == LayerKind::kDense);
      p.bn = QuantBN::build(p.kernel, p.affine, p.input_exponent, p.output_exponent, relu);
      x_exp = p.output_exponent;
      net.layers.push_back(std::move(p));
    }
    return net;
  }
};

struct QuantizedForward {
  std::vector<double> logits;
  std::vector<QuantActivation> layer_outputs;
};

template <class Ops = arith::Plain>
QuantizedForward forward_quantized(const QuantizedNetwork& net, const Tensor& image, Ops&& ops = Ops{}) {
  require(!net.layers.empty(), ErrorKind::kInvalidState, "network has no prepared layers");
  QuantizedForward r;
  QuantActivation x = quantize_activations(image, net.scales.input);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const PreparedLayer& p = net.layers[i];
    const LayerSpec& spec = *p.spec;
    if (i == net.first_dense && net.pool_before_dense) x = global_average_pool(x, net.scales.pooled);
    if (spec.kind == LayerKind::kDense) x.shape = {x.size()};
    if (p.final && spec.kind == LayerKind::kDense) {
      const auto acc = dense_accumulate(x, spec, p.kernel, ops);
      r.logits.resize(acc.size());
      for (std::size_t o = 0; o < acc.size(); ++o)
        r.logits[o] = p.affine.gain[o] * std::ldexp(p.kernel.real_value(acc[o]), x.exponent) + p.affine.offset[o];
      return r;
    }
    if (spec.kind == LayerKind::kConv2d) {
      x = conv2d_quantized(x, spec, p.kernel, p.bn, p.output_exponent, ops);
    } else {
      const auto acc = dense_accumulate(x, spec, p.kernel, ops);
      QuantActivation y;
      y.shape = {acc.size()};
      y.exponent = p.output_exponent;
      y.data.resize(acc.size());
      for (std::size_t o = 0; o < acc.size(); ++o) y.data[o] = p.bn.apply(o, acc[o], ops);
      x = std::move(y);
    }
    r.layer_outputs.push_back(x);
  }
  // Conv-only network: the pooled features are the output.
  x = global_average_pool(x, net.scales.pooled);
  r.logits = x.values();
  return r;
}

inline std::size_t argmax(std::span<const double> v) {
  require(!v.empty(), ErrorKind::kInvalidArgument, "argmax of empty vector");
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace fq
