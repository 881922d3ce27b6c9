// Copyright 2026 The fqlib Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "engine_cases.hpp"
#include "fixtures.hpp"
#include "fq/engine.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace fq {
namespace {

using namespace engine_cases;

TEST(QuantizeActivations, ScaleSelection) {
  const Tensor x({3}, {1.0f, -0.5f, 0.25f});
  const auto q = quantize_activations(x);
  EXPECT_EQ(q.exponent, -6);
  EXPECT_EQ(q.data, (std::vector<std::int8_t>{64, -32, 16}));
  // A fixed exponent that is one too fine saturates.
  EXPECT_EQ(quantize_activations(x, -7).data, (std::vector<std::int8_t>{127, -64, 32}));
}

TEST(QuantizeActivations, IntegersExact) {
  const Tensor x({4}, {127.0f, -127.0f, 3.0f, 0.0f});
  const auto q = quantize_activations(x);
  EXPECT_EQ(q.exponent, 0);
  EXPECT_EQ(q.dequantize(), x);
}

TEST(QuantizeActivations, AllZeroAndNonFinite) {
  const auto q = quantize_activations(Tensor({2}, {0.0f, 0.0f}));
  EXPECT_EQ(q.exponent, 0);
  EXPECT_EQ(q.data, (std::vector<std::int8_t>{0, 0}));
  EXPECT_FQ_ERROR(quantize_activations(Tensor({1}, {NAN})), ErrorKind::kInvalidArgument);
}

TEST(QuantizeActivations, RoundHalfAwayFromZero) {
  const auto q = quantize_activations(Tensor({4}, {2.5f, -2.5f, 0.5f, 127.0f}), 0);
  EXPECT_EQ(q.data, (std::vector<std::int8_t>{3, -3, 1, 127}));
}

TEST(QuantizeActivationsProperty, ErrorBound) {
  SplitMix64 g(8);
  for (int t = 0; t < 100000; ++t) {
    std::vector<float> v(1 + g.below(8));
    const double scale = std::ldexp(1.0, static_cast<int>(g.below(30)) - 15);
    for (auto& x : v) x = static_cast<float>(g.normal() * scale);
    const Tensor x({v.size()}, v);
    const auto q = quantize_activations(x);
    for (std::size_t i = 0; i < v.size(); ++i)
      ASSERT_LE(std::fabs(q.value(i) - v[i]), std::ldexp(1.0, q.exponent - 1)) << t;
  }
}

// Recentralized layer of one weight, +2^0 * sigma + mu_plus.
LayerQuantization one_weight(float sigma) {
  LayerQuantization q;
  q.mode = QuantMode::kRecentralized;
  q.total_bits = 5;
  q.grid = ShiftGrid{2, 0, true};
  q.sigma = sigma;
  q.mu_minus = PowerOfTwo::nearest(-0.5);
  q.mu_plus = PowerOfTwo::nearest(0.25);
  q.symbols = {encode_fq_symbol({false, Component::kPlus, {1, 0}}, q.mode, 5)};
  return q;
}

TEST(DotShiftAdd, SingleTermDecomposition) {
  const std::vector<std::int8_t> x{3};
  // sigma not a power of two: A = 3 << 0, M = +(3 << (exp(mu+) - pmin)) with pmin = -2.
  const auto q = one_weight(0.3f);
  const auto k = ShiftAddKernel::build(q, 1, 1);
  EXPECT_FALSE(k.folded);
  const auto acc = dot_shift_add(std::span<const std::int8_t>(x), k.row(0), k);
  EXPECT_EQ(acc, (Accumulator{3, 3}));
  EXPECT_EQ(k.real_value(acc), static_cast<double>(0.3f) * 3 + 0.25 * 3);
  EXPECT_NEAR(k.real_value(acc), 3 * q.dequantize(q.symbols[0]), 1e-15);

  // sigma = 1/2 folds: T = (3 << 1) + (3 << 0) in units of 2^-2.
  const auto q2 = one_weight(0.5f);
  const auto k2 = ShiftAddKernel::build(q2, 1, 1);
  EXPECT_TRUE(k2.folded);
  const auto acc2 = dot_shift_add(std::span<const std::int8_t>(x), k2.row(0), k2);
  EXPECT_EQ(acc2.a, (3 << 1) + 3);
  EXPECT_EQ(k2.real_value(acc2), 3 * q2.dequantize(q2.symbols[0]));
}

TEST(DotShiftAdd, ZeroActivations) {
  const auto ql = fixtures::random_quantized(make_dense("d", 64, 4), 3, QuantMode::kRecentralized);
  const auto k = ShiftAddKernel::build(ql.quant, 4, 64);
  const std::vector<std::int8_t> x(64, 0);
  for (std::size_t o = 0; o < 4; ++o) EXPECT_EQ(dot_shift_add(std::span<const std::int8_t>(x), k.row(o), k), Accumulator{});
}

TEST(DotShiftAdd, MatchesFloatDot) {
  SplitMix64 g(12);
  for (int t = 0; t < 40; ++t) {
    const QuantMode mode = t % 2 ? QuantMode::kShift : QuantMode::kRecentralized;
    auto ql = pow2_sigma(fixtures::random_quantized(make_dense("d", 64, 1), 100 + t, mode));
    const auto k = ShiftAddKernel::build(ql.quant, 1, 64);
    const auto x = random_ints(g, 64);
    const int ex = -static_cast<int>(g.below(8));
    const auto w = dequantized_weights(ql.quant);
    double ref = 0.0;
    for (std::size_t i = 0; i < 64; ++i) ref += w[i] * std::ldexp(static_cast<double>(x[i]), ex);
    const auto acc = dot_shift_add(std::span<const std::int8_t>(x), k.row(0), k);
    EXPECT_EQ(std::ldexp(k.real_value(acc), ex), ref) << "trial " << t;
  }
}

TEST(DotShiftAdd, Linearity) {
  SplitMix64 g(13);
  for (int t = 0; t < 50; ++t) {
    const auto ql = fixtures::random_quantized(make_dense("d", 32, 1), 200 + t, QuantMode::kRecentralized);
    const auto k = ShiftAddKernel::build(ql.quant, 1, 32);
    const auto a = random_ints(g, 32, 63), b = random_ints(g, 32, 63);
    std::vector<std::int8_t> s(32);
    for (std::size_t i = 0; i < 32; ++i) s[i] = static_cast<std::int8_t>(a[i] + b[i]);
    const auto da = dot_shift_add(std::span<const std::int8_t>(a), k.row(0), k);
    const auto db = dot_shift_add(std::span<const std::int8_t>(b), k.row(0), k);
    const auto ds = dot_shift_add(std::span<const std::int8_t>(s), k.row(0), k);
    EXPECT_EQ(ds.a, da.a + db.a);
    EXPECT_EQ(ds.m, da.m + db.m);
  }
}

TEST(DotShiftAdd, OverflowDetected) {
  // 6 exponent bits reach x << 63.
  const auto ql = fixtures::random_quantized(make_dense("d", 16, 2), 5, QuantMode::kShift, 0.5, 8);
  EXPECT_FQ_ERROR(ShiftAddKernel::build(ql.quant, 2, 16), ErrorKind::kOverflow);
}

TEST(DotShiftAdd, TraceHasNoMultiplications) {
  const auto ql = fixtures::random_quantized(make_conv2d("c", 4, 4, 3, 1, 1), 9, QuantMode::kRecentralized, 0.5, 5,
                                             0.75f);
  const auto k = ShiftAddKernel::build(ql.quant, 4, ql.spec.fan_in());
  SplitMix64 g(1);
  QuantActivation x{{4, 6, 6}, random_ints(g, 144), -5};
  const auto bn = QuantBN::build(k, ChannelAffine::of(ql.spec), x.exponent, -4, true);
  arith::Trace trace;
  conv2d_quantized(x, ql.spec, k, bn, -4, trace);
  EXPECT_EQ(trace.accumulate.muls, 0u);
  EXPECT_GT(trace.accumulate.shifts, 0u);
  EXPECT_GT(trace.accumulate.adds, 0u);
  // Scaling: at most two multiplies per output value.
  EXPECT_LE(trace.scaling.muls, 2u * 4 * 36);
}

TEST(Conv, ExactAgainstFloatReference) {
  SplitMix64 g(64);
  for (int t = 0; t < 64; ++t) {
    const ConvCase c = random_conv(g, 1000 + t, true);
    const auto k = ShiftAddKernel::build(c.layer.quant, c.layer.spec.out_channels, c.layer.spec.fan_in());
    std::size_t oh = 0, ow = 0;
    const auto ref = oracle_conv(c, oh, ow);
    EXPECT_EQ(conv2d_shift_add_real(c.input, c.layer.spec, k), ref) << "trial " << t;
  }
}

TEST(Conv, GeneralScalesAgreeToRounding) {
  SplitMix64 g(65);
  for (int t = 0; t < 64; ++t) {
    const ConvCase c = random_conv(g, 2000 + t, false);
    const auto k = ShiftAddKernel::build(c.layer.quant, c.layer.spec.out_channels, c.layer.spec.fan_in());
    std::size_t oh = 0, ow = 0;
    const auto ref = oracle_conv(c, oh, ow);
    const auto got = conv2d_shift_add_real(c.input, c.layer.spec, k);
    ASSERT_EQ(got.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(got[i], ref[i], 1e-12 * (1.0 + std::fabs(ref[i])));
  }
}

TEST(Conv, RequantizedWithinOneLsb) {
  SplitMix64 g(66);
  for (int t = 0; t < 20; ++t) {
    auto ql = fixtures::random_quantized(make_conv2d("c", 4, 4, 3, 1, 1), 3000 + t,
                                         t % 2 ? QuantMode::kShift : QuantMode::kRecentralized, 0.5, 5,
                                         static_cast<float>(g.uniform(0.5, 1.5)));
    ql.spec.bn = random_bn(g, 4);
    const ConvCase c{ql, QuantActivation{{4, 8, 8}, random_ints(g, 256), -6}};
    std::size_t oh = 0, ow = 0;
    const auto y = oracle_conv(c, oh, ow);
    const auto aff = ChannelAffine::of(ql.spec);
    std::vector<double> z(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) z[i] = std::max(0.0, aff.gain[i / 64] * y[i] + aff.offset[i / 64]);
    const int eo = activation_exponent(max_abs(z));
    const auto k = ShiftAddKernel::build(ql.quant, 4, ql.spec.fan_in());
    const auto bn = QuantBN::build(k, aff, c.input.exponent, eo, true);
    const auto q = conv2d_quantized(c.input, ql.spec, k, bn, eo);
    for (std::size_t i = 0; i < z.size(); ++i) {
      const double r = std::min(127.0, std::round(std::ldexp(z[i], -eo)));
      ASSERT_LE(std::fabs(q.data[i] - r), 1.0) << "trial " << t << " index " << i;
    }
  }
}

TEST(Conv, IdentityFilter) {
  LayerSpec spec = make_conv2d("id", 3, 3, 1, 0, 1);
  std::vector<float> w(9, 0.0f);
  for (int i = 0; i < 3; ++i) w[static_cast<std::size_t>(i * 3 + i)] = 1.0f;
  spec.weight = Tensor({3, 3, 1, 1}, w);
  PruneMask mask = PruneMask::all_kept(9);
  const auto q = quantize_shift_layer(spec.weight, mask, 5);
  SplitMix64 g(2);
  QuantActivation x{{3, 5, 5}, random_ints(g, 75), -3};
  const auto k = ShiftAddKernel::build(q, 3, 3);
  const auto bn = QuantBN::build(k, ChannelAffine::of(spec), -3, -3, false);
  const auto y = conv2d_quantized(x, spec, k, bn, -3);
  EXPECT_EQ(y.data, x.data);
  EXPECT_EQ(y.shape, x.shape);
}

TEST(Conv, ZeroWeightsGiveOffsetOnly) {
  LayerSpec spec = make_conv2d("z", 2, 2, 3, 1, 1);
  spec.weight = Tensor({2, 2, 3, 3});
  spec.bn = BatchNorm{{1.0f, 1.0f}, {0.5f, -0.25f}, {0.0f, 0.0f}, {1.0f, 1.0f}};
  LayerQuantization q;
  q.symbols.assign(36, 0u);
  const auto k = ShiftAddKernel::build(q, 2, 18);
  SplitMix64 g(3);
  QuantActivation x{{2, 4, 4}, random_ints(g, 32), -2};
  const auto bn = QuantBN::build(k, ChannelAffine::of(spec), -2, -6, false);
  const auto y = conv2d_quantized(x, spec, k, bn, -6);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(y.data[i], std::round(0.5 * 64.0));
    EXPECT_EQ(y.data[16 + i], std::round(-0.25 * 64.0));
  }
}

TEST(Conv, ShapeMismatchRejected) {
  const auto ql = fixtures::random_quantized(make_conv2d("c", 3, 2, 3, 1, 1), 4, QuantMode::kShift);
  const auto k = ShiftAddKernel::build(ql.quant, 2, 27);
  QuantActivation x{{2, 4, 4}, std::vector<std::int8_t>(32, 0), 0};
  EXPECT_FQ_ERROR(conv2d_accumulate(x, ql.spec, k), ErrorKind::kInvalidArgument);
}

TEST(QuantBNProperty, WithinSixteenBitRoundingBound) {
  SplitMix64 g(77);
  for (int t = 0; t < 30; ++t) {
    auto ql = fixtures::random_quantized(make_dense("d", 32, 8), 400 + t, QuantMode::kRecentralized, 0.3, 5,
                                         static_cast<float>(g.uniform(0.5, 1.5)));
    ql.spec.bn = random_bn(g, 8);
    const auto k = ShiftAddKernel::build(ql.quant, 8, 32);
    const auto aff = ChannelAffine::of(ql.spec);
    const int ex = -6, eo = -4;
    const auto bn = QuantBN::build(k, aff, ex, eo, false);
    const auto x = random_ints(g, 32);
    for (std::size_t o = 0; o < 8; ++o) {
      const auto acc = dot_shift_add(std::span<const std::int8_t>(x), k.row(o), k);
      const double real = std::ldexp(aff.gain[o] * std::ldexp(k.real_value(acc), ex) + aff.offset[o], -eo);
      const double bound = std::fabs(acc.a) * std::ldexp(0.5, bn.a.exponent) +
                           std::fabs(acc.m) * std::ldexp(0.5, bn.m.exponent) + std::ldexp(0.5, bn.h.exponent);
      ASSERT_LE(std::fabs(bn.value(o, acc) - real), bound * (1 + 1e-9));
    }
  }
}

TEST(Pool, PowerOfTwoAndGeneralAreas) {
  SplitMix64 g(4);
  for (std::size_t hw : {4u, 3u}) {
    QuantActivation x{{5, hw, hw}, random_ints(g, 5 * hw * hw), -4};
    const auto p = global_average_pool(x, -5);
    for (std::size_t c = 0; c < 5; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < hw * hw; ++i) s += x.data[c * hw * hw + i];
      const double want = std::clamp(std::round(std::ldexp(s / static_cast<double>(hw * hw), -4 + 5)), -127.0, 127.0);
      EXPECT_EQ(p.data[c], want) << "hw " << hw;
    }
  }
}

// conv(3->4) -> conv(4->4, stride 2) -> pool -> dense(4->6) -> dense(6->3).
CompressedModel small_network(std::uint64_t seed) {
  SplitMix64 g(seed);
  CompressedModel m;
  auto c1 = fixtures::random_quantized(make_conv2d("conv1", 3, 4, 3, 1, 1), seed + 1, QuantMode::kRecentralized, 0.4);
  c1.spec.bn = random_bn(g, 4);
  auto c2 = fixtures::random_quantized(make_conv2d("conv2", 4, 4, 3, 1, 2), seed + 2, QuantMode::kShift, 0.4);
  c2.spec.bn = random_bn(g, 4);
  auto d1 = fixtures::random_quantized(make_dense("fc1", 4, 6), seed + 3, QuantMode::kRecentralized, 0.2);
  d1.spec.bias = std::vector<float>{0.1f, -0.1f, 0.2f, 0.0f, 0.05f, -0.3f};
  auto d2 = fixtures::random_quantized(make_dense("fc2", 6, 3), seed + 4, QuantMode::kShift, 0.2);
  d2.spec.bias = std::vector<float>{0.5f, -0.5f, 0.25f};
  m.layers = {c1, c2, d1, d2};
  return m;
}

std::vector<Tensor> random_images(std::uint64_t seed, std::size_t n) {
  SplitMix64 g(seed);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> v(3 * 8 * 8);
    for (auto& x : v) x = static_cast<float>(g.normal());
    out.emplace_back(Shape{3, 8, 8}, v);
  }
  return out;
}

TEST(Forward, QuantizedTracksFloatPath) {
  const CompressedModel m = small_network(5);
  const Model plain = decompress(m);
  const auto images = random_images(6, 200);
  const auto scales = calibrate(plain, std::span<const Tensor>(images).first(64));
  const auto net = QuantizedNetwork::prepare(m, scales);
  std::size_t agree = 0;
  for (const auto& img : images) {
    const auto q = forward_quantized(net, img);
    const auto f = forward_float(plain, img);
    ASSERT_EQ(q.logits.size(), 3u);
    ASSERT_EQ(q.layer_outputs.size(), 3u);
    agree += argmax(q.logits) == argmax(f);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(q.logits[i], f[i], 0.1 * (1.0 + std::fabs(f[i])));
  }
  EXPECT_GE(agree, 190u);
  // Deterministic.
  EXPECT_EQ(forward_quantized(net, images[0]).logits, forward_quantized(net, images[0]).logits);
}

TEST(Forward, ZeroInputGivesBiasPath) {
  CompressedModel m = small_network(7);
  m.layers[0].spec.bn.reset();
  m.layers[1].spec.bn.reset();
  const auto images = random_images(8, 16);
  const auto net = QuantizedNetwork::prepare(m, calibrate(decompress(m), images));
  const auto r = forward_quantized(net, Tensor({3, 8, 8}));
  // conv outputs are 0, pooled 0, fc1 gives requantized relu(bias); fc2 adds its bias.
  const auto& fc1 = net.layers[2];
  std::vector<double> h(6);
  for (std::size_t i = 0; i < 6; ++i)
    h[i] = std::ldexp(std::clamp(std::round(std::ldexp(std::max(0.0, double{(*m.layers[2].spec.bias)[i]}),
                                                       -fc1.output_exponent)),
                                 0.0, 127.0),
                      fc1.output_exponent);
  const auto w2 = dequantized_weights(m.layers[3].quant);
  for (std::size_t o = 0; o < 3; ++o) {
    double s = (*m.layers[3].spec.bias)[o];
    for (std::size_t j = 0; j < 6; ++j) s += w2[o * 6 + j] * h[j];
    EXPECT_NEAR(r.logits[o], s, 1e-12);
  }
}

TEST(Forward, IdentityNetworkReturnsPooledInput) {
  LayerSpec conv = make_conv2d("id", 2, 2, 1, 0, 1);
  conv.weight = Tensor({2, 2, 1, 1}, {1.0f, 0.0f, 0.0f, 1.0f});
  LayerSpec fc = make_dense("fc", 2, 2);
  fc.weight = Tensor({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
  CompressedModel m;
  m.layers = {fixtures::with_quantization(conv, quantize_shift_layer(conv.weight, PruneMask::all_kept(4), 5)),
              fixtures::with_quantization(fc, quantize_shift_layer(fc.weight, PruneMask::all_kept(4), 5))};
  ActivationScales s{-4, {-4, -4}, -8};
  const auto net = QuantizedNetwork::prepare(m, s);
  SplitMix64 g(1);
  std::vector<float> v(2 * 4 * 4);
  for (auto& x : v) x = static_cast<float>(std::ldexp(static_cast<double>(g.below(8)), -4));
  const Tensor img({2, 4, 4}, v);
  const auto r = forward_quantized(net, img);
  for (std::size_t c = 0; c < 2; ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < 16; ++i) sum += v[c * 16 + i];
    EXPECT_EQ(r.logits[c], sum / 16.0);
  }
}

TEST(Forward, UnquantizedLayerIsInvalidState) {
  CompressedModel m = small_network(9);
  m.layers[1].quant.symbols.clear();
  ActivationScales s{0, {0, 0, 0, 0}, 0};
  EXPECT_FQ_ERROR(QuantizedNetwork::prepare(m, s), ErrorKind::kInvalidState);
}

}  // namespace
}  // namespace fq
