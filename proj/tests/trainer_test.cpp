// Copyright 2026 The fqlib Authors.
// SPDX-License-Identifier: Apache-2.0

#include "fq/trainer.hpp"
#include "fq/engine.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

namespace fq {
namespace {

Model tiny_model(std::uint64_t seed) {
  SplitMix64 g(seed);
  Model m;
  auto conv = [&](const char* name, std::uint32_t in, std::uint32_t out, std::uint32_t stride) {
    LayerSpec l = make_conv2d(name, in, out, 3, 1, stride);
    std::vector<float> w(l.weight.size());
    for (auto& v : w) v = static_cast<float>(g.normal(0.0, std::sqrt(2.0 / static_cast<double>(l.fan_in()))));
    l.weight = Tensor(l.expected_weight_shape(), std::move(w));
    l.bn = BatchNorm{std::vector<float>(out, 1.0f), std::vector<float>(out, 0.0f), std::vector<float>(out, 0.0f),
                     std::vector<float>(out, 1.0f)};
    return l;
  };
  m.layers.push_back(conv("c1", 3, 6, 2));
  m.layers.push_back(conv("c2", 6, 6, 1));
  LayerSpec fc = make_dense("fc", 6, 3);
  std::vector<float> w(18);
  for (auto& v : w) v = static_cast<float>(g.normal(0.0, 0.4));
  fc.weight = Tensor({3, 6}, std::move(w));
  fc.bias = std::vector<float>(3, 0.0f);
  m.layers.push_back(std::move(fc));
  return m;
}

Dataset tiny_data(std::size_t n, std::uint64_t seed) {
  return make_blob_dataset(n, seed, {.classes = 3, .size = 8, .blobs_per_class = 2, .max_shift = 1});
}

struct Pruned {
  Model model;
  std::vector<PruneMask> masks;
};

Pruned tiny_pruned(std::uint64_t seed) {
  Pruned p{tiny_model(seed), {}};
  p.masks = prune_model(p.model, 0.5);
  return p;
}

TrainConfig short_config() {
  TrainConfig c;
  c.epochs_per_step = 1;
  c.final_step_epochs = 2;
  c.learning_rate = 0.01;
  c.seed = 11;
  c.batch_size = 8;
  return c;
}

TEST(ToyNet, GoldenShapes) {
  const Model m = nn::make_toy_net(1);
  const std::vector<std::pair<std::string, Shape>> golden{
      {"conv1", {8, 3, 3, 3}},    {"conv2", {8, 8, 3, 3}},    {"conv3", {16, 8, 3, 3}},
      {"conv4", {16, 16, 3, 3}},  {"conv5", {16, 16, 3, 3}},  {"conv6", {32, 16, 3, 3}},
      {"conv7", {32, 32, 3, 3}},  {"conv8", {32, 32, 3, 3}},  {"conv9", {32, 32, 3, 3}},
      {"fc", {10, 32}}};
  ASSERT_EQ(m.layers.size(), golden.size());
  for (std::size_t i = 0; i < golden.size(); ++i) {
    EXPECT_EQ(m.layers[i].name, golden[i].first);
    EXPECT_EQ(m.layers[i].weight.shape(), golden[i].second);
    EXPECT_NO_THROW(m.layers[i].validate());
  }
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_TRUE(m.layers[i].bn.has_value());
    EXPECT_EQ(m.layers[i].padding, 1u);
  }
  EXPECT_EQ(m.layers[0].stride, 2u);
  EXPECT_EQ(m.layers[2].stride, 2u);
  EXPECT_EQ(m.layers[5].stride, 2u);
  EXPECT_TRUE(m.layers[9].bias.has_value());
}

TEST(ToyNet, LogitsShapeAndMatchesEngineFloatPath) {
  const Model m = nn::make_toy_net(2);
  auto net = nn::Net<double>::from_model(m);
  const Dataset d = make_blob_dataset(3, 4);
  const auto x = nn::batch_images<double>(d, std::vector<std::size_t>{0, 1, 2});
  const auto logits = net.forward(x, 3, nn::image_shape(d), false);
  ASSERT_EQ(logits.size(), 30u);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto slice = d.slice(i, 1);
    const Tensor img(nn::image_shape(d), slice.images.data());
    const auto ref = forward_float(m, img);
    for (std::size_t c = 0; c < 10; ++c) EXPECT_NEAR(logits[i * 10 + c], ref[c], 1e-4);
  }
}

TEST(RefreshSchedule, ExponentialAndFixed) {
  EXPECT_EQ(refresh_schedule(1, 2.0, 22), (std::vector<int>{1, 2, 4, 8, 16}));
  EXPECT_EQ(refresh_schedule(3, 2.0, 30), (std::vector<int>{3, 6, 12, 24}));
  EXPECT_EQ(refresh_schedule(3, 2.0, 2), std::vector<int>{});
  EXPECT_EQ(refresh_schedule(3, 0.0, 10, true), (std::vector<int>{3, 6, 9}));
  EXPECT_FQ_ERROR(refresh_schedule(0, 2.0, 10), ErrorKind::kInvalidArgument);
  EXPECT_FQ_ERROR(refresh_schedule(1, 1.0, 10), ErrorKind::kInvalidArgument);
}

TEST(RefreshSchedule, PowersOfTwoTimesK0Property) {
  for (int k0 = 1; k0 <= 5; ++k0)
    for (int total = 1; total <= 70; ++total) {
      std::vector<int> expect;
      for (int e = k0; e <= total; e *= 2) expect.push_back(e);
      EXPECT_EQ(refresh_schedule(k0, 2.0, total), expect) << k0 << " " << total;
    }
}

TEST(InqPartition, Examples) {
  const std::vector<float> w{4, 3, 2, 1};
  const auto all = PruneMask::all_kept(4);
  EXPECT_EQ(inq_partition(w, all, 0.5), (std::vector<std::uint8_t>{1, 1, 0, 0}));
  EXPECT_EQ(inq_partition(w, all, 1.0), (std::vector<std::uint8_t>{1, 1, 1, 1}));
  const std::vector<float> signed_w{-1, 5, -6, 2};
  EXPECT_EQ(inq_partition(signed_w, all, 0.5), (std::vector<std::uint8_t>{0, 1, 1, 0}));
  PruneMask m{{1, 0, 1, 1}};
  EXPECT_EQ(inq_partition(w, m, 1.0), (std::vector<std::uint8_t>{1, 0, 1, 1}));
  EXPECT_FQ_ERROR(inq_partition(w, all, 0.0), ErrorKind::kInvalidArgument);
  EXPECT_FQ_ERROR(inq_partition(w, all, 1.5), ErrorKind::kInvalidArgument);
  EXPECT_FQ_ERROR(inq_partition(w, PruneMask::all_kept(3), 0.5), ErrorKind::kInvalidArgument);
}

TEST(InqPartition, NestedAndSizedProperty) {
  const std::vector<double> fractions{0.25, 0.5, 0.75, 0.875, 1.0};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto t = fixtures::gaussian_tensor(seed, 257);
    const auto mask = fixtures::random_mask(seed + 100, 257, 0.3);
    std::vector<std::uint8_t> prev(257, 0);
    for (double f : fractions) {
      const auto q = inq_partition(t.values(), mask, f);
      std::size_t count = 0;
      double min_in = 1e9, max_out = 0;
      for (std::size_t i = 0; i < q.size(); ++i) {
        EXPECT_GE(q[i], prev[i]) << "seed " << seed << " fraction " << f;
        if (!mask.kept(i)) {
          EXPECT_EQ(q[i], 0);
        }
        count += q[i];
        if (q[i]) min_in = std::min(min_in, std::fabs(static_cast<double>(t[i])));
        else if (mask.kept(i)) max_out = std::max(max_out, std::fabs(static_cast<double>(t[i])));
      }
      EXPECT_EQ(count, static_cast<std::size_t>(std::llround(f * static_cast<double>(mask.kept_count()))));
      EXPECT_GE(min_in, max_out);
      prev = q;
    }
  }
}

TEST(TrainConfig, DefaultsAndValidation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.total_epochs(), 22);
  EXPECT_DOUBLE_EQ(c.learning_rate, 0.001);
  EXPECT_DOUBLE_EQ(c.w_sep, 2.0);
  c.inq_fractions = {0.5, 0.5, 1.0};
  EXPECT_FQ_ERROR(c.validate(), ErrorKind::kConfig);
  c.inq_fractions = {0.5, 0.9};
  EXPECT_FQ_ERROR(c.validate(), ErrorKind::kConfig);
  c.inq_fractions = {1.0};
  c.n_bits = 3;
  EXPECT_FQ_ERROR(c.validate(), ErrorKind::kInvalidArgument);
}

TEST(SweepGrid, DefaultHas26Points) {
  const auto g = sweep_grid();
  ASSERT_EQ(g.size(), 26u);
  EXPECT_DOUBLE_EQ(g.front(), 1.0);
  EXPECT_DOUBLE_EQ(g.back(), 3.5);
  EXPECT_DOUBLE_EQ(g[10], 2.0);
  EXPECT_FQ_ERROR(sweep_grid(1.0, 3.5, 0.0), ErrorKind::kInvalidArgument);
  EXPECT_FQ_ERROR(sweep_grid(2.0, 1.0, 0.1), ErrorKind::kInvalidArgument);
}

TEST(QuantizeModel, WsepZeroIsAllRecentralizedAndInfinityAllShift) {
  Model m = nn::make_toy_net(3);
  const auto masks = prune_model(m, 0.75);
  for (const auto& l : quantize_model(m, masks, 5, 0.0, 1).layers)
    EXPECT_EQ(l.quant.mode, QuantMode::kRecentralized) << l.spec.name;
  for (const auto& l : quantize_model(m, masks, 5, std::numeric_limits<double>::infinity(), 1).layers)
    EXPECT_EQ(l.quant.mode, QuantMode::kShift) << l.spec.name;
}

TEST(Backend, ConvBnDenseGradientsMatchFiniteDifferences) {
  for (bool frozen : {false, true}) {
    SCOPED_TRACE(frozen ? "frozen BN" : "batch BN");
    Model m = tiny_model(5);
    m.layers[0].bn->mean = {0.1f, -0.1f, 0.2f, 0.0f, 0.05f, -0.2f};
    m.layers[0].bn->variance = {0.5f, 1.5f, 1.0f, 2.0f, 0.7f, 1.2f};
    auto net = nn::Net<double>::from_model(m);
    net.freeze_bn = frozen;
    const Dataset d = tiny_data(6, 9);
    std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5};
    const auto x = nn::batch_images<double>(d, idx);
    const Shape shape = nn::image_shape(d);
    auto loss = [&] { return nn::softmax_cross_entropy(net.forward(x, 6, shape, true), d.labels, 3, nullptr); };
    std::vector<double> dl;
    nn::softmax_cross_entropy(net.forward(x, 6, shape, true), d.labels, 3, &dl);
    net.zero_grad();
    net.backward(dl, 6);
    const auto snapshot = net.layers;
    const double h = 1e-6;
    auto check = [&](std::vector<double>& param, const std::vector<double>& grad, const char* what) {
      for (std::size_t j = 0; j < param.size(); j += std::max<std::size_t>(1, param.size() / 12)) {
        const double keep = param[j];
        param[j] = keep + h;
        const double lp = loss();
        param[j] = keep - h;
        const double lm = loss();
        param[j] = keep;
        const double fd = (lp - lm) / (2 * h);
        EXPECT_LT(gradcheck::rel_error(grad[j], fd), 1e-5) << what << "[" << j << "] " << grad[j] << " vs " << fd;
      }
    };
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      check(net.layers[i].w, snapshot[i].gw, "w");
      if (net.layers[i].has_bn()) {
        check(net.layers[i].gamma, snapshot[i].ggamma, "gamma");
        check(net.layers[i].beta, snapshot[i].gbeta, "beta");
      }
      if (net.layers[i].has_bias()) check(net.layers[i].bias, snapshot[i].gbias, "bias");
    }
  }
}

TEST(Ste, DenseLayerGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = gradcheck::ste_dense(seed);
    EXPECT_EQ(r.checked, 100u);
    EXPECT_LT(r.max_rel_error, 1e-3) << "seed " << seed;
    EXPECT_LT(r.alpha_rel_error, 1e-3) << "seed " << seed;
    EXPECT_TRUE(r.pruned_grads_zero);
  }
}

TEST(FocusedParam, EffectiveWeightsFollowTheSets) {
  auto l = fixtures::sparse_gaussian_layer(4, 400, 0.5, 0.1);
  FocusedParam p;
  p.theta = l.weights.data();
  p.mask = l.mask;
  p.quantized = inq_partition(p.theta, p.mask, 0.5);
  p.hp = quantize_focused(l.weights, l.mask, 4, {.alpha = 1.25f}).quant;
  std::vector<double> w;
  p.effective(w);
  const LayerQuantization full = requantize(p.hp, p.theta, p.mask);
  EXPECT_EQ(full.symbols, p.hp.symbols);
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!p.mask.kept(i)) {
      EXPECT_EQ(w[i], 0.0);
    } else if (p.quantized[i]) {
      EXPECT_EQ(w[i], full.dequantize(full.symbols[i]));
    } else {
      EXPECT_EQ(w[i], static_cast<double>(p.theta[i]));
    }
  }
}

TEST(Finetune, ZeroLearningRateChangesNothing) {
  const auto p = tiny_pruned(1);
  const Dataset d = tiny_data(40, 2);
  TrainConfig c = short_config();
  c.learning_rate = 0.0;
  c.inq_fractions = {1.0};
  c.final_step_epochs = 4;
  const auto r = finetune_quantized(p.model, p.masks, d, c, &d);
  ASSERT_EQ(r.metrics.size(), 4u);
  for (const auto& m : r.metrics) {
    EXPECT_EQ(m.loss, r.metrics[0].loss);
    EXPECT_EQ(m.top1, r.metrics[0].top1);
  }
  const auto initial = quantize_model(p.model, p.masks, c.n_bits, c.w_sep, c.seed);
  for (std::size_t i = 0; i < initial.layers.size(); ++i) {
    EXPECT_EQ(r.model.layers[i].quant.symbols, initial.layers[i].quant.symbols);
    EXPECT_EQ(r.model.layers[i].quant.alpha, 1.0f);
    EXPECT_EQ(r.model.layers[i].spec.bn, p.model.layers[i].bn);
    EXPECT_EQ(r.model.layers[i].spec.bias, p.model.layers[i].bias);
  }
}

TEST(Finetune, MasksHeldAndQuantizedSetOnlyGrows) {
  const auto p = tiny_pruned(2);
  const Dataset d = tiny_data(32, 3);
  std::vector<std::vector<std::uint8_t>> prev(p.masks.size());
  std::size_t steps = 0, prev_step = 0;
  const auto r = finetune_quantized(p.model, p.masks, d, short_config(), nullptr, [&](const StepView& v) {
    ++steps;
    for (std::size_t i = 0; i < v.params->size(); ++i) {
      const auto& fp = (*v.params)[i];
      const auto& w = v.net->layers[i].w;
      for (std::size_t j = 0; j < fp.theta.size(); ++j)
        if (!p.masks[i].kept(j)) {
          ASSERT_EQ(fp.theta[j], 0.0f);
          ASSERT_EQ(w[j], 0.0f);
        }
      if (!prev[i].empty()) {
        for (std::size_t j = 0; j < fp.quantized.size(); ++j) ASSERT_GE(fp.quantized[j], prev[i][j]);
      }
      prev[i] = fp.quantized;
    }
    EXPECT_GE(v.step, prev_step);
    prev_step = v.step;
  });
  EXPECT_EQ(steps, 6u * 4u);
  EXPECT_EQ(r.metrics.size(), 6u);
  EXPECT_EQ(r.refreshed_at, (std::vector<int>{1, 2, 4}));
  for (std::size_t i = 0; i < r.model.layers.size(); ++i) {
    const auto& q = r.model.layers[i].quant;
    for (std::size_t j = 0; j < q.symbols.size(); ++j) EXPECT_EQ(q.symbols[j] == 0u, !p.masks[i].kept(j));
  }
}

TEST(Finetune, LearnsAndKeepsModes) {
  const auto p = tiny_pruned(3);
  const Dataset d = tiny_data(60, 4);
  TrainConfig c = short_config();
  c.learning_rate = 0.05;
  const auto initial = quantize_model(p.model, p.masks, c.n_bits, c.w_sep, c.seed);
  const auto r = finetune_quantized(p.model, p.masks, d, c, &d);
  EXPECT_LT(r.metrics.back().loss, r.metrics.front().loss);
  for (std::size_t i = 0; i < initial.layers.size(); ++i)
    EXPECT_EQ(r.model.layers[i].quant.mode, initial.layers[i].quant.mode);
  // The exported weights are exactly the decoded symbols.
  for (const auto& l : r.model.layers) {
    const auto deq = l.quant.dequantized();
    for (std::size_t j = 0; j < deq.size(); ++j) ASSERT_EQ(l.spec.weight[j], static_cast<float>(deq[j]));
  }
}

TEST(Finetune, DeterministicBitForBit) {
  const auto p = tiny_pruned(4);
  const Dataset d = tiny_data(30, 5);
  auto a = finetune_quantized(p.model, p.masks, d, short_config(), &d);
  auto b = finetune_quantized(p.model, p.masks, d, short_config(), &d);
  EXPECT_EQ(metrics_csv(a.metrics), metrics_csv(b.metrics));
  EXPECT_EQ(encode_compressed(a.model), encode_compressed(b.model));
}

TEST(Finetune, DivergenceIsReported) {
  const auto p = tiny_pruned(5);
  const Dataset d = tiny_data(16, 6);
  TrainConfig c = short_config();
  c.learning_rate = 1e30;
  c.learn_alpha = false;
  EXPECT_FQ_ERROR(finetune_quantized(p.model, p.masks, d, c), ErrorKind::kDivergence);
}

TEST(Finetune, RejectsBadConfig) {
  const auto p = tiny_pruned(6);
  const Dataset d = tiny_data(8, 7);
  TrainConfig c = short_config();
  c.inq_fractions = {0.5, 0.25, 1.0};
  EXPECT_FQ_ERROR(finetune_quantized(p.model, p.masks, d, c), ErrorKind::kConfig);
}

TEST(TrainFloat, LearnsAndRespectsMasks) {
  Pruned p = tiny_pruned(7);
  const Dataset d = tiny_data(60, 8);
  FloatTrainConfig c;
  c.epochs = 6;
  c.learning_rate = 0.05;
  c.batch_size = 10;
  const auto metrics = train_float(p.model, d, c, &d, &p.masks);
  ASSERT_EQ(metrics.size(), 6u);
  EXPECT_LT(metrics.back().loss, metrics.front().loss);
  for (std::size_t i = 0; i < p.masks.size(); ++i)
    for (std::size_t j = 0; j < p.masks[i].size(); ++j)
      if (!p.masks[i].kept(j)) {
        EXPECT_EQ(p.model.layers[i].weight[j], 0.0f);
      }
}

TEST(MetricsCsv, Header) {
  EXPECT_EQ(metrics_csv({{1, 0.5, 0.25}}), "epoch,loss,top1\n1,0.5,0.25\n");
}

TEST(WsepSweep, RowsModesAndDeterminism) {
  const auto p = tiny_pruned(8);
  const Dataset d = tiny_data(24, 9);
  TrainConfig c = short_config();
  c.inq_fractions = {0.5, 1.0};
  c.final_step_epochs = 1;
  const std::vector<double> grid{0.0, std::numeric_limits<double>::infinity()};
  const auto a = wsep_sweep(p.model, p.masks, d, d, grid, 2, c);
  ASSERT_EQ(a.runs.size(), 4u);
  EXPECT_EQ(a.runs[1].run, 1);
  ASSERT_EQ(a.modes.size(), 2 * p.model.layers.size());
  for (const auto& m : a.modes)
    EXPECT_EQ(m.mode, m.wsep == 0.0 ? QuantMode::kRecentralized : QuantMode::kShift) << m.layer;
  const auto b = wsep_sweep(p.model, p.masks, d, d, grid, 2, c);
  EXPECT_EQ(a.runs_csv(), b.runs_csv());
  EXPECT_EQ(a.summary_csv().substr(0, 23), "wsep,mean_top1,std_top1");
  EXPECT_EQ(a.runs_csv().substr(0, 14), "wsep,run,top1\n");
  EXPECT_FQ_ERROR(wsep_sweep(p.model, p.masks, d, d, grid, 0, c), ErrorKind::kInvalidArgument);
}

TEST(SweepResult, SummaryStatistics) {
  SweepResult r;
  r.runs = {{1.0, 0, 0.5}, {1.0, 1, 0.7}, {1.1, 0, 0.9}};
  EXPECT_EQ(r.summary_csv(), "wsep,mean_top1,std_top1\n1,0.59999999999999998,0.099999999999999978\n1.1000000000000001,0.90000000000000002,0\n");
}

}  // namespace
}  // namespace fq
