// Copyright 2026 The fqlib Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fq/codec.hpp"
#include "fq/config.hpp"
#include "fq/engine.hpp"
#include "fq/model_store.hpp"
#include "fq/nn.hpp"
#include "fq/trainer.hpp"

namespace fq {

struct Datasets {
  Dataset train;
  Dataset test;
};

inline Datasets load_datasets(const DataConfig& d, std::uint64_t seed) {
  if (d.source == "cifar10") {
    require(!d.train_path.empty() && !d.test_path.empty(), ErrorKind::kConfig,
            "cifar10 source needs train_path and test_path");
    const Dataset train = load_cifar10_batch(d.train_path), test = load_cifar10_batch(d.test_path);
    return {train.slice(0, d.train_count), test.slice(0, d.test_count)};
  }
  BlobDatasetOptions o;
  o.noise = d.noise;
  o.max_shift = d.max_shift;
  return {make_blob_dataset(d.train_count, mix_seed(seed, 1), o), make_blob_dataset(d.test_count, mix_seed(seed, 2), o)};
}

inline Tensor image_at(const Dataset& d, std::size_t i) {
  const std::size_t per = d.image_size();
  const auto& data = d.images.data();
  return Tensor(nn::image_shape(d), std::vector<float>(data.begin() + static_cast<std::ptrdiff_t>(i * per),
                                                       data.begin() + static_cast<std::ptrdiff_t>((i + 1) * per)));
}

// `bins` equal-width bins over [lo, hi]; the last bin is closed.
inline std::string histogram_csv(std::span<const double> values, double lo, double hi, int bins) {
  require(bins >= 1, ErrorKind::kInvalidArgument, "histogram needs at least one bin");
  if (!(hi > lo)) hi = lo + 1.0;
  std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
  for (double v : values) {
    auto b = static_cast<long>(std::floor((v - lo) / (hi - lo) * bins));
    counts[static_cast<std::size_t>(std::clamp(b, 0L, static_cast<long>(bins) - 1))]++;
  }
  std::ostringstream os;
  os.precision(9);
  os << "bin_left,bin_right,count\n";
  for (int i = 0; i < bins; ++i)
    os << lo + (hi - lo) * i / bins << ',' << lo + (hi - lo) * (i + 1) / bins << ',' << counts[static_cast<std::size_t>(i)]
       << '\n';
  return os.str();
}

inline std::string modes_csv(const CompressedModel& m) {
  std::ostringstream os;
  os.precision(6);
  os << "layer,mode,w\n";
  for (const auto& l : m.layers) os << l.spec.name << ',' << to_string(l.quant.mode) << ',' << l.quant.wsep << '\n';
  return os.str();
}

struct CompressOutput {
  CompressedModel model;
  std::vector<PruneMask> masks;
  Model pruned;
  std::vector<std::uint8_t> bytes;
  CompressionReport report;
};

inline std::vector<PruneMask> prune_layers(Model& model, const PipelineConfig& c) {
  std::vector<PruneMask> masks;
  for (auto& l : model.layers) {
    masks.push_back(prune_by_magnitude(l.weight, c.sparsity_for(l.name)));
    l.weight = apply_mask(l.weight, masks.back());
  }
  return masks;
}

inline void finish_compression(const Model& original, CompressOutput& out) {
  out.bytes = encode_compressed(out.model);
  out.report = compression_report(original, out.model);
}

// prune -> fit and assign -> mode select -> quantize -> encode.
inline CompressOutput compress_model(const Model& model, const PipelineConfig& c) {
  c.validate();
  for (const auto& [name, o] : c.layers) {
    const bool found = std::any_of(model.layers.begin(), model.layers.end(), [&](const LayerSpec& l) { return l.name == name; });
    require(found, ErrorKind::kConfig, "config names unknown layer " + name);
  }
  CompressOutput out;
  out.pruned = model;
  out.masks = prune_layers(out.pruned, c);
  out.model = quantize_model(out.pruned, out.masks, c.n_bits, c.w_sep, c.seed);
  finish_compression(model, out);
  return out;
}

// compression.csv, modes.csv and per-layer pre/post quantization histograms
// of the surviving weights on shared bin edges.
inline void write_reports(const std::filesystem::path& dir, const CompressOutput& out, int bins) {
  std::filesystem::create_directories(dir);
  auto put = [&](const std::string& name, const std::string& text) {
    write_file(dir / name, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  };
  put("compression.csv", out.report.to_csv());
  put("modes.csv", modes_csv(out.model));
  for (std::size_t i = 0; i < out.model.layers.size(); ++i) {
    const auto& q = out.model.layers[i];
    std::vector<double> pre, post;
    for (std::size_t j = 0; j < q.quant.symbols.size(); ++j) {
      if (!out.masks[i].kept(j)) continue;
      pre.push_back(static_cast<double>(out.pruned.layers[i].weight[j]));
      post.push_back(q.quant.dequantize(q.quant.symbols[j]));
    }
    double lo = 0.0, hi = 0.0;
    if (!pre.empty()) {
      lo = std::min(*std::min_element(pre.begin(), pre.end()), *std::min_element(post.begin(), post.end()));
      hi = std::max(*std::max_element(pre.begin(), pre.end()), *std::max_element(post.begin(), post.end()));
    }
    put("hist_" + q.spec.name + "_pre.csv", histogram_csv(pre, lo, hi, bins));
    put("hist_" + q.spec.name + "_post.csv", histogram_csv(post, lo, hi, bins));
  }
}

struct TrainOutput {
  Model float_model;
  std::vector<EpochMetrics> float_metrics;
  std::vector<EpochMetrics> prune_metrics;
  FinetuneResult finetune;
  CompressOutput compressed;
  double float_top1 = 0.0;
  double quant_top1 = 0.0;
};

using Log = std::function<void(const std::string&)>;

// Float pretraining of the toy net, pruning with a short masked recovery,
// then focused-quantization fine-tuning. The float baseline is the dense
// pretrained model.
inline TrainOutput run_training(const PipelineConfig& c, const Datasets& data, const Log& log = {}) {
  c.validate();
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  TrainOutput out;
  out.float_model = nn::make_toy_net(mix_seed(c.seed, 3), 10);
  FloatTrainConfig f;
  f.epochs = c.pretrain.epochs;
  f.learning_rate = c.pretrain.learning_rate;
  f.momentum = c.pretrain.momentum;
  f.weight_decay = c.pretrain.weight_decay;
  f.lr_decay_every = c.pretrain.lr_decay_every;
  f.batch_size = c.pretrain.batch_size;
  f.seed = mix_seed(c.seed, 4);
  out.float_metrics = train_float(out.float_model, data.train, f, &data.test);
  out.float_top1 = evaluate_model(out.float_model, data.test);
  say("float baseline top1 " + std::to_string(out.float_top1));

  CompressOutput& comp = out.compressed;
  comp.pruned = out.float_model;
  comp.masks = prune_layers(comp.pruned, c);
  FloatTrainConfig pf = f;
  pf.epochs = c.pretrain.prune_epochs;
  pf.learning_rate = c.pretrain.prune_learning_rate;
  pf.lr_decay_every = 0;
  pf.seed = mix_seed(c.seed, 5);
  out.prune_metrics = train_float(comp.pruned, data.train, pf, &data.test, &comp.masks);
  if (!out.prune_metrics.empty()) say("pruned top1 " + std::to_string(out.prune_metrics.back().top1));

  TrainConfig t = c.train;
  t.seed = c.seed;
  t.w_sep = c.w_sep;
  t.n_bits = c.n_bits;
  out.finetune = finetune_quantized(comp.pruned, comp.masks, data.train, t, &data.test);
  comp.model = out.finetune.model;
  finish_compression(out.float_model, comp);
  out.quant_top1 = evaluate_model(decompress(comp.model), data.test);
  say("quantized top1 " + std::to_string(out.quant_top1) + ", CR " + std::to_string(comp.report.total().cr));
  return out;
}

struct InferOutput {
  std::vector<std::vector<double>> logits;
  std::vector<std::size_t> predictions;
  double top1 = 0.0;
  std::optional<double> agreement;  // argmax agreement with the reference
};

// Integer inference; activation scales come from one pass over the first
// `calibration` samples.
inline InferOutput infer(const CompressedModel& model, const Dataset& data, const Model* reference = nullptr,
                         std::size_t calibration = 64) {
  require(data.size() > 0, ErrorKind::kInvalidArgument, "no input samples");
  const Model dequantized = decompress(model);
  const auto& first = dequantized.layers.front();
  const Shape shape = nn::image_shape(data);
  const bool ok = first.kind == LayerKind::kConv2d ? shape.size() == 3 && shape[0] == first.in_channels
                                                    : element_count(shape) == first.in_channels;
  require(ok, ErrorKind::kInvalidArgument,
          "input shape " + shape_string(shape) + " does not match layer " + first.name);
  std::vector<Tensor> calib;
  for (std::size_t i = 0; i < std::min(calibration, data.size()); ++i) calib.push_back(image_at(data, i));
  const auto net = QuantizedNetwork::prepare(model, calibrate(dequantized, calib));
  InferOutput out;
  std::size_t correct = 0, agree = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor img = image_at(data, i);
    auto r = forward_quantized(net, img);
    const std::size_t pred = argmax(r.logits);
    correct += pred == static_cast<std::size_t>(data.labels[i]);
    if (reference) agree += pred == argmax(forward_float(*reference, img));
    out.predictions.push_back(pred);
    out.logits.push_back(std::move(r.logits));
  }
  out.top1 = static_cast<double>(correct) / static_cast<double>(data.size());
  if (reference) out.agreement = static_cast<double>(agree) / static_cast<double>(data.size());
  return out;
}

inline std::string logits_csv(const InferOutput& r, const Dataset& d) {
  std::ostringstream os;
  os.precision(9);
  os << "sample,label,pred";
  const std::size_t classes = r.logits.empty() ? 0 : r.logits.front().size();
  for (std::size_t c = 0; c < classes; ++c) os << ",logit" << c;
  os << '\n';
  for (std::size_t i = 0; i < r.logits.size(); ++i) {
    os << i << ',' << d.labels[i] << ',' << r.predictions[i];
    for (double v : r.logits[i]) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

}  // namespace fq
