// Copyright 2026 The fqlib Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fq/codec.hpp"
#include "fq/error.hpp"
#include "fq/focused_quant.hpp"
#include "fq/nn.hpp"
#include "fq/pruner.hpp"
#include "fq/rng.hpp"

namespace fq {

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;
  double top1 = 0.0;  // NaN when no evaluation set was given

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

inline std::string metrics_csv(const std::vector<EpochMetrics>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,loss,top1\n";
  for (const auto& r : rows) os << r.epoch << ',' << r.loss << ',' << r.top1 << '\n';
  return os.str();
}

struct TrainConfig {
  double learning_rate = 0.001;
  int epochs_per_step = 3;
  int final_step_epochs = 10;
  std::vector<double> inq_fractions{0.25, 0.5, 0.75, 0.875, 1.0};
  int refresh_k0 = 1;
  double refresh_growth = 2.0;
  bool fixed_refresh = false;  // refresh every k0 epochs instead
  std::uint64_t seed = 0;
  double w_sep = 2.0;
  int n_bits = 5;
  double momentum = 0.9;
  int lr_decay_every = 3;
  double lr_decay = 0.1;
  std::size_t batch_size = 32;
  bool learn_alpha = true;
  bool freeze_bn_stats = true;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;

  void validate() const {
    require(!inq_fractions.empty(), ErrorKind::kConfig, "INQ fractions must not be empty");
    for (std::size_t i = 0; i < inq_fractions.size(); ++i) {
      require(inq_fractions[i] > 0.0 && inq_fractions[i] <= 1.0, ErrorKind::kConfig, "INQ fraction outside (0, 1]");
      require(i == 0 || inq_fractions[i] > inq_fractions[i - 1], ErrorKind::kConfig,
              "INQ fractions must be strictly increasing");
    }
    require(inq_fractions.back() == 1.0, ErrorKind::kConfig, "INQ fractions must end at 1.0");
    require(learning_rate >= 0.0 && std::isfinite(learning_rate), ErrorKind::kConfig, "learning rate must be >= 0");
    require(epochs_per_step >= 1 && final_step_epochs >= 1, ErrorKind::kConfig, "epochs per step must be >= 1");
    require(refresh_k0 >= 1, ErrorKind::kConfig, "refresh k0 must be >= 1");
    require(fixed_refresh || refresh_growth > 1.0, ErrorKind::kConfig, "refresh growth must exceed 1");
    require(momentum >= 0.0 && momentum < 1.0, ErrorKind::kConfig, "momentum must lie in [0, 1)");
    require(lr_decay_every >= 0 && lr_decay > 0.0, ErrorKind::kConfig, "invalid learning-rate decay");
    require(batch_size >= 1, ErrorKind::kConfig, "batch size must be >= 1");
    validate_bits(QuantMode::kRecentralized, n_bits);
  }

  int step_epochs(std::size_t step) const {
    return step + 1 == inq_fractions.size() ? final_step_epochs : epochs_per_step;
  }

  int total_epochs() const {
    int t = 0;
    for (std::size_t s = 0; s < inq_fractions.size(); ++s) t += step_epochs(s);
    return t;
  }
};

// Epochs (1-based, counted over the whole fine-tuning run) after which the
// quantization hyperparameters are refit: k0 * growth^j, or every k0 epochs.
inline std::vector<int> refresh_schedule(int k0, double growth, int total_epochs, bool fixed = false) {
  require(k0 >= 1, ErrorKind::kInvalidArgument, "refresh k0 must be >= 1");
  std::vector<int> out;
  if (fixed) {
    for (int e = k0; e <= total_epochs; e += k0) out.push_back(e);
    return out;
  }
  require(growth > 1.0, ErrorKind::kInvalidArgument, "refresh growth must exceed 1");
  for (double e = k0; e <= total_epochs; e *= growth) {
    const int epoch = static_cast<int>(std::llround(e));
    if (out.empty() || epoch > out.back()) out.push_back(epoch);
  }
  return out;
}

// Marks the top `fraction` of unpruned weights by magnitude (ties to the lower
// index) as quantized: round(fraction * kept) of them.
inline std::vector<std::uint8_t> inq_partition(std::span<const float> weights, const PruneMask& mask,
                                               double fraction) {
  require(fraction > 0.0 && fraction <= 1.0, ErrorKind::kInvalidArgument,
          "INQ fraction must lie in (0, 1], got " + std::to_string(fraction));
  require(mask.size() == weights.size(), ErrorKind::kInvalidArgument, "mask length mismatch");
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < weights.size(); ++i)
    if (mask.kept(i)) kept.push_back(i);
  std::stable_sort(kept.begin(), kept.end(),
                   [&](std::size_t a, std::size_t b) { return std::fabs(weights[a]) > std::fabs(weights[b]); });
  const auto take = fraction == 1.0 ? kept.size()
                                    : std::min(kept.size(), static_cast<std::size_t>(std::llround(
                                                                fraction * static_cast<double>(kept.size()))));
  std::vector<std::uint8_t> q(weights.size(), 0);
  for (std::size_t i = 0; i < take; ++i) q[kept[i]] = 1;
  return q;
}

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  SplitMix64 g(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[g.below(i)]);
  return order;
}

// Magnitude-prunes every layer to `sparsity` in place.
inline std::vector<PruneMask> prune_model(Model& model, double sparsity) {
  std::vector<PruneMask> masks;
  for (auto& l : model.layers) {
    masks.push_back(prune_by_magnitude(l.weight, sparsity));
    l.weight = apply_mask(l.weight, masks.back());
  }
  return masks;
}

inline std::uint64_t layer_seed(std::uint64_t seed, std::size_t layer) { return mix_seed(seed, 0x1000 + layer); }

// Quantizes every layer without training. Layer i uses layer_seed(seed, i).
inline CompressedModel quantize_model(const Model& model, const std::vector<PruneMask>& masks, int n_bits,
                                      double w_sep, std::uint64_t seed) {
  require(masks.size() == model.layers.size(), ErrorKind::kInvalidArgument, "one mask per layer required");
  CompressedModel out;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& spec = model.layers[i];
    try {
      FocusedOptions opt;
      opt.n_bits = n_bits;
      opt.w_sep = w_sep;
      auto r = quantize_focused(spec.weight, masks[i], layer_seed(seed, i), opt);
      LayerSpec s = spec;
      const auto deq = r.quant.dequantized();
      s.weight = Tensor(spec.weight.shape(), std::vector<float>(deq.begin(), deq.end()));
      out.layers.push_back({std::move(s), std::move(r.quant)});
    } catch (const Error& e) {
      fail(e.kind(), "layer " + spec.name + ": " + e.what());
    }
  }
  return out;
}

// One layer's fine-tuning state: float shadow weights, the frozen prune mask,
// the INQ quantized set and the current quantization hyperparameters.
struct FocusedParam {
  std::vector<float> theta;
  PruneMask mask;
  std::vector<std::uint8_t> quantized;
  LayerQuantization hp;
  std::uint64_t seed = 0;

  // Forward weights: 0 when pruned, alpha * Q(theta) when quantized, theta
  // otherwise.
  template <class T>
  void effective(std::vector<T>& w) const {
    w.resize(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (!mask.kept(i)) w[i] = T(0);
      else if (quantized[i]) w[i] = static_cast<T>(hp.dequantize(quantize_code(hp, theta[i], true, i)));
      else w[i] = static_cast<T>(theta[i]);
    }
  }

  // Straight-through gradient for theta: dL/dw passed through, masked.
  template <class T>
  std::vector<T> theta_grad(const std::vector<T>& gw) const {
    std::vector<T> g(gw.size());
    for (std::size_t i = 0; i < gw.size(); ++i) g[i] = mask.kept(i) ? gw[i] : T(0);
    return g;
  }

  // dL/dalpha = sum over the quantized set of dL/dw * Q(theta).
  template <class T>
  double alpha_grad(const std::vector<T>& gw, const std::vector<T>& w) const {
    const double a = static_cast<double>(hp.alpha);
    double g = 0.0;
    for (std::size_t i = 0; i < gw.size(); ++i)
      if (mask.kept(i) && quantized[i]) g += static_cast<double>(gw[i]) * static_cast<double>(w[i]) / a;
    return g;
  }

  // Refits mean, sigma, bias and assignments on the current shadow weights,
  // keeping the mode and alpha.
  void refresh() {
    const Tensor t({theta.size()}, theta);
    FocusedOptions opt;
    opt.n_bits = hp.total_bits;
    opt.alpha = hp.alpha;
    opt.force_mode = hp.mode;
    auto r = quantize_focused(t, mask, seed, opt);
    r.quant.wsep = hp.wsep;
    hp = std::move(r.quant);
  }

  // Adds the top `fraction` to the quantized set; membership never shrinks.
  void grow_quantized(double fraction) {
    const auto add = inq_partition(theta, mask, fraction);
    for (std::size_t i = 0; i < add.size(); ++i) quantized[i] |= add[i];
  }
};

struct StepView {
  int epoch = 0;
  std::size_t step = 0;  // INQ step
  const std::vector<FocusedParam>* params = nullptr;
  const nn::Net<float>* net = nullptr;
};

struct FinetuneResult {
  CompressedModel model;
  std::vector<EpochMetrics> metrics;
  std::vector<int> refreshed_at;
};

namespace detail {

inline void check_loss(double loss, int epoch) {
  if (!std::isfinite(loss))
    fail(ErrorKind::kDivergence, "training diverged: loss " + std::to_string(loss) + " at epoch " +
                                     std::to_string(epoch));
}

inline void sgd_aux(nn::Layer<float>& l, std::vector<float>& vb, std::vector<float>& vg, std::vector<float>& vbeta,
                    double lr, double momentum) {
  if (l.has_bias()) nn::sgd_step(l.bias, l.gbias, vb, lr, momentum);
  if (l.has_bn()) {
    nn::sgd_step(l.gamma, l.ggamma, vg, lr, momentum);
    nn::sgd_step(l.beta, l.gbeta, vbeta, lr, momentum);
  }
}

// Forward and backward over one batch; per-sample losses land in `losses`
// at their dataset index.
inline void run_batch(nn::Net<float>& net, const Dataset& data, std::span<const std::size_t> idx,
                      std::vector<double>& losses) {
  const auto x = nn::batch_images<float>(data, idx);
  const auto logits = net.forward(x, idx.size(), nn::image_shape(data), true);
  const std::size_t classes = net.num_classes();
  std::vector<float> grad;
  std::vector<int> labels(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = data.labels[idx[i]];
  std::vector<double> per_sample;
  nn::softmax_cross_entropy(logits, labels, classes, &grad, &per_sample);
  for (std::size_t i = 0; i < idx.size(); ++i) losses[idx[i]] = per_sample[i];
  net.zero_grad();
  net.backward(std::move(grad), idx.size());
}

inline double mean_in_index_order(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace detail

struct FloatTrainConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int epochs = 15;
  int lr_decay_every = 0;  // 0 disables decay
  double lr_decay = 0.1;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

// Plain SGD training of every parameter. With masks, pruned weights are held
// at zero after each step.
inline std::vector<EpochMetrics> train_float(Model& model, const Dataset& train, const FloatTrainConfig& cfg,
                                             const Dataset* eval = nullptr,
                                             const std::vector<PruneMask>* masks = nullptr) {
  require(train.size() > 0, ErrorKind::kInvalidArgument, "empty training set");
  require(!masks || masks->size() == model.layers.size(), ErrorKind::kInvalidArgument, "one mask per layer required");
  auto net = nn::Net<float>::from_model(model);
  const std::size_t L = net.layers.size();
  std::vector<std::vector<float>> vw(L), vb(L), vg(L), vbeta(L);
  std::vector<EpochMetrics> metrics;
  std::vector<double> losses(train.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = cfg.lr_decay_every > 0
                          ? cfg.learning_rate * std::pow(cfg.lr_decay, (epoch - 1) / cfg.lr_decay_every)
                          : cfg.learning_rate;
    const auto order = epoch_order(train.size(), cfg.seed, epoch);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      detail::run_batch(net, train, std::span<const std::size_t>(order).subspan(start, n), losses);
      for (std::size_t i = 0; i < L; ++i) {
        auto& l = net.layers[i];
        nn::sgd_step(l.w, l.gw, vw[i], lr, cfg.momentum, cfg.weight_decay);
        if (masks)
          for (std::size_t j = 0; j < l.w.size(); ++j)
            if (!(*masks)[i].kept(j)) l.w[j] = vw[i][j] = 0.0f;
        detail::sgd_aux(l, vb[i], vg[i], vbeta[i], lr, cfg.momentum);
      }
    }
    const double loss = detail::mean_in_index_order(losses);
    detail::check_loss(loss, epoch);
    metrics.push_back({epoch, loss, eval ? nn::evaluate_top1(net, *eval) : std::nan("")});
  }
  model = net.to_model();
  return metrics;
}

// Fine-tunes a pruned model under focused quantization. Each layer is first
// quantized with w_sep deciding its mode; the mode then stays fixed. The INQ
// schedule grows the quantized set step by step; SGD updates the shadow
// weights through the straight-through estimator and alpha by its exact
// gradient; hyperparameters are refit after each scheduled epoch.
inline FinetuneResult finetune_quantized(const Model& pruned, const std::vector<PruneMask>& masks,
                                         const Dataset& train, const TrainConfig& cfg, const Dataset* eval = nullptr,
                                         const std::function<void(const StepView&)>& on_step = {}) {
  cfg.validate();
  require(train.size() > 0, ErrorKind::kInvalidArgument, "empty training set");
  const CompressedModel initial = quantize_model(pruned, masks, cfg.n_bits, cfg.w_sep, cfg.seed);

  auto net = nn::Net<float>::from_model(pruned);
  net.freeze_bn = cfg.freeze_bn_stats;
  const std::size_t L = net.layers.size();
  std::vector<FocusedParam> params(L);
  for (std::size_t i = 0; i < L; ++i) {
    auto& p = params[i];
    p.theta = pruned.layers[i].weight.data();
    p.mask = masks[i];
    for (std::size_t j = 0; j < p.theta.size(); ++j)
      if (!p.mask.kept(j)) p.theta[j] = 0.0f;
    p.quantized.assign(p.theta.size(), 0);
    p.hp = initial.layers[i].quant;
    p.seed = layer_seed(cfg.seed, i);
  }

  FinetuneResult result;
  const auto refresh = refresh_schedule(cfg.refresh_k0, cfg.refresh_growth, cfg.total_epochs(), cfg.fixed_refresh);
  std::vector<std::vector<float>> vw(L), vb(L), vg(L), vbeta(L), valpha(L, std::vector<float>(1, 0.0f));
  std::vector<double> losses(train.size());
  int epoch = 0;
  for (std::size_t step = 0; step < cfg.inq_fractions.size(); ++step) {
    for (auto& p : params) p.grow_quantized(cfg.inq_fractions[step]);
    for (int e = 0; e < cfg.step_epochs(step); ++e) {
      ++epoch;
      const double lr = cfg.lr_decay_every > 0 ? cfg.learning_rate * std::pow(cfg.lr_decay, e / cfg.lr_decay_every)
                                               : cfg.learning_rate;
      const auto order = epoch_order(train.size(), cfg.seed, epoch);
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t n = std::min(cfg.batch_size, order.size() - start);
        for (std::size_t i = 0; i < L; ++i) params[i].effective(net.layers[i].w);
        detail::run_batch(net, train, std::span<const std::size_t>(order).subspan(start, n), losses);
        for (std::size_t i = 0; i < L; ++i) {
          auto& l = net.layers[i];
          auto& p = params[i];
          if (cfg.learn_alpha) {
            std::vector<float> a{p.hp.alpha};
            const std::vector<float> ga{static_cast<float>(p.alpha_grad(l.gw, l.w))};
            nn::sgd_step(a, ga, valpha[i], lr, cfg.momentum);
            p.hp.alpha = a[0];
          }
          nn::sgd_step(p.theta, p.theta_grad(l.gw), vw[i], lr, cfg.momentum);
          for (std::size_t j = 0; j < p.theta.size(); ++j)
            if (!p.mask.kept(j)) p.theta[j] = vw[i][j] = 0.0f;
          detail::sgd_aux(l, vb[i], vg[i], vbeta[i], lr, cfg.momentum);
        }
        if (on_step) {
          for (std::size_t i = 0; i < L; ++i) params[i].effective(net.layers[i].w);
          on_step({epoch, step, &params, &net});
        }
      }
      const double loss = detail::mean_in_index_order(losses);
      detail::check_loss(loss, epoch);
      if (std::binary_search(refresh.begin(), refresh.end(), epoch)) {
        for (auto& p : params) p.refresh();
        result.refreshed_at.push_back(epoch);
      }
      double top1 = std::nan("");
      if (eval) {
        for (std::size_t i = 0; i < L; ++i) params[i].effective(net.layers[i].w);
        top1 = nn::evaluate_top1(net, *eval);
      }
      result.metrics.push_back({epoch, loss, top1});
    }
  }

  const Model trained = net.to_model();
  for (std::size_t i = 0; i < L; ++i) {
    LayerSpec s = trained.layers[i];
    LayerQuantization q = requantize(params[i].hp, params[i].theta, params[i].mask);
    const auto deq = q.dequantized();
    s.weight = Tensor(s.weight.shape(), std::vector<float>(deq.begin(), deq.end()));
    result.model.layers.push_back({std::move(s), std::move(q)});
  }
  return result;
}

inline double evaluate_model(const Model& model, const Dataset& data) {
  auto net = nn::Net<float>::from_model(model);
  return nn::evaluate_top1(net, data);
}

struct SweepRun {
  double wsep = 0.0;
  int run = 0;
  double top1 = 0.0;
};

struct SweepMode {
  double wsep = 0.0;
  std::string layer;
  QuantMode mode = QuantMode::kShift;
  double measured = 0.0;  // the layer's separation W
};

struct SweepResult {
  std::vector<SweepRun> runs;
  std::vector<SweepMode> modes;

  std::string runs_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "wsep,run,top1\n";
    for (const auto& r : runs) os << r.wsep << ',' << r.run << ',' << r.top1 << '\n';
    return os.str();
  }

  // Mean and population standard deviation per w_sep, in grid order.
  std::string summary_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "wsep,mean_top1,std_top1\n";
    for (std::size_t i = 0; i < runs.size();) {
      std::size_t j = i;
      double s = 0.0, s2 = 0.0;
      while (j < runs.size() && runs[j].wsep == runs[i].wsep) s += runs[j++].top1;
      const double n = static_cast<double>(j - i), mean = s / n;
      for (std::size_t k = i; k < j; ++k) s2 += (runs[k].top1 - mean) * (runs[k].top1 - mean);
      os << runs[i].wsep << ',' << mean << ',' << std::sqrt(s2 / n) << '\n';
      i = j;
    }
    return os.str();
  }

  std::string modes_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "wsep,layer,mode,w\n";
    for (const auto& m : modes) os << m.wsep << ',' << m.layer << ',' << to_string(m.mode) << ',' << m.measured << '\n';
    return os.str();
  }
};

// lo, lo + step, ..., hi (inclusive, to within half a step).
inline std::vector<double> sweep_grid(double lo = 1.0, double hi = 3.5, double step = 0.1) {
  require(step > 0.0 && std::isfinite(step), ErrorKind::kInvalidArgument, "sweep step must be positive");
  require(hi >= lo, ErrorKind::kInvalidArgument, "sweep range is empty");
  const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 0.5)) + 1;
  std::vector<double> g(count);
  for (std::size_t i = 0; i < count; ++i) g[i] = std::round((lo + static_cast<double>(i) * step) * 1e9) / 1e9;
  return g;
}

// For every w_sep, fine-tunes `repeats` copies of the pruned template with
// seeds derived from (cfg.seed, grid index, run).
inline SweepResult wsep_sweep(const Model& pruned, const std::vector<PruneMask>& masks, const Dataset& train,
                              const Dataset& eval, std::span<const double> wseps, int repeats, TrainConfig cfg) {
  require(repeats >= 1, ErrorKind::kInvalidArgument, "repeats must be >= 1");
  require(!wseps.empty(), ErrorKind::kInvalidArgument, "empty w_sep grid");
  const std::uint64_t master = cfg.seed;
  SweepResult out;
  for (std::size_t g = 0; g < wseps.size(); ++g) {
    cfg.w_sep = wseps[g];
    for (int r = 0; r < repeats; ++r) {
      cfg.seed = mix_seed(master, (static_cast<std::uint64_t>(g) << 16) | static_cast<std::uint64_t>(r));
      const auto res = finetune_quantized(pruned, masks, train, cfg);
      out.runs.push_back({wseps[g], r, evaluate_model(decompress(res.model), eval)});
      if (r == 0)
        for (const auto& l : res.model.layers) out.modes.push_back({wseps[g], l.spec.name, l.quant.mode, l.quant.wsep});
    }
  }
  return out;
}

}  // namespace fq
