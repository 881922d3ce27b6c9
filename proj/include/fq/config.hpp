// Copyright 2026 The fqlib Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fq/bytes.hpp"
#include "fq/error.hpp"
#include "fq/trainer.hpp"

// Flat `key = value` configuration with [section] headers. Layer overrides
// live in [layer.NAME] sections. '#' starts a comment.
namespace fq {

struct DataConfig {
  std::string source = "blobs";  // blobs | cifar10
  std::string train_path;        // cifar10 batch files
  std::string test_path;
  std::size_t train_count = 3000;
  std::size_t test_count = 1000;
  double noise = 0.8;
  int max_shift = 6;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct PretrainConfig {
  int epochs = 15;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int lr_decay_every = 10;
  std::size_t batch_size = 32;
  int prune_epochs = 3;
  double prune_learning_rate = 0.01;

  friend bool operator==(const PretrainConfig&, const PretrainConfig&) = default;
};

struct SweepConfig {
  double lo = 1.0;
  double hi = 3.5;
  double step = 0.1;
  int repeats = 1;

  friend bool operator==(const SweepConfig&, const SweepConfig&) = default;
};

struct LayerOverride {
  double sparsity = 0.0;
  friend bool operator==(const LayerOverride&, const LayerOverride&) = default;
};

struct PipelineConfig {
  std::string model;
  std::string output;
  std::string report_dir;
  double sparsity = 0.75;
  int n_bits = 5;
  double w_sep = 2.0;
  std::uint64_t seed = 0;
  int histogram_bins = 64;
  std::map<std::string, LayerOverride> layers;
  DataConfig data;
  PretrainConfig pretrain;
  TrainConfig train;
  SweepConfig sweep;

  // Copies the shared settings into the fine-tuning block.
  void sync_train() {
    train.seed = seed;
    train.w_sep = w_sep;
    train.n_bits = n_bits;
  }

  double sparsity_for(const std::string& layer) const {
    const auto it = layers.find(layer);
    return it == layers.end() ? sparsity : it->second.sparsity;
  }

  void validate() const {
    auto check = [](bool ok, const std::string& msg) { require(ok, ErrorKind::kConfig, msg); };
    check(n_bits >= kMinRecentralizedBits && n_bits <= kMaxTotalBits,
          "n_bits must lie in [" + std::to_string(kMinRecentralizedBits) + ", " + std::to_string(kMaxTotalBits) +
              "], got " + std::to_string(n_bits));
    check(sparsity >= 0.0 && sparsity < 1.0, "sparsity must lie in [0, 1)");
    for (const auto& [name, o] : layers)
      check(o.sparsity >= 0.0 && o.sparsity < 1.0, "layer " + name + ": sparsity must lie in [0, 1)");
    check(w_sep >= 0.0, "w_sep must be >= 0");
    check(histogram_bins >= 1, "histogram_bins must be >= 1");
    check(data.source == "blobs" || data.source == "cifar10", "data source must be blobs or cifar10");
    check(data.train_count >= 1 && data.test_count >= 1, "data counts must be >= 1");
    check(pretrain.epochs >= 0 && pretrain.prune_epochs >= 0, "epoch counts must be >= 0");
    check(pretrain.batch_size >= 1, "pretrain batch size must be >= 1");
    check(sweep.step > 0.0 && sweep.hi >= sweep.lo && sweep.repeats >= 1, "invalid sweep range");
    TrainConfig t = train;
    t.n_bits = n_bits;
    t.validate();
  }

  friend bool operator==(const PipelineConfig&, const PipelineConfig&) = default;
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
T parse_number(const std::string& text, const std::string& where) {
  T v{};
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  require(r.ec == std::errc() && r.ptr == text.data() + text.size(), ErrorKind::kConfig,
          where + ": cannot parse '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& text, const std::string& where) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  fail(ErrorKind::kConfig, where + ": expected true or false, got '" + text + "'");
}

inline std::vector<double> parse_list(const std::string& text, const std::string& where) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<double>(trim(item), where));
  return out;
}

}  // namespace config_detail

// Applies `text` on top of `base`.
inline PipelineConfig parse_config(const std::string& text, PipelineConfig base = {}) {
  using namespace config_detail;
  PipelineConfig c = std::move(base);
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno);
    if (line.front() == '[') {
      require(line.back() == ']', ErrorKind::kConfig, where + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      const bool known = section == "data" || section == "pretrain" || section == "train" || section == "sweep" ||
                         (section.rfind("layer.", 0) == 0 && section.size() > 6);
      require(known, ErrorKind::kConfig, where + ": unknown section [" + section + "]");
      if (section.rfind("layer.", 0) == 0) c.layers.try_emplace(section.substr(6), LayerOverride{c.sparsity});
      continue;
    }
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::kConfig, where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const std::string at = where + " (" + (section.empty() ? "" : section + ".") + key + ")";
    auto num = [&]<class T>(T& out) { out = parse_number<T>(value, at); };
    bool ok = true;
    if (section.empty()) {
      if (key == "model") c.model = value;
      else if (key == "output") c.output = value;
      else if (key == "report_dir") c.report_dir = value;
      else if (key == "sparsity") num(c.sparsity);
      else if (key == "n_bits") num(c.n_bits);
      else if (key == "w_sep") num(c.w_sep);
      else if (key == "seed") num(c.seed);
      else if (key == "histogram_bins") num(c.histogram_bins);
      else ok = false;
    } else if (section == "data") {
      if (key == "source") c.data.source = value;
      else if (key == "train_path") c.data.train_path = value;
      else if (key == "test_path") c.data.test_path = value;
      else if (key == "train_count") num(c.data.train_count);
      else if (key == "test_count") num(c.data.test_count);
      else if (key == "noise") num(c.data.noise);
      else if (key == "max_shift") num(c.data.max_shift);
      else ok = false;
    } else if (section == "pretrain") {
      auto& p = c.pretrain;
      if (key == "epochs") num(p.epochs);
      else if (key == "learning_rate") num(p.learning_rate);
      else if (key == "momentum") num(p.momentum);
      else if (key == "weight_decay") num(p.weight_decay);
      else if (key == "lr_decay_every") num(p.lr_decay_every);
      else if (key == "batch_size") num(p.batch_size);
      else if (key == "prune_epochs") num(p.prune_epochs);
      else if (key == "prune_learning_rate") num(p.prune_learning_rate);
      else ok = false;
    } else if (section == "train") {
      auto& t = c.train;
      if (key == "learning_rate") num(t.learning_rate);
      else if (key == "epochs_per_step") num(t.epochs_per_step);
      else if (key == "final_step_epochs") num(t.final_step_epochs);
      else if (key == "inq_fractions") t.inq_fractions = parse_list(value, at);
      else if (key == "refresh_k0") num(t.refresh_k0);
      else if (key == "refresh_growth") num(t.refresh_growth);
      else if (key == "fixed_refresh") t.fixed_refresh = parse_bool(value, at);
      else if (key == "momentum") num(t.momentum);
      else if (key == "lr_decay_every") num(t.lr_decay_every);
      else if (key == "lr_decay") num(t.lr_decay);
      else if (key == "batch_size") num(t.batch_size);
      else if (key == "learn_alpha") t.learn_alpha = parse_bool(value, at);
      else if (key == "freeze_bn_stats") t.freeze_bn_stats = parse_bool(value, at);
      else ok = false;
    } else if (section == "sweep") {
      if (key == "lo") num(c.sweep.lo);
      else if (key == "hi") num(c.sweep.hi);
      else if (key == "step") num(c.sweep.step);
      else if (key == "repeats") num(c.sweep.repeats);
      else ok = false;
    } else {
      if (key == "sparsity") num(c.layers[section.substr(6)].sparsity);
      else ok = false;
    }
    require(ok, ErrorKind::kConfig, where + ": unknown key '" + key + "'" +
                                        (section.empty() ? "" : " in [" + section + "]"));
  }
  c.sync_train();
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_config(std::string(bytes.begin(), bytes.end()));
}

// One `section.key=value` (or `key=value` for top-level keys) override.
inline PipelineConfig apply_override(const PipelineConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos, ErrorKind::kConfig, "override '" + assignment + "' is not key=value");
  const std::string path = config_detail::trim(assignment.substr(0, eq));
  const auto dot = path.rfind('.');
  const std::string key = dot == std::string::npos ? path : path.substr(dot + 1);
  std::string text = dot == std::string::npos ? "" : "[" + path.substr(0, dot) + "]\n";
  text += key + " = " + assignment.substr(eq + 1) + "\n";
  return parse_config(text, c);
}

// Canonical text: every key, fixed order, shortest round-trip numbers.
inline std::string normalize_config(const PipelineConfig& c) {
  using config_detail::format_double;
  std::ostringstream os;
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "model = " << c.model << "\noutput = " << c.output << "\nreport_dir = " << c.report_dir
     << "\nsparsity = " << format_double(c.sparsity) << "\nn_bits = " << c.n_bits
     << "\nw_sep = " << format_double(c.w_sep) << "\nseed = " << c.seed << "\nhistogram_bins = " << c.histogram_bins
     << "\n";
  os << "\n[data]\nsource = " << c.data.source << "\ntrain_path = " << c.data.train_path
     << "\ntest_path = " << c.data.test_path << "\ntrain_count = " << c.data.train_count
     << "\ntest_count = " << c.data.test_count << "\nnoise = " << format_double(c.data.noise)
     << "\nmax_shift = " << c.data.max_shift << "\n";
  const auto& p = c.pretrain;
  os << "\n[pretrain]\nepochs = " << p.epochs << "\nlearning_rate = " << format_double(p.learning_rate)
     << "\nmomentum = " << format_double(p.momentum) << "\nweight_decay = " << format_double(p.weight_decay)
     << "\nlr_decay_every = " << p.lr_decay_every << "\nbatch_size = " << p.batch_size
     << "\nprune_epochs = " << p.prune_epochs << "\nprune_learning_rate = " << format_double(p.prune_learning_rate)
     << "\n";
  const auto& t = c.train;
  os << "\n[train]\nlearning_rate = " << format_double(t.learning_rate) << "\nepochs_per_step = " << t.epochs_per_step
     << "\nfinal_step_epochs = " << t.final_step_epochs << "\ninq_fractions = ";
  for (std::size_t i = 0; i < t.inq_fractions.size(); ++i)
    os << (i ? ", " : "") << format_double(t.inq_fractions[i]);
  os << "\nrefresh_k0 = " << t.refresh_k0 << "\nrefresh_growth = " << format_double(t.refresh_growth)
     << "\nfixed_refresh = " << b(t.fixed_refresh) << "\nmomentum = " << format_double(t.momentum)
     << "\nlr_decay_every = " << t.lr_decay_every << "\nlr_decay = " << format_double(t.lr_decay)
     << "\nbatch_size = " << t.batch_size << "\nlearn_alpha = " << b(t.learn_alpha)
     << "\nfreeze_bn_stats = " << b(t.freeze_bn_stats) << "\n";
  os << "\n[sweep]\nlo = " << format_double(c.sweep.lo) << "\nhi = " << format_double(c.sweep.hi)
     << "\nstep = " << format_double(c.sweep.step) << "\nrepeats = " << c.sweep.repeats << "\n";
  for (const auto& [name, o] : c.layers) os << "\n[layer." << name << "]\nsparsity = " << format_double(o.sparsity) << "\n";
  return os.str();
}

}  // namespace fq
