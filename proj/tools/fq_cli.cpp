// Copyright 2026 The fqlib Authors.
// SPDX-License-Identifier: Apache-2.0

// fq: pruning, focused quantization, encoding, integer inference and gate
// cost reports from the command line.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fq/codec.hpp"
#include "fq/config.hpp"
#include "fq/cost_model.hpp"
#include "fq/model_store.hpp"
#include "fq/pipeline.hpp"

namespace {

namespace fs = std::filesystem;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kInternal = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fq::write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// Flags shared by the pipeline subcommands. Precedence, lowest first: config
// file, FQ_SEED, --set overrides, dedicated flags.
struct PipelineFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::string> model, output, report_dir;
  std::optional<double> sparsity, w_sep;
  std::optional<int> n_bits;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> layer_sparsity;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "Config file (key = value with [sections])")->check(CLI::ExistingFile);
    app->add_option("--set", overrides, "Override a config key: section.key=value (repeatable)");
    app->add_option("--model", model, "Input model path");
    app->add_option("-o,--output", output, "Output path");
    app->add_option("--report-dir", report_dir, "Directory for CSV reports");
    app->add_option("--sparsity", sparsity, "Default per-layer target sparsity");
    app->add_option("--n-bits", n_bits, "Total bits per quantized weight");
    app->add_option("--w-sep", w_sep, "Separation threshold for recentralized mode");
    app->add_option("--seed", seed, "Master seed");
    app->add_option("--layer-sparsity", layer_sparsity, "Per-layer sparsity NAME=VALUE (repeatable)");
  }

  fq::PipelineConfig resolve() const {
    fq::PipelineConfig c = config_path.empty() ? fq::PipelineConfig{} : fq::load_config(config_path);
    if (const char* env = std::getenv("FQ_SEED"); env && *env) c = fq::apply_override(c, std::string("seed=") + env);
    for (const auto& o : overrides) c = fq::apply_override(c, o);
    if (model) c.model = *model;
    if (output) c.output = *output;
    if (report_dir) c.report_dir = *report_dir;
    if (sparsity) c.sparsity = *sparsity;
    if (n_bits) c.n_bits = *n_bits;
    if (w_sep) c.w_sep = *w_sep;
    if (seed) c.seed = *seed;
    for (const auto& l : layer_sparsity) {
      const auto eq = l.find('=');
      if (eq == std::string::npos) throw UsageError("--layer-sparsity expects NAME=VALUE, got '" + l + "'");
      c = fq::apply_override(c, "layer." + l.substr(0, eq) + ".sparsity" + l.substr(eq));
    }
    c.sync_train();
    c.validate();
    return c;
  }
};

std::string need(const std::string& value, const char* what) {
  if (value.empty()) throw UsageError(std::string("missing ") + what);
  return value;
}

int cmd_compress(const PipelineFlags& f) {
  const auto c = f.resolve();
  const fq::Model model = fq::load_model(need(c.model, "--model"));
  const auto out = fq::compress_model(model, c);
  fq::write_file(need(c.output, "--output"), out.bytes);
  if (!c.report_dir.empty()) fq::write_reports(c.report_dir, out, c.histogram_bins);
  std::cout << out.report.to_csv();
  return kOk;
}

int cmd_decompress(const std::string& input, const std::string& output) {
  const auto model = fq::decompress(fq::load_compressed(input));
  fq::save_model(model, output);
  std::cerr << "wrote " << model.layers.size() << " layers to " << output << '\n';
  return kOk;
}

struct InferFlags {
  std::string model, input, reference, logits;
  std::size_t blobs = 0;
  std::uint64_t blob_seed = 1;
  std::size_t calibration = 64;
};

int cmd_infer(const InferFlags& f) {
  if (f.input.empty() == (f.blobs == 0)) throw UsageError("give exactly one of --input or --blobs");
  const fq::CompressedModel model = fq::load_compressed(f.model);
  fq::Dataset data;
  if (f.input.empty()) {
    const fq::DataConfig d;
    fq::BlobDatasetOptions o;
    o.noise = d.noise;
    o.max_shift = d.max_shift;
    data = fq::make_blob_dataset(f.blobs, f.blob_seed, o);
  } else {
    data = fq::load_cifar10_batch(f.input);
  }
  std::optional<fq::Model> ref;
  if (!f.reference.empty()) ref = fq::load_model(f.reference);
  const auto r = fq::infer(model, data, ref ? &*ref : nullptr, f.calibration);
  const std::string csv = fq::logits_csv(r, data);
  if (f.logits.empty()) std::cout << csv;
  else write_text(f.logits, csv);
  std::cerr << "samples " << data.size() << " top1 " << r.top1;
  if (r.agreement) std::cerr << " agreement " << *r.agreement;
  std::cerr << '\n';
  return kOk;
}

int cmd_train(const PipelineFlags& f, const std::string& float_out) {
  const auto c = f.resolve();
  const auto data = fq::load_datasets(c.data, c.seed);
  const auto out = fq::run_training(c, data, [](const std::string& s) { std::cerr << s << '\n'; });
  fq::write_file(need(c.output, "--output"), out.compressed.bytes);
  if (!float_out.empty()) fq::save_model(out.float_model, float_out);
  if (!c.report_dir.empty()) {
    const fs::path dir = c.report_dir;
    fq::write_reports(dir, out.compressed, c.histogram_bins);
    write_text(dir / "pretrain_metrics.csv", fq::metrics_csv(out.float_metrics));
    write_text(dir / "prune_metrics.csv", fq::metrics_csv(out.prune_metrics));
    write_text(dir / "finetune_metrics.csv", fq::metrics_csv(out.finetune.metrics));
  }
  std::cout << "float_top1,quant_top1,cr\n" << out.float_top1 << ',' << out.quant_top1 << ','
            << out.compressed.report.total().cr << '\n';
  return kOk;
}

int cmd_sweep(const PipelineFlags& f, std::optional<double> lo, std::optional<double> hi, std::optional<double> step,
              std::optional<int> repeats) {
  auto c = f.resolve();
  if (lo) c.sweep.lo = *lo;
  if (hi) c.sweep.hi = *hi;
  if (step) c.sweep.step = *step;
  if (repeats) c.sweep.repeats = *repeats;
  if (!(c.sweep.step > 0.0)) throw UsageError("sweep step must be positive");
  if (c.sweep.hi < c.sweep.lo || c.sweep.repeats < 1) throw UsageError("empty sweep range or repeats < 1");
  fq::Model pruned = fq::load_model(need(c.model, "--model"));
  const auto masks = fq::prune_layers(pruned, c);
  const auto data = fq::load_datasets(c.data, c.seed);
  const auto grid = fq::sweep_grid(c.sweep.lo, c.sweep.hi, c.sweep.step);
  const auto r = fq::wsep_sweep(pruned, masks, data.train, data.test, grid, c.sweep.repeats, c.train);
  if (!c.report_dir.empty()) {
    const fs::path dir = c.report_dir;
    write_text(dir / "sweep_runs.csv", r.runs_csv());
    write_text(dir / "sweep_summary.csv", r.summary_csv());
    write_text(dir / "sweep_modes.csv", r.modes_csv());
  }
  std::cout << r.runs_csv();
  return kOk;
}

// Bare scheme names take the comparison defaults.
fq::cost::Scheme scheme_arg(std::string text) {
  if (text.find('(') == std::string::npos) {
    if (text == "shift") text += "(3)";
    else if (text == "fq" || text == "fq_huffman" || text == "binary_basis") text += "(5)";
  }
  try {
    return fq::cost::parse_scheme(text);
  } catch (const fq::Error& e) {
    throw UsageError(e.what());
  }
}

struct CostFlags {
  std::vector<std::string> schemes;
  std::string baseline = "shift(3)";
  fq::cost::ConvGeometry geom = fq::cost::reference_geometry();
  std::uint64_t kernel = 3;
  int activation_bits = 8;
  std::string output;
};

int cmd_cost(const CostFlags& f) {
  std::vector<fq::cost::Scheme> schemes;
  for (const auto& s : f.schemes) schemes.push_back(scheme_arg(s));
  if (schemes.empty()) schemes = fq::cost::default_schemes();
  fq::cost::ConvGeometry g = f.geom;
  g.kernel_h = g.kernel_w = f.kernel;
  const std::string csv = fq::cost::gate_csv(fq::cost::gate_report({g}, schemes, scheme_arg(f.baseline), f.activation_bits));
  if (f.output.empty()) std::cout << csv;
  else write_text(f.output, csv);
  return kOk;
}

int cmd_report(const std::string& input, const std::string& report_dir) {
  const auto model = fq::load_compressed(input);
  const auto report = fq::compression_report(fq::decompress(model), model);
  if (!report_dir.empty()) write_text(fs::path(report_dir) / "compression.csv", report.to_csv());
  std::cout << report.to_csv();
  return kOk;
}

int exit_code(fq::ErrorKind k) { return k == fq::ErrorKind::kInvalidState ? kInternal : kData; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fq: focused quantization toolkit"};
  app.require_subcommand(1);

  PipelineFlags compress_flags, train_flags, sweep_flags;
  auto* compress = app.add_subcommand("compress", "Prune, quantize and encode a float model");
  compress_flags.attach(compress);

  std::string dec_in, dec_out;
  auto* decompress = app.add_subcommand("decompress", "Rebuild a float model from a compressed file");
  decompress->add_option("input", dec_in, "Compressed model")->required()->check(CLI::ExistingFile);
  decompress->add_option("-o,--output", dec_out, "Float model output")->required();

  InferFlags infer_flags;
  auto* infer = app.add_subcommand("infer", "Integer shift-add inference over a batch");
  infer->add_option("--model", infer_flags.model, "Compressed model")->required()->check(CLI::ExistingFile);
  infer->add_option("--input", infer_flags.input, "CIFAR-10 binary batch")->check(CLI::ExistingFile);
  infer->add_option("--blobs", infer_flags.blobs, "Use N synthetic blob samples instead of --input");
  infer->add_option("--blob-seed", infer_flags.blob_seed, "Seed for --blobs");
  infer->add_option("--reference", infer_flags.reference, "Float model for agreement statistics")->check(CLI::ExistingFile);
  infer->add_option("--calibration", infer_flags.calibration, "Samples used to calibrate activation scales")
      ->check(CLI::PositiveNumber);
  infer->add_option("--logits", infer_flags.logits, "Write logits CSV here instead of stdout");

  std::string float_out;
  auto* train = app.add_subcommand("train", "Pretrain, prune and fine-tune the toy network");
  train_flags.attach(train);
  train->add_option("--float-output", float_out, "Also save the dense float model");

  std::optional<double> lo, hi, step;
  std::optional<int> repeats;
  auto* sweep = app.add_subcommand("sweep", "Fine-tune over a grid of w_sep values");
  sweep_flags.attach(sweep);
  sweep->add_option("--lo", lo, "First w_sep");
  sweep->add_option("--hi", hi, "Last w_sep");
  sweep->add_option("--step", step, "Grid step");
  sweep->add_option("--repeats", repeats, "Runs per grid point");

  CostFlags cost_flags;
  auto* cost = app.add_subcommand("cost", "Gate-count estimates for unrolled convolution");
  cost->add_option("--scheme", cost_flags.schemes, "shift(k), fq(n), fq_huffman(n), binary_basis(N[,width])");
  cost->add_option("--baseline", cost_flags.baseline, "Scheme the ratio column is normalized to");
  cost->add_option("--kernel", cost_flags.kernel, "Square kernel size")->check(CLI::PositiveNumber);
  cost->add_option("--in-channels", cost_flags.geom.in_channels)->check(CLI::PositiveNumber);
  cost->add_option("--out-channels", cost_flags.geom.out_channels)->check(CLI::PositiveNumber);
  cost->add_option("--height", cost_flags.geom.in_h)->check(CLI::PositiveNumber);
  cost->add_option("--width", cost_flags.geom.in_w)->check(CLI::PositiveNumber);
  cost->add_option("--padding", cost_flags.geom.padding);
  cost->add_option("--stride", cost_flags.geom.stride)->check(CLI::PositiveNumber);
  cost->add_option("--activation-bits", cost_flags.activation_bits)->check(CLI::Range(1, 32));
  cost->add_option("-o,--output", cost_flags.output, "Write CSV here instead of stdout");

  std::string report_in, report_dir;
  auto* report = app.add_subcommand("report", "Compression report for a compressed file");
  report->add_option("input", report_in, "Compressed model")->required()->check(CLI::ExistingFile);
  report->add_option("--report-dir", report_dir, "Also write compression.csv here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*compress) return cmd_compress(compress_flags);
    if (*decompress) return cmd_decompress(dec_in, dec_out);
    if (*infer) return cmd_infer(infer_flags);
    if (*train) return cmd_train(train_flags, float_out);
    if (*sweep) return cmd_sweep(sweep_flags, lo, hi, step, repeats);
    if (*cost) return cmd_cost(cost_flags);
    if (*report) return cmd_report(report_in, report_dir);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const fq::Error& e) {
    std::cerr << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kInternal;
}
