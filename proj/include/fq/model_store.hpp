// Copyright 2026 The fqlib Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fq/bytes.hpp"
#include "fq/error.hpp"
#include "fq/rng.hpp"
#include "fq/tensor.hpp"

namespace fq {

enum class LayerKind : std::uint8_t { kConv2d = 0, kDense = 1 };

inline const char* to_string(LayerKind kind) { return kind == LayerKind::kConv2d ? "conv2d" : "dense"; }

// Per-output-channel batch-norm parameters, kept as plain f32 vectors.
struct BatchNorm {
  std::vector<float> scale;
  std::vector<float> offset;
  std::vector<float> mean;
  std::vector<float> variance;
  static constexpr float kEpsilon = 1e-5f;

  friend bool operator==(const BatchNorm&, const BatchNorm&) = default;
};

// Conv weights are laid out (out, in, kh, kw); dense weights (out, in). A dense
// layer reports kh = kw = stride = 1 and padding 0 so shared code paths can
// treat it as a 1x1 convolution over a 1x1 map.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::kDense;
  Tensor weight;
  std::uint32_t kernel_h = 1;
  std::uint32_t kernel_w = 1;
  std::uint32_t in_channels = 0;
  std::uint32_t out_channels = 0;
  std::uint32_t padding = 0;
  std::uint32_t stride = 1;
  std::optional<BatchNorm> bn;
  std::optional<std::vector<float>> bias;

  Shape expected_weight_shape() const {
    if (kind == LayerKind::kConv2d) return {out_channels, in_channels, kernel_h, kernel_w};
    return {out_channels, in_channels};
  }

  std::size_t fan_in() const { return std::size_t{in_channels} * kernel_h * kernel_w; }

  // Number of f32 values stored alongside the weights (BN and bias).
  std::size_t aux_float_count() const {
    std::size_t n = 0;
    if (bn) n += 4 * bn->scale.size();
    if (bias) n += bias->size();
    return n;
  }

  void validate() const {
    require(!name.empty(), ErrorKind::kValidation, "layer name must not be empty");
    require(name.size() <= 0xffff, ErrorKind::kValidation, "layer name too long");
    require(weight.shape() == expected_weight_shape(), ErrorKind::kValidation,
            "layer " + name + ": weight shape " + shape_string(weight.shape()) + " inconsistent with geometry " +
                shape_string(expected_weight_shape()));
    require(stride > 0, ErrorKind::kValidation, "layer " + name + ": stride must be positive");
    require(weight.all_finite(), ErrorKind::kValidation, "layer " + name + ": non-finite weight");
    if (bn) {
      for (const auto* v : {&bn->scale, &bn->offset, &bn->mean, &bn->variance})
        require(v->size() == out_channels, ErrorKind::kValidation, "layer " + name + ": BN size mismatch");
      for (float v : bn->variance)
        require(v >= 0.0f, ErrorKind::kValidation, "layer " + name + ": negative BN variance");
    }
    if (bias)
      require(bias->size() == out_channels, ErrorKind::kValidation, "layer " + name + ": bias size mismatch");
  }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline LayerSpec make_conv2d(std::string name, std::uint32_t in_ch, std::uint32_t out_ch, std::uint32_t kernel,
                             std::uint32_t padding, std::uint32_t stride) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::kConv2d;
  l.kernel_h = l.kernel_w = kernel;
  l.in_channels = in_ch;
  l.out_channels = out_ch;
  l.padding = padding;
  l.stride = stride;
  l.weight = Tensor(l.expected_weight_shape());
  return l;
}

inline LayerSpec make_dense(std::string name, std::uint32_t in, std::uint32_t out) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::kDense;
  l.in_channels = in;
  l.out_channels = out;
  l.weight = Tensor(l.expected_weight_shape());
  return l;
}

// A sequential network: conv layers (each conv -> BN -> ReLU), then a global
// average pool, then dense layers (ReLU between them, none after the last).
struct Model {
  std::vector<LayerSpec> layers;

  std::size_t weight_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size();
    return n;
  }

  const LayerSpec& layer(const std::string& name) const {
    for (const auto& l : layers)
      if (l.name == name) return l;
    fail(ErrorKind::kInvalidArgument, "no layer named " + name);
  }

  void validate() const {
    std::set<std::string> names;
    bool seen_dense = false;
    for (const auto& l : layers) {
      l.validate();
      require(names.insert(l.name).second, ErrorKind::kValidation, "duplicate layer name " + l.name);
      if (l.kind == LayerKind::kDense) seen_dense = true;
      require(!(seen_dense && l.kind == LayerKind::kConv2d), ErrorKind::kValidation,
              "conv layer " + l.name + " follows a dense layer");
    }
  }

  friend bool operator==(const Model&, const Model&) = default;
};

namespace model_format {
inline constexpr std::array<char, 4> kMagic = {'F', 'Q', 'M', '1'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::uint8_t kFlagBatchNorm = 0x1;
inline constexpr std::uint8_t kFlagBias = 0x2;
inline constexpr std::size_t kHeaderBytes = 4 + 2 + 4;

// Layer identity and geometry; shared with the compressed container.
inline void write_layer_header(ByteWriter& w, const LayerSpec& l) {
  w.u16(static_cast<std::uint16_t>(l.name.size()));
  w.text(l.name);
  w.u8(static_cast<std::uint8_t>(l.kind));
  if (l.kind == LayerKind::kConv2d) {
    for (std::uint32_t v : {l.kernel_h, l.kernel_w, l.in_channels, l.out_channels, l.padding, l.stride}) w.u32(v);
  } else {
    w.u32(l.in_channels);
    w.u32(l.out_channels);
  }
  w.u8(static_cast<std::uint8_t>(l.weight.rank()));
  for (std::size_t d : l.weight.shape()) w.u32(static_cast<std::uint32_t>(d));
}

// Fills everything but the weight payload; returns the declared shape.
inline Shape read_layer_header(ByteReader& r, LayerSpec& l) {
  const std::uint16_t name_len = r.u16();
  l.name = r.text(name_len);
  const std::uint8_t kind = r.u8();
  require(kind <= 1, ErrorKind::kFormat, "unknown layer kind " + std::to_string(kind));
  l.kind = static_cast<LayerKind>(kind);
  if (l.kind == LayerKind::kConv2d) {
    l.kernel_h = r.u32();
    l.kernel_w = r.u32();
    l.in_channels = r.u32();
    l.out_channels = r.u32();
    l.padding = r.u32();
    l.stride = r.u32();
  } else {
    l.in_channels = r.u32();
    l.out_channels = r.u32();
    l.kernel_h = l.kernel_w = l.stride = 1;
    l.padding = 0;
  }
  const std::uint8_t rank = r.u8();
  Shape shape(rank);
  for (auto& d : shape) {
    d = r.u32();
    require(d > 0, ErrorKind::kFormat, "layer " + l.name + ": zero dimension");
  }
  require(shape == l.expected_weight_shape(), ErrorKind::kFormat,
          "layer " + l.name + ": shape " + shape_string(shape) + " inconsistent with geometry");
  return shape;
}

inline void write_aux(ByteWriter& w, const LayerSpec& l) {
  std::uint8_t flags = 0;
  if (l.bn) flags |= kFlagBatchNorm;
  if (l.bias) flags |= kFlagBias;
  w.u8(flags);
  if (l.bn)
    for (const auto* v : {&l.bn->scale, &l.bn->offset, &l.bn->mean, &l.bn->variance})
      for (float x : *v) w.f32(x);
  if (l.bias)
    for (float x : *l.bias) w.f32(x);
}

inline std::vector<float> read_floats(ByteReader& r, std::size_t n, const std::string& what) {
  std::vector<float> out(n);
  for (auto& v : out) {
    v = r.f32();
    require(std::isfinite(v), ErrorKind::kValidation, "non-finite value in " + what);
  }
  return out;
}

inline void read_aux(ByteReader& r, LayerSpec& l) {
  const std::uint8_t flags = r.u8();
  require((flags & ~(kFlagBatchNorm | kFlagBias)) == 0, ErrorKind::kFormat, "layer " + l.name + ": bad flags");
  if (flags & kFlagBatchNorm) {
    BatchNorm bn;
    bn.scale = read_floats(r, l.out_channels, l.name + " BN scale");
    bn.offset = read_floats(r, l.out_channels, l.name + " BN offset");
    bn.mean = read_floats(r, l.out_channels, l.name + " BN mean");
    bn.variance = read_floats(r, l.out_channels, l.name + " BN variance");
    l.bn = std::move(bn);
  }
  if (flags & kFlagBias) l.bias = read_floats(r, l.out_channels, l.name + " bias");
}

inline void write_header(ByteWriter& w, const std::array<char, 4>& magic, std::uint16_t version,
                         std::size_t layer_count) {
  w.text(std::string_view(magic.data(), magic.size()));
  w.u16(version);
  w.u32(static_cast<std::uint32_t>(layer_count));
}

inline std::uint32_t read_header(ByteReader& r, const std::array<char, 4>& magic, std::uint16_t version) {
  if (r.remaining() < magic.size()) fail(ErrorKind::kFormat, "file too short for magic");
  const auto m = r.bytes(magic.size());
  require(std::equal(m.begin(), m.end(), magic.begin()), ErrorKind::kFormat,
          "bad magic, expected " + std::string(magic.data(), magic.size()));
  const std::uint16_t v = r.u16();
  require(v == version, ErrorKind::kFormat, "unsupported version " + std::to_string(v));
  return r.u32();
}
}  // namespace model_format

inline std::vector<std::uint8_t> encode_model(const Model& model) {
  model.validate();
  ByteWriter w;
  model_format::write_header(w, model_format::kMagic, model_format::kVersion, model.layers.size());
  for (const auto& l : model.layers) {
    model_format::write_layer_header(w, l);
    for (float v : l.weight.values()) w.f32(v);
    model_format::write_aux(w, l);
  }
  return std::move(w).take();
}

inline Model decode_model(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const std::uint32_t count = model_format::read_header(r, model_format::kMagic, model_format::kVersion);
  Model model;
  model.layers.reserve(std::min<std::uint32_t>(count, 4096));
  for (std::uint32_t i = 0; i < count; ++i) {
    LayerSpec l;
    Shape shape = model_format::read_layer_header(r, l);
    const std::size_t n = element_count(shape);
    l.weight = Tensor(std::move(shape), model_format::read_floats(r, n, l.name + " weights"));
    model_format::read_aux(r, l);
    model.layers.push_back(std::move(l));
  }
  require(r.remaining() == 0, ErrorKind::kFormat,
          std::to_string(r.remaining()) + " trailing bytes after declared layers");
  model.validate();
  return model;
}

inline std::size_t save_model(const Model& model, const std::filesystem::path& path) {
  return write_file(path, encode_model(model));
}

inline Model load_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }

// Labelled image batch, images shaped (N, C, H, W).
struct Dataset {
  Tensor images;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return images.size() / std::max<std::size_t>(labels.size(), 1); }

  Dataset slice(std::size_t begin, std::size_t count) const {
    count = std::min(count, size() - begin);
    const std::size_t per = image_size();
    Shape shape = images.shape();
    shape[0] = count;
    std::vector<float> data(images.data().begin() + static_cast<std::ptrdiff_t>(begin * per),
                            images.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * per));
    return {Tensor(std::move(shape), std::move(data)),
            std::vector<int>(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                             labels.begin() + static_cast<std::ptrdiff_t>(begin + count))};
  }
};

namespace cifar10 {
inline constexpr std::size_t kImageBytes = 3 * 32 * 32;
inline constexpr std::size_t kRecordBytes = 1 + kImageBytes;
}  // namespace cifar10

inline Dataset decode_cifar10_batch(std::span<const std::uint8_t> bytes) {
  using namespace cifar10;
  require(!bytes.empty() && bytes.size() % kRecordBytes == 0, ErrorKind::kFormat,
          "CIFAR-10 batch length " + std::to_string(bytes.size()) + " is not a multiple of 3073");
  const std::size_t n = bytes.size() / kRecordBytes;
  Dataset ds;
  ds.labels.resize(n);
  std::vector<float> pixels(n * kImageBytes);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + i * kRecordBytes;
    require(rec[0] <= 9, ErrorKind::kFormat, "CIFAR-10 label out of range in record " + std::to_string(i));
    ds.labels[i] = rec[0];
    for (std::size_t j = 0; j < kImageBytes; ++j) pixels[i * kImageBytes + j] = static_cast<float>(rec[1 + j]) / 255.0f;
  }
  ds.images = Tensor({n, 3, 32, 32}, std::move(pixels));
  return ds;
}

inline Dataset load_cifar10_batch(const std::filesystem::path& path) { return decode_cifar10_batch(read_file(path)); }

inline std::vector<std::uint8_t> encode_cifar10_batch(const Dataset& ds) {
  require(ds.images.rank() == 4 && ds.images.dim(1) == 3 && ds.images.dim(2) == 32 && ds.images.dim(3) == 32,
          ErrorKind::kInvalidArgument, "CIFAR-10 images must be (N,3,32,32)");
  std::vector<std::uint8_t> out;
  out.reserve(ds.size() * cifar10::kRecordBytes);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out.push_back(static_cast<std::uint8_t>(ds.labels[i]));
    for (std::size_t j = 0; j < cifar10::kImageBytes; ++j) {
      const float v = std::clamp(ds.images[i * cifar10::kImageBytes + j], 0.0f, 1.0f);
      out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
    }
  }
  return out;
}

// Offline stand-in for CIFAR-10: each class is a fixed arrangement of coloured
// Gaussian blobs; samples jitter position and amplitude and add pixel noise.
// Class templates depend only on `template_seed`, so datasets drawn with
// different sample seeds share the same classes.
struct BlobDatasetOptions {
  std::size_t classes = 10;
  std::size_t size = 32;
  std::size_t blobs_per_class = 3;
  double noise = 0.12;
  int max_shift = 3;
  std::uint64_t template_seed = 0x5eedb10bULL;
};

inline Dataset make_blob_dataset(std::size_t count, std::uint64_t seed, const BlobDatasetOptions& opt = {}) {
  struct Blob {
    double cy, cx, radius;
    std::array<double, 3> colour;
  };
  SplitMix64 tg(opt.template_seed);
  std::vector<std::vector<Blob>> templates(opt.classes);
  const double s = static_cast<double>(opt.size);
  for (auto& t : templates)
    for (std::size_t b = 0; b < opt.blobs_per_class; ++b)
      t.push_back({tg.uniform(0.2 * s, 0.8 * s), tg.uniform(0.2 * s, 0.8 * s), tg.uniform(0.08 * s, 0.2 * s),
                   {tg.uniform(), tg.uniform(), tg.uniform()}});

  SplitMix64 g(seed);
  const std::size_t per = 3 * opt.size * opt.size;
  std::vector<float> pixels(count * per);
  std::vector<int> labels(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto label = static_cast<int>(g.below(opt.classes));
    labels[i] = label;
    const double dy = static_cast<double>(static_cast<int>(g.below(2 * opt.max_shift + 1)) - opt.max_shift);
    const double dx = static_cast<double>(static_cast<int>(g.below(2 * opt.max_shift + 1)) - opt.max_shift);
    const double gain = g.uniform(0.7, 1.1);
    float* img = pixels.data() + i * per;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < opt.size; ++y)
        for (std::size_t x = 0; x < opt.size; ++x) {
          double v = 0.0;
          for (const auto& b : templates[static_cast<std::size_t>(label)]) {
            const double ry = static_cast<double>(y) - b.cy - dy;
            const double rx = static_cast<double>(x) - b.cx - dx;
            v += b.colour[c] * std::exp(-(ry * ry + rx * rx) / (2.0 * b.radius * b.radius));
          }
          v = gain * v + opt.noise * g.normal();
          img[(c * opt.size + y) * opt.size + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
  }
  return {Tensor({count, 3, opt.size, opt.size}, std::move(pixels)), std::move(labels)};
}

}  // namespace fq
