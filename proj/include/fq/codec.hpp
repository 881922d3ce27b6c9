// Copyright 2026 The fqlib Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <zlib.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "fq/bytes.hpp"
#include "fq/error.hpp"
#include "fq/focused_quant.hpp"
#include "fq/huffman.hpp"
#include "fq/model_store.hpp"

namespace fq {

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(::crc32(0L, Z_NULL, 0), bytes.data(), static_cast<uInt>(bytes.size())));
}

// A layer after quantization: geometry and BN/bias from the float model, the
// weight tensor holding the dequantized values, and the quantization itself.
struct QuantizedLayer {
  LayerSpec spec;
  LayerQuantization quant;
};

struct CompressedModel {
  std::vector<QuantizedLayer> layers;
  std::vector<std::size_t> record_bytes;  // filled by encode/decode
  std::size_t file_bytes = 0;

  const QuantizedLayer& layer(const std::string& name) const {
    for (const auto& l : layers)
      if (l.spec.name == name) return l;
    fail(ErrorKind::kInvalidArgument, "no layer named " + name);
  }
};

namespace container {
inline constexpr std::array<char, 4> kMagic = {'F', 'Q', 'Z', '1'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::size_t kHeaderBytes = 10;
}  // namespace container

// Record layout (little-endian):
//   layer header (as in the float model file: name, kind, geometry, shape)
//   u8 mode, u8 n_bits, f32 alpha, i8 bias,
//   i8 mu_minus sign, i8 mu_minus exponent, i8 mu_plus sign, i8 mu_plus exponent,
//   f32 sigma, u8 code length per codeword (2^n entries),
//   u64 payload bit length, payload bytes (MSB-first, zero padded),
//   BN/bias block (as in the float model file), u32 CRC-32 of everything above.
inline std::vector<std::uint8_t> encode_layer(const QuantizedLayer& layer) {
  const auto& q = layer.quant;
  validate_bits(q.mode, q.total_bits);
  require(q.symbols.size() == layer.spec.weight.size(), ErrorKind::kEncoding,
          "layer " + layer.spec.name + ": symbol count does not match weight count");
  for (std::uint32_t s : q.symbols)
    require(is_valid_fq_code(s, q.mode, q.total_bits), ErrorKind::kEncoding,
            "layer " + layer.spec.name + ": symbol " + std::to_string(s) + " outside the alphabet");

  const std::size_t alphabet = std::size_t{1} << q.total_bits;
  const HuffmanTable table = build_huffman(symbol_frequencies(q.symbols), alphabet);
  BitWriter bits;
  for (std::uint32_t s : q.symbols) table.encode(s, bits);

  ByteWriter w;
  model_format::write_layer_header(w, layer.spec);
  w.u8(static_cast<std::uint8_t>(q.mode));
  w.u8(static_cast<std::uint8_t>(q.total_bits));
  w.f32(q.alpha);
  w.i8(static_cast<std::int8_t>(q.grid.bias));
  w.i8(q.mu_minus.sign);
  w.i8(q.mu_minus.exponent);
  w.i8(q.mu_plus.sign);
  w.i8(q.mu_plus.exponent);
  w.f32(q.sigma);
  for (std::uint8_t len : table.lengths()) w.u8(len);
  w.u64(bits.bit_length());
  w.bytes(bits.bytes());
  model_format::write_aux(w, layer.spec);
  w.u32(crc32_of(w.buffer()));
  return std::move(w).take();
}

namespace detail {
inline QuantizedLayer decode_layer_unchecked(ByteReader& r, std::size_t start, std::span<const std::uint8_t> all) {
  QuantizedLayer out;
  LayerSpec& spec = out.spec;
  Shape shape = model_format::read_layer_header(r, spec);
  LayerQuantization& q = out.quant;
  const std::uint8_t mode = r.u8();
  require(mode <= 1, ErrorKind::kFormat, "unknown quantization mode " + std::to_string(mode));
  q.mode = static_cast<QuantMode>(mode);
  q.total_bits = r.u8();
  try {
    validate_bits(q.mode, q.total_bits);
  } catch (const Error& e) {
    fail(ErrorKind::kFormat, e.what());
  }
  q.alpha = r.f32();
  const int bias = r.i8();
  q.mu_minus = {r.i8(), r.i8()};
  q.mu_plus = {r.i8(), r.i8()};
  q.sigma = r.f32();
  q.grid = ShiftGrid{exponent_bits_for(q.mode, q.total_bits), bias, true};
  require(bias >= ShiftGrid::kMinBias && bias <= ShiftGrid::kMaxBias, ErrorKind::kFormat, "bias out of range");
  require(std::isfinite(q.alpha) && std::isfinite(q.sigma), ErrorKind::kFormat, "non-finite scale");
  const auto table_bytes = r.bytes(std::size_t{1} << q.total_bits);
  std::vector<std::uint8_t> lengths(table_bytes.begin(), table_bytes.end());
  const std::uint64_t bit_length = r.u64();
  require(bit_length / 8 <= r.remaining(), ErrorKind::kFormat, "payload length exceeds record");
  const auto payload = r.bytes(static_cast<std::size_t>((bit_length + 7) / 8));
  model_format::read_aux(r, spec);
  const std::size_t end = r.position();
  const std::uint32_t stored_crc = r.u32();
  if (crc32_of(all.subspan(start, end - start)) != stored_crc)
    fail(ErrorKind::kCorruption, "layer " + spec.name + ": checksum mismatch");

  const HuffmanTable table = HuffmanTable::from_lengths(std::move(lengths));
  const std::size_t count = element_count(shape);
  BitReader bits(payload, bit_length);
  q.symbols.resize(count);
  for (auto& s : q.symbols) {
    s = table.decode(bits);
    require(is_valid_fq_code(s, q.mode, q.total_bits), ErrorKind::kFormat, "decoded symbol outside alphabet");
  }
  require(bits.position() == bit_length, ErrorKind::kFormat, "payload has trailing bits");

  if (q.mode == QuantMode::kRecentralized) {
    q.assignment.component.resize(count);
    for (std::size_t i = 0; i < count; ++i)
      q.assignment.component[i] = decode_fq_symbol(q.symbols[i], q.mode, q.total_bits).component;
  }
  std::vector<float> w(count);
  for (std::size_t i = 0; i < count; ++i) w[i] = static_cast<float>(q.dequantize(q.symbols[i]));
  spec.weight = Tensor(std::move(shape), std::move(w));
  return out;
}
}  // namespace detail

// Decodes one record starting at the reader's position. Running off the end
// of the record is a format error; a checksum mismatch is corruption.
inline QuantizedLayer decode_layer(ByteReader& r, std::span<const std::uint8_t> all) {
  const std::size_t start = r.position();
  try {
    return detail::decode_layer_unchecked(r, start, all);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kCorruption && std::string(e.what()).find("checksum") == std::string::npos)
      fail(ErrorKind::kFormat, std::string("truncated record: ") + e.what());
    throw;
  }
}

inline QuantizedLayer decode_layer(std::span<const std::uint8_t> record) {
  ByteReader r(record);
  auto layer = decode_layer(r, record);
  require(r.remaining() == 0, ErrorKind::kFormat, "trailing bytes after record");
  return layer;
}

inline std::vector<std::uint8_t> encode_compressed(CompressedModel& model) {
  ByteWriter w;
  model_format::write_header(w, container::kMagic, container::kVersion, model.layers.size());
  model.record_bytes.clear();
  for (const auto& l : model.layers) {
    const auto rec = encode_layer(l);
    model.record_bytes.push_back(rec.size());
    w.bytes(rec);
  }
  model.file_bytes = w.size();
  return std::move(w).take();
}

inline CompressedModel decode_compressed(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  std::uint32_t count = 0;
  try {
    count = model_format::read_header(r, container::kMagic, container::kVersion);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kCorruption) fail(ErrorKind::kFormat, e.what());
    throw;
  }
  CompressedModel m;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t start = r.position();
    m.layers.push_back(decode_layer(r, bytes));
    m.record_bytes.push_back(r.position() - start);
  }
  require(r.remaining() == 0, ErrorKind::kFormat, "trailing bytes after declared layers");
  m.file_bytes = bytes.size();
  return m;
}

inline std::size_t save_compressed(CompressedModel& model, const std::filesystem::path& path) {
  return write_file(path, encode_compressed(model));
}

inline CompressedModel load_compressed(const std::filesystem::path& path) {
  return decode_compressed(read_file(path));
}

// Float model rebuilt from dequantized weights.
inline Model decompress(const CompressedModel& m) {
  Model out;
  for (const auto& l : m.layers) out.layers.push_back(l.spec);
  return out;
}

inline double compression_ratio(double original_bytes, double compressed_bytes) {
  require(compressed_bytes > 0.0, ErrorKind::kInvalidArgument, "compressed size must be positive");
  return original_bytes / compressed_bytes;
}

struct CompressionRow {
  std::string layer;
  std::string mode;
  int bits = 0;
  std::size_t orig_bytes = 0;
  std::size_t comp_bytes = 0;
  double cr = 0.0;
  double sparsity = 0.0;
};

struct CompressionReport {
  std::vector<CompressionRow> rows;  // per layer, then a TOTAL row

  static constexpr const char* kHeader = "layer,mode,bits,orig_bytes,comp_bytes,cr,sparsity";

  const CompressionRow& total() const { return rows.back(); }

  std::string to_csv() const {
    std::string out = std::string(kHeader) + "\n";
    char buf[256];
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%s,%s,%d,%zu,%zu,%.4f,%.4f\n", r.layer.c_str(), r.mode.c_str(), r.bits,
                    r.orig_bytes, r.comp_bytes, r.cr, r.sparsity);
      out += buf;
    }
    return out;
  }
};

// Baseline bytes are 4 per stored float (weights plus BN/bias); compressed
// bytes are the actual record sizes, and the TOTAL row uses the file size, so
// header overhead is charged to the compressed side.
inline CompressionReport compression_report(const Model& original, const CompressedModel& compressed) {
  require(original.layers.size() == compressed.layers.size(), ErrorKind::kInvalidArgument, "layer count mismatch");
  require(compressed.record_bytes.size() == compressed.layers.size(), ErrorKind::kInvalidArgument,
          "compressed model has no size accounting; encode or decode it first");
  CompressionReport rep;
  std::size_t total_orig = 0, total_weights = 0, total_zero = 0;
  for (std::size_t i = 0; i < original.layers.size(); ++i) {
    const auto& o = original.layers[i];
    const auto& c = compressed.layers[i];
    require(o.name == c.spec.name && o.weight.shape() == c.spec.weight.shape(), ErrorKind::kInvalidArgument,
            "layer mismatch at index " + std::to_string(i) + ": " + o.name + " vs " + c.spec.name);
    CompressionRow row;
    row.layer = o.name;
    row.mode = to_string(c.quant.mode);
    row.bits = c.quant.total_bits;
    row.orig_bytes = 4 * (o.weight.size() + o.aux_float_count());
    row.comp_bytes = compressed.record_bytes[i];
    row.cr = compression_ratio(static_cast<double>(row.orig_bytes), static_cast<double>(row.comp_bytes));
    const std::size_t zeros = c.quant.zero_count();
    row.sparsity = static_cast<double>(zeros) / static_cast<double>(c.quant.symbols.size());
    total_orig += row.orig_bytes;
    total_weights += c.quant.symbols.size();
    total_zero += zeros;
    rep.rows.push_back(row);
  }
  CompressionRow t;
  t.layer = "TOTAL";
  t.mode = "-";
  t.bits = 0;
  t.orig_bytes = total_orig;
  t.comp_bytes = compressed.file_bytes;
  t.cr = compression_ratio(static_cast<double>(t.orig_bytes), static_cast<double>(t.comp_bytes));
  t.sparsity = total_weights ? static_cast<double>(total_zero) / static_cast<double>(total_weights) : 0.0;
  rep.rows.push_back(t);
  return rep;
}

}  // namespace fq
