// Copyright 2026 The fqlib Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "fq/codec.hpp"
#include "fq/focused_quant.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace fq {
namespace {

std::vector<std::uint32_t> round_trip(const HuffmanTable& t, const std::vector<std::uint32_t>& stream,
                                      std::uint64_t* bits_out = nullptr) {
  BitWriter w;
  for (auto s : stream) t.encode(s, w);
  if (bits_out) *bits_out = w.bit_length();
  BitReader r(w.bytes(), w.bit_length());
  std::vector<std::uint32_t> out;
  while (r.position() < r.limit()) out.push_back(t.decode(r));
  return out;
}

TEST(Huffman, ThreeSymbolExample) {
  const auto t = build_huffman({{0, 1}, {1, 1}, {2, 2}}, 3);
  EXPECT_EQ(t.lengths(), (std::vector<std::uint8_t>{2, 2, 1}));
  // Canonical: shortest first, then by symbol.
  EXPECT_EQ(t.code(2), 0b0u);
  EXPECT_EQ(t.code(0), 0b10u);
  EXPECT_EQ(t.code(1), 0b11u);
}

TEST(Huffman, SingleSymbolGetsOneBit) {
  const auto t = build_huffman({{5, 100}}, 8);
  EXPECT_EQ(t.length(5), 1);
  std::vector<std::uint32_t> s(100, 5);
  std::uint64_t bits = 0;
  EXPECT_EQ(round_trip(t, s, &bits), s);
  EXPECT_EQ(bits, 100u);
}

TEST(Huffman, UniformPowerOfTwoAlphabet) {
  for (int j = 1; j <= 6; ++j) {
    std::map<std::uint32_t, std::uint64_t> f;
    for (std::uint32_t s = 0; s < (1u << j); ++s) f[s] = 7;
    const auto t = build_huffman(f, 1u << j);
    for (std::uint32_t s = 0; s < (1u << j); ++s) EXPECT_EQ(t.length(s), j);
  }
}

TEST(Huffman, KraftViolationRejected) {
  EXPECT_FQ_ERROR(HuffmanTable::from_lengths({1, 1, 1}), ErrorKind::kFormat);
  EXPECT_FQ_ERROR(HuffmanTable::from_lengths({0, 0}), ErrorKind::kFormat);
  EXPECT_FQ_ERROR(HuffmanTable::from_lengths({58, 1}), ErrorKind::kFormat);
  EXPECT_NO_THROW(HuffmanTable::from_lengths({1, 2, 2}));
}

TEST(Huffman, ExhaustedStreamIsFormatError) {
  const auto t = build_huffman({{0, 1}, {1, 1}, {2, 2}}, 3);
  BitWriter w;
  t.encode(0, w);
  BitReader r(w.bytes(), 1);
  EXPECT_FQ_ERROR(t.decode(r), ErrorKind::kFormat);
}

TEST(HuffmanProperty, LosslessAndOptimal) {
  SplitMix64 g(2718);
  for (int trial = 0; trial < 200; ++trial) {
    const std::uint32_t alphabet = 2 + static_cast<std::uint32_t>(g.below(255));
    const std::size_t n = 1 + g.below(3000);
    // Skewed streams: geometric-ish over a random permutation of a subset.
    std::vector<std::uint32_t> stream(n);
    const double p = g.uniform(0.05, 0.9);
    for (auto& s : stream) {
      std::uint32_t v = 0;
      while (v + 1 < alphabet && g.uniform() > p) ++v;
      s = v;
    }
    const auto freq = symbol_frequencies(stream);
    const auto t = build_huffman(freq, alphabet);
    std::uint64_t bits = 0;
    ASSERT_EQ(round_trip(t, stream, &bits), stream);
    ASSERT_EQ(bits, oracle::optimal_code_length(freq));
  }
}

LayerSpec dense_spec(const std::string& name, const Tensor& w, std::size_t in, std::size_t out) {
  LayerSpec s = make_dense(name, in, out);
  s.weight = w.reshaped({out, in});
  return s;
}

QuantizedLayer quantized(LayerSpec spec, const LayerQuantization& q) {
  return fixtures::with_quantization(std::move(spec), q);
}

QuantizedLayer sparse_layer(std::uint64_t seed, double sparsity, QuantMode mode) {
  const auto l = fixtures::sparse_gaussian_layer(seed, 64 * 32, sparsity);
  const auto r = quantize_focused(l.weights, l.mask, seed, {.force_mode = mode});
  return quantized(dense_spec("fc" + std::to_string(seed), l.weights, 64, 32), r.quant);
}

// A per-symbol prefix code spends at least one bit per weight, so the payload
// lands between the entropy of the stream and 0.9 + 0.1 * (longest code).
TEST(Codec, SparseLayerZeroGetsOneBit) {
  const auto l = fixtures::sparse_gaussian_layer(3, 10000, 0.9);
  const auto q = quantize_focused(l.weights, l.mask, 3, {.force_mode = QuantMode::kShift}).quant;
  const auto freq = symbol_frequencies(q.symbols);
  const auto t = build_huffman(freq, 32);
  EXPECT_EQ(t.length(0), 1);
  std::uint64_t bits = 0;
  EXPECT_EQ(round_trip(t, q.symbols, &bits), q.symbols);
  const double n = static_cast<double>(q.symbols.size());
  const double fixed = 5.0 * n;
  double entropy = 0.0;
  for (const auto& [sym, c] : freq) entropy -= static_cast<double>(c) * std::log2(static_cast<double>(c) / n);
  EXPECT_LT(entropy, 0.2 * fixed);
  EXPECT_GE(static_cast<double>(bits), entropy);
  EXPECT_LT(static_cast<double>(bits), entropy + n);
  EXPECT_LT(static_cast<double>(bits), 0.25 * fixed);
}

TEST(Codec, UniformUsageGainsNothing) {
  std::vector<std::uint32_t> stream;
  for (int r = 0; r < 50; ++r)
    for (std::uint32_t s = 0; s < 16; ++s) stream.push_back(s);
  std::uint64_t bits = 0;
  round_trip(build_huffman(symbol_frequencies(stream), 32), stream, &bits);
  EXPECT_EQ(bits, 4u * stream.size());
}

TEST(Codec, LayerRecordRoundTrip) {
  for (QuantMode mode : {QuantMode::kShift, QuantMode::kRecentralized}) {
    QuantizedLayer layer = sparse_layer(7, 0.6, mode);
    layer.spec.bias = std::vector<float>(32, 0.5f);
    const auto rec = encode_layer(layer);
    const auto back = decode_layer(rec);
    EXPECT_EQ(back.quant.symbols, layer.quant.symbols);
    EXPECT_EQ(back.spec.weight, layer.spec.weight);
    EXPECT_EQ(back.spec.bias, layer.spec.bias);
    EXPECT_EQ(back.quant.grid.bias, layer.quant.grid.bias);
    EXPECT_EQ(back.quant.sigma, layer.quant.sigma);
    EXPECT_EQ(back.quant.mu_plus, layer.quant.mu_plus);
    EXPECT_EQ(encode_layer(back), rec);
  }
}

TEST(Codec, BitFlipIsCorruption) {
  const auto rec = encode_layer(sparse_layer(9, 0.5, QuantMode::kRecentralized));
  SplitMix64 g(4);
  for (int i = 0; i < 50; ++i) {
    auto bad = rec;
    const std::size_t bit = g.below(bad.size() * 8);
    bad[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    try {
      decode_layer(bad);
      ADD_FAILURE() << "flip at bit " << bit << " went unnoticed";
    } catch (const Error& e) {
      // A flip in a length field may surface as a structural error before the
      // checksum is reached; anything in the body must be caught by the CRC.
      EXPECT_TRUE(e.kind() == ErrorKind::kCorruption || e.kind() == ErrorKind::kFormat) << e.what();
    }
  }
  // Payload byte: structure intact, only the checksum can notice.
  auto bad = rec;
  bad[rec.size() - 40] ^= 0x10;
  EXPECT_FQ_ERROR(decode_layer(bad), ErrorKind::kCorruption);
}

TEST(Codec, TruncationIsFormatError) {
  const auto rec = encode_layer(sparse_layer(10, 0.5, QuantMode::kShift));
  for (std::size_t cut : {std::size_t{1}, std::size_t{4}, rec.size() / 2, rec.size() - 1}) {
    std::vector<std::uint8_t> t(rec.begin(), rec.begin() + static_cast<std::ptrdiff_t>(rec.size() - cut));
    SCOPED_TRACE(cut);
    EXPECT_FQ_ERROR(decode_layer(t), ErrorKind::kFormat);
  }
}

TEST(Codec, RejectsSymbolsOutsideAlphabet) {
  QuantizedLayer layer = sparse_layer(11, 0.5, QuantMode::kShift);
  layer.quant.symbols[0] = 0b10000;  // spare sign field
  EXPECT_FQ_ERROR(encode_layer(layer), ErrorKind::kEncoding);
}

CompressedModel small_compressed(Model& original) {
  const auto sparse = fixtures::sparse_gaussian_layer(40, 8 * 4 * 9, 0.7);
  LayerSpec conv = make_conv2d("conv1", 4, 8, 3, 1, 1);
  conv.weight = sparse.weights.reshaped({8, 4, 3, 3});
  conv.bn = BatchNorm{std::vector<float>(8, 1.0f), std::vector<float>(8, 0.0f), std::vector<float>(8, 0.1f),
                      std::vector<float>(8, 2.0f)};
  const auto qc = quantize_focused(sparse.weights, sparse.mask, 40);
  const auto dense = fixtures::sparse_gaussian_layer(41, 8 * 10, 0.5);
  LayerSpec fc = dense_spec("fc", dense.weights, 8, 10);
  fc.bias = std::vector<float>(10, 0.0f);
  const auto qf = quantize_focused(dense.weights, dense.mask, 41);
  original.layers = {conv, fc};
  CompressedModel m;
  m.layers = {quantized(conv, qc.quant), quantized(fc, qf.quant)};
  return m;
}

TEST(Container, FileRoundTripBitExact) {
  Model original;
  CompressedModel m = small_compressed(original);
  testing_util::TempDir dir;
  const auto path = dir.path() / "m.fqz";
  const std::size_t written = save_compressed(m, path);
  EXPECT_EQ(written, std::filesystem::file_size(path));
  const CompressedModel back = load_compressed(path);
  ASSERT_EQ(back.layers.size(), 2u);
  EXPECT_EQ(back.record_bytes, m.record_bytes);
  EXPECT_EQ(back.file_bytes, written);
  const Model d = decompress(back);
  EXPECT_EQ(d.layers[0].weight, m.layers[0].spec.weight);
  EXPECT_EQ(d.layers[1].weight, m.layers[1].spec.weight);
  EXPECT_EQ(d.layers[0].bn->variance, original.layers[0].bn->variance);
  CompressedModel again = back;
  EXPECT_EQ(encode_compressed(again), read_file(path));
}

TEST(Container, BadMagicAndTrailingBytes) {
  Model original;
  CompressedModel m = small_compressed(original);
  auto bytes = encode_compressed(m);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_FQ_ERROR(decode_compressed(bad), ErrorKind::kFormat);
  bad = bytes;
  bad.push_back(0);
  EXPECT_FQ_ERROR(decode_compressed(bad), ErrorKind::kFormat);
  bad.assign(bytes.begin(), bytes.begin() + 6);
  EXPECT_FQ_ERROR(decode_compressed(bad), ErrorKind::kFormat);
}

TEST(CompressionRatio, Arithmetic) {
  EXPECT_NEAR(compression_ratio(46.76, 2.86), 16.35, 0.005);
  EXPECT_EQ(compression_ratio(1234, 1234), 1.0);
  EXPECT_FQ_ERROR(compression_ratio(1, 0), ErrorKind::kInvalidArgument);
}

TEST(CompressionReport, SizesAddUp) {
  Model original;
  CompressedModel m = small_compressed(original);
  const auto bytes = encode_compressed(m);
  const auto rep = compression_report(original, m);
  ASSERT_EQ(rep.rows.size(), 3u);
  std::size_t sum = container::kHeaderBytes;
  for (std::size_t i = 0; i < 2; ++i) sum += rep.rows[i].comp_bytes;
  EXPECT_EQ(sum, bytes.size());
  EXPECT_EQ(rep.total().comp_bytes, bytes.size());
  EXPECT_EQ(rep.rows[0].orig_bytes, 4u * (8 * 4 * 9 + 4 * 8));
  EXPECT_EQ(rep.rows[1].orig_bytes, 4u * (80 + 10));
  EXPECT_EQ(rep.total().orig_bytes, rep.rows[0].orig_bytes + rep.rows[1].orig_bytes);
  const std::string csv = rep.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), CompressionReport::kHeader);
  EXPECT_NE(csv.find("\nTOTAL,-,0,"), std::string::npos);
}

}  // namespace
}  // namespace fq
