// Copyright 2026 The fqlib Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstdio>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "fq/error.hpp"

// Two-input gate estimates for fully unrolled convolution accelerators.
namespace fq::cost {

struct GatePrimitives {
  std::uint64_t full_adder = 5;
  std::uint64_t mux_per_bit = 3;
  std::uint64_t multiplier_per_bit_pair = 6;

  std::uint64_t ripple_adder(std::uint64_t width) const { return full_adder * width; }
  std::uint64_t barrel_shifter(std::uint64_t width, std::uint64_t stages) const {
    return mux_per_bit * width * stages;
  }
  std::uint64_t multiplier(std::uint64_t w1, std::uint64_t w2) const { return multiplier_per_bit_pair * w1 * w2; }

  void validate() const {
    require(full_adder > 0 && mux_per_bit > 0 && multiplier_per_bit_pair > 0, ErrorKind::kInvalidArgument,
            "gate primitives must be positive");
  }
};

struct ConvGeometry {
  std::uint64_t kernel_h = 3, kernel_w = 3;
  std::uint64_t in_channels = 100, out_channels = 100;
  std::uint64_t in_h = 8, in_w = 8;
  std::uint64_t padding = 1, stride = 1;

  void validate() const {
    require(kernel_h > 0 && kernel_w > 0 && in_channels > 0 && out_channels > 0 && in_h > 0 && in_w > 0 &&
                stride > 0,
            ErrorKind::kInvalidArgument, "geometry dimensions must be positive");
    require(in_h + 2 * padding >= kernel_h && in_w + 2 * padding >= kernel_w, ErrorKind::kInvalidArgument,
            "kernel larger than the padded input");
  }
  std::uint64_t out_h() const { return (in_h + 2 * padding - kernel_h) / stride + 1; }
  std::uint64_t out_w() const { return (in_w + 2 * padding - kernel_w) / stride + 1; }
  std::uint64_t fan_in() const { return kernel_h * kernel_w * in_channels; }
  std::uint64_t outputs() const { return out_h() * out_w() * out_channels; }

  std::string label() const {
    std::ostringstream os;
    os << kernel_h << 'x' << kernel_w << " p" << padding << " s" << stride << ' ' << in_h << 'x' << in_w << 'x'
       << in_channels << "->" << out_h() << 'x' << out_w() << 'x' << out_channels;
    return os.str();
  }
};

// Reference comparison layer: 3x3, padding 1, 8x8x100 -> 8x8x100.
inline ConvGeometry reference_geometry() { return {}; }

enum class SchemeKind { kShift, kFq, kBinaryBasis, kFqHuffman };

struct Scheme {
  SchemeKind kind = SchemeKind::kShift;
  int bits = 3;                 // shift: unsigned exponent bits; fq: total bits; binary: bases N
  int high_precision_bits = 16;  // binary_basis only
  int max_code_length = 12;      // fq_huffman decoder LUT depth

  std::string name() const {
    switch (kind) {
      case SchemeKind::kShift: return "shift(" + std::to_string(bits) + ")";
      case SchemeKind::kFq: return "fq(" + std::to_string(bits) + ")";
      case SchemeKind::kFqHuffman: return "fq_huffman(" + std::to_string(bits) + ")";
      case SchemeKind::kBinaryBasis: break;
    }
    return "binary_basis(" + std::to_string(bits) + ")";
  }
};

// shift(k), fq(n), fq_huffman(n), binary_basis(N) or binary_basis(N,width).
inline Scheme parse_scheme(const std::string& text) {
  static const std::regex re(R"(\s*(shift|fq|fq_huffman|binary_basis)\((\d+)(?:,\s*(\d+))?\)\s*)");
  std::smatch m;
  require(std::regex_match(text, m, re), ErrorKind::kInvalidArgument, "unknown scheme '" + text + "'");
  Scheme s;
  const std::string kind = m[1];
  s.bits = std::stoi(m[2]);
  if (kind == "shift") s.kind = SchemeKind::kShift;
  else if (kind == "fq") s.kind = SchemeKind::kFq;
  else if (kind == "fq_huffman") s.kind = SchemeKind::kFqHuffman;
  else s.kind = SchemeKind::kBinaryBasis;
  if (m[3].matched) {
    require(s.kind == SchemeKind::kBinaryBasis, ErrorKind::kInvalidArgument,
            "only binary_basis takes a precision argument: '" + text + "'");
    s.high_precision_bits = std::stoi(m[3]);
  }
  const int lo = s.kind == SchemeKind::kFq || s.kind == SchemeKind::kFqHuffman ? 4 : 1;
  require(s.bits >= lo && s.bits <= 16, ErrorKind::kInvalidArgument, "bit count out of range in '" + text + "'");
  require(s.high_precision_bits >= 1 && s.high_precision_bits <= 64, ErrorKind::kInvalidArgument,
          "precision out of range in '" + text + "'");
  return s;
}

inline std::uint64_t ceil_log2(std::uint64_t v) {
  std::uint64_t r = 0;
  while ((std::uint64_t{1} << r) < v) ++r;
  return r;
}

namespace detail {

// Per-output cost of the shift-add datapath: one barrel shifter per weight
// plus a (fan_in - 1)-adder tree at full accumulator width.
inline std::uint64_t shift_datapath(const GatePrimitives& p, const ConvGeometry& g, std::uint64_t act_bits,
                                    std::uint64_t shift_bits) {
  const std::uint64_t f = g.fan_in();
  const std::uint64_t max_shift = (std::uint64_t{1} << shift_bits) - 1;
  const std::uint64_t acc = act_bits + max_shift + ceil_log2(f);
  return f * p.barrel_shifter(act_bits, shift_bits) + (f - 1) * p.ripple_adder(acc);
}

}  // namespace detail

inline std::uint64_t estimate_gates(const Scheme& s, const ConvGeometry& g, int activation_bits = 8,
                                    const GatePrimitives& p = {}) {
  g.validate();
  p.validate();
  require(activation_bits >= 1 && activation_bits <= 32, ErrorKind::kInvalidArgument, "activation bits out of range");
  const auto a = static_cast<std::uint64_t>(activation_bits);
  const std::uint64_t f = g.fan_in(), outputs = g.outputs();
  switch (s.kind) {
    case SchemeKind::kShift:
      return outputs * detail::shift_datapath(p, g, a, static_cast<std::uint64_t>(s.bits));
    case SchemeKind::kFq:
    case SchemeKind::kFqHuffman: {
      // n-bit FQ runs an (n-2)-bit unsigned shift per weight; per output it
      // adds one mu shift and one combining adder for each component.
      const auto k = static_cast<std::uint64_t>(s.bits - 2);
      const std::uint64_t acc = a + ((std::uint64_t{1} << k) - 1) + ceil_log2(f);
      const std::uint64_t sum_width = a + ceil_log2(f);
      const std::uint64_t per_output =
          detail::shift_datapath(p, g, a, k) + 2 * (p.barrel_shifter(sum_width, k) + p.ripple_adder(acc));
      std::uint64_t total = outputs * per_output;
      if (s.kind == SchemeKind::kFqHuffman) {
        // One canonical decoder per filter: a comparator of max_code_length
        // bits and an n-bit output mux leg per alphabet entry.
        const std::uint64_t alphabet = (std::uint64_t{1} << (s.bits - 1)) + 3;
        const auto len = static_cast<std::uint64_t>(s.max_code_length);
        total += g.out_channels * alphabet * (p.ripple_adder(len) + p.mux_per_bit * static_cast<std::uint64_t>(s.bits));
      }
      return total;
    }
    case SchemeKind::kBinaryBasis: {
      // N binary convolutions (select +x or -x, sum at activation width plus
      // growth), each scaled by a high-precision multiply-add.
      const auto n = static_cast<std::uint64_t>(s.bits);
      const auto hp = static_cast<std::uint64_t>(s.high_precision_bits);
      const std::uint64_t tree = f * p.mux_per_bit * a + (f - 1) * p.ripple_adder(a + ceil_log2(f));
      const std::uint64_t scale = p.multiplier(hp, hp) + p.ripple_adder(2 * hp);
      return outputs * n * (tree + scale);
    }
  }
  fail(ErrorKind::kInvalidArgument, "unknown scheme");
}

struct GateRow {
  std::string scheme;
  std::string geometry;
  std::uint64_t gates = 0;
  double ratio = 0.0;
};

inline std::vector<Scheme> default_schemes() {
  return {parse_scheme("binary_basis(5)"), parse_scheme("binary_basis(2)"), parse_scheme("shift(3)"),
          parse_scheme("fq(5)"), parse_scheme("fq_huffman(5)")};
}

// One row per (geometry, scheme); ratio against `baseline` on the same
// geometry.
inline std::vector<GateRow> gate_report(const std::vector<ConvGeometry>& geometries, const std::vector<Scheme>& schemes,
                                        const Scheme& baseline = parse_scheme("shift(3)"), int activation_bits = 8,
                                        const GatePrimitives& p = {}) {
  require(!geometries.empty(), ErrorKind::kInvalidArgument, "geometry list is empty");
  require(!schemes.empty(), ErrorKind::kInvalidArgument, "scheme list is empty");
  std::vector<GateRow> rows;
  for (const auto& g : geometries) {
    const double base = static_cast<double>(estimate_gates(baseline, g, activation_bits, p));
    for (const auto& s : schemes) {
      const std::uint64_t n = estimate_gates(s, g, activation_bits, p);
      rows.push_back({s.name(), g.label(), n, static_cast<double>(n) / base});
    }
  }
  return rows;
}

inline std::string gate_csv(const std::vector<GateRow>& rows) {
  std::ostringstream os;
  os << "scheme,geometry,gates,ratio\n";
  for (const auto& r : rows) {
    char ratio[32];
    std::snprintf(ratio, sizeof ratio, "%.4f", r.ratio);
    os << r.scheme << ',' << r.geometry << ',' << r.gates << ',' << ratio << '\n';
  }
  return os.str();
}

}  // namespace fq::cost
