// Copyright 2026 The fqlib Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <queue>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "fq/error.hpp"

namespace fq {

// MSB-first bit packer.
class BitWriter {
 public:
  void put(std::uint64_t code, int length) {
    for (int i = length - 1; i >= 0; --i) {
      if (bits_ % 8 == 0) bytes_.push_back(0);
      if ((code >> i) & 1u) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (bits_ % 8));
      ++bits_;
    }
  }
  std::uint64_t bit_length() const noexcept { return bits_; }
  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint64_t bits_ = 0;
};

class BitReader {
 public:
  BitReader(std::span<const std::uint8_t> bytes, std::uint64_t bit_length) : bytes_(bytes), limit_(bit_length) {
    require(bit_length <= bytes.size() * 8, ErrorKind::kFormat, "bit length exceeds payload");
  }
  int get() {
    require(pos_ < limit_, ErrorKind::kFormat, "bitstream exhausted");
    const int bit = (bytes_[pos_ / 8] >> (7 - pos_ % 8)) & 1;
    ++pos_;
    return bit;
  }
  std::uint64_t position() const noexcept { return pos_; }
  std::uint64_t limit() const noexcept { return limit_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::uint64_t limit_;
  std::uint64_t pos_ = 0;
};

// Canonical prefix code over symbols [0, alphabet_size). A length of 0 means
// the symbol is absent.
class HuffmanTable {
 public:
  static constexpr int kMaxCodeLength = 57;

  HuffmanTable() = default;

  // Builds canonical codes from lengths; rejects over-subscribed tables.
  static HuffmanTable from_lengths(std::vector<std::uint8_t> lengths) {
    HuffmanTable t;
    t.lengths_ = std::move(lengths);
    // Kraft sum in units of 2^-kMaxCodeLength, exact in 64 bits.
    std::uint64_t kraft = 0;
    bool any = false;
    for (std::uint8_t len : t.lengths_) {
      if (len == 0) continue;
      require(len <= kMaxCodeLength, ErrorKind::kFormat, "code length " + std::to_string(len) + " too long");
      kraft += std::uint64_t{1} << (kMaxCodeLength - len);
      any = true;
    }
    require(any, ErrorKind::kFormat, "code table has no symbols");
    require(kraft <= (std::uint64_t{1} << kMaxCodeLength), ErrorKind::kFormat, "code lengths violate the Kraft inequality");

    for (std::uint32_t s = 0; s < t.lengths_.size(); ++s)
      if (t.lengths_[s]) t.sorted_.push_back(s);
    std::stable_sort(t.sorted_.begin(), t.sorted_.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return t.lengths_[a] < t.lengths_[b]; });
    t.codes_.assign(t.lengths_.size(), 0);
    t.first_code_.assign(kMaxCodeLength + 2, 0);
    t.first_index_.assign(kMaxCodeLength + 2, 0);
    t.count_.assign(kMaxCodeLength + 2, 0);
    std::uint64_t code = 0;
    int prev = 0;
    for (std::size_t i = 0; i < t.sorted_.size(); ++i) {
      const std::uint32_t s = t.sorted_[i];
      const int len = t.lengths_[s];
      code <<= (len - prev);
      if (t.count_[len] == 0) {
        t.first_code_[len] = code;
        t.first_index_[len] = i;
      }
      ++t.count_[len];
      t.codes_[s] = code++;
      prev = len;
    }
    return t;
  }

  std::size_t alphabet_size() const noexcept { return lengths_.size(); }
  const std::vector<std::uint8_t>& lengths() const noexcept { return lengths_; }
  int length(std::uint32_t symbol) const { return symbol < lengths_.size() ? lengths_[symbol] : 0; }
  std::uint64_t code(std::uint32_t symbol) const { return codes_.at(symbol); }

  void encode(std::uint32_t symbol, BitWriter& out) const {
    require(length(symbol) > 0, ErrorKind::kEncoding, "symbol " + std::to_string(symbol) + " has no code");
    out.put(codes_[symbol], lengths_[symbol]);
  }

  std::uint32_t decode(BitReader& in) const {
    std::uint64_t code = 0;
    for (int len = 1; len <= kMaxCodeLength; ++len) {
      code = (code << 1) | static_cast<std::uint64_t>(in.get());
      if (count_[len] && code >= first_code_[len] && code - first_code_[len] < count_[len])
        return sorted_[first_index_[len] + (code - first_code_[len])];
    }
    fail(ErrorKind::kFormat, "invalid code in bitstream");
  }

 private:
  std::vector<std::uint8_t> lengths_;
  std::vector<std::uint64_t> codes_;
  std::vector<std::uint32_t> sorted_;  // by (length, symbol)
  std::vector<std::uint64_t> first_code_;
  std::vector<std::size_t> first_index_;
  std::vector<std::uint64_t> count_;
};

// Huffman code lengths for the given counts. Merges the two lightest nodes
// first, ties going to the node holding the smaller minimum symbol; a lone
// symbol gets a 1-bit code.
inline HuffmanTable build_huffman(const std::map<std::uint32_t, std::uint64_t>& frequencies,
                                  std::size_t alphabet_size) {
  struct Node {
    std::uint64_t count;
    std::uint32_t min_symbol;
    int parent;
  };
  std::vector<Node> nodes;
  using Key = std::tuple<std::uint64_t, std::uint32_t, int>;  // count, min symbol, node id
  std::priority_queue<Key, std::vector<Key>, std::greater<>> heap;
  for (const auto& [sym, count] : frequencies) {
    if (count == 0) continue;
    require(sym < alphabet_size, ErrorKind::kInvalidArgument, "symbol outside alphabet");
    heap.emplace(count, sym, static_cast<int>(nodes.size()));
    nodes.push_back({count, sym, -1});
  }
  require(!nodes.empty(), ErrorKind::kInvalidArgument, "no symbol has a nonzero count");
  const std::size_t leaves = nodes.size();

  std::vector<std::uint8_t> lengths(alphabet_size, 0);
  if (leaves == 1) {
    lengths[nodes[0].min_symbol] = 1;
    return HuffmanTable::from_lengths(std::move(lengths));
  }
  while (heap.size() > 1) {
    const auto [ca, sa, a] = heap.top();
    heap.pop();
    const auto [cb, sb, b] = heap.top();
    heap.pop();
    const int id = static_cast<int>(nodes.size());
    nodes.push_back({ca + cb, std::min(sa, sb), -1});
    nodes[static_cast<std::size_t>(a)].parent = id;
    nodes[static_cast<std::size_t>(b)].parent = id;
    heap.emplace(ca + cb, std::min(sa, sb), id);
  }
  for (std::size_t i = 0; i < leaves; ++i) {
    int depth = 0;
    for (int p = nodes[i].parent; p >= 0; p = nodes[static_cast<std::size_t>(p)].parent) ++depth;
    require(depth <= HuffmanTable::kMaxCodeLength, ErrorKind::kEncoding, "Huffman code too long");
    lengths[nodes[i].min_symbol] = static_cast<std::uint8_t>(depth);
  }
  return HuffmanTable::from_lengths(std::move(lengths));
}

inline std::map<std::uint32_t, std::uint64_t> symbol_frequencies(std::span<const std::uint32_t> stream) {
  std::map<std::uint32_t, std::uint64_t> f;
  for (std::uint32_t s : stream) ++f[s];
  return f;
}

}  // namespace fq
