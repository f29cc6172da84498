#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "itx/error.hpp"

namespace itx {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;
template <std::size_t N>
using ByteArray = std::array<std::uint8_t, N>;
using Digest = ByteArray<32>;

std::string to_hex(ByteView data);
Bytes from_hex(std::string_view hex);

template <std::size_t N>
ByteArray<N> array_from_hex(std::string_view hex) {
  ByteArray<N> out{};
  Bytes raw = from_hex(hex);
  if (raw.size() != N) throw Error(Errc::InvalidEncoding, "hex value has wrong length");
  std::copy(raw.begin(), raw.end(), out.begin());
  return out;
}

inline ByteView as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

void append(Bytes& out, ByteView data);
void put_u8(Bytes& out, std::uint8_t v);
void put_be16(Bytes& out, std::uint16_t v);
void put_be32(Bytes& out, std::uint32_t v);
void put_be64(Bytes& out, std::uint64_t v);

std::uint16_t get_be16(ByteView in, std::size_t offset);
std::uint32_t get_be32(ByteView in, std::size_t offset);
std::uint64_t get_be64(ByteView in, std::size_t offset);

std::uint32_t get_le32(ByteView in, std::size_t offset);
void set_le32(std::span<std::uint8_t> out, std::size_t offset, std::uint32_t v);

// Wipes memory in a way the optimizer may not elide.
void secure_zero(std::span<std::uint8_t> data);

// Constant-time equality for equal-length buffers; false on length mismatch.
bool constant_time_equal(ByteView a, ByteView b);

// True when `needle` occurs as a contiguous run inside `haystack`.
bool contains_subsequence(ByteView haystack, ByteView needle);

// Cursor over a byte buffer used by the binary decoders. Throws
// Error(InvalidEncoding) on overrun.
class ByteReader {
 public:
  explicit ByteReader(ByteView data) : data_(data) {}

  std::uint8_t u8();
  std::uint16_t be16();
  std::uint32_t be32();
  std::uint64_t be64();
  ByteView take(std::size_t n);
  template <std::size_t N>
  ByteArray<N> array() {
    ByteArray<N> out{};
    auto v = take(N);
    std::copy(v.begin(), v.end(), out.begin());
    return out;
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return remaining() == 0; }
  void expect_done() const;

 private:
  ByteView data_;
  std::size_t pos_ = 0;
};

}  // namespace itx
