#include "itx/bytes.hpp"

#include <openssl/crypto.h>

#include <algorithm>

#include "itx/error.hpp"

namespace itx {

namespace {

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

std::string to_hex(ByteView data) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (std::uint8_t b : data) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0x0f]);
  }
  return out;
}

Bytes from_hex(std::string_view hex) {
  if (hex.size() % 2 != 0) throw Error(Errc::InvalidEncoding, "odd-length hex string");
  Bytes out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    int hi = hex_value(hex[2 * i]);
    int lo = hex_value(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw Error(Errc::InvalidEncoding, "invalid hex digit");
    out[i] = static_cast<std::uint8_t>((hi << 4) | lo);
  }
  return out;
}

void append(Bytes& out, ByteView data) { out.insert(out.end(), data.begin(), data.end()); }

void put_u8(Bytes& out, std::uint8_t v) { out.push_back(v); }

void put_be16(Bytes& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_be32(Bytes& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void put_be64(Bytes& out, std::uint64_t v) {
  for (int shift = 56; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

std::uint16_t get_be16(ByteView in, std::size_t offset) {
  if (offset + 2 > in.size()) throw Error(Errc::InvalidEncoding, "buffer overrun");
  return static_cast<std::uint16_t>((in[offset] << 8) | in[offset + 1]);
}

std::uint32_t get_be32(ByteView in, std::size_t offset) {
  if (offset + 4 > in.size()) throw Error(Errc::InvalidEncoding, "buffer overrun");
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | in[offset + i];
  return v;
}

std::uint64_t get_be64(ByteView in, std::size_t offset) {
  if (offset + 8 > in.size()) throw Error(Errc::InvalidEncoding, "buffer overrun");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < 8; ++i) v = (v << 8) | in[offset + i];
  return v;
}

std::uint32_t get_le32(ByteView in, std::size_t offset) {
  if (offset + 4 > in.size()) throw Error(Errc::InvalidEncoding, "buffer overrun");
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[offset + i]) << (8 * i);
  return v;
}

void set_le32(std::span<std::uint8_t> out, std::size_t offset, std::uint32_t v) {
  if (offset + 4 > out.size()) throw Error(Errc::InvalidEncoding, "buffer overrun");
  for (std::size_t i = 0; i < 4; ++i) out[offset + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

void secure_zero(std::span<std::uint8_t> data) {
  if (!data.empty()) OPENSSL_cleanse(data.data(), data.size());
}

bool constant_time_equal(ByteView a, ByteView b) {
  if (a.size() != b.size()) return false;
  if (a.empty()) return true;
  return CRYPTO_memcmp(a.data(), b.data(), a.size()) == 0;
}

bool contains_subsequence(ByteView haystack, ByteView needle) {
  if (needle.empty()) return true;
  return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) != haystack.end();
}

std::uint8_t ByteReader::u8() { return take(1)[0]; }
std::uint16_t ByteReader::be16() { return get_be16(take(2), 0); }
std::uint32_t ByteReader::be32() { return get_be32(take(4), 0); }
std::uint64_t ByteReader::be64() { return get_be64(take(8), 0); }

ByteView ByteReader::take(std::size_t n) {
  if (n > remaining()) throw Error(Errc::InvalidEncoding, "truncated input");
  ByteView out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

void ByteReader::expect_done() const {
  if (!done()) throw Error(Errc::InvalidEncoding, "trailing bytes after structure");
}

}  // namespace itx
