#pragma once

// Thin wrappers over OpenSSL for the standard primitives the simulator
// composes: SHA-256, HKDF-SHA-256, Ed25519, X25519, AES-256 and AES-256-GCM.

#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <string_view>

#include "itx/bytes.hpp"

namespace itx::crypto {

using Key256 = ByteArray<32>;
using Block = ByteArray<16>;
using Nonce12 = ByteArray<12>;
using PublicKey = ByteArray<32>;
using Signature = ByteArray<64>;

Digest sha256(ByteView data);
Digest sha256(std::initializer_list<ByteView> parts);

Bytes hkdf_sha256(ByteView ikm, ByteView salt, ByteView info, std::size_t length);

// 32-byte HKDF-SHA-256 output keyed by `secret` with `label` (and optional
// binary context appended to the label) as info.
Key256 kdf(ByteView secret, std::string_view label, ByteView context = {}, ByteView salt = {});

void random_bytes(std::span<std::uint8_t> out);

template <std::size_t N>
ByteArray<N> random_array() {
  ByteArray<N> out{};
  random_bytes(out);
  return out;
}

// Fills a buffer with entropy. The default source is the OpenSSL CSPRNG;
// tests inject deterministic sources.
using EntropySource = std::function<void(std::span<std::uint8_t>)>;
EntropySource system_entropy();

// Ed25519 signing key derived from a 32-byte seed. The seed is wiped on
// destruction.
class SigningKey {
 public:
  static SigningKey from_seed(const ByteArray<32>& seed);
  static SigningKey generate();

  SigningKey(const SigningKey& other);
  SigningKey& operator=(const SigningKey& other);
  SigningKey(SigningKey&&) noexcept;
  SigningKey& operator=(SigningKey&&) noexcept;
  ~SigningKey();

  const PublicKey& public_key() const { return public_key_; }
  Signature sign(ByteView message) const;
  // Exposes the seed for simulated persistence and hygiene scans.
  const ByteArray<32>& seed() const { return seed_; }

 private:
  SigningKey() = default;
  ByteArray<32> seed_{};
  PublicKey public_key_{};
};

bool verify_signature(const PublicKey& key, ByteView message, ByteView signature);

// X25519 key share.
struct KeyShare {
  ByteArray<32> private_key{};
  PublicKey public_key{};

  static KeyShare generate();
  static KeyShare from_private(const ByteArray<32>& private_key);
  void wipe();
};

// Raw X25519 shared secret; throws Error(InvalidShare) for low-order peers.
ByteArray<32> x25519(const ByteArray<32>& private_key, const PublicKey& peer_public);

// Single-block AES-256 encryptor with a cached key schedule.
class Aes256 {
 public:
  explicit Aes256(const Key256& key);
  Aes256(const Aes256&) = delete;
  Aes256& operator=(const Aes256&) = delete;
  Aes256(Aes256&&) noexcept;
  Aes256& operator=(Aes256&&) noexcept;
  ~Aes256();

  Block encrypt_block(const Block& in) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// AES-256-GCM with a 12-byte nonce. Output of seal is ciphertext || tag.
Bytes aes256gcm_seal(const Key256& key, const Nonce12& nonce, ByteView aad, ByteView plaintext);
std::optional<Bytes> aes256gcm_open(const Key256& key, const Nonce12& nonce, ByteView aad,
                                    ByteView ciphertext_and_tag);

}  // namespace itx::crypto
