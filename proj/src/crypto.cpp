#include "itx/crypto.hpp"

#include <openssl/evp.h>
#include <openssl/kdf.h>
#include <openssl/rand.h>

#include <string>

#include "itx/error.hpp"

namespace itx::crypto {

namespace {

struct PkeyDeleter {
  void operator()(EVP_PKEY* p) const { EVP_PKEY_free(p); }
};
struct PkeyCtxDeleter {
  void operator()(EVP_PKEY_CTX* p) const { EVP_PKEY_CTX_free(p); }
};
struct MdCtxDeleter {
  void operator()(EVP_MD_CTX* p) const { EVP_MD_CTX_free(p); }
};
struct CipherCtxDeleter {
  void operator()(EVP_CIPHER_CTX* p) const { EVP_CIPHER_CTX_free(p); }
};

using PkeyPtr = std::unique_ptr<EVP_PKEY, PkeyDeleter>;
using PkeyCtxPtr = std::unique_ptr<EVP_PKEY_CTX, PkeyCtxDeleter>;
using MdCtxPtr = std::unique_ptr<EVP_MD_CTX, MdCtxDeleter>;
using CipherCtxPtr = std::unique_ptr<EVP_CIPHER_CTX, CipherCtxDeleter>;

[[noreturn]] void openssl_failure(const char* what) {
  throw Error(Errc::InvalidArgument, std::string("openssl: ") + what);
}

PublicKey raw_public(EVP_PKEY* key) {
  PublicKey out{};
  std::size_t len = out.size();
  if (EVP_PKEY_get_raw_public_key(key, out.data(), &len) != 1 || len != out.size()) {
    openssl_failure("get_raw_public_key");
  }
  return out;
}

}  // namespace

Digest sha256(ByteView data) { return sha256({data}); }

Digest sha256(std::initializer_list<ByteView> parts) {
  MdCtxPtr ctx(EVP_MD_CTX_new());
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) openssl_failure("sha256 init");
  for (ByteView part : parts) {
    if (!part.empty() && EVP_DigestUpdate(ctx.get(), part.data(), part.size()) != 1) {
      openssl_failure("sha256 update");
    }
  }
  Digest out{};
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(ctx.get(), out.data(), &len) != 1 || len != out.size()) {
    openssl_failure("sha256 final");
  }
  return out;
}

Bytes hkdf_sha256(ByteView ikm, ByteView salt, ByteView info, std::size_t length) {
  PkeyCtxPtr ctx(EVP_PKEY_CTX_new_id(EVP_PKEY_HKDF, nullptr));
  if (!ctx || EVP_PKEY_derive_init(ctx.get()) != 1 ||
      EVP_PKEY_CTX_set_hkdf_md(ctx.get(), EVP_sha256()) != 1) {
    openssl_failure("hkdf init");
  }
  // An empty salt means "HashLen zero bytes" per RFC 5869; OpenSSL needs an
  // explicit buffer for that.
  static const std::uint8_t kZeroSalt[32] = {};
  const std::uint8_t* salt_ptr = salt.empty() ? kZeroSalt : salt.data();
  int salt_len = salt.empty() ? 32 : static_cast<int>(salt.size());
  static const std::uint8_t kEmpty[1] = {};
  if (EVP_PKEY_CTX_set1_hkdf_salt(ctx.get(), salt_ptr, salt_len) != 1 ||
      EVP_PKEY_CTX_set1_hkdf_key(ctx.get(), ikm.empty() ? kEmpty : ikm.data(),
                                 static_cast<int>(ikm.size())) != 1 ||
      EVP_PKEY_CTX_add1_hkdf_info(ctx.get(), info.empty() ? kEmpty : info.data(),
                                  static_cast<int>(info.size())) != 1) {
    openssl_failure("hkdf params");
  }
  Bytes out(length);
  std::size_t out_len = length;
  if (EVP_PKEY_derive(ctx.get(), out.data(), &out_len) != 1 || out_len != length) {
    openssl_failure("hkdf derive");
  }
  return out;
}

Key256 kdf(ByteView secret, std::string_view label, ByteView context, ByteView salt) {
  Bytes info(label.begin(), label.end());
  append(info, context);
  Bytes okm = hkdf_sha256(secret, salt, info, 32);
  Key256 out{};
  std::copy(okm.begin(), okm.end(), out.begin());
  secure_zero(okm);
  return out;
}

void random_bytes(std::span<std::uint8_t> out) {
  if (out.empty()) return;
  if (RAND_bytes(out.data(), static_cast<int>(out.size())) != 1) openssl_failure("RAND_bytes");
}

EntropySource system_entropy() {
  return [](std::span<std::uint8_t> out) { random_bytes(out); };
}

SigningKey SigningKey::from_seed(const ByteArray<32>& seed) {
  PkeyPtr key(EVP_PKEY_new_raw_private_key(EVP_PKEY_ED25519, nullptr, seed.data(), seed.size()));
  if (!key) openssl_failure("ed25519 key");
  SigningKey out;
  out.seed_ = seed;
  out.public_key_ = raw_public(key.get());
  return out;
}

SigningKey SigningKey::generate() {
  auto seed = random_array<32>();
  SigningKey out = from_seed(seed);
  secure_zero(seed);
  return out;
}

SigningKey::SigningKey(const SigningKey& other) = default;
SigningKey& SigningKey::operator=(const SigningKey& other) = default;

SigningKey::SigningKey(SigningKey&& other) noexcept
    : seed_(other.seed_), public_key_(other.public_key_) {
  secure_zero(other.seed_);
}

SigningKey& SigningKey::operator=(SigningKey&& other) noexcept {
  if (this != &other) {
    seed_ = other.seed_;
    public_key_ = other.public_key_;
    secure_zero(other.seed_);
  }
  return *this;
}

SigningKey::~SigningKey() { secure_zero(seed_); }

Signature SigningKey::sign(ByteView message) const {
  PkeyPtr key(EVP_PKEY_new_raw_private_key(EVP_PKEY_ED25519, nullptr, seed_.data(), seed_.size()));
  MdCtxPtr ctx(EVP_MD_CTX_new());
  if (!key || !ctx || EVP_DigestSignInit(ctx.get(), nullptr, nullptr, nullptr, key.get()) != 1) {
    openssl_failure("ed25519 sign init");
  }
  Signature sig{};
  std::size_t len = sig.size();
  static const std::uint8_t kEmpty[1] = {};
  if (EVP_DigestSign(ctx.get(), sig.data(), &len, message.empty() ? kEmpty : message.data(),
                     message.size()) != 1 ||
      len != sig.size()) {
    openssl_failure("ed25519 sign");
  }
  return sig;
}

bool verify_signature(const PublicKey& key, ByteView message, ByteView signature) {
  if (signature.size() != 64) return false;
  PkeyPtr pkey(EVP_PKEY_new_raw_public_key(EVP_PKEY_ED25519, nullptr, key.data(), key.size()));
  if (!pkey) return false;
  MdCtxPtr ctx(EVP_MD_CTX_new());
  if (!ctx || EVP_DigestVerifyInit(ctx.get(), nullptr, nullptr, nullptr, pkey.get()) != 1) {
    return false;
  }
  static const std::uint8_t kEmpty[1] = {};
  return EVP_DigestVerify(ctx.get(), signature.data(), signature.size(),
                          message.empty() ? kEmpty : message.data(), message.size()) == 1;
}

KeyShare KeyShare::generate() {
  auto priv = random_array<32>();
  KeyShare out = from_private(priv);
  secure_zero(priv);
  return out;
}

KeyShare KeyShare::from_private(const ByteArray<32>& private_key) {
  PkeyPtr key(
      EVP_PKEY_new_raw_private_key(EVP_PKEY_X25519, nullptr, private_key.data(), private_key.size()));
  if (!key) openssl_failure("x25519 key");
  KeyShare out;
  out.private_key = private_key;
  out.public_key = raw_public(key.get());
  return out;
}

void KeyShare::wipe() { secure_zero(private_key); }

ByteArray<32> x25519(const ByteArray<32>& private_key, const PublicKey& peer_public) {
  PkeyPtr priv(
      EVP_PKEY_new_raw_private_key(EVP_PKEY_X25519, nullptr, private_key.data(), private_key.size()));
  PkeyPtr peer(
      EVP_PKEY_new_raw_public_key(EVP_PKEY_X25519, nullptr, peer_public.data(), peer_public.size()));
  if (!priv || !peer) throw Error(Errc::InvalidShare, "malformed X25519 key share");
  PkeyCtxPtr ctx(EVP_PKEY_CTX_new(priv.get(), nullptr));
  if (!ctx || EVP_PKEY_derive_init(ctx.get()) != 1 ||
      EVP_PKEY_derive_set_peer(ctx.get(), peer.get()) != 1) {
    throw Error(Errc::InvalidShare, "X25519 peer rejected");
  }
  ByteArray<32> out{};
  std::size_t len = out.size();
  if (EVP_PKEY_derive(ctx.get(), out.data(), &len) != 1 || len != out.size()) {
    throw Error(Errc::InvalidShare, "X25519 derivation failed");
  }
  ByteArray<32> zero{};
  if (constant_time_equal(out, zero)) throw Error(Errc::InvalidShare, "low-order X25519 share");
  return out;
}

struct Aes256::Impl {
  CipherCtxPtr ctx;
};

Aes256::Aes256(const Key256& key) : impl_(std::make_unique<Impl>()) {
  impl_->ctx.reset(EVP_CIPHER_CTX_new());
  if (!impl_->ctx ||
      EVP_EncryptInit_ex(impl_->ctx.get(), EVP_aes_256_ecb(), nullptr, key.data(), nullptr) != 1) {
    openssl_failure("aes init");
  }
  EVP_CIPHER_CTX_set_padding(impl_->ctx.get(), 0);
}

Aes256::Aes256(Aes256&&) noexcept = default;
Aes256& Aes256::operator=(Aes256&&) noexcept = default;
Aes256::~Aes256() = default;

Block Aes256::encrypt_block(const Block& in) const {
  Block out{};
  int len = 0;
  if (EVP_EncryptUpdate(impl_->ctx.get(), out.data(), &len, in.data(), 16) != 1 || len != 16) {
    openssl_failure("aes block");
  }
  return out;
}

Bytes aes256gcm_seal(const Key256& key, const Nonce12& nonce, ByteView aad, ByteView plaintext) {
  CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
  if (!ctx || EVP_EncryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) != 1 ||
      EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, 12, nullptr) != 1 ||
      EVP_EncryptInit_ex(ctx.get(), nullptr, nullptr, key.data(), nonce.data()) != 1) {
    openssl_failure("gcm seal init");
  }
  int len = 0;
  if (!aad.empty() &&
      EVP_EncryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1) {
    openssl_failure("gcm aad");
  }
  Bytes out(plaintext.size() + 16);
  int written = 0;
  if (!plaintext.empty()) {
    if (EVP_EncryptUpdate(ctx.get(), out.data(), &len, plaintext.data(),
                          static_cast<int>(plaintext.size())) != 1) {
      openssl_failure("gcm update");
    }
    written = len;
  }
  if (EVP_EncryptFinal_ex(ctx.get(), out.data() + written, &len) != 1) openssl_failure("gcm final");
  written += len;
  if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_GET_TAG, 16, out.data() + written) != 1) {
    openssl_failure("gcm tag");
  }
  out.resize(static_cast<std::size_t>(written) + 16);
  return out;
}

std::optional<Bytes> aes256gcm_open(const Key256& key, const Nonce12& nonce, ByteView aad,
                                    ByteView ciphertext_and_tag) {
  if (ciphertext_and_tag.size() < 16) return std::nullopt;
  const std::size_t ct_len = ciphertext_and_tag.size() - 16;
  CipherCtxPtr ctx(EVP_CIPHER_CTX_new());
  if (!ctx || EVP_DecryptInit_ex(ctx.get(), EVP_aes_256_gcm(), nullptr, nullptr, nullptr) != 1 ||
      EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_IVLEN, 12, nullptr) != 1 ||
      EVP_DecryptInit_ex(ctx.get(), nullptr, nullptr, key.data(), nonce.data()) != 1) {
    openssl_failure("gcm open init");
  }
  int len = 0;
  if (!aad.empty() &&
      EVP_DecryptUpdate(ctx.get(), nullptr, &len, aad.data(), static_cast<int>(aad.size())) != 1) {
    return std::nullopt;
  }
  Bytes out(ct_len + 16);
  int written = 0;
  if (ct_len > 0) {
    if (EVP_DecryptUpdate(ctx.get(), out.data(), &len, ciphertext_and_tag.data(),
                          static_cast<int>(ct_len)) != 1) {
      return std::nullopt;
    }
    written = len;
  }
  Block tag{};
  std::copy(ciphertext_and_tag.end() - 16, ciphertext_and_tag.end(), tag.begin());
  if (EVP_CIPHER_CTX_ctrl(ctx.get(), EVP_CTRL_GCM_SET_TAG, 16, tag.data()) != 1) return std::nullopt;
  if (EVP_DecryptFinal_ex(ctx.get(), out.data() + written, &len) != 1) {
    secure_zero(out);
    return std::nullopt;
  }
  written += len;
  out.resize(static_cast<std::size_t>(written));
  return out;
}

}  // namespace itx::crypto
