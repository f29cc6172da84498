#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "itx/bytes.hpp"
#include "itx/certificate.hpp"
#include "itx/crypto.hpp"

namespace itx {

struct RunAttributes {
  crypto::PublicKey ccu_share{};
  std::uint32_t epoch = 0;
  std::uint32_t checkpoint_id = 0;
  std::map<std::string, std::string> party_fingerprints;  // party -> hex fingerprint
  std::map<std::uint32_t, std::string> stream_assignment;  // input stream -> party
  std::vector<std::string> model_receivers;

  Bytes encode() const;
  Digest digest() const;
  bool operator==(const RunAttributes&) const = default;
};

struct AttestationReport {
  Digest register_measurement{};
  std::vector<std::string> measured_registers;
  Digest bootloader_measurement{};
  Digest manifest_measurement{};
  RunAttributes attributes;
  Digest run_attributes_digest{};
  crypto::Signature signature{};

  // Signed bytes: every field except the signature; attributes enter only
  // through their digest.
  Bytes tbs() const;
  Bytes encode() const;
  static AttestationReport decode(ByteView bytes);
  bool operator==(const AttestationReport&) const = default;
};

using RunNonce = ByteArray<32>;

// Secrets a party hands to the CCU for one run.
struct KeyPackage {
  std::vector<std::pair<std::uint32_t, crypto::Key256>> streams;
  RunNonce run_nonce{};
  std::optional<RunNonce> prior_run_nonce;

  Bytes encode() const;
  static KeyPackage decode(ByteView bytes);
  bool operator==(const KeyPackage&) const = default;
};

// Party credential presented at TEE creation.
struct PartyCredential {
  Certificate certificate;
  crypto::PublicKey share{};
  crypto::Signature share_signature{};
};

Bytes share_signing_message(const crypto::PublicKey& share);

// w_p = HKDF(ECDH secret, salt = X_p || Y || H(M)).
crypto::Key256 wrapping_key(const ByteArray<32>& shared_secret, const crypto::PublicKey& party_share,
                            const crypto::PublicKey& ccu_share, const Digest& manifest_hash);

Bytes wrap_key_package(const crypto::Key256& w, const KeyPackage& pkg, const crypto::Nonce12& nonce);
std::optional<KeyPackage> unwrap_key_package(const crypto::Key256& w, ByteView wrapped);

Bytes wrap_model_key(const crypto::Key256& w, const crypto::Key256& k_m, const crypto::Nonce12& nonce);
std::optional<crypto::Key256> unwrap_model_key(const crypto::Key256& w, ByteView wrapped);

// Nonces keyed by party certificate fingerprint; concatenated in fingerprint
// order and fed to the KDF with the given label ("ck" or "m").
crypto::Key256 derive_run_key(const std::vector<std::pair<Digest, RunNonce>>& nonces, std::string_view label);

}  // namespace itx
