#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "itx/attestation.hpp"
#include "itx/ccu_rot.hpp"
#include "itx/certificate.hpp"
#include "itx/crypto.hpp"

namespace itx {

// Root material a relying party pins.
struct TrustAnchors {
  crypto::PublicKey cik_ca{};
  crypto::PublicKey pik_ca{};
  crypto::PublicKey firmware_ca{};
};

// What the manufacturer publishes: CA certificates and the current CRL.
struct CaBundle {
  Certificate cik_ca;
  Certificate pik_ca;
  Certificate firmware_ca;
  RevocationList crl;

  Bytes encode() const;
  static CaBundle decode(ByteView bytes);
};

struct DeviceCertificates {
  Certificate cik;  // issued by the CIK CA; carries factory firmware measurements
  Certificate pik;  // issued by the PIK CA
};

class Manufacturer {
 public:
  // Deterministic when `seed` is given (CA keys and batch secrets derive from it).
  explicit Manufacturer(std::optional<ByteArray<32>> seed = std::nullopt);

  TrustAnchors anchors() const;
  CaBundle ca_bundle() const;
  const crypto::PublicKey& firmware_signing_public_key() const { return fw_signer_.public_key(); }

  // Provisioning: primary bootloader image for one device of a batch, with a
  // fresh expected nonce.
  PrimaryBootloader provision(std::uint32_t batch, const std::string& device_info);
  crypto::Signature sign_firmware(ByteView secondary_bootloader) const;
  FirmwareBundle firmware_bundle(Bytes secondary_bootloader, Bytes cce_image, const Digest& icu_measurement) const;

  // Throws SupplyChainReject.
  DeviceCertificates certify(const std::vector<Certificate>& csr_chain, const BootloaderManifest& manifest,
                             const ByteArray<32>& expected_nonce);
  std::optional<ByteArray<32>> expected_nonce(const std::string& device_info) const;

  TcbUpdateCertificate issue_tcb_update(FirmwareComponent component, const Digest& old_measurement,
                                        const Digest& new_measurement, bool revoke_old);
  void revoke_serial(std::uint64_t serial);
  void revoke_measurement(const Digest& measurement);

  void set_validity(std::uint64_t not_after) { not_after_ = not_after; }
  const std::vector<Certificate>& issued() const { return issued_; }

 private:
  crypto::SigningKey cik_ca_, pik_ca_, fw_ca_, fw_signer_;
  Certificate cik_ca_cert_, pik_ca_cert_, fw_ca_cert_;
  std::map<std::uint32_t, ByteArray<32>> batch_secrets_;
  std::map<std::string, ByteArray<32>> nonces_;
  std::vector<Certificate> issued_;
  std::vector<TcbUpdateCertificate> tcb_issued_;
  RevocationList crl_;
  std::uint64_t next_serial_ = 100;
  std::uint64_t not_after_ = kNoExpiry;
  std::optional<ByteArray<32>> seed_;
  std::uint64_t draws_ = 0;
  ByteArray<32> draw(std::string_view label);
};

// Issues party identity certificates.
class PartyAuthority {
 public:
  explicit PartyAuthority(std::optional<ByteArray<32>> seed = std::nullopt);
  Certificate issue(const std::string& party, const crypto::PublicKey& key, std::uint64_t not_after = kNoExpiry);
  const Certificate& root() const { return root_; }
  const crypto::SigningKey& key() const { return key_; }

 private:
  crypto::SigningKey key_;
  Certificate root_;
  std::uint64_t next_serial_ = 1;
};

enum class RejectReason {
  CaCertificate,
  ChainSignature,
  Revoked,
  Expired,
  CikMismatch,
  RevokedMeasurement,
  BootloaderTcb,
  IcuTcb,
  PikEndorsement,
  CceMeasurement,
  ReportSignature,
  RunAttributesDigest,
  RegisterMeasurement,
  BootloaderMeasurement,
  Manifest,
  Epoch,
  CheckpointId,
  PartyFingerprints,
  StreamAssignment,
  ModelReceivers,
};
const char* to_string(RejectReason r);

struct Verdict {
  bool accept = false;
  std::optional<RejectReason> reason;
  std::string detail;

  static Verdict ok() { return {true, std::nullopt, {}}; }
  static Verdict reject(RejectReason r, std::string d) { return {false, r, std::move(d)}; }
};

struct AttestationEvidence {
  AttestationReport report;
  std::vector<Certificate> device_chain;  // CIK self, PIK by CIK, AK by PIK
  Certificate ca_cik_certificate;
  std::optional<PikEndorsement> pik_endorsement;
};

struct ExpectedRun {
  Digest manifest_hash{};
  Digest bootloader_measurement{};
  Digest register_measurement{};
  std::vector<std::string> measured_registers;
  std::vector<Digest> trusted_cce_measurements;
  std::uint32_t epoch = 0;
  std::uint32_t checkpoint_id = 0;
  std::map<std::string, std::string> party_fingerprints;
  std::map<std::uint32_t, std::string> stream_assignment;
  std::vector<std::string> model_receivers;
  std::uint64_t now = 0;
};

Verdict verify_attestation(const AttestationEvidence& evidence, const TrustAnchors& anchors, const CaBundle& cas,
                           const std::vector<TcbUpdateCertificate>& tcb_updates, const ExpectedRun& expected);

// Party side of the key exchange.
PartyCredential make_party_credential(const Certificate& cert, const crypto::SigningKey& identity,
                                      const crypto::PublicKey& share);
crypto::Key256 party_wrapping_key(const crypto::KeyShare& x, const crypto::PublicKey& ccu_share,
                                  const Digest& manifest_hash);
Bytes party_wrap_keys(const crypto::KeyShare& x, const crypto::PublicKey& ccu_share, const Digest& manifest_hash,
                      const KeyPackage& package, const crypto::Nonce12& nonce);
std::optional<crypto::Key256> party_unwrap_model_key(const crypto::KeyShare& x, const crypto::PublicKey& ccu_share,
                                                     const Digest& manifest_hash, ByteView wrapped);
crypto::Key256 derive_model_key(const std::vector<std::pair<Digest, RunNonce>>& nonces);
crypto::Key256 derive_checkpoint_key(const std::vector<std::pair<Digest, RunNonce>>& nonces);

}  // namespace itx
