#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "itx/bytes.hpp"
#include "itx/crypto.hpp"

namespace itx {

// Canonical text encoding: JSON with sorted keys, no whitespace, binary
// values as lowercase hex.
std::string issuer_id_of(const crypto::PublicKey& issuer_public_key);

struct Certificate {
  std::string kind;     // CA, CIK, PIK, AK, PARTY, BATCH
  std::string subject;
  crypto::PublicKey subject_public_key{};
  std::string issuer_id;
  std::uint64_t serial = 0;
  std::uint64_t not_after = 0;
  std::map<std::string, std::string> extensions;
  crypto::Signature signature{};

  Bytes tbs() const;
  Bytes encode() const;
  static Certificate decode(ByteView bytes);
  Digest fingerprint() const;
  std::string fingerprint_hex() const;

  bool signed_by(const crypto::PublicKey& issuer) const;
  void sign(const crypto::SigningKey& issuer);

  std::string ext(const std::string& name) const;
  bool operator==(const Certificate&) const = default;
};

Certificate make_certificate(const std::string& kind, const std::string& subject, const crypto::PublicKey& subject_key,
                             const crypto::SigningKey& issuer, std::uint64_t serial, std::uint64_t not_after,
                             std::map<std::string, std::string> extensions = {});

// Extension names used across the stack.
namespace ext {
inline constexpr const char* kSblMeasurement = "sbl_measurement";
inline constexpr const char* kIcuMeasurement = "icu_measurement";
inline constexpr const char* kCceMeasurement = "cce_measurement";
inline constexpr const char* kDeviceInfo = "device_info";
inline constexpr const char* kBatch = "batch";
}  // namespace ext

enum class FirmwareComponent { SecondaryBootloader, IcuFirmware };
const char* to_string(FirmwareComponent c);

struct TcbUpdateCertificate {
  FirmwareComponent component = FirmwareComponent::SecondaryBootloader;
  Digest old_measurement{};
  Digest new_measurement{};
  std::uint64_t serial = 0;
  std::string issuer_id;
  crypto::Signature signature{};

  Bytes tbs() const;
  Bytes encode() const;
  static TcbUpdateCertificate decode(ByteView bytes);
  bool signed_by(const crypto::PublicKey& issuer) const;
};

struct RevocationList {
  std::uint64_t sequence = 0;
  std::vector<std::uint64_t> revoked_serials;
  std::vector<Digest> revoked_measurements;
  std::string issuer_id;
  crypto::Signature signature{};

  Bytes tbs() const;
  Bytes encode() const;
  static RevocationList decode(ByteView bytes);
  bool signed_by(const crypto::PublicKey& issuer) const;
  bool serial_revoked(std::uint64_t serial) const;
  bool measurement_revoked(const Digest& m) const;
};

// Signed by the batch key held in the primary bootloader; echoes the
// harvesting nonce.
struct BootloaderManifest {
  std::uint32_t batch = 0;
  ByteArray<32> nonce{};
  crypto::PublicKey cik_public_key{};
  crypto::PublicKey pik_public_key{};
  Digest sbl_measurement{};
  Digest icu_measurement{};
  crypto::Signature signature{};

  Bytes tbs() const;
  Bytes encode() const;
  static BootloaderManifest decode(ByteView bytes);
};

// Hardened boot: CIK signature over PIK public key and the secondary
// bootloader measurement.
struct PikEndorsement {
  crypto::PublicKey pik_public_key{};
  Digest sbl_measurement{};
  crypto::Signature signature{};

  Bytes tbs() const;
  bool verify(const crypto::PublicKey& cik_public_key) const;
};

}  // namespace itx
