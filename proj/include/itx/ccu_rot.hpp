#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "itx/attestation.hpp"
#include "itx/bytes.hpp"
#include "itx/certificate.hpp"
#include "itx/crypto.hpp"
#include "itx/ipu_device.hpp"
#include "itx/manifest.hpp"

namespace itx {

Digest measure(ByteView image);

// Message the firmware signing key signs for a secondary bootloader image.
Bytes firmware_signing_message(ByteView secondary_bootloader);

struct FirmwareBundle {
  Bytes secondary_bootloader;
  crypto::Signature sbl_signature{};
  Bytes cce_image;
  Digest icu_measurement{};

  Digest sbl_measurement() const { return measure(secondary_bootloader); }
  Digest cce_measurement() const { return measure(cce_image); }
};

// Contents of the primary bootloader image injected at provisioning.
struct PrimaryBootloader {
  crypto::PublicKey firmware_signing_key{};
  ByteArray<32> batch_secret{};
  std::uint32_t batch = 0;
  std::string device_info;
  ByteArray<32> provisioning_nonce{};  // echoed in the harvested manifest
};

inline constexpr std::uint64_t kNoExpiry = 0xffffffffffffULL;

struct BootResult {
  crypto::PublicKey cik_public_key{};
  crypto::PublicKey pik_public_key{};
  crypto::PublicKey ak_public_key{};
  std::vector<Certificate> chain;  // CIK (self-signed), PIK (by CIK), AK (by PIK)
  std::optional<PikEndorsement> pik_endorsement;
  Digest sbl_measurement{};
  Digest icu_measurement{};
  Digest cce_measurement{};
};

// What the secondary bootloader stage can reach. In the hardened variant the
// CIK private key is gone before this stage starts.
class SecondaryStage {
 public:
  const crypto::PublicKey& cik_public_key() const { return cik_public_; }
  bool has_cik_private_key() const { return cik_.has_value(); }
  crypto::Signature sign_with_cik(ByteView message) const;

 private:
  friend class Ccu;
  crypto::PublicKey cik_public_{};
  std::optional<crypto::SigningKey> cik_;
};

enum class TeePhase { NoTee, Initialized, Launched, Terminated };
const char* to_string(TeePhase p);

// Host runtime callback used during launch to place a boot round's code
// frames in the ring buffer.
using HostStager = std::function<void(const SyncPoint&)>;

class Ccu {
 public:
  Ccu(Device& device, PrimaryBootloader rom, crypto::EntropySource entropy = crypto::system_entropy());
  Ccu(const Ccu&) = delete;
  Ccu& operator=(const Ccu&) = delete;

  // Provisioning: samples and persists the device secret.
  void first_boot();
  bool provisioned() const;

  // Simulated flash persistence (used by the CLI between invocations).
  void save_flash(const std::string& path) const;
  void load_flash(const std::string& path);

  BootResult measured_boot(const FirmwareBundle& fw, const std::function<void(SecondaryStage&)>& hook = {});
  BootResult measured_boot_hardened(const FirmwareBundle& fw,
                                    const std::function<void(SecondaryStage&)>& hook = {});
  const BootResult& identity() const;
  bool booted() const { return identity_.has_value(); }

  // Supply-chain harvesting, answered by the primary bootloader.
  BootloaderManifest harvest_bootloader_manifest() const;
  static crypto::PublicKey batch_public_key(const ByteArray<32>& batch_secret);

  AttestationReport tee_init(const JobManifest& manifest, const std::vector<PartyCredential>& parties,
                             std::uint32_t epoch, std::uint32_t checkpoint_id);
  void tee_launch(const std::map<std::string, Bytes>& wrapped_packages, const HostStager& stage);
  void tee_load_keys(std::uint32_t sync_point);
  void tee_terminate(const std::string& reason);

  // Model key for a designated receiver, wrapped under its w_p.
  Bytes release_model_key(const std::string& party);

  TeePhase phase() const { return phase_; }
  const std::string& termination_reason() const { return termination_reason_; }
  const std::vector<std::string>& log() const { return log_; }

  // Serialized reachable CCU RAM (for hygiene inspection).
  Bytes debug_state_snapshot() const;

 private:
  struct TeeState {
    JobManifest manifest;
    std::vector<PartyCredential> parties;
    crypto::KeyShare y;
    std::uint32_t epoch = 0;
    std::uint32_t checkpoint_id = 0;
    std::map<std::uint32_t, crypto::Key256> stream_keys;
    std::map<std::string, crypto::Key256> wrapping_keys;
    std::optional<crypto::Key256> k_load;
    crypto::Key256 k_save{};
    crypto::Key256 k_m{};
    void wipe();
  };

  BootResult boot(const FirmwareBundle& fw, const std::function<void(SecondaryStage&)>& hook, bool hardened);
  void on_security_exception(const std::string& detail);
  void on_device_reset(ResetKind kind);
  void terminate_locked(const std::string& reason);
  void load_keys_locked(const SyncPoint& sp);
  const crypto::Key256& key_for(const KeyRef& ref) const;
  void note(std::string line);

  Device& device_;
  PrimaryBootloader rom_;
  crypto::EntropySource entropy_;
  mutable std::recursive_mutex mu_;

  std::optional<ByteArray<32>> uds_;  // flash vault
  std::optional<crypto::SigningKey> ak_;
  std::optional<BootResult> identity_;

  TeePhase phase_ = TeePhase::NoTee;
  std::optional<TeeState> tee_;
  std::string termination_reason_;
  std::vector<std::string> log_;
};

// A device and its CCU wired together: security exceptions and host resets
// reach the CCU.
struct Board {
  Board(DeviceConfig cfg, std::uint32_t ipu_id, PrimaryBootloader rom,
        crypto::EntropySource entropy = crypto::system_entropy())
      : device(cfg, ipu_id), ccu(device, std::move(rom), std::move(entropy)) {}
  Device device;
  Ccu ccu;
};

}  // namespace itx
