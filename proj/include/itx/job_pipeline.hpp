#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "itx/attestation.hpp"
#include "itx/ccu_rot.hpp"
#include "itx/frame_codec.hpp"
#include "itx/ipu_device.hpp"
#include "itx/manifest.hpp"
#include "itx/party_pki.hpp"
#include "itx/tile_program.hpp"

namespace itx {

// ------------------------------------------------------------------ compile

// Data-parallel linear-regression training in Q16 fixed point. Each data
// party's samples are (dim features, label) rows of little-endian int32.
struct JobDescription {
  std::string job = "job";
  std::string model_party;
  std::vector<std::string> data_parties;
  std::vector<std::string> model_receivers;
  std::uint32_t dim = 4;
  std::uint32_t batch_per_tile = 2;
  std::uint32_t steps = 4;
  std::int32_t learning_rate = 1 << 12;  // Q16
  std::uint32_t checkpoint_every = 0;    // steps; 0 disables checkpoints
  std::uint32_t frame_size = 1024;

  std::uint32_t sample_bytes() const { return (dim + 1) * 4; }
  std::string to_json() const;
  static JobDescription from_json(const std::string& text);
};

struct CompiledJob {
  JobDescription description;
  JobManifest manifest;
  std::vector<TileProgram> programs;
  std::vector<Bytes> binaries;  // padded to the binary region size
  std::map<std::string, std::vector<std::uint32_t>> party_tiles;
};

// Throws ScheduleInfeasible or InvalidArgument.
CompiledJob compile(const JobDescription& job, const DeviceConfig& device, std::uint32_t ipu_id = 0);

// ---------------------------------------------------------------- packaging

struct PartyIdentity {
  std::string name;
  crypto::SigningKey key = crypto::SigningKey::generate();
  Certificate certificate;
};

// Clean-room secrets of one party. Stream keys persist across runs; the key
// share and run nonce are per run.
struct PartySecrets {
  std::string party;
  std::map<std::uint32_t, crypto::Key256> stream_keys;
  crypto::KeyShare share;
  RunNonce run_nonce{};
  std::optional<RunNonce> prior_run_nonce;

  // Fresh share and nonce for a new run; the old nonce becomes the prior one.
  void new_session(bool keep_prior_nonce);
  Bytes encode() const;
  static PartySecrets decode(ByteView bytes);
};

struct ApplicationPackage {
  JobManifest manifest;
  std::vector<StreamFile> code;  // one per tile
  StreamFile weights;
  PartyCredential credential;
};

struct DataPackage {
  std::uint32_t stream_id = 0;
  StreamFile data;
  PartyCredential credential;
};

ApplicationPackage package_model(const CompiledJob& job, ByteView initial_weights, const PartyIdentity& party,
                                 PartySecrets& secrets, const std::optional<crypto::Key256>& code_key = std::nullopt);
DataPackage package_data(const JobManifest& manifest, std::uint32_t stream_id, ByteView data,
                         const PartyIdentity& party, PartySecrets& secrets);

// Code frames without encryption, for Normal-mode runs.
std::vector<StreamFile> clear_code(const CompiledJob& job);
StreamFile clear_stream(const StreamIV& tmpl, ByteView data, std::uint32_t frame_size);

PartyCredential session_credential(const PartyIdentity& party, const PartySecrets& secrets);
KeyPackage key_package(const PartySecrets& secrets);

// ------------------------------------------------------------- adversaries

struct AdversaryAction {
  enum class Kind {
    TamperFrame,       // stream, index, bit
    ReplayFrame,       // stream, index <- source
    ReorderFrames,     // stream, index <-> source
    SwapStreams,       // stream <-> source (as stream ids)
    SwapTileBinaries,  // tile index <-> tile source
    SwapBinary,        // whole code stream from the alternate package
    SkipKeyLoad,       // sync
    SubstituteCheckpoint,  // tile index <- tile source
    TamperRegister,    // host calls guarded op `op` at sync
    EditManifest,      // host presents a manifest with sync's mappings moved by delta
    TrafficAnalysis,   // observe only: record link sizes
  };
  Kind kind = Kind::TamperFrame;
  std::uint32_t stream = 0;
  std::uint64_t index = 0;
  std::uint64_t source = 0;
  std::uint32_t bit = 0;
  std::uint32_t sync = 0;
  std::int64_t delta = 0;
  std::string op;
};
const char* to_string(AdversaryAction::Kind k);

struct AdversaryScript {
  std::vector<AdversaryAction> actions;
  std::string to_json() const;
  static AdversaryScript from_json(const std::string& text);
  // Threat-model classification: true when the action must abort the run.
  static bool mitigated(AdversaryAction::Kind k);
};

// --------------------------------------------------------------- event log

// Line format: "<seq> <actor> <EVENT> key=value ..."
class EventLog {
 public:
  void add(const std::string& actor, const std::string& event, const std::string& fields = {});
  const std::vector<std::string>& lines() const { return lines_; }
  std::vector<std::string> find(const std::string& event) const;
  std::string text() const;

 private:
  std::vector<std::string> lines_;
};

// Keys must only follow an Accept verdict from the same party, and no key
// leaves any party once any party rejected.
bool key_release_ordered(const EventLog& log);

// ----------------------------------------------------------------- runtime

struct CheckpointSet {
  std::uint32_t epoch = 0;
  std::uint32_t checkpoint_id = 0;
  std::vector<Bytes> tiles;  // raw frames per tile
  Bytes encode() const;
  static CheckpointSet decode(ByteView bytes);
};

struct RunInputs {
  JobManifest manifest;
  std::vector<StreamFile> code;
  std::map<std::uint32_t, StreamFile> streams;
  std::vector<StreamFile> alternate_code;
  std::optional<CheckpointSet> checkpoint;
};

struct RunOptions {
  DeviceMode mode = DeviceMode::Trusted;
  AdversaryScript adversary;
  // Host kills the job after this many checkpoint sets were collected.
  std::optional<std::uint32_t> stop_after_checkpoints;
};

struct RunResult {
  bool completed = false;
  bool killed = false;
  std::optional<Errc> abort_code;
  std::string abort_reason;
  std::optional<RejectReason> rejected;  // first party verdict that stopped the run
  std::optional<StreamFile> model;  // encrypted under k_m (trusted) or clear frames (normal)
  std::vector<CheckpointSet> checkpoints;
  std::map<std::string, Bytes> released_model_keys;  // party -> wrapped k_m
  AttestationReport report;
};

// What a simulated party needs to judge evidence.
struct VerifierPolicy {
  TrustAnchors anchors;
  CaBundle cas;
  std::vector<TcbUpdateCertificate> tcb_updates;
  std::vector<Digest> trusted_cce;
  std::uint64_t now = 0;
};

struct DeviceEvidence {
  std::vector<Certificate> device_chain;
  Certificate ca_cik_certificate;
  std::optional<PikEndorsement> pik_endorsement;
};

ExpectedRun expected_run(const JobManifest& manifest, const std::vector<Certificate>& party_certs,
                         std::uint32_t epoch, std::uint32_t checkpoint_id, const VerifierPolicy& policy);

// A party taking part in a run. Its secrets stay on its side; only the
// credential and the wrapped key package cross to the host.
struct RunParty {
  PartyIdentity* identity = nullptr;
  PartySecrets* secrets = nullptr;
  VerifierPolicy policy;
  // Certificate fingerprints this party expects to see; defaults to the
  // certificates presented in the run.
  std::optional<std::vector<Certificate>> expected_parties;
  std::optional<Digest> expected_manifest;
};

// Full offline-mode flow on a trusted board, or the clear reference flow
// when options.mode is Normal (parties are then not consulted).
RunResult run_job(Board& board, const RunInputs& inputs, std::vector<RunParty>& parties, const DeviceEvidence& evidence,
                  const RunOptions& options, EventLog& log);

Bytes decrypt_model(const StreamFile& model, const crypto::Key256& k_m, std::uint64_t length);
Bytes clear_model(const StreamFile& model, std::uint64_t length);

// Party-side recovery of k_m: via the CCU-released wrapped key or the
// exchanged run nonces.
std::optional<crypto::Key256> receive_model_key(const PartySecrets& receiver, const AttestationReport& report,
                                                ByteView wrapped);

// Reference SGD computed directly on the host, independent of the tile
// programs and schedule.
Bytes reference_training(const JobDescription& job, ByteView initial_weights,
                         const std::vector<Bytes>& party_data, const std::vector<std::uint32_t>& tiles_per_party);

}  // namespace itx
