#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "itx/job_pipeline.hpp"

namespace itx {

// Default toy job: one model owner, two data parties, SGD on 16 tiles.
JobDescription toy_job();

// Deterministic Q16 samples for `rows` rows of a dim-feature linear model.
Bytes synthetic_samples(std::uint32_t dim, std::uint64_t rows, std::uint64_t seed);
Bytes synthetic_weights(std::uint32_t dim, std::uint64_t seed);

// One to three mitigated host actions with random targets, drawn from the
// streams, frames, tiles and sync points of `inputs`.
AdversaryScript random_schedule(const RunInputs& inputs, std::uint64_t seed);

struct ScenarioOptions {
  DeviceConfig device;
  JobDescription job = toy_job();
  std::uint64_t seed = 1;
  bool hardened_boot = false;
  std::string device_info = "ipu-0001";
  std::uint32_t batch = 7;
};

// A manufactured, provisioned and certified board plus the parties and
// packaged inputs of one job.
class Scenario {
 public:
  explicit Scenario(ScenarioOptions options = {});

  ScenarioOptions options;
  Manufacturer manufacturer;
  PartyAuthority authority;
  FirmwareBundle firmware;
  std::unique_ptr<Board> board;
  BootResult boot;
  DeviceCertificates certificates;
  DeviceEvidence evidence;
  VerifierPolicy policy;

  CompiledJob job;
  std::map<std::string, PartyIdentity> identities;
  std::map<std::string, PartySecrets> secrets;
  Bytes initial_weights;
  std::vector<Bytes> party_data;  // per data party, in job order
  ApplicationPackage application;
  std::map<std::uint32_t, DataPackage> data;

  std::vector<std::string> party_names() const { return job.manifest.parties; }
  std::vector<std::uint32_t> tiles_per_party() const;

  RunInputs trusted_inputs() const;
  RunInputs normal_inputs() const;
  std::vector<RunParty> run_parties();

  RunResult run_trusted(const RunOptions& options = {}, EventLog* log = nullptr,
                        const std::optional<CheckpointSet>& checkpoint = std::nullopt);
  RunResult run_normal(const RunOptions& options = {}, EventLog* log = nullptr);
  // Trusted run over caller-assembled inputs.
  RunResult run_with(const RunInputs& inputs, const RunOptions& options = {}, EventLog* log = nullptr);

  // Code of a variant job (different learning rate) encrypted under the
  // genuine code key: what a host holding an older release could present.
  std::vector<StreamFile> alternate_code(std::int32_t learning_rate) const;

  // Model bytes recovered by the first receiver from a trusted result.
  std::optional<Bytes> model_of(const RunResult& result) const;
  Bytes clear_model_of(const RunResult& result) const;
  Bytes reference_model() const;

  // Fresh key shares and run nonces for every party.
  void new_sessions(bool keep_prior_nonce);

  // Installs new secondary-bootloader firmware and reboots the CCU.
  void update_secondary_bootloader(Bytes image);

 private:
  void certify_board();
};

}  // namespace itx
