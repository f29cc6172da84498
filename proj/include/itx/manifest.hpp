#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "itx/bytes.hpp"
#include "itx/frame_codec.hpp"
#include "itx/sxp_engine.hpp"

namespace itx {

struct DeviceConfig {
  std::uint32_t tile_count = 16;
  std::uint32_t tile_memory = 64 * 1024;
  std::uint32_t sxp_lanes = 1;
  std::uint32_t tiles_per_exchange_context = 4;
  std::uint64_t ring_buffer_size = 1 << 20;

  std::uint32_t exchange_contexts() const {
    return (tile_count + tiles_per_exchange_context - 1) / tiles_per_exchange_context;
  }
  std::uint32_t lane_of_exchange_context(std::uint32_t ebc) const { return ebc % sxp_lanes; }
  std::uint32_t lane_of_tile(std::uint32_t tile) const {
    return lane_of_exchange_context(tile / tiles_per_exchange_context);
  }

  // Throws InvalidArgument.
  void validate() const;
  std::string to_json() const;
  static DeviceConfig from_json(const std::string& text);
  bool operator==(const DeviceConfig&) const = default;
};

enum class StreamKind : std::uint8_t { Code, Input, Checkpoint, Output };
const char* to_string(StreamKind k);

inline constexpr std::uint32_t kCodeStreamId = 0;
inline constexpr std::uint32_t kWeightsStreamId = 1;
inline constexpr std::uint32_t kFirstDataStreamId = 2;
inline constexpr std::uint32_t kModelStreamId = 0x100;
inline constexpr std::uint32_t kCheckpointStreamId = 0xffff;

struct StreamEntry {
  std::uint32_t stream_id = 0;
  std::string party;  // owner; empty for device-produced streams
  StreamKind kind = StreamKind::Input;
  std::uint64_t plaintext_length = 0;  // per tile for code and checkpoints
  std::uint32_t frame_total_size = kDefaultFrameSize;
  bool operator==(const StreamEntry&) const = default;
};

// Which key a context receives.
struct KeyRef {
  enum class Kind : std::uint8_t { Stream, CheckpointLoad, CheckpointSave, Model };
  Kind kind = Kind::Stream;
  std::uint32_t stream_id = 0;
  bool operator==(const KeyRef&) const = default;
};
std::string to_string(const KeyRef& k);

struct KeyLoad {
  std::uint32_t lane = 0;
  std::uint32_t ctx = 0;
  KeyRef key;
  bool operator==(const KeyLoad&) const = default;
};

enum class MappingKind : std::uint8_t { CodeLoad, InputLoad, CheckpointLoad, CheckpointStore, OutputStore, MetadataStore };
const char* to_string(MappingKind k);

// A window of one stream placed at a ring-buffer address for one superstep.
struct Mapping {
  MappingKind kind = MappingKind::InputLoad;
  std::uint32_t stream_id = 0;
  std::uint32_t tile = 0;
  std::uint32_t region = 0;
  std::uint64_t address = 0;
  std::uint64_t first_frame = 0;
  std::uint32_t frame_count = 0;
  std::uint32_t frame_size = 0;
  bool operator==(const Mapping&) const = default;
};

struct SyncPoint {
  std::uint32_t id = 0;
  std::string label;
  bool boot = false;         // executed inside tee_launch
  bool resume_only = false;  // only reached when restoring a checkpoint
  std::vector<SxpRegisters> registers;  // one per lane
  std::vector<KeyLoad> key_loads;
  std::vector<Mapping> mappings;
  bool operator==(const SyncPoint&) const = default;
};

struct JobManifest {
  std::string job;
  DeviceConfig device;
  std::uint32_t ipu_id = 0;
  Digest binary_hash{};
  std::vector<Digest> tile_binary_hashes;
  Digest bootloader_measurement{};
  std::vector<StreamEntry> streams;
  std::vector<std::string> parties;
  std::map<std::uint32_t, std::string> stream_assignment;  // input stream -> party
  std::vector<std::string> model_receivers;
  std::vector<KeyLoad> egress_keys;  // programmed at launch, never changed
  std::vector<SyncPoint> sync_points;

  Bytes encode() const;
  static JobManifest decode(ByteView bytes);
  Digest measurement() const;

  // Throws InvalidSyncPoint.
  const SyncPoint& sync(std::uint32_t id) const;
  const StreamEntry& stream(std::uint32_t id) const;
  std::vector<std::uint32_t> streams_of(const std::string& party) const;

  // Structural checks on the key plan; throws ScheduleInfeasible.
  void validate() const;
  bool operator==(const JobManifest&) const = default;
};

}  // namespace itx
