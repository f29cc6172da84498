#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "itx/bytes.hpp"
#include "itx/frame_codec.hpp"

namespace itx {

// Fixed layout of every tile's private memory.
namespace tile_layout {
inline constexpr std::uint32_t kReservedSize = 4096;  // bootloader image + counters
inline constexpr std::uint32_t kEpochOffset = 4088;
inline constexpr std::uint32_t kCheckpointOffset = 4092;
inline constexpr std::uint32_t kBinaryOffset = 4096;
inline constexpr std::uint32_t kCodeFrameSize = 1024;
inline constexpr std::uint32_t kBinaryFrames = 4;
inline constexpr std::uint32_t kBinarySize = kBinaryFrames * (kCodeFrameSize - kFrameOverhead);
inline constexpr std::uint32_t kHeapOffset = 8192;
}  // namespace tile_layout

enum class LoadTarget : std::uint8_t { Input = 0, Checkpoint = 1 };
enum class StoreTarget : std::uint8_t { Output = 0, Checkpoint = 1, Metadata = 2 };
enum class ComputeOp : std::uint8_t { Sum = 0, Axpy = 1, SgdStep = 2 };

// Internal exchange executed when a barrier is released: copies `length`
// bytes from this tile to tiles dst_first .. dst_first+dst_count-1.
struct Move {
  std::uint32_t dst_first = 0;
  std::uint32_t dst_count = 1;
  std::uint32_t src_offset = 0;
  std::uint32_t src_stride = 0;
  std::uint32_t dst_offset = 0;
  std::uint32_t dst_stride = 0;
  std::uint32_t length = 0;
  bool operator==(const Move&) const = default;
};

struct SyncPhase {
  std::uint32_t sync_id = 0;
  std::vector<Move> moves;
  bool operator==(const SyncPhase&) const = default;
};

// Reads frame_count frames from `address`; bytes [skip, skip+length) of the
// concatenated payloads land at `dest`. Checkpoint loads restore the state
// region and the saved program counter instead.
struct LoadPhase {
  LoadTarget target = LoadTarget::Input;
  std::uint32_t stream_id = 0;
  std::uint64_t address = 0;
  std::uint32_t first_frame = 0;
  std::uint32_t frame_count = 0;
  std::uint32_t frame_size = 0;
  std::uint32_t skip = 0;
  std::uint32_t length = 0;
  std::uint32_t dest = 0;
  bool operator==(const LoadPhase&) const = default;
};

struct StorePhase {
  StoreTarget target = StoreTarget::Output;
  std::uint32_t stream_id = 0;
  std::uint64_t address = 0;
  std::uint32_t first_frame = 0;
  std::uint32_t frame_size = 0;
  std::uint32_t src = 0;
  std::uint32_t length = 0;
  std::uint32_t resume_pc = 0;  // checkpoint only
  Bytes immediate;              // metadata only
  bool operator==(const StorePhase&) const = default;
};

// SUM:      a0=dst a1=src a2=count a3=dim
// AXPY:     a0=y   a1=x   a3=dim  imm=alpha (Q16)
// SGD_STEP: a0=w   a1=samples a2=n a3=dim a4=grad
struct ComputePhase {
  ComputeOp op = ComputeOp::Sum;
  std::uint32_t a0 = 0, a1 = 0, a2 = 0, a3 = 0, a4 = 0;
  std::int32_t imm = 0;
  bool operator==(const ComputePhase&) const = default;
};

using Phase = std::variant<LoadPhase, ComputePhase, StorePhase, SyncPhase>;

struct TileProgram {
  std::uint32_t state_offset = tile_layout::kHeapOffset;
  std::uint32_t state_size = 0;
  std::uint32_t scratch_offset = 0;  // checkpoint restore buffer
  std::vector<Phase> resume;         // run first when the epoch counter is nonzero
  std::vector<Phase> body;

  Bytes encode() const;
  // Throws InvalidEncoding.
  static TileProgram decode(ByteView bytes);
  bool operator==(const TileProgram&) const = default;
};

// Header of a checkpoint blob: resume pc, state size, 8 reserved bytes.
inline constexpr std::uint32_t kCheckpointHeader = 16;
std::uint32_t checkpoint_blob_size(const TileProgram& p);

// Q16 fixed-point kernels over little-endian int32 tile memory. Throws
// IndexOutOfRange when an operand leaves the memory.
void execute_compute(std::span<std::uint8_t> memory, const ComputePhase& op);

std::int32_t q16_wrap(std::int64_t v);

}  // namespace itx
