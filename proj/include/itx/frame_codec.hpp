#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "itx/bytes.hpp"
#include "itx/crypto.hpp"

namespace itx {

enum class StreamType : std::uint8_t { Code = 0, Data = 1, Checkpoint = 2, Output = 3 };

const char* to_string(StreamType t);

inline constexpr std::size_t kIvSize = 12;
inline constexpr std::size_t kIvBlockSize = 16;
inline constexpr std::size_t kTagSize = 16;
inline constexpr std::size_t kFrameOverhead = kIvBlockSize + kTagSize;
inline constexpr std::size_t kMaxFrameSize = 1024;
inline constexpr std::size_t kFrameGranule = 128;
inline constexpr std::size_t kDefaultFrameSize = 1024;

// Structured 96-bit nonce. Fields are held wider than their wire width so
// out-of-range values can be reported instead of silently truncated.
struct StreamIV {
  StreamType type = StreamType::Code;
  std::uint32_t stream_id = 0;      // 16 bits
  std::uint32_t ipu_id = 0;         // 8 bits
  std::uint32_t tile_id = 0;        // 16 bits
  std::uint32_t epoch = 0;          // 8 bits
  std::uint32_t checkpoint_id = 0;  // 8 bits
  std::uint64_t frame_index = 0;    // 32 bits

  static StreamIV code(std::uint32_t ipu, std::uint32_t tile);
  static StreamIV data(std::uint32_t stream_id);
  static StreamIV output(std::uint32_t stream_id);
  static StreamIV checkpoint(std::uint32_t ipu, std::uint32_t tile, std::uint32_t epoch,
                             std::uint32_t checkpoint_id);

  // Throws InvalidIvField on width overflow or a nonzero unused field.
  void validate() const;
  ByteArray<kIvSize> serialize() const;
  ByteArray<kIvBlockSize> block() const;
  static StreamIV parse(ByteView twelve_bytes);

  bool operator==(const StreamIV&) const = default;
};

StreamIV compose_iv(const StreamIV& tmpl, std::uint64_t frame_index);

struct StreamKey {
  crypto::Key256 key{};
  StreamIV binding{};
  static StreamKey generate(const StreamIV& binding);
};

struct Frame {
  ByteArray<kIvBlockSize> iv_block{};
  Bytes ciphertext;
  ByteArray<kTagSize> tag{};

  std::size_t size() const { return kFrameOverhead + ciphertext.size(); }
  Bytes serialize() const;
  // Structural parse only; throws InvalidFrame.
  static Frame parse(ByteView wire);
};

void check_frame_size(std::size_t frame_total_size);
std::size_t payload_size(std::size_t frame_total_size);
std::size_t frame_count(std::size_t plaintext_length, std::size_t frame_total_size);

std::vector<Bytes> partition(ByteView plaintext, std::size_t frame_total_size);

Frame encrypt_frame(const crypto::Key256& key, const StreamIV& iv, ByteView payload);
Frame encrypt_frame_raw(const crypto::Key256& key, const ByteArray<kIvSize>& iv, ByteView payload);

// Authenticates and decrypts; IV matching is left to the caller.
std::pair<StreamIV, Bytes> decrypt_frame(const crypto::Key256& key, const Frame& frame);
Bytes decrypt_frame_raw(const crypto::Key256& key, const Frame& frame);

std::vector<Frame> encrypt_stream(const crypto::Key256& key, const StreamIV& tmpl, ByteView data,
                                  std::size_t frame_total_size = kDefaultFrameSize);
Bytes decrypt_stream(const crypto::Key256& key, const StreamIV& tmpl, const std::vector<Frame>& frames,
                     std::uint64_t plaintext_length);

// Unencrypted frame layout used for Normal-mode transfers: IV block,
// plaintext payload, zero tag.
Frame clear_frame(const StreamIV& iv, ByteView payload);

// On-disk container for an encrypted stream.
struct StreamFile {
  StreamIV tmpl{};
  std::uint32_t frame_total_size = kDefaultFrameSize;
  std::uint64_t plaintext_length = 0;
  std::vector<Frame> frames;

  Bytes serialize() const;
  static StreamFile parse(ByteView bytes);
};

}  // namespace itx
