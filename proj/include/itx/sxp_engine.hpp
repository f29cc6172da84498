#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "itx/bytes.hpp"
#include "itx/crypto.hpp"
#include "itx/error.hpp"
#include "itx/gcm_core.hpp"

namespace itx {

inline constexpr std::uint32_t kKeyContexts = 16;
inline constexpr std::uint32_t kMaxKeyRegions = 17;

enum class PacketKind { ReadRequest, ReadCompletion, WriteRequest };
const char* to_string(PacketKind k);

struct ExchangePacket {
  PacketKind kind = PacketKind::WriteRequest;
  std::uint32_t src_tile = 0;
  std::uint32_t dst_tile = 0;
  std::uint64_t address = 0;
  Bytes payload;
  bool aes = false;
  bool cc = false;
  std::uint8_t key_index = 0;
  // Synthetic read tag and requested length; only meaningful for reads.
  std::uint64_t request_id = 0;
  std::uint32_t read_length = 0;
};

// Half-open tile-PCI address range.
struct AddressRange {
  std::uint64_t base = 0;
  std::uint64_t limit = 0;
  bool contains(std::uint64_t a) const { return a >= base && a < limit; }
  bool overlaps(const AddressRange& o) const { return base < o.limit && o.base < limit; }
  bool operator==(const AddressRange&) const = default;
};

struct SxpRegisters {
  // Index is the key region id; region 0 is the cleartext region.
  std::vector<AddressRange> ksellimit;
  // Exchange-block context -> physical key context.
  std::map<std::uint32_t, std::uint32_t> kxbctxmap;
  // Physical key context -> key region id.
  std::map<std::uint32_t, std::uint32_t> kphysmap;

  // Throws InvalidRegisterProgram.
  void validate() const;
  Bytes serialize() const;
  bool operator==(const SxpRegisters&) const = default;
};

struct ContextSelection {
  bool cleartext = true;
  std::uint32_t ctx = 0;
};

struct PendingRead {
  std::uint32_t src_tile = 0;
  std::uint8_t key_index = 0;
  bool aes = false;
  std::uint64_t address = 0;
  std::uint32_t read_length = 0;
  std::uint32_t packets_remaining = 0;
};

// One Secure Exchange Pipe lane. Handles egress (read requests, write
// requests) and ingress (read completions) and also models the PCI-complex
// pending-read table that stamps completions.
class SecureExchangePipe {
 public:
  using ExceptionSink = std::function<void(Errc, const std::string&)>;

  explicit SecureExchangePipe(std::uint32_t lane = 0, std::uint32_t tiles_per_exchange_context = 4);

  void program_registers(const SxpRegisters& regs);
  const SxpRegisters& registers() const { return regs_; }

  void load_key(std::uint32_t ctx, const crypto::Key256& key);
  void invalidate_key(std::uint32_t ctx);
  void invalidate_all();
  bool key_loaded(std::uint32_t ctx) const;
  bool context_active(std::uint32_t ctx) const;

  std::uint32_t exchange_context(std::uint32_t tile) const { return tile / tiles_per_ebc_; }
  ContextSelection select_context(std::uint32_t src_tile, std::uint64_t address);

  // nullopt means the packet was dropped (latched after a security exception).
  std::optional<ExchangePacket> process_egress(ExchangePacket pkt);
  std::optional<ExchangePacket> process_ingress(ExchangePacket pkt);

  // PCI complex: splits the host's answer to a pending read into completion
  // packets of at most max_payload bytes, stamping aes/key_index from the
  // pending-read table and cc on the last one. Unknown ids yield nothing.
  std::vector<ExchangePacket> stamp_completions(std::uint64_t request_id, ByteView host_data,
                                                std::size_t max_payload);

  std::uint64_t next_request_id() { return ++request_seq_; }
  std::size_t pending_reads() const { return pending_.size(); }
  std::uint64_t reads_created() const { return reads_created_; }
  std::uint64_t reads_retired() const { return reads_retired_; }

  bool latched() const { return latched_; }
  // Clears keys, registers, pending reads and the exception latch.
  void reset();

  void set_exception_sink(ExceptionSink sink) { sink_ = std::move(sink); }
  void set_trace(std::vector<std::string>* trace) { trace_ = trace; }

 private:
  struct Context {
    GcmCore core;
    std::uint32_t owner_tile = 0;
    bool decrypting = false;
  };

  [[noreturn]] void raise(Errc code, const std::string& detail);
  void check_ctx(std::uint32_t ctx) const;
  Context& context_for(std::uint32_t ctx, std::uint32_t tile, bool decrypting);
  Bytes transform(Context& c, ByteView payload, bool cc, bool decrypting);
  void trace(const char* dir, const ExchangePacket& pkt, const char* note = nullptr);

  std::uint32_t lane_;
  std::uint32_t tiles_per_ebc_;
  SxpRegisters regs_;
  std::array<Context, kKeyContexts> ctx_{};
  std::map<std::uint64_t, PendingRead> pending_;
  std::uint64_t request_seq_ = 0;
  std::uint64_t reads_created_ = 0;
  std::uint64_t reads_retired_ = 0;
  bool latched_ = false;
  ExceptionSink sink_;
  std::vector<std::string>* trace_ = nullptr;
};

}  // namespace itx
