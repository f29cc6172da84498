#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "itx/bytes.hpp"
#include "itx/crypto.hpp"
#include "itx/manifest.hpp"
#include "itx/sxp_engine.hpp"
#include "itx/tile_program.hpp"

namespace itx {

enum class DeviceMode { Normal, Trusted };
enum class ResetKind { SBR, Newmanry };
const char* to_string(DeviceMode m);
const char* to_string(ResetKind k);

enum class TileState { Idle, Booted, Running, AtBarrier, Halted };

// The pre-defined IPU bootloader broadcast by the autoloader.
const Bytes& bootloader_image();
Digest bootloader_measurement();

inline constexpr std::size_t kPacketPayload = 256;

struct RegisterFile {
  std::vector<std::pair<std::string, Bytes>> entries;
  std::vector<std::string> names() const;
  Bytes serialize() const;
  Digest measurement() const;
};

// Register file of a freshly quiesced trusted device; relying parties
// compare attested measurements against it.
RegisterFile known_good_registers(const DeviceConfig& cfg, std::uint32_t ipu_id = 0);

// Sequential hash chain over per-tile binary hashes in tile order.
Digest chain_binary_hashes(const std::vector<Digest>& tile_hashes);

class Device;

// Host-side access. In Trusted mode every guarded operation fails with
// AccessDenied and raises a security exception towards the CCU.
class HostPort {
 public:
  explicit HostPort(Device& d) : d_(d) {}

  Bytes read_memory(std::uint32_t tile, std::uint32_t offset, std::uint32_t length);
  void write_memory(std::uint32_t tile, std::uint32_t offset, ByteView data);
  Bytes read_register(const std::string& name);
  void write_register(const std::string& name, ByteView value);
  void program_sxp(std::uint32_t lane, const SxpRegisters& regs);
  void load_sxp_key(std::uint32_t lane, std::uint32_t ctx, const crypto::Key256& key);
  void autoload(ByteView image);
  void seed_counters(std::uint32_t epoch, std::uint32_t checkpoint_id);
  Digest run_bootloader(std::uint32_t tile, std::uint64_t address);
  void start_execution();

  // BSP control and host memory stay available in both modes.
  std::optional<std::uint32_t> run_until_barrier();
  void release_barrier();
  void reset(ResetKind kind);
  std::span<std::uint8_t> ring();

  static const std::vector<std::string>& guarded_operations();

 private:
  void guard(const char* op);
  Device& d_;
};

// CCU-side access; unrestricted.
class ControlPort {
 public:
  explicit ControlPort(Device& d) : d_(d) {}

  void enter_trusted();
  void quiesce();
  void scrub();
  void autoload(ByteView image);
  void seed_counters(std::uint32_t epoch, std::uint32_t checkpoint_id);
  void program_sxp(std::uint32_t lane, const SxpRegisters& regs);
  void load_key(std::uint32_t lane, std::uint32_t ctx, const crypto::Key256& key);
  void invalidate_key(std::uint32_t lane, std::uint32_t ctx);
  void invalidate_all_keys();
  // Returns every SXP to its power-on state (registers, keys, latch).
  void reset_sxps();
  Digest run_bootloader(std::uint32_t tile, std::uint64_t address);
  void start_execution();
  RegisterFile register_file() const;
  Bytes read_memory(std::uint32_t tile, std::uint32_t offset, std::uint32_t length) const;
  // Newmanry/SBR reset issued by the CCU itself (no reset notification).
  void reset(ResetKind kind);

 private:
  Device& d_;
};

class Device {
 public:
  explicit Device(DeviceConfig cfg = {}, std::uint32_t ipu_id = 0);
  Device(const Device&) = delete;
  Device& operator=(const Device&) = delete;

  HostPort& host() { return host_; }
  ControlPort& control() { return control_; }

  const DeviceConfig& config() const { return cfg_; }
  std::uint32_t ipu_id() const { return ipu_id_; }
  DeviceMode mode() const { return mode_; }
  TileState tile_state(std::uint32_t tile) const;
  std::uint32_t tile_counter_epoch(std::uint32_t tile) const;
  std::uint32_t tile_counter_checkpoint(std::uint32_t tile) const;

  SecureExchangePipe& sxp(std::uint32_t lane) { return *sxps_.at(lane); }
  std::size_t lanes() const { return sxps_.size(); }

  // Deterministic log: packets, barriers, boots, exceptions, resets.
  const std::vector<std::string>& events() const { return events_; }
  void set_packet_trace(bool on);
  // Every payload that crossed the host link, as the host saw it.
  const std::vector<Bytes>& link_trace() const { return link_trace_; }

  using SecurityListener = std::function<void(const std::string&)>;
  using ResetListener = std::function<void(ResetKind)>;
  void set_security_listener(SecurityListener l) { on_security_ = std::move(l); }
  void set_reset_listener(ResetListener l) { on_reset_ = std::move(l); }

  // Raises a security exception: logs it, notifies the CCU pin and throws
  // Error(SecurityException).
  [[noreturn]] void security_exception(const std::string& detail);

 private:
  friend class HostPort;
  friend class ControlPort;

  struct Tile {
    Bytes memory;
    TileState state = TileState::Idle;
    TileProgram program;
    bool in_resume = false;
    std::size_t pc = 0;
    std::uint32_t restored_pc = 0;
    bool restored = false;
    std::uint32_t barrier = 0;
  };

  void log(std::string line);
  Tile& tile_ref(std::uint32_t t);
  std::span<std::uint8_t> ring_span() { return ring_; }

  void do_autoload(ByteView image);
  void do_scrub();
  void do_seed(std::uint32_t epoch, std::uint32_t ckpt);
  Digest do_bootloader(std::uint32_t tile, std::uint64_t address);
  void do_start();
  std::optional<std::uint32_t> do_run_until_barrier();
  void do_release_barrier();
  void do_reset(ResetKind kind, bool notify);
  RegisterFile do_register_file() const;

  // Runs `f`, turning any failure into a security exception in Trusted mode.
  template <typename F>
  auto guarded_exec(F&& f) -> decltype(f());

  Bytes read_frame(std::uint32_t tile, std::uint64_t address, std::uint32_t frame_size);
  void write_frame(std::uint32_t tile, std::uint64_t address, ByteView frame_bytes, bool aes);
  void step_tile(std::uint32_t t);
  void exec_load(std::uint32_t t, const LoadPhase& p);
  void exec_store(std::uint32_t t, const StorePhase& p);
  void apply_moves(std::uint32_t t, const SyncPhase& p);
  const std::vector<Phase>& phases(const Tile& tile) const;

  DeviceConfig cfg_;
  std::uint32_t ipu_id_;
  DeviceMode mode_ = DeviceMode::Normal;
  std::vector<Tile> tiles_;
  std::vector<std::unique_ptr<SecureExchangePipe>> sxps_;
  Bytes ring_;
  std::optional<std::uint32_t> barrier_;
  std::vector<std::string> events_;
  std::vector<std::string> sxp_trace_;
  bool packet_trace_ = true;
  bool fault_raised_ = false;
  std::vector<Bytes> link_trace_;
  std::uint64_t synthetic_request_ = 0;
  Bytes host_scratch_;
  SecurityListener on_security_;
  ResetListener on_reset_;
  HostPort host_;
  ControlPort control_;
};

}  // namespace itx
