#include "itx/ipu_device.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "itx/error.hpp"
#include "itx/frame_codec.hpp"

namespace itx {

namespace tl = tile_layout;

const char* to_string(DeviceMode m) { return m == DeviceMode::Normal ? "normal" : "trusted"; }
const char* to_string(ResetKind k) { return k == ResetKind::SBR ? "sbr" : "newmanry"; }

const Bytes& bootloader_image() {
  static const Bytes image = [] {
    Bytes b;
    append(b, as_bytes("ITX IPU BOOTLOADER v1"));
    put_be32(b, tl::kBinaryFrames);
    put_be32(b, tl::kCodeFrameSize);
    put_be32(b, tl::kBinaryOffset);
    while (b.size() < 1024) b.push_back(static_cast<std::uint8_t>((b.size() * 31 + 7) & 0xff));
    return b;
  }();
  return image;
}

Digest bootloader_measurement() { return crypto::sha256(bootloader_image()); }

std::vector<std::string> RegisterFile::names() const {
  std::vector<std::string> out;
  for (const auto& [n, v] : entries) out.push_back(n);
  return out;
}

Bytes RegisterFile::serialize() const {
  Bytes out;
  for (const auto& [n, v] : entries) {
    put_be16(out, static_cast<std::uint16_t>(n.size()));
    append(out, as_bytes(n));
    put_be32(out, static_cast<std::uint32_t>(v.size()));
    append(out, v);
  }
  return out;
}

Digest RegisterFile::measurement() const { return crypto::sha256(serialize()); }

RegisterFile known_good_registers(const DeviceConfig& cfg, std::uint32_t ipu_id) {
  Device d(cfg, ipu_id);
  d.control().enter_trusted();
  return d.control().register_file();
}

Digest chain_binary_hashes(const std::vector<Digest>& tile_hashes) {
  Digest acc{};
  for (const auto& h : tile_hashes) acc = crypto::sha256({acc, h});
  return acc;
}

template <typename F>
auto Device::guarded_exec(F&& f) -> decltype(f()) {
  if (mode_ != DeviceMode::Trusted) return f();
  try {
    return f();
  } catch (const Error& e) {
    if (fault_raised_) throw;
    security_exception(std::string(to_string(e.code())) + ": " + e.detail());
  }
}

// ---------------------------------------------------------------- HostPort

const std::vector<std::string>& HostPort::guarded_operations() {
  static const std::vector<std::string> ops = {"read_memory",  "write_memory",   "read_register",
                                               "write_register", "program_sxp", "load_sxp_key",
                                               "autoload",     "seed_counters",  "run_bootloader",
                                               "start_execution"};
  return ops;
}

void HostPort::guard(const char* op) {
  if (d_.mode_ != DeviceMode::Trusted) return;
  d_.log(std::string("ACCESS_DENIED op=") + op);
  if (d_.on_security_) d_.on_security_(std::string("host ") + op + " in trusted mode");
  throw Error(Errc::AccessDenied, std::string("host ") + op + " denied in trusted mode");
}

Bytes HostPort::read_memory(std::uint32_t tile, std::uint32_t offset, std::uint32_t length) {
  guard("read_memory");
  return d_.control_.read_memory(tile, offset, length);
}

void HostPort::write_memory(std::uint32_t tile, std::uint32_t offset, ByteView data) {
  guard("write_memory");
  auto& mem = d_.tile_ref(tile).memory;
  if (offset > mem.size() || data.size() > mem.size() - offset) {
    throw Error(Errc::IndexOutOfRange, "write outside tile memory");
  }
  std::copy(data.begin(), data.end(), mem.begin() + offset);
}

Bytes HostPort::read_register(const std::string& name) {
  guard("read_register");
  if (name == "host.scratch") return d_.host_scratch_;
  for (auto& [n, v] : d_.do_register_file().entries) {
    if (n == name) return v;
  }
  throw Error(Errc::InvalidArgument, "unknown register " + name);
}

void HostPort::write_register(const std::string& name, ByteView value) {
  guard("write_register");
  if (name != "host.scratch") throw Error(Errc::InvalidArgument, "register " + name + " is not host-writable");
  d_.host_scratch_.assign(value.begin(), value.end());
}

void HostPort::program_sxp(std::uint32_t lane, const SxpRegisters& regs) {
  guard("program_sxp");
  d_.sxp(lane).program_registers(regs);
}

void HostPort::load_sxp_key(std::uint32_t lane, std::uint32_t ctx, const crypto::Key256& key) {
  guard("load_sxp_key");
  d_.sxp(lane).load_key(ctx, key);
}

void HostPort::autoload(ByteView image) {
  guard("autoload");
  d_.do_autoload(image);
}

void HostPort::seed_counters(std::uint32_t epoch, std::uint32_t checkpoint_id) {
  guard("seed_counters");
  d_.do_seed(epoch, checkpoint_id);
}

Digest HostPort::run_bootloader(std::uint32_t tile, std::uint64_t address) {
  guard("run_bootloader");
  return d_.do_bootloader(tile, address);
}

void HostPort::start_execution() {
  guard("start_execution");
  d_.do_start();
}

std::optional<std::uint32_t> HostPort::run_until_barrier() {
  return d_.guarded_exec([&] { return d_.do_run_until_barrier(); });
}

void HostPort::release_barrier() {
  d_.guarded_exec([&] { d_.do_release_barrier(); });
}

void HostPort::reset(ResetKind kind) { d_.do_reset(kind, true); }

std::span<std::uint8_t> HostPort::ring() { return d_.ring_span(); }

// ------------------------------------------------------------- ControlPort

void ControlPort::enter_trusted() {
  d_.mode_ = DeviceMode::Trusted;
  d_.fault_raised_ = false;
  d_.log("MODE trusted");
}

void ControlPort::quiesce() {
  for (auto& t : d_.tiles_) {
    t.state = TileState::Idle;
    t.pc = 0;
    t.in_resume = false;
  }
  d_.barrier_.reset();
  d_.log("QUIESCE");
}

void ControlPort::scrub() { d_.do_scrub(); }

void ControlPort::autoload(ByteView image) { d_.do_autoload(image); }

void ControlPort::seed_counters(std::uint32_t epoch, std::uint32_t checkpoint_id) { d_.do_seed(epoch, checkpoint_id); }

void ControlPort::program_sxp(std::uint32_t lane, const SxpRegisters& regs) { d_.sxp(lane).program_registers(regs); }

void ControlPort::load_key(std::uint32_t lane, std::uint32_t ctx, const crypto::Key256& key) {
  d_.sxp(lane).load_key(ctx, key);
}

void ControlPort::invalidate_key(std::uint32_t lane, std::uint32_t ctx) { d_.sxp(lane).invalidate_key(ctx); }

void ControlPort::invalidate_all_keys() {
  for (auto& s : d_.sxps_) s->invalidate_all();
}

void ControlPort::reset_sxps() {
  for (auto& s : d_.sxps_) s->reset();
}

Digest ControlPort::run_bootloader(std::uint32_t tile, std::uint64_t address) {
  return d_.guarded_exec([&] { return d_.do_bootloader(tile, address); });
}

void ControlPort::start_execution() {
  d_.guarded_exec([&] { d_.do_start(); });
}

RegisterFile ControlPort::register_file() const { return d_.do_register_file(); }

Bytes ControlPort::read_memory(std::uint32_t tile, std::uint32_t offset, std::uint32_t length) const {
  const auto& mem = d_.tiles_.at(tile).memory;
  if (offset > mem.size() || length > mem.size() - offset) {
    throw Error(Errc::IndexOutOfRange, "read outside tile memory");
  }
  return Bytes(mem.begin() + offset, mem.begin() + offset + length);
}

void ControlPort::reset(ResetKind kind) { d_.do_reset(kind, false); }

// ------------------------------------------------------------------ Device

Device::Device(DeviceConfig cfg, std::uint32_t ipu_id)
    : cfg_(cfg), ipu_id_(ipu_id), host_(*this), control_(*this) {
  cfg_.validate();
  if (cfg_.tile_memory < tl::kHeapOffset + 1024) throw Error(Errc::InvalidArgument, "tile memory too small");
  tiles_.resize(cfg_.tile_count);
  for (auto& t : tiles_) t.memory.assign(cfg_.tile_memory, 0);
  for (std::uint32_t l = 0; l < cfg_.sxp_lanes; ++l) {
    auto s = std::make_unique<SecureExchangePipe>(l, cfg_.tiles_per_exchange_context);
    s->set_exception_sink([this, l](Errc code, const std::string&) {
      log("EXCEPTION source=sxp lane=" + std::to_string(l) + " code=" + to_string(code));
    });
    sxps_.push_back(std::move(s));
  }
  set_packet_trace(true);
  ring_.assign(cfg_.ring_buffer_size, 0);
}

void Device::set_packet_trace(bool on) {
  packet_trace_ = on;
  for (auto& s : sxps_) s->set_trace(on ? &events_ : nullptr);
}

TileState Device::tile_state(std::uint32_t tile) const { return tiles_.at(tile).state; }

std::uint32_t Device::tile_counter_epoch(std::uint32_t tile) const {
  return get_le32(tiles_.at(tile).memory, tl::kEpochOffset);
}

std::uint32_t Device::tile_counter_checkpoint(std::uint32_t tile) const {
  return get_le32(tiles_.at(tile).memory, tl::kCheckpointOffset);
}

void Device::log(std::string line) { events_.push_back(std::move(line)); }

Device::Tile& Device::tile_ref(std::uint32_t t) {
  if (t >= tiles_.size()) throw Error(Errc::IndexOutOfRange, "tile " + std::to_string(t) + " does not exist");
  return tiles_[t];
}

void Device::security_exception(const std::string& detail) {
  log("EXCEPTION source=device detail=" + detail);
  if (mode_ == DeviceMode::Trusted && !fault_raised_) {
    fault_raised_ = true;
    if (on_security_) on_security_(detail);
  }
  throw Error(Errc::SecurityException, detail);
}

void Device::do_autoload(ByteView image) {
  if (image.size() > tl::kReservedSize) {
    throw Error(Errc::ImageTooLarge, "image of " + std::to_string(image.size()) + " bytes exceeds the reserved region");
  }
  for (auto& t : tiles_) {
    std::fill(t.memory.begin(), t.memory.begin() + tl::kReservedSize, 0);
    std::copy(image.begin(), image.end(), t.memory.begin());
  }
  log("AUTOLOAD bytes=" + std::to_string(image.size()));
}

void Device::do_scrub() {
  for (auto& t : tiles_) {
    std::fill(t.memory.begin(), t.memory.end(), 0);
    t.state = TileState::Idle;
    t.program = TileProgram{};
    t.pc = 0;
    t.in_resume = false;
    t.restored = false;
  }
  log("SCRUB");
}

void Device::do_seed(std::uint32_t epoch, std::uint32_t ckpt) {
  for (auto& t : tiles_) {
    set_le32(t.memory, tl::kEpochOffset, epoch);
    set_le32(t.memory, tl::kCheckpointOffset, ckpt);
  }
  log("COUNTERS epoch=" + std::to_string(epoch) + " checkpoint=" + std::to_string(ckpt));
}

Bytes Device::read_frame(std::uint32_t t, std::uint64_t address, std::uint32_t frame_size) {
  if (address > ring_.size() || frame_size > ring_.size() - address) {
    throw Error(Errc::IndexOutOfRange, "read beyond the ring buffer");
  }
  ByteView host_data(ring_.data() + address, frame_size);
  link_trace_.emplace_back(host_data.begin(), host_data.end());
  Bytes out;
  if (mode_ != DeviceMode::Trusted) {
    if (packet_trace_) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "LINK dir=read tile=%u addr=0x%08llx len=%u", t,
                    static_cast<unsigned long long>(address), frame_size);
      log(buf);
    }
    out.assign(host_data.begin(), host_data.end());
    return out;
  }
  auto& sxp = *sxps_[cfg_.lane_of_tile(t)];
  ExchangePacket req;
  req.kind = PacketKind::ReadRequest;
  req.src_tile = t;
  req.dst_tile = t;
  req.address = address;
  req.aes = true;
  req.read_length = frame_size;
  auto sent = sxp.process_egress(std::move(req));
  if (!sent) security_exception("read request dropped by a latched SXP");
  for (auto& pkt : sxp.stamp_completions(sent->request_id, host_data, kPacketPayload)) {
    auto got = sxp.process_ingress(std::move(pkt));
    if (!got) security_exception("read completion dropped by a latched SXP");
    append(out, got->payload);
  }
  return out;
}

void Device::write_frame(std::uint32_t t, std::uint64_t address, ByteView bytes, bool aes) {
  if (address > ring_.size() || bytes.size() > ring_.size() - address) {
    throw Error(Errc::IndexOutOfRange, "write beyond the ring buffer");
  }
  auto* sxp = mode_ == DeviceMode::Trusted ? sxps_[cfg_.lane_of_tile(t)].get() : nullptr;
  for (std::size_t off = 0; off < bytes.size(); off += kPacketPayload) {
    std::size_t n = std::min(kPacketPayload, bytes.size() - off);
    ExchangePacket p;
    p.kind = PacketKind::WriteRequest;
    p.src_tile = t;
    p.dst_tile = t;
    p.address = address + off;
    p.payload.assign(bytes.begin() + off, bytes.begin() + off + n);
    p.aes = aes;
    p.cc = off + n == bytes.size();
    if (sxp) {
      auto out = sxp->process_egress(std::move(p));
      if (!out) security_exception("write dropped by a latched SXP");
      p = std::move(*out);
    } else if (packet_trace_) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "LINK dir=write tile=%u addr=0x%08llx len=%zu", t,
                    static_cast<unsigned long long>(p.address), n);
      log(buf);
    }
    std::copy(p.payload.begin(), p.payload.end(), ring_.begin() + p.address);
    link_trace_.push_back(std::move(p.payload));
  }
}

Digest Device::do_bootloader(std::uint32_t t, std::uint64_t address) {
  Tile& tile = tile_ref(t);
  const Bytes& image = bootloader_image();
  if (!std::equal(image.begin(), image.end(), tile.memory.begin())) {
    throw Error(Errc::InvalidPhase, "tile " + std::to_string(t) + " has no bootloader");
  }
  const std::uint32_t payload = tl::kCodeFrameSize - kFrameOverhead;
  const StreamIV tmpl = StreamIV::code(ipu_id_, t);
  for (std::uint32_t index = 0; index < tl::kBinaryFrames; ++index) {
    Bytes frame = read_frame(t, address + std::uint64_t(index) * tl::kCodeFrameSize, tl::kCodeFrameSize);
    auto expected = compose_iv(tmpl, index).block();
    if (!std::equal(expected.begin(), expected.end(), frame.begin())) {
      security_exception("tile " + std::to_string(t) + " bootloader: IV mismatch at code frame " +
                         std::to_string(index));
    }
    std::copy(frame.begin() + kIvBlockSize, frame.begin() + kIvBlockSize + payload,
              tile.memory.begin() + tl::kBinaryOffset + index * payload);
  }
  Digest h = crypto::sha256(ByteView(tile.memory).subspan(tl::kBinaryOffset, tl::kBinarySize));
  tile.state = TileState::Booted;
  log("BOOT tile=" + std::to_string(t) + " hash=" + to_hex(ByteView(h).first(8)));
  return h;
}

void Device::do_start() {
  for (std::uint32_t t = 0; t < tiles_.size(); ++t) {
    Tile& tile = tiles_[t];
    if (tile.state != TileState::Booted) {
      throw Error(Errc::InvalidPhase, "tile " + std::to_string(t) + " has no binary");
    }
    tile.program = TileProgram::decode(ByteView(tile.memory).subspan(tl::kBinaryOffset, tl::kBinarySize));
    std::uint32_t epoch = get_le32(tile.memory, tl::kEpochOffset);
    tile.pc = 0;
    tile.restored = false;
    if (epoch == 0) {
      set_le32(tile.memory, tl::kEpochOffset, 1);
      tile.in_resume = false;
    } else {
      if (tile.program.resume.empty()) {
        throw Error(Errc::InvalidPhase, "tile " + std::to_string(t) + " program cannot resume");
      }
      tile.in_resume = true;
    }
    tile.state = TileState::Running;
  }
  fault_raised_ = false;
  barrier_.reset();
  log("START tiles=" + std::to_string(tiles_.size()));
}

const std::vector<Phase>& Device::phases(const Tile& tile) const {
  return tile.in_resume ? tile.program.resume : tile.program.body;
}

void Device::exec_load(std::uint32_t t, const LoadPhase& p) {
  Tile& tile = tiles_[t];
  if (p.frame_size <= kFrameOverhead) throw Error(Errc::InvalidFrameSize, "load frame size too small");
  const std::uint32_t payload = p.frame_size - static_cast<std::uint32_t>(kFrameOverhead);
  StreamIV tmpl = p.target == LoadTarget::Checkpoint
                      ? StreamIV::checkpoint(ipu_id_, t, get_le32(tile.memory, tl::kEpochOffset),
                                             get_le32(tile.memory, tl::kCheckpointOffset))
                      : StreamIV::data(p.stream_id);
  Bytes data;
  for (std::uint32_t i = 0; i < p.frame_count; ++i) {
    Bytes frame = read_frame(t, p.address + std::uint64_t(i) * p.frame_size, p.frame_size);
    auto expected = compose_iv(tmpl, p.first_frame + i).block();
    if (!std::equal(expected.begin(), expected.end(), frame.begin())) {
      security_exception("tile " + std::to_string(t) + ": IV mismatch loading " +
                         (p.target == LoadTarget::Checkpoint ? std::string("checkpoint") : "stream " + std::to_string(p.stream_id)) +
                         " frame " + std::to_string(p.first_frame + i));
    }
    data.insert(data.end(), frame.begin() + kIvBlockSize, frame.begin() + kIvBlockSize + payload);
  }
  auto& mem = tile.memory;
  if (p.target == LoadTarget::Input) {
    if (std::uint64_t(p.skip) + p.length > data.size()) throw Error(Errc::IndexOutOfRange, "load window past frames");
    if (p.dest > mem.size() || p.length > mem.size() - p.dest) throw Error(Errc::IndexOutOfRange, "load past tile memory");
    std::copy(data.begin() + p.skip, data.begin() + p.skip + p.length, mem.begin() + p.dest);
    return;
  }
  const auto& prog = tile.program;
  const std::uint32_t blob = checkpoint_blob_size(prog);
  if (data.size() < blob || prog.scratch_offset + std::uint64_t(blob) > mem.size()) {
    security_exception("tile " + std::to_string(t) + ": checkpoint too short");
  }
  std::copy(data.begin(), data.begin() + blob, mem.begin() + prog.scratch_offset);
  if (get_le32(mem, prog.scratch_offset + 4) != prog.state_size) {
    security_exception("tile " + std::to_string(t) + ": checkpoint shape mismatch");
  }
  tile.restored_pc = get_le32(mem, prog.scratch_offset);
  std::copy(mem.begin() + prog.scratch_offset + kCheckpointHeader, mem.begin() + prog.scratch_offset + blob,
            mem.begin() + prog.state_offset);
  tile.restored = true;
}

void Device::exec_store(std::uint32_t t, const StorePhase& p) {
  Tile& tile = tiles_[t];
  auto& mem = tile.memory;
  const std::uint32_t epoch = get_le32(mem, tl::kEpochOffset);
  const std::uint32_t ckpt = get_le32(mem, tl::kCheckpointOffset);
  if (p.target == StoreTarget::Metadata) {
    Bytes meta = p.immediate;
    Bytes counters(8);
    set_le32(counters, 0, epoch);
    set_le32(counters, 4, ckpt);
    append(meta, counters);
    while (meta.size() % 16) meta.push_back(0);
    write_frame(t, p.address, meta, false);
    return;
  }
  Bytes data;
  StreamIV tmpl;
  if (p.target == StoreTarget::Checkpoint) {
    const auto& prog = tile.program;
    data.assign(kCheckpointHeader, 0);
    set_le32(data, 0, p.resume_pc);
    set_le32(data, 4, prog.state_size);
    data.insert(data.end(), mem.begin() + prog.state_offset, mem.begin() + prog.state_offset + prog.state_size);
    tmpl = StreamIV::checkpoint(ipu_id_, t, epoch, ckpt);
  } else {
    if (p.src > mem.size() || p.length > mem.size() - p.src) throw Error(Errc::IndexOutOfRange, "store past tile memory");
    data.assign(mem.begin() + p.src, mem.begin() + p.src + p.length);
    tmpl = StreamIV::output(p.stream_id);
  }
  auto payloads = partition(data, p.frame_size);
  for (std::size_t i = 0; i < payloads.size(); ++i) {
    auto iv = compose_iv(tmpl, p.first_frame + i);
    iv.validate();
    Bytes frame;
    auto blk = iv.block();
    append(frame, blk);
    append(frame, payloads[i]);
    frame.resize(frame.size() + kTagSize, 0);
    write_frame(t, p.address + i * p.frame_size, frame, true);
  }
  if (p.target == StoreTarget::Checkpoint) set_le32(mem, tl::kCheckpointOffset, ckpt + 1);
}

void Device::apply_moves(std::uint32_t t, const SyncPhase& p) {
  for (const auto& m : p.moves) {
    for (std::uint32_t i = 0; i < m.dst_count; ++i) {
      std::uint64_t src = m.src_offset + std::uint64_t(i) * m.src_stride;
      std::uint64_t dst = m.dst_offset + std::uint64_t(i) * m.dst_stride;
      Tile& from = tile_ref(t);
      Tile& to = tile_ref(m.dst_first + i);
      if (src + m.length > from.memory.size() || dst + m.length > to.memory.size()) {
        throw Error(Errc::IndexOutOfRange, "internal exchange outside tile memory");
      }
      std::copy(from.memory.begin() + src, from.memory.begin() + src + m.length, to.memory.begin() + dst);
    }
  }
}

void Device::step_tile(std::uint32_t t) {
  Tile& tile = tiles_[t];
  auto settle = [&] {
    if (tile.in_resume && tile.pc >= tile.program.resume.size()) {
      if (!tile.restored) security_exception("tile " + std::to_string(t) + " resumed without a checkpoint");
      tile.in_resume = false;
      tile.pc = tile.restored_pc;
      set_le32(tile.memory, tl::kEpochOffset, get_le32(tile.memory, tl::kEpochOffset) + 1);
      set_le32(tile.memory, tl::kCheckpointOffset, get_le32(tile.memory, tl::kCheckpointOffset) + 1);
    }
    if (!tile.in_resume && tile.pc >= tile.program.body.size()) tile.state = TileState::Halted;
  };
  settle();
  if (tile.state != TileState::Running) return;
  const Phase& ph = phases(tile)[tile.pc];
  if (auto* s = std::get_if<SyncPhase>(&ph)) {
    tile.state = TileState::AtBarrier;
    tile.barrier = s->sync_id;
    return;
  }
  if (auto* l = std::get_if<LoadPhase>(&ph)) {
    exec_load(t, *l);
  } else if (auto* st = std::get_if<StorePhase>(&ph)) {
    exec_store(t, *st);
  } else {
    execute_compute(tile.memory, std::get<ComputePhase>(ph));
  }
  ++tile.pc;
  settle();
}

std::optional<std::uint32_t> Device::do_run_until_barrier() {
  if (barrier_) return barrier_;
  for (;;) {
    bool ran = false;
    for (std::uint32_t t = 0; t < tiles_.size(); ++t) {
      if (tiles_[t].state == TileState::Running) {
        step_tile(t);
        ran = true;
      }
    }
    if (!ran) break;
  }
  std::optional<std::uint32_t> id;
  bool any_halted = false;
  for (std::uint32_t t = 0; t < tiles_.size(); ++t) {
    const Tile& tile = tiles_[t];
    if (tile.state == TileState::AtBarrier) {
      if (id && *id != tile.barrier) {
        throw Error(Errc::InvalidSyncPoint, "tiles disagree on the next barrier");
      }
      id = tile.barrier;
    } else if (tile.state == TileState::Halted) {
      any_halted = true;
    }
  }
  if (!id) {
    if (any_halted) log("HALT");
    return std::nullopt;
  }
  if (any_halted) throw Error(Errc::InvalidSyncPoint, "barrier reached while some tiles halted");
  barrier_ = id;
  log("BARRIER sync=" + std::to_string(*id));
  return id;
}

void Device::do_release_barrier() {
  if (!barrier_) throw Error(Errc::InvalidPhase, "no barrier to release");
  for (std::uint32_t t = 0; t < tiles_.size(); ++t) {
    Tile& tile = tiles_[t];
    if (tile.state != TileState::AtBarrier) continue;
    apply_moves(t, std::get<SyncPhase>(phases(tile)[tile.pc]));
  }
  for (auto& tile : tiles_) {
    if (tile.state != TileState::AtBarrier) continue;
    ++tile.pc;
    tile.state = TileState::Running;
  }
  log("RELEASE sync=" + std::to_string(*barrier_));
  barrier_.reset();
}

void Device::do_reset(ResetKind kind, bool notify) {
  do_scrub();
  for (auto& s : sxps_) s->reset();
  mode_ = DeviceMode::Normal;
  barrier_.reset();
  host_scratch_.clear();
  log(std::string("RESET kind=") + to_string(kind));
  if (notify && on_reset_) on_reset_(kind);
}

RegisterFile Device::do_register_file() const {
  RegisterFile rf;
  rf.entries.push_back({"mode", Bytes{static_cast<std::uint8_t>(mode_ == DeviceMode::Trusted)}});
  Bytes cfg;
  put_be32(cfg, cfg_.tile_count);
  put_be32(cfg, cfg_.tile_memory);
  put_be32(cfg, cfg_.sxp_lanes);
  put_be32(cfg, cfg_.tiles_per_exchange_context);
  put_be64(cfg, cfg_.ring_buffer_size);
  put_be32(cfg, ipu_id_);
  rf.entries.push_back({"device.config", cfg});
  for (std::uint32_t l = 0; l < sxps_.size(); ++l) {
    const auto& s = *sxps_[l];
    std::string p = "sxp" + std::to_string(l) + ".";
    rf.entries.push_back({p + "registers", s.registers().serialize()});
    Bytes keys;
    for (std::uint32_t c = 0; c < kKeyContexts; ++c) keys.push_back(s.key_loaded(c) ? 1 : 0);
    rf.entries.push_back({p + "key_contexts", keys});
    rf.entries.push_back({p + "latched", Bytes{static_cast<std::uint8_t>(s.latched())}});
  }
  return rf;
}

}  // namespace itx
