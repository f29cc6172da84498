#include "itx/sxp_engine.hpp"

#include <cstdio>
#include <set>
#include <sstream>

namespace itx {

const char* to_string(PacketKind k) {
  switch (k) {
    case PacketKind::ReadRequest: return "ReadRequest";
    case PacketKind::ReadCompletion: return "ReadCompletion";
    case PacketKind::WriteRequest: return "WriteRequest";
  }
  return "Unknown";
}

void SxpRegisters::validate() const {
  if (ksellimit.size() > kMaxKeyRegions) {
    throw Error(Errc::InvalidRegisterProgram,
                std::to_string(ksellimit.size()) + " key regions exceed the maximum of 17");
  }
  for (std::size_t i = 0; i < ksellimit.size(); ++i) {
    if (ksellimit[i].base >= ksellimit[i].limit) {
      throw Error(Errc::InvalidRegisterProgram, "region " + std::to_string(i) + " is empty");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (ksellimit[i].overlaps(ksellimit[j])) {
        throw Error(Errc::InvalidRegisterProgram,
                    "regions " + std::to_string(j) + " and " + std::to_string(i) + " overlap");
      }
    }
  }
  for (const auto& [ebc, ctx] : kxbctxmap) {
    if (ctx >= kKeyContexts) throw Error(Errc::InvalidRegisterProgram, "KXBCTXMAP names context >= 16");
  }
  std::set<std::uint32_t> seen;
  for (const auto& [ctx, region] : kphysmap) {
    if (ctx >= kKeyContexts) throw Error(Errc::InvalidRegisterProgram, "KPHYSMAP names context >= 16");
    if (region == 0) throw Error(Errc::InvalidRegisterProgram, "cleartext region bound to a key context");
    if (region >= ksellimit.size()) {
      throw Error(Errc::InvalidRegisterProgram, "KPHYSMAP names undefined region " + std::to_string(region));
    }
    if (!seen.insert(region).second) {
      throw Error(Errc::InvalidRegisterProgram, "region " + std::to_string(region) + " bound to two contexts");
    }
  }
}

Bytes SxpRegisters::serialize() const {
  Bytes out;
  put_u8(out, static_cast<std::uint8_t>(ksellimit.size()));
  for (const auto& r : ksellimit) {
    put_be64(out, r.base);
    put_be64(out, r.limit);
  }
  put_be16(out, static_cast<std::uint16_t>(kxbctxmap.size()));
  for (const auto& [ebc, ctx] : kxbctxmap) {
    put_be32(out, ebc);
    put_u8(out, static_cast<std::uint8_t>(ctx));
  }
  put_u8(out, static_cast<std::uint8_t>(kphysmap.size()));
  for (const auto& [ctx, region] : kphysmap) {
    put_u8(out, static_cast<std::uint8_t>(ctx));
    put_u8(out, static_cast<std::uint8_t>(region));
  }
  return out;
}

SecureExchangePipe::SecureExchangePipe(std::uint32_t lane, std::uint32_t tiles_per_exchange_context)
    : lane_(lane), tiles_per_ebc_(tiles_per_exchange_context) {
  if (tiles_per_ebc_ == 0) throw Error(Errc::InvalidArgument, "tiles_per_exchange_context must be positive");
}

void SecureExchangePipe::program_registers(const SxpRegisters& regs) {
  regs.validate();
  regs_ = regs;
}

void SecureExchangePipe::check_ctx(std::uint32_t ctx) const {
  if (ctx >= kKeyContexts) {
    throw Error(Errc::IndexOutOfRange, "key context " + std::to_string(ctx) + " outside 0..15");
  }
}

void SecureExchangePipe::load_key(std::uint32_t ctx, const crypto::Key256& key) {
  check_ctx(ctx);
  if (ctx_[ctx].core.active()) throw Error(Errc::ContextBusy, "context " + std::to_string(ctx) + " is mid-frame");
  ctx_[ctx].core.load_key(key);
}

void SecureExchangePipe::invalidate_key(std::uint32_t ctx) {
  check_ctx(ctx);
  ctx_[ctx].core.invalidate();
  ctx_[ctx].owner_tile = 0;
  ctx_[ctx].decrypting = false;
}

void SecureExchangePipe::invalidate_all() {
  for (std::uint32_t i = 0; i < kKeyContexts; ++i) invalidate_key(i);
}

bool SecureExchangePipe::key_loaded(std::uint32_t ctx) const {
  check_ctx(ctx);
  return ctx_[ctx].core.loaded();
}

bool SecureExchangePipe::context_active(std::uint32_t ctx) const {
  check_ctx(ctx);
  return ctx_[ctx].core.active();
}

void SecureExchangePipe::reset() {
  invalidate_all();
  regs_ = SxpRegisters{};
  pending_.clear();
  latched_ = false;
}

void SecureExchangePipe::raise(Errc code, const std::string& detail) {
  latched_ = true;
  std::string msg = "SXP lane " + std::to_string(lane_) + ": " + detail;
  if (trace_) trace_->push_back("SXP lane=" + std::to_string(lane_) + " exception=" + to_string(code));
  if (sink_) sink_(code, msg);
  throw Error(code, msg);
}

ContextSelection SecureExchangePipe::select_context(std::uint32_t src_tile, std::uint64_t address) {
  if (!regs_.ksellimit.empty() && regs_.ksellimit[0].contains(address)) return {true, 0};
  std::uint32_t ebc = exchange_context(src_tile);
  auto it = regs_.kxbctxmap.find(ebc);
  if (it == regs_.kxbctxmap.end()) {
    raise(Errc::SecurityException, "exchange-block context " + std::to_string(ebc) + " has no key context");
  }
  std::uint32_t ctx = it->second;
  auto phys = regs_.kphysmap.find(ctx);
  if (phys == regs_.kphysmap.end()) {
    raise(Errc::SecurityException, "key context " + std::to_string(ctx) + " has no key region");
  }
  const AddressRange& region = regs_.ksellimit.at(phys->second);
  if (!region.contains(address)) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(address));
    raise(Errc::SecurityException, std::string("address ") + buf + " outside region " +
                                       std::to_string(phys->second) + " of context " + std::to_string(ctx));
  }
  return {false, ctx};
}

SecureExchangePipe::Context& SecureExchangePipe::context_for(std::uint32_t ctx, std::uint32_t tile,
                                                             bool decrypting) {
  Context& c = ctx_[ctx];
  if (!c.core.loaded()) raise(Errc::KeyNotLoaded, "context " + std::to_string(ctx) + " has no key");
  if (c.core.active() && (c.owner_tile != tile || c.decrypting != decrypting)) {
    raise(Errc::FrameInterleavingViolation,
          "tile " + std::to_string(tile) + " started a frame on context " + std::to_string(ctx) +
              " while tile " + std::to_string(c.owner_tile) + " holds it");
  }
  return c;
}

Bytes SecureExchangePipe::transform(Context& c, ByteView payload, bool cc, bool decrypting) {
  if (payload.empty() || payload.size() % 16 != 0) {
    raise(Errc::SecurityException, "encrypted packet payload is not block aligned");
  }
  const std::size_t blocks = payload.size() / 16;
  Bytes out(payload.size());
  std::size_t i = 0;
  crypto::Block in{};
  if (!c.core.active()) {
    std::copy(payload.begin(), payload.begin() + 16, in.begin());
    auto iv = c.core.begin(in);
    std::copy(iv.begin(), iv.end(), out.begin());
    i = 1;
  }
  const std::size_t data_end = cc ? blocks - 1 : blocks;
  if (cc && i > data_end) raise(Errc::SecurityException, "frame ends before its IV and MAC blocks");
  for (; i < data_end; ++i) {
    std::copy(payload.begin() + 16 * i, payload.begin() + 16 * (i + 1), in.begin());
    auto o = c.core.update(in, decrypting);
    std::copy(o.begin(), o.end(), out.begin() + 16 * i);
  }
  if (cc) {
    auto tag = c.core.finish();
    ByteView received = payload.subspan(16 * (blocks - 1), 16);
    if (decrypting && !constant_time_equal(tag, received)) {
      raise(Errc::SecurityException, "frame authentication failed");
    }
    std::copy(tag.begin(), tag.end(), out.begin() + 16 * (blocks - 1));
  }
  return out;
}

std::optional<ExchangePacket> SecureExchangePipe::process_egress(ExchangePacket pkt) {
  if (pkt.kind == PacketKind::ReadCompletion) {
    throw Error(Errc::InvalidArgument, "read completions are ingress traffic");
  }
  if (latched_ && pkt.aes) {
    trace("egress", pkt, "dropped");
    return std::nullopt;
  }
  if (pkt.kind == PacketKind::ReadRequest) {
    if (!pkt.payload.empty()) throw Error(Errc::InvalidArgument, "read request carries a payload");
    if (pkt.request_id == 0) pkt.request_id = next_request_id();
    PendingRead entry;
    entry.src_tile = pkt.src_tile;
    entry.address = pkt.address;
    entry.read_length = pkt.read_length;
    if (pkt.aes) {
      auto sel = select_context(pkt.src_tile, pkt.address);
      if (!sel.cleartext) {
        if (!ctx_[sel.ctx].core.loaded()) {
          raise(Errc::KeyNotLoaded, "read against context " + std::to_string(sel.ctx) + " with no key");
        }
        entry.aes = true;
        entry.key_index = static_cast<std::uint8_t>(sel.ctx);
        pkt.key_index = entry.key_index;
      }
    }
    pending_[pkt.request_id] = entry;
    ++reads_created_;
    trace("egress", pkt);
    return pkt;
  }
  if (!pkt.aes) {
    trace("egress", pkt);
    return pkt;
  }
  auto sel = select_context(pkt.src_tile, pkt.address);
  if (sel.cleartext) {
    trace("egress", pkt);
    return pkt;
  }
  Context& c = context_for(sel.ctx, pkt.src_tile, false);
  if (!c.core.active()) {
    c.owner_tile = pkt.src_tile;
    c.decrypting = false;
  }
  pkt.key_index = static_cast<std::uint8_t>(sel.ctx);
  pkt.payload = transform(c, pkt.payload, pkt.cc, false);
  trace("egress", pkt);
  return pkt;
}

std::vector<ExchangePacket> SecureExchangePipe::stamp_completions(std::uint64_t request_id,
                                                                  ByteView host_data,
                                                                  std::size_t max_payload) {
  std::vector<ExchangePacket> out;
  auto it = pending_.find(request_id);
  if (it == pending_.end() || host_data.empty()) return out;
  if (max_payload < 16) max_payload = 16;
  max_payload -= max_payload % 16;
  PendingRead& entry = it->second;
  for (std::size_t off = 0; off < host_data.size(); off += max_payload) {
    std::size_t n = std::min(max_payload, host_data.size() - off);
    ExchangePacket p;
    p.kind = PacketKind::ReadCompletion;
    p.src_tile = entry.src_tile;
    p.dst_tile = entry.src_tile;
    p.address = entry.address + off;
    p.payload.assign(host_data.begin() + off, host_data.begin() + off + n);
    p.aes = entry.aes;
    p.key_index = entry.key_index;
    p.request_id = request_id;
    out.push_back(std::move(p));
  }
  out.back().cc = true;
  entry.packets_remaining = static_cast<std::uint32_t>(out.size());
  return out;
}

std::optional<ExchangePacket> SecureExchangePipe::process_ingress(ExchangePacket pkt) {
  if (pkt.kind != PacketKind::ReadCompletion) {
    throw Error(Errc::InvalidArgument, "only read completions are ingress traffic");
  }
  auto it = pending_.find(pkt.request_id);
  if (it == pending_.end()) {
    trace("ingress", pkt, "unmatched");
    return std::nullopt;
  }
  auto retire = [&] {
    if (pkt.cc) {
      pending_.erase(it);
      ++reads_retired_;
    } else if (it->second.packets_remaining > 0) {
      --it->second.packets_remaining;
    }
  };
  if (latched_ && pkt.aes) {
    trace("ingress", pkt, "dropped");
    retire();
    return std::nullopt;
  }
  trace("ingress", pkt);
  if (!pkt.aes) {
    retire();
    return pkt;
  }
  check_ctx(pkt.key_index);
  try {
    Context& c = context_for(pkt.key_index, pkt.dst_tile, true);
    if (!c.core.active()) {
      c.owner_tile = pkt.dst_tile;
      c.decrypting = true;
    }
    pkt.payload = transform(c, pkt.payload, pkt.cc, true);
  } catch (...) {
    // A failed frame leaves the context idle for the next owner once reset.
    if (pkt.cc) {
      pending_.erase(it);
      ++reads_retired_;
    }
    throw;
  }
  retire();
  return pkt;
}

void SecureExchangePipe::trace(const char* dir, const ExchangePacket& pkt, const char* note) {
  if (!trace_) return;
  std::ostringstream os;
  char addr[24];
  std::snprintf(addr, sizeof addr, "0x%08llx", static_cast<unsigned long long>(pkt.address));
  auto digest = crypto::sha256(pkt.payload);
  os << "SXP lane=" << lane_ << " dir=" << dir << " kind=" << to_string(pkt.kind) << " src=" << pkt.src_tile
     << " dst=" << pkt.dst_tile << " addr=" << addr << " aes=" << pkt.aes << " cc=" << pkt.cc
     << " key=" << static_cast<unsigned>(pkt.key_index) << " len=" << pkt.payload.size()
     << " digest=" << to_hex(ByteView(digest).first(8));
  if (note) os << " note=" << note;
  trace_->push_back(os.str());
}

}  // namespace itx
