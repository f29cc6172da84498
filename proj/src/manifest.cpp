#include "itx/manifest.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>
#include <set>

#include "itx/error.hpp"

namespace itx {

using nlohmann::json;

void DeviceConfig::validate() const {
  if (tile_count == 0 || tile_count > 0xffff) throw Error(Errc::InvalidArgument, "tile_count out of range");
  if (tile_memory < 16 * 1024 || tile_memory % 16 != 0) {
    throw Error(Errc::InvalidArgument, "tile_memory must be a multiple of 16 and at least 16 KiB");
  }
  if (sxp_lanes == 0 || sxp_lanes > 8) throw Error(Errc::InvalidArgument, "sxp_lanes out of range");
  if (tiles_per_exchange_context == 0) throw Error(Errc::InvalidArgument, "tiles_per_exchange_context is zero");
  if (ring_buffer_size < 64 * 1024 || ring_buffer_size % 4096 != 0) {
    throw Error(Errc::InvalidArgument, "ring_buffer_size must be a multiple of 4096 and at least 64 KiB");
  }
}

std::string DeviceConfig::to_json() const {
  json j;
  j["tile_count"] = tile_count;
  j["tile_memory"] = tile_memory;
  j["sxp_lanes"] = sxp_lanes;
  j["tiles_per_exchange_context"] = tiles_per_exchange_context;
  j["ring_buffer_size"] = ring_buffer_size;
  return j.dump(2);
}

DeviceConfig DeviceConfig::from_json(const std::string& text) {
  DeviceConfig c;
  try {
    json j = json::parse(text);
    c.tile_count = j.value("tile_count", c.tile_count);
    c.tile_memory = j.value("tile_memory", c.tile_memory);
    c.sxp_lanes = j.value("sxp_lanes", c.sxp_lanes);
    c.tiles_per_exchange_context = j.value("tiles_per_exchange_context", c.tiles_per_exchange_context);
    c.ring_buffer_size = j.value("ring_buffer_size", c.ring_buffer_size);
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidEncoding, std::string("device config: ") + e.what());
  }
  c.validate();
  return c;
}

const char* to_string(StreamKind k) {
  switch (k) {
    case StreamKind::Code: return "code";
    case StreamKind::Input: return "input";
    case StreamKind::Checkpoint: return "checkpoint";
    case StreamKind::Output: return "output";
  }
  return "?";
}

static StreamKind stream_kind_from(const std::string& s) {
  if (s == "code") return StreamKind::Code;
  if (s == "input") return StreamKind::Input;
  if (s == "checkpoint") return StreamKind::Checkpoint;
  if (s == "output") return StreamKind::Output;
  throw Error(Errc::InvalidEncoding, "unknown stream kind " + s);
}

static const char* key_kind_name(KeyRef::Kind k) {
  switch (k) {
    case KeyRef::Kind::Stream: return "stream";
    case KeyRef::Kind::CheckpointLoad: return "ckpt_load";
    case KeyRef::Kind::CheckpointSave: return "ckpt_save";
    case KeyRef::Kind::Model: return "model";
  }
  return "?";
}

static KeyRef::Kind key_kind_from(const std::string& s) {
  if (s == "stream") return KeyRef::Kind::Stream;
  if (s == "ckpt_load") return KeyRef::Kind::CheckpointLoad;
  if (s == "ckpt_save") return KeyRef::Kind::CheckpointSave;
  if (s == "model") return KeyRef::Kind::Model;
  throw Error(Errc::InvalidEncoding, "unknown key kind " + s);
}

std::string to_string(const KeyRef& k) {
  std::string s = key_kind_name(k.kind);
  if (k.kind == KeyRef::Kind::Stream) s += ":" + std::to_string(k.stream_id);
  return s;
}

const char* to_string(MappingKind k) {
  switch (k) {
    case MappingKind::CodeLoad: return "code_load";
    case MappingKind::InputLoad: return "input_load";
    case MappingKind::CheckpointLoad: return "ckpt_load";
    case MappingKind::CheckpointStore: return "ckpt_store";
    case MappingKind::OutputStore: return "output_store";
    case MappingKind::MetadataStore: return "metadata_store";
  }
  return "?";
}

static MappingKind mapping_kind_from(const std::string& s) {
  for (auto k : {MappingKind::CodeLoad, MappingKind::InputLoad, MappingKind::CheckpointLoad,
                 MappingKind::CheckpointStore, MappingKind::OutputStore, MappingKind::MetadataStore}) {
    if (s == to_string(k)) return k;
  }
  throw Error(Errc::InvalidEncoding, "unknown mapping kind " + s);
}

namespace {

json key_load_json(const KeyLoad& k) {
  return json{{"lane", k.lane}, {"ctx", k.ctx}, {"key", key_kind_name(k.key.kind)}, {"stream", k.key.stream_id}};
}

KeyLoad key_load_from(const json& j) {
  KeyLoad k;
  k.lane = j.at("lane").get<std::uint32_t>();
  k.ctx = j.at("ctx").get<std::uint32_t>();
  k.key.kind = key_kind_from(j.at("key").get<std::string>());
  k.key.stream_id = j.at("stream").get<std::uint32_t>();
  return k;
}

json regs_json(const SxpRegisters& r) {
  json j;
  json ks = json::array();
  for (const auto& a : r.ksellimit) ks.push_back(json::array({a.base, a.limit}));
  j["ksellimit"] = ks;
  json xb = json::array();
  for (const auto& [e, c] : r.kxbctxmap) xb.push_back(json::array({e, c}));
  j["kxbctxmap"] = xb;
  json ph = json::array();
  for (const auto& [c, g] : r.kphysmap) ph.push_back(json::array({c, g}));
  j["kphysmap"] = ph;
  return j;
}

SxpRegisters regs_from(const json& j) {
  SxpRegisters r;
  for (const auto& a : j.at("ksellimit")) r.ksellimit.push_back({a.at(0).get<std::uint64_t>(), a.at(1).get<std::uint64_t>()});
  for (const auto& p : j.at("kxbctxmap")) r.kxbctxmap[p.at(0).get<std::uint32_t>()] = p.at(1).get<std::uint32_t>();
  for (const auto& p : j.at("kphysmap")) r.kphysmap[p.at(0).get<std::uint32_t>()] = p.at(1).get<std::uint32_t>();
  return r;
}

}  // namespace

Bytes JobManifest::encode() const {
  json j;
  j["job"] = job;
  j["device"] = json::parse(device.to_json());
  j["ipu_id"] = ipu_id;
  j["binary_hash"] = to_hex(binary_hash);
  json th = json::array();
  for (const auto& h : tile_binary_hashes) th.push_back(to_hex(h));
  j["tile_binary_hashes"] = th;
  j["bootloader_measurement"] = to_hex(bootloader_measurement);
  json st = json::array();
  for (const auto& s : streams) {
    st.push_back({{"stream_id", s.stream_id},
                  {"party", s.party},
                  {"kind", to_string(s.kind)},
                  {"plaintext_length", s.plaintext_length},
                  {"frame_total_size", s.frame_total_size}});
  }
  j["streams"] = st;
  j["parties"] = parties;
  json sa = json::array();
  for (const auto& [id, p] : stream_assignment) sa.push_back(json::array({id, p}));
  j["stream_assignment"] = sa;
  j["model_receivers"] = model_receivers;
  json eg = json::array();
  for (const auto& k : egress_keys) eg.push_back(key_load_json(k));
  j["egress_keys"] = eg;
  json sps = json::array();
  for (const auto& sp : sync_points) {
    json s;
    s["id"] = sp.id;
    s["label"] = sp.label;
    s["boot"] = sp.boot;
    s["resume_only"] = sp.resume_only;
    json regs = json::array();
    for (const auto& r : sp.registers) regs.push_back(regs_json(r));
    s["registers"] = regs;
    json kl = json::array();
    for (const auto& k : sp.key_loads) kl.push_back(key_load_json(k));
    s["key_loads"] = kl;
    json ms = json::array();
    for (const auto& m : sp.mappings) {
      ms.push_back({{"kind", to_string(m.kind)},
                    {"stream", m.stream_id},
                    {"tile", m.tile},
                    {"region", m.region},
                    {"address", m.address},
                    {"first_frame", m.first_frame},
                    {"frame_count", m.frame_count},
                    {"frame_size", m.frame_size}});
    }
    s["mappings"] = ms;
    sps.push_back(s);
  }
  j["sync_points"] = sps;
  std::string out = j.dump();
  return Bytes(out.begin(), out.end());
}

JobManifest JobManifest::decode(ByteView bytes) {
  JobManifest m;
  try {
    json j = json::parse(bytes.begin(), bytes.end());
    m.job = j.at("job").get<std::string>();
    m.device = DeviceConfig::from_json(j.at("device").dump());
    m.ipu_id = j.at("ipu_id").get<std::uint32_t>();
    m.binary_hash = array_from_hex<32>(j.at("binary_hash").get<std::string>());
    for (const auto& h : j.at("tile_binary_hashes")) m.tile_binary_hashes.push_back(array_from_hex<32>(h.get<std::string>()));
    m.bootloader_measurement = array_from_hex<32>(j.at("bootloader_measurement").get<std::string>());
    for (const auto& s : j.at("streams")) {
      StreamEntry e;
      e.stream_id = s.at("stream_id").get<std::uint32_t>();
      e.party = s.at("party").get<std::string>();
      e.kind = stream_kind_from(s.at("kind").get<std::string>());
      e.plaintext_length = s.at("plaintext_length").get<std::uint64_t>();
      e.frame_total_size = s.at("frame_total_size").get<std::uint32_t>();
      m.streams.push_back(e);
    }
    m.parties = j.at("parties").get<std::vector<std::string>>();
    for (const auto& p : j.at("stream_assignment")) {
      m.stream_assignment[p.at(0).get<std::uint32_t>()] = p.at(1).get<std::string>();
    }
    m.model_receivers = j.at("model_receivers").get<std::vector<std::string>>();
    for (const auto& k : j.at("egress_keys")) m.egress_keys.push_back(key_load_from(k));
    for (const auto& s : j.at("sync_points")) {
      SyncPoint sp;
      sp.id = s.at("id").get<std::uint32_t>();
      sp.label = s.at("label").get<std::string>();
      sp.boot = s.at("boot").get<bool>();
      sp.resume_only = s.at("resume_only").get<bool>();
      for (const auto& r : s.at("registers")) sp.registers.push_back(regs_from(r));
      for (const auto& k : s.at("key_loads")) sp.key_loads.push_back(key_load_from(k));
      for (const auto& mj : s.at("mappings")) {
        Mapping mp;
        mp.kind = mapping_kind_from(mj.at("kind").get<std::string>());
        mp.stream_id = mj.at("stream").get<std::uint32_t>();
        mp.tile = mj.at("tile").get<std::uint32_t>();
        mp.region = mj.at("region").get<std::uint32_t>();
        mp.address = mj.at("address").get<std::uint64_t>();
        mp.first_frame = mj.at("first_frame").get<std::uint64_t>();
        mp.frame_count = mj.at("frame_count").get<std::uint32_t>();
        mp.frame_size = mj.at("frame_size").get<std::uint32_t>();
        sp.mappings.push_back(mp);
      }
      m.sync_points.push_back(std::move(sp));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidEncoding, std::string("manifest: ") + e.what());
  }
  return m;
}

Digest JobManifest::measurement() const { return crypto::sha256(encode()); }

const SyncPoint& JobManifest::sync(std::uint32_t id) const {
  for (const auto& s : sync_points) {
    if (s.id == id) return s;
  }
  throw Error(Errc::InvalidSyncPoint, "sync point " + std::to_string(id) + " not in manifest");
}

const StreamEntry& JobManifest::stream(std::uint32_t id) const {
  for (const auto& s : streams) {
    if (s.stream_id == id) return s;
  }
  throw Error(Errc::InvalidArgument, "stream " + std::to_string(id) + " not in manifest");
}

std::vector<std::uint32_t> JobManifest::streams_of(const std::string& party) const {
  std::vector<std::uint32_t> out;
  for (const auto& [id, p] : stream_assignment) {
    if (p == party) out.push_back(id);
  }
  return out;
}

void JobManifest::validate() const {
  auto fail = [](const std::string& what) { throw Error(Errc::ScheduleInfeasible, what); };
  const std::uint32_t lanes = device.sxp_lanes;
  std::vector<std::set<std::uint32_t>> egress(lanes);
  for (const auto& k : egress_keys) {
    if (k.lane >= lanes || k.ctx >= kKeyContexts) fail("egress key outside the context space");
    if (!egress[k.lane].insert(k.ctx).second) fail("egress context assigned twice");
  }
  for (const auto& sp : sync_points) {
    const std::string where = "sync point " + std::to_string(sp.id) + ": ";
    if (sp.registers.size() != lanes) fail(where + "register plan does not cover every lane");
    std::vector<std::set<std::uint32_t>> keyed = egress;
    for (const auto& k : sp.key_loads) {
      if (k.lane >= lanes || k.ctx >= kKeyContexts) fail(where + "key load outside the context space");
      if (egress[k.lane].count(k.ctx)) fail(where + "input key targets an egress context");
      if (!keyed[k.lane].insert(k.ctx).second) fail(where + "context loaded twice");
    }
    for (std::uint32_t l = 0; l < lanes; ++l) {
      const auto& r = sp.registers[l];
      try {
        r.validate();
      } catch (const Error& e) {
        fail(where + e.detail());
      }
      if (keyed[l].size() > kKeyContexts) fail(where + "more than 16 contexts on one SXP");
      std::set<std::uint32_t> seen_ctx;
      for (const auto& [ebc, ctx] : r.kxbctxmap) {
        if (device.lane_of_exchange_context(ebc) != l) fail(where + "exchange-block context on the wrong lane");
        if (!keyed[l].count(ctx)) fail(where + "exchange-block context mapped to an unkeyed context");
        // Requests on one key context must come from a single exchange-block context.
        if (!seen_ctx.insert(ctx).second) fail(where + "key context shared by two exchange-block contexts");
      }
      for (const auto& a : r.ksellimit) {
        if (a.limit > device.ring_buffer_size) fail(where + "key region beyond the ring buffer");
      }
    }
    for (const auto& m : sp.mappings) {
      if (m.tile >= device.tile_count) fail(where + "mapping names a missing tile");
      std::uint32_t l = device.lane_of_tile(m.tile);
      const auto& r = sp.registers[l];
      if (m.region >= r.ksellimit.size()) fail(where + "mapping names a missing region");
      const AddressRange& a = r.ksellimit[m.region];
      std::uint64_t end = m.address + std::uint64_t(m.frame_count) * m.frame_size;
      if (m.address < a.base || end > a.limit) fail(where + "mapping outside its region");
      if (m.region == 0) continue;
      auto ebc = m.tile / device.tiles_per_exchange_context;
      auto it = r.kxbctxmap.find(ebc);
      if (it == r.kxbctxmap.end()) fail(where + "mapping tile has no key context");
      auto ph = r.kphysmap.find(it->second);
      if (ph == r.kphysmap.end() || ph->second != m.region) fail(where + "mapping region not bound to the tile's context");
    }
  }
}

}  // namespace itx
