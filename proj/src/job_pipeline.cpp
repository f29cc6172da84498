#include "itx/job_pipeline.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "itx/error.hpp"

namespace itx {

namespace tl = tile_layout;
using nlohmann::json;

// ---------------------------------------------------------------- secrets

void PartySecrets::new_session(bool keep_prior_nonce) {
  if (keep_prior_nonce) {
    prior_run_nonce = run_nonce;
  } else {
    prior_run_nonce.reset();
  }
  share.wipe();
  share = crypto::KeyShare::generate();
  run_nonce = crypto::random_array<32>();
}

Bytes PartySecrets::encode() const {
  json j;
  j["party"] = party;
  json keys = json::object();
  for (const auto& [id, k] : stream_keys) keys[std::to_string(id)] = to_hex(k);
  j["stream_keys"] = keys;
  j["share_private"] = to_hex(share.private_key);
  j["run_nonce"] = to_hex(run_nonce);
  if (prior_run_nonce) j["prior_run_nonce"] = to_hex(*prior_run_nonce);
  auto s = j.dump(2);
  return Bytes(s.begin(), s.end());
}

PartySecrets PartySecrets::decode(ByteView bytes) {
  PartySecrets s;
  try {
    json j = json::parse(bytes.begin(), bytes.end());
    s.party = j.at("party").get<std::string>();
    for (auto& [id, k] : j.at("stream_keys").items()) {
      s.stream_keys[static_cast<std::uint32_t>(std::stoul(id))] = array_from_hex<32>(k.get<std::string>());
    }
    s.share = crypto::KeyShare::from_private(array_from_hex<32>(j.at("share_private").get<std::string>()));
    s.run_nonce = array_from_hex<32>(j.at("run_nonce").get<std::string>());
    if (j.contains("prior_run_nonce")) s.prior_run_nonce = array_from_hex<32>(j["prior_run_nonce"].get<std::string>());
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidEncoding, std::string("party secrets: ") + e.what());
  } catch (const std::logic_error& e) {
    throw Error(Errc::InvalidEncoding, std::string("party secrets: ") + e.what());
  }
  return s;
}

// -------------------------------------------------------------- packaging

namespace {

StreamFile make_stream_file(const StreamIV& tmpl, std::uint32_t fs, std::uint64_t length, std::vector<Frame> frames) {
  StreamFile f;
  f.tmpl = tmpl;
  f.frame_total_size = fs;
  f.plaintext_length = length;
  f.frames = std::move(frames);
  return f;
}

const crypto::Key256& key_of(PartySecrets& s, std::uint32_t id) {
  auto it = s.stream_keys.find(id);
  if (it == s.stream_keys.end()) it = s.stream_keys.emplace(id, crypto::random_array<32>()).first;
  return it->second;
}

}  // namespace

PartyCredential session_credential(const PartyIdentity& party, const PartySecrets& secrets) {
  return make_party_credential(party.certificate, party.key, secrets.share.public_key);
}

KeyPackage key_package(const PartySecrets& secrets) {
  KeyPackage p;
  for (const auto& [id, k] : secrets.stream_keys) p.streams.emplace_back(id, k);
  p.run_nonce = secrets.run_nonce;
  p.prior_run_nonce = secrets.prior_run_nonce;
  return p;
}

ApplicationPackage package_model(const CompiledJob& job, ByteView initial_weights, const PartyIdentity& party,
                                 PartySecrets& secrets, const std::optional<crypto::Key256>& code_key) {
  const JobManifest& m = job.manifest;
  if (party.name != job.description.model_party) {
    throw Error(Errc::InvalidArgument, "'" + party.name + "' is not the model party");
  }
  const StreamEntry& w = m.stream(kWeightsStreamId);
  if (initial_weights.size() != w.plaintext_length) {
    throw Error(Errc::InvalidLength, "initial weights must be " + std::to_string(w.plaintext_length) + " bytes");
  }
  if (code_key) secrets.stream_keys[kCodeStreamId] = *code_key;
  ApplicationPackage pkg;
  pkg.manifest = m;
  const crypto::Key256 kc = key_of(secrets, kCodeStreamId);
  for (std::uint32_t t = 0; t < job.binaries.size(); ++t) {
    auto tmpl = StreamIV::code(m.ipu_id, t);
    pkg.code.push_back(make_stream_file(tmpl, tl::kCodeFrameSize, tl::kBinarySize,
                                        encrypt_stream(kc, tmpl, job.binaries[t], tl::kCodeFrameSize)));
  }
  const crypto::Key256 kw = key_of(secrets, kWeightsStreamId);
  auto wt = StreamIV::data(kWeightsStreamId);
  pkg.weights = make_stream_file(wt, w.frame_total_size, w.plaintext_length,
                                 encrypt_stream(kw, wt, initial_weights, w.frame_total_size));
  pkg.credential = session_credential(party, secrets);
  return pkg;
}

DataPackage package_data(const JobManifest& manifest, std::uint32_t stream_id, ByteView data,
                         const PartyIdentity& party, PartySecrets& secrets) {
  const StreamEntry& e = manifest.stream(stream_id);
  if (e.kind != StreamKind::Input || e.party != party.name) {
    throw Error(Errc::InvalidArgument, "stream " + std::to_string(stream_id) + " is not an input of '" + party.name + "'");
  }
  if (data.size() != e.plaintext_length) {
    throw Error(Errc::InvalidLength, "stream " + std::to_string(stream_id) + " must carry " +
                                         std::to_string(e.plaintext_length) + " bytes");
  }
  DataPackage pkg;
  pkg.stream_id = stream_id;
  auto tmpl = StreamIV::data(stream_id);
  pkg.data = make_stream_file(tmpl, e.frame_total_size, e.plaintext_length,
                              encrypt_stream(key_of(secrets, stream_id), tmpl, data, e.frame_total_size));
  pkg.credential = session_credential(party, secrets);
  return pkg;
}

StreamFile clear_stream(const StreamIV& tmpl, ByteView data, std::uint32_t frame_size) {
  std::vector<Frame> frames;
  auto parts = partition(data, frame_size);
  for (std::size_t i = 0; i < parts.size(); ++i) frames.push_back(clear_frame(compose_iv(tmpl, i), parts[i]));
  return make_stream_file(tmpl, frame_size, data.size(), std::move(frames));
}

std::vector<StreamFile> clear_code(const CompiledJob& job) {
  std::vector<StreamFile> out;
  for (std::uint32_t t = 0; t < job.binaries.size(); ++t) {
    out.push_back(clear_stream(StreamIV::code(job.manifest.ipu_id, t), job.binaries[t], tl::kCodeFrameSize));
  }
  return out;
}

// ------------------------------------------------------------ adversaries

namespace {
using K = AdversaryAction::Kind;
const std::vector<std::pair<K, const char*>> kKindNames = {
    {K::TamperFrame, "tamper-frame"},
    {K::ReplayFrame, "replay-frame"},
    {K::ReorderFrames, "reorder-frames"},
    {K::SwapStreams, "swap-streams"},
    {K::SwapTileBinaries, "swap-tile-binaries"},
    {K::SwapBinary, "swap-binary"},
    {K::SkipKeyLoad, "skip-key-load"},
    {K::SubstituteCheckpoint, "substitute-checkpoint"},
    {K::TamperRegister, "tamper-register"},
    {K::EditManifest, "edit-manifest"},
    {K::TrafficAnalysis, "traffic-analysis"},
};
}  // namespace

const char* to_string(AdversaryAction::Kind k) {
  for (const auto& [kind, name] : kKindNames) {
    if (kind == k) return name;
  }
  return "unknown";
}

bool AdversaryScript::mitigated(AdversaryAction::Kind k) { return k != K::TrafficAnalysis; }

std::string AdversaryScript::to_json() const {
  json arr = json::array();
  for (const auto& a : actions) {
    arr.push_back({{"kind", to_string(a.kind)},
                   {"stream", a.stream},
                   {"index", a.index},
                   {"source", a.source},
                   {"bit", a.bit},
                   {"sync", a.sync},
                   {"delta", a.delta},
                   {"op", a.op}});
  }
  return json{{"actions", arr}}.dump(2);
}

AdversaryScript AdversaryScript::from_json(const std::string& text) {
  AdversaryScript s;
  try {
    json j = json::parse(text);
    for (const auto& e : j.at("actions")) {
      AdversaryAction a;
      auto name = e.at("kind").get<std::string>();
      auto it = std::find_if(kKindNames.begin(), kKindNames.end(), [&](auto& p) { return name == p.second; });
      if (it == kKindNames.end()) throw Error(Errc::InvalidEncoding, "unknown adversary action '" + name + "'");
      a.kind = it->first;
      a.stream = e.value("stream", 0u);
      a.index = e.value("index", std::uint64_t{0});
      a.source = e.value("source", std::uint64_t{0});
      a.bit = e.value("bit", 0u);
      a.sync = e.value("sync", 0u);
      a.delta = e.value("delta", std::int64_t{0});
      a.op = e.value("op", std::string{});
      s.actions.push_back(a);
    }
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidEncoding, std::string("adversary script: ") + e.what());
  }
  return s;
}

// --------------------------------------------------------------- event log

void EventLog::add(const std::string& actor, const std::string& event, const std::string& fields) {
  std::string line = std::to_string(lines_.size()) + " " + actor + " " + event;
  if (!fields.empty()) line += " " + fields;
  lines_.push_back(std::move(line));
}

std::vector<std::string> EventLog::find(const std::string& event) const {
  std::vector<std::string> out;
  for (const auto& l : lines_) {
    std::istringstream in(l);
    std::string seq, actor, ev;
    in >> seq >> actor >> ev;
    if (ev == event) out.push_back(l);
  }
  return out;
}

std::string EventLog::text() const {
  std::string out;
  for (const auto& l : lines_) out += l + "\n";
  return out;
}

bool key_release_ordered(const EventLog& log) {
  struct Seg {
    std::set<std::string> accepted;
    bool rejected = false;
    bool released = false;
  };
  Seg seg;
  auto close = [&] { return !(seg.rejected && seg.released); };
  for (const auto& l : log.lines()) {
    std::istringstream in(l);
    std::string seq, actor, ev, rest;
    in >> seq >> actor >> ev;
    std::getline(in, rest);
    if (ev == "RUN_START") {
      if (!close()) return false;
      seg = Seg{};
    } else if (ev == "VERIFY") {
      if (rest.find("verdict=accept") != std::string::npos) {
        seg.accepted.insert(actor);
      } else {
        seg.rejected = true;
      }
    } else if (ev == "RELEASE_KEYS") {
      if (seg.rejected || !seg.accepted.count(actor)) return false;
      seg.released = true;
    }
  }
  return close();
}

// ------------------------------------------------------------- checkpoints

Bytes CheckpointSet::encode() const {
  Bytes out;
  append(out, as_bytes("ITXC"));
  put_u8(out, 1);
  put_be32(out, epoch);
  put_be32(out, checkpoint_id);
  put_be32(out, static_cast<std::uint32_t>(tiles.size()));
  for (const auto& t : tiles) {
    put_be32(out, static_cast<std::uint32_t>(t.size()));
    append(out, t);
  }
  return out;
}

CheckpointSet CheckpointSet::decode(ByteView bytes) {
  ByteReader r(bytes);
  auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), as_bytes("ITXC").begin()) || r.u8() != 1) {
    throw Error(Errc::InvalidEncoding, "not a checkpoint set");
  }
  CheckpointSet c;
  c.epoch = r.be32();
  c.checkpoint_id = r.be32();
  auto n = r.be32();
  if (n > r.remaining() / 4) throw Error(Errc::InvalidEncoding, "checkpoint tile count too large");
  for (std::uint32_t i = 0; i < n; ++i) {
    auto len = r.be32();
    auto v = r.take(len);
    c.tiles.emplace_back(v.begin(), v.end());
  }
  r.expect_done();
  return c;
}

// ---------------------------------------------------------------- verifier

ExpectedRun expected_run(const JobManifest& manifest, const std::vector<Certificate>& party_certs,
                         std::uint32_t epoch, std::uint32_t checkpoint_id, const VerifierPolicy& policy) {
  ExpectedRun x;
  x.manifest_hash = manifest.measurement();
  x.bootloader_measurement = manifest.bootloader_measurement;
  auto regs = known_good_registers(manifest.device, manifest.ipu_id);
  x.register_measurement = regs.measurement();
  x.measured_registers = regs.names();
  x.trusted_cce_measurements = policy.trusted_cce;
  x.epoch = epoch;
  x.checkpoint_id = checkpoint_id;
  for (const auto& c : party_certs) x.party_fingerprints[c.subject] = c.fingerprint_hex();
  x.stream_assignment = manifest.stream_assignment;
  x.model_receivers = manifest.model_receivers;
  x.now = policy.now;
  return x;
}

// ----------------------------------------------------------------- runtime

namespace {

void host_call(HostPort& h, const std::string& op) {
  if (op == "read_memory") {
    h.read_memory(0, tl::kHeapOffset, 16);
  } else if (op == "write_memory") {
    h.write_memory(0, tl::kHeapOffset, Bytes(16, 0x41));
  } else if (op == "read_register") {
    h.read_register("sxp0.registers");
  } else if (op == "write_register") {
    h.write_register("sxp0.registers", Bytes(4, 0));
  } else if (op == "program_sxp") {
    SxpRegisters r;
    r.ksellimit.push_back({0, 1 << 20});
    h.program_sxp(0, r);
  } else if (op == "load_sxp_key") {
    h.load_sxp_key(0, 0, crypto::Key256{});
  } else if (op == "autoload") {
    h.autoload(bootloader_image());
  } else if (op == "seed_counters") {
    h.seed_counters(0, 0);
  } else if (op == "run_bootloader") {
    h.run_bootloader(0, tl::kReservedSize);
  } else if (op == "start_execution") {
    h.start_execution();
  } else {
    throw Error(Errc::InvalidArgument, "unknown host operation '" + op + "'");
  }
}

// Host-side runtime state for one run.
class Runner {
 public:
  Runner(Board& board, const RunInputs& in, const RunOptions& opt, EventLog& log, RunResult& res)
      : b_(board), host_(board.device.host()), in_(in), opt_(opt), log_(log), res_(res) {
    manifest_ = in.manifest;
    for (const auto& a : opt.adversary.actions) {
      if (a.kind == K::EditManifest) {
        for (auto& sp : manifest_.sync_points) {
          if (sp.id != a.sync) continue;
          for (auto& m : sp.mappings) m.address = static_cast<std::uint64_t>(std::int64_t(m.address) + a.delta);
        }
        log_.add("adversary", "ACTION", std::string("kind=") + to_string(a.kind) + " sync=" + std::to_string(a.sync));
      }
    }
    for (const auto& s : manifest_.streams) {
      if (s.kind == StreamKind::Checkpoint) ckpt_frames_ = frame_count(s.plaintext_length, s.frame_total_size);
    }
  }

  const JobManifest& manifest() const { return manifest_; }

  void stage(const SyncPoint& sp) {
    auto ring = host_.ring();
    for (const auto& m : sp.mappings) {
      if (m.kind == MappingKind::OutputStore || m.kind == MappingKind::CheckpointStore ||
          m.kind == MappingKind::MetadataStore) {
        continue;
      }
      for (std::uint32_t i = 0; i < m.frame_count; ++i) {
        std::uint32_t stream = m.stream_id;
        std::uint64_t idx = m.first_frame + i;
        if (m.kind == MappingKind::CodeLoad) idx = std::uint64_t(m.tile) * tl::kBinaryFrames + i;
        if (m.kind == MappingKind::CheckpointLoad) idx = std::uint64_t(m.tile) * ckpt_frames_ + i;
        Bytes f = frame(stream, idx);
        f.resize(m.frame_size, 0);
        const std::uint64_t at = m.address + std::uint64_t(i) * m.frame_size;
        if (at > ring.size() || f.size() > ring.size() - at) continue;
        std::copy(f.begin(), f.end(), ring.begin() + at);
      }
    }
  }

  void act_before_keys(std::uint32_t sync) {
    for (const auto& a : opt_.adversary.actions) {
      if (a.kind == K::TamperRegister && a.sync == sync) {
        log_.add("adversary", "ACTION", "kind=tamper-register sync=" + std::to_string(sync) + " op=" + a.op);
        host_call(host_, a.op);
      }
    }
  }

  bool skip_keys(std::uint32_t sync) {
    for (const auto& a : opt_.adversary.actions) {
      if (a.kind == K::SkipKeyLoad && a.sync == sync) {
        log_.add("adversary", "ACTION", "kind=skip-key-load sync=" + std::to_string(sync));
        return true;
      }
    }
    return false;
  }

  // Picks up stores written after sync `id` was released.
  void collect(std::uint32_t id) {
    const SyncPoint& sp = manifest_.sync(id);
    auto ring = host_.ring();
    auto slice = [&](const Mapping& m) {
      const std::uint64_t n = std::uint64_t(m.frame_count) * m.frame_size;
      if (m.address > ring.size() || n > ring.size() - m.address) {
        throw Error(Errc::IndexOutOfRange, "store mapping beyond the ring buffer");
      }
      return Bytes(ring.begin() + m.address, ring.begin() + m.address + n);
    };
    std::map<std::uint32_t, Bytes> tiles;
    std::optional<CheckpointSet> meta;
    for (const auto& m : sp.mappings) {
      if (m.kind == MappingKind::OutputStore) {
        Bytes raw = slice(m);
        const StreamEntry& e = manifest_.stream(m.stream_id);
        std::vector<Frame> frames;
        for (std::uint32_t i = 0; i < m.frame_count; ++i) {
          frames.push_back(Frame::parse(ByteView(raw).subspan(std::size_t(i) * m.frame_size, m.frame_size)));
        }
        res_.model = make_stream_file(StreamIV::output(m.stream_id), m.frame_size, e.plaintext_length, std::move(frames));
        log_.add("host", "OUTPUT", "stream=" + std::to_string(m.stream_id) + " frames=" + std::to_string(m.frame_count));
      } else if (m.kind == MappingKind::CheckpointStore) {
        tiles[m.tile] = slice(m);
      } else if (m.kind == MappingKind::MetadataStore) {
        Bytes raw = slice(m);
        meta = CheckpointSet{};
        meta->epoch = get_le32(raw, 8);
        meta->checkpoint_id = get_le32(raw, 12);
      }
    }
    if (meta) pending_ = *meta;
    if (!tiles.empty()) {
      if (!pending_) throw Error(Errc::InvalidPhase, "checkpoint without metadata");
      for (auto& [t, bytes] : tiles) pending_tiles_[t] = std::move(bytes);
      if (pending_tiles_.size() == b_.device.config().tile_count) {
        CheckpointSet set = *pending_;
        for (auto& [t, bytes] : pending_tiles_) set.tiles.push_back(std::move(bytes));
        pending_tiles_.clear();
        pending_.reset();
        log_.add("host", "CHECKPOINT",
                 "epoch=" + std::to_string(set.epoch) + " checkpoint=" + std::to_string(set.checkpoint_id));
        res_.checkpoints.push_back(std::move(set));
      }
    }
  }

  bool should_kill() const {
    return opt_.stop_after_checkpoints && res_.checkpoints.size() >= *opt_.stop_after_checkpoints;
  }

  void traffic_summary() {
    for (const auto& a : opt_.adversary.actions) {
      if (a.kind != K::TrafficAnalysis) continue;
      std::uint64_t bytes = 0;
      for (const auto& p : b_.device.link_trace()) bytes += p.size();
      log_.add("adversary", "TRAFFIC",
               "transfers=" + std::to_string(b_.device.link_trace().size()) + " bytes=" + std::to_string(bytes));
      return;
    }
  }

 private:
  Bytes raw_frame(std::uint32_t stream, std::uint64_t idx, bool alternate) const {
    if (stream == kCodeStreamId) {
      const auto& code = alternate && !in_.alternate_code.empty() ? in_.alternate_code : in_.code;
      const std::uint64_t t = idx / tl::kBinaryFrames, i = idx % tl::kBinaryFrames;
      if (t >= code.size() || i >= code[t].frames.size()) return {};
      return code[t].frames[i].serialize();
    }
    if (stream == kCheckpointStreamId) {
      if (!in_.checkpoint || ckpt_frames_ == 0) return {};
      const auto fs = manifest_.stream(kCheckpointStreamId).frame_total_size;
      const std::uint64_t t = idx / ckpt_frames_, i = idx % ckpt_frames_;
      if (t >= in_.checkpoint->tiles.size()) return {};
      const Bytes& all = in_.checkpoint->tiles[t];
      if ((i + 1) * fs > all.size()) return {};
      return Bytes(all.begin() + i * fs, all.begin() + (i + 1) * fs);
    }
    auto it = in_.streams.find(stream);
    if (it == in_.streams.end()) throw Error(Errc::InvalidArgument, "no input for stream " + std::to_string(stream));
    if (idx >= it->second.frames.size()) return {};
    return it->second.frames[idx].serialize();
  }

  Bytes frame(std::uint32_t stream, std::uint64_t idx) const {
    const std::uint32_t s0 = stream;
    const std::uint64_t i0 = idx;
    bool alternate = false;
    for (const auto& a : opt_.adversary.actions) {
      switch (a.kind) {
        case K::SwapStreams:
          if (stream == a.stream) {
            stream = static_cast<std::uint32_t>(a.source);
          } else if (stream == a.source) {
            stream = a.stream;
          }
          break;
        case K::ReplayFrame:
          if (stream == a.stream && idx == a.index) idx = a.source;
          break;
        case K::ReorderFrames:
          if (stream == a.stream) {
            if (idx == a.index) {
              idx = a.source;
            } else if (idx == a.source) {
              idx = a.index;
            }
          }
          break;
        case K::SwapTileBinaries:
          if (stream == kCodeStreamId) {
            const std::uint64_t t = idx / tl::kBinaryFrames, i = idx % tl::kBinaryFrames;
            if (t == a.index) idx = a.source * tl::kBinaryFrames + i;
            if (t == a.source) idx = a.index * tl::kBinaryFrames + i;
          }
          break;
        case K::SwapBinary:
          if (stream == kCodeStreamId) alternate = true;
          break;
        case K::SubstituteCheckpoint:
          if (stream == kCheckpointStreamId && ckpt_frames_ && idx / ckpt_frames_ == a.index) {
            idx = a.source * ckpt_frames_ + idx % ckpt_frames_;
          }
          break;
        default:
          break;
      }
    }
    Bytes f = raw_frame(stream, idx, alternate);
    for (const auto& a : opt_.adversary.actions) {
      if (a.kind == K::TamperFrame && a.stream == s0 && a.index == i0 && !f.empty()) {
        f[(a.bit / 8) % f.size()] ^= static_cast<std::uint8_t>(1u << (a.bit % 8));
      }
    }
    return f;
  }

  Board& b_;
  HostPort& host_;
  const RunInputs& in_;
  const RunOptions& opt_;
  EventLog& log_;
  RunResult& res_;
  JobManifest manifest_;
  std::uint64_t ckpt_frames_ = 0;
  std::optional<CheckpointSet> pending_;
  std::map<std::uint32_t, Bytes> pending_tiles_;
};

void log_actions(EventLog& log, const AdversaryScript& s) {
  for (const auto& a : s.actions) {
    if (a.kind == K::EditManifest || a.kind == K::TamperRegister || a.kind == K::SkipKeyLoad) continue;
    log.add("adversary", "ACTION", std::string("kind=") + to_string(a.kind) + " stream=" + std::to_string(a.stream) +
                                       " index=" + std::to_string(a.index) + " source=" + std::to_string(a.source));
  }
}

void abort_run(RunResult& res, EventLog& log, const Error& e) {
  res.completed = false;
  res.abort_code = e.code();
  res.abort_reason = e.detail();
  res.model.reset();
  res.released_model_keys.clear();
  log.add("host", "ABORT", std::string("code=") + to_string(e.code()));
}

// Steps the device barrier by barrier. Returns false when the host killed the run.
bool drive(Runner& r, HostPort& host, EventLog& log, const std::function<void(std::uint32_t)>& keys) {
  std::optional<std::uint32_t> prev;
  for (;;) {
    auto id = host.run_until_barrier();
    if (prev) r.collect(*prev);
    if (r.should_kill()) {
      log.add("host", "KILL", "checkpoints=collected");
      host.reset(ResetKind::SBR);
      return false;
    }
    if (!id) break;
    const SyncPoint& sp = r.manifest().sync(*id);
    r.stage(sp);
    r.act_before_keys(*id);
    if (!r.skip_keys(*id)) keys(*id);
    host.release_barrier();
    prev = id;
  }
  log.add("host", "HALT");
  return true;
}

}  // namespace

RunResult run_job(Board& board, const RunInputs& inputs, std::vector<RunParty>& parties, const DeviceEvidence& evidence,
                  const RunOptions& options, EventLog& log) {
  RunResult res;
  Device& dev = board.device;
  Ccu& ccu = board.ccu;
  HostPort& host = dev.host();
  const bool trusted = options.mode == DeviceMode::Trusted;

  log.add("host", "RUN_START", std::string("job=") + inputs.manifest.job + " mode=" + (trusted ? "trusted" : "normal") +
                                   (inputs.checkpoint ? " resume=1" : ""));
  if (ccu.phase() != TeePhase::NoTee || dev.mode() == DeviceMode::Trusted) host.reset(ResetKind::SBR);

  const std::uint32_t epoch = inputs.checkpoint ? inputs.checkpoint->epoch : 0;
  const std::uint32_t ckpt = inputs.checkpoint ? inputs.checkpoint->checkpoint_id : 0;
  Runner runner(board, inputs, options, log, res);
  log_actions(log, options.adversary);

  if (!trusted) {
    try {
      host.autoload(bootloader_image());
      host.seed_counters(epoch, ckpt);
      for (const auto& sp : runner.manifest().sync_points) {
        if (!sp.boot) continue;
        runner.stage(sp);
        for (const auto& m : sp.mappings) {
          if (m.kind == MappingKind::CodeLoad) host.run_bootloader(m.tile, m.address);
        }
      }
      host.start_execution();
      if (!drive(runner, host, log, [](std::uint32_t) {})) {
        res.killed = true;
        res.model.reset();
        return res;
      }
      res.completed = true;
      log.add("host", "COMPLETE");
    } catch (const Error& e) {
      abort_run(res, log, e);
    }
    runner.traffic_summary();
    return res;
  }

  try {
    std::vector<PartyCredential> creds;
    for (const auto& p : parties) creds.push_back(session_credential(*p.identity, *p.secrets));
    AttestationReport report = ccu.tee_init(runner.manifest(), creds, epoch, ckpt);
    res.report = report;
    log.add("ccu", "TEE_INIT", "epoch=" + std::to_string(epoch) + " checkpoint=" + std::to_string(ckpt));

    // Each party judges the evidence on its own before anything leaves it.
    AttestationEvidence ev{report, evidence.device_chain, evidence.ca_cik_certificate, evidence.pik_endorsement};
    std::optional<std::pair<std::string, Verdict>> rejected;
    for (const auto& p : parties) {
      std::vector<Certificate> certs;
      if (p.expected_parties) {
        certs = *p.expected_parties;
      } else {
        for (const auto& q : parties) certs.push_back(q.identity->certificate);
      }
      ExpectedRun x = expected_run(inputs.manifest, certs, epoch, ckpt, p.policy);
      if (p.expected_manifest) x.manifest_hash = *p.expected_manifest;
      Verdict v = verify_attestation(ev, p.policy.anchors, p.policy.cas, p.policy.tcb_updates, x);
      if (v.accept) {
        log.add(p.identity->name, "VERIFY", "verdict=accept");
      } else {
        log.add(p.identity->name, "VERIFY", std::string("verdict=reject reason=") + to_string(*v.reason));
        if (!rejected) rejected = {p.identity->name, v};
      }
    }
    if (rejected) {
      ccu.tee_terminate("attestation rejected by " + rejected->first);
      res.rejected = rejected->second.reason;
      res.abort_reason = "attestation rejected by " + rejected->first + ": " + rejected->second.detail;
      log.add("host", "ABORT", std::string("reason=") + to_string(*res.rejected));
      return res;
    }

    std::map<std::string, Bytes> wrapped;
    for (const auto& p : parties) {
      const PartySecrets& s = *p.secrets;
      KeyPackage pkg;
      for (auto id : inputs.manifest.streams_of(p.identity->name)) {
        auto it = s.stream_keys.find(id);
        if (it != s.stream_keys.end()) pkg.streams.emplace_back(id, it->second);
      }
      pkg.run_nonce = s.run_nonce;
      pkg.prior_run_nonce = s.prior_run_nonce;
      wrapped[p.identity->name] = party_wrap_keys(s.share, report.attributes.ccu_share, report.manifest_measurement, pkg,
                                                  crypto::random_array<12>());
      for (auto& [id, k] : pkg.streams) secure_zero(k);
      log.add(p.identity->name, "RELEASE_KEYS", "streams=" + std::to_string(pkg.streams.size()));
    }

    ccu.tee_launch(wrapped, [&](const SyncPoint& sp) { runner.stage(sp); });
    log.add("ccu", "TEE_LAUNCH");
    if (!drive(runner, host, log, [&](std::uint32_t id) { ccu.tee_load_keys(id); })) {
      res.killed = true;
      res.model.reset();
      runner.traffic_summary();
      return res;
    }
    if (!res.model) throw Error(Errc::InvalidPhase, "job halted without producing a model");
    for (const auto& r : runner.manifest().model_receivers) {
      res.released_model_keys[r] = ccu.release_model_key(r);
      log.add("ccu", "MODEL_KEY", "to=" + r);
    }
    ccu.tee_terminate("job complete");
    res.completed = true;
    log.add("host", "COMPLETE");
  } catch (const Error& e) {
    if (ccu.phase() == TeePhase::Initialized || ccu.phase() == TeePhase::Launched) ccu.tee_terminate(e.what());
    abort_run(res, log, e);
  }
  runner.traffic_summary();
  return res;
}

Bytes decrypt_model(const StreamFile& model, const crypto::Key256& k_m, std::uint64_t length) {
  return decrypt_stream(k_m, model.tmpl, model.frames, length);
}

Bytes clear_model(const StreamFile& model, std::uint64_t length) {
  Bytes out;
  for (std::size_t i = 0; i < model.frames.size(); ++i) {
    const Frame& f = model.frames[i];
    auto want = compose_iv(model.tmpl, i).block();
    if (f.iv_block != want) throw Error(Errc::IvSequenceViolation, "model frame " + std::to_string(i) + " out of place");
    append(out, f.ciphertext);
  }
  if (out.size() < length) throw Error(Errc::InvalidLength, "model shorter than expected");
  out.resize(length);
  return out;
}

std::optional<crypto::Key256> receive_model_key(const PartySecrets& receiver, const AttestationReport& report,
                                                ByteView wrapped) {
  return party_unwrap_model_key(receiver.share, report.attributes.ccu_share, report.manifest_measurement, wrapped);
}

Bytes reference_training(const JobDescription& job, ByteView initial_weights, const std::vector<Bytes>& party_data,
                         const std::vector<std::uint32_t>& tiles_per_party) {
  const std::size_t D = job.dim, B = job.batch_per_tile, S = job.sample_bytes() / 4;
  if (initial_weights.size() != D * 4 || party_data.size() != tiles_per_party.size()) {
    throw Error(Errc::InvalidArgument, "reference training inputs do not match the job");
  }
  auto rd = [](ByteView v, std::size_t i) { return static_cast<std::int32_t>(get_le32(v, 4 * i)); };
  std::vector<std::int32_t> w(D);
  for (std::size_t j = 0; j < D; ++j) w[j] = rd(initial_weights, j);

  for (std::size_t s = 0; s < job.steps; ++s) {
    std::vector<std::int64_t> total(D, 0);
    for (std::size_t p = 0; p < party_data.size(); ++p) {
      const std::size_t tp = tiles_per_party[p];
      for (std::size_t k = 0; k < tp; ++k) {
        std::vector<std::int64_t> g(D, 0);
        for (std::size_t i = 0; i < B; ++i) {
          const std::size_t row = ((s * tp + k) * B + i) * S;
          std::int64_t dot = 0;
          for (std::size_t j = 0; j < D; ++j) dot += std::int64_t(w[j]) * rd(party_data[p], row + j);
          const std::int64_t err = (dot >> 16) - rd(party_data[p], row + D);
          for (std::size_t j = 0; j < D; ++j) g[j] += (err * rd(party_data[p], row + j)) >> 16;
        }
        // Each tile reports its gradient as a 32-bit word.
        for (std::size_t j = 0; j < D; ++j) total[j] += q16_wrap(g[j]);
      }
    }
    for (std::size_t j = 0; j < D; ++j) {
      const std::int64_t step = (std::int64_t(-job.learning_rate) * q16_wrap(total[j])) >> 16;
      w[j] = q16_wrap(std::int64_t(w[j]) + step);
    }
  }
  Bytes out(D * 4);
  for (std::size_t j = 0; j < D; ++j) set_le32(out, 4 * j, static_cast<std::uint32_t>(w[j]));
  return out;
}

}  // namespace itx
