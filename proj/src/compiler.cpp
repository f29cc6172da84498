#include <algorithm>
#include <nlohmann/json.hpp>
#include <set>

#include "itx/error.hpp"
#include "itx/job_pipeline.hpp"

namespace itx {

namespace tl = tile_layout;
using nlohmann::json;

std::string JobDescription::to_json() const {
  json j;
  j["job"] = job;
  j["model_party"] = model_party;
  j["data_parties"] = data_parties;
  j["model_receivers"] = model_receivers;
  j["dim"] = dim;
  j["batch_per_tile"] = batch_per_tile;
  j["steps"] = steps;
  j["learning_rate"] = learning_rate;
  j["checkpoint_every"] = checkpoint_every;
  j["frame_size"] = frame_size;
  return j.dump(2);
}

JobDescription JobDescription::from_json(const std::string& text) {
  JobDescription d;
  try {
    json j = json::parse(text);
    d.job = j.value("job", d.job);
    d.model_party = j.at("model_party").get<std::string>();
    d.data_parties = j.at("data_parties").get<std::vector<std::string>>();
    d.model_receivers = j.value("model_receivers", std::vector<std::string>{d.model_party});
    d.dim = j.value("dim", d.dim);
    d.batch_per_tile = j.value("batch_per_tile", d.batch_per_tile);
    d.steps = j.value("steps", d.steps);
    d.learning_rate = j.value("learning_rate", d.learning_rate);
    d.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
    d.frame_size = j.value("frame_size", d.frame_size);
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidEncoding, std::string("job description: ") + e.what());
  }
  return d;
}

namespace {

[[noreturn]] void infeasible(const std::string& why) { throw Error(Errc::ScheduleInfeasible, why); }

std::uint64_t round_up(std::uint64_t v, std::uint64_t m) { return (v + m - 1) / m * m; }

// One transfer of one tile within a sync point.
struct Io {
  std::uint32_t tile = 0;
  MappingKind kind = MappingKind::InputLoad;
  std::uint32_t stream = 0;
  std::uint64_t first_frame = 0;
  std::uint32_t frames = 0;
  std::uint32_t frame_size = 0;
  // Input loads only.
  std::uint32_t skip = 0, length = 0, dest = 0;
};

// All transfers of one exchange-block context through one key context.
struct Group {
  std::uint32_t ebc = 0;
  std::uint32_t ctx = 0;
  KeyRef key;
  std::vector<Io> ios;
};

class Builder {
 public:
  Builder(const DeviceConfig& d, std::vector<std::vector<std::uint32_t>> egress)
      : dev_(d), egress_(std::move(egress)) {}

  std::uint32_t lane(std::uint32_t ebc) const { return dev_.lane_of_exchange_context(ebc); }

  SyncPoint& add(const std::string& label) {
    SyncPoint sp;
    sp.id = static_cast<std::uint32_t>(sps_.size());
    sp.label = label;
    for (std::uint32_t l = 0; l < dev_.sxp_lanes; ++l) {
      SxpRegisters r;
      r.ksellimit.push_back({0, kRegion0});
      sp.registers.push_back(r);
    }
    sps_.push_back(std::move(sp));
    return sps_.back();
  }

  // Lays the groups out in the ring and fills registers, key loads and
  // mappings. Returns the ring address of each Io, in group order.
  std::vector<std::vector<std::uint64_t>> place(SyncPoint& sp, const std::vector<Group>& groups) {
    std::uint64_t cursor = kRegion0;
    std::vector<std::vector<std::uint64_t>> addrs;
    for (const auto& g : groups) {
      const std::uint32_t l = lane(g.ebc);
      auto& r = sp.registers[l];
      std::uint64_t size = 0;
      for (const auto& io : g.ios) size += std::uint64_t(io.frames) * io.frame_size;
      const std::uint64_t region_size = round_up(std::max<std::uint64_t>(size, 1), 4096);
      if (cursor + region_size > dev_.ring_buffer_size) {
        infeasible("sync point " + std::to_string(sp.id) + " does not fit in the ring buffer");
      }
      const auto region = static_cast<std::uint32_t>(r.ksellimit.size());
      if (region >= kMaxKeyRegions) infeasible("more than 16 key regions on one SXP");
      r.ksellimit.push_back({cursor, cursor + region_size});
      r.kxbctxmap[g.ebc] = g.ctx;
      r.kphysmap[g.ctx] = region;
      const auto& eg = egress_[l];
      if (std::find(eg.begin(), eg.end(), g.ctx) == eg.end()) sp.key_loads.push_back({l, g.ctx, g.key});
      std::vector<std::uint64_t> a;
      std::uint64_t at = cursor;
      for (const auto& io : g.ios) {
        Mapping m;
        m.kind = io.kind;
        m.stream_id = io.stream;
        m.tile = io.tile;
        m.region = region;
        m.address = at;
        m.first_frame = io.first_frame;
        m.frame_count = io.frames;
        m.frame_size = io.frame_size;
        sp.mappings.push_back(m);
        a.push_back(at);
        at += std::uint64_t(io.frames) * io.frame_size;
      }
      addrs.push_back(std::move(a));
      cursor += region_size;
    }
    return addrs;
  }

  std::vector<SyncPoint> take() { return std::move(sps_); }

  static constexpr std::uint64_t kRegion0 = 4096;

 private:
  const DeviceConfig& dev_;
  std::vector<std::vector<std::uint32_t>> egress_;
  std::vector<SyncPoint> sps_;
};

// Packs one-ebc requests into rounds: one request per ebc per round and at
// most `pool[lane]` per lane.
template <typename T, typename EbcOf>
std::vector<std::vector<T>> pack_rounds(const std::vector<T>& items, EbcOf ebc_of, const DeviceConfig& dev,
                                        const std::vector<std::uint32_t>& pool) {
  std::vector<std::vector<T>> rounds;
  std::vector<std::set<std::uint32_t>> used;
  std::vector<std::vector<std::uint32_t>> per_lane;
  for (const auto& it : items) {
    const std::uint32_t e = ebc_of(it);
    const std::uint32_t l = dev.lane_of_exchange_context(e);
    std::size_t r = 0;
    for (; r < rounds.size(); ++r) {
      if (!used[r].count(e) && per_lane[r][l] < pool[l]) break;
    }
    if (r == rounds.size()) {
      rounds.emplace_back();
      used.emplace_back();
      per_lane.emplace_back(dev.sxp_lanes, 0);
    }
    rounds[r].push_back(it);
    used[r].insert(e);
    per_lane[r][l]++;
  }
  return rounds;
}

}  // namespace

CompiledJob compile(const JobDescription& job, const DeviceConfig& dev, std::uint32_t ipu_id) {
  dev.validate();
  check_frame_size(job.frame_size);
  if (job.model_party.empty() || job.data_parties.empty()) {
    throw Error(Errc::InvalidArgument, "a job needs a model party and at least one data party");
  }
  if (job.dim == 0 || job.batch_per_tile == 0 || job.steps == 0) {
    throw Error(Errc::InvalidArgument, "dim, batch_per_tile and steps must be positive");
  }
  {
    std::set<std::string> names(job.data_parties.begin(), job.data_parties.end());
    if (names.size() != job.data_parties.size()) throw Error(Errc::InvalidArgument, "duplicate data party");
  }
  std::vector<std::string> parties{job.model_party};
  for (const auto& p : job.data_parties) {
    if (std::find(parties.begin(), parties.end(), p) == parties.end()) parties.push_back(p);
  }
  for (const auto& r : job.model_receivers) {
    if (std::find(parties.begin(), parties.end(), r) == parties.end()) {
      throw Error(Errc::InvalidArgument, "model receiver '" + r + "' is not a party");
    }
  }

  const std::uint32_t T = dev.tile_count;
  const auto P = static_cast<std::uint32_t>(job.data_parties.size());
  if (T < P) infeasible("fewer tiles than data parties");
  const std::uint32_t tpe = dev.tiles_per_exchange_context;
  const std::uint32_t E = dev.exchange_contexts();
  const std::uint32_t lanes = dev.sxp_lanes;
  auto ebc_of = [&](std::uint32_t t) { return t / tpe; };
  auto tiles_of_ebc = [&](std::uint32_t e) {
    std::vector<std::uint32_t> v;
    for (std::uint32_t t = e * tpe; t < std::min(T, (e + 1) * tpe); ++t) v.push_back(t);
    return v;
  };

  const std::uint32_t B = job.batch_per_tile, D = job.dim, S = job.sample_bytes();
  const std::uint32_t fs = job.frame_size;
  const std::uint32_t payload = fs - static_cast<std::uint32_t>(kFrameOverhead);
  const bool ckpt = job.checkpoint_every > 0 && job.checkpoint_every < job.steps;

  // Tile sets per data party.
  std::vector<std::uint32_t> first(P), count(P);
  for (std::uint32_t p = 0, t = 0; p < P; ++p) {
    count[p] = T / P + (p < T % P ? 1 : 0);
    first[p] = t;
    t += count[p];
  }

  // Egress contexts: model key on the lane of tile 0, checkpoint keys for up
  // to four exchange-block contexts per lane.
  std::vector<std::uint32_t> ebcs_on_lane(lanes, 0);
  for (std::uint32_t e = 0; e < E; ++e) ebcs_on_lane[dev.lane_of_exchange_context(e)]++;
  const std::uint32_t lane0 = dev.lane_of_tile(0);
  std::vector<std::vector<std::uint32_t>> egress(lanes), ckpt_ctx(lanes);
  std::vector<KeyLoad> egress_keys;
  std::uint32_t model_ctx = 0;
  std::vector<std::uint32_t> pool(lanes);
  for (std::uint32_t l = 0; l < lanes; ++l) {
    std::uint32_t next = kKeyContexts - 1;
    if (l == lane0) {
      model_ctx = next--;
      egress[l].push_back(model_ctx);
      egress_keys.push_back({l, model_ctx, {KeyRef::Kind::Model, kModelStreamId}});
    }
    if (ckpt) {
      for (std::uint32_t i = 0; i < std::min<std::uint32_t>(ebcs_on_lane[l], 4); ++i) {
        ckpt_ctx[l].push_back(next);
        egress[l].push_back(next);
        egress_keys.push_back({l, next, {KeyRef::Kind::CheckpointSave, kCheckpointStreamId}});
        --next;
      }
    }
    pool[l] = kKeyContexts - static_cast<std::uint32_t>(egress[l].size());
  }

  // Tile memory layout.
  std::uint32_t max_tp = *std::max_element(count.begin(), count.end());
  const std::uint32_t W = tl::kHeapOffset;
  const std::uint32_t SAMPLES = W + D * 4;
  const std::uint32_t GRAD = SAMPLES + B * S;
  const std::uint32_t STAGING = GRAD + D * 4;
  const std::uint32_t GRADTABLE = STAGING + max_tp * B * S;
  const std::uint32_t GSUM = GRADTABLE + T * D * 4;
  const std::uint32_t SCRATCH = GSUM + D * 4;
  const std::uint64_t END = std::uint64_t(SCRATCH) + kCheckpointHeader + D * 4;
  if (END > dev.tile_memory) infeasible("job working set exceeds tile memory");

  const std::uint32_t blob = kCheckpointHeader + D * 4;
  const auto ckpt_frames = static_cast<std::uint32_t>(frame_count(blob, fs));
  const auto model_frames = static_cast<std::uint32_t>(frame_count(D * 4, fs));

  CompiledJob out;
  out.description = job;
  JobManifest& m = out.manifest;
  m.job = job.job;
  m.device = dev;
  m.ipu_id = ipu_id;
  m.bootloader_measurement = bootloader_measurement();
  m.parties = parties;
  m.model_receivers = job.model_receivers;
  m.egress_keys = egress_keys;
  m.streams.push_back({kCodeStreamId, job.model_party, StreamKind::Code, tl::kBinarySize, tl::kCodeFrameSize});
  m.streams.push_back({kWeightsStreamId, job.model_party, StreamKind::Input, D * 4, fs});
  m.stream_assignment[kCodeStreamId] = job.model_party;
  m.stream_assignment[kWeightsStreamId] = job.model_party;
  for (std::uint32_t p = 0; p < P; ++p) {
    const std::uint32_t id = kFirstDataStreamId + p;
    m.streams.push_back({id, job.data_parties[p], StreamKind::Input,
                         std::uint64_t(job.steps) * count[p] * B * S, fs});
    m.stream_assignment[id] = job.data_parties[p];
    for (std::uint32_t t = first[p]; t < first[p] + count[p]; ++t) out.party_tiles[job.data_parties[p]].push_back(t);
  }
  if (ckpt) m.streams.push_back({kCheckpointStreamId, "", StreamKind::Checkpoint, blob, fs});
  m.streams.push_back({kModelStreamId, "", StreamKind::Output, D * 4, fs});

  Builder b(dev, egress);
  std::vector<TileProgram> progs(T);
  for (auto& p : progs) {
    p.state_offset = W;
    p.state_size = D * 4;
    p.scratch_offset = SCRATCH;
  }

  // Boot rounds: one code context per exchange-block context.
  {
    std::vector<std::uint32_t> all(E);
    for (std::uint32_t e = 0; e < E; ++e) all[e] = e;
    auto rounds = pack_rounds(all, [](std::uint32_t e) { return e; }, dev, pool);
    for (std::size_t r = 0; r < rounds.size(); ++r) {
      SyncPoint& sp = b.add("boot-" + std::to_string(r));
      sp.boot = true;
      std::vector<Group> groups;
      std::vector<std::uint32_t> next_ctx(lanes, 0);
      for (auto e : rounds[r]) {
        Group g{e, next_ctx[b.lane(e)]++, {KeyRef::Kind::Stream, kCodeStreamId}, {}};
        for (auto t : tiles_of_ebc(e)) {
          g.ios.push_back({t, MappingKind::CodeLoad, kCodeStreamId, 0, tl::kBinaryFrames, tl::kCodeFrameSize});
        }
        groups.push_back(std::move(g));
      }
      b.place(sp, groups);
    }
  }

  // Checkpoint rounds: exchange-block contexts of each lane in chunks that
  // fit the lane's checkpoint contexts.
  std::vector<std::vector<std::uint32_t>> ckpt_rounds;
  if (ckpt) {
    std::vector<std::vector<std::uint32_t>> by_lane(lanes);
    for (std::uint32_t e = 0; e < E; ++e) by_lane[dev.lane_of_exchange_context(e)].push_back(e);
    std::size_t n = 0;
    for (std::uint32_t l = 0; l < lanes; ++l) {
      if (!by_lane[l].empty()) n = std::max(n, (by_lane[l].size() + ckpt_ctx[l].size() - 1) / ckpt_ctx[l].size());
    }
    ckpt_rounds.resize(n);
    for (std::uint32_t l = 0; l < lanes; ++l) {
      for (std::size_t i = 0; i < by_lane[l].size(); ++i) ckpt_rounds[i / ckpt_ctx[l].size()].push_back(by_lane[l][i]);
    }
  }
  auto ckpt_slot = [&](std::uint32_t e, const std::vector<std::uint32_t>& round) {
    std::uint32_t k = 0;
    for (auto x : round) {
      if (x == e) break;
      if (dev.lane_of_exchange_context(x) == dev.lane_of_exchange_context(e)) ++k;
    }
    return k;
  };

  // Restore rounds (resume only).
  if (ckpt) {
    for (std::size_t r = 0; r < ckpt_rounds.size(); ++r) {
      SyncPoint& sp = b.add("restore-" + std::to_string(r));
      sp.resume_only = true;
      std::vector<Group> groups;
      for (auto e : ckpt_rounds[r]) {
        Group g{e, ckpt_slot(e, ckpt_rounds[r]), {KeyRef::Kind::CheckpointLoad, kCheckpointStreamId}, {}};
        for (auto t : tiles_of_ebc(e)) {
          g.ios.push_back({t, MappingKind::CheckpointLoad, kCheckpointStreamId, 0, ckpt_frames, fs});
        }
        groups.push_back(std::move(g));
      }
      auto addrs = b.place(sp, groups);
      for (auto& p : progs) p.resume.push_back(SyncPhase{sp.id, {}});
      for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        for (std::size_t k = 0; k < groups[gi].ios.size(); ++k) {
          const auto& io = groups[gi].ios[k];
          LoadPhase lp;
          lp.target = LoadTarget::Checkpoint;
          lp.stream_id = kCheckpointStreamId;
          lp.address = addrs[gi][k];
          lp.frame_count = io.frames;
          lp.frame_size = fs;
          progs[io.tile].resume.push_back(lp);
        }
      }
    }
  }

  struct LoadReq {
    std::uint32_t tile, stream;
    std::uint64_t first_frame;
    std::uint32_t frames, skip, length, dest;
  };
  auto window = [&](std::uint32_t tile, std::uint32_t stream, std::uint64_t off, std::uint32_t len,
                    std::uint32_t dest) {
    const std::uint64_t f0 = off / payload, f1 = (off + len - 1) / payload;
    return LoadReq{tile, stream, f0, static_cast<std::uint32_t>(f1 - f0 + 1),
                   static_cast<std::uint32_t>(off - f0 * payload), len, dest};
  };

  for (std::uint32_t s = 0; s < job.steps; ++s) {
    const std::string step = "step" + std::to_string(s);
    std::vector<LoadReq> loads;
    if (s == 0) loads.push_back(window(0, kWeightsStreamId, 0, D * 4, W));
    for (std::uint32_t p = 0; p < P; ++p) {
      const std::uint32_t len = count[p] * B * S;
      loads.push_back(window(first[p], kFirstDataStreamId + p, std::uint64_t(s) * len, len, STAGING));
    }
    auto rounds = pack_rounds(loads, [&](const LoadReq& l) { return ebc_of(l.tile); }, dev, pool);
    for (std::size_t r = 0; r < rounds.size(); ++r) {
      SyncPoint& sp = b.add(step + "-load-" + std::to_string(r));
      std::vector<Group> groups;
      std::vector<std::uint32_t> next_ctx(lanes, 0);
      for (const auto& l : rounds[r]) {
        const std::uint32_t e = ebc_of(l.tile);
        Io io{l.tile, MappingKind::InputLoad, l.stream, l.first_frame, l.frames, fs, l.skip, l.length, l.dest};
        groups.push_back({e, next_ctx[b.lane(e)]++, {KeyRef::Kind::Stream, l.stream}, {io}});
      }
      auto addrs = b.place(sp, groups);
      for (auto& p : progs) p.body.push_back(SyncPhase{sp.id, {}});
      for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const Io& io = groups[gi].ios[0];
        LoadPhase lp;
        lp.target = LoadTarget::Input;
        lp.stream_id = io.stream;
        lp.address = addrs[gi][0];
        lp.first_frame = static_cast<std::uint32_t>(io.first_frame);
        lp.frame_count = io.frames;
        lp.frame_size = fs;
        lp.skip = io.skip;
        lp.length = io.length;
        lp.dest = io.dest;
        progs[io.tile].body.push_back(lp);
      }
    }

    // Scatter: loaders hand each tile its batch, tile 0 broadcasts weights.
    {
      SyncPoint& sp = b.add(step + "-scatter");
      for (std::uint32_t t = 0; t < T; ++t) {
        SyncPhase ph{sp.id, {}};
        if (t == 0) ph.moves.push_back({0, T, W, 0, W, 0, D * 4});
        for (std::uint32_t p = 0; p < P; ++p) {
          if (first[p] == t) ph.moves.push_back({first[p], count[p], STAGING, B * S, SAMPLES, 0, B * S});
        }
        progs[t].body.push_back(ph);
      }
    }
    for (auto& p : progs) p.body.push_back(ComputePhase{ComputeOp::SgdStep, W, SAMPLES, B, D, GRAD, 0});
    {
      SyncPoint& sp = b.add(step + "-gather");
      for (std::uint32_t t = 0; t < T; ++t) {
        progs[t].body.push_back(SyncPhase{sp.id, {{0, 1, GRAD, 0, GRADTABLE + t * D * 4, 0, D * 4}}});
      }
    }
    progs[0].body.push_back(ComputePhase{ComputeOp::Sum, GSUM, GRADTABLE, T, D, 0, 0});
    progs[0].body.push_back(ComputePhase{ComputeOp::Axpy, W, GSUM, 0, D, 0, -job.learning_rate});

    if (ckpt && (s + 1) % job.checkpoint_every == 0 && s + 1 < job.steps) {
      std::vector<std::pair<std::uint32_t, std::size_t>> patch;  // tile, phase index
      for (std::size_t r = 0; r < ckpt_rounds.size(); ++r) {
        SyncPoint& sp = b.add(step + "-save-" + std::to_string(r));
        std::vector<Group> groups;
        for (auto e : ckpt_rounds[r]) {
          const std::uint32_t l = dev.lane_of_exchange_context(e);
          Group g{e, ckpt_ctx[l][ckpt_slot(e, ckpt_rounds[r])], {KeyRef::Kind::CheckpointSave, kCheckpointStreamId}, {}};
          for (auto t : tiles_of_ebc(e)) {
            g.ios.push_back({t, MappingKind::CheckpointStore, kCheckpointStreamId, 0, ckpt_frames, fs});
          }
          groups.push_back(std::move(g));
        }
        auto addrs = b.place(sp, groups);
        Bytes immediate;
        append(immediate, as_bytes("CKPT"));
        put_be32(immediate, s + 1);
        if (r == 0) {
          Mapping meta;
          meta.kind = MappingKind::MetadataStore;
          meta.stream_id = 0;
          meta.tile = 0;
          meta.region = 0;
          meta.address = 0;
          meta.frame_count = 1;
          meta.frame_size = 16;
          sp.mappings.push_back(meta);
        }
        for (auto& p : progs) p.body.push_back(SyncPhase{sp.id, {}});
        if (r == 0) {
          StorePhase md;
          md.target = StoreTarget::Metadata;
          md.address = 0;
          md.immediate = immediate;
          progs[0].body.push_back(md);
        }
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
          for (std::size_t k = 0; k < groups[gi].ios.size(); ++k) {
            const Io& io = groups[gi].ios[k];
            StorePhase st;
            st.target = StoreTarget::Checkpoint;
            st.stream_id = kCheckpointStreamId;
            st.address = addrs[gi][k];
            st.frame_size = fs;
            patch.push_back({io.tile, progs[io.tile].body.size()});
            progs[io.tile].body.push_back(st);
          }
        }
      }
      for (auto [t, idx] : patch) {
        std::get<StorePhase>(progs[t].body[idx]).resume_pc = static_cast<std::uint32_t>(progs[t].body.size());
      }
    }
  }

  // Final model store under k_m.
  {
    SyncPoint& sp = b.add("final");
    Group g{ebc_of(0), model_ctx, {KeyRef::Kind::Model, kModelStreamId},
            {{0, MappingKind::OutputStore, kModelStreamId, 0, model_frames, fs}}};
    auto addrs = b.place(sp, {g});
    for (auto& p : progs) p.body.push_back(SyncPhase{sp.id, {}});
    StorePhase st;
    st.target = StoreTarget::Output;
    st.stream_id = kModelStreamId;
    st.address = addrs[0][0];
    st.frame_size = fs;
    st.src = W;
    st.length = D * 4;
    progs[0].body.push_back(st);
  }

  m.sync_points = b.take();
  for (std::uint32_t t = 0; t < T; ++t) {
    Bytes bin = progs[t].encode();
    if (bin.size() > tl::kBinarySize) {
      infeasible("program for tile " + std::to_string(t) + " needs " + std::to_string(bin.size()) +
                 " bytes; the binary region holds " + std::to_string(tl::kBinarySize));
    }
    bin.resize(tl::kBinarySize, 0);
    m.tile_binary_hashes.push_back(crypto::sha256(bin));
    out.binaries.push_back(std::move(bin));
  }
  m.binary_hash = chain_binary_hashes(m.tile_binary_hashes);
  out.programs = std::move(progs);
  m.validate();
  return out;
}

}  // namespace itx
