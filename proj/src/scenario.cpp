#include "itx/scenario.hpp"

#include <random>

namespace itx {

JobDescription toy_job() {
  JobDescription j;
  j.job = "toy-regression";
  j.model_party = "model-owner";
  j.data_parties = {"hospital-a", "hospital-b"};
  j.model_receivers = {"model-owner"};
  j.dim = 4;
  j.batch_per_tile = 2;
  j.steps = 4;
  j.learning_rate = 1 << 12;
  j.checkpoint_every = 2;
  j.frame_size = 1024;
  return j;
}

namespace {

std::int32_t q16_in(std::mt19937_64& rng, std::int32_t lim) {
  std::uniform_int_distribution<std::int32_t> d(-lim, lim);
  return d(rng);
}

ByteArray<32> seed_bytes(std::uint64_t seed, std::string_view label) {
  Bytes s;
  put_be64(s, seed);
  return crypto::kdf(s, label);
}

}  // namespace

Bytes synthetic_samples(std::uint32_t dim, std::uint64_t rows, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::int32_t> truth(dim);
  std::mt19937_64 trng(0x17);
  for (auto& w : truth) w = q16_in(trng, 2 << 16);
  Bytes out((dim + 1) * 4 * rows);
  for (std::uint64_t r = 0; r < rows; ++r) {
    std::int64_t dot = 0;
    const std::size_t base = r * (dim + 1) * 4;
    for (std::uint32_t j = 0; j < dim; ++j) {
      std::int32_t x = q16_in(rng, 1 << 16);
      dot += std::int64_t(truth[j]) * x;
      set_le32(out, base + 4 * j, static_cast<std::uint32_t>(x));
    }
    std::int32_t y = static_cast<std::int32_t>((dot >> 16) + q16_in(rng, 1 << 10));
    set_le32(out, base + 4 * dim, static_cast<std::uint32_t>(y));
  }
  return out;
}

Bytes synthetic_weights(std::uint32_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Bytes out(dim * 4);
  for (std::uint32_t j = 0; j < dim; ++j) set_le32(out, 4 * j, static_cast<std::uint32_t>(q16_in(rng, 1 << 14)));
  return out;
}

AdversaryScript random_schedule(const RunInputs& in, std::uint64_t seed) {
  using K = AdversaryAction::Kind;
  std::mt19937_64 rng(seed);
  auto pick = [&](std::uint64_t n) { return n ? std::uniform_int_distribution<std::uint64_t>(0, n - 1)(rng) : 0; };
  const auto& m = in.manifest;
  std::vector<std::uint32_t> streams{kCodeStreamId};
  for (const auto& [id, f] : in.streams) streams.push_back(id);
  auto frames_of = [&](std::uint32_t s) -> std::uint64_t {
    if (s == kCodeStreamId) return std::uint64_t(in.code.size()) * tile_layout::kBinaryFrames;
    return in.streams.at(s).frames.size();
  };
  std::vector<K> kinds{K::TamperFrame,      K::ReplayFrame, K::ReorderFrames, K::SwapStreams,   K::SwapTileBinaries,
                       K::SkipKeyLoad,      K::TamperRegister, K::EditManifest};
  if (!in.alternate_code.empty()) kinds.push_back(K::SwapBinary);
  if (in.checkpoint) kinds.push_back(K::SubstituteCheckpoint);
  const auto ops = HostPort::guarded_operations();

  AdversaryScript s;
  const auto n = 1 + pick(3);
  for (std::uint64_t i = 0; i < n; ++i) {
    AdversaryAction a;
    a.kind = kinds[pick(kinds.size())];
    a.stream = streams[pick(streams.size())];
    const auto nf = frames_of(a.stream);
    a.index = pick(nf);
    a.source = pick(nf);
    a.sync = m.sync_points[pick(m.sync_points.size())].id;
    switch (a.kind) {
      case K::TamperFrame:
        a.bit = static_cast<std::uint32_t>(pick(m.stream(a.stream).frame_total_size * 8));
        break;
      case K::ReplayFrame:
      case K::ReorderFrames:
        if (nf > 1 && a.source == a.index) a.source = (a.index + 1) % nf;
        break;
      case K::SwapStreams: {
        const auto i = pick(streams.size());
        a.stream = streams[i];
        a.source = streams[(i + 1 + pick(streams.size() - 1)) % streams.size()];
        break;
      }
      case K::SwapTileBinaries:
      case K::SubstituteCheckpoint:
        a.index = pick(m.device.tile_count);
        a.source = (a.index + 1 + pick(m.device.tile_count - 1)) % m.device.tile_count;
        break;
      case K::TamperRegister:
        a.op = ops[pick(ops.size())];
        break;
      case K::EditManifest:
        a.delta = std::int64_t(1 + pick(8)) * 16;
        break;
      default:
        break;
    }
    s.actions.push_back(a);
  }
  return s;
}

Scenario::Scenario(ScenarioOptions opt)
    : options(std::move(opt)),
      manufacturer(seed_bytes(options.seed, "manufacturer")),
      authority(seed_bytes(options.seed, "authority")) {
  firmware = manufacturer.firmware_bundle(Bytes{'s', 'b', 'l', '-', 'v', '1'}, Bytes{'c', 'c', 'e', '-', 'v', '1'},
                                          crypto::sha256(as_bytes("icu-firmware-v1")));
  board = std::make_unique<Board>(options.device, 0, manufacturer.provision(options.batch, options.device_info));
  board->ccu.first_boot();
  certify_board();

  job = compile(options.job, options.device, 0);
  for (const auto& name : job.manifest.parties) {
    PartyIdentity id;
    id.name = name;
    id.key = crypto::SigningKey::from_seed(seed_bytes(options.seed, "party:" + name));
    id.certificate = authority.issue(name, id.key.public_key());
    identities.emplace(name, std::move(id));
    PartySecrets s;
    s.party = name;
    s.new_session(false);
    secrets.emplace(name, std::move(s));
  }

  const auto& d = options.job;
  initial_weights = synthetic_weights(d.dim, options.seed * 31 + 1);
  auto tpp = tiles_per_party();
  for (std::size_t p = 0; p < d.data_parties.size(); ++p) {
    const std::uint64_t rows = std::uint64_t(d.steps) * tpp[p] * d.batch_per_tile;
    party_data.push_back(synthetic_samples(d.dim, rows, options.seed * 1000 + p));
  }
  const auto& mp = d.model_party;
  application = package_model(job, initial_weights, identities.at(mp), secrets.at(mp));
  for (std::size_t p = 0; p < d.data_parties.size(); ++p) {
    const auto& name = d.data_parties[p];
    const auto id = kFirstDataStreamId + static_cast<std::uint32_t>(p);
    data.emplace(id, package_data(job.manifest, id, party_data[p], identities.at(name), secrets.at(name)));
  }
}

void Scenario::certify_board() {
  boot = options.hardened_boot ? board->ccu.measured_boot_hardened(firmware) : board->ccu.measured_boot(firmware);
  certificates = manufacturer.certify(boot.chain, board->ccu.harvest_bootloader_manifest(),
                                      *manufacturer.expected_nonce(options.device_info));
  evidence = {boot.chain, certificates.cik, boot.pik_endorsement};
  policy.anchors = manufacturer.anchors();
  policy.cas = manufacturer.ca_bundle();
  policy.trusted_cce = {firmware.cce_measurement()};
}

void Scenario::update_secondary_bootloader(Bytes image) {
  firmware = manufacturer.firmware_bundle(std::move(image), firmware.cce_image, firmware.icu_measurement);
  boot = options.hardened_boot ? board->ccu.measured_boot_hardened(firmware) : board->ccu.measured_boot(firmware);
  evidence.device_chain = boot.chain;
  evidence.pik_endorsement = boot.pik_endorsement;
}

std::vector<std::uint32_t> Scenario::tiles_per_party() const {
  std::vector<std::uint32_t> out;
  for (const auto& p : options.job.data_parties) out.push_back(static_cast<std::uint32_t>(job.party_tiles.at(p).size()));
  return out;
}

RunInputs Scenario::trusted_inputs() const {
  RunInputs in;
  in.manifest = job.manifest;
  in.code = application.code;
  in.streams[kWeightsStreamId] = application.weights;
  for (const auto& [id, pkg] : data) in.streams[id] = pkg.data;
  return in;
}

RunInputs Scenario::normal_inputs() const {
  RunInputs in;
  in.manifest = job.manifest;
  in.code = clear_code(job);
  const auto fs = options.job.frame_size;
  in.streams[kWeightsStreamId] = clear_stream(StreamIV::data(kWeightsStreamId), initial_weights, fs);
  for (std::size_t p = 0; p < party_data.size(); ++p) {
    const auto id = kFirstDataStreamId + static_cast<std::uint32_t>(p);
    in.streams[id] = clear_stream(StreamIV::data(id), party_data[p], fs);
  }
  return in;
}

std::vector<RunParty> Scenario::run_parties() {
  std::vector<RunParty> out;
  for (const auto& name : job.manifest.parties) {
    RunParty rp;
    rp.identity = &identities.at(name);
    rp.secrets = &secrets.at(name);
    rp.policy = policy;
    rp.expected_manifest = job.manifest.measurement();
    out.push_back(rp);
  }
  return out;
}

RunResult Scenario::run_trusted(const RunOptions& opt, EventLog* log, const std::optional<CheckpointSet>& checkpoint) {
  RunInputs in = trusted_inputs();
  in.checkpoint = checkpoint;
  return run_with(in, opt, log);
}

RunResult Scenario::run_with(const RunInputs& inputs, const RunOptions& opt, EventLog* log) {
  EventLog local;
  auto parties = run_parties();
  RunOptions o = opt;
  o.mode = DeviceMode::Trusted;
  return run_job(*board, inputs, parties, evidence, o, log ? *log : local);
}

std::vector<StreamFile> Scenario::alternate_code(std::int32_t learning_rate) const {
  auto d = options.job;
  d.learning_rate = learning_rate;
  auto variant = compile(d, options.device, 0);
  const auto& mp = d.model_party;
  PartySecrets s = secrets.at(mp);
  return package_model(variant, initial_weights, identities.at(mp), s).code;
}

RunResult Scenario::run_normal(const RunOptions& opt, EventLog* log) {
  EventLog local;
  auto parties = run_parties();
  RunOptions o = opt;
  o.mode = DeviceMode::Normal;
  return run_job(*board, normal_inputs(), parties, evidence, o, log ? *log : local);
}

std::optional<Bytes> Scenario::model_of(const RunResult& r) const {
  if (!r.completed || !r.model || job.manifest.model_receivers.empty()) return std::nullopt;
  const auto& rx = job.manifest.model_receivers.front();
  auto it = r.released_model_keys.find(rx);
  if (it == r.released_model_keys.end()) return std::nullopt;
  auto k = receive_model_key(secrets.at(rx), r.report, it->second);
  if (!k) return std::nullopt;
  return decrypt_model(*r.model, *k, options.job.dim * 4);
}

Bytes Scenario::clear_model_of(const RunResult& r) const {
  if (!r.model) throw Error(Errc::InvalidPhase, "run produced no model");
  return clear_model(*r.model, options.job.dim * 4);
}

Bytes Scenario::reference_model() const {
  return reference_training(options.job, initial_weights, party_data, tiles_per_party());
}

void Scenario::new_sessions(bool keep_prior_nonce) {
  for (auto& [name, s] : secrets) s.new_session(keep_prior_nonce);
}

}  // namespace itx
