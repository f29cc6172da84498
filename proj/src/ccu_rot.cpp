#include "itx/ccu_rot.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <set>

#include "itx/error.hpp"

namespace itx {

namespace {

constexpr std::string_view kFlashMagic = "ITXFLASH1";

struct Zeroed {
  crypto::Key256& k;
  ~Zeroed() { secure_zero(k); }
};

}  // namespace

Digest measure(ByteView image) { return crypto::sha256(image); }

Bytes firmware_signing_message(ByteView secondary_bootloader) {
  Bytes m;
  append(m, as_bytes("ITX-FIRMWARE"));
  append(m, measure(secondary_bootloader));
  return m;
}

const char* to_string(TeePhase p) {
  switch (p) {
    case TeePhase::NoTee: return "NoTee";
    case TeePhase::Initialized: return "Initialized";
    case TeePhase::Launched: return "Launched";
    case TeePhase::Terminated: return "Terminated";
  }
  return "?";
}

crypto::Signature SecondaryStage::sign_with_cik(ByteView message) const {
  if (!cik_) throw Error(Errc::NoCapability, "CIK private key is not available in this stage");
  return cik_->sign(message);
}

void Ccu::TeeState::wipe() {
  y.wipe();
  for (auto& [id, k] : stream_keys) secure_zero(k);
  for (auto& [p, k] : wrapping_keys) secure_zero(k);
  if (k_load) secure_zero(*k_load);
  secure_zero(k_save);
  secure_zero(k_m);
  stream_keys.clear();
  wrapping_keys.clear();
  k_load.reset();
}

Ccu::Ccu(Device& device, PrimaryBootloader rom, crypto::EntropySource entropy)
    : device_(device), rom_(std::move(rom)), entropy_(std::move(entropy)) {
  device_.set_security_listener([this](const std::string& d) { on_security_exception(d); });
  device_.set_reset_listener([this](ResetKind k) { on_device_reset(k); });
}

void Ccu::note(std::string line) { log_.push_back(std::move(line)); }

// ------------------------------------------------------------ provisioning

void Ccu::first_boot() {
  std::lock_guard g(mu_);
  if (uds_) throw Error(Errc::AlreadyProvisioned, "device secret already provisioned");
  ByteArray<32> uds{};
  entropy_(uds);
  uds_ = uds;
  secure_zero(uds);
  note("PROVISIONED");
}

bool Ccu::provisioned() const {
  std::lock_guard g(mu_);
  return uds_.has_value();
}

void Ccu::save_flash(const std::string& path) const {
  std::lock_guard g(mu_);
  if (!uds_) throw Error(Errc::NotProvisioned, "nothing to persist");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(Errc::IoError, "cannot write " + path);
  f.write(kFlashMagic.data(), static_cast<std::streamsize>(kFlashMagic.size()));
  f.write(reinterpret_cast<const char*>(uds_->data()), 32);
  if (!f) throw Error(Errc::IoError, "cannot write " + path);
}

void Ccu::load_flash(const std::string& path) {
  std::lock_guard g(mu_);
  if (uds_) throw Error(Errc::AlreadyProvisioned, "device secret already provisioned");
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::IoError, "cannot read " + path);
  Bytes raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (raw.size() != kFlashMagic.size() + 32 ||
      !std::equal(kFlashMagic.begin(), kFlashMagic.end(), raw.begin())) {
    secure_zero(raw);
    throw Error(Errc::InvalidEncoding, "not a flash image: " + path);
  }
  ByteArray<32> uds{};
  std::copy(raw.begin() + kFlashMagic.size(), raw.end(), uds.begin());
  secure_zero(raw);
  uds_ = uds;
  secure_zero(uds);
}

// ----------------------------------------------------------- measured boot

BootResult Ccu::measured_boot(const FirmwareBundle& fw, const std::function<void(SecondaryStage&)>& hook) {
  return boot(fw, hook, false);
}

BootResult Ccu::measured_boot_hardened(const FirmwareBundle& fw, const std::function<void(SecondaryStage&)>& hook) {
  return boot(fw, hook, true);
}

BootResult Ccu::boot(const FirmwareBundle& fw, const std::function<void(SecondaryStage&)>& hook, bool hardened) {
  std::lock_guard g(mu_);
  if (!uds_) throw Error(Errc::NotProvisioned, "first boot has not run");

  // A reboot drops any previous identity and TEE.
  if (tee_) {
    tee_->wipe();
    tee_.reset();
  }
  phase_ = TeePhase::NoTee;
  ak_.reset();
  identity_.reset();

  if (!crypto::verify_signature(rom_.firmware_signing_key, firmware_signing_message(fw.secondary_bootloader),
                                fw.sbl_signature)) {
    note("BOOT halted: secondary bootloader signature invalid");
    throw Error(Errc::FirmwareAuthFailure, "secondary bootloader is not signed by the firmware key");
  }

  BootResult r;
  r.sbl_measurement = fw.sbl_measurement();
  r.icu_measurement = fw.icu_measurement;
  r.cce_measurement = fw.cce_measurement();

  // Primary stage: only this stage reads the UDS.
  crypto::Key256 hdi = crypto::kdf(*uds_, "HDI");
  crypto::Key256 cdi = crypto::kdf(*uds_, "CDI", r.sbl_measurement);
  Zeroed z1{hdi}, z2{cdi};

  auto derive = [](const crypto::Key256& secret, std::string_view label, ByteView ctx) {
    crypto::Key256 seed = crypto::kdf(secret, label, ctx);
    auto k = crypto::SigningKey::from_seed(seed);
    secure_zero(seed);
    return k;
  };

  const std::map<std::string, std::string> pik_ext = {{ext::kSblMeasurement, to_hex(r.sbl_measurement)},
                                                     {ext::kIcuMeasurement, to_hex(r.icu_measurement)}};
  const std::map<std::string, std::string> cik_ext = {{ext::kDeviceInfo, rom_.device_info}};

  SecondaryStage stage;
  std::optional<crypto::SigningKey> pik;
  if (hardened) {
    auto cik = derive(hdi, "CIK", {});
    pik = derive(cdi, "PIK", {});
    secure_zero(hdi);
    r.cik_public_key = cik.public_key();
    r.chain.push_back(make_certificate("CIK", "cik", cik.public_key(), cik, 1, kNoExpiry, cik_ext));
    r.chain.push_back(make_certificate("PIK", "pik", pik->public_key(), cik, 2, kNoExpiry, pik_ext));
    PikEndorsement e;
    e.pik_public_key = pik->public_key();
    e.sbl_measurement = r.sbl_measurement;
    e.signature = cik.sign(e.tbs());
    r.pik_endorsement = e;
    stage.cik_public_ = cik.public_key();
    // cik goes out of scope here; its destructor wipes the seed.
  } else {
    stage.cik_.emplace(derive(hdi, "CIK", {}));
    secure_zero(hdi);
    pik = derive(cdi, "PIK", {});
    stage.cik_public_ = stage.cik_->public_key();
    r.cik_public_key = stage.cik_public_;
    r.chain.push_back(make_certificate("CIK", "cik", r.cik_public_key, *stage.cik_, 1, kNoExpiry, cik_ext));
    r.chain.push_back(make_certificate("PIK", "pik", pik->public_key(), *stage.cik_, 2, kNoExpiry, pik_ext));
  }

  // Secondary stage.
  auto ak = derive(cdi, "AK", r.cce_measurement);
  secure_zero(cdi);
  r.pik_public_key = pik->public_key();
  r.ak_public_key = ak.public_key();
  r.chain.push_back(make_certificate("AK", "ak", ak.public_key(), *pik, 3, kNoExpiry,
                                     {{ext::kCceMeasurement, to_hex(r.cce_measurement)}}));
  if (hook) hook(stage);
  stage.cik_.reset();
  pik.reset();

  ak_.emplace(std::move(ak));
  identity_ = r;
  note(std::string("BOOT ") + (hardened ? "hardened " : "") + "cik=" + to_hex(ByteView(r.cik_public_key).first(8)) +
       " pik=" + to_hex(ByteView(r.pik_public_key).first(8)) + " ak=" + to_hex(ByteView(r.ak_public_key).first(8)));
  return r;
}

const BootResult& Ccu::identity() const {
  std::lock_guard g(mu_);
  if (!identity_) throw Error(Errc::InvalidPhase, "CCU has not booted");
  return *identity_;
}

crypto::PublicKey Ccu::batch_public_key(const ByteArray<32>& batch_secret) {
  crypto::Key256 seed = crypto::kdf(batch_secret, "BATCH");
  auto k = crypto::SigningKey::from_seed(seed);
  secure_zero(seed);
  return k.public_key();
}

BootloaderManifest Ccu::harvest_bootloader_manifest() const {
  std::lock_guard g(mu_);
  if (!identity_) throw Error(Errc::InvalidPhase, "CCU has not booted");
  BootloaderManifest m;
  m.batch = rom_.batch;
  m.nonce = rom_.provisioning_nonce;
  m.cik_public_key = identity_->cik_public_key;
  m.pik_public_key = identity_->pik_public_key;
  m.sbl_measurement = identity_->sbl_measurement;
  m.icu_measurement = identity_->icu_measurement;
  crypto::Key256 seed = crypto::kdf(rom_.batch_secret, "BATCH");
  auto key = crypto::SigningKey::from_seed(seed);
  secure_zero(seed);
  m.signature = key.sign(m.tbs());
  return m;
}

// ------------------------------------------------------------ TEE lifecycle

AttestationReport Ccu::tee_init(const JobManifest& manifest, const std::vector<PartyCredential>& parties,
                                std::uint32_t epoch, std::uint32_t checkpoint_id) {
  std::lock_guard g(mu_);
  if (phase_ != TeePhase::NoTee) {
    throw Error(Errc::InvalidPhase, std::string("tee_init in phase ") + to_string(phase_));
  }
  if (!ak_) throw Error(Errc::InvalidPhase, "CCU has not booted");
  if (!(manifest.device == device_.config()) || manifest.ipu_id != device_.ipu_id()) {
    throw Error(Errc::InvalidArgument, "manifest targets a different device");
  }
  manifest.validate();

  std::set<std::string> listed(manifest.parties.begin(), manifest.parties.end());
  std::set<std::string> seen;
  for (const auto& p : parties) {
    const auto& name = p.certificate.subject;
    if (!listed.count(name) || !seen.insert(name).second) {
      throw Error(Errc::PartyAuthFailure, "unexpected or duplicate party '" + name + "'");
    }
    if (!crypto::verify_signature(p.certificate.subject_public_key, share_signing_message(p.share),
                                  p.share_signature)) {
      throw Error(Errc::PartyAuthFailure, "key share signature of '" + name + "' does not verify");
    }
  }
  if (seen != listed) throw Error(Errc::PartyAuthFailure, "not every manifest party presented a key share");

  auto& ctl = device_.control();
  ctl.quiesce();
  ctl.enter_trusted();
  ctl.scrub();
  ctl.invalidate_all_keys();
  ctl.reset_sxps();
  RegisterFile regs = ctl.register_file();

  TeeState st;
  st.manifest = manifest;
  st.parties = parties;
  ByteArray<32> y{};
  entropy_(y);
  st.y = crypto::KeyShare::from_private(y);
  secure_zero(y);
  st.epoch = epoch;
  st.checkpoint_id = checkpoint_id;

  AttestationReport rep;
  rep.register_measurement = regs.measurement();
  rep.measured_registers = regs.names();
  rep.bootloader_measurement = bootloader_measurement();
  rep.manifest_measurement = manifest.measurement();
  rep.attributes.ccu_share = st.y.public_key;
  rep.attributes.epoch = epoch;
  rep.attributes.checkpoint_id = checkpoint_id;
  for (const auto& p : parties) rep.attributes.party_fingerprints[p.certificate.subject] = p.certificate.fingerprint_hex();
  rep.attributes.stream_assignment = manifest.stream_assignment;
  rep.attributes.model_receivers = manifest.model_receivers;
  rep.run_attributes_digest = rep.attributes.digest();
  rep.signature = ak_->sign(rep.tbs());

  tee_ = std::move(st);
  phase_ = TeePhase::Initialized;
  termination_reason_.clear();
  note("TEE_INIT job=" + manifest.job + " epoch=" + std::to_string(epoch) +
       " checkpoint=" + std::to_string(checkpoint_id));
  return rep;
}

void Ccu::tee_launch(const std::map<std::string, Bytes>& wrapped_packages, const HostStager& stage) {
  std::lock_guard g(mu_);
  if (phase_ != TeePhase::Initialized) {
    throw Error(Errc::InvalidPhase, std::string("tee_launch in phase ") + to_string(phase_));
  }
  TeeState& st = *tee_;
  const JobManifest& m = st.manifest;

  std::map<std::uint32_t, crypto::Key256> stream_keys;
  std::map<std::string, crypto::Key256> wrapping;
  std::vector<std::pair<Digest, RunNonce>> nonces, prior;
  auto fail = [&](const std::string& why) {
    for (auto& [id, k] : stream_keys) secure_zero(k);
    for (auto& [p, k] : wrapping) secure_zero(k);
    for (auto& [fp, n] : nonces) secure_zero(n);
    for (auto& [fp, n] : prior) secure_zero(n);
    note("KEY_EXCHANGE failed: " + why);
    throw Error(Errc::KeyExchangeFailure, why);
  };

  for (const auto& cred : st.parties) {
    const std::string& name = cred.certificate.subject;
    auto it = wrapped_packages.find(name);
    if (it == wrapped_packages.end()) fail("no key package from '" + name + "'");
    ByteArray<32> shared{};
    try {
      shared = crypto::x25519(st.y.private_key, cred.share);
    } catch (const Error&) {
      fail("degenerate key share from '" + name + "'");
    }
    crypto::Key256 w = wrapping_key(shared, cred.share, st.y.public_key, m.measurement());
    secure_zero(shared);
    auto pkg = unwrap_key_package(w, it->second);
    if (!pkg) {
      secure_zero(w);
      fail("key package of '" + name + "' does not unwrap");
    }
    wrapping[name] = w;
    secure_zero(w);

    std::vector<std::uint32_t> got;
    for (const auto& [id, k] : pkg->streams) got.push_back(id);
    std::sort(got.begin(), got.end());
    auto want = m.streams_of(name);
    std::sort(want.begin(), want.end());
    bool dup = std::adjacent_find(got.begin(), got.end()) != got.end();
    if (dup || got != want) {
      for (auto& [id, k] : pkg->streams) secure_zero(k);
      fail("key package of '" + name + "' does not cover its streams");
    }
    for (auto& [id, k] : pkg->streams) {
      stream_keys[id] = k;
      secure_zero(k);
    }
    nonces.emplace_back(cred.certificate.fingerprint(), pkg->run_nonce);
    if (st.epoch > 0) {
      if (!pkg->prior_run_nonce) fail("party '" + name + "' did not supply its prior run nonce");
      prior.emplace_back(cred.certificate.fingerprint(), *pkg->prior_run_nonce);
    }
    secure_zero(pkg->run_nonce);
    if (pkg->prior_run_nonce) secure_zero(*pkg->prior_run_nonce);
  }

  st.stream_keys = std::move(stream_keys);
  st.wrapping_keys = std::move(wrapping);
  st.k_save = derive_run_key(nonces, "ck");
  st.k_m = derive_run_key(nonces, "m");
  if (st.epoch > 0) st.k_load = derive_run_key(prior, "ck");
  for (auto& [fp, n] : nonces) secure_zero(n);
  for (auto& [fp, n] : prior) secure_zero(n);
  note("KEYS derived parties=" + std::to_string(st.parties.size()));

  auto& ctl = device_.control();
  try {
    ctl.autoload(bootloader_image());
    ctl.seed_counters(st.epoch, st.checkpoint_id);
    for (const auto& k : m.egress_keys) ctl.load_key(k.lane, k.ctx, key_for(k.key));

    std::vector<std::optional<Digest>> hashes(device_.config().tile_count);
    for (const auto& sp : m.sync_points) {
      if (!sp.boot) continue;
      if (stage) stage(sp);
      if (phase_ != TeePhase::Initialized) throw Error(Errc::SecurityException, "TEE terminated during launch");
      load_keys_locked(sp);
      for (const auto& mp : sp.mappings) {
        if (mp.kind != MappingKind::CodeLoad) continue;
        hashes.at(mp.tile) = ctl.run_bootloader(mp.tile, mp.address);
      }
    }
    std::vector<Digest> hs;
    for (std::size_t t = 0; t < hashes.size(); ++t) {
      if (!hashes[t]) device_.security_exception("tile " + std::to_string(t) + " received no binary");
      hs.push_back(*hashes[t]);
    }
    if (chain_binary_hashes(hs) != m.binary_hash) {
      device_.security_exception("binary hash does not match the manifest");
    }
    ctl.start_execution();
  } catch (const Error& e) {
    if (phase_ != TeePhase::Terminated) terminate_locked(std::string("launch failed: ") + e.what());
    if (e.code() == Errc::SecurityException) throw;
    throw Error(Errc::SecurityException, std::string("launch failed: ") + e.what());
  }

  phase_ = TeePhase::Launched;
  note("TEE_LAUNCH binary=" + to_hex(ByteView(m.binary_hash).first(8)));
}

const crypto::Key256& Ccu::key_for(const KeyRef& ref) const {
  const TeeState& st = *tee_;
  switch (ref.kind) {
    case KeyRef::Kind::Stream: {
      auto it = st.stream_keys.find(ref.stream_id);
      if (it == st.stream_keys.end()) {
        throw Error(Errc::KeyExchangeFailure, "no key for stream " + std::to_string(ref.stream_id));
      }
      return it->second;
    }
    case KeyRef::Kind::CheckpointLoad:
      if (!st.k_load) throw Error(Errc::InvalidPhase, "no checkpoint to load in a fresh run");
      return *st.k_load;
    case KeyRef::Kind::CheckpointSave: return st.k_save;
    case KeyRef::Kind::Model: return st.k_m;
  }
  throw Error(Errc::InvalidArgument, "bad key reference");
}

void Ccu::load_keys_locked(const SyncPoint& sp) {
  const JobManifest& m = tee_->manifest;
  auto& ctl = device_.control();
  std::set<std::pair<std::uint32_t, std::uint32_t>> egress;
  for (const auto& k : m.egress_keys) egress.insert({k.lane, k.ctx});
  for (std::uint32_t lane = 0; lane < device_.lanes(); ++lane) {
    for (std::uint32_t c = 0; c < kKeyContexts; ++c) {
      if (!egress.count({lane, c}) && device_.sxp(lane).key_loaded(c)) ctl.invalidate_key(lane, c);
    }
  }
  for (const auto& kl : sp.key_loads) ctl.load_key(kl.lane, kl.ctx, key_for(kl.key));
  for (std::uint32_t lane = 0; lane < device_.lanes() && lane < sp.registers.size(); ++lane) {
    ctl.program_sxp(lane, sp.registers[lane]);
  }
  note("LOAD_KEYS sync=" + std::to_string(sp.id) + " keys=" + std::to_string(sp.key_loads.size()));
}

void Ccu::tee_load_keys(std::uint32_t sync_point) {
  std::lock_guard g(mu_);
  if (phase_ != TeePhase::Launched) {
    throw Error(Errc::InvalidPhase, std::string("tee_load_keys in phase ") + to_string(phase_));
  }
  const SyncPoint& sp = tee_->manifest.sync(sync_point);
  if (sp.boot) throw Error(Errc::InvalidSyncPoint, "sync point " + std::to_string(sync_point) + " is a boot round");
  try {
    load_keys_locked(sp);
  } catch (const Error& e) {
    terminate_locked(std::string("key load failed: ") + e.what());
    throw Error(Errc::SecurityException, std::string("key load failed: ") + e.what());
  }
}

void Ccu::tee_terminate(const std::string& reason) {
  std::lock_guard g(mu_);
  if (phase_ != TeePhase::Initialized && phase_ != TeePhase::Launched) {
    throw Error(Errc::InvalidPhase, std::string("tee_terminate in phase ") + to_string(phase_));
  }
  terminate_locked(reason);
}

void Ccu::terminate_locked(const std::string& reason) {
  auto& ctl = device_.control();
  ctl.quiesce();
  ctl.scrub();
  ctl.invalidate_all_keys();
  ctl.reset(ResetKind::Newmanry);
  if (tee_) {
    tee_->wipe();
    tee_.reset();
  }
  phase_ = TeePhase::Terminated;
  termination_reason_ = reason;
  note("TEE_TERMINATE reason=" + reason);
}

Bytes Ccu::release_model_key(const std::string& party) {
  std::lock_guard g(mu_);
  if (phase_ != TeePhase::Launched) {
    throw Error(Errc::InvalidPhase, std::string("release_model_key in phase ") + to_string(phase_));
  }
  const auto& rx = tee_->manifest.model_receivers;
  if (std::find(rx.begin(), rx.end(), party) == rx.end()) {
    throw Error(Errc::PartyAuthFailure, "'" + party + "' is not a model receiver");
  }
  crypto::Nonce12 nonce{};
  entropy_(nonce);
  note("MODEL_KEY released to=" + party);
  return wrap_model_key(tee_->wrapping_keys.at(party), tee_->k_m, nonce);
}

void Ccu::on_security_exception(const std::string& detail) {
  std::lock_guard g(mu_);
  note("SECURITY_EXCEPTION " + detail);
  if (phase_ == TeePhase::Initialized || phase_ == TeePhase::Launched) {
    terminate_locked("security exception: " + detail);
  }
}

void Ccu::on_device_reset(ResetKind kind) {
  std::lock_guard g(mu_);
  note(std::string("DEVICE_RESET kind=") + to_string(kind));
  if (tee_) {
    tee_->wipe();
    tee_.reset();
  }
  if (phase_ != TeePhase::NoTee) {
    if (termination_reason_.empty()) termination_reason_ = "device reset";
    phase_ = TeePhase::NoTee;
  }
}

Bytes Ccu::debug_state_snapshot() const {
  std::lock_guard g(mu_);
  nlohmann::json j;
  j["phase"] = to_string(phase_);
  if (ak_) j["ak_private"] = to_hex(ak_->seed());
  if (identity_) {
    nlohmann::json chain = nlohmann::json::array();
    for (const auto& c : identity_->chain) {
      auto e = c.encode();
      chain.push_back(std::string(e.begin(), e.end()));
    }
    j["chain"] = chain;
    if (identity_->pik_endorsement) j["pik_endorsement"] = to_hex(identity_->pik_endorsement->signature);
  }
  if (tee_) {
    nlohmann::json t;
    t["y"] = to_hex(tee_->y.private_key);
    t["k_save"] = to_hex(tee_->k_save);
    t["k_m"] = to_hex(tee_->k_m);
    if (tee_->k_load) t["k_load"] = to_hex(*tee_->k_load);
    for (const auto& [id, k] : tee_->stream_keys) t["streams"][std::to_string(id)] = to_hex(k);
    for (const auto& [p, k] : tee_->wrapping_keys) t["wrapping"][p] = to_hex(k);
    j["tee"] = t;
  }
  std::string s = j.dump();
  return Bytes(s.begin(), s.end());
}

}  // namespace itx
