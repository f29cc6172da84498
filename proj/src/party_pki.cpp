#include "itx/party_pki.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>
#include <set>

#include "itx/error.hpp"

namespace itx {

using nlohmann::json;

// ---------------------------------------------------------------- CaBundle

Bytes CaBundle::encode() const {
  auto s = [](const Bytes& b) { return std::string(b.begin(), b.end()); };
  json j;
  j["cik_ca"] = s(cik_ca.encode());
  j["pik_ca"] = s(pik_ca.encode());
  j["firmware_ca"] = s(firmware_ca.encode());
  j["crl"] = s(crl.encode());
  std::string out = j.dump();
  return Bytes(out.begin(), out.end());
}

CaBundle CaBundle::decode(ByteView bytes) {
  CaBundle b;
  try {
    json j = json::parse(bytes.begin(), bytes.end());
    auto get = [&](const char* k) { return as_bytes(j.at(k).get_ref<const std::string&>()); };
    b.cik_ca = Certificate::decode(get("cik_ca"));
    b.pik_ca = Certificate::decode(get("pik_ca"));
    b.firmware_ca = Certificate::decode(get("firmware_ca"));
    b.crl = RevocationList::decode(get("crl"));
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidEncoding, std::string("CA bundle: ") + e.what());
  }
  return b;
}

// ------------------------------------------------------------ Manufacturer

ByteArray<32> Manufacturer::draw(std::string_view label) {
  if (!seed_) return crypto::random_array<32>();
  Bytes ctx;
  put_be64(ctx, draws_++);
  return crypto::kdf(*seed_, label, ctx);
}

namespace {

crypto::SigningKey key_from(const ByteArray<32>& seed) { return crypto::SigningKey::from_seed(seed); }

Certificate self_signed_ca(const std::string& subject, const crypto::SigningKey& k) {
  return make_certificate("CA", subject, k.public_key(), k, 0, kNoExpiry);
}

}  // namespace

Manufacturer::Manufacturer(std::optional<ByteArray<32>> seed)
    : cik_ca_(crypto::SigningKey::generate()),
      pik_ca_(crypto::SigningKey::generate()),
      fw_ca_(crypto::SigningKey::generate()),
      fw_signer_(crypto::SigningKey::generate()),
      seed_(seed) {
  if (seed_) {
    cik_ca_ = key_from(draw("CIK-CA"));
    pik_ca_ = key_from(draw("PIK-CA"));
    fw_ca_ = key_from(draw("FW-CA"));
    fw_signer_ = key_from(draw("FW-SIGN"));
  }
  cik_ca_cert_ = self_signed_ca("cik-ca", cik_ca_);
  pik_ca_cert_ = self_signed_ca("pik-ca", pik_ca_);
  fw_ca_cert_ = self_signed_ca("firmware-ca", fw_ca_);
  crl_.issuer_id = issuer_id_of(cik_ca_.public_key());
  crl_.signature = cik_ca_.sign(crl_.tbs());
}

TrustAnchors Manufacturer::anchors() const {
  return {cik_ca_.public_key(), pik_ca_.public_key(), fw_ca_.public_key()};
}

CaBundle Manufacturer::ca_bundle() const { return {cik_ca_cert_, pik_ca_cert_, fw_ca_cert_, crl_}; }

PrimaryBootloader Manufacturer::provision(std::uint32_t batch, const std::string& device_info) {
  auto it = batch_secrets_.find(batch);
  if (it == batch_secrets_.end()) it = batch_secrets_.emplace(batch, draw("BATCH-SECRET")).first;
  PrimaryBootloader rom;
  rom.firmware_signing_key = fw_signer_.public_key();
  rom.batch_secret = it->second;
  rom.batch = batch;
  rom.device_info = device_info;
  rom.provisioning_nonce = draw("NONCE");
  nonces_[device_info] = rom.provisioning_nonce;
  return rom;
}

std::optional<ByteArray<32>> Manufacturer::expected_nonce(const std::string& device_info) const {
  auto it = nonces_.find(device_info);
  if (it == nonces_.end()) return std::nullopt;
  return it->second;
}

crypto::Signature Manufacturer::sign_firmware(ByteView secondary_bootloader) const {
  return fw_signer_.sign(firmware_signing_message(secondary_bootloader));
}

FirmwareBundle Manufacturer::firmware_bundle(Bytes secondary_bootloader, Bytes cce_image,
                                             const Digest& icu_measurement) const {
  FirmwareBundle fw;
  fw.sbl_signature = sign_firmware(secondary_bootloader);
  fw.secondary_bootloader = std::move(secondary_bootloader);
  fw.cce_image = std::move(cce_image);
  fw.icu_measurement = icu_measurement;
  return fw;
}

DeviceCertificates Manufacturer::certify(const std::vector<Certificate>& csr, const BootloaderManifest& manifest,
                                         const ByteArray<32>& expected_nonce) {
  auto reject = [](const std::string& why) { throw Error(Errc::SupplyChainReject, why); };
  if (csr.size() < 2 || csr[0].kind != "CIK" || csr[1].kind != "PIK") reject("CSR chain is incomplete");
  if (!csr[0].signed_by(csr[0].subject_public_key)) reject("CIK request is not self-signed");
  if (!csr[1].signed_by(csr[0].subject_public_key)) reject("PIK request is not signed by CIK");

  auto bs = batch_secrets_.find(manifest.batch);
  if (bs == batch_secrets_.end()) reject("unknown batch " + std::to_string(manifest.batch));
  if (!crypto::verify_signature(Ccu::batch_public_key(bs->second), manifest.tbs(), manifest.signature)) {
    reject("bootloader manifest is not signed by the batch key");
  }
  if (!constant_time_equal(manifest.nonce, expected_nonce)) reject("bootloader manifest nonce is stale");
  if (csr[0].subject_public_key != manifest.cik_public_key) reject("CIK request does not match the manifest");
  if (csr[1].subject_public_key != manifest.pik_public_key) reject("PIK request does not match the manifest");
  if (csr[1].ext(ext::kSblMeasurement) != to_hex(manifest.sbl_measurement) ||
      csr[1].ext(ext::kIcuMeasurement) != to_hex(manifest.icu_measurement)) {
    reject("PIK request measurements do not match the manifest");
  }

  const std::string device = csr[0].ext(ext::kDeviceInfo);
  std::map<std::string, std::string> e = {{ext::kDeviceInfo, device},
                                          {ext::kBatch, std::to_string(manifest.batch)},
                                          {ext::kSblMeasurement, to_hex(manifest.sbl_measurement)},
                                          {ext::kIcuMeasurement, to_hex(manifest.icu_measurement)}};
  DeviceCertificates out;
  out.cik = make_certificate("CIK", device, manifest.cik_public_key, cik_ca_, next_serial_++, not_after_, e);
  e.erase(ext::kDeviceInfo);
  e.erase(ext::kBatch);
  out.pik = make_certificate("PIK", device, manifest.pik_public_key, pik_ca_, next_serial_++, not_after_, e);
  issued_.push_back(out.cik);
  issued_.push_back(out.pik);
  return out;
}

TcbUpdateCertificate Manufacturer::issue_tcb_update(FirmwareComponent component, const Digest& old_measurement,
                                                    const Digest& new_measurement, bool revoke_old) {
  TcbUpdateCertificate t;
  t.component = component;
  t.old_measurement = old_measurement;
  t.new_measurement = new_measurement;
  t.serial = next_serial_++;
  t.issuer_id = issuer_id_of(fw_ca_.public_key());
  t.signature = fw_ca_.sign(t.tbs());
  tcb_issued_.push_back(t);
  if (revoke_old) revoke_measurement(old_measurement);
  return t;
}

void Manufacturer::revoke_serial(std::uint64_t serial) {
  if (!crl_.serial_revoked(serial)) crl_.revoked_serials.push_back(serial);
  crl_.sequence++;
  crl_.signature = cik_ca_.sign(crl_.tbs());
}

void Manufacturer::revoke_measurement(const Digest& m) {
  if (!crl_.measurement_revoked(m)) crl_.revoked_measurements.push_back(m);
  crl_.sequence++;
  crl_.signature = cik_ca_.sign(crl_.tbs());
}

// ---------------------------------------------------------- PartyAuthority

PartyAuthority::PartyAuthority(std::optional<ByteArray<32>> seed)
    : key_(seed ? crypto::SigningKey::from_seed(crypto::kdf(*seed, "PARTY-CA")) : crypto::SigningKey::generate()) {
  root_ = make_certificate("CA", "party-ca", key_.public_key(), key_, 0, kNoExpiry);
}

Certificate PartyAuthority::issue(const std::string& party, const crypto::PublicKey& key, std::uint64_t not_after) {
  return make_certificate("PARTY", party, key, key_, next_serial_++, not_after);
}

// -------------------------------------------------------------- verifying

const char* to_string(RejectReason r) {
  switch (r) {
    case RejectReason::CaCertificate: return "ca-certificate";
    case RejectReason::ChainSignature: return "chain-signature";
    case RejectReason::Revoked: return "revoked";
    case RejectReason::Expired: return "expired";
    case RejectReason::CikMismatch: return "cik-mismatch";
    case RejectReason::RevokedMeasurement: return "revoked-measurement";
    case RejectReason::BootloaderTcb: return "bootloader-tcb";
    case RejectReason::IcuTcb: return "icu-tcb";
    case RejectReason::PikEndorsement: return "pik-endorsement";
    case RejectReason::CceMeasurement: return "cce-measurement";
    case RejectReason::ReportSignature: return "report-signature";
    case RejectReason::RunAttributesDigest: return "run-attributes-digest";
    case RejectReason::RegisterMeasurement: return "register-measurement";
    case RejectReason::BootloaderMeasurement: return "bootloader-measurement";
    case RejectReason::Manifest: return "manifest";
    case RejectReason::Epoch: return "epoch";
    case RejectReason::CheckpointId: return "checkpoint-id";
    case RejectReason::PartyFingerprints: return "party-fingerprints";
    case RejectReason::StreamAssignment: return "stream-assignment";
    case RejectReason::ModelReceivers: return "model-receivers";
  }
  return "?";
}

namespace {

bool ca_ok(const Certificate& c, const crypto::PublicKey& anchor) {
  return c.kind == "CA" && c.subject_public_key == anchor && c.signed_by(anchor);
}

}  // namespace

Verdict verify_attestation(const AttestationEvidence& ev, const TrustAnchors& anchors, const CaBundle& cas,
                           const std::vector<TcbUpdateCertificate>& tcb_updates, const ExpectedRun& x) {
  using R = RejectReason;
  const AttestationReport& rep = ev.report;

  // 1. CA material.
  if (!ca_ok(cas.cik_ca, anchors.cik_ca) || !ca_ok(cas.pik_ca, anchors.pik_ca) ||
      !ca_ok(cas.firmware_ca, anchors.firmware_ca)) {
    return Verdict::reject(R::CaCertificate, "CA certificate does not match the pinned anchors");
  }
  if (!cas.crl.signed_by(anchors.cik_ca)) return Verdict::reject(R::CaCertificate, "revocation list signature invalid");

  // 2. Chains: manufacturer CIK certificate and the CCU-generated chain.
  const Certificate& cacik = ev.ca_cik_certificate;
  if (cacik.kind != "CIK" || !cacik.signed_by(anchors.cik_ca)) {
    return Verdict::reject(R::ChainSignature, "CIK certificate is not issued by the CIK CA");
  }
  const auto& ch = ev.device_chain;
  if (ch.size() != 3 || ch[0].kind != "CIK" || ch[1].kind != "PIK" || ch[2].kind != "AK") {
    return Verdict::reject(R::ChainSignature, "device chain must be CIK, PIK, AK");
  }
  if (!ch[0].signed_by(ch[0].subject_public_key)) return Verdict::reject(R::ChainSignature, "CIK is not self-signed");
  if (!ch[1].signed_by(ch[0].subject_public_key)) return Verdict::reject(R::ChainSignature, "PIK not signed by CIK");
  if (!ch[2].signed_by(ch[1].subject_public_key)) return Verdict::reject(R::ChainSignature, "AK not signed by PIK");

  // 3. Revocation and validity.
  if (cas.crl.serial_revoked(cacik.serial)) return Verdict::reject(R::Revoked, "CIK certificate is revoked");
  if (cacik.not_after < x.now) return Verdict::reject(R::Expired, "CIK certificate expired");
  for (const auto& c : ch) {
    if (c.not_after < x.now) return Verdict::reject(R::Expired, c.kind + " certificate expired");
  }

  // 4. CIK binding.
  if (ch[0].subject_public_key != cacik.subject_public_key) {
    return Verdict::reject(R::CikMismatch, "device CIK differs from the manufacturer-issued CIK");
  }

  // 5. Firmware TCB.
  const std::string sbl = ch[1].ext(ext::kSblMeasurement);
  const std::string icu = ch[1].ext(ext::kIcuMeasurement);
  for (const auto& m : cas.crl.revoked_measurements) {
    if (to_hex(m) == sbl || to_hex(m) == icu) {
      return Verdict::reject(R::RevokedMeasurement, "running firmware version is revoked");
    }
  }
  std::set<std::string> good_sbl{cacik.ext(ext::kSblMeasurement)};
  std::set<std::string> good_icu{cacik.ext(ext::kIcuMeasurement)};
  for (const auto& t : tcb_updates) {
    if (!t.signed_by(anchors.firmware_ca) || cas.crl.serial_revoked(t.serial)) continue;
    auto& set = t.component == FirmwareComponent::SecondaryBootloader ? good_sbl : good_icu;
    set.insert(to_hex(t.new_measurement));
  }
  if (sbl.empty() || !good_sbl.count(sbl)) {
    return Verdict::reject(R::BootloaderTcb, "no TCB certificate for the running secondary bootloader");
  }
  if (icu.empty() || !good_icu.count(icu)) {
    return Verdict::reject(R::IcuTcb, "no TCB certificate for the running ICU firmware");
  }
  if (ev.pik_endorsement) {
    const auto& e = *ev.pik_endorsement;
    if (!e.verify(ch[0].subject_public_key) || e.pik_public_key != ch[1].subject_public_key ||
        to_hex(e.sbl_measurement) != sbl) {
      return Verdict::reject(R::PikEndorsement, "PIK endorsement does not bind this PIK and bootloader");
    }
  }
  const std::string cce = ch[2].ext(ext::kCceMeasurement);
  bool cce_ok = std::any_of(x.trusted_cce_measurements.begin(), x.trusted_cce_measurements.end(),
                            [&](const Digest& d) { return to_hex(d) == cce; });
  if (!cce_ok) return Verdict::reject(R::CceMeasurement, "CCE measurement is not trusted");

  // Report.
  if (!crypto::verify_signature(ch[2].subject_public_key, rep.tbs(), rep.signature)) {
    return Verdict::reject(R::ReportSignature, "report signature does not verify under AK");
  }
  if (rep.attributes.digest() != rep.run_attributes_digest) {
    return Verdict::reject(R::RunAttributesDigest, "run attributes do not match their attested digest");
  }

  // 4th step: the attested configuration against expectations.
  if (rep.register_measurement != x.register_measurement || rep.measured_registers != x.measured_registers) {
    return Verdict::reject(R::RegisterMeasurement, "configuration registers differ from the known-good state");
  }
  if (rep.bootloader_measurement != x.bootloader_measurement) {
    return Verdict::reject(R::BootloaderMeasurement, "IPU bootloader measurement differs");
  }
  if (rep.manifest_measurement != x.manifest_hash) return Verdict::reject(R::Manifest, "job manifest differs");
  const auto& a = rep.attributes;
  if (a.epoch != x.epoch) return Verdict::reject(R::Epoch, "epoch differs");
  if (a.checkpoint_id != x.checkpoint_id) return Verdict::reject(R::CheckpointId, "checkpoint id differs");
  if (a.party_fingerprints != x.party_fingerprints) {
    return Verdict::reject(R::PartyFingerprints, "party certificate fingerprints differ");
  }
  if (a.stream_assignment != x.stream_assignment) {
    return Verdict::reject(R::StreamAssignment, "stream assignment differs");
  }
  if (a.model_receivers != x.model_receivers) return Verdict::reject(R::ModelReceivers, "model receivers differ");
  return Verdict::ok();
}

// -------------------------------------------------------------- party side

PartyCredential make_party_credential(const Certificate& cert, const crypto::SigningKey& identity,
                                      const crypto::PublicKey& share) {
  return {cert, share, identity.sign(share_signing_message(share))};
}

crypto::Key256 party_wrapping_key(const crypto::KeyShare& x, const crypto::PublicKey& ccu_share,
                                  const Digest& manifest_hash) {
  auto shared = crypto::x25519(x.private_key, ccu_share);
  auto w = wrapping_key(shared, x.public_key, ccu_share, manifest_hash);
  secure_zero(shared);
  return w;
}

Bytes party_wrap_keys(const crypto::KeyShare& x, const crypto::PublicKey& ccu_share, const Digest& manifest_hash,
                      const KeyPackage& package, const crypto::Nonce12& nonce) {
  auto w = party_wrapping_key(x, ccu_share, manifest_hash);
  auto out = wrap_key_package(w, package, nonce);
  secure_zero(w);
  return out;
}

std::optional<crypto::Key256> party_unwrap_model_key(const crypto::KeyShare& x, const crypto::PublicKey& ccu_share,
                                                     const Digest& manifest_hash, ByteView wrapped) {
  auto w = party_wrapping_key(x, ccu_share, manifest_hash);
  auto k = unwrap_model_key(w, wrapped);
  secure_zero(w);
  return k;
}

crypto::Key256 derive_model_key(const std::vector<std::pair<Digest, RunNonce>>& nonces) {
  return derive_run_key(nonces, "m");
}

crypto::Key256 derive_checkpoint_key(const std::vector<std::pair<Digest, RunNonce>>& nonces) {
  return derive_run_key(nonces, "ck");
}

}  // namespace itx
