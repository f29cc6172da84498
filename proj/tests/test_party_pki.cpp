#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "itx/party_pki.hpp"
#include <set>

#include "corpus.hpp"
#include "itx/scenario.hpp"

using namespace itx;
using R = RejectReason;

namespace {

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::IoError;
}

std::vector<Certificate> party_certs(const Scenario& sc) {
  std::vector<Certificate> out;
  for (const auto& n : sc.job.manifest.parties) out.push_back(sc.identities.at(n).certificate);
  return out;
}

using corpus::attest;
using corpus::credentials;
using corpus::expected;

Verdict check(const Scenario& sc, const AttestationEvidence& ev, const ExpectedRun& x) {
  return verify_attestation(ev, sc.policy.anchors, sc.policy.cas, sc.policy.tcb_updates, x);
}

}  // namespace

TEST(Verify, GenuineEvidenceAccepted) {
  Scenario sc;
  auto v = check(sc, attest(sc), expected(sc));
  EXPECT_TRUE(v.accept) << v.detail;
  ScenarioOptions h;
  h.hardened_boot = true;
  Scenario hs(h);
  auto vh = check(hs, attest(hs), expected(hs));
  EXPECT_TRUE(vh.accept) << vh.detail;
}

TEST(Verify, SingleFieldMutationsRejectedWithReason) {
  Scenario sc;
  corpus::EvidenceCorpus c(sc);
  ASSERT_GE(c.cases.size(), 50u);
  std::set<R> reasons;
  for (const auto& m : c.cases) {
    AttestationEvidence ev = c.base;
    CaBundle cas = sc.policy.cas;
    ExpectedRun x = c.expected_run;
    m.apply(ev, cas, x);
    auto v = verify_attestation(ev, sc.policy.anchors, cas, sc.policy.tcb_updates, x);
    EXPECT_FALSE(v.accept) << m.name;
    ASSERT_TRUE(v.reason.has_value()) << m.name;
    EXPECT_EQ(*v.reason, m.reason) << m.name << ": got " << to_string(*v.reason) << " (" << v.detail << ")";
    reasons.insert(m.reason);
  }
  EXPECT_GE(reasons.size(), 14u);
  EXPECT_TRUE(check(sc, c.base, c.expected_run).accept);
}

TEST(Verify, GenuineReportsOfOtherRunsRejected) {
  Scenario sc;
  auto x = expected(sc);
  auto v = check(sc, attest(sc, 1, 0), x);
  EXPECT_EQ(v.reason, R::Epoch);
  v = check(sc, attest(sc, 0, 2), x);
  EXPECT_EQ(v.reason, R::CheckpointId);
  // The same board attesting another job.
  auto job = toy_job();
  job.steps = 2;
  auto m = compile(job, DeviceConfig{}).manifest;
  AttestationEvidence ev = attest(sc);
  ev.report = sc.board->ccu.tee_init(m, credentials(sc), 0, 0);
  EXPECT_EQ(check(sc, ev, x).reason, R::Manifest);
}

TEST(Verify, RevokedCikCertificate) {
  Scenario sc;
  auto ev = attest(sc);
  sc.manufacturer.revoke_serial(sc.certificates.cik.serial);
  sc.policy.cas = sc.manufacturer.ca_bundle();
  EXPECT_EQ(check(sc, ev, expected(sc)).reason, R::Revoked);
}

TEST(Verify, ExpiredCertificate) {
  ScenarioOptions o;
  Scenario sc(o);
  sc.manufacturer.set_validity(1000);
  sc.certificates = sc.manufacturer.certify(sc.boot.chain, sc.board->ccu.harvest_bootloader_manifest(),
                                            *sc.manufacturer.expected_nonce(o.device_info));
  sc.evidence.ca_cik_certificate = sc.certificates.cik;
  auto ev = attest(sc);
  sc.policy.now = 1000;
  EXPECT_TRUE(check(sc, ev, expected(sc)).accept);
  sc.policy.now = 1001;
  EXPECT_EQ(check(sc, ev, expected(sc)).reason, R::Expired);
}

TEST(Verify, RevokedFirmwareMeasurement) {
  Scenario sc;
  auto ev = attest(sc);
  sc.manufacturer.revoke_measurement(sc.firmware.sbl_measurement());
  sc.policy.cas = sc.manufacturer.ca_bundle();
  EXPECT_EQ(check(sc, ev, expected(sc)).reason, R::RevokedMeasurement);
}

TEST(Verify, HardenedEndorsementMustBindPik) {
  ScenarioOptions o;
  o.hardened_boot = true;
  Scenario sc(o);
  auto base = attest(sc);
  auto x = expected(sc);
  std::vector<std::function<void(PikEndorsement&)>> muts = {
      [](PikEndorsement& e) { e.signature[3] ^= 1; },
      [](PikEndorsement& e) { e.pik_public_key[0] ^= 1; },
      [](PikEndorsement& e) { e.sbl_measurement[0] ^= 1; },
  };
  for (auto& f : muts) {
    auto ev = base;
    f(*ev.pik_endorsement);
    EXPECT_EQ(check(sc, ev, x).reason, R::PikEndorsement);
  }
}

// ---------------------------------------------------------- TCB updates

TEST(TcbUpdate, SecondaryBootloaderUpdateNeedsTcbCertificate) {
  ScenarioOptions o;
  o.hardened_boot = true;
  Scenario sc(o);
  const auto old_cik = sc.evidence.ca_cik_certificate;
  const auto old_m = sc.firmware.sbl_measurement();
  sc.update_secondary_bootloader(Bytes{'s', 'b', 'l', '-', 'v', '2'});
  ASSERT_NE(sc.firmware.sbl_measurement(), old_m);
  ASSERT_EQ(sc.evidence.ca_cik_certificate, old_cik);  // original certificate, never reissued
  ASSERT_TRUE(sc.evidence.pik_endorsement.has_value());
  EXPECT_EQ(sc.evidence.pik_endorsement->sbl_measurement, sc.firmware.sbl_measurement());

  auto ev = attest(sc);
  EXPECT_EQ(check(sc, ev, expected(sc)).reason, R::BootloaderTcb);

  auto wrong = sc.manufacturer.issue_tcb_update(FirmwareComponent::IcuFirmware, old_m, sc.firmware.sbl_measurement(), false);
  sc.policy.tcb_updates = {wrong};
  EXPECT_EQ(check(sc, ev, expected(sc)).reason, R::BootloaderTcb);

  auto t = sc.manufacturer.issue_tcb_update(FirmwareComponent::SecondaryBootloader, old_m,
                                            sc.firmware.sbl_measurement(), false);
  sc.policy.tcb_updates = {t};
  auto v = check(sc, ev, expected(sc));
  EXPECT_TRUE(v.accept) << v.detail;

  auto forged = t;
  forged.new_measurement[0] ^= 1;
  sc.policy.tcb_updates = {forged};
  EXPECT_EQ(check(sc, ev, expected(sc)).reason, R::BootloaderTcb);

  sc.manufacturer.revoke_serial(t.serial);
  sc.policy.cas = sc.manufacturer.ca_bundle();
  sc.policy.tcb_updates = {t};
  EXPECT_EQ(check(sc, ev, expected(sc)).reason, R::BootloaderTcb);
}

TEST(TcbUpdate, RevokingOldVersionStopsOldDevices) {
  Scenario stale;
  auto ev = attest(stale);
  auto t = stale.manufacturer.issue_tcb_update(FirmwareComponent::SecondaryBootloader, stale.firmware.sbl_measurement(),
                                               crypto::sha256(as_bytes("sbl-v2")), true);
  stale.policy.cas = stale.manufacturer.ca_bundle();
  stale.policy.tcb_updates = {t};
  EXPECT_EQ(check(stale, ev, expected(stale)).reason, R::RevokedMeasurement);
}

TEST(TcbUpdate, IcuFirmwareUpdate) {
  Scenario sc;
  const auto old_icu = sc.firmware.icu_measurement;
  const auto new_icu = crypto::sha256(as_bytes("icu-firmware-v2"));
  sc.firmware = sc.manufacturer.firmware_bundle(sc.firmware.secondary_bootloader, sc.firmware.cce_image, new_icu);
  sc.boot = sc.board->ccu.measured_boot(sc.firmware);
  sc.evidence.device_chain = sc.boot.chain;
  auto ev = attest(sc);
  EXPECT_EQ(check(sc, ev, expected(sc)).reason, R::IcuTcb);
  sc.policy.tcb_updates = {sc.manufacturer.issue_tcb_update(FirmwareComponent::IcuFirmware, old_icu, new_icu, false)};
  EXPECT_TRUE(check(sc, ev, expected(sc)).accept);
}

TEST(TcbUpdate, CceChangeIsAPolicyMatter) {
  Scenario sc;
  sc.firmware = sc.manufacturer.firmware_bundle(sc.firmware.secondary_bootloader, Bytes{'c', 'c', 'e', '-', 'v', '2'},
                                                sc.firmware.icu_measurement);
  sc.boot = sc.board->ccu.measured_boot(sc.firmware);
  sc.evidence.device_chain = sc.boot.chain;
  auto ev = attest(sc);
  EXPECT_EQ(check(sc, ev, expected(sc)).reason, R::CceMeasurement);
  sc.policy.trusted_cce.push_back(sc.firmware.cce_measurement());
  EXPECT_TRUE(check(sc, ev, expected(sc)).accept);
}

// --------------------------------------------------------- supply chain

class SupplyChain : public ::testing::Test {
 protected:
  Manufacturer mfr;
  PrimaryBootloader rom = mfr.provision(3, "dev-x");
  Board board{DeviceConfig{}, 0, rom};
  BootResult boot;
  BootloaderManifest bm;
  void SetUp() override {
    board.ccu.first_boot();
    boot = board.ccu.measured_boot(mfr.firmware_bundle(Bytes{1}, Bytes{2}, Digest{}));
    bm = board.ccu.harvest_bootloader_manifest();
  }
  Errc certify(const std::vector<Certificate>& chain, const BootloaderManifest& m) {
    return code_of([&] { mfr.certify(chain, m, *mfr.expected_nonce("dev-x")); });
  }
};

TEST_F(SupplyChain, GenuineDeviceCertified) {
  auto c = mfr.certify(boot.chain, bm, *mfr.expected_nonce("dev-x"));
  EXPECT_TRUE(c.cik.signed_by(mfr.anchors().cik_ca));
  EXPECT_TRUE(c.pik.signed_by(mfr.anchors().pik_ca));
  EXPECT_EQ(c.cik.subject_public_key, boot.cik_public_key);
  EXPECT_EQ(c.pik.subject_public_key, boot.pik_public_key);
  EXPECT_EQ(c.cik.ext(ext::kSblMeasurement), to_hex(boot.sbl_measurement));
  EXPECT_EQ(c.cik.ext(ext::kBatch), "3");
}

TEST_F(SupplyChain, StaleNonce) {
  EXPECT_EQ(code_of([&] { mfr.certify(boot.chain, bm, crypto::random_array<32>()); }), Errc::SupplyChainReject);
}

TEST_F(SupplyChain, UnknownBatchOrForeignBatchKey) {
  auto m = bm;
  m.batch = 99;
  EXPECT_EQ(certify(boot.chain, m), Errc::SupplyChainReject);
  Manufacturer rogue;
  auto rrom = rogue.provision(3, "dev-x");
  Board rb{DeviceConfig{}, 0, rrom};
  rb.ccu.first_boot();
  rb.ccu.measured_boot(rogue.firmware_bundle(Bytes{1}, Bytes{2}, Digest{}));
  auto rm = rb.ccu.harvest_bootloader_manifest();
  rm.nonce = bm.nonce;
  EXPECT_EQ(certify(rb.ccu.identity().chain, rm), Errc::SupplyChainReject);
}

TEST_F(SupplyChain, ManifestFieldsAreSigned) {
  std::vector<std::function<void(BootloaderManifest&)>> edits = {
      [](auto& m) { m.cik_public_key[0] ^= 1; }, [](auto& m) { m.pik_public_key[0] ^= 1; },
      [](auto& m) { m.sbl_measurement[0] ^= 1; }, [](auto& m) { m.icu_measurement[0] ^= 1; },
      [](auto& m) { m.nonce[0] ^= 1; },          [](auto& m) { m.signature[0] ^= 1; },
  };
  for (auto& e : edits) {
    auto m = bm;
    e(m);
    EXPECT_EQ(certify(boot.chain, m), Errc::SupplyChainReject);
  }
}

TEST_F(SupplyChain, CsrMustMatchManifest) {
  Board other{DeviceConfig{}, 0, mfr.provision(3, "dev-y")};
  other.ccu.first_boot();
  auto ob = other.ccu.measured_boot(mfr.firmware_bundle(Bytes{1}, Bytes{2}, Digest{}));
  EXPECT_EQ(certify(ob.chain, bm), Errc::SupplyChainReject);
  auto chain = boot.chain;
  chain[1] = ob.chain[1];
  EXPECT_EQ(certify(chain, bm), Errc::SupplyChainReject);
  chain = boot.chain;
  chain.resize(1);
  EXPECT_EQ(certify(chain, bm), Errc::SupplyChainReject);
  // PIK request for different firmware than the manifest states.
  auto rebooted = board.ccu.measured_boot(mfr.firmware_bundle(Bytes{9}, Bytes{2}, Digest{}));
  EXPECT_EQ(certify(rebooted.chain, bm), Errc::SupplyChainReject);
}

// ----------------------------------------------------------- key exchange

TEST(KeyExchange, WrappedPackageRoundTrip) {
  Scenario sc;
  auto& s = sc.secrets.at("hospital-a");
  auto rep = sc.board->ccu.tee_init(sc.job.manifest, credentials(sc), 0, 0);
  auto pkg = key_package(s);
  auto blob = party_wrap_keys(s.share, rep.attributes.ccu_share, rep.manifest_measurement, pkg, crypto::random_array<12>());
  auto w = party_wrapping_key(s.share, rep.attributes.ccu_share, rep.manifest_measurement);
  auto back = unwrap_key_package(w, blob);
  ASSERT_TRUE(back.has_value());
  EXPECT_EQ(*back, pkg);
  blob.back() ^= 1;
  EXPECT_FALSE(unwrap_key_package(w, blob).has_value());
  // Another party's share yields a different key.
  EXPECT_NE(w, party_wrapping_key(sc.secrets.at("hospital-b").share, rep.attributes.ccu_share, rep.manifest_measurement));
}

TEST(KeyExchange, ModelKeyOnlyForReceivers) {
  Scenario sc;
  auto r = sc.run_trusted();
  ASSERT_TRUE(r.completed) << r.abort_reason;
  EXPECT_EQ(r.released_model_keys.size(), 1u);
  ASSERT_TRUE(r.released_model_keys.count("model-owner"));
  const auto& blob = r.released_model_keys.at("model-owner");
  EXPECT_TRUE(receive_model_key(sc.secrets.at("model-owner"), r.report, blob).has_value());
  EXPECT_FALSE(receive_model_key(sc.secrets.at("hospital-a"), r.report, blob).has_value());
}

TEST(Credential, ShareSignatureChecked) {
  Scenario sc;
  auto& id = sc.identities.at("hospital-a");
  auto share = crypto::KeyShare::generate().public_key;
  auto c = make_party_credential(id.certificate, id.key, share);
  EXPECT_TRUE(crypto::verify_signature(id.key.public_key(), share_signing_message(share), c.share_signature));
  EXPECT_FALSE(crypto::verify_signature(sc.identities.at("hospital-b").key.public_key(), share_signing_message(share),
                                        c.share_signature));
}

TEST(CaBundle, RoundTrip) {
  Manufacturer m;
  m.revoke_serial(4);
  auto b = m.ca_bundle();
  auto d = CaBundle::decode(b.encode());
  EXPECT_EQ(d.cik_ca, b.cik_ca);
  EXPECT_TRUE(d.crl.signed_by(m.anchors().cik_ca));
  EXPECT_TRUE(d.crl.serial_revoked(4));
  EXPECT_EQ(code_of([] { CaBundle::decode(as_bytes("[]")); }), Errc::InvalidEncoding);
}
