#include <gtest/gtest.h>

#include <random>

#include "itx/certificate.hpp"
#include "itx/job_pipeline.hpp"
#include "itx/manifest.hpp"
#include "itx/scenario.hpp"
#include "itx/tile_program.hpp"

using namespace itx;

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

std::int32_t ld(const Bytes& m, std::size_t off) { return static_cast<std::int32_t>(get_le32(m, off)); }
void st(Bytes& m, std::size_t off, std::int32_t v) { set_le32(m, off, static_cast<std::uint32_t>(v)); }

}  // namespace

// ------------------------------------------------------------ certificates

TEST(Certificate, SignVerifyRoundTrip) {
  auto ca = crypto::SigningKey::generate();
  auto subj = crypto::SigningKey::generate();
  auto c = make_certificate("PARTY", "alice", subj.public_key(), ca, 9, 1000, {{"k", "v"}});
  EXPECT_TRUE(c.signed_by(ca.public_key()));
  EXPECT_FALSE(c.signed_by(subj.public_key()));
  EXPECT_EQ(c.issuer_id, issuer_id_of(ca.public_key()));
  auto d = Certificate::decode(c.encode());
  EXPECT_EQ(d, c);
  EXPECT_EQ(d.fingerprint(), c.fingerprint());
  EXPECT_EQ(d.ext("k"), "v");
  EXPECT_EQ(d.ext("missing"), "");
}

TEST(Certificate, AnyFieldChangeBreaksSignatureAndFingerprint) {
  auto ca = crypto::SigningKey::generate();
  auto c = make_certificate("CIK", "dev", crypto::SigningKey::generate().public_key(), ca, 1, 5);
  std::vector<Certificate> muts(6, c);
  muts[0].kind = "PIK";
  muts[1].subject = "dev2";
  muts[2].subject_public_key[0] ^= 1;
  muts[3].serial = 2;
  muts[4].not_after = 6;
  muts[5].extensions["x"] = "y";
  for (const auto& m : muts) {
    EXPECT_FALSE(m.signed_by(ca.public_key()));
    EXPECT_NE(m.fingerprint(), c.fingerprint());
  }
}

TEST(Certificate, DecodeRejectsGarbage) {
  EXPECT_EQ(code_of([] { Certificate::decode(as_bytes("{not json")); }), Errc::InvalidEncoding);
}

TEST(RevocationList, SignedAndQueried) {
  auto ca = crypto::SigningKey::generate();
  RevocationList crl;
  crl.revoked_serials = {4, 7};
  crl.revoked_measurements = {crypto::sha256(as_bytes("old"))};
  crl.issuer_id = issuer_id_of(ca.public_key());
  crl.signature = ca.sign(crl.tbs());
  auto d = RevocationList::decode(crl.encode());
  EXPECT_TRUE(d.signed_by(ca.public_key()));
  EXPECT_TRUE(d.serial_revoked(7));
  EXPECT_FALSE(d.serial_revoked(5));
  EXPECT_TRUE(d.measurement_revoked(crypto::sha256(as_bytes("old"))));
  d.revoked_serials.pop_back();
  EXPECT_FALSE(d.signed_by(ca.public_key()));
}

TEST(TcbUpdate, RoundTripAndSignature) {
  auto ca = crypto::SigningKey::generate();
  TcbUpdateCertificate t;
  t.component = FirmwareComponent::IcuFirmware;
  t.old_measurement = crypto::sha256(as_bytes("a"));
  t.new_measurement = crypto::sha256(as_bytes("b"));
  t.serial = 3;
  t.issuer_id = issuer_id_of(ca.public_key());
  t.signature = ca.sign(t.tbs());
  auto d = TcbUpdateCertificate::decode(t.encode());
  EXPECT_TRUE(d.signed_by(ca.public_key()));
  d.new_measurement[0] ^= 1;
  EXPECT_FALSE(d.signed_by(ca.public_key()));
}

// ------------------------------------------------------------ tile programs

TEST(TileProgram, EncodeDecodeRoundTrip) {
  TileProgram p;
  p.state_size = 16;
  p.scratch_offset = 9000;
  p.resume.push_back(SyncPhase{3, {}});
  LoadPhase lp;
  lp.target = LoadTarget::Checkpoint;
  lp.stream_id = kCheckpointStreamId;
  lp.address = 0x12345;
  lp.frame_count = 1;
  lp.frame_size = 128;
  p.resume.push_back(lp);
  p.body.push_back(SyncPhase{4, {{0, 16, 8192, 0, 8192, 0, 16}}});
  p.body.push_back(ComputePhase{ComputeOp::Axpy, 1, 2, 3, 4, 5, -77});
  StorePhase sp;
  sp.target = StoreTarget::Metadata;
  sp.immediate = {1, 2, 3};
  p.body.push_back(sp);
  Bytes enc = p.encode();
  EXPECT_EQ(TileProgram::decode(enc), p);
  enc.resize(tile_layout::kBinarySize, 0);
  EXPECT_EQ(TileProgram::decode(enc), p);
  enc.back() = 1;
  EXPECT_EQ(code_of([&] { TileProgram::decode(enc); }), Errc::InvalidEncoding);
  EXPECT_EQ(code_of([] { TileProgram::decode(Bytes(32, 0)); }), Errc::InvalidEncoding);
}

TEST(Compute, SumMatchesHandValues) {
  Bytes m(64, 0);
  // two rows of dim 2 at 16: (1, -3), (5, 0x7fffffff)
  st(m, 16, 1);
  st(m, 20, -3);
  st(m, 24, 5);
  st(m, 28, 0x7fffffff);
  execute_compute(m, {ComputeOp::Sum, 0, 16, 2, 2, 0, 0});
  EXPECT_EQ(ld(m, 0), 6);
  // 0x7fffffff - 3 stays in range
  EXPECT_EQ(ld(m, 4), 0x7ffffffc);
  st(m, 20, 3);
  execute_compute(m, {ComputeOp::Sum, 0, 16, 2, 2, 0, 0});
  // 0x7fffffff + 3 wraps to a negative word
  EXPECT_EQ(ld(m, 4), static_cast<std::int32_t>(0x80000002u));
}

TEST(Compute, AxpyQ16) {
  Bytes m(32, 0);
  st(m, 0, 65536);    // y0 = 1.0
  st(m, 4, -65536);   // y1 = -1.0
  st(m, 8, 131072);   // x0 = 2.0
  st(m, 12, 65536);   // x1 = 1.0
  execute_compute(m, {ComputeOp::Axpy, 0, 8, 0, 2, 0, -32768});  // alpha = -0.5
  EXPECT_EQ(ld(m, 0), 0);
  EXPECT_EQ(ld(m, 4), -98304);  // -1.5
}

TEST(Compute, SgdStepOneSample) {
  Bytes m(64, 0);
  st(m, 0, 65536);  // w = (1.0, 0)
  st(m, 4, 0);
  st(m, 8, 131072);  // x = (2.0, 1.0), y = 1.0
  st(m, 12, 65536);
  st(m, 16, 65536);
  execute_compute(m, {ComputeOp::SgdStep, 0, 8, 1, 2, 32, 0});
  // prediction 2.0, error 1.0, gradient = x
  EXPECT_EQ(ld(m, 32), 131072);
  EXPECT_EQ(ld(m, 36), 65536);
}

TEST(Compute, OperandsOutsideMemory) {
  Bytes m(64, 0);
  EXPECT_EQ(code_of([&] { execute_compute(m, {ComputeOp::Sum, 60, 0, 1, 2, 0, 0}); }), Errc::IndexOutOfRange);
  EXPECT_EQ(code_of([&] { execute_compute(m, {ComputeOp::SgdStep, 0, 48, 2, 2, 0, 0}); }), Errc::IndexOutOfRange);
}

// ---------------------------------------------------------------- manifests

TEST(DeviceConfig, JsonRoundTripAndValidation) {
  DeviceConfig d;
  d.tile_count = 8;
  d.sxp_lanes = 2;
  EXPECT_EQ(DeviceConfig::from_json(d.to_json()), d);
  d.tiles_per_exchange_context = 0;
  EXPECT_EQ(code_of([&] { d.validate(); }), Errc::InvalidArgument);
}

TEST(Manifest, CompiledToyJobRoundTrips) {
  auto job = compile(toy_job(), DeviceConfig{});
  const auto& m = job.manifest;
  EXPECT_EQ(JobManifest::decode(m.encode()), m);
  EXPECT_EQ(JobManifest::decode(m.encode()).measurement(), m.measurement());
  EXPECT_NO_THROW(m.validate());
  EXPECT_EQ(m.tile_binary_hashes.size(), 16u);
  EXPECT_EQ(chain_binary_hashes(m.tile_binary_hashes), m.binary_hash);
  EXPECT_EQ(m.bootloader_measurement, bootloader_measurement());
}

TEST(Manifest, MeasurementCoversEveryField) {
  auto base = compile(toy_job(), DeviceConfig{}).manifest;
  std::vector<std::function<void(JobManifest&)>> edits = {
      [](JobManifest& m) { m.job += "x"; },
      [](JobManifest& m) { m.ipu_id = 1; },
      [](JobManifest& m) { m.binary_hash[0] ^= 1; },
      [](JobManifest& m) { m.bootloader_measurement[0] ^= 1; },
      [](JobManifest& m) { m.streams[1].plaintext_length++; },
      [](JobManifest& m) { m.parties.push_back("eve"); },
      [](JobManifest& m) { m.stream_assignment[2] = "eve"; },
      [](JobManifest& m) { m.model_receivers.push_back("hospital-a"); },
      [](JobManifest& m) { m.sync_points[3].mappings[0].address += 32; },
      [](JobManifest& m) { m.sync_points[3].registers[0].kxbctxmap[3] = 2; },
      [](JobManifest& m) { m.egress_keys[0].ctx = 14; },
  };
  for (std::size_t i = 0; i < edits.size(); ++i) {
    auto m = base;
    edits[i](m);
    EXPECT_NE(m.measurement(), base.measurement()) << "edit " << i;
  }
}

TEST(Manifest, ValidateRejectsSeventeenthContext) {
  auto m = compile(toy_job(), DeviceConfig{}).manifest;
  auto& sp = m.sync_points[2];
  ASSERT_FALSE(sp.key_loads.empty());
  sp.key_loads[0].ctx = 16;
  EXPECT_EQ(code_of([&] { m.validate(); }), Errc::ScheduleInfeasible);
}

TEST(Manifest, ValidateRejectsRegionPastRingAndStrayMapping) {
  auto base = compile(toy_job(), DeviceConfig{}).manifest;
  auto m = base;
  m.sync_points[2].registers[0].ksellimit[1].limit = base.device.ring_buffer_size + 4096;
  EXPECT_EQ(code_of([&] { m.validate(); }), Errc::ScheduleInfeasible);
  m = base;
  m.sync_points[2].mappings[0].address = 0x100;  // into the cleartext region, wrong region id
  EXPECT_EQ(code_of([&] { m.validate(); }), Errc::ScheduleInfeasible);
  m = base;
  m.sync_points[2].key_loads.push_back(m.sync_points[2].key_loads[0]);
  EXPECT_EQ(code_of([&] { m.validate(); }), Errc::ScheduleInfeasible);
}

TEST(Manifest, StreamsOfAndLookup) {
  auto m = compile(toy_job(), DeviceConfig{}).manifest;
  auto mine = m.streams_of("model-owner");
  EXPECT_EQ(mine, (std::vector<std::uint32_t>{kCodeStreamId, kWeightsStreamId}));
  EXPECT_EQ(m.streams_of("hospital-b"), (std::vector<std::uint32_t>{kFirstDataStreamId + 1}));
  EXPECT_EQ(code_of([&] { m.sync(999); }), Errc::InvalidSyncPoint);
}
