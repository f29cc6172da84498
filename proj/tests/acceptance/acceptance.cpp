// Acceptance run: one PASS/FAIL line per criterion, with wall time against
// the budget. Exit status is the number of failed criteria.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "corpus.hpp"
#include "itx/frame_codec.hpp"
#include "itx/scenario.hpp"
#include "itx/sxp_engine.hpp"
#include "ref_gcm.hpp"

using namespace itx;
using K = AdversaryAction::Kind;

namespace {

struct Checks {
  std::vector<std::string> failures;
  std::vector<std::string> notes;
  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  void note(const std::string& s) { notes.push_back(s); }
};

std::optional<Errc> code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

std::string name_of(std::optional<Errc> c) { return c ? to_string(*c) : "no error"; }

SxpRegisters regions(std::uint32_t contexts) {
  SxpRegisters r;
  r.ksellimit.push_back({0, 0x1000});
  for (std::uint32_t i = 1; i <= contexts; ++i) r.ksellimit.push_back({i * 0x10000ULL, (i + 1) * 0x10000ULL});
  for (std::uint32_t c = 0; c < contexts; ++c) r.kphysmap[c] = c + 1;
  return r;
}

// ---------------------------------------------------------------- 1

void structural_constants(Checks& c) {
  c.expect(kKeyContexts == 16, "16 key contexts");
  c.expect(kMaxKeyRegions == 17, "17 key regions");

  SecureExchangePipe sxp;
  crypto::Key256 k{};
  bool all16 = true;
  for (std::uint32_t i = 0; i < 16; ++i) all16 &= !code_of([&] { sxp.load_key(i, k); }).has_value();
  c.expect(all16, "contexts 0..15 load");
  auto e17 = code_of([&] { sxp.load_key(16, k); });
  c.expect(e17 == Errc::IndexOutOfRange, "17th context rejected (got " + name_of(e17) + ")");
  auto map17 = regions(2);
  map17.kxbctxmap[0] = 16;
  c.expect(code_of([&] { SecureExchangePipe().program_registers(map17); }) == Errc::InvalidRegisterProgram,
           "exchange context mapped to context 16 rejected");

  c.expect(!code_of([&] { SecureExchangePipe().program_registers(regions(16)); }), "17 regions accepted");
  auto r18 = regions(16);
  r18.ksellimit.push_back({0x200000, 0x210000});
  auto e18 = code_of([&] { SecureExchangePipe().program_registers(r18); });
  c.expect(e18 == Errc::InvalidRegisterProgram, "18th region rejected (got " + name_of(e18) + ")");

  SecureExchangePipe clear(0, 4);
  clear.program_registers(regions(1));
  ExchangePacket p;
  p.kind = PacketKind::WriteRequest;
  p.src_tile = 1;
  p.address = 0x100;
  p.aes = true;
  p.payload = Bytes(64, 0x5a);
  auto out = clear.process_egress(p);
  c.expect(out && out->payload == p.payload, "region 0 passes cleartext");
  auto r0 = regions(1);
  r0.kphysmap[0] = 0;
  c.expect(code_of([&] { SecureExchangePipe().program_registers(r0); }).has_value(), "no key context maps region 0");

  Bytes pt(10, 1);
  bool sizes = true;
  for (std::size_t fs = 128; fs <= 1024; fs += 128) sizes &= !code_of([&] { partition(pt, fs); }).has_value();
  c.expect(sizes, "every multiple of 128 up to 1024 accepted");
  auto e1000 = code_of([&] { partition(pt, 1000); });
  c.expect(e1000 == Errc::InvalidFrameSize, "1000-byte frame rejected (got " + name_of(e1000) + ")");
  c.expect(code_of([&] { partition(pt, 1152); }) == Errc::InvalidFrameSize, "1152-byte frame rejected");
  auto job = toy_job();
  job.frame_size = 1000;
  c.expect(code_of([&] { compile(job, DeviceConfig{}); }) == Errc::InvalidFrameSize, "job with 1000-byte frames rejected");
}

// ---------------------------------------------------------------- 2

struct Kat {
  const char *key, *iv, *pt, *ct, *tag;
};
const Kat kKats[] = {
    {"0000000000000000000000000000000000000000000000000000000000000000", "000000000000000000000000", "",
     "", "530f8afbc74536b9a963b4f1c4cb738b"},
    {"0000000000000000000000000000000000000000000000000000000000000000", "000000000000000000000000",
     "00000000000000000000000000000000", "cea7403d4d606b6e074ec5d3baf39d18", "d0d1c8a799996bf0265b98b5d48ab919"},
    {"feffe9928665731c6d6a8f9467308308feffe9928665731c6d6a8f9467308308", "cafebabefacedbaddecaf888",
     "d9313225f88406e5a55909c5aff5269a86a7a9531534f7da2e4c303d8a318a72"
     "1c3c0c95956809532fcf0e2449a6b525b16aedf5aa0de657ba637b391aafd255",
     "522dc1f099567d07f47f37a32a84427d643a8cdcbfe5c0c97598a2bd2555d1aa"
     "8cb08e48590dbb3da7b08b1056828838c5f61e6393ba7a0abcc9f662898015ad",
     "b094dac5d93471bdec1a502270e3cc6c"},
};

void crypto_oracle(Checks& c) {
  int kat_ok = 0, kat_n = 0;
  for (const auto& k : kKats) {
    auto key = array_from_hex<32>(k.key);
    auto iv = array_from_hex<12>(k.iv);
    auto s = refgcm::gcm_seal(key, iv, {}, from_hex(k.pt));
    ++kat_n;
    kat_ok += to_hex(s.ciphertext) == k.ct && to_hex(s.tag) == k.tag;
    if (std::string(k.pt).empty()) continue;  // frames carry at least one block
    auto f = encrypt_frame_raw(key, iv, from_hex(k.pt));
    ++kat_n;
    kat_ok += to_hex(f.ciphertext) == k.ct && to_hex(f.tag) == k.tag && decrypt_frame_raw(key, f) == from_hex(k.pt);
  }
  c.expect(kat_ok == kat_n, "KAT vectors: " + std::to_string(kat_ok) + "/" + std::to_string(kat_n));

  std::mt19937_64 rng(2024);
  int codec_ok = 0;
  for (int i = 0; i < 1000; ++i) {
    crypto::Key256 key{};
    for (auto& b : key) b = static_cast<std::uint8_t>(rng());
    StreamIV iv = compose_iv(StreamIV::data(1 + rng() % 0xfffe), rng() & 0xffffffff);
    Bytes pt(16 * (1 + rng() % 62));
    for (auto& b : pt) b = static_cast<std::uint8_t>(rng());
    auto f = encrypt_frame(key, iv, pt);
    auto s = refgcm::gcm_seal(key, iv.serialize(), {}, pt);
    auto [got_iv, got] = decrypt_frame(key, f);
    codec_ok += f.ciphertext == s.ciphertext && Bytes(f.tag.begin(), f.tag.end()) == Bytes(s.tag.begin(), s.tag.end()) &&
                got == pt && got_iv == iv;
  }
  c.expect(codec_ok == 1000, "frame_codec vs reference: " + std::to_string(codec_ok) + "/1000");

  // SXP: frames from 16 contexts interleaved packet by packet.
  SecureExchangePipe sxp(0, 1);
  auto r = regions(16);
  for (std::uint32_t t = 0; t < 16; ++t) r.kxbctxmap[t] = t;
  sxp.program_registers(r);
  std::array<crypto::Key256, 16> keys{};
  for (std::uint32_t k = 0; k < 16; ++k) {
    for (auto& b : keys[k]) b = static_cast<std::uint8_t>(rng());
    sxp.load_key(k, keys[k]);
  }
  struct Pending {
    Bytes raw, host, payload;
    std::size_t off = 0;
    StreamIV iv;
  };
  std::array<Pending, 16> fl;
  auto fresh = [&](std::uint32_t k) {
    Pending p;
    p.iv = compose_iv(StreamIV::data(k + 1), rng() & 0xffff);
    p.payload.resize(16 * (1 + rng() % 62));
    for (auto& b : p.payload) b = static_cast<std::uint8_t>(rng());
    append(p.raw, p.iv.block());
    append(p.raw, p.payload);
    p.raw.resize(p.raw.size() + 16, 0);
    fl[k] = std::move(p);
  };
  for (std::uint32_t k = 0; k < 16; ++k) fresh(k);
  int sxp_ok = 0, sxp_done = 0;
  const auto base = [](std::uint32_t k) { return (k + 1) * 0x10000ULL; };
  while (sxp_done < 1000) {
    const auto k = static_cast<std::uint32_t>(rng() % 16);
    Pending& p = fl[k];
    const std::size_t n = std::min<std::size_t>(16 * (1 + rng() % 8), p.raw.size() - p.off);
    ExchangePacket pkt;
    pkt.kind = PacketKind::WriteRequest;
    pkt.src_tile = k;
    pkt.address = base(k) + p.off;
    pkt.payload.assign(p.raw.begin() + p.off, p.raw.begin() + p.off + n);
    pkt.aes = true;
    p.off += n;
    pkt.cc = p.off == p.raw.size();
    auto out = sxp.process_egress(pkt);
    if (!out) break;
    append(p.host, out->payload);
    if (!pkt.cc) continue;
    auto s = refgcm::gcm_seal(keys[k], p.iv.serialize(), {}, p.payload);
    Bytes expect;
    append(expect, p.iv.block());
    append(expect, s.ciphertext);
    append(expect, s.tag);
    bool ok = p.host == expect;
    // and back in through ingress
    ExchangePacket rq;
    rq.kind = PacketKind::ReadRequest;
    rq.src_tile = k;
    rq.address = base(k);
    rq.aes = true;
    rq.read_length = static_cast<std::uint32_t>(p.host.size());
    Bytes tile;
    if (auto sent = sxp.process_egress(rq)) {
      for (auto& comp : sxp.stamp_completions(sent->request_id, p.host, 16 * (1 + rng() % 16))) {
        if (auto d = sxp.process_ingress(comp)) append(tile, d->payload);
      }
    }
    ok &= tile.size() == p.raw.size() && Bytes(tile.begin() + 16, tile.end() - 16) == p.payload;
    sxp_ok += ok;
    ++sxp_done;
    fresh(k);
  }
  c.expect(sxp_ok == 1000, "sxp_engine vs reference: " + std::to_string(sxp_ok) + "/1000");
  c.note("KAT " + std::to_string(kat_ok) + "/" + std::to_string(kat_n) + ", codec " + std::to_string(codec_ok) +
         "/1000, sxp " + std::to_string(sxp_ok) + "/1000");
}

// ---------------------------------------------------------------- 3

void dice_grid(Checks& c) {
  Manufacturer mfr{ByteArray<32>{3}};
  Board board{DeviceConfig{}, 0, mfr.provision(1, "grid")};
  board.ccu.first_boot();
  std::set<crypto::PublicKey> ciks, aks;
  std::map<int, std::set<crypto::PublicKey>> pik_by_sbl;
  std::map<crypto::PublicKey, std::set<int>> sbls_of_pik;
  for (int s = 0; s < 3; ++s) {
    for (int e = 0; e < 3; ++e) {
      std::string sbl = "sbl-" + std::to_string(s), cce = "cce-" + std::to_string(e);
      auto fw = mfr.firmware_bundle(Bytes(sbl.begin(), sbl.end()), Bytes(cce.begin(), cce.end()),
                                    crypto::sha256(as_bytes("icu")));
      auto r = board.ccu.measured_boot(fw);
      ciks.insert(r.cik_public_key);
      pik_by_sbl[s].insert(r.pik_public_key);
      sbls_of_pik[r.pik_public_key].insert(s);
      aks.insert(r.ak_public_key);
    }
  }
  c.expect(ciks.size() == 1, "CIK constant over the grid (" + std::to_string(ciks.size()) + " distinct)");
  bool pik_const = true;
  for (auto& [s, set] : pik_by_sbl) pik_const &= set.size() == 1;
  c.expect(pik_const, "PIK constant for a fixed bootloader");
  c.expect(sbls_of_pik.size() == 3, "PIK differs between bootloaders (" + std::to_string(sbls_of_pik.size()) + ")");
  c.expect(aks.size() == 9, "AK distinct in every cell (" + std::to_string(aks.size()) + ")");
  c.note("CIK " + std::to_string(ciks.size()) + ", PIK " + std::to_string(sbls_of_pik.size()) + ", AK " +
         std::to_string(aks.size()) + " distinct over 3x3");
}

// ---------------------------------------------------------------- 4

void evidence_mutations(Checks& c) {
  Scenario sc;
  corpus::EvidenceCorpus corp(sc);
  auto ok = verify_attestation(corp.base, sc.policy.anchors, sc.policy.cas, sc.policy.tcb_updates, corp.expected_run);
  c.expect(ok.accept, "unmutated evidence accepted");
  int right = 0;
  for (const auto& m : corp.cases) {
    AttestationEvidence ev = corp.base;
    CaBundle cas = sc.policy.cas;
    ExpectedRun x = corp.expected_run;
    m.apply(ev, cas, x);
    auto v = verify_attestation(ev, sc.policy.anchors, cas, sc.policy.tcb_updates, x);
    if (!v.accept && v.reason == m.reason) {
      ++right;
    } else {
      c.expect(false, m.name + ": " + (v.accept ? std::string("accepted") : to_string(*v.reason)));
    }
  }
  c.expect(corp.cases.size() >= 50, "at least 50 mutations");
  c.note(std::to_string(right) + "/" + std::to_string(corp.cases.size()) + " mutations rejected with the right reason");
}

// ---------------------------------------------------------------- 5

void functional_equivalence(Checks& c) {
  Scenario sc;
  c.expect(sc.options.device.tile_count == 16, "16 tiles");
  auto n = sc.run_normal();
  auto t = sc.run_trusted();
  c.expect(n.completed, "normal run completes: " + n.abort_reason);
  c.expect(t.completed, "trusted run completes: " + t.abort_reason);
  if (!n.completed || !t.completed) return;
  auto normal = sc.clear_model_of(n);
  auto trusted = sc.model_of(t);
  c.expect(trusted.has_value(), "receiver recovers the trusted model");
  c.expect(trusted && *trusted == normal, "trusted model bytes equal normal model bytes");
  c.expect(normal == sc.reference_model(), "both equal the host reference SGD");
  c.note("model " + to_hex(normal));
}

// ---------------------------------------------------------------- 6

void checkpoint_resume(Checks& c) {
  Scenario sc;
  auto full = sc.run_trusted();
  c.expect(full.completed, "uninterrupted run completes");
  const auto want = sc.model_of(full);

  sc.new_sessions(false);
  RunOptions kill;
  kill.stop_after_checkpoints = 1;
  auto k = sc.run_trusted(kill);
  c.expect(k.killed && k.checkpoints.size() == 1, "run killed after one checkpoint");
  if (k.checkpoints.empty()) return;
  const auto saved = CheckpointSet::decode(k.checkpoints[0].encode());

  // Without the killed run's nonces the checkpoint key cannot be rebuilt.
  sc.new_sessions(false);
  auto no_prior = sc.run_trusted({}, nullptr, saved);
  c.expect(!no_prior.completed && no_prior.abort_code == Errc::KeyExchangeFailure,
           "resume without re-supplied nonces fails (" + name_of(no_prior.abort_code) + ")");

  // Kill again and resume with the parties re-supplying that run's nonces.
  sc.new_sessions(false);
  k = sc.run_trusted(kill);
  c.expect(k.checkpoints.size() == 1, "second run killed after one checkpoint");
  if (k.checkpoints.empty()) return;
  const auto again = CheckpointSet::decode(k.checkpoints[0].encode());
  sc.new_sessions(true);
  auto r = sc.run_trusted({}, nullptr, again);
  c.expect(r.completed, "resumed run completes: " + r.abort_reason);
  c.expect(r.completed && sc.model_of(r) == want, "resumed model equals uninterrupted model");

  sc.new_sessions(true);
  auto stale = sc.run_trusted({}, nullptr, again);
  c.expect(stale.abort_code == Errc::SecurityException && !stale.model,
           "stale checkpoint aborts (" + name_of(stale.abort_code) + ")");

  ScenarioOptions o;
  o.seed = 9;
  Scenario other(o);
  auto theirs = other.run_trusted(kill);
  sc.new_sessions(false);
  sc.run_trusted(kill);
  sc.new_sessions(true);
  auto foreign = sc.run_trusted({}, nullptr, theirs.checkpoints.at(0));
  c.expect(foreign.abort_code == Errc::SecurityException && !foreign.model,
           "foreign checkpoint aborts (" + name_of(foreign.abort_code) + ")");
}

// ---------------------------------------------------------------- 7

void adversary_matrix(Checks& c) {
  Scenario sc;
  auto scan = corpus::secrets_of(sc);
  int rows_ok = 0;
  auto rows = corpus::adversary_rows(sc.job.manifest);
  for (const auto& row : rows) {
    RunInputs in = corpus::row_inputs(sc, row);
    RunOptions o;
    o.adversary.actions = row.actions;
    const auto from = sc.board->device.link_trace().size();
    auto r = sc.run_with(in, o);
    bool aborted = !r.completed && (r.abort_code || r.rejected);
    bool nothing_out = !r.model && r.released_model_keys.empty() && !corpus::host_saw_plaintext(sc, scan, from);
    c.expect(aborted, row.name + " did not abort");
    c.expect(nothing_out, row.name + " exposed output");
    rows_ok += aborted && nothing_out;
    sc.new_sessions(false);
  }

  RunInputs in = sc.trusted_inputs();
  in.alternate_code = sc.alternate_code(sc.options.job.learning_rate * 2);
  const auto reference = sc.reference_model();
  int aborted = 0, harmless = 0, false_accepts = 0;
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    RunOptions o;
    o.adversary = random_schedule(in, 1000 + seed);
    auto r = sc.run_with(in, o);
    if (!r.completed) {
      ++aborted;
      if (r.model || !r.released_model_keys.empty()) ++false_accepts;
    } else if (sc.model_of(r) == reference) {
      ++harmless;
    } else {
      ++false_accepts;
    }
    sc.new_sessions(false);
  }
  c.expect(false_accepts == 0, std::to_string(false_accepts) + " false accepts");
  c.note(std::to_string(rows_ok) + "/" + std::to_string(rows.size()) + " rows; 500 schedules: " +
         std::to_string(aborted) + " aborted, " + std::to_string(harmless) + " harmless, " +
         std::to_string(false_accepts) + " false accepts");
}

// ---------------------------------------------------------------- 8

void firmware_update(Checks& c) {
  ScenarioOptions o;
  o.hardened_boot = true;
  Scenario sc(o);
  const auto original_cik = sc.evidence.ca_cik_certificate;
  const auto old_m = sc.firmware.sbl_measurement();
  sc.update_secondary_bootloader(Bytes{'s', 'b', 'l', '-', 'v', '2'});
  c.expect(sc.evidence.ca_cik_certificate == original_cik, "CIK certificate unchanged by the update");
  c.expect(sc.evidence.pik_endorsement.has_value(), "device issued a PIK endorsement");
  auto ev = corpus::attest(sc);
  auto x = corpus::expected(sc);
  auto without = verify_attestation(ev, sc.policy.anchors, sc.policy.cas, {}, x);
  c.expect(!without.accept && without.reason == RejectReason::BootloaderTcb,
           std::string("without TCB certificate: ") + (without.accept ? "accepted" : to_string(*without.reason)));
  auto t = sc.manufacturer.issue_tcb_update(FirmwareComponent::SecondaryBootloader, old_m,
                                            sc.firmware.sbl_measurement(), false);
  auto with = verify_attestation(ev, sc.policy.anchors, sc.policy.cas, {t}, x);
  c.expect(with.accept, "with TCB certificate: " + with.detail);
  sc.policy.tcb_updates = {t};
  auto run = sc.run_trusted();
  c.expect(run.completed && sc.model_of(run) == sc.reference_model(), "updated device runs the job: " + run.abort_reason);
}

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  void (*fn)(Checks&);
};

}  // namespace

int main() {
  const std::vector<Criterion> all = {
      {1, "structural constants", 1, structural_constants},
      {2, "crypto oracle equivalence", 10, crypto_oracle},
      {3, "DICE key separation", 5, dice_grid},
      {4, "attestation mutations", 5, evidence_mutations},
      {5, "normal/trusted functional equivalence", 30, functional_equivalence},
      {6, "checkpoint kill and resume", 60, checkpoint_resume},
      {7, "adversary matrix", 120, adversary_matrix},
      {8, "secondary bootloader update", 5, firmware_update},
  };
  int failed = 0;
  for (const auto& cr : all) {
    Checks c;
    auto t0 = std::chrono::steady_clock::now();
    try {
      cr.fn(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.expect(s < cr.budget_s, "over time budget");
    const bool pass = c.failures.empty();
    failed += !pass;
    std::ostringstream line;
    line << (pass ? "PASS" : "FAIL") << " AC" << cr.id << " " << cr.name << " [" << std::fixed;
    line.precision(3);
    line << s << " s / " << cr.budget_s << " s]";
    for (const auto& n : c.notes) line << " " << n << ";";
    for (const auto& f : c.failures) line << " FAILED: " << f << ";";
    std::cout << line.str() << std::endl;
  }
  return failed;
}
