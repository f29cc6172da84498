// itx: command-line front end over a workspace directory.
//
//   <ws>/authority/seed.hex     manufacturer and party-authority secret seed
//   <ws>/pki/                   anchors.json, cas.bin, tcb/*.cert
//   <ws>/firmware/              sbl.bin, sbl.sig, cce.bin, icu.hex
//   <ws>/device/                config.json, rom.json, flash.bin, ca_cik.cert, pik.cert
//   <ws>/parties/<name>/        identity.hex, cert.bin, secrets.json

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "itx/job_pipeline.hpp"
#include "itx/scenario.hpp"

using namespace itx;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

Bytes read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw Error(Errc::IoError, "cannot read " + p.string());
  return Bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::string read_text(const fs::path& p) {
  auto b = read_file(p);
  return std::string(b.begin(), b.end());
}

void write_file(const fs::path& p, ByteView data) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!f) throw Error(Errc::IoError, "cannot write " + p.string());
}

void write_text(const fs::path& p, const std::string& s) { write_file(p, as_bytes(s)); }

std::string tile_name(std::size_t t, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "tile-%03zu.%s", t, ext);
  return buf;
}

// ---------------------------------------------------------------- workspace

struct Workspace {
  fs::path root;

  fs::path seed_file() const { return root / "authority" / "seed.hex"; }
  fs::path pki() const { return root / "pki"; }
  fs::path firmware_dir() const { return root / "firmware"; }
  fs::path device() const { return root / "device"; }
  fs::path party(const std::string& n) const { return root / "parties" / n; }

  ByteArray<32> seed(std::string_view label) const {
    return crypto::kdf(from_hex(read_text(seed_file())), label);
  }
  Manufacturer manufacturer() const { return Manufacturer(seed("manufacturer")); }
  PartyAuthority authority() const { return PartyAuthority(seed("authority")); }

  FirmwareBundle firmware() const {
    FirmwareBundle fw;
    fw.secondary_bootloader = read_file(firmware_dir() / "sbl.bin");
    fw.sbl_signature = array_from_hex<64>(read_text(firmware_dir() / "sbl.sig"));
    fw.cce_image = read_file(firmware_dir() / "cce.bin");
    fw.icu_measurement = array_from_hex<32>(read_text(firmware_dir() / "icu.hex"));
    return fw;
  }
  void save_firmware(const FirmwareBundle& fw) const {
    write_file(firmware_dir() / "sbl.bin", fw.secondary_bootloader);
    write_text(firmware_dir() / "sbl.sig", to_hex(fw.sbl_signature));
    write_file(firmware_dir() / "cce.bin", fw.cce_image);
    write_text(firmware_dir() / "icu.hex", to_hex(fw.icu_measurement));
  }

  TrustAnchors anchors() const {
    auto j = json::parse(read_text(pki() / "anchors.json"));
    return {array_from_hex<32>(j.at("cik_ca").get<std::string>()), array_from_hex<32>(j.at("pik_ca").get<std::string>()),
            array_from_hex<32>(j.at("firmware_ca").get<std::string>())};
  }

  std::vector<TcbUpdateCertificate> tcb_updates() const {
    std::vector<TcbUpdateCertificate> out;
    if (!fs::exists(pki() / "tcb")) return out;
    std::vector<fs::path> files;
    for (auto& e : fs::directory_iterator(pki() / "tcb")) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (auto& f : files) out.push_back(TcbUpdateCertificate::decode(read_file(f)));
    return out;
  }

  VerifierPolicy policy() const {
    VerifierPolicy p;
    p.anchors = anchors();
    p.cas = CaBundle::decode(read_file(pki() / "cas.bin"));
    p.tcb_updates = tcb_updates();
    p.trusted_cce = {measure(read_file(firmware_dir() / "cce.bin"))};
    return p;
  }

  json device_meta() const { return json::parse(read_text(device() / "device.json")); }
  DeviceConfig device_config() const { return DeviceConfig::from_json(read_text(device() / "config.json")); }
};

json rom_to_json(const PrimaryBootloader& r) {
  return {{"firmware_signing_key", to_hex(r.firmware_signing_key)},
          {"batch_secret", to_hex(r.batch_secret)},
          {"batch", r.batch},
          {"device_info", r.device_info},
          {"provisioning_nonce", to_hex(r.provisioning_nonce)}};
}

PrimaryBootloader rom_from_json(const json& j) {
  PrimaryBootloader r;
  r.firmware_signing_key = array_from_hex<32>(j.at("firmware_signing_key").get<std::string>());
  r.batch_secret = array_from_hex<32>(j.at("batch_secret").get<std::string>());
  r.batch = j.at("batch").get<std::uint32_t>();
  r.device_info = j.at("device_info").get<std::string>();
  r.provisioning_nonce = array_from_hex<32>(j.at("provisioning_nonce").get<std::string>());
  return r;
}

json endorsement_to_json(const std::optional<PikEndorsement>& e) {
  if (!e) return nullptr;
  return {{"pik_public_key", to_hex(e->pik_public_key)},
          {"sbl_measurement", to_hex(e->sbl_measurement)},
          {"signature", to_hex(e->signature)}};
}

std::optional<PikEndorsement> endorsement_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  PikEndorsement e;
  e.pik_public_key = array_from_hex<32>(j.at("pik_public_key").get<std::string>());
  e.sbl_measurement = array_from_hex<32>(j.at("sbl_measurement").get<std::string>());
  e.signature = array_from_hex<64>(j.at("signature").get<std::string>());
  return e;
}

// A booted board restored from flash.
struct LiveDevice {
  std::unique_ptr<Board> board;
  BootResult boot;
  DeviceEvidence evidence;
};

LiveDevice boot_device(const Workspace& ws) {
  LiveDevice d;
  auto meta = ws.device_meta();
  d.board = std::make_unique<Board>(ws.device_config(), 0, rom_from_json(meta.at("rom")));
  d.board->ccu.load_flash((ws.device() / "flash.bin").string());
  auto fw = ws.firmware();
  d.boot = meta.value("hardened", false) ? d.board->ccu.measured_boot_hardened(fw) : d.board->ccu.measured_boot(fw);
  d.evidence = {d.boot.chain, Certificate::decode(read_file(ws.device() / "ca_cik.cert")), d.boot.pik_endorsement};
  return d;
}

// ------------------------------------------------------------------ parties

struct Party {
  PartyIdentity identity;
  PartySecrets secrets;
  fs::path dir;

  static Party load(const Workspace& ws, const std::string& name) {
    Party p;
    p.dir = ws.party(name);
    p.identity.name = name;
    p.identity.key = crypto::SigningKey::from_seed(array_from_hex<32>(read_text(p.dir / "identity.hex")));
    p.identity.certificate = Certificate::decode(read_file(p.dir / "cert.bin"));
    p.secrets = PartySecrets::decode(read_file(p.dir / "secrets.json"));
    return p;
  }
  void save_secrets() const { write_file(dir / "secrets.json", secrets.encode()); }
};

std::vector<Certificate> party_certs(const Workspace& ws, const JobManifest& m) {
  std::vector<Certificate> out;
  for (const auto& p : m.parties) out.push_back(Certificate::decode(read_file(ws.party(p) / "cert.bin")));
  return out;
}

// ----------------------------------------------------------------- packages

void save_credential(const fs::path& p, const PartyCredential& c) {
  const auto cert = c.certificate.encode();
  json j{{"certificate", std::string(cert.begin(), cert.end())},
         {"share", to_hex(c.share)},
         {"share_signature", to_hex(c.share_signature)}};
  write_text(p, j.dump(2));
}

void save_compiled(const fs::path& dir, const CompiledJob& job) {
  write_text(dir / "job.json", job.description.to_json());
  write_file(dir / "manifest.bin", job.manifest.encode());
  for (std::size_t t = 0; t < job.programs.size(); ++t) {
    write_file(dir / "programs" / tile_name(t, "prog"), job.programs[t].encode());
    write_file(dir / "binaries" / tile_name(t, "bin"), job.binaries[t]);
  }
  json tiles = json::object();
  for (const auto& [p, ts] : job.party_tiles) tiles[p] = ts;
  write_text(dir / "party_tiles.json", tiles.dump(2));
}

CompiledJob load_compiled(const fs::path& dir) {
  CompiledJob job;
  job.description = JobDescription::from_json(read_text(dir / "job.json"));
  job.manifest = JobManifest::decode(read_file(dir / "manifest.bin"));
  for (std::size_t t = 0; t < job.manifest.device.tile_count; ++t) {
    job.programs.push_back(TileProgram::decode(read_file(dir / "programs" / tile_name(t, "prog"))));
    job.binaries.push_back(read_file(dir / "binaries" / tile_name(t, "bin")));
  }
  const auto tiles = json::parse(read_text(dir / "party_tiles.json"));
  for (auto& [p, ts] : tiles.items()) {
    job.party_tiles[p] = ts.get<std::vector<std::uint32_t>>();
  }
  return job;
}

std::vector<StreamFile> load_code(const fs::path& app, std::uint32_t tiles) {
  std::vector<StreamFile> out;
  for (std::uint32_t t = 0; t < tiles; ++t) out.push_back(StreamFile::parse(read_file(app / "code" / tile_name(t, "itxs"))));
  return out;
}

std::pair<std::uint32_t, std::uint32_t> parse_pair(const std::string& s) {
  auto comma = s.find(',');
  if (comma == std::string::npos) throw Error(Errc::InvalidArgument, "expected E,C but got '" + s + "'");
  return {static_cast<std::uint32_t>(std::stoul(s.substr(0, comma))),
          static_cast<std::uint32_t>(std::stoul(s.substr(comma + 1)))};
}

AttestationEvidence load_evidence(const fs::path& run) {
  AttestationEvidence ev;
  ev.report = AttestationReport::decode(read_file(run / "report.bin"));
  for (int i = 0; i < 3; ++i) {
    ev.device_chain.push_back(Certificate::decode(read_file(run / "evidence" / ("chain-" + std::to_string(i) + ".cert"))));
  }
  ev.ca_cik_certificate = Certificate::decode(read_file(run / "evidence" / "ca_cik.cert"));
  ev.pik_endorsement = endorsement_from_json(json::parse(read_text(run / "evidence" / "endorsement.json")));
  return ev;
}

Verdict verify_run(const Workspace& ws, const fs::path& run, std::uint32_t epoch, std::uint32_t ckpt) {
  auto manifest = JobManifest::decode(read_file(run / "manifest.bin"));
  auto policy = ws.policy();
  auto ev = load_evidence(run);
  auto x = expected_run(manifest, party_certs(ws, manifest), epoch, ckpt, policy);
  return verify_attestation(ev, policy.anchors, policy.cas, policy.tcb_updates, x);
}

void print_cert(const std::string& label, const Certificate& c) {
  std::cout << label << ":\n"
            << "  kind        " << c.kind << "\n"
            << "  subject     " << c.subject << "\n"
            << "  public key  " << to_hex(c.subject_public_key) << "\n"
            << "  issuer      " << c.issuer_id << "\n"
            << "  serial      " << c.serial << "\n"
            << "  fingerprint " << c.fingerprint_hex() << "\n";
  for (const auto& [k, v] : c.extensions) std::cout << "  ext " << k << " = " << v << "\n";
}

void print_report(const AttestationReport& r) {
  std::cout << "report:\n"
            << "  register measurement   " << to_hex(r.register_measurement) << "\n"
            << "  measured registers     ";
  for (const auto& n : r.measured_registers) std::cout << n << " ";
  std::cout << "\n  bootloader measurement " << to_hex(r.bootloader_measurement) << "\n"
            << "  manifest measurement   " << to_hex(r.manifest_measurement) << "\n"
            << "  ccu share              " << to_hex(r.attributes.ccu_share) << "\n"
            << "  epoch / checkpoint     " << r.attributes.epoch << " / " << r.attributes.checkpoint_id << "\n";
  for (const auto& [p, fp] : r.attributes.party_fingerprints) std::cout << "  party " << p << " " << fp << "\n";
  for (const auto& [s, p] : r.attributes.stream_assignment) std::cout << "  stream " << s << " -> " << p << "\n";
  for (const auto& p : r.attributes.model_receivers) std::cout << "  receiver " << p << "\n";
  std::cout << "  signature              " << to_hex(r.signature) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ITX confidential-computing simulator"};
  app.require_subcommand(1);
  Workspace ws{"."};
  app.add_option("--ws", ws.root, "workspace directory");

  // ---------------------------------------------------------------- pki
  auto* pki = app.add_subcommand("pki", "manufacturer and party authority");
  pki->require_subcommand(1);

  auto* pki_init = pki->add_subcommand("init", "create CA material and publish firmware");
  std::uint64_t seed = 1;
  pki_init->add_option("--seed", seed, "authority seed");
  pki_init->callback([&] {
    Bytes s;
    put_be64(s, seed);
    write_text(ws.seed_file(), to_hex(crypto::kdf(s, "workspace")));
    auto mfr = ws.manufacturer();
    auto a = mfr.anchors();
    write_text(ws.pki() / "anchors.json", json{{"cik_ca", to_hex(a.cik_ca)},
                                               {"pik_ca", to_hex(a.pik_ca)},
                                               {"firmware_ca", to_hex(a.firmware_ca)}}
                                              .dump(2));
    write_file(ws.pki() / "cas.bin", mfr.ca_bundle().encode());
    write_text(ws.pki() / "party_root.cert", [&] {
      auto e = ws.authority().root().encode();
      return std::string(e.begin(), e.end());
    }());
    ws.save_firmware(mfr.firmware_bundle(Bytes{'s', 'b', 'l', '-', 'v', '1'}, Bytes{'c', 'c', 'e', '-', 'v', '1'},
                                         crypto::sha256(as_bytes("icu-firmware-v1"))));
    std::cout << "workspace " << ws.root << " initialised\n";
  });

  auto* issue = pki->add_subcommand("issue", "provision and certify a device, or certify a party");
  issue->require_subcommand(1);
  auto* issue_dev = issue->add_subcommand("device", "provision, boot and certify the board");
  std::string dev_cfg;
  bool hardened = false;
  std::uint32_t batch = 7;
  std::string info = "ipu-0001";
  issue_dev->add_option("--config", dev_cfg, "device configuration JSON");
  issue_dev->add_flag("--hardened", hardened, "drop the CIK before the secondary bootloader");
  issue_dev->add_option("--batch", batch);
  issue_dev->add_option("--info", info, "device info string");
  issue_dev->callback([&] {
    DeviceConfig cfg = dev_cfg.empty() ? DeviceConfig{} : DeviceConfig::from_json(read_text(dev_cfg));
    cfg.validate();
    auto mfr = ws.manufacturer();
    auto rom = mfr.provision(batch, info);
    Board board(cfg, 0, rom);
    board.ccu.first_boot();
    auto fw = ws.firmware();
    auto boot = hardened ? board.ccu.measured_boot_hardened(fw) : board.ccu.measured_boot(fw);
    auto certs = mfr.certify(boot.chain, board.ccu.harvest_bootloader_manifest(), *mfr.expected_nonce(info));
    fs::create_directories(ws.device());
    board.ccu.save_flash((ws.device() / "flash.bin").string());
    write_text(ws.device() / "config.json", cfg.to_json());
    write_text(ws.device() / "device.json", json{{"rom", rom_to_json(rom)}, {"hardened", hardened}}.dump(2));
    write_file(ws.device() / "ca_cik.cert", certs.cik.encode());
    write_file(ws.device() / "pik.cert", certs.pik.encode());
    std::cout << "device certified: CIK " << to_hex(boot.cik_public_key) << "\n";
  });

  auto* issue_party = issue->add_subcommand("party", "issue a party identity certificate");
  std::string party_name;
  issue_party->add_option("name", party_name)->required();
  issue_party->callback([&] {
    auto key = crypto::SigningKey::generate();
    auto auth = ws.authority();
    auto dir = ws.party(party_name);
    write_text(dir / "identity.hex", to_hex(key.seed()));
    write_file(dir / "cert.bin", auth.issue(party_name, key.public_key()).encode());
    PartySecrets s;
    s.party = party_name;
    s.new_session(false);
    write_file(dir / "secrets.json", s.encode());
    std::cout << "party " << party_name << " certified\n";
  });

  auto* tcb = pki->add_subcommand("tcb-update", "publish new secondary-bootloader firmware with a TCB update certificate");
  std::string new_sbl;
  bool revoke_old = false;
  tcb->add_option("--sbl", new_sbl, "new secondary bootloader image")->required();
  tcb->add_flag("--revoke-old", revoke_old);
  tcb->callback([&] {
    auto mfr = ws.manufacturer();
    auto old = ws.firmware();
    auto fw = mfr.firmware_bundle(read_file(new_sbl), old.cce_image, old.icu_measurement);
    ws.save_firmware(fw);
    auto t = mfr.issue_tcb_update(FirmwareComponent::SecondaryBootloader, old.sbl_measurement(), fw.sbl_measurement(),
                                  revoke_old);
    const auto n = ws.tcb_updates().size();
    write_file(ws.pki() / "tcb" / ("tcb-" + std::to_string(n) + ".cert"), t.encode());
    if (revoke_old) write_file(ws.pki() / "cas.bin", mfr.ca_bundle().encode());
    std::cout << "TCB update " << to_hex(old.sbl_measurement()) << " -> " << to_hex(fw.sbl_measurement()) << "\n";
  });

  // ---------------------------------------------------------------- ccu
  auto* ccu = app.add_subcommand("ccu", "card root of trust");
  ccu->require_subcommand(1);
  auto* inspect = ccu->add_subcommand("inspect", "boot the device and print its identity");
  std::string inspect_run;
  inspect->add_option("--run", inspect_run, "also dump the evidence of a run directory");
  inspect->callback([&] {
    if (!inspect_run.empty()) {
      auto ev = load_evidence(inspect_run);
      print_report(ev.report);
      for (std::size_t i = 0; i < ev.device_chain.size(); ++i) print_cert("chain[" + std::to_string(i) + "]", ev.device_chain[i]);
      print_cert("ca-cik", ev.ca_cik_certificate);
      return;
    }
    auto d = boot_device(ws);
    std::cout << "CIK " << to_hex(d.boot.cik_public_key) << "\nPIK " << to_hex(d.boot.pik_public_key) << "\nAK  "
              << to_hex(d.boot.ak_public_key) << "\nsbl measurement " << to_hex(d.boot.sbl_measurement)
              << "\nicu measurement " << to_hex(d.boot.icu_measurement) << "\ncce measurement "
              << to_hex(d.boot.cce_measurement) << "\nPIK endorsement "
              << (d.boot.pik_endorsement ? "present" : "none") << "\n";
    for (std::size_t i = 0; i < d.boot.chain.size(); ++i) print_cert("chain[" + std::to_string(i) + "]", d.boot.chain[i]);
    print_cert("ca-cik", d.evidence.ca_cik_certificate);
  });

  // ------------------------------------------------------------ compile
  auto* comp = app.add_subcommand("compile", "compile a job description");
  std::string job_file, out_dir, comp_cfg;
  comp->add_option("job", job_file, "job description JSON")->required();
  comp->add_option("-o,--out", out_dir)->required();
  comp->add_option("--config", comp_cfg, "device configuration (default: the workspace device)");
  comp->callback([&] {
    DeviceConfig cfg = !comp_cfg.empty()                               ? DeviceConfig::from_json(read_text(comp_cfg))
                       : fs::exists(ws.device() / "config.json") ? ws.device_config()
                                                                     : DeviceConfig{};
    auto job = compile(JobDescription::from_json(read_text(job_file)), cfg, 0);
    save_compiled(out_dir, job);
    std::cout << "compiled " << job.manifest.sync_points.size() << " sync points, manifest "
              << to_hex(job.manifest.measurement()) << "\n";
  });

  // ---------------------------------------------------------- packaging
  auto* pm = app.add_subcommand("package-model", "encrypt code and initial weights in the clean room");
  std::string compiled_dir, weights_file, pkg_party;
  pm->add_option("--compiled", compiled_dir)->required();
  pm->add_option("--weights", weights_file)->required();
  pm->add_option("--party", pkg_party)->required();
  pm->add_option("-o,--out", out_dir)->required();
  pm->callback([&] {
    auto job = load_compiled(compiled_dir);
    auto p = Party::load(ws, pkg_party);
    auto pkg = package_model(job, read_file(weights_file), p.identity, p.secrets);
    p.save_secrets();
    fs::path o = out_dir;
    write_file(o / "manifest.bin", pkg.manifest.encode());
    for (std::size_t t = 0; t < pkg.code.size(); ++t) write_file(o / "code" / tile_name(t, "itxs"), pkg.code[t].serialize());
    write_file(o / "weights.itxs", pkg.weights.serialize());
    save_credential(o / "credential.json", pkg.credential);
    std::cout << "application package written to " << o << "\n";
  });

  auto* pd = app.add_subcommand("package-data", "encrypt one input stream in the clean room");
  std::string manifest_file, data_file;
  std::uint32_t stream_id = 0;
  pd->add_option("--manifest", manifest_file)->required();
  pd->add_option("--stream", stream_id)->required();
  pd->add_option("--data", data_file)->required();
  pd->add_option("--party", pkg_party)->required();
  pd->add_option("-o,--out", out_dir)->required();
  pd->callback([&] {
    auto m = JobManifest::decode(read_file(manifest_file));
    auto p = Party::load(ws, pkg_party);
    auto pkg = package_data(m, stream_id, read_file(data_file), p.identity, p.secrets);
    p.save_secrets();
    fs::path o = out_dir;
    write_text(o / "stream.txt", std::to_string(stream_id));
    write_file(o / "data.itxs", pkg.data.serialize());
    save_credential(o / "credential.json", pkg.credential);
    std::cout << "data package for stream " << stream_id << " written to " << o << "\n";
  });

  // ---------------------------------------------------------------- run
  auto* run = app.add_subcommand("run", "run a job on the workspace device");
  std::string app_dir, adversary_file, resume, resume_from, alt_app, normal_compiled, normal_weights;
  std::vector<std::string> data_dirs, normal_inputs;
  std::optional<std::uint32_t> kill_after;
  bool normal = false;
  run->add_option("--app", app_dir, "application package");
  run->add_option("--data", data_dirs, "data packages");
  run->add_option("-o,--out", out_dir)->required();
  run->add_option("--adversary", adversary_file, "adversary script JSON");
  run->add_option("--alternate-app", alt_app, "second application package for binary substitution");
  run->add_option("--resume", resume, "resume from checkpoint E,C");
  run->add_option("--from", resume_from, "run directory holding the checkpoint");
  run->add_option("--kill-after", kill_after, "host kills the job after N checkpoints");
  run->add_flag("--normal", normal, "clear reference run (no TEE)");
  run->add_option("--compiled", normal_compiled, "compiled job (normal runs)");
  run->add_option("--weights", normal_weights, "plaintext weights (normal runs)");
  run->add_option("--input", normal_inputs, "plaintext input ID=FILE (normal runs)");
  int run_status = 0;
  run->callback([&] {
    auto d = boot_device(ws);
    fs::path o = out_dir;
    RunInputs in;
    RunOptions opt;
    std::vector<Party> parties;
    if (normal) {
      auto job = load_compiled(normal_compiled);
      const auto fsz = job.description.frame_size;
      in.manifest = job.manifest;
      in.code = clear_code(job);
      in.streams[kWeightsStreamId] = clear_stream(StreamIV::data(kWeightsStreamId), read_file(normal_weights), fsz);
      for (const auto& s : normal_inputs) {
        auto eq = s.find('=');
        const auto id = static_cast<std::uint32_t>(std::stoul(s.substr(0, eq)));
        in.streams[id] = clear_stream(StreamIV::data(id), read_file(s.substr(eq + 1)), fsz);
      }
      opt.mode = DeviceMode::Normal;
    } else {
      in.manifest = JobManifest::decode(read_file(fs::path(app_dir) / "manifest.bin"));
      in.code = load_code(app_dir, in.manifest.device.tile_count);
      in.streams[kWeightsStreamId] = StreamFile::parse(read_file(fs::path(app_dir) / "weights.itxs"));
      for (const auto& dd : data_dirs) {
        const auto id = static_cast<std::uint32_t>(std::stoul(read_text(fs::path(dd) / "stream.txt")));
        in.streams[id] = StreamFile::parse(read_file(fs::path(dd) / "data.itxs"));
      }
      if (!alt_app.empty()) in.alternate_code = load_code(alt_app, in.manifest.device.tile_count);
      if (!resume.empty()) {
        auto [e, c] = parse_pair(resume);
        fs::path from = resume_from.empty() ? o : fs::path(resume_from);
        in.checkpoint = CheckpointSet::decode(
            read_file(from / "checkpoints" / ("ckpt-" + std::to_string(e) + "-" + std::to_string(c) + ".bin")));
      }
      for (const auto& n : in.manifest.parties) {
        parties.push_back(Party::load(ws, n));
        parties.back().secrets.new_session(!resume.empty());
        parties.back().save_secrets();
      }
    }
    if (!adversary_file.empty()) opt.adversary = AdversaryScript::from_json(read_text(adversary_file));
    opt.stop_after_checkpoints = kill_after;

    auto policy = ws.policy();
    std::vector<RunParty> rps;
    for (auto& p : parties) {
      RunParty rp;
      rp.identity = &p.identity;
      rp.secrets = &p.secrets;
      rp.policy = policy;
      rp.expected_manifest = in.manifest.measurement();
      rps.push_back(rp);
    }
    EventLog log;
    auto r = run_job(*d.board, in, rps, d.evidence, opt, log);

    fs::create_directories(o);
    write_text(o / "events.log", log.text());
    write_file(o / "manifest.bin", in.manifest.encode());
    if (!normal) {
      write_file(o / "report.bin", r.report.encode());
      for (std::size_t i = 0; i < d.evidence.device_chain.size(); ++i) {
        write_file(o / "evidence" / ("chain-" + std::to_string(i) + ".cert"), d.evidence.device_chain[i].encode());
      }
      write_file(o / "evidence" / "ca_cik.cert", d.evidence.ca_cik_certificate.encode());
      write_text(o / "evidence" / "endorsement.json", endorsement_to_json(d.evidence.pik_endorsement).dump(2));
    }
    for (const auto& c : r.checkpoints) {
      write_file(o / "checkpoints" / ("ckpt-" + std::to_string(c.epoch) + "-" + std::to_string(c.checkpoint_id) + ".bin"),
                 c.encode());
    }
    if (r.model) write_file(o / "model.itxs", r.model->serialize());
    for (const auto& [p, w] : r.released_model_keys) write_file(o / "keys" / (p + ".bin"), w);
    json res{{"completed", r.completed},
             {"killed", r.killed},
             {"mode", normal ? "normal" : "trusted"},
             {"abort_code", r.abort_code ? to_string(*r.abort_code) : ""},
             {"abort_reason", r.abort_reason},
             {"rejected", r.rejected ? to_string(*r.rejected) : ""},
             {"checkpoints", r.checkpoints.size()}};
    write_text(o / "result.json", res.dump(2));
    std::cout << res.dump(2) << "\n";
    run_status = r.completed || r.killed ? 0 : 3;
  });

  // ------------------------------------------------------ party side
  auto* ver = app.add_subcommand("verify", "party-side verification of a run's attestation evidence");
  std::string run_dir, resume_pair;
  ver->add_option("--run", run_dir)->required();
  ver->add_option("--resume", resume_pair, "expected E,C for a resumed run");
  int verify_status = 0;
  auto expected_pair = [&] { return resume_pair.empty() ? std::pair<std::uint32_t, std::uint32_t>{0, 0} : parse_pair(resume_pair); };
  ver->callback([&] {
    auto [e, c] = expected_pair();
    auto v = verify_run(ws, run_dir, e, c);
    if (v.accept) {
      std::cout << "Accept\n";
    } else {
      std::cout << "Reject " << to_string(*v.reason) << ": " << v.detail << "\n";
      verify_status = 2;
    }
  });

  auto* rel = app.add_subcommand("release-keys", "verify, then wrap this party's key package for the attested CCU share");
  rel->add_option("--run", run_dir)->required();
  rel->add_option("--party", pkg_party)->required();
  rel->add_option("--resume", resume_pair, "expected E,C for a resumed run");
  rel->add_option("-o,--out", out_dir, "output file")->required();
  rel->callback([&] {
    auto [e, c] = expected_pair();
    auto v = verify_run(ws, run_dir, e, c);
    if (!v.accept) {
      std::cout << "Reject " << to_string(*v.reason) << ": " << v.detail << "; no keys released\n";
      verify_status = 2;
      return;
    }
    auto p = Party::load(ws, pkg_party);
    auto report = AttestationReport::decode(read_file(fs::path(run_dir) / "report.bin"));
    auto wrapped = party_wrap_keys(p.secrets.share, report.attributes.ccu_share, report.manifest_measurement,
                                   key_package(p.secrets), crypto::random_array<12>());
    write_file(out_dir, wrapped);
    std::cout << "wrapped key package written to " << out_dir << "\n";
  });

  auto* dm = app.add_subcommand("decrypt-model", "recover the trained model as a receiver");
  dm->add_option("--run", run_dir)->required();
  dm->add_option("--party", pkg_party)->required();
  dm->add_option("-o,--out", out_dir)->required();
  dm->callback([&] {
    fs::path rd = run_dir;
    auto res = json::parse(read_text(rd / "result.json"));
    auto model = StreamFile::parse(read_file(rd / "model.itxs"));
    Bytes out;
    if (res.at("mode") == "normal") {
      out = clear_model(model, model.plaintext_length);
    } else {
      auto p = Party::load(ws, pkg_party);
      auto report = AttestationReport::decode(read_file(rd / "report.bin"));
      auto key_file = rd / "keys" / (pkg_party + ".bin");
      Bytes wrapped = fs::exists(key_file) ? read_file(key_file) : Bytes{};
      auto k = receive_model_key(p.secrets, report, wrapped);
      if (!k) throw Error(Errc::KeyExchangeFailure, "no model key for " + pkg_party);
      out = decrypt_model(model, *k, model.plaintext_length);
    }
    write_file(out_dir, out);
    std::cout << to_hex(out) << "\n";
  });

  // ------------------------------------------------------------ helpers
  auto* synth = app.add_subcommand("synth", "deterministic toy inputs");
  std::uint32_t dim = 4;
  std::uint64_t rows = 0, synth_seed = 1;
  synth->add_option("--dim", dim);
  synth->add_option("--rows", rows, "sample rows; 0 writes initial weights");
  synth->add_option("--seed", synth_seed);
  synth->add_option("-o,--out", out_dir)->required();
  synth->callback([&] {
    write_file(out_dir, rows ? synthetic_samples(dim, rows, synth_seed) : synthetic_weights(dim, synth_seed));
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "itx: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "itx: " << e.what() << "\n";
    return 1;
  }
  return run_status ? run_status : verify_status;
}
