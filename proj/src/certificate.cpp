#include "itx/certificate.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>

#include "itx/error.hpp"

namespace itx {

using nlohmann::json;

namespace {

Bytes dump(const json& j) {
  std::string s = j.dump();
  return Bytes(s.begin(), s.end());
}

json load(ByteView b) {
  try {
    return json::parse(b.begin(), b.end());
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidEncoding, e.what());
  }
}

template <std::size_t N>
ByteArray<N> hex_field(const json& j, const char* name) {
  try {
    return array_from_hex<N>(j.at(name).get<std::string>());
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidEncoding, std::string("field ") + name + ": " + e.what());
  }
}

template <typename T>
T field(const json& j, const char* name) {
  try {
    return j.at(name).get<T>();
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidEncoding, std::string("field ") + name + ": " + e.what());
  }
}

}  // namespace

std::string issuer_id_of(const crypto::PublicKey& issuer_public_key) {
  return to_hex(crypto::sha256(issuer_public_key));
}

Bytes Certificate::tbs() const {
  json j;
  j["kind"] = kind;
  j["subject"] = subject;
  j["subject_public_key"] = to_hex(subject_public_key);
  j["issuer_id"] = issuer_id;
  j["serial"] = serial;
  j["not_after"] = not_after;
  j["extensions"] = extensions;
  return dump(j);
}

Bytes Certificate::encode() const {
  json j = json::parse(tbs());
  j["signature"] = to_hex(signature);
  return dump(j);
}

Certificate Certificate::decode(ByteView bytes) {
  json j = load(bytes);
  Certificate c;
  c.kind = field<std::string>(j, "kind");
  c.subject = field<std::string>(j, "subject");
  c.subject_public_key = hex_field<32>(j, "subject_public_key");
  c.issuer_id = field<std::string>(j, "issuer_id");
  c.serial = field<std::uint64_t>(j, "serial");
  c.not_after = field<std::uint64_t>(j, "not_after");
  c.extensions = field<std::map<std::string, std::string>>(j, "extensions");
  c.signature = hex_field<64>(j, "signature");
  return c;
}

Digest Certificate::fingerprint() const { return crypto::sha256(encode()); }

std::string Certificate::fingerprint_hex() const { return to_hex(fingerprint()); }

bool Certificate::signed_by(const crypto::PublicKey& issuer) const {
  return issuer_id == issuer_id_of(issuer) && crypto::verify_signature(issuer, tbs(), signature);
}

void Certificate::sign(const crypto::SigningKey& issuer) {
  issuer_id = issuer_id_of(issuer.public_key());
  signature = issuer.sign(tbs());
}

std::string Certificate::ext(const std::string& name) const {
  auto it = extensions.find(name);
  return it == extensions.end() ? std::string() : it->second;
}

Certificate make_certificate(const std::string& kind, const std::string& subject, const crypto::PublicKey& subject_key,
                             const crypto::SigningKey& issuer, std::uint64_t serial, std::uint64_t not_after,
                             std::map<std::string, std::string> extensions) {
  Certificate c;
  c.kind = kind;
  c.subject = subject;
  c.subject_public_key = subject_key;
  c.serial = serial;
  c.not_after = not_after;
  c.extensions = std::move(extensions);
  c.sign(issuer);
  return c;
}

const char* to_string(FirmwareComponent c) {
  return c == FirmwareComponent::SecondaryBootloader ? "SecondaryBootloader" : "IcuFirmware";
}

Bytes TcbUpdateCertificate::tbs() const {
  json j;
  j["kind"] = "TCB_UPDATE";
  j["component"] = to_string(component);
  j["old_measurement"] = to_hex(old_measurement);
  j["new_measurement"] = to_hex(new_measurement);
  j["serial"] = serial;
  j["issuer_id"] = issuer_id;
  return dump(j);
}

Bytes TcbUpdateCertificate::encode() const {
  json j = json::parse(tbs());
  j["signature"] = to_hex(signature);
  return dump(j);
}

TcbUpdateCertificate TcbUpdateCertificate::decode(ByteView bytes) {
  json j = load(bytes);
  TcbUpdateCertificate t;
  std::string comp = field<std::string>(j, "component");
  if (comp == "SecondaryBootloader") {
    t.component = FirmwareComponent::SecondaryBootloader;
  } else if (comp == "IcuFirmware") {
    t.component = FirmwareComponent::IcuFirmware;
  } else {
    throw Error(Errc::InvalidEncoding, "unknown firmware component " + comp);
  }
  t.old_measurement = hex_field<32>(j, "old_measurement");
  t.new_measurement = hex_field<32>(j, "new_measurement");
  t.serial = field<std::uint64_t>(j, "serial");
  t.issuer_id = field<std::string>(j, "issuer_id");
  t.signature = hex_field<64>(j, "signature");
  return t;
}

bool TcbUpdateCertificate::signed_by(const crypto::PublicKey& issuer) const {
  return issuer_id == issuer_id_of(issuer) && crypto::verify_signature(issuer, tbs(), signature);
}

Bytes RevocationList::tbs() const {
  json j;
  j["kind"] = "CRL";
  j["sequence"] = sequence;
  j["revoked_serials"] = revoked_serials;
  json m = json::array();
  for (const auto& d : revoked_measurements) m.push_back(to_hex(d));
  j["revoked_measurements"] = m;
  j["issuer_id"] = issuer_id;
  return dump(j);
}

Bytes RevocationList::encode() const {
  json j = json::parse(tbs());
  j["signature"] = to_hex(signature);
  return dump(j);
}

RevocationList RevocationList::decode(ByteView bytes) {
  json j = load(bytes);
  RevocationList r;
  r.sequence = field<std::uint64_t>(j, "sequence");
  r.revoked_serials = field<std::vector<std::uint64_t>>(j, "revoked_serials");
  for (const auto& s : field<std::vector<std::string>>(j, "revoked_measurements")) {
    r.revoked_measurements.push_back(array_from_hex<32>(s));
  }
  r.issuer_id = field<std::string>(j, "issuer_id");
  r.signature = hex_field<64>(j, "signature");
  return r;
}

bool RevocationList::signed_by(const crypto::PublicKey& issuer) const {
  return issuer_id == issuer_id_of(issuer) && crypto::verify_signature(issuer, tbs(), signature);
}

bool RevocationList::serial_revoked(std::uint64_t serial) const {
  return std::find(revoked_serials.begin(), revoked_serials.end(), serial) != revoked_serials.end();
}

bool RevocationList::measurement_revoked(const Digest& m) const {
  return std::find(revoked_measurements.begin(), revoked_measurements.end(), m) != revoked_measurements.end();
}

Bytes BootloaderManifest::tbs() const {
  json j;
  j["kind"] = "BOOTLOADER_MANIFEST";
  j["batch"] = batch;
  j["nonce"] = to_hex(nonce);
  j["cik_public_key"] = to_hex(cik_public_key);
  j["pik_public_key"] = to_hex(pik_public_key);
  j["sbl_measurement"] = to_hex(sbl_measurement);
  j["icu_measurement"] = to_hex(icu_measurement);
  return dump(j);
}

Bytes BootloaderManifest::encode() const {
  json j = json::parse(tbs());
  j["signature"] = to_hex(signature);
  return dump(j);
}

BootloaderManifest BootloaderManifest::decode(ByteView bytes) {
  json j = load(bytes);
  BootloaderManifest m;
  m.batch = field<std::uint32_t>(j, "batch");
  m.nonce = hex_field<32>(j, "nonce");
  m.cik_public_key = hex_field<32>(j, "cik_public_key");
  m.pik_public_key = hex_field<32>(j, "pik_public_key");
  m.sbl_measurement = hex_field<32>(j, "sbl_measurement");
  m.icu_measurement = hex_field<32>(j, "icu_measurement");
  m.signature = hex_field<64>(j, "signature");
  return m;
}

Bytes PikEndorsement::tbs() const {
  Bytes out;
  append(out, as_bytes("PIK-ENDORSEMENT"));
  append(out, pik_public_key);
  append(out, sbl_measurement);
  return out;
}

bool PikEndorsement::verify(const crypto::PublicKey& cik_public_key) const {
  return crypto::verify_signature(cik_public_key, tbs(), signature);
}

}  // namespace itx
