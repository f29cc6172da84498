#include "itx/attestation.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>

#include "itx/error.hpp"

namespace itx {

using nlohmann::json;

namespace {

constexpr std::string_view kPackageAad = "ITX-KEYPACKAGE";
constexpr std::string_view kModelKeyAad = "ITX-MODELKEY";

json attributes_json(const RunAttributes& a) {
  json j;
  j["ccu_share"] = to_hex(a.ccu_share);
  j["epoch"] = a.epoch;
  j["checkpoint_id"] = a.checkpoint_id;
  j["party_fingerprints"] = a.party_fingerprints;
  json sa = json::array();
  for (const auto& [id, p] : a.stream_assignment) sa.push_back(json::array({id, p}));
  j["stream_assignment"] = sa;
  j["model_receivers"] = a.model_receivers;
  return j;
}

Bytes to_bytes(const json& j) {
  std::string s = j.dump();
  return Bytes(s.begin(), s.end());
}

}  // namespace

Bytes RunAttributes::encode() const { return to_bytes(attributes_json(*this)); }

Digest RunAttributes::digest() const { return crypto::sha256({as_bytes("ITX-RUN-ATTRIBUTES"), encode()}); }

Bytes AttestationReport::tbs() const {
  json j;
  j["kind"] = "ATTESTATION_REPORT";
  j["register_measurement"] = to_hex(register_measurement);
  j["measured_registers"] = measured_registers;
  j["bootloader_measurement"] = to_hex(bootloader_measurement);
  j["manifest_measurement"] = to_hex(manifest_measurement);
  j["run_attributes_digest"] = to_hex(run_attributes_digest);
  return to_bytes(j);
}

Bytes AttestationReport::encode() const {
  json j = json::parse(tbs());
  j["attributes"] = attributes_json(attributes);
  j["signature"] = to_hex(signature);
  return to_bytes(j);
}

AttestationReport AttestationReport::decode(ByteView bytes) {
  AttestationReport r;
  try {
    json j = json::parse(bytes.begin(), bytes.end());
    r.register_measurement = array_from_hex<32>(j.at("register_measurement").get<std::string>());
    r.measured_registers = j.at("measured_registers").get<std::vector<std::string>>();
    r.bootloader_measurement = array_from_hex<32>(j.at("bootloader_measurement").get<std::string>());
    r.manifest_measurement = array_from_hex<32>(j.at("manifest_measurement").get<std::string>());
    r.run_attributes_digest = array_from_hex<32>(j.at("run_attributes_digest").get<std::string>());
    r.signature = array_from_hex<64>(j.at("signature").get<std::string>());
    const json& a = j.at("attributes");
    r.attributes.ccu_share = array_from_hex<32>(a.at("ccu_share").get<std::string>());
    r.attributes.epoch = a.at("epoch").get<std::uint32_t>();
    r.attributes.checkpoint_id = a.at("checkpoint_id").get<std::uint32_t>();
    r.attributes.party_fingerprints = a.at("party_fingerprints").get<std::map<std::string, std::string>>();
    for (const auto& p : a.at("stream_assignment")) {
      r.attributes.stream_assignment[p.at(0).get<std::uint32_t>()] = p.at(1).get<std::string>();
    }
    r.attributes.model_receivers = a.at("model_receivers").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidEncoding, std::string("attestation report: ") + e.what());
  }
  return r;
}

Bytes KeyPackage::encode() const {
  Bytes out;
  append(out, as_bytes("ITXK"));
  put_u8(out, 1);
  put_be16(out, static_cast<std::uint16_t>(streams.size()));
  for (const auto& [id, key] : streams) {
    put_be32(out, id);
    append(out, key);
  }
  append(out, run_nonce);
  put_u8(out, prior_run_nonce ? 1 : 0);
  if (prior_run_nonce) append(out, *prior_run_nonce);
  return out;
}

KeyPackage KeyPackage::decode(ByteView bytes) {
  ByteReader r(bytes);
  auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), as_bytes("ITXK").begin()) || r.u8() != 1) {
    throw Error(Errc::InvalidEncoding, "not a key package");
  }
  KeyPackage p;
  auto n = r.be16();
  for (std::uint16_t i = 0; i < n; ++i) {
    auto id = r.be32();
    p.streams.emplace_back(id, r.array<32>());
  }
  p.run_nonce = r.array<32>();
  auto has_prior = r.u8();
  if (has_prior > 1) throw Error(Errc::InvalidEncoding, "bad prior-nonce flag");
  if (has_prior) p.prior_run_nonce = r.array<32>();
  r.expect_done();
  return p;
}

Bytes share_signing_message(const crypto::PublicKey& share) {
  Bytes m;
  append(m, as_bytes("ITX-KEYSHARE"));
  append(m, share);
  return m;
}

crypto::Key256 wrapping_key(const ByteArray<32>& shared_secret, const crypto::PublicKey& party_share,
                            const crypto::PublicKey& ccu_share, const Digest& manifest_hash) {
  Bytes salt;
  append(salt, party_share);
  append(salt, ccu_share);
  append(salt, manifest_hash);
  return crypto::kdf(shared_secret, "wrap", {}, salt);
}

Bytes wrap_key_package(const crypto::Key256& w, const KeyPackage& pkg, const crypto::Nonce12& nonce) {
  Bytes plain = pkg.encode();
  Bytes out(nonce.begin(), nonce.end());
  append(out, crypto::aes256gcm_seal(w, nonce, as_bytes(kPackageAad), plain));
  secure_zero(plain);
  return out;
}

std::optional<KeyPackage> unwrap_key_package(const crypto::Key256& w, ByteView wrapped) {
  if (wrapped.size() < 12 + 16) return std::nullopt;
  crypto::Nonce12 nonce{};
  std::copy(wrapped.begin(), wrapped.begin() + 12, nonce.begin());
  auto plain = crypto::aes256gcm_open(w, nonce, as_bytes(kPackageAad), wrapped.subspan(12));
  if (!plain) return std::nullopt;
  try {
    auto pkg = KeyPackage::decode(*plain);
    secure_zero(*plain);
    return pkg;
  } catch (const Error&) {
    secure_zero(*plain);
    return std::nullopt;
  }
}

Bytes wrap_model_key(const crypto::Key256& w, const crypto::Key256& k_m, const crypto::Nonce12& nonce) {
  Bytes out(nonce.begin(), nonce.end());
  append(out, crypto::aes256gcm_seal(w, nonce, as_bytes(kModelKeyAad), k_m));
  return out;
}

std::optional<crypto::Key256> unwrap_model_key(const crypto::Key256& w, ByteView wrapped) {
  if (wrapped.size() != 12 + 32 + 16) return std::nullopt;
  crypto::Nonce12 nonce{};
  std::copy(wrapped.begin(), wrapped.begin() + 12, nonce.begin());
  auto plain = crypto::aes256gcm_open(w, nonce, as_bytes(kModelKeyAad), wrapped.subspan(12));
  if (!plain) return std::nullopt;
  crypto::Key256 k{};
  std::copy(plain->begin(), plain->end(), k.begin());
  secure_zero(*plain);
  return k;
}

crypto::Key256 derive_run_key(const std::vector<std::pair<Digest, RunNonce>>& nonces, std::string_view label) {
  auto sorted = nonces;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  Bytes secret;
  for (const auto& [fp, n] : sorted) append(secret, n);
  auto k = crypto::kdf(secret, label);
  secure_zero(secret);
  return k;
}

}  // namespace itx
