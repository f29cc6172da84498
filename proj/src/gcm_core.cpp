#include "itx/gcm_core.hpp"

#include "itx/error.hpp"

namespace itx {

namespace {

constexpr std::uint64_t kLast4[16] = {0x0000, 0x1c20, 0x3840, 0x2460, 0x7080, 0x6ca0, 0x48c0, 0x54e0,
                                      0xe100, 0xfd20, 0xd940, 0xc560, 0x9180, 0x8da0, 0xa9c0, 0xb5e0};

std::uint64_t load_be64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | p[i];
  return v;
}

void store_be64(std::uint8_t* p, std::uint64_t v) {
  for (int i = 7; i >= 0; --i) {
    p[i] = static_cast<std::uint8_t>(v);
    v >>= 8;
  }
}

void increment32(crypto::Block& ctr) {
  for (int i = 15; i >= 12; --i) {
    if (++ctr[i] != 0) break;
  }
}

}  // namespace

void GcmCore::load_key(const crypto::Key256& key) {
  aes_ = std::make_unique<crypto::Aes256>(key);
  crypto::Block h = aes_->encrypt_block(crypto::Block{});

  // 4-bit multiplication table for H (Shoup's method).
  std::uint64_t vh = load_be64(h.data());
  std::uint64_t vl = load_be64(h.data() + 8);
  hl_.fill(0);
  hh_.fill(0);
  hl_[8] = vl;
  hh_[8] = vh;
  for (int i = 4; i > 0; i >>= 1) {
    std::uint32_t t = static_cast<std::uint32_t>(vl & 1) * 0xe1000000U;
    vl = (vh << 63) | (vl >> 1);
    vh = (vh >> 1) ^ (static_cast<std::uint64_t>(t) << 32);
    hl_[i] = vl;
    hh_[i] = vh;
  }
  for (int i = 2; i <= 8; i *= 2) {
    for (int j = 1; j < i; ++j) {
      hh_[i + j] = hh_[i] ^ hh_[j];
      hl_[i + j] = hl_[i] ^ hl_[j];
    }
  }
  secure_zero(h);
  active_ = false;
}

void GcmCore::invalidate() {
  aes_.reset();
  std::fill(hl_.begin(), hl_.end(), 0);
  std::fill(hh_.begin(), hh_.end(), 0);
  secure_zero(ek_);
  secure_zero(counter_);
  secure_zero(ghash_);
  data_blocks_ = 0;
  active_ = false;
}

crypto::Block GcmCore::gmul_h(const crypto::Block& x) const {
  unsigned lo = x[15] & 0x0f;
  std::uint64_t zh = hh_[lo];
  std::uint64_t zl = hl_[lo];
  for (int i = 15; i >= 0; --i) {
    lo = x[i] & 0x0f;
    unsigned hi = (x[i] >> 4) & 0x0f;
    if (i != 15) {
      unsigned rem = zl & 0x0f;
      zl = (zh << 60) | (zl >> 4);
      zh = (zh >> 4) ^ (kLast4[rem] << 48);
      zh ^= hh_[lo];
      zl ^= hl_[lo];
    }
    unsigned rem = zl & 0x0f;
    zl = (zh << 60) | (zl >> 4);
    zh = (zh >> 4) ^ (kLast4[rem] << 48);
    zh ^= hh_[hi];
    zl ^= hl_[hi];
  }
  crypto::Block out{};
  store_be64(out.data(), zh);
  store_be64(out.data() + 8, zl);
  return out;
}

void GcmCore::ghash_block(const crypto::Block& c) {
  for (int i = 0; i < 16; ++i) ghash_[i] ^= c[i];
  ghash_ = gmul_h(ghash_);
}

crypto::Block GcmCore::begin(const crypto::Block& iv_block) {
  if (!aes_) throw Error(Errc::KeyNotLoaded, "key context has no key");
  counter_ = iv_block;
  counter_[12] = counter_[13] = counter_[14] = 0;
  counter_[15] = 1;
  ek_ = aes_->encrypt_block(counter_);
  increment32(counter_);
  ghash_.fill(0);
  data_blocks_ = 0;
  active_ = true;
  return iv_block;
}

crypto::Block GcmCore::update(const crypto::Block& in, bool decrypt) {
  if (!aes_) throw Error(Errc::KeyNotLoaded, "key context has no key");
  crypto::Block ks = aes_->encrypt_block(counter_);
  increment32(counter_);
  crypto::Block out{};
  for (int i = 0; i < 16; ++i) out[i] = in[i] ^ ks[i];
  ghash_block(decrypt ? in : out);
  ++data_blocks_;
  return out;
}

crypto::Block GcmCore::finish() {
  if (!aes_) throw Error(Errc::KeyNotLoaded, "key context has no key");
  crypto::Block len{};
  store_be64(len.data(), 0);
  store_be64(len.data() + 8, data_blocks_ * 128);
  ghash_block(len);
  crypto::Block tag{};
  for (int i = 0; i < 16; ++i) tag[i] = ghash_[i] ^ ek_[i];
  ghash_.fill(0);
  secure_zero(ek_);
  active_ = false;
  return tag;
}

}  // namespace itx
