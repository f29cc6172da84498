#pragma once

#include <array>
#include <memory>

#include "itx/crypto.hpp"

namespace itx {

// Incremental AES-256-GCM state for one physical key context: hash key H,
// encrypted initial counter block EK, running counter and partial GHASH.
// Frames are block aligned with empty AAD, so the engine only ever hashes
// ciphertext blocks and the final length block.
class GcmCore {
 public:
  void load_key(const crypto::Key256& key);
  void invalidate();

  bool loaded() const { return aes_ != nullptr; }
  bool active() const { return active_; }

  // Consumes the 16-byte IV block (only the first 12 bytes are the nonce)
  // and returns it unchanged.
  crypto::Block begin(const crypto::Block& iv_block);
  // Encrypts or decrypts one data block.
  crypto::Block update(const crypto::Block& in, bool decrypt);
  // Produces the tag and returns the context to idle.
  crypto::Block finish();

  // Single-shot GHASH multiply by H, exposed for tests.
  crypto::Block gmul_h(const crypto::Block& x) const;

 private:
  void ghash_block(const crypto::Block& c);

  std::unique_ptr<crypto::Aes256> aes_;
  std::array<std::uint64_t, 16> hl_{};
  std::array<std::uint64_t, 16> hh_{};
  crypto::Block ek_{};
  crypto::Block counter_{};
  crypto::Block ghash_{};
  std::uint64_t data_blocks_ = 0;
  bool active_ = false;
};

}  // namespace itx
