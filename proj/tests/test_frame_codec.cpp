#include <gtest/gtest.h>

#include <random>
#include <set>

#include "itx/frame_codec.hpp"
#include "ref_gcm.hpp"

using namespace itx;

namespace {

refgcm::Sealed oracle(const crypto::Key256& key, const ByteArray<12>& iv, const Bytes& pt) {
  return refgcm::gcm_seal(key, iv, {}, pt);
}

Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
  Bytes b(n);
  for (auto& x : b) x = static_cast<std::uint8_t>(rng());
  return b;
}

}  // namespace

TEST(StreamIV, DataIndexZero) {
  auto iv = compose_iv(StreamIV::data(1), 0);
  EXPECT_EQ(to_hex(iv.serialize()), "010001000000000000000000");
}

TEST(StreamIV, CodeIvMatchesBootloaderComposition) {
  // expected_iv = CODE | ipu_id | tile_id | index, fields in wire order
  auto iv = compose_iv(StreamIV::code(0, 5), 3);
  Bytes expect;
  put_u8(expect, 0);       // CODE
  put_be16(expect, 0);     // stream id unused
  put_u8(expect, 0);       // ipu
  put_be16(expect, 5);     // tile
  put_u8(expect, 0);       // epoch unused
  put_u8(expect, 0);       // checkpoint unused
  put_be32(expect, 3);     // index
  EXPECT_EQ(to_hex(iv.serialize()), to_hex(expect));
}

TEST(StreamIV, InjectiveOverGrid) {
  std::set<std::string> seen;
  for (std::uint32_t sid = 0; sid < 32; ++sid) {
    for (std::uint32_t idx = 0; idx < 32; ++idx) {
      seen.insert(to_hex(compose_iv(StreamIV::data(sid), idx).serialize()));
    }
  }
  EXPECT_EQ(seen.size(), 1024u);
}

TEST(StreamIV, InjectiveAcrossTypesAndFields) {
  std::set<std::string> seen;
  std::size_t n = 0;
  for (std::uint32_t a = 0; a < 4; ++a) {
    for (std::uint32_t b = 0; b < 4; ++b) {
      for (std::uint32_t idx = 0; idx < 4; ++idx) {
        seen.insert(to_hex(compose_iv(StreamIV::code(a, b), idx).serialize()));
        seen.insert(to_hex(compose_iv(StreamIV::data(a * 4 + b), idx).serialize()));
        seen.insert(to_hex(compose_iv(StreamIV::output(a * 4 + b), idx).serialize()));
        for (std::uint32_t e = 0; e < 2; ++e) {
          seen.insert(to_hex(compose_iv(StreamIV::checkpoint(a, b, e, idx), idx).serialize()));
          ++n;
        }
        n += 3;
      }
    }
  }
  EXPECT_EQ(seen.size(), n);
}

TEST(StreamIV, ParseRoundTrip) {
  auto iv = compose_iv(StreamIV::checkpoint(2, 300, 4, 9), 77);
  EXPECT_EQ(StreamIV::parse(iv.serialize()), iv);
}

TEST(StreamIV, FieldRangeAndZeroRules) {
  EXPECT_THROW(compose_iv(StreamIV::data(1), 1ULL << 32), Error);
  EXPECT_NO_THROW(compose_iv(StreamIV::data(1), 0xffffffffULL));
  EXPECT_THROW(StreamIV::data(70000).serialize(), Error);
  EXPECT_THROW(StreamIV::code(256, 0).serialize(), Error);
  StreamIV bad = StreamIV::data(1);
  bad.tile_id = 2;
  try {
    bad.serialize();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InvalidIvField);
  }
  StreamIV code = StreamIV::code(0, 1);
  code.epoch = 1;
  EXPECT_THROW(code.validate(), Error);
  StreamIV ck = StreamIV::checkpoint(0, 1, 1, 1);
  ck.stream_id = 4;
  EXPECT_THROW(ck.validate(), Error);
}

TEST(Partition, ExactFit) {
  Bytes pt(992, 0xab);
  auto parts = partition(pt, 1024);
  ASSERT_EQ(parts.size(), 1u);
  EXPECT_EQ(parts[0], pt);
}

TEST(Partition, PaddedTail) {
  Bytes pt(1000, 0xab);
  auto parts = partition(pt, 1024);
  ASSERT_EQ(parts.size(), 2u);
  EXPECT_EQ(parts[1].size(), 992u);
  EXPECT_EQ(std::count(parts[1].begin() + 8, parts[1].end(), 0), 984);
  Bytes joined;
  for (auto& p : parts) append(joined, p);
  joined.resize(pt.size());
  EXPECT_EQ(joined, pt);
}

TEST(Partition, FrameSizeRules) {
  Bytes pt(10, 1);
  for (std::size_t bad : {0u, 64u, 1000u, 1152u, 2048u}) {
    try {
      partition(pt, bad);
      FAIL() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::InvalidFrameSize);
    }
  }
  for (std::size_t good = 128; good <= 1024; good += 128) EXPECT_NO_THROW(partition(pt, good));
  EXPECT_THROW(partition(Bytes{}, 1024), Error);
}

struct Kat {
  const char* key;
  const char* iv;
  const char* pt;
  const char* ct;
  const char* tag;
};

// Published AES-256-GCM vectors with a 96-bit IV and no AAD.
const Kat kKats[] = {
    {"0000000000000000000000000000000000000000000000000000000000000000", "000000000000000000000000",
     "00000000000000000000000000000000", "cea7403d4d606b6e074ec5d3baf39d18", "d0d1c8a799996bf0265b98b5d48ab919"},
    {"feffe9928665731c6d6a8f9467308308feffe9928665731c6d6a8f9467308308", "cafebabefacedbaddecaf888",
     "d9313225f88406e5a55909c5aff5269a86a7a9531534f7da2e4c303d8a318a72"
     "1c3c0c95956809532fcf0e2449a6b525b16aedf5aa0de657ba637b391aafd255",
     "522dc1f099567d07f47f37a32a84427d643a8cdcbfe5c0c97598a2bd2555d1aa"
     "8cb08e48590dbb3da7b08b1056828838c5f61e6393ba7a0abcc9f662898015ad",
     "b094dac5d93471bdec1a502270e3cc6c"},
};

TEST(EncryptFrame, KnownAnswerVectors) {
  for (const auto& k : kKats) {
    auto key = array_from_hex<32>(k.key);
    auto iv = array_from_hex<12>(k.iv);
    auto f = encrypt_frame_raw(key, iv, from_hex(k.pt));
    EXPECT_EQ(to_hex(f.ciphertext), k.ct);
    EXPECT_EQ(to_hex(f.tag), k.tag);
    auto s = oracle(key, iv, from_hex(k.pt));
    EXPECT_EQ(to_hex(s.ciphertext), k.ct);
    EXPECT_EQ(to_hex(s.tag), k.tag);
    EXPECT_EQ(decrypt_frame_raw(key, f), from_hex(k.pt));
  }
}

TEST(EncryptFrame, ZeroKeyMatchesOracle) {
  crypto::Key256 key{};
  auto f = encrypt_frame(key, StreamIV{}, Bytes(16, 0));
  auto s = oracle(key, ByteArray<12>{}, Bytes(16, 0));
  EXPECT_EQ(f.ciphertext, s.ciphertext);
  EXPECT_EQ(to_hex(f.tag), to_hex(s.tag));
  Bytes iv_block = Bytes(16, 0);
  EXPECT_EQ(Bytes(f.iv_block.begin(), f.iv_block.end()), iv_block);
}

TEST(EncryptFrame, RandomFramesMatchOracle) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    crypto::Key256 key{};
    for (auto& b : key) b = static_cast<std::uint8_t>(rng());
    StreamIV iv = compose_iv(StreamIV::data(rng() & 0xffff), rng() & 0xffffffff);
    std::size_t blocks = 1 + rng() % 62;
    Bytes pt = random_bytes(rng, blocks * 16);
    auto f = encrypt_frame(key, iv, pt);
    auto s = oracle(key, iv.serialize(), pt);
    ASSERT_EQ(f.ciphertext, s.ciphertext);
    ASSERT_EQ(to_hex(f.tag), to_hex(s.tag));
    auto [got_iv, got] = decrypt_frame(key, f);
    EXPECT_EQ(got_iv, iv);
    EXPECT_EQ(got, pt);
  }
}

TEST(EncryptFrame, PayloadRules) {
  crypto::Key256 key{};
  for (std::size_t n : {0u, 15u, 17u, 1008u}) {
    try {
      encrypt_frame(key, StreamIV{}, Bytes(n, 1));
      FAIL() << n;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::InvalidPayload);
    }
  }
}

TEST(DecryptFrame, EveryBitFlipIsRejected) {
  auto key = crypto::random_array<32>();
  auto f = encrypt_frame(key, compose_iv(StreamIV::data(3), 9), Bytes(96, 0x5a));
  Bytes wire = f.serialize();
  ASSERT_EQ(wire.size(), 128u);
  for (std::size_t bit = 0; bit < wire.size() * 8; ++bit) {
    Bytes m = wire;
    m[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    try {
      decrypt_frame(key, Frame::parse(m));
      FAIL() << "bit " << bit << " accepted";
    } catch (const Error& e) {
      ASSERT_EQ(e.code(), Errc::AuthenticationFailure) << "bit " << bit;
    }
  }
}

TEST(DecryptFrame, MalformedFrame) {
  EXPECT_THROW(Frame::parse(Bytes(100)), Error);
  EXPECT_THROW(Frame::parse(Bytes(1152)), Error);
  try {
    Frame::parse(Bytes(32));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InvalidFrame);
  }
}

TEST(Stream, RoundTripSizes) {
  auto key = crypto::random_array<32>();
  std::mt19937_64 rng(11);
  for (std::size_t fs = 128; fs <= 1024; fs += 128) {
    for (std::size_t len : {1u, 95u, 96u, 97u, 992u, 3000u}) {
      Bytes data = random_bytes(rng, len);
      auto frames = encrypt_stream(key, StreamIV::data(4), data, fs);
      EXPECT_EQ(frames.size(), frame_count(len, fs));
      for (auto& f : frames) EXPECT_EQ(f.size(), fs);
      EXPECT_EQ(decrypt_stream(key, StreamIV::data(4), frames, len), data);
    }
  }
}

TEST(Stream, ReorderDetected) {
  auto key = crypto::random_array<32>();
  Bytes data(992 * 3, 1);
  auto frames = encrypt_stream(key, StreamIV::data(1), data);
  std::swap(frames[1], frames[2]);
  try {
    decrypt_stream(key, StreamIV::data(1), frames, data.size());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::IvSequenceViolation);
    EXPECT_NE(std::string(e.what()).find("position 1"), std::string::npos);
  }
}

TEST(Stream, ReplayDetected) {
  auto key = crypto::random_array<32>();
  Bytes data(992 * 3, 1);
  auto frames = encrypt_stream(key, StreamIV::data(1), data);
  frames[2] = frames[1];
  try {
    decrypt_stream(key, StreamIV::data(1), frames, data.size());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::IvSequenceViolation);
  }
}

TEST(Stream, CrossStreamSubstitutionDetected) {
  auto key = crypto::random_array<32>();
  Bytes data(992, 1);
  auto a = encrypt_stream(key, StreamIV::data(1), data);
  auto b = encrypt_stream(key, StreamIV::data(2), data);
  EXPECT_THROW(decrypt_stream(key, StreamIV::data(1), b, data.size()), Error);
}

TEST(Stream, LengthMismatch) {
  auto key = crypto::random_array<32>();
  Bytes data(992 * 2, 1);
  auto frames = encrypt_stream(key, StreamIV::data(1), data);
  try {
    decrypt_stream(key, StreamIV::data(1), frames, 992);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::InvalidLength);
  }
}

TEST(Stream, FileRoundTrip) {
  auto key = crypto::random_array<32>();
  Bytes data(1500, 9);
  StreamFile f;
  f.tmpl = StreamIV::data(6);
  f.frame_total_size = 512;
  f.plaintext_length = data.size();
  f.frames = encrypt_stream(key, f.tmpl, data, 512);
  Bytes wire = f.serialize();
  EXPECT_EQ(std::string(wire.begin(), wire.begin() + 4), "ITXS");
  auto g = StreamFile::parse(wire);
  EXPECT_EQ(g.tmpl, f.tmpl);
  EXPECT_EQ(g.frame_total_size, 512u);
  EXPECT_EQ(decrypt_stream(key, g.tmpl, g.frames, g.plaintext_length), data);
  wire.pop_back();
  EXPECT_THROW(StreamFile::parse(wire), Error);
}

TEST(Stream, NoIvReuseWithinAKey) {
  // Registry over every frame a key produces across several streams.
  auto key = crypto::random_array<32>();
  std::set<std::string> registry;
  std::size_t frames = 0;
  for (std::uint32_t sid = 0; sid < 8; ++sid) {
    for (auto& f : encrypt_stream(key, StreamIV::data(sid), Bytes(992 * 5, 3))) {
      registry.insert(to_hex(f.iv_block));
      ++frames;
    }
  }
  for (std::uint32_t tile = 0; tile < 8; ++tile) {
    for (auto& f : encrypt_stream(key, StreamIV::code(0, tile), Bytes(992 * 4, 3))) {
      registry.insert(to_hex(f.iv_block));
      ++frames;
    }
  }
  EXPECT_EQ(registry.size(), frames);
}
