#include <gtest/gtest.h>

#include "itx/frame_codec.hpp"
#include "itx/ipu_device.hpp"
#include "itx/tile_program.hpp"

using namespace itx;
namespace tl = tile_layout;

namespace {

DeviceConfig small_config() {
  DeviceConfig c;
  c.tile_count = 4;
  c.tiles_per_exchange_context = 4;
  c.ring_buffer_size = 1 << 16;
  return c;
}

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return Errc::IoError;
}

Bytes padded_binary(const TileProgram& p) {
  Bytes b = p.encode();
  b.resize(tl::kBinarySize, 0);
  return b;
}

void put_frames(Device& d, std::uint64_t at, const std::vector<Frame>& frames) {
  auto ring = d.host().ring();
  for (const auto& f : frames) {
    Bytes w = f.serialize();
    std::copy(w.begin(), w.end(), ring.begin() + at);
    at += w.size();
  }
}

std::vector<Frame> clear_frames(const StreamIV& tmpl, const Bytes& data, std::size_t fs) {
  std::vector<Frame> out;
  auto parts = partition(data, fs);
  for (std::size_t i = 0; i < parts.size(); ++i) out.push_back(clear_frame(compose_iv(tmpl, i), parts[i]));
  return out;
}

}  // namespace

TEST(AccessControl, EveryGuardedOperationDeniedInTrustedMode) {
  for (const auto& op : HostPort::guarded_operations()) {
    Device d(small_config());
    int notified = 0;
    d.set_security_listener([&](const std::string&) { ++notified; });
    d.control().enter_trusted();
    HostPort& h = d.host();
    std::function<void()> call;
    if (op == "read_memory") call = [&] { h.read_memory(0, 0, 4); };
    if (op == "write_memory") call = [&] { h.write_memory(0, 0, Bytes(4)); };
    if (op == "read_register") call = [&] { h.read_register("mode"); };
    if (op == "write_register") call = [&] { h.write_register("host.scratch", Bytes(4)); };
    if (op == "program_sxp") call = [&] { h.program_sxp(0, SxpRegisters{}); };
    if (op == "load_sxp_key") call = [&] { h.load_sxp_key(0, 0, crypto::Key256{}); };
    if (op == "autoload") call = [&] { h.autoload(bootloader_image()); };
    if (op == "seed_counters") call = [&] { h.seed_counters(0, 0); };
    if (op == "run_bootloader") call = [&] { h.run_bootloader(0, 4096); };
    if (op == "start_execution") call = [&] { h.start_execution(); };
    ASSERT_TRUE(call) << op;
    EXPECT_EQ(code_of(call), Errc::AccessDenied) << op;
    EXPECT_EQ(notified, 1) << op;
    bool logged = false;
    for (const auto& e : d.events()) logged |= e == "ACCESS_DENIED op=" + op;
    EXPECT_TRUE(logged) << op;
  }
}

TEST(AccessControl, NormalModeAllowsHostAccess) {
  Device d(small_config());
  HostPort& h = d.host();
  h.write_memory(1, 9000, Bytes{1, 2, 3});
  EXPECT_EQ(h.read_memory(1, 9000, 3), (Bytes{1, 2, 3}));
  h.write_register("host.scratch", Bytes{9});
  EXPECT_EQ(h.read_register("host.scratch"), Bytes{9});
  EXPECT_EQ(h.read_register("mode"), Bytes{0});
  EXPECT_NO_THROW(h.program_sxp(0, SxpRegisters{}));
  EXPECT_NO_THROW(h.load_sxp_key(0, 3, crypto::Key256{}));
}

TEST(AccessControl, BarrierControlStaysAvailable) {
  Device d(small_config());
  d.control().enter_trusted();
  EXPECT_EQ(d.host().run_until_barrier(), std::nullopt);
  EXPECT_EQ(d.host().ring().size(), small_config().ring_buffer_size);
}

TEST(Autoload, ImageTooLarge) {
  Device d(small_config());
  EXPECT_EQ(code_of([&] { d.host().autoload(Bytes(tl::kReservedSize + 1, 1)); }), Errc::ImageTooLarge);
  EXPECT_NO_THROW(d.host().autoload(Bytes(tl::kReservedSize, 1)));
}

TEST(Autoload, BroadcastToEveryTile) {
  Device d(small_config());
  d.host().autoload(bootloader_image());
  for (std::uint32_t t = 0; t < 4; ++t) {
    EXPECT_EQ(d.host().read_memory(t, 0, static_cast<std::uint32_t>(bootloader_image().size())), bootloader_image());
  }
}

class Bootloader : public ::testing::Test {
 protected:
  Device d{small_config()};
  std::vector<Bytes> bins;
  void SetUp() override {
    d.host().autoload(bootloader_image());
    d.host().seed_counters(0, 0);
    for (std::uint32_t t = 0; t < 4; ++t) {
      TileProgram p;
      p.body.push_back(ComputePhase{ComputeOp::Sum, tl::kHeapOffset, tl::kHeapOffset, 0, t + 1, 0, 0});
      bins.push_back(padded_binary(p));
    }
  }
  std::vector<Frame> code(std::uint32_t t) { return clear_frames(StreamIV::code(0, t), bins[t], tl::kCodeFrameSize); }
};

TEST_F(Bootloader, LoadsAndMeasures) {
  put_frames(d, 4096, code(2));
  EXPECT_EQ(d.host().run_bootloader(2, 4096), crypto::sha256(bins[2]));
  EXPECT_EQ(d.tile_state(2), TileState::Booted);
}

TEST_F(Bootloader, ReorderedFramesRejected) {
  auto f = code(0);
  std::swap(f[1], f[2]);
  put_frames(d, 4096, f);
  EXPECT_EQ(code_of([&] { d.host().run_bootloader(0, 4096); }), Errc::SecurityException);
}

TEST_F(Bootloader, ReplayedFrameRejected) {
  auto f = code(0);
  f[3] = f[0];
  put_frames(d, 4096, f);
  EXPECT_EQ(code_of([&] { d.host().run_bootloader(0, 4096); }), Errc::SecurityException);
}

TEST_F(Bootloader, OtherTilesBinaryRejected) {
  put_frames(d, 4096, code(1));
  EXPECT_EQ(code_of([&] { d.host().run_bootloader(0, 4096); }), Errc::SecurityException);
}

TEST_F(Bootloader, NeedsAutoloadedImage) {
  Device fresh(small_config());
  put_frames(fresh, 4096, code(0));
  EXPECT_EQ(code_of([&] { fresh.host().run_bootloader(0, 4096); }), Errc::InvalidPhase);
}

TEST_F(Bootloader, StartRequiresEveryTile) {
  put_frames(d, 4096, code(0));
  d.host().run_bootloader(0, 4096);
  EXPECT_EQ(code_of([&] { d.host().start_execution(); }), Errc::InvalidPhase);
}

// Trusted round trip: the CCU side programs the SXP, tiles boot from
// encrypted code, then store a slice of their binary under a second key.
TEST(Trusted, EncryptedBootAndStoreMatchCodec) {
  Device d(small_config());
  auto& ctl = d.control();
  ctl.enter_trusted();
  ctl.autoload(bootloader_image());
  ctl.seed_counters(0, 0);
  const crypto::Key256 kc = crypto::random_array<32>();
  const crypto::Key256 ko = crypto::random_array<32>();
  const std::uint64_t out_addr = 0x8000;

  std::vector<Bytes> bins;
  for (std::uint32_t t = 0; t < 4; ++t) {
    TileProgram p;
    p.body.push_back(SyncPhase{0, {}});
    if (t == 0) {
      StorePhase st;
      st.target = StoreTarget::Output;
      st.stream_id = 0x100;
      st.address = out_addr;
      st.frame_size = 256;
      st.src = tl::kBinaryOffset;
      st.length = 300;
      p.body.push_back(st);
    }
    bins.push_back(padded_binary(p));
  }

  SxpRegisters boot;
  boot.ksellimit = {{0, 4096}, {4096, 4096 + 4 * 4096}};
  boot.kxbctxmap[0] = 0;
  boot.kphysmap[0] = 1;
  ctl.program_sxp(0, boot);
  ctl.load_key(0, 0, kc);
  for (std::uint32_t t = 0; t < 4; ++t) {
    put_frames(d, 4096 + t * 4096, encrypt_stream(kc, StreamIV::code(0, t), bins[t], tl::kCodeFrameSize));
    EXPECT_EQ(ctl.run_bootloader(t, 4096 + t * 4096), crypto::sha256(bins[t]));
  }
  ctl.start_execution();
  ASSERT_EQ(d.host().run_until_barrier(), 0u);

  SxpRegisters out;
  out.ksellimit = {{0, 4096}, {out_addr, out_addr + 4096}};
  out.kxbctxmap[0] = 1;
  out.kphysmap[1] = 1;
  ctl.invalidate_key(0, 0);
  ctl.program_sxp(0, out);
  ctl.load_key(0, 1, ko);
  d.host().release_barrier();
  EXPECT_EQ(d.host().run_until_barrier(), std::nullopt);

  auto ring = d.host().ring();
  std::vector<Frame> frames;
  for (int i = 0; i < 2; ++i) {
    frames.push_back(Frame::parse(ByteView(ring.data() + out_addr + i * 256, 256)));
  }
  Bytes plain = decrypt_stream(ko, StreamIV::output(0x100), frames, 300);
  EXPECT_EQ(plain, Bytes(bins[0].begin(), bins[0].begin() + 300));
  // The host never sees the binary in the clear.
  EXPECT_FALSE(contains_subsequence(Bytes(ring.begin(), ring.end()), ByteView(bins[0]).first(64)));
}

TEST(Reset, HostResetScrubsAndLeavesTrustedMode) {
  Device d(small_config());
  int resets = 0;
  d.set_reset_listener([&](ResetKind) { ++resets; });
  d.host().write_memory(2, 10000, Bytes(32, 0xAB));
  d.control().enter_trusted();
  d.control().load_key(0, 5, crypto::random_array<32>());
  EXPECT_TRUE(d.sxp(0).key_loaded(5));
  d.host().reset(ResetKind::SBR);
  EXPECT_EQ(resets, 1);
  EXPECT_EQ(d.mode(), DeviceMode::Normal);
  EXPECT_FALSE(d.sxp(0).key_loaded(5));
  EXPECT_EQ(d.control().read_memory(2, 10000, 32), Bytes(32, 0));
}

TEST(Reset, NewmanryFromControlDoesNotNotify) {
  Device d(small_config());
  int resets = 0;
  d.set_reset_listener([&](ResetKind) { ++resets; });
  d.control().enter_trusted();
  d.control().reset(ResetKind::Newmanry);
  EXPECT_EQ(resets, 0);
  EXPECT_EQ(d.mode(), DeviceMode::Normal);
}

TEST(RegisterFile, KnownGoodMatchesFreshTrustedDevice) {
  Device d(small_config(), 3);
  d.control().enter_trusted();
  EXPECT_EQ(d.control().register_file().measurement(), known_good_registers(small_config(), 3).measurement());
  EXPECT_NE(known_good_registers(small_config(), 2).measurement(), known_good_registers(small_config(), 3).measurement());
  d.control().load_key(0, 0, crypto::Key256{});
  EXPECT_NE(d.control().register_file().measurement(), known_good_registers(small_config(), 3).measurement());
}
