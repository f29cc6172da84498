#include "itx/tile_program.hpp"

#include "itx/error.hpp"

namespace itx {

namespace {

constexpr std::uint32_t kMagic = 0x49545850;  // "ITXP"
constexpr std::uint8_t kVersion = 1;

enum : std::uint8_t { kOpLoad = 1, kOpCompute = 2, kOpStore = 3, kOpSync = 4 };

void put_phase(Bytes& out, const Phase& ph) {
  if (auto* l = std::get_if<LoadPhase>(&ph)) {
    put_u8(out, kOpLoad);
    put_u8(out, static_cast<std::uint8_t>(l->target));
    put_be16(out, static_cast<std::uint16_t>(l->stream_id));
    put_be64(out, l->address);
    put_be32(out, l->first_frame);
    put_be32(out, l->frame_count);
    put_be16(out, static_cast<std::uint16_t>(l->frame_size));
    put_be32(out, l->skip);
    put_be32(out, l->length);
    put_be32(out, l->dest);
  } else if (auto* c = std::get_if<ComputePhase>(&ph)) {
    put_u8(out, kOpCompute);
    put_u8(out, static_cast<std::uint8_t>(c->op));
    for (auto v : {c->a0, c->a1, c->a2, c->a3, c->a4}) put_be32(out, v);
    put_be32(out, static_cast<std::uint32_t>(c->imm));
  } else if (auto* s = std::get_if<StorePhase>(&ph)) {
    put_u8(out, kOpStore);
    put_u8(out, static_cast<std::uint8_t>(s->target));
    put_be16(out, static_cast<std::uint16_t>(s->stream_id));
    put_be64(out, s->address);
    put_be32(out, s->first_frame);
    put_be16(out, static_cast<std::uint16_t>(s->frame_size));
    put_be32(out, s->src);
    put_be32(out, s->length);
    put_be32(out, s->resume_pc);
    put_be16(out, static_cast<std::uint16_t>(s->immediate.size()));
    append(out, s->immediate);
  } else {
    const auto& y = std::get<SyncPhase>(ph);
    put_u8(out, kOpSync);
    put_be32(out, y.sync_id);
    put_be16(out, static_cast<std::uint16_t>(y.moves.size()));
    for (const auto& m : y.moves) {
      put_be16(out, static_cast<std::uint16_t>(m.dst_first));
      put_be16(out, static_cast<std::uint16_t>(m.dst_count));
      put_be32(out, m.src_offset);
      put_be32(out, m.src_stride);
      put_be32(out, m.dst_offset);
      put_be32(out, m.dst_stride);
      put_be32(out, m.length);
    }
  }
}

Phase get_phase(ByteReader& r) {
  switch (r.u8()) {
    case kOpLoad: {
      LoadPhase l;
      std::uint8_t t = r.u8();
      if (t > 1) throw Error(Errc::InvalidEncoding, "bad load target");
      l.target = static_cast<LoadTarget>(t);
      l.stream_id = r.be16();
      l.address = r.be64();
      l.first_frame = r.be32();
      l.frame_count = r.be32();
      l.frame_size = r.be16();
      l.skip = r.be32();
      l.length = r.be32();
      l.dest = r.be32();
      return l;
    }
    case kOpCompute: {
      ComputePhase c;
      std::uint8_t op = r.u8();
      if (op > 2) throw Error(Errc::InvalidEncoding, "bad compute op");
      c.op = static_cast<ComputeOp>(op);
      c.a0 = r.be32();
      c.a1 = r.be32();
      c.a2 = r.be32();
      c.a3 = r.be32();
      c.a4 = r.be32();
      c.imm = static_cast<std::int32_t>(r.be32());
      return c;
    }
    case kOpStore: {
      StorePhase s;
      std::uint8_t t = r.u8();
      if (t > 2) throw Error(Errc::InvalidEncoding, "bad store target");
      s.target = static_cast<StoreTarget>(t);
      s.stream_id = r.be16();
      s.address = r.be64();
      s.first_frame = r.be32();
      s.frame_size = r.be16();
      s.src = r.be32();
      s.length = r.be32();
      s.resume_pc = r.be32();
      auto n = r.be16();
      auto imm = r.take(n);
      s.immediate.assign(imm.begin(), imm.end());
      return s;
    }
    case kOpSync: {
      SyncPhase y;
      y.sync_id = r.be32();
      auto n = r.be16();
      for (std::uint16_t i = 0; i < n; ++i) {
        Move m;
        m.dst_first = r.be16();
        m.dst_count = r.be16();
        m.src_offset = r.be32();
        m.src_stride = r.be32();
        m.dst_offset = r.be32();
        m.dst_stride = r.be32();
        m.length = r.be32();
        y.moves.push_back(m);
      }
      return y;
    }
    default:
      throw Error(Errc::InvalidEncoding, "unknown phase opcode");
  }
}

std::size_t checked(std::span<std::uint8_t> mem, std::uint64_t off, std::uint64_t len) {
  if (off > mem.size() || len > mem.size() - off) {
    throw Error(Errc::IndexOutOfRange, "compute operand outside tile memory");
  }
  return static_cast<std::size_t>(off);
}

std::int32_t ld(std::span<std::uint8_t> mem, std::size_t off) {
  return static_cast<std::int32_t>(get_le32(mem, off));
}

void st(std::span<std::uint8_t> mem, std::size_t off, std::int32_t v) {
  set_le32(mem, off, static_cast<std::uint32_t>(v));
}

}  // namespace

Bytes TileProgram::encode() const {
  Bytes out;
  put_be32(out, kMagic);
  put_u8(out, kVersion);
  put_be32(out, state_offset);
  put_be32(out, state_size);
  put_be32(out, scratch_offset);
  put_be16(out, static_cast<std::uint16_t>(resume.size()));
  put_be16(out, static_cast<std::uint16_t>(body.size()));
  for (const auto& p : resume) put_phase(out, p);
  for (const auto& p : body) put_phase(out, p);
  return out;
}

TileProgram TileProgram::decode(ByteView bytes) {
  ByteReader r(bytes);
  if (r.be32() != kMagic) throw Error(Errc::InvalidEncoding, "not a tile program");
  if (r.u8() != kVersion) throw Error(Errc::InvalidEncoding, "unsupported tile program version");
  TileProgram p;
  p.state_offset = r.be32();
  p.state_size = r.be32();
  p.scratch_offset = r.be32();
  auto nr = r.be16();
  auto nb = r.be16();
  for (std::uint16_t i = 0; i < nr; ++i) p.resume.push_back(get_phase(r));
  for (std::uint16_t i = 0; i < nb; ++i) p.body.push_back(get_phase(r));
  // Trailing bytes are zero padding of the fixed-size binary region.
  while (!r.done()) {
    if (r.u8() != 0) throw Error(Errc::InvalidEncoding, "garbage after tile program");
  }
  return p;
}

std::uint32_t checkpoint_blob_size(const TileProgram& p) { return kCheckpointHeader + p.state_size; }

std::int32_t q16_wrap(std::int64_t v) { return static_cast<std::int32_t>(static_cast<std::uint32_t>(v)); }

void execute_compute(std::span<std::uint8_t> mem, const ComputePhase& op) {
  switch (op.op) {
    case ComputeOp::Sum: {
      const std::uint64_t dim = op.a3, count = op.a2;
      auto dst = checked(mem, op.a0, dim * 4);
      auto src = checked(mem, op.a1, dim * count * 4);
      for (std::uint64_t j = 0; j < dim; ++j) {
        std::int64_t acc = 0;
        for (std::uint64_t k = 0; k < count; ++k) acc += ld(mem, src + 4 * (k * dim + j));
        st(mem, dst + 4 * j, q16_wrap(acc));
      }
      break;
    }
    case ComputeOp::Axpy: {
      const std::uint64_t dim = op.a3;
      auto y = checked(mem, op.a0, dim * 4);
      auto x = checked(mem, op.a1, dim * 4);
      for (std::uint64_t j = 0; j < dim; ++j) {
        std::int64_t prod = (static_cast<std::int64_t>(op.imm) * ld(mem, x + 4 * j)) >> 16;
        st(mem, y + 4 * j, q16_wrap(static_cast<std::int64_t>(ld(mem, y + 4 * j)) + prod));
      }
      break;
    }
    case ComputeOp::SgdStep: {
      const std::uint64_t n = op.a2, dim = op.a3;
      auto w = checked(mem, op.a0, dim * 4);
      auto xs = checked(mem, op.a1, n * (dim + 1) * 4);
      auto g = checked(mem, op.a4, dim * 4);
      std::vector<std::int64_t> grad(dim, 0);
      for (std::uint64_t i = 0; i < n; ++i) {
        std::size_t row = xs + 4 * i * (dim + 1);
        std::int64_t dot = 0;
        for (std::uint64_t j = 0; j < dim; ++j) {
          dot += static_cast<std::int64_t>(ld(mem, w + 4 * j)) * ld(mem, row + 4 * j);
        }
        std::int64_t err = (dot >> 16) - ld(mem, row + 4 * dim);
        for (std::uint64_t j = 0; j < dim; ++j) grad[j] += (err * ld(mem, row + 4 * j)) >> 16;
      }
      for (std::uint64_t j = 0; j < dim; ++j) st(mem, g + 4 * j, q16_wrap(grad[j]));
      break;
    }
  }
}

}  // namespace itx
