#include "itx/frame_codec.hpp"

#include <string>

#include "itx/error.hpp"

namespace itx {

namespace {

void check_width(std::uint64_t value, unsigned bits, const char* name) {
  if (bits < 64 && value >> bits) {
    throw Error(Errc::InvalidIvField, std::string(name) + " exceeds " + std::to_string(bits) + " bits");
  }
}

void require_zero(std::uint64_t value, const char* name, StreamType t) {
  if (value != 0) {
    throw Error(Errc::InvalidIvField,
                std::string(name) + " must be zero for " + to_string(t) + " streams");
  }
}

void check_payload(ByteView payload) {
  if (payload.empty()) throw Error(Errc::InvalidPayload, "payload is empty");
  if (payload.size() % 16 != 0) throw Error(Errc::InvalidPayload, "payload is not block aligned");
  if (payload.size() > kMaxFrameSize - kFrameOverhead) {
    throw Error(Errc::InvalidPayload, "payload exceeds the largest frame");
  }
}

}  // namespace

const char* to_string(StreamType t) {
  switch (t) {
    case StreamType::Code: return "CODE";
    case StreamType::Data: return "DATA";
    case StreamType::Checkpoint: return "CHECKPOINT";
    case StreamType::Output: return "OUTPUT";
  }
  return "UNKNOWN";
}

StreamIV StreamIV::code(std::uint32_t ipu, std::uint32_t tile) {
  StreamIV iv;
  iv.type = StreamType::Code;
  iv.ipu_id = ipu;
  iv.tile_id = tile;
  return iv;
}

StreamIV StreamIV::data(std::uint32_t stream_id) {
  StreamIV iv;
  iv.type = StreamType::Data;
  iv.stream_id = stream_id;
  return iv;
}

StreamIV StreamIV::output(std::uint32_t stream_id) {
  StreamIV iv;
  iv.type = StreamType::Output;
  iv.stream_id = stream_id;
  return iv;
}

StreamIV StreamIV::checkpoint(std::uint32_t ipu, std::uint32_t tile, std::uint32_t epoch,
                              std::uint32_t checkpoint_id) {
  StreamIV iv;
  iv.type = StreamType::Checkpoint;
  iv.ipu_id = ipu;
  iv.tile_id = tile;
  iv.epoch = epoch;
  iv.checkpoint_id = checkpoint_id;
  return iv;
}

void StreamIV::validate() const {
  if (static_cast<unsigned>(type) > 3) throw Error(Errc::InvalidIvField, "unknown stream type");
  check_width(stream_id, 16, "stream_id");
  check_width(ipu_id, 8, "ipu_id");
  check_width(tile_id, 16, "tile_id");
  check_width(epoch, 8, "epoch");
  check_width(checkpoint_id, 8, "checkpoint_id");
  check_width(frame_index, 32, "frame_index");
  switch (type) {
    case StreamType::Code:
      require_zero(stream_id, "stream_id", type);
      require_zero(epoch, "epoch", type);
      require_zero(checkpoint_id, "checkpoint_id", type);
      break;
    case StreamType::Data:
    case StreamType::Output:
      require_zero(ipu_id, "ipu_id", type);
      require_zero(tile_id, "tile_id", type);
      require_zero(epoch, "epoch", type);
      require_zero(checkpoint_id, "checkpoint_id", type);
      break;
    case StreamType::Checkpoint:
      require_zero(stream_id, "stream_id", type);
      break;
  }
}

ByteArray<kIvSize> StreamIV::serialize() const {
  validate();
  Bytes b;
  put_u8(b, static_cast<std::uint8_t>(type));
  put_be16(b, static_cast<std::uint16_t>(stream_id));
  put_u8(b, static_cast<std::uint8_t>(ipu_id));
  put_be16(b, static_cast<std::uint16_t>(tile_id));
  put_u8(b, static_cast<std::uint8_t>(epoch));
  put_u8(b, static_cast<std::uint8_t>(checkpoint_id));
  put_be32(b, static_cast<std::uint32_t>(frame_index));
  ByteArray<kIvSize> out{};
  std::copy(b.begin(), b.end(), out.begin());
  return out;
}

ByteArray<kIvBlockSize> StreamIV::block() const {
  ByteArray<kIvBlockSize> out{};
  auto iv = serialize();
  std::copy(iv.begin(), iv.end(), out.begin());
  return out;
}

StreamIV StreamIV::parse(ByteView twelve_bytes) {
  if (twelve_bytes.size() != kIvSize) throw Error(Errc::InvalidIvField, "IV must be 12 bytes");
  ByteReader r(twelve_bytes);
  StreamIV iv;
  std::uint8_t t = r.u8();
  if (t > 3) throw Error(Errc::InvalidIvField, "unknown stream type");
  iv.type = static_cast<StreamType>(t);
  iv.stream_id = r.be16();
  iv.ipu_id = r.u8();
  iv.tile_id = r.be16();
  iv.epoch = r.u8();
  iv.checkpoint_id = r.u8();
  iv.frame_index = r.be32();
  iv.validate();
  return iv;
}

StreamIV compose_iv(const StreamIV& tmpl, std::uint64_t frame_index) {
  StreamIV iv = tmpl;
  iv.frame_index = frame_index;
  iv.validate();
  return iv;
}

StreamKey StreamKey::generate(const StreamIV& binding) {
  StreamKey k;
  k.key = crypto::random_array<32>();
  k.binding = binding;
  k.binding.frame_index = 0;
  return k;
}

Bytes Frame::serialize() const {
  Bytes out;
  out.reserve(size());
  append(out, iv_block);
  append(out, ciphertext);
  append(out, tag);
  return out;
}

Frame Frame::parse(ByteView wire) {
  if (wire.size() < kFrameOverhead + 16 || wire.size() % kFrameGranule != 0 ||
      wire.size() > kMaxFrameSize) {
    throw Error(Errc::InvalidFrame, "frame length " + std::to_string(wire.size()) + " is not valid");
  }
  Frame f;
  std::copy(wire.begin(), wire.begin() + kIvBlockSize, f.iv_block.begin());
  f.ciphertext.assign(wire.begin() + kIvBlockSize, wire.end() - kTagSize);
  std::copy(wire.end() - kTagSize, wire.end(), f.tag.begin());
  return f;
}

void check_frame_size(std::size_t frame_total_size) {
  if (frame_total_size == 0 || frame_total_size % kFrameGranule != 0 ||
      frame_total_size > kMaxFrameSize) {
    throw Error(Errc::InvalidFrameSize, "frame size " + std::to_string(frame_total_size) +
                                            " must be a nonzero multiple of 128 up to 1024");
  }
}

std::size_t payload_size(std::size_t frame_total_size) {
  check_frame_size(frame_total_size);
  return frame_total_size - kFrameOverhead;
}

std::size_t frame_count(std::size_t plaintext_length, std::size_t frame_total_size) {
  std::size_t p = payload_size(frame_total_size);
  return (plaintext_length + p - 1) / p;
}

std::vector<Bytes> partition(ByteView plaintext, std::size_t frame_total_size) {
  std::size_t p = payload_size(frame_total_size);
  if (plaintext.empty()) throw Error(Errc::InvalidPayload, "plaintext is empty");
  std::vector<Bytes> out;
  for (std::size_t off = 0; off < plaintext.size(); off += p) {
    std::size_t n = std::min(p, plaintext.size() - off);
    Bytes chunk(plaintext.begin() + off, plaintext.begin() + off + n);
    chunk.resize(p, 0);
    out.push_back(std::move(chunk));
  }
  return out;
}

Frame encrypt_frame_raw(const crypto::Key256& key, const ByteArray<kIvSize>& iv, ByteView payload) {
  check_payload(payload);
  Bytes sealed = crypto::aes256gcm_seal(key, iv, {}, payload);
  Frame f;
  std::copy(iv.begin(), iv.end(), f.iv_block.begin());
  f.ciphertext.assign(sealed.begin(), sealed.end() - kTagSize);
  std::copy(sealed.end() - kTagSize, sealed.end(), f.tag.begin());
  return f;
}

Frame encrypt_frame(const crypto::Key256& key, const StreamIV& iv, ByteView payload) {
  return encrypt_frame_raw(key, iv.serialize(), payload);
}

Bytes decrypt_frame_raw(const crypto::Key256& key, const Frame& frame) {
  if (frame.ciphertext.empty() || frame.ciphertext.size() % 16 != 0) {
    throw Error(Errc::InvalidFrame, "ciphertext is empty or not block aligned");
  }
  // The trailing counter bytes of the IV block are not covered by GCM, so a
  // frame carrying anything other than zero there is not authentic.
  for (std::size_t i = kIvSize; i < kIvBlockSize; ++i) {
    if (frame.iv_block[i] != 0) throw Error(Errc::AuthenticationFailure, "IV block counter bytes altered");
  }
  crypto::Nonce12 nonce{};
  std::copy(frame.iv_block.begin(), frame.iv_block.begin() + kIvSize, nonce.begin());
  Bytes sealed = frame.ciphertext;
  append(sealed, frame.tag);
  auto plain = crypto::aes256gcm_open(key, nonce, {}, sealed);
  if (!plain) throw Error(Errc::AuthenticationFailure, "frame tag mismatch");
  return std::move(*plain);
}

std::pair<StreamIV, Bytes> decrypt_frame(const crypto::Key256& key, const Frame& frame) {
  Bytes plain = decrypt_frame_raw(key, frame);
  StreamIV iv;
  try {
    iv = StreamIV::parse(ByteView(frame.iv_block).first(kIvSize));
  } catch (const Error& e) {
    throw Error(Errc::InvalidFrame, std::string("authentic frame carries a malformed IV: ") + e.what());
  }
  return {iv, std::move(plain)};
}

std::vector<Frame> encrypt_stream(const crypto::Key256& key, const StreamIV& tmpl, ByteView data,
                                  std::size_t frame_total_size) {
  auto payloads = partition(data, frame_total_size);
  std::vector<Frame> frames;
  frames.reserve(payloads.size());
  for (std::size_t i = 0; i < payloads.size(); ++i) {
    frames.push_back(encrypt_frame(key, compose_iv(tmpl, i), payloads[i]));
  }
  return frames;
}

Bytes decrypt_stream(const crypto::Key256& key, const StreamIV& tmpl, const std::vector<Frame>& frames,
                     std::uint64_t plaintext_length) {
  if (frames.empty()) throw Error(Errc::InvalidLength, "no frames");
  const std::size_t fsize = frames.front().size();
  const std::size_t p = payload_size(fsize);
  if (frame_count(plaintext_length, fsize) != frames.size()) {
    throw Error(Errc::InvalidLength, "plaintext length " + std::to_string(plaintext_length) +
                                         " does not match " + std::to_string(frames.size()) + " frames");
  }
  Bytes out;
  out.reserve(frames.size() * p);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].size() != fsize) throw Error(Errc::InvalidLength, "frame sizes differ within the stream");
    auto [iv, plain] = decrypt_frame(key, frames[i]);
    if (!(iv == compose_iv(tmpl, i))) {
      throw Error(Errc::IvSequenceViolation, "unexpected IV at position " + std::to_string(i));
    }
    append(out, plain);
  }
  out.resize(plaintext_length);
  return out;
}

Frame clear_frame(const StreamIV& iv, ByteView payload) {
  check_payload(payload);
  Frame f;
  f.iv_block = iv.block();
  f.ciphertext.assign(payload.begin(), payload.end());
  return f;
}

Bytes StreamFile::serialize() const {
  Bytes out = {'I', 'T', 'X', 'S', 1};
  StreamIV t = tmpl;
  t.frame_index = 0;
  append(out, t.serialize());
  put_be32(out, frame_total_size);
  put_be64(out, plaintext_length);
  for (const auto& f : frames) append(out, f.serialize());
  return out;
}

StreamFile StreamFile::parse(ByteView bytes) {
  ByteReader r(bytes);
  auto magic = r.take(4);
  if (!std::equal(magic.begin(), magic.end(), "ITXS")) throw Error(Errc::InvalidEncoding, "bad stream magic");
  if (r.u8() != 1) throw Error(Errc::InvalidEncoding, "unsupported stream version");
  StreamFile f;
  f.tmpl = StreamIV::parse(r.take(kIvSize));
  f.frame_total_size = r.be32();
  check_frame_size(f.frame_total_size);
  f.plaintext_length = r.be64();
  if (r.remaining() % f.frame_total_size != 0) throw Error(Errc::InvalidEncoding, "truncated frame");
  while (!r.done()) f.frames.push_back(Frame::parse(r.take(f.frame_total_size)));
  return f;
}

}  // namespace itx
