#include "dfinger/service/wire.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "dfinger/error.hpp"

namespace dfinger::service {
namespace {

void PutU16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void PutU32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void PutU64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void PutF32(std::vector<std::uint8_t>& out, float v) { PutU32(out, std::bit_cast<std::uint32_t>(v)); }

// Bounds-checked little-endian reader.
class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  std::uint64_t Get(int bytes) {
    if (remaining() < static_cast<std::size_t>(bytes)) Fail(ErrorKind::kProtocol, "truncated payload");
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  float F32() { return std::bit_cast<float>(static_cast<std::uint32_t>(Get(4))); }
  std::size_t remaining() const { return b_.size() - pos_; }
  std::span<const std::uint8_t> Rest() const { return b_.subspan(pos_); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace

const char* ToString(WireError e) {
  switch (e) {
    case WireError::kMalformedFrame: return "MalformedFrame";
    case WireError::kSampleRateMismatch: return "SampleRateMismatch";
    case WireError::kUnsupportedVersion: return "UnsupportedVersion";
    case WireError::kUnknownType: return "UnknownType";
    case WireError::kBadPayload: return "BadPayload";
    case WireError::kEmptyFingerprint: return "EmptyFingerprint";
    case WireError::kInternal: return "Internal";
  }
  return "Unknown";
}

FrameHeader ParseHeader(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize) Fail(ErrorKind::kProtocol, "short frame header");
  if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) Fail(ErrorKind::kProtocol, "bad frame magic");
  Reader r(bytes.subspan(4, 6));
  FrameHeader h;
  h.version = static_cast<std::uint8_t>(r.Get(1));
  h.type = static_cast<std::uint8_t>(r.Get(1));
  h.payload_len = static_cast<std::uint32_t>(r.Get(4));
  return h;
}

std::vector<std::uint8_t> EncodeFrame(MsgType type, std::span<const std::uint8_t> payload, std::uint8_t version) {
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  out.reserve(kHeaderSize + payload.size());
  out.push_back(version);
  out.push_back(static_cast<std::uint8_t>(type));
  PutU32(out, static_cast<std::uint32_t>(payload.size()));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

std::vector<std::uint8_t> EncodeEmbedRequest(const AudioBuffer& audio) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + 4 * audio.size());
  PutU32(out, static_cast<std::uint32_t>(audio.sample_rate));
  PutU32(out, static_cast<std::uint32_t>(audio.size()));
  for (double v : audio.samples) PutF32(out, static_cast<float>(v));
  return out;
}

EmbedRequest DecodeEmbedRequest(std::span<const std::uint8_t> payload) {
  Reader r(payload);
  EmbedRequest req;
  req.sample_rate = static_cast<std::uint32_t>(r.Get(4));
  const auto n = r.Get(4);
  if (n * 4 != r.remaining()) {
    Fail(ErrorKind::kProtocol, "n_samples " + std::to_string(n) + " does not match " +
                                   std::to_string(r.remaining()) + " payload bytes");
  }
  req.pcm.resize(static_cast<std::size_t>(n));
  for (float& v : req.pcm) v = r.F32();
  return req;
}

std::vector<std::uint8_t> EncodeEmbedResponse(const EmbedResponse& resp) {
  std::vector<std::uint8_t> out;
  PutU16(out, static_cast<std::uint16_t>(resp.values.size()));
  PutU64(out, resp.checkpoint_hash);
  for (float v : resp.values) PutF32(out, v);
  return out;
}

EmbedResponse DecodeEmbedResponse(std::span<const std::uint8_t> payload) {
  Reader r(payload);
  const auto dim = r.Get(2);
  EmbedResponse resp;
  resp.checkpoint_hash = r.Get(8);
  if (dim * 4 != r.remaining()) Fail(ErrorKind::kProtocol, "embed_dim does not match the payload size");
  resp.values.resize(static_cast<std::size_t>(dim));
  for (float& v : resp.values) v = r.F32();
  return resp;
}

std::vector<std::uint8_t> EncodeError(const ErrorReply& e) {
  std::vector<std::uint8_t> out;
  PutU16(out, static_cast<std::uint16_t>(e.code));
  out.insert(out.end(), e.message.begin(), e.message.end());
  return out;
}

ErrorReply DecodeError(std::span<const std::uint8_t> payload) {
  Reader r(payload);
  ErrorReply e;
  e.code = static_cast<WireError>(r.Get(2));
  const auto rest = r.Rest();
  e.message.assign(rest.begin(), rest.end());
  return e;
}

}  // namespace dfinger::service
