#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dfinger/dsp/audio.hpp"

namespace dfinger::service {

inline constexpr std::array<std::uint8_t, 4> kMagic{'D', 'F', 'P', 'N'};
inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::size_t kHeaderSize = 10;  // magic, version, type, u32 length
// Frames announcing more than this are treated as malformed.
inline constexpr std::uint32_t kMaxPayload = 16u << 20;

enum class MsgType : std::uint8_t {
  kEmbedRequest = 1,
  kEmbedResponse = 2,
  kError = 3,
  kPing = 4,
  kPong = 5,
};

// Codes carried in Error frames.
enum class WireError : std::uint16_t {
  kMalformedFrame = 1,  // bad magic or oversized; the server closes afterwards
  kSampleRateMismatch = 2,
  kUnsupportedVersion = 3,
  kUnknownType = 4,
  kBadPayload = 5,
  kEmptyFingerprint = 6,
  kInternal = 7,
};

const char* ToString(WireError e);

struct FrameHeader {
  std::uint8_t version = kWireVersion;
  std::uint8_t type = 0;
  std::uint32_t payload_len = 0;
};

// Throws kProtocol when the magic does not match. Needs kHeaderSize bytes.
FrameHeader ParseHeader(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> EncodeFrame(MsgType type, std::span<const std::uint8_t> payload,
                                      std::uint8_t version = kWireVersion);

struct EmbedRequest {
  std::uint32_t sample_rate = 0;
  std::vector<float> pcm;
};

struct EmbedResponse {
  std::uint64_t checkpoint_hash = 0;
  std::vector<float> values;
};

struct ErrorReply {
  WireError code = WireError::kInternal;
  std::string message;
};

// Audio is narrowed to 32-bit floats on the wire.
std::vector<std::uint8_t> EncodeEmbedRequest(const AudioBuffer& audio);
// Throws kProtocol when n_samples * 4 differs from the remaining bytes.
EmbedRequest DecodeEmbedRequest(std::span<const std::uint8_t> payload);
std::vector<std::uint8_t> EncodeEmbedResponse(const EmbedResponse& r);
EmbedResponse DecodeEmbedResponse(std::span<const std::uint8_t> payload);
std::vector<std::uint8_t> EncodeError(const ErrorReply& e);
ErrorReply DecodeError(std::span<const std::uint8_t> payload);

}  // namespace dfinger::service
