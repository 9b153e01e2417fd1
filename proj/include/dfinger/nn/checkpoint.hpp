#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfinger/nn/param_store.hpp"

namespace dfinger::nn {

inline constexpr const char* kCheckpointFormat = "dfinger-ckpt-v1";

// Parameters plus free-form metadata (variant, config, step count...).
struct Checkpoint {
  ParamStore params;
  nlohmann::json meta = nlohmann::json::object();
};

// Layout: u64 little-endian manifest length, JSON manifest, then the blob of
// little-endian f64 values. The manifest lists {name, shape, dtype,
// byte_offset} per tensor in name order.
std::vector<std::uint8_t> SerializeCheckpoint(const Checkpoint& ckpt);
Checkpoint DeserializeCheckpoint(const std::vector<std::uint8_t>& bytes);

void SaveCheckpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint LoadCheckpoint(const std::string& path);

// FNV-1a 64 over the serialized parameter blob and tensor names.
std::uint64_t ParameterHash(const ParamStore& params);

}  // namespace dfinger::nn
