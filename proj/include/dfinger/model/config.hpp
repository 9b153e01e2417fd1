#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "dfinger/dsp/stft.hpp"

namespace dfinger {

enum class FusionMode { kAdditive, kAttention, kBypass };
enum class FingerprintInit { kRandom, kSameAsMain };
enum class WeightCoupling { kIndependent, kShared };

std::string ToString(FusionMode m);
std::string ToString(FingerprintInit i);
std::string ToString(WeightCoupling c);
FusionMode ParseFusionMode(const std::string& s);

struct VariantConfig {
  FusionMode fusion = FusionMode::kBypass;
  FingerprintInit fingerprint_init = FingerprintInit::kRandom;
  WeightCoupling weight_coupling = WeightCoupling::kIndependent;

  bool has_fingerprint_branch() const { return fusion != FusionMode::kBypass; }
};

bool operator==(const VariantConfig& a, const VariantConfig& b);

// Named presets: baseline, dfin, dfin-att, dfin-sameinit, dfin-sharedenc,
// dfin-opt (same architecture as dfin; the dropout lives in training).
VariantConfig VariantByName(const std::string& name);

struct ModelConfig {
  AnalysisConfig analysis;
  int erb_bands = 32;
  double df_cutoff_hz = 4000.0;
  int df_order = 5;
  int conv_channels = 16;
  int conv_kernel = 3;
  int hidden = 64;
  int decoder_hidden = 64;
  int attention_heads = 4;
  VariantConfig variant;

  // Throws kInvalidConfig on inconsistent sizes.
  void Validate() const;
};

nlohmann::json ToJson(const VariantConfig& v);
VariantConfig VariantFromJson(const nlohmann::json& j);
nlohmann::json ToJson(const ModelConfig& c);
ModelConfig ModelConfigFromJson(const nlohmann::json& j);

// FNV-1a 64 of the canonical JSON of the configuration.
std::uint64_t ConfigHash(const ModelConfig& c);
std::string HashHex(std::uint64_t h);

}  // namespace dfinger
