#include "dfinger/model/config.hpp"

#include <cstdio>

#include "dfinger/error.hpp"

namespace dfinger {

std::string ToString(FusionMode m) {
  switch (m) {
    case FusionMode::kAdditive: return "additive";
    case FusionMode::kAttention: return "attention";
    case FusionMode::kBypass: return "bypass";
  }
  return "?";
}

std::string ToString(FingerprintInit i) {
  return i == FingerprintInit::kRandom ? "random" : "same-as-main";
}

std::string ToString(WeightCoupling c) {
  return c == WeightCoupling::kIndependent ? "independent" : "shared";
}

FusionMode ParseFusionMode(const std::string& s) {
  if (s == "additive") return FusionMode::kAdditive;
  if (s == "attention") return FusionMode::kAttention;
  if (s == "bypass") return FusionMode::kBypass;
  Fail(ErrorKind::kInvalidConfig, "unknown fusion mode '" + s + "'");
}

bool operator==(const VariantConfig& a, const VariantConfig& b) {
  return a.fusion == b.fusion && a.fingerprint_init == b.fingerprint_init &&
         a.weight_coupling == b.weight_coupling;
}

VariantConfig VariantByName(const std::string& name) {
  if (name == "baseline") return {FusionMode::kBypass, FingerprintInit::kRandom, WeightCoupling::kIndependent};
  if (name == "dfin" || name == "dfin-opt")
    return {FusionMode::kAdditive, FingerprintInit::kRandom, WeightCoupling::kIndependent};
  if (name == "dfin-att") return {FusionMode::kAttention, FingerprintInit::kRandom, WeightCoupling::kIndependent};
  if (name == "dfin-sameinit")
    return {FusionMode::kAdditive, FingerprintInit::kSameAsMain, WeightCoupling::kIndependent};
  if (name == "dfin-sharedenc")
    return {FusionMode::kAdditive, FingerprintInit::kSameAsMain, WeightCoupling::kShared};
  Fail(ErrorKind::kInvalidConfig, "unknown variant '" + name +
                                      "' (baseline, dfin, dfin-att, dfin-sameinit, dfin-sharedenc, dfin-opt)");
}

void ModelConfig::Validate() const {
  analysis.Validate();
  auto need = [](bool ok, const std::string& what) {
    if (!ok) Fail(ErrorKind::kInvalidConfig, what);
  };
  need(erb_bands >= 2 && erb_bands <= analysis.num_bins(), "erb_bands out of range");
  need(df_cutoff_hz > 0.0, "df_cutoff_hz must be positive");
  need(df_order >= 1, "df_order must be >= 1");
  need(conv_channels >= 1 && conv_kernel >= 1, "conv sizes must be positive");
  need(hidden >= 1 && decoder_hidden >= 1, "hidden sizes must be positive");
  need(attention_heads >= 1 && hidden % attention_heads == 0,
       "hidden width " + std::to_string(hidden) + " not divisible by " +
           std::to_string(attention_heads) + " attention heads");
}

nlohmann::json ToJson(const VariantConfig& v) {
  return {{"fusion", ToString(v.fusion)},
          {"fingerprint_init", ToString(v.fingerprint_init)},
          {"weight_coupling", ToString(v.weight_coupling)}};
}

VariantConfig VariantFromJson(const nlohmann::json& j) {
  VariantConfig v;
  v.fusion = ParseFusionMode(j.at("fusion").get<std::string>());
  const auto init = j.at("fingerprint_init").get<std::string>();
  if (init != "random" && init != "same-as-main") Fail(ErrorKind::kInvalidConfig, "bad fingerprint_init");
  v.fingerprint_init = init == "random" ? FingerprintInit::kRandom : FingerprintInit::kSameAsMain;
  const auto coup = j.at("weight_coupling").get<std::string>();
  if (coup != "independent" && coup != "shared") Fail(ErrorKind::kInvalidConfig, "bad weight_coupling");
  v.weight_coupling = coup == "independent" ? WeightCoupling::kIndependent : WeightCoupling::kShared;
  return v;
}

nlohmann::json ToJson(const ModelConfig& c) {
  return {{"fft_size", c.analysis.fft_size},
          {"hop_size", c.analysis.hop_size},
          {"sample_rate", c.analysis.sample_rate},
          {"erb_bands", c.erb_bands},
          {"df_cutoff_hz", c.df_cutoff_hz},
          {"df_order", c.df_order},
          {"conv_channels", c.conv_channels},
          {"conv_kernel", c.conv_kernel},
          {"hidden", c.hidden},
          {"decoder_hidden", c.decoder_hidden},
          {"attention_heads", c.attention_heads},
          {"variant", ToJson(c.variant)}};
}

ModelConfig ModelConfigFromJson(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.analysis.fft_size = j.value("fft_size", c.analysis.fft_size);
    c.analysis.hop_size = j.value("hop_size", c.analysis.hop_size);
    c.analysis.sample_rate = j.value("sample_rate", c.analysis.sample_rate);
    c.erb_bands = j.value("erb_bands", c.erb_bands);
    c.df_cutoff_hz = j.value("df_cutoff_hz", c.df_cutoff_hz);
    c.df_order = j.value("df_order", c.df_order);
    c.conv_channels = j.value("conv_channels", c.conv_channels);
    c.conv_kernel = j.value("conv_kernel", c.conv_kernel);
    c.hidden = j.value("hidden", c.hidden);
    c.decoder_hidden = j.value("decoder_hidden", c.decoder_hidden);
    c.attention_heads = j.value("attention_heads", c.attention_heads);
    if (j.contains("variant")) c.variant = VariantFromJson(j.at("variant"));
  } catch (const nlohmann::json::exception& e) {
    Fail(ErrorKind::kInvalidConfig, std::string("model config: ") + e.what());
  }
  c.Validate();
  return c;
}

std::uint64_t ConfigHash(const ModelConfig& c) {
  const std::string text = ToJson(c).dump();
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string HashHex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dfinger
