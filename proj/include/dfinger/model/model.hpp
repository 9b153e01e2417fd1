#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dfinger/dsp/audio.hpp"
#include "dfinger/dsp/erb.hpp"
#include "dfinger/dsp/features.hpp"
#include "dfinger/model/config.hpp"
#include "dfinger/model/spectral.hpp"
#include "dfinger/nn/checkpoint.hpp"
#include "dfinger/nn/ops.hpp"

namespace dfinger {

// Parameters plus the derived analysis objects for one model instance.
// Parameter names: enc.* (main encoder), fenc.* (independent fingerprint
// encoder), fproj.* (fingerprint projection), att.* / ffn.* (attention
// fusion), dec.* (decoders).
class Model {
 public:
  // Fresh random initialisation of every parameter the variant needs.
  static Model Create(const ModelConfig& cfg, std::uint64_t seed);
  // Encoder and decoder weights copied from `base`; the fingerprint branch is
  // added for `variant` (random, or a copy of the main encoder). The
  // projection (Additive) or output layer (Attention) starts at zero, so the
  // result initially matches `base` with or without a fingerprint.
  static Model FromPretrained(const Model& base, const VariantConfig& variant, std::uint64_t seed);
  // Throws kInvalidConfig if the checkpoint's parameters do not match its
  // recorded configuration.
  static Model FromCheckpoint(const nn::Checkpoint& ckpt);

  nn::Checkpoint ToCheckpoint(std::int64_t train_steps = 0) const;

  const ModelConfig& config() const { return cfg_; }
  const VariantConfig& variant() const { return cfg_.variant; }
  const ErbFilterbank& filterbank() const { return fb_; }
  std::size_t num_df_bins() const { return df_bins_; }
  std::size_t num_bins() const { return static_cast<std::size_t>(cfg_.analysis.num_bins()); }
  std::size_t hidden() const { return static_cast<std::size_t>(cfg_.hidden); }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // Prefix of the encoder that processes fingerprints ("enc." when shared).
  std::string fingerprint_encoder_prefix() const;
  // Names that only the fingerprint path touches.
  std::vector<std::string> FingerprintBranchNames() const;
  std::uint64_t config_hash() const { return ConfigHash(cfg_); }

  // Throws kInvalidConfig if `mode` cannot run on this model: Bypass always
  // can; Additive/Attention only on a model trained for that mode.
  void CheckFusionMode(FusionMode mode) const;

 private:
  Model(const ModelConfig& cfg, nn::ParamStore params);
  static void AddEncoder(nn::ParamStore& store, const ModelConfig& cfg, std::size_t df_bins,
                         const std::string& prefix);
  static void AddFingerprintBranch(nn::ParamStore& store, const ModelConfig& cfg, std::size_t df_bins);

  ModelConfig cfg_;
  ErbFilterbank fb_;
  std::size_t df_bins_ = 0;
  nn::ParamStore params_;
};

// Features and spectrum of one utterance, ready for the network.
struct PreparedInput {
  ComplexSpectrogram spec;
  FeaturePair features;
};

PreparedInput Prepare(const Model& model, const AudioBuffer& audio);

// [B, T, bands] and [B, T, 2 * df_bins] (re, im interleaved) tensors.
nn::Tensor StackErbFeatures(const std::vector<const FeaturePair*>& feats);
nn::Tensor StackDfFeatures(const std::vector<const FeaturePair*>& feats);

// Graph construction on a tape. `bind` maps a parameter name to a Var
// (a trainable leaf or a constant).
class Network {
 public:
  using Binder = std::function<nn::Var(const std::string&)>;

  Network(const Model& model, nn::Tape& tape, Binder bind);
  // Binds parameters as trainable leaves (Tape::Param).
  static Network Trainable(const Model& model, nn::Tape& tape);
  // Binds parameters as constants; no backward closures are recorded.
  static Network Frozen(const Model& model, nn::Tape& tape);

  // erb: [B, T, bands], df: [B, T, 2 * df_bins] -> [B, T, H].
  nn::Var Encode(const std::string& prefix, nn::Var erb, nn::Var df);
  nn::Var EncodeMain(nn::Var erb, nn::Var df) { return Encode("enc.", erb, df); }
  // Fingerprint encoder followed by the width-aligning projection.
  nn::Var EncodeFingerprint(nn::Var erb, nn::Var df);
  // fing: [B, Tf, H] or absent. Additive adds the time mean of fing to every
  // frame; Attention lets main frames attend over fing, then a linear layer
  // and a residual add; Bypass returns main unchanged.
  nn::Var Fuse(nn::Var main, std::optional<nn::Var> fing, FusionMode mode);
  // Additive fusion with a precomputed [B, H] summary.
  nn::Var FuseSummary(nn::Var main, nn::Var summary);
  nn::Var ErbGains(nn::Var e);  // [B, T, bands] in [0, 1]
  nn::Var DfCoefs(nn::Var e);   // [B, T, df_bins * order * 2]
  // Deep filter on the noisy spectrum, then ERB gains.
  nn::Var ApplyMasks(nn::Var noisy_spec, nn::Var gains, nn::Var coefs);

  // Full forward from prepared tensors to the enhanced spectrum [B, T, F, 2].
  nn::Var Forward(nn::Var noisy_spec, nn::Var erb, nn::Var df, std::optional<nn::Var> fp_erb,
                  std::optional<nn::Var> fp_df, FusionMode mode);

  nn::Tape& tape() { return tape_; }

 private:
  nn::Var P(const std::string& name) { return bind_(name); }
  nn::Var Conv(const std::string& name, nn::Var x);
  nn::Var Dense(const std::string& name, nn::Var x);

  const Model& model_;
  nn::Tape& tape_;
  Binder bind_;
};

// Projected fingerprint embedding [Tf, H] for one fingerprint recording.
// Throws kEmptyFingerprint when the recording is empty.
nn::Tensor FingerprintEmbedding(const Model& model, const AudioBuffer& fingerprint);
// Time mean of an embedding sequence [T, H] (or [1, T, H]).
std::vector<double> SummarizeFingerprint(const nn::Tensor& embedding);

// Main-encoder embedding [T, H] for one utterance.
nn::Tensor MainEmbedding(const Model& model, const FeaturePair& feats);

struct EnhanceOptions {
  // Fusion to run; defaults to the model's own mode.
  std::optional<FusionMode> fusion;
};

// Whole-utterance enhancement. The fingerprint may be absent only under
// Bypass. Output has the input's length and sample rate.
AudioBuffer Enhance(const Model& model, const AudioBuffer& x, const AudioBuffer* fingerprint,
                    const EnhanceOptions& opts = {});
// As Enhance, with an already computed fingerprint embedding [Tf, H].
AudioBuffer EnhanceWithEmbedding(const Model& model, const AudioBuffer& x,
                                 const nn::Tensor* fingerprint_embedding, const EnhanceOptions& opts = {});

}  // namespace dfinger
