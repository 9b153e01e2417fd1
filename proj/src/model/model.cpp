#include "dfinger/model/model.hpp"

#include <map>
#include <memory>

#include "dfinger/error.hpp"

namespace dfinger {
namespace {

using nn::Shape;
using nn::Tensor;
using nn::Var;

bool IsFingerprintBranch(const std::string& name) {
  for (const char* p : {"fenc.", "fproj.", "att.", "ffn."}) {
    if (name.rfind(p, 0) == 0) return true;
  }
  return false;
}

}  // namespace

Model::Model(const ModelConfig& cfg, nn::ParamStore params)
    : cfg_(cfg),
      fb_(BuildErbMatrix(cfg.analysis, static_cast<std::size_t>(cfg.erb_bands))),
      df_bins_(DfBinCount(cfg.analysis, cfg.df_cutoff_hz)),
      params_(std::move(params)) {}

void Model::AddEncoder(nn::ParamStore& s, const ModelConfig& cfg, std::size_t df_bins,
                       const std::string& prefix) {
  const std::size_t k = static_cast<std::size_t>(cfg.conv_kernel);
  const std::size_t c = static_cast<std::size_t>(cfg.conv_channels);
  const std::size_t h = static_cast<std::size_t>(cfg.hidden);
  const std::size_t bands = static_cast<std::size_t>(cfg.erb_bands);
  auto conv = [&](const std::string& name, std::size_t in) {
    s.AddXavier(prefix + name + ".w", {k, in, c});
    s.AddConstant(prefix + name + ".b", {c}, 0.0);
  };
  conv("erb_conv1", bands);
  conv("erb_conv2", c);
  conv("df_conv1", 2 * df_bins);
  conv("df_conv2", c);
  s.AddXavier(prefix + "bottleneck.w", {2 * c, h});
  s.AddConstant(prefix + "bottleneck.b", {h}, 0.0);
  s.AddXavier(prefix + "gru.wx", {h, 3 * h});
  s.AddXavier(prefix + "gru.wh", {h, 3 * h});
  s.AddConstant(prefix + "gru.bx", {3 * h}, 0.0);
  s.AddConstant(prefix + "gru.bh", {3 * h}, 0.0);
}

void Model::AddFingerprintBranch(nn::ParamStore& s, const ModelConfig& cfg, std::size_t df_bins) {
  const VariantConfig& v = cfg.variant;
  if (!v.has_fingerprint_branch()) return;
  const std::size_t h = static_cast<std::size_t>(cfg.hidden);
  if (v.weight_coupling == WeightCoupling::kIndependent) {
    if (v.fingerprint_init == FingerprintInit::kRandom) {
      AddEncoder(s, cfg, df_bins, "fenc.");
    } else {
      for (const auto& name : s.NamesWithPrefix("enc.")) s.Add("f" + name, s.at(name));
    }
  }
  Tensor eye({h, h});
  for (std::size_t i = 0; i < h; ++i) eye[i * h + i] = 1.0;
  s.Add("fproj.w", eye);
  s.AddConstant("fproj.b", {h}, 0.0);
  if (v.fusion == FusionMode::kAttention) {
    for (const char* m : {"q", "k", "v", "o"}) {
      s.AddXavier(std::string("att.w") + m, {h, h});
      s.AddConstant(std::string("att.b") + m, {h}, 0.0);
    }
    s.AddXavier("ffn.w", {h, h});
    s.AddConstant("ffn.b", {h}, 0.0);
  }
}

Model Model::Create(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.Validate();
  const std::size_t df_bins = DfBinCount(cfg.analysis, cfg.df_cutoff_hz);
  const std::size_t h = static_cast<std::size_t>(cfg.hidden);
  const std::size_t dh = static_cast<std::size_t>(cfg.decoder_hidden);
  const std::size_t bands = static_cast<std::size_t>(cfg.erb_bands);
  const std::size_t order = static_cast<std::size_t>(cfg.df_order);
  nn::ParamStore s(seed);
  AddEncoder(s, cfg, df_bins, "enc.");
  s.AddXavier("dec.erb_fc1.w", {h, dh});
  s.AddConstant("dec.erb_fc1.b", {dh}, 0.0);
  s.AddXavier("dec.erb_out.w", {dh, bands});
  s.AddConstant("dec.erb_out.b", {bands}, 1.0);
  s.AddXavier("dec.df_fc1.w", {h, dh});
  s.AddConstant("dec.df_fc1.b", {dh}, 0.0);
  s.AddXavier("dec.df_out.w", {dh, df_bins * order * 2}, 0.1);
  // Start as an identity filter: tap 0 = 1 + 0i.
  Tensor& b = s.AddConstant("dec.df_out.b", {df_bins * order * 2}, 0.0);
  for (std::size_t f = 0; f < df_bins; ++f) b[f * order * 2] = 1.0;
  AddFingerprintBranch(s, cfg, df_bins);
  return Model(cfg, std::move(s));
}

Model Model::FromPretrained(const Model& base, const VariantConfig& variant, std::uint64_t seed) {
  ModelConfig cfg = base.cfg_;
  cfg.variant = variant;
  nn::ParamStore s(seed);
  for (const auto& [name, t] : base.params_.params()) {
    if (!IsFingerprintBranch(name)) s.Add(name, t);
  }
  AddFingerprintBranch(s, cfg, base.df_bins_);
  // Zero the layer that feeds the fused signal so the extended model starts
  // out computing exactly what the pretrained one did.
  if (variant.fusion == FusionMode::kAdditive) s.at("fproj.w").Fill(0.0);
  if (variant.fusion == FusionMode::kAttention) s.at("ffn.w").Fill(0.0);
  return Model(cfg, std::move(s));
}

Model Model::FromCheckpoint(const nn::Checkpoint& ckpt) {
  if (!ckpt.meta.contains("model_config")) {
    Fail(ErrorKind::kInvalidConfig, "checkpoint carries no model configuration");
  }
  const ModelConfig cfg = ModelConfigFromJson(ckpt.meta.at("model_config"));
  const Model reference = Create(cfg, 0);
  const auto& want = reference.params_.params();
  const auto& have = ckpt.params.params();
  for (const auto& [name, t] : want) {
    auto it = have.find(name);
    if (it == have.end()) Fail(ErrorKind::kInvalidConfig, "checkpoint lacks parameter " + name);
    if (it->second.shape() != t.shape()) {
      Fail(ErrorKind::kInvalidConfig, "parameter " + name + " has shape " +
                                          nn::ShapeString(it->second.shape()) + ", configuration expects " +
                                          nn::ShapeString(t.shape()));
    }
  }
  if (have.size() != want.size()) {
    Fail(ErrorKind::kInvalidConfig, "checkpoint has " + std::to_string(have.size()) +
                                        " parameters, configuration expects " + std::to_string(want.size()));
  }
  return Model(cfg, ckpt.params);
}

nn::Checkpoint Model::ToCheckpoint(std::int64_t train_steps) const {
  nn::Checkpoint c{params_, {}};
  c.meta = {{"model_config", ToJson(cfg_)},
            {"variant", ToJson(cfg_.variant)},
            {"config_hash", HashHex(config_hash())},
            {"train_steps", train_steps}};
  return c;
}

std::string Model::fingerprint_encoder_prefix() const {
  return cfg_.variant.weight_coupling == WeightCoupling::kShared ? "enc." : "fenc.";
}

std::vector<std::string> Model::FingerprintBranchNames() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : params_.params())
    if (IsFingerprintBranch(name)) out.push_back(name);
  return out;
}

void Model::CheckFusionMode(FusionMode mode) const {
  if (mode == FusionMode::kBypass || mode == cfg_.variant.fusion) return;
  Fail(ErrorKind::kInvalidConfig, "model was built for " + ToString(cfg_.variant.fusion) +
                                      " fusion, cannot run " + ToString(mode));
}

PreparedInput Prepare(const Model& model, const AudioBuffer& audio) {
  PreparedInput p;
  p.spec = StftAnalyze(audio, model.config().analysis);
  p.features =
      ExtractFeatures(p.spec, model.filterbank(), model.config().analysis, model.config().df_cutoff_hz).features;
  return p;
}

Tensor StackErbFeatures(const std::vector<const FeaturePair*>& feats) {
  if (feats.empty()) Fail(ErrorKind::kInvalidShape, "no features to stack");
  const std::size_t t = feats[0]->num_frames, nb = feats[0]->num_bands;
  Tensor out({feats.size(), t, nb});
  for (std::size_t b = 0; b < feats.size(); ++b) {
    if (feats[b]->num_frames != t || feats[b]->num_bands != nb) {
      Fail(ErrorKind::kInvalidShape, "feature batch with mixed frame counts");
    }
    std::copy(feats[b]->erb_feat.begin(), feats[b]->erb_feat.end(), out.data() + b * t * nb);
  }
  return out;
}

Tensor StackDfFeatures(const std::vector<const FeaturePair*>& feats) {
  if (feats.empty()) Fail(ErrorKind::kInvalidShape, "no features to stack");
  const std::size_t t = feats[0]->num_frames, nd = feats[0]->num_df_bins;
  Tensor out({feats.size(), t, 2 * nd});
  for (std::size_t b = 0; b < feats.size(); ++b) {
    if (feats[b]->num_frames != t || feats[b]->num_df_bins != nd) {
      Fail(ErrorKind::kInvalidShape, "feature batch with mixed frame counts");
    }
    double* dst = out.data() + b * t * 2 * nd;
    for (std::size_t i = 0; i < t * nd; ++i) {
      dst[2 * i] = feats[b]->df_feat[i].real();
      dst[2 * i + 1] = feats[b]->df_feat[i].imag();
    }
  }
  return out;
}

Network::Network(const Model& model, nn::Tape& tape, Binder bind)
    : model_(model), tape_(tape), bind_(std::move(bind)) {}

Network Network::Trainable(const Model& model, nn::Tape& tape) {
  return Network(model, tape, [&model, &tape](const std::string& name) { return tape.Param(model.params(), name); });
}

Network Network::Frozen(const Model& model, nn::Tape& tape) {
  auto cache = std::make_shared<std::map<std::string, Var>>();
  return Network(model, tape, [&model, &tape, cache](const std::string& name) {
    auto it = cache->find(name);
    if (it != cache->end()) return it->second;
    Var v = tape.Constant(model.params().at(name));
    cache->emplace(name, v);
    return v;
  });
}

Var Network::Conv(const std::string& name, Var x) {
  return nn::Relu(tape_, nn::CausalConv1d(tape_, x, P(name + ".w"), P(name + ".b")));
}

Var Network::Dense(const std::string& name, Var x) {
  return nn::Linear(tape_, x, P(name + ".w"), P(name + ".b"));
}

Var Network::Encode(const std::string& prefix, Var erb, Var df) {
  const std::size_t bands = model_.filterbank().num_bands;
  const nn::Tensor& ev = tape_.value(erb);
  const nn::Tensor& dv = tape_.value(df);
  if (ev.rank() != 3 || ev.dim(2) != bands || dv.rank() != 3 || dv.dim(2) != 2 * model_.num_df_bins() ||
      dv.dim(1) != ev.dim(1) || dv.dim(0) != ev.dim(0)) {
    Fail(ErrorKind::kInvalidConfig, "encoder input widths " + nn::ShapeString(ev.shape()) + " / " +
                                        nn::ShapeString(dv.shape()) + " do not match the model (" +
                                        std::to_string(bands) + " bands, " +
                                        std::to_string(model_.num_df_bins()) + " df bins)");
  }
  Var e = Conv(prefix + "erb_conv2", Conv(prefix + "erb_conv1", erb));
  Var d = Conv(prefix + "df_conv2", Conv(prefix + "df_conv1", df));
  Var z = nn::Relu(tape_, Dense(prefix + "bottleneck", nn::ConcatLast(tape_, {e, d})));
  nn::GruParams g{P(prefix + "gru.wx"), P(prefix + "gru.wh"), P(prefix + "gru.bx"), P(prefix + "gru.bh")};
  return nn::GruSequence(tape_, z, g);
}

Var Network::EncodeFingerprint(Var erb, Var df) {
  if (tape_.value(erb).rank() == 3 && tape_.value(erb).dim(1) == 0) {
    Fail(ErrorKind::kEmptyFingerprint, "fingerprint has no frames");
  }
  return Dense("fproj", Encode(model_.fingerprint_encoder_prefix(), erb, df));
}

Var Network::FuseSummary(Var main, Var summary) { return nn::AddOverTime(tape_, main, summary); }

Var Network::Fuse(Var main, std::optional<Var> fing, FusionMode mode) {
  if (mode == FusionMode::kBypass) return main;
  if (!fing) Fail(ErrorKind::kEmptyFingerprint, ToString(mode) + " fusion needs a fingerprint");
  if (mode == FusionMode::kAdditive) return FuseSummary(main, nn::MeanOverTime(tape_, *fing));
  if (tape_.value(*fing).dim(1) == 0) Fail(ErrorKind::kEmptyFingerprint, "fingerprint has no frames");
  nn::AttentionParams a{P("att.wq"), P("att.bq"), P("att.wk"), P("att.bk"),
                        P("att.wv"), P("att.bv"), P("att.wo"), P("att.bo")};
  Var att = nn::MultiheadAttention(tape_, main, *fing, *fing,
                                   static_cast<std::size_t>(model_.config().attention_heads), a);
  return nn::Add(tape_, main, Dense("ffn", att));
}

Var Network::ErbGains(Var e) {
  return nn::Sigmoid(tape_, Dense("dec.erb_out", nn::Relu(tape_, Dense("dec.erb_fc1", e))));
}

Var Network::DfCoefs(Var e) {
  return Dense("dec.df_out", nn::Relu(tape_, Dense("dec.df_fc1", e)));
}

Var Network::ApplyMasks(Var noisy_spec, Var gains, Var coefs) {
  Var filtered = DeepFilterOp(tape_, noisy_spec, coefs, model_.num_df_bins(),
                              static_cast<std::size_t>(model_.config().df_order));
  return GainsOp(tape_, filtered, gains, model_.filterbank());
}

Var Network::Forward(Var noisy_spec, Var erb, Var df, std::optional<Var> fp_erb, std::optional<Var> fp_df,
                     FusionMode mode) {
  Var main = EncodeMain(erb, df);
  std::optional<Var> fing;
  if (mode != FusionMode::kBypass && fp_erb && fp_df) fing = EncodeFingerprint(*fp_erb, *fp_df);
  Var e = Fuse(main, fing, mode);
  return ApplyMasks(noisy_spec, ErbGains(e), DfCoefs(e));
}

Tensor FingerprintEmbedding(const Model& model, const AudioBuffer& fingerprint) {
  if (!model.variant().has_fingerprint_branch()) {
    Fail(ErrorKind::kInvalidConfig, "model has no fingerprint encoder");
  }
  if (fingerprint.empty()) Fail(ErrorKind::kEmptyFingerprint, "fingerprint recording is empty");
  const PreparedInput p = Prepare(model, fingerprint);
  nn::Tape tape;
  Network net = Network::Frozen(model, tape);
  Var e = net.EncodeFingerprint(tape.Constant(StackErbFeatures({&p.features})),
                                tape.Constant(StackDfFeatures({&p.features})));
  const Tensor& v = tape.value(e);
  return v.Reshaped({v.dim(1), v.dim(2)});
}

std::vector<double> SummarizeFingerprint(const Tensor& embedding) {
  if (embedding.rank() < 2 || embedding.leading() == 0 || embedding.empty()) {
    Fail(ErrorKind::kEmptyFingerprint, "cannot summarise an empty fingerprint embedding");
  }
  const std::size_t t = embedding.leading(), h = embedding.last_dim();
  std::vector<double> mean(h, 0.0);
  for (std::size_t k = 0; k < t; ++k)
    for (std::size_t i = 0; i < h; ++i) mean[i] += embedding[k * h + i];
  for (double& m : mean) m /= static_cast<double>(t);
  return mean;
}

Tensor MainEmbedding(const Model& model, const FeaturePair& feats) {
  nn::Tape tape;
  Network net = Network::Frozen(model, tape);
  Var e = net.EncodeMain(tape.Constant(StackErbFeatures({&feats})), tape.Constant(StackDfFeatures({&feats})));
  const Tensor& v = tape.value(e);
  return v.Reshaped({v.dim(1), v.dim(2)});
}

AudioBuffer Enhance(const Model& model, const AudioBuffer& x, const AudioBuffer* fingerprint,
                    const EnhanceOptions& opts) {
  const FusionMode mode = opts.fusion.value_or(model.variant().fusion);
  model.CheckFusionMode(mode);
  if (mode == FusionMode::kBypass) return EnhanceWithEmbedding(model, x, nullptr, opts);
  if (fingerprint == nullptr) Fail(ErrorKind::kEmptyFingerprint, ToString(mode) + " fusion needs a fingerprint");
  const Tensor emb = FingerprintEmbedding(model, *fingerprint);
  return EnhanceWithEmbedding(model, x, &emb, opts);
}

AudioBuffer EnhanceWithEmbedding(const Model& model, const AudioBuffer& x, const Tensor* fingerprint_embedding,
                                 const EnhanceOptions& opts) {
  const FusionMode mode = opts.fusion.value_or(model.variant().fusion);
  model.CheckFusionMode(mode);
  if (x.empty()) return AudioBuffer{{}, x.sample_rate};
  const PreparedInput p = Prepare(model, x);
  nn::Tape tape;
  Network net = Network::Frozen(model, tape);
  Var main = net.EncodeMain(tape.Constant(StackErbFeatures({&p.features})),
                            tape.Constant(StackDfFeatures({&p.features})));
  std::optional<Var> fing;
  if (mode != FusionMode::kBypass) {
    if (fingerprint_embedding == nullptr) {
      Fail(ErrorKind::kEmptyFingerprint, ToString(mode) + " fusion needs a fingerprint");
    }
    const Tensor& fe = *fingerprint_embedding;
    fing = tape.Constant(fe.Reshaped({1, fe.leading(), fe.last_dim()}));
  }
  Var e = net.Fuse(main, fing, mode);
  Var y = net.ApplyMasks(tape.Constant(SpectraToTensor({&p.spec})), net.ErbGains(e), net.DfCoefs(e));
  AudioBuffer out = IstftSynthesize(TensorToSpectrum(tape.value(y), 0), model.config().analysis);
  out.samples.resize(x.size());
  return out;
}

}  // namespace dfinger
