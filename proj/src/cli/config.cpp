#include "dfinger/cli/config.hpp"

#include <fstream>
#include <sstream>

namespace dfinger {

using nlohmann::json;

json DefaultConfig() {
  const CorpusConfig c;
  json model = ToJson(ModelConfig{});
  model.erase("variant");
  return {
      {"seed", 0},
      {"threads", 1},
      {"corpus",
       {{"sample_rate", c.sample_rate},
        {"n_train_speech", c.n_train_speech},
        {"n_eval_speech", c.n_eval_speech},
        {"speech_duration_s", c.speech_duration_s},
        {"n_noise_profiles", c.n_noise_profiles},
        {"train_files_per_profile", c.train_files_per_profile},
        {"eval_files_per_profile", c.eval_files_per_profile},
        {"noise_duration_s", c.noise_duration_s},
        {"n_train_records", c.n_train_records},
        {"n_eval_records", c.n_eval_records},
        {"train_snr_min_db", c.train_snr_min_db},
        {"train_snr_max_db", c.train_snr_max_db},
        {"eval_snr_min_db", c.eval_snr_min_db},
        {"eval_snr_max_db", c.eval_snr_max_db},
        {"eval_mix_start_min_s", c.eval_mix_start_min_s}}},
      {"model", model},
      {"train",
       {{"pretrain_epochs", 4},
        {"epochs", 3},
        {"samples_per_epoch", 0},
        {"batch", 8},
        {"lr", 1e-3},
        {"finetune_lr", 5e-4},
        {"fingerprint_prob", nullptr},
        {"fingerprint_len_s", 1.0},
        {"warmup_frac", 0.03},
        {"clip_norm", 10.0},
        {"loss", {{"compression", 0.6}, {"lambda_mag", 1.0}, {"lambda_complex", 1.0}}}}},
      {"eval",
       {{"snr_list", json::array()},
        {"offsets_s", {0.0}},
        {"fingerprint_len_s", 1.0},
        {"with_stoi", true},
        {"conditions", {"fp", "no-fp"}},
        {"aggregate", {"category", "snr", "model", "condition"}}}},
      {"staleness", {{"offsets_s", {0.0, 3.0, 10.0, 30.0, 60.0, 120.0}}, {"max_age_s", 120.0}, {"refresh_interval_s", 60.0}}},
      {"service", {{"addr", "127.0.0.1:7462"}, {"timeout_ms", 2000}}},
      {"bench", {{"seconds", 60.0}}},
  };
}

namespace {

bool SameKind(const json& def, const json& v) {
  if (def.is_null()) return v.is_null() || v.is_number();
  if (def.is_number()) return v.is_number();
  if (def.is_array()) return v.is_array();
  return def.type() == v.type();
}

void MergeInto(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) Fail(ErrorKind::kInvalidConfig, "config section " + where + " must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!base.contains(key)) Fail(ErrorKind::kInvalidConfig, "unknown config key " + path);
    json& slot = base[key];
    if (slot.is_object()) {
      MergeInto(slot, value, path);
    } else if (!SameKind(slot, value)) {
      Fail(ErrorKind::kInvalidConfig, "config key " + path + " expects " + std::string(slot.type_name()) +
                                          ", got " + value.type_name());
    } else {
      slot = value;
    }
  }
}

template <typename T>
T Get(const json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    Fail(ErrorKind::kInvalidConfig, std::string("config ") + section + "." + key + ": " + e.what());
  }
}

}  // namespace

json MergeConfig(const json& base, const json& patch) {
  json out = base;
  MergeInto(out, patch, "");
  return out;
}

json LoadConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) Fail(ErrorKind::kIo, "cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  json patch;
  try {
    patch = json::parse(ss.str(), nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    Fail(ErrorKind::kInvalidConfig, "config " + path + ": " + e.what());
  }
  return MergeConfig(DefaultConfig(), patch);
}

CorpusConfig CorpusConfigFrom(const json& cfg) {
  CorpusConfig c;
  c.sample_rate = Get<int>(cfg, "corpus", "sample_rate");
  c.n_train_speech = Get<int>(cfg, "corpus", "n_train_speech");
  c.n_eval_speech = Get<int>(cfg, "corpus", "n_eval_speech");
  c.speech_duration_s = Get<double>(cfg, "corpus", "speech_duration_s");
  c.n_noise_profiles = Get<int>(cfg, "corpus", "n_noise_profiles");
  c.train_files_per_profile = Get<int>(cfg, "corpus", "train_files_per_profile");
  c.eval_files_per_profile = Get<int>(cfg, "corpus", "eval_files_per_profile");
  c.noise_duration_s = Get<double>(cfg, "corpus", "noise_duration_s");
  c.n_train_records = Get<int>(cfg, "corpus", "n_train_records");
  c.n_eval_records = Get<int>(cfg, "corpus", "n_eval_records");
  c.train_snr_min_db = Get<double>(cfg, "corpus", "train_snr_min_db");
  c.train_snr_max_db = Get<double>(cfg, "corpus", "train_snr_max_db");
  c.eval_snr_min_db = Get<double>(cfg, "corpus", "eval_snr_min_db");
  c.eval_snr_max_db = Get<double>(cfg, "corpus", "eval_snr_max_db");
  c.eval_mix_start_min_s = Get<double>(cfg, "corpus", "eval_mix_start_min_s");
  c.seed = cfg.at("seed").get<std::uint64_t>();
  c.Validate();
  return c;
}

ModelConfig ModelConfigFrom(const json& cfg) {
  json m = cfg.at("model");
  m["variant"] = ToJson(VariantConfig{});
  ModelConfig mc = ModelConfigFromJson(m);
  mc.Validate();
  return mc;
}

namespace {

TrainConfig CommonTrain(const json& cfg) {
  TrainConfig t;
  t.samples_per_epoch = Get<std::size_t>(cfg, "train", "samples_per_epoch");
  t.batch = Get<std::size_t>(cfg, "train", "batch");
  t.warmup_frac = Get<double>(cfg, "train", "warmup_frac");
  t.clip_norm = Get<double>(cfg, "train", "clip_norm");
  const json& loss = cfg.at("train").at("loss");
  t.loss.compression = loss.at("compression").get<double>();
  t.loss.lambda_mag = loss.at("lambda_mag").get<double>();
  t.loss.lambda_complex = loss.at("lambda_complex").get<double>();
  t.seed = cfg.at("seed").get<std::uint64_t>();
  return t;
}

}  // namespace

TrainConfig PretrainConfigFrom(const json& cfg) {
  TrainConfig t = CommonTrain(cfg);
  t.epochs = Get<int>(cfg, "train", "pretrain_epochs");
  t.lr = Get<double>(cfg, "train", "lr");
  t.fingerprint_prob = 0.0;
  t.Validate();
  return t;
}

TrainConfig TrainConfigFrom(const json& cfg, const std::string& variant) {
  const TrainConfig preset = TrainConfigForVariant(variant, Get<int>(cfg, "train", "epochs"));
  TrainConfig t = CommonTrain(cfg);
  t.variant = preset.variant;
  t.epochs = preset.epochs;
  t.fingerprint_prob = preset.fingerprint_prob;
  const json& p = cfg.at("train").at("fingerprint_prob");
  if (!p.is_null() && t.variant.has_fingerprint_branch()) t.fingerprint_prob = p.get<double>();
  t.lr = Get<double>(cfg, "train", "finetune_lr");
  // Fine-tuning runs draw their own batches and coins.
  t.seed = t.seed * 1000003u + 17u;
  t.Validate();
  return t;
}

EvalSetOptions EvalOptionsFrom(const json& cfg) {
  EvalSetOptions o;
  o.snr_list = Get<std::vector<double>>(cfg, "eval", "snr_list");
  o.offsets_s = Get<std::vector<double>>(cfg, "eval", "offsets_s");
  o.fingerprint_len_s = Get<double>(cfg, "eval", "fingerprint_len_s");
  o.seed = cfg.at("seed").get<std::uint64_t>();
  if (o.offsets_s.empty()) Fail(ErrorKind::kInvalidConfig, "eval.offsets_s must not be empty");
  return o;
}

service::StalenessPolicy StalenessPolicyFrom(const json& cfg) {
  service::StalenessPolicy p;
  p.max_age_s = Get<double>(cfg, "staleness", "max_age_s");
  p.refresh_interval_s = Get<double>(cfg, "staleness", "refresh_interval_s");
  p.Validate();
  return p;
}

int ExitCodeFor(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidConfig:
    case ErrorKind::kVersionMismatch:
    case ErrorKind::kHashMismatch:
      return 2;
    case ErrorKind::kNumeric:
      return 4;
    default:
      return 3;
  }
}

}  // namespace dfinger
