#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "dfinger/data/corpus.hpp"
#include "dfinger/data/dataset.hpp"
#include "dfinger/error.hpp"
#include "dfinger/model/config.hpp"
#include "dfinger/service/fpservice.hpp"
#include "dfinger/train/trainer.hpp"

namespace dfinger {

// Every recognised key with its default value.
nlohmann::json DefaultConfig();

// Reads a JSON file that may contain // and /* */ comments and merges it over
// DefaultConfig(). Unknown keys and mistyped values throw kInvalidConfig;
// an unreadable file throws kIo.
nlohmann::json LoadConfig(const std::string& path);
// Merges `patch` over `base` with the same key and type checks.
nlohmann::json MergeConfig(const nlohmann::json& base, const nlohmann::json& patch);

CorpusConfig CorpusConfigFrom(const nlohmann::json& cfg);
ModelConfig ModelConfigFrom(const nlohmann::json& cfg);
// Fine-tuning settings for `variant` (dfin-opt doubles the epochs and uses
// p = 0.5 unless train.fingerprint_prob is set).
TrainConfig TrainConfigFrom(const nlohmann::json& cfg, const std::string& variant);
// Baseline pretraining settings.
TrainConfig PretrainConfigFrom(const nlohmann::json& cfg);
EvalSetOptions EvalOptionsFrom(const nlohmann::json& cfg);
service::StalenessPolicy StalenessPolicyFrom(const nlohmann::json& cfg);

// Process exit code for a library error: 2 configuration, 3 data, 4 numeric.
int ExitCodeFor(ErrorKind kind);

}  // namespace dfinger
