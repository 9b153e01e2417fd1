#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dfinger/data/dataset.hpp"
#include "dfinger/model/model.hpp"
#include "dfinger/nn/adam.hpp"
#include "dfinger/nn/checkpoint.hpp"

namespace dfinger {

struct LossConfig {
  double compression = 0.6;
  double lambda_mag = 1.0;
  double lambda_complex = 1.0;
  double eps = 1e-12;
};

struct LossBreakdown {
  double total = 0.0;
  double magnitude = 0.0;
  double complex = 0.0;
};

// Compressed spectral loss. With a = max(|X|, eps): magnitude term =
// mean (a_E^c - a_S^c)^2, complex term = mean |E a_E^(c-1) - S a_S^(c-1)|^2,
// means over all (batch, frame, bin) cells. enhanced is a [B, T, F, 2]
// Var; clean is a constant of the same shape (kInvalidShape otherwise).
nn::Var SpectralLoss(nn::Tape& tape, nn::Var enhanced, const nn::Tensor& clean, const LossConfig& cfg,
                     LossBreakdown* breakdown = nullptr);

struct TrainConfig {
  int epochs = 30;
  std::size_t samples_per_epoch = 0;  // 0: the whole set
  std::size_t batch = 8;
  double lr = 1e-3;
  double fingerprint_prob = 1.0;
  double warmup_frac = 0.03;
  double clip_norm = 10.0;
  bool freeze_main = false;  // train only the fingerprint branch
  VariantConfig variant;
  std::uint64_t seed = 0;
  LossConfig loss;
  std::string log_path;         // JSON lines per step; empty disables
  std::string checkpoint_path;  // last-good checkpoint on divergence

  void Validate() const;
};

// Paper-scale presets scaled to the desk corpus: DFiN-Opt gets p = 0.5 and
// twice the epochs.
TrainConfig TrainConfigForVariant(const std::string& variant_name, int base_epochs);

// Training samples addressed by (index, epoch).
struct TrainData {
  std::size_t size = 0;
  std::function<SampleTriple(std::size_t index, std::size_t epoch)> get;
  std::function<std::vector<std::size_t>(std::size_t epoch)> order;
};

TrainData FromTrainingSet(const TrainingSet& set);
// A fixed list, presented in order every epoch.
TrainData FromSamples(std::vector<SampleTriple> samples);

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double mean_magnitude = 0.0;
  double mean_complex = 0.0;
  std::size_t batches = 0;
  std::size_t fp_active_batches = 0;
};

struct TrainResult {
  nn::Checkpoint checkpoint;
  std::vector<EpochStats> epochs;
  std::vector<double> step_losses;
  std::int64_t steps = 0;
  double fp_active_fraction = 0.0;
};

// Trains a fresh Bypass model. Throws kInvalidConfig when cfg asks for a
// fingerprint path (variant with a fingerprint branch or p > 0 on a model
// that has none).
TrainResult PretrainBaseline(const ModelConfig& model_cfg, const TrainData& data, const TrainConfig& cfg);

// Fine-tunes from `init`. A Bypass checkpoint is extended with the
// fingerprint branch of cfg.variant; any other checkpoint must already carry
// cfg.variant (kInvalidConfig otherwise). Each batch runs the configured
// fusion with probability fingerprint_prob, else Bypass.
TrainResult TrainVariant(const nn::Checkpoint& init, const TrainData& data, const TrainConfig& cfg);

// One forward/backward pass on a batch without updating; for tests.
struct BatchGrad {
  LossBreakdown loss;
  nn::GradMap grads;
};
BatchGrad ComputeBatchGrad(const Model& model, const std::vector<SampleTriple>& batch, bool fp_active,
                           const LossConfig& loss_cfg);

}  // namespace dfinger
