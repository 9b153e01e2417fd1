#include "dfinger/train/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <random>
#include <set>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "dfinger/error.hpp"

namespace dfinger {

using nn::Tape;
using nn::Tensor;
using nn::Var;

Var SpectralLoss(Tape& tape, Var enhanced, const Tensor& clean, const LossConfig& cfg, LossBreakdown* breakdown) {
  const Tensor& e = tape.value(enhanced);
  nn::RequireSameShape(e.shape(), clean.shape(), "spectral loss");
  if (e.rank() != 4 || e.dim(3) != 2) Fail(ErrorKind::kInvalidShape, "spectral loss expects [B, T, F, 2]");
  const std::size_t cells = e.size() / 2;
  if (cells == 0) Fail(ErrorKind::kInvalidShape, "spectral loss on an empty spectrum");
  const double c = cfg.compression, eps = cfg.eps;

  // Per-cell residuals, kept for the backward pass.
  auto dmag = std::make_shared<std::vector<double>>(cells);
  auto dre = std::make_shared<std::vector<double>>(cells);
  auto dim = std::make_shared<std::vector<double>>(cells);
  double mag_sum = 0.0, cplx_sum = 0.0;
  for (std::size_t i = 0; i < cells; ++i) {
    const double er = e[2 * i], ei = e[2 * i + 1];
    const double sr = clean[2 * i], si = clean[2 * i + 1];
    const double ae = std::max(std::hypot(er, ei), eps), as = std::max(std::hypot(sr, si), eps);
    const double pe = std::pow(ae, c - 1.0), ps = std::pow(as, c - 1.0);
    (*dmag)[i] = ae * pe - as * ps;
    (*dre)[i] = er * pe - sr * ps;
    (*dim)[i] = ei * pe - si * ps;
    mag_sum += (*dmag)[i] * (*dmag)[i];
    cplx_sum += (*dre)[i] * (*dre)[i] + (*dim)[i] * (*dim)[i];
  }
  const double n = static_cast<double>(cells);
  LossBreakdown lb;
  lb.magnitude = mag_sum / n;
  lb.complex = cplx_sum / n;
  lb.total = cfg.lambda_mag * lb.magnitude + cfg.lambda_complex * lb.complex;
  if (breakdown) *breakdown = lb;
  Tensor value({1}, lb.total);
  value.CheckFinite("spectral loss");

  return tape.Record("spectral_loss", std::move(value), {enhanced},
                     [dmag, dre, dim, cfg, n](Tape& t, std::size_t self) {
                       const double g = t.grad_of(self)[0];
                       const Var in = t.inputs(self)[0];
                       if (!t.requires_grad(in)) return;
                       const Tensor& x = t.value(in);
                       Tensor& gx = t.grad(in);
                       const double c = cfg.compression;
                       const double wm = g * cfg.lambda_mag * 2.0 / n, wc = g * cfg.lambda_complex * 2.0 / n;
                       for (std::size_t i = 0; i < dmag->size(); ++i) {
                         const double re = x[2 * i], im = x[2 * i + 1];
                         const double a = std::hypot(re, im);
                         if (a <= cfg.eps) {
                           // Clamped magnitude: only the linear part of the complex term moves.
                           const double s = std::pow(cfg.eps, c - 1.0);
                           gx[2 * i] += wc * (*dre)[i] * s;
                           gx[2 * i + 1] += wc * (*dim)[i] * s;
                           continue;
                         }
                         const double a_c2 = std::pow(a, c - 2.0);  // a^(c-2)
                         const double a_c1 = a_c2 * a;              // a^(c-1)
                         const double k = (c - 1.0) * a_c2 / a;     // (c-1) a^(c-3)
                         // d(a^c)/d(re, im) = c a^(c-2) (re, im)
                         double gre = wm * (*dmag)[i] * c * a_c2 * re;
                         double gim = wm * (*dmag)[i] * c * a_c2 * im;
                         // Jacobian of (re, im) a^(c-1).
                         const double j11 = a_c1 + k * re * re, j12 = k * re * im, j22 = a_c1 + k * im * im;
                         gre += wc * ((*dre)[i] * j11 + (*dim)[i] * j12);
                         gim += wc * ((*dre)[i] * j12 + (*dim)[i] * j22);
                         gx[2 * i] += gre;
                         gx[2 * i + 1] += gim;
                       }
                     });
}

void TrainConfig::Validate() const {
  if (epochs < 1) Fail(ErrorKind::kInvalidConfig, "epochs must be >= 1");
  if (batch < 1) Fail(ErrorKind::kInvalidConfig, "batch must be >= 1");
  if (!(fingerprint_prob >= 0.0 && fingerprint_prob <= 1.0))
    Fail(ErrorKind::kInvalidConfig, "fingerprint_prob must lie in [0, 1]");
  if (!(lr > 0.0)) Fail(ErrorKind::kInvalidConfig, "lr must be > 0");
  if (!(warmup_frac >= 0.0 && warmup_frac < 1.0)) Fail(ErrorKind::kInvalidConfig, "warmup_frac must lie in [0, 1)");
  if (!(loss.compression > 0.0 && loss.compression <= 1.0))
    Fail(ErrorKind::kInvalidConfig, "loss compression must lie in (0, 1]");
  if (loss.lambda_mag < 0.0 || loss.lambda_complex < 0.0) Fail(ErrorKind::kInvalidConfig, "loss weights must be >= 0");
}

TrainConfig TrainConfigForVariant(const std::string& variant_name, int base_epochs) {
  TrainConfig cfg;
  cfg.variant = VariantByName(variant_name);
  cfg.epochs = base_epochs;
  cfg.fingerprint_prob = cfg.variant.has_fingerprint_branch() ? 1.0 : 0.0;
  if (variant_name == "dfin-opt") {
    cfg.fingerprint_prob = 0.5;
    cfg.epochs = 2 * base_epochs;
  }
  return cfg;
}

TrainData FromTrainingSet(const TrainingSet& set) {
  TrainData d;
  d.size = set.size();
  d.get = [&set](std::size_t i, std::size_t e) { return set.Get(i, e); };
  d.order = [&set](std::size_t e) { return set.EpochOrder(e); };
  return d;
}

TrainData FromSamples(std::vector<SampleTriple> samples) {
  auto shared = std::make_shared<std::vector<SampleTriple>>(std::move(samples));
  TrainData d;
  d.size = shared->size();
  d.get = [shared](std::size_t i, std::size_t) { return shared->at(i); };
  d.order = [shared](std::size_t) {
    std::vector<std::size_t> o(shared->size());
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = i;
    return o;
  };
  return d;
}

namespace {

struct PreparedBatch {
  Tensor noisy, clean, erb, df, fp_erb, fp_df;
};

void RequireEqualLengths(const std::vector<SampleTriple>& batch) {
  for (const auto& s : batch) {
    if (s.mixture.size() != batch[0].mixture.size() || s.fingerprint.size() != batch[0].fingerprint.size()) {
      Fail(ErrorKind::kInvalidShape, "batch samples must share mixture and fingerprint lengths (" + s.id + ")");
    }
  }
}

PreparedBatch PrepareBatch(const Model& model, const std::vector<SampleTriple>& batch, bool with_fp) {
  RequireEqualLengths(batch);
  std::vector<PreparedInput> mix, fp;
  std::vector<ComplexSpectrogram> clean;
  mix.reserve(batch.size());
  for (const auto& s : batch) {
    mix.push_back(Prepare(model, s.mixture));
    clean.push_back(StftAnalyze(s.clean, model.config().analysis));
    if (with_fp) fp.push_back(Prepare(model, s.fingerprint));
  }
  std::vector<const ComplexSpectrogram*> ms, cs;
  std::vector<const FeaturePair*> mf, ff;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ms.push_back(&mix[i].spec);
    cs.push_back(&clean[i]);
    mf.push_back(&mix[i].features);
    if (with_fp) ff.push_back(&fp[i].features);
  }
  PreparedBatch p;
  p.noisy = SpectraToTensor(ms);
  p.clean = SpectraToTensor(cs);
  p.erb = StackErbFeatures(mf);
  p.df = StackDfFeatures(mf);
  if (with_fp) {
    p.fp_erb = StackErbFeatures(ff);
    p.fp_df = StackDfFeatures(ff);
  }
  return p;
}

BatchGrad RunBatch(const Model& model, const PreparedBatch& pb, bool fp_active, const LossConfig& loss_cfg) {
  Tape tape;
  Network net = Network::Trainable(model, tape);
  const FusionMode mode = fp_active ? model.variant().fusion : FusionMode::kBypass;
  std::optional<Var> fe, fd;
  if (fp_active) {
    fe = tape.Constant(pb.fp_erb);
    fd = tape.Constant(pb.fp_df);
  }
  const Var out =
      net.Forward(tape.Constant(pb.noisy), tape.Constant(pb.erb), tape.Constant(pb.df), fe, fd, mode);
  BatchGrad bg;
  const Var loss = SpectralLoss(tape, out, pb.clean, loss_cfg, &bg.loss);
  tape.Backward(loss);
  bg.grads = tape.ParamGrads();
  return bg;
}

bool AllGradsFinite(const nn::GradMap& g) {
  for (const auto& [name, t] : g)
    if (!t.AllFinite()) return false;
  return true;
}

TrainResult RunTraining(Model& model, std::int64_t prior_steps, const TrainData& data, const TrainConfig& cfg) {
  cfg.Validate();
  if (data.size == 0) Fail(ErrorKind::kInvalidConfig, "training data is empty");
  const bool fp_capable = model.variant().has_fingerprint_branch();
  const std::size_t per_epoch = cfg.samples_per_epoch ? std::min(cfg.samples_per_epoch, data.size) : data.size;
  const std::size_t batches_per_epoch = (per_epoch + cfg.batch - 1) / cfg.batch;
  const auto total_steps = static_cast<std::int64_t>(batches_per_epoch * static_cast<std::size_t>(cfg.epochs));
  const auto warmup = static_cast<std::int64_t>(std::ceil(cfg.warmup_frac * static_cast<double>(total_steps)));

  std::set<std::string> frozen;
  if (cfg.freeze_main) {
    const auto branch = model.FingerprintBranchNames();
    const std::set<std::string> keep(branch.begin(), branch.end());
    for (const auto& n : model.params().Names())
      if (!keep.count(n)) frozen.insert(n);
  }

  std::unique_ptr<std::ofstream> log;
  if (!cfg.log_path.empty()) {
    log = std::make_unique<std::ofstream>(cfg.log_path, std::ios::app);
    if (!*log) Fail(ErrorKind::kIo, "cannot open training log " + cfg.log_path);
  }

  nn::AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.clip_norm = cfg.clip_norm;
  nn::Adam adam(acfg);
  auto coin_rng = MakeRng({cfg.seed, 0xc011});
  std::bernoulli_distribution coin(cfg.fingerprint_prob);

  TrainResult result;
  std::int64_t step = 0;
  std::size_t active_total = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    auto order = data.order(static_cast<std::size_t>(epoch));
    order.resize(per_epoch);
    EpochStats es;
    es.epoch = epoch;
    for (std::size_t b0 = 0; b0 < per_epoch; b0 += cfg.batch) {
      const bool active = fp_capable && coin(coin_rng);
      std::vector<SampleTriple> batch;
      for (std::size_t i = b0; i < std::min(per_epoch, b0 + cfg.batch); ++i)
        batch.push_back(data.get(order[i], static_cast<std::size_t>(epoch)));
      const PreparedBatch pb = PrepareBatch(model, batch, active);

      BatchGrad bg;
      try {
        bg = RunBatch(model, pb, active, cfg.loss);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kNumeric) throw;
        bg.loss.total = std::nan("");
      }
      if (!std::isfinite(bg.loss.total) || !AllGradsFinite(bg.grads)) {
        // Parameters are still those of the last successful update.
        if (!cfg.checkpoint_path.empty())
          nn::SaveCheckpoint(cfg.checkpoint_path, model.ToCheckpoint(prior_steps + step));
        Fail(ErrorKind::kNumeric, "training diverged at step " + std::to_string(prior_steps + step) +
                                      (cfg.checkpoint_path.empty() ? std::string()
                                                                   : "; last good checkpoint at " + cfg.checkpoint_path));
      }
      std::vector<std::string> names;
      for (const auto& [name, g] : bg.grads)
        if (!frozen.count(name)) names.push_back(name);
      const double scale = nn::WarmupScale(step, warmup);
      const auto info = adam.Step(model.params(), bg.grads, names, scale);

      es.mean_loss += bg.loss.total;
      es.mean_magnitude += bg.loss.magnitude;
      es.mean_complex += bg.loss.complex;
      ++es.batches;
      es.fp_active_batches += active ? 1 : 0;
      active_total += active ? 1 : 0;
      result.step_losses.push_back(bg.loss.total);
      if (log) {
        nlohmann::json j = {{"step", prior_steps + step},
                            {"epoch", epoch},
                            {"loss", bg.loss.total},
                            {"magnitude", bg.loss.magnitude},
                            {"complex", bg.loss.complex},
                            {"fp_active", active},
                            {"lr", cfg.lr * scale},
                            {"grad_norm", info.grad_norm},
                            {"clipped", info.clipped}};
        *log << j.dump() << '\n';
      }
      ++step;
    }
    es.mean_loss /= static_cast<double>(es.batches);
    es.mean_magnitude /= static_cast<double>(es.batches);
    es.mean_complex /= static_cast<double>(es.batches);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    spdlog::info("epoch {}/{}: loss {:.5f} (mag {:.5f}, complex {:.5f}), fp active {}/{}, {:.1f} s", epoch + 1,
                 cfg.epochs, es.mean_loss, es.mean_magnitude, es.mean_complex, es.fp_active_batches, es.batches,
                 secs);
    result.epochs.push_back(es);
  }
  result.steps = step;
  result.fp_active_fraction = step ? static_cast<double>(active_total) / static_cast<double>(step) : 0.0;
  if (fp_capable) spdlog::info("realized fingerprint activation fraction {:.3f}", result.fp_active_fraction);
  result.checkpoint = model.ToCheckpoint(prior_steps + step);
  result.checkpoint.meta["fp_active_fraction"] = result.fp_active_fraction;
  result.checkpoint.meta["fingerprint_prob"] = cfg.fingerprint_prob;
  return result;
}

std::int64_t StepsOf(const nn::Checkpoint& c) {
  return c.meta.contains("train_steps") ? c.meta.at("train_steps").get<std::int64_t>() : 0;
}

}  // namespace

BatchGrad ComputeBatchGrad(const Model& model, const std::vector<SampleTriple>& batch, bool fp_active,
                           const LossConfig& loss_cfg) {
  if (batch.empty()) Fail(ErrorKind::kInvalidShape, "empty batch");
  if (fp_active) model.CheckFusionMode(model.variant().fusion);
  const bool active = fp_active && model.variant().has_fingerprint_branch();
  return RunBatch(model, PrepareBatch(model, batch, active), active, loss_cfg);
}

TrainResult PretrainBaseline(const ModelConfig& model_cfg, const TrainData& data, const TrainConfig& cfg) {
  if (cfg.variant.has_fingerprint_branch() || model_cfg.variant.has_fingerprint_branch()) {
    Fail(ErrorKind::kInvalidConfig, "baseline pretraining runs in Bypass mode; fingerprints cannot be supplied");
  }
  ModelConfig mc = model_cfg;
  mc.variant = VariantConfig{};
  Model model = Model::Create(mc, cfg.seed);
  TrainConfig c = cfg;
  c.fingerprint_prob = 0.0;
  return RunTraining(model, 0, data, c);
}

TrainResult TrainVariant(const nn::Checkpoint& init, const TrainData& data, const TrainConfig& cfg) {
  Model base = Model::FromCheckpoint(init);
  if (base.variant() == cfg.variant) {
    return RunTraining(base, StepsOf(init), data, cfg);
  }
  if (base.variant().has_fingerprint_branch()) {
    Fail(ErrorKind::kInvalidConfig, "checkpoint variant " + ToJson(base.variant()).dump() +
                                        " does not match requested " + ToJson(cfg.variant).dump());
  }
  Model model = Model::FromPretrained(base, cfg.variant, cfg.seed);
  return RunTraining(model, StepsOf(init), data, cfg);
}

}  // namespace dfinger
