#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dfinger/nn/param_store.hpp"

namespace dfinger::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Global L2 norm cap applied across all updated gradients; <= 0 disables.
  double clip_norm = 10.0;
};

struct AdamStepInfo {
  double grad_norm = 0.0;  // before clipping
  bool clipped = false;
};

// Bias-corrected Adam. Moment buffers and step counts are kept per
// parameter, so a parameter that sits out a step (as when no gradient
// reaches it) resumes with its own correction factor.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }

  // Updates every name in `names` from `grads` at learning rate
  // `cfg.lr * lr_scale`. A name with no entry in `grads`, or with a shape
  // that differs from the stored parameter, is a kInvalidConfig error.
  AdamStepInfo Step(ParamStore& params, const GradMap& grads, const std::vector<std::string>& names,
                    double lr_scale = 1.0);

  std::int64_t step_count(const std::string& name) const;

 private:
  struct Slot {
    Tensor m, v;
    std::int64_t t = 0;
  };
  AdamConfig cfg_;
  std::map<std::string, Slot> slots_;
};

// Linear warmup over the first `warmup_steps` updates, then constant.
double WarmupScale(std::int64_t step, std::int64_t warmup_steps);

}  // namespace dfinger::nn
