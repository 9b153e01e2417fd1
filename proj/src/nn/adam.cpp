#include "dfinger/nn/adam.hpp"

#include <cmath>

#include "dfinger/error.hpp"

namespace dfinger::nn {

AdamStepInfo Adam::Step(ParamStore& params, const GradMap& grads,
                        const std::vector<std::string>& names, double lr_scale) {
  double sq = 0.0;
  for (const auto& name : names) {
    auto it = grads.find(name);
    if (it == grads.end()) Fail(ErrorKind::kInvalidConfig, "adam: no gradient for '" + name + "'");
    if (!params.Has(name)) Fail(ErrorKind::kInvalidConfig, "adam: unknown parameter '" + name + "'");
    if (it->second.shape() != params.at(name).shape()) {
      Fail(ErrorKind::kInvalidConfig, "adam: gradient shape " + ShapeString(it->second.shape()) +
                                          " for '" + name + "' " +
                                          ShapeString(params.at(name).shape()));
    }
    for (double g : it->second.values()) sq += g * g;
  }
  AdamStepInfo info;
  info.grad_norm = std::sqrt(sq);
  if (!std::isfinite(info.grad_norm)) Fail(ErrorKind::kNumeric, "adam: non-finite gradient norm");
  double gscale = 1.0;
  if (cfg_.clip_norm > 0.0 && info.grad_norm > cfg_.clip_norm) {
    gscale = cfg_.clip_norm / info.grad_norm;
    info.clipped = true;
  }
  const double lr = cfg_.lr * lr_scale;
  for (const auto& name : names) {
    const Tensor& g = grads.at(name);
    Tensor& p = params.at(name);
    Slot& s = slots_[name];
    if (s.m.empty() && !p.empty()) {
      s.m = Tensor(p.shape());
      s.v = Tensor(p.shape());
    }
    ++s.t;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] * gscale;
      s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * gi;
      s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = s.m[i] / c1;
      const double vhat = s.v[i] / c2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
  return info;
}

std::int64_t Adam::step_count(const std::string& name) const {
  auto it = slots_.find(name);
  return it == slots_.end() ? 0 : it->second.t;
}

double WarmupScale(std::int64_t step, std::int64_t warmup_steps) {
  if (warmup_steps <= 0 || step >= warmup_steps) return 1.0;
  return static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
}

}  // namespace dfinger::nn
