#include "dfinger/nn/param_store.hpp"

#include <cmath>

#include "dfinger/error.hpp"

namespace dfinger::nn {

Tensor& ParamStore::Add(const std::string& name, Tensor init) {
  auto [it, inserted] = params_.emplace(name, std::move(init));
  if (!inserted) {
    Fail(ErrorKind::kInvalidConfig, "parameter registered twice: " + name);
  }
  return it->second;
}

Tensor& ParamStore::AddXavier(const std::string& name, Shape shape, double gain) {
  if (shape.size() < 2) {
    Fail(ErrorKind::kInvalidShape, "xavier init needs rank >= 2 for " + name);
  }
  const double fan_out = static_cast<double>(shape.back());
  const double fan_in = static_cast<double>(NumElements(shape)) / fan_out;
  const double limit = gain * std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t(std::move(shape));
  // Manual uniform mapping: std::uniform_real_distribution is not portable
  // across standard libraries.
  for (double& v : t.values()) {
    const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    v = (2.0 * u - 1.0) * limit;
  }
  return Add(name, std::move(t));
}

Tensor& ParamStore::AddConstant(const std::string& name, Shape shape, double value) {
  return Add(name, Tensor(std::move(shape), value));
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) Fail(ErrorKind::kInvalidConfig, "unknown parameter: " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) Fail(ErrorKind::kInvalidConfig, "unknown parameter: " + name);
  return it->second;
}

std::vector<std::string> ParamStore::Names() const {
  std::vector<std::string> names;
  for (const auto& [name, _] : params_) names.push_back(name);
  return names;
}

std::vector<std::string> ParamStore::NamesWithPrefix(const std::string& prefix) const {
  std::vector<std::string> names;
  for (auto it = params_.lower_bound(prefix);
       it != params_.end() && it->first.compare(0, prefix.size(), prefix) == 0; ++it) {
    names.push_back(it->first);
  }
  return names;
}

std::size_t ParamStore::NumScalars() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

}  // namespace dfinger::nn
