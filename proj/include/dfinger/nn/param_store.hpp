#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dfinger/nn/tensor.hpp"

namespace dfinger::nn {

using GradMap = std::map<std::string, Tensor>;

// Named parameters in a sorted map, so iteration order (and therefore
// serialisation and optimiser updates) is deterministic.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t rng_seed = 0) : rng_seed_(rng_seed), rng_(rng_seed) {}

  // Throws kInvalidConfig if the name is already registered.
  Tensor& Add(const std::string& name, Tensor init);
  // Xavier-uniform for a fan_in x fan_out slab (the last two dims).
  Tensor& AddXavier(const std::string& name, Shape shape, double gain = 1.0);
  Tensor& AddConstant(const std::string& name, Shape shape, double value);

  bool Has(const std::string& name) const { return params_.count(name) != 0; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;

  const std::map<std::string, Tensor>& params() const { return params_; }
  std::vector<std::string> Names() const;
  std::vector<std::string> NamesWithPrefix(const std::string& prefix) const;
  std::size_t NumScalars() const;

  std::uint64_t rng_seed() const { return rng_seed_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  std::uint64_t rng_seed_;
  std::mt19937_64 rng_;
  std::map<std::string, Tensor> params_;
};

}  // namespace dfinger::nn
