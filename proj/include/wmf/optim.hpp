#pragma once

// AdamW with decoupled weight decay.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "wmf/tensor.hpp"

namespace wmf {

struct AdamWConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;

  void validate() const;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Norm affine parameters and attention temperatures are not decayed.
bool decays(const std::string& name);

class AdamW {
 public:
  struct Moments {
    Tensor m, v;
  };

  explicit AdamW(AdamWConfig config = {}) : config_(config) { config_.validate(); }

  // theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta), per parameter,
  // using each tensor's current gradient (missing gradient = zero). Throws a
  // numeric error naming the parameter if a gradient is not finite.
  void step(const NamedTensors& params);

  std::int64_t steps_taken() const { return t_; }
  void set_steps_taken(std::int64_t t) { t_ = t; }
  const AdamWConfig& config() const { return config_; }
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

 private:
  AdamWConfig config_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace wmf
