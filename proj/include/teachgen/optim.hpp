#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace teachgen {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with decoupled weight decay. State is sized lazily on first step.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  void step(std::span<double> params, std::span<const double> grads, double lr);
  void reset();
  long steps_taken() const { return t_; }
  const AdamWConfig& config() const { return config_; }

 private:
  AdamWConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  long t_ = 0;
};

/// Linear decay without warmup: base * (1 - step / total_steps), floored at 0.
double linear_decay_lr(double base_lr, std::size_t step, std::size_t total_steps);

}  // namespace teachgen
