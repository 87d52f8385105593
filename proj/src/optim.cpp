#include "teachgen/optim.hpp"

#include <cmath>

#include "teachgen/error.hpp"

namespace teachgen {

void AdamW::step(std::span<double> params, std::span<const double> grads, double lr) {
  if (params.size() != grads.size())
    throw TrainingError("AdamW: parameter/gradient size mismatch");
  if (m_.size() != params.size()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
    t_ = 0;
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double decay = 1.0 - lr * config_.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
    params[i] *= decay;
    params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + config_.epsilon);
  }
}

void AdamW::reset() {
  m_.clear();
  v_.clear();
  t_ = 0;
}

double linear_decay_lr(double base_lr, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0 || step >= total_steps) return 0.0;
  return base_lr * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

}  // namespace teachgen
