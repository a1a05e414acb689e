#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ctap/error.hpp"
#include "ctap/nn.hpp"

namespace ctap::nn {

struct AdamConfig {
  double learning_rate = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One trainable tensor together with its gradient.
struct ParamSlot {
  std::string name;
  Tensor* value;
  const Tensor* grad;
};

/// Adam with bias correction. Moment buffers are bound to slot order on the
/// first step and shape-checked on every later one.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void step(std::span<const ParamSlot> slots) {
    for (const auto& slot : slots) {
      if (slot.value->shape != slot.grad->shape || slot.value->size() != slot.grad->size()) {
        throw Error(ErrorKind::InvalidArgument, "gradient shape mismatch for " + slot.name);
      }
      for (double g : slot.grad->values) {
        if (!std::isfinite(g)) throw Error(ErrorKind::Numeric, "non-finite gradient in " + slot.name);
      }
    }
    if (first_.empty()) {
      for (const auto& slot : slots) {
        first_.emplace_back(slot.value->size(), 0.0);
        second_.emplace_back(slot.value->size(), 0.0);
      }
    } else if (first_.size() != slots.size()) {
      throw Error(ErrorKind::InvalidArgument, "parameter set changed between Adam steps");
    }
    ++steps_;
    const double t = static_cast<double>(steps_);
    const double correction1 = 1.0 - std::pow(config_.beta1, t);
    const double correction2 = 1.0 - std::pow(config_.beta2, t);
    for (std::size_t s = 0; s < slots.size(); ++s) {
      auto& values = slots[s].value->values;
      const auto& grads = slots[s].grad->values;
      if (first_[s].size() != values.size()) {
        throw Error(ErrorKind::InvalidArgument, "moment shape mismatch for " + slots[s].name);
      }
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = grads[i];
        first_[s][i] = config_.beta1 * first_[s][i] + (1.0 - config_.beta1) * g;
        second_[s][i] = config_.beta2 * second_[s][i] + (1.0 - config_.beta2) * g * g;
        const double m_hat = first_[s][i] / correction1;
        const double v_hat = second_[s][i] / correction2;
        values[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
      }
    }
  }

  std::uint64_t steps() const noexcept { return steps_; }
  const AdamConfig& config() const noexcept { return config_; }

 private:
  AdamConfig config_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::uint64_t steps_ = 0;
};

}  // namespace ctap::nn
