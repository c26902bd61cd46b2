#pragma once

#include <cstdint>

#include "lrm/nn/tensor.hpp"

namespace lrm::nn {

/// Exponential warm-up from base_lr * warmup_start_ratio to base_lr over
/// warmup_steps, then continuous exponential decay by decay_rate every
/// decay_steps.
struct LrSchedule {
  double base_lr = 1e-3;
  double warmup_start_ratio = 0.01;
  std::int64_t warmup_steps = 200;
  double decay_rate = 0.9;
  std::int64_t decay_steps = 1000;

  double at(std::int64_t step) const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  LrSchedule schedule;
};

template <typename T>
struct OptimizerState {
  Grads<T> first_moment;
  Grads<T> second_moment;
  std::int64_t step = 0;
};

/// Adam with bias correction. The learning rate of update t (0-based) is
/// schedule.at(t). Buffers (non-trainable parameters) are left untouched.
template <typename T>
class Adam {
 public:
  Adam(const ParamSet<T>& params, AdamConfig config);

  /// Throws NonFiniteError and leaves parameters and state untouched if any
  /// gradient is non-finite.
  void update(ParamSet<T>& params, const Grads<T>& grads);

  double current_lr() const { return config_.schedule.at(state_.step); }
  const OptimizerState<T>& state() const noexcept { return state_; }
  const AdamConfig& config() const noexcept { return config_; }

 private:
  AdamConfig config_;
  OptimizerState<T> state_;
};

}  // namespace lrm::nn
