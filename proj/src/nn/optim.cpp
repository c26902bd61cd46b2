#include "lrm/nn/optim.hpp"

#include <cmath>

namespace lrm::nn {

double LrSchedule::at(std::int64_t step) const {
  LRM_REQUIRE(step >= 0, "learning-rate step must be >= 0");
  if (step < warmup_steps) {
    const double progress = static_cast<double>(step) / static_cast<double>(warmup_steps);
    return base_lr * std::pow(warmup_start_ratio, 1.0 - progress);
  }
  if (decay_steps <= 0) return base_lr;
  return base_lr * std::pow(decay_rate, static_cast<double>(step - warmup_steps) / static_cast<double>(decay_steps));
}

template <typename T>
Adam<T>::Adam(const ParamSet<T>& params, AdamConfig config) : config_(config) {
  state_.first_moment = params.zero_grads();
  state_.second_moment = params.zero_grads();
}

template <typename T>
void Adam<T>::update(ParamSet<T>& params, const Grads<T>& grads) {
  LRM_REQUIRE(grads.size() == params.size(), "gradient count does not match parameter count");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    LRM_REQUIRE(grads[i].rows() == params.value(i).rows() && grads[i].cols() == params.value(i).cols(),
                "gradient shape mismatch for " + params[i].name);
    if (params[i].trainable && !grads[i].allFinite())
      throw NonFiniteError("non-finite gradient for " + params[i].name + " at step " + std::to_string(state_.step));
  }
  const double lr = config_.schedule.at(state_.step);
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const T b1 = static_cast<T>(config_.beta1);
  const T b2 = static_cast<T>(config_.beta2);
  const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(config_.beta1, t)));
  const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(config_.beta2, t)));
  const T eps = static_cast<T>(config_.eps);
  const T step_size = static_cast<T>(lr);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!params[i].trainable) continue;
    auto& m = state_.first_moment[i];
    auto& v = state_.second_moment[i];
    m = b1 * m + (T(1) - b1) * grads[i];
    v = b2 * v + (T(1) - b2) * grads[i].cwiseAbs2();
    params.value(i).array() -= step_size * (m.array() * c1) / ((v.array() * c2).sqrt() + eps);
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace lrm::nn
