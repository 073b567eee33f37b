#ifndef MLT_OPTIMIZER_HPP_
#define MLT_OPTIMIZER_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <variant>

#include "mlt/errors.hpp"
#include "mlt/tensor.hpp"

namespace mlt {

struct WarmupCosine {
  std::int64_t warmup_steps = 715;
  std::int64_t total_steps = 16000;
  double lr_max = 1.2e-3;
  double lr_min = 1.2e-4;
};

struct ConstantLr {
  double lr = 1.2e-3;
};

using LrSchedule = std::variant<WarmupCosine, ConstantLr>;

inline void validate(const LrSchedule& schedule) {
  if (const auto* s = std::get_if<WarmupCosine>(&schedule)) {
    // lr_min == 0 is accepted so the schedule can decay to zero.
    if (!(s->lr_min >= 0.0) || !(s->lr_min <= s->lr_max) || !(s->lr_max > 0.0)) {
      throw ConfigError("schedule requires 0 <= lr_min <= lr_max and lr_max > 0");
    }
    if (s->warmup_steps < 0 || s->warmup_steps >= s->total_steps) {
      throw ConfigError("schedule requires 0 <= warmup_steps < total_steps");
    }
  } else if (!(std::get<ConstantLr>(schedule).lr >= 0.0)) {
    throw ConfigError("constant learning rate must be non-negative");
  }
}

namespace detail {

inline double cosine_lr(const WarmupCosine& s, double step) {
  const double progress = (step - static_cast<double>(s.warmup_steps)) /
                          static_cast<double>(s.total_steps - s.warmup_steps);
  return s.lr_min + 0.5 * (s.lr_max - s.lr_min) *
                        (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace detail

// Linear ramp from 0 to lr_max over the warmup, then cosine decay towards
// lr_min at step == total_steps.
inline double lr_at(const LrSchedule& schedule, std::int64_t step) {
  if (const auto* c = std::get_if<ConstantLr>(&schedule)) {
    return c->lr;
  }
  const auto& s = std::get<WarmupCosine>(schedule);
  if (step < 0 || step >= s.total_steps) {
    throw ScheduleExhausted("lr_at: step " + std::to_string(step) +
                            " outside schedule of " +
                            std::to_string(s.total_steps) + " steps");
  }
  if (step < s.warmup_steps) {
    return s.lr_max * (static_cast<double>(step) /
                       static_cast<double>(s.warmup_steps));
  }
  if (step == s.warmup_steps) {
    return s.lr_max;
  }
  return detail::cosine_lr(s, static_cast<double>(step));
}

// Limit of the schedule at step == total_steps.
inline double terminal_lr(const LrSchedule& schedule) {
  if (const auto* c = std::get_if<ConstantLr>(&schedule)) {
    return c->lr;
  }
  const auto& s = std::get<WarmupCosine>(schedule);
  return detail::cosine_lr(s, static_cast<double>(s.total_steps));
}

struct SgdConfig {
  LrSchedule schedule = WarmupCosine{};
  std::size_t accumulation_factor = 32;

  void validate() const {
    mlt::validate(schedule);
    if (accumulation_factor < 1) {
      throw ConfigError("accumulation_factor must be at least 1");
    }
  }
};

// Divides accumulated gradients by the number of micro-batches.
template <typename T>
void average_gradients(std::span<NamedTensor<T>> params, std::size_t micro_batches) {
  if (micro_batches <= 1) {
    return;
  }
  const T divisor = static_cast<T>(micro_batches);
  for (auto& p : params) {
    for (T& g : p.tensor.grad()) {
      g /= divisor;
    }
  }
}

// θ := θ − lr·grad, then zero the gradients. Checks every gradient before
// touching any parameter.
template <typename T>
void sgd_step(std::span<NamedTensor<T>> params, double lr) {
  for (auto& p : params) {
    for (T g : p.tensor.grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("sgd_step: non-finite gradient in " + p.name);
      }
    }
  }
  const T rate = static_cast<T>(lr);
  for (auto& p : params) {
    auto values = p.tensor.data();
    auto grads = p.tensor.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] -= rate * grads[i];
    }
    p.tensor.zero_grad();
  }
}

}  // namespace mlt

#endif  // MLT_OPTIMIZER_HPP_
