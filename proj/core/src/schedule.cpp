#include "loctex/schedule.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace loctex {

double lr_schedule(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps, double peak_lr) {
  if (step < 0 || step > total_steps) throw std::invalid_argument("lr_schedule: step outside [0, total_steps]");
  if (warmup_steps < 0 || warmup_steps > total_steps) {
    throw std::invalid_argument("lr_schedule: warmup_steps outside [0, total_steps]");
  }
  if (step < warmup_steps) return peak_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const std::int64_t decay = total_steps - warmup_steps;
  if (decay == 0) return peak_lr;
  const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(decay);
  return peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace loctex
