#pragma once

#include <cstdint>

namespace loctex {

/// Linear warmup from 0 to `peak_lr` over `warmup_steps`, then cosine decay
/// to 0 at `total_steps`. Throws std::invalid_argument when step is outside
/// [0, total_steps] or warmup_steps > total_steps.
double lr_schedule(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps, double peak_lr);

}  // namespace loctex
