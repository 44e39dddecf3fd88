#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <torch/torch.h>

namespace loctex::testing {

struct GradientCheck {
  std::size_t coordinates = 0;
  std::size_t within_tight = 0;  // relative error <= 1e-3
  double worst = 0.0;

  double tight_fraction() const { return coordinates == 0 ? 1.0 : static_cast<double>(within_tight) / coordinates; }
  bool passes() const { return tight_fraction() >= 0.95 && worst <= 1e-2; }
};

/// |a - n| / max(|a|, |n|), with a floor on the denominator so coordinates
/// whose true gradient is ~0 are judged on absolute error.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares autograd gradients of scalar `f` at the given double tensors
/// against central differences with step `h`. With `sample` > 0 only that
/// many evenly spaced coordinates of each input are checked.
inline GradientCheck check_gradients(const std::function<torch::Tensor(const std::vector<torch::Tensor>&)>& f,
                                     std::vector<torch::Tensor> inputs, double h = 1e-4, int64_t sample = 0) {
  for (auto& x : inputs) x = x.detach().clone().to(torch::kDouble).set_requires_grad(true);
  auto out = f(inputs);
  auto grads = torch::autograd::grad({out}, inputs, {}, false, false, true);

  GradientCheck result;
  torch::NoGradGuard guard;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto flat = inputs[k].view({-1});
    const auto analytic = grads[k].defined() ? grads[k].reshape({-1}) : torch::zeros_like(flat);
    const int64_t stride = sample > 0 ? std::max<int64_t>(1, flat.numel() / sample) : 1;
    for (int64_t i = 0; i < flat.numel(); i += stride) {
      const double orig = flat[i].item<double>();
      flat[i] = orig + h;
      const double up = f(inputs).item<double>();
      flat[i] = orig - h;
      const double down = f(inputs).item<double>();
      flat[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double err = relative_error(analytic[i].item<double>(), numeric);
      ++result.coordinates;
      if (err <= 1e-3) ++result.within_tight;
      result.worst = std::max(result.worst, err);
    }
  }
  return result;
}

}  // namespace loctex::testing
