#include "loctex/losses.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace loctex {

using torch::autograd::AutogradContext;
using torch::autograd::tensor_list;

const char* to_string(DenominatorMode mode) {
  return mode == DenominatorMode::kAsWritten ? "as-written" : "standard";
}

DenominatorMode denominator_mode_from_string(const std::string& name) {
  if (name == "as-written") return DenominatorMode::kAsWritten;
  if (name == "standard") return DenominatorMode::kStandard;
  throw std::invalid_argument("unknown denominator mode '" + name + "' (expected as-written or standard)");
}

void LossConfig::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("loss: tau must be positive");
  if (weight_contrastive < 0.0 || weight_localization < 0.0) {
    throw std::invalid_argument("loss: weights must be non-negative");
  }
  if (!(epsilon_norm > 0.0)) throw std::invalid_argument("loss: epsilon_norm must be positive");
  for (int s : scales) {
    if (s != 1 && s != 2 && s != 4) throw std::invalid_argument("loss: scales must be drawn from {1, 2, 4}");
  }
}

double cosine_sim(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine_sim: size mismatch");
  const double dot = std::inner_product(u.begin(), u.end(), v.begin(), 0.0);
  const double nu = std::sqrt(std::inner_product(u.begin(), u.end(), u.begin(), 0.0));
  const double nv = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
  if (nu == 0.0 || nv == 0.0) throw std::invalid_argument("cosine_sim: zero-norm vector");
  return dot / (nu * nv);
}

namespace {

/// Cross-entropy style reduction along `dim` of the scaled similarity
/// matrix; returns the summed loss and adds dLoss/dS into `grad`.
torch::Tensor infonce_direction(const torch::Tensor& scaled, int64_t dim, bool exclude_positive, torch::Tensor& grad) {
  const auto n = scaled.size(0);
  const auto eye = torch::eye(n, scaled.options().dtype(torch::kBool));
  const auto logits = exclude_positive
                          ? scaled.masked_fill(eye, -std::numeric_limits<double>::infinity())
                          : scaled;
  const auto lse = torch::logsumexp(logits, dim);
  const auto prob = torch::softmax(logits, dim);
  grad = grad + prob - eye.to(scaled.scalar_type());
  return (lse - scaled.diagonal()).sum();
}

class ContrastiveLossFunction : public torch::autograd::Function<ContrastiveLossFunction> {
 public:
  static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& visual, const torch::Tensor& textual,
                               double tau, bool exclude_positive, bool symmetric) {
    const auto nv = visual.norm(2, 1, true);
    const auto nt = textual.norm(2, 1, true);
    if ((nv == 0).any().item<bool>() || (nt == 0).any().item<bool>()) {
      throw std::invalid_argument("contrastive_loss: zero-norm embedding");
    }
    const auto u = visual / nv;
    const auto v = textual / nt;
    const auto scaled = u.mm(v.t()) / tau;

    auto grad = torch::zeros_like(scaled);
    auto loss = infonce_direction(scaled, 1, exclude_positive, grad);
    if (symmetric) loss = loss + infonce_direction(scaled, 0, exclude_positive, grad);

    ctx->save_for_backward({u, v, nv, nt, grad});
    ctx->saved_data["tau"] = tau;
    return loss;
  }

  static tensor_list backward(AutogradContext* ctx, tensor_list grad_outputs) {
    const auto saved = ctx->get_saved_variables();
    const auto& u = saved[0];
    const auto& v = saved[1];
    const auto& nv = saved[2];
    const auto& nt = saved[3];
    const auto& grad_s = saved[4];
    const double tau = ctx->saved_data["tau"].toDouble();
    const auto g = grad_outputs[0];

    // S = u v^T / tau; back through the row normalization x / |x|.
    const auto du = grad_s.mm(v) * (g / tau);
    const auto dv = grad_s.t().mm(u) * (g / tau);
    const auto dvisual = (du - u * (u * du).sum(1, true)) / nv;
    const auto dtextual = (dv - v * (v * dv).sum(1, true)) / nt;
    return {dvisual, dtextual, torch::Tensor(), torch::Tensor(), torch::Tensor()};
  }
};

class LocalizationLossFunction : public torch::autograd::Function<LocalizationLossFunction> {
 public:
  static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& attention, const torch::Tensor& target,
                               const torch::Tensor& token_mask, double eps) {
    const auto n = attention.size(0);
    const auto mask = token_mask.to(attention.scalar_type()).unsqueeze(-1).unsqueeze(-1);
    const auto m = (attention * mask).flatten(1);
    const auto t = (target.to(attention.scalar_type()) * mask).flatten(1);
    const auto norm_m = m.norm(2, 1, true);
    const auto norm_t = t.norm(2, 1, true);
    const auto valid = norm_t.gt(eps);
    const auto a = m / norm_m.clamp_min(eps);
    const auto b = t / norm_t.clamp_min(eps);
    const auto diff = a - b;
    const auto dist = diff.norm(2, 1, true);
    const auto per_sample = torch::where(valid, dist, torch::zeros_like(dist));

    ctx->save_for_backward({a, diff, dist, norm_m, valid, mask});
    ctx->saved_data["eps"] = eps;
    ctx->saved_data["n"] = static_cast<int64_t>(n);
    ctx->saved_data["shape"] = attention.sizes().vec();
    return per_sample.sum() / static_cast<double>(n);
  }

  static tensor_list backward(AutogradContext* ctx, tensor_list grad_outputs) {
    const auto saved = ctx->get_saved_variables();
    const auto& a = saved[0];
    const auto& diff = saved[1];
    const auto& dist = saved[2];
    const auto& norm_m = saved[3];
    const auto& valid = saved[4];
    const auto& mask = saved[5];
    const double eps = ctx->saved_data["eps"].toDouble();
    const auto n = ctx->saved_data["n"].toInt();

    // d|a - b| / da = (a - b) / |a - b|; zero where the distance vanishes or
    // the sample has no target.
    const auto active = valid.logical_and(dist.gt(0));
    const auto gd = torch::where(active, diff / dist.clamp_min(eps), torch::zeros_like(diff));
    const auto dm = (gd - a * (a * gd).sum(1, true)) / norm_m.clamp_min(eps);
    const auto scale = grad_outputs[0] / static_cast<double>(n);
    const auto shape = ctx->saved_data["shape"].toIntVector();
    const auto full = (dm * scale).view(shape) * mask;
    return {full, torch::Tensor(), torch::Tensor(), torch::Tensor()};
  }
};

}  // namespace

torch::Tensor contrastive_loss(const torch::Tensor& visual, const torch::Tensor& textual, const LossConfig& cfg) {
  cfg.validate();
  if (visual.dim() != 2 || textual.dim() != 2 || visual.sizes() != textual.sizes()) {
    throw std::invalid_argument("contrastive_loss: expected two (N, E) tensors of equal shape");
  }
  const bool as_written = cfg.denominator == DenominatorMode::kAsWritten;
  if (as_written && visual.size(0) < 2) {
    throw std::invalid_argument("contrastive_loss: the negatives-only denominator needs a batch of at least 2");
  }
  return ContrastiveLossFunction::apply(visual, textual, cfg.tau, as_written, cfg.symmetric);
}

torch::Tensor attention_map(const torch::Tensor& z_textual, const torch::Tensor& z_visual) {
  if (z_textual.dim() != 3 || z_visual.dim() != 4) {
    throw std::invalid_argument("attention_map: expected (N, C, L) and (N, C, H, W)");
  }
  if (z_textual.size(0) != z_visual.size(0) || z_textual.size(1) != z_visual.size(1)) {
    throw std::invalid_argument("attention_map: batch or channel width mismatch (" +
                                std::to_string(z_textual.size(1)) + " vs " + std::to_string(z_visual.size(1)) + ")");
  }
  const auto n = z_visual.size(0);
  const auto h = z_visual.size(2);
  const auto w = z_visual.size(3);
  const auto logits = torch::bmm(z_textual.transpose(1, 2), z_visual.flatten(2));  // (N, L, HW)
  return torch::softmax(logits, -1).view({n, z_textual.size(2), h, w});
}

torch::Tensor localization_loss(const torch::Tensor& attention, const torch::Tensor& target,
                                const torch::Tensor& token_mask, const LossConfig& cfg) {
  cfg.validate();
  if (attention.dim() != 4 || attention.sizes() != target.sizes()) {
    throw std::invalid_argument("localization_loss: attention and target shapes differ");
  }
  if (token_mask.dim() != 2 || token_mask.size(0) != attention.size(0) || token_mask.size(1) != attention.size(1)) {
    throw std::invalid_argument("localization_loss: token mask must be (N, L)");
  }
  return LocalizationLossFunction::apply(attention, target, token_mask, cfg.epsilon_norm);
}

LossBreakdown total_loss(const ContrastiveEmbeddings& embeddings, const std::map<int, torch::Tensor>& attention,
                         const std::map<int, LocalizationTarget>& targets, const LossConfig& cfg) {
  cfg.validate();
  LossBreakdown out;
  out.total = torch::zeros({}, embeddings.visual.options());
  if (cfg.weight_contrastive > 0.0) {
    const auto lc = contrastive_loss(embeddings.visual, embeddings.textual, cfg);
    out.contrastive = lc.item<double>();
    out.total = out.total + cfg.weight_contrastive * lc;
  }
  if (cfg.weight_localization > 0.0) {
    for (int scale : cfg.scales) {
      auto m = attention.find(scale);
      auto t = targets.find(scale);
      if (m == attention.end()) {
        throw std::invalid_argument("total_loss: no attention map at scale " + std::to_string(scale));
      }
      if (t == targets.end()) {
        throw std::invalid_argument("total_loss: no rendered target at scale " + std::to_string(scale));
      }
      const auto ll = localization_loss(m->second, t->second.target, t->second.token_mask, cfg);
      out.localization[scale] = ll.item<double>();
      out.total = out.total + cfg.weight_localization * ll;
    }
  }
  return out;
}

LossBreakdown total_loss(const ModelOutputs& outputs, const std::map<int, LocalizationTarget>& targets,
                         const LossConfig& cfg) {
  std::map<int, torch::Tensor> maps;
  if (cfg.weight_localization > 0.0) {
    for (int scale : cfg.scales) {
      auto it = outputs.localization.visual.find(scale);
      if (it == outputs.localization.visual.end()) {
        throw std::invalid_argument("total_loss: model produced no localization features at scale " +
                                    std::to_string(scale));
      }
      maps.emplace(scale, attention_map(outputs.localization.textual, it->second));
    }
  }
  return total_loss(outputs.embeddings, maps, targets, cfg);
}

}  // namespace loctex
