#include "ssmt/losses.hpp"

#include <cmath>

#include "ssmt/errors.hpp"
#include "ssmt/ops.hpp"

namespace ssmt {

Tensor dice_loss(const Tensor& soft_pred, const Tensor& target, float smooth) {
  if (soft_pred.numel() != target.numel()) {
    throw DimensionError("dice_loss: prediction " + shape_str(soft_pred.shape()) + " vs target " +
                         shape_str(target.shape()));
  }
  const Tensor t = soft_pred.shape() == target.shape() ? target : reshape(target, soft_pred.shape());
  const Tensor num = add_scalar(mul_scalar(sum(mul(soft_pred, t)), 2.0f), smooth);
  const Tensor den = add_scalar(add(sum(soft_pred), sum(t)), smooth);
  return add_scalar(mul_scalar(div(num, den), -1.0f), 1.0f);
}

Tensor charbonnier(const Tensor& reconstruction, const Tensor& input, float eps) {
  if (reconstruction.shape() != input.shape()) {
    throw DimensionError("charbonnier: " + shape_str(reconstruction.shape()) + " vs " + shape_str(input.shape()));
  }
  return mean(sqrt(add_scalar(square(sub(reconstruction, input)), eps * eps)));
}

Tensor size_loss(const Tensor& predicted, float target) {
  if (predicted.numel() != 1) throw DimensionError("size_loss expects one prediction, got " + shape_str(predicted.shape()));
  return square(add_scalar(reshape(predicted, {}), -target));
}

void LossWeights::validate() const {
  for (float v : {alpha, beta, gamma, eta}) {
    if (!(v >= 0.0f) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and non-negative");
  }
  const double total = static_cast<double>(alpha) + beta + gamma + eta;
  if (std::abs(total - 1.0) > 1e-6) throw ConfigError("loss weights must sum to 1, got " + std::to_string(total));
  if (!(static_cast<double>(alpha) > static_cast<double>(beta) + gamma + eta)) {
    throw ConfigError("loss weights violate alpha > beta + gamma + eta (nodule segmentation must dominate)");
  }
}

AblationFlags AblationFlags::variant(int index) {
  switch (index) {
    case 1: return {false, false, false};
    case 2: return {true, false, false};
    case 3: return {true, true, false};
    case 4: return {true, false, true};
    case 5: return {true, true, true};
    default: throw ConfigError("ablation variant must be 1..5, got " + std::to_string(index));
  }
}

LossWeights renormalize(const LossWeights& w, const AblationFlags& flags) {
  LossWeights r = w;
  if (!flags.gland) r.beta = 0.0f;
  if (!flags.size) r.gamma = 0.0f;
  if (!flags.reconstruction) r.eta = 0.0f;
  const double total = static_cast<double>(r.alpha) + r.beta + r.gamma + r.eta;
  if (total <= 0.0) throw ConfigError("all loss weights are zero");
  if (total == 1.0) return r;
  r.alpha = static_cast<float>(r.alpha / total);
  r.beta = static_cast<float>(r.beta / total);
  r.gamma = static_cast<float>(r.gamma / total);
  r.eta = static_cast<float>(r.eta / total);
  return r;
}

Tensor total_loss(const Tensor& l_nodule, const Tensor& l_gland, const Tensor& l_size, const Tensor& l_rec,
                  const LossWeights& w) {
  Tensor acc;
  auto term = [&](const Tensor& l, float weight) {
    if (!l.defined()) return;
    const Tensor t = mul_scalar(reshape(l, {}), weight);
    acc = acc.defined() ? add(acc, t) : t;
  };
  term(l_nodule, w.alpha);
  term(l_gland, w.beta);
  term(l_size, w.gamma);
  term(l_rec, w.eta);
  if (!acc.defined()) throw ContractError("total_loss needs at least one component");
  return acc;
}

}  // namespace ssmt
