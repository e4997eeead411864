#include "ssmt/model.hpp"

#include "ssmt/errors.hpp"
#include "ssmt/ops.hpp"

namespace ssmt {

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
}

SsmtNet::SsmtNet(const ModelConfig& config)
    : config_(config),
      params_(config.seed),
      encoder_((config_.validate(), params_), config_.encoder, "encoder"),
      nodule_(params_, "nodule_decoder", config_.decoder, config_.encoder),
      gland_(params_, "gland_decoder", config_.decoder, config_.encoder),
      size_(params_, "size_head", config_.encoder.embed_dim),
      rec_(params_, "reconstruction", config_.encoder) {}

ModelOutput SsmtNet::forward(const Tensor& image, const ForwardOptions& options) const {
  ModelOutput out;
  out.encoder = encoder_(image);
  const EncoderOutput& e = out.encoder;
  if (options.nodule) {
    out.nodule = nodule_(e, image, options.weighting, options.frozen ? &options.frozen->nodule : nullptr);
  }
  if (options.gland) {
    out.gland = gland_(e, image, options.weighting, options.frozen ? &options.frozen->gland : nullptr);
  }
  if (options.size) out.size = size_(e.pooled);
  if (options.reconstruction) out.reconstruction = rec_(e.cnn_skips.back(), e.transformer_map);
  return out;
}

SsmtNet::Prediction SsmtNet::predict(const Tensor& image) const {
  NoGradGuard no_grad;
  ForwardOptions opts;
  opts.reconstruction = false;
  opts.weighting = ClassWeighting::hard;
  const ModelOutput out = forward(image, opts);
  Prediction p;
  auto fill = [](const Tensor& m, std::vector<float>& prob, std::vector<std::uint8_t>& hard) {
    prob.assign(m.data().begin(), m.data().end());
    hard.resize(prob.size());
    for (std::size_t i = 0; i < prob.size(); ++i) hard[i] = prob[i] > 0.5f ? 1 : 0;
  };
  fill(out.nodule->mask, p.nodule_prob, p.nodule);
  fill(out.gland->mask, p.gland_prob, p.gland);
  p.size = out.size.item();
  return p;
}

}  // namespace ssmt
