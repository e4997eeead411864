#include "ssmt/model_check.hpp"

#include "ssmt/losses.hpp"
#include "ssmt/ops.hpp"
#include "ssmt/phantom.hpp"
#include "ssmt/training.hpp"

namespace ssmt {

ModelConfig gradcheck_model_config() {
  ModelConfig c;
  c.encoder.image_h = c.encoder.image_w = 16;
  c.encoder.patch = 4;
  c.encoder.embed_dim = 8;
  c.encoder.heads = 2;
  c.encoder.layers = 2;
  c.encoder.mlp_ratio = 1;
  c.encoder.cnn_channels = {4, 8};
  c.decoder.queries = 4;
  c.decoder.dim = 8;
  c.decoder.iterations = 3;
  return c;
}

ModelGradCheck model_gradient_checks(const ModelConfig& config, double tolerance, const GradCheckOptions& options) {
  SsmtNet model(config);
  PhantomConfig pc;
  pc.height = config.encoder.image_h;
  pc.width = config.encoder.image_w;
  pc.nodule_radius_min = 0.12;
  pc.nodule_radius_max = 0.2;
  pc.seed = config.seed;
  const UltrasoundSample s = generate_phantoms(pc, 1).front();
  const Tensor x = image_tensor(s);
  const Tensor nodule = Tensor::from({s.image.height, s.image.width}, s.nodule_mask->pixels);
  const Tensor gland = Tensor::from({s.image.height, s.image.width}, s.gland_mask->pixels);
  const float label = *s.size_label;

  FrozenMasks frozen;
  {
    NoGradGuard no_grad;
    const ModelOutput out = model.forward(x);
    for (const auto& m : out.nodule->history) frozen.nodule.push_back(m.hard);
    for (const auto& m : out.gland->history) frozen.gland.push_back(m.hard);
  }
  ForwardOptions opts;
  opts.frozen = &frozen;
  const LossWeights w;
  auto loss_fn = [&] {
    const ModelOutput out = model.forward(x, opts);
    return total_loss(dice_loss(out.nodule->mask, nodule), dice_loss(out.gland->mask, gland),
                      size_loss(out.size, label), charbonnier(out.reconstruction, x), w);
  };
  std::vector<Tensor> inputs;
  for (const auto& p : model.params().all()) inputs.push_back(p.tensor);
  const std::vector<GradientComparison> parts = compare_gradients(loss_fn, inputs, options);
  ModelGradCheck out;
  out.total = {"total_loss", pooled_rel_error(parts), tolerance, 0};
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& p = model.params().all()[i];
    const int probes = options.max_probes_per_tensor > 0
                           ? static_cast<int>(std::min<std::int64_t>(options.max_probes_per_tensor, p.tensor.numel()))
                           : static_cast<int>(p.tensor.numel());
    out.tensors.push_back({p.name, parts[i].rel_err(), tolerance, probes});
    out.total.probes += probes;
  }
  return out;
}

}  // namespace ssmt
