#include "ssmt/heads.hpp"

#include <algorithm>
#include <cmath>

#include "ssmt/errors.hpp"
#include "ssmt/ops.hpp"

namespace ssmt {

SizeHead::SizeHead(ParameterSet& ps, const std::string& prefix, int dim)
    : fc1_(ps, prefix + ".fc1", dim, dim), fc2_(ps, prefix + ".fc2", dim, 1) {}

Tensor SizeHead::logit(const Tensor& pooled) const {
  const Tensor f = reshape(pooled, {1, static_cast<int>(pooled.numel())});
  return reshape(fc2_(gelu(fc1_(f))), {1});
}

Tensor SizeHead::operator()(const Tensor& pooled) const { return sigmoid(logit(pooled)); }

ReconstructionDecoder::ReconstructionDecoder(ParameterSet& ps, const std::string& prefix, const EncoderConfig& encoder)
    : encoder_(encoder) {
  const int d = encoder_.embed_dim;
  proj_ = Conv(ps, prefix + ".proj", encoder_.cnn_channels.back(), d, 1);
  int h = encoder_.grid_h(), w = encoder_.grid_w(), cin = d, i = 0;
  while (h < encoder_.image_h || w < encoder_.image_w) {
    h = std::min(2 * h, encoder_.image_h);
    w = std::min(2 * w, encoder_.image_w);
    const int cout = std::max(4, d >> (i + 1));
    steps_.push_back(Conv(ps, prefix + ".up" + std::to_string(i), cin, cout, 3, 1, std::sqrt(2.0f)));
    cin = cout;
    ++i;
  }
  head_ = Conv(ps, prefix + ".head", cin, encoder_.in_channels, 3, 1, 0.1f);
}

Tensor ReconstructionDecoder::operator()(const Tensor& cnn_final, const Tensor& transformer_map) const {
  const int gh = transformer_map.dim(1), gw = transformer_map.dim(2);
  Tensor c = proj_(cnn_final);
  if (c.dim(1) != gh || c.dim(2) != gw) c = resample2d(c, gh, gw, ResampleMode::bilinear);
  if (c.shape() != transformer_map.shape()) {
    throw DimensionError("reconstruction: projected CNN map " + shape_str(c.shape()) + " does not match F_T " +
                         shape_str(transformer_map.shape()));
  }
  Tensor x = add(c, transformer_map);
  int h = gh, w = gw;
  for (const Conv& step : steps_) {
    h = std::min(2 * h, encoder_.image_h);
    w = std::min(2 * w, encoder_.image_w);
    x = relu(step(resample2d(x, h, w, ResampleMode::bilinear)));
  }
  return head_(x);
}

}  // namespace ssmt
