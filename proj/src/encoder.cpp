#include "ssmt/encoder.hpp"

#include <cmath>

#include "ssmt/errors.hpp"
#include "ssmt/ops.hpp"

namespace ssmt {

void EncoderConfig::validate() const {
  if (patch < 1 || image_h < 1 || image_w < 1) throw ConfigError("encoder sizes must be positive");
  if (image_h % patch || image_w % patch) {
    throw ConfigError("image " + std::to_string(image_h) + "x" + std::to_string(image_w) +
                      " is not divisible by patch size " + std::to_string(patch));
  }
  if (in_channels < 1 || embed_dim < 1 || layers < 0 || heads < 1 || mlp_ratio < 1) {
    throw ConfigError("encoder dimensions must be positive");
  }
  if (embed_dim % heads) throw ConfigError("embed_dim must be divisible by heads");
  if (cnn_channels.empty()) throw ConfigError("CNN branch needs at least one stage");
  for (int c : cnn_channels)
    if (c < 1) throw ConfigError("CNN channel counts must be positive");
  const int stride = 1 << cnn_channels.size();
  if (image_h < stride || image_w < stride) throw ConfigError("input smaller than the CNN branch's total stride");
}

namespace {

std::vector<int> patch_index(int c, int h, int w, int p) {
  if (p < 1 || h % p || w % p) {
    throw DimensionError("image " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by patch " +
                         std::to_string(p));
  }
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(c) * h * w);
  for (int gy = 0; gy < h / p; ++gy)
    for (int gx = 0; gx < w / p; ++gx)
      for (int py = 0; py < p; ++py)
        for (int px = 0; px < p; ++px)
          for (int ch = 0; ch < c; ++ch) idx.push_back((ch * h + gy * p + py) * w + gx * p + px);
  return idx;
}

}  // namespace

Tensor patchify(const Tensor& x, int patch) {
  if (x.rank() != 3) throw DimensionError("patchify expects C x H x W, got " + shape_str(x.shape()));
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::vector<int> idx = patch_index(c, h, w, patch);
  return gather(x, idx, {(h / patch) * (w / patch), patch * patch * c});
}

Tensor unpatchify(const Tensor& patches, int channels, int height, int width, int patch) {
  const std::vector<int> fwd = patch_index(channels, height, width, patch);
  if (patches.numel() != static_cast<std::int64_t>(fwd.size())) {
    throw DimensionError("unpatchify: " + shape_str(patches.shape()) + " does not hold a " + std::to_string(channels) +
                         "x" + std::to_string(height) + "x" + std::to_string(width) + " image");
  }
  std::vector<int> inv(fwd.size());
  for (std::size_t i = 0; i < fwd.size(); ++i) inv[static_cast<std::size_t>(fwd[i])] = static_cast<int>(i);
  return gather(patches, inv, {channels, height, width});
}

Tensor embed(const Tensor& patches, const Tensor& e, const Tensor& e_pos) {
  if (e_pos.rank() != 2 || e_pos.dim(0) != patches.dim(0)) {
    throw DimensionError("position table " + shape_str(e_pos.shape()) + " does not match " +
                         std::to_string(patches.dim(0)) + " patches");
  }
  return add(matmul(patches, e), e_pos);
}

Tensor multi_head_attention(const Tensor& x, const AttentionParams& p, int heads, std::vector<Tensor>* weights) {
  const int d = x.dim(1), dh = d / heads;
  const Tensor q = p.q(x), k = p.k(x), v = p.v(x);
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<Tensor> outs;
  for (int h = 0; h < heads; ++h) {
    const Tensor qh = slice(q, 1, h * dh, dh), kh = slice(k, 1, h * dh, dh), vh = slice(v, 1, h * dh, dh);
    Tensor a = softmax(mul_scalar(matmul(qh, transpose(kh)), scale), 1);
    if (weights) weights->push_back(a);
    outs.push_back(matmul(a, vh));
  }
  return p.out(heads == 1 ? outs[0] : concat(outs, 1));
}

TransformerLayer::TransformerLayer(ParameterSet& ps, const std::string& name, int dim, int mlp_ratio)
    : ln1(ps, name + ".ln1", dim), ln2(ps, name + ".ln2", dim) {
  attn.q = Linear(ps, name + ".attn.q", dim, dim);
  attn.k = Linear(ps, name + ".attn.k", dim, dim);
  attn.v = Linear(ps, name + ".attn.v", dim, dim);
  attn.out = Linear(ps, name + ".attn.out", dim, dim);
  fc1 = Linear(ps, name + ".mlp.fc1", dim, dim * mlp_ratio);
  fc2 = Linear(ps, name + ".mlp.fc2", dim * mlp_ratio, dim);
}

Tensor TransformerLayer::operator()(const Tensor& z, int heads, std::vector<Tensor>* weights) const {
  const Tensor z1 = add(multi_head_attention(ln1(z), attn, heads, weights), z);
  return add(fc2(gelu(fc1(ln2(z1)))), z1);
}


Encoder::Encoder(ParameterSet& ps, const EncoderConfig& config, const std::string& prefix) : config_(config) {
  config_.validate();
  const int pdim = config_.patch * config_.patch * config_.in_channels, d = config_.embed_dim;
  e_ = ps.add(prefix + ".patch.E", {pdim, d}, Init::fan_in(pdim));
  e_pos_ = ps.add(prefix + ".patch.E_pos", {config_.tokens(), d}, Init::normal(0.02f));
  for (int l = 0; l < config_.layers; ++l) {
    layers_.emplace_back(ps, prefix + ".layer" + std::to_string(l), d, config_.mlp_ratio);
  }
  int cin = config_.in_channels;
  for (std::size_t s = 0; s < config_.cnn_channels.size(); ++s) {
    const int c = config_.cnn_channels[s];
    const std::string n = prefix + ".cnn.stage" + std::to_string(s);
    const float he = std::sqrt(2.0f);
    stages_.push_back({Conv(ps, n + ".down", cin, c, 3, 2, he, false), Conv(ps, n + ".conv", c, c, 3, 1, he, false)});
    cin = c;
  }
}

std::vector<Tensor> Encoder::cnn_encode(const Tensor& x) const {
  const int stride = 1 << stages_.size();
  if (x.rank() != 3 || x.dim(1) < stride || x.dim(2) < stride) {
    throw DimensionError("CNN branch input " + shape_str(x.shape()) + " smaller than total stride " +
                         std::to_string(stride));
  }
  std::vector<Tensor> skips;
  Tensor h = x;
  for (const CnnStage& s : stages_) {
    h = relu(instance_norm(s.conv(relu(instance_norm(s.down(h))))));
    skips.push_back(h);
  }
  return skips;
}

Tensor Encoder::transformer(const Tensor& x, std::vector<Tensor>* attention) const {
  Tensor z = embed(patchify(x, config_.patch), e_, e_pos_);
  for (const TransformerLayer& layer : layers_) z = layer(z, config_.heads, attention);
  return z;
}

EncoderOutput Encoder::operator()(const Tensor& x, std::vector<Tensor>* attention) const {
  const Shape expect{config_.in_channels, config_.image_h, config_.image_w};
  if (x.shape() != expect) {
    throw DimensionError("encoder expects input " + shape_str(expect) + ", got " + shape_str(x.shape()));
  }
  EncoderOutput out;
  out.cnn_skips = cnn_encode(x);
  out.tokens = transformer(x, attention);
  out.transformer_map = reshape(transpose(out.tokens), {config_.embed_dim, config_.grid_h(), config_.grid_w()});
  out.pooled = mean_rows(out.tokens);
  return out;
}

}  // namespace ssmt
