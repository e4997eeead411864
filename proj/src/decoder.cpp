#include "ssmt/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ssmt/errors.hpp"
#include "ssmt/ops.hpp"

namespace ssmt {

void DecoderConfig::validate() const {
  if (queries < 1) throw ConfigError("decoder needs at least one query");
  if (dim < 1) throw ConfigError("decoder dim must be positive");
  if (iterations < 1) throw ConfigError("decoder needs at least one refinement iteration");
  if (classes < 2) throw ConfigError("decoder needs at least two classes");
  if (!(threshold > 0.0f && threshold < 1.0f)) throw ConfigError("mask threshold must lie in (0,1)");
}

namespace {

Tensor resize_to(const Tensor& x, int h, int w) {
  if (x.dim(1) == h && x.dim(2) == w) return x;
  return resample2d(x, h, w, ResampleMode::bilinear);
}


}  // namespace

Tensor project_features(const Tensor& cnn_finest, const Tensor& transformer_map, const Conv& proj,
                        const LayerNormParams* norm) {
  if (cnn_finest.rank() != 3 || transformer_map.rank() != 3) {
    throw DimensionError("project_features expects C x H x W maps, got " + shape_str(cnn_finest.shape()) + " and " +
                         shape_str(transformer_map.shape()));
  }
  const int h = cnn_finest.dim(1), w = cnn_finest.dim(2);
  if (proj.w.dim(1) != cnn_finest.dim(0) + transformer_map.dim(0)) {
    throw DimensionError("projection expects " + std::to_string(proj.w.dim(1)) + " input channels, got " +
                         std::to_string(cnn_finest.dim(0) + transformer_map.dim(0)));
  }
  const Tensor joined = concat({resize_to(transformer_map, h, w), cnn_finest}, 0);
  const Tensor f = proj(joined);
  Tensor rows = transpose(reshape(f, {f.dim(0), h * w}));
  // Remove the per-channel mean over positions: at initialization it dominates
  // F, which makes every P F^T row nearly constant across the grid.
  rows = add_row_vector(rows, mul_scalar(mean_rows(rows), -1.0f));
  return norm ? (*norm)(rows) : rows;
}

MaskStep mask_from_queries(const Tensor& queries, const Tensor& features, float threshold) {
  MaskStep step;
  step.soft = sigmoid(matmul(queries, transpose(features)));
  std::vector<float> z(step.soft.data().size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = step.soft.data()[i] > threshold ? 1.0f : 0.0f;
  step.hard = Tensor::from(step.soft.shape(), std::move(z));
  return step;
}

Tensor attention_mask(const Tensor& z) {
  const int rows = z.dim(0), cols = z.dim(1);
  std::vector<float> h(static_cast<std::size_t>(rows) * cols, 0.0f);
  for (int r = 0; r < rows; ++r) {
    const float* zr = z.data().data() + static_cast<std::size_t>(r) * cols;
    bool any = false;
    for (int c = 0; c < cols; ++c) any = any || zr[c] == 1.0f;
    if (!any) continue;
    for (int c = 0; c < cols; ++c) {
      if (zr[c] != 1.0f) h[static_cast<std::size_t>(r) * cols + c] = -std::numeric_limits<float>::infinity();
    }
  }
  return Tensor::from(z.shape(), std::move(h));
}

Tensor refine_queries(const Tensor& queries, const Tensor& features, const Tensor& z, const RefineWeights& w,
                      Tensor* weights) {
  // (P Wq)(F Wk)^T = ((P Wq) Wk^T) F^T and A (F Wv) = (A F) Wv: same products,
  // associated so the G x d feature matrix is never multiplied by d x d.
  const Tensor logits = matmul(matmul(matmul(queries, w.wq), transpose(w.wk)), transpose(features));
  const Tensor a = softmax(add(logits, attention_mask(z)), 1);
  if (weights) *weights = a;
  return add(queries, matmul(matmul(a, features), w.wv));
}

std::vector<int> argmax_rows(const Tensor& scores) {
  const int rows = scores.dim(0), k = scores.dim(1);
  std::vector<int> out(static_cast<std::size_t>(rows), 0);
  for (int r = 0; r < rows; ++r) {
    const float* s = scores.data().data() + static_cast<std::size_t>(r) * k;
    for (int c = 1; c < k; ++c)
      if (s[c] > s[out[static_cast<std::size_t>(r)]]) out[static_cast<std::size_t>(r)] = c;
  }
  return out;
}

Tensor foreground_weights(const Tensor& scores, ClassWeighting mode) {
  const std::vector<int> labels = argmax_rows(scores);
  std::vector<float> w(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) w[i] = labels[i] == 1 ? 1.0f : 0.0f;
  if (!w.empty() && std::none_of(w.begin(), w.end(), [](float v) { return v == 1.0f; })) {
    // No query claims the foreground: keep the one with the largest foreground
    // margin, so a selected map always exists and receives gradient.
    const int k = scores.dim(1);
    std::size_t best = 0;
    for (std::size_t i = 1; i < w.size(); ++i) {
      const float mi = scores.at(static_cast<std::int64_t>(i) * k + 1) - scores.at(static_cast<std::int64_t>(i) * k);
      const float mb = scores.at(static_cast<std::int64_t>(best) * k + 1) - scores.at(static_cast<std::int64_t>(best) * k);
      if (mi > mb) best = i;
    }
    w[best] = 1.0f;
  }
  if (mode == ClassWeighting::hard) return Tensor::from({scores.dim(0), 1}, std::move(w));
  const Tensor p = slice(softmax(scores, 1), 1, 1, 1);
  if (mode == ClassWeighting::soft) return p;
  // Hard indicator forward, softmax derivative backward.
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= p.data()[i];
  return add(p, Tensor::from(p.shape(), std::move(w)));
}

Tensor assemble_segmentation(const Tensor& soft_maps, const Tensor& fg_weights, int grid_h, int grid_w,
                             const Tensor& cnn_logits) {
  const int h = cnn_logits.dim(1), w = cnn_logits.dim(2);
  // (N_q x 1)^T (N_q x G) sums the selected query maps.
  const Tensor summed = clamp(matmul(transpose(fg_weights), soft_maps), 0.0f, 1.0f);
  const Tensor query_map = resample2d(reshape(summed, {grid_h, grid_w}), h, w, ResampleMode::bilinear);
  const Tensor cnn_map = sigmoid(reshape(cnn_logits, {h, w}));
  return mul_scalar(add(query_map, cnn_map), 0.5f);
}

Decoder::Decoder(ParameterSet& ps, const std::string& prefix, const DecoderConfig& config, const EncoderConfig& encoder)
    : config_(config), encoder_(encoder) {
  config_.validate();
  const int d = config_.dim;
  const std::vector<int>& ch = encoder_.cnn_channels;
  proj_ = Conv(ps, prefix + ".proj", ch.front() + encoder_.embed_dim, d, 1, 1, 1.0f, false);
  // Unit-variance features and 1/sqrt(d) queries keep P F^T near unit scale.
  norm_ = LayerNormParams(ps, prefix + ".proj_norm", d);
  p0_ = ps.add(prefix + ".queries", {config_.queries, d}, Init::fan_in(d));
  for (int t = 0; t < config_.iterations; ++t) {
    const std::string n = prefix + ".refine" + std::to_string(t);
    refine_.push_back({ps.add(n + ".wq", {d, d}, Init::fan_in(d)), ps.add(n + ".wk", {d, d}, Init::fan_in(d)),
                       ps.add(n + ".wv", {d, d}, Init::fan_in(d, 0.5f))});
  }
  fc_ = ps.add(prefix + ".fc", {d, config_.classes}, Init::fan_in(d));
  // U-Net path: the coarsest skip joined with F_T, then one conv per finer skip.
  const float he = std::sqrt(2.0f);
  int cin = ch.back() + encoder_.embed_dim;
  for (int s = static_cast<int>(ch.size()) - 2; s >= 0; --s) {
    up_.push_back(Conv(ps, prefix + ".cnn.up" + std::to_string(s), cin + ch[static_cast<std::size_t>(s)],
                       ch[static_cast<std::size_t>(s)], 3, 1, he, false));
    cin = ch[static_cast<std::size_t>(s)];
  }
  full_ = Conv(ps, prefix + ".cnn.full", cin + encoder_.in_channels, ch.front(), 3, 1, he, false);
  head_ = Conv(ps, prefix + ".cnn.head", ch.front(), 1, 3);
}

Tensor Decoder::cnn_path(const EncoderOutput& enc, const Tensor& image) const {
  const std::vector<Tensor>& skips = enc.cnn_skips;
  const Tensor& bottom = skips.back();
  Tensor h = concat({bottom, resize_to(enc.transformer_map, bottom.dim(1), bottom.dim(2))}, 0);
  std::size_t k = 0;
  for (int s = static_cast<int>(skips.size()) - 2; s >= 0; --s, ++k) {
    const Tensor& skip = skips[static_cast<std::size_t>(s)];
    h = relu(instance_norm(up_[k](concat({resize_to(h, skip.dim(1), skip.dim(2)), skip}, 0))));
  }
  h = relu(instance_norm(full_(concat({resize_to(h, image.dim(1), image.dim(2)), image}, 0))));
  return head_(h);
}

DecoderOutput Decoder::operator()(const EncoderOutput& enc, const Tensor& image, ClassWeighting weighting,
                                  const std::vector<Tensor>* frozen_masks) const {
  DecoderOutput out;
  const Tensor& finest = enc.cnn_skips.front();
  out.features = project_features(finest, enc.transformer_map, proj_, &norm_);
  Tensor p = p0_;
  out.queries.push_back(p);
  auto step = [&](int t) {
    MaskStep m = mask_from_queries(p, out.features, config_.threshold);
    if (frozen_masks) m.hard = frozen_masks->at(static_cast<std::size_t>(t));
    out.history.push_back(m);
  };
  step(0);
  for (int t = 0; t < config_.iterations; ++t) {
    Tensor a;
    p = refine_queries(p, out.features, out.history.back().hard, refine_[static_cast<std::size_t>(t)], &a);
    out.attention.push_back(a);
    out.queries.push_back(p);
    step(t + 1);
  }
  out.scores = matmul(p, fc_);
  out.labels = argmax_rows(out.scores);
  out.cnn_logits = cnn_path(enc, image);
  out.mask = assemble_segmentation(out.history.back().soft, foreground_weights(out.scores, weighting), finest.dim(1),
                                   finest.dim(2), out.cnn_logits);
  return out;
}

}  // namespace ssmt
