#pragma once

#include <string>
#include <vector>

#include "ssmt/encoder.hpp"

namespace ssmt {

struct DecoderConfig {
  int queries = 4;     // N_q
  int dim = 32;        // d_dec
  int iterations = 3;  // T
  int classes = 2;     // K; class 1 is foreground
  float threshold = 0.5f;

  void validate() const;  // throws ConfigError
};

// How foreground queries are selected when assembling the query-path mask.
enum class ClassWeighting {
  soft,  // weight each query map by its foreground class probability
  hard,  // keep exactly the queries whose argmax class is foreground
  straight_through,  // hard selection forward, soft-probability gradient backward
};

/// F = LN(flatten(proj(concat(resample(F_T), F_C)))) on the grid of
/// `cnn_finest`, returned position-major as G x d_dec. `norm` may be null.
Tensor project_features(const Tensor& cnn_finest, const Tensor& transformer_map, const Conv& proj,
                        const LayerNormParams* norm = nullptr);

struct MaskStep {
  Tensor soft;  // S_t = sigmoid(P_t F^T), N_q x G
  Tensor hard;  // Z_t = [S_t > tau], constant
};

/// S = sigmoid(P F^T) and its strict threshold Z = [S > tau].
MaskStep mask_from_queries(const Tensor& queries, const Tensor& features, float threshold);

/// Additive attention mask: 0 where Z = 1, -inf elsewhere. Rows of Z that are
/// entirely background get 0 everywhere (unmasked attention).
Tensor attention_mask(const Tensor& z);

struct RefineWeights {
  Tensor wq, wk, wv;  // d_dec x d_dec
};

/// P_{t+1} = P_t + softmax((P_t Wq)(F Wk)^T + h(Z_t)) (F Wv). The attention
/// matrix is stored in `weights` when given.
Tensor refine_queries(const Tensor& queries, const Tensor& features, const Tensor& z, const RefineWeights& w,
                      Tensor* weights = nullptr);

/// Row-wise argmax with ties going to the lowest class index.
std::vector<int> argmax_rows(const Tensor& scores);

/// Per-query foreground weight: softmax probability of class 1 (soft) or the
/// 0/1 indicator of argmax == 1 (hard). When no query is foreground the one
/// with the largest O_1 - O_0 margin is selected. Shape N_q x 1.
Tensor foreground_weights(const Tensor& scores, ClassWeighting mode);

/// Sums the weighted query maps, clamps to [0,1], resizes the grid map to
/// out_h x out_w and averages it with sigmoid(cnn_logits).
Tensor assemble_segmentation(const Tensor& soft_maps, const Tensor& fg_weights, int grid_h, int grid_w,
                             const Tensor& cnn_logits);

struct DecoderOutput {
  Tensor mask;                     // H x W probabilities
  Tensor cnn_logits;               // 1 x H x W
  Tensor features;                 // F, G x d_dec
  Tensor scores;                   // O, N_q x K
  std::vector<int> labels;         // argmax of O
  std::vector<MaskStep> history;   // t = 0..T
  std::vector<Tensor> queries;     // P_0..P_T
  std::vector<Tensor> attention;   // per refinement step
};

/// One query-based mask-classification decoder fused with a U-Net style CNN
/// upsampling path over the encoder skips.
class Decoder {
 public:
  Decoder() = default;
  Decoder(ParameterSet& ps, const std::string& prefix, const DecoderConfig& config, const EncoderConfig& encoder);

  // `frozen_masks`, when given, replaces each Z_t by the supplied constant
  // (used to probe the piecewise-smooth loss without mask flips).
  DecoderOutput operator()(const EncoderOutput& enc, const Tensor& image, ClassWeighting weighting,
                           const std::vector<Tensor>* frozen_masks = nullptr) const;

  const DecoderConfig& config() const { return config_; }
  const std::vector<RefineWeights>& refine_weights() const { return refine_; }
  Tensor initial_queries() const { return p0_; }
  Tensor classifier() const { return fc_; }

 private:
  Tensor cnn_path(const EncoderOutput& enc, const Tensor& image) const;

  DecoderConfig config_;
  EncoderConfig encoder_;
  Conv proj_;
  LayerNormParams norm_;
  Tensor p0_, fc_;
  std::vector<RefineWeights> refine_;
  std::vector<Conv> up_;
  Conv full_, head_;
};

}  // namespace ssmt
