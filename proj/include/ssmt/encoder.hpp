#pragma once

#include <string>
#include <vector>

#include "ssmt/params.hpp"

namespace ssmt {

struct EncoderConfig {
  int image_h = 64;
  int image_w = 64;
  int in_channels = 1;
  int patch = 8;
  int embed_dim = 32;
  int layers = 2;
  int heads = 4;
  int mlp_ratio = 4;
  std::vector<int> cnn_channels{8, 16, 32};

  int grid_h() const { return image_h / patch; }
  int grid_w() const { return image_w / patch; }
  int tokens() const { return grid_h() * grid_w(); }
  void validate() const;  // throws ConfigError
};

struct EncoderOutput {
  Tensor tokens;                  // z_L, N x d_enc
  std::vector<Tensor> cnn_skips;  // F_C, finest first, each C_s x H_s x W_s
  Tensor transformer_map;         // F_T, d_enc x (H/P) x (W/P)
  Tensor pooled;                  // f, d_enc
};

/// Patch sequence of x[C x H x W]: N = HW/P^2 rows in row-major patch order,
/// each row the patch flattened as (py, px, c).
Tensor patchify(const Tensor& x, int patch);
Tensor unpatchify(const Tensor& patches, int channels, int height, int width, int patch);

/// z_0 = patches E + E_pos
Tensor embed(const Tensor& patches, const Tensor& e, const Tensor& e_pos);

struct AttentionParams {
  Linear q, k, v, out;
};

/// Multi-head scaled dot-product self-attention over the rows of x. When
/// `weights` is given, each head's attention matrix is appended.
Tensor multi_head_attention(const Tensor& x, const AttentionParams& p, int heads, std::vector<Tensor>* weights = nullptr);

struct TransformerLayer {
  LayerNormParams ln1, ln2;
  AttentionParams attn;
  Linear fc1, fc2;

  TransformerLayer() = default;
  TransformerLayer(ParameterSet& ps, const std::string& name, int dim, int mlp_ratio);
  // z' = MSA(LN(z)) + z ; z_out = MLP(LN(z')) + z'
  Tensor operator()(const Tensor& z, int heads, std::vector<Tensor>* weights = nullptr) const;
};

struct CnnStage {
  Conv down, conv;
};

/// Hybrid encoder: a ViT over raw image patches plus a parallel strided CNN
/// whose stage outputs serve as skip features.
class Encoder {
 public:
  Encoder() = default;
  Encoder(ParameterSet& ps, const EncoderConfig& config, const std::string& prefix = "encoder");

  // x is C x H x W matching the configured size.
  EncoderOutput operator()(const Tensor& x, std::vector<Tensor>* attention = nullptr) const;
  std::vector<Tensor> cnn_encode(const Tensor& x) const;
  Tensor transformer(const Tensor& x, std::vector<Tensor>* attention = nullptr) const;

  const EncoderConfig& config() const { return config_; }
  Tensor patch_projection() const { return e_; }
  Tensor position_table() const { return e_pos_; }
  const std::vector<TransformerLayer>& layers() const { return layers_; }

 private:
  EncoderConfig config_;
  Tensor e_, e_pos_;
  std::vector<TransformerLayer> layers_;
  std::vector<CnnStage> stages_;
};

}  // namespace ssmt
