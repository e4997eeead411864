#pragma once

#include <string>
#include <vector>

#include "ssmt/encoder.hpp"

namespace ssmt {

/// V_pred = sigmoid(MLP(f)) with one hidden layer of width d_enc.
class SizeHead {
 public:
  SizeHead() = default;
  SizeHead(ParameterSet& ps, const std::string& prefix, int dim);

  Tensor logit(const Tensor& pooled) const;  // pre-sigmoid, shape [1]
  Tensor operator()(const Tensor& pooled) const;

  const Linear& fc1() const { return fc1_; }
  const Linear& fc2() const { return fc2_; }

 private:
  Linear fc1_, fc2_;
};

/// I_rec = D_REC(proj(F_C) + F_T): the last CNN stage is brought to F_T's grid
/// and width by a 1x1 projection, then upsampled by repeated doubling with a
/// 3x3 conv per step. No output activation.
class ReconstructionDecoder {
 public:
  ReconstructionDecoder() = default;
  ReconstructionDecoder(ParameterSet& ps, const std::string& prefix, const EncoderConfig& encoder);

  Tensor operator()(const Tensor& cnn_final, const Tensor& transformer_map) const;

 private:
  EncoderConfig encoder_;
  Conv proj_;
  std::vector<Conv> steps_;
  Conv head_;
};

}  // namespace ssmt
