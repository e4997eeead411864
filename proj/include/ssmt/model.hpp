#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ssmt/decoder.hpp"
#include "ssmt/encoder.hpp"
#include "ssmt/heads.hpp"

namespace ssmt {

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  std::uint64_t seed = 42;

  void validate() const;
};

// Parameter-name prefixes of the five parameter groups.
namespace groups {
inline const std::string encoder = "encoder.";
inline const std::string nodule_decoder = "nodule_decoder.";
inline const std::string gland_decoder = "gland_decoder.";
inline const std::string size_head = "size_head.";
inline const std::string reconstruction = "reconstruction.";
}  // namespace groups

struct FrozenMasks {
  std::vector<Tensor> nodule, gland;
};

struct ForwardOptions {
  bool nodule = true;
  bool gland = true;
  bool size = true;
  bool reconstruction = true;
  ClassWeighting weighting = ClassWeighting::soft;
  const FrozenMasks* frozen = nullptr;
};

struct ModelOutput {
  EncoderOutput encoder;
  std::optional<DecoderOutput> nodule, gland;
  Tensor size;            // [1], V_pred
  Tensor reconstruction;  // C x H x W
};

/// The desk-scale SSMT-Net: hybrid encoder, nodule and gland decoders, size
/// head and reconstruction decoder over one shared parameter set.
class SsmtNet {
 public:
  explicit SsmtNet(const ModelConfig& config);
  SsmtNet(const SsmtNet&) = delete;
  SsmtNet& operator=(const SsmtNet&) = delete;

  // image is C x H x W.
  ModelOutput forward(const Tensor& image, const ForwardOptions& options = {}) const;
  // Hard-decision nodule and gland masks (H x W in {0,1}) and the size estimate.
  struct Prediction {
    std::vector<float> nodule_prob, gland_prob;
    std::vector<std::uint8_t> nodule, gland;
    float size = 0.0f;
  };
  Prediction predict(const Tensor& image) const;

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  const Encoder& encoder() const { return encoder_; }
  const Decoder& nodule_decoder() const { return nodule_; }
  const Decoder& gland_decoder() const { return gland_; }
  const SizeHead& size_head() const { return size_; }
  const ReconstructionDecoder& reconstruction() const { return rec_; }

 private:
  ModelConfig config_;
  ParameterSet params_;
  Encoder encoder_;
  Decoder nodule_, gland_;
  SizeHead size_;
  ReconstructionDecoder rec_;
};

}  // namespace ssmt
