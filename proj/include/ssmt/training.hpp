#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ssmt/augment.hpp"
#include "ssmt/checkpoint.hpp"
#include "ssmt/data.hpp"
#include "ssmt/losses.hpp"
#include "ssmt/model.hpp"

namespace ssmt {

enum class Phase { pretrain, supervised };
std::string to_string(Phase phase);

struct PhaseConfig {
  Phase phase = Phase::supervised;
  int epochs = 300;
  int max_steps = 0;  // 0 = epochs * ceil(n / batch_size)
  int batch_size = 32;
  float lr0 = 1e-3f;
  float lr_min = 1e-6f;
  float weight_decay = 0.01f;
  std::uint64_t seed = 42;
  bool augment = true;
  AugmentationConfig augmentation;

  void validate() const;  // throws ConfigError
};

inline constexpr const char* kMetricsHeader =
    "epoch,step,lr,loss_total,loss_nodule,loss_gland,loss_size,loss_rec,val_iou,val_dsc";

/// One metrics-CSV row. Component losses are epoch means with disabled terms
/// left empty; loss_total equals their weighted sum.
struct EpochLog {
  int epoch = 0;
  std::int64_t step = 0;
  float lr = 0.0f;
  double loss_total = 0.0;
  std::optional<double> loss_nodule, loss_gland, loss_size, loss_rec;
  std::optional<double> val_iou, val_dsc;

  std::string csv_row() const;
};

struct TrainState {
  Phase phase = Phase::supervised;
  int epoch = 0;           // completed epochs
  std::int64_t step = 0;   // completed optimizer steps
  double best_val_dsc = -1.0;
  std::vector<EpochLog> log;
  std::vector<double> step_losses;  // batch-mean total loss per step
};

struct TrainIo {
  std::filesystem::path out_dir;  // empty: no files written
  std::filesystem::path resume;   // checkpoint to continue from
  int stop_after_epoch = 0;       // > 0: return once this epoch completes, as if interrupted
  std::function<void(const EpochLog&)> on_epoch;
};

/// Phase 1: reconstruction only. Every image is used, masks are ignored, and
/// only encoder and reconstruction parameters are optimized.
TrainState run_pretrain(SsmtNet& model, const std::vector<UltrasoundSample>& images, const PhaseConfig& config,
                        const TrainIo& io = {});

/// Phase 2: joint optimization of the enabled branches with renormalized
/// weights. Every training sample needs a nodule mask.
TrainState run_supervised(SsmtNet& model, const std::vector<UltrasoundSample>& train,
                          const std::vector<UltrasoundSample>& validation, const PhaseConfig& config,
                          const LossWeights& weights, const AblationFlags& flags, const TrainIo& io = {});

/// Mean Charbonnier reconstruction loss over `images` (no augmentation).
double mean_reconstruction_loss(const SsmtNet& model, const std::vector<UltrasoundSample>& images);

struct SegmentationScore {
  double iou = 0.0;
  double dsc = 0.0;
  int images = 0;    // images with a nodule mask
  int excluded = 0;  // images without one
};
/// Mean nodule IoU/DSC of hard predictions.
SegmentationScore score_nodules(const SsmtNet& model, const std::vector<UltrasoundSample>& samples);

Tensor image_tensor(const UltrasoundSample& sample);

// Model parameters plus a "meta.model" tensor describing the architecture.
std::vector<NamedTensor> model_state(const SsmtNet& model);
ModelConfig model_config_from(const std::vector<NamedTensor>& tensors);
void load_model_state(SsmtNet& model, const std::vector<NamedTensor>& tensors);
std::unique_ptr<SsmtNet> load_model(const std::filesystem::path& checkpoint);

/// Deterministic 80/20 validation assignment by stem hash.
bool is_validation_stem(const std::string& stem);

}  // namespace ssmt
