#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ssmt/data.hpp"
#include "ssmt/losses.hpp"
#include "ssmt/model.hpp"
#include "ssmt/phantom.hpp"
#include "ssmt/training.hpp"

namespace ssmt {

/// In-memory phantom dataset. Canvas size follows the model input.
struct PhantomSource {
  PhantomConfig phantom;
  int count = 80;      // labeled phantoms, split 80/20 into train/validation
  int unlabeled = 0;   // further phantoms with masks dropped, used by pretraining only
};

/// Exactly one of root, manifest or phantoms selects the data.
struct DataConfig {
  std::filesystem::path root;
  DatasetLayout layout = DatasetLayout::flat;
  std::filesystem::path manifest;
  std::optional<PhantomSource> phantoms;
};

/// Everything a train or pretrain run needs, parsed from one JSON document
/// with sections model, data, train and ablation.
struct RunConfig {
  ModelConfig model;
  DataConfig data;
  PhaseConfig pretrain;
  PhaseConfig supervised;
  LossWeights weights;
  AblationFlags ablation;
  std::uint64_t seed = 42;

  /// The single seed behind model init, shuffling and augmentation.
  void set_seed(std::uint64_t seed);
  // Throws ConfigError.
  void validate() const;
};

/// Unknown keys, wrong types and constraint violations throw ConfigError.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

struct TrainingData {
  std::vector<UltrasoundSample> train;       // labeled, non-validation
  std::vector<UltrasoundSample> validation;  // labeled, stem hash in the 20% bucket
  std::vector<UltrasoundSample> pretrain;    // train plus unlabeled images
};

/// Test-split records are never used. Labeled records go to validation by
/// stem hash; unlabeled and gland-only records join the pretraining pool.
TrainingData load_training_data(const RunConfig& config);
TrainingData split_training_data(std::vector<UltrasoundSample> samples);

}  // namespace ssmt
