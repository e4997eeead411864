#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ssmt/data.hpp"
#include "ssmt/model.hpp"

namespace ssmt {

struct ImageScore {
  std::string id;
  double iou = 0.0;
  double dsc = 0.0;
};

/// Scores of one trained model (one seed) over a dataset.
struct SeedScore {
  std::string label;               // checkpoint path or seed name
  std::vector<ImageScore> images;  // sorted by id
  double iou = 0.0;                // dataset means
  double dsc = 0.0;
  int excluded = 0;                // images without a nodule mask
};

/// What the reported standard deviation runs over.
enum class Spread { seeds, images };

struct MetricReport {
  std::vector<SeedScore> seeds;
  Spread spread = Spread::seeds;
  double iou_mean = 0.0, iou_std = 0.0;  // fractions in [0,1]
  double dsc_mean = 0.0, dsc_std = 0.0;
  int images = 0;    // scored images per seed
  int excluded = 0;  // per seed

  /// "metric,mean,std,seeds,images,excluded" with percentages to two decimals.
  std::string to_csv() const;
  /// checkpoint,id,iou,dsc for every scored image.
  std::string per_image_csv() const;
};

/// "78.34 ± 0.15" from fractions.
std::string format_percent(double mean, double std);
double population_std(const std::vector<double>& values);

/// Hard nodule predictions (soft mask > 0.5) scored per image. Images are
/// evaluated in parallel; results are reduced in id order, so the outcome is
/// invariant to the order of `samples`.
SeedScore score_model(const SsmtNet& model, const std::vector<UltrasoundSample>& samples,
                      const std::string& label = "");

/// Mean over seeds; std across seed means (population) or across all
/// per-image scores pooled over seeds.
MetricReport aggregate(std::vector<SeedScore> seeds, Spread spread = Spread::seeds);

/// Loads each checkpoint (one per seed) and scores `samples` at its input
/// resolution.
MetricReport evaluate(const std::vector<std::filesystem::path>& checkpoints, const DatasetManifest& manifest,
                      Spread spread = Spread::seeds);

struct InferOutputs {
  std::filesystem::path nodule_mask, gland_mask, overlay;
  int height = 0, width = 0;
  std::vector<std::uint8_t> nodule;  // at the input's resolution
};

/// Predicts masks for one image file and writes `<stem>_nodule.pgm`,
/// `<stem>_gland.pgm` and `<stem>_overlay.ppm` at the input's resolution.
/// The overlay is the input in gray with the prediction in the red channel
/// and, when given, the ground-truth mask in the green channel.
InferOutputs infer(const SsmtNet& model, const std::filesystem::path& image, const std::filesystem::path& out_dir,
                   const std::optional<std::filesystem::path>& ground_truth = std::nullopt);

}  // namespace ssmt
