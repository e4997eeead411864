#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ssmt/image.hpp"

namespace ssmt {

/// One ultrasound frame with optional nodule and gland annotations.
///
/// Masks hold only {0,1}. When a nodule mask is present size_label equals
/// its foreground fraction.
struct UltrasoundSample {
  std::string id;
  Image image;
  std::optional<Image> nodule_mask;
  std::optional<Image> gland_mask;
  std::optional<float> size_label;
};

/// Foreground pixel count over total pixel count. Throws ContractError on
/// values other than 0 and 1.
float compute_size_label(const Image& nodule_mask);

// Recomputes size_label from the nodule mask (or clears it).
void refresh_size_label(UltrasoundSample& sample);

/// Bilinear resize followed by per-image min-max normalization to [0,1].
/// A constant image normalizes to all zeros.
Image normalize_resize(const Image& image, int target_h, int target_w);

/// Nearest-neighbour resize, re-binarized at 0.5.
Image resize_mask(const Image& mask, int target_h, int target_w);
Image binarize(const Image& image, float threshold = 0.5f);

enum class Split { train, test, unlabeled };
std::string to_string(Split split);
Split parse_split(const std::string& text);

struct ManifestRecord {
  std::string stem;
  std::filesystem::path image;
  std::optional<std::filesystem::path> nodule_mask;
  std::optional<std::filesystem::path> gland_mask;
  Split split = Split::train;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;

  std::size_t size() const { return records.size(); }
  DatasetManifest filter(Split split) const;
  DatasetManifest labeled() const;  // records carrying a nodule mask
};

/// `flat`:  <root>/image, <root>/mask_nodule, <root>/mask_gland.
/// `split`: the flat layout under <root>/train and <root>/test.
enum class DatasetLayout { flat, split };

/// Scans a dataset directory. Records are sorted by stem; images without any
/// mask are tagged unlabeled. A mask whose stem has no image is a
/// ManifestError.
DatasetManifest load_dataset(const std::filesystem::path& root, DatasetLayout layout = DatasetLayout::flat);

// One JSON object per line: stem, image, nodule_mask, gland_mask, split.
std::string manifest_to_jsonl(const DatasetManifest& manifest);
void write_manifest_jsonl(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest_jsonl(const std::filesystem::path& path);

/// Writes samples in the flat layout as 8-bit PGM files named by id and
/// returns the manifest of what was written.
DatasetManifest write_dataset(const std::filesystem::path& root, const std::vector<UltrasoundSample>& samples);

/// Reads one record at the model resolution.
UltrasoundSample load_sample(const ManifestRecord& record, int target_h, int target_w);
std::vector<UltrasoundSample> load_samples(const DatasetManifest& manifest, int target_h, int target_w);

}  // namespace ssmt
