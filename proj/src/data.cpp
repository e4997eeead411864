#include "ssmt/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "ssmt/errors.hpp"
#include "ssmt/ops.hpp"

namespace fs = std::filesystem;

namespace ssmt {

float compute_size_label(const Image& nodule_mask) {
  if (nodule_mask.empty()) throw DimensionError("compute_size_label on an empty mask");
  std::size_t fg = 0;
  for (float v : nodule_mask.pixels) {
    if (v == 1.0f) {
      ++fg;
    } else if (v != 0.0f) {
      throw ContractError("compute_size_label: mask value " + std::to_string(v) + " is not binary");
    }
  }
  return static_cast<float>(static_cast<double>(fg) / static_cast<double>(nodule_mask.size()));
}

void refresh_size_label(UltrasoundSample& sample) {
  if (sample.nodule_mask) {
    sample.size_label = compute_size_label(*sample.nodule_mask);
  } else {
    sample.size_label.reset();
  }
}

namespace {

Image resample_image(const Image& image, int target_h, int target_w, ResampleMode mode) {
  if (image.empty()) throw DimensionError("cannot resize an empty image");
  if (target_h <= 0 || target_w <= 0) throw DimensionError("target dimensions must be positive");
  if (image.height == target_h && image.width == target_w) return image;
  NoGradGuard no_grad;
  Tensor t = Tensor::from({image.height, image.width}, image.pixels);
  Tensor r = resample2d(t, target_h, target_w, mode);
  Image out(target_h, target_w);
  std::copy(r.data().begin(), r.data().end(), out.pixels.begin());
  return out;
}

}  // namespace

Image normalize_resize(const Image& image, int target_h, int target_w) {
  Image out = resample_image(image, target_h, target_w, ResampleMode::bilinear);
  const auto [lo, hi] = std::minmax_element(out.pixels.begin(), out.pixels.end());
  const float mn = *lo, range = *hi - *lo;
  if (range <= 0.0f) {
    std::fill(out.pixels.begin(), out.pixels.end(), 0.0f);
  } else {
    for (float& v : out.pixels) v = (v - mn) / range;
  }
  return out;
}

Image binarize(const Image& image, float threshold) {
  Image out = image;
  for (float& v : out.pixels) v = v >= threshold ? 1.0f : 0.0f;
  return out;
}

Image resize_mask(const Image& mask, int target_h, int target_w) {
  return binarize(resample_image(mask, target_h, target_w, ResampleMode::nearest));
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::test:
      return "test";
    case Split::unlabeled:
      return "unlabeled";
  }
  return "train";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  if (text == "unlabeled") return Split::unlabeled;
  throw ManifestError("unknown split tag '" + text + "'");
}

DatasetManifest DatasetManifest::filter(Split split) const {
  DatasetManifest out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out.records),
               [split](const ManifestRecord& r) { return r.split == split; });
  return out;
}

DatasetManifest DatasetManifest::labeled() const {
  DatasetManifest out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out.records),
               [](const ManifestRecord& r) { return r.nodule_mask.has_value(); });
  return out;
}

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".pgm" || ext == ".png";
}

std::map<std::string, fs::path> list_by_stem(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || !is_image_file(entry.path())) continue;
    const std::string stem = entry.path().stem().string();
    if (!out.emplace(stem, entry.path()).second) {
      throw ManifestError("duplicate stem '" + stem + "' in " + dir.string());
    }
  }
  return out;
}

void scan_flat(const fs::path& root, Split labeled_split, std::vector<ManifestRecord>& out) {
  const fs::path image_dir = root / "image";
  if (!fs::is_directory(image_dir)) throw IoError("missing image directory " + image_dir.string());
  const auto images = list_by_stem(image_dir);
  const auto nodules = list_by_stem(root / "mask_nodule");
  const auto glands = list_by_stem(root / "mask_gland");
  for (const auto* masks : {&nodules, &glands}) {
    for (const auto& [stem, path] : *masks) {
      if (!images.count(stem)) throw ManifestError("mask without image: " + path.string());
    }
  }
  for (const auto& [stem, path] : images) {
    ManifestRecord r;
    r.stem = stem;
    r.image = path;
    if (auto it = nodules.find(stem); it != nodules.end()) r.nodule_mask = it->second;
    if (auto it = glands.find(stem); it != glands.end()) r.gland_mask = it->second;
    r.split = (r.nodule_mask || r.gland_mask) ? labeled_split : Split::unlabeled;
    out.push_back(std::move(r));
  }
}

}  // namespace

DatasetManifest load_dataset(const fs::path& root, DatasetLayout layout) {
  if (!fs::is_directory(root)) throw IoError("dataset root does not exist: " + root.string());
  DatasetManifest m;
  if (layout == DatasetLayout::flat) {
    scan_flat(root, Split::train, m.records);
  } else {
    scan_flat(root / "train", Split::train, m.records);
    scan_flat(root / "test", Split::test, m.records);
  }
  std::stable_sort(m.records.begin(), m.records.end(),
                   [](const ManifestRecord& a, const ManifestRecord& b) { return a.stem < b.stem; });
  return m;
}

std::string manifest_to_jsonl(const DatasetManifest& manifest) {
  std::ostringstream os;
  for (const ManifestRecord& r : manifest.records) {
    nlohmann::ordered_json j;
    j["stem"] = r.stem;
    j["image"] = r.image.string();
    j["nodule_mask"] = r.nodule_mask ? nlohmann::ordered_json(r.nodule_mask->string()) : nullptr;
    j["gland_mask"] = r.gland_mask ? nlohmann::ordered_json(r.gland_mask->string()) : nullptr;
    j["split"] = to_string(r.split);
    os << j.dump() << '\n';
  }
  return os.str();
}

void write_manifest_jsonl(const fs::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << manifest_to_jsonl(manifest);
}

DatasetManifest read_manifest_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  DatasetManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.stem = j.at("stem").get<std::string>();
      r.image = j.at("image").get<std::string>();
      if (!j.at("nodule_mask").is_null()) r.nodule_mask = j.at("nodule_mask").get<std::string>();
      if (!j.at("gland_mask").is_null()) r.gland_mask = j.at("gland_mask").get<std::string>();
      r.split = parse_split(j.at("split").get<std::string>());
      if (r.split == Split::unlabeled && (r.nodule_mask || r.gland_mask)) {
        throw ManifestError("unlabeled record '" + r.stem + "' carries a mask");
      }
      m.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

DatasetManifest write_dataset(const fs::path& root, const std::vector<UltrasoundSample>& samples) {
  for (const char* sub : {"image", "mask_nodule", "mask_gland"}) fs::create_directories(root / sub);
  for (const UltrasoundSample& s : samples) {
    write_pgm(root / "image" / (s.id + ".pgm"), s.image);
    if (s.nodule_mask) write_pgm(root / "mask_nodule" / (s.id + ".pgm"), *s.nodule_mask);
    if (s.gland_mask) write_pgm(root / "mask_gland" / (s.id + ".pgm"), *s.gland_mask);
  }
  return load_dataset(root, DatasetLayout::flat);
}

UltrasoundSample load_sample(const ManifestRecord& record, int target_h, int target_w) {
  UltrasoundSample s;
  s.id = record.stem;
  s.image = normalize_resize(read_image(record.image), target_h, target_w);
  if (record.nodule_mask) s.nodule_mask = resize_mask(read_image(*record.nodule_mask), target_h, target_w);
  if (record.gland_mask) s.gland_mask = resize_mask(read_image(*record.gland_mask), target_h, target_w);
  refresh_size_label(s);
  return s;
}

std::vector<UltrasoundSample> load_samples(const DatasetManifest& manifest, int target_h, int target_w) {
  std::vector<UltrasoundSample> out;
  out.reserve(manifest.size());
  for (const ManifestRecord& r : manifest.records) out.push_back(load_sample(r, target_h, target_w));
  return out;
}

}  // namespace ssmt
