#include "ssmt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "ssmt/errors.hpp"
#include "ssmt/metrics.hpp"
#include "ssmt/ops.hpp"
#include "ssmt/parallel.hpp"
#include "ssmt/training.hpp"

namespace ssmt {

namespace fs = std::filesystem;

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
  return buf;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::vector<std::uint8_t> binary(const Image& mask) {
  std::vector<std::uint8_t> out(mask.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = mask.pixels[i] > 0.5f;
  return out;
}

// Soft map at model resolution resampled to h x w, then thresholded at 0.5.
std::vector<std::uint8_t> to_input_resolution(const std::vector<float>& prob, int mh, int mw, int h, int w) {
  NoGradGuard no_grad;
  const Tensor src = Tensor::from({1, mh, mw}, prob);
  const Tensor up = (mh == h && mw == w) ? src : resample2d(src, h, w, ResampleMode::bilinear);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = up.data()[i] > 0.5f;
  return out;
}

Image as_image(const std::vector<std::uint8_t>& mask, int h, int w) {
  Image img(h, w);
  for (std::size_t i = 0; i < mask.size(); ++i) img.pixels[i] = mask[i] ? 1.0f : 0.0f;
  return img;
}

}  // namespace

std::string format_percent(double mean, double std) { return pct(mean) + " ± " + pct(std); }

double population_std(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  const double m = mean_of(values);
  double s = 0.0;
  for (double v : values) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(values.size()));
}

SeedScore score_model(const SsmtNet& model, const std::vector<UltrasoundSample>& samples, const std::string& label) {
  std::vector<std::optional<ImageScore>> slots(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    const UltrasoundSample& s = samples[i];
    if (!s.nodule_mask) return;
    const SsmtNet::Prediction p = model.predict(image_tensor(s));
    const OverlapCounts c = overlap(p.nodule, binary(*s.nodule_mask));
    slots[i] = ImageScore{s.id, iou(c), dsc(c)};
  });
  SeedScore out;
  out.label = label;
  for (auto& s : slots) {
    if (s) {
      out.images.push_back(*s);
    } else {
      ++out.excluded;
    }
  }
  std::sort(out.images.begin(), out.images.end(), [](const ImageScore& a, const ImageScore& b) { return a.id < b.id; });
  std::vector<double> ious, dscs;
  for (const auto& s : out.images) {
    ious.push_back(s.iou);
    dscs.push_back(s.dsc);
  }
  out.iou = mean_of(ious);
  out.dsc = mean_of(dscs);
  return out;
}

MetricReport aggregate(std::vector<SeedScore> seeds, Spread spread) {
  if (seeds.empty()) throw ContractError("aggregate needs at least one seed");
  MetricReport r;
  r.spread = spread;
  r.images = static_cast<int>(seeds.front().images.size());
  r.excluded = seeds.front().excluded;
  std::vector<double> ious, dscs;
  for (const auto& s : seeds) {
    if (spread == Spread::seeds) {
      ious.push_back(s.iou);
      dscs.push_back(s.dsc);
    } else {
      for (const auto& im : s.images) {
        ious.push_back(im.iou);
        dscs.push_back(im.dsc);
      }
    }
  }
  r.iou_mean = mean_of(ious);
  r.dsc_mean = mean_of(dscs);
  r.iou_std = population_std(ious);
  r.dsc_std = population_std(dscs);
  r.seeds = std::move(seeds);
  return r;
}

std::string MetricReport::to_csv() const {
  const std::string tail =
      "," + std::to_string(seeds.size()) + "," + std::to_string(images) + "," + std::to_string(excluded) + "\n";
  return "metric,mean,std,seeds,images,excluded\n" + ("iou," + pct(iou_mean) + "," + pct(iou_std) + tail) +
         ("dsc," + pct(dsc_mean) + "," + pct(dsc_std) + tail);
}

std::string MetricReport::per_image_csv() const {
  std::string out = "checkpoint,id,iou,dsc\n";
  for (const auto& s : seeds)
    for (const auto& im : s.images) out += s.label + "," + im.id + "," + num(im.iou) + "," + num(im.dsc) + "\n";
  return out;
}

MetricReport evaluate(const std::vector<fs::path>& checkpoints, const DatasetManifest& manifest, Spread spread) {
  if (checkpoints.empty()) throw ConfigError("evaluate needs at least one checkpoint");
  std::vector<SeedScore> seeds;
  for (const fs::path& ckpt : checkpoints) {
    const auto model = load_model(ckpt);
    const EncoderConfig& e = model->config().encoder;
    const std::vector<UltrasoundSample> samples = load_samples(manifest, e.image_h, e.image_w);
    SeedScore s = score_model(*model, samples, ckpt.string());
    if (s.images.empty()) throw DatasetError("no image in the dataset has a nodule mask");
    seeds.push_back(std::move(s));
  }
  return aggregate(std::move(seeds), spread);
}

InferOutputs infer(const SsmtNet& model, const fs::path& image, const fs::path& out_dir,
                   const std::optional<fs::path>& ground_truth) {
  const Image input = read_image(image);
  std::optional<Image> gt;
  if (ground_truth) {
    gt = binarize(read_image(*ground_truth));
    if (!gt->same_shape(input)) {
      throw DimensionError("ground truth " + ground_truth->string() + " does not match the image size");
    }
  }
  const EncoderConfig& e = model.config().encoder;
  UltrasoundSample s;
  s.id = image.stem().string();
  s.image = normalize_resize(input, e.image_h, e.image_w);
  const SsmtNet::Prediction p = model.predict(image_tensor(s));

  InferOutputs out;
  out.height = input.height;
  out.width = input.width;
  out.nodule = to_input_resolution(p.nodule_prob, e.image_h, e.image_w, input.height, input.width);
  const std::vector<std::uint8_t> gland =
      to_input_resolution(p.gland_prob, e.image_h, e.image_w, input.height, input.width);

  fs::create_directories(out_dir);
  out.nodule_mask = out_dir / (s.id + "_nodule.pgm");
  out.gland_mask = out_dir / (s.id + "_gland.pgm");
  out.overlay = out_dir / (s.id + "_overlay.ppm");
  write_pgm(out.nodule_mask, as_image(out.nodule, input.height, input.width));
  write_pgm(out.gland_mask, as_image(gland, input.height, input.width));

  Image red = input, green = input;
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (out.nodule[i]) red.pixels[i] = 1.0f;
    if (gt && gt->pixels[i] != 0.0f) green.pixels[i] = 1.0f;
  }
  write_ppm(out.overlay, red, green, input);
  return out;
}

}  // namespace ssmt
