#include "ssmt/augment.hpp"

#include <cmath>
#include <numbers>

#include "ssmt/errors.hpp"
#include "ssmt/ops.hpp"

namespace ssmt {

Affine2 Affine2::then(const Affine2& n) const {
  Affine2 r;
  r.a = n.a * a + n.b * c;
  r.b = n.a * b + n.b * d;
  r.c = n.c * a + n.d * c;
  r.d = n.c * b + n.d * d;
  r.tx = n.a * tx + n.b * ty + n.tx;
  r.ty = n.c * tx + n.d * ty + n.ty;
  return r;
}

Affine2 Affine2::inverse() const {
  const double det = a * d - b * c;
  if (std::abs(det) < 1e-12) throw ContractError("singular affine map");
  Affine2 r;
  r.a = d / det;
  r.b = -b / det;
  r.c = -c / det;
  r.d = a / det;
  r.tx = -(r.a * tx + r.b * ty);
  r.ty = -(r.c * tx + r.d * ty);
  return r;
}

void Affine2::apply(double x, double y, double& ox, double& oy) const {
  ox = a * x + b * y + tx;
  oy = c * x + d * y + ty;
}

Affine2 horizontal_flip_map(int width) { return Affine2{-1, 0, 0, 1, static_cast<double>(width - 1), 0}; }

Affine2 rotation_map(int height, int width, double degrees) {
  const double th = degrees * std::numbers::pi / 180.0;
  double cs = std::cos(th), sn = std::sin(th);
  // Exact quarter turns keep integer pixel grids on integers.
  if (std::abs(cs) < 1e-12) cs = 0.0;
  if (std::abs(sn) < 1e-12) sn = 0.0;
  const double cx = (width - 1) / 2.0, cy = (height - 1) / 2.0;
  Affine2 r{cs, -sn, sn, cs, 0, 0};
  r.tx = cx - (cs * cx - sn * cy);
  r.ty = cy - (sn * cx + cs * cy);
  return r;
}

Affine2 zoom_out_map(int height, int width, double scale, double dx, double dy) {
  if (!(scale > 0.0)) throw ContractError("zoom-out scale must be positive");
  const double cx = (width - 1) / 2.0, cy = (height - 1) / 2.0;
  return Affine2{scale, 0, 0, scale, cx - scale * cx + dx, cy - scale * cy + dy};
}

namespace {

double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

Image warp_bilinear(const Image& src, const Affine2& inv) {
  Image out(src.height, src.width);
  auto at = [&](int y, int x) { return (y < 0 || x < 0 || y >= src.height || x >= src.width) ? 0.0f : src.at(y, x); };
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      double sx, sy;
      inv.apply(x, y, sx, sy);
      sx = snap(sx);
      sy = snap(sy);
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const float fx = static_cast<float>(sx - x0), fy = static_cast<float>(sy - y0);
      const float top = at(y0, x0) * (1 - fx) + (fx > 0 ? at(y0, x0 + 1) * fx : 0.0f);
      const float bot = fy > 0 ? at(y0 + 1, x0) * (1 - fx) + (fx > 0 ? at(y0 + 1, x0 + 1) * fx : 0.0f) : 0.0f;
      out.at(y, x) = top * (1 - fy) + bot * fy;
    }
  return out;
}

Image warp_nearest(const Image& src, const Affine2& inv) {
  Image out(src.height, src.width);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      double sx, sy;
      inv.apply(x, y, sx, sy);
      const int ix = static_cast<int>(std::floor(snap(sx) + 0.5));
      const int iy = static_cast<int>(std::floor(snap(sy) + 0.5));
      if (ix >= 0 && iy >= 0 && ix < src.width && iy < src.height) out.at(y, x) = src.at(iy, ix);
    }
  return binarize(out);
}

Image resize_bilinear(const Image& src, int h, int w) {
  NoGradGuard no_grad;
  Tensor r = resample2d(Tensor::from({src.height, src.width}, src.pixels), h, w, ResampleMode::bilinear);
  Image out(h, w);
  std::copy(r.data().begin(), r.data().end(), out.pixels.begin());
  return out;
}

void blit(Image& dst, const Image& tile, int y0, int x0) {
  for (int y = 0; y < tile.height; ++y)
    for (int x = 0; x < tile.width; ++x) dst.at(y0 + y, x0 + x) = tile.at(y, x);
}

bool same_annotations(const UltrasoundSample& a, const UltrasoundSample& b) {
  return a.nodule_mask.has_value() == b.nodule_mask.has_value() && a.gland_mask.has_value() == b.gland_mask.has_value();
}

}  // namespace

UltrasoundSample warp(const UltrasoundSample& sample, const Affine2& source_to_output) {
  const Affine2 inv = source_to_output.inverse();
  UltrasoundSample out;
  out.id = sample.id;
  out.image = warp_bilinear(sample.image, inv);
  if (sample.nodule_mask) out.nodule_mask = warp_nearest(*sample.nodule_mask, inv);
  if (sample.gland_mask) out.gland_mask = warp_nearest(*sample.gland_mask, inv);
  refresh_size_label(out);
  return out;
}

UltrasoundSample flip_horizontal(const UltrasoundSample& sample) {
  return warp(sample, horizontal_flip_map(sample.image.width));
}

UltrasoundSample rotate(const UltrasoundSample& sample, double degrees) {
  return warp(sample, rotation_map(sample.image.height, sample.image.width, degrees));
}

UltrasoundSample zoom_out(const UltrasoundSample& sample, double scale, double dx, double dy) {
  return warp(sample, zoom_out_map(sample.image.height, sample.image.width, scale, dx, dy));
}

UltrasoundSample stitch(std::span<const UltrasoundSample> tiles, int height, int width) {
  if (tiles.size() != 4) throw ContractError("stitch needs exactly four samples");
  if (height < 2 || width < 2) throw DimensionError("stitch canvas too small");
  for (const auto& t : tiles) {
    if (!same_annotations(tiles[0], t)) throw ContractError("stitch: samples disagree on available masks");
  }
  const int h0 = height / 2, w0 = width / 2;
  const int hs[2] = {h0, height - h0}, ws[2] = {w0, width - w0};
  UltrasoundSample out;
  out.id = tiles[0].id + "+stitch";
  out.image = Image(height, width);
  if (tiles[0].nodule_mask) out.nodule_mask = Image(height, width);
  if (tiles[0].gland_mask) out.gland_mask = Image(height, width);
  for (int q = 0; q < 4; ++q) {
    const int r = q / 2, c = q % 2;
    const int y0 = r * h0, x0 = c * w0;
    const UltrasoundSample& t = tiles[static_cast<std::size_t>(q)];
    blit(out.image, resize_bilinear(t.image, hs[r], ws[c]), y0, x0);
    if (t.nodule_mask) blit(*out.nodule_mask, resize_mask(*t.nodule_mask, hs[r], ws[c]), y0, x0);
    if (t.gland_mask) blit(*out.gland_mask, resize_mask(*t.gland_mask, hs[r], ws[c]), y0, x0);
  }
  refresh_size_label(out);
  return out;
}

void AugmentationConfig::validate() const {
  for (double p : {flip_prob, rotation_prob, zoom_prob, stitch_prob}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("augmentation probabilities must lie in [0,1]");
  }
  if (!(zoom_min > 0.0 && zoom_min <= zoom_max && zoom_max <= 1.0)) {
    throw ConfigError("zoom-out range must satisfy 0 < zoom_min <= zoom_max <= 1");
  }
  if (!(max_rotation_deg >= 0.0)) throw ConfigError("max_rotation_deg must be non-negative");
}

UltrasoundSample augment(const UltrasoundSample& sample, const AugmentationConfig& config, Rng& rng,
                         std::span<const UltrasoundSample> pool, AugmentTrace* trace) {
  const int h = sample.image.height, w = sample.image.width;
  Affine2 map;
  bool moved = false;
  if (config.flip && bernoulli(rng, config.flip_prob)) {
    map = map.then(horizontal_flip_map(w));
    moved = true;
  }
  if (config.rotation && bernoulli(rng, config.rotation_prob)) {
    const double deg = std::uniform_real_distribution<double>(-config.max_rotation_deg, config.max_rotation_deg)(rng);
    map = map.then(rotation_map(h, w, deg));
    moved = true;
  }
  if (config.zoom_out && bernoulli(rng, config.zoom_prob)) {
    const double s = std::uniform_real_distribution<double>(config.zoom_min, config.zoom_max)(rng);
    const double mx = (1.0 - s) * (w - 1) / 2.0, my = (1.0 - s) * (h - 1) / 2.0;
    const double dx = mx > 0 ? std::uniform_real_distribution<double>(-mx, mx)(rng) : 0.0;
    const double dy = my > 0 ? std::uniform_real_distribution<double>(-my, my)(rng) : 0.0;
    map = map.then(zoom_out_map(h, w, s, dx, dy));
    moved = true;
  }
  UltrasoundSample out = moved ? warp(sample, map) : sample;
  if (trace) {
    trace->source_to_output = map;
    trace->stitched = false;
  }
  if (config.stitching && !pool.empty() && bernoulli(rng, config.stitch_prob)) {
    std::vector<std::size_t> compatible;
    for (std::size_t i = 0; i < pool.size(); ++i)
      if (same_annotations(sample, pool[i]) && pool[i].image.same_shape(sample.image)) compatible.push_back(i);
    if (compatible.size() >= 3) {
      std::vector<UltrasoundSample> tiles{out};
      for (int k = 0; k < 3; ++k) {
        const auto pick = compatible[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(compatible.size()) - 1))];
        tiles.push_back(pool[pick]);
      }
      out = stitch(tiles, h, w);
      if (trace) trace->stitched = true;
    }
  }
  refresh_size_label(out);
  return out;
}

}  // namespace ssmt
