#pragma once

#include <cstdint>
#include <span>

#include "ssmt/data.hpp"
#include "ssmt/rng.hpp"

namespace ssmt {

/// Affine map between pixel coordinates: (x, y) -> (a x + b y + tx, c x + d y + ty).
struct Affine2 {
  double a = 1, b = 0, c = 0, d = 1, tx = 0, ty = 0;

  static Affine2 identity() { return {}; }
  Affine2 then(const Affine2& next) const;  // next ∘ this
  Affine2 inverse() const;
  void apply(double x, double y, double& ox, double& oy) const;
};

Affine2 horizontal_flip_map(int width);
// Rotation by `degrees` about the raster centre.
Affine2 rotation_map(int height, int width, double degrees);
// Shrinks by `scale` about the centre, then shifts by (dx, dy) pixels.
Affine2 zoom_out_map(int height, int width, double scale, double dx, double dy);

/// Warps image and masks with the same source-to-output map. The image is
/// sampled bilinearly, masks by nearest neighbour; pixels mapped from outside
/// the source are zero. size_label is recomputed.
UltrasoundSample warp(const UltrasoundSample& sample, const Affine2& source_to_output);

UltrasoundSample flip_horizontal(const UltrasoundSample& sample);
UltrasoundSample rotate(const UltrasoundSample& sample, double degrees);
UltrasoundSample zoom_out(const UltrasoundSample& sample, double scale, double dx = 0.0, double dy = 0.0);

/// 2x2 mosaic: each tile is resized to a quadrant of a height x width canvas
/// (row-major order: top-left, top-right, bottom-left, bottom-right). All
/// four samples must agree on which masks they carry.
UltrasoundSample stitch(std::span<const UltrasoundSample> tiles, int height, int width);

struct AugmentationConfig {
  bool flip = true;
  double flip_prob = 0.5;
  bool rotation = true;
  double rotation_prob = 0.5;
  double max_rotation_deg = 15.0;
  bool zoom_out = true;
  double zoom_prob = 0.3;
  double zoom_min = 0.7;
  double zoom_max = 1.0;
  bool stitching = true;
  double stitch_prob = 0.1;
  std::uint64_t seed = 42;

  // Throws ConfigError for probabilities outside [0,1] or an empty zoom range.
  void validate() const;
};

struct AugmentTrace {
  Affine2 source_to_output;
  bool stitched = false;
};

/// Applies flip, rotation and zoom-out (composed into one warp) and, with
/// stitch_prob, replaces the result by a mosaic with three partners drawn
/// from `pool`. Partners must carry the same masks as `sample`.
UltrasoundSample augment(const UltrasoundSample& sample, const AugmentationConfig& config, Rng& rng,
                         std::span<const UltrasoundSample> pool = {}, AugmentTrace* trace = nullptr);

}  // namespace ssmt
