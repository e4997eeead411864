#pragma once

#include <cstdint>
#include <vector>

#include "ssmt/data.hpp"
#include "ssmt/rng.hpp"

namespace ssmt {

struct Ellipse {
  double cx = 0, cy = 0;  // pixel coordinates
  double rx = 1, ry = 1;  // semi-axes in pixels
  double angle = 0;       // radians

  // Squared normalized radius; <= 1 inside.
  double level(double x, double y) const;
  bool contains(double x, double y) const { return level(x, y) <= 1.0; }
};

/// Synthetic ultrasound-like scene: a dark gland ellipse on a mid-gray
/// background with brighter or darker nodules inside, under multiplicative
/// speckle. Lengths are fractions of the shorter canvas side.
struct PhantomConfig {
  int height = 64;
  int width = 64;
  double gland_axis_min = 0.26;
  double gland_axis_max = 0.40;
  double gland_center_jitter = 0.08;
  int nodule_count_min = 1;
  int nodule_count_max = 1;
  double nodule_radius_min = 0.07;
  double nodule_radius_max = 0.15;
  // 0 places every nodule at the gland centre, 1 lets centres roam the gland.
  double nodule_center_spread = 0.6;
  double speckle_variance = 0.01;
  float background = 0.55f;
  float gland_intensity = 0.30f;
  float nodule_bright = 0.80f;
  float nodule_dark = 0.08f;
  int max_retries = 200;
  std::uint64_t seed = 42;

  void validate() const;  // throws ConfigError
};

struct Phantom {
  UltrasoundSample sample;
  Ellipse gland;
  std::vector<Ellipse> nodules;
};

/// Throws GenerationError when nodules cannot be placed inside the gland
/// within max_retries attempts.
Phantom generate_phantom(const PhantomConfig& config, Rng& rng);

/// `count` phantoms, phantom i drawn from a stream keyed by (config.seed, i).
std::vector<UltrasoundSample> generate_phantoms(const PhantomConfig& config, int count, int first_index = 0);

}  // namespace ssmt
