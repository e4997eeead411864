#include "ssmt/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>

#include "ssmt/errors.hpp"

namespace ssmt {

double Ellipse::level(double x, double y) const {
  const double dx = x - cx, dy = y - cy;
  const double cs = std::cos(angle), sn = std::sin(angle);
  const double u = (cs * dx + sn * dy) / rx;
  const double v = (-sn * dx + cs * dy) / ry;
  return u * u + v * v;
}

void PhantomConfig::validate() const {
  if (height < 8 || width < 8) throw ConfigError("phantom canvas must be at least 8x8");
  if (!(gland_axis_min > 0 && gland_axis_min <= gland_axis_max && gland_axis_max <= 0.5)) {
    throw ConfigError("gland axis range must satisfy 0 < min <= max <= 0.5");
  }
  if (nodule_count_min < 0 || nodule_count_min > nodule_count_max) throw ConfigError("invalid nodule count range");
  if (!(nodule_radius_min > 0 && nodule_radius_min <= nodule_radius_max)) throw ConfigError("invalid nodule radius range");
  if (!(nodule_center_spread >= 0 && nodule_center_spread <= 1)) throw ConfigError("nodule_center_spread must be in [0,1]");
  if (!(speckle_variance >= 0)) throw ConfigError("speckle_variance must be non-negative");
  if (max_retries < 1) throw ConfigError("max_retries must be positive");
}

namespace {

// True when every boundary point of `inner` lies strictly inside `outer`
// with a small margin.
bool nested(const Ellipse& inner, const Ellipse& outer) {
  constexpr int kSteps = 72;
  const double cs = std::cos(inner.angle), sn = std::sin(inner.angle);
  for (int i = 0; i < kSteps; ++i) {
    const double t = 2.0 * std::numbers::pi * i / kSteps;
    const double u = inner.rx * std::cos(t), v = inner.ry * std::sin(t);
    const double x = inner.cx + cs * u - sn * v;
    const double y = inner.cy + sn * u + cs * v;
    if (outer.level(x, y) >= 0.9) return false;
  }
  return true;
}

}  // namespace

Phantom generate_phantom(const PhantomConfig& config, Rng& rng) {
  config.validate();
  const double side = std::min(config.height, config.width);
  auto unif = [&](double lo, double hi) { return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng); };

  Phantom p;
  p.gland.rx = unif(config.gland_axis_min, config.gland_axis_max) * side;
  p.gland.ry = unif(config.gland_axis_min, config.gland_axis_max) * side * 0.8;
  p.gland.angle = unif(-0.4, 0.4);
  p.gland.cx = (config.width - 1) / 2.0 + unif(-1.0, 1.0) * config.gland_center_jitter * side;
  p.gland.cy = (config.height - 1) / 2.0 + unif(-1.0, 1.0) * config.gland_center_jitter * side;

  const int count = uniform_int(rng, config.nodule_count_min, config.nodule_count_max);
  std::vector<float> intensity;
  for (int k = 0; k < count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < config.max_retries && !placed; ++attempt) {
      Ellipse n;
      n.rx = unif(config.nodule_radius_min, config.nodule_radius_max) * side;
      n.ry = unif(config.nodule_radius_min, config.nodule_radius_max) * side;
      n.angle = unif(0.0, std::numbers::pi);
      const double r = std::sqrt(unif(0.0, 1.0)) * config.nodule_center_spread;
      const double th = unif(0.0, 2.0 * std::numbers::pi);
      const double u = r * std::cos(th) * p.gland.rx, v = r * std::sin(th) * p.gland.ry;
      const double gc = std::cos(p.gland.angle), gs = std::sin(p.gland.angle);
      n.cx = p.gland.cx + gc * u - gs * v;
      n.cy = p.gland.cy + gs * u + gc * v;
      if (nested(n, p.gland)) {
        p.nodules.push_back(n);
        placed = true;
      }
    }
    if (!placed) {
      throw GenerationError("could not place nodule " + std::to_string(k) + " inside the gland after " +
                            std::to_string(config.max_retries) + " attempts");
    }
    intensity.push_back(bernoulli(rng, 0.5) ? config.nodule_bright : config.nodule_dark);
  }

  UltrasoundSample& s = p.sample;
  s.image = Image(config.height, config.width, config.background);
  s.nodule_mask = Image(config.height, config.width);
  s.gland_mask = Image(config.height, config.width);
  for (int y = 0; y < config.height; ++y)
    for (int x = 0; x < config.width; ++x) {
      if (!p.gland.contains(x, y)) continue;
      s.gland_mask->at(y, x) = 1.0f;
      s.image.at(y, x) = config.gland_intensity;
      for (std::size_t k = 0; k < p.nodules.size(); ++k) {
        if (p.nodules[k].contains(x, y)) {
          s.nodule_mask->at(y, x) = 1.0f;
          s.image.at(y, x) = intensity[k];
        }
      }
    }
  if (config.speckle_variance > 0) {
    std::normal_distribution<double> speckle(0.0, std::sqrt(config.speckle_variance));
    for (float& v : s.image.pixels) v = static_cast<float>(std::clamp(v * (1.0 + speckle(rng)), 0.0, 1.0));
  }
  refresh_size_label(s);
  return p;
}

std::vector<UltrasoundSample> generate_phantoms(const PhantomConfig& config, int count, int first_index) {
  std::vector<UltrasoundSample> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    const int index = first_index + i;
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(index)));
    Phantom p = generate_phantom(config, rng);
    char id[32];
    std::snprintf(id, sizeof(id), "phantom_%05d", index);
    p.sample.id = id;
    out.push_back(std::move(p.sample));
  }
  return out;
}

}  // namespace ssmt
