#include "ssmt/metrics.hpp"

#include <string>

#include "ssmt/errors.hpp"

namespace ssmt {

OverlapCounts overlap(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
  if (pred.size() != gt.size()) {
    throw DimensionError("mask sizes differ: " + std::to_string(pred.size()) + " vs " + std::to_string(gt.size()));
  }
  OverlapCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    c.pred += p;
    c.gt += g;
    c.intersection += p && g;
  }
  return c;
}

OverlapCounts overlap(const Image& pred, const Image& gt) {
  if (!pred.same_shape(gt)) {
    throw DimensionError("mask shapes differ: " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                         " vs " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
  }
  OverlapCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.pixels[i] != 0.0f, g = gt.pixels[i] != 0.0f;
    c.pred += p;
    c.gt += g;
    c.intersection += p && g;
  }
  return c;
}

double iou(const OverlapCounts& c) {
  const std::int64_t u = c.union_count();
  return u == 0 ? 1.0 : static_cast<double>(c.intersection) / static_cast<double>(u);
}

double dsc(const OverlapCounts& c) {
  const std::int64_t s = c.pred + c.gt;
  return s == 0 ? 1.0 : static_cast<double>(2 * c.intersection) / static_cast<double>(s);
}

double iou(const Image& pred, const Image& gt) { return iou(overlap(pred, gt)); }
double dsc(const Image& pred, const Image& gt) { return dsc(overlap(pred, gt)); }

}  // namespace ssmt
