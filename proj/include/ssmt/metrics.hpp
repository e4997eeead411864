#pragma once

#include <cstdint>
#include <span>

#include "ssmt/image.hpp"

namespace ssmt {

struct OverlapCounts {
  std::int64_t intersection = 0;
  std::int64_t pred = 0;
  std::int64_t gt = 0;
  std::int64_t union_count() const { return pred + gt - intersection; }
};

/// Pixel counts of two binary masks (any nonzero value is foreground).
OverlapCounts overlap(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);
OverlapCounts overlap(const Image& pred, const Image& gt);

// Both-empty masks count as perfect agreement (1.0).
double iou(const OverlapCounts& c);
double dsc(const OverlapCounts& c);

double iou(const Image& pred, const Image& gt);
double dsc(const Image& pred, const Image& gt);

}  // namespace ssmt
