#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ssmt {

/// Single-channel raster with values in row-major order.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, float fill = 0.0f) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {}

  bool empty() const { return pixels.empty(); }
  std::size_t size() const { return pixels.size(); }
  float& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool same_shape(const Image& other) const { return height == other.height && width == other.width; }
};

/// 8-bit grayscale raster as stored on disk.
struct Gray8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bytes;
};

// Binary "P5" PGM with maxval 255. Comments in the header are skipped.
Gray8 read_pgm_bytes(const std::filesystem::path& path);
void write_pgm_bytes(const std::filesystem::path& path, const Gray8& gray);

// Values are scaled to [0,1] by /255 on read; on write they are clamped to
// [0,1] and quantized with round(v * 255). Masks in {0,1} map to {0,255}.
Image read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const Image& image);

// 8-bit PNG, converted to grayscale by libpng when stored as color.
Image read_png(const std::filesystem::path& path);

// Dispatches on extension (.pgm or .png).
Image read_image(const std::filesystem::path& path);

/// Binary "P6" PPM from three equally sized channels in [0,1].
void write_ppm(const std::filesystem::path& path, const Image& red, const Image& green, const Image& blue);

Gray8 quantize(const Image& image);

}  // namespace ssmt
