#include "ssmt/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ssmt/errors.hpp"

namespace ssmt {

namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Parses one whitespace-delimited decimal header field, skipping '#' comments.
int header_int(const std::vector<std::uint8_t>& buf, std::size_t& pos, const std::filesystem::path& path) {
  for (;;) {
    while (pos < buf.size() && std::isspace(buf[pos])) ++pos;
    if (pos < buf.size() && buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  if (pos >= buf.size() || !std::isdigit(buf[pos])) throw FormatError("malformed PGM header in " + path.string());
  long value = 0;
  while (pos < buf.size() && std::isdigit(buf[pos])) {
    value = value * 10 + (buf[pos] - '0');
    if (value > 1 << 24) throw FormatError("PGM header field too large in " + path.string());
    ++pos;
  }
  return static_cast<int>(value);
}

void write_file(const std::filesystem::path& path, const std::string& header, const std::uint8_t* data,
                std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw IoError("write failed for " + path.string());
}

std::uint8_t to_byte(float v) {
  const float c = std::clamp(std::isfinite(v) ? v : 0.0f, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

}  // namespace

Gray8 read_pgm_bytes(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> buf = slurp(path);
  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '5') throw FormatError("not a binary P5 PGM: " + path.string());
  std::size_t pos = 2;
  Gray8 g;
  g.width = header_int(buf, pos, path);
  g.height = header_int(buf, pos, path);
  const int maxval = header_int(buf, pos, path);
  if (maxval != 255) throw FormatError("unsupported PGM maxval " + std::to_string(maxval) + " in " + path.string());
  if (g.width <= 0 || g.height <= 0) throw FormatError("empty PGM raster in " + path.string());
  if (pos >= buf.size() || !std::isspace(buf[pos])) throw FormatError("malformed PGM header in " + path.string());
  ++pos;  // exactly one whitespace byte before the raster
  const std::size_t n = static_cast<std::size_t>(g.width) * g.height;
  if (buf.size() - pos < n) throw FormatError("truncated PGM raster in " + path.string());
  g.bytes.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos), buf.begin() + static_cast<std::ptrdiff_t>(pos + n));
  return g;
}

void write_pgm_bytes(const std::filesystem::path& path, const Gray8& gray) {
  const std::string header = "P5\n" + std::to_string(gray.width) + " " + std::to_string(gray.height) + "\n255\n";
  write_file(path, header, gray.bytes.data(), gray.bytes.size());
}

Image read_pgm(const std::filesystem::path& path) {
  const Gray8 g = read_pgm_bytes(path);
  Image img(g.height, g.width);
  for (std::size_t i = 0; i < g.bytes.size(); ++i) img.pixels[i] = static_cast<float>(g.bytes[i]) / 255.0f;
  return img;
}

Gray8 quantize(const Image& image) {
  Gray8 g{image.height, image.width, std::vector<std::uint8_t>(image.size())};
  for (std::size_t i = 0; i < image.size(); ++i) g.bytes[i] = to_byte(image.pixels[i]);
  return g;
}

void write_pgm(const std::filesystem::path& path, const Image& image) { write_pgm_bytes(path, quantize(image)); }

Image read_png(const std::filesystem::path& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + png.message);
  }
  png.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> raster(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, raster.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw IoError("cannot decode PNG " + path.string() + ": " + msg);
  }
  Image img(static_cast<int>(png.height), static_cast<int>(png.width));
  for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = static_cast<float>(raster[i]) / 255.0f;
  return img;
}

Image read_image(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".pgm") return read_pgm(path);
  if (ext == ".png") return read_png(path);
  throw FormatError("unsupported image extension: " + path.string());
}

void write_ppm(const std::filesystem::path& path, const Image& red, const Image& green, const Image& blue) {
  if (!red.same_shape(green) || !red.same_shape(blue)) throw DimensionError("write_ppm: channel shapes differ");
  std::vector<std::uint8_t> rgb(red.size() * 3);
  for (std::size_t i = 0; i < red.size(); ++i) {
    rgb[3 * i] = to_byte(red.pixels[i]);
    rgb[3 * i + 1] = to_byte(green.pixels[i]);
    rgb[3 * i + 2] = to_byte(blue.pixels[i]);
  }
  const std::string header = "P6\n" + std::to_string(red.width) + " " + std::to_string(red.height) + "\n255\n";
  write_file(path, header, rgb.data(), rgb.size());
}

}  // namespace ssmt
