#include <gtest/gtest.h>
#include <png.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "ssmt/augment.hpp"
#include "ssmt/data.hpp"
#include "ssmt/errors.hpp"
#include "ssmt/phantom.hpp"

using namespace ssmt;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() / ("ssmt_data_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

Image disk_mask(int h, int w, double cx, double cy, double r) {
  Image m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at(y, x) = (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r ? 1.0f : 0.0f;
  return m;
}

double mask_area(const Image& m) {
  double a = 0;
  for (float v : m.pixels) a += v;
  return a;
}

double mask_iou(const Image& a, const Image& b) {
  double inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a.pixels[i] * b.pixels[i];
    uni += std::max(a.pixels[i], b.pixels[i]);
  }
  return uni == 0 ? 1.0 : inter / uni;
}

UltrasoundSample phantom_sample(std::uint64_t seed) {
  PhantomConfig cfg;
  Rng rng(seed);
  return generate_phantom(cfg, rng).sample;
}

void write_pair(const fs::path& root, const std::string& stem, bool nodule, bool gland) {
  Image img(6, 5, 0.5f);
  fs::create_directories(root / "image");
  write_pgm(root / "image" / (stem + ".pgm"), img);
  if (nodule) {
    fs::create_directories(root / "mask_nodule");
    write_pgm(root / "mask_nodule" / (stem + ".pgm"), Image(6, 5, 1.0f));
  }
  if (gland) {
    fs::create_directories(root / "mask_gland");
    write_pgm(root / "mask_gland" / (stem + ".pgm"), Image(6, 5, 1.0f));
  }
}

}  // namespace

TEST(Pgm, RandomBytesRoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(1);
  Gray8 g{7, 9, std::vector<std::uint8_t>(63)};
  for (auto& b : g.bytes) b = static_cast<std::uint8_t>(rng() & 0xff);
  write_pgm_bytes(dir.path() / "a.pgm", g);
  EXPECT_EQ(read_pgm_bytes(dir.path() / "a.pgm").bytes, g.bytes);
  // Through the float path as well.
  Image img = read_pgm(dir.path() / "a.pgm");
  write_pgm(dir.path() / "b.pgm", img);
  EXPECT_EQ(read_pgm_bytes(dir.path() / "b.pgm").bytes, g.bytes);
}

TEST(Pgm, MaskStoredAsZeroAnd255) {
  TempDir dir;
  Image m(2, 3);
  m.pixels = {0, 1, 1, 0, 0, 1};
  write_pgm(dir.path() / "m.pgm", m);
  const Gray8 g = read_pgm_bytes(dir.path() / "m.pgm");
  EXPECT_EQ(g.bytes, (std::vector<std::uint8_t>{0, 255, 255, 0, 0, 255}));
  EXPECT_EQ(read_pgm(dir.path() / "m.pgm").pixels, m.pixels);
}

TEST(Pgm, HandCraftedHeaderParses) {
  TempDir dir;
  const unsigned char raw[] = {'P', '5', '\n', '#', ' ', 'x', '\n', '2', ' ', '2', '\n', '2', '5', '5', '\n',
                               0x00, 0x7f, 0x80, 0xff};
  std::ofstream(dir.path() / "h.pgm", std::ios::binary).write(reinterpret_cast<const char*>(raw), sizeof(raw));
  const Gray8 g = read_pgm_bytes(dir.path() / "h.pgm");
  EXPECT_EQ(g.width, 2);
  EXPECT_EQ(g.height, 2);
  EXPECT_EQ(g.bytes, (std::vector<std::uint8_t>{0x00, 0x7f, 0x80, 0xff}));
}

TEST(Pgm, BadMagicAndMaxval) {
  TempDir dir;
  std::ofstream(dir.path() / "p2.pgm") << "P2\n1 1\n255\n0\n";
  EXPECT_THROW(read_pgm(dir.path() / "p2.pgm"), FormatError);
  std::ofstream(dir.path() / "mv.pgm", std::ios::binary) << "P5\n1 1\n65535\n\x01\x02";
  EXPECT_THROW(read_pgm(dir.path() / "mv.pgm"), FormatError);
  std::ofstream(dir.path() / "short.pgm", std::ios::binary) << "P5\n4 4\n255\nab";
  EXPECT_THROW(read_pgm(dir.path() / "short.pgm"), FormatError);
  EXPECT_THROW(read_pgm(dir.path() / "missing.pgm"), IoError);
}

TEST(Png, GrayscaleDecodes) {
  TempDir dir;
  const std::vector<std::uint8_t> px{0, 51, 102, 255, 10, 20};
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = 3;
  png.height = 2;
  png.format = PNG_FORMAT_GRAY;
  const fs::path p = dir.path() / "g.png";
  ASSERT_TRUE(png_image_write_to_file(&png, p.string().c_str(), 0, px.data(), 0, nullptr));
  Image img = read_image(p);
  ASSERT_EQ(img.height, 2);
  ASSERT_EQ(img.width, 3);
  for (std::size_t i = 0; i < px.size(); ++i) EXPECT_FLOAT_EQ(img.pixels[i], px[i] / 255.0f);
}

TEST(SizeLabel, HandCounts) {
  EXPECT_EQ(compute_size_label(Image(16, 16, 0.0f)), 0.0f);
  EXPECT_EQ(compute_size_label(Image(16, 16, 1.0f)), 1.0f);
  Image m(16, 16);
  for (int i = 0; i < 64; ++i) m.pixels[static_cast<std::size_t>(i) * 4] = 1.0f;
  EXPECT_EQ(compute_size_label(m), 0.25f);
  m.pixels[1] = 0.5f;
  EXPECT_THROW(compute_size_label(m), ContractError);
}

TEST(NormalizeResize, SameSizeOnlyNormalizes) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> d(0.2f, 0.7f);
  Image img(224, 224);
  for (float& v : img.pixels) v = d(rng);
  Image out = normalize_resize(img, 224, 224);
  const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_FLOAT_EQ(out.pixels[i], (img.pixels[i] - *lo) / (*hi - *lo));
  EXPECT_EQ(*std::min_element(out.pixels.begin(), out.pixels.end()), 0.0f);
  EXPECT_EQ(*std::max_element(out.pixels.begin(), out.pixels.end()), 1.0f);
}

TEST(NormalizeResize, ConstantImageMapsToZeros) {
  Image out = normalize_resize(Image(30, 40, 0.37f), 16, 16);
  for (float v : out.pixels) EXPECT_EQ(v, 0.0f);
}

TEST(NormalizeResize, DownsizedRampStaysMonotone) {
  Image ramp(448, 448);
  for (int y = 0; y < 448; ++y)
    for (int x = 0; x < 448; ++x) ramp.at(y, x) = x / 447.0f;
  Image out = normalize_resize(ramp, 224, 224);
  for (int y = 0; y < 224; ++y)
    for (int x = 1; x < 224; ++x) EXPECT_GE(out.at(y, x), out.at(y, x - 1));
}

TEST(NormalizeResize, EmptyImageRejected) { EXPECT_THROW(normalize_resize(Image(), 4, 4), DimensionError); }

TEST(Augment, DoubleFlipIsIdentity) {
  UltrasoundSample s = phantom_sample(3);
  UltrasoundSample twice = flip_horizontal(flip_horizontal(s));
  EXPECT_EQ(twice.image.pixels, s.image.pixels);
  EXPECT_EQ(twice.nodule_mask->pixels, s.nodule_mask->pixels);
  EXPECT_EQ(twice.gland_mask->pixels, s.gland_mask->pixels);
}

TEST(Augment, ZoomOutQuartersArea) {
  UltrasoundSample s;
  s.image = Image(64, 64, 0.5f);
  s.nodule_mask = disk_mask(64, 64, 30, 33, 20);
  const double a = mask_area(*s.nodule_mask);
  for (double dx : {0.0, 7.0, -12.5}) {
    UltrasoundSample z = zoom_out(s, 0.5, dx, dx / 2);
    EXPECT_NEAR(mask_area(*z.nodule_mask), a / 4, 0.01 * 64 * 64) << "dx = " << dx;
    EXPECT_FLOAT_EQ(*z.size_label, compute_size_label(*z.nodule_mask));
  }
}

TEST(Augment, QuarterTurnRoundTrip) {
  UltrasoundSample s = phantom_sample(4);
  UltrasoundSample back = rotate(rotate(s, 90.0), -90.0);
  EXPECT_GE(mask_iou(*back.nodule_mask, *s.nodule_mask), 0.99);
  EXPECT_GE(mask_iou(*back.gland_mask, *s.gland_mask), 0.99);
}

TEST(Augment, MaskFollowsSourceGeometryProperty) {
  std::mt19937_64 pick(5);
  AugmentationConfig cfg;
  cfg.flip_prob = cfg.rotation_prob = cfg.zoom_prob = 0.7;
  cfg.max_rotation_deg = 30;
  cfg.stitching = false;
  for (int trial = 0; trial < 20; ++trial) {
    UltrasoundSample s = phantom_sample(100 + static_cast<std::uint64_t>(trial));
    Rng rng(derive_seed(42, static_cast<std::uint64_t>(trial)));
    AugmentTrace trace;
    UltrasoundSample out = augment(s, cfg, rng, {}, &trace);
    const Affine2 inv = trace.source_to_output.inverse();
    std::vector<std::pair<int, int>> fg;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        if (out.nodule_mask->at(y, x) == 1.0f) fg.emplace_back(y, x);
    std::shuffle(fg.begin(), fg.end(), pick);
    if (fg.size() > 100) fg.resize(100);
    for (auto [y, x] : fg) {
      double sx, sy;
      inv.apply(x, y, sx, sy);
      const int ix = static_cast<int>(std::floor(sx + 0.5)), iy = static_cast<int>(std::floor(sy + 0.5));
      ASSERT_TRUE(ix >= 0 && iy >= 0 && ix < 64 && iy < 64);
      EXPECT_EQ(s.nodule_mask->at(iy, ix), 1.0f);
      EXPECT_EQ(s.gland_mask->at(iy, ix), 1.0f);
    }
    EXPECT_EQ(*out.size_label, compute_size_label(*out.nodule_mask));
  }
}

TEST(Augment, StitchComposesQuadrants) {
  std::vector<UltrasoundSample> tiles;
  for (int i = 0; i < 4; ++i) {
    UltrasoundSample s;
    s.image = Image(8, 8, 0.1f * (i + 1));
    s.nodule_mask = Image(8, 8, i % 2 ? 1.0f : 0.0f);
    tiles.push_back(s);
  }
  UltrasoundSample m = stitch(tiles, 8, 8);
  EXPECT_FLOAT_EQ(m.image.at(0, 0), 0.1f);
  EXPECT_FLOAT_EQ(m.image.at(0, 7), 0.2f);
  EXPECT_FLOAT_EQ(m.image.at(7, 0), 0.3f);
  EXPECT_FLOAT_EQ(m.image.at(7, 7), 0.4f);
  EXPECT_FLOAT_EQ(*m.size_label, 0.5f);
  tiles[2].gland_mask = Image(8, 8);
  EXPECT_THROW(stitch(tiles, 8, 8), ContractError);
}

TEST(Augment, SizeLabelAlwaysMatchesMask) {
  AugmentationConfig cfg;
  cfg.stitch_prob = 0.5;
  std::vector<UltrasoundSample> pool;
  for (int i = 0; i < 6; ++i) pool.push_back(phantom_sample(200 + static_cast<std::uint64_t>(i)));
  for (int trial = 0; trial < 30; ++trial) {
    Rng rng(derive_seed(9, static_cast<std::uint64_t>(trial)));
    UltrasoundSample out = augment(pool[static_cast<std::size_t>(trial % 6)], cfg, rng, pool);
    ASSERT_TRUE(out.size_label.has_value());
    EXPECT_EQ(*out.size_label, compute_size_label(*out.nodule_mask));
    for (float v : out.nodule_mask->pixels) EXPECT_TRUE(v == 0.0f || v == 1.0f);
  }
}

TEST(Augment, DeterministicPerSeed) {
  AugmentationConfig cfg;
  UltrasoundSample s = phantom_sample(6);
  Rng a(derive_seed(42, 3, 1)), b(derive_seed(42, 3, 1));
  EXPECT_EQ(augment(s, cfg, a).image.pixels, augment(s, cfg, b).image.pixels);
}

TEST(Augment, ConfigValidation) {
  AugmentationConfig cfg;
  cfg.flip_prob = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Phantom, NoiselessCentredNoduleMatchesEllipse) {
  PhantomConfig cfg;
  cfg.speckle_variance = 0.0;
  cfg.nodule_center_spread = 0.0;
  cfg.gland_center_jitter = 0.0;
  Rng rng(7);
  Phantom p = generate_phantom(cfg, rng);
  ASSERT_EQ(p.nodules.size(), 1u);
  const Ellipse& e = p.nodules[0];
  EXPECT_DOUBLE_EQ(e.cx, 31.5);
  EXPECT_DOUBLE_EQ(e.cy, 31.5);
  const double cs = std::cos(e.angle), sn = std::sin(e.angle);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const double u = (cs * (x - e.cx) + sn * (y - e.cy)) / e.rx;
      const double v = (-sn * (x - e.cx) + cs * (y - e.cy)) / e.ry;
      EXPECT_EQ(p.sample.nodule_mask->at(y, x), u * u + v * v <= 1.0 ? 1.0f : 0.0f);
    }
  for (float v : p.sample.image.pixels) {
    EXPECT_TRUE(v == cfg.background || v == cfg.gland_intensity || v == cfg.nodule_bright || v == cfg.nodule_dark);
  }
}

TEST(Phantom, ZeroNodulesGiveEmptyMask) {
  PhantomConfig cfg;
  cfg.nodule_count_min = cfg.nodule_count_max = 0;
  Rng rng(8);
  Phantom p = generate_phantom(cfg, rng);
  EXPECT_EQ(mask_area(*p.sample.nodule_mask), 0.0);
  EXPECT_EQ(*p.sample.size_label, 0.0f);
  EXPECT_GT(mask_area(*p.sample.gland_mask), 0.0);
}

TEST(Phantom, SameSeedBitIdentical) {
  PhantomConfig cfg;
  auto a = generate_phantoms(cfg, 3);
  auto b = generate_phantoms(cfg, 3);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(a[i].image.pixels, b[i].image.pixels);
    EXPECT_EQ(a[i].nodule_mask->pixels, b[i].nodule_mask->pixels);
  }
  EXPECT_NE(a[0].image.pixels, a[1].image.pixels);
}

TEST(Phantom, NodulesInsideGlandProperty) {
  PhantomConfig cfg;
  cfg.nodule_count_max = 3;
  for (const UltrasoundSample& s : generate_phantoms(cfg, 50)) {
    for (std::size_t i = 0; i < s.image.size(); ++i) {
      if (s.nodule_mask->pixels[i] == 1.0f) {
        EXPECT_EQ(s.gland_mask->pixels[i], 1.0f);
      }
    }
    for (float v : s.image.pixels) EXPECT_TRUE(v >= 0.0f && v <= 1.0f);
    EXPECT_EQ(*s.size_label, compute_size_label(*s.nodule_mask));
  }
}

TEST(Phantom, ImpossibleGeometryFails) {
  PhantomConfig cfg;
  cfg.nodule_radius_min = cfg.nodule_radius_max = 0.45;
  cfg.max_retries = 10;
  Rng rng(9);
  EXPECT_THROW(generate_phantom(cfg, rng), GenerationError);
}

TEST(Dataset, LabeledPairs) {
  TempDir dir;
  for (const char* stem : {"c", "a", "b"}) write_pair(dir.path(), stem, true, true);
  DatasetManifest m = load_dataset(dir.path());
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m.records[0].stem, "a");
  EXPECT_EQ(m.records[2].stem, "c");
  for (const auto& r : m.records) {
    EXPECT_EQ(r.split, Split::train);
    EXPECT_TRUE(r.nodule_mask && r.gland_mask);
  }
}

TEST(Dataset, ImageWithoutMaskIsUnlabeled) {
  TempDir dir;
  write_pair(dir.path(), "x", true, false);
  write_pair(dir.path(), "y", false, false);
  DatasetManifest m = load_dataset(dir.path());
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.records[1].split, Split::unlabeled);
  EXPECT_EQ(m.labeled().size(), 1u);
}

TEST(Dataset, MaskWithoutImageRejected) {
  TempDir dir;
  write_pair(dir.path(), "x", true, false);
  write_pgm(dir.path() / "mask_nodule" / "orphan.pgm", Image(2, 2));
  EXPECT_THROW(load_dataset(dir.path()), ManifestError);
}

TEST(Dataset, MissingRootAndUnreadableImage) {
  TempDir dir;
  EXPECT_THROW(load_dataset(dir.path() / "nope"), IoError);
  fs::create_directories(dir.path() / "image");
  std::ofstream(dir.path() / "image" / "bad.pgm") << "garbage";
  DatasetManifest m = load_dataset(dir.path());
  try {
    load_sample(m.records[0], 8, 8);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.pgm"), std::string::npos);
  }
}

TEST(Dataset, SplitLayout) {
  TempDir dir;
  write_pair(dir.path() / "train", "t1", true, true);
  write_pair(dir.path() / "test", "s1", true, false);
  DatasetManifest m = load_dataset(dir.path(), DatasetLayout::split);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.filter(Split::test).size(), 1u);
  EXPECT_EQ(m.filter(Split::test).records[0].stem, "s1");
}

TEST(Dataset, HundredFilesMatchShellListing) {
  TempDir dir;
  std::mt19937_64 rng(10);
  std::set<std::string> stems;
  while (stems.size() < 100) stems.insert("img_" + std::to_string(rng() % 100000));
  std::bernoulli_distribution labeled(0.6);
  for (const auto& s : stems) write_pair(dir.path(), s, labeled(rng), false);
  DatasetManifest m = load_dataset(dir.path());

  const std::string cmd = "ls '" + (dir.path() / "image").string() + "' | sed 's/\\.[^.]*$//' | LC_ALL=C sort";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  ASSERT_NE(pipe, nullptr);
  std::vector<std::string> oracle;
  char line[256];
  while (std::fgets(line, sizeof(line), pipe)) {
    std::string s(line);
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
    oracle.push_back(s);
  }
  ::pclose(pipe);
  ASSERT_EQ(m.size(), oracle.size());
  for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_EQ(m.records[i].stem, oracle[i]);
}

TEST(Dataset, JsonlRoundTrip) {
  TempDir dir;
  write_pair(dir.path(), "a", true, true);
  write_pair(dir.path(), "b", false, false);
  DatasetManifest m = load_dataset(dir.path());
  write_manifest_jsonl(dir.path() / "m.jsonl", m);
  DatasetManifest back = read_manifest_jsonl(dir.path() / "m.jsonl");
  EXPECT_EQ(manifest_to_jsonl(back), manifest_to_jsonl(m));
  EXPECT_NE(manifest_to_jsonl(m).find("\"split\":\"unlabeled\""), std::string::npos);
}

TEST(Dataset, LoadSampleResizesAndBinarizes) {
  TempDir dir;
  write_pair(dir.path(), "a", true, true);
  UltrasoundSample s = load_sample(load_dataset(dir.path()).records[0], 16, 16);
  EXPECT_EQ(s.image.height, 16);
  EXPECT_EQ(s.nodule_mask->width, 16);
  EXPECT_EQ(*s.size_label, 1.0f);
}
