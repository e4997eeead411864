#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "ssmt/checkpoint.hpp"
#include "ssmt/config.hpp"
#include "ssmt/errors.hpp"
#include "ssmt/eval.hpp"
#include "ssmt/metrics.hpp"
#include "ssmt/params.hpp"
#include "ssmt/phantom.hpp"
#include "ssmt/training.hpp"

using namespace ssmt;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("ssmt_eval_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

Image mask_from(int h, int w, const std::function<bool(int, int)>& on) {
  Image m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at(y, x) = on(y, x) ? 1.0f : 0.0f;
  return m;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.encoder.image_h = c.encoder.image_w = 32;
  c.encoder.patch = 8;
  c.encoder.embed_dim = 16;
  c.encoder.layers = 1;
  c.encoder.heads = 2;
  c.encoder.mlp_ratio = 2;
  c.encoder.cnn_channels = {4, 8};
  c.decoder.queries = 2;
  c.decoder.dim = 8;
  c.decoder.iterations = 2;
  return c;
}

const char* kTinyModelJson =
    R"("model": {"image_size": 32, "patch": 8, "embed_dim": 16, "layers": 1, "heads": 2, "mlp_ratio": 2,
                 "cnn_channels": [4, 8], "queries": 2, "decoder_dim": 8, "iterations": 2})";

std::vector<UltrasoundSample> phantoms(int n, int size = 32) {
  PhantomConfig pc;
  pc.height = pc.width = size;
  pc.seed = 11;
  return generate_phantoms(pc, n);
}

// Zeroed nodule decoder: every score ties, so query 0 is selected with a map of
// 0.5, the CNN map is 0.5 too, and the fused mask never exceeds the threshold.
void silence_nodule_decoder(SsmtNet& net) {
  for (const auto& p : net.params().select({groups::nodule_decoder})) {
    Tensor t = p.tensor;
    std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0f);
  }
}

int run_cli(const std::string& args, std::string* out = nullptr) {
  const fs::path capture = fs::temp_directory_path() / "ssmt_eval_cli_stdout.txt";
  const std::string cmd = std::string(SSMT_CLI) + " " + args + " > " + capture.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  if (out) *out = slurp(capture);
  fs::remove(capture);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

// ---- metrics -------------------------------------------------------------------

TEST(Metrics, HandCountedExamples) {
  const Image full = mask_from(16, 16, [](int, int) { return true; });
  const Image left = mask_from(16, 16, [](int, int x) { return x < 8; });
  const Image right = mask_from(16, 16, [](int, int x) { return x >= 8; });
  const Image empty(16, 16);
  EXPECT_EQ(iou(full, full), 1.0);
  EXPECT_EQ(dsc(left, left), 1.0);
  EXPECT_EQ(iou(left, right), 0.0);
  EXPECT_EQ(dsc(left, right), 0.0);
  EXPECT_EQ(iou(left, full), 0.5);
  EXPECT_DOUBLE_EQ(dsc(left, full), 2.0 / 3.0);
  EXPECT_EQ(iou(empty, empty), 1.0);
  EXPECT_EQ(dsc(empty, empty), 1.0);
  EXPECT_EQ(iou(empty, full), 0.0);
}

TEST(Metrics, ShapeMismatchThrows) {
  EXPECT_THROW(iou(Image(4, 4), Image(4, 5)), DimensionError);
  const std::vector<std::uint8_t> a(5), b(6);
  EXPECT_THROW(overlap(a, b), DimensionError);
}

TEST(Metrics, BruteForceOracleOnRandomPairs) {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const double dp = u(rng), dg = u(rng);
    Image p(16, 16), g(16, 16);
    for (float& v : p.pixels) v = u(rng) < dp ? 1.0f : 0.0f;
    for (float& v : g.pixels) v = u(rng) < dg ? 1.0f : 0.0f;
    // Oracle: count coordinates in each set by scanning the grid.
    long inter = 0, uni = 0, np = 0, ng = 0;
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        const bool a = p.at(y, x) > 0.5f, b = g.at(y, x) > 0.5f;
        inter += a && b;
        uni += a || b;
        np += a;
        ng += b;
      }
    const double o_iou = uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
    const double o_dsc = np + ng == 0 ? 1.0 : static_cast<double>(2 * inter) / (np + ng);
    ASSERT_EQ(iou(p, g), o_iou) << "trial " << trial;
    ASSERT_EQ(dsc(p, g), o_dsc) << "trial " << trial;
    // dsc = 2 iou / (1 + iou): exact on counts, since U + I = |P| + |G|.
    const OverlapCounts c = overlap(p, g);
    ASSERT_EQ(c.union_count() + c.intersection, c.pred + c.gt);
    const double i = iou(c);
    ASSERT_NEAR(dsc(c), 2 * i / (1 + i), 1e-15) << "trial " << trial;
    ASSERT_LE(iou(c), dsc(c));
  }
}

// ---- aggregation ---------------------------------------------------------------

TEST(Report, PopulationStdAndFormatting) {
  EXPECT_DOUBLE_EQ(population_std({1, 2, 3}), std::sqrt(2.0 / 3.0));
  EXPECT_EQ(population_std({0.5}), 0.0);
  EXPECT_EQ(format_percent(0.7834, 0.0015), "78.34 ± 0.15");
  EXPECT_EQ(format_percent(1.0, 0.0), "100.00 ± 0.00");
}

TEST(Report, IdenticalSeedsHaveZeroSpread) {
  SeedScore s;
  s.images = {{"a", 0.5, 2.0 / 3.0}, {"b", 1.0, 1.0}};
  s.iou = 0.75;
  s.dsc = 5.0 / 6.0;
  const MetricReport r = aggregate({s, s, s});
  EXPECT_EQ(r.iou_std, 0.0);
  EXPECT_EQ(r.dsc_std, 0.0);
  EXPECT_EQ(r.iou_mean, 0.75);
  EXPECT_EQ(r.to_csv(), "metric,mean,std,seeds,images,excluded\niou,75.00,0.00,3,2,0\ndsc,83.33,0.00,3,2,0\n");
  const MetricReport per_image = aggregate({s}, Spread::images);
  EXPECT_DOUBLE_EQ(per_image.iou_std, 0.25);
}

TEST(Report, SpreadAcrossSeedMeans) {
  SeedScore a, b;
  a.iou = 0.70;
  b.iou = 0.80;
  a.dsc = b.dsc = 0.9;
  const MetricReport r = aggregate({a, b});
  EXPECT_NEAR(r.iou_mean, 0.75, 1e-15);
  EXPECT_NEAR(r.iou_std, 0.05, 1e-15);
  EXPECT_THROW(aggregate({}), ContractError);
}

TEST(ScoreModel, OrderInvariantAndCountsExclusions) {
  SsmtNet net(tiny_model());
  std::vector<UltrasoundSample> data = phantoms(6);
  data[3].nodule_mask.reset();
  const SeedScore a = score_model(net, data);
  std::reverse(data.begin(), data.end());
  std::rotate(data.begin(), data.begin() + 2, data.end());
  const SeedScore b = score_model(net, data);
  EXPECT_EQ(a.excluded, 1);
  ASSERT_EQ(a.images.size(), 5u);
  EXPECT_EQ(a.iou, b.iou);
  EXPECT_EQ(a.dsc, b.dsc);
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    EXPECT_EQ(a.images[i].id, b.images[i].id);
    EXPECT_EQ(a.images[i].dsc, b.images[i].dsc);
  }
}

TEST(Evaluate, PerfectPredictionReportsHundred) {
  TempDir dir("perfect");
  SsmtNet net(tiny_model());
  const DatasetManifest m = write_dataset(dir.path / "ds", phantoms(1));
  save_checkpoint(dir.path / "m.ckpt", model_state(net));
  // Replace the ground truth with the model's own prediction.
  const UltrasoundSample s = load_sample(m.records[0], 32, 32);
  const SsmtNet::Prediction p = net.predict(image_tensor(s));
  Image mask(32, 32);
  for (std::size_t i = 0; i < mask.size(); ++i) mask.pixels[i] = p.nodule[i];
  write_pgm(*m.records[0].nodule_mask, mask);
  const MetricReport r = evaluate({dir.path / "m.ckpt", dir.path / "m.ckpt", dir.path / "m.ckpt"}, m);
  EXPECT_EQ(format_percent(r.iou_mean, r.iou_std), "100.00 ± 0.00");
  EXPECT_EQ(format_percent(r.dsc_mean, r.dsc_std), "100.00 ± 0.00");
  EXPECT_EQ(r.seeds.size(), 3u);
}

TEST(Evaluate, CorruptCheckpointAndMasklessDataRejected) {
  TempDir dir("corrupt");
  SsmtNet net(tiny_model());
  auto data = phantoms(2);
  std::string bytes = encode_checkpoint(model_state(net));
  bytes[bytes.size() / 2] ^= 1;
  spit(dir.path / "bad.ckpt", bytes);
  const DatasetManifest m = write_dataset(dir.path / "ds", data);
  EXPECT_THROW(evaluate({dir.path / "bad.ckpt"}, m), CorruptCheckpoint);
  for (auto& s : data) s.nodule_mask.reset();
  save_checkpoint(dir.path / "ok.ckpt", model_state(net));
  const DatasetManifest bare = write_dataset(dir.path / "bare", data);
  EXPECT_THROW(evaluate({dir.path / "ok.ckpt"}, bare), DatasetError);
}

// ---- inference -----------------------------------------------------------------

TEST(Infer, OutputsMatchInputDimensions) {
  TempDir dir("infer_dims");
  SsmtNet net(tiny_model());
  const UltrasoundSample s = phantoms(1, 48).front();
  Image wide = normalize_resize(s.image, 40, 56);
  write_pgm(dir.path / "scan.pgm", wide);
  const InferOutputs o = infer(net, dir.path / "scan.pgm", dir.path / "out");
  for (const fs::path& p : {o.nodule_mask, o.gland_mask}) {
    const Gray8 g = read_pgm_bytes(p);
    EXPECT_EQ(g.height, 40);
    EXPECT_EQ(g.width, 56);
    for (auto b : g.bytes) EXPECT_TRUE(b == 0 || b == 255);
  }
  const std::string ppm = slurp(o.overlay);
  EXPECT_EQ(ppm.substr(0, 3), "P6\n");
  EXPECT_NE(ppm.find("56 40"), std::string::npos);
  EXPECT_EQ(ppm.size(), std::string("P6\n56 40\n255\n").size() + 3u * 40 * 56);
}

TEST(Infer, EmptyPredictionAndEmptyTruthGiveGrayscaleCopy) {
  TempDir dir("infer_gray");
  SsmtNet net(tiny_model());
  silence_nodule_decoder(net);
  const UltrasoundSample s = phantoms(1).front();
  write_pgm(dir.path / "scan.pgm", s.image);
  write_pgm(dir.path / "gt.pgm", Image(32, 32));
  const InferOutputs o = infer(net, dir.path / "scan.pgm", dir.path / "out", dir.path / "gt.pgm");
  EXPECT_TRUE(std::all_of(o.nodule.begin(), o.nodule.end(), [](auto v) { return v == 0; }));
  const Gray8 in = read_pgm_bytes(dir.path / "scan.pgm");
  const std::string ppm = slurp(o.overlay);
  const std::size_t header = ppm.size() - 3u * in.bytes.size();
  for (std::size_t i = 0; i < in.bytes.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      ASSERT_EQ(static_cast<std::uint8_t>(ppm[header + 3 * i + c]), in.bytes[i]) << "pixel " << i << " channel " << c;
    }
  }
}

TEST(Infer, TruthDrawnInGreen) {
  TempDir dir("infer_green");
  SsmtNet net(tiny_model());
  silence_nodule_decoder(net);
  const UltrasoundSample s = phantoms(1).front();
  write_pgm(dir.path / "scan.pgm", s.image);
  write_pgm(dir.path / "gt.pgm", *s.nodule_mask);
  const InferOutputs o = infer(net, dir.path / "scan.pgm", dir.path / "out", dir.path / "gt.pgm");
  const std::string ppm = slurp(o.overlay);
  const std::size_t header = ppm.size() - 3u * s.image.size();
  for (std::size_t i = 0; i < s.image.size(); ++i) {
    if (s.nodule_mask->pixels[i] != 0.0f) {
      ASSERT_EQ(static_cast<std::uint8_t>(ppm[header + 3 * i + 1]), 255);
    }
  }
  write_pgm(dir.path / "small.pgm", Image(8, 8));
  EXPECT_THROW(infer(net, dir.path / "scan.pgm", dir.path / "out", dir.path / "small.pgm"), DimensionError);
}

// ---- run config ----------------------------------------------------------------

TEST(RunConfig, DefaultsFollowThePaper) {
  const RunConfig c = parse_run_config("{}");
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.supervised.epochs, 300);
  EXPECT_EQ(c.supervised.batch_size, 32);
  EXPECT_EQ(c.supervised.lr0, 1e-3f);
  EXPECT_EQ(c.supervised.lr_min, 1e-6f);
  EXPECT_EQ(c.supervised.weight_decay, 0.01f);
  EXPECT_EQ(c.weights.alpha, 0.8f);
  EXPECT_EQ(c.weights.beta, 0.1f);
  EXPECT_EQ(c.weights.gamma, 0.05f);
  EXPECT_EQ(c.weights.eta, 0.05f);
  EXPECT_TRUE(c.ablation.reconstruction && c.ablation.gland && c.ablation.size);
}

TEST(RunConfig, SeedReachesEveryRandomSource) {
  RunConfig c = parse_run_config(R"({"train": {"seed": 7}})");
  EXPECT_EQ(c.model.seed, 7u);
  EXPECT_EQ(c.pretrain.seed, 7u);
  EXPECT_EQ(c.supervised.augmentation.seed, 7u);
  c.set_seed(9);
  EXPECT_EQ(c.model.seed, 9u);
  EXPECT_EQ(c.pretrain.augmentation.seed, 9u);
}

TEST(RunConfig, UnknownKeysRejectedAtEveryLevel) {
  for (const char* text : {R"({"modle": {}})", R"({"model": {"depth": 3}})",
                           R"({"train": {"supervised": {"epoch": 3}}})",
                           R"({"train": {"pretrain": {"augmentation": {"mirror": true}}}})",
                           R"({"train": {"weights": {"delta": 0.1}}})", R"({"data": {"phantoms": {"n": 3}}})",
                           R"({"ablation": {"boundary": true}})"}) {
    EXPECT_THROW(parse_run_config(text), ConfigError) << text;
  }
}

TEST(RunConfig, TypesAndConstraintsValidatedAtParseTime) {
  EXPECT_THROW(parse_run_config(R"({"model": {"patch": "eight"}})"), ConfigError);
  EXPECT_THROW(parse_run_config("{not json"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"train": {"weights": {"alpha": 0.4, "beta": 0.3, "gamma": 0.2, "eta": 0.1}}})"),
               ConfigError);
  EXPECT_THROW(parse_run_config(R"({"model": {"image_size": 60}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"ablation": {"variant": 3, "gland": false}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"ablation": {"variant": 9}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"data": {"root": "a", "manifest": "b"}})"), ConfigError);
  EXPECT_THROW(parse_run_config(R"({"data": {"layout": "nested"}})"), ConfigError);
  const RunConfig v3 = parse_run_config(R"({"ablation": {"variant": 3}})");
  EXPECT_TRUE(v3.ablation.gland);
  EXPECT_FALSE(v3.ablation.size);
}

TEST(RunConfig, PhantomDataSplitsEightyTwenty) {
  const RunConfig c = parse_run_config(std::string("{") + kTinyModelJson +
                                       R"(, "data": {"phantoms": {"count": 50, "unlabeled": 5}}})");
  const TrainingData d = load_training_data(c);
  EXPECT_EQ(d.train.size() + d.validation.size(), 50u);
  EXPECT_EQ(d.pretrain.size(), d.train.size() + 5);
  for (const auto& s : d.validation) EXPECT_TRUE(is_validation_stem(s.id));
  for (const auto& s : d.train) EXPECT_FALSE(is_validation_stem(s.id));
  for (const auto& s : d.pretrain) {
    for (const auto& v : d.validation) EXPECT_NE(s.id, v.id);
  }
}

// ---- command line --------------------------------------------------------------

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli");
    ASSERT_EQ(run_cli("synth-gen --out " + (dir_->path / "ds").string() + " --count 12 --unlabeled 2 --size 32"), 0);
    spit(dir_->path / "cfg.json", std::string("{") + kTinyModelJson + R"(, "data": {"root": ")" +
                                      (dir_->path / "ds").string() +
                                      R"("}, "train": {"supervised": {"epochs": 1, "batch_size": 4},
                                          "pretrain": {"epochs": 1, "batch_size": 4}}})");
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path path(const std::string& name) { return dir_->path / name; }
  static TempDir* dir_;
};
TempDir* Cli::dir_ = nullptr;

TEST_F(Cli, SynthGenIsDeterministic) {
  ASSERT_EQ(run_cli("synth-gen --out " + path("ds2").string() + " --count 12 --unlabeled 2 --size 32"), 0);
  for (const char* f : {"image/phantom_00003.pgm", "mask_nodule/phantom_00003.pgm", "image/phantom_00013.pgm"})
    EXPECT_EQ(slurp(path("ds") / f), slurp(path("ds2") / f)) << f;
  EXPECT_FALSE(fs::exists(path("ds") / "mask_nodule/phantom_00013.pgm"));
}

TEST_F(Cli, TrainEvalInferRoundTrip) {
  ASSERT_EQ(run_cli("pretrain --config " + path("cfg.json").string() + " --out " + path("pre").string()), 0);
  ASSERT_EQ(run_cli("train --config " + path("cfg.json").string() + " --out " + path("run").string() + " --init " +
                    path("pre/last.ckpt").string()),
            0);
  std::string out;
  ASSERT_EQ(run_cli("eval --checkpoint " + path("run/last.ckpt").string() + " --data " + path("ds").string(), &out),
            0);
  EXPECT_EQ(out.rfind("metric,mean,std,seeds,images,excluded\niou,", 0), 0u) << out;
  EXPECT_NE(out.find(",1,12,2\n"), std::string::npos) << out;
  ASSERT_EQ(run_cli("infer --checkpoint " + path("run/last.ckpt").string() + " --image " +
                    (path("ds") / "image/phantom_00000.pgm").string() + " --out " + path("inf").string()),
            0);
  EXPECT_TRUE(fs::exists(path("inf/phantom_00000_overlay.ppm")));
}

TEST_F(Cli, SameArgumentsGiveIdenticalFiles) {
  for (const char* run : {"detA", "detB"})
    ASSERT_EQ(run_cli("train --config " + path("cfg.json").string() + " --out " + path(run).string() + " --seed 5"),
              0);
  EXPECT_EQ(slurp(path("detA/metrics.csv")), slurp(path("detB/metrics.csv")));
  EXPECT_EQ(slurp(path("detA/last.ckpt")), slurp(path("detB/last.ckpt")));
}

TEST_F(Cli, ValidationErrorsExitOne) {
  spit(path("bad_weights.json"), R"({"train": {"weights": {"alpha": 0.4, "beta": 0.3, "gamma": 0.2, "eta": 0.1}}})");
  EXPECT_EQ(run_cli("train --config " + path("bad_weights.json").string() + " --out " + path("x").string()), 1);
  EXPECT_EQ(run_cli("eval --checkpoint a --data b --frobnicate"), 1);
  EXPECT_EQ(run_cli("train --out x"), 1);
  EXPECT_EQ(run_cli(""), 1);
}

TEST_F(Cli, RuntimeFaultsExitTwo) {
  spit(path("junk.ckpt"), "SSMT garbage");
  EXPECT_EQ(run_cli("eval --checkpoint " + path("junk.ckpt").string() + " --data " + path("ds").string()), 2);
  EXPECT_EQ(run_cli("infer --checkpoint " + path("missing.ckpt").string() + " --image x.pgm --out y"), 2);
}

TEST_F(Cli, GradCheckPrimitivesPass) {
  std::string out;
  EXPECT_EQ(run_cli("grad-check --primitives-only", &out), 0);
  EXPECT_EQ(out.find("FAIL"), std::string::npos);
  EXPECT_NE(out.find("PASS,matmul"), std::string::npos);
}
