#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ssmt/config.hpp"
#include "ssmt/errors.hpp"
#include "ssmt/eval.hpp"
#include "ssmt/gradcheck.hpp"
#include "ssmt/model_check.hpp"
#include "ssmt/phantom.hpp"
#include "ssmt/training.hpp"

using namespace ssmt;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kFault = 2;

void print_epoch(const EpochLog& row) {
  std::fprintf(stderr, "epoch %d step %lld lr %.3g loss %.6f", row.epoch, static_cast<long long>(row.step),
               static_cast<double>(row.lr), row.loss_total);
  if (row.val_dsc) std::fprintf(stderr, " val_dsc %.4f", *row.val_dsc);
  std::fprintf(stderr, "\n");
}

RunConfig load_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
  RunConfig c = load_run_config(path);
  if (seed) c.set_seed(*seed);
  return c;
}

int synth_gen(const std::string& out, int count, int unlabeled, int size, std::uint64_t seed, bool manifest) {
  PhantomConfig pc;
  pc.height = pc.width = size;
  pc.seed = seed;
  pc.validate();
  std::vector<UltrasoundSample> samples = generate_phantoms(pc, count);
  for (UltrasoundSample& s : generate_phantoms(pc, unlabeled, count)) {
    s.nodule_mask.reset();
    s.gland_mask.reset();
    samples.push_back(std::move(s));
  }
  const DatasetManifest m = write_dataset(out, samples);
  if (manifest) write_manifest_jsonl(fs::path(out) / "manifest.jsonl", m);
  std::printf("wrote %zu images (%d labeled, %d unlabeled) to %s\n", m.size(), count, unlabeled, out.c_str());
  return kOk;
}

int pretrain(const std::string& config, const std::string& out, const std::string& resume,
             const std::optional<std::uint64_t>& seed) {
  const RunConfig c = load_config(config, seed);
  const TrainingData data = load_training_data(c);
  SsmtNet model(c.model);
  TrainIo io;
  io.out_dir = out;
  io.resume = resume;
  io.on_epoch = print_epoch;
  const TrainState st = run_pretrain(model, data.pretrain, c.pretrain, io);
  std::printf("pretrain: %zu images, %lld steps, reconstruction loss %.6f\n", data.pretrain.size(),
              static_cast<long long>(st.step), st.log.empty() ? 0.0 : st.log.back().loss_total);
  return kOk;
}

int train(const std::string& config, const std::string& out, const std::string& init, const std::string& resume,
          const std::optional<std::uint64_t>& seed) {
  const RunConfig c = load_config(config, seed);
  const TrainingData data = load_training_data(c);
  SsmtNet model(c.model);
  if (!init.empty()) load_model_state(model, load_checkpoint(init));
  TrainIo io;
  io.out_dir = out;
  io.resume = resume;
  io.on_epoch = print_epoch;
  const TrainState st = run_supervised(model, data.train, data.validation, c.supervised, c.weights, c.ablation, io);
  std::printf("train: %zu train / %zu validation images, %lld steps, best val DSC %.4f\n", data.train.size(),
              data.validation.size(), static_cast<long long>(st.step), st.best_val_dsc);
  return kOk;
}

int eval(const std::vector<std::string>& checkpoints, const std::string& data, const std::string& manifest,
         const std::string& layout, const std::string& split, const std::string& spread, const std::string& per_image) {
  DatasetManifest m;
  if (!manifest.empty()) {
    m = read_manifest_jsonl(manifest);
  } else {
    m = load_dataset(data, layout == "split" ? DatasetLayout::split : DatasetLayout::flat);
  }
  if (split != "all") m = m.filter(parse_split(split));
  if (m.size() == 0) throw DatasetError("no images to evaluate");
  std::vector<fs::path> paths(checkpoints.begin(), checkpoints.end());
  const MetricReport r = evaluate(paths, m, spread == "images" ? Spread::images : Spread::seeds);
  if (r.excluded > 0) std::fprintf(stderr, "warning: %d images without a nodule mask were excluded\n", r.excluded);
  std::cout << r.to_csv();
  if (!per_image.empty()) {
    std::ofstream f(per_image);
    if (!f) throw IoError("cannot write " + per_image);
    f << r.per_image_csv();
  }
  return kOk;
}

int infer_cmd(const std::string& checkpoint, const std::string& image, const std::string& out, const std::string& gt) {
  const auto model = load_model(checkpoint);
  std::optional<fs::path> truth;
  if (!gt.empty()) truth = gt;
  const InferOutputs o = infer(*model, image, out, truth);
  std::printf("%s\n%s\n%s\n", o.nodule_mask.c_str(), o.gland_mask.c_str(), o.overlay.c_str());
  return kOk;
}

int grad_check(bool skip_model) {
  bool ok = true;
  for (const GradCheckResult& r : primitive_gradient_checks(1e-3)) {
    const bool pass = r.rel_err < r.tolerance;
    ok = ok && pass;
    std::printf("%s,%s,%.3e,%.0e\n", pass ? "PASS" : "FAIL", r.name.c_str(), r.rel_err, r.tolerance);
  }
  if (!skip_model) {
    const ModelGradCheck m = model_gradient_checks(gradcheck_model_config(), 1e-2);
    const bool pass = m.total.rel_err < m.total.tolerance;
    ok = ok && pass;
    std::printf("%s,%s,%.3e,%.0e\n", pass ? "PASS" : "FAIL", m.total.name.c_str(), m.total.rel_err,
                m.total.tolerance);
  }
  return ok ? kOk : kInvalid;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised multi-task transformer for thyroid nodule segmentation"};
  app.require_subcommand(1);

  std::string config, out, resume, init, data, manifest, layout = "flat", split = "all", spread = "seeds";
  std::string per_image, image, gt, checkpoint;
  std::vector<std::string> checkpoints;
  std::optional<std::uint64_t> seed;
  int count = 80, unlabeled = 0, size = 64;
  std::uint64_t synth_seed = 42;
  bool manifest_out = false, skip_model = false;

  auto* synth = app.add_subcommand("synth-gen", "Write a synthetic phantom dataset");
  synth->add_option("--out", out, "Dataset directory")->required();
  synth->add_option("--count", count, "Labeled phantoms")->check(CLI::PositiveNumber);
  synth->add_option("--unlabeled", unlabeled, "Additional phantoms without masks")->check(CLI::NonNegativeNumber);
  synth->add_option("--size", size, "Canvas side in pixels")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_flag("--manifest", manifest_out, "Also write manifest.jsonl");

  auto* pre = app.add_subcommand("pretrain", "Phase 1: reconstruction pretraining");
  pre->add_option("--config", config, "RunConfig JSON")->required();
  pre->add_option("--out", out, "Run directory")->required();
  pre->add_option("--resume", resume, "Checkpoint to continue from");
  pre->add_option("--seed", seed, "Overrides the config seed");

  auto* tr = app.add_subcommand("train", "Phase 2: supervised multi-task training");
  tr->add_option("--config", config, "RunConfig JSON")->required();
  tr->add_option("--out", out, "Run directory")->required();
  tr->add_option("--init", init, "Start from these weights (e.g. a pretraining checkpoint)");
  tr->add_option("--resume", resume, "Checkpoint to continue from");
  tr->add_option("--seed", seed, "Overrides the config seed");

  auto* ev = app.add_subcommand("eval", "IoU/DSC over a dataset, mean and std across checkpoints");
  ev->add_option("--checkpoint", checkpoints, "One checkpoint per seed")->required();
  auto* ev_data = ev->add_option("--data", data, "Dataset directory");
  auto* ev_manifest = ev->add_option("--manifest", manifest, "Manifest JSONL");
  ev_data->excludes(ev_manifest);
  ev->add_option("--layout", layout, "Dataset layout")->check(CLI::IsMember({"flat", "split"}));
  ev->add_option("--split", split, "Records to score")->check(CLI::IsMember({"all", "train", "test", "unlabeled"}));
  ev->add_option("--spread", spread, "Std across seeds or images")->check(CLI::IsMember({"seeds", "images"}));
  ev->add_option("--per-image", per_image, "Write per-image scores to this CSV");

  auto* inf = app.add_subcommand("infer", "Predict masks and an overlay for one image");
  inf->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  inf->add_option("--image", image, "Input image (.pgm or .png)")->required();
  inf->add_option("--out", out, "Output directory")->required();
  inf->add_option("--gt", gt, "Ground-truth nodule mask drawn in green");

  auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient suite");
  gc->add_flag("--primitives-only", skip_model, "Skip the end-to-end model check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (*synth) return synth_gen(out, count, unlabeled, size, synth_seed, manifest_out);
    if (*pre) return pretrain(config, out, resume, seed);
    if (*tr) return train(config, out, init, resume, seed);
    if (*ev) {
      if (data.empty() && manifest.empty()) throw ConfigError("eval needs --data or --manifest");
      return eval(checkpoints, data, manifest, layout, split, spread, per_image);
    }
    if (*inf) return infer_cmd(checkpoint, image, out, gt);
    if (*gc) return grad_check(skip_model);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kInvalid;
  } catch (const ManifestError& e) {
    std::fprintf(stderr, "manifest error: %s\n", e.what());
    return kInvalid;
  } catch (const DatasetError& e) {
    std::fprintf(stderr, "dataset error: %s\n", e.what());
    return kInvalid;
  } catch (const DimensionError& e) {
    std::fprintf(stderr, "dimension error: %s\n", e.what());
    return kInvalid;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return kInvalid;
  } catch (const GenerationError& e) {
    std::fprintf(stderr, "generation error: %s\n", e.what());
    return kInvalid;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFault;
  }
  return kInvalid;
}
