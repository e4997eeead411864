#include "ssmt/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "ssmt/errors.hpp"
#include "ssmt/metrics.hpp"
#include "ssmt/ops.hpp"
#include "ssmt/optim.hpp"
#include "ssmt/parallel.hpp"
#include "ssmt/params.hpp"

namespace ssmt {

std::string to_string(Phase phase) { return phase == Phase::pretrain ? "pretrain" : "supervised"; }

void PhaseConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (max_steps < 0) throw ConfigError("max_steps must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(lr0 >= 0.0f && lr_min >= 0.0f && lr_min <= lr0)) throw ConfigError("learning rates must satisfy 0 <= lr_min <= lr0");
  if (!(weight_decay >= 0.0f)) throw ConfigError("weight_decay must be non-negative");
  augmentation.validate();
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

}  // namespace

std::string EpochLog::csv_row() const {
  return std::to_string(epoch) + "," + std::to_string(step) + "," + fmt(lr) + "," + fmt(loss_total) + "," +
         fmt(loss_nodule) + "," + fmt(loss_gland) + "," + fmt(loss_size) + "," + fmt(loss_rec) + "," + fmt(val_iou) +
         "," + fmt(val_dsc);
}

Tensor image_tensor(const UltrasoundSample& s) {
  return Tensor::from({1, s.image.height, s.image.width}, s.image.pixels);
}

namespace {

Tensor mask_tensor(const Image& m) { return Tensor::from({m.height, m.width}, m.pixels); }

void check_input(const SsmtNet& model, const UltrasoundSample& s) {
  const EncoderConfig& e = model.config().encoder;
  if (e.in_channels != 1 || s.image.height != e.image_h || s.image.width != e.image_w) {
    throw DimensionError("sample " + s.id + " is " + std::to_string(s.image.height) + "x" +
                         std::to_string(s.image.width) + " but the model expects " + std::to_string(e.image_h) + "x" +
                         std::to_string(e.image_w));
  }
}

// ---- checkpoint state --------------------------------------------------------

constexpr const char* kMetaModel = "meta.model";

Tensor scalar_tensor(double v) { return Tensor::from({1}, {static_cast<float>(v)}); }

std::vector<NamedTensor> train_state_tensors(const SsmtNet& model, const Adam& opt, const TrainState& st) {
  std::vector<NamedTensor> out = model_state(model);
  out.push_back({"train.phase", scalar_tensor(st.phase == Phase::pretrain ? 0 : 1)});
  out.push_back({"train.epoch", scalar_tensor(st.epoch)});
  // Split so step counts stay exact beyond f32's 2^24 integer range.
  out.push_back({"train.step", Tensor::from({2}, {static_cast<float>(st.step >> 20), static_cast<float>(st.step & 0xfffff)})});
  out.push_back({"train.best_val_dsc", scalar_tensor(st.best_val_dsc)});
  for (std::size_t i = 0; i < opt.params().size(); ++i) {
    const auto& p = opt.params()[i];
    const AdamState& s = opt.states()[i];
    out.push_back({"adam.m." + p.name, Tensor::from(p.tensor.shape(), s.m)});
    out.push_back({"adam.v." + p.name, Tensor::from(p.tensor.shape(), s.v)});
    out.push_back({"adam.t." + p.name,
                   Tensor::from({2}, {static_cast<float>(s.step >> 20), static_cast<float>(s.step & 0xfffff)})});
  }
  return out;
}

std::int64_t split_count(const Tensor& t) {
  return (static_cast<std::int64_t>(t.at(0)) << 20) + static_cast<std::int64_t>(t.at(1));
}

const Tensor& require(const std::vector<NamedTensor>& ts, const std::string& name) {
  const NamedTensor* t = find_tensor(ts, name);
  if (!t) throw CorruptCheckpoint("checkpoint lacks tensor " + name);
  return t->tensor;
}

void restore_train_state(const std::filesystem::path& path, SsmtNet& model, Adam& opt, TrainState& st) {
  const std::vector<NamedTensor> ts = load_checkpoint(path);
  load_model_state(model, ts);
  const Phase phase = require(ts, "train.phase").at(0) == 0.0f ? Phase::pretrain : Phase::supervised;
  if (phase != st.phase) {
    throw ConfigError("cannot resume a " + to_string(phase) + " checkpoint in the " + to_string(st.phase) + " phase");
  }
  st.epoch = static_cast<int>(require(ts, "train.epoch").at(0));
  st.step = split_count(require(ts, "train.step"));
  st.best_val_dsc = require(ts, "train.best_val_dsc").at(0);
  for (std::size_t i = 0; i < opt.params().size(); ++i) {
    const std::string& name = opt.params()[i].name;
    AdamState& s = opt.states()[i];
    const Tensor& m = require(ts, "adam.m." + name);
    const Tensor& v = require(ts, "adam.v." + name);
    const std::int64_t n = opt.params()[i].tensor.numel();
    if (m.numel() != n || v.numel() != n) {
      throw CorruptCheckpoint("optimizer moments for " + name + " have the wrong size");
    }
    s.m.assign(m.data().begin(), m.data().end());
    s.v.assign(v.data().begin(), v.data().end());
    s.step = split_count(require(ts, "adam.t." + name));
  }
}

// ---- shared loop ---------------------------------------------------------------

struct LossParts {
  Tensor total;
  std::optional<double> nodule, gland, size, rec;
};

using SampleLoss = std::function<LossParts(const UltrasoundSample&)>;

struct Sums {
  double total = 0, nodule = 0, gland = 0, size = 0, rec = 0;
  bool has_nodule = false, has_gland = false, has_size = false, has_rec = false;
  int count = 0;
};

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x5f5f5f5fULL, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

void append_csv(const std::filesystem::path& dir, const EpochLog& row) {
  const std::filesystem::path p = dir / "metrics.csv";
  const bool fresh = !std::filesystem::exists(p);
  std::ofstream f(p, std::ios::app);
  if (!f) throw IoError("cannot write " + p.string());
  if (fresh) f << kMetricsHeader << "\n";
  f << row.csv_row() << "\n";
}

TrainState train_loop(SsmtNet& model, const std::vector<UltrasoundSample>& data,
                      const std::vector<UltrasoundSample>& validation, const PhaseConfig& cfg,
                      std::vector<NamedTensor> params, const SampleLoss& sample_loss, const TrainIo& io) {
  if (data.empty()) throw DatasetError("no training samples");
  for (const auto& s : data) check_input(model, s);
  for (const auto& s : validation) check_input(model, s);

  AdamHyper hyper;
  hyper.lr = cfg.lr0;
  hyper.weight_decay = cfg.weight_decay;
  Adam opt(std::move(params), hyper);
  TrainState st;
  st.phase = cfg.phase;
  if (!io.resume.empty()) restore_train_state(io.resume, model, opt, st);
  if (!io.out_dir.empty()) std::filesystem::create_directories(io.out_dir);

  const std::size_t n = data.size(), bs = static_cast<std::size_t>(cfg.batch_size);
  const std::int64_t per_epoch = static_cast<std::int64_t>((n + bs - 1) / bs);
  std::int64_t total_steps = per_epoch * cfg.epochs;
  if (cfg.max_steps > 0) total_steps = std::min<std::int64_t>(total_steps, cfg.max_steps);

  Tape& tape = Tape::active();
  for (int epoch = st.epoch; epoch < cfg.epochs && st.step < total_steps; ++epoch) {
    const std::vector<std::size_t> order = epoch_order(n, cfg.seed, epoch);
    Sums sums;
    float lr = cfg.lr0;
    for (std::size_t start = 0; start < n && st.step < total_steps; start += bs) {
      const std::size_t end = std::min(n, start + bs);
      const float inv = 1.0f / static_cast<float>(end - start);
      opt.zero_grad();
      double batch_total = 0.0;
      // Workers prepare the batch; slot k keeps the sample order fixed.
      std::vector<UltrasoundSample> batch(end - start);
      parallel_for(batch.size(), [&](std::size_t k) {
        const std::size_t idx = order[start + k];
        if (cfg.augment) {
          Rng rng(derive_seed(cfg.seed, idx + 1, static_cast<std::uint64_t>(epoch)));
          batch[k] = augment(data[idx], cfg.augmentation, rng, data);
        } else {
          batch[k] = data[idx];
        }
      });
      for (const UltrasoundSample& sample : batch) {
        tape.clear();
        LossParts parts = sample_loss(sample);
        backward(mul_scalar(parts.total, inv));
        tape.clear();
        const double t = parts.total.item();
        if (!std::isfinite(t)) throw NumericFault("non-finite loss on sample " + sample.id);
        batch_total += t;
        sums.total += t;
        auto acc = [](double& s, bool& has, const std::optional<double>& v) {
          if (v) {
            s += *v;
            has = true;
          }
        };
        acc(sums.nodule, sums.has_nodule, parts.nodule);
        acc(sums.gland, sums.has_gland, parts.gland);
        acc(sums.size, sums.has_size, parts.size);
        acc(sums.rec, sums.has_rec, parts.rec);
        ++sums.count;
      }
      lr = cosine_lr(st.step, total_steps, cfg.lr0, cfg.lr_min);
      opt.set_lr(lr);
      opt.step();
      ++st.step;
      st.step_losses.push_back(batch_total * inv);
    }
    st.epoch = epoch + 1;

    EpochLog row;
    row.epoch = st.epoch;
    row.step = st.step;
    row.lr = lr;
    const double c = sums.count;
    row.loss_total = sums.total / c;
    if (sums.has_nodule) row.loss_nodule = sums.nodule / c;
    if (sums.has_gland) row.loss_gland = sums.gland / c;
    if (sums.has_size) row.loss_size = sums.size / c;
    if (sums.has_rec) row.loss_rec = sums.rec / c;
    bool improved = false;
    if (!validation.empty() && cfg.phase == Phase::supervised) {
      const SegmentationScore score = score_nodules(model, validation);
      row.val_iou = score.iou;
      row.val_dsc = score.dsc;
      if (score.dsc > st.best_val_dsc) {
        st.best_val_dsc = score.dsc;
        improved = true;
      }
    }
    st.log.push_back(row);
    if (io.on_epoch) io.on_epoch(row);
    if (!io.out_dir.empty()) {
      append_csv(io.out_dir, row);
      const std::vector<NamedTensor> state = train_state_tensors(model, opt, st);
      save_checkpoint(io.out_dir / "last.ckpt", state);
      if (improved) save_checkpoint(io.out_dir / "best.ckpt", state);
    }
    if (io.stop_after_epoch > 0 && st.epoch >= io.stop_after_epoch) break;
  }
  return st;
}

}  // namespace

TrainState run_pretrain(SsmtNet& model, const std::vector<UltrasoundSample>& images, const PhaseConfig& config,
                        const TrainIo& io) {
  PhaseConfig cfg = config;
  cfg.phase = Phase::pretrain;
  cfg.validate();
  ForwardOptions opts;
  opts.nodule = opts.gland = opts.size = false;
  const SampleLoss loss = [&](const UltrasoundSample& s) {
    const Tensor x = image_tensor(s);
    LossParts parts;
    parts.total = charbonnier(model.forward(x, opts).reconstruction, x);
    parts.rec = parts.total.item();
    return parts;
  };
  return train_loop(model, images, {}, cfg, model.params().select({groups::encoder, groups::reconstruction}), loss,
                    io);
}

TrainState run_supervised(SsmtNet& model, const std::vector<UltrasoundSample>& train,
                          const std::vector<UltrasoundSample>& validation, const PhaseConfig& config,
                          const LossWeights& weights, const AblationFlags& flags, const TrainIo& io) {
  PhaseConfig cfg = config;
  cfg.phase = Phase::supervised;
  cfg.validate();
  weights.validate();
  for (const auto& s : train) {
    if (!s.nodule_mask) throw DatasetError("training sample " + s.id + " has no nodule mask");
  }
  const LossWeights w = renormalize(weights, flags);
  ForwardOptions opts;
  opts.gland = flags.gland;
  opts.size = flags.size;
  opts.reconstruction = flags.reconstruction;
  opts.weighting = ClassWeighting::straight_through;
  std::vector<std::string> prefixes{groups::encoder, groups::nodule_decoder};
  if (flags.gland) prefixes.push_back(groups::gland_decoder);
  if (flags.size) prefixes.push_back(groups::size_head);
  if (flags.reconstruction) prefixes.push_back(groups::reconstruction);

  const SampleLoss loss = [&](const UltrasoundSample& s) {
    const Tensor x = image_tensor(s);
    const ModelOutput out = model.forward(x, opts);
    Tensor ln = dice_loss(out.nodule->mask, mask_tensor(*s.nodule_mask));
    Tensor lg, ls, lr;
    LossParts parts;
    parts.nodule = ln.item();
    if (flags.gland) {
      // A sample without a gland mask contributes zero to the gland term.
      lg = s.gland_mask ? dice_loss(out.gland->mask, mask_tensor(*s.gland_mask)) : Tensor::scalar(0.0f);
      parts.gland = lg.item();
    }
    if (flags.size) {
      ls = size_loss(out.size, compute_size_label(*s.nodule_mask));
      parts.size = ls.item();
    }
    if (flags.reconstruction) {
      lr = charbonnier(out.reconstruction, x);
      parts.rec = lr.item();
    }
    parts.total = total_loss(ln, lg, ls, lr, w);
    return parts;
  };
  return train_loop(model, train, validation, cfg, model.params().select(prefixes), loss, io);
}

double mean_reconstruction_loss(const SsmtNet& model, const std::vector<UltrasoundSample>& images) {
  NoGradGuard no_grad;
  ForwardOptions opts;
  opts.nodule = opts.gland = opts.size = false;
  double total = 0.0;
  for (const auto& s : images) {
    check_input(model, s);
    const Tensor x = image_tensor(s);
    total += charbonnier(model.forward(x, opts).reconstruction, x).item();
  }
  return images.empty() ? 0.0 : total / static_cast<double>(images.size());
}

SegmentationScore score_nodules(const SsmtNet& model, const std::vector<UltrasoundSample>& samples) {
  SegmentationScore score;
  for (const auto& s : samples) {
    if (!s.nodule_mask) {
      ++score.excluded;
      continue;
    }
    check_input(model, s);
    const SsmtNet::Prediction p = model.predict(image_tensor(s));
    std::vector<std::uint8_t> gt(s.nodule_mask->size());
    for (std::size_t i = 0; i < gt.size(); ++i) gt[i] = s.nodule_mask->pixels[i] != 0.0f;
    const OverlapCounts c = overlap(p.nodule, gt);
    score.iou += iou(c);
    score.dsc += dsc(c);
    ++score.images;
  }
  if (score.images > 0) {
    score.iou /= score.images;
    score.dsc /= score.images;
  }
  return score;
}

// ---- model state -------------------------------------------------------------

std::vector<NamedTensor> model_state(const SsmtNet& model) {
  const ModelConfig& c = model.config();
  const EncoderConfig& e = c.encoder;
  const DecoderConfig& d = c.decoder;
  std::vector<float> meta{static_cast<float>(e.image_h), static_cast<float>(e.image_w),
                          static_cast<float>(e.in_channels), static_cast<float>(e.patch),
                          static_cast<float>(e.embed_dim), static_cast<float>(e.layers),
                          static_cast<float>(e.heads), static_cast<float>(e.mlp_ratio),
                          static_cast<float>(d.queries), static_cast<float>(d.dim),
                          static_cast<float>(d.iterations), static_cast<float>(d.classes),
                          d.threshold, static_cast<float>(e.cnn_channels.size())};
  for (int ch : e.cnn_channels) meta.push_back(static_cast<float>(ch));
  std::vector<NamedTensor> out;
  out.push_back({kMetaModel, Tensor::from({static_cast<int>(meta.size())}, meta)});
  for (const auto& p : model.params().all()) out.push_back({p.name, p.tensor.detach()});
  return out;
}

ModelConfig model_config_from(const std::vector<NamedTensor>& tensors) {
  const Tensor& m = require(tensors, kMetaModel);
  if (m.numel() < 14 || m.numel() != 14 + static_cast<std::int64_t>(m.at(13))) {
    throw CorruptCheckpoint("malformed meta.model tensor");
  }
  auto i = [&](int k) { return static_cast<int>(m.at(k)); };
  ModelConfig c;
  c.encoder.image_h = i(0);
  c.encoder.image_w = i(1);
  c.encoder.in_channels = i(2);
  c.encoder.patch = i(3);
  c.encoder.embed_dim = i(4);
  c.encoder.layers = i(5);
  c.encoder.heads = i(6);
  c.encoder.mlp_ratio = i(7);
  c.decoder.queries = i(8);
  c.decoder.dim = i(9);
  c.decoder.iterations = i(10);
  c.decoder.classes = i(11);
  c.decoder.threshold = m.at(12);
  c.encoder.cnn_channels.clear();
  for (int k = 0; k < i(13); ++k) c.encoder.cnn_channels.push_back(i(14 + k));
  return c;
}

void load_model_state(SsmtNet& model, const std::vector<NamedTensor>& tensors) {
  for (const auto& p : model.params().all()) {
    const Tensor& src = require(tensors, p.name);
    if (src.shape() != p.tensor.shape()) {
      throw CorruptCheckpoint("parameter " + p.name + " has shape " + shape_str(src.shape()) + ", model expects " +
                              shape_str(p.tensor.shape()));
    }
    Tensor dst = p.tensor;
    std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
  }
}

std::unique_ptr<SsmtNet> load_model(const std::filesystem::path& checkpoint) {
  const std::vector<NamedTensor> ts = load_checkpoint(checkpoint);
  auto model = std::make_unique<SsmtNet>(model_config_from(ts));
  load_model_state(*model, ts);
  return model;
}

bool is_validation_stem(const std::string& stem) { return fnv1a64(stem) % 5 == 0; }

}  // namespace ssmt
