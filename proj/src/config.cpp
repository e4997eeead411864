#include "ssmt/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "ssmt/errors.hpp"

namespace ssmt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void only_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

void parse_model(const json& j, ModelConfig& m) {
  const std::string w = "model";
  only_keys(j, w, {"image_size", "patch", "embed_dim", "layers", "heads", "mlp_ratio", "cnn_channels", "queries",
                   "decoder_dim", "iterations", "threshold"});
  int size = m.encoder.image_h;
  read(j, "image_size", size, w);
  m.encoder.image_h = m.encoder.image_w = size;
  read(j, "patch", m.encoder.patch, w);
  read(j, "embed_dim", m.encoder.embed_dim, w);
  read(j, "layers", m.encoder.layers, w);
  read(j, "heads", m.encoder.heads, w);
  read(j, "mlp_ratio", m.encoder.mlp_ratio, w);
  read(j, "cnn_channels", m.encoder.cnn_channels, w);
  read(j, "queries", m.decoder.queries, w);
  read(j, "decoder_dim", m.decoder.dim, w);
  read(j, "iterations", m.decoder.iterations, w);
  read(j, "threshold", m.decoder.threshold, w);
}

void parse_augmentation(const json& j, AugmentationConfig& a, const std::string& w) {
  only_keys(j, w, {"flip", "flip_prob", "rotation", "rotation_prob", "max_rotation_deg", "zoom_out", "zoom_prob",
                   "zoom_min", "zoom_max", "stitching", "stitch_prob"});
  read(j, "flip", a.flip, w);
  read(j, "flip_prob", a.flip_prob, w);
  read(j, "rotation", a.rotation, w);
  read(j, "rotation_prob", a.rotation_prob, w);
  read(j, "max_rotation_deg", a.max_rotation_deg, w);
  read(j, "zoom_out", a.zoom_out, w);
  read(j, "zoom_prob", a.zoom_prob, w);
  read(j, "zoom_min", a.zoom_min, w);
  read(j, "zoom_max", a.zoom_max, w);
  read(j, "stitching", a.stitching, w);
  read(j, "stitch_prob", a.stitch_prob, w);
}

void parse_phase(const json& j, PhaseConfig& p, const std::string& w) {
  only_keys(j, w, {"epochs", "max_steps", "batch_size", "lr0", "lr_min", "weight_decay", "augment", "augmentation"});
  read(j, "epochs", p.epochs, w);
  read(j, "max_steps", p.max_steps, w);
  read(j, "batch_size", p.batch_size, w);
  read(j, "lr0", p.lr0, w);
  read(j, "lr_min", p.lr_min, w);
  read(j, "weight_decay", p.weight_decay, w);
  read(j, "augment", p.augment, w);
  if (j.contains("augmentation")) parse_augmentation(j.at("augmentation"), p.augmentation, w + ".augmentation");
}

void parse_train(const json& j, RunConfig& c) {
  only_keys(j, "train", {"seed", "weights", "pretrain", "supervised"});
  read(j, "seed", c.seed, "train");
  if (j.contains("weights")) {
    const json& w = j.at("weights");
    only_keys(w, "train.weights", {"alpha", "beta", "gamma", "eta"});
    read(w, "alpha", c.weights.alpha, "train.weights");
    read(w, "beta", c.weights.beta, "train.weights");
    read(w, "gamma", c.weights.gamma, "train.weights");
    read(w, "eta", c.weights.eta, "train.weights");
  }
  if (j.contains("pretrain")) parse_phase(j.at("pretrain"), c.pretrain, "train.pretrain");
  if (j.contains("supervised")) parse_phase(j.at("supervised"), c.supervised, "train.supervised");
}

void parse_ablation(const json& j, AblationFlags& a) {
  only_keys(j, "ablation", {"variant", "reconstruction", "gland", "size"});
  if (j.contains("variant")) {
    if (j.contains("reconstruction") || j.contains("gland") || j.contains("size")) {
      throw ConfigError("ablation takes either a variant or branch flags, not both");
    }
    int v = 5;
    read(j, "variant", v, "ablation");
    a = AblationFlags::variant(v);
    return;
  }
  read(j, "reconstruction", a.reconstruction, "ablation");
  read(j, "gland", a.gland, "ablation");
  read(j, "size", a.size, "ablation");
}

void parse_data(const json& j, DataConfig& d) {
  only_keys(j, "data", {"root", "layout", "manifest", "phantoms"});
  std::string root, manifest, layout = "flat";
  read(j, "root", root, "data");
  read(j, "manifest", manifest, "data");
  read(j, "layout", layout, "data");
  d.root = root;
  d.manifest = manifest;
  if (layout == "flat") {
    d.layout = DatasetLayout::flat;
  } else if (layout == "split") {
    d.layout = DatasetLayout::split;
  } else {
    throw ConfigError("data.layout must be 'flat' or 'split', got '" + layout + "'");
  }
  if (j.contains("phantoms")) {
    const json& p = j.at("phantoms");
    const std::string w = "data.phantoms";
    only_keys(p, w, {"count", "unlabeled", "seed", "speckle_variance", "nodule_count_min", "nodule_count_max",
                     "nodule_radius_min", "nodule_radius_max"});
    PhantomSource src;
    read(p, "count", src.count, w);
    read(p, "unlabeled", src.unlabeled, w);
    read(p, "seed", src.phantom.seed, w);
    read(p, "speckle_variance", src.phantom.speckle_variance, w);
    read(p, "nodule_count_min", src.phantom.nodule_count_min, w);
    read(p, "nodule_count_max", src.phantom.nodule_count_max, w);
    read(p, "nodule_radius_min", src.phantom.nodule_radius_min, w);
    read(p, "nodule_radius_max", src.phantom.nodule_radius_max, w);
    d.phantoms = src;
  }
}

}  // namespace

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  model.seed = s;
  for (PhaseConfig* p : {&pretrain, &supervised}) {
    p->seed = s;
    p->augmentation.seed = s;
  }
}

void RunConfig::validate() const {
  model.validate();
  pretrain.validate();
  supervised.validate();
  weights.validate();
  renormalize(weights, ablation).validate();
  const int sources = !data.root.empty() + !data.manifest.empty() + data.phantoms.has_value();
  if (sources > 1) throw ConfigError("data takes one of root, manifest or phantoms");
  if (data.phantoms) {
    if (data.phantoms->count < 1 || data.phantoms->unlabeled < 0) {
      throw ConfigError("data.phantoms needs count >= 1 and unlabeled >= 0");
    }
    PhantomConfig pc = data.phantoms->phantom;
    pc.height = model.encoder.image_h;
    pc.width = model.encoder.image_w;
    pc.validate();
  }
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  only_keys(j, "config", {"model", "data", "train", "ablation"});
  RunConfig c;
  if (j.contains("model")) parse_model(j.at("model"), c.model);
  if (j.contains("data")) parse_data(j.at("data"), c.data);
  if (j.contains("train")) parse_train(j.at("train"), c);
  if (j.contains("ablation")) parse_ablation(j.at("ablation"), c.ablation);
  c.set_seed(c.seed);
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

TrainingData split_training_data(std::vector<UltrasoundSample> samples) {
  TrainingData d;
  for (UltrasoundSample& s : samples) {
    if (!s.nodule_mask) {
      d.pretrain.push_back(std::move(s));
    } else if (is_validation_stem(s.id)) {
      d.validation.push_back(std::move(s));
    } else {
      d.pretrain.push_back(s);
      d.train.push_back(std::move(s));
    }
  }
  return d;
}

TrainingData load_training_data(const RunConfig& config) {
  const DataConfig& d = config.data;
  const int h = config.model.encoder.image_h, w = config.model.encoder.image_w;
  if (d.phantoms) {
    PhantomConfig pc = d.phantoms->phantom;
    pc.height = h;
    pc.width = w;
    std::vector<UltrasoundSample> samples = generate_phantoms(pc, d.phantoms->count);
    TrainingData out = split_training_data(std::move(samples));
    for (UltrasoundSample& s : generate_phantoms(pc, d.phantoms->unlabeled, d.phantoms->count)) {
      s.nodule_mask.reset();
      s.gland_mask.reset();
      s.size_label.reset();
      out.pretrain.push_back(std::move(s));
    }
    return out;
  }
  DatasetManifest m;
  if (!d.manifest.empty()) {
    m = read_manifest_jsonl(d.manifest);
  } else if (!d.root.empty()) {
    m = load_dataset(d.root, d.layout);
  } else {
    throw ConfigError("config has no data source (data.root, data.manifest or data.phantoms)");
  }
  DatasetManifest usable;
  for (const ManifestRecord& r : m.records)
    if (r.split != Split::test) usable.records.push_back(r);
  return split_training_data(load_samples(usable, h, w));
}

}  // namespace ssmt
