// SPDX-License-Identifier: Apache-2.0
//
// Model, discriminator, training, dataset and evaluation configuration,
// named presets, and strict JSON (de)serialization. Unknown keys are
// rejected so that a typo never silently falls back to a default.

#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace vidgan {

using json = nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Baseline architectures kept for comparison experiments only.
enum class Baseline {
  none,         // multi-level model, one sub-discriminator per level
  single_3d,    // only the last level is rendered and scored
  mixed_3d_2d,  // single_3d plus a 2D discriminator on one random frame
};

inline std::string to_string(Baseline b) {
  switch (b) {
    case Baseline::none: return "none";
    case Baseline::single_3d: return "single-3D";
    case Baseline::mixed_3d_2d: return "3D+2D";
  }
  return "none";
}

inline Baseline baseline_from_string(const std::string& s) {
  if (s == "none") return Baseline::none;
  if (s == "single-3D") return Baseline::single_3d;
  if (s == "3D+2D") return Baseline::mixed_3d_2d;
  throw ConfigError("unknown baseline '" + s + "' (expected none, single-3D or 3D+2D)");
}

// ceil(a / b) for positive integers
inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

struct ModelConfig {
  int levels = 4;
  int rate = 2;  // frame subsampling rate at every junction
  int latent_dim = 256;
  int frames = 16;
  int height = 64;
  int width = 64;
  int image_channels = 3;
  int clstm_channels = 128;
  int z_channels = 32;  // width of the projected z block concatenated at level 1
  std::vector<int> upsample_blocks_per_level{2, 1, 1, 1};
  std::vector<int> upsample_channels{64, 64, 32, 16, 8};
  int label_count = 0;  // 0 = unconditional
  Baseline baseline = Baseline::none;

  int total_upsample_blocks() const {
    return std::accumulate(upsample_blocks_per_level.begin(), upsample_blocks_per_level.end(), 0);
  }
  int coarse_height() const { return height >> total_upsample_blocks(); }
  int coarse_width() const { return width >> total_upsample_blocks(); }
  // Levels are 1-based.
  int level_height(int level) const { return height >> (levels - level); }
  int level_width(int level) const { return width >> (levels - level); }

  // Index of the first up block belonging to `level` in upsample_channels.
  int first_block_of(int level) const {
    int b = 0;
    for (int l = 1; l < level; ++l) b += upsample_blocks_per_level[static_cast<std::size_t>(l - 1)];
    return b;
  }
  int level_channels(int level) const {
    return upsample_channels[static_cast<std::size_t>(
        first_block_of(level) + upsample_blocks_per_level[static_cast<std::size_t>(level - 1)] - 1)];
  }

  // Training-time frame count of each level: T, then ceil(. / rate) per junction.
  std::vector<int> frame_schedule() const { return frame_schedule_for(rate); }
  std::vector<int> frame_schedule_for(int r) const {
    std::vector<int> out;
    int t = frames;
    for (int l = 1; l <= levels; ++l) {
      out.push_back(t);
      t = ceil_div(t, r);
    }
    return out;
  }

  bool conditional() const { return label_count > 0; }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("model: " + m); };
    if (levels < 1) fail("levels must be >= 1");
    if (rate < 1) fail("rate must be >= 1");
    if (latent_dim < 1) fail("latent_dim must be >= 1");
    if (frames < 1) fail("frames must be >= 1");
    if (image_channels < 1) fail("image_channels must be >= 1");
    if (clstm_channels < 1 || z_channels < 0) fail("channel counts must be positive");
    if (label_count < 0) fail("label_count must be >= 0");
    if (static_cast<int>(upsample_blocks_per_level.size()) != levels) {
      fail("upsample_blocks_per_level needs one entry per level");
    }
    if (upsample_blocks_per_level.front() < 1) fail("level 1 needs at least one upsampling block");
    for (int l = 2; l <= levels; ++l) {
      if (upsample_blocks_per_level[static_cast<std::size_t>(l - 1)] != 1) {
        fail("levels >= 2 must have exactly one upsampling block (resolution doubles per level)");
      }
    }
    if (static_cast<int>(upsample_channels.size()) != total_upsample_blocks()) {
      fail("upsample_channels needs one entry per upsampling block");
    }
    for (int c : upsample_channels)
      if (c < 1) fail("upsample_channels entries must be positive");
    const int b = total_upsample_blocks();
    if (b >= 30 || height % (1 << b) != 0 || width % (1 << b) != 0) {
      fail("height and width must be divisible by 2^" + std::to_string(b));
    }
  }
};

struct DiscriminatorConfig {
  int levels = 4;
  // One residual block per entry; every block but the last downsamples.
  std::vector<int> channels{16, 32, 64, 128};
  int label_count = 0;

  void validate() const {
    if (levels < 1) throw ConfigError("discriminator: levels must be >= 1");
    if (channels.empty()) throw ConfigError("discriminator: channels must not be empty");
    for (int c : channels)
      if (c < 1) throw ConfigError("discriminator: channels must be positive");
    if (label_count < 0) throw ConfigError("discriminator: label_count must be >= 0");
  }
};

struct TrainConfig {
  int batch_size = 8;
  std::int64_t iterations = 100000;
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double lambda = 0.5;  // gradient penalty weight
  int d_steps_per_iter = 1;
  std::int64_t snapshot_interval = 2000;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (iterations < 0) throw ConfigError("train: iterations must be >= 0");
    if (lr < 0) throw ConfigError("train: lr must be >= 0");
    if (lambda < 0) throw ConfigError("train: lambda must be >= 0");
    if (d_steps_per_iter < 1) throw ConfigError("train: d_steps_per_iter must be >= 1");
    if (snapshot_interval < 1) throw ConfigError("train: snapshot_interval must be >= 1");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
      throw ConfigError("train: adam betas must lie in [0, 1)");
    }
  }
};

struct ToyDatasetConfig {
  int height = 64;
  int width = 64;
  int frames = 16;
  int channels = 1;
  int shape_count = 1;
  double min_speed = 0.5;  // pixels per frame
  double max_speed = 2.0;
  double min_size = 0.2;   // side length as a fraction of min(height, width)
  double max_size = 0.35;
  int label_count = 4;     // motion-direction classes

  void validate() const {
    if (height < 1 || width < 1 || frames < 1) throw ConfigError("toy: dimensions must be >= 1");
    if (channels != 1 && channels != 3) throw ConfigError("toy: channels must be 1 or 3");
    if (shape_count < 1) throw ConfigError("toy: shape_count must be >= 1");
    if (min_speed < 0 || max_speed < min_speed) throw ConfigError("toy: bad speed range");
    if (min_size <= 0 || max_size < min_size || max_size > 1) throw ConfigError("toy: bad size range");
    if (label_count < 1) throw ConfigError("toy: label_count must be >= 1");
  }
};

struct DatasetConfig {
  std::string kind = "toy";  // "toy" or "manifest"
  ToyDatasetConfig toy;
  std::string manifest;      // manifest path, for kind == "manifest"
  std::string root;          // clip folders are resolved against this
  double flip_probability = 0.5;
  int workers = 0;           // 0 = synchronous single-worker mode
  bool use_labels = false;

  void validate() const {
    if (kind == "toy") {
      toy.validate();
    } else if (kind == "manifest") {
      if (manifest.empty()) throw ConfigError("dataset: manifest path is required");
    } else {
      throw ConfigError("dataset: unknown kind '" + kind + "'");
    }
    if (flip_probability < 0 || flip_probability > 1) {
      throw ConfigError("dataset: flip_probability must lie in [0, 1]");
    }
    if (workers < 0) throw ConfigError("dataset: workers must be >= 0");
  }
};

struct EvalProtocol {
  std::int64_t snapshot_stride = 2000;
  int samples = 2048;
  int repeats = 10;
  std::string embedder;  // path to an embedder checkpoint

  void validate() const {
    if (repeats < 1) throw ConfigError("eval: repeats must be >= 1");
    if (samples < 2) throw ConfigError("eval: samples must be >= 2");
    if (snapshot_stride < 1) throw ConfigError("eval: snapshot_stride must be >= 1");
  }
};

struct RunConfig {
  std::string preset;
  ModelConfig model;
  DiscriminatorConfig discriminator;
  TrainConfig train;
  DatasetConfig dataset;
  EvalProtocol eval;
  std::string output_dir = "run";

  void validate() const {
    model.validate();
    discriminator.validate();
    train.validate();
    dataset.validate();
    eval.validate();
    if (discriminator.levels != model.levels) {
      throw ConfigError("discriminator.levels does not match model.levels");
    }
    if (discriminator.label_count != model.label_count) {
      throw ConfigError("discriminator.label_count does not match model.label_count");
    }
    if (dataset.kind == "toy") {
      const auto& t = dataset.toy;
      if (t.height != model.height || t.width != model.width || t.frames < model.frames ||
          t.channels != model.image_channels) {
        throw ConfigError("dataset.toy dimensions do not match the model");
      }
    }
    if (model.conditional() && !dataset.use_labels) {
      throw ConfigError("conditional model requires dataset.use_labels");
    }
  }
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

// Reads keys out of a JSON object and rejects anything left unread.
class StrictObject {
 public:
  StrictObject(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <class V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline json to_json(const ModelConfig& m) {
  return json{{"levels", m.levels},
              {"rate", m.rate},
              {"latent_dim", m.latent_dim},
              {"frames", m.frames},
              {"height", m.height},
              {"width", m.width},
              {"image_channels", m.image_channels},
              {"clstm_channels", m.clstm_channels},
              {"z_channels", m.z_channels},
              {"upsample_blocks_per_level", m.upsample_blocks_per_level},
              {"upsample_channels", m.upsample_channels},
              {"label_count", m.label_count},
              {"baseline", to_string(m.baseline)}};
}

inline void from_json_into(const json& j, ModelConfig& m) {
  detail::StrictObject o(j, "model");
  o.get("levels", m.levels);
  o.get("rate", m.rate);
  o.get("latent_dim", m.latent_dim);
  o.get("frames", m.frames);
  o.get("height", m.height);
  o.get("width", m.width);
  o.get("image_channels", m.image_channels);
  o.get("clstm_channels", m.clstm_channels);
  o.get("z_channels", m.z_channels);
  o.get("upsample_blocks_per_level", m.upsample_blocks_per_level);
  o.get("upsample_channels", m.upsample_channels);
  o.get("label_count", m.label_count);
  std::string baseline = to_string(m.baseline);
  o.get("baseline", baseline);
  m.baseline = baseline_from_string(baseline);
  o.finish();
}

inline json to_json(const DiscriminatorConfig& d) {
  return json{{"levels", d.levels}, {"channels", d.channels}, {"label_count", d.label_count}};
}

inline void from_json_into(const json& j, DiscriminatorConfig& d) {
  detail::StrictObject o(j, "discriminator");
  o.get("levels", d.levels);
  o.get("channels", d.channels);
  o.get("label_count", d.label_count);
  o.finish();
}

inline json to_json(const TrainConfig& t) {
  return json{{"batch_size", t.batch_size},
              {"iterations", t.iterations},
              {"lr", t.lr},
              {"beta1", t.beta1},
              {"beta2", t.beta2},
              {"lambda", t.lambda},
              {"d_steps_per_iter", t.d_steps_per_iter},
              {"snapshot_interval", t.snapshot_interval},
              {"seed", t.seed}};
}

inline void from_json_into(const json& j, TrainConfig& t) {
  detail::StrictObject o(j, "train");
  o.get("batch_size", t.batch_size);
  o.get("iterations", t.iterations);
  o.get("lr", t.lr);
  o.get("beta1", t.beta1);
  o.get("beta2", t.beta2);
  o.get("lambda", t.lambda);
  o.get("d_steps_per_iter", t.d_steps_per_iter);
  o.get("snapshot_interval", t.snapshot_interval);
  o.get("seed", t.seed);
  o.finish();
}

inline json to_json(const ToyDatasetConfig& t) {
  return json{{"height", t.height},       {"width", t.width},         {"frames", t.frames},
              {"channels", t.channels},   {"shape_count", t.shape_count},
              {"min_speed", t.min_speed}, {"max_speed", t.max_speed}, {"min_size", t.min_size},
              {"max_size", t.max_size},   {"label_count", t.label_count}};
}

inline void from_json_into(const json& j, ToyDatasetConfig& t) {
  detail::StrictObject o(j, "dataset.toy");
  o.get("height", t.height);
  o.get("width", t.width);
  o.get("frames", t.frames);
  o.get("channels", t.channels);
  o.get("shape_count", t.shape_count);
  o.get("min_speed", t.min_speed);
  o.get("max_speed", t.max_speed);
  o.get("min_size", t.min_size);
  o.get("max_size", t.max_size);
  o.get("label_count", t.label_count);
  o.finish();
}

inline json to_json(const DatasetConfig& d) {
  return json{{"kind", d.kind},
              {"toy", to_json(d.toy)},
              {"manifest", d.manifest},
              {"root", d.root},
              {"flip_probability", d.flip_probability},
              {"workers", d.workers},
              {"use_labels", d.use_labels}};
}

inline void from_json_into(const json& j, DatasetConfig& d) {
  detail::StrictObject o(j, "dataset");
  o.get("kind", d.kind);
  if (const json* toy = o.child("toy")) from_json_into(*toy, d.toy);
  o.get("manifest", d.manifest);
  o.get("root", d.root);
  o.get("flip_probability", d.flip_probability);
  o.get("workers", d.workers);
  o.get("use_labels", d.use_labels);
  o.finish();
}

inline json to_json(const EvalProtocol& e) {
  return json{{"snapshot_stride", e.snapshot_stride},
              {"samples", e.samples},
              {"repeats", e.repeats},
              {"embedder", e.embedder}};
}

inline void from_json_into(const json& j, EvalProtocol& e) {
  detail::StrictObject o(j, "eval");
  o.get("snapshot_stride", e.snapshot_stride);
  o.get("samples", e.samples);
  o.get("repeats", e.repeats);
  o.get("embedder", e.embedder);
  o.finish();
}

inline json to_json(const RunConfig& r) {
  json j{{"model", to_json(r.model)},
         {"discriminator", to_json(r.discriminator)},
         {"train", to_json(r.train)},
         {"dataset", to_json(r.dataset)},
         {"eval", to_json(r.eval)},
         {"output_dir", r.output_dir}};
  if (!r.preset.empty()) j["preset"] = r.preset;
  return j;
}

RunConfig preset(const std::string& name);

// Parses a run config. A "preset" key selects the base values; every other
// section overrides them key by key. The result is validated.
inline RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  RunConfig r;
  if (j.contains("preset")) {
    if (!j.at("preset").is_string()) throw ConfigError("config.preset must be a string");
    r = preset(j.at("preset").get<std::string>());
  }
  detail::StrictObject o(j, "config");
  o.get("preset", r.preset);
  if (const json* m = o.child("model")) from_json_into(*m, r.model);
  if (const json* d = o.child("discriminator")) from_json_into(*d, r.discriminator);
  if (const json* t = o.child("train")) from_json_into(*t, r.train);
  if (const json* d = o.child("dataset")) from_json_into(*d, r.dataset);
  if (const json* e = o.child("eval")) from_json_into(*e, r.eval);
  o.get("output_dir", r.output_dir);
  o.finish();
  r.validate();
  return r;
}

// ---------------------------------------------------------------------------
// Presets

inline std::vector<std::string> preset_names() {
  return {"paper-192px", "paper-256px", "desk-64px", "cpu-16px", "single-3D", "3D+2D"};
}

inline RunConfig preset(const std::string& name) {
  RunConfig r;
  r.preset = name;
  auto full_size = [&](int resolution) {
    ModelConfig& m = r.model;
    m.levels = 4;
    m.rate = 2;
    m.latent_dim = 256;
    m.frames = 16;
    m.height = m.width = resolution;
    m.image_channels = 3;
    m.clstm_channels = 1024;
    m.z_channels = 256;
    m.upsample_blocks_per_level = {3, 1, 1, 1};
    m.upsample_channels = {512, 256, 128, 64, 32, 16};
    r.discriminator.channels = {32, 64, 128, 256, 512, 1024};
    r.train.batch_size = 32;
    r.train.iterations = 100000;
    r.train.snapshot_interval = 2000;
    r.dataset.kind = "manifest";
    r.dataset.manifest = "manifest.csv";
    r.eval = EvalProtocol{};
  };
  if (name == "paper-192px") {
    full_size(192);
  } else if (name == "paper-256px") {
    full_size(256);
  } else if (name == "single-3D" || name == "3D+2D") {
    full_size(192);
    r.model.rate = 1;
    r.model.baseline = name == "single-3D" ? Baseline::single_3d : Baseline::mixed_3d_2d;
    r.train.lambda = 10.0;
    r.train.batch_size = 8;
  } else if (name == "desk-64px") {
    ModelConfig& m = r.model;
    m = ModelConfig{};
    m.height = m.width = 64;
    m.image_channels = 1;
    m.clstm_channels = 128;
    m.z_channels = 32;
    m.upsample_blocks_per_level = {2, 1, 1, 1};
    m.upsample_channels = {64, 64, 32, 16, 8};
    r.discriminator.channels = {16, 32, 64, 128};
    r.train.batch_size = 16;
    r.train.iterations = 5000;
    r.train.snapshot_interval = 500;
    r.dataset.kind = "toy";
    r.dataset.toy = ToyDatasetConfig{};
    r.dataset.toy.height = r.dataset.toy.width = 64;
    r.eval.snapshot_stride = 500;
    r.eval.samples = 256;
    r.eval.repeats = 5;
  } else if (name == "cpu-16px") {
    ModelConfig& m = r.model;
    m = ModelConfig{};
    m.height = m.width = 16;
    m.image_channels = 1;
    m.latent_dim = 32;
    m.clstm_channels = 32;
    m.z_channels = 8;
    m.upsample_blocks_per_level = {1, 1, 1, 1};
    m.upsample_channels = {32, 16, 16, 8};
    r.discriminator.channels = {8, 16, 32};
    r.train.batch_size = 8;
    r.train.iterations = 1000;
    r.train.snapshot_interval = 250;
    r.dataset.kind = "toy";
    ToyDatasetConfig& t = r.dataset.toy;
    t = ToyDatasetConfig{};
    t.height = t.width = 16;
    t.min_speed = 0.25;
    t.max_speed = 0.5;
    t.min_size = 0.3;
    t.max_size = 0.4;
    r.eval.snapshot_stride = 250;
    r.eval.samples = 128;
    r.eval.repeats = 3;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  r.discriminator.levels = r.model.levels;
  r.discriminator.label_count = r.model.label_count;
  r.output_dir = "runs/" + name;
  return r;
}

}  // namespace vidgan
