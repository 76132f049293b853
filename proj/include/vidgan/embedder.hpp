// SPDX-License-Identifier: Apache-2.0
//
// Small 3D convolutional clip classifier used as the feature extractor for
// the sample-quality scores. Clips are standardized by a dataset-wide mean
// tensor (C, T, H, W); features are the pooled penultimate activations.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vidgan/autograd.hpp"
#include "vidgan/checkpoint.hpp"
#include "vidgan/data.hpp"
#include "vidgan/ops.hpp"
#include "vidgan/params.hpp"

namespace vidgan {

struct EmbedderConfig {
  int channels = 1;
  int frames = 16;
  int height = 16;
  int width = 16;
  int classes = 4;
  int base_width = 8;
  int max_width = 64;

  void validate() const {
    if (channels < 1 || frames < 1 || height < 1 || width < 1) throw ConfigError("embedder: bad clip shape");
    if (classes < 2) throw ConfigError("embedder: needs at least two classes");
    if (base_width < 1 || max_width < base_width) throw ConfigError("embedder: bad widths");
  }

  // Convolution stages; all but the last halve (T, H, W) until the frame is 4 pixels wide.
  int stages() const {
    int s = 1;
    for (int side = std::min(height, width); side > 4; side = (side + 1) / 2) ++s;
    return s;
  }
  int stage_width(int i) const { return std::min(max_width, base_width << i); }
  int feature_dim() const { return stage_width(stages() - 1); }
};

inline nlohmann::json to_json(const EmbedderConfig& c) {
  return {{"channels", c.channels}, {"frames", c.frames}, {"height", c.height}, {"width", c.width},
          {"classes", c.classes}, {"base_width", c.base_width}, {"max_width", c.max_width}};
}

inline EmbedderConfig embedder_config_from_json(const nlohmann::json& j) {
  EmbedderConfig c;
  c.channels = j.at("channels");
  c.frames = j.at("frames");
  c.height = j.at("height");
  c.width = j.at("width");
  c.classes = j.at("classes");
  c.base_width = j.at("base_width");
  c.max_width = j.at("max_width");
  c.validate();
  return c;
}

struct Embedding {
  Eigen::MatrixXd probs;     // (N, K) class posteriors
  Eigen::MatrixXd features;  // (N, D)
};

class Embedder {
 public:
  Embedder(const EmbedderConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    Index ci = cfg_.channels;
    for (int i = 0; i < cfg_.stages(); ++i) {
      const Index co = cfg_.stage_width(i);
      const std::string p = "stage" + std::to_string(i);
      w_.push_back(params_.add(p + ".w", init::glorot_uniform<float>({co, ci, 3, 3, 3}, std::sqrt(2.0), rng)));
      b_.push_back(params_.add(p + ".b", Tensor<float>({co})));
      ci = co;
    }
    head_w_ = params_.add("head.w", init::glorot_uniform<float>({cfg_.classes, ci}, 1.0, rng));
    head_b_ = params_.add("head.b", Tensor<float>({cfg_.classes}));
    mean_ = Tensor<float>({cfg_.channels, cfg_.frames, cfg_.height, cfg_.width});
  }

  const EmbedderConfig& config() const noexcept { return cfg_; }
  ParameterSet<float>& params() noexcept { return params_; }
  const ParameterSet<float>& params() const noexcept { return params_; }
  const Tensor<float>& mean_tensor() const noexcept { return mean_; }

  // Sets the standardization tensor to the element-wise mean of `clips` (N, C, T, H, W).
  void fit_mean(const Tensor<float>& clips) {
    check_clips(clips.shape());
    const Index n = clips.dim(0), per = mean_.size();
    std::vector<double> acc(static_cast<std::size_t>(per), 0.0);
    for (Index i = 0; i < n; ++i)
      for (Index k = 0; k < per; ++k) acc[static_cast<std::size_t>(k)] += clips[i * per + k];
    for (Index k = 0; k < per; ++k) mean_[k] = static_cast<float>(acc[static_cast<std::size_t>(k)] / n);
  }

  // Logits and features of a batch inside graph g.
  std::pair<Var, Var> forward(Graph<float>& g, Binder<float, float>& bind, const Tensor<float>& clips) const {
    check_clips(clips.shape());
    Tensor<float> x = clips;
    const Index per = mean_.size();
    for (Index k = 0; k < x.size(); ++k) x[k] -= mean_[k % per];
    Var h = g.leaf(std::move(x));
    const int stages = cfg_.stages();
    for (int i = 0; i < stages; ++i) {
      h = ops::relu(g, ops::conv3d(g, h, bind(w_[static_cast<std::size_t>(i)]), bind(b_[static_cast<std::size_t>(i)]),
                                   ops::Pad3{1, 1, 1}));
      if (i + 1 < stages) h = ops::downsample(g, h);
    }
    const Shape s = g.shape(h);
    Var feat = ops::scale(g, ops::sum_spatial(g, h), 1.0f / static_cast<float>(s[2] * s[3] * s[4]));
    return {ops::linear(g, feat, bind(head_w_), bind(head_b_)), feat};
  }

  Embedding embed(const Tensor<float>& clips, Index batch = 32) const {
    check_clips(clips.shape());
    const Index n = clips.dim(0), per = clips.size() / std::max<Index>(1, n);
    Embedding out;
    out.probs.resize(n, cfg_.classes);
    out.features.resize(n, cfg_.feature_dim());
    for (Index start = 0; start < n; start += batch) {
      const Index m = std::min(batch, n - start);
      Shape s = clips.shape();
      s[0] = m;
      Tensor<float> part(s, std::vector<float>(clips.data() + start * per, clips.data() + (start + m) * per));
      Graph<float> g(false);
      Binder<float, float> bind(g, params_, false);
      auto [logits, feat] = forward(g, bind, part);
      const auto& lv = g.value(logits);
      const auto& fv = g.value(feat);
      for (Index i = 0; i < m; ++i) {
        double mx = lv[i * cfg_.classes];
        for (int k = 1; k < cfg_.classes; ++k) mx = std::max<double>(mx, lv[i * cfg_.classes + k]);
        double z = 0;
        for (int k = 0; k < cfg_.classes; ++k) z += std::exp(lv[i * cfg_.classes + k] - mx);
        for (int k = 0; k < cfg_.classes; ++k)
          out.probs(start + i, k) = std::exp(lv[i * cfg_.classes + k] - mx) / z;
        for (int d = 0; d < cfg_.feature_dim(); ++d) out.features(start + i, d) = fv[i * cfg_.feature_dim() + d];
      }
    }
    return out;
  }

  // One Adam step of cross-entropy on a labeled batch. Returns the loss.
  double train_step(const Batch& batch, Adam<float>& opt, double lr) {
    Graph<float> g;
    Binder<float, float> bind(g, params_, true);
    Var loss = ops::softmax_cross_entropy(g, forward(g, bind, batch.video).first, batch.labels);
    g.backward(loss);
    params_.zero_grad();
    bind.accumulate_into(params_);
    opt.update(params_, lr);
    return g.value(loss)[0];
  }

  double accuracy(const Batch& batch) const {
    const Embedding e = embed(batch.video);
    int right = 0;
    for (Index i = 0; i < e.probs.rows(); ++i) {
      Eigen::Index k;
      e.probs.row(i).maxCoeff(&k);
      right += static_cast<int>(k) == batch.labels[static_cast<std::size_t>(i)];
    }
    return static_cast<double>(right) / static_cast<double>(e.probs.rows());
  }

  void save(const std::filesystem::path& path) const {
    Archive a;
    a.meta["kind"] = "embedder";
    a.meta["config"] = to_json(cfg_);
    for (const auto& p : params_) a.put("param/" + p.name, p.value);
    a.put("mean", mean_);
    a.save(path);
  }

  static Embedder load(const std::filesystem::path& path) {
    const Archive a = Archive::load(path);
    if (a.meta.value("kind", std::string()) != "embedder") {
      throw CheckpointError(path.string() + " is not an embedder file");
    }
    Rng unused(0);
    Embedder e(embedder_config_from_json(a.meta.at("config")), unused);
    for (auto& p : e.params_) {
      const Tensor<float>& t = a.f32("param/" + p.name);
      if (t.shape() != p.value.shape()) throw CheckpointError("embedder tensor shape mismatch: " + p.name);
      p.value = t;
    }
    if (a.f32("mean").shape() != e.mean_.shape()) throw CheckpointError("embedder mean shape mismatch");
    e.mean_ = a.f32("mean");
    return e;
  }

 private:
  void check_clips(const Shape& s) const {
    require_rank(s, 5, "embedder input");
    if (s[1] != cfg_.channels || s[2] != cfg_.frames || s[3] != cfg_.height || s[4] != cfg_.width) {
      throw ShapeError("embedder expects clips of shape (N, " + std::to_string(cfg_.channels) + ", " +
                       std::to_string(cfg_.frames) + ", " + std::to_string(cfg_.height) + ", " +
                       std::to_string(cfg_.width) + "), got " + to_string(s));
    }
  }

  EmbedderConfig cfg_;
  ParameterSet<float> params_;
  std::vector<ParamId> w_, b_;
  ParamId head_w_, head_b_;
  Tensor<float> mean_;
};

struct EmbedderTraining {
  int steps = 600;
  int batch_size = 16;
  double lr = 1e-3;
  int mean_samples = 512;
  std::uint64_t seed = 0;
};

// Trains an embedder to classify the motion direction of toy clips.
inline Embedder train_toy_embedder(const ToyDatasetConfig& toy, const EmbedderTraining& opts,
                                   const std::function<void(int, double)>& on_step = {}) {
  EmbedderConfig cfg;
  cfg.channels = toy.channels;
  cfg.frames = toy.frames;
  cfg.height = toy.height;
  cfg.width = toy.width;
  cfg.classes = toy.label_count;
  Rng rng(opts.seed);
  Embedder e(cfg, rng);
  e.fit_mean(toy_batch(toy, opts.mean_samples, rng).video);
  Adam<float> opt(AdamConfig{opts.lr, 0.9, 0.999, 1e-8});
  for (int s = 0; s < opts.steps; ++s) {
    const double loss = e.train_step(toy_batch(toy, opts.batch_size, rng), opt, opts.lr);
    if (on_step) on_step(s, loss);
  }
  return e;
}

}  // namespace vidgan
