// SPDX-License-Identifier: Apache-2.0
//
// Multi-level video generator: a convolutional LSTM produces one coarse map
// per frame, abstract blocks upsample the maps, and an unshared rendering
// block per level turns the current map into frames. During training a
// subsampling junction drops frames between consecutive abstract blocks.

#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vidgan/autograd.hpp"
#include "vidgan/config.hpp"
#include "vidgan/ops.hpp"
#include "vidgan/params.hpp"
#include "vidgan/rng.hpp"
#include "vidgan/subsampling.hpp"
#include "vidgan/tensor.hpp"

namespace vidgan {

enum class NormMode {
  batch,    // normalize with the statistics of the current batch
  running,  // normalize with the tracked running statistics (inference)
};

inline constexpr double kBatchNormEps = 2e-5;
inline constexpr double kRunningDecay = 0.9;

struct RunningStats {
  std::string name;
  std::vector<double> mean;
  std::vector<double> var;  // unbiased
};

// Draws z ~ U[-1, 1]^(n x d).
template <class T>
Tensor<T> sample_noise(Index n, int latent_dim, Rng& rng) {
  Tensor<T> z({n, static_cast<Index>(latent_dim)});
  for (Index i = 0; i < z.size(); ++i) z[i] = static_cast<T>(rng.uniform(-1.0, 1.0));
  return z;
}

template <class T = float>
class Generator {
 public:
  // Result of one graph-level forward pass.
  struct Pass {
    std::vector<Var> outputs;  // one per level; invalid for levels that are not rendered
    std::vector<SubsampleSpec> junctions;
    std::vector<ops::ChannelStats> batch_stats;  // per BN layer, batch mode only
  };

  Generator(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    build(rng);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  ParameterSet<T>& params() noexcept { return params_; }
  const ParameterSet<T>& params() const noexcept { return params_; }
  std::vector<RunningStats>& running_stats() noexcept { return bn_; }
  const std::vector<RunningStats>& running_stats() const noexcept { return bn_; }

  // Levels that own a rendering block.
  std::vector<int> rendered_levels() const {
    if (cfg_.baseline != Baseline::none) return {cfg_.levels};
    std::vector<int> out;
    for (int l = 1; l <= cfg_.levels; ++l) out.push_back(l);
    return out;
  }
  bool renders(int level) const {
    return cfg_.baseline == Baseline::none ? (level >= 1 && level <= cfg_.levels)
                                           : level == cfg_.levels;
  }

  // Fresh junction specs following the frame schedule; one offset per junction.
  std::vector<SubsampleSpec> draw_junctions(Rng& rng) const {
    std::vector<SubsampleSpec> out;
    int t = cfg_.frames;
    for (int l = 1; l < cfg_.levels; ++l) {
      out.push_back(make_spec(t, cfg_.rate, rng));
      t = out.back().output_len;
    }
    return out;
  }

  // Graph-level forward. `junctions` empty means dense (no subsampling).
  template <class S>
  Pass forward(Graph<S>& g, Binder<T, S>& bind, const Tensor<S>& z, const std::vector<int>& labels,
               const std::vector<SubsampleSpec>& junctions, NormMode mode,
               bool render_all = true) const {
    check_noise(z.shape());
    check_labels(labels, z.dim(0));
    if (!junctions.empty() && static_cast<int>(junctions.size()) != cfg_.levels - 1) {
      throw std::invalid_argument("Generator: expected " + std::to_string(cfg_.levels - 1) +
                                  " junction specs");
    }
    Ctx<S> c{g, bind, labels, mode, {}};
    if (mode == NormMode::batch) c.stats.resize(bn_.size());
    Pass out;
    out.junctions = junctions;
    out.outputs.assign(static_cast<std::size_t>(cfg_.levels), Var{});
    Var zv = g.leaf(z, false);
    Var h = level1_input(c, zv, cfg_.frames);
    for (int l = 1; l <= cfg_.levels; ++l) {
      h = abstract_block(c, l, h);
      if (renders(l) && (render_all || l == cfg_.levels)) {
        out.outputs[static_cast<std::size_t>(l - 1)] = render_block(c, l, h);
      }
      if (l < cfg_.levels && !junctions.empty()) h = subsample_frames(g, h, junctions[static_cast<std::size_t>(l - 1)]);
    }
    out.batch_stats = std::move(c.stats);
    return out;
  }

  // Folds the batch statistics of a training pass into the running statistics.
  void update_running_stats(const std::vector<ops::ChannelStats>& batch) {
    if (batch.size() != bn_.size()) throw std::invalid_argument("update_running_stats: size mismatch");
    for (std::size_t i = 0; i < bn_.size(); ++i) {
      const auto& b = batch[i];
      if (b.count == 0) continue;
      const double unbias = b.count > 1 ? static_cast<double>(b.count) / (b.count - 1) : 1.0;
      for (std::size_t c = 0; c < b.mean.size(); ++c) {
        bn_[i].mean[c] = kRunningDecay * bn_[i].mean[c] + (1 - kRunningDecay) * b.mean[c];
        bn_[i].var[c] = kRunningDecay * bn_[i].var[c] + (1 - kRunningDecay) * b.var[c] * unbias;
      }
    }
  }

  // ---- tensor-level operations (no gradients) ----

  // T coarse maps of shape (N, C, h0, w0) from the recurrence.
  std::vector<Tensor<T>> temporal_generate(const Tensor<T>& z, int frames,
                                           const std::vector<int>& labels = {}) const {
    if (frames < 1) throw std::invalid_argument("temporal_generate: frames must be >= 1");
    check_noise(z.shape());
    check_labels(labels, z.dim(0));
    Graph<T> g(false);
    Binder<T, T> bind(g, params_, false);
    Ctx<T> c{g, bind, labels, NormMode::running, {}};
    Var seq = clstm(c, g.leaf(z), frames);
    std::vector<Tensor<T>> out;
    const Tensor<T>& v = g.value(seq);
    const Index n = v.dim(0), ch = v.dim(1), h = v.dim(3), w = v.dim(4);
    for (int t = 0; t < frames; ++t) {
      Tensor<T> m({n, ch, h, w});
      for (Index i = 0; i < n * ch; ++i) {
        const T* src = v.data() + (i * frames + t) * h * w;
        std::copy(src, src + h * w, m.data() + i * h * w);
      }
      out.push_back(std::move(m));
    }
    return out;
  }

  // Level-l abstract block on an explicit input map (inference normalization).
  Tensor<T> abstract_forward(int level, const Tensor<T>& h, const std::vector<int>& labels = {}) const {
    check_level(level);
    check_labels(labels, h.rank() == 5 ? h.dim(0) : 0);
    require_rank(h.shape(), 5, "abstract_forward");
    if (h.dim(1) != input_channels_of(level)) {
      throw ShapeError("abstract_forward: level " + std::to_string(level) + " expects " +
                       std::to_string(input_channels_of(level)) + " channels, got " +
                       to_string(h.shape()));
    }
    Graph<T> g(false);
    Binder<T, T> bind(g, params_, false);
    Ctx<T> c{g, bind, labels, NormMode::running, {}};
    return g.value(abstract_block(c, level, g.leaf(h)));
  }

  Tensor<T> render(int level, const Tensor<T>& h) const {
    check_level(level);
    if (!renders(level)) throw std::invalid_argument("render: level has no rendering block");
    require_rank(h.shape(), 5, "render");
    if (h.dim(1) != cfg_.level_channels(level)) throw ShapeError("render: channel mismatch");
    Graph<T> g(false);
    Binder<T, T> bind(g, params_, false);
    Ctx<T> c{g, bind, no_labels(), NormMode::running, {}};
    return g.value(render_block(c, level, g.leaf(h)));
  }

  // Dense generation: every abstract block in sequence, then the last rendering block.
  Tensor<T> infer(const Tensor<T>& z, const std::vector<int>& labels = {}) const {
    Graph<T> g(false);
    Binder<T, T> bind(g, params_, false);
    Pass p = forward(g, bind, z, labels, {}, NormMode::running, false);
    return g.value(p.outputs.back());
  }

  // Sparse training path returning every level's output values.
  std::vector<Tensor<T>> train_forward(const Tensor<T>& z, Rng& rng,
                                       const std::vector<int>& labels = {},
                                       NormMode mode = NormMode::batch) const {
    return train_forward_with(z, draw_junctions(rng), labels, mode);
  }

  std::vector<Tensor<T>> train_forward_with(const Tensor<T>& z,
                                            const std::vector<SubsampleSpec>& junctions,
                                            const std::vector<int>& labels = {},
                                            NormMode mode = NormMode::batch) const {
    Graph<T> g(false);
    Binder<T, T> bind(g, params_, false);
    Pass p = forward(g, bind, z, labels, junctions, mode, true);
    std::vector<Tensor<T>> out;
    for (Var v : p.outputs) out.push_back(v.valid() ? g.value(v) : Tensor<T>());
    return out;
  }

  // Videos for (1 - a) z1 + a z2 at `steps` evenly spaced a in [0, 1].
  std::vector<Tensor<T>> interpolate(const Tensor<T>& z1, const Tensor<T>& z2, int steps,
                                     const std::vector<int>& labels = {}) const {
    if (steps < 2) throw std::invalid_argument("interpolate: steps must be >= 2");
    require_same_shape(z1.shape(), z2.shape(), "interpolate");
    std::vector<Tensor<T>> out;
    for (int s = 0; s < steps; ++s) {
      out.push_back(infer(lerp_noise(z1, z2, s, steps), labels));
    }
    return out;
  }

  static Tensor<T> lerp_noise(const Tensor<T>& z1, const Tensor<T>& z2, int step, int steps) {
    Tensor<T> z(z1.shape());
    if (step == 0) return z1;
    if (step == steps - 1) return z2;
    const T a = static_cast<T>(step) / static_cast<T>(steps - 1);
    for (Index i = 0; i < z.size(); ++i) z[i] = (T(1) - a) * z1[i] + a * z2[i];
    return z;
  }

  int input_channels_of(int level) const {
    const int b = cfg_.first_block_of(level);
    return b == 0 ? cfg_.clstm_channels + cfg_.z_channels
                  : cfg_.upsample_channels[static_cast<std::size_t>(b - 1)];
  }

 private:
  static const std::vector<int>& no_labels() {
    static const std::vector<int> empty;
    return empty;
  }

  template <class S>
  struct Ctx {
    Graph<S>& g;
    Binder<T, S>& bind;
    const std::vector<int>& labels;
    NormMode mode;
    std::vector<ops::ChannelStats> stats;
  };

  struct BnLayer {
    int stats = -1;
    ParamId gamma, beta;  // (C) or (K, C) when conditional
    bool conditional = false;
  };
  struct UpBlock {
    BnLayer bn1, bn2;
    ParamId w1, b1, w2, b2, ws, bs;
  };
  struct RenderBlock {
    BnLayer bn;
    ParamId w, b;
  };

  void check_level(int level) const {
    if (level < 1 || level > cfg_.levels) {
      throw std::out_of_range("level " + std::to_string(level) + " outside [1, " +
                              std::to_string(cfg_.levels) + "]");
    }
  }

  void check_noise(const Shape& s) const {
    require_rank(s, 2, "noise");
    if (s[1] != cfg_.latent_dim) {
      throw ShapeError("noise has " + std::to_string(s[1]) + " dims, model expects " +
                       std::to_string(cfg_.latent_dim));
    }
  }

  void check_labels(const std::vector<int>& labels, Index n) const {
    if (!cfg_.conditional()) {
      if (!labels.empty()) throw std::invalid_argument("labels given to an unconditional model");
      return;
    }
    if (static_cast<Index>(labels.size()) != n) {
      throw std::invalid_argument("conditional model needs one label per sample");
    }
    for (int y : labels) {
      if (y < 0 || y >= cfg_.label_count) {
        throw std::out_of_range("label " + std::to_string(y) + " outside [0, " +
                                std::to_string(cfg_.label_count) + ")");
      }
    }
  }

  BnLayer make_bn(const std::string& name, Index channels, bool conditional) {
    BnLayer bn;
    bn.conditional = conditional;
    bn.stats = static_cast<int>(bn_.size());
    bn_.push_back(RunningStats{name, std::vector<double>(static_cast<std::size_t>(channels), 0.0),
                               std::vector<double>(static_cast<std::size_t>(channels), 1.0)});
    const Shape s = conditional ? Shape{cfg_.label_count, channels} : Shape{channels};
    bn.gamma = params_.add(name + ".gamma", Tensor<T>(s, T(1)));
    bn.beta = params_.add(name + ".beta", Tensor<T>(s, T(0)));
    return bn;
  }

  ParamId conv(const std::string& name, Index co, Index ci, Index k, double scale, Rng& rng) {
    return params_.add(name, init::glorot_uniform<T>({co, ci, 1, k, k}, scale, rng));
  }
  ParamId zeros(const std::string& name, Index n) { return params_.add(name, Tensor<T>({n})); }

  void build(Rng& rng) {
    const Index c0 = cfg_.clstm_channels, h0 = cfg_.coarse_height(), w0 = cfg_.coarse_width();
    const Index in = cfg_.latent_dim + cfg_.label_count;
    fc_w_ = params_.add("fc.w", init::glorot_uniform<T>({c0 * h0 * w0, in}, 1.0, rng));
    fc_b_ = zeros("fc.b", c0 * h0 * w0);
    lstm_w_ = conv("clstm.w", 4 * c0, 2 * c0, 3, 1.0, rng);
    lstm_b_ = zeros("clstm.b", 4 * c0);
    if (cfg_.z_channels > 0) {
      zp_w_ = params_.add("zproj.w", init::glorot_uniform<T>({cfg_.z_channels, cfg_.latent_dim}, 1.0, rng));
      zp_b_ = zeros("zproj.b", cfg_.z_channels);
    }
    const bool cond = cfg_.conditional();
    const double residual = std::sqrt(2.0);
    Index ci = c0 + cfg_.z_channels;
    for (int b = 0; b < cfg_.total_upsample_blocks(); ++b) {
      const Index co = cfg_.upsample_channels[static_cast<std::size_t>(b)];
      const std::string p = "up" + std::to_string(b);
      UpBlock u;
      u.bn1 = make_bn(p + ".bn1", ci, cond);
      u.w1 = conv(p + ".conv1.w", co, ci, 3, residual, rng);
      u.b1 = zeros(p + ".conv1.b", co);
      u.bn2 = make_bn(p + ".bn2", co, cond);
      u.w2 = conv(p + ".conv2.w", co, co, 3, residual, rng);
      u.b2 = zeros(p + ".conv2.b", co);
      if (ci != co) {
        u.ws = conv(p + ".shortcut.w", co, ci, 1, 1.0, rng);
        u.bs = zeros(p + ".shortcut.b", co);
      }
      up_.push_back(u);
      ci = co;
    }
    render_.resize(static_cast<std::size_t>(cfg_.levels));
    for (int l : rendered_levels()) {
      const std::string p = "render" + std::to_string(l);
      const Index c = cfg_.level_channels(l);
      RenderBlock r;
      r.bn = make_bn(p + ".bn", c, false);
      r.w = conv(p + ".conv.w", cfg_.image_channels, c, 3, 1.0, rng);
      r.b = zeros(p + ".conv.b", cfg_.image_channels);
      render_[static_cast<std::size_t>(l - 1)] = r;
    }
  }

  template <class S>
  Var norm(Ctx<S>& c, const BnLayer& bn, Var x) const {
    Var y;
    if (c.mode == NormMode::batch) {
      y = ops::batch_normalize(c.g, x, kBatchNormEps, &c.stats[static_cast<std::size_t>(bn.stats)]);
    } else {
      const RunningStats& rs = bn_[static_cast<std::size_t>(bn.stats)];
      y = ops::fixed_normalize(c.g, x, std::span<const double>(rs.mean),
                               std::span<const double>(rs.var), kBatchNormEps);
    }
    Var gamma = c.bind(bn.gamma), beta = c.bind(bn.beta);
    if (bn.conditional) {
      gamma = ops::gather_rows(c.g, gamma, c.labels);
      beta = ops::gather_rows(c.g, beta, c.labels);
    }
    return ops::channel_affine(c.g, y, gamma, beta);
  }

  // CLSTM over `frames` steps; returns (N, C, frames, h0, w0).
  template <class S>
  Var clstm(Ctx<S>& c, Var z, int frames) const {
    Graph<S>& g = c.g;
    const Index n = g.shape(z)[0], c0 = cfg_.clstm_channels;
    const Index h0 = cfg_.coarse_height(), w0 = cfg_.coarse_width();
    const Index k = cfg_.label_count, d = cfg_.latent_dim;
    // FC input: [one-hot label, z] at t = 0, the zero vector afterwards.
    Tensor<S> first({n, k + d}), rest({n, k + d});
    const Tensor<S>& zv = g.value(z);
    for (Index i = 0; i < n; ++i) {
      if (k > 0) first[i * (k + d) + c.labels[static_cast<std::size_t>(i)]] = S(1);
      for (Index j = 0; j < d; ++j) first[i * (k + d) + k + j] = zv[i * d + j];
    }
    const Shape map_shape{n, c0, 1, h0, w0};
    Var w = c.bind(fc_w_), b = c.bind(fc_b_);
    Var x0 = ops::reshape(g, ops::linear(g, g.leaf(std::move(first)), w, b), map_shape);
    Var xr = frames > 1 ? ops::reshape(g, ops::linear(g, g.leaf(std::move(rest)), w, b), map_shape)
                        : Var{};
    Var lw = c.bind(lstm_w_), lb = c.bind(lstm_b_);
    Var h = g.leaf(Tensor<S>(map_shape)), cell = g.leaf(Tensor<S>(map_shape));
    std::vector<Var> hs;
    for (int t = 0; t < frames; ++t) {
      Var gates = ops::conv3d(g, ops::concat(g, {t == 0 ? x0 : xr, h}, 1), lw, lb, ops::Pad3{0, 1, 1});
      Var i = ops::sigmoid(g, ops::slice(g, gates, 1, 0, c0));
      Var f = ops::sigmoid(g, ops::slice(g, gates, 1, c0, c0));
      Var o = ops::sigmoid(g, ops::slice(g, gates, 1, 2 * c0, c0));
      Var u = ops::tanh(g, ops::slice(g, gates, 1, 3 * c0, c0));
      cell = ops::add(g, ops::mul(g, f, cell), ops::mul(g, i, u));
      h = ops::mul(g, o, ops::tanh(g, cell));
      hs.push_back(h);
    }
    return hs.size() == 1 ? hs.front() : ops::concat(g, hs, 2);
  }

  template <class S>
  Var level1_input(Ctx<S>& c, Var z, int frames) const {
    Var seq = clstm(c, z, frames);
    if (cfg_.z_channels == 0) return seq;
    const Shape s = c.g.shape(seq);
    Var proj = ops::linear(c.g, z, c.bind(zp_w_), c.bind(zp_b_));
    return ops::concat(c.g, {seq, ops::broadcast_thw(c.g, proj, s[2], s[3], s[4])}, 1);
  }

  template <class S>
  Var up_block(Ctx<S>& c, const UpBlock& u, Var x) const {
    Graph<S>& g = c.g;
    const ops::Pad3 same{0, 1, 1};
    Var r = ops::relu(g, norm(c, u.bn1, x));
    r = ops::conv3d(g, ops::unpool2x(g, r), c.bind(u.w1), c.bind(u.b1), same);
    r = ops::relu(g, norm(c, u.bn2, r));
    r = ops::conv3d(g, r, c.bind(u.w2), c.bind(u.b2), same);
    Var s = ops::unpool2x(g, x);
    if (u.ws.valid()) s = ops::conv3d(g, s, c.bind(u.ws), c.bind(u.bs), ops::Pad3{});
    return ops::add(g, r, s);
  }

  template <class S>
  Var abstract_block(Ctx<S>& c, int level, Var h) const {
    const int first = cfg_.first_block_of(level);
    const int count = cfg_.upsample_blocks_per_level[static_cast<std::size_t>(level - 1)];
    for (int b = first; b < first + count; ++b) h = up_block(c, up_[static_cast<std::size_t>(b)], h);
    return h;
  }

  template <class S>
  Var render_block(Ctx<S>& c, int level, Var h) const {
    const RenderBlock& r = render_[static_cast<std::size_t>(level - 1)];
    Var y = ops::relu(c.g, norm(c, r.bn, h));
    y = ops::conv3d(c.g, y, c.bind(r.w), c.bind(r.b), ops::Pad3{0, 1, 1});
    return ops::tanh(c.g, y);
  }

  ModelConfig cfg_;
  ParameterSet<T> params_;
  std::vector<RunningStats> bn_;
  ParamId fc_w_, fc_b_, lstm_w_, lstm_b_, zp_w_, zp_b_;
  std::vector<UpBlock> up_;
  std::vector<RenderBlock> render_;
};

}  // namespace vidgan
