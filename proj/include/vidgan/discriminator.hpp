// SPDX-License-Identifier: Apache-2.0
//
// Per-level 3D residual sub-discriminators and their aggregation.

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "vidgan/autograd.hpp"
#include "vidgan/config.hpp"
#include "vidgan/ops.hpp"
#include "vidgan/params.hpp"
#include "vidgan/rng.hpp"
#include "vidgan/tensor.hpp"

namespace vidgan {

// One sub-discriminator: the level it scores and whether it sees a single frame.
struct HeadSpec {
  int level = 1;
  bool single_frame = false;
};

inline std::vector<HeadSpec> heads_for(const ModelConfig& m) {
  switch (m.baseline) {
    case Baseline::none: {
      std::vector<HeadSpec> h;
      for (int l = 1; l <= m.levels; ++l) h.push_back({l, false});
      return h;
    }
    case Baseline::single_3d: return {{m.levels, false}};
    case Baseline::mixed_3d_2d: return {{m.levels, false}, {m.levels, true}};
  }
  return {};
}

// sigma(sum_l logits_l), elementwise over the batch.
template <class T>
std::vector<T> aggregate(const std::vector<std::vector<T>>& logits) {
  if (logits.empty()) throw std::invalid_argument("aggregate: no levels");
  const std::size_t n = logits.front().size();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    T s(0);
    for (const auto& l : logits) {
      if (l.size() != n) throw std::invalid_argument("aggregate: score length mismatch");
      s += l[i];
    }
    out[i] = ops::detail::stable_sigmoid(s);
  }
  return out;
}

template <class T = float>
class Discriminator {
 public:
  Discriminator(const ModelConfig& model, const DiscriminatorConfig& cfg, Rng& rng)
      : model_(model), cfg_(cfg), heads_(heads_for(model)) {
    cfg_.validate();
    if (cfg_.levels != model_.levels) throw ConfigError("discriminator levels do not match the model");
    if (cfg_.label_count != model_.label_count) {
      throw ConfigError("discriminator label_count does not match the model");
    }
    for (std::size_t h = 0; h < heads_.size(); ++h) build_head(h, rng);
  }

  const DiscriminatorConfig& config() const noexcept { return cfg_; }
  const std::vector<HeadSpec>& heads() const noexcept { return heads_; }
  ParameterSet<T>& params() noexcept { return params_; }
  const ParameterSet<T>& params() const noexcept { return params_; }

  // Expected (C, T, H, W) of a head's input.
  Shape input_shape(std::size_t head, Index batch) const {
    const HeadSpec& h = heads_.at(head);
    const Index t = h.single_frame ? 1 : model_.frame_schedule()[static_cast<std::size_t>(h.level - 1)];
    return {batch, model_.image_channels, t, model_.level_height(h.level), model_.level_width(h.level)};
  }

  // Logits (N) of one head on x.
  template <class S>
  Var score(Graph<S>& g, Binder<T, S>& bind, std::size_t head, Var x,
            const std::vector<int>& labels) const {
    const Shape xs = g.shape(x);
    require_rank(xs, 5, "sub_score");
    const Shape expect = input_shape(head, xs[0]);
    // The frame count may differ from the schedule when the rate differs (e.g. dense probes).
    if (xs[1] != expect[1] || xs[3] != expect[3] || xs[4] != expect[4] ||
        (heads_[head].single_frame && xs[2] != 1)) {
      throw ShapeError("sub_score: level " + std::to_string(heads_[head].level) + " expects " +
                       to_string(expect) + ", got " + to_string(xs));
    }
    check_labels(labels, xs[0]);
    const Head& hd = built_[head];
    Var h = x;
    for (std::size_t b = 0; b < hd.blocks.size(); ++b) h = block(g, bind, hd.blocks[b], h);
    Var feat = ops::sum_spatial(g, ops::relu(g, h));
    Var logit = ops::reshape(g, ops::linear(g, feat, bind(hd.lw), bind(hd.lb)), Shape{xs[0]});
    if (model_.conditional()) {
      Var e = ops::gather_rows(g, bind(hd.embed), labels);
      logit = ops::add(g, logit, ops::row_dot(g, e, feat));
    }
    return logit;
  }

  // Tensor-level score of the head for `level` (3D head).
  std::vector<T> sub_score(int level, const Tensor<T>& x, const std::vector<int>& labels = {}) const {
    for (std::size_t h = 0; h < heads_.size(); ++h) {
      if (heads_[h].level == level && !heads_[h].single_frame) {
        Graph<T> g(false);
        Binder<T, T> bind(g, params_, false);
        const Tensor<T>& v = g.value(score(g, bind, h, g.leaf(x), labels));
        return {v.data(), v.data() + v.size()};
      }
    }
    throw std::out_of_range("sub_score: no sub-discriminator for level " + std::to_string(level));
  }

 private:
  struct Block {
    ParamId w1, b1, w2, b2, ws, bs;
    bool optimized = false;
    bool down = false;
    Index kt = 3;
  };
  struct Head {
    std::vector<Block> blocks;
    ParamId lw, lb, embed;
  };

  void check_labels(const std::vector<int>& labels, Index n) const {
    if (!model_.conditional()) {
      if (!labels.empty()) throw std::invalid_argument("labels given to an unconditional discriminator");
      return;
    }
    if (static_cast<Index>(labels.size()) != n) {
      throw std::invalid_argument("conditional discriminator needs one label per sample");
    }
    for (int y : labels)
      if (y < 0 || y >= model_.label_count) throw std::out_of_range("label out of range");
  }

  void build_head(std::size_t index, Rng& rng) {
    const HeadSpec& spec = heads_[index];
    const std::string p = "d" + std::to_string(spec.level) + (spec.single_frame ? "f" : "");
    const Index kt = spec.single_frame ? 1 : 3;
    const double residual = std::sqrt(2.0);
    Head head;
    Index ci = model_.image_channels;
    const std::size_t count = cfg_.channels.size();
    for (std::size_t b = 0; b < count; ++b) {
      const Index co = cfg_.channels[b];
      const std::string q = p + ".block" + std::to_string(b);
      Block blk;
      blk.optimized = b == 0;
      blk.down = b + 1 < count;
      blk.kt = kt;
      blk.w1 = params_.add(q + ".conv1.w", init::glorot_uniform<T>({co, ci, kt, 3, 3}, residual, rng));
      blk.b1 = params_.add(q + ".conv1.b", Tensor<T>({co}));
      blk.w2 = params_.add(q + ".conv2.w", init::glorot_uniform<T>({co, co, kt, 3, 3}, residual, rng));
      blk.b2 = params_.add(q + ".conv2.b", Tensor<T>({co}));
      if (blk.optimized || ci != co || blk.down) {
        blk.ws = params_.add(q + ".shortcut.w", init::glorot_uniform<T>({co, ci, 1, 1, 1}, 1.0, rng));
        blk.bs = params_.add(q + ".shortcut.b", Tensor<T>({co}));
      }
      head.blocks.push_back(blk);
      ci = co;
    }
    head.lw = params_.add(p + ".linear.w", init::glorot_uniform<T>({1, ci}, 1.0, rng));
    head.lb = params_.add(p + ".linear.b", Tensor<T>({1}));
    if (model_.conditional()) {
      head.embed = params_.add(p + ".embed", init::glorot_uniform<T>({model_.label_count, ci}, 1.0, rng));
    }
    built_.push_back(head);
  }

  template <class S>
  Var block(Graph<S>& g, Binder<T, S>& bind, const Block& b, Var x) const {
    const ops::Pad3 pad{b.kt / 2, 1, 1};
    Var r = b.optimized ? x : ops::relu(g, x);
    r = ops::conv3d(g, r, bind(b.w1), bind(b.b1), pad);
    r = ops::conv3d(g, ops::relu(g, r), bind(b.w2), bind(b.b2), pad);
    if (b.down) r = ops::downsample(g, r);
    Var s = x;
    if (b.optimized) {
      if (b.down) s = ops::downsample(g, s);
      s = ops::conv3d(g, s, bind(b.ws), bind(b.bs), ops::Pad3{});
    } else {
      if (b.ws.valid()) s = ops::conv3d(g, s, bind(b.ws), bind(b.bs), ops::Pad3{});
      if (b.down) s = ops::downsample(g, s);
    }
    return ops::add(g, r, s);
  }

  ModelConfig model_;
  DiscriminatorConfig cfg_;
  std::vector<HeadSpec> heads_;
  std::vector<Head> built_;
  ParameterSet<T> params_;
};

}  // namespace vidgan
