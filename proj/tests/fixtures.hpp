// SPDX-License-Identifier: Apache-2.0
//
// Small model configurations shared by the tests.

#pragma once

#include "vidgan/config.hpp"
#include "vidgan/rng.hpp"
#include "vidgan/tensor.hpp"

namespace vidgan::testing {

// L levels, one upsampling block each, coarse map of 1x1 unless `coarse` says otherwise.
inline ModelConfig tiny_model(int levels = 4, int rate = 2, int frames = 16, int coarse = 1,
                              int labels = 0, int channels = 3) {
  ModelConfig m;
  m.levels = levels;
  m.rate = rate;
  m.frames = frames;
  m.height = m.width = coarse << levels;
  m.image_channels = channels;
  m.latent_dim = 6;
  m.clstm_channels = 4;
  m.z_channels = 2;
  m.upsample_blocks_per_level.assign(static_cast<std::size_t>(levels), 1);
  m.upsample_channels.clear();
  for (int l = 0; l < levels; ++l) m.upsample_channels.push_back(l < 2 ? 6 : 4);
  m.label_count = labels;
  return m;
}

inline DiscriminatorConfig tiny_discriminator(const ModelConfig& m, std::vector<int> channels = {3, 4}) {
  DiscriminatorConfig d;
  d.levels = m.levels;
  d.label_count = m.label_count;
  d.channels = std::move(channels);
  return d;
}

inline RunConfig tiny_run(int levels = 4, int rate = 2, int frames = 16, int batch = 2) {
  RunConfig r;
  r.model = tiny_model(levels, rate, frames, 1, 0, 1);
  r.discriminator = tiny_discriminator(r.model);
  r.train.batch_size = batch;
  r.train.iterations = 100;
  r.train.snapshot_interval = 50;
  r.dataset.kind = "toy";
  r.dataset.toy.height = r.dataset.toy.width = r.model.height;
  r.dataset.toy.frames = frames;
  r.dataset.toy.channels = 1;
  r.eval.samples = 16;
  r.eval.repeats = 2;
  return r;
}

template <class T>
Tensor<T> uniform_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(s);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

}  // namespace vidgan::testing
