// SPDX-License-Identifier: Apache-2.0
//
// Closed-form FLOP and activation-memory estimates for one training forward
// pass, per block, plus a memory-budget planner.
//
// Counting conventions:
//   conv        2 * C_in * C_out * kt * kh * kw * out_volume, plus one op per output (bias)
//   linear      2 * in * out per sample, plus one op per output
//   everything else (normalization, affine, activation, pooling, unpooling,
//   frame gathering, concatenation, residual add)  one op per output element
//   memory      4 bytes per forward output value; gradient buffers are not counted
// out_volume is N * T * H * W of the layer output. The CLSTM gate convolution is
// counted as four C_in -> C convolutions per step.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vidgan/config.hpp"
#include "vidgan/discriminator.hpp"

namespace vidgan {

struct LayerCost {
  std::string name;
  double flops = 0;
  double activation_bytes = 0;
};

struct BlockCost {
  std::string name;
  int level = 1;
  std::vector<LayerCost> layers;

  double flops() const {
    double s = 0;
    for (const auto& l : layers) s += l.flops;
    return s;
  }
  double activation_bytes() const {
    double s = 0;
    for (const auto& l : layers) s += l.activation_bytes;
    return s;
  }
};

struct NetworkCost {
  std::vector<BlockCost> blocks;

  double flops() const {
    double s = 0;
    for (const auto& b : blocks) s += b.flops();
    return s;
  }
  double activation_bytes() const {
    double s = 0;
    for (const auto& b : blocks) s += b.activation_bytes();
    return s;
  }
};

struct CostReport {
  int rate = 1;
  Index batch = 1;
  NetworkCost generator, discriminator;
  NetworkCost naive_generator, naive_discriminator;  // same model at rate 1

  // naive / this; 1.0 when rate == 1.
  double generator_flop_ratio() const { return naive_generator.flops() / generator.flops(); }
  double generator_memory_ratio() const {
    return naive_generator.activation_bytes() / generator.activation_bytes();
  }
  double discriminator_flop_ratio() const { return naive_discriminator.flops() / discriminator.flops(); }
  double discriminator_memory_ratio() const {
    return naive_discriminator.activation_bytes() / discriminator.activation_bytes();
  }
};

namespace cost {

struct Act {
  Index n = 1, c = 1, t = 1, h = 1, w = 1;
  double values() const {
    return static_cast<double>(n) * static_cast<double>(c) * static_cast<double>(t) * static_cast<double>(h) *
           static_cast<double>(w);
  }
  double volume() const {
    return static_cast<double>(n) * static_cast<double>(t) * static_cast<double>(h) * static_cast<double>(w);
  }
};

class Counter {
 public:
  explicit Counter(BlockCost& block) : block_(block) {}

  Act conv(const std::string& name, const Act& x, Index co, Index kt, Index kh, Index kw) {
    Act y = x;
    y.c = co;
    const double macs = static_cast<double>(x.c) * static_cast<double>(co) * static_cast<double>(kt * kh * kw);
    push(name, 2.0 * macs * y.volume() + y.values(), y);
    return y;
  }
  Act linear(const std::string& name, Index n, Index in, Index out) {
    const Act y{n, out, 1, 1, 1};
    push(name, 2.0 * static_cast<double>(n) * static_cast<double>(in) * static_cast<double>(out) + y.values(), y);
    return y;
  }
  // One op per output element.
  Act pointwise(const std::string& name, const Act& y) {
    push(name, y.values(), y);
    return y;
  }

 private:
  void push(const std::string& name, double flops, const Act& y) {
    block_.layers.push_back({name, flops, 4.0 * y.values()});
  }
  BlockCost& block_;
};

inline Index halve(Index len) { return len > 1 ? (len + 1) / 2 : len; }

inline Act downsampled(Act a) {
  a.t = halve(a.t);
  a.h = halve(a.h);
  a.w = halve(a.w);
  return a;
}

inline Act normalized(Counter& k, const std::string& name, const Act& x) {
  k.pointwise(name + ".norm", x);
  return k.pointwise(name + ".affine", x);
}

inline Act up_block(Counter& k, const std::string& p, const Act& x, Index co) {
  Act r = normalized(k, p + ".bn1", x);
  r = k.pointwise(p + ".relu1", r);
  Act u = r;
  u.h *= 2;
  u.w *= 2;
  r = k.pointwise(p + ".unpool", u);
  r = k.conv(p + ".conv1", r, co, 1, 3, 3);
  r = normalized(k, p + ".bn2", r);
  r = k.pointwise(p + ".relu2", r);
  r = k.conv(p + ".conv2", r, co, 1, 3, 3);
  Act s = x;
  s.h *= 2;
  s.w *= 2;
  s = k.pointwise(p + ".shortcut.unpool", s);
  if (x.c != co) s = k.conv(p + ".shortcut.conv", s, co, 1, 1, 1);
  return k.pointwise(p + ".add", r);
}

inline Act render_block(Counter& k, const std::string& p, const Act& x, Index channels) {
  Act r = normalized(k, p + ".bn", x);
  r = k.pointwise(p + ".relu", r);
  r = k.conv(p + ".conv", r, channels, 1, 3, 3);
  return k.pointwise(p + ".tanh", r);
}

// Level-1 input: FC (applied to the t = 0 input and to the shared zero input),
// T CLSTM steps, z projection broadcast and concatenation.
inline Act temporal_generator(Counter& k, const ModelConfig& m, Index n, Index frames) {
  const Index c0 = m.clstm_channels, h0 = m.coarse_height(), w0 = m.coarse_width();
  const Index in = m.latent_dim + m.label_count;
  k.linear("fc.first", n, in, c0 * h0 * w0);
  if (frames > 1) k.linear("fc.rest", n, in, c0 * h0 * w0);
  const Act state{n, c0, 1, h0, w0};
  for (Index t = 0; t < frames; ++t) {
    const std::string p = "clstm.step" + std::to_string(t);
    const Act joint{n, 2 * c0, 1, h0, w0};
    k.pointwise(p + ".concat", joint);
    for (const char* gate : {"i", "f", "o", "u"}) {
      k.conv(p + ".gate_" + gate, joint, c0, 1, 3, 3);
      k.pointwise(p + ".act_" + gate, state);
    }
    k.pointwise(p + ".forget", state);
    k.pointwise(p + ".input", state);
    k.pointwise(p + ".cell", state);
    k.pointwise(p + ".cell_tanh", state);
    k.pointwise(p + ".hidden", state);
  }
  Act seq{n, c0, frames, h0, w0};
  if (frames > 1) k.pointwise("clstm.stack", seq);
  if (m.z_channels > 0) {
    k.linear("zproj", n, m.latent_dim, m.z_channels);
    seq.c += m.z_channels;
    k.pointwise("zproj.concat", seq);
  }
  return seq;
}

inline std::vector<int> rendered(const ModelConfig& m) {
  if (m.baseline != Baseline::none) return {m.levels};
  std::vector<int> out;
  for (int l = 1; l <= m.levels; ++l) out.push_back(l);
  return out;
}

// Sparse training forward of the generator at junction rate `rate`; one block per level.
inline NetworkCost generator_cost(const ModelConfig& m, int rate, Index n) {
  const std::vector<int> frames = m.frame_schedule_for(rate);
  const std::vector<int> renders = rendered(m);
  NetworkCost net;
  Act h;
  int b = 0;
  for (int l = 1; l <= m.levels; ++l) {
    BlockCost block{"G" + std::to_string(l), l, {}};
    Counter k(block);
    if (l == 1) h = temporal_generator(k, m, n, frames[0]);
    for (int i = 0; i < m.upsample_blocks_per_level[static_cast<std::size_t>(l - 1)]; ++i, ++b) {
      h = up_block(k, "up" + std::to_string(b), h, m.upsample_channels[static_cast<std::size_t>(b)]);
    }
    if (std::find(renders.begin(), renders.end(), l) != renders.end()) {
      render_block(k, "render" + std::to_string(l), h, m.image_channels);
    }
    if (l < m.levels && frames[static_cast<std::size_t>(l)] != h.t) {
      h.t = frames[static_cast<std::size_t>(l)];
      h = k.pointwise("subsample" + std::to_string(l), h);
    }
    net.blocks.push_back(std::move(block));
  }
  return net;
}

inline Act dis_block(Counter& k, const std::string& p, const Act& x, Index co, Index kt, bool first, bool down) {
  Act r = first ? x : k.pointwise(p + ".relu0", x);
  r = k.conv(p + ".conv1", r, co, kt, 3, 3);
  r = k.pointwise(p + ".relu1", r);
  r = k.conv(p + ".conv2", r, co, kt, 3, 3);
  if (down) r = k.pointwise(p + ".pool", downsampled(r));
  Act s = x;
  if (first) {
    if (down) s = k.pointwise(p + ".shortcut.pool", downsampled(s));
    s = k.conv(p + ".shortcut.conv", s, co, 1, 1, 1);
  } else {
    if (x.c != co || down) s = k.conv(p + ".shortcut.conv", s, co, 1, 1, 1);
    if (down) s = k.pointwise(p + ".shortcut.pool", downsampled(s));
  }
  return k.pointwise(p + ".add", r);
}

// One forward pass of every sub-discriminator on a batch of n generated clips.
inline NetworkCost discriminator_cost(const ModelConfig& model, const DiscriminatorConfig& d, int rate, Index n) {
  ModelConfig m = model;
  m.rate = rate;
  NetworkCost net;
  for (const HeadSpec& head : heads_for(m)) {
    const int l = head.level;
    const Index frames = head.single_frame ? 1 : m.frame_schedule()[static_cast<std::size_t>(l - 1)];
    const Index kt = head.single_frame ? 1 : 3;
    BlockCost block{"D" + std::to_string(l) + (head.single_frame ? "f" : ""), l, {}};
    Counter k(block);
    Act x{n, m.image_channels, frames, m.level_height(l), m.level_width(l)};
    const std::size_t count = d.channels.size();
    for (std::size_t b = 0; b < count; ++b) {
      x = dis_block(k, "block" + std::to_string(b), x, d.channels[b], kt, b == 0, b + 1 < count);
    }
    x = k.pointwise("relu", x);
    k.pointwise("sum", Act{n, x.c, 1, 1, 1});
    k.linear("linear", n, x.c, 1);
    if (m.conditional()) k.pointwise("projection", Act{n, x.c, 1, 1, 1});
    net.blocks.push_back(std::move(block));
  }
  return net;
}

}  // namespace cost

inline CostReport estimate(const ModelConfig& m, const DiscriminatorConfig& d, int rate, Index batch = 1) {
  m.validate();
  d.validate();
  if (rate < 1) throw ConfigError("estimate: rate must be >= 1");
  if (batch < 1) throw ConfigError("estimate: batch must be >= 1");
  CostReport r;
  r.rate = rate;
  r.batch = batch;
  r.generator = cost::generator_cost(m, rate, batch);
  r.discriminator = cost::discriminator_cost(m, d, rate, batch);
  r.naive_generator = cost::generator_cost(m, 1, batch);
  r.naive_discriminator = cost::discriminator_cost(m, d, 1, batch);
  return r;
}

inline CostReport estimate(const RunConfig& cfg, Index batch = 1) {
  return estimate(cfg.model, cfg.discriminator, cfg.model.rate, batch);
}

// ---------------------------------------------------------------------------
// Budget planner

struct Plan {
  int rate = 1;
  int levels = 1;
  Index batch = 1;
  double activation_bytes = 0;
};

class InfeasibleBudget : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Activation bytes of one training step: a generator pass on n clips and a
// discriminator pass on the concatenated real and generated batch (2n).
inline double step_activation_bytes(const ModelConfig& m, const DiscriminatorConfig& d, int rate, Index n) {
  return cost::generator_cost(m, rate, n).activation_bytes() +
         cost::discriminator_cost(m, d, rate, 2 * n).activation_bytes();
}

// Largest batch (up to max_batch) and, among those, the smallest rate whose
// step footprint fits in budget_bytes. The level count is kept from `m`.
inline Plan plan(double budget_bytes, const ModelConfig& m, const DiscriminatorConfig& d, Index max_batch,
                 const std::vector<int>& rates = {1, 2, 3, 4}) {
  m.validate();
  d.validate();
  if (max_batch < 1) throw ConfigError("plan: max_batch must be >= 1");
  std::vector<int> sorted = rates;
  std::sort(sorted.begin(), sorted.end());
  if (sorted.empty() || sorted.front() < 1) throw ConfigError("plan: rates must be >= 1");
  Plan best;
  best.batch = 0;
  for (int r : sorted) {
    // The footprint is linear in the batch size.
    const double per = step_activation_bytes(m, d, r, 1);
    const Index fits = static_cast<Index>(std::min(static_cast<double>(max_batch), std::floor(budget_bytes / per)));
    if (fits > best.batch) best = Plan{r, m.levels, fits, per * static_cast<double>(fits)};
  }
  if (best.batch < 1) {
    std::ostringstream msg;
    msg << "memory budget of " << budget_bytes << " bytes is below the single-sample footprint ("
        << step_activation_bytes(m, d, sorted.back(), 1) << " bytes at rate " << sorted.back() << ")";
    throw InfeasibleBudget(msg.str());
  }
  return best;
}

// ---------------------------------------------------------------------------
// Reports

namespace detail {

inline std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

}  // namespace detail

// Method / GFlops / Ratio / Memory (MB) / Ratio, with the rate-1 row first.
inline std::string cost_table(const ModelConfig& m, const DiscriminatorConfig& d, const std::vector<int>& rates,
                              Index batch = 1) {
  std::ostringstream out;
  auto row = [&](const std::string& name, double flops, const std::string& fr, double bytes, const std::string& mr) {
    out << std::left << std::setw(24) << name << std::right << std::setw(10) << detail::fixed(flops / 1e9, 2)
        << std::setw(8) << fr << std::setw(10) << detail::fixed(bytes / 1e6, 0) << std::setw(8) << mr << '\n';
  };
  out << std::left << std::setw(24) << "Method" << std::right << std::setw(10) << "GFlops" << std::setw(8) << "Ratio"
      << std::setw(10) << "Memory" << std::setw(8) << "Ratio" << '\n';
  for (const bool gen : {true, false}) {
    const CostReport naive = estimate(m, d, 1, batch);
    const NetworkCost& base = gen ? naive.generator : naive.discriminator;
    row(std::string(gen ? "Gen" : "Dis") + " (naive impl.)", base.flops(), "", base.activation_bytes(), "");
    for (int r : rates) {
      if (r == 1) continue;
      const CostReport rep = estimate(m, d, r, batch);
      const NetworkCost& net = gen ? rep.generator : rep.discriminator;
      row("Subsampling (s_t=" + std::to_string(r) + ")", net.flops(),
          detail::fixed(gen ? rep.generator_flop_ratio() : rep.discriminator_flop_ratio(), 2) + "x",
          net.activation_bytes(),
          detail::fixed(gen ? rep.generator_memory_ratio() : rep.discriminator_memory_ratio(), 2) + "x");
    }
  }
  return out.str();
}

// One row per block and per network total.
inline std::string cost_csv(const CostReport& r) {
  std::ostringstream out;
  out << "network,block,level,rate,batch,flops,activation_bytes,naive_flops,naive_activation_bytes\n"
      << std::setprecision(15);
  auto emit = [&](const char* net, const NetworkCost& c, const NetworkCost& naive) {
    for (std::size_t i = 0; i < c.blocks.size(); ++i) {
      const BlockCost& b = c.blocks[i];
      out << net << ',' << b.name << ',' << b.level << ',' << r.rate << ',' << r.batch << ',' << b.flops() << ','
          << b.activation_bytes() << ',' << naive.blocks.at(i).flops() << ',' << naive.blocks.at(i).activation_bytes()
          << '\n';
    }
    out << net << ",total,0," << r.rate << ',' << r.batch << ',' << c.flops() << ',' << c.activation_bytes() << ','
        << naive.flops() << ',' << naive.activation_bytes() << '\n';
  };
  emit("generator", r.generator, r.naive_generator);
  emit("discriminator", r.discriminator, r.naive_discriminator);
  return out.str();
}

}  // namespace vidgan
