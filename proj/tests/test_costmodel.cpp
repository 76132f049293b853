// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "fixtures.hpp"
#include "vidgan/costmodel.hpp"

namespace vidgan {
namespace {

RunConfig reference192() { return preset("paper-192px"); }

// Independent per-head FLOP count: the residual discriminator written out
// as a plain loop over blocks, without the layer bookkeeping.
double head_flops_oracle(const ModelConfig& m, const DiscriminatorConfig& d, int level, Index frames, Index n) {
  double t = static_cast<double>(frames), h = m.level_height(level), w = m.level_width(level);
  double ci = m.image_channels, total = 0;
  auto half = [](double v) { return v > 1 ? std::ceil(v / 2) : v; };
  for (std::size_t b = 0; b < d.channels.size(); ++b) {
    const double co = d.channels[b];
    const bool first = b == 0, down = b + 1 < d.channels.size();
    const double vol = n * t * h * w;
    if (!first) total += n * ci * t * h * w;                 // relu on the input
    total += 2 * ci * co * 27 * vol + co * vol;               // conv1 + bias
    total += co * vol;                                        // relu
    total += 2 * co * co * 27 * vol + co * vol;               // conv2 + bias
    const double dvol = n * half(t) * half(h) * half(w);
    if (down) total += co * dvol;                             // pool
    if (first) {
      if (down) total += ci * dvol;                           // shortcut pool
      total += 2 * ci * co * dvol + co * dvol;                // shortcut 1x1
    } else {
      if (ci != co || down) total += 2 * ci * co * vol + co * vol;
      if (down) total += co * dvol;
    }
    if (down) {
      t = half(t);
      h = half(h);
      w = half(w);
    }
    total += co * n * t * h * w;  // residual add
    ci = co;
  }
  total += ci * n * t * h * w;  // final relu
  total += ci * n;              // spatial sum
  total += 2 * ci * n + n;      // linear
  return total;
}

TEST(CostModel, MatchesIndependentHeadCount) {
  for (const auto& [levels, res] : std::vector<std::pair<int, int>>{{4, 64}, {3, 40}, {4, 192}}) {
    ModelConfig m = testing::tiny_model(levels, 2, 16, res >> levels, 0, 3);
    DiscriminatorConfig d = testing::tiny_discriminator(m, {8, 16, 16, 32});
    for (int rate : {1, 2, 3, 4}) {
      const CostReport r = estimate(m, d, rate, 3);
      const auto frames = m.frame_schedule_for(rate);
      for (int l = 1; l <= levels; ++l) {
        const double expect = head_flops_oracle(m, d, l, frames[static_cast<std::size_t>(l - 1)], 3);
        EXPECT_NEAR(r.discriminator.blocks[static_cast<std::size_t>(l - 1)].flops(), expect, 1e-9 * expect)
            << "levels " << levels << " rate " << rate << " level " << l;
      }
    }
  }
}

TEST(CostModel, NaiveRatiosAreOne) {
  const RunConfig c = reference192();
  const CostReport r = estimate(c.model, c.discriminator, 1);
  EXPECT_EQ(r.generator_flop_ratio(), 1.0);
  EXPECT_EQ(r.generator_memory_ratio(), 1.0);
  EXPECT_EQ(r.discriminator_flop_ratio(), 1.0);
  EXPECT_EQ(r.discriminator_memory_ratio(), 1.0);
  for (std::size_t b = 0; b < r.discriminator.blocks.size(); ++b) {
    EXPECT_EQ(r.discriminator.blocks[b].flops() / r.naive_discriminator.blocks[b].flops(), 1.0);
    EXPECT_EQ(r.generator.blocks[b].activation_bytes() / r.naive_generator.blocks[b].activation_bytes(), 1.0);
  }
}

TEST(CostModel, DoublingResolutionQuadruplesConvolutionCost) {
  // Even sizes through every pooling stage keep the volume exactly proportional.
  ModelConfig m = testing::tiny_model(4, 2, 16, 4, 0, 3);
  const DiscriminatorConfig d = testing::tiny_discriminator(m, {8, 16, 32});
  ModelConfig big = m;
  big.height *= 2;
  big.width *= 2;
  auto conv_flops = [](const BlockCost& b) {
    double s = 0;
    for (const auto& l : b.layers)
      if (l.name.find("conv") != std::string::npos) s += l.flops;
    return s;
  };
  const BlockCost small = estimate(m, d, 2).discriminator.blocks.back();
  const BlockCost large = estimate(big, d, 2).discriminator.blocks.back();
  EXPECT_EQ(conv_flops(large), 4.0 * conv_flops(small));
  EXPECT_NEAR(large.flops() / small.flops(), 4.0, 0.05);
  EXPECT_NEAR(large.flops(), head_flops_oracle(big, d, 4, 2, 1), 1e-9 * large.flops());
}

TEST(CostModel, PublishedDiscriminatorRatios) {
  const RunConfig c = reference192();
  const CostReport r = estimate(c.model, c.discriminator, 2);
  EXPECT_GE(r.discriminator_flop_ratio(), 4.04 * 0.7);
  EXPECT_LE(r.discriminator_flop_ratio(), 4.04 * 1.3);
  EXPECT_GE(r.discriminator_memory_ratio(), std::max(3.0, 5.22 * 0.7));
  EXPECT_LE(r.discriminator_memory_ratio(), std::min(7.0, 5.22 * 1.3));
}

TEST(CostModel, DiscriminatorCostDecreasesWithRate) {
  RunConfig c = reference192();
  for (int frames : {64, 128}) {
    c.model.frames = frames;
    double prev = std::numeric_limits<double>::infinity();
    for (int rate = 1; rate <= 4; ++rate) {
      const double f = estimate(c.model, c.discriminator, rate).discriminator.flops();
      EXPECT_LT(f, prev) << "frames " << frames << " rate " << rate;
      prev = f;
    }
  }
}

TEST(CostModel, ConstantOrderPerBlockAtRateFour) {
  // Each head's time axis must outlast the discriminator's pooling stages.
  RunConfig c = reference192();
  c.model.frames = 1024;
  const CostReport r = estimate(c.model, c.discriminator, 4);
  double lo = std::numeric_limits<double>::infinity(), hi = 0;
  for (const auto& b : r.discriminator.blocks) {
    lo = std::min(lo, b.flops());
    hi = std::max(hi, b.flops());
  }
  EXPECT_LT(hi / lo, 1.10);
}

TEST(CostModel, TotalsAreSumsOfLayers) {
  const RunConfig c = reference192();
  const CostReport r = estimate(c.model, c.discriminator, 2, 4);
  for (const NetworkCost* net : {&r.generator, &r.discriminator, &r.naive_generator}) {
    double f = 0, m = 0;
    for (const auto& b : net->blocks) {
      double bf = 0, bm = 0;
      for (const auto& l : b.layers) {
        EXPECT_GE(l.flops, 0.0);
        EXPECT_GE(l.activation_bytes, 0.0);
        bf += l.flops;
        bm += l.activation_bytes;
      }
      EXPECT_EQ(bf, b.flops());
      EXPECT_EQ(bm, b.activation_bytes());
      f += bf;
      m += bm;
    }
    EXPECT_EQ(f, net->flops());
    EXPECT_EQ(m, net->activation_bytes());
  }
}

TEST(CostModel, BatchScalesActivationsLinearly) {
  const RunConfig c = reference192();
  const CostReport one = estimate(c.model, c.discriminator, 2, 1);
  const CostReport four = estimate(c.model, c.discriminator, 2, 4);
  EXPECT_DOUBLE_EQ(four.discriminator.activation_bytes(), 4 * one.discriminator.activation_bytes());
  EXPECT_DOUBLE_EQ(four.generator.activation_bytes(), 4 * one.generator.activation_bytes());
}

TEST(CostModel, BaselinePresetsHaveOneOrTwoHeads) {
  const RunConfig single = preset("single-3D"), mixed = preset("3D+2D");
  EXPECT_EQ(estimate(single).discriminator.blocks.size(), 1u);
  const CostReport r = estimate(mixed);
  ASSERT_EQ(r.discriminator.blocks.size(), 2u);
  EXPECT_LT(r.discriminator.blocks[1].flops(), r.discriminator.blocks[0].flops());
  EXPECT_EQ(r.generator.blocks.size(), 4u);
}

TEST(CostModel, InvalidInputs) {
  const RunConfig c = reference192();
  EXPECT_THROW(estimate(c.model, c.discriminator, 0), ConfigError);
  EXPECT_THROW(estimate(c.model, c.discriminator, 2, 0), ConfigError);
}

// ---------------------------------------------------------------------------
// Planner

TEST(Plan, UnboundedBudgetPrefersRateOne) {
  const RunConfig c = preset("desk-64px");
  const Plan p = plan(1e30, c.model, c.discriminator, 16);
  EXPECT_EQ(p.rate, 1);
  EXPECT_EQ(p.batch, 16);
  EXPECT_EQ(p.levels, c.model.levels);
}

TEST(Plan, InfeasibleBudgetThrows) {
  const RunConfig c = preset("desk-64px");
  EXPECT_THROW(plan(1000.0, c.model, c.discriminator, 16), InfeasibleBudget);
}

TEST(Plan, ResultFitsAndIsMaximal) {
  const RunConfig c = preset("desk-64px");
  const double single = step_activation_bytes(c.model, c.discriminator, 4, 1);
  for (double budget : {single * 1.5, single * 5.3, single * 40.0}) {
    const Plan p = plan(budget, c.model, c.discriminator, 64);
    EXPECT_LE(step_activation_bytes(c.model, c.discriminator, p.rate, p.batch), budget);
    for (int r = 1; r <= 4; ++r) {
      if (p.batch < 64) EXPECT_GT(step_activation_bytes(c.model, c.discriminator, r, p.batch + 1), budget);
      if (r < p.rate) EXPECT_GT(step_activation_bytes(c.model, c.discriminator, r, p.batch), budget);
    }
  }
}

TEST(Plan, HalvingBudgetNeverIncreasesBatch) {
  for (const char* name : {"desk-64px", "cpu-16px"}) {
    const RunConfig c = preset(name);
    const double single = step_activation_bytes(c.model, c.discriminator, 4, 1);
    for (double budget = single * 300; budget >= single; budget /= 2) {
      const Plan hi = plan(budget, c.model, c.discriminator, 128);
      if (budget / 2 < single) {
        EXPECT_THROW(plan(budget / 2, c.model, c.discriminator, 128), InfeasibleBudget);
        continue;
      }
      EXPECT_LE(plan(budget / 2, c.model, c.discriminator, 128).batch, hi.batch) << name << " " << budget;
    }
  }
}

// ---------------------------------------------------------------------------
// Reports

TEST(Report, TableLayout) {
  const RunConfig c = reference192();
  const std::string t = cost_table(c.model, c.discriminator, {2, 4});
  std::istringstream in(t);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 7u);
  EXPECT_EQ(lines[0].find("Method"), 0u);
  for (const char* col : {"GFlops", "Ratio", "Memory"}) EXPECT_NE(lines[0].find(col), std::string::npos);
  EXPECT_EQ(lines[1].find("Gen (naive impl.)"), 0u);
  EXPECT_EQ(lines[2].find("Subsampling (s_t=2)"), 0u);
  EXPECT_EQ(lines[4].find("Dis (naive impl.)"), 0u);
  EXPECT_NE(lines[5].find('x'), std::string::npos);
}

TEST(Report, CsvHasOneRowPerBlockAndTotals) {
  const RunConfig c = reference192();
  const std::string csv = cost_csv(estimate(c.model, c.discriminator, 2));
  std::istringstream in(csv);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "network,block,level,rate,batch,flops,activation_bytes,naive_flops,naive_activation_bytes");
  int rows = 0;
  for (std::string l; std::getline(in, l);) ++rows;
  EXPECT_EQ(rows, 4 + 1 + 4 + 1);
}

}  // namespace
}  // namespace vidgan
