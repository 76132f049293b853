// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion 1-10 on stdout, progress
// on stderr. Exit status is non-zero when any criterion fails.
//
//   acceptance [output_dir]
//
// Criteria 7, 8 and 10 train the 16-pixel preset on the CPU; the
// VIDGAN_SKIP_TRAINING environment variable reports them as SKIP instead.

#include <boost/math/distributions/chi_squared.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "r1_oracle.hpp"
#include "vidgan/costmodel.hpp"
#include "vidgan/image_io.hpp"
#include "vidgan/metrics.hpp"
#include "vidgan/training.hpp"

namespace fs = std::filesystem;
using namespace vidgan;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// 1. Frame schedules

Verdict frame_schedules() {
  const auto t0 = Clock::now();
  std::ostringstream d;
  bool ok = true;
  for (const auto& [rate, expect] : std::vector<std::pair<int, std::vector<Index>>>{{2, {16, 8, 4, 2}}, {4, {16, 4, 1, 1}}}) {
    const ModelConfig m = testing::tiny_model(4, rate, 16, 1, 0, 1);
    Rng rng(static_cast<std::uint64_t>(rate));
    const Generator<float> gen(m, rng);
    const auto out = gen.train_forward(sample_noise<float>(2, m.latent_dim, rng), rng);
    std::vector<Index> got;
    for (const auto& v : out) got.push_back(v.dim(2));
    ok = ok && got == expect;
    d << "s_t=" << rate << " [";
    for (std::size_t i = 0; i < got.size(); ++i) d << (i ? "," : "") << got[i];
    d << "] ";
  }
  const double s = seconds_since(t0);
  d << "in " << s << " s";
  return {ok && s < 1.0, d.str()};
}

// ---------------------------------------------------------------------------
// 2. Path equivalence

Verdict path_equivalence() {
  const auto t0 = Clock::now();
  const ModelConfig m = testing::tiny_model(4, 1, 8, 1, 0, 1);
  Rng rng(20);
  const Generator<float> gen(m, rng);
  int equal = 0;
  for (int i = 0; i < 10; ++i) {
    const auto z = sample_noise<float>(1, m.latent_dim, rng);
    const auto train = gen.train_forward(z, rng, {}, NormMode::running).back();
    equal += train == gen.infer(z);
  }
  const double s = seconds_since(t0);
  return {equal == 10 && s < 10.0, std::to_string(equal) + "/10 bitwise equal in " + std::to_string(s) + " s"};
}

// ---------------------------------------------------------------------------
// 3. Subsampling

Verdict subsampling() {
  long cases = 0, mismatches = 0;
  for (int len = 1; len <= 32; ++len)
    for (int rate = 1; rate <= 4; ++rate) {
      const int out_len = (len + rate - 1) / rate;
      for (int offset = 0; offset + rate * (out_len - 1) < len; ++offset) {
        Tensor<float> x({2, 2, len, 2, 3});
        for (Index k = 0; k < x.size(); ++k) x[k] = static_cast<float>(k);
        const auto y = subsample_frames(x, make_spec_at(len, rate, offset));
        ++cases;
        bool same = y.dim(2) == out_len;
        for (Index n = 0; same && n < 2; ++n)
          for (Index c = 0; c < 2; ++c)
            for (int k = 0; k < out_len; ++k)
              for (Index h = 0; h < 2; ++h)
                for (Index w = 0; w < 3; ++w) same = same && y.at(n, c, k, h, w) == x.at(n, c, offset + k * rate, h, w);
        mismatches += !same;
      }
    }
  // Offsets of T = 16, s_t = 3: 6 frames, offsets {0, 1}; T = 15, s_t = 4: 4 frames, offsets {0, 1, 2}.
  double worst_p = 1.0;
  for (const auto& [len, rate] : std::vector<std::pair<int, int>>{{16, 3}, {15, 4}, {13, 2}}) {
    Rng rng(static_cast<std::uint64_t>(len * 10 + rate));
    std::map<int, int> counts;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) ++counts[make_spec(len, rate, rng).offset];
    const int k = make_spec_at(len, rate, 0).offset_count();
    double chi2 = 0;
    for (int o = 0; o < k; ++o) {
      const double e = static_cast<double>(draws) / k;
      chi2 += (counts[o] - e) * (counts[o] - e) / e;
    }
    if (k > 1) worst_p = std::min(worst_p, boost::math::cdf(boost::math::complement(boost::math::chi_squared(k - 1), chi2)));
  }
  return {mismatches == 0 && worst_p > 0.01, std::to_string(cases) + " cases, " + std::to_string(mismatches) +
                                                 " mismatches; smallest chi-square p = " + std::to_string(worst_p)};
}

// ---------------------------------------------------------------------------
// 4. R1 penalty

Verdict r1_penalty_oracle() {
  const auto t0 = Clock::now();
  Rng rng(3);
  const ModelConfig m = testing::tiny_model(2, 2, 4, 1, 0, 1);
  double worst = 0;
  Index params = 0;
  for (int trial = 0; trial < 20; ++trial) {
    Discriminator<double> dis(m, testing::tiny_discriminator(m, {2, 2}), rng);
    params = dis.params().element_count();
    std::vector<Tensor<double>> inputs;
    for (std::size_t h = 0; h < dis.heads().size(); ++h)
      inputs.push_back(testing::uniform_tensor<double>(dis.input_shape(h, 2), rng));
    const double a = r1_penalty(dis, inputs, {}, 0.5);
    const double o = testing::fd_penalty(dis, inputs, {}, 0.5);
    worst = std::max(worst, std::abs(a - o) / std::abs(o));
  }
  const double s = seconds_since(t0);
  std::ostringstream d;
  d << "max relative error " << worst << " over 20 inputs, " << params << " parameters, " << s << " s";
  return {worst < 1e-4 && params <= 1000 && s < 30.0, d.str()};
}

// ---------------------------------------------------------------------------
// 5. Closed forms

Verdict closed_forms() {
  std::vector<std::pair<std::string, double>> errors;
  errors.push_back({"sigma(0)", std::abs(aggregate<double>({{0.0}})[0] - 0.5)});
  errors.push_back({"d_loss(0,0)", std::abs(d_loss<double>({0.0}, {0.0}) - 2 * std::log(2.0))});
  errors.push_back({"g_loss(0)", std::abs(g_loss<double>({0.0}) - std::log(2.0))});
  Eigen::MatrixXd same(3, 3), onehot = Eigen::MatrixXd::Identity(3, 3);
  for (int i = 0; i < 3; ++i) same.row(i) << 0.2, 0.3, 0.5;
  errors.push_back({"IS lower bound", std::abs(inception_score(same).mean - 1.0)});
  errors.push_back({"IS upper bound", std::abs(inception_score(onehot).mean - 3.0)});
  Eigen::MatrixXd f(20, 3);
  Rng rng(5);
  for (Index i = 0; i < f.size(); ++i) f.data()[i] = rng.uniform(-1.0, 1.0);
  const auto st = feature_stats(f);
  errors.push_back({"FID(a,a)", std::abs(fid(st, st))});
  double worst = 0;
  std::string which;
  for (const auto& [name, e] : errors)
    if (e >= worst) {
      worst = e;
      which = name;
    }
  std::ostringstream d;
  d << "largest error " << worst << " (" << which << ")";
  return {worst < 1e-6, d.str()};
}

// ---------------------------------------------------------------------------
// 6. Cost model

Verdict cost_ratios() {
  const auto t0 = Clock::now();
  RunConfig c = preset("paper-192px");
  const CostReport r = estimate(c.model, c.discriminator, 2);
  const double fr = r.discriminator_flop_ratio(), mr = r.discriminator_memory_ratio();
  c.model.frames = 1024;
  const CostReport r4 = estimate(c.model, c.discriminator, 4);
  double lo = std::numeric_limits<double>::infinity(), hi = 0;
  for (const auto& b : r4.discriminator.blocks) {
    lo = std::min(lo, b.flops());
    hi = std::max(hi, b.flops());
  }
  const double s = seconds_since(t0);
  const bool ok = std::abs(fr / 4.04 - 1) <= 0.3 && std::abs(mr / 5.22 - 1) <= 0.3 && mr >= 3 && mr <= 7 &&
                  hi / lo < 1.10 && s < 1.0;
  std::ostringstream d;
  d << "D flop ratio " << fr << "x (4.04x), memory ratio " << mr << "x (5.22x), per-block spread at s_t=4, T=1024: "
    << (hi / lo - 1) * 100 << "%, " << s << " s";
  return {ok, d.str()};
}

// ---------------------------------------------------------------------------
// 7 and 8. Desk-scale training

struct DeskRun {
  double fid = 0;
  bool finite = true;
  TrainState<float> state;
};

struct DeskContext {
  RunConfig base;
  std::optional<Embedder> embedder;
  std::vector<EmbedderStats> real;
  EvalProtocol protocol;
};

DeskContext desk_context(const fs::path& out) {
  DeskContext ctx;
  ctx.base = preset("cpu-16px");
  ctx.protocol = ctx.base.eval;
  ctx.protocol.samples = 512;
  ctx.protocol.repeats = 2;
  ToyDatasetConfig toy = ctx.base.dataset.toy;
  toy.frames = ctx.base.model.frames;
  EmbedderTraining eo;
  eo.seed = 1;
  ctx.embedder.emplace(train_toy_embedder(toy, eo));
  ctx.embedder->save(out / "embedder.vgck");
  auto source = make_source(ctx.base, 0xE7A1);
  ctx.real = real_stats(*ctx.embedder, *source, ctx.protocol);
  return ctx;
}

DeskRun desk_run(const DeskContext& ctx, int rate, std::uint64_t seed, const fs::path& dir) {
  RunConfig c = ctx.base;
  c.model.rate = rate;
  c.train.seed = seed;
  c.train.snapshot_interval = c.train.iterations;
  c.output_dir = dir.string();
  fs::remove_all(dir);
  bool finite = true;
  TrainOptions opts;
  opts.on_step = [&](const LossReport& r) {
    finite = finite && std::isfinite(r.d_loss) && std::isfinite(r.g_loss) && std::isfinite(r.r1);
    if (r.iteration % 250 == 0)
      std::cerr << "  rate " << rate << " seed " << seed << " iter " << r.iteration << " d " << r.d_loss << " g "
                << r.g_loss << '\n';
  };
  TrainState<float> st = run_training<float>(c, opts);
  const double f = score_generator(st.gen, *ctx.embedder, ctx.real, ctx.protocol, 99).fid.mean;
  return {f, finite, std::move(st)};
}

// Mean displacement (pixels) of the intensity centroid between the first and last frame.
double centroid_travel(const Tensor<float>& v) {
  const Index n = v.dim(0), t = v.dim(2), h = v.dim(3), w = v.dim(4);
  auto centroid = [&](Index i, Index f) {
    double m = 0, cx = 0, cy = 0;
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const double p = (v.at(i, 0, f, y, x) + 1.0) / 2.0;
        m += p;
        cx += p * x;
        cy += p * y;
      }
    return std::pair{cx / std::max(m, 1e-12), cy / std::max(m, 1e-12)};
  };
  double total = 0;
  for (Index i = 0; i < n; ++i) {
    const auto [x0, y0] = centroid(i, 0);
    const auto [x1, y1] = centroid(i, t - 1);
    total += std::hypot(x1 - x0, y1 - y0);
  }
  return total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// 9. Consistency probe

Verdict consistency_probe() {
  const ModelConfig m = testing::tiny_model(4, 2, 8, 1, 0, 1);
  Rng rng(9);
  Generator<float> gen(m, rng);
  for (auto& p : gen.params()) {
    if (p.name.rfind("render", 0) != 0) continue;
    if (p.name.ends_with("conv.w")) p.value.fill(0.0f);
    if (p.name.ends_with("conv.b")) p.value.fill(-0.4f);
  }
  Rng probe(10);
  const ConsistencyCurve c = level_consistency(gen, 20, probe, 8);
  int exact = 0;
  for (double s : c.ssim_mean) exact += s == 1.0;
  return {exact == m.frames, std::to_string(exact) + "/" + std::to_string(m.frames) + " frame indices with SSIM == 1.0"};
}

// ---------------------------------------------------------------------------
// 10. Reproducibility

Verdict reproducibility(const fs::path& out) {
  RunConfig c = preset("cpu-16px");
  c.train.iterations = 40;
  c.train.snapshot_interval = 20;
  c.train.seed = 31;
  c.dataset.workers = 0;
  std::vector<std::string> logs;
  for (const char* name : {"repro_a", "repro_b"}) {
    c.output_dir = (out / name).string();
    fs::remove_all(c.output_dir);
    run_training<float>(c);
    logs.push_back(slurp(out / name / kTrainLog));
  }
  const bool same = logs[0] == logs[1] && !logs[0].empty();
  return {same, same ? "loss CSVs identical (" + std::to_string(logs[0].size()) + " bytes)" : "loss CSVs differ"};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path out = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "vidgan_acceptance";
  fs::create_directories(out);
  const bool skip_training = std::getenv("VIDGAN_SKIP_TRAINING") != nullptr;
  int failures = 0;
  auto report = [&](int id, const std::string& title, const std::function<Verdict()>& fn) {
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << title << "): " << v.detail << std::endl;
  };
  auto skip = [&](int id, const std::string& title) {
    std::cout << "SKIP criterion " << id << " (" << title << "): VIDGAN_SKIP_TRAINING is set" << std::endl;
  };

  report(1, "frame schedules", frame_schedules);
  report(2, "path equivalence", path_equivalence);
  report(3, "subsampling", subsampling);
  report(4, "R1 penalty", r1_penalty_oracle);
  report(5, "closed forms", closed_forms);
  report(6, "cost model", cost_ratios);

  if (skip_training) {
    skip(7, "desk-scale training");
    skip(8, "sparse vs naive");
  } else {
    std::optional<DeskContext> ctx;
    std::vector<double> sparse_fid, naive_fid;
    report(7, "desk-scale training", [&]() -> Verdict {
      const auto t0 = Clock::now();
      std::cerr << "training the embedder\n";
      ctx.emplace(desk_context(out));
      RunConfig untrained_cfg = ctx->base;
      untrained_cfg.train.seed = 1;
      const TrainState<float> untrained = TrainState<float>::create(untrained_cfg);
      const double fid0 = score_generator(untrained.gen, *ctx->embedder, ctx->real, ctx->protocol, 99).fid.mean;
      DeskRun run = desk_run(*ctx, 2, 1, out / "desk_rate2_seed1");
      sparse_fid.push_back(run.fid);
      Rng rng(7);
      const Tensor<float> video = run.state.gen.infer(sample_noise<float>(8, ctx->base.model.latent_dim, rng));
      write_png(out / "desk_grid.png", frame_grid(video, 1));
      const double travel = centroid_travel(video);
      Rng real_rng(8);
      ToyDatasetConfig toy = ctx->base.dataset.toy;
      toy.frames = ctx->base.model.frames;
      const double real_travel = centroid_travel(toy_batch(toy, 64, real_rng).video);
      const double reduction = 1.0 - run.fid / fid0;
      const double s = seconds_since(t0);
      std::ostringstream d;
      d << "losses finite: " << (run.finite ? "yes" : "no") << "; FID untrained " << fid0 << " -> trained " << run.fid
        << " (" << reduction * 100 << "% lower); centroid travel " << travel << " px (real " << real_travel
        << " px), grid " << (out / "desk_grid.png").string() << "; " << s << " s";
      return {run.finite && reduction >= 0.30 && travel >= 1.0 && s <= 7200, d.str()};
    });
    report(8, "sparse vs naive", [&]() -> Verdict {
      if (!ctx) return {false, "criterion 7 setup failed"};
      int wins = 0;
      std::ostringstream d;
      for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        if (sparse_fid.size() < seed) sparse_fid.push_back(desk_run(*ctx, 2, seed, out / "desk_sparse").fid);
        naive_fid.push_back(desk_run(*ctx, 1, seed, out / "desk_naive").fid);
        wins += sparse_fid.back() < naive_fid.back();
        d << "seed " << seed << ": " << sparse_fid.back() << " vs " << naive_fid.back() << "; ";
      }
      d << "s_t=2 lower in " << wins << "/5";
      return {wins >= 4, d.str()};
    });
  }

  report(9, "consistency probe", consistency_probe);
  if (skip_training) {
    skip(10, "reproducibility");
  } else {
    report(10, "reproducibility", [&] { return reproducibility(out); });
  }
  return failures == 0 ? 0 : 1;
}
