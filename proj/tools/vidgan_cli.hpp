// SPDX-License-Identifier: Apache-2.0
//
// Command implementations for the vidgan tool. Exit codes: 0 success,
// 2 usage or configuration error, 3 runtime failure.

#pragma once

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vidgan/costmodel.hpp"
#include "vidgan/embedder.hpp"
#include "vidgan/image_io.hpp"
#include "vidgan/metrics.hpp"
#include "vidgan/training.hpp"

namespace vidgan::cli {

inline constexpr int kOk = 0;
inline constexpr int kUsage = 2;
inline constexpr int kRuntime = 3;
inline constexpr const char* kOutputRootEnv = "VIDGAN_OUTPUT_ROOT";

// Raised for bad arguments detected after parsing; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace fs = std::filesystem;

// Relative output paths are placed under $VIDGAN_OUTPUT_ROOT when it is set.
inline fs::path output_path(const fs::path& p) {
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0') return fs::path(root) / p;
  return p;
}

inline RunConfig load_config(const std::string& path, const std::string& preset_name) {
  if (!path.empty() && !preset_name.empty()) throw UsageError("give either a config file or --preset, not both");
  if (!preset_name.empty()) {
    RunConfig r = preset(preset_name);
    r.validate();
    return r;
  }
  if (path.empty()) throw UsageError("a config file or --preset is required");
  std::ifstream in(path);
  if (!in) throw UsageError("config file not found: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return run_config_from_json(j);
}

inline TrainState<float> load_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("checkpoint not found: " + path);
  return restore<float>(fs::path(path));
}

inline std::vector<int> labels_for(const ModelConfig& m, std::optional<int> label, Index n, Rng& rng) {
  if (label && !m.conditional()) throw UsageError("--label given for an unconditional model");
  if (label && (*label < 0 || *label >= m.label_count)) {
    throw UsageError("--label must be in [0, " + std::to_string(m.label_count) + ")");
  }
  std::vector<int> out;
  if (!m.conditional()) return out;
  for (Index i = 0; i < n; ++i) out.push_back(label ? *label : static_cast<int>(rng.uniform_int(0, m.label_count - 1)));
  return out;
}

// clip_XXX/frame_YYY.png for every clip and frame of `video`.
inline void write_clips(const Tensor<float>& video, const fs::path& dir, Index first = 0) {
  for (Index i = 0; i < video.dim(0); ++i) {
    std::ostringstream name;
    name << "clip_" << std::setw(3) << std::setfill('0') << first + i;
    const fs::path clip = dir / name.str();
    fs::create_directories(clip);
    for (Index t = 0; t < video.dim(2); ++t) {
      std::ostringstream f;
      f << "frame_" << std::setw(3) << std::setfill('0') << t << ".png";
      write_png(clip / f.str(), frame_image(video, i, t));
    }
  }
}

// ---------------------------------------------------------------------------
// Commands

struct TrainArgs {
  std::string config, preset_name, output;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> iterations;
  bool dry_run = false, resume = false;
  int log_every = 100;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = load_config(a.config, a.preset_name);
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.iterations) cfg.train.iterations = *a.iterations;
  if (!a.output.empty()) cfg.output_dir = a.output;
  cfg.output_dir = output_path(cfg.output_dir).string();
  cfg.validate();
  if (a.dry_run) {
    out << "config OK; output would go to " << cfg.output_dir << "\n\n";
    out << cost_table(cfg.model, cfg.discriminator, {cfg.model.rate}, cfg.train.batch_size);
    return kOk;
  }
  TrainOptions opts;
  opts.resume = a.resume;
  opts.on_step = [&](const LossReport& r) {
    if (a.log_every > 0 && r.iteration % a.log_every == 0) {
      out << "iter " << r.iteration << "  d " << r.d_loss << "  g " << r.g_loss << "  r1 " << r.r1 << '\n';
    }
  };
  try {
    const TrainState<float> st = run_training<float>(cfg, opts);
    out << "finished at iteration " << st.iteration << "; outputs in " << cfg.output_dir << '\n';
  } catch (const TrainingDiverged& e) {
    err << "training diverged: " << e.what() << "\nlast rows of the loss log are in "
        << (fs::path(cfg.output_dir) / kTrainLog).string() << '\n';
    return kRuntime;
  }
  return kOk;
}

struct GenerateArgs {
  std::string checkpoint, out = "generated", grid;
  int n = 1, stride = 1;
  std::uint64_t seed = 0;
  std::optional<int> label;
};

inline int cmd_generate(const GenerateArgs& a, std::ostream& out, std::ostream&) {
  if (a.n < 1) throw UsageError("--n must be >= 1");
  if (a.stride < 1) throw UsageError("--stride must be >= 1");
  const TrainState<float> st = load_checkpoint(a.checkpoint);
  const ModelConfig& m = st.gen.config();
  Rng rng(a.seed);
  const Tensor<float> z = sample_noise<float>(a.n, m.latent_dim, rng);
  const std::vector<int> labels = labels_for(m, a.label, a.n, rng);
  const Tensor<float> video = st.gen.infer(z, labels);
  const fs::path dir = output_path(a.out);
  write_clips(video, dir);
  out << "wrote " << a.n << " clip(s) to " << dir.string() << '\n';
  if (!a.grid.empty()) {
    const fs::path g = output_path(a.grid);
    if (g.has_parent_path()) fs::create_directories(g.parent_path());
    write_png(g, frame_grid(video, a.stride));
    out << "wrote grid " << g.string() << '\n';
  }
  return kOk;
}

struct InterpolateArgs {
  std::string checkpoint, out = "interpolation", grid;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> seed1, seed2;
  int steps = 8, stride = 1;
  std::optional<int> label;
};

inline int cmd_interpolate(const InterpolateArgs& a, std::ostream& out, std::ostream&) {
  if (a.steps < 2) throw UsageError("--steps must be >= 2");
  const TrainState<float> st = load_checkpoint(a.checkpoint);
  const ModelConfig& m = st.gen.config();
  Rng r1(a.seed1.value_or(a.seed)), r2(a.seed2.value_or(a.seed + 1));
  const Tensor<float> z1 = sample_noise<float>(1, m.latent_dim, r1);
  const Tensor<float> z2 = sample_noise<float>(1, m.latent_dim, r2);
  Rng lr(a.seed);
  const std::vector<int> labels = labels_for(m, a.label, 1, lr);
  const auto clips = st.gen.interpolate(z1, z2, a.steps, labels);
  Shape s = clips.front().shape();
  s[0] = a.steps;
  Tensor<float> all(s);
  const Index per = clips.front().size();
  for (int k = 0; k < a.steps; ++k)
    std::copy(clips[static_cast<std::size_t>(k)].data(), clips[static_cast<std::size_t>(k)].data() + per,
              all.data() + k * per);
  const fs::path dir = output_path(a.out);
  write_clips(all, dir);
  out << "wrote " << a.steps << " interpolation step(s) to " << dir.string() << '\n';
  if (!a.grid.empty()) {
    const fs::path g = output_path(a.grid);
    if (g.has_parent_path()) fs::create_directories(g.parent_path());
    write_png(g, frame_grid(all, a.stride));
  }
  return kOk;
}

struct EvalArgs {
  std::string run_dir, embedder, csv;
  std::uint64_t seed = 0;
  std::optional<std::int64_t> stride;
  std::optional<int> samples, repeats;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream&) {
  if (!fs::is_directory(a.run_dir)) throw UsageError("run directory not found: " + a.run_dir);
  const auto snaps = list_snapshots(a.run_dir);
  if (snaps.empty()) throw UsageError("no snapshots in " + a.run_dir + " (empty run)");
  EvalProtocol p = checkpoint_config(Archive::load(snaps.front().second)).eval;
  if (!a.embedder.empty()) p.embedder = a.embedder;
  if (a.stride) p.snapshot_stride = *a.stride;
  if (a.samples) p.samples = *a.samples;
  if (a.repeats) p.repeats = *a.repeats;
  p.validate();
  if (p.embedder.empty()) throw UsageError("--embedder is required (no embedder in the run config)");
  if (!fs::exists(p.embedder)) throw UsageError("embedder not found: " + p.embedder);
  const Embedder emb = Embedder::load(p.embedder);
  EvalTable t;
  try {
    t = evaluate_snapshots(a.run_dir, p, emb, a.seed);
  } catch (const MetricError& e) {
    throw UsageError(e.what());
  }
  out << std::left << std::setw(12) << "iteration" << std::right << std::setw(12) << "IS" << std::setw(10) << "+-"
      << std::setw(14) << "FID" << std::setw(12) << "+-" << '\n';
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    out << std::left << std::setw(12) << r.iteration << std::right << std::fixed << std::setprecision(3)
        << std::setw(12) << r.scores.is.mean << std::setw(10) << r.scores.is.std << std::setw(14) << r.scores.fid.mean
        << std::setw(12) << r.scores.fid.std << (i == t.best ? "  <- best IS" : "") << '\n';
  }
  out.unsetf(std::ios::fixed);
  const fs::path csv = output_path(a.csv.empty() ? (fs::path(a.run_dir) / "eval.csv") : fs::path(a.csv));
  write_eval_csv(t, csv);
  out << "wrote " << csv.string() << '\n';
  return kOk;
}

struct EstimateArgs {
  std::string config, preset_name, csv;
  std::vector<int> rates;
  Index batch = 1;
  std::optional<double> budget_mb;
};

inline int cmd_estimate(const EstimateArgs& a, std::ostream& out, std::ostream&) {
  const RunConfig cfg = load_config(a.config, a.preset_name);
  if (a.batch < 1) throw UsageError("--batch must be >= 1");
  std::vector<int> rates = a.rates.empty() ? std::vector<int>{2, 4} : a.rates;
  for (int r : rates)
    if (r < 1) throw UsageError("--rates entries must be >= 1");
  out << cost_table(cfg.model, cfg.discriminator, rates, a.batch);
  if (!a.csv.empty()) {
    const fs::path p = output_path(a.csv);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(p);
    bool header = true;
    for (int r : rates) {
      std::string body = cost_csv(estimate(cfg.model, cfg.discriminator, r, a.batch));
      if (!header) body = body.substr(body.find('\n') + 1);
      f << body;
      header = false;
    }
    out << "wrote " << p.string() << '\n';
  }
  if (a.budget_mb) {
    const Plan p = plan(*a.budget_mb * 1e6, cfg.model, cfg.discriminator, cfg.train.batch_size);
    out << "\nplan for " << *a.budget_mb << " MB: s_t=" << p.rate << " L=" << p.levels << " batch=" << p.batch
        << " (" << std::fixed << std::setprecision(1) << p.activation_bytes / 1e6 << " MB)\n";
    out.unsetf(std::ios::fixed);
  }
  return kOk;
}

struct ConsistencyArgs {
  std::string checkpoint, csv = "consistency.csv";
  int n = 1000, batch = 16;
  std::uint64_t seed = 0;
};

inline int cmd_consistency(const ConsistencyArgs& a, std::ostream& out, std::ostream&) {
  if (a.n < 1 || a.batch < 1) throw UsageError("--n and --batch must be >= 1");
  const TrainState<float> st = load_checkpoint(a.checkpoint);
  Rng rng(a.seed);
  ConsistencyCurve c;
  try {
    c = level_consistency(st.gen, a.n, rng, a.batch);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  out << "frame  PSNR(dB)          SSIM\n";
  for (std::size_t t = 0; t < c.psnr_mean.size(); ++t) {
    out << std::setw(5) << t << "  " << std::fixed << std::setprecision(2) << std::setw(7) << c.psnr_mean[t]
        << " +- " << std::setw(5) << c.psnr_ci[t] << "  " << std::setprecision(4) << c.ssim_mean[t] << " +- "
        << c.ssim_ci[t] << '\n';
  }
  out.unsetf(std::ios::fixed);
  const fs::path p = output_path(a.csv);
  write_consistency_csv(c, p);
  out << "wrote " << p.string() << '\n';
  return kOk;
}

struct EmbedderArgs {
  std::string config, preset_name, out = "embedder.vgck";
  std::uint64_t seed = 0;
  int steps = 600, batch = 16;
};

inline int cmd_embedder(const EmbedderArgs& a, std::ostream& out, std::ostream&) {
  const RunConfig cfg = load_config(a.config, a.preset_name);
  if (cfg.dataset.kind != "toy") throw UsageError("embedder training needs a toy dataset config");
  if (a.steps < 1 || a.batch < 1) throw UsageError("--steps and --batch must be >= 1");
  ToyDatasetConfig toy = cfg.dataset.toy;
  toy.frames = cfg.model.frames;
  EmbedderTraining opts;
  opts.steps = a.steps;
  opts.batch_size = a.batch;
  opts.seed = a.seed;
  const Embedder e = train_toy_embedder(toy, opts, [&](int s, double loss) {
    if ((s + 1) % 100 == 0) out << "step " << s + 1 << "  loss " << loss << '\n';
  });
  Rng held_out(a.seed ^ 0xACCULL);
  out << "held-out accuracy " << e.accuracy(toy_batch(toy, 256, held_out)) << '\n';
  const fs::path p = output_path(a.out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  e.save(p);
  out << "wrote " << p.string() << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------
// Entry point

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Multi-level video GAN: sparse training, dense generation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("config", train.config, "Run config (JSON)");
  t->add_option("--preset", train.preset_name, "Use a named preset instead of a config file");
  t->add_option("--seed", train.seed, "Training seed (overrides the config)");
  t->add_option("--iterations", train.iterations, "Iteration count (overrides the config)");
  t->add_option("--output", train.output, "Run directory (overrides the config)");
  t->add_option("--log-every", train.log_every, "Print losses every N iterations (0 = never)");
  t->add_flag("--dry-run", train.dry_run, "Validate and print the cost estimate only");
  t->add_flag("--resume", train.resume, "Continue from the newest snapshot in the run directory");

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Generate clips from a checkpoint");
  g->add_option("checkpoint", gen.checkpoint, "Checkpoint file")->required();
  g->add_option("--n", gen.n, "Number of clips");
  g->add_option("--seed", gen.seed, "Noise seed");
  g->add_option("--label", gen.label, "Class label (conditional models)");
  g->add_option("--out", gen.out, "Output directory for frame PNGs");
  g->add_option("--grid", gen.grid, "Also write a frame grid PNG");
  g->add_option("--stride", gen.stride, "Frame stride of the grid");

  InterpolateArgs interp;
  auto* ip = app.add_subcommand("interpolate", "Interpolate between two noise vectors");
  ip->add_option("checkpoint", interp.checkpoint, "Checkpoint file")->required();
  ip->add_option("--seed", interp.seed, "Default seed (seed1 = seed, seed2 = seed + 1)");
  ip->add_option("--seed1", interp.seed1, "Seed of the first endpoint");
  ip->add_option("--seed2", interp.seed2, "Seed of the second endpoint");
  ip->add_option("--steps", interp.steps, "Number of interpolation steps");
  ip->add_option("--label", interp.label, "Class label (conditional models)");
  ip->add_option("--out", interp.out, "Output directory");
  ip->add_option("--grid", interp.grid, "Also write a frame grid PNG");
  ip->add_option("--stride", interp.stride, "Frame stride of the grid");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score every snapshot of a run (IS, FID)");
  e->add_option("run_dir", ev.run_dir, "Run directory")->required();
  e->add_option("--embedder", ev.embedder, "Embedder file (see the embedder command)");
  e->add_option("--seed", ev.seed, "Sampling seed");
  e->add_option("--stride", ev.stride, "Snapshot stride in iterations");
  e->add_option("--samples", ev.samples, "Clips per repeat");
  e->add_option("--repeats", ev.repeats, "Repeats per snapshot");
  e->add_option("--csv", ev.csv, "Output CSV (default: <run_dir>/eval.csv)");

  EstimateArgs est;
  std::uint64_t unused_seed = 0;
  auto* es = app.add_subcommand("estimate", "Print the FLOP and memory estimate");
  es->add_option("config", est.config, "Run config (JSON)");
  es->add_option("--preset", est.preset_name, "Use a named preset");
  es->add_option("--rates", est.rates, "Subsampling rates to compare")->delimiter(',');
  es->add_option("--batch", est.batch, "Batch size");
  es->add_option("--csv", est.csv, "Also write per-block CSV");
  es->add_option("--budget-mb", est.budget_mb, "Recommend (s_t, batch) for this activation budget");
  es->add_option("--seed", unused_seed, "Accepted for uniformity; the estimate is deterministic");

  ConsistencyArgs cons;
  auto* c = app.add_subcommand("consistency", "PSNR/SSIM between the first and last level per frame");
  c->add_option("checkpoint", cons.checkpoint, "Checkpoint file")->required();
  c->add_option("--n", cons.n, "Number of samples");
  c->add_option("--batch", cons.batch, "Generation batch size");
  c->add_option("--seed", cons.seed, "Noise seed");
  c->add_option("--csv", cons.csv, "Output CSV");

  EmbedderArgs emb;
  auto* em = app.add_subcommand("embedder", "Train the toy-data feature embedder");
  em->add_option("config", emb.config, "Run config (JSON) whose toy dataset is used");
  em->add_option("--preset", emb.preset_name, "Use a named preset");
  em->add_option("--steps", emb.steps, "Training steps");
  em->add_option("--batch", emb.batch, "Batch size");
  em->add_option("--seed", emb.seed, "Seed");
  em->add_option("--out", emb.out, "Output file");

  auto* pr = app.add_subcommand("preset", "Print a preset as a JSON config");
  std::string preset_name;
  pr->add_option("name", preset_name, "Preset name")->required();
  std::uint64_t preset_seed = 0;
  pr->add_option("--seed", preset_seed, "Written into train.seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& pe) {
    err << "error: " << pe.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kUsage;
  }

  try {
    if (t->parsed()) return cmd_train(train, out, err);
    if (g->parsed()) return cmd_generate(gen, out, err);
    if (ip->parsed()) return cmd_interpolate(interp, out, err);
    if (e->parsed()) return cmd_eval(ev, out, err);
    if (es->parsed()) return cmd_estimate(est, out, err);
    if (c->parsed()) return cmd_consistency(cons, out, err);
    if (em->parsed()) return cmd_embedder(emb, out, err);
    if (pr->parsed()) {
      RunConfig r = preset(preset_name);
      r.train.seed = preset_seed;
      out << to_json(r).dump(2) << '\n';
      return kOk;
    }
  } catch (const UsageError& x) {
    err << "error: " << x.what() << '\n';
    return kUsage;
  } catch (const ConfigError& x) {
    err << "config error: " << x.what() << '\n';
    return kUsage;
  } catch (const CheckpointError& x) {
    err << "checkpoint error: " << x.what() << '\n';
    return kUsage;
  } catch (const InfeasibleBudget& x) {
    err << "error: " << x.what() << '\n';
    return kUsage;
  } catch (const std::exception& x) {
    err << "runtime error: " << x.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

}  // namespace vidgan::cli
