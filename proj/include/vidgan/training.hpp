// SPDX-License-Identifier: Apache-2.0
//
// Adversarial objective over all levels, the zero-centered gradient penalty
// on real data, the optimizer schedule, snapshots and the training loop.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vidgan/checkpoint.hpp"
#include "vidgan/config.hpp"
#include "vidgan/data.hpp"
#include "vidgan/discriminator.hpp"
#include "vidgan/dual.hpp"
#include "vidgan/generator.hpp"
#include "vidgan/ops.hpp"
#include "vidgan/params.hpp"
#include "vidgan/subsampling.hpp"

namespace vidgan {

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Losses on summed logits

// mean_i softplus(-real_i) + softplus(fake_i)
template <class T>
T d_loss(const std::vector<T>& real_sum, const std::vector<T>& fake_sum) {
  if (real_sum.empty() || real_sum.size() != fake_sum.size()) {
    throw std::invalid_argument("d_loss: real and fake batches must be non-empty and equal in size");
  }
  T acc(0);
  for (std::size_t i = 0; i < real_sum.size(); ++i) {
    acc += ops::detail::stable_softplus(-real_sum[i]) + ops::detail::stable_softplus(fake_sum[i]);
  }
  return acc / static_cast<T>(real_sum.size());
}

// mean_i softplus(-fake_i), the non-saturating generator loss.
template <class T>
T g_loss(const std::vector<T>& fake_sum) {
  if (fake_sum.empty()) throw std::invalid_argument("g_loss: empty batch");
  T acc(0);
  for (T f : fake_sum) acc += ops::detail::stable_softplus(-f);
  return acc / static_cast<T>(fake_sum.size());
}

// ---------------------------------------------------------------------------
// Gradient penalty

template <class T>
struct PenaltyTerms {
  T value = 0;                         // lambda * sum of squared input-gradient norms
  std::vector<Tensor<T>> input_grads;  // d(sum_i D_h(x_i)) / dx per head
};

// Input gradients of every head on its real input, parameters held fixed.
template <class T>
PenaltyTerms<T> r1_terms(const Discriminator<T>& dis, const std::vector<Tensor<T>>& head_inputs,
                         const std::vector<int>& labels, double lambda) {
  if (head_inputs.size() != dis.heads().size()) {
    throw std::invalid_argument("r1_penalty: one input per sub-discriminator required");
  }
  PenaltyTerms<T> out;
  double total = 0;
  for (std::size_t h = 0; h < head_inputs.size(); ++h) {
    Graph<T> g;
    Binder<T, T> bind(g, dis.params(), false);
    Var x = g.leaf(head_inputs[h], true);
    Var s = dis.score(g, bind, h, x, labels);
    g.backward({{s, Tensor<T>(g.shape(s), T(1))}});
    if (!g.requires_grad(x)) throw std::logic_error("r1_penalty: input is not on a differentiable path");
    Tensor<T> gx = g.grad(x);
    for (Index i = 0; i < gx.size(); ++i) total += static_cast<double>(gx[i]) * gx[i];
    out.input_grads.push_back(std::move(gx));
  }
  out.value = static_cast<T>(lambda * total);
  return out;
}

template <class T>
T r1_penalty(const Discriminator<T>& dis, const std::vector<Tensor<T>>& head_inputs,
             const std::vector<int>& labels, double lambda) {
  return r1_terms(dis, head_inputs, labels, lambda).value;
}

// Adds the parameter gradient of the penalty to `grads` (one tensor per
// parameter). d/dtheta ||g||^2 = 2 (d g / d theta)^T g is a Hessian-vector
// product, obtained exactly by back-propagating through D on dual inputs
// x + eps * g: the tangent of the parameter gradient is that product.
template <class T>
void r1_param_grads(const Discriminator<T>& dis, const std::vector<Tensor<T>>& head_inputs,
                    const PenaltyTerms<T>& terms, const std::vector<int>& labels, double lambda,
                    std::vector<Tensor<T>>& grads) {
  using D = Dual<T>;
  for (std::size_t h = 0; h < head_inputs.size(); ++h) {
    const Tensor<T>& x = head_inputs[h];
    const Tensor<T>& gx = terms.input_grads[h];
    Tensor<D> xd(x.shape());
    for (Index i = 0; i < x.size(); ++i) xd[i] = D(x[i], gx[i]);
    Graph<D> g;
    Binder<T, D> bind(g, dis.params(), true);
    Var s = dis.score(g, bind, h, g.leaf(std::move(xd), false), labels);
    g.backward({{s, Tensor<D>(g.shape(s), D(1))}});
    bind.for_each_grad([&](std::size_t i, const Tensor<D>& pg) {
      Tensor<T>& dst = grads[i];
      for (Index k = 0; k < pg.size(); ++k) dst[k] += static_cast<T>(2.0 * lambda) * pg[k].d;
    });
  }
}

// ---------------------------------------------------------------------------
// Training state

template <class T = float>
struct TrainState {
  RunConfig config;
  Generator<T> gen;
  Discriminator<T> dis;
  Adam<T> gen_opt;
  Adam<T> dis_opt;
  std::int64_t iteration = 0;
  Rng rng;  // z, labels, subsampling offsets

  static TrainState create(const RunConfig& cfg) {
    cfg.validate();
    Rng init(cfg.train.seed);
    Generator<T> g(cfg.model, init);
    Discriminator<T> d(cfg.model, cfg.discriminator, init);
    const AdamConfig adam{cfg.train.lr, cfg.train.beta1, cfg.train.beta2, 1e-8};
    return TrainState{cfg, std::move(g), std::move(d), Adam<T>(adam), Adam<T>(adam), 0,
                      Rng(cfg.train.seed ^ 0x5DEECE66DULL)};
  }

  double learning_rate() const { return lr_at(config.train, iteration); }

  static double lr_at(const TrainConfig& t, std::int64_t it) {
    if (t.iterations <= 0) return t.lr;
    const double frac = 1.0 - static_cast<double>(it) / static_cast<double>(t.iterations);
    return t.lr * std::max(0.0, frac);
  }
};

struct LossReport {
  std::int64_t iteration = 0;  // iteration index after the step
  double d_loss = 0;
  double g_loss = 0;
  double r1 = 0;
  double lr = 0;
  std::vector<double> real_logit_means;  // per sub-discriminator
  std::vector<double> fake_logit_means;

  friend bool operator==(const LossReport&, const LossReport&) = default;
};

namespace detail {

template <class T>
std::string logit_summary(const std::vector<double>& real, const std::vector<double>& fake) {
  std::ostringstream out;
  out << std::setprecision(6);
  for (std::size_t h = 0; h < real.size(); ++h) {
    out << (h ? "; " : "") << "head " << h << ": real " << real[h] << ", fake " << fake[h];
  }
  return out.str();
}

// Inputs of each head from one level list: the level tensor itself, or one frame of it.
template <class T>
std::vector<Tensor<T>> head_inputs(const Discriminator<T>& dis, const std::vector<Tensor<T>>& levels,
                                   int frame) {
  std::vector<Tensor<T>> out;
  for (const HeadSpec& h : dis.heads()) {
    const Tensor<T>& v = levels.at(static_cast<std::size_t>(h.level - 1));
    out.push_back(h.single_frame ? subsample_frames(v, make_spec_at(static_cast<int>(v.dim(2)), static_cast<int>(v.dim(2)), frame))
                                 : v);
  }
  return out;
}

template <class T>
std::vector<int> sample_labels(const ModelConfig& m, Index n, Rng& rng) {
  std::vector<int> out;
  if (!m.conditional()) return out;
  for (Index i = 0; i < n; ++i) out.push_back(static_cast<int>(rng.uniform_int(0, m.label_count - 1)));
  return out;
}

}  // namespace detail

// One discriminator update on d_loss + penalty followed by one generator
// update on g_loss. `real` supplies d_steps_per_iter batches.
template <class T>
LossReport train_step(TrainState<T>& st, const std::vector<Batch>& real) {
  const RunConfig& cfg = st.config;
  const ModelConfig& m = cfg.model;
  if (static_cast<int>(real.size()) != cfg.train.d_steps_per_iter) {
    throw std::invalid_argument("train_step: expected " + std::to_string(cfg.train.d_steps_per_iter) +
                                " real batches");
  }
  const double lr = st.learning_rate();
  const double lambda = cfg.train.lambda;
  const std::size_t heads = st.dis.heads().size();
  LossReport rep;
  rep.lr = lr;

  std::optional<Graph<T>> gen_graph;
  std::optional<Binder<T, T>> gen_bind;
  typename Generator<T>::Pass pass;
  std::vector<Tensor<T>> fake_levels;
  std::vector<int> fake_labels;
  std::vector<Var> fake_head_vars;  // head inputs inside the generator graph

  for (int step = 0; step < cfg.train.d_steps_per_iter; ++step) {
    const Batch& batch = real[static_cast<std::size_t>(step)];
    const Index n = batch.video.dim(0);
    if (n != cfg.train.batch_size) throw ShapeError("train_step: batch size does not match the config");
    if (m.conditional() && static_cast<Index>(batch.labels.size()) != n) {
      throw std::invalid_argument("train_step: conditional model needs labeled real batches");
    }
    const std::vector<int> real_labels = m.conditional() ? batch.labels : std::vector<int>{};

    // Generator forward, kept for the generator update.
    const Tensor<T> z = sample_noise<T>(n, m.latent_dim, st.rng);
    fake_labels = detail::sample_labels<T>(m, n, st.rng);
    const auto junctions = st.gen.draw_junctions(st.rng);
    gen_bind.reset();
    gen_graph.emplace();
    gen_bind.emplace(*gen_graph, st.gen.params(), true);
    pass = st.gen.forward(*gen_graph, *gen_bind, z, fake_labels, junctions, NormMode::batch);
    st.gen.update_running_stats(pass.batch_stats);
    const int frame = m.baseline == Baseline::mixed_3d_2d
                          ? static_cast<int>(st.rng.uniform_int(0, m.frame_schedule().back() - 1))
                          : 0;
    fake_head_vars.clear();
    std::vector<Tensor<T>> fake_inputs;
    for (const HeadSpec& h : st.dis.heads()) {
      Var v = pass.outputs[static_cast<std::size_t>(h.level - 1)];
      if (h.single_frame) v = ops::slice(*gen_graph, v, 2, frame, 1);
      fake_head_vars.push_back(v);
      fake_inputs.push_back(gen_graph->value(v));
    }

    // Real pyramid with offsets independent of the generator's.
    const Tensor<T> real_video = batch.video.template cast<T>();
    const auto pyramid = real_pyramid(real_video, m, st.rng);
    const auto real_inputs = detail::head_inputs(st.dis, pyramid, frame);

    // Penalty input gradients.
    PenaltyTerms<T> pen;
    if (lambda > 0) pen = r1_terms(st.dis, real_inputs, real_labels, lambda);

    // Discriminator loss on [real; fake].
    Graph<T> g;
    Binder<T, T> bind(g, st.dis.params(), true);
    std::vector<Var> logits;
    std::vector<T> real_sum(static_cast<std::size_t>(n), T(0)), fake_sum(static_cast<std::size_t>(n), T(0));
    rep.real_logit_means.assign(heads, 0.0);
    rep.fake_logit_means.assign(heads, 0.0);
    std::vector<int> both_labels = real_labels;
    both_labels.insert(both_labels.end(), fake_labels.begin(), fake_labels.end());
    for (std::size_t h = 0; h < heads; ++h) {
      Var x = ops::concat(g, {g.leaf(real_inputs[h]), g.leaf(fake_inputs[h])}, 0);
      Var s = st.dis.score(g, bind, h, x, both_labels);
      logits.push_back(s);
      const Tensor<T>& sv = g.value(s);
      for (Index i = 0; i < n; ++i) {
        real_sum[static_cast<std::size_t>(i)] += sv[i];
        fake_sum[static_cast<std::size_t>(i)] += sv[n + i];
        rep.real_logit_means[h] += static_cast<double>(sv[i]) / n;
        rep.fake_logit_means[h] += static_cast<double>(sv[n + i]) / n;
      }
    }
    rep.d_loss = static_cast<double>(d_loss(real_sum, fake_sum));
    rep.r1 = static_cast<double>(pen.value);
    if (!std::isfinite(rep.d_loss) || !std::isfinite(rep.r1)) {
      throw TrainingDiverged("non-finite discriminator loss at iteration " + std::to_string(st.iteration) +
                             " (d_loss " + std::to_string(rep.d_loss) + ", r1 " + std::to_string(rep.r1) +
                             "); logit means: " + detail::logit_summary<T>(rep.real_logit_means, rep.fake_logit_means));
    }
    Tensor<T> seed({2 * n});
    for (Index i = 0; i < n; ++i) {
      seed[i] = -ops::detail::stable_sigmoid(-real_sum[static_cast<std::size_t>(i)]) / static_cast<T>(n);
      seed[n + i] = ops::detail::stable_sigmoid(fake_sum[static_cast<std::size_t>(i)]) / static_cast<T>(n);
    }
    std::vector<std::pair<Var, Tensor<T>>> seeds;
    for (Var s : logits) seeds.emplace_back(s, seed);
    g.backward(seeds);

    ParameterSet<T>& dp = st.dis.params();
    dp.zero_grad();
    bind.accumulate_into(dp);
    if (lambda > 0) {
      std::vector<Tensor<T>> grads;
      for (const auto& p : dp) grads.push_back(Tensor<T>(p.value.shape()));
      r1_param_grads(st.dis, real_inputs, pen, real_labels, lambda, grads);
      for (std::size_t i = 0; i < dp.size(); ++i) {
        Tensor<T>& dst = dp.at(i).grad;
        for (Index k = 0; k < dst.size(); ++k) dst[k] += grads[i][k];
      }
    }
    st.dis_opt.update(dp, lr);
  }

  // Generator update through the updated discriminator.
  {
    const Index n = cfg.train.batch_size;
    Graph<T> g;
    Binder<T, T> bind(g, st.dis.params(), false);
    std::vector<Var> inputs, logits;
    std::vector<T> fake_sum(static_cast<std::size_t>(n), T(0));
    for (std::size_t h = 0; h < heads; ++h) {
      Var x = g.leaf(gen_graph->value(fake_head_vars[h]), true);
      inputs.push_back(x);
      Var s = st.dis.score(g, bind, h, x, fake_labels);
      logits.push_back(s);
      for (Index i = 0; i < n; ++i) fake_sum[static_cast<std::size_t>(i)] += g.value(s)[i];
    }
    rep.g_loss = static_cast<double>(g_loss(fake_sum));
    if (!std::isfinite(rep.g_loss)) {
      throw TrainingDiverged("non-finite generator loss at iteration " + std::to_string(st.iteration) +
                             "; logit means: " + detail::logit_summary<T>(rep.real_logit_means, rep.fake_logit_means));
    }
    Tensor<T> seed({n});
    for (Index i = 0; i < n; ++i) {
      seed[i] = -ops::detail::stable_sigmoid(-fake_sum[static_cast<std::size_t>(i)]) / static_cast<T>(n);
    }
    std::vector<std::pair<Var, Tensor<T>>> seeds;
    for (Var s : logits) seeds.emplace_back(s, seed);
    g.backward(seeds);
    std::vector<std::pair<Var, Tensor<T>>> gen_seeds;
    for (std::size_t h = 0; h < heads; ++h) gen_seeds.emplace_back(fake_head_vars[h], g.grad(inputs[h]));
    gen_graph->backward(gen_seeds);
    ParameterSet<T>& gp = st.gen.params();
    gp.zero_grad();
    gen_bind->accumulate_into(gp);
    st.gen_opt.update(gp, lr);
  }

  ++st.iteration;
  rep.iteration = st.iteration;
  return rep;
}

template <class T>
LossReport train_step(TrainState<T>& st, const Batch& real) {
  return train_step(st, std::vector<Batch>{real});
}

// ---------------------------------------------------------------------------
// Snapshots

namespace detail {

template <class T>
void put_params(Archive& a, const std::string& prefix, const ParameterSet<T>& ps) {
  for (const auto& p : ps) a.put(prefix + p.name, p.value);
}

template <class T>
void put_adam(Archive& a, const std::string& prefix, const ParameterSet<T>& ps, const Adam<T>& opt) {
  const auto& m = opt.first_moments();
  const auto& v = opt.second_moments();
  for (std::size_t i = 0; i < m.size(); ++i) {
    a.put(prefix + "m/" + ps.at(i).name, m[i]);
    a.put(prefix + "v/" + ps.at(i).name, v[i]);
  }
}

template <class T>
void get_params(const Archive& a, const std::string& prefix, ParameterSet<T>& ps) {
  for (auto& p : ps) {
    const Tensor<T>& t = a.get<T>(prefix + p.name);
    if (t.shape() != p.value.shape()) throw CheckpointError("shape mismatch for " + prefix + p.name);
  }
  for (auto& p : ps) p.value = a.get<T>(prefix + p.name);
}

template <class T>
void get_adam(const Archive& a, const std::string& prefix, const ParameterSet<T>& ps, Adam<T>& opt,
              std::int64_t steps) {
  opt.first_moments().clear();
  opt.second_moments().clear();
  opt.set_steps(steps);
  if (steps == 0) return;
  for (const auto& p : ps) {
    opt.first_moments().push_back(a.get<T>(prefix + "m/" + p.name));
    opt.second_moments().push_back(a.get<T>(prefix + "v/" + p.name));
  }
}

}  // namespace detail

template <class T>
Archive to_archive(const TrainState<T>& st, const std::string& data_state = {}) {
  Archive a;
  a.meta["config"] = to_json(st.config);
  a.meta["iteration"] = st.iteration;
  a.meta["rng"] = st.rng.state();
  a.meta["data_rng"] = data_state;
  a.meta["gen_adam_steps"] = st.gen_opt.steps();
  a.meta["dis_adam_steps"] = st.dis_opt.steps();
  a.meta["scalar"] = sizeof(T) == 4 ? "f32" : "f64";
  detail::put_params(a, "gen/", st.gen.params());
  detail::put_params(a, "dis/", st.dis.params());
  detail::put_adam(a, "gen_adam/", st.gen.params(), st.gen_opt);
  detail::put_adam(a, "dis_adam/", st.dis.params(), st.dis_opt);
  for (const auto& bn : st.gen.running_stats()) {
    const Index c = static_cast<Index>(bn.mean.size());
    a.put("gen_bn/" + bn.name + "/mean", Tensor<double>({c}, bn.mean));
    a.put("gen_bn/" + bn.name + "/var", Tensor<double>({c}, bn.var));
  }
  return a;
}

template <class T>
void snapshot(const TrainState<T>& st, const std::filesystem::path& path, const std::string& data_state = {}) {
  to_archive(st, data_state).save(path);
}

// Reads the run config stored in a checkpoint.
inline RunConfig checkpoint_config(const Archive& a) {
  return run_config_from_json(a.meta.at("config"));
}

// Rebuilds a training state. When `expected` is given, the stored model and
// discriminator configs must match it; nothing is loaded otherwise.
template <class T>
TrainState<T> restore(const Archive& a, const RunConfig* expected = nullptr,
                      std::string* data_state = nullptr) {
  RunConfig cfg;
  try {
    cfg = checkpoint_config(a);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint config is invalid: ") + e.what());
  }
  if (expected) {
    if (to_json(expected->model) != to_json(cfg.model) ||
        to_json(expected->discriminator) != to_json(cfg.discriminator)) {
      throw CheckpointError("checkpoint model configuration does not match the requested configuration");
    }
    cfg.train = expected->train;
    cfg.dataset = expected->dataset;
    cfg.eval = expected->eval;
    cfg.output_dir = expected->output_dir;
  }
  const std::string scalar = sizeof(T) == 4 ? "f32" : "f64";
  if (a.meta.value("scalar", scalar) != scalar) throw CheckpointError("checkpoint scalar type mismatch");
  TrainState<T> st = TrainState<T>::create(cfg);
  detail::get_params(a, "gen/", st.gen.params());
  detail::get_params(a, "dis/", st.dis.params());
  detail::get_adam(a, "gen_adam/", st.gen.params(), st.gen_opt, a.meta.at("gen_adam_steps").get<std::int64_t>());
  detail::get_adam(a, "dis_adam/", st.dis.params(), st.dis_opt, a.meta.at("dis_adam_steps").get<std::int64_t>());
  for (auto& bn : st.gen.running_stats()) {
    bn.mean = a.f64("gen_bn/" + bn.name + "/mean").storage();
    bn.var = a.f64("gen_bn/" + bn.name + "/var").storage();
  }
  st.iteration = a.meta.at("iteration").get<std::int64_t>();
  st.rng.set_state(a.meta.at("rng").get<std::string>());
  if (data_state) *data_state = a.meta.value("data_rng", std::string());
  return st;
}

template <class T>
TrainState<T> restore(const std::filesystem::path& path, const RunConfig* expected = nullptr,
                      std::string* data_state = nullptr) {
  return restore<T>(Archive::load(path), expected, data_state);
}

// Iterations at which periodic snapshots are written: interval, 2*interval, ... <= max.
inline std::vector<std::int64_t> snapshot_schedule(std::int64_t interval, std::int64_t max_iterations) {
  if (interval < 1) throw std::invalid_argument("snapshot_schedule: interval must be >= 1");
  std::vector<std::int64_t> out;
  for (std::int64_t it = interval; it <= max_iterations; it += interval) out.push_back(it);
  return out;
}

inline std::string snapshot_name(std::int64_t iteration) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "snapshot_%08lld.vgck", static_cast<long long>(iteration));
  return buf;
}

inline constexpr const char* kFinalCheckpoint = "final.vgck";
inline constexpr const char* kTrainLog = "train_log.csv";

// Snapshot files of a run directory sorted by iteration.
inline std::vector<std::pair<std::int64_t, std::filesystem::path>> list_snapshots(
    const std::filesystem::path& dir) {
  std::vector<std::pair<std::int64_t, std::filesystem::path>> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    long long it = 0;
    if (name.size() == 22 && std::sscanf(name.c_str(), "snapshot_%8lld.vgck", &it) == 1) {
      out.emplace_back(it, e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Loop

struct TrainOptions {
  bool resume = false;
  std::function<void(const LossReport&)> on_step;  // called after every step
};

inline std::string format_log_row(const LossReport& r) {
  std::ostringstream out;
  out << std::setprecision(9) << r.iteration << ',' << r.d_loss << ',' << r.g_loss << ',' << r.r1 << ','
      << r.lr;
  return out.str();
}

// Runs (or resumes) training into cfg.output_dir. Returns the final state.
template <class T = float>
TrainState<T> run_training(const RunConfig& cfg, const TrainOptions& opts = {}) {
  namespace fs = std::filesystem;
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  std::unique_ptr<BatchSource> source = make_source(cfg, cfg.train.seed ^ 0xDA7AULL);
  std::optional<TrainState<T>> state;
  const fs::path log_path = dir / kTrainLog;

  if (opts.resume) {
    fs::path from;
    if (fs::exists(dir / kFinalCheckpoint)) {
      from = dir / kFinalCheckpoint;
    } else if (auto snaps = list_snapshots(dir); !snaps.empty()) {
      from = snaps.back().second;
    }
    if (!from.empty()) {
      std::string data_state;
      state.emplace(restore<T>(from, &cfg, &data_state));
      source->set_state(data_state);
      // Drop log rows written after the restored iteration.
      std::vector<std::string> keep;
      if (std::ifstream in(log_path); in) {
        std::string line;
        while (std::getline(in, line)) {
          if (keep.empty() || std::stoll(line.substr(0, line.find(','))) <= state->iteration) keep.push_back(line);
        }
      }
      std::ofstream out(log_path, std::ios::trunc);
      for (const auto& l : keep) out << l << '\n';
    }
  }
  if (!state) {
    state.emplace(TrainState<T>::create(cfg));
    std::ofstream out(log_path, std::ios::trunc);
    out << "iteration,d_loss,g_loss,r1,lr\n";
  }
  TrainState<T>& st = *state;
  if (st.iteration >= cfg.train.iterations) return std::move(*state);

  std::ofstream log(log_path, std::ios::app);
  while (st.iteration < cfg.train.iterations) {
    std::vector<Batch> real;
    for (int k = 0; k < cfg.train.d_steps_per_iter; ++k) real.push_back(source->next(cfg.train.batch_size));
    const LossReport rep = train_step(st, real);
    log << format_log_row(rep) << '\n';
    log.flush();
    if (opts.on_step) opts.on_step(rep);
    if (st.iteration % cfg.train.snapshot_interval == 0) {
      snapshot(st, dir / snapshot_name(st.iteration), source->state());
    }
  }
  snapshot(st, dir / kFinalCheckpoint, source->state());
  return std::move(*state);
}

}  // namespace vidgan
