// SPDX-License-Identifier: Apache-2.0
//
// Sample-quality scores (IS, FID), frame similarity (PSNR, SSIM), the
// cross-level consistency probe and snapshot evaluation.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "vidgan/embedder.hpp"
#include "vidgan/generator.hpp"
#include "vidgan/training.hpp"

namespace vidgan {

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MeanStd {
  double mean = 0;
  double std = 0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("mean_std: empty input");
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

// ---------------------------------------------------------------------------
// Inception score

// exp(mean_i KL(p_i || p_bar)) on each of `splits` contiguous row blocks.
inline MeanStd inception_score(const Eigen::MatrixXd& probs, int splits = 1) {
  const Index n = probs.rows(), k = probs.cols();
  if (n == 0 || k == 0) throw std::invalid_argument("inception_score: empty input");
  if (splits < 1 || splits > n) throw std::invalid_argument("inception_score: bad split count");
  for (Index i = 0; i < n; ++i) {
    if ((probs.row(i).array() < 0).any() || std::abs(probs.row(i).sum() - 1.0) > 1e-5) {
      throw std::invalid_argument("inception_score: row " + std::to_string(i) + " is not a probability vector");
    }
  }
  std::vector<double> scores;
  for (int s = 0; s < splits; ++s) {
    const Index lo = s * n / splits, hi = (s + 1) * n / splits;
    const Eigen::RowVectorXd marginal = probs.middleRows(lo, hi - lo).colwise().mean();
    double kl = 0;
    for (Index i = lo; i < hi; ++i)
      for (Index j = 0; j < k; ++j) {
        const double p = probs(i, j);
        if (p > 0) kl += p * (std::log(p) - std::log(marginal(j)));
      }
    scores.push_back(std::exp(kl / static_cast<double>(hi - lo)));
  }
  return mean_std(scores);
}

// ---------------------------------------------------------------------------
// Frechet distance

struct EmbedderStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Mean and unbiased covariance of the rows of `features`.
inline EmbedderStats feature_stats(const Eigen::MatrixXd& features) {
  if (features.rows() < 2) throw std::invalid_argument("feature_stats: need at least two samples");
  EmbedderStats s;
  s.mean = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
  s.cov = centered.transpose() * centered / static_cast<double>(features.rows() - 1);
  return s;
}

namespace detail {

// Symmetric PSD square root with negative eigenvalues clamped to zero.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)). The trace of the
// product root equals that of (S_a^(1/2) S_b S_a^(1/2))^(1/2), which is symmetric.
inline double fid(const EmbedderStats& a, const EmbedderStats& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows() != b.cov.rows() || a.cov.rows() != a.mean.size()) {
    throw std::invalid_argument("fid: dimension mismatch");
  }
  const Eigen::MatrixXd ra = detail::psd_sqrt(a.cov);
  const Eigen::MatrixXd inner = ra * b.cov * ra;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * cross;
  return std::max(0.0, d);
}

// ---------------------------------------------------------------------------
// Frame similarity. Frames are (C, H, W) in [-1, 1] and compared on [0, 1].

template <class T>
double psnr(const Tensor<T>& x, const Tensor<T>& y) {
  require_same_shape(x.shape(), y.shape(), "psnr");
  if (x.size() == 0) throw std::invalid_argument("psnr: empty frames");
  double se = 0;
  for (Index i = 0; i < x.size(); ++i) {
    const double d = (static_cast<double>(x[i]) - static_cast<double>(y[i])) / 2.0;
    se += d * d;
  }
  if (se == 0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(se / static_cast<double>(x.size()));
}

inline constexpr int kSsimTaps = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

namespace detail {

inline const std::array<double, kSsimTaps>& ssim_window() {
  static const std::array<double, kSsimTaps> w = [] {
    std::array<double, kSsimTaps> v{};
    double s = 0;
    for (int i = 0; i < kSsimTaps; ++i) {
      const double d = i - kSsimTaps / 2;
      v[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
      s += v[static_cast<std::size_t>(i)];
    }
    for (double& x : v) x /= s;
    return v;
  }();
  return w;
}

// Symmetric boundary: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
inline int mirror(int i, int n) {
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

// Separable Gaussian filter of an (H, W) plane.
inline std::vector<double> gaussian_filter(const std::vector<double>& in, int h, int w) {
  const auto& k = ssim_window();
  const int r = kSsimTaps / 2;
  std::vector<double> tmp(in.size()), out(in.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int j = -r; j <= r; ++j) s += k[static_cast<std::size_t>(j + r)] * in[static_cast<std::size_t>(y * w + mirror(x + j, w))];
      tmp[static_cast<std::size_t>(y * w + x)] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int j = -r; j <= r; ++j) s += k[static_cast<std::size_t>(j + r)] * tmp[static_cast<std::size_t>(mirror(y + j, h) * w + x)];
      out[static_cast<std::size_t>(y * w + x)] = s;
    }
  return out;
}

}  // namespace detail

// Mean SSIM over pixels and channels; Gaussian window, symmetric boundary.
template <class T>
double ssim(const Tensor<T>& x, const Tensor<T>& y) {
  require_same_shape(x.shape(), y.shape(), "ssim");
  require_rank(x.shape(), 3, "ssim");
  const int c = static_cast<int>(x.dim(0)), h = static_cast<int>(x.dim(1)), w = static_cast<int>(x.dim(2));
  if (h == 0 || w == 0) throw std::invalid_argument("ssim: empty frames");
  const double c1 = kSsimK1 * kSsimK1, c2 = kSsimK2 * kSsimK2;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  double total = 0;
  for (int ch = 0; ch < c; ++ch) {
    std::vector<double> a(plane), b(plane), aa(plane), bb(plane), ab(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      a[i] = (static_cast<double>(x[static_cast<Index>(ch * plane + i)]) + 1.0) / 2.0;
      b[i] = (static_cast<double>(y[static_cast<Index>(ch * plane + i)]) + 1.0) / 2.0;
      aa[i] = a[i] * a[i];
      bb[i] = b[i] * b[i];
      ab[i] = a[i] * b[i];
    }
    const auto ma = detail::gaussian_filter(a, h, w), mb = detail::gaussian_filter(b, h, w);
    const auto saa = detail::gaussian_filter(aa, h, w), sbb = detail::gaussian_filter(bb, h, w);
    const auto sab = detail::gaussian_filter(ab, h, w);
    // Explicit fma leaves nothing for the compiler to contract, so numerator
    // and denominator round identically and equal inputs give exactly 1.
    for (std::size_t i = 0; i < plane; ++i) {
      const double p = ma[i], q = mb[i];
      const double va = std::fma(-p, p, saa[i]), vb = std::fma(-q, q, sbb[i]), cov = std::fma(-p, q, sab[i]);
      const double num = (std::fma(p, q, p * q) + c1) * (cov + cov + c2);
      const double den = (std::fma(p, p, q * q) + c1) * (va + vb + c2);
      total += num / den;
    }
  }
  return total / static_cast<double>(plane * static_cast<std::size_t>(c));
}

// ---------------------------------------------------------------------------
// Cross-level consistency

struct ConsistencyCurve {
  int samples = 0;
  std::vector<double> psnr_mean, psnr_ci;  // per frame index; +inf mean when every pair is identical
  std::vector<double> ssim_mean, ssim_ci;
  std::vector<int> identical;              // pairs with infinite PSNR per frame index
};

namespace detail {

// Mean and 95% normal-approximation half-width.
inline std::pair<double, double> mean_ci(const std::vector<double>& v) {
  if (v.empty()) return {std::numeric_limits<double>::infinity(), 0.0};
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, 1.96 * std::sqrt(s / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()))};
}

}  // namespace detail

// Renders every level densely (no frame dropping), enlarges the level-1
// frames to the last level's size by pixel replication and compares each
// frame index against the last level.
template <class T>
ConsistencyCurve level_consistency(const Generator<T>& gen, int n_samples, Rng& rng, int batch = 16) {
  const ModelConfig& m = gen.config();
  if (!gen.renders(1)) throw std::invalid_argument("level_consistency: the model has no level-1 render block");
  if (n_samples < 1) throw std::invalid_argument("level_consistency: n_samples must be >= 1");
  const int frames = m.frames, levels = m.levels;
  const int factor = 1 << (levels - 1);
  const Index c = m.image_channels, h = m.height, w = m.width;
  std::vector<std::vector<double>> psnrs(static_cast<std::size_t>(frames)), ssims(static_cast<std::size_t>(frames));
  ConsistencyCurve out;
  out.samples = n_samples;
  out.identical.assign(static_cast<std::size_t>(frames), 0);
  for (int done = 0; done < n_samples; done += batch) {
    const Index nb = std::min(batch, n_samples - done);
    const Tensor<T> z = sample_noise<T>(nb, m.latent_dim, rng);
    std::vector<int> labels;
    for (Index i = 0; i < nb && m.conditional(); ++i) labels.push_back(static_cast<int>(rng.uniform_int(0, m.label_count - 1)));
    Graph<T> g(false);
    Binder<T, T> bind(g, gen.params(), false);
    const auto pass = gen.forward(g, bind, z, labels, {}, NormMode::running, true);
    const Tensor<T>& low = g.value(pass.outputs.front());
    const Tensor<T>& high = g.value(pass.outputs.back());
    for (Index i = 0; i < nb; ++i)
      for (int t = 0; t < frames; ++t) {
        Tensor<T> a({c, h, w}), b({c, h, w});
        for (Index ch = 0; ch < c; ++ch)
          for (Index y = 0; y < h; ++y)
            for (Index x = 0; x < w; ++x) {
              a[(ch * h + y) * w + x] = low.at(i, ch, t, y / factor, x / factor);
              b[(ch * h + y) * w + x] = high.at(i, ch, t, y, x);
            }
        const double p = psnr(a, b);
        if (std::isinf(p)) {
          ++out.identical[static_cast<std::size_t>(t)];
        } else {
          psnrs[static_cast<std::size_t>(t)].push_back(p);
        }
        ssims[static_cast<std::size_t>(t)].push_back(ssim(a, b));
      }
  }
  for (int t = 0; t < frames; ++t) {
    auto [pm, pc] = detail::mean_ci(psnrs[static_cast<std::size_t>(t)]);
    if (out.identical[static_cast<std::size_t>(t)] > 0 && !psnrs[static_cast<std::size_t>(t)].empty()) {
      pm = std::numeric_limits<double>::infinity();
      pc = std::numeric_limits<double>::quiet_NaN();
    }
    const auto [sm, sc] = detail::mean_ci(ssims[static_cast<std::size_t>(t)]);
    out.psnr_mean.push_back(pm);
    out.psnr_ci.push_back(pc);
    out.ssim_mean.push_back(sm);
    out.ssim_ci.push_back(sc);
  }
  return out;
}

inline void write_consistency_csv(const ConsistencyCurve& c, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw MetricError("cannot write " + path.string());
  out << "frame,psnr_mean,psnr_ci95,ssim_mean,ssim_ci95,identical\n" << std::setprecision(9);
  for (std::size_t t = 0; t < c.psnr_mean.size(); ++t) {
    out << t << ',' << c.psnr_mean[t] << ',' << c.psnr_ci[t] << ',' << c.ssim_mean[t] << ',' << c.ssim_ci[t]
        << ',' << c.identical[t] << '\n';
  }
}

// ---------------------------------------------------------------------------
// Generator scoring and snapshot evaluation

struct Scores {
  MeanStd is;
  MeanStd fid;
};

// Real-feature statistics for each repeat, drawn from `source`.
inline std::vector<EmbedderStats> real_stats(const Embedder& emb, BatchSource& source, const EvalProtocol& p) {
  std::vector<EmbedderStats> out;
  for (int r = 0; r < p.repeats; ++r) out.push_back(feature_stats(emb.embed(source.next(p.samples).video).features));
  return out;
}

// Generates `samples` clips per repeat (noise seeded by seed + repeat) and
// scores them: IS on the class posteriors, FID against the repeat's real stats.
template <class T>
Scores score_generator(const Generator<T>& gen, const Embedder& emb, const std::vector<EmbedderStats>& real,
                       const EvalProtocol& p, std::uint64_t seed, int batch = 16) {
  const ModelConfig& m = gen.config();
  std::vector<double> is, fd;
  for (int r = 0; r < p.repeats; ++r) {
    Rng rng(seed + static_cast<std::uint64_t>(r));
    Tensor<float> clips({p.samples, m.image_channels, m.frames, m.height, m.width});
    const Index per = clips.size() / p.samples;
    for (int done = 0; done < p.samples; done += batch) {
      const Index nb = std::min(batch, p.samples - done);
      const Tensor<T> z = sample_noise<T>(nb, m.latent_dim, rng);
      std::vector<int> labels;
      for (Index i = 0; i < nb && m.conditional(); ++i) labels.push_back(static_cast<int>(rng.uniform_int(0, m.label_count - 1)));
      const Tensor<T> x = gen.infer(z, labels);
      for (Index k = 0; k < x.size(); ++k) clips[done * per + k] = static_cast<float>(x[k]);
    }
    const Embedding e = emb.embed(clips);
    is.push_back(inception_score(e.probs).mean);
    fd.push_back(fid(feature_stats(e.features), real.at(static_cast<std::size_t>(r))));
  }
  return {mean_std(is), mean_std(fd)};
}

struct SnapshotScore {
  std::int64_t iteration = 0;
  std::filesystem::path path;
  Scores scores;
};

struct EvalTable {
  std::vector<SnapshotScore> rows;
  std::size_t best = 0;  // index of the largest mean IS; earliest on ties
};

// Index of the largest IS mean; the earliest row wins ties.
inline std::size_t select_best(const std::vector<SnapshotScore>& rows) {
  if (rows.empty()) throw MetricError("no snapshots to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i].scores.is.mean > rows[best].scores.is.mean) best = i;
  return best;
}

// Scores every snapshot in `run_dir` whose iteration is a multiple of the
// protocol stride. Real clips come from the run's own dataset section.
inline EvalTable evaluate_snapshots(const std::filesystem::path& run_dir, const EvalProtocol& p, const Embedder& emb,
                                    std::uint64_t seed) {
  p.validate();
  std::vector<std::pair<std::int64_t, std::filesystem::path>> snaps;
  for (const auto& s : list_snapshots(run_dir))
    if (s.first % p.snapshot_stride == 0) snaps.push_back(s);
  if (snaps.empty()) throw MetricError("no snapshots found in " + run_dir.string() + " (empty run)");
  const RunConfig cfg = checkpoint_config(Archive::load(snaps.front().second));
  auto source = make_source(cfg, seed ^ 0xE7A1ULL);
  const auto real = real_stats(emb, *source, p);
  EvalTable table;
  for (const auto& [it, path] : snaps) {
    const TrainState<float> st = restore<float>(path);
    table.rows.push_back({it, path, score_generator(st.gen, emb, real, p, seed)});
  }
  table.best = select_best(table.rows);
  return table;
}

inline void write_eval_csv(const EvalTable& t, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw MetricError("cannot write " + path.string());
  out << "iteration,IS_mean,IS_std,FID_mean,FID_std\n" << std::setprecision(9);
  for (const auto& r : t.rows) {
    out << r.iteration << ',' << r.scores.is.mean << ',' << r.scores.is.std << ',' << r.scores.fid.mean << ','
        << r.scores.fid.std << '\n';
  }
}

}  // namespace vidgan
