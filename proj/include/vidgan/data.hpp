// SPDX-License-Identifier: Apache-2.0
//
// Clip loading from frame folders, the synthetic moving-shapes dataset, and
// batch sources for the training loop.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "vidgan/config.hpp"
#include "vidgan/image_io.hpp"
#include "vidgan/rng.hpp"
#include "vidgan/tensor.hpp"

namespace vidgan {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Batch {
  Tensor<float> video;      // (N, C, T, H, W) in [-1, 1]
  std::vector<int> labels;  // empty when unlabeled
};

// ---------------------------------------------------------------------------
// Manifest

struct ManifestEntry {
  std::string path;  // folder of frame images, sorted by file name
  int frames = 0;
  int label = -1;    // -1 = no label
};

// One record per line: path,frames[,label]. Blank lines and '#' comments are skipped.
inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open manifest " + file.string());
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    auto where = [&] { return file.string() + ":" + std::to_string(lineno); };
    if (fields.size() < 2 || fields.size() > 3) throw DataError(where() + ": expected path,frames[,label]");
    ManifestEntry e;
    e.path = fields[0];
    try {
      e.frames = std::stoi(fields[1]);
      if (fields.size() == 3) e.label = std::stoi(fields[2]);
    } catch (const std::exception&) {
      throw DataError(where() + ": non-integer frame count or label");
    }
    if (e.frames < 1 || (fields.size() == 3 && e.label < 0)) throw DataError(where() + ": invalid values");
    out.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Clip loading

struct ClipRequest {
  int frames = 16;
  int height = 192;
  int width = 192;
  int channels = 3;
  double flip_probability = 0.5;
};

inline std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("clip folder not found: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace detail {

// Area-weighted 1D resampling weights: output cell o covers input [o*r, (o+1)*r).
struct AreaTaps {
  std::vector<int> first;
  std::vector<std::vector<double>> weights;
};

inline AreaTaps area_taps(int in, int out) {
  AreaTaps t;
  const double r = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double lo = o * r, hi = (o + 1) * r;
    const int a = static_cast<int>(std::floor(lo));
    const int b = std::min(in, static_cast<int>(std::ceil(hi)));
    std::vector<double> w;
    for (int i = a; i < b; ++i) w.push_back((std::min<double>(hi, i + 1) - std::max<double>(lo, i)) / r);
    t.first.push_back(a);
    t.weights.push_back(std::move(w));
  }
  return t;
}

}  // namespace detail

// Center-crops an image to a square, area-resizes it and writes it into
// frame t of `clip` (C, T, H, W), mapped to [-1, 1].
inline void place_frame(const Image& img, const ClipRequest& req, bool flip, Tensor<float>& clip, int t) {
  const int side = std::min(img.width, img.height);
  const int ox = (img.width - side) / 2, oy = (img.height - side) / 2;
  const auto ty = detail::area_taps(side, req.height), tx = detail::area_taps(side, req.width);
  auto sample = [&](int y, int x, int c) -> double {
    if (img.channels == 1) return img.at(oy + y, ox + x, 0);
    if (req.channels == 3) return img.at(oy + y, ox + x, c);
    return 0.299 * img.at(oy + y, ox + x, 0) + 0.587 * img.at(oy + y, ox + x, 1) +
           0.114 * img.at(oy + y, ox + x, 2);
  };
  for (int c = 0; c < req.channels; ++c)
    for (int y = 0; y < req.height; ++y)
      for (int x = 0; x < req.width; ++x) {
        double acc = 0;
        const auto& wy = ty.weights[static_cast<std::size_t>(y)];
        const auto& wx = tx.weights[static_cast<std::size_t>(x)];
        for (std::size_t a = 0; a < wy.size(); ++a)
          for (std::size_t b = 0; b < wx.size(); ++b)
            acc += wy[a] * wx[b] *
                   sample(ty.first[static_cast<std::size_t>(y)] + static_cast<int>(a),
                          tx.first[static_cast<std::size_t>(x)] + static_cast<int>(b), c);
        const double v = std::clamp(acc / 127.5 - 1.0, -1.0, 1.0);
        const int xo = flip ? req.width - 1 - x : x;
        clip[((static_cast<Index>(c) * req.frames + t) * req.height + y) * req.width + xo] =
            static_cast<float>(v);
      }
}

// Loads a random T-frame window of the clip in `dir` as (C, T, H, W).
inline Tensor<float> load_clip(const std::filesystem::path& dir, const ClipRequest& req, Rng& rng) {
  const auto files = list_frames(dir);
  if (static_cast<int>(files.size()) < req.frames) {
    throw DataError(dir.string() + ": " + std::to_string(files.size()) + " frames, need " +
                    std::to_string(req.frames));
  }
  const int start = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(files.size()) - req.frames));
  const bool flip = rng.bernoulli(req.flip_probability);
  Tensor<float> clip({req.channels, req.frames, req.height, req.width});
  for (int t = 0; t < req.frames; ++t) {
    place_frame(read_png(files[static_cast<std::size_t>(start + t)]), req, flip, clip, t);
  }
  return clip;
}

// ---------------------------------------------------------------------------
// Synthetic moving squares

// Coverage of [a, a + len) inside the unit cell [i, i + 1).
inline double cell_overlap(double a, double len, int i) {
  return std::max(0.0, std::min(a + len, i + 1.0) - std::max(a, static_cast<double>(i)));
}

struct ToyClip {
  Tensor<float> video;  // (C, T, H, W)
  int label = 0;
  double vx = 0, vy = 0;
};

// Squares moving linearly; every square of a clip shares the direction, whose
// angle class in [0, K) is the label. x grows rightwards, y downwards, and the
// angle is measured from +x towards +y. Start positions keep each square
// fully inside the frame for the whole clip.
inline ToyClip toy_clip(const ToyDatasetConfig& cfg, Rng& rng) {
  const int h = cfg.height, w = cfg.width, frames = cfg.frames;
  const double two_pi = 2.0 * std::numbers::pi;
  const int label = static_cast<int>(rng.uniform_int(0, cfg.label_count - 1));
  const double theta = rng.uniform(two_pi * label / cfg.label_count, two_pi * (label + 1) / cfg.label_count);
  std::vector<double> coverage(static_cast<std::size_t>(frames) * h * w, 0.0);
  ToyClip out;
  out.label = label;
  for (int s = 0; s < cfg.shape_count; ++s) {
    const double side = rng.uniform(cfg.min_size, cfg.max_size) * std::min(h, w);
    double speed = rng.uniform(cfg.min_speed, cfg.max_speed);
    double vx = speed * std::cos(theta), vy = speed * std::sin(theta);
    const double span = frames - 1;
    // Slow down if the path cannot fit.
    const double fit_x = (w - side) / std::max(1e-12, std::abs(vx) * span);
    const double fit_y = (h - side) / std::max(1e-12, std::abs(vy) * span);
    const double fit = std::min({1.0, fit_x, fit_y});
    vx *= fit;
    vy *= fit;
    const double x_lo = std::max(0.0, -vx * span), x_hi = w - side - std::max(0.0, vx * span);
    const double y_lo = std::max(0.0, -vy * span), y_hi = h - side - std::max(0.0, vy * span);
    const double x0 = x_hi > x_lo ? rng.uniform(x_lo, x_hi) : x_lo;
    const double y0 = y_hi > y_lo ? rng.uniform(y_lo, y_hi) : y_lo;
    if (s == 0) {
      out.vx = vx;
      out.vy = vy;
    }
    for (int t = 0; t < frames; ++t) {
      const double x = x0 + vx * t, y = y0 + vy * t;
      for (int i = std::max(0, static_cast<int>(y)); i < std::min(h, static_cast<int>(std::ceil(y + side))); ++i) {
        const double cy = cell_overlap(y, side, i);
        for (int j = std::max(0, static_cast<int>(x)); j < std::min(w, static_cast<int>(std::ceil(x + side))); ++j) {
          coverage[(static_cast<std::size_t>(t) * h + i) * w + j] += cy * cell_overlap(x, side, j);
        }
      }
    }
  }
  out.video = Tensor<float>({cfg.channels, frames, h, w});
  const Index plane = static_cast<Index>(frames) * h * w;
  for (int c = 0; c < cfg.channels; ++c)
    for (Index k = 0; k < plane; ++k) {
      out.video[c * plane + k] = static_cast<float>(-1.0 + 2.0 * std::min(1.0, coverage[static_cast<std::size_t>(k)]));
    }
  return out;
}

inline Batch toy_batch(const ToyDatasetConfig& cfg, int n, Rng& rng, int frames = -1) {
  if (frames < 0) frames = cfg.frames;
  ToyDatasetConfig c = cfg;
  c.frames = frames;
  Batch b;
  b.video = Tensor<float>({n, cfg.channels, frames, cfg.height, cfg.width});
  const Index clip = b.video.size() / std::max(1, n);
  for (int i = 0; i < n; ++i) {
    ToyClip t = toy_clip(c, rng);
    std::copy(t.video.data(), t.video.data() + clip, b.video.data() + i * clip);
    b.labels.push_back(t.label);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Batch sources

class BatchSource {
 public:
  virtual ~BatchSource() = default;
  virtual Batch next(int n) = 0;
  // Serializable state of the sampling stream (empty when not reproducible).
  virtual std::string state() const = 0;
  virtual void set_state(const std::string& s) = 0;
};

class ToySource : public BatchSource {
 public:
  ToySource(ToyDatasetConfig cfg, int frames, std::uint64_t seed, bool labels)
      : cfg_(cfg), frames_(frames), rng_(seed), labels_(labels) {}

  Batch next(int n) override {
    Batch b = toy_batch(cfg_, n, rng_, frames_);
    if (!labels_) b.labels.clear();
    return b;
  }
  std::string state() const override { return rng_.state(); }
  void set_state(const std::string& s) override { rng_.set_state(s); }

 private:
  ToyDatasetConfig cfg_;
  int frames_;
  Rng rng_;
  bool labels_;
};

// Random clips from a manifest. With workers == 0 everything runs on the
// caller's thread and the stream is reproducible; otherwise worker threads
// fill a bounded queue and the order depends on scheduling.
class ManifestSource : public BatchSource {
 public:
  ManifestSource(std::vector<ManifestEntry> entries, std::filesystem::path root, ClipRequest req,
                 std::uint64_t seed, int workers, bool labels)
      : entries_(std::move(entries)), root_(std::move(root)), req_(req), rng_(seed), labels_(labels) {
    if (entries_.empty()) throw DataError("manifest has no clips");
    if (labels_) {
      for (const auto& e : entries_)
        if (e.label < 0) throw DataError("labels requested but " + e.path + " has none");
    }
    for (int i = 0; i < workers; ++i) {
      threads_.emplace_back([this, r = rng_.fork()]() mutable { work(r); });
    }
  }

  ~ManifestSource() override {
    {
      std::lock_guard<std::mutex> lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  Batch next(int n) override {
    Batch b;
    b.video = Tensor<float>({n, req_.channels, req_.frames, req_.height, req_.width});
    const Index clip = b.video.size() / std::max(1, n);
    for (int i = 0; i < n; ++i) {
      auto [data, label] = threads_.empty() ? load_one(rng_) : pop();
      std::copy(data.data(), data.data() + clip, b.video.data() + i * clip);
      if (labels_) b.labels.push_back(label);
    }
    return b;
  }

  std::string state() const override { return threads_.empty() ? rng_.state() : std::string(); }
  void set_state(const std::string& s) override {
    if (!s.empty() && threads_.empty()) rng_.set_state(s);
  }

 private:
  std::pair<Tensor<float>, int> load_one(Rng& rng) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const auto& e = entries_[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(entries_.size()) - 1))];
      try {
        return {load_clip(root_ / e.path, req_, rng), e.label};
      } catch (const std::exception& ex) {
        std::lock_guard<std::mutex> lock(log_mu_);
        std::cerr << "[vidgan] warning: skipping clip " << e.path << ": " << ex.what() << '\n';
      }
    }
    throw DataError("100 consecutive clips failed to load");
  }

  void work(Rng rng) {
    while (true) {
      std::pair<Tensor<float>, int> item;
      try {
        item = load_one(rng);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu_);
        failure_ = std::current_exception();
        cv_.notify_all();
        return;
      }
      std::unique_lock<std::mutex> lock(mu_);
      cv_.wait(lock, [&] { return stop_ || queue_.size() < kCapacity; });
      if (stop_) return;
      queue_.push_back(std::move(item));
      cv_.notify_all();
    }
  }

  std::pair<Tensor<float>, int> pop() {
    std::unique_lock<std::mutex> lock(mu_);
    cv_.wait(lock, [&] { return !queue_.empty() || failure_; });
    if (queue_.empty()) std::rethrow_exception(failure_);
    auto item = std::move(queue_.front());
    queue_.pop_front();
    cv_.notify_all();
    return item;
  }

  static constexpr std::size_t kCapacity = 64;
  std::vector<ManifestEntry> entries_;
  std::filesystem::path root_;
  ClipRequest req_;
  Rng rng_;
  bool labels_;
  std::vector<std::thread> threads_;
  std::mutex mu_, log_mu_;
  std::condition_variable cv_;
  std::deque<std::pair<Tensor<float>, int>> queue_;
  std::exception_ptr failure_;
  bool stop_ = false;
};

inline std::unique_ptr<BatchSource> make_source(const RunConfig& cfg, std::uint64_t seed) {
  const ModelConfig& m = cfg.model;
  const DatasetConfig& d = cfg.dataset;
  if (d.kind == "toy") return std::make_unique<ToySource>(d.toy, m.frames, seed, d.use_labels);
  ClipRequest req{m.frames, m.height, m.width, m.image_channels, d.flip_probability};
  std::filesystem::path manifest = d.manifest;
  std::filesystem::path root = d.root.empty() ? manifest.parent_path() : std::filesystem::path(d.root);
  return std::make_unique<ManifestSource>(read_manifest(manifest), root, req, seed, d.workers, d.use_labels);
}

}  // namespace vidgan
