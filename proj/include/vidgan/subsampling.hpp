// SPDX-License-Identifier: Apache-2.0
//
// Training-time frame subsampling and the matching transform of real clips.

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "vidgan/autograd.hpp"
#include "vidgan/config.hpp"
#include "vidgan/ops.hpp"
#include "vidgan/rng.hpp"
#include "vidgan/tensor.hpp"

namespace vidgan {

// One subsampling event: keeps frames offset, offset + rate, ... (output_len of them).
struct SubsampleSpec {
  int rate = 1;
  int offset = 0;
  int input_len = 1;
  int output_len = 1;

  // Number of legal offsets: input_len - rate * (output_len - 1).
  int offset_count() const { return input_len - rate * (output_len - 1); }

  std::vector<int> indices() const {
    std::vector<int> out(static_cast<std::size_t>(output_len));
    for (int k = 0; k < output_len; ++k) out[static_cast<std::size_t>(k)] = offset + k * rate;
    return out;
  }

  friend bool operator==(const SubsampleSpec&, const SubsampleSpec&) = default;
};

inline SubsampleSpec make_spec_at(int input_len, int rate, int offset) {
  if (input_len < 1) throw std::invalid_argument("make_spec: input_len must be >= 1");
  if (rate < 1) throw std::invalid_argument("make_spec: rate must be >= 1");
  SubsampleSpec s{rate, offset, input_len, ceil_div(input_len, rate)};
  if (offset < 0 || offset >= s.offset_count()) {
    throw std::invalid_argument("make_spec: offset " + std::to_string(offset) + " outside [0, " +
                                std::to_string(s.offset_count() - 1) + "]");
  }
  return s;
}

// Draws the offset uniformly over every value that still yields
// ceil(input_len / rate) frames.
inline SubsampleSpec make_spec(int input_len, int rate, Rng& rng) {
  if (input_len < 1) throw std::invalid_argument("make_spec: input_len must be >= 1");
  if (rate < 1) throw std::invalid_argument("make_spec: rate must be >= 1");
  const int n = ceil_div(input_len, rate);
  const int count = input_len - rate * (n - 1);
  const int offset = count > 1 ? static_cast<int>(rng.uniform_int(0, count - 1)) : 0;
  return SubsampleSpec{rate, offset, input_len, n};
}

namespace detail {

inline void check_spec_against(const Shape& s, const SubsampleSpec& spec) {
  require_rank(s, 5, "subsample_frames");
  if (s[2] != spec.input_len) {
    throw ShapeError("subsample_frames: tensor has " + std::to_string(s[2]) +
                     " frames, spec expects " + std::to_string(spec.input_len));
  }
}

}  // namespace detail

template <class S>
Tensor<S> subsample_frames(const Tensor<S>& h, const SubsampleSpec& spec) {
  detail::check_spec_against(h.shape(), spec);
  const Index n = h.dim(0), c = h.dim(1), t = h.dim(2), plane = h.dim(3) * h.dim(4);
  Tensor<S> out({n, c, spec.output_len, h.dim(3), h.dim(4)});
  for (Index i = 0; i < n * c; ++i) {
    for (int k = 0; k < spec.output_len; ++k) {
      const S* src = h.data() + (i * t + spec.offset + static_cast<Index>(k) * spec.rate) * plane;
      std::copy(src, src + plane, out.data() + (i * spec.output_len + k) * plane);
    }
  }
  return out;
}

template <class S>
Var subsample_frames(Graph<S>& g, Var h, const SubsampleSpec& spec) {
  detail::check_spec_against(g.shape(h), spec);
  if (spec.rate == 1) return h;
  return ops::strided_slice(g, h, 2, spec.offset, spec.rate, spec.output_len);
}

// Spatial downscale by an integer factor, averaging factor x factor cells.
template <class S>
Tensor<S> area_downscale(const Tensor<S>& x, int factor) {
  require_rank(x.shape(), 5, "area_downscale");
  if (factor < 1) throw std::invalid_argument("area_downscale: factor must be >= 1");
  if (factor == 1) return x;
  const Index h = x.dim(3), w = x.dim(4);
  if (h % factor || w % factor) {
    throw ShapeError("area_downscale: " + to_string(x.shape()) + " not divisible by " +
                     std::to_string(factor));
  }
  const Index ho = h / factor, wo = w / factor, planes = x.dim(0) * x.dim(1) * x.dim(2);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  Tensor<S> out({x.dim(0), x.dim(1), x.dim(2), ho, wo});
  for (Index p = 0; p < planes; ++p) {
    const S* src = x.data() + p * h * w;
    S* dst = out.data() + p * ho * wo;
    for (Index i = 0; i < ho; ++i)
      for (Index j = 0; j < wo; ++j) {
        double acc = 0;
        for (Index a = 0; a < factor; ++a)
          for (Index b = 0; b < factor; ++b)
            acc += static_cast<double>(src[(i * factor + a) * w + j * factor + b]);
        dst[i * wo + j] = static_cast<S>(acc * inv);
      }
  }
  return out;
}

// Real clips shaped like the generator's training outputs: level l receives
// the clip after l - 1 nested subsampling steps, downscaled by 2^(L - l).
// Offsets come from `rng` and are independent of the generator's.
template <class S>
std::vector<Tensor<S>> real_pyramid(const Tensor<S>& x, const ModelConfig& cfg, Rng& rng,
                                    std::vector<SubsampleSpec>* specs_out = nullptr) {
  require_rank(x.shape(), 5, "real_pyramid");
  const int levels = cfg.levels;
  const Index scale = Index{1} << (levels - 1);
  if (x.dim(3) % scale || x.dim(4) % scale) {
    throw ShapeError("real_pyramid: resolution " + std::to_string(x.dim(3)) + "x" +
                     std::to_string(x.dim(4)) + " not divisible by 2^" + std::to_string(levels - 1));
  }
  if (x.dim(2) != cfg.frames) {
    throw ShapeError("real_pyramid: clip has " + std::to_string(x.dim(2)) + " frames, model uses " +
                     std::to_string(cfg.frames));
  }
  std::vector<Tensor<S>> out;
  out.reserve(static_cast<std::size_t>(levels));
  if (specs_out) specs_out->clear();
  Tensor<S> cur = x;
  for (int l = 1; l <= levels; ++l) {
    if (l > 1) {
      const SubsampleSpec spec = make_spec(static_cast<int>(cur.dim(2)), cfg.rate, rng);
      if (specs_out) specs_out->push_back(spec);
      cur = subsample_frames(cur, spec);
    }
    out.push_back(area_downscale(cur, 1 << (levels - l)));
  }
  return out;
}

}  // namespace vidgan
