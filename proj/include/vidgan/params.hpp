// SPDX-License-Identifier: Apache-2.0
//
// Named parameter storage, graph binding, initializers and the Adam update.

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <type_traits>
#include <string>
#include <utility>
#include <vector>

#include "vidgan/autograd.hpp"
#include "vidgan/dual.hpp"
#include "vidgan/rng.hpp"
#include "vidgan/tensor.hpp"

namespace vidgan {

struct ParamId {
  int index = -1;
  bool valid() const noexcept { return index >= 0; }
};

template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

template <class T>
class ParameterSet {
 public:
  ParamId add(std::string name, Tensor<T> value) {
    for (const auto& p : params_) {
      if (p.name == name) throw std::invalid_argument("duplicate parameter name: " + name);
    }
    Tensor<T> grad(value.shape());
    params_.push_back(Parameter<T>{std::move(name), std::move(value), std::move(grad)});
    return ParamId{static_cast<int>(params_.size()) - 1};
  }

  Parameter<T>& operator[](ParamId id) { return params_.at(static_cast<std::size_t>(id.index)); }
  const Parameter<T>& operator[](ParamId id) const {
    return params_.at(static_cast<std::size_t>(id.index));
  }
  Parameter<T>& at(std::size_t i) { return params_.at(i); }
  const Parameter<T>& at(std::size_t i) const { return params_.at(i); }

  std::size_t size() const noexcept { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  Index element_count() const {
    Index n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(T(0));
  }

 private:
  std::vector<Parameter<T>> params_;
};

// Exposes the parameters of a set as leaves of one graph, each bound at most
// once so a weight shared across time steps accumulates a single gradient.
template <class T, class S>
class Binder {
 public:
  Binder(Graph<S>& graph, const ParameterSet<T>& params, bool requires_grad)
      : graph_(graph), params_(params), requires_grad_(requires_grad), vars_(params.size()) {}

  Var operator()(ParamId id) {
    if (!id.valid()) return Var{};
    Var& v = vars_.at(static_cast<std::size_t>(id.index));
    if (!v.valid()) v = graph_.leaf(params_[id].value.template cast<S>(), requires_grad_);
    return v;
  }

  Graph<S>& graph() noexcept { return graph_; }

  // Calls fn(index, gradient) for every parameter that received a gradient.
  template <class F>
  void for_each_grad(F&& fn) const {
    for (std::size_t i = 0; i < vars_.size(); ++i) {
      if (vars_[i].valid() && graph_.requires_grad(vars_[i])) fn(i, graph_.grad(vars_[i]));
    }
  }

  // Adds the graph gradients into the parameter set's grad buffers.
  void accumulate_into(ParameterSet<T>& target) const
    requires std::is_same_v<T, S>
  {
    for_each_grad([&](std::size_t i, const Tensor<S>& g) {
      Tensor<T>& dst = target.at(i).grad;
      for (Index k = 0; k < g.size(); ++k) dst[k] += g[k];
    });
  }

 private:
  Graph<S>& graph_;
  const ParameterSet<T>& params_;
  bool requires_grad_;
  std::vector<Var> vars_;
};

namespace init {

// Fans of a dense (out, in) or convolution (out, in, k...) weight.
inline std::pair<double, double> fans(const Shape& shape) {
  if (shape.size() < 2) throw ShapeError("init::fans needs rank >= 2");
  double receptive = 1.0;
  for (std::size_t i = 2; i < shape.size(); ++i) receptive *= static_cast<double>(shape[i]);
  return {static_cast<double>(shape[1]) * receptive, static_cast<double>(shape[0]) * receptive};
}

// Uniform(-a, a) with a = scale * sqrt(6 / (fan_in + fan_out)).
template <class T>
Tensor<T> glorot_uniform(Shape shape, double scale, Rng& rng) {
  const auto [fan_in, fan_out] = fans(shape);
  const double limit = scale * std::sqrt(6.0 / (fan_in + fan_out));
  Tensor<T> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(-limit, limit));
  return t;
}

inline double glorot_variance(const Shape& shape, double scale) {
  const auto [fan_in, fan_out] = fans(shape);
  return scale * scale * 2.0 / (fan_in + fan_out);
}

}  // namespace init

struct AdamConfig {
  double alpha = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double eps = 1e-8;
};

template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const noexcept { return cfg_; }
  std::int64_t steps() const noexcept { return t_; }

  // One update with learning rate `lr` using the grads stored in `params`.
  void update(ParameterSet<T>& params, double lr) {
    if (m_.size() != params.size()) {
      m_.clear();
      v_.clear();
      for (const auto& p : params) {
        m_.emplace_back(p.value.shape());
        v_.emplace_back(p.value.shape());
      }
    }
    ++t_;
    const double fix1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double fix2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double step = lr * std::sqrt(fix2) / fix1;
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter<T>& p = params.at(i);
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      for (Index k = 0; k < p.value.size(); ++k) {
        const T g = p.grad[k];
        m[k] = b1 * m[k] + (T(1) - b1) * g;
        v[k] = b2 * v[k] + (T(1) - b2) * g * g;
        p.value[k] -= static_cast<T>(step) * m[k] / (std::sqrt(v[k]) + static_cast<T>(cfg_.eps));
      }
    }
  }

  std::vector<Tensor<T>>& first_moments() noexcept { return m_; }
  std::vector<Tensor<T>>& second_moments() noexcept { return v_; }
  const std::vector<Tensor<T>>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor<T>>& second_moments() const noexcept { return v_; }
  void set_steps(std::int64_t t) noexcept { t_ = t; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace vidgan
