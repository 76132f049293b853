// SPDX-License-Identifier: Apache-2.0
//
// Row-major matrix products used by the convolution and linear layers.
// Real scalars go through Eigen; dual scalars are split into value and
// tangent planes so the heavy lifting still runs on Eigen kernels.

#pragma once

#include <Eigen/Core>
#include <vector>

#include "vidgan/dual.hpp"
#include "vidgan/tensor.hpp"

namespace vidgan::gemm {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

enum class Op { N, T };

namespace detail {

template <class T>
void real_gemm(Op op_a, Op op_b, Index m, Index n, Index k, const T* a, const T* b, T* c,
               bool accumulate) {
  MapMat<T> cm(c, m, n);
  if (!accumulate) cm.setZero();
  if (op_a == Op::N && op_b == Op::N) {
    cm.noalias() += ConstMapMat<T>(a, m, k) * ConstMapMat<T>(b, k, n);
  } else if (op_a == Op::N && op_b == Op::T) {
    cm.noalias() += ConstMapMat<T>(a, m, k) * ConstMapMat<T>(b, n, k).transpose();
  } else if (op_a == Op::T && op_b == Op::N) {
    cm.noalias() += ConstMapMat<T>(a, k, m).transpose() * ConstMapMat<T>(b, k, n);
  } else {
    cm.noalias() += ConstMapMat<T>(a, k, m).transpose() * ConstMapMat<T>(b, n, k).transpose();
  }
}

template <class T>
void split(const Dual<T>* src, Index count, std::vector<T>& v, std::vector<T>& d) {
  v.resize(static_cast<std::size_t>(count));
  d.resize(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) {
    v[static_cast<std::size_t>(i)] = src[i].v;
    d[static_cast<std::size_t>(i)] = src[i].d;
  }
}

}  // namespace detail

// C (m x n) = [C +] op(A) * op(B), where op(A) is m x k and op(B) is k x n.
template <class T>
void multiply(Op op_a, Op op_b, Index m, Index n, Index k, const T* a, const T* b, T* c,
              bool accumulate) {
  if (m == 0 || n == 0) return;
  detail::real_gemm(op_a, op_b, m, n, k, a, b, c, accumulate);
}

template <class T>
void multiply(Op op_a, Op op_b, Index m, Index n, Index k, const Dual<T>* a, const Dual<T>* b,
              Dual<T>* c, bool accumulate) {
  if (m == 0 || n == 0) return;
  std::vector<T> av, ad, bv, bd;
  detail::split(a, m * k, av, ad);
  detail::split(b, k * n, bv, bd);
  std::vector<T> cv(static_cast<std::size_t>(m * n)), cd(static_cast<std::size_t>(m * n));
  detail::real_gemm(op_a, op_b, m, n, k, av.data(), bv.data(), cv.data(), false);
  detail::real_gemm(op_a, op_b, m, n, k, ad.data(), bv.data(), cd.data(), false);
  detail::real_gemm(op_a, op_b, m, n, k, av.data(), bd.data(), cd.data(), true);
  for (Index i = 0; i < m * n; ++i) {
    const auto j = static_cast<std::size_t>(i);
    if (accumulate) {
      c[i].v += cv[j];
      c[i].d += cd[j];
    } else {
      c[i] = Dual<T>(cv[j], cd[j]);
    }
  }
}

}  // namespace vidgan::gemm
