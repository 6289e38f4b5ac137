// Copyright 2026 The mgcrs Authors
// SPDX-License-Identifier: Apache-2.0

// Row-major dense kernels with hand-written backward passes. Rows are tokens
// of several sequences packed end to end; `Segments` records the packing.

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

namespace mgcrs::nn {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
template <class T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;
template <class T>
using MapMat = Eigen::Map<Mat<T>>;
template <class T>
using CMapMat = Eigen::Map<const Mat<T>>;
template <class T>
using MapRow = Eigen::Map<RowVec<T>>;
template <class T>
using CMapRow = Eigen::Map<const RowVec<T>>;

struct Segments {
  std::vector<int> offset;
  std::vector<int> length;
  int total = 0;

  void push(int len) {
    offset.push_back(total);
    length.push_back(len);
    total += len;
  }
  std::size_t size() const { return length.size(); }
};

// ---------------------------------------------------------------------------
// Layer normalization over the last dimension.

template <class T>
struct LayerNormCache {
  Mat<T> xhat;
  std::vector<T> rstd;
};

template <class T>
Mat<T> layer_norm(const Mat<T>& x, CMapRow<T> g, CMapRow<T> b,
                  LayerNormCache<T>* cache, T eps = T(1e-5)) {
  const auto n = x.rows(), d = x.cols();
  Mat<T> y(n, d);
  if (cache) {
    cache->xhat.resize(n, d);
    cache->rstd.resize(static_cast<std::size_t>(n));
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    auto row = x.row(i);
    T mu = row.mean();
    T var = (row.array() - mu).square().mean();
    T rs = T(1) / std::sqrt(var + eps);
    RowVec<T> xh = (row.array() - mu) * rs;
    y.row(i) = xh.cwiseProduct(g) + b;
    if (cache) {
      cache->xhat.row(i) = xh;
      cache->rstd[static_cast<std::size_t>(i)] = rs;
    }
  }
  return y;
}

template <class T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const LayerNormCache<T>& c,
                           CMapRow<T> g, MapRow<T> dg, MapRow<T> db) {
  const auto n = dy.rows(), d = dy.cols();
  Mat<T> dx(n, d);
  dg += dy.cwiseProduct(c.xhat).colwise().sum();
  db += dy.colwise().sum();
  for (Eigen::Index i = 0; i < n; ++i) {
    RowVec<T> dxh = dy.row(i).cwiseProduct(g);
    T m1 = dxh.mean();
    T m2 = dxh.cwiseProduct(c.xhat.row(i)).mean();
    dx.row(i) = c.rstd[static_cast<std::size_t>(i)] *
                (dxh.array() - m1 - c.xhat.row(i).array() * m2).matrix();
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Exact GELU.

template <class T>
Mat<T> gelu(const Mat<T>& x) {
  const T r = T(0.70710678118654752440);
  return x.unaryExpr([r](T v) { return T(0.5) * v * (T(1) + std::erf(v * r)); });
}

template <class T>
Mat<T> gelu_backward(const Mat<T>& dy, const Mat<T>& x) {
  const T r = T(0.70710678118654752440);
  const T c = T(0.39894228040143267794);  // 1/sqrt(2 pi)
  Mat<T> d = x.unaryExpr([&](T v) {
    return T(0.5) * (T(1) + std::erf(v * r)) + v * c * std::exp(T(-0.5) * v * v);
  });
  return dy.cwiseProduct(d);
}

// ---------------------------------------------------------------------------
// Affine map y = x W + b, W is [in x out].

template <class T>
Mat<T> linear(const Mat<T>& x, CMapMat<T> w, CMapRow<T> b) {
  Mat<T> y;
  y.noalias() = x * w;
  y.rowwise() += b;
  return y;
}

template <class T>
Mat<T> linear_backward(const Mat<T>& dy, const Mat<T>& x, CMapMat<T> w,
                       MapMat<T> dw, MapRow<T> db, bool need_dx = true) {
  dw.noalias() += x.transpose() * dy;
  db += dy.colwise().sum();
  Mat<T> dx;
  if (need_dx) dx.noalias() = dy * w.transpose();
  return dx;
}

// ---------------------------------------------------------------------------
// Row softmax helpers.

template <class T>
void softmax_rows_inplace(Mat<T>& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    auto row = s.row(i);
    T m = row.maxCoeff();
    row = (row.array() - m).exp();
    row /= row.sum();
  }
}

/// log-softmax of one row, computed in double for reporting.
template <class Row>
std::vector<double> log_softmax(const Row& logits) {
  double m = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < logits.size(); ++j)
    m = std::max(m, static_cast<double>(logits(j)));
  double z = 0;
  for (Eigen::Index j = 0; j < logits.size(); ++j)
    z += std::exp(static_cast<double>(logits(j)) - m);
  double lz = m + std::log(z);
  std::vector<double> out(static_cast<std::size_t>(logits.size()));
  for (Eigen::Index j = 0; j < logits.size(); ++j)
    out[static_cast<std::size_t>(j)] = static_cast<double>(logits(j)) - lz;
  return out;
}

}  // namespace mgcrs::nn
