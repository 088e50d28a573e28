// include/axvec/numerics.h

// Copyright 2026  The axvec Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "axvec/common.h"

namespace axvec {

using Index = Eigen::Index;
/// Frames are rows: a T x C matrix holds one C-dimensional vector per frame.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr double kVarianceFloor = 1e-10;

inline std::string ShapeString(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

/// Parameters of a dilated 1-D convolution along time.  The K x C_in x C_out
/// weight tensor is stored flattened as a (K * C_in) x C_out matrix whose
/// row k * C_in + i holds W[k, i, :].
struct ConvParams {
  Matrix weight;
  Vector bias;
  int kernel = 1;
  int dilation = 1;

  static ConvParams Zeros(Index in_dim, Index out_dim, int kernel = 1, int dilation = 1) {
    ConvParams p;
    p.kernel = kernel;
    p.dilation = dilation;
    p.weight = Matrix::Zero(kernel * in_dim, out_dim);
    p.bias = Vector::Zero(out_dim);
    return p;
  }

  Index InDim() const { return kernel > 0 ? weight.rows() / kernel : 0; }
  Index OutDim() const { return weight.cols(); }
  /// Frames lost by a valid convolution.
  Index Shrinkage() const { return static_cast<Index>(kernel - 1) * dilation; }

  void Validate() const {
    if (kernel < 1) throw Error("conv kernel width must be >= 1");
    if (dilation < 1) throw Error("conv dilation must be >= 1");
    if (weight.rows() % kernel != 0)
      throw Error("conv weight rows " + std::to_string(weight.rows()) +
                  " not divisible by kernel " + std::to_string(kernel));
    if (bias.size() != weight.cols())
      throw Error("conv bias length " + std::to_string(bias.size()) +
                  " != output channels " + std::to_string(weight.cols()));
  }
};

namespace internal {

inline void CheckConvInput(const Matrix& input, const ConvParams& p) {
  p.Validate();
  if (input.cols() != p.InDim())
    throw Error("conv1d: input has " + std::to_string(input.cols()) +
                " channels, filter expects " + std::to_string(p.InDim()));
  if (input.rows() <= p.Shrinkage())
    throw Error("conv1d: " + std::to_string(input.rows()) +
                " frames is too short for receptive field " +
                std::to_string(p.Shrinkage() + 1));
}

// Gathers the K time-shifted views side by side: T' x (K * C).
inline Matrix Unfold(const Matrix& input, int kernel, int dilation) {
  const Index out_frames = input.rows() - static_cast<Index>(kernel - 1) * dilation;
  const Index c = input.cols();
  Matrix cols(out_frames, kernel * c);
  for (int k = 0; k < kernel; ++k)
    cols.middleCols(k * c, c) = input.middleRows(static_cast<Index>(k) * dilation, out_frames);
  return cols;
}

}  // namespace internal

/// Valid (unpadded) dilated convolution:
///   out[t, o] = sum_k sum_i in[t + k * d, i] * W[k, i, o] + b[o],
/// producing T - (K - 1) * d frames.
inline Matrix Conv1d(const Matrix& input, const ConvParams& p) {
  internal::CheckConvInput(input, p);
  Matrix out;
  if (p.kernel == 1) {
    out.noalias() = input * p.weight;
  } else {
    const Matrix cols = internal::Unfold(input, p.kernel, p.dilation);
    out.noalias() = cols * p.weight;
  }
  out.rowwise() += p.bias.transpose();
  return out;
}

struct ConvGrads {
  Matrix input;
  Matrix weight;
  Vector bias;
};

inline ConvGrads Conv1dBackward(const Matrix& input, const ConvParams& p,
                                const Matrix& upstream) {
  internal::CheckConvInput(input, p);
  const Index out_frames = input.rows() - p.Shrinkage();
  if (upstream.rows() != out_frames || upstream.cols() != p.OutDim())
    throw Error("conv1d_backward: upstream is " + ShapeString(upstream) +
                ", expected " + std::to_string(out_frames) + "x" +
                std::to_string(p.OutDim()));
  ConvGrads g;
  g.bias = upstream.colwise().sum().transpose();
  if (p.kernel == 1) {
    g.weight.noalias() = input.transpose() * upstream;
    g.input.noalias() = upstream * p.weight.transpose();
    return g;
  }
  const Matrix cols = internal::Unfold(input, p.kernel, p.dilation);
  g.weight.noalias() = cols.transpose() * upstream;
  const Matrix dcols = upstream * p.weight.transpose();
  const Index c = input.cols();
  g.input = Matrix::Zero(input.rows(), c);
  for (int k = 0; k < p.kernel; ++k)
    g.input.middleRows(static_cast<Index>(k) * p.dilation, out_frames) +=
        dcols.middleCols(k * c, c);
  return g;
}

/// Numerically safe softmax (max-subtracted, then renormalized).
inline Vector Softmax(const Vector& logits) {
  if (logits.size() == 0) throw Error("softmax of an empty vector");
  if (!logits.allFinite()) throw Error("softmax: non-finite logit");
  const double peak = logits.maxCoeff();
  Vector p = (logits.array() - peak).exp().matrix();
  p /= p.sum();
  return p;
}

/// Vector-Jacobian product of softmax: p * (g - <p, g>).
inline Vector SoftmaxBackward(const Vector& probs, const Vector& upstream) {
  const double dot = probs.dot(upstream);
  return (probs.array() * (upstream.array() - dot)).matrix();
}

struct WeightedStats {
  Vector mean;
  Vector stddev;
  Vector raw_variance;  // before flooring; may be slightly negative
};

/// Weighted mean and standard deviation over frames.  The variance is
/// floored at kVarianceFloor before the square root.
inline WeightedStats ComputeWeightedStats(const Matrix& values, const Vector& weights) {
  if (values.rows() == 0) throw Error("weighted_stats: no frames");
  if (weights.size() != values.rows())
    throw Error("weighted_stats: " + std::to_string(weights.size()) + " weights for " +
                std::to_string(values.rows()) + " frames");
  if ((weights.array() < 0.0).any()) throw Error("weighted_stats: negative weight");
  if (std::abs(weights.sum() - 1.0) > 1e-9)
    throw Error("weighted_stats: weights sum to " + std::to_string(weights.sum()) +
                ", expected 1");
  WeightedStats s;
  s.mean.noalias() = values.transpose() * weights;
  const Vector second = values.array().square().matrix().transpose() * weights;
  s.raw_variance = second - s.mean.cwiseProduct(s.mean);
  s.stddev = s.raw_variance.cwiseMax(kVarianceFloor).cwiseSqrt();
  return s;
}

struct WeightedStatsGrads {
  Matrix values;
  Vector weights;
};

/// Gradient through ComputeWeightedStats, treating the weights as free
/// variables.  Channels sitting at the variance floor pass no gradient into
/// the variance path.
inline WeightedStatsGrads ComputeWeightedStatsBackward(const Matrix& values,
                                                       const Vector& weights,
                                                       const WeightedStats& stats,
                                                       const Vector& dmean,
                                                       const Vector& dstd) {
  const Index dim = values.cols();
  Vector dvar(dim);
  for (Index j = 0; j < dim; ++j)
    dvar[j] = stats.raw_variance[j] > kVarianceFloor ? dstd[j] / (2.0 * stats.stddev[j]) : 0.0;
  WeightedStatsGrads g;
  // d var / d e_t = 2 a_t (e_t - mu);  d var / d a_t = e_t^2 - 2 mu e_t
  Matrix centered = values.rowwise() - stats.mean.transpose();
  Matrix per_frame = (2.0 * centered.array()).rowwise() * dvar.transpose().array();
  per_frame.rowwise() += dmean.transpose();
  g.values = per_frame.array().colwise() * weights.array();
  const Matrix var_term =
      values.array().square() - 2.0 * (values.array().rowwise() * stats.mean.transpose().array());
  g.weights = values * dmean + var_term * dvar;
  return g;
}

inline Matrix Relu(const Matrix& x) { return x.cwiseMax(0.0); }

/// `out` is the ReLU output; the mask is out > 0.
inline Matrix ReluBackward(const Matrix& out, const Matrix& upstream) {
  return (out.array() > 0.0).select(upstream, 0.0);
}

/// `out` is tanh(x).
inline Matrix TanhBackward(const Matrix& out, const Matrix& upstream) {
  return (upstream.array() * (1.0 - out.array().square())).matrix();
}

inline void CheckFinite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) throw Error("non-finite values in " + what);
}

}  // namespace axvec
