// include/axvec/layers.h

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

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "axvec/numerics.h"

namespace axvec {

/// A mini-batch of utterances, each T x C.  Frame-level layers keep one
/// matrix per utterance; utterance-level layers use a single B x C matrix.
using Batch = std::vector<Matrix>;

enum class Mode { kTrain, kInfer };

// ---------------------------------------------------------------------------
// Batch normalization

struct BnState {
  Vector gamma;
  Vector beta;
  Vector running_mean;
  Vector running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;
  bool has_running_stats = false;

  static BnState Init(Index dim, double momentum = 0.1, double epsilon = 1e-5) {
    BnState s;
    s.gamma = Vector::Ones(dim);
    s.beta = Vector::Zero(dim);
    s.running_mean = Vector::Zero(dim);
    s.running_var = Vector::Ones(dim);
    s.momentum = momentum;
    s.epsilon = epsilon;
    return s;
  }

  Index Dim() const { return running_mean.size(); }

  void SetRunningStats(const Vector& mean, const Vector& var) {
    if (mean.size() != Dim() || var.size() != Dim())
      throw Error("BnState::SetRunningStats: dimension mismatch");
    if ((var.array() < 0.0).any()) throw Error("BnState: negative running variance");
    running_mean = mean;
    running_var = var;
    has_running_stats = true;
  }
};

/// What the normalization step keeps for its backward pass.
struct NormCache {
  Mode mode = Mode::kInfer;
  Batch xhat;
  Vector inv_std;
  Vector batch_mean;
  Vector batch_var;
  double count = 0.0;
};

namespace internal {

inline void CheckBatch(const Batch& x, Index dim, const char* who) {
  if (x.empty()) throw Error(std::string(who) + ": empty batch");
  for (const Matrix& m : x) {
    if (m.rows() == 0) throw Error(std::string(who) + ": utterance with no frames");
    if (m.cols() != dim)
      throw Error(std::string(who) + ": got " + std::to_string(m.cols()) +
                  " channels, state has " + std::to_string(dim));
  }
}

inline Matrix Affine(const Matrix& xhat, const Vector& scale, const Vector& shift) {
  return ((xhat.array().rowwise() * scale.transpose().array()).rowwise() +
          shift.transpose().array())
      .matrix();
}

}  // namespace internal

/// The normalization half of BN, shared by BN and ABN.  Train mode uses
/// per-channel statistics over every (utterance, frame) position and leaves
/// the batch moments in the cache; it never touches the running stats.
inline Batch Normalize(const Batch& x, const BnState& state, Mode mode, NormCache* cache) {
  internal::CheckBatch(x, state.Dim(), "batch_norm");
  const Index dim = state.Dim();
  Vector mean, var;
  double count = 0.0;
  if (mode == Mode::kTrain) {
    mean = Vector::Zero(dim);
    for (const Matrix& m : x) {
      mean += m.colwise().sum().transpose();
      count += static_cast<double>(m.rows());
    }
    mean /= count;
    var = Vector::Zero(dim);
    for (const Matrix& m : x)
      var += (m.rowwise() - mean.transpose()).array().square().matrix().colwise().sum().transpose();
    var /= count;
  } else {
    if (!state.has_running_stats)
      throw Error("batch_norm: inference requested before running statistics exist");
    mean = state.running_mean;
    var = state.running_var;
  }
  const Vector inv_std = (var.array() + state.epsilon).rsqrt().matrix();
  Batch out;
  out.reserve(x.size());
  for (const Matrix& m : x)
    out.emplace_back(((m.rowwise() - mean.transpose()).array().rowwise() *
                      inv_std.transpose().array())
                         .matrix());
  if (cache != nullptr) {
    cache->mode = mode;
    cache->xhat = out;
    cache->inv_std = inv_std;
    cache->batch_mean = mean;
    cache->batch_var = var;
    cache->count = count;
  }
  return out;
}

inline Batch NormalizeBackward(const Batch& dxhat, const NormCache& cache) {
  Batch dx;
  dx.reserve(dxhat.size());
  if (cache.mode == Mode::kInfer) {
    for (const Matrix& g : dxhat)
      dx.emplace_back((g.array().rowwise() * cache.inv_std.transpose().array()).matrix());
    return dx;
  }
  const Index dim = cache.inv_std.size();
  Vector sum_g = Vector::Zero(dim);
  Vector sum_gx = Vector::Zero(dim);
  for (size_t u = 0; u < dxhat.size(); ++u) {
    sum_g += dxhat[u].colwise().sum().transpose();
    sum_gx += dxhat[u].cwiseProduct(cache.xhat[u]).colwise().sum().transpose();
  }
  const Vector mean_g = sum_g / cache.count;
  const Vector mean_gx = sum_gx / cache.count;
  for (size_t u = 0; u < dxhat.size(); ++u) {
    Matrix t = dxhat[u].rowwise() - mean_g.transpose();
    t -= (cache.xhat[u].array().rowwise() * mean_gx.transpose().array()).matrix();
    dx.emplace_back((t.array().rowwise() * cache.inv_std.transpose().array()).matrix());
  }
  return dx;
}

/// Exponential moving average of the batch moments held in `cache`.
inline void UpdateRunningStats(BnState& state, const NormCache& cache) {
  if (cache.mode != Mode::kTrain) return;
  const double m = state.momentum;
  state.running_mean = (1.0 - m) * state.running_mean + m * cache.batch_mean;
  state.running_var = (1.0 - m) * state.running_var + m * cache.batch_var;
  state.has_running_stats = true;
}

struct BnCache {
  NormCache norm;
};

/// BN without the running-statistics update; the batch moments stay in the
/// cache for UpdateRunningStats.
inline Batch BnTransform(const Batch& x, const BnState& state, Mode mode, BnCache* cache) {
  NormCache local;
  NormCache* norm = cache != nullptr ? &cache->norm : &local;
  Batch xhat = Normalize(x, state, mode, norm);
  for (Matrix& m : xhat) m = internal::Affine(m, state.gamma, state.beta);
  return xhat;
}

/// Standard BN with fixed affine (gamma, beta) applied last.  In train mode
/// the running statistics are updated.
inline Batch BatchNorm(const Batch& x, BnState& state, Mode mode, BnCache* cache = nullptr) {
  BnCache local;
  BnCache* c = cache != nullptr ? cache : &local;
  Batch y = BnTransform(x, state, mode, c);
  if (mode == Mode::kTrain) UpdateRunningStats(state, c->norm);
  return y;
}

/// Utterance-level form: statistics over the rows of a B x C matrix.
inline Matrix BatchNorm(const Matrix& x, BnState& state, Mode mode, BnCache* cache = nullptr) {
  return BatchNorm(Batch{x}, state, mode, cache).front();
}

/// Accumulates d gamma / d beta into `grad` and returns dx.
inline Batch BatchNormBackward(const Batch& dy, const BnState& state, const BnCache& cache,
                               BnState* grad) {
  const Index dim = state.Dim();
  Batch dxhat;
  dxhat.reserve(dy.size());
  Vector dgamma = Vector::Zero(dim);
  Vector dbeta = Vector::Zero(dim);
  for (size_t u = 0; u < dy.size(); ++u) {
    dgamma += dy[u].cwiseProduct(cache.norm.xhat[u]).colwise().sum().transpose();
    dbeta += dy[u].colwise().sum().transpose();
    dxhat.emplace_back((dy[u].array().rowwise() * state.gamma.transpose().array()).matrix());
  }
  if (grad != nullptr) {
    grad->gamma += dgamma;
    grad->beta += dbeta;
  }
  return NormalizeBackward(dxhat, cache.norm);
}

// ---------------------------------------------------------------------------
// Adaptive convolution (ACNN)

/// Attention pooling of the layer input into a context vector, a linear
/// regression from the context to mixing weights, and a pool of N component
/// filters whose mixture is the per-utterance convolution.
struct AcnnParams {
  Matrix value_weight;  // C_in x H
  Vector value_bias;    // H
  Matrix score_weight;  // C_in x H
  Vector score_bias;    // H
  Vector score_proj;    // H
  Matrix mix_weight;    // 2H x N
  Vector mix_bias;      // N
  std::vector<ConvParams> pool;
  /// When set, replaces the regressed mixing weights (analysis hook; not a
  /// trainable parameter).
  std::optional<Vector> mix_override;

  static AcnnParams Zeros(Index in_dim, Index out_dim, int kernel, int dilation, Index hidden,
                          Index pool_size) {
    AcnnParams p;
    p.value_weight = Matrix::Zero(in_dim, hidden);
    p.value_bias = Vector::Zero(hidden);
    p.score_weight = Matrix::Zero(in_dim, hidden);
    p.score_bias = Vector::Zero(hidden);
    p.score_proj = Vector::Zero(hidden);
    p.mix_weight = Matrix::Zero(2 * hidden, pool_size);
    p.mix_bias = Vector::Zero(pool_size);
    for (Index i = 0; i < pool_size; ++i)
      p.pool.push_back(ConvParams::Zeros(in_dim, out_dim, kernel, dilation));
    return p;
  }

  Index Hidden() const { return value_weight.cols(); }
  Index PoolSize() const { return static_cast<Index>(pool.size()); }
  Index InDim() const { return value_weight.rows(); }

  void Validate() const {
    if (pool.empty()) throw Error("acnn: empty filter pool");
    const Index h = Hidden();
    if (score_weight.cols() != h || value_bias.size() != h || score_bias.size() != h ||
        score_proj.size() != h || score_weight.rows() != InDim())
      throw Error("acnn: attention parameter shapes disagree");
    if (mix_weight.rows() != 2 * h || mix_weight.cols() != PoolSize() ||
        mix_bias.size() != PoolSize())
      throw Error("acnn: mixing regression must map 2H=" + std::to_string(2 * h) + " to N=" +
                  std::to_string(PoolSize()));
    for (const ConvParams& c : pool) {
      c.Validate();
      if (c.weight.rows() != pool[0].weight.rows() || c.weight.cols() != pool[0].weight.cols() ||
          c.kernel != pool[0].kernel || c.dilation != pool[0].dilation)
        throw Error("acnn: component filters do not share one shape");
    }
    if (pool[0].InDim() != InDim())
      throw Error("acnn: filter input channels differ from attention input channels");
  }
};

struct AcnnContextCache {
  Matrix values;       // e_t, T x H
  Matrix score_act;    // tanh(h W_a + b_a), T x H
  Vector alpha;        // softmax over frames
  WeightedStats stats;
};

/// c = [mu, sigma] of the value vectors e_t = h_t W_e + b_e under frame
/// weights alpha = softmax_t(v . tanh(h_t W_a + b_a)).
inline Vector AcnnContext(const Matrix& h, const AcnnParams& p, AcnnContextCache* cache = nullptr) {
  if (h.rows() < 1) throw Error("acnn_context: no frames");
  if (h.cols() != p.InDim())
    throw Error("acnn_context: input has " + std::to_string(h.cols()) + " channels, expected " +
                std::to_string(p.InDim()));
  Matrix values = h * p.value_weight;
  values.rowwise() += p.value_bias.transpose();
  Matrix pre = h * p.score_weight;
  pre.rowwise() += p.score_bias.transpose();
  Matrix act = pre.array().tanh().matrix();
  const Vector alpha = Softmax(act * p.score_proj);
  WeightedStats stats = ComputeWeightedStats(values, alpha);
  Vector context(2 * p.Hidden());
  context << stats.mean, stats.stddev;
  if (cache != nullptr) {
    cache->values = std::move(values);
    cache->score_act = std::move(act);
    cache->alpha = alpha;
    cache->stats = std::move(stats);
  }
  return context;
}

/// Accumulates attention-parameter gradients into `grad` and adds the input
/// gradient to `dh` (which must already be sized T x C_in).
inline void AcnnContextBackward(const Matrix& h, const AcnnParams& p,
                                const AcnnContextCache& cache, const Vector& dcontext,
                                AcnnParams* grad, Matrix* dh) {
  const Index hidden = p.Hidden();
  const WeightedStatsGrads sg = ComputeWeightedStatsBackward(
      cache.values, cache.alpha, cache.stats, dcontext.head(hidden), dcontext.tail(hidden));
  const Vector dscore = SoftmaxBackward(cache.alpha, sg.weights);
  const Matrix dact = dscore * p.score_proj.transpose();
  const Matrix dpre = TanhBackward(cache.score_act, dact);
  if (grad != nullptr) {
    grad->value_weight.noalias() += h.transpose() * sg.values;
    grad->value_bias += sg.values.colwise().sum().transpose();
    grad->score_proj.noalias() += cache.score_act.transpose() * dscore;
    grad->score_weight.noalias() += h.transpose() * dpre;
    grad->score_bias += dpre.colwise().sum().transpose();
  }
  if (dh != nullptr) {
    dh->noalias() += sg.values * p.value_weight.transpose();
    dh->noalias() += dpre * p.score_weight.transpose();
  }
}

/// beta = W_beta^T c + b_beta, unnormalized.
inline Vector AcnnMixingWeights(const Vector& context, const AcnnParams& p) {
  if (context.size() != p.mix_weight.rows())
    throw Error("acnn_filters: context has " + std::to_string(context.size()) +
                " entries, expected " + std::to_string(p.mix_weight.rows()));
  return p.mix_weight.transpose() * context + p.mix_bias;
}

/// sum_i beta_i * pool_i for weights and biases.
inline ConvParams MixFilters(const Vector& beta, const std::vector<ConvParams>& pool) {
  if (pool.empty()) throw Error("acnn_filters: empty filter pool");
  if (beta.size() != static_cast<Index>(pool.size()))
    throw Error("acnn_filters: " + std::to_string(beta.size()) + " mixing weights for pool of " +
                std::to_string(pool.size()));
  ConvParams mixed = ConvParams::Zeros(pool[0].InDim(), pool[0].OutDim(), pool[0].kernel,
                                       pool[0].dilation);
  for (size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].weight.rows() != mixed.weight.rows() ||
        pool[i].weight.cols() != mixed.weight.cols() || pool[i].bias.size() != mixed.bias.size())
      throw Error("acnn_filters: pool entry " + std::to_string(i) + " has inconsistent shape");
    mixed.weight += beta[static_cast<Index>(i)] * pool[i].weight;
    mixed.bias += beta[static_cast<Index>(i)] * pool[i].bias;
  }
  return mixed;
}

inline ConvParams AcnnFilters(const Vector& context, const AcnnParams& p) {
  return MixFilters(AcnnMixingWeights(context, p), p.pool);
}

struct AcnnCache {
  AcnnContextCache context_cache;
  Vector context;
  Vector beta;
  ConvParams filter;
};

/// Per-utterance adaptive convolution (context -> filters -> conv1d); the
/// nonlinearity f is applied by the caller.
inline Matrix AcnnConv(const Matrix& h, const AcnnParams& p, AcnnCache* cache = nullptr) {
  AcnnCache local;
  AcnnCache& c = cache != nullptr ? *cache : local;
  if (p.mix_override.has_value()) {
    c.beta = *p.mix_override;
  } else {
    c.context = AcnnContext(h, p, &c.context_cache);
    c.beta = AcnnMixingWeights(c.context, p);
  }
  c.filter = MixFilters(c.beta, p.pool);
  return Conv1d(h, c.filter);
}

/// Backward of filter generation given the gradient of the mixed filter.
/// Accumulates pool gradients (and, unless beta is overridden, mixing
/// gradients) into `grad`; returns dL/dcontext (empty when overridden).
inline Vector AcnnFiltersBackward(const Vector& context, const Vector& beta, const AcnnParams& p,
                                  const Matrix& dweight, const Vector& dbias, AcnnParams* grad) {
  Vector dbeta(p.PoolSize());
  for (Index i = 0; i < p.PoolSize(); ++i) {
    const ConvParams& entry = p.pool[static_cast<size_t>(i)];
    dbeta[i] = (dweight.array() * entry.weight.array()).sum() + dbias.dot(entry.bias);
    if (grad != nullptr) {
      grad->pool[static_cast<size_t>(i)].weight += beta[i] * dweight;
      grad->pool[static_cast<size_t>(i)].bias += beta[i] * dbias;
    }
  }
  if (p.mix_override.has_value()) return Vector();
  if (grad != nullptr) {
    grad->mix_weight.noalias() += context * dbeta.transpose();
    grad->mix_bias += dbeta;
  }
  return p.mix_weight * dbeta;
}

/// Returns dh; accumulates all parameter gradients into `grad`.
inline Matrix AcnnConvBackward(const Matrix& h, const AcnnParams& p, const AcnnCache& cache,
                               const Matrix& dy, AcnnParams* grad) {
  ConvGrads cg = Conv1dBackward(h, cache.filter, dy);
  Matrix dh = std::move(cg.input);
  const Vector dcontext =
      AcnnFiltersBackward(cache.context, cache.beta, p, cg.weight, cg.bias, grad);
  if (p.mix_override.has_value()) return dh;
  AcnnContextBackward(h, p, cache.context_cache, dcontext, grad, &dh);
  return dh;
}

/// ACNN layer over a batch: every utterance gets its own generated filters,
/// then `f` (activation and normalization) is applied to the whole batch.
inline Batch AcnnLayer(const Batch& h, const AcnnParams& p,
                       const std::function<Batch(const Batch&)>& f = {}) {
  p.Validate();
  Batch z;
  z.reserve(h.size());
  for (const Matrix& m : h) z.push_back(AcnnConv(m, p));
  return f ? f(z) : z;
}

// ---------------------------------------------------------------------------
// Adaptive batch normalization (ABN)

/// Frame attention context and the regressions producing per-utterance
/// scale and shift.  The fixed BN affine is replaced entirely.
struct AbnParams {
  Matrix context_weight;  // C_in x H
  Vector context_bias;    // H
  Matrix scale_weight;    // H x C
  Vector scale_bias;      // C
  Matrix shift_weight;    // H x C
  Vector shift_bias;      // C

  static AbnParams Zeros(Index in_dim, Index dim, Index hidden) {
    AbnParams p;
    p.context_weight = Matrix::Zero(in_dim, hidden);
    p.context_bias = Vector::Zero(hidden);
    p.scale_weight = Matrix::Zero(hidden, dim);
    p.scale_bias = Vector::Zero(dim);
    p.shift_weight = Matrix::Zero(hidden, dim);
    p.shift_bias = Vector::Zero(dim);
    return p;
  }

  Index Hidden() const { return context_weight.cols(); }
  Index InDim() const { return context_weight.rows(); }
  Index Dim() const { return scale_weight.cols(); }
};

struct AbnContextCache {
  Matrix act;    // tanh(h W_e + b_e), T x H
  Vector alpha;  // softmax over frames of the row means of act
};

/// c = sum_t alpha_t e_t with e_t = tanh(h_t W_e + b_e) and
/// alpha = softmax_t(mean(e_t)).
inline Vector AbnContext(const Matrix& h, const AbnParams& p, AbnContextCache* cache = nullptr) {
  if (h.rows() < 1) throw Error("abn_context: no frames");
  if (h.cols() != p.InDim())
    throw Error("abn_context: input has " + std::to_string(h.cols()) + " channels, expected " +
                std::to_string(p.InDim()));
  Matrix pre = h * p.context_weight;
  pre.rowwise() += p.context_bias.transpose();
  Matrix act = pre.array().tanh().matrix();
  const Vector alpha = Softmax(act.rowwise().mean());
  Vector context = act.transpose() * alpha;
  if (cache != nullptr) {
    cache->act = std::move(act);
    cache->alpha = alpha;
  }
  return context;
}

inline void AbnContextBackward(const Matrix& h, const AbnParams& p, const AbnContextCache& cache,
                               const Vector& dcontext, AbnParams* grad, Matrix* dh) {
  const Index hidden = p.Hidden();
  Matrix dact = cache.alpha * dcontext.transpose();
  const Vector dalpha = cache.act * dcontext;
  const Vector dscore = SoftmaxBackward(cache.alpha, dalpha);
  dact.colwise() += dscore / static_cast<double>(hidden);
  const Matrix dpre = TanhBackward(cache.act, dact);
  if (grad != nullptr) {
    grad->context_weight.noalias() += h.transpose() * dpre;
    grad->context_bias += dpre.colwise().sum().transpose();
  }
  if (dh != nullptr) dh->noalias() += dpre * p.context_weight.transpose();
}

struct AbnCache {
  NormCache norm;
  std::vector<Vector> contexts;
  std::vector<Vector> scales;
};

/// BN normalization (batch stats in training, running stats at inference)
/// followed by a per-utterance affine generated from that utterance's
/// context: gamma_u = W_gamma^T c_u + b_gamma, beta_u = W_beta^T c_u + b_beta.
/// Does not update the running statistics; see AbnApply.
inline Batch AbnTransform(const Batch& x, const BnState& state,
                          const std::vector<Vector>& contexts, const AbnParams& p, Mode mode,
                          AbnCache* cache) {
  if (contexts.size() != x.size())
    throw Error("abn_apply: " + std::to_string(contexts.size()) + " contexts for batch of " +
                std::to_string(x.size()));
  if (p.Dim() != state.Dim()) throw Error("abn_apply: generator width differs from state");
  AbnCache local;
  AbnCache& c = cache != nullptr ? *cache : local;
  Batch out = Normalize(x, state, mode, &c.norm);
  c.contexts = contexts;
  c.scales.clear();
  for (size_t u = 0; u < out.size(); ++u) {
    if (contexts[u].size() != p.Hidden())
      throw Error("abn_apply: context " + std::to_string(u) + " has wrong length");
    Vector scale = p.scale_weight.transpose() * contexts[u] + p.scale_bias;
    const Vector shift = p.shift_weight.transpose() * contexts[u] + p.shift_bias;
    out[u] = internal::Affine(out[u], scale, shift);
    c.scales.push_back(std::move(scale));
  }
  return out;
}

/// AbnTransform plus the running-statistics update in train mode.
inline Batch AbnApply(const Batch& x, BnState& state, const std::vector<Vector>& contexts,
                      const AbnParams& p, Mode mode, AbnCache* cache = nullptr) {
  AbnCache local;
  AbnCache* c = cache != nullptr ? cache : &local;
  Batch y = AbnTransform(x, state, contexts, p, mode, c);
  if (mode == Mode::kTrain) UpdateRunningStats(state, c->norm);
  return y;
}

/// Returns dx; writes per-utterance context gradients into `dcontexts`.
inline Batch AbnApplyBackward(const Batch& dy, const AbnParams& p, const AbnCache& cache,
                              AbnParams* grad, std::vector<Vector>* dcontexts) {
  Batch dxhat;
  dxhat.reserve(dy.size());
  if (dcontexts != nullptr) dcontexts->assign(dy.size(), Vector());
  for (size_t u = 0; u < dy.size(); ++u) {
    const Vector dscale = dy[u].cwiseProduct(cache.norm.xhat[u]).colwise().sum().transpose();
    const Vector dshift = dy[u].colwise().sum().transpose();
    if (grad != nullptr) {
      grad->scale_weight.noalias() += cache.contexts[u] * dscale.transpose();
      grad->scale_bias += dscale;
      grad->shift_weight.noalias() += cache.contexts[u] * dshift.transpose();
      grad->shift_bias += dshift;
    }
    if (dcontexts != nullptr) (*dcontexts)[u] = p.scale_weight * dscale + p.shift_weight * dshift;
    dxhat.emplace_back((dy[u].array().rowwise() * cache.scales[u].transpose().array()).matrix());
  }
  return NormalizeBackward(dxhat, cache.norm);
}

// ---------------------------------------------------------------------------
// Statistics pooling

/// [mean, std] over frames: weighted statistics with uniform weights.
inline Vector StatsPooling(const Matrix& h, WeightedStats* stats_out = nullptr) {
  if (h.rows() == 0) throw Error("stats_pooling: no frames");
  const Vector uniform = Vector::Constant(h.rows(), 1.0 / static_cast<double>(h.rows()));
  WeightedStats stats = ComputeWeightedStats(h, uniform);
  Vector out(2 * h.cols());
  out << stats.mean, stats.stddev;
  if (stats_out != nullptr) *stats_out = std::move(stats);
  return out;
}

inline Matrix StatsPoolingBackward(const Matrix& h, const WeightedStats& stats,
                                   const Vector& dpooled) {
  const Index c = h.cols();
  const Vector uniform = Vector::Constant(h.rows(), 1.0 / static_cast<double>(h.rows()));
  return ComputeWeightedStatsBackward(h, uniform, stats, dpooled.head(c), dpooled.tail(c)).values;
}

}  // namespace axvec
