// tests/grad_suite.h

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

// Central finite-difference checks of every differentiable component.  Each
// function returns one entry per checked tensor so that the unit tests and
// the acceptance run share a single definition.

#include <string>
#include <vector>

#include "axvec/layers.h"
#include "axvec/model.h"
#include "axvec/training.h"
#include "grad_check.h"

namespace axvec::testing {

inline constexpr double kLayerTolerance = 1e-5;
inline constexpr double kModelTolerance = 1e-4;
inline constexpr double kLayerStep = 1e-6;
// Infer-mode attention gradients are small enough that roundoff dominates
// at 1e-6 in the full model.
inline constexpr double kModelStep = 1e-5;

struct GradCheck {
  std::string name;
  double error = 0.0;
  double tolerance = kLayerTolerance;
  bool Passed() const { return error < tolerance; }
};

using GradChecks = std::vector<GradCheck>;

class GradRecorder {
 public:
  GradRecorder(std::string prefix, std::function<double()> loss, double tol = kLayerTolerance,
               double step = kLayerStep)
      : prefix_(std::move(prefix)), loss_(std::move(loss)), tol_(tol), step_(step) {}

  template <typename A, typename B>
  void Check(const std::string& name, A& value, const B& grad) {
    if (value.size() != grad.size()) throw Error("gradient shape mismatch for " + name);
    out_.push_back({prefix_ + "." + name,
                    GradRelError(loss_, value.data(), value.size(), grad.data(), step_), tol_});
  }
  void Check(const std::string& name, double* value, Index n, const double* grad) {
    out_.push_back({prefix_ + "." + name, GradRelError(loss_, value, n, grad, step_), tol_});
  }
  GradChecks Take() { return std::move(out_); }

 private:
  std::string prefix_;
  std::function<double()> loss_;
  double tol_, step_;
  GradChecks out_;
};

inline void Append(GradChecks& into, GradChecks more) {
  for (GradCheck& c : more) into.push_back(std::move(c));
}

inline double BatchProbe(const Batch& y, const Batch& probe) {
  double acc = 0.0;
  for (size_t u = 0; u < y.size(); ++u) acc += (y[u].array() * probe[u].array()).sum();
  return acc;
}

inline AcnnParams RandomAcnnParams(Index in, Index out, int k, int d, Index hidden, Index n,
                                   Rng& rng) {
  AcnnParams p = AcnnParams::Zeros(in, out, k, d, hidden, n);
  p.value_weight = RandomMatrix(in, hidden, rng, 0.5);
  p.value_bias = RandomVector(hidden, rng, 0.5);
  p.score_weight = RandomMatrix(in, hidden, rng, 0.5);
  p.score_bias = RandomVector(hidden, rng, 0.5);
  p.score_proj = RandomVector(hidden, rng, 0.5);
  p.mix_weight = RandomMatrix(2 * hidden, n, rng, 0.5);
  p.mix_bias = RandomVector(n, rng, 0.5);
  for (ConvParams& c : p.pool) {
    c.weight = RandomMatrix(k * in, out, rng, 0.5);
    c.bias = RandomVector(out, rng, 0.5);
  }
  return p;
}

inline AbnParams RandomAbnParams(Index in, Index dim, Index hidden, Rng& rng) {
  AbnParams p = AbnParams::Zeros(in, dim, hidden);
  p.context_weight = RandomMatrix(in, hidden, rng, 0.5);
  p.context_bias = RandomVector(hidden, rng, 0.5);
  p.scale_weight = RandomMatrix(hidden, dim, rng, 0.5);
  p.scale_bias = RandomVector(dim, rng, 0.5);
  p.shift_weight = RandomMatrix(hidden, dim, rng, 0.5);
  p.shift_bias = RandomVector(dim, rng, 0.5);
  return p;
}

// --- static layers --------------------------------------------------------

inline GradChecks Conv1dGradChecks() {
  GradChecks out;
  Rng rng(6);
  struct Shape {
    const char* tag;
    Index t, in, out;
    int k, d;
  };
  for (const Shape& s : {Shape{"conv1d", 4, 3, 2, 2, 1}, Shape{"conv1d_dilated", 11, 2, 3, 3, 3}}) {
    Matrix in = RandomMatrix(s.t, s.in, rng);
    ConvParams p = ConvParams::Zeros(s.in, s.out, s.k, s.d);
    p.weight = RandomMatrix(s.k * s.in, s.out, rng);
    p.bias = RandomVector(s.out, rng);
    const Matrix probe = RandomMatrix(s.t - (s.k - 1) * s.d, s.out, rng);
    GradRecorder r(s.tag, [&] { return (Conv1d(in, p).array() * probe.array()).sum(); });
    const ConvGrads g = Conv1dBackward(in, p, probe);
    r.Check("input", in, g.input);
    r.Check("weight", p.weight, g.weight);
    r.Check("bias", p.bias, g.bias);
    Append(out, r.Take());
  }
  return out;
}

/// Utterance-level affine + ReLU on pooled vectors (rows are utterances).
inline GradChecks DenseGradChecks() {
  Rng rng(21);
  Matrix v = RandomMatrix(5, 6, rng);
  ConvParams p = ConvParams::Zeros(6, 4);
  p.weight = RandomMatrix(6, 4, rng);
  p.bias = RandomVector(4, rng);
  const Matrix probe = RandomMatrix(5, 4, rng);
  GradRecorder r("dense", [&] { return (Relu(Conv1d(v, p)).array() * probe.array()).sum(); });
  const Matrix a = Relu(Conv1d(v, p));
  const ConvGrads g = Conv1dBackward(v, p, ReluBackward(a, probe));
  r.Check("input", v, g.input);
  r.Check("weight", p.weight, g.weight);
  r.Check("bias", p.bias, g.bias);
  return r.Take();
}

inline GradChecks BatchNormGradChecks() {
  GradChecks out;
  Rng rng(4);
  for (Mode mode : {Mode::kTrain, Mode::kInfer}) {
    BnState s = BnState::Init(3);
    s.gamma = RandomVector(3, rng);
    s.beta = RandomVector(3, rng);
    s.SetRunningStats(RandomVector(3, rng), (RandomVector(3, rng).array().abs() + 0.5).matrix());
    Batch x{RandomMatrix(4, 3, rng), RandomMatrix(3, 3, rng)};
    const Batch probe{RandomMatrix(4, 3, rng), RandomMatrix(3, 3, rng)};
    GradRecorder r(mode == Mode::kTrain ? "batchnorm_train" : "batchnorm_infer",
                   [&] { return BatchProbe(BnTransform(x, s, mode, nullptr), probe); });
    BnCache cache;
    BnTransform(x, s, mode, &cache);
    BnState grad = BnState::Init(3);
    grad.gamma.setZero();
    grad.beta.setZero();
    const Batch dx = BatchNormBackward(probe, s, cache, &grad);
    for (size_t u = 0; u < x.size(); ++u) r.Check("input" + std::to_string(u), x[u], dx[u]);
    r.Check("gamma", s.gamma, grad.gamma);
    r.Check("beta", s.beta, grad.beta);
    Append(out, r.Take());
  }
  return out;
}

inline GradChecks PoolingGradChecks() {
  GradChecks out;
  Rng rng(20);
  {
    Matrix h = RandomMatrix(6, 3, rng);
    const Vector probe = RandomVector(6, rng);
    GradRecorder r("stats_pooling", [&] { return StatsPooling(h).dot(probe); });
    WeightedStats stats;
    StatsPooling(h, &stats);
    const Matrix dh = StatsPoolingBackward(h, stats, probe);
    r.Check("input", h, dh);
    Append(out, r.Take());
  }
  {
    // Attention-weighted statistics; weights go through a softmax so the
    // perturbation stays on the simplex.
    Matrix values = RandomMatrix(5, 4, rng);
    Vector logits = RandomVector(5, rng);
    const Vector pm = RandomVector(4, rng), ps = RandomVector(4, rng);
    GradRecorder r("weighted_stats", [&] {
      const WeightedStats s = ComputeWeightedStats(values, Softmax(logits));
      return s.mean.dot(pm) + s.stddev.dot(ps);
    });
    const Vector w = Softmax(logits);
    const WeightedStats s = ComputeWeightedStats(values, w);
    const WeightedStatsGrads g = ComputeWeightedStatsBackward(values, w, s, pm, ps);
    const Vector dlogits = SoftmaxBackward(w, g.weights);
    r.Check("values", values, g.values);
    r.Check("logits", logits, dlogits);
    Append(out, r.Take());
  }
  return out;
}

inline GradChecks ElementwiseGradChecks() {
  GradChecks out;
  Rng rng(13);
  Matrix x = RandomMatrix(4, 3, rng);
  const Matrix probe = RandomMatrix(4, 3, rng);
  {
    GradRecorder r("tanh", [&] { return (x.array().tanh() * probe.array()).sum(); });
    const Matrix g = TanhBackward(x.array().tanh().matrix(), probe);
    r.Check("input", x, g);
    Append(out, r.Take());
  }
  // Keep entries away from the kink.
  for (Index i = 0; i < x.size(); ++i)
    if (std::abs(x.data()[i]) < 1e-3) x.data()[i] = 0.5;
  {
    GradRecorder r("relu", [&] { return (Relu(x).array() * probe.array()).sum(); });
    const Matrix g = ReluBackward(Relu(x), probe);
    r.Check("input", x, g);
    Append(out, r.Take());
  }
  return out;
}

inline GradChecks SoftmaxCeGradChecks() {
  GradChecks out;
  Rng rng(9);
  {
    Vector x = RandomVector(6, rng);
    const Vector probe = RandomVector(6, rng);
    GradRecorder r("softmax", [&] { return Softmax(x).dot(probe); });
    const Vector g = SoftmaxBackward(Softmax(x), probe);
    r.Check("logits", x, g);
    Append(out, r.Take());
  }
  {
    Matrix logits = RandomMatrix(4, 5, rng);
    const std::vector<int> labels{0, 3, 4, 3};
    GradRecorder r("softmax_ce", [&] { return SoftmaxCrossEntropy(logits, labels).loss; });
    const CrossEntropy ce = SoftmaxCrossEntropy(logits, labels);
    r.Check("logits", logits, ce.dlogits);
    Append(out, r.Take());
  }
  return out;
}

// --- adaptive layers ------------------------------------------------------

inline GradChecks AcnnContextGradChecks() {
  Rng rng(15);
  AcnnParams p = RandomAcnnParams(3, 2, 1, 1, 4, 3, rng);
  Matrix h = RandomMatrix(7, 3, rng);
  const Vector probe = RandomVector(8, rng);
  GradRecorder r("acnn_context", [&] { return AcnnContext(h, p).dot(probe); });
  AcnnContextCache cache;
  AcnnContext(h, p, &cache);
  AcnnParams grad = AcnnParams::Zeros(3, 2, 1, 1, 4, 3);
  Matrix dh = Matrix::Zero(7, 3);
  AcnnContextBackward(h, p, cache, probe, &grad, &dh);
  r.Check("input", h, dh);
  r.Check("value_weight", p.value_weight, grad.value_weight);
  r.Check("value_bias", p.value_bias, grad.value_bias);
  r.Check("score_weight", p.score_weight, grad.score_weight);
  r.Check("score_bias", p.score_bias, grad.score_bias);
  r.Check("score_proj", p.score_proj, grad.score_proj);
  return r.Take();
}

inline GradChecks AcnnFiltersGradChecks() {
  Rng rng(16);
  AcnnParams p = RandomAcnnParams(3, 2, 2, 1, 4, 3, rng);
  Vector context = RandomVector(8, rng);
  const Matrix pw = RandomMatrix(6, 2, rng);
  const Vector pb = RandomVector(2, rng);
  GradRecorder r("acnn_filters", [&] {
    const ConvParams f = AcnnFilters(context, p);
    return (f.weight.array() * pw.array()).sum() + f.bias.dot(pb);
  });
  AcnnParams grad = AcnnParams::Zeros(3, 2, 2, 1, 4, 3);
  const Vector beta = AcnnMixingWeights(context, p);
  const Vector dcontext = AcnnFiltersBackward(context, beta, p, pw, pb, &grad);
  r.Check("context", context, dcontext);
  r.Check("mix_weight", p.mix_weight, grad.mix_weight);
  r.Check("mix_bias", p.mix_bias, grad.mix_bias);
  for (size_t i = 0; i < p.pool.size(); ++i) {
    r.Check("pool" + std::to_string(i) + ".weight", p.pool[i].weight, grad.pool[i].weight);
    r.Check("pool" + std::to_string(i) + ".bias", p.pool[i].bias, grad.pool[i].bias);
  }
  return r.Take();
}

inline GradChecks AcnnLayerGradChecks() {
  Rng rng(14);
  AcnnParams p = RandomAcnnParams(3, 2, 2, 2, 4, 3, rng);
  Matrix h = RandomMatrix(7, 3, rng);
  const Matrix probe = RandomMatrix(5, 2, rng);
  GradRecorder r("acnn_layer", [&] { return (AcnnConv(h, p).array() * probe.array()).sum(); });
  AcnnCache cache;
  AcnnConv(h, p, &cache);
  AcnnParams grad = AcnnParams::Zeros(3, 2, 2, 2, 4, 3);
  const Matrix dh = AcnnConvBackward(h, p, cache, probe, &grad);
  r.Check("input", h, dh);
  r.Check("value_weight", p.value_weight, grad.value_weight);
  r.Check("value_bias", p.value_bias, grad.value_bias);
  r.Check("score_weight", p.score_weight, grad.score_weight);
  r.Check("score_bias", p.score_bias, grad.score_bias);
  r.Check("score_proj", p.score_proj, grad.score_proj);
  r.Check("mix_weight", p.mix_weight, grad.mix_weight);
  r.Check("mix_bias", p.mix_bias, grad.mix_bias);
  for (size_t i = 0; i < p.pool.size(); ++i) {
    r.Check("pool" + std::to_string(i) + ".weight", p.pool[i].weight, grad.pool[i].weight);
    r.Check("pool" + std::to_string(i) + ".bias", p.pool[i].bias, grad.pool[i].bias);
  }
  return r.Take();
}

inline GradChecks AbnGradChecks() {
  GradChecks out;
  Rng rng(18);
  for (Mode mode : {Mode::kTrain, Mode::kInfer}) {
    AbnParams p = RandomAbnParams(3, 2, 4, rng);
    BnState s = BnState::Init(2);
    s.SetRunningStats(RandomVector(2, rng), Vector::Constant(2, 1.5));
    // The layer input feeds the context; x is the tensor being normalized.
    Batch h{RandomMatrix(5, 3, rng), RandomMatrix(5, 3, rng)};
    Batch x{RandomMatrix(4, 2, rng), RandomMatrix(4, 2, rng)};
    const Batch probe{RandomMatrix(4, 2, rng), RandomMatrix(4, 2, rng)};
    GradRecorder r(mode == Mode::kTrain ? "abn_train" : "abn_infer", [&] {
      std::vector<Vector> ctx;
      for (const Matrix& m : h) ctx.push_back(AbnContext(m, p));
      return BatchProbe(AbnTransform(x, s, ctx, p, mode, nullptr), probe);
    });
    std::vector<AbnContextCache> cc(2);
    std::vector<Vector> ctx;
    for (size_t u = 0; u < 2; ++u) ctx.push_back(AbnContext(h[u], p, &cc[u]));
    AbnCache cache;
    AbnTransform(x, s, ctx, p, mode, &cache);
    AbnParams grad = AbnParams::Zeros(3, 2, 4);
    std::vector<Vector> dctx;
    const Batch dx = AbnApplyBackward(probe, p, cache, &grad, &dctx);
    Batch dh{Matrix::Zero(5, 3), Matrix::Zero(5, 3)};
    for (size_t u = 0; u < 2; ++u) AbnContextBackward(h[u], p, cc[u], dctx[u], &grad, &dh[u]);
    for (size_t u = 0; u < 2; ++u) {
      r.Check("input" + std::to_string(u), x[u], dx[u]);
      r.Check("context_input" + std::to_string(u), h[u], dh[u]);
    }
    r.Check("context_weight", p.context_weight, grad.context_weight);
    r.Check("context_bias", p.context_bias, grad.context_bias);
    r.Check("scale_weight", p.scale_weight, grad.scale_weight);
    r.Check("scale_bias", p.scale_bias, grad.scale_bias);
    r.Check("shift_weight", p.shift_weight, grad.shift_weight);
    r.Check("shift_bias", p.shift_bias, grad.shift_bias);
    Append(out, r.Take());
  }
  return out;
}

// --- end to end -----------------------------------------------------------

inline ArchConfig TinyArch(Variant v) {
  ArchConfig c;
  c.input_dim = 3;
  c.frame_dims = {4, 4, 3, 4, 5};
  c.kernel_sizes = {2, 2, 1, 1, 1};
  c.dilations = {1, 2, 1, 1, 1};
  c.utterance_dims = {4, 3};
  c.num_speakers = 2;
  c.attention_hidden = 3;
  c.pool_size = 2;
  c.variant = v;
  return c;
}

inline Batch RandomInputBatch(const ArchConfig& c, const std::vector<Index>& lengths, Rng& rng) {
  Batch b;
  for (Index t : lengths) b.push_back(RandomMatrix(t, c.input_dim, rng));
  return b;
}

/// One train-mode step's running-statistics update (no parameter change).
inline void CommitOneBatch(Model& m, const Batch& x) {
  Tape tape;
  Forward(m, x, Mode::kTrain, Head::kLogits, &tape);
  CommitRunningStats(m, tape);
}

inline GradChecks ModelGradChecks(Variant v, Mode mode) {
  const ArchConfig c = TinyArch(v);
  Model m = BuildModel(c, 31);
  Rng rng(32);
  if (mode == Mode::kInfer) {
    CommitOneBatch(m, RandomInputBatch(c, {9, 10, 11}, rng));
    // Move running stats away from their initial values.
    for (FrameLayer& l : m.net.frame) l.norm.running_var.array() += 0.3;
  }
  // Non-trivial mixing and normalization parameters.
  for (ParamRef& r : m.Parameters())
    for (Index i = 0; i < r.size; ++i) r.value[i] += 0.1 * rng.Normal();
  const Batch x = RandomInputBatch(c, {9, 11, 10}, rng);
  const Matrix weight = RandomMatrix(3, c.num_speakers, rng);
  GradRecorder rec(
      "model_" + VariantName(v) + (mode == Mode::kTrain ? "_train" : "_infer"),
      [&] { return (Forward(m, x, mode, Head::kLogits).array() * weight.array()).sum(); },
      kModelTolerance, kModelStep);
  m.ZeroGrad();
  Tape tape;
  Forward(m, x, mode, Head::kLogits, &tape);
  Backward(m, tape, weight);
  for (ParamRef& r : m.Parameters()) rec.Check(r.name, r.value, r.size, r.grad);
  return rec.Take();
}

inline GradChecks ModelGradChecksAllVariants() {
  GradChecks out;
  for (Variant v : {Variant::kBaseline, Variant::kAcnn, Variant::kAbn, Variant::kAcnnAbn})
    for (Mode mode : {Mode::kTrain, Mode::kInfer}) Append(out, ModelGradChecks(v, mode));
  return out;
}

/// Every component check, layer by layer, then the end-to-end model.
inline GradChecks FullGradSuite() {
  GradChecks out;
  Append(out, Conv1dGradChecks());
  Append(out, DenseGradChecks());
  Append(out, BatchNormGradChecks());
  Append(out, PoolingGradChecks());
  Append(out, ElementwiseGradChecks());
  Append(out, SoftmaxCeGradChecks());
  Append(out, AcnnContextGradChecks());
  Append(out, AcnnFiltersGradChecks());
  Append(out, AcnnLayerGradChecks());
  Append(out, AbnGradChecks());
  Append(out, ModelGradChecksAllVariants());
  return out;
}

}  // namespace axvec::testing
