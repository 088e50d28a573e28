// include/axvec/training.h

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

#include <cmath>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "axvec/data.h"
#include "axvec/model.h"

namespace axvec {

struct TrainConfig {
  int batch_size = 32;
  int crop_frames_min = 50;
  int crop_frames_max = 100;
  double lr_start = 1e-3;
  double lr_end = 1e-4;
  int total_steps = 600;
  double weight_decay = 1e-4;  // L2 coefficient on weights (not biases or norm affines)
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  uint64_t seed = 1;
  int checkpoint_every = 0;  // 0: only the final checkpoint

  void Validate() const {
    if (batch_size < 1) throw Error("train: batch_size must be >= 1");
    if (crop_frames_min < 1 || crop_frames_min > crop_frames_max)
      throw Error("train: need 1 <= crop_frames_min <= crop_frames_max");
    if (!(lr_end > 0.0 && lr_start >= lr_end)) throw Error("train: need lr_start >= lr_end > 0");
    if (total_steps < 1) throw Error("train: total_steps must be >= 1");
    if (weight_decay < 0.0) throw Error("train: weight_decay must be >= 0");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
      throw Error("train: adam betas must lie in [0, 1)");
    if (!(adam_epsilon > 0.0)) throw Error("train: adam_epsilon must be positive");
    if (checkpoint_every < 0) throw Error("train: checkpoint_every must be >= 0");
  }

  json ToJson() const {
    return json{{"batch_size", batch_size},       {"crop_frames_min", crop_frames_min},
                {"crop_frames_max", crop_frames_max}, {"lr_start", lr_start},
                {"lr_end", lr_end},               {"total_steps", total_steps},
                {"weight_decay", weight_decay},   {"adam_beta1", adam_beta1},
                {"adam_beta2", adam_beta2},       {"adam_epsilon", adam_epsilon},
                {"seed", seed},                   {"checkpoint_every", checkpoint_every}};
  }

  static TrainConfig FromJson(const json& j) { return FromJson(j, TrainConfig()); }
  static TrainConfig FromJson(const json& j, TrainConfig base) {
    RejectUnknownKeys(j,
                      {"batch_size", "crop_frames_min", "crop_frames_max", "lr_start", "lr_end",
                       "total_steps", "weight_decay", "adam_beta1", "adam_beta2", "adam_epsilon",
                       "seed", "checkpoint_every"},
                      "train");
    ReadKey(j, "batch_size", base.batch_size);
    ReadKey(j, "crop_frames_min", base.crop_frames_min);
    ReadKey(j, "crop_frames_max", base.crop_frames_max);
    ReadKey(j, "lr_start", base.lr_start);
    ReadKey(j, "lr_end", base.lr_end);
    ReadKey(j, "total_steps", base.total_steps);
    ReadKey(j, "weight_decay", base.weight_decay);
    ReadKey(j, "adam_beta1", base.adam_beta1);
    ReadKey(j, "adam_beta2", base.adam_beta2);
    ReadKey(j, "adam_epsilon", base.adam_epsilon);
    ReadKey(j, "seed", base.seed);
    ReadKey(j, "checkpoint_every", base.checkpoint_every);
    return base;
  }
};

/// Exponential decay from lr_start at step 0 to lr_end at the last step.
inline double LearningRate(const TrainConfig& cfg, int step) {
  if (cfg.total_steps <= 1) return cfg.lr_start;
  const double frac =
      static_cast<double>(std::clamp(step, 0, cfg.total_steps - 1)) / (cfg.total_steps - 1);
  return cfg.lr_start * std::pow(cfg.lr_end / cfg.lr_start, frac);
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<Vector> first;
  std::vector<Vector> second;
  int64_t step = 0;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

/// One bias-corrected Adam update.  L2 decay adds weight_decay * w to the
/// gradient of every parameter flagged for decay before the moment updates.
/// Gradients are checked before anything is modified.
inline void AdamStep(const std::vector<ParamRef>& params, AdamState& state, double lr,
                     const AdamOptions& opt) {
  for (const ParamRef& p : params)
    for (Index i = 0; i < p.size; ++i)
      if (!std::isfinite(p.grad[i])) throw Error("non-finite gradient in parameter " + p.name);
  if (state.first.empty()) {
    for (const ParamRef& p : params) {
      state.first.push_back(Vector::Zero(p.size));
      state.second.push_back(Vector::Zero(p.size));
    }
  }
  if (state.first.size() != params.size()) throw Error("adam: parameter list changed");
  ++state.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (size_t k = 0; k < params.size(); ++k) {
    const ParamRef& p = params[k];
    Vector& m = state.first[k];
    Vector& v = state.second[k];
    if (m.size() != p.size) throw Error("adam: shape mismatch for " + p.name);
    const double decay = p.decay ? opt.weight_decay : 0.0;
    for (Index i = 0; i < p.size; ++i) {
      const double g = p.grad[i] + decay * p.value[i];
      m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
      v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
      p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Loss

struct CrossEntropy {
  double loss = 0.0;  // mean over the batch
  Matrix dlogits;     // gradient of the mean loss
  int correct = 0;
};

inline CrossEntropy SoftmaxCrossEntropy(const Matrix& logits, const std::vector<int>& labels) {
  if (static_cast<size_t>(logits.rows()) != labels.size())
    throw Error("cross entropy: label count does not match batch");
  CrossEntropy ce;
  ce.dlogits.resize(logits.rows(), logits.cols());
  const double inv = 1.0 / static_cast<double>(logits.rows());
  for (Index r = 0; r < logits.rows(); ++r) {
    const int y = labels[static_cast<size_t>(r)];
    if (y < 0 || y >= logits.cols()) throw Error("cross entropy: label out of range");
    const double mx = logits.row(r).maxCoeff();
    const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    ce.loss += (lse - logits(r, y)) * inv;
    ce.dlogits.row(r) = (logits.row(r).array() - lse).exp() * inv;
    ce.dlogits(r, y) -= inv;
    Index arg;
    logits.row(r).maxCoeff(&arg);
    if (arg == y) ++ce.correct;
  }
  return ce;
}

// ---------------------------------------------------------------------------
// Batching

struct TrainBatch {
  Batch features;
  std::vector<int> labels;
};

/// Copies `length` frames starting at `offset`, wrapping around to frame 0
/// when the utterance runs out.
inline Matrix CropWrap(const Matrix& x, Index offset, Index length) {
  Matrix out(length, x.cols());
  for (Index t = 0; t < length; ++t) out.row(t) = x.row((offset + t) % x.rows());
  return out;
}

/// One epoch of batches.  Utterances are shuffled, grouped into batches of
/// batch_size (the last may be smaller), and every batch is cropped to one
/// shared length drawn from [crop_frames_min, crop_frames_max].  Utterances
/// shorter than the crop are wrap-padded from their first frame.
inline std::vector<TrainBatch> MakeBatches(const std::vector<const Matrix*>& features,
                                           const std::vector<int>& labels,
                                           const TrainConfig& cfg, uint64_t epoch_seed,
                                           int min_frames) {
  cfg.Validate();
  if (features.empty()) throw Error("make_batches: empty corpus");
  if (features.size() != labels.size()) throw Error("make_batches: label count mismatch");
  if (cfg.crop_frames_min < min_frames)
    throw Error("make_batches: crop_frames_min " + std::to_string(cfg.crop_frames_min) +
                " is below the receptive-field minimum " + std::to_string(min_frames));
  for (size_t i = 0; i < features.size(); ++i)
    if (features[i]->rows() < min_frames)
      throw Error("make_batches: utterance " + std::to_string(i) + " has " +
                  std::to_string(features[i]->rows()) + " frames, fewer than the minimum " +
                  std::to_string(min_frames));
  Rng rng(epoch_seed);
  std::vector<size_t> order(features.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.Shuffle(order);
  std::vector<TrainBatch> batches;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
    const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
    const Index length = rng.Between(cfg.crop_frames_min, cfg.crop_frames_max);
    TrainBatch b;
    for (size_t k = start; k < end; ++k) {
      const Matrix& x = *features[order[k]];
      const Index offset = x.rows() > length ? rng.Below(static_cast<uint64_t>(x.rows() - length + 1)) : 0;
      b.features.push_back(CropWrap(x, offset, length));
      b.labels.push_back(labels[order[k]]);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Training loop

struct StepRecord {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;
  int epoch = 0;
};

struct TrainLog {
  std::vector<StepRecord> steps;

  /// Mean loss over the steps of one epoch.
  double EpochMeanLoss(int epoch) const {
    double sum = 0.0;
    int n = 0;
    for (const StepRecord& r : steps)
      if (r.epoch == epoch) {
        sum += r.loss;
        ++n;
      }
    if (n == 0) throw Error("no steps logged for epoch " + std::to_string(epoch));
    return sum / n;
  }

  double EpochMeanAccuracy(int epoch) const {
    double sum = 0.0;
    int n = 0;
    for (const StepRecord& r : steps)
      if (r.epoch == epoch) {
        sum += r.accuracy;
        ++n;
      }
    if (n == 0) throw Error("no steps logged for epoch " + std::to_string(epoch));
    return sum / n;
  }

  int LastEpoch() const { return steps.empty() ? -1 : steps.back().epoch; }
};

inline void WriteLogLine(std::ostream& os, const StepRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d\t%.6e\t%.6f\t%.4f\n", r.step, r.lr, r.loss, r.accuracy);
  os << buf;
}

/// Speaker labels from the corpus' sorted speaker list.
inline std::vector<int> CorpusLabels(const Corpus& corpus) {
  const auto map = corpus.SpeakerLabels();
  std::vector<int> labels;
  for (const Utterance& u : corpus.utterances) labels.push_back(map.at(u.speaker));
  return labels;
}

/// Trains in place for cfg.total_steps steps.  `on_checkpoint` runs every
/// checkpoint_every steps and after the last step.
inline TrainLog Train(Model& model, const Corpus& corpus, const TrainConfig& cfg,
                      std::ostream* log = nullptr,
                      const std::function<void(int, const Model&)>& on_checkpoint = {}) {
  cfg.Validate();
  std::vector<const Matrix*> feats;
  for (const Utterance& u : corpus.utterances) feats.push_back(&u.features);
  const std::vector<int> labels = CorpusLabels(corpus);
  const int classes = static_cast<int>(corpus.Speakers().size());
  if (classes > model.config.num_speakers)
    throw Error("train: corpus has " + std::to_string(classes) + " speakers but the model has " +
                std::to_string(model.config.num_speakers) + " outputs");
  const AdamOptions opt{cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon, cfg.weight_decay};
  AdamState adam;
  TrainLog out;
  std::vector<ParamRef> params = model.Parameters();
  int step = 0;
  for (int epoch = 0; step < cfg.total_steps; ++epoch) {
    const std::vector<TrainBatch> batches =
        MakeBatches(feats, labels, cfg, DeriveSeed(cfg.seed, static_cast<uint64_t>(epoch)),
                    model.config.MinFrames());
    for (const TrainBatch& b : batches) {
      if (step >= cfg.total_steps) break;
      Tape tape;
      const Matrix logits = Forward(model, b.features, Mode::kTrain, Head::kLogits, &tape);
      const CrossEntropy ce = SoftmaxCrossEntropy(logits, b.labels);
      if (!std::isfinite(ce.loss))
        throw Error("non-finite loss at step " + std::to_string(step));
      model.ZeroGrad();
      Backward(model, tape, ce.dlogits);
      CommitRunningStats(model, tape);
      const double lr = LearningRate(cfg, step);
      AdamStep(params, adam, lr, opt);
      StepRecord r{step, lr, ce.loss,
                   static_cast<double>(ce.correct) / static_cast<double>(b.labels.size()), epoch};
      out.steps.push_back(r);
      if (log != nullptr) WriteLogLine(*log, r);
      ++step;
      if (on_checkpoint && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 &&
          step < cfg.total_steps)
        on_checkpoint(step, model);
    }
  }
  if (on_checkpoint) on_checkpoint(step, model);
  return out;
}

}  // namespace axvec
