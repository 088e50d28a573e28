// include/axvec/model.h

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

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "axvec/layers.h"
#include "axvec/records.h"

namespace axvec {

using json = nlohmann::json;

/// Throws unless every key of `obj` is in `allowed`.
inline void RejectUnknownKeys(const json& obj, const std::set<std::string>& allowed,
                              const std::string& section) {
  if (!obj.is_object()) throw Error("config section '" + section + "' must be an object");
  for (auto it = obj.begin(); it != obj.end(); ++it)
    if (!allowed.count(it.key()))
      throw Error("unknown key '" + it.key() + "' in config section '" + section + "'");
}

template <typename T>
void ReadKey(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(std::string("config key '") + key + "': " + e.what());
  }
}

enum class Variant { kBaseline, kAcnn, kAbn, kAcnnAbn };

inline std::string VariantName(Variant v) {
  switch (v) {
    case Variant::kBaseline: return "baseline";
    case Variant::kAcnn: return "acnn";
    case Variant::kAbn: return "abn";
    case Variant::kAcnnAbn: return "acnn-abn";
  }
  return "?";
}

inline Variant ParseVariant(const std::string& s) {
  if (s == "baseline" || s == "x-vector" || s == "xvector") return Variant::kBaseline;
  if (s == "acnn") return Variant::kAcnn;
  if (s == "abn") return Variant::kAbn;
  if (s == "acnn-abn" || s == "acnn_abn") return Variant::kAcnnAbn;
  throw Error("unknown architecture '" + s + "' (expected baseline|acnn|abn|acnn-abn)");
}

/// Network shape.  Defaults are the full-size x-vector: five frame-level
/// layers (kernels 5,3,3,1,1; dilations 1,2,3,1,1; 512 channels except 1536
/// in the fifth), statistics pooling, two 512-wide utterance-level layers.
struct ArchConfig {
  int input_dim = 30;
  std::vector<int> frame_dims{512, 512, 512, 512, 1536};
  std::vector<int> kernel_sizes{5, 3, 3, 1, 1};
  std::vector<int> dilations{1, 2, 3, 1, 1};
  std::vector<int> utterance_dims{512, 512};
  int num_speakers = 2;
  int embedding_layer = 1;  // 1-based utterance-level affine whose pre-activation is the x-vector
  Variant variant = Variant::kBaseline;
  int acnn_layer = 4;  // 1-based frame-level layer
  int attention_hidden = 256;
  int pool_size = 4;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;

  int NumFrameLayers() const { return static_cast<int>(frame_dims.size()); }

  void Validate() const {
    if (frame_dims.size() != 5 || kernel_sizes.size() != 5 || dilations.size() != 5)
      throw Error("arch: frame_dims, kernel_sizes and dilations must each have 5 entries (got " +
                  std::to_string(frame_dims.size()) + ", " + std::to_string(kernel_sizes.size()) +
                  ", " + std::to_string(dilations.size()) + ")");
    if (input_dim < 1) throw Error("arch: input_dim must be positive");
    for (int i = 0; i < 5; ++i) {
      if (frame_dims[i] < 1) throw Error("arch: frame_dims must be positive");
      if (kernel_sizes[i] < 1) throw Error("arch: kernel sizes must be >= 1");
      if (dilations[i] < 1) throw Error("arch: dilations must be >= 1");
    }
    if (utterance_dims.empty()) throw Error("arch: need at least one utterance-level layer");
    for (int d : utterance_dims)
      if (d < 1) throw Error("arch: utterance_dims must be positive");
    if (num_speakers < 2) throw Error("arch: num_speakers must be >= 2");
    if (embedding_layer < 1 || embedding_layer > static_cast<int>(utterance_dims.size()))
      throw Error("arch: embedding_layer out of range");
    if (acnn_layer < 1 || acnn_layer > 5) throw Error("arch: acnn_layer must be in [1, 5]");
    if (attention_hidden < 1) throw Error("arch: attention_hidden must be positive");
    if (pool_size < 1) throw Error("arch: pool_size must be >= 1");
    if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) throw Error("arch: bn_momentum in (0,1)");
    if (!(bn_epsilon > 0.0)) throw Error("arch: bn_epsilon must be positive");
  }

  /// Frames lost across the frame-level stack (14 for the default kernels).
  int Shrinkage() const {
    int total = 0;
    for (size_t i = 0; i < kernel_sizes.size(); ++i) total += (kernel_sizes[i] - 1) * dilations[i];
    return total;
  }
  int MinFrames() const { return Shrinkage() + 1; }

  bool AdaptiveConv(int layer) const {
    return (variant == Variant::kAcnn || variant == Variant::kAcnnAbn) && layer == acnn_layer;
  }
  bool AdaptiveNorm(int layer) const {
    return variant == Variant::kAbn || (variant == Variant::kAcnnAbn && layer != acnn_layer);
  }
  int EmbeddingDim() const { return utterance_dims[static_cast<size_t>(embedding_layer - 1)]; }

  json ToJson() const {
    return json{{"input_dim", input_dim},
                {"frame_dims", frame_dims},
                {"kernel_sizes", kernel_sizes},
                {"dilations", dilations},
                {"utterance_dims", utterance_dims},
                {"num_speakers", num_speakers},
                {"embedding_layer", embedding_layer},
                {"variant", VariantName(variant)},
                {"acnn_layer", acnn_layer},
                {"attention_hidden", attention_hidden},
                {"pool_size", pool_size},
                {"bn_momentum", bn_momentum},
                {"bn_epsilon", bn_epsilon}};
  }

  /// Overlays keys from `j` onto `base`; unknown keys are rejected.
  static ArchConfig FromJson(const json& j) { return FromJson(j, ArchConfig()); }
  static ArchConfig FromJson(const json& j, ArchConfig base) {
    RejectUnknownKeys(j,
                      {"input_dim", "frame_dims", "kernel_sizes", "dilations", "utterance_dims",
                       "num_speakers", "embedding_layer", "variant", "acnn_layer",
                       "attention_hidden", "pool_size", "bn_momentum", "bn_epsilon"},
                      "arch");
    ReadKey(j, "input_dim", base.input_dim);
    ReadKey(j, "frame_dims", base.frame_dims);
    ReadKey(j, "kernel_sizes", base.kernel_sizes);
    ReadKey(j, "dilations", base.dilations);
    ReadKey(j, "utterance_dims", base.utterance_dims);
    ReadKey(j, "num_speakers", base.num_speakers);
    ReadKey(j, "embedding_layer", base.embedding_layer);
    if (j.contains("variant")) base.variant = ParseVariant(j.at("variant").get<std::string>());
    ReadKey(j, "acnn_layer", base.acnn_layer);
    ReadKey(j, "attention_hidden", base.attention_hidden);
    ReadKey(j, "pool_size", base.pool_size);
    ReadKey(j, "bn_momentum", base.bn_momentum);
    ReadKey(j, "bn_epsilon", base.bn_epsilon);
    return base;
  }
};

/// One frame-level layer: conv (static or adaptive) -> ReLU -> norm (BN or
/// ABN).  The BnState always carries the running statistics; its gamma/beta
/// are parameters only when the norm is not adaptive.
struct FrameLayer {
  bool adaptive_conv = false;
  bool adaptive_norm = false;
  ConvParams conv;
  AcnnParams acnn;
  BnState norm;
  AbnParams abn;
};

/// Utterance-level layer: affine -> ReLU -> BN.
struct DenseLayer {
  ConvParams affine;
  BnState norm;
};

struct Network {
  std::vector<FrameLayer> frame;
  std::vector<DenseLayer> dense;
  ConvParams output;
};

namespace internal {

template <typename Conv, typename F>
void VisitConv(Conv& c, const std::string& prefix, F& f) {
  f(prefix + "weight", c.weight, true);
  f(prefix + "bias", c.bias, false);
}

}  // namespace internal

/// Calls f(name, tensor, decay) for every trainable tensor in a fixed order.
/// `decay` marks weights subject to L2 decay (not biases, not norm affines).
template <typename Net, typename F>
void VisitParams(Net& net, F&& f) {
  for (size_t l = 0; l < net.frame.size(); ++l) {
    auto& layer = net.frame[l];
    const std::string p = "frame" + std::to_string(l + 1) + ".";
    if (layer.adaptive_conv) {
      auto& a = layer.acnn;
      f(p + "acnn.value_weight", a.value_weight, true);
      f(p + "acnn.value_bias", a.value_bias, false);
      f(p + "acnn.score_weight", a.score_weight, true);
      f(p + "acnn.score_bias", a.score_bias, false);
      f(p + "acnn.score_proj", a.score_proj, true);
      f(p + "acnn.mix_weight", a.mix_weight, true);
      f(p + "acnn.mix_bias", a.mix_bias, false);
      for (size_t i = 0; i < a.pool.size(); ++i)
        internal::VisitConv(a.pool[i], p + "acnn.pool" + std::to_string(i + 1) + ".", f);
    } else {
      internal::VisitConv(layer.conv, p + "conv.", f);
    }
    if (layer.adaptive_norm) {
      auto& a = layer.abn;
      f(p + "abn.context_weight", a.context_weight, true);
      f(p + "abn.context_bias", a.context_bias, false);
      f(p + "abn.scale_weight", a.scale_weight, true);
      f(p + "abn.scale_bias", a.scale_bias, false);
      f(p + "abn.shift_weight", a.shift_weight, true);
      f(p + "abn.shift_bias", a.shift_bias, false);
    } else {
      f(p + "bn.gamma", layer.norm.gamma, false);
      f(p + "bn.beta", layer.norm.beta, false);
    }
  }
  for (size_t l = 0; l < net.dense.size(); ++l) {
    const std::string p = "dense" + std::to_string(l + 1) + ".";
    internal::VisitConv(net.dense[l].affine, p + "affine.", f);
    f(p + "bn.gamma", net.dense[l].norm.gamma, false);
    f(p + "bn.beta", net.dense[l].norm.beta, false);
  }
  internal::VisitConv(net.output, "output.", f);
}

/// Calls f(prefix, state) for every normalization state (running stats).
template <typename Net, typename F>
void VisitNormStates(Net& net, F&& f) {
  for (size_t l = 0; l < net.frame.size(); ++l)
    f("frame" + std::to_string(l + 1) + ".norm.", net.frame[l].norm);
  for (size_t l = 0; l < net.dense.size(); ++l)
    f("dense" + std::to_string(l + 1) + ".norm.", net.dense[l].norm);
}

/// Flat view of one trainable tensor and its gradient buffer.
struct ParamRef {
  std::string name;
  double* value = nullptr;
  double* grad = nullptr;
  Index size = 0;
  std::vector<uint64_t> shape;
  bool decay = false;
};

struct Model {
  ArchConfig config;
  Network net;
  Network grad;  // same layout as net; only trainable tensors are meaningful

  /// Pointers are valid until the model is moved or copied.
  std::vector<ParamRef> Parameters() {
    std::vector<ParamRef> refs;
    VisitParams(net, [&](const std::string& name, auto& t, bool decay) {
      ParamRef r;
      r.name = name;
      r.value = t.data();
      r.size = t.size();
      r.decay = decay;
      if constexpr (std::is_same_v<std::decay_t<decltype(t)>, Matrix>)
        r.shape = {static_cast<uint64_t>(t.rows()), static_cast<uint64_t>(t.cols())};
      else
        r.shape = {static_cast<uint64_t>(t.size())};
      refs.push_back(std::move(r));
    });
    size_t i = 0;
    VisitParams(grad, [&](const std::string&, auto& t, bool) {
      if (t.size() != refs[i].size) throw Error("gradient layout mismatch at " + refs[i].name);
      refs[i++].grad = t.data();
    });
    return refs;
  }

  void ZeroGrad() {
    VisitParams(grad, [](const std::string&, auto& t, bool) { t.setZero(); });
  }
};

namespace internal {

inline void HeInit(Matrix& w, Index fan_in, Rng& rng, double scale = 1.0) {
  const double stddev = scale * std::sqrt(2.0 / static_cast<double>(fan_in));
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = stddev * rng.Normal();
}

inline void HeInit(Vector& w, Index fan_in, Rng& rng, double scale = 1.0) {
  const double stddev = scale * std::sqrt(2.0 / static_cast<double>(fan_in));
  for (Index i = 0; i < w.size(); ++i) w[i] = stddev * rng.Normal();
}

// Zero-filled copy with the same shapes, used for gradient buffers.
inline Network ZerosLike(const Network& net) {
  Network g = net;
  VisitParams(g, [](const std::string&, auto& t, bool) { t.setZero(); });
  for (FrameLayer& l : g.frame) l.acnn.mix_override.reset();
  return g;
}

}  // namespace internal

/// Builds and initializes a network.  Weights ~ N(0, 2/fan_in), biases 0,
/// BN gamma 1; ABN scale bias 1 with generator weights at a tenth of the He
/// scale, so an untrained ABN layer starts close to plain BN.  The output
/// layer also uses a tenth of the He scale so initial softmax is near uniform.
inline Model BuildModel(const ArchConfig& config, uint64_t seed) {
  config.Validate();
  Model m;
  m.config = config;
  Rng rng(seed);
  const Index hidden = config.attention_hidden;
  Index in = config.input_dim;
  for (int l = 1; l <= 5; ++l) {
    const size_t i = static_cast<size_t>(l - 1);
    const Index out = config.frame_dims[i];
    const int k = config.kernel_sizes[i];
    const int d = config.dilations[i];
    FrameLayer layer;
    layer.adaptive_conv = config.AdaptiveConv(l);
    layer.adaptive_norm = config.AdaptiveNorm(l);
    if (layer.adaptive_conv) {
      layer.acnn = AcnnParams::Zeros(in, out, k, d, hidden, config.pool_size);
      internal::HeInit(layer.acnn.value_weight, in, rng);
      internal::HeInit(layer.acnn.score_weight, in, rng);
      internal::HeInit(layer.acnn.score_proj, hidden, rng);
      internal::HeInit(layer.acnn.mix_weight, 2 * hidden, rng);
      for (ConvParams& c : layer.acnn.pool) internal::HeInit(c.weight, k * in, rng);
    } else {
      layer.conv = ConvParams::Zeros(in, out, k, d);
      internal::HeInit(layer.conv.weight, k * in, rng);
    }
    layer.norm = BnState::Init(out, config.bn_momentum, config.bn_epsilon);
    if (layer.adaptive_norm) {
      layer.abn = AbnParams::Zeros(in, out, hidden);
      internal::HeInit(layer.abn.context_weight, in, rng);
      internal::HeInit(layer.abn.scale_weight, hidden, rng, 0.1);
      internal::HeInit(layer.abn.shift_weight, hidden, rng, 0.1);
      layer.abn.scale_bias.setOnes();
    }
    m.net.frame.push_back(std::move(layer));
    in = out;
  }
  in = 2 * static_cast<Index>(config.frame_dims.back());
  for (int dim : config.utterance_dims) {
    DenseLayer layer;
    layer.affine = ConvParams::Zeros(in, dim);
    internal::HeInit(layer.affine.weight, in, rng);
    layer.norm = BnState::Init(dim, config.bn_momentum, config.bn_epsilon);
    m.net.dense.push_back(std::move(layer));
    in = dim;
  }
  m.net.output = ConvParams::Zeros(in, config.num_speakers);
  internal::HeInit(m.net.output.weight, in, rng, 0.1);
  m.grad = internal::ZerosLike(m.net);
  return m;
}

/// Total trainable scalars; running statistics are not counted.
inline int64_t CountParams(const Model& model) {
  int64_t total = 0;
  VisitParams(model.net,
              [&](const std::string&, const auto& t, bool) { total += static_cast<int64_t>(t.size()); });
  return total;
}

enum class Head { kLogits, kEmbedding };

struct FrameTape {
  Batch input;
  Batch act;  // ReLU output, pre-normalization
  std::vector<AcnnCache> acnn;
  std::vector<AbnContextCache> abn_context;
  BnCache bn;
  AbnCache abn;
};

struct DenseTape {
  Matrix input;
  Matrix act;
  BnCache bn;
};

/// Everything the backward pass needs from one forward pass.
struct Tape {
  Mode mode = Mode::kInfer;
  std::vector<FrameTape> frame;
  Batch pool_input;
  std::vector<WeightedStats> pool_stats;
  std::vector<DenseTape> dense;
  Matrix output_input;
};

namespace internal {

inline void CheckInput(const ArchConfig& config, const Batch& x) {
  if (x.empty()) throw Error("forward: empty batch");
  for (size_t u = 0; u < x.size(); ++u) {
    if (x[u].cols() != config.input_dim)
      throw Error("forward: utterance " + std::to_string(u) + " has feature dim " +
                  std::to_string(x[u].cols()) + ", model expects " +
                  std::to_string(config.input_dim));
    if (x[u].rows() <= config.Shrinkage())
      throw Error("forward: utterance " + std::to_string(u) + " has " +
                  std::to_string(x[u].rows()) + " frames; the receptive field needs at least " +
                  std::to_string(config.MinFrames()));
  }
}

}  // namespace internal

/// Runs the network on a batch of T x D feature matrices.  The logits head
/// returns B x S pre-softmax scores; the embedding head returns the B x E
/// pre-activation of the embedding affine.  In train mode batch statistics
/// are used and left in `tape`; call CommitRunningStats to fold them in.
inline Matrix Forward(const Model& model, const Batch& x, Mode mode, Head head,
                      Tape* tape = nullptr) {
  const ArchConfig& cfg = model.config;
  internal::CheckInput(cfg, x);
  Tape local;
  Tape& tp = tape != nullptr ? *tape : local;
  tp = Tape{};
  tp.mode = mode;
  const bool keep = tape != nullptr;
  const size_t batch = x.size();
  Batch h = x;
  for (const FrameLayer& layer : model.net.frame) {
    FrameTape ft;
    Batch z(batch);
    if (layer.adaptive_conv) {
      ft.acnn.resize(batch);
      for (size_t u = 0; u < batch; ++u) z[u] = AcnnConv(h[u], layer.acnn, &ft.acnn[u]);
    } else {
      for (size_t u = 0; u < batch; ++u) z[u] = Conv1d(h[u], layer.conv);
    }
    for (Matrix& m : z) m = Relu(m);
    Batch y;
    if (layer.adaptive_norm) {
      std::vector<Vector> contexts(batch);
      ft.abn_context.resize(batch);
      for (size_t u = 0; u < batch; ++u)
        contexts[u] = AbnContext(h[u], layer.abn, &ft.abn_context[u]);
      y = AbnTransform(z, layer.norm, contexts, layer.abn, mode, &ft.abn);
    } else {
      y = BnTransform(z, layer.norm, mode, &ft.bn);
    }
    if (keep) {
      ft.input = std::move(h);
      ft.act = std::move(z);
    }
    tp.frame.push_back(std::move(ft));
    h = std::move(y);
  }
  Matrix pooled(static_cast<Index>(batch), 2 * h.front().cols());
  tp.pool_stats.resize(batch);
  for (size_t u = 0; u < batch; ++u)
    pooled.row(static_cast<Index>(u)) = StatsPooling(h[u], &tp.pool_stats[u]).transpose();
  if (keep) tp.pool_input = std::move(h);
  Matrix v = std::move(pooled);
  for (size_t l = 0; l < model.net.dense.size(); ++l) {
    const DenseLayer& layer = model.net.dense[l];
    DenseTape dt;
    Matrix e = Conv1d(v, layer.affine);
    if (head == Head::kEmbedding && static_cast<int>(l + 1) == cfg.embedding_layer) return e;
    Matrix a = Relu(e);
    Matrix y = BnTransform(Batch{a}, layer.norm, mode, &dt.bn).front();
    if (keep) {
      dt.input = std::move(v);
      dt.act = std::move(a);
    }
    tp.dense.push_back(std::move(dt));
    v = std::move(y);
  }
  Matrix logits = Conv1d(v, model.net.output);
  if (keep) tp.output_input = std::move(v);
  return logits;
}

/// Folds the batch moments recorded by a train-mode Forward into the
/// running statistics.
inline void CommitRunningStats(Model& model, const Tape& tape) {
  if (tape.mode != Mode::kTrain) return;
  for (size_t l = 0; l < tape.frame.size(); ++l) {
    FrameLayer& layer = model.net.frame[l];
    UpdateRunningStats(layer.norm, layer.adaptive_norm ? tape.frame[l].abn.norm
                                                       : tape.frame[l].bn.norm);
  }
  for (size_t l = 0; l < tape.dense.size(); ++l)
    UpdateRunningStats(model.net.dense[l].norm, tape.dense[l].bn.norm);
}

/// Accumulates gradients of the loss into model.grad given dLoss/dlogits.
/// The tape must come from a logits-head Forward on the same parameters.
inline void Backward(Model& model, const Tape& tape, const Matrix& dlogits) {
  const Network& net = model.net;
  Network& grad = model.grad;
  if (tape.dense.size() != net.dense.size() || tape.frame.size() != net.frame.size())
    throw Error("backward: tape does not come from a full logits forward pass");
  ConvGrads cg = Conv1dBackward(tape.output_input, net.output, dlogits);
  grad.output.weight += cg.weight;
  grad.output.bias += cg.bias;
  Matrix dv = std::move(cg.input);
  for (size_t l = net.dense.size(); l-- > 0;) {
    const DenseLayer& layer = net.dense[l];
    const DenseTape& dt = tape.dense[l];
    const Matrix da = BatchNormBackward(Batch{dv}, layer.norm, dt.bn, &grad.dense[l].norm).front();
    const Matrix de = ReluBackward(dt.act, da);
    ConvGrads g = Conv1dBackward(dt.input, layer.affine, de);
    grad.dense[l].affine.weight += g.weight;
    grad.dense[l].affine.bias += g.bias;
    dv = std::move(g.input);
  }
  const size_t batch = tape.pool_input.size();
  Batch dy(batch);
  for (size_t u = 0; u < batch; ++u)
    dy[u] = StatsPoolingBackward(tape.pool_input[u], tape.pool_stats[u],
                                 dv.row(static_cast<Index>(u)).transpose());
  for (size_t l = net.frame.size(); l-- > 0;) {
    const FrameLayer& layer = net.frame[l];
    const FrameTape& ft = tape.frame[l];
    FrameLayer& g = grad.frame[l];
    Batch dh(batch);
    for (size_t u = 0; u < batch; ++u) dh[u] = Matrix::Zero(ft.input[u].rows(), ft.input[u].cols());
    Batch da;
    if (layer.adaptive_norm) {
      std::vector<Vector> dcontexts;
      da = AbnApplyBackward(dy, layer.abn, ft.abn, &g.abn, &dcontexts);
      for (size_t u = 0; u < batch; ++u)
        AbnContextBackward(ft.input[u], layer.abn, ft.abn_context[u], dcontexts[u], &g.abn, &dh[u]);
    } else {
      da = BatchNormBackward(dy, layer.norm, ft.bn, &g.norm);
    }
    for (size_t u = 0; u < batch; ++u) {
      const Matrix dz = ReluBackward(ft.act[u], da[u]);
      if (layer.adaptive_conv) {
        dh[u] += AcnnConvBackward(ft.input[u], layer.acnn, ft.acnn[u], dz, &g.acnn);
      } else {
        ConvGrads c = Conv1dBackward(ft.input[u], layer.conv, dz);
        g.conv.weight += c.weight;
        g.conv.bias += c.bias;
        dh[u] += c.input;
      }
    }
    dy = std::move(dh);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr char kModelMagic[4] = {'A', 'X', 'V', 'M'};
inline constexpr uint32_t kModelVersion = 1;

/// Header (magic, version, JSON arch config) followed by parameter records
/// in VisitParams order and then running-statistics records.
inline void WriteModel(std::ostream& os, const Model& model) {
  uint32_t count = 0;
  VisitParams(model.net, [&](const std::string&, const auto&, bool) { ++count; });
  VisitNormStates(model.net, [&](const std::string&, const BnState&) { count += 3; });
  WriteRecordHeader(os, kModelMagic, kModelVersion, model.config.ToJson().dump(), count);
  VisitParams(model.net, [&](const std::string& name, const auto& t, bool) {
    std::vector<uint64_t> shape;
    if constexpr (std::is_same_v<std::decay_t<decltype(t)>, Matrix>)
      shape = {static_cast<uint64_t>(t.rows()), static_cast<uint64_t>(t.cols())};
    else
      shape = {static_cast<uint64_t>(t.size())};
    WriteRecord(os, name, shape, t.data(), static_cast<size_t>(t.size()));
  });
  VisitNormStates(model.net, [&](const std::string& prefix, const BnState& s) {
    const uint64_t dim = static_cast<uint64_t>(s.Dim());
    WriteRecord(os, prefix + "running_mean", {dim}, s.running_mean.data(), dim);
    WriteRecord(os, prefix + "running_var", {dim}, s.running_var.data(), dim);
    const double flag = s.has_running_stats ? 1.0 : 0.0;
    WriteRecord(os, prefix + "has_running_stats", {1}, &flag, 1);
  });
}

inline Model ReadModel(std::istream& is) {
  const RecordHeader h = ReadRecordHeader(is, kModelMagic, kModelVersion);
  json cfg_json;
  try {
    cfg_json = json::parse(h.header);
  } catch (const json::exception& e) {
    throw Error(std::string("model header is not valid JSON: ") + e.what());
  }
  Model m = BuildModel(ArchConfig::FromJson(cfg_json), 0);
  std::map<std::string, Record> records;
  for (uint32_t i = 0; i < h.count; ++i) {
    Record r = ReadRecord(is);
    std::string name = r.name;
    records.emplace(std::move(name), std::move(r));
  }
  auto take = [&](const std::string& name, double* dst, size_t size) {
    auto it = records.find(name);
    if (it == records.end()) throw Error("model file lacks record " + name);
    if (it->second.values.size() != size)
      throw Error("model record " + name + " has " + std::to_string(it->second.values.size()) +
                  " values, expected " + std::to_string(size));
    std::copy(it->second.values.begin(), it->second.values.end(), dst);
    records.erase(it);
  };
  VisitParams(m.net, [&](const std::string& name, auto& t, bool) {
    take(name, t.data(), static_cast<size_t>(t.size()));
  });
  VisitNormStates(m.net, [&](const std::string& prefix, BnState& s) {
    take(prefix + "running_mean", s.running_mean.data(), static_cast<size_t>(s.Dim()));
    take(prefix + "running_var", s.running_var.data(), static_cast<size_t>(s.Dim()));
    double flag = 0.0;
    take(prefix + "has_running_stats", &flag, 1);
    s.has_running_stats = flag != 0.0;
  });
  if (!records.empty()) throw Error("model file has unexpected record " + records.begin()->first);
  return m;
}

inline void SaveModel(const std::filesystem::path& path, const Model& model) {
  AtomicWrite(path, [&](std::ostream& os) { WriteModel(os, model); });
}

inline Model LoadModel(const std::filesystem::path& path) {
  std::ifstream is = OpenInput(path);
  try {
    return ReadModel(is);
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

}  // namespace axvec
