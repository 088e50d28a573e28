// include/axvec/backend.h

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

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "axvec/data.h"
#include "axvec/metrics.h"
#include "axvec/model.h"
#include "axvec/records.h"

namespace axvec {

using DenseMatrix = Eigen::MatrixXd;  // column-major, for the backend's linear algebra

// ---------------------------------------------------------------------------
// Embedding tables

struct EmbeddingTable {
  std::vector<std::string> ids;
  Matrix vectors;  // one row per id

  Index Dim() const { return vectors.cols(); }
  size_t Size() const { return ids.size(); }

  std::map<std::string, Index> IndexById() const {
    std::map<std::string, Index> m;
    for (size_t i = 0; i < ids.size(); ++i)
      if (!m.emplace(ids[i], static_cast<Index>(i)).second)
        throw Error("embedding table has duplicate id '" + ids[i] + "'");
    return m;
  }
};

/// Infer-mode embeddings of whole utterances, in corpus order.  Utterances
/// are independent, so work is split across `threads` without changing the
/// result.
inline EmbeddingTable ExtractEmbeddings(const Model& model, const Corpus& corpus,
                                        int threads = 1) {
  const int min_frames = model.config.MinFrames();
  for (const Utterance& u : corpus.utterances)
    if (u.features.rows() < min_frames)
      throw Error("utterance '" + u.id + "' has " + std::to_string(u.features.rows()) +
                  " frames; the model needs at least " + std::to_string(min_frames));
  EmbeddingTable table;
  const size_t n = corpus.utterances.size();
  table.vectors.resize(static_cast<Index>(n), model.config.EmbeddingDim());
  for (const Utterance& u : corpus.utterances) table.ids.push_back(u.id);
  auto work = [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i)
      table.vectors.row(static_cast<Index>(i)) =
          Forward(model, Batch{corpus.utterances[i].features}, Mode::kInfer, Head::kEmbedding)
              .row(0);
  };
  const size_t workers = std::clamp<size_t>(static_cast<size_t>(std::max(threads, 1)), 1, n);
  if (workers <= 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          work(n * w / workers, n * (w + 1) / workers);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    for (std::thread& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  table.IndexById();
  return table;
}

inline constexpr char kEmbeddingMagic[4] = {'A', 'X', 'V', 'E'};

inline void SaveEmbeddings(const std::filesystem::path& path, const EmbeddingTable& t) {
  AtomicWrite(path, [&](std::ostream& os) {
    WriteRecordHeader(os, kEmbeddingMagic, 1, json{{"ids", t.ids}}.dump(), 1);
    WriteRecord(os, "embeddings",
                {static_cast<uint64_t>(t.vectors.rows()), static_cast<uint64_t>(t.vectors.cols())},
                t.vectors.data(), static_cast<size_t>(t.vectors.size()));
  });
}

inline EmbeddingTable LoadEmbeddings(const std::filesystem::path& path) {
  std::ifstream is = OpenInput(path);
  try {
    const RecordHeader h = ReadRecordHeader(is, kEmbeddingMagic, 1);
    EmbeddingTable t;
    t.ids = json::parse(h.header).at("ids").get<std::vector<std::string>>();
    if (h.count != 1) throw Error("expected one record");
    Record r = ReadRecord(is);
    if (r.shape.size() != 2 || r.shape[0] != t.ids.size())
      throw Error("embedding record shape does not match the id list");
    t.vectors.resize(static_cast<Index>(r.shape[0]), static_cast<Index>(r.shape[1]));
    std::copy(r.values.begin(), r.values.end(), t.vectors.data());
    t.IndexById();
    return t;
  } catch (const json::exception& e) {
    throw Error(path.string() + ": bad header: " + e.what());
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Centering, LDA and length normalization

struct Preprocess {
  Vector mean;
  DenseMatrix projection;  // E x k

  Index OutDim() const { return projection.cols(); }

  /// Centered and projected, before length normalization.
  Vector Project(const Vector& x) const {
    if (x.size() != mean.size())
      throw Error("preprocess: vector has dim " + std::to_string(x.size()) + ", expected " +
                  std::to_string(mean.size()));
    return projection.transpose() * (x - mean);
  }

  Vector Apply(const Vector& x) const {
    Vector y = Project(x);
    const double norm = y.norm();
    if (!(norm > 0.0)) throw Error("preprocess: vector projects to zero; cannot length-normalize");
    return y / norm;
  }

  Matrix ApplyRows(const Matrix& x) const {
    Matrix out(x.rows(), OutDim());
    for (Index r = 0; r < x.rows(); ++r) out.row(r) = Apply(x.row(r).transpose()).transpose();
    return out;
  }
};

inline constexpr double kLdaRidge = 1e-6;

inline void CheckLabels(Index rows, const std::vector<int>& labels, const char* what) {
  if (static_cast<size_t>(rows) != labels.size())
    throw Error(std::string(what) + ": label count does not match vectors");
  for (int l : labels)
    if (l < 0) throw Error(std::string(what) + ": negative label");
}

inline int CountClasses(const std::vector<int>& labels) {
  return static_cast<int>(std::set<int>(labels.begin(), labels.end()).size());
}

/// Fits centering plus Fisher LDA.  lda_dim <= 0 selects min(100, classes - 1,
/// E).  The within-class scatter gets a ridge of 1e-6 * trace / dim.
inline Preprocess FitPreprocess(const Matrix& x, const std::vector<int>& labels, int lda_dim) {
  CheckLabels(x.rows(), labels, "lda");
  if (x.rows() < 2) throw Error("lda: need at least two vectors");
  const Index dim = x.cols();
  const int classes = CountClasses(labels);
  const int limit = std::min<int>(static_cast<int>(dim), classes - 1);
  if (lda_dim <= 0) lda_dim = std::min(100, limit);
  if (lda_dim < 1 || lda_dim > limit)
    throw Error("lda: dimension " + std::to_string(lda_dim) + " exceeds the limit " +
                std::to_string(limit) + " (min of embedding dim and classes - 1)");
  Preprocess p;
  p.mean = x.colwise().mean().transpose();
  std::map<int, std::pair<Vector, int>> sums;
  for (Index r = 0; r < x.rows(); ++r) {
    auto& [sum, n] = sums.try_emplace(labels[static_cast<size_t>(r)], Vector::Zero(dim), 0)
                         .first->second;
    sum += x.row(r).transpose() - p.mean;
    ++n;
  }
  const double total = static_cast<double>(x.rows());
  DenseMatrix sb = DenseMatrix::Zero(dim, dim);
  std::map<int, Vector> class_means;
  for (auto& [label, sn] : sums) {
    Vector m = sn.first / sn.second;
    sb.noalias() += (sn.second / total) * m * m.transpose();
    class_means.emplace(label, std::move(m));
  }
  DenseMatrix sw = DenseMatrix::Zero(dim, dim);
  for (Index r = 0; r < x.rows(); ++r) {
    const Vector d =
        x.row(r).transpose() - p.mean - class_means.at(labels[static_cast<size_t>(r)]);
    sw.noalias() += d * d.transpose() / total;
  }
  const double trace = sw.trace();
  sw.diagonal().array() += kLdaRidge * (trace > 0.0 ? trace / static_cast<double>(dim) : 1.0);
  Eigen::GeneralizedSelfAdjointEigenSolver<DenseMatrix> solver(sb, sw);
  if (solver.info() != Eigen::Success) throw Error("lda: eigen decomposition failed");
  p.projection.resize(dim, lda_dim);
  for (int k = 0; k < lda_dim; ++k) {
    Vector v = solver.eigenvectors().col(dim - 1 - k);
    Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;  // fixed sign for reproducible output
    p.projection.col(k) = v;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Two-covariance PLDA:  x = mu + y + e,  y ~ N(0, B) per speaker,
// e ~ N(0, W) per vector.

struct PldaModel {
  Vector mean;
  DenseMatrix between;
  DenseMatrix within;

  Index Dim() const { return mean.size(); }
};

inline constexpr double kCovarianceFloor = 1e-8;

inline DenseMatrix Symmetrize(const DenseMatrix& m) { return 0.5 * (m + m.transpose()); }

/// Raises eigenvalues to at least `floor` (use 0 to only clip negatives).
inline DenseMatrix FloorEigenvalues(const DenseMatrix& m, double floor) {
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(Symmetrize(m));
  Vector ev = es.eigenvalues().cwiseMax(floor);
  return Symmetrize(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
}

inline double LogDet(const DenseMatrix& spd) {
  Eigen::LLT<DenseMatrix> llt(spd);
  if (llt.info() != Eigen::Success) throw Error("plda: matrix is not positive definite");
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

struct ClassStats {
  int count = 0;
  Vector mean_offset;      // class mean minus global mean
  DenseMatrix scatter;     // sum of (x - class mean)(x - class mean)^T
};

inline std::vector<ClassStats> GatherClassStats(const Matrix& x, const std::vector<int>& labels,
                                                const Vector& mean) {
  std::map<int, std::vector<Index>> rows;
  for (Index r = 0; r < x.rows(); ++r) rows[labels[static_cast<size_t>(r)]].push_back(r);
  std::vector<ClassStats> out;
  for (auto& [label, idx] : rows) {
    ClassStats s;
    s.count = static_cast<int>(idx.size());
    Vector m = Vector::Zero(x.cols());
    for (Index r : idx) m += x.row(r).transpose();
    m /= s.count;
    s.scatter = DenseMatrix::Zero(x.cols(), x.cols());
    for (Index r : idx) {
      const Vector d = x.row(r).transpose() - m;
      s.scatter.noalias() += d * d.transpose();
    }
    s.mean_offset = m - mean;
    out.push_back(std::move(s));
  }
  return out;
}

/// Total log-likelihood of the data under the model; the n vectors of a
/// class are jointly Gaussian with covariance I (x) W + 11^T (x) B.
inline double PldaLogLikelihood(const PldaModel& m, const std::vector<ClassStats>& stats) {
  const double d = static_cast<double>(m.Dim());
  const double log2pi = std::log(2.0 * std::numbers::pi);
  Eigen::LLT<DenseMatrix> wl(m.within);
  if (wl.info() != Eigen::Success) throw Error("plda: within covariance not positive definite");
  const double logdet_w = LogDet(m.within);
  const DenseMatrix w_inv = wl.solve(DenseMatrix::Identity(m.Dim(), m.Dim()));
  double total = 0.0;
  for (const ClassStats& s : stats) {
    const double n = s.count;
    const DenseMatrix c = m.within + n * m.between;
    Eigen::LLT<DenseMatrix> cl(c);
    const double quad_mean = n * s.mean_offset.dot(cl.solve(s.mean_offset));
    const double quad_within = (w_inv.cwiseProduct(s.scatter)).sum();
    total += -0.5 * (n * d * log2pi + (n - 1.0) * logdet_w + LogDet(c) + quad_within + quad_mean);
  }
  return total;
}

struct PldaFit {
  PldaModel model;
  std::vector<double> log_likelihood;  // before the first iteration, then after each
  std::vector<std::string> warnings;
};

/// EM for the two-covariance model with the mean fixed at the data mean.
inline PldaFit TrainPlda(const Matrix& x, const std::vector<int>& labels, int iterations) {
  CheckLabels(x.rows(), labels, "plda");
  if (x.rows() < 2) throw Error("plda: need at least two vectors");
  if (iterations < 0) throw Error("plda: iterations must be >= 0");
  const Index dim = x.cols();
  PldaFit fit;
  PldaModel& m = fit.model;
  m.mean = x.colwise().mean().transpose();
  const std::vector<ClassStats> stats = GatherClassStats(x, labels, m.mean);
  const double total = static_cast<double>(x.rows());
  const double classes = static_cast<double>(stats.size());

  DenseMatrix sw = DenseMatrix::Zero(dim, dim);
  DenseMatrix sb = DenseMatrix::Zero(dim, dim);
  for (const ClassStats& s : stats) {
    sw += s.scatter;
    sb += s.mean_offset * s.mean_offset.transpose();
  }
  if (stats.size() < 2) {
    m.within = FloorEigenvalues(sw / total, kCovarianceFloor);
    m.between = DenseMatrix::Zero(dim, dim);
    fit.warnings.push_back("plda: only one class; between-class covariance set to zero");
    fit.log_likelihood.push_back(PldaLogLikelihood(m, stats));
    return fit;
  }
  bool singletons_only = true;
  for (const ClassStats& s : stats) singletons_only &= s.count < 2;
  if (singletons_only) throw Error("plda: need at least one class with two or more vectors");

  m.within = FloorEigenvalues(sw / std::max(1.0, total - classes), kCovarianceFloor);
  m.between = FloorEigenvalues(sb / classes, kCovarianceFloor);
  fit.log_likelihood.push_back(PldaLogLikelihood(m, stats));
  for (int it = 0; it < iterations; ++it) {
    DenseMatrix b_acc = DenseMatrix::Zero(dim, dim);
    DenseMatrix w_acc = sw;
    for (const ClassStats& s : stats) {
      const double n = s.count;
      // Posterior of the speaker variable: mean B (B + W/n)^{-1} xbar,
      // covariance B - B (B + W/n)^{-1} B.
      Eigen::LLT<DenseMatrix> l(m.between + m.within / n);
      const DenseMatrix gain = l.solve(m.between).transpose();
      const Vector y = gain * s.mean_offset;
      const DenseMatrix cov = Symmetrize(m.between - gain * m.between);
      b_acc += cov + y * y.transpose();
      const Vector r = s.mean_offset - y;
      w_acc += n * (cov + r * r.transpose());
    }
    m.between = FloorEigenvalues(b_acc / classes, kCovarianceFloor);
    m.within = FloorEigenvalues(w_acc / total, kCovarianceFloor);
    fit.log_likelihood.push_back(PldaLogLikelihood(m, stats));
  }
  return fit;
}

/// Closed-form LLR of "same speaker" against "different speakers":
///   llr = 0.5 e'Qe + 0.5 t'Qt + e'Pt + const.
class PldaScorer {
 public:
  explicit PldaScorer(const PldaModel& m) : mean_(m.mean) {
    const Index d = m.Dim();
    const DenseMatrix id = DenseMatrix::Identity(d, d);
    const DenseMatrix total = Symmetrize(m.between + m.within);
    Eigen::LLT<DenseMatrix> tl(total);
    if (tl.info() != Eigen::Success) throw Error("plda: total covariance not positive definite");
    const DenseMatrix t_inv = Symmetrize(tl.solve(id));
    const DenseMatrix schur = Symmetrize(total - m.between * t_inv * m.between);
    Eigen::LLT<DenseMatrix> sl(schur);
    if (sl.info() != Eigen::Success) throw Error("plda: conditional covariance not positive definite");
    const DenseMatrix a = Symmetrize(sl.solve(id));
    q_ = t_inv - a;
    p_ = Symmetrize(t_inv * m.between * a);
    offset_ = 0.5 * LogDet(total) - 0.5 * LogDet(schur);
  }

  double Score(const Vector& enroll, const Vector& test) const {
    if (enroll.size() != mean_.size() || test.size() != mean_.size())
      throw Error("plda: vector dimension does not match the model (" +
                  std::to_string(mean_.size()) + ")");
    const Vector e = enroll - mean_;
    const Vector t = test - mean_;
    // Both forms are summed so the score is exactly symmetric.
    const double quad = 0.5 * (e.dot(q_ * e) + t.dot(q_ * t));
    const double cross = 0.5 * (e.dot(p_ * t) + t.dot(p_ * e));
    return quad + cross + offset_;
  }

 private:
  Vector mean_;
  DenseMatrix q_;
  DenseMatrix p_;
  double offset_ = 0.0;
};

inline double PldaScore(const PldaModel& m, const Vector& enroll, const Vector& test) {
  return PldaScorer(m).Score(enroll, test);
}

// ---------------------------------------------------------------------------
// Complete backend: preprocessing followed by PLDA.

struct BackendConfig {
  int lda_dim = 0;  // 0: min(100, classes - 1, E)
  int plda_iterations = 10;

  void Validate() const {
    if (lda_dim < 0) throw Error("backend: lda_dim must be >= 0");
    if (plda_iterations < 0) throw Error("backend: plda_iterations must be >= 0");
  }
  json ToJson() const { return json{{"lda_dim", lda_dim}, {"plda_iterations", plda_iterations}}; }
  static BackendConfig FromJson(const json& j) { return FromJson(j, BackendConfig()); }
  static BackendConfig FromJson(const json& j, BackendConfig base) {
    RejectUnknownKeys(j, {"lda_dim", "plda_iterations"}, "backend");
    ReadKey(j, "lda_dim", base.lda_dim);
    ReadKey(j, "plda_iterations", base.plda_iterations);
    return base;
  }
};

struct Backend {
  Preprocess preprocess;
  PldaModel plda;
};

struct BackendFit {
  Backend backend;
  std::vector<double> log_likelihood;
  std::vector<std::string> warnings;
};

inline BackendFit FitBackend(const EmbeddingTable& train, const std::vector<int>& labels,
                             const BackendConfig& cfg) {
  cfg.Validate();
  BackendFit out;
  out.backend.preprocess = FitPreprocess(train.vectors, labels, cfg.lda_dim);
  PldaFit p = TrainPlda(out.backend.preprocess.ApplyRows(train.vectors), labels,
                        cfg.plda_iterations);
  out.backend.plda = std::move(p.model);
  out.log_likelihood = std::move(p.log_likelihood);
  out.warnings = std::move(p.warnings);
  return out;
}

/// Scores every trial; both utterances must be in the table.
inline std::vector<ScoreEntry> ScoreTrials(const Backend& backend, const EmbeddingTable& table,
                                           const std::vector<Trial>& trials) {
  const auto index = table.IndexById();
  const PldaScorer scorer(backend.plda);
  std::map<Index, Vector> cache;
  auto get = [&](const std::string& id) -> const Vector& {
    auto it = index.find(id);
    if (it == index.end()) throw Error("no embedding for utterance '" + id + "'");
    auto c = cache.find(it->second);
    if (c == cache.end())
      c = cache.emplace(it->second,
                        backend.preprocess.Apply(table.vectors.row(it->second).transpose()))
              .first;
    return c->second;
  };
  std::vector<ScoreEntry> out;
  out.reserve(trials.size());
  for (const Trial& t : trials) out.push_back({t.enroll, t.test, scorer.Score(get(t.enroll), get(t.test))});
  return out;
}

inline constexpr char kBackendMagic[4] = {'A', 'X', 'V', 'B'};

inline void SaveBackend(const std::filesystem::path& path, const Backend& b) {
  auto put = [](std::ostream& os, const std::string& name, const DenseMatrix& m) {
    // Stored row-major like every other record.
    const Matrix rm = m;
    WriteRecord(os, name, {static_cast<uint64_t>(m.rows()), static_cast<uint64_t>(m.cols())},
                rm.data(), static_cast<size_t>(rm.size()));
  };
  AtomicWrite(path, [&](std::ostream& os) {
    WriteRecordHeader(os, kBackendMagic, 1, json{{"lda_dim", b.preprocess.OutDim()}}.dump(), 5);
    WriteRecord(os, "preprocess.mean", {static_cast<uint64_t>(b.preprocess.mean.size())},
                b.preprocess.mean.data(), static_cast<size_t>(b.preprocess.mean.size()));
    put(os, "preprocess.projection", b.preprocess.projection);
    WriteRecord(os, "plda.mean", {static_cast<uint64_t>(b.plda.mean.size())}, b.plda.mean.data(),
                static_cast<size_t>(b.plda.mean.size()));
    put(os, "plda.between", b.plda.between);
    put(os, "plda.within", b.plda.within);
  });
}

inline Backend LoadBackend(const std::filesystem::path& path) {
  std::ifstream is = OpenInput(path);
  try {
    const RecordHeader h = ReadRecordHeader(is, kBackendMagic, 1);
    std::map<std::string, Record> recs;
    for (uint32_t i = 0; i < h.count; ++i) {
      Record r = ReadRecord(is);
      std::string name = r.name;
      recs.emplace(std::move(name), std::move(r));
    }
    auto get = [&](const std::string& name, size_t rank) -> const Record& {
      auto it = recs.find(name);
      if (it == recs.end()) throw Error("missing record " + name);
      if (it->second.shape.size() != rank) throw Error("record " + name + " has the wrong rank");
      return it->second;
    };
    auto vec = [&](const std::string& name) {
      const Record& r = get(name, 1);
      return Vector(Eigen::Map<const Vector>(r.values.data(), static_cast<Index>(r.values.size())));
    };
    auto mat = [&](const std::string& name) {
      const Record& r = get(name, 2);
      Matrix m(static_cast<Index>(r.shape[0]), static_cast<Index>(r.shape[1]));
      std::copy(r.values.begin(), r.values.end(), m.data());
      return DenseMatrix(m);
    };
    Backend b;
    b.preprocess.mean = vec("preprocess.mean");
    b.preprocess.projection = mat("preprocess.projection");
    b.plda.mean = vec("plda.mean");
    b.plda.between = mat("plda.between");
    b.plda.within = mat("plda.within");
    const Index e = b.preprocess.mean.size(), k = b.plda.mean.size();
    if (b.preprocess.projection.rows() != e || b.preprocess.projection.cols() != k ||
        b.plda.between.rows() != k || b.plda.within.rows() != k)
      throw Error("inconsistent backend dimensions");
    return b;
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Fusion

/// Equal-weight mean of several score lists over an identical trial set, in
/// the order of the first list.
inline std::vector<ScoreEntry> FuseScores(const std::vector<std::vector<ScoreEntry>>& lists) {
  if (lists.empty()) throw Error("fuse: no score lists");
  std::vector<std::map<std::string, double>> maps;
  for (const auto& list : lists) {
    std::map<std::string, double> m;
    for (const ScoreEntry& e : list)
      if (!m.emplace(TrialKey(e.enroll, e.test), e.score).second)
        throw Error("fuse: duplicate trial '" + TrialKey(e.enroll, e.test) + "'");
    maps.push_back(std::move(m));
  }
  for (size_t k = 1; k < maps.size(); ++k) {
    for (const auto& [key, s] : maps[0])
      if (!maps[k].count(key))
        throw Error("fuse: trial '" + key + "' missing from list " + std::to_string(k + 1));
    for (const auto& [key, s] : maps[k])
      if (!maps[0].count(key))
        throw Error("fuse: trial '" + key + "' missing from list 1");
  }
  std::vector<ScoreEntry> out;
  out.reserve(lists[0].size());
  const double inv = 1.0 / static_cast<double>(lists.size());
  for (const ScoreEntry& e : lists[0]) {
    double sum = 0.0;
    const std::string key = TrialKey(e.enroll, e.test);
    for (const auto& m : maps) sum += m.at(key);
    out.push_back({e.enroll, e.test, sum * inv});
  }
  return out;
}

}  // namespace axvec
