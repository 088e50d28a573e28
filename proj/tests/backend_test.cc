// tests/backend_test.cc

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

#include <gtest/gtest.h>

#include <Eigen/QR>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "axvec/backend.h"
#include "grad_check.h"
#include "plda_sampler.h"

namespace axvec {
namespace {

namespace fs = std::filesystem;
using testing::PldaSample;
using testing::RandomMatrix;
using testing::SamplePlda;

DenseMatrix RandomSpd(Index d, Rng& rng, double scale) {
  Matrix a = RandomMatrix(d, d, rng);
  DenseMatrix m = DenseMatrix(a) * DenseMatrix(a).transpose() / static_cast<double>(d);
  m.diagonal().array() += 0.5;
  return scale * m;
}

TEST(Preprocess, CenteredAndUnitNorm) {
  Rng rng(1);
  Matrix x = RandomMatrix(60, 8, rng);
  std::vector<int> labels;
  for (int i = 0; i < 60; ++i) labels.push_back(i % 5);
  for (Index r = 0; r < 60; ++r) x(r, labels[r] % 8) += 3.0;
  Preprocess p = FitPreprocess(x, labels, 0);
  EXPECT_EQ(p.OutDim(), 4);
  Vector mean = Vector::Zero(4);
  for (Index r = 0; r < 60; ++r) mean += p.Project(x.row(r).transpose());
  EXPECT_LT((mean / 60.0).cwiseAbs().maxCoeff(), 1e-9);
  Matrix y = p.ApplyRows(x);
  for (Index r = 0; r < 60; ++r) EXPECT_NEAR(y.row(r).norm(), 1.0, 1e-12);
  // Positive scaling after centering does not change the output.
  const Vector v = x.row(3).transpose();
  const Vector scaled = p.mean + 2.5 * (v - p.mean);
  EXPECT_LT((p.Apply(v) - p.Apply(scaled)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Preprocess, FisherDirectionAlongSeparatingAxis) {
  Rng rng(2);
  Matrix x(400, 3);
  std::vector<int> labels;
  for (Index r = 0; r < 400; ++r) {
    const int c = static_cast<int>(r % 2);
    labels.push_back(c);
    x(r, 0) = (c ? 2.0 : -2.0) + 0.5 * rng.Normal();
    x(r, 1) = 3.0 * rng.Normal();
    x(r, 2) = 2.0 * rng.Normal();
  }
  Preprocess p = FitPreprocess(x, labels, 1);
  const Vector dir = p.projection.col(0).normalized();
  EXPECT_GT(std::abs(dir[0]), 0.999);
}

TEST(Preprocess, Errors) {
  Rng rng(3);
  Matrix x = RandomMatrix(10, 4, rng);
  std::vector<int> labels{0, 0, 1, 1, 2, 2, 0, 1, 2, 0};
  EXPECT_THROW(FitPreprocess(x, labels, 3), Error);  // classes - 1 = 2
  EXPECT_NO_THROW(FitPreprocess(x, labels, 2));
  // Rank-deficient within scatter (duplicated column) is handled by the ridge.
  x.col(3) = x.col(2);
  EXPECT_NO_THROW(FitPreprocess(x, labels, 2));
  EXPECT_THROW(FitPreprocess(x, {0, 1}, 1), Error);
}

TEST(Plda, RecoversKnownCovariances) {
  PldaSample s = testing::RecoveryDesign(4);
  PldaFit fit = TrainPlda(s.x, s.labels, 50);
  EXPECT_LT(testing::RelFrobenius(fit.model.between, s.between), 0.10);
  EXPECT_LT(testing::RelFrobenius(fit.model.within, s.within), 0.10);
  EXPECT_LT((fit.model.mean - s.mean).norm() / s.mean.norm(), 0.05);
  ASSERT_EQ(fit.log_likelihood.size(), 51u);
  for (size_t i = 1; i < fit.log_likelihood.size(); ++i)
    EXPECT_GE(fit.log_likelihood[i],
              fit.log_likelihood[i - 1] - 1e-12 * std::abs(fit.log_likelihood[i - 1]));
}

TEST(Plda, LogLikelihoodMatchesDirectGaussian) {
  // One class of three 2-d vectors: compare with the stacked 6-d Gaussian.
  Rng rng(5);
  PldaModel m;
  m.mean = Vector::Zero(2);
  m.between = RandomSpd(2, rng, 1.0);
  m.within = RandomSpd(2, rng, 0.3);
  Matrix x = RandomMatrix(3, 2, rng);
  const double ll = PldaLogLikelihood(m, GatherClassStats(x, {7, 7, 7}, m.mean));
  DenseMatrix cov(6, 6);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      cov.block(2 * i, 2 * j, 2, 2) = m.between + (i == j ? m.within : DenseMatrix::Zero(2, 2));
  Vector z(6);
  for (int i = 0; i < 3; ++i) z.segment(2 * i, 2) = x.row(i).transpose();
  const double ref = -0.5 * (6 * std::log(2 * std::numbers::pi) + std::log(cov.determinant()) +
                             z.dot(cov.inverse() * z));
  EXPECT_NEAR(ll, ref, 1e-10);
}

TEST(Plda, SingleClassGivesZeroBetween) {
  Rng rng(6);
  Matrix x = RandomMatrix(20, 3, rng);
  PldaFit fit = TrainPlda(x, std::vector<int>(20, 0), 5);
  EXPECT_EQ(fit.model.between.norm(), 0.0);
  EXPECT_FALSE(fit.warnings.empty());
  const Vector a = x.row(0).transpose(), b = x.row(1).transpose();
  EXPECT_EQ(PldaScore(fit.model, a, b), 0.0);
}

TEST(Plda, ZeroBetweenScoresZero) {
  Rng rng(7);
  PldaModel m;
  m.mean = testing::RandomVector(4, rng);
  m.between = DenseMatrix::Zero(4, 4);
  m.within = RandomSpd(4, rng, 1.0);
  PldaScorer s(m);
  for (int i = 0; i < 20; ++i)
    EXPECT_EQ(s.Score(testing::RandomVector(4, rng), testing::RandomVector(4, rng)), 0.0);
}

TEST(Plda, SymmetricScores) {
  Rng rng(8);
  PldaModel m;
  m.mean = testing::RandomVector(5, rng);
  m.between = RandomSpd(5, rng, 1.0);
  m.within = RandomSpd(5, rng, 0.4);
  PldaScorer s(m);
  for (int i = 0; i < 50; ++i) {
    const Vector a = testing::RandomVector(5, rng), b = testing::RandomVector(5, rng);
    EXPECT_EQ(s.Score(a, b), s.Score(b, a));
  }
  EXPECT_THROW(s.Score(Vector::Zero(4), Vector::Zero(5)), Error);
}

double GaussPdf(double x, double mean, double var) {
  return std::exp(-0.5 * (x - mean) * (x - mean) / var) / std::sqrt(2 * std::numbers::pi * var);
}

// Composite Simpson over the speaker variable.
double Integrate(const std::function<double(double)>& f, double lo, double hi, int n) {
  const double h = (hi - lo) / n;
  double sum = f(lo) + f(hi);
  for (int i = 1; i < n; ++i) sum += (i % 2 ? 4.0 : 2.0) * f(lo + i * h);
  return sum * h / 3.0;
}

TEST(Plda, OneDimensionalQuadratureOracle) {
  const double cases[][4] = {{1.0, 0.5, 0.3, -0.2}, {2.0, 0.3, 1.5, 1.2}, {0.4, 1.1, -0.7, 0.9}};
  for (const auto& c : cases) {
    const double b = c[0], w = c[1], e = c[2], t = c[3];
    PldaModel m;
    m.mean = Vector::Zero(1);
    m.between = DenseMatrix::Constant(1, 1, b);
    m.within = DenseMatrix::Constant(1, 1, w);
    const double lim = 12.0 * std::sqrt(b);
    const double same = Integrate(
        [&](double y) { return GaussPdf(y, 0, b) * GaussPdf(e, y, w) * GaussPdf(t, y, w); }, -lim,
        lim, 20000);
    const double pe = Integrate([&](double y) { return GaussPdf(y, 0, b) * GaussPdf(e, y, w); },
                                -lim, lim, 20000);
    const double pt = Integrate([&](double y) { return GaussPdf(y, 0, b) * GaussPdf(t, y, w); },
                                -lim, lim, 20000);
    const double ref = std::log(same) - std::log(pe) - std::log(pt);
    EXPECT_NEAR(PldaScore(m, Vector::Constant(1, e), Vector::Constant(1, t)), ref, 1e-8);
  }
}

TEST(Plda, RotationInvariance) {
  Rng rng(9);
  const Index d = 6;
  PldaModel m;
  m.mean = testing::RandomVector(d, rng);
  m.between = RandomSpd(d, rng, 1.0);
  m.within = RandomSpd(d, rng, 0.5);
  const DenseMatrix q = Eigen::HouseholderQR<DenseMatrix>(DenseMatrix(RandomMatrix(d, d, rng)))
                            .householderQ();
  PldaModel r;
  r.mean = q * m.mean;
  r.between = q * m.between * q.transpose();
  r.within = q * m.within * q.transpose();
  for (int i = 0; i < 10; ++i) {
    const Vector a = testing::RandomVector(d, rng), b = testing::RandomVector(d, rng);
    EXPECT_NEAR(PldaScore(m, a, b), PldaScore(r, q * a, q * b), 1e-10);
  }
}

TEST(Plda, SameSpeakerScoresHigher) {
  Rng rng(10);
  const Index d = 4;
  const DenseMatrix b0 = RandomSpd(d, rng, 2.0), w0 = RandomSpd(d, rng, 0.2);
  PldaSample s = SamplePlda(b0, w0, Vector::Zero(d), 200, 4, rng);
  PldaFit fit = TrainPlda(s.x, s.labels, 10);
  PldaScorer sc(fit.model);
  double tar = 0, non = 0;
  for (int c = 0; c < 100; ++c) {
    tar += sc.Score(s.x.row(4 * c).transpose(), s.x.row(4 * c + 1).transpose());
    non += sc.Score(s.x.row(4 * c).transpose(), s.x.row(4 * c + 5).transpose());
  }
  EXPECT_GT(tar, non);
}

TEST(Backend, SaveLoadAndScoreTrials) {
  Rng rng(11);
  EmbeddingTable t;
  const Index d = 6;
  const DenseMatrix b0 = RandomSpd(d, rng, 2.0), w0 = RandomSpd(d, rng, 0.2);
  PldaSample s = SamplePlda(b0, w0, Vector::Zero(d), 12, 5, rng);
  t.vectors = s.x;
  for (size_t i = 0; i < s.labels.size(); ++i) t.ids.push_back("u" + std::to_string(i));
  BackendConfig cfg;
  BackendFit fit = FitBackend(t, s.labels, cfg);
  EXPECT_EQ(fit.backend.preprocess.OutDim(), 6);
  const fs::path dir = fs::temp_directory_path() / "axvec_backend_test";
  fs::create_directories(dir);
  SaveBackend(dir / "backend", fit.backend);
  Backend loaded = LoadBackend(dir / "backend");
  std::vector<Trial> trials{{"u0", "u1", true}, {"u0", "u7", false}};
  auto a = ScoreTrials(fit.backend, t, trials);
  auto b = ScoreTrials(loaded, t, trials);
  EXPECT_EQ(a[0].score, b[0].score);
  EXPECT_EQ(a[1].score, b[1].score);
  EXPECT_GT(a[0].score, a[1].score);
  EXPECT_THROW(ScoreTrials(fit.backend, t, {{"u0", "nope", true}}), Error);

  SaveEmbeddings(dir / "emb", t);
  EmbeddingTable r = LoadEmbeddings(dir / "emb");
  EXPECT_EQ(r.ids, t.ids);
  EXPECT_TRUE(r.vectors == t.vectors);
  EXPECT_THROW(LoadBackend(dir / "emb"), Error);
}

TEST(Backend, ExtractionIsDeterministicAndOrderFree) {
  ArchConfig a;
  a.input_dim = 4;
  a.frame_dims = {6, 6, 6, 6, 8};
  a.utterance_dims = {5, 5};
  a.attention_hidden = 4;
  a.variant = Variant::kAcnnAbn;
  Model m = BuildModel(a, 3);
  CorpusSpec spec;
  spec.num_speakers = 3;
  spec.utts_per_speaker = 3;
  spec.feature_dim = 4;
  spec.frames_min = 20;
  spec.frames_max = 30;
  Corpus c = SynthesizeCorpus(spec);
  Tape tape;
  Batch warm{c.utterances[0].features, c.utterances[1].features};
  Forward(m, warm, Mode::kTrain, Head::kLogits, &tape);
  CommitRunningStats(m, tape);
  EmbeddingTable t1 = ExtractEmbeddings(m, c);
  EmbeddingTable t2 = ExtractEmbeddings(m, c, 3);
  EXPECT_EQ(t1.Dim(), 5);
  EXPECT_TRUE(t1.vectors == t2.vectors);
  Corpus rev = c;
  std::reverse(rev.utterances.begin(), rev.utterances.end());
  EmbeddingTable t3 = ExtractEmbeddings(m, rev);
  for (size_t i = 0; i < t1.Size(); ++i)
    EXPECT_TRUE(t1.vectors.row(static_cast<Index>(i)) ==
                t3.vectors.row(static_cast<Index>(t1.Size() - 1 - i)));
  c.utterances[2].features = c.utterances[2].features.topRows(10).eval();
  try {
    ExtractEmbeddings(m, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find(c.utterances[2].id), std::string::npos);
  }
}

TEST(Fusion, Cases) {
  std::vector<ScoreEntry> a{{"x", "y", 1.0}, {"x", "z", -0.25}};
  std::vector<ScoreEntry> b{{"x", "z", 0.75}, {"x", "y", 3.0}};
  auto self = FuseScores({a, a});
  EXPECT_EQ(self[0].score, a[0].score);
  EXPECT_EQ(self[1].score, a[1].score);
  auto f = FuseScores({a, b});
  ASSERT_EQ(f.size(), 2u);
  EXPECT_EQ(f[0].test, "y");
  EXPECT_EQ(f[0].score, 2.0);
  EXPECT_EQ(f[1].score, 0.25);
  b.pop_back();
  try {
    FuseScores({a, b});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("x y"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace axvec
