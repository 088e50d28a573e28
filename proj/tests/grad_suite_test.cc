// tests/grad_suite_test.cc

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

#include "grad_suite.h"

namespace axvec::testing {
namespace {

void ExpectPasses(const GradChecks& checks) {
  ASSERT_FALSE(checks.empty());
  for (const GradCheck& c : checks) EXPECT_LT(c.error, c.tolerance) << c.name;
}

TEST(GradSuite, Conv1d) { ExpectPasses(Conv1dGradChecks()); }
TEST(GradSuite, Dense) { ExpectPasses(DenseGradChecks()); }
TEST(GradSuite, BatchNorm) { ExpectPasses(BatchNormGradChecks()); }
TEST(GradSuite, Pooling) { ExpectPasses(PoolingGradChecks()); }
TEST(GradSuite, Elementwise) { ExpectPasses(ElementwiseGradChecks()); }
TEST(GradSuite, SoftmaxCrossEntropy) { ExpectPasses(SoftmaxCeGradChecks()); }
TEST(GradSuite, AcnnContext) { ExpectPasses(AcnnContextGradChecks()); }
TEST(GradSuite, AcnnFilters) { ExpectPasses(AcnnFiltersGradChecks()); }
TEST(GradSuite, AcnnLayer) { ExpectPasses(AcnnLayerGradChecks()); }
TEST(GradSuite, Abn) { ExpectPasses(AbnGradChecks()); }

TEST(GradSuite, ModelAllVariantsBothModes) {
  const GradChecks checks = ModelGradChecksAllVariants();
  ExpectPasses(checks);
  EXPECT_EQ(checks.front().tolerance, kModelTolerance);
}

TEST(GradSuite, DetectsAWrongGradient) {
  Rng rng(1);
  Matrix x = RandomMatrix(3, 2, rng);
  GradRecorder r("square", [&] { return x.squaredNorm(); });
  const Matrix wrong = 3.0 * x;  // true gradient is 2x
  r.Check("x", x, wrong);
  EXPECT_FALSE(r.Take().front().Passed());
}

}  // namespace
}  // namespace axvec::testing
