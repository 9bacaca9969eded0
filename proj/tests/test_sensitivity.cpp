// Copyright (C) 2026 The moeprec Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "moeprec/error.hpp"
#include "moeprec/sensitivity.hpp"
#include "test_support.hpp"

namespace moeprec {
namespace {

// Independent oracle: gradient of ||W|| by central differences of the norm itself.
Matrix fd_hvp(const Matrix& w, const Matrix& v, double h) {
  Matrix plus = w, minus = w;
  for (std::size_t i = 0; i < w.size(); ++i) {
    plus.data()[i] += h * v.data()[i];
    minus.data()[i] -= h * v.data()[i];
  }
  const double np = frobenius_norm(plus), nm = frobenius_norm(minus);
  Matrix out(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.size(); ++i) out.data()[i] = (plus.data()[i] / np - minus.data()[i] / nm) / (2 * h);
  return out;
}

TEST(Hvp, HandExample) {
  const Matrix r = hvp_frobenius(Matrix{{3, 4}}, Matrix{{1, 0}});
  EXPECT_NEAR(r(0, 0), 0.128, 1e-15);
  EXPECT_NEAR(r(0, 1), -0.096, 1e-15);
}

TEST(Hvp, WeightDirectionHasNoCurvature) {
  const Matrix w = test::random_matrix(5, 4, 1);
  const Matrix r = hvp_frobenius(w, w);
  for (double x : r.data()) EXPECT_NEAR(x, 0.0, 1e-12);
}

TEST(Hvp, OrthogonalDirectionIsScaledCopy) {
  const Matrix w{{1, 0}, {0, 0}};
  const Matrix v{{0, 2}, {3, 0}};
  const Matrix r = hvp_frobenius(w, v);
  EXPECT_EQ(r, v);
  const Matrix w2{{2, 0}};
  EXPECT_EQ(hvp_frobenius(w2, Matrix{{0, 1}}), (Matrix{{0, 0.5}}));
}

TEST(Hvp, MatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Matrix w = test::random_matrix(8, 8, seed);
    const Matrix v = test::random_matrix(8, 8, seed + 1000);
    const Matrix got = hvp_frobenius(w, v);
    const Matrix want = fd_hvp(w, v, 1e-5);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
      num += (got.data()[i] - want.data()[i]) * (got.data()[i] - want.data()[i]);
      den += want.data()[i] * want.data()[i];
    }
    EXPECT_LE(std::sqrt(num / den), 1e-6);
  }
}

TEST(Hvp, ZeroWeightIsDegenerate) {
  try {
    hvp_frobenius(Matrix(2, 2), Matrix(2, 2, 1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Degenerate);
  }
}

TEST(Hvp, ShapeMismatch) { EXPECT_THROW(hvp_frobenius(Matrix(2, 2, 1.0), Matrix(2, 3, 1.0)), Error); }

TEST(Hutchinson, IdentityExample) {
  RngStream rng(1, 1);
  const TraceEstimate t = hutchinson_trace(Matrix{{1, 0}, {0, 1}}, 10000, ProbeDistribution::Rademacher, rng);
  EXPECT_NEAR(t.mean, 3.0 / std::sqrt(2.0), 3 * t.std_error + 1e-12);
  EXPECT_NEAR(3.0 / std::sqrt(2.0), 2.121320, 1e-6);
}

TEST(Hutchinson, ScalarMatrixHasZeroTrace) {
  RngStream rng(1, 1);
  const TraceEstimate t = hutchinson_trace(Matrix{{5}}, 100, ProbeDistribution::Gaussian, rng);
  for (double x : t.per_sample) EXPECT_NEAR(x, 0.0, 1e-12);
  EXPECT_NEAR(t.mean, 0.0, 1e-12);
}

TEST(Hutchinson, RowVectorExample) {
  RngStream rng(2, 2);
  const TraceEstimate t = hutchinson_trace(Matrix{{3, 4}}, 10000, ProbeDistribution::Gaussian, rng);
  EXPECT_NEAR(t.mean, 0.2, 3 * t.std_error);
}

TEST(Hutchinson, EstimateBookkeeping) {
  RngStream rng(3, 3);
  const TraceEstimate t = hutchinson_trace(test::random_matrix(4, 4, 3), 57, ProbeDistribution::Gaussian, rng);
  ASSERT_EQ(t.per_sample.size(), 57u);
  EXPECT_EQ(t.num_samples, 57u);
  double mean = 0.0;
  for (double x : t.per_sample) mean += x;
  mean /= 57.0;
  double var = 0.0;
  for (double x : t.per_sample) var += (x - mean) * (x - mean);
  var /= 56.0;
  EXPECT_DOUBLE_EQ(t.mean, mean);
  EXPECT_NEAR(t.std_error, std::sqrt(var / 57.0), 1e-14);
}

TEST(Hutchinson, Unbiased) {
  const Matrix w = test::random_matrix(16, 16, 8);
  const double truth = analytic_trace(w);
  for (ProbeDistribution dist : {ProbeDistribution::Rademacher, ProbeDistribution::Gaussian}) {
    double grand = 0.0, pooled_var = 0.0;
    const int K = 200;
    for (int k = 0; k < K; ++k) {
      RngStream rng(k, 17);
      const TraceEstimate t = hutchinson_trace(w, 100, dist, rng);
      grand += t.mean;
      pooled_var += t.std_error * t.std_error;
    }
    grand /= K;
    const double pooled_se = std::sqrt(pooled_var) / K;
    EXPECT_NEAR(grand, truth, 4 * pooled_se) << probe_name(dist);
  }
}

TEST(Hutchinson, RademacherHasLowerVariance) {
  int violations = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix w = test::random_matrix(6, 6, seed);
    RngStream r1(seed, 1), r2(seed, 2);
    const double rad = hutchinson_trace(w, 1000, ProbeDistribution::Rademacher, r1).std_error;
    const double gau = hutchinson_trace(w, 1000, ProbeDistribution::Gaussian, r2).std_error;
    if (rad > gau) ++violations;
  }
  EXPECT_LE(violations, 1);
}

TEST(Hutchinson, WeightDirectionSampleIsZero) {
  const Matrix w = test::random_matrix(4, 5, 2);
  const Matrix h = hvp_frobenius(w, w);
  EXPECT_NEAR(inner(w, h), 0.0, 1e-12);
}

TEST(Hutchinson, ScaleLawWithMatchedSeeds) {
  const Matrix w = test::random_matrix(6, 7, 4);
  for (double c : {0.5, 2.0, 10.0}) {
    RngStream a(9, 9), b(9, 9);
    const double base = hutchinson_trace(w, 50, ProbeDistribution::Gaussian, a).mean;
    const double s = hutchinson_trace(scaled(w, c), 50, ProbeDistribution::Gaussian, b).mean;
    EXPECT_NEAR(s, base / c, 1e-12 * std::abs(base));
  }
}

TEST(FiniteDifference, Examples) {
  EXPECT_NEAR(finite_difference_trace(Matrix{{3, 4}}, 1e-4), 0.2, 1e-6);
  EXPECT_NEAR(finite_difference_trace(Matrix{{1, 0}, {0, 1}}, 1e-4), 2.121320, 1e-5);
}

TEST(FiniteDifference, AnalyticOracleOnSmallMatrices) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix w = test::random_matrix(3, 3, seed);
    EXPECT_NEAR(finite_difference_trace(w, 1e-4), analytic_trace(w), 1e-5);
    EXPECT_NEAR(analytic_trace(w), 8.0 / frobenius_norm(w), 1e-15);
  }
}

TEST(FiniteDifference, AgreesWithHutchinson) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix w = test::random_matrix(4, 4, seed + 50);
    RngStream rng(seed, 3);
    const TraceEstimate t = hutchinson_trace(w, 50000, ProbeDistribution::Rademacher, rng);
    EXPECT_NEAR(t.mean, finite_difference_trace(w, 1e-4), 4 * t.std_error + 1e-9);
  }
}

TEST(FiniteDifference, RejectsLargeInputs) { EXPECT_THROW(finite_difference_trace(Matrix(9, 9, 1.0), 1e-4), Error); }

TEST(ExpertSensitivity, TotalIsSumOfProjections) {
  const MoEModel m = generate_synthetic(test::small_config(1, 2, 1, 6, 10), 3, 5.0);
  auto streams = expert_streams(3, {0, 1});
  const ExpertSensitivity s = expert_sensitivity(m.moe_layer(0)->experts[1], 32, ProbeDistribution::Rademacher, streams);
  EXPECT_DOUBLE_EQ(s.total, s.gate_trace.mean + s.up_trace.mean + s.down_trace.mean);
  EXPECT_GT(s.std_error(), 0.0);
}

TEST(ExpertSensitivity, EqualMatricesAreAdditive) {
  const MatrixF w = generate_synthetic(test::small_config(1, 1, 1, 6, 6), 2, 1.0).moe_layer(0)->experts[0].gate_proj;
  const Expert e{w, w, w};
  ProjectionStreams streams{RngStream(5, 1), RngStream(5, 1), RngStream(5, 1)};
  const ExpertSensitivity s = expert_sensitivity(e, 40, ProbeDistribution::Gaussian, streams);
  RngStream single(5, 1);
  const double one = hutchinson_trace(w.cast<double>(), 40, ProbeDistribution::Gaussian, single).mean;
  EXPECT_NEAR(s.total, 3 * one, 1e-12 * std::abs(one));
}

TEST(ExpertSensitivity, ScaledExpertTraceScalesInversely) {
  const MoEModel m = generate_synthetic(test::small_config(1, 1, 1, 8, 12), 6, 1.0);
  Expert e = m.moe_layer(0)->experts[0];
  auto s1 = expert_streams(1, {0, 0});
  const ExpertSensitivity base = expert_sensitivity(e, 30, ProbeDistribution::Rademacher, s1);
  for (Projection p : kProjections)
    for (float& v : e.projection(p).data()) v *= 8.0f;
  auto s2 = expert_streams(1, {0, 0});
  const ExpertSensitivity big = expert_sensitivity(e, 30, ProbeDistribution::Rademacher, s2);
  for (Projection p : kProjections) EXPECT_NEAR(big.trace(p).mean, base.trace(p).mean / 8.0, 1e-12);
}

TEST(ExpertSensitivity, ZeroProjectionNamed) {
  const MoEModel m = generate_synthetic(test::small_config(1, 1, 1, 4, 4), 6, 1.0);
  Expert e = m.moe_layer(0)->experts[0];
  e.up_proj = MatrixF(4, 4, 0.0f);
  auto streams = expert_streams(1, {0, 0});
  try {
    expert_sensitivity(e, 4, ProbeDistribution::Rademacher, streams);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.kind(), ErrorKind::Degenerate);
    EXPECT_NE(std::string(err.what()).find("up_proj"), std::string::npos);
  }
}

}  // namespace
}  // namespace moeprec
