#include <gtest/gtest.h>

#include <cmath>

#include "noisefacts/schedule.hpp"

using namespace noisefacts;

namespace {

LatentBlock<double> const_block(int slots, int dim, double value, int t = 0) {
  LatentBlock<double> b;
  b.t = t;
  b.m = Mat<double>::Constant(slots, dim, value);
  return b;
}

double sample_mean(const Mat<double>& m) { return m.mean(); }

double sample_var(const Mat<double>& m) {
  double mu = m.mean();
  return (m.array() - mu).square().mean();
}

}  // namespace

TEST(SqrtSchedule, PaperInitialValues) {
  NoiseSchedule sc = sqrt_schedule(2000, 1e-4, 1.0);
  EXPECT_EQ(sc.alpha_bar(0), 1.0 - std::sqrt(1e-4));
  EXPECT_NEAR(sc.alpha_bar(0), 0.99, 1e-12);
  EXPECT_NEAR(sc.beta(0), 0.01, 1e-12);
}

TEST(SqrtSchedule, RawTerminalValueForcesClamp) {
  // the raw formula is negative at t = T, so the clamp must engage
  EXPECT_LT(1.0 - std::sqrt(2000.0 / 2000.0 + 1e-4), 0.0);
  NoiseSchedule sc = sqrt_schedule(2000, 1e-4, 1.0);
  EXPECT_GT(sc.alpha_bar(2000), 0.0);
  EXPECT_LT(sc.alpha_bar(2000), 1.0);
  EXPECT_NEAR(sc.beta(2000), kBetaCeil, 1e-9);
}

TEST(SqrtSchedule, StrictlyDecreasingWithBoundedBetas) {
  for (int T : {1, 7, 200, 2000}) {
    NoiseSchedule sc = sqrt_schedule(T, 1e-4, 4.0);
    EXPECT_NO_THROW(sc.check_valid());
    for (int t = 1; t <= T; ++t) {
      EXPECT_LT(sc.alpha_bar(t), sc.alpha_bar(t - 1));
      EXPECT_GE(sc.beta(t), kBetaFloor - 1e-12);
      EXPECT_LE(sc.beta(t), kBetaCeil + 1e-12);
    }
  }
}

TEST(ForwardStep, VarianceMatchesBeta) {
  NoiseSchedule sc;
  sc.T = 2;
  sc.s = 1e-4;
  sc.A_amp = 1.0;
  sc.shared = {0.99, 0.99 * 0.99, 0.99 * 0.99 * 0.98};
  ASSERT_NEAR(sc.beta(1), 0.01, 1e-12);
  Rng rng(77);
  auto out = forward_step(const_block(1, 100000, 0.0), 1, sc, rng);
  EXPECT_NEAR(sample_var(out.m), 0.01, 0.01 * 0.05);
}

TEST(ForwardStep, SeededDeterminism) {
  NoiseSchedule sc = sqrt_schedule(100, 1e-4, 1.0);
  Rng r1(5), r2(5);
  auto a = forward_step(const_block(3, 8, 0.4), 10, sc, r1);
  auto b = forward_step(const_block(3, 8, 0.4), 10, sc, r2);
  EXPECT_TRUE(a.m.isApprox(b.m, 0.0));
}

TEST(ForwardStep, AmplificationScalesStandardDeviation) {
  NoiseSchedule sc1 = sqrt_schedule(100, 1e-4, 1.0);
  NoiseSchedule sc4 = sqrt_schedule(100, 1e-4, 4.0);
  Rng r1(9), r2(9);
  auto a = forward_step(const_block(1, 20000, 0.0), 5, sc1, r1);
  auto b = forward_step(const_block(1, 20000, 0.0), 5, sc4, r2);
  EXPECT_NEAR(std::sqrt(sample_var(b.m)) / std::sqrt(sample_var(a.m)), 4.0, 1e-9);
}

TEST(ForwardJump, StepZeroVarianceIsBetaZeroTimesAmpSquared) {
  NoiseSchedule sc = sqrt_schedule(200, 1e-4, 4.0);
  Rng rng(11);
  auto out = forward_jump(const_block(1, 100000, 0.0), 0, sc, rng);
  double expect = sc.beta(0) * 16.0;
  EXPECT_NEAR(sample_var(out.m), expect, expect * 0.05);
}

TEST(ForwardJump, MeanMatchesSignalRetention) {
  NoiseSchedule sc = sqrt_schedule(2000, 1e-4, 1.0);
  int t = 600;
  double z0 = 1.3;
  Rng rng(13);
  auto out = forward_jump(const_block(1, 100000, z0), t, sc, rng);
  double expect = std::sqrt(sc.alpha_bar(t)) * z0;
  double sigma = std::sqrt(1.0 - sc.alpha_bar(t));
  EXPECT_NEAR(sample_mean(out.m), expect, 3.0 * sigma / std::sqrt(100000.0));
}

// Two-estimator agreement: the t-step marginal reached by the beta_0 jump
// plus chain steps 1..t must match the direct jump.
TEST(ForwardJump, AgreesWithComposedForwardSteps) {
  NoiseSchedule sc = sqrt_schedule(200, 1e-4, 1.0);
  int t = 60;
  double z0 = 0.7;
  int n = 40000;
  Rng r1(17), r2(19);
  LatentBlock<double> composed = forward_jump(const_block(1, n, z0), 0, sc, r1);
  for (int i = 1; i <= t; ++i) composed = forward_step(composed, i, sc, r1);
  LatentBlock<double> jumped = forward_jump(const_block(1, n, z0), t, sc, r2);

  double var_true = 1.0 - sc.alpha_bar(t);
  double tol_mean = 3.0 * std::sqrt(2.0 * var_true / n);
  EXPECT_NEAR(sample_mean(composed.m), sample_mean(jumped.m), tol_mean);
  double tol_var = 3.0 * var_true * std::sqrt(2.0 / n) * 2.0;
  EXPECT_NEAR(sample_var(composed.m), sample_var(jumped.m), tol_var);
}

TEST(Posterior, ZeroInputsGiveZeroMean) {
  NoiseSchedule sc = sqrt_schedule(100, 1e-4, 1.0);
  auto [mean, var] = posterior_params(const_block(2, 4, 0.0, 5),
                                      const_block(2, 4, 0.0), 5, sc);
  EXPECT_TRUE(mean.isZero(0.0));
  EXPECT_GT(var[0], 0.0);
}

TEST(Posterior, VarianceBelowBetaForAllLaterSteps) {
  NoiseSchedule sc = sqrt_schedule(2000, 1e-4, 1.0);
  for (int t = 2; t <= sc.T; ++t) {
    auto [mean, var] =
        posterior_params(const_block(1, 1, 0.5, t), const_block(1, 1, 0.2), t, sc);
    EXPECT_LT(var[0], sc.beta(t)) << "t=" << t;
  }
}

TEST(Posterior, FirstStepVarianceMatchesHandEvaluation) {
  NoiseSchedule sc = sqrt_schedule(2000, 1e-4, 1.0);
  auto [mean, var] =
      posterior_params(const_block(1, 1, 1.0, 1), const_block(1, 1, 1.0), 1, sc);
  double ab0 = sc.alpha_bar(0);
  double ab1 = sc.alpha_bar(1);
  double beta1 = 1.0 - ab1 / ab0;
  double expect = (1.0 - ab0) / (1.0 - ab1) * beta1;
  EXPECT_NEAR(var[0], expect, 1e-15);
  // the coefficients reproduce the mean for matching z_t = z_0 = 1
  double c0 = std::sqrt(ab0) * beta1 / (1.0 - ab1);
  double ct = std::sqrt(1.0 - beta1) * (1.0 - ab0) / (1.0 - ab1);
  EXPECT_NEAR(mean(0, 0), c0 + ct, 1e-15);
}

TEST(Posterior, StepZeroIsHardError) {
  NoiseSchedule sc = sqrt_schedule(10, 1e-4, 1.0);
  EXPECT_THROW(
      posterior_params(const_block(1, 1, 0.0), const_block(1, 1, 0.0), 0, sc),
      std::out_of_range);
}

TEST(AdaptSchedule, EquallySpacedLossesAreFixedPoint) {
  NoiseSchedule sc = sqrt_schedule(10, 1e-4, 1.0);
  AdaptiveState st(10, 3);
  for (int t = 1; t <= 10; ++t) st.record(t, 0, 0.1 * t);
  NoiseSchedule out = adapt_schedule(st, sc);
  ASSERT_TRUE(out.per_position_active());
  for (int t = 0; t <= 10; ++t) {
    EXPECT_NEAR(out.alpha_bar(t, 0), sc.alpha_bar(t), 1e-9);
    EXPECT_EQ(out.alpha_bar(t, 1), sc.alpha_bar(t));  // untouched position
  }
}

TEST(AdaptSchedule, ConstantLossesLeavePositionUnchanged) {
  NoiseSchedule sc = sqrt_schedule(10, 1e-4, 1.0);
  AdaptiveState st(10, 2);
  for (int t = 1; t <= 10; ++t) st.record(t, 0, 0.5);
  NoiseSchedule out = adapt_schedule(st, sc);
  for (int t = 0; t <= 10; ++t) EXPECT_EQ(out.alpha_bar(t, 0), sc.alpha_bar(t));
}

TEST(AdaptSchedule, RandomConvexCurvesStayValid) {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    int T = 30;
    NoiseSchedule sc = sqrt_schedule(T, 1e-4, 1.0);
    AdaptiveState st(T, 2);
    double a = rng.uniform(0.001, 0.05);
    double b = rng.uniform(0.0, T);
    double c = rng.uniform(0.0, 0.5);
    for (int t = 1; t <= T; ++t) {
      double l = a * (t - b) * (t - b) + c + 0.02 * rng.uniform();
      st.record(t, 0, l);
      st.record(t, 1, l * rng.uniform(0.5, 1.5));
    }
    NoiseSchedule out = adapt_schedule(st, sc);
    EXPECT_NO_THROW(out.check_valid());
    for (int n = 0; n < 2; ++n)
      for (int t = 1; t <= T; ++t) {
        EXPECT_GT(out.alpha_bar(t, n), 0.0);
        EXPECT_LT(out.alpha_bar(t, n), 1.0);
        EXPECT_LT(out.alpha_bar(t, n), out.alpha_bar(t - 1, n));
        EXPECT_LE(out.beta(t, n), kBetaCeil + 1e-12);
      }
  }
}

TEST(AdaptSchedule, SparseRecordsOnlyTouchRecordedSteps) {
  NoiseSchedule sc = sqrt_schedule(50, 1e-4, 1.0);
  AdaptiveState st(50, 1);
  st.record(10, 0, 0.2);
  st.record(20, 0, 0.9);
  st.record(30, 0, 0.4);
  NoiseSchedule out = adapt_schedule(st, sc);
  EXPECT_NO_THROW(out.check_valid());
  EXPECT_EQ(out.alpha_bar(5, 0), sc.alpha_bar(5));
}

TEST(ScheduleDump, JsonRoundTrip) {
  NoiseSchedule sc = sqrt_schedule(20, 1e-4, 4.0);
  AdaptiveState st(20, 2);
  for (int t = 1; t <= 20; ++t) st.record(t, 0, 0.01 * t * t);
  sc = adapt_schedule(st, sc);
  auto j = sc.to_json();
  NoiseSchedule back = NoiseSchedule::from_json(j);
  EXPECT_EQ(back.T, sc.T);
  EXPECT_EQ(back.A_amp, sc.A_amp);
  for (int t = 0; t <= 20; ++t) {
    EXPECT_EQ(back.alpha_bar(t, 0), sc.alpha_bar(t, 0));
    EXPECT_EQ(back.alpha_bar(t, 1), sc.alpha_bar(t, 1));
  }
}
