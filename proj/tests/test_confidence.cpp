#include "neuralbo/confidence.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace neuralbo;

namespace {

// Direct inverse of lambda I + sum phi phi^T, the oracle for the incremental state.
struct DirectPrecision {
  Matrix U;
  double lambda;

  DirectPrecision(Eigen::Index p, double lam) : U(Matrix::Identity(p, p) * lam), lambda(lam) {}
  void add(const Vector& phi) { U += phi * phi.transpose(); }
  Matrix inverse() const { return U.inverse(); }
  double sigma(const Vector& phi) const { return std::sqrt(lambda * phi.dot(U.ldlt().solve(phi))); }
  double logdet() const {
    Eigen::LLT<Matrix> llt(U / lambda);
    return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  }
};

}  // namespace

TEST(PrecisionState, InitialSigmaIsFeatureNorm) {
  Rng rng(1);
  const PrecisionState s(12, 0.3);
  for (int k = 0; k < 10; ++k) {
    const Vector phi = standard_normal_vector(rng, 12);
    EXPECT_NEAR(s.sigma(phi), phi.norm(), 1e-12);
  }
  EXPECT_EQ(s.count(), 0u);
  EXPECT_EQ(s.logdet(), 0.0);
}

TEST(PrecisionState, ScalarExample) {
  PrecisionState s(1, 1.0);
  const Vector phi = Vector::Ones(1);
  s.update(phi);
  EXPECT_NEAR(s.inverse()(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(s.sigma(phi), std::sqrt(0.5), 1e-15);
  EXPECT_NEAR(s.logdet(), std::log(2.0), 1e-15);
  EXPECT_EQ(s.count(), 1u);
}

TEST(PrecisionState, ZeroFeatureUpdateChangesOnlyCount) {
  PrecisionState s(4, 2.0);
  const Matrix before = s.inverse();
  s.update(Vector::Zero(4));
  EXPECT_EQ(s.inverse(), before);
  EXPECT_EQ(s.logdet(), 0.0);
  EXPECT_EQ(s.count(), 1u);
}

TEST(PrecisionState, MatchesDirectInverse) {
  Rng rng(2);
  const Eigen::Index p = 30;
  PrecisionState s(p, 0.5);
  DirectPrecision d(p, 0.5);
  for (int t = 0; t < 200; ++t) {
    const Vector phi = standard_normal_vector(rng, p) / std::sqrt(static_cast<double>(p));
    s.update(phi);
    d.add(phi);
    if (t % 20 == 19) {
      EXPECT_LT((s.inverse() - d.inverse()).cwiseAbs().maxCoeff(), 1e-7) << "t=" << t;
      const Vector probe = standard_normal_vector(rng, p);
      EXPECT_NEAR(s.sigma(probe), d.sigma(probe), 1e-8);
      EXPECT_NEAR(s.logdet(), d.logdet(), 1e-8);
    }
  }
  EXPECT_EQ(s.asymmetry(), 0.0);
}

TEST(PrecisionState, SigmaBatchMatchesPointwise) {
  Rng rng(3);
  PrecisionState s(10, 1.0);
  for (int t = 0; t < 15; ++t) s.update(standard_normal_vector(rng, 10));
  RowMatrix F(6, 10);
  for (int i = 0; i < 6; ++i) F.row(i) = standard_normal_vector(rng, 10).transpose();
  Vector full = s.sigma_batch(F);
  F.col(2).setZero();
  F.col(7).setZero();
  const Vector sparse = s.sigma_batch(F);
  for (int i = 0; i < 6; ++i) {
    EXPECT_NEAR(sparse[i], s.sigma(F.row(i).transpose()), 1e-12);
    EXPECT_GT(full[i], 0.0);
  }
  EXPECT_TRUE(s.sigma_batch(RowMatrix::Zero(3, 10)).isZero(0.0));
}

TEST(PrecisionState, SigmaIsMonotoneUnderUpdates) {
  Rng rng(4);
  for (int seq = 0; seq < 30; ++seq) {
    const Eigen::Index p = 1 + static_cast<Eigen::Index>(rng() % 20);
    PrecisionState s(p, 0.01 + static_cast<double>(rng() % 100) / 10.0);
    const Vector probe = standard_normal_vector(rng, p);
    double prev = s.sigma(probe);
    for (int t = 0; t < 40; ++t) {
      s = rank_one_update(s, standard_normal_vector(rng, p) * (1.0 + static_cast<double>(t % 3)));
      const double now = s.sigma(probe);
      EXPECT_LE(now, prev + 1e-10);
      prev = now;
    }
  }
}

TEST(PrecisionState, UpdatedPointSigmaShrinks) {
  // sigma_new(phi)^2 = sigma_old^2 / (1 + sigma_old^2 / lambda)
  Rng rng(5);
  PrecisionState s(8, 0.7);
  const Vector phi = standard_normal_vector(rng, 8);
  const double before = s.sigma(phi);
  s.update(phi);
  EXPECT_NEAR(s.sigma(phi) * s.sigma(phi), before * before / (1.0 + before * before / 0.7), 1e-12);
}

TEST(PrecisionState, RankOneUpdateIsValueSemantics) {
  const PrecisionState s(3, 1.0);
  const PrecisionState t = rank_one_update(s, Vector::Ones(3));
  EXPECT_EQ(s.count(), 0u);
  EXPECT_EQ(t.count(), 1u);
  EXPECT_EQ(s.inverse(), Matrix::Identity(3, 3));
}

TEST(PrecisionState, RejectsBadInput) {
  EXPECT_THROW(PrecisionState(0, 1.0), ConfigError);
  EXPECT_THROW(PrecisionState(3, 0.0), ConfigError);
  EXPECT_THROW(PrecisionState(3, -1.0), ConfigError);
  PrecisionState s(3, 1.0);
  EXPECT_THROW(s.sigma(Vector::Ones(4)), InputError);
  EXPECT_THROW(s.update(Vector::Ones(2)), InputError);
  EXPECT_THROW(s.update(Vector::Constant(3, std::nan(""))), InputError);
}

TEST(PrecisionState, CorruptedStateIsDetected) {
  Matrix bad = -Matrix::Identity(2, 2);
  PrecisionState s(bad, 1.0, 1, 0, 0.0);
  EXPECT_THROW(s.sigma(Vector::Ones(2)), NumericalError);
  EXPECT_THROW(s.update(Vector::Ones(2)), InvariantViolation);
}

TEST(PrecisionState, CheckpointRoundTrip) {
  Rng rng(6);
  PrecisionState s(7, 0.25, 16);
  for (int t = 0; t < 9; ++t) s.update(standard_normal_vector(rng, 7));
  std::stringstream buf;
  save_checkpoint(buf, s);
  const PrecisionState back = load_checkpoint(buf);
  EXPECT_EQ(back.inverse(), s.inverse());
  EXPECT_EQ(back.count(), 9u);
  EXPECT_EQ(back.lambda(), 0.25);
  EXPECT_EQ(back.feature_scale(), 16u);
  EXPECT_EQ(back.logdet(), s.logdet());

  std::stringstream junk("not a checkpoint at all");
  EXPECT_THROW(load_checkpoint(junk), InputError);
  std::stringstream full;
  save_checkpoint(full, s);
  std::stringstream half(full.str().substr(0, full.str().size() / 2));
  EXPECT_THROW(load_checkpoint(half), InputError);
}

// ---------------------------------------------------------------------------
// Features

TEST(Feature, SquaredNormApproachesKernelDiagonal) {
  const Vector x = Vector{{0.6, 0.0, 0.8}};
  double mirrored = 0.0, he = 0.0;
  for (std::uint64_t s = 0; s < 4; ++s) {
    mirrored += feature(init_network({3, 2, 8192}, s, InitScheme::mirrored), x).squaredNorm() / 4;
    he += feature(init_network({3, 2, 8192}, s, InitScheme::he_theory), x).squaredNorm() / 4;
  }
  EXPECT_NEAR(mirrored, 1.5, 0.05);
  // he-theory: only the output layer carries gradient, giving Sigma^(2)(x, x) = 1.
  EXPECT_NEAR(he, 1.0, 0.05);
}

TEST(Feature, BatchRowsMatchPointwise) {
  const auto net = init_network({3, 3, 32}, 2, InitScheme::mirrored);
  Matrix X(3, 4);
  X << 1, 0, 2, -1, 0, 1, 0, 1, 0, 0, 1, 1;
  const RowMatrix F = feature_batch(net, X);
  for (int j = 0; j < 4; ++j) EXPECT_LT((F.row(j).transpose() - feature(net, X.col(j))).cwiseAbs().maxCoeff(), 1e-14);
}

// ---------------------------------------------------------------------------
// Exploration scale

TEST(Exploration, TheoryScaleNoiselessIsSqrtTwoB) {
  EXPECT_DOUBLE_EQ(nu(ExplorationSchedule::theory(1.0, 0.0, 0.05), 1.0), std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(nu(ExplorationSchedule::theory(3.0, 0.0, 0.5), 7.0), 3.0 * std::sqrt(2.0));
}

TEST(Exploration, TheoryScaleWithNoise) {
  // 40-digit decimal evaluation of sqrt(2) + 0.1/sqrt(1.01) * sqrt(2 ln 20).
  EXPECT_NEAR(nu(ExplorationSchedule::theory(1.0, 0.1, 0.05), 1.01), 1.6577734752476996, 1e-12);
}

TEST(Exploration, TheoryScaleShrinksWithLambdaAndGrowsWithConfidence) {
  const auto s = ExplorationSchedule::theory(1.0, 0.5, 0.05);
  EXPECT_GT(nu(s, 0.5), nu(s, 2.0));
  EXPECT_GT(nu(ExplorationSchedule::theory(1.0, 0.5, 0.01), 1.0), nu(s, 1.0));
}

TEST(Exploration, FixedScaleIgnoresLambda) {
  EXPECT_EQ(nu(ExplorationSchedule::fixed(10.0), 0.01), 10.0);
  EXPECT_EQ(nu(ExplorationSchedule::fixed(0.0), 3.0), 0.0);
  EXPECT_THROW(nu(ExplorationSchedule::fixed(-1.0), 1.0), ConfigError);
}

TEST(Exploration, RejectsBadTheoryParameters) {
  EXPECT_THROW(nu(ExplorationSchedule::theory(1.0, 0.1, 0.0), 1.0), ConfigError);
  EXPECT_THROW(nu(ExplorationSchedule::theory(1.0, 0.1, 1.0), 1.0), ConfigError);
  EXPECT_THROW(nu(ExplorationSchedule::theory(0.0, 0.1, 0.5), 1.0), ConfigError);
  EXPECT_THROW(nu(ExplorationSchedule::theory(1.0, -0.1, 0.5), 1.0), ConfigError);
  EXPECT_THROW(nu(ExplorationSchedule::theory(1.0, 0.1, 0.5), 0.0), ConfigError);
}

TEST(Exploration, TheoryLambda) {
  EXPECT_DOUBLE_EQ(theory_lambda(100), 1.01);
  EXPECT_DOUBLE_EQ(theory_lambda(1), 2.0);
}
