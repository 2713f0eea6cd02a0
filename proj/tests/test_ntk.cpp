#include "neuralbo/ntk.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace neuralbo;

namespace {

Vector unit(Rng& rng, Eigen::Index d) { return standard_normal_vector(rng, d).normalized(); }

}  // namespace

TEST(NtkValue, HandRecursionExamples) {
  const Vector x = Vector::Unit(3, 0), y = Vector::Unit(3, 2);
  const auto same = ntk_layers(x, x, 2);
  EXPECT_NEAR(same.sigma.back(), 1.0, 1e-15);
  EXPECT_NEAR(same.htilde.back(), 2.0, 1e-15);
  EXPECT_NEAR(ntk_value(x, x, 2), 1.5, 1e-15);
  const auto orth = ntk_layers(x, y, 2);
  EXPECT_NEAR(orth.sigma.back(), 1.0 / std::numbers::pi, 1e-15);
  EXPECT_NEAR(orth.htilde.back(), 1.0 / std::numbers::pi, 1e-15);
  EXPECT_NEAR(ntk_value(x, y, 2), 0.3183098861837907, 1e-15);
}

TEST(NtkValue, DiagonalOfUnitInputGrowsByOnePerLayer) {
  // Sigma stays at 1 and Htilde^(l) = l, so H = (L + 1) / 2.
  const Vector x = Vector{{0.6, 0.8}};
  for (std::size_t L = 2; L <= 6; ++L) EXPECT_NEAR(ntk_value(x, x, L), (L + 1) / 2.0, 1e-12);
}

TEST(NtkValue, SymmetricAndHomogeneous) {
  Rng rng(1);
  for (int k = 0; k < 50; ++k) {
    // d >= 2: in one dimension every pair is (anti)parallel, where acos is ill-conditioned
    const Eigen::Index d = 2 + static_cast<Eigen::Index>(rng() % 7);
    const std::size_t L = 2 + rng() % 3;
    const Vector x = standard_normal_vector(rng, d), y = standard_normal_vector(rng, d);
    EXPECT_EQ(ntk_value(x, y, L), ntk_value(y, x, L));
    const double c = 0.1 + static_cast<double>(rng() % 50) / 10.0;
    EXPECT_NEAR(ntk_value(c * x, c * y, L), c * c * ntk_value(x, y, L), 1e-10 * c * c * x.norm() * y.norm());
  }
}

TEST(NtkValue, NormalizedIsOneOnDiagonalAndBounded) {
  Rng rng(2);
  for (int k = 0; k < 20; ++k) {
    const Vector x = standard_normal_vector(rng, 4), y = standard_normal_vector(rng, 4);
    EXPECT_NEAR(ntk_value(x, x, 3, true), 1.0, 1e-14);
    const double v = ntk_value(x, y, 3, true);
    EXPECT_LE(v, 1.0 + 1e-14);
    EXPECT_GE(v, 0.0);
  }
}

TEST(NtkValue, AntiparallelInputsClampCorrelation) {
  const Vector x = Vector{{1.0, 1e-9}};
  EXPECT_NEAR(ntk_value(x, -x, 2), 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(ntk_value(x, -x * (1 + 1e-16), 3)));
}

TEST(NtkValue, RejectsZeroAndMismatchedInputs) {
  EXPECT_THROW(ntk_value(Vector::Zero(3), Vector::Ones(3), 2), InputError);
  EXPECT_THROW(ntk_value(Vector::Ones(2), Vector::Ones(3), 2), InputError);
  EXPECT_THROW(ntk_value(Vector::Ones(2), Vector::Ones(2), 1), ConfigError);
}

TEST(NtkValue, AgreesWithMonteCarloRecursion) {
  Rng rng(3);
  for (int k = 0; k < 6; ++k) {
    const Eigen::Index d = 2 + k;
    const std::size_t L = 2 + static_cast<std::size_t>(k % 3);
    const Vector x = unit(rng, d), y = unit(rng, d);
    const auto mc = oracle::mc_ntk(x, y, L, 200000, 100 + k, 50);
    EXPECT_LT(std::abs(mc.mean - ntk_value(x, y, L)), 4 * mc.std_error) << "d=" << d << " L=" << L;
  }
}

// ---------------------------------------------------------------------------

TEST(NtkMatrix, SinglePointAndDuplicates) {
  const Vector x = Vector{{0.0, 1.0, 0.0}};
  const auto K1 = ntk_matrix({x}, 2);
  ASSERT_EQ(K1.size(), 1);
  EXPECT_DOUBLE_EQ(K1.values(0, 0), 1.5);

  const auto K2 = ntk_matrix({x, x}, 2);
  EXPECT_EQ(K2.values.row(0), K2.values.row(1));
  EXPECT_NEAR(K2.values.determinant(), 0.0, 1e-12);
}

TEST(NtkMatrix, SymmetricPsdWithPositiveDiagonal) {
  Rng rng(4);
  std::vector<Vector> pts;
  for (int i = 0; i < 25; ++i) pts.push_back(standard_normal_vector(rng, 5));
  const auto K = ntk_matrix(pts, 3);
  EXPECT_EQ(K.values, K.values.transpose());
  EXPECT_GT(K.values.diagonal().minCoeff(), 0.0);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(K.values);
  EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-8 * eig.eigenvalues().maxCoeff());
}

TEST(NtkMatrix, RejectsEmptyAndZeroPoints) {
  EXPECT_THROW(ntk_matrix({}, 2), InputError);
  EXPECT_THROW(ntk_matrix({Vector::Ones(2), Vector::Zero(2)}, 2), InputError);
}

TEST(NtkMatrix, CsvExport) {
  const auto K = ntk_matrix({Vector::Unit(2, 0), Vector::Unit(2, 1)}, 2);
  std::ostringstream os;
  write_kernel_csv(os, K);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "i,k0,k1");
  std::istringstream in(os.str());
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 3);
}

// ---------------------------------------------------------------------------

TEST(InfoGain, ScalarExample) {
  const auto r = info_gain({Vector{{1.0, 0.0}}}, 1.0, 2);
  EXPECT_NEAR(r.value, 0.4581453659370775, 1e-14);
  EXPECT_EQ(r.t, 1u);
  EXPECT_NEAR(r.smallest_eigenvalue, 1.5, 1e-15);
}

TEST(InfoGain, VanishesAsLambdaGrows) {
  Rng rng(5);
  std::vector<Vector> pts;
  for (int i = 0; i < 10; ++i) pts.push_back(unit(rng, 3));
  double prev = info_gain(pts, 1.0, 2).value;
  for (double lam : {10.0, 100.0, 1e4, 1e8}) {
    const double v = info_gain(pts, lam, 2).value;
    EXPECT_LT(v, prev);
    prev = v;
  }
  EXPECT_LT(prev, 1e-6);
}

TEST(InfoGain, EqualsEigenvalueSum) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Vector> pts;
    for (int i = 0; i < 5 + trial * 3; ++i) pts.push_back(standard_normal_vector(rng, 4));
    const double lam = 0.1 + trial * 0.3;
    const auto K = ntk_matrix(pts, 2 + trial % 3);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(K.values);
    const double expected = 0.5 * (1.0 + eig.eigenvalues().array() / lam).log().sum();
    EXPECT_NEAR(info_gain(K, lam).value, expected, 1e-8);
  }
}

TEST(InfoGain, NonDecreasingWhenPointsAreAppended) {
  Rng rng(7);
  std::vector<Vector> pts{unit(rng, 4)};
  double prev = info_gain(pts, 0.5, 3).value;
  EXPECT_GE(prev, 0.0);
  for (int i = 0; i < 20; ++i) {
    pts.push_back(i % 4 == 3 ? pts[static_cast<std::size_t>(i) / 2] : unit(rng, 4));
    const double v = info_gain(pts, 0.5, 3).value;
    EXPECT_GE(v, prev - 1e-12);
    prev = v;
  }
}

TEST(InfoGain, RejectsBadLambda) {
  EXPECT_THROW(info_gain({Vector::Ones(2)}, 0.0, 2), ConfigError);
}

// ---------------------------------------------------------------------------

TEST(EmpiricalKernel, SelfPairEqualsMeanSquaredFeatureNorm) {
  const NetworkShape shape{3, 2, 64};
  const Vector x = Vector{{1.0, 2.0, -1.0}};
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4};
  double direct = 0.0;
  for (auto s : seeds) direct += feature(init_network(shape, s, InitScheme::mirrored), x).squaredNorm() / 4;
  EXPECT_NEAR(empirical_kernel(shape, seeds, x, x, InitScheme::mirrored).mean, direct, 1e-12);
}

TEST(EmpiricalKernel, StandardErrorShrinksLikeInverseRootSeeds) {
  const NetworkShape shape{3, 2, 32};
  const Vector x = Vector::Unit(3, 0), y = Vector{{0.6, 0.8, 0.0}};
  std::vector<std::uint64_t> few, many;
  for (std::uint64_t s = 0; s < 100; ++s) few.push_back(s);
  for (std::uint64_t s = 0; s < 1600; ++s) many.push_back(10000 + s);
  const double se_few = empirical_kernel(shape, few, x, y, InitScheme::mirrored).std_error;
  const double se_many = empirical_kernel(shape, many, x, y, InitScheme::mirrored).std_error;
  EXPECT_NEAR(se_few / se_many, 4.0, 1.0);
}

TEST(EmpiricalKernel, MirroredInitConvergesToNtk) {
  const Vector x = Vector::Unit(4, 0), y = Vector{{0.5, 0.5, 0.5, 0.5}};
  const double exact = ntk_value(x, y, 2);
  std::vector<double> err;
  for (std::size_t m : {64u, 1024u, 8192u}) {
    std::vector<std::uint64_t> seeds;
    for (std::uint64_t s = 0; s < 6; ++s) seeds.push_back(derive_seed(m, s));
    err.push_back(std::abs(empirical_kernel({4, 2, m}, seeds, x, y, InitScheme::mirrored).mean - exact));
  }
  EXPECT_LT(err[2], err[0]);
  EXPECT_LT(err[2], 0.02);
}

TEST(EmpiricalKernel, HeTheoryInitConvergesToLastLayerKernel) {
  // Zero output weights leave only the output-layer gradient block, whose
  // limit is Sigma^(L) rather than H.
  const Vector x = Vector::Unit(4, 0), y = Vector{{0.5, 0.5, 0.5, 0.5}};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8};
  const double est = empirical_kernel({4, 2, 8192}, seeds, x, y, InitScheme::he_theory).mean;
  EXPECT_NEAR(est, ntk_layers(x, y, 2).sigma.back(), 0.02);
  EXPECT_GT(std::abs(est - ntk_value(x, y, 2)), 0.1);
}

TEST(EmpiricalGram, MatchesEmpiricalKernelEntries) {
  const auto net = init_network({3, 2, 128}, 9, InitScheme::mirrored);
  const std::vector<Vector> pts{Vector::Unit(3, 0), Vector::Unit(3, 1), Vector{{0.6, 0.0, 0.8}}};
  const Matrix K = empirical_gram(net, pts);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      EXPECT_NEAR(K(i, j), empirical_kernel({3, 2, 128}, {9}, pts[i], pts[j], InitScheme::mirrored).mean, 1e-12);
}

TEST(WidthConvergence, MirroredMedianErrorFalls) {
  const auto pairs = random_unit_pairs(5, 8, 11);
  const auto rows = width_convergence(pairs, 2, {64, 1024}, 4, InitScheme::mirrored, 3);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_GT(rows[0].median_abs_error, rows[1].median_abs_error);
  EXPECT_NEAR(rows[1].diagonal_ratio, 1.0, 0.05);
  for (const auto& r : rows) EXPECT_GE(r.max_abs_error, r.median_abs_error);
}

TEST(RandomUnitPairs, DeterministicUnitNorm) {
  const auto a = random_unit_pairs(6, 5, 1), b = random_unit_pairs(6, 5, 1);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_NEAR(a[i].second.norm(), 1.0, 1e-15);
  }
}
