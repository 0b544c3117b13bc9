#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "covtune/boot_operator.hpp"
#include "covtune/models.hpp"
#include "oracles.hpp"

using namespace covtune;

namespace {

// Literal leave-one-out definition: for each i, the centered product at i times the
// (n-2)-divisor covariance of the other rows, centered at their own mean.
double brute_product_moment(const Dataset& d, std::size_t k, std::size_t l, std::size_t k2, std::size_t l2) {
  const std::size_t n = d.n();
  const auto mean = d.column_means();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mk2 = 0.0, ml2 = 0.0;
    for (std::size_t r = 0; r < n; ++r)
      if (r != i) mk2 += d(r, k2), ml2 += d(r, l2);
    mk2 /= n - 1.0, ml2 /= n - 1.0;
    double inner = 0.0;
    for (std::size_t r = 0; r < n; ++r)
      if (r != i) inner += (d(r, k2) - mk2) * (d(r, l2) - ml2);
    total += (d(i, k) - mean[k]) * (d(i, l) - mean[l]) * inner / (n - 2.0);
  }
  return total / (n - 1.0);
}

// Dense assembly of the Gamma* formula with brute-force product moments.
oracle::Dense naive_gamma(const EstimatorSpec& spec, const Dataset& d, double lambda) {
  const std::size_t p = d.p(), n = d.n();
  oracle::Dense g(p, std::vector<double>(p, 0.0));
  auto w = [&](std::size_t a, std::size_t b) { return lag_weight(spec.family, a > b ? a - b : b - a, lambda); };
  for (std::size_t k = 0; k < p; ++k)
    for (std::size_t l = 0; l < p; ++l)
      for (std::size_t j = 0; j < p; ++j) {
        const double jj_kl = brute_product_moment(d, j, j, k, l);
        const double kj_lj = brute_product_moment(d, k, j, l, j);
        g[k][l] += w(k, j) * w(l, j) * (jj_kl + kj_lj) / (n - 1.0) + (w(k, j) - 1.0) * (w(l, j) - 1.0) * kj_lj;
      }
  return g;
}

Dataset model2_data(std::size_t n, std::size_t p, double rho, std::uint64_t seed) {
  RngStream rng(seed);
  return generate_trial(ModelSpec{2, rho, 0.0, p}, n, rng).data;
}

}  // namespace

TEST(ProductMoment, ConstantDataIsZero) {
  const Dataset same(6, 2, {1, 5, 1, 5, 1, 5, 1, 5, 1, 5, 1, 5});
  EXPECT_EQ(product_moment_estimate(same, 0, 1, 1, 0), 0.0);
  EXPECT_THROW(ProductMoments(Dataset(2, 2, {1, 2, 3, 4})), DomainError);
}

TEST(ProductMoment, MatchesLiteralDefinition) {
  std::mt19937_64 gen(3);
  const auto d = oracle::random_dataset(9, 4, gen);
  const ProductMoments pm(d);
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t l = 0; l < 4; ++l)
      for (std::size_t k2 = 0; k2 < 4; ++k2)
        for (std::size_t l2 = 0; l2 < 4; ++l2) {
          const double got = pm.estimate(k, l, k2, l2);
          EXPECT_NEAR(got, brute_product_moment(d, k, l, k2, l2), 1e-12);
          EXPECT_EQ(got, pm.estimate(l, k, k2, l2));
          EXPECT_EQ(got, pm.estimate(k, l, l2, k2));
        }
}

TEST(ProductMoment, UnbiasedForSquaredVariance) {
  // p = 1, sigma_11 = 1: E[estimate] = sigma_11^2 = 1, checked at n = 10 and n = 20.
  for (std::size_t n : {10u, 20u}) {
    const int reps = 100000;
    RngStream base(500 + n);
    double s = 0, ss = 0;
    for (int r = 0; r < reps; ++r) {
      auto rng = base.child(r);
      const double v = product_moment_estimate(sample_mvn(std::vector<double>{0.0}, SymMatrix::identity(1), n, rng), 0, 0, 0, 0);
      s += v, ss += v * v;
    }
    const double mean = s / reps, se = std::sqrt((ss / reps - mean * mean) / (reps - 1));
    RecordProperty("bias_n" + std::to_string(n), std::to_string(mean - 1.0));
    EXPECT_LT(std::abs(mean - 1.0), 3 * se) << "n=" << n << " mean " << mean << " se " << se;
  }
}

TEST(GammaStar, MatchesNaiveAssembly) {
  std::mt19937_64 gen(4);
  const auto d = oracle::random_dataset(12, 5, gen);
  for (auto family : {Family::banding, Family::tapering})
    for (double lambda : {0.0, 1.0, 2.0, 4.0}) {
      const EstimatorSpec spec{family, {lambda}};
      const auto g = gamma_star_estimate(spec, d, lambda);
      const auto ref = naive_gamma(spec, d, lambda);
      for (std::size_t k = 0; k < 5; ++k)
        for (std::size_t l = 0; l < 5; ++l)
          EXPECT_NEAR(g.matrix(k, l), 0.5 * (ref[k][l] + ref[l][k]), 1e-12) << family_name(family) << " " << lambda;
      EXPECT_LT(g.asymmetry, 1e-10);
    }
}

TEST(GammaStar, FullBandReduction) {
  std::mt19937_64 gen(5);
  const auto d = oracle::random_dataset(15, 4, gen);
  const auto g = gamma_star_estimate(EstimatorSpec{Family::banding, {3}}, d, 3);
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t l = 0; l < 4; ++l) {
      double ref = 0.0;
      for (std::size_t j = 0; j < 4; ++j)
        ref += brute_product_moment(d, j, j, k, l) + brute_product_moment(d, k, j, l, j);
      EXPECT_NEAR(g.matrix(k, l), ref / 14.0, 1e-12);
    }
}

TEST(GammaStar, HomogeneousOfDegreeFour) {
  std::mt19937_64 gen(6);
  const auto d = oracle::random_dataset(20, 6, gen);
  const EstimatorSpec spec{Family::tapering, {3}};
  const auto g = gamma_star_estimate(spec, d, 3);
  const auto g2 = gamma_star_estimate(spec, d.scaled(2.5), 3);
  const double c4 = std::pow(2.5, 4);
  for (std::size_t k = 0; k < g.matrix.packed().size(); ++k)
    EXPECT_NEAR(g2.matrix.packed()[k], c4 * g.matrix.packed()[k], 1e-11 * c4 * g.matrix.max_abs());
}

TEST(GammaStar, RejectsThresholding) {
  std::mt19937_64 gen(7);
  const auto d = oracle::random_dataset(10, 3, gen);
  EXPECT_THROW(gamma_star_estimate(EstimatorSpec{Family::hard, {0.1}}, d, 0.1), UnsupportedFamily);
  EXPECT_THROW(gamma_star_estimate(EstimatorSpec{Family::soft, {0.1}}, d, 0.1), UnsupportedFamily);
  EXPECT_THROW(boot_operator_select(EstimatorSpec{Family::soft, {0.1}}, d, 10, RngStream(1)), UnsupportedFamily);
}

TEST(Projector, Identities) {
  const auto d = model2_data(40, 8, 0.5, 8);
  const auto g = gamma_star_estimate(EstimatorSpec{Family::banding, {2}}, d, 2);
  const SpectralProjector pi(g.eigen);
  const auto& v = g.eigen.vectors;
  const auto& l = g.eigen.values;
  for (double x : pi.apply(v[0])) EXPECT_NEAR(x, 0.0, 1e-8);
  for (std::size_t j = 1; j < 8; ++j) {
    const auto gv = oracle::dense(g.matrix);
    std::vector<double> gb(8, 0.0);
    for (std::size_t a = 0; a < 8; ++a)
      for (std::size_t b = 0; b < 8; ++b) gb[a] += gv[a][b] * v[j][b];
    const auto out = pi.apply(gb);
    const double factor = l[j] / (l[0] - l[j]);
    for (std::size_t a = 0; a < 8; ++a) EXPECT_NEAR(out[a], factor * v[j][a], 1e-6 * std::max(1.0, std::abs(factor)));
    EXPECT_NEAR(pi.quadratic(v[j]), 1.0 / (l[0] - l[j]), 1e-8 / (l[0] - l[j]));
  }
  // Repeated leading eigenvalue: gaps are floored, never infinite.
  const auto es = eigen_decompose(SymMatrix::identity(3));
  const SpectralProjector flat(es);
  EXPECT_TRUE(std::isfinite(flat.quadratic(std::vector<double>{1, 1, 1})));
  EXPECT_EQ(flat.gap_floor(), 1e-6);
}

TEST(OperatorRisk, Boundaries) {
  const auto d = model2_data(20, 4, 0.5, 9);
  const EstimatorSpec spec{Family::banding, {0, 1, 2, 3}};
  const auto model = ultimate_model(d);
  EXPECT_TRUE(std::isfinite(operator_risk_estimate(spec, d, 1, 2, model, RngStream(1))));
  EXPECT_THROW(operator_risk_estimate(spec, d, 1, 1, model, RngStream(1)), DomainError);
  EXPECT_THROW(operator_risk_estimate(spec, d, 1, 0, model, RngStream(1)), DomainError);
  EXPECT_EQ(operator_risk_estimate(spec, d, 2, 30, model, RngStream(2)),
            operator_risk_estimate(spec, d, 2, 30, model, RngStream(2)));
}

TEST(OperatorRisk, ZeroCovarianceGivesLeadingEigenvalue) {
  // Constant data: Gamma* = 0 and every bootstrap draw equals the model, so the correction vanishes.
  const Dataset same(8, 3, std::vector<double>(24, 2.0));
  const EstimatorSpec spec{Family::tapering, {2}};
  const double l1 = gamma_star_estimate(spec, same, 2).eigen.values.front();
  EXPECT_EQ(operator_risk_estimate(spec, same, 2, 20, ultimate_model(same), RngStream(3)), l1);
  EXPECT_EQ(l1, 0.0);
}

TEST(OperatorRisk, TracksMonteCarloTruth) {
  // p = 5, n = 50, Model 2 rho = 0.5, banding over all bandwidths.
  const std::size_t p = 5, n = 50;
  const auto truth = model_truth(ModelSpec{2, 0.5, 0.0, p});
  const EstimatorSpec spec{Family::banding, {0, 1, 2, 3, 4}};
  std::vector<double> mc(5, 0.0), est(5, 0.0);
  RngStream base(42);
  const int truth_reps = 10000;
  for (int r = 0; r < truth_reps; ++r) {
    auto rng = base.child(0, r);
    const auto s = sample_cov(generate_trial(truth, n, rng).data);
    for (std::size_t g = 0; g < 5; ++g) mc[g] += squared_error(spec, s, spec.grid[g], truth.sigma, Norm::operator_norm) / truth_reps;
  }
  const int est_reps = 100;
  for (int r = 0; r < est_reps; ++r) {
    auto rng = base.child(1, r);
    const auto d = generate_trial(truth, n, rng).data;
    const auto curve = operator_risk_curve(spec, d, 100, ultimate_model(d), base.child(2, r));
    for (std::size_t g = 0; g < 5; ++g) est[g] += curve[g] / est_reps;
  }
  const double rho = oracle::spearman(mc, est);
  RecordProperty("spearman", std::to_string(rho));
  EXPECT_GE(rho, 0.8);
}

TEST(BootOperator, SingleLambdaAndDegenerateData) {
  const auto d = model2_data(25, 5, 0.5, 10);
  EXPECT_EQ(boot_operator_select(EstimatorSpec{Family::banding, {2}}, d, 10, RngStream(1)).lambda, 2.0);
  const Dataset same(6, 3, {1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3});
  EXPECT_EQ(boot_operator_select(EstimatorSpec{Family::tapering, {0, 1, 2}}, same, 10, RngStream(1)).lambda, 0.0);
}

TEST(BootOperator, Deterministic) {
  const auto d = model2_data(30, 6, 0.5, 11);
  const auto spec = default_spec(Family::banding, sample_cov(d), 30);
  const auto a = boot_operator_select(spec, d, 30, RngStream(7));
  const auto b = boot_operator_select(spec, d, 30, RngStream(7));
  EXPECT_EQ(a.lambda, b.lambda);
  EXPECT_EQ(*a.pilot_lambda, *b.pilot_lambda);
  for (std::size_t g = 0; g < a.curve.size(); ++g) EXPECT_EQ(a.curve[g].score, b.curve[g].score);
}

TEST(BootOperator, Model3Calibration) {
  // n = 100, p = 50, Model 3, tapering: the median selected bandwidth lies within the
  // inter-quartile range of the operator-norm oracle bandwidths over 100 replications.
  const auto truth = model_truth(ModelSpec{3, 0.6, 0.5, 50});
  std::vector<double> chosen, oracle_l;
  RngStream base(77);
  for (int r = 0; r < 100; ++r) {
    auto rng = base.child(0, r);
    const auto d = generate_trial(truth, 100, rng).data;
    const auto spec = default_spec(Family::tapering, sample_cov(d), 100);
    chosen.push_back(boot_operator_select(spec, d, 100, base.child(1, r)).lambda);
    oracle_l.push_back(oracle_select(spec, empirical_cov(d), truth.sigma, Norm::operator_norm).lambda);
  }
  auto quantile = [](std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    return v[static_cast<std::size_t>(q * (v.size() - 1) + 0.5)];
  };
  const double med = quantile(chosen, 0.5), q1 = quantile(oracle_l, 0.25), q3 = quantile(oracle_l, 0.75);
  RecordProperty("median_selected", std::to_string(med));
  RecordProperty("oracle_iqr", std::to_string(q1) + ".." + std::to_string(q3));
  EXPECT_GE(med, q1) << "oracle IQR " << q1 << ".." << q3;
  EXPECT_LE(med, q3) << "oracle IQR " << q1 << ".." << q3;
}

TEST(SecondVariation, ZeroPerturbationIsExact) {
  const auto g = oracle::sym({{3, 1, 0}, {1, 2, 0}, {0, 0, 1}});
  const std::vector<SymMatrix> deltas{SymMatrix(3)};
  const std::vector<double> scales{1.0, 0.5, 0.1};
  const auto rep = second_variation_check(g, deltas, scales);
  ASSERT_FALSE(rep.degenerate);
  EXPECT_LT(rep.max_error[0], 1e-14);
}

TEST(SecondVariation, TwoByTwoExample) {
  const auto g = oracle::sym({{2, 0}, {0, 1}});
  const std::vector<SymMatrix> deltas{oracle::sym({{0, 1}, {1, 0}})};
  const std::vector<double> scales{0.1};
  const auto rep = second_variation_check(g, deltas, scales);
  ASSERT_EQ(rep.entries.size(), 1u);
  EXPECT_NEAR(rep.entries[0].expansion, 2.01, 1e-14);
  EXPECT_NEAR(rep.entries[0].exact, (3 + std::sqrt(1.04)) / 2, 1e-14);
  EXPECT_LT(rep.entries[0].error, 2e-4);
  EXPECT_GT(rep.entries[0].error, 5e-5);
}

TEST(SecondVariation, DegenerateGapFlagged) {
  const std::vector<SymMatrix> deltas{oracle::sym({{0, 1}, {1, 0}})};
  const std::vector<double> scales{0.1};
  const auto rep = second_variation_check(SymMatrix::identity(2), deltas, scales);
  EXPECT_TRUE(rep.degenerate);
  EXPECT_TRUE(rep.entries.empty());
}

TEST(SecondVariation, CubicScalingOnRandomInstances) {
  std::mt19937_64 gen(99);
  int tested = 0;
  while (tested < 10) {
    const auto g = oracle::sym(oracle::random_symmetric(10, gen));
    const auto l = symmetric_eigenvalues(g);
    if (l[0] - l[1] <= 0.1) continue;
    ++tested;
    const std::vector<SymMatrix> deltas{oracle::sym(oracle::random_symmetric(10, gen))};
    const std::vector<double> scales{0.02, 0.01, 0.005};
    const auto rep = second_variation_check(g, deltas, scales);
    for (double order : rep.halving_orders[0]) {
      EXPECT_GT(std::exp2(order), 6.0);
      EXPECT_LT(std::exp2(order), 10.0);
    }
  }
}
