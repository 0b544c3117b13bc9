#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "covtune/selection.hpp"
#include "oracles.hpp"

using namespace covtune;

namespace {

// Straight-line CV score: mean over folds of || est(cov(train)) - cov(validation) ||^2,
// both with divisor equal to their row count; `reverse` swaps the roles.
std::vector<double> brute_cv_scores(const EstimatorSpec& spec, const Dataset& data, const FoldPlan& plan, bool reverse,
                                    Norm norm) {
  std::vector<double> scores;
  for (double lambda : spec.grid) {
    double total = 0.0;
    for (std::size_t v = 0; v < plan.folds; ++v) {
      const auto in = data.subset(plan.rows_in(v));
      const auto out = data.subset(plan.rows_not_in(v));
      const auto& train = reverse ? in : out;
      const auto& valid = reverse ? out : in;
      const auto est = oracle::dense(apply(spec, oracle::sym(oracle::covariance(oracle::rows_of(train), 0)), lambda));
      const auto diff = oracle::minus(est, oracle::covariance(oracle::rows_of(valid), 0));
      const double e = norm == Norm::frobenius ? oracle::frobenius(diff) : oracle::spectral_norm(diff);
      total += e * e;
    }
    scores.push_back(total / static_cast<double>(plan.folds));
  }
  return scores;
}

std::vector<double> curve_scores(const SelectionResult& r) {
  std::vector<double> s;
  for (const auto& pt : r.curve) s.push_back(pt.score);
  return s;
}

void expect_close(const std::vector<double>& a, const std::vector<double>& b, double rel) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], rel * std::max(1.0, std::abs(b[k]))) << "index " << k;
}

FoldPlan fixed_plan(std::vector<std::size_t> assignment, std::size_t folds) { return {folds, std::move(assignment)}; }

}  // namespace

TEST(Oracle, TruthEqualsInputSelectsFullBand) {
  std::mt19937_64 gen(1);
  const auto s = sample_cov(oracle::random_dataset(20, 5, gen));
  const EstimatorSpec spec{Family::banding, {0, 1, 2, 3, 4}};
  for (Norm norm : {Norm::frobenius, Norm::operator_norm}) {
    const auto r = oracle_select(spec, s, s, norm);
    EXPECT_EQ(r.lambda, 4.0);
    EXPECT_EQ(r.curve.back().score, 0.0);
  }
}

TEST(Oracle, DiagonalTruthSelectsZeroBand) {
  std::mt19937_64 gen(2);
  const auto s = sample_cov(oracle::random_dataset(20, 5, gen));
  const auto truth = SymMatrix::diagonal(s.diag());
  const EstimatorSpec spec{Family::banding, {0, 1, 2, 3, 4}};
  EXPECT_EQ(oracle_select(spec, s, truth, Norm::frobenius).lambda, 0.0);
  EXPECT_EQ(oracle_select(spec, s, truth, Norm::operator_norm).lambda, 0.0);
}

TEST(Oracle, MatchesExhaustiveScan) {
  std::mt19937_64 gen(3);
  const auto s = sample_cov(oracle::random_dataset(12, 5, gen));
  const auto truth = sample_cov(oracle::random_dataset(12, 5, gen));
  for (auto family : {Family::hard, Family::soft, Family::banding, Family::tapering}) {
    const auto spec = default_spec(family, s, 12);
    for (Norm norm : {Norm::frobenius, Norm::operator_norm}) {
      const auto r = oracle_select(spec, s, truth, norm);
      std::size_t best = 0;
      double best_score = INFINITY;
      for (std::size_t g = 0; g < spec.grid.size(); ++g) {
        const auto diff = oracle::minus(oracle::dense(apply(spec, s, spec.grid[g])), oracle::dense(truth));
        const double e = norm == Norm::frobenius ? oracle::frobenius(diff) : oracle::spectral_norm(diff);
        EXPECT_NEAR(r.curve[g].score, e * e, 1e-9 * std::max(1.0, e * e));
        if (e * e < best_score - 1e-12) best_score = e * e, best = g;
      }
      EXPECT_EQ(r.index, best) << family_name(family) << " " << norm_tag(norm);
    }
  }
}

TEST(Folds, Balance) {
  RngStream rng(4);
  const auto a = make_folds(6, 2, rng);
  EXPECT_EQ(a.sizes(), (std::vector<std::size_t>{3, 3}));
  auto sizes = make_folds(7, 3, rng).sizes();
  std::sort(sizes.rbegin(), sizes.rend());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{3, 2, 2}));
  RngStream r1(9, 1), r2(9, 1);
  EXPECT_EQ(make_folds(50, 5, r1).assignment, make_folds(50, 5, r2).assignment);
  EXPECT_THROW(make_folds(3, 4, rng), DomainError);
  EXPECT_THROW(make_folds(3, 1, rng), DomainError);
}

TEST(CrossValidation, HandExpandedV2) {
  const Dataset data(6, 2, {0.5, 1.0, -1.2, 0.3, 2.0, -0.7, 0.1, 0.1, -0.4, 1.5, 1.1, -2.0});
  const auto plan = fixed_plan({0, 1, 0, 1, 1, 0}, 2);
  const EstimatorSpec spec{Family::banding, {0, 1}};
  // Fold 0 = rows {0,2,5}, fold 1 = rows {1,3,4}; divisor 3 for every covariance.
  auto cov3 = [&](std::initializer_list<std::size_t> rows) {
    double mx = 0, my = 0;
    for (auto r : rows) mx += data(r, 0) / 3, my += data(r, 1) / 3;
    double xx = 0, yy = 0, xy = 0;
    for (auto r : rows) {
      xx += (data(r, 0) - mx) * (data(r, 0) - mx) / 3;
      yy += (data(r, 1) - my) * (data(r, 1) - my) / 3;
      xy += (data(r, 0) - mx) * (data(r, 1) - my) / 3;
    }
    return std::array<double, 3>{xx, yy, xy};
  };
  const auto a = cov3({0, 2, 5}), b = cov3({1, 3, 4});
  auto term = [](const std::array<double, 3>& train, const std::array<double, 3>& valid, bool keep_off) {
    const double dx = train[0] - valid[0], dy = train[1] - valid[1];
    const double dxy = (keep_off ? train[2] : 0.0) - valid[2];
    return dx * dx + dy * dy + 2 * dxy * dxy;
  };
  const std::vector<double> expected{(term(b, a, false) + term(a, b, false)) / 2,
                                     (term(b, a, true) + term(a, b, true)) / 2};
  const auto r = cv_select(spec, data, plan, Norm::frobenius);
  expect_close(curve_scores(r), expected, 1e-12);
  expect_close(curve_scores(r), brute_cv_scores(spec, data, plan, false, Norm::frobenius), 1e-12);
}

TEST(CrossValidation, ReverseV3MatchesBruteForce) {
  std::mt19937_64 gen(5);
  const auto data = oracle::random_dataset(9, 2, gen);
  const auto plan = fixed_plan({0, 1, 2, 2, 1, 0, 0, 1, 2}, 3);
  const EstimatorSpec spec{Family::banding, {0, 1}};
  for (Norm norm : {Norm::frobenius, Norm::operator_norm})
    expect_close(curve_scores(reverse_cv_select(spec, data, plan, norm)),
                 brute_cv_scores(spec, data, plan, true, norm), 1e-12);
}

TEST(CrossValidation, RandomCasesMatchBruteForce) {
  std::mt19937_64 gen(6);
  for (auto family : {Family::hard, Family::soft, Family::banding, Family::tapering}) {
    const auto data = oracle::random_dataset(23, 6, gen);
    auto spec = default_spec(family, sample_cov(data), 23);
    RngStream rng(6, static_cast<std::uint64_t>(family));
    for (std::size_t v : {2u, 3u, 5u}) {
      const auto plan = make_folds(23, v, rng);
      for (Norm norm : {Norm::frobenius, Norm::operator_norm}) {
        expect_close(curve_scores(cv_select(spec, data, plan, norm)), brute_cv_scores(spec, data, plan, false, norm),
                     1e-10);
        expect_close(curve_scores(reverse_cv_select(spec, data, plan, norm)),
                     brute_cv_scores(spec, data, plan, true, norm), 1e-10);
      }
    }
  }
}

TEST(CrossValidation, ReverseTwoFoldEqualsTwoFold) {
  std::mt19937_64 gen(7);
  const auto data = oracle::random_dataset(30, 4, gen);
  RngStream rng(7);
  const auto plan = make_folds(30, 2, rng);
  const EstimatorSpec spec{Family::tapering, {0, 1, 2, 3}};
  expect_close(curve_scores(cv_select(spec, data, plan, Norm::frobenius)),
               curve_scores(reverse_cv_select(spec, data, plan, Norm::frobenius)), 1e-12);
}

TEST(CrossValidation, SmallTrainingFoldWorks) {
  std::mt19937_64 gen(8);
  const auto data = oracle::random_dataset(6, 3, gen);
  const auto plan = fixed_plan({0, 0, 1, 1, 2, 2}, 3);
  const EstimatorSpec spec{Family::banding, {0, 1, 2}};
  expect_close(curve_scores(reverse_cv_select(spec, data, plan, Norm::frobenius)),
               brute_cv_scores(spec, data, plan, true, Norm::frobenius), 1e-12);
}

TEST(CrossValidation, FoldTooSmall) {
  std::mt19937_64 gen(9);
  const auto data = oracle::random_dataset(5, 2, gen);
  const auto plan = fixed_plan({0, 0, 1, 1, 2}, 3);
  try {
    cv_select(EstimatorSpec{Family::banding, {0, 1}}, data, plan, Norm::frobenius);
    FAIL();
  } catch (const DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("fold 2"), std::string::npos);
  }
}

TEST(CrossValidation, ZeroOffDiagonalTiesPickSmallest) {
  // Columns are constant within each fold except one, so every covariance is diagonal.
  const Dataset data(4, 2, {0, 5, 1, 5, 7, 2, 7, 3});
  const auto plan = fixed_plan({0, 0, 1, 1}, 2);
  const EstimatorSpec spec{Family::banding, {0, 1}};
  const auto r = cv_select(spec, data, plan, Norm::frobenius);
  EXPECT_EQ(r.curve[0].score, r.curve[1].score);
  EXPECT_EQ(r.lambda, 0.0);
}

TEST(CrossValidation, IdenticalRowsZeroEstimatorWins) {
  const Dataset data(6, 2, {1, 2, 1, 2, 1, 2, 1, 2, 1, 2, 1, 2});
  RngStream rng(10);
  const auto plan = make_folds(6, 2, rng);
  const EstimatorSpec spec{Family::hard, {0.0, 0.5}};
  const auto r = cv_select(spec, data, plan, Norm::frobenius);
  EXPECT_EQ(r.curve[0].score, 0.0);
  EXPECT_EQ(r.lambda, 0.0);  // all scores are 0: smallest lambda
  const auto rep = repeated_cv_select(spec, data, SelectionRule::repeated_cv(2, 5), RngStream(3));
  EXPECT_EQ(rep.lambda, 0.0);
}

TEST(RepeatedCV, SingleSplitEqualsCV) {
  std::mt19937_64 gen(11);
  const auto data = oracle::random_dataset(20, 4, gen);
  RngStream rng(11);
  const auto plan = make_folds(20, 2, rng);
  const EstimatorSpec spec{Family::banding, {0, 1, 2, 3}};
  const std::vector<FoldPlan> plans{plan};
  expect_close(curve_scores(repeated_cv_select(spec, data, plans, Norm::operator_norm)),
               curve_scores(cv_select(spec, data, plan, Norm::operator_norm)), 1e-14);
}

TEST(RepeatedCV, MeanOfSingleCurves) {
  std::mt19937_64 gen(12);
  const auto data = oracle::random_dataset(24, 5, gen);
  const auto rule = SelectionRule::repeated_cv(2, 7);
  const RngStream rng(12);
  const auto plans = rule_plans(rule, 24, rng);
  ASSERT_EQ(plans.size(), 7u);
  const auto spec = default_spec(Family::soft, sample_cov(data), 24);
  std::vector<double> mean(spec.grid.size(), 0.0);
  for (const auto& plan : plans) {
    const auto s = curve_scores(cv_select(spec, data, plan, Norm::frobenius));
    for (std::size_t g = 0; g < s.size(); ++g) mean[g] += s[g] / 7.0;
  }
  expect_close(curve_scores(repeated_cv_select(spec, data, rule, rng)), mean, 1e-12);
}

TEST(RepeatedCV, SeedsGiveCloseCurves) {
  std::mt19937_64 gen(13);
  const auto data = oracle::random_dataset(60, 8, gen);
  const auto spec = default_spec(Family::banding, sample_cov(data), 60);
  const auto rule = SelectionRule::repeated_cv(2, 50);
  const auto a = curve_scores(repeated_cv_select(spec, data, rule, RngStream(1)));
  const auto b = curve_scores(repeated_cv_select(spec, data, rule, RngStream(2)));
  // Per-split curves vary by a few percent; averages over 50 splits should agree closely.
  for (std::size_t g = 0; g < a.size(); ++g) EXPECT_NEAR(a[g], b[g], 0.1 * a[g]);
}

TEST(CrossValidation, RowPermutationInvariance) {
  std::mt19937_64 gen(14);
  const auto data = oracle::random_dataset(15, 4, gen);
  RngStream rng(14);
  const auto plan = make_folds(15, 3, rng);
  std::vector<std::size_t> perm(15);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), gen);
  const auto permuted = data.subset(perm);
  FoldPlan permuted_plan{3, std::vector<std::size_t>(15)};
  for (std::size_t k = 0; k < 15; ++k) permuted_plan.assignment[k] = plan.assignment[perm[k]];
  const EstimatorSpec spec{Family::tapering, {0, 1, 2, 3}};
  expect_close(curve_scores(cv_select(spec, permuted, permuted_plan, Norm::frobenius)),
               curve_scores(cv_select(spec, data, plan, Norm::frobenius)), 1e-12);
}

TEST(OperatorScan, PrunedMatchesFullScan) {
  std::mt19937_64 gen(15);
  for (int rep = 0; rep < 4; ++rep)
    for (auto family : {Family::hard, Family::soft, Family::banding, Family::tapering})
      for (bool preserve : {false, true}) {
        const auto data = oracle::random_dataset(40, 15, gen);
        auto spec = default_spec(family, sample_cov(data), 40);
        spec.preserve_diagonal = preserve;
        RngStream rng(15, rep);
        const auto plan = make_folds(40, 5, rng);
        for (bool reverse : {false, true}) {
          const auto pairs = fold_pairs(data, plan, reverse);
          const auto full = operator_scores(spec, pairs);
          const auto pruned = operator_scores_pruned(spec, pairs, rep % spec.grid.size());
          const auto a = argmin_index(full.scores);
          const auto r = make_result(spec, pruned.scores, SelectionRule::cv(5, Norm::operator_norm), pruned.exact);
          EXPECT_EQ(r.index, a) << family_name(family);
          for (std::size_t g = 0; g < spec.grid.size(); ++g) {
            if (pruned.exact[g])
              EXPECT_NEAR(pruned.scores[g], full.scores[g], 1e-10 * full.scores[g]);
            else
              EXPECT_LE(pruned.scores[g], full.scores[g] * (1 + 1e-9));
          }
        }
      }
}

TEST(Rules, NamesRoundTrip) {
  for (const char* label : {"oracle_F", "oracle_op", "cv2_F", "cv10_op", "recv3_F", "recv10_op", "rcv2_F", "rcv2x7_op",
                            "boot_frobenius", "sure", "boot_operator"})
    EXPECT_EQ(parse_rule(label).name(), label);
  EXPECT_EQ(parse_rule("cv5").name(), "cv5_F");
  EXPECT_EQ(parse_rule("rcv2").splits, 50u);
  EXPECT_THROW(parse_rule("cv1"), DomainError);
  EXPECT_THROW(parse_rule("kfold"), DomainError);
  EXPECT_THROW(SelectionRule::boot_frobenius(1).validate(), DomainError);
}
