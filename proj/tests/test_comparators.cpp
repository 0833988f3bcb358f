#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "hjm/comparators.hpp"
#include "hjm/marginal.hpp"
#include "hjm/quadrature.hpp"
#include "hjm/simulate.hpp"
#include "test_util.hpp"

using namespace hjm;

namespace {

PanelDataset simulate(long n, std::uint64_t seed, StructuralParams p = default_true_params()) {
  ScenarioConfig c;
  c.n_subjects = n;
  c.seed = seed;
  c.true_params = p;
  return simulate_dataset(c);
}

PanelDataset duplicate_rows(const PanelDataset& d) {
  PanelDataset out;
  const auto n = d.n_subjects();
  out.a.resize(2 * n, d.n_times());
  out.b.resize(2 * n, d.n_times());
  out.y.resize(2 * n);
  out.a << d.a, d.a;
  out.b << d.b, d.b;
  out.y << d.y, d.y;
  return out;
}

PanelDataset permute_subjects(const PanelDataset& d, const std::vector<Eigen::Index>& perm) {
  PanelDataset out;
  out.a.resize(d.n_subjects(), d.n_times());
  out.b.resize(d.n_subjects(), d.n_times());
  out.y.resize(d.n_subjects());
  for (std::size_t k = 0; k < perm.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    out.a.row(i) = d.a.row(perm[k]);
    out.b.row(i) = d.b.row(perm[k]);
    out.y[i] = d.y[perm[k]];
  }
  return out;
}

StructuralParams null_outcome_params() {
  auto p = default_true_params();
  p.eta0 = p.eta1 = p.eta2 = p.eta3 = 0.0;
  return p;
}

}  // namespace

TEST(FitLogistic, SixPointInstanceMatchesNewtonOracle) {
  Eigen::MatrixXd X(6, 2);
  // Within each level of the first column the outcome is not monotone in the
  // second, so no separating line exists and the MLE is finite.
  X << 0, -1.0,
       0, 0.5,
       1, 0.2,
       1, 1.5,
       0, 2.0,
       1, -0.3;
  Eigen::VectorXi y(6);
  y << 0, 1, 0, 1, 0, 1;
  const auto fit = fit_logistic(X, y);
  const auto oracle = test::newton_logistic(X, y.cast<double>());
  ASSERT_TRUE(fit.converged);
  EXPECT_FALSE(fit.separation);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(fit.coef[k], oracle[k], 1e-8);
  // Score equations hold at the estimate.
  Eigen::Vector3d score = Eigen::Vector3d::Zero();
  for (int i = 0; i < 6; ++i) {
    const double r = y[i] - inv_logit(fit.coef[0] + X.row(i).dot(fit.coef.tail(2)));
    score += r * Eigen::Vector3d(1.0, X(i, 0), X(i, 1));
  }
  EXPECT_LE(score.norm(), 1e-8);
}

TEST(FitLogistic, StandardErrorsFromObservedInformation) {
  std::mt19937_64 gen(12);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd X(300, 1);
  Eigen::VectorXi y(300);
  for (int i = 0; i < 300; ++i) {
    X(i, 0) = nd(gen);
    y[i] = std::bernoulli_distribution(inv_logit(0.3 + 0.8 * X(i, 0)))(gen);
  }
  const auto fit = fit_logistic(X, y);
  Eigen::Matrix2d info = Eigen::Matrix2d::Zero();
  for (int i = 0; i < 300; ++i) {
    const double p = inv_logit(fit.coef[0] + fit.coef[1] * X(i, 0));
    const Eigen::Vector2d x(1.0, X(i, 0));
    info += p * (1 - p) * x * x.transpose();
  }
  const Eigen::Matrix2d cov = info.inverse();
  EXPECT_NEAR(fit.standard_errors[0], std::sqrt(cov(0, 0)), 1e-10);
  EXPECT_NEAR(fit.standard_errors[1], std::sqrt(cov(1, 1)), 1e-10);
}

TEST(FitLogistic, SeparationIsFlaggedNotThrown) {
  Eigen::MatrixXd X(8, 1);
  X << -2, -1.5, -1, -0.5, 0.5, 1, 1.5, 2;
  Eigen::VectorXi y(8);
  y << 0, 0, 0, 0, 1, 1, 1, 1;
  LogisticFit fit;
  ASSERT_NO_THROW(fit = fit_logistic(X, y));
  EXPECT_TRUE(fit.separation);
  EXPECT_FALSE(fit.warning.empty());
}

TEST(FitLogistic, RejectsBadInput) {
  Eigen::MatrixXd X(3, 1);
  X << 1, 2, 3;
  Eigen::VectorXi y(3);
  y << 0, 2, 1;
  EXPECT_THROW(fit_logistic(X, y), std::invalid_argument);
  EXPECT_THROW(fit_logistic(X, Eigen::VectorXi::Zero(2)), std::invalid_argument);
}

TEST(Baseline, NullOutcomeIntervalsCoverZero) {
  const auto d = simulate(2000, 404, null_outcome_params());
  for (const auto& f : {fit_baseline(d), fit_time_averaged(d)}) {
    ASSERT_TRUE(f.converged) << to_string(f.kind);
    for (int k = 1; k <= 2; ++k) {
      EXPECT_LE(f.interval_lo[k], 0.0) << to_string(f.kind) << " slope " << k;
      EXPECT_GE(f.interval_hi[k], 0.0) << to_string(f.kind) << " slope " << k;
    }
  }
}

TEST(Baseline, DuplicatedRowsScaleStandardErrors) {
  const auto d = simulate(300, 5);
  const auto dd = duplicate_rows(d);
  for (auto kind : {ModelKind::baseline, ModelKind::time_averaged}) {
    const auto f1 = fit_comparator(kind, d);
    const auto f2 = fit_comparator(kind, dd);
    for (int k = 0; k < 3; ++k) {
      EXPECT_NEAR(f2.estimates[k], f1.estimates[k], 1e-10);
      EXPECT_NEAR(f2.standard_errors[k], f1.standard_errors[k] / std::sqrt(2.0), 1e-6);
    }
    EXPECT_NEAR(f2.max_loglik, 2.0 * f1.max_loglik, 1e-8);
  }
}

TEST(Baseline, MatchesNewtonOracleAndInformationCriteria) {
  const auto d = simulate(250, 6);
  const auto f = fit_baseline(d);
  const auto oracle = test::newton_logistic(baseline_design(d), d.y.cast<double>());
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(f.estimates[k], oracle[k], 1e-8);
  EXPECT_EQ(f.n_params, 3);
  EXPECT_DOUBLE_EQ(f.aic, -2.0 * f.max_loglik + 6.0);
  EXPECT_DOUBLE_EQ(f.bic, -2.0 * f.max_loglik + 3.0 * std::log(250.0));
  for (Eigen::Index i = 0; i < f.predicted.size(); ++i) {
    EXPECT_GT(f.predicted[i], 0.0);
    EXPECT_LT(f.predicted[i], 1.0);
  }
}

TEST(TimeAveraged, ConstantTrajectoriesReduceToBaseline) {
  auto d = simulate(200, 8);
  for (Eigen::Index t = 1; t < d.n_times(); ++t) {
    d.a.col(t) = d.a.col(0);
    d.b.col(t) = d.b.col(0);
  }
  const auto fb = fit_baseline(d);
  const auto ft = fit_time_averaged(d);
  for (int k = 0; k < 3; ++k) {
    EXPECT_NEAR(ft.estimates[k], fb.estimates[k], 1e-12);
    EXPECT_NEAR(ft.standard_errors[k], fb.standard_errors[k], 1e-12);
  }
  EXPECT_NEAR(ft.max_loglik, fb.max_loglik, 1e-10);
}

TEST(TimeAveraged, UsesMeansOverAllTimes) {
  const auto d = simulate(20, 9);
  const auto X = time_averaged_design(d);
  for (Eigen::Index i = 0; i < d.n_subjects(); ++i) {
    double sa = 0, sb = 0;
    for (Eigen::Index t = 0; t < d.n_times(); ++t) {
      sa += d.a(i, t);
      sb += d.b(i, t);
    }
    EXPECT_NEAR(X(i, 0), sa / d.n_times(), 1e-15);
    EXPECT_NEAR(X(i, 1), sb / d.n_times(), 1e-15);
  }
}

TEST(Comparators, RejectTooFewSubjects) {
  const auto d = simulate(9, 1);
  EXPECT_THROW(fit_baseline(d), std::invalid_argument);
  EXPECT_THROW(fit_time_averaged(d), std::invalid_argument);
  EXPECT_THROW(fit_glmm_no_latent(d), std::invalid_argument);
}

TEST(Glmm, NestedInFullModelLikelihood) {
  std::mt19937_64 gen(31);
  const auto rule = gh_rule(9);
  for (int rep = 0; rep < 5; ++rep) {
    const auto d = test::small_dataset(40, 3 + rep % 3, 100 + rep);
    const auto p = pin_glmm(test::random_params(gen));
    const double restricted = marginal_loglik(p, d, rule, MarginalOptions{false, 1});
    const double full = marginal_loglik(p, d, rule, MarginalOptions{true, 1});
    EXPECT_NEAR(restricted, full, 1e-8);
  }
}

TEST(Glmm, FitPinsOmittedTermsAndSatisfiesIdentities) {
  const auto d = simulate(150, 21);
  const auto f = fit_glmm_no_latent(d);
  EXPECT_TRUE(f.converged);
  EXPECT_EQ(f.n_params, 14);
  for (auto k : kGlmmPinned) {
    EXPECT_EQ(f.estimates[static_cast<Eigen::Index>(k)], 0.0);
    EXPECT_EQ(f.standard_errors[static_cast<Eigen::Index>(k)], 0.0);
  }
  EXPECT_DOUBLE_EQ(f.aic, -2.0 * f.max_loglik + 2.0 * 14);
  EXPECT_DOUBLE_EQ(f.bic, -2.0 * f.max_loglik + 14 * std::log(150.0));
  // The maximized value is the full model's likelihood at the pinned estimates.
  std::array<double, kNumParams> v{};
  for (std::size_t k = 0; k < kNumParams; ++k) v[k] = f.estimates[static_cast<Eigen::Index>(k)];
  const double full = marginal_loglik(StructuralParams::from_array(v), d, gh_rule(9));
  EXPECT_NEAR(f.max_loglik, full, 1e-8);
}

TEST(Glmm, MatchesFullModelWithoutFeedbackOrTrait) {
  auto p = default_true_params();
  p.alpha2 = p.beta2 = 0.0;
  p.gamma1 = p.delta1 = p.eta3 = 0.0;
  const auto d = simulate(400, 33, p);
  const auto g = fit_glmm_no_latent(d);
  const auto full = fit_mle(d, default_mle_init());
  ASSERT_TRUE(g.converged);
  for (auto k : {kAlpha1, kBeta1}) {
    const auto j = static_cast<Eigen::Index>(k);
    const double se_full = full.standard_errors[k];
    const double se_glmm = g.standard_errors[j];
    ASSERT_TRUE(std::isfinite(se_glmm));
    const double joint = std::isfinite(se_full) ? std::hypot(se_full, se_glmm) : se_glmm;
    EXPECT_LE(std::abs(full.estimates.to_array()[k] - g.estimates[j]), 2.0 * joint) << kParamNames[k];
  }
}

TEST(Comparators, PredictionsInvariantToSubjectOrder) {
  const auto d = simulate(120, 44);
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(d.n_subjects()));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 gen(2);
  std::shuffle(perm.begin(), perm.end(), gen);
  const auto dp = permute_subjects(d, perm);
  for (auto kind : kComparatorKinds) {
    const auto f = fit_comparator(kind, d);
    const auto fp = fit_comparator(kind, dp);
    for (std::size_t k = 0; k < perm.size(); ++k)
      EXPECT_NEAR(fp.predicted[static_cast<Eigen::Index>(k)], f.predicted[perm[k]], 1e-6) << to_string(kind);
  }
}

TEST(Comparators, FullModelIsNotAComparator) {
  const auto d = simulate(20, 1);
  EXPECT_THROW(fit_comparator(ModelKind::full, d), std::invalid_argument);
}

TEST(ComparatorWaic, RunsOnRestrictedModels) {
  const auto d = simulate(40, 50);
  ChainConfig cfg;
  cfg.n_chains = 2;
  cfg.iterations = 300;
  cfg.warmup = 150;
  cfg.target_accept = 0.9;
  cfg.seed = 3;
  for (auto kind : kComparatorKinds) {
    const auto w = comparator_waic(kind, d, PriorConfig{}, cfg);
    EXPECT_TRUE(std::isfinite(w.elpd)) << to_string(kind);
    EXPECT_GE(w.p_waic, 0.0);
    EXPECT_LT(w.lppd, 0.0);
    EXPECT_NEAR(w.deviance, -2.0 * w.elpd, 1e-9);
  }
}

TEST(ComparatorWaic, GlmmPosteriorKeepsPinnedTermsAtZero) {
  const auto d = simulate(30, 51);
  ChainConfig cfg;
  cfg.n_chains = 1;
  cfg.iterations = 200;
  cfg.warmup = 100;
  cfg.target_accept = 0.9;
  const JointTarget target(d, PriorConfig{}, glmm_target_options());
  const auto s = run_chains(target, cfg);
  for (auto k : kGlmmPinned) EXPECT_TRUE((s.draws[0].col(static_cast<Eigen::Index>(k)).array() == 0.0).all());
  for (Eigen::Index i = 0; i < d.n_subjects(); ++i)
    EXPECT_TRUE((s.draws[0].col(static_cast<Eigen::Index>(kNumParams) + 3 * i + 2).array() == 0.0).all());
  const auto ll = outcome_pointwise(s, d);
  EXPECT_EQ(ll.rows(), 100);
  EXPECT_EQ(ll.cols(), 30);
  EXPECT_TRUE(ll.allFinite());
}
