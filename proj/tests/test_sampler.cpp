#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "hjm/diagnostics.hpp"
#include "hjm/gradient.hpp"
#include "hjm/sampler.hpp"
#include "hjm/targets.hpp"
#include "test_util.hpp"

using namespace hjm;

namespace {

/// Independent Gaussian with per-coordinate scales; the quadratic oracle.
struct GaussianTarget {
  Eigen::VectorXd scale;
  Eigen::Index dim() const { return scale.size(); }
  double log_density_gradient(const Eigen::VectorXd& q, Eigen::VectorXd& g) const {
    g = -(q.array() / scale.array().square()).matrix();
    return -0.5 * (q.array() / scale.array()).square().sum();
  }
  std::size_t n_columns() const { return static_cast<std::size_t>(dim()); }
  std::vector<std::string> column_names() const {
    std::vector<std::string> n;
    for (Eigen::Index k = 0; k < dim(); ++k) n.push_back("x" + std::to_string(k));
    return n;
  }
  void write_constrained(const Eigen::VectorXd& q, std::span<double> out) const {
    for (Eigen::Index k = 0; k < dim(); ++k) out[static_cast<std::size_t>(k)] = q[k];
  }
  Eigen::VectorXd random_initial_point(Rng& rng, double r) const {
    Eigen::VectorXd q(dim());
    for (Eigen::Index k = 0; k < dim(); ++k) q[k] = r * (2 * rng.uniform() - 1);
    return q;
  }
};

struct FlatTarget {
  Eigen::Index d = 3;
  Eigen::Index dim() const { return d; }
  double log_density_gradient(const Eigen::VectorXd&, Eigen::VectorXd& g) const {
    g.setZero(d);
    return 0.0;
  }
};

/// Finite only on its first few evaluations; every trajectory then fails.
struct CollapsingTarget : GaussianTarget {
  mutable int calls = 0;
  double log_density_gradient(const Eigen::VectorXd& q, Eigen::VectorXd& g) const {
    if (++calls > 1) {
      g.setZero(dim());
      return -std::numeric_limits<double>::infinity();
    }
    return GaussianTarget::log_density_gradient(q, g);
  }
};

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::VectorXd random_vector(std::mt19937_64& gen, Eigen::Index d, double sd = 1.0) {
  std::normal_distribution<double> nd(0.0, sd);
  Eigen::VectorXd v(d);
  for (Eigen::Index k = 0; k < d; ++k) v[k] = nd(gen);
  return v;
}

void expect_gradient_matches(const JointTarget& t, const Eigen::VectorXd& q) {
  Eigen::VectorXd g;
  const double v = t.log_density_gradient(q, g);
  ASSERT_TRUE(std::isfinite(v));
  const auto fd = test::fd_gradient([&](const std::vector<double>& x) { return t.log_density(to_eigen(x)); },
                                    to_std(q));
  for (Eigen::Index k = 0; k < q.size(); ++k)
    EXPECT_LE(test::rel_err(g[k], fd[static_cast<std::size_t>(k)]), 1e-6) << "coordinate " << k;
}

}  // namespace

TEST(JointTarget, PriorOnlyValueAtOrigin) {
  const auto empty = test::small_dataset(0, 5, 1);
  const JointTarget t(empty);
  ASSERT_EQ(t.dim(), 19);
  Eigen::VectorXd g;
  const double v = t.log_density_gradient(Eigen::VectorXd::Zero(19), g);
  // Coefficients at 0 under N(0, 10^2); scales at 1 under Half-Cauchy(0, 2.5)
  // with log-Jacobian log(1) = 0; rho at 0 with density 1/2 and Jacobian 1.
  const double coef = -std::log(10.0) - 0.5 * std::log(2.0 * std::numbers::pi);
  const double scale = std::log(2.0 / (std::numbers::pi * 2.5 * (1.0 + 1.0 / 6.25)));
  EXPECT_NEAR(v, 14 * coef + 4 * scale + std::log(0.5), 1e-12);
  for (std::size_t k = 0; k < kNumParams; ++k) {
    if (is_scale_param(k))
      EXPECT_NEAR(g[static_cast<Eigen::Index>(k)], 1.0 - 2.0 / (6.25 + 1.0), 1e-12);
    else
      EXPECT_NEAR(g[static_cast<Eigen::Index>(k)], 0.0, 1e-12);
  }
}

TEST(JointTarget, GradientMatchesFiniteDifferences) {
  const auto d = test::small_dataset(20, 5, 3);
  const JointTarget t(d);
  std::mt19937_64 gen(31);
  for (int rep = 0; rep < 10; ++rep) {
    const auto u = unconstrain(test::random_params(gen));
    Eigen::VectorXd q = random_vector(gen, t.dim());
    for (std::size_t k = 0; k < kNumParams; ++k) q[static_cast<Eigen::Index>(k)] = u[k];
    expect_gradient_matches(t, q);
  }
}

TEST(JointTarget, RestrictedGradientMatchesFiniteDifferences) {
  const auto d = test::small_dataset(15, 4, 4);
  JointTargetOptions opt;
  for (auto k : {kAlpha2, kBeta2, kGamma1, kDelta1, kEta3}) opt.free[k] = false;
  opt.fixed.gamma1 = opt.fixed.delta1 = opt.fixed.eta3 = 0.0;
  opt.latent_trait = false;
  const JointTarget t(d, {}, opt);
  EXPECT_EQ(t.dim(), 14 + 2 * 15);
  std::mt19937_64 gen(32);
  for (int rep = 0; rep < 5; ++rep) expect_gradient_matches(t, random_vector(gen, t.dim(), 0.7));
}

TEST(JointTarget, AgreesWithNonCenteredReference) {
  const auto d = test::small_dataset(12, 5, 5);
  const JointTarget t(d);
  std::mt19937_64 gen(33);
  const auto x = test::random_state(gen, 12);
  const auto ref = noncentered_logdensity_grad(test::state_params(x), test::state_latents(x), d, PriorConfig{});
  Eigen::VectorXd g;
  const double v = t.log_density_gradient(to_eigen(x), g);
  EXPECT_NEAR(v, ref.value, 1e-10 * std::abs(ref.value));
  for (Eigen::Index k = 0; k < g.size(); ++k)
    EXPECT_NEAR(g[k], ref.gradient[static_cast<std::size_t>(k)], 1e-10 * std::max(1.0, std::abs(g[k])));
}

TEST(JointTarget, AddingSubjectAddsItsTerms) {
  const auto d = test::small_dataset(9, 5, 6);
  const auto d8 = d.head(8);
  const JointTarget t9(d), t8(d8);
  std::mt19937_64 gen(34);
  const Eigen::VectorXd q9 = random_vector(gen, t9.dim(), 0.5);
  const Eigen::VectorXd q8 = q9.head(t8.dim());
  const auto p = t9.structural(q9);
  const auto l = t9.latent(q9, p, 8);
  const Eigen::Index base = 19 + 3 * 8;
  const double extra = subject_complete_logdensity(p, 8, d, l) + std_normal_lpdf(q9[base]) +
                       std_normal_lpdf(q9[base + 1]) + std_normal_lpdf(q9[base + 2]);
  EXPECT_NEAR(t9.log_density(q9) - t8.log_density(q8), extra, 1e-9);
}

TEST(JointTarget, ThreadedEvaluationIsBitwiseIdentical) {
  const auto d = test::small_dataset(300, 5, 7);
  JointTargetOptions threaded;
  threaded.jobs = 3;
  const JointTarget serial(d), parallel(d, {}, threaded);
  std::mt19937_64 gen(35);
  const Eigen::VectorXd q = random_vector(gen, serial.dim(), 0.5);
  Eigen::VectorXd g1, g2;
  EXPECT_EQ(serial.log_density_gradient(q, g1), parallel.log_density_gradient(q, g2));
  EXPECT_EQ(g1, g2);
}

TEST(JointTarget, NonFiniteStateIsRejectedNotThrown) {
  const auto d = test::small_dataset(5, 4, 8);
  const JointTarget t(d);
  Eigen::VectorXd q = Eigen::VectorXd::Zero(t.dim());
  q[kSigma] = 1e6;  // exp overflows
  Eigen::VectorXd g;
  EXPECT_EQ(t.log_density_gradient(q, g), -std::numeric_limits<double>::infinity());
}

TEST(Leapfrog, ZeroGradientMovesInStraightLine) {
  const FlatTarget t;
  const Eigen::Vector3d q(0.5, -1.0, 2.0), p(1.0, 2.0, -0.25);
  const auto z = leapfrog(t, q, p, 0.1, 7);
  EXPECT_LE((z.q - (q + 0.1 * 7 * p)).norm(), 1e-14);
  EXPECT_EQ(z.p, p);
}

TEST(Leapfrog, ReversibleOnJointTarget) {
  const auto d = test::small_dataset(10, 5, 9);
  const JointTarget t(d);
  std::mt19937_64 gen(36);
  const Eigen::VectorXd q = random_vector(gen, t.dim(), 0.5);
  const Eigen::VectorXd p = random_vector(gen, t.dim());
  auto z = leapfrog(t, q, p, 0.01, 25);
  z.p = -z.p;
  ASSERT_TRUE(leapfrog(t, z, 0.01, 25));
  EXPECT_LE((z.q - q).lpNorm<Eigen::Infinity>(), 1e-10);
  EXPECT_LE((z.p + p).lpNorm<Eigen::Infinity>(), 1e-10);
}

TEST(Leapfrog, EnergyErrorIsSecondOrder) {
  GaussianTarget t{Eigen::Vector4d(1.0, 0.5, 2.0, 1.5)};
  const Eigen::Vector4d q0(1.0, -0.3, 2.0, 0.4), p0(0.2, 1.0, -0.7, 0.5);
  auto energy = [&](const PhasePoint& z) { return -z.log_density + 0.5 * z.p.squaredNorm(); };
  std::vector<double> log_eps, log_err;
  for (double eps : {0.08, 0.04, 0.02, 0.01}) {
    PhasePoint z{q0, p0, Eigen::VectorXd::Zero(4), 0.0};
    z.log_density = t.log_density_gradient(z.q, z.grad);
    const double H0 = energy(z);
    double worst = 0.0;
    const int steps = static_cast<int>(std::lround(3.0 / eps));
    for (int s = 0; s < steps; ++s) {
      leapfrog(t, z, eps, 1);
      worst = std::max(worst, std::abs(energy(z) - H0));
    }
    log_eps.push_back(std::log(eps));
    log_err.push_back(std::log(worst));
  }
  const double mx = std::accumulate(log_eps.begin(), log_eps.end(), 0.0) / 4;
  const double my = std::accumulate(log_err.begin(), log_err.end(), 0.0) / 4;
  double sxy = 0.0, sxx = 0.0;
  for (int k = 0; k < 4; ++k) {
    sxy += (log_eps[k] - mx) * (log_err[k] - my);
    sxx += (log_eps[k] - mx) * (log_eps[k] - mx);
  }
  EXPECT_NEAR(sxy / sxx, 2.0, 0.3);
}

TEST(Nuts, StandardNormalMoments) {
  const GaussianTarget t{Eigen::Vector2d(1.0, 1.0)};
  ChainConfig cfg;
  cfg.n_chains = 1;
  cfg.warmup = 1000;
  cfg.iterations = 21000;
  cfg.target_accept = 0.8;
  cfg.seed = 99;
  const auto s = run_chains(t, cfg);
  const auto& x = s.draws[0];
  ASSERT_EQ(x.rows(), 20000);
  const Eigen::RowVector2d mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mean;
  const Eigen::Matrix2d cov = centered.transpose() * centered / (x.rows() - 1.0);
  EXPECT_LE(mean.cwiseAbs().maxCoeff(), 0.05);
  EXPECT_LE((cov - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff(), 0.1);
  EXPECT_EQ(s.telemetry[0].divergences, 0);
  EXPECT_EQ(s.telemetry[0].tree_depth.size(), 20000u);
}

TEST(Nuts, TransitionIsDeterministic) {
  const GaussianTarget t{Eigen::Vector3d(1.0, 2.0, 0.5)};
  NutsTuning tuning;
  tuning.step_size = 0.3;
  tuning.inv_metric = Eigen::Vector3d(1.0, 4.0, 0.25);
  auto run = [&] {
    PhasePoint z{Eigen::Vector3d(0.1, 0.2, 0.3), Eigen::VectorXd(), Eigen::VectorXd(3), 0.0};
    z.log_density = t.log_density_gradient(z.q, z.grad);
    Rng rng(1234);
    std::vector<double> trace;
    for (int k = 0; k < 50; ++k) {
      const auto info = nuts_transition(t, z, rng, tuning);
      trace.push_back(z.q.sum());
      trace.push_back(info.accept_stat);
    }
    return trace;
  };
  EXPECT_EQ(run(), run());
}

TEST(Nuts, AllDivergentChainAborts) {
  CollapsingTarget t;
  t.scale = Eigen::Vector2d(1.0, 1.0);
  ChainConfig cfg;
  cfg.n_chains = 1;
  cfg.iterations = 20;
  cfg.warmup = 10;
  EXPECT_THROW(run_chains(t, cfg), std::runtime_error);
}

TEST(Nuts, DualAveragingConvergesToTargetAcceptance) {
  GaussianTarget t{Eigen::VectorXd::Constant(10, 1.0)};
  ChainConfig cfg;
  cfg.n_chains = 1;
  cfg.iterations = 3000;
  cfg.warmup = 1000;
  cfg.target_accept = 0.9;
  const auto s = run_chains(t, cfg);
  EXPECT_NEAR(s.telemetry[0].mean_accept_stat(), 0.9, 0.05);
}

TEST(ChainConfig, Validation) {
  ChainConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.n_chains, 4);
  EXPECT_EQ(c.iterations, 5000);
  EXPECT_EQ(c.warmup, 2500);
  EXPECT_EQ(c.target_accept, 0.99);
  EXPECT_EQ(c.max_tree_depth, 10);
  c.warmup = 5000;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ChainConfig{};
  c.target_accept = 0.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(RunChains, SameSeedSameDrawsAnyJobCount) {
  const auto d = test::small_dataset(15, 4, 10);
  const JointTarget t(d);
  ChainConfig cfg;
  cfg.n_chains = 3;
  cfg.iterations = 120;
  cfg.warmup = 60;
  cfg.target_accept = 0.8;
  cfg.seed = 7;
  const auto a = run_chains(t, cfg);
  cfg.jobs = 3;
  const auto b = run_chains(t, cfg);
  ASSERT_EQ(a.n_chains(), 3);
  for (int c = 0; c < 3; ++c) EXPECT_EQ(a.draws[c], b.draws[c]);
  EXPECT_NE(a.draws[0], a.draws[1]);
}

TEST(RunChains, DrawsAreValidAndSignAligned) {
  const auto d = test::small_dataset(25, 5, 11);
  const JointTarget t(d);
  ChainConfig cfg;
  cfg.n_chains = 2;
  cfg.iterations = 300;
  cfg.warmup = 150;
  cfg.target_accept = 0.8;
  const auto s = run_chains(t, cfg);
  EXPECT_EQ(s.n_draws(), 150);
  EXPECT_EQ(s.n_columns(), 19 + 3 * 25);
  for (const auto& chain : s.draws)
    for (Eigen::Index r = 0; r < chain.rows(); ++r) {
      std::array<double, kNumParams> v{};
      for (std::size_t k = 0; k < kNumParams; ++k) v[k] = chain(r, static_cast<Eigen::Index>(k));
      EXPECT_TRUE(StructuralParams::from_array(v).valid());
      EXPECT_GE(v[kGamma1], 0.0);
    }
}

TEST(RunChains, PriorOnlyRecoversPrior) {
  const auto empty = test::small_dataset(0, 5, 1);
  const JointTarget t(empty);
  ChainConfig cfg;
  cfg.iterations = 4000;
  cfg.warmup = 1000;
  cfg.target_accept = 0.9;
  cfg.seed = 2026;
  const auto s = run_chains(t, cfg);
  for (std::size_t k = 0; k < kNumParams; ++k) {
    const auto m = s.chains_of(static_cast<Eigen::Index>(k));
    if (is_scale_param(k)) continue;
    const double mean = m.mean();
    const double sd = std::sqrt((m.array() - mean).square().sum() / (m.size() - 1.0));
    const double prior_sd = k == kRho ? 1.0 / std::sqrt(3.0) : 10.0;
    EXPECT_LE(std::abs(mean), 3.0 * mcse_mean(m)) << kParamNames[k];
    EXPECT_NEAR(sd, prior_sd, 0.1 * prior_sd) << kParamNames[k];
  }
}

// Rhat and ESS on draws with known behaviour.
TEST(Diagnostics, IndependentChains) {
  Rng rng(5);
  Eigen::MatrixXd x(10000, 4);
  for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = rng.normal();
  const double r = rhat(x);
  EXPECT_GE(r, 0.999);
  EXPECT_LE(r, 1.005);
  const double e = ess(x) / static_cast<double>(x.size());
  EXPECT_GE(e, 0.8);
  EXPECT_LE(e, 1.2);
}

TEST(Diagnostics, SeparatedChainsHaveLargeRhat) {
  Rng rng(6);
  Eigen::MatrixXd x(1000, 2);
  for (Eigen::Index i = 0; i < 1000; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = 5.0 + rng.normal();
  }
  EXPECT_GT(rhat(x), 1.5);
}

TEST(Diagnostics, AutoregressiveEss) {
  // For AR(1) with coefficient phi the integrated autocorrelation time is
  // (1 + phi) / (1 - phi).
  Rng rng(7);
  const double phi = 0.6;
  Eigen::MatrixXd x(20000, 4);
  for (Eigen::Index c = 0; c < 4; ++c) {
    double v = rng.normal() / std::sqrt(1 - phi * phi);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      v = phi * v + rng.normal();
      x(i, c) = v;
    }
  }
  const double expected = static_cast<double>(x.size()) * (1 - phi) / (1 + phi);
  EXPECT_NEAR(ess(x) / expected, 1.0, 0.1);
}

TEST(Diagnostics, ConstantChainsAreUndefined) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Constant(100, 4, 2.5);
  std::string warning;
  EXPECT_TRUE(std::isnan(rhat(x, &warning)));
  EXPECT_FALSE(warning.empty());
  warning.clear();
  EXPECT_TRUE(std::isnan(ess(x, &warning)));
  EXPECT_FALSE(warning.empty());
}

TEST(Diagnostics, RejectsTooFewChainsOrDraws) {
  EXPECT_THROW(rhat(Eigen::MatrixXd::Zero(100, 1)), std::invalid_argument);
  EXPECT_THROW(ess(Eigen::MatrixXd::Zero(3, 4)), std::invalid_argument);
}

TEST(Diagnostics, QuantileInterpolates) {
  Eigen::VectorXd v(5);
  v << 4, 1, 3, 2, 5;
  EXPECT_DOUBLE_EQ(quantile(v, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile(v, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(quantile(v, 0.125), 1.5);
  EXPECT_DOUBLE_EQ(quantile(v, 1.0), 5.0);
}

TEST(Diagnostics, McseOfIndependentDraws) {
  Rng rng(8);
  Eigen::MatrixXd x(5000, 4);
  for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = rng.normal();
  const double n = static_cast<double>(x.size());
  EXPECT_NEAR(mcse_mean(x) * std::sqrt(n), 1.0, 0.1);
  // sd of the sample sd of N(0,1) draws is about 1/sqrt(2n).
  EXPECT_NEAR(mcse_sd(x) * std::sqrt(2 * n), 1.0, 0.15);
  // Median of N(0,1): asymptotic sd sqrt(pi/2)/sqrt(n).
  EXPECT_NEAR(mcse_quantile(x, 0.5) * std::sqrt(n) / std::sqrt(std::numbers::pi / 2), 1.0, 0.2);
}
