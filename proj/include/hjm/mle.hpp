#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "hjm/bfgs.hpp"
#include "hjm/marginal.hpp"
#include "hjm/quadrature.hpp"
#include "hjm/transform.hpp"
#include "hjm/types.hpp"

namespace hjm {

inline constexpr double kZ975 = 1.959963984540054;

struct MleOptions {
  int n_nodes = 9;
  int max_iterations = 500;
  std::size_t jobs = 1;
  /// Parameters held at their initial value when false.
  std::array<bool, kNumParams> free{};
  /// False drops z from the model (used by the nested GLMM comparator).
  bool latent_trait = true;
  double hessian_step = 1e-4;

  MleOptions() { free.fill(true); }
};

struct FitResult {
  StructuralParams estimates;
  std::array<double, kNumParams> standard_errors{};
  std::array<double, kNumParams> interval_lo{};
  std::array<double, kNumParams> interval_hi{};
  double max_loglik = 0.0;
  double aic = 0.0;
  double bic = 0.0;
  int n_free = 0;
  long n_subjects = 0;
  bool converged = false;
  /// False when the finite-difference Hessian is not positive definite (for
  /// example along a weakly identified ridge); standard errors are NaN then.
  bool hessian_positive_definite = false;
  long n_evaluations = 0;
  int iterations = 0;
  std::vector<double> loglik_trace;  // accepted iterates, non-decreasing
};

inline double aic_from(double loglik, int k) { return -2.0 * loglik + 2.0 * k; }
inline double bic_from(double loglik, int k, long n) {
  return -2.0 * loglik + k * std::log(static_cast<double>(n));
}

/**
 * Starting point for the full model: zero coefficients, unit scales, zero
 * correlation, and loadings of 0.5 on the latent trait. Zero loadings are a
 * stationary point of the marginal likelihood (z and -z give the same
 * likelihood there), so the optimizer would never leave them.
 */
inline StructuralParams default_mle_init() {
  StructuralParams p;
  p.gamma1 = p.delta1 = p.eta3 = 0.5;
  return p;
}

namespace detail {

inline std::vector<std::size_t> free_indices(const MleOptions& opt) {
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < kNumParams; ++k)
    if (opt.free[k]) idx.push_back(k);
  return idx;
}

}  // namespace detail

/**
 * Marginal maximum likelihood by BFGS over the free unconstrained
 * coordinates. Standard errors come from a central-difference Hessian of the
 * negative marginal log-likelihood in unconstrained coordinates, mapped to
 * the constrained scale by the delta method; intervals are 95% Wald.
 */
inline FitResult fit_mle(const PanelDataset& data, const StructuralParams& init,
                         const MleOptions& opt = {}) {
  data.validate();
  if (data.n_subjects() < 10) throw std::invalid_argument("fit_mle: at least 10 subjects required");
  init.validate();
  const auto rule = gh_rule(opt.n_nodes);
  const auto idx = detail::free_indices(opt);
  const auto base = unconstrain(init);
  const MarginalOptions mopt{opt.latent_trait, opt.jobs};

  auto to_params = [&](const Eigen::VectorXd& x) {
    UnconstrainedParams u = base;
    for (std::size_t j = 0; j < idx.size(); ++j) u[idx[j]] = x[static_cast<Eigen::Index>(j)];
    return constrain(u).params;
  };
  auto negll = [&](const Eigen::VectorXd& x) {
    try {
      return -marginal_loglik(to_params(x), data, rule, mopt);
    } catch (const LaplaceError&) {
      return std::numeric_limits<double>::infinity();
    } catch (const NonFiniteIntegrand&) {
      return std::numeric_limits<double>::infinity();
    } catch (const std::invalid_argument&) {
      // A scale that underflowed to 0 or a correlation that rounded to +-1.
      return std::numeric_limits<double>::infinity();
    }
  };

  Eigen::VectorXd x0(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) x0[static_cast<Eigen::Index>(j)] = base[idx[j]];
  BfgsOptions bopt;
  bopt.max_iterations = opt.max_iterations;
  auto opt_res = NumericBfgs(bopt).minimize(negll, x0);

  // The likelihood is unchanged when z and its three loadings all change sign.
  // Report the mirror with a non-negative trait effect on A.
  if (opt.latent_trait && opt.free[kGamma1] && opt.free[kDelta1] && opt.free[kEta3]) {
    const auto pos = [&](std::size_t k) {
      return static_cast<Eigen::Index>(std::find(idx.begin(), idx.end(), k) - idx.begin());
    };
    if (opt_res.x[pos(kGamma1)] < 0.0)
      for (auto k : {kGamma1, kDelta1, kEta3}) opt_res.x[pos(k)] = -opt_res.x[pos(k)];
  }

  FitResult fit;
  fit.estimates = to_params(opt_res.x);
  fit.max_loglik = -opt_res.value;
  fit.converged = opt_res.converged;
  fit.iterations = opt_res.iterations;
  fit.n_evaluations = opt_res.evaluations;
  for (double v : opt_res.trace) fit.loglik_trace.push_back(-v);
  fit.n_free = static_cast<int>(idx.size());
  fit.n_subjects = static_cast<long>(data.n_subjects());
  fit.aic = aic_from(fit.max_loglik, fit.n_free);
  fit.bic = bic_from(fit.max_loglik, fit.n_free, fit.n_subjects);

  // Hessian of the negative log-likelihood in the free unconstrained coordinates.
  const auto m = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd H(m, m);
  const Eigen::VectorXd& xh = opt_res.x;
  const double f0 = opt_res.value;
  std::vector<double> h(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j)
    h[static_cast<std::size_t>(j)] = opt.hessian_step * std::max(1.0, std::abs(xh[j]));
  auto at = [&](Eigen::Index j, double dj, Eigen::Index k, double dk) {
    Eigen::VectorXd x = xh;
    x[j] += dj;
    x[k] += dk;
    ++fit.n_evaluations;
    return negll(x);
  };
  for (Eigen::Index j = 0; j < m; ++j) {
    const double hj = h[static_cast<std::size_t>(j)];
    H(j, j) = (at(j, hj, j, 0) - 2.0 * f0 + at(j, -hj, j, 0)) / (hj * hj);
    for (Eigen::Index k = 0; k < j; ++k) {
      const double hk = h[static_cast<std::size_t>(k)];
      H(j, k) = H(k, j) = (at(j, hj, k, hk) - at(j, hj, k, -hk) - at(j, -hj, k, hk) +
                           at(j, -hj, k, -hk)) / (4.0 * hj * hk);
    }
  }
  fit.standard_errors.fill(0.0);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
  const bool pd = ldlt.info() == Eigen::Success && ldlt.isPositive() &&
                  (ldlt.vectorD().array() > 0).all();
  const auto est = fit.estimates.to_array();
  fit.hessian_positive_definite = pd;
  if (pd) {
    const Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(m, m));
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const auto k = idx[j];
      const double jac = constrain_derivative(k, est[k]);
      const double var = cov(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j));
      fit.standard_errors[k] = var > 0 ? std::abs(jac) * std::sqrt(var)
                                       : std::numeric_limits<double>::quiet_NaN();
    }
  } else {
    for (auto k : idx) fit.standard_errors[k] = std::numeric_limits<double>::quiet_NaN();
  }
  for (std::size_t k = 0; k < kNumParams; ++k) {
    fit.interval_lo[k] = est[k] - kZ975 * fit.standard_errors[k];
    fit.interval_hi[k] = est[k] + kZ975 * fit.standard_errors[k];
  }
  return fit;
}

}  // namespace hjm
