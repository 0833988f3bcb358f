#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "hjm/density.hpp"

namespace hjm {

struct LogisticOptions {
  double grad_tol = 1e-8;
  int max_iterations = 100;
  /// Any |coefficient| above this is taken as evidence of separation.
  double separation_bound = 30.0;
};

struct LogisticFit {
  Eigen::VectorXd coef;  // intercept first
  Eigen::VectorXd standard_errors;
  double loglik = 0.0;
  bool converged = false;
  bool separation = false;
  int iterations = 0;
  std::string warning;
};

namespace detail {

inline double logistic_loglik(const Eigen::MatrixXd& X1, const Eigen::VectorXi& y,
                              const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = X1 * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) ll += bernoulli_logit_lpmf(y[i], eta[i]);
  return ll;
}

}  // namespace detail

/**
 * Maximum-likelihood logistic regression of y on [1, X] by iteratively
 * reweighted least squares (Newton-Raphson with step halving). Standard
 * errors come from the inverse observed information (X'WX)^{-1} at the
 * estimate. Separation is reported through the flag and warning, not thrown.
 */
inline LogisticFit fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXi& y,
                                const LogisticOptions& opt = {}) {
  const Eigen::Index n = X.rows();
  if (y.size() != n) throw std::invalid_argument("fit_logistic: row mismatch");
  if (n < 1) throw std::invalid_argument("fit_logistic: empty design");
  for (Eigen::Index i = 0; i < n; ++i)
    if (y[i] != 0 && y[i] != 1) throw std::invalid_argument("fit_logistic: outcome must be 0/1");
  if (!X.allFinite()) throw std::invalid_argument("fit_logistic: non-finite design");

  const Eigen::Index k = X.cols() + 1;
  Eigen::MatrixXd X1(n, k);
  X1.col(0).setOnes();
  X1.rightCols(X.cols()) = X;
  const Eigen::VectorXd yd = y.cast<double>();

  LogisticFit fit;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
  double ll = detail::logistic_loglik(X1, y, beta);
  Eigen::MatrixXd info(k, k);
  auto information = [&](const Eigen::VectorXd& b) {
    const Eigen::VectorXd eta = X1 * b;
    Eigen::VectorXd w(n), r(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double p = inv_logit(eta[i]);
      w[i] = p * (1.0 - p);
      r[i] = yd[i] - p;
    }
    info.noalias() = X1.transpose() * w.asDiagonal() * X1;
    return Eigen::VectorXd(X1.transpose() * r);
  };

  // Ascent check tolerant to rounding in the log-likelihood sum.
  auto no_worse = [&](double candidate) { return candidate >= ll - 1e-12 * (1.0 + std::abs(ll)); };
  for (fit.iterations = 0; fit.iterations < opt.max_iterations; ++fit.iterations) {
    const Eigen::VectorXd grad = information(beta);
    const bool small = grad.norm() <= opt.grad_tol;
    if (!small && beta.cwiseAbs().maxCoeff() > opt.separation_bound) break;
    const Eigen::VectorXd step = info.ldlt().solve(grad);
    double t = 1.0;
    Eigen::VectorXd next = beta + step;
    double ll_next = detail::logistic_loglik(X1, y, next);
    while (!no_worse(ll_next) && t > 1e-10) {
      t *= 0.5;
      next = beta + t * step;
      ll_next = detail::logistic_loglik(X1, y, next);
    }
    if (no_worse(ll_next)) {
      beta = next;
      ll = std::max(ll, ll_next);
    }
    if (small) {
      // One extra Newton step from within tolerance removes the remaining
      // first-order error in the estimate.
      fit.converged = true;
      break;
    }
    if (!no_worse(ll_next)) break;
  }
  information(beta);
  ll = detail::logistic_loglik(X1, y, beta);

  fit.coef = beta;
  fit.loglik = ll;
  fit.separation = beta.cwiseAbs().maxCoeff() > opt.separation_bound;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive() && (ldlt.vectorD().array() > 0).all()) {
    const Eigen::MatrixXd cov = ldlt.solve(Eigen::MatrixXd::Identity(k, k));
    fit.standard_errors = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  } else {
    fit.standard_errors = Eigen::VectorXd::Constant(k, std::numeric_limits<double>::quiet_NaN());
  }
  if (fit.separation)
    fit.warning = "fit_logistic: coefficient magnitude exceeds " + std::to_string(opt.separation_bound) +
                  "; the outcome appears (quasi-)separated";
  else if (!fit.converged)
    fit.warning = "fit_logistic: did not reach the gradient tolerance";
  return fit;
}

}  // namespace hjm
