#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>

#include "hjm/density.hpp"
#include "hjm/transform.hpp"
#include "hjm/types.hpp"

namespace hjm {

/**
 * Weakly informative priors: N(0, coef_sd^2) on regression coefficients,
 * Half-Cauchy(0, scale_prior) on the four scales, and LKJ(1) on the 2x2
 * intercept correlation, which is the uniform density on (-1, 1).
 */
struct PriorConfig {
  double coef_sd = 10.0;
  double scale_prior = 2.5;

  void validate() const {
    if (!(coef_sd > 0) || !(scale_prior > 0))
      throw std::invalid_argument("PriorConfig: hyperparameters must be positive");
  }
};

inline double half_cauchy_lpdf(double x, double scale) {
  const double r = x / scale;
  return std::log(2.0 / std::numbers::pi) - std::log(scale) - std::log1p(r * r);
}

/// Log prior density of one structural parameter, in constrained space.
inline double param_log_prior(std::size_t k, double value, const PriorConfig& priors) {
  if (is_scale_param(k)) return half_cauchy_lpdf(value, priors.scale_prior);
  if (k == kRho) return -std::numbers::ln2;
  return normal_lpdf(value, 0.0, priors.coef_sd);
}

/**
 * Log prior plus log Jacobian of parameter k evaluated at the unconstrained
 * value `u`; adds the derivative with respect to `u` to `grad`.
 */
inline double param_log_prior_unconstrained(std::size_t k, double u, const PriorConfig& priors,
                                            double& grad) {
  if (is_scale_param(k)) {
    const double s = std::exp(u);
    const double c = priors.scale_prior;
    grad += 1.0 - 2.0 * s * s / (c * c + s * s);
    return half_cauchy_lpdf(s, c) + u;
  }
  if (k == kRho) {
    const double r = std::tanh(u);
    grad += -2.0 * r;
    return -std::numbers::ln2 + std::log1p(-r * r);
  }
  const double sd = priors.coef_sd;
  grad += -u / (sd * sd);
  return normal_lpdf(u, 0.0, sd);
}

/// Prior plus log Jacobian over all 19 unconstrained parameters.
inline double log_prior_unconstrained(const UnconstrainedParams& u, const PriorConfig& priors,
                                      std::span<double, kNumParams> grad) {
  double total = 0.0;
  for (std::size_t k = 0; k < kNumParams; ++k)
    total += param_log_prior_unconstrained(k, u[k], priors, grad[k]);
  return total;
}

}  // namespace hjm
