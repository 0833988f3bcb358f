#pragma once

#include <cmath>
#include <utility>

#include "hjm/types.hpp"

namespace hjm {

struct ConstrainResult {
  StructuralParams params;
  double log_jacobian = 0.0;
};

/// exp for scales, tanh for rho, identity for regression coefficients.
inline ConstrainResult constrain(const UnconstrainedParams& u) {
  std::array<double, kNumParams> v{};
  double log_jac = 0.0;
  for (std::size_t k = 0; k < kNumParams; ++k) {
    if (is_scale_param(k)) {
      v[k] = std::exp(u[k]);
      log_jac += u[k];
    } else if (k == kRho) {
      v[k] = std::tanh(u[k]);
      log_jac += std::log1p(-v[k] * v[k]);
    } else {
      v[k] = u[k];
    }
  }
  return {StructuralParams::from_array(v), log_jac};
}

inline UnconstrainedParams unconstrain(const StructuralParams& p) {
  p.validate();
  const auto v = p.to_array();
  UnconstrainedParams u;
  for (std::size_t k = 0; k < kNumParams; ++k) {
    if (is_scale_param(k))
      u[k] = std::log(v[k]);
    else if (k == kRho)
      u[k] = std::atanh(v[k]);
    else
      u[k] = v[k];
  }
  return u;
}

/// d(constrained_k)/d(unconstrained_k); the transform is coordinate-wise.
inline double constrain_derivative(std::size_t k, double constrained_value) {
  if (is_scale_param(k)) return constrained_value;
  if (k == kRho) return 1.0 - constrained_value * constrained_value;
  return 1.0;
}

}  // namespace hjm
