#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

#include "hjm/density.hpp"
#include "hjm/types.hpp"

namespace hjm {

/**
 * Mode of the per-subject conditional log density of (u_a, u_b, z) and the
 * lower Cholesky factor of the negative Hessian there. The Hessian is block
 * diagonal: (u_a, u_b) only enter Phase I and z only enters the reversal and
 * outcome terms.
 */
struct LaplaceResult {
  LatentState mode;
  Eigen::Matrix3d chol_neg_hessian = Eigen::Matrix3d::Identity();
  double log_density_at_mode = 0.0;  // Phase I + intercept prior
  double log_density_z_at_mode = 0.0;  // reversal + outcome + z prior
  int iterations = 0;
};

class LaplaceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct InterceptDerivs {
  double value;
  Eigen::Vector2d grad;
  Eigen::Matrix2d hess;
};

/// Phase-I log density plus intercept prior, with gradient and Hessian in (u_a, u_b).
inline InterceptDerivs intercept_block(const StructuralParams& p, Eigen::Index i,
                                       const PanelDataset& data, double u_a, double u_b) {
  InterceptDerivs d{0.0, Eigen::Vector2d::Zero(), Eigen::Matrix2d::Zero()};
  const auto T = data.n_times();
  const double oa = data.offset(i, 0), ob = data.offset(i, 1);
  const double inv_var = 1.0 / (p.sigma * p.sigma);
  for (Eigen::Index t = 1; t + 1 < T; ++t) {
    const int a_prev = data.a(i, t - 1);
    const double b_prev = data.b(i, t - 1);
    const double eta = p.alpha0 + p.alpha1 * a_prev + p.alpha2 * b_prev + u_a + oa;
    const double prob = inv_logit(eta);
    d.value += bernoulli_logit_lpmf(data.a(i, t), eta);
    d.grad[0] += data.a(i, t) - prob;
    d.hess(0, 0) -= prob * (1.0 - prob);
    const double r = data.b(i, t) - (p.beta0 + p.beta1 * b_prev + p.beta2 * a_prev + u_b + ob);
    d.value += -kLogSqrt2Pi - std::log(p.sigma) - 0.5 * r * r * inv_var;
    d.grad[1] += r * inv_var;
    d.hess(1, 1) -= inv_var;
  }
  const double one_m_r2 = 1.0 - p.rho * p.rho;
  Eigen::Matrix2d prec;
  prec << 1.0 / (p.tau_a * p.tau_a), -p.rho / (p.tau_a * p.tau_b),
      -p.rho / (p.tau_a * p.tau_b), 1.0 / (p.tau_b * p.tau_b);
  prec /= one_m_r2;
  const Eigen::Vector2d u(u_a, u_b);
  d.value += bvn_logpdf(u_a, u_b, p.tau_a, p.tau_b, p.rho);
  d.grad -= prec * u;
  d.hess -= prec;
  return d;
}

struct TraitDerivs {
  double value, grad, hess;
};

/// Reversal + outcome log density plus z prior, with first and second derivative in z.
inline TraitDerivs trait_block(const StructuralParams& p, Eigen::Index i,
                               const PanelDataset& data, double z) {
  const auto last = data.n_times() - 1;
  const int a_T = data.a(i, last);
  const double b_T = data.b(i, last);
  TraitDerivs d{0.0, -z, -1.0};
  d.value = subject_final_logdensity(p, i, data, z) + std_normal_lpdf(z);
  const double pa = inv_logit(p.gamma0 + p.gamma1 * z + data.offset(i, 2));
  d.grad += (a_T - pa) * p.gamma1;
  d.hess -= p.gamma1 * p.gamma1 * pa * (1.0 - pa);
  const double inv_var_t = 1.0 / (p.sigma_t * p.sigma_t);
  d.grad += (b_T - p.delta0 - p.delta1 * z - data.offset(i, 3)) * p.delta1 * inv_var_t;
  d.hess -= p.delta1 * p.delta1 * inv_var_t;
  const double py = inv_logit(p.eta0 + p.eta1 * a_T + p.eta2 * b_T + p.eta3 * z + data.offset(i, 4));
  d.grad += (data.y[i] - py) * p.eta3;
  d.hess -= p.eta3 * p.eta3 * py * (1.0 - py);
  return d;
}

}  // namespace detail

/// Damped Newton ascent on each (concave) block; gradient tolerance 1e-8.
inline LaplaceResult subject_laplace(const StructuralParams& p, Eigen::Index i,
                                     const PanelDataset& data, bool with_trait = true) {
  constexpr int kMaxIter = 100;
  constexpr double kTol = 1e-8;
  LaplaceResult res;

  Eigen::Vector2d u = Eigen::Vector2d::Zero();
  auto d = detail::intercept_block(p, i, data, u[0], u[1]);
  int it = 0;
  for (; it < kMaxIter && d.grad.lpNorm<Eigen::Infinity>() > kTol; ++it) {
    const Eigen::Vector2d step = (-d.hess).llt().solve(d.grad);
    double scale = 1.0;
    for (int h = 0; h < 30; ++h, scale *= 0.5) {
      const Eigen::Vector2d cand = u + scale * step;
      auto dc = detail::intercept_block(p, i, data, cand[0], cand[1]);
      if (std::isfinite(dc.value) && dc.value >= d.value - 1e-12 * std::abs(d.value)) {
        u = cand;
        d = dc;
        break;
      }
    }
  }
  if (!(d.grad.lpNorm<Eigen::Infinity>() <= kTol))
    throw LaplaceError("subject_laplace: intercept Newton did not converge for subject " +
                       std::to_string(i));
  res.iterations = it;

  double z = 0.0;
  detail::TraitDerivs dz{0.0, 0.0, -1.0};
  if (with_trait) {
    dz = detail::trait_block(p, i, data, z);
    int jt = 0;
    for (; jt < kMaxIter && std::abs(dz.grad) > kTol; ++jt) {
      const double step = -dz.grad / dz.hess;
      double scale = 1.0;
      for (int h = 0; h < 30; ++h, scale *= 0.5) {
        const double cand = z + scale * step;
        auto dc = detail::trait_block(p, i, data, cand);
        if (std::isfinite(dc.value) && dc.value >= dz.value - 1e-12 * std::abs(dz.value)) {
          z = cand;
          dz = dc;
          break;
        }
      }
    }
    if (!(std::abs(dz.grad) <= kTol))
      throw LaplaceError("subject_laplace: trait Newton did not converge for subject " +
                         std::to_string(i));
    res.iterations = std::max(res.iterations, jt);
  }

  res.mode = {u[0], u[1], z};
  Eigen::LLT<Eigen::Matrix2d> llt(-d.hess);
  if (llt.info() != Eigen::Success)
    throw LaplaceError("subject_laplace: negative Hessian not positive definite for subject " +
                       std::to_string(i));
  res.chol_neg_hessian.setZero();
  res.chol_neg_hessian.topLeftCorner<2, 2>() = llt.matrixL();
  res.chol_neg_hessian(2, 2) = std::sqrt(-dz.hess);
  res.log_density_at_mode = d.value;
  res.log_density_z_at_mode = with_trait ? dz.value : 0.0;
  return res;
}

}  // namespace hjm
