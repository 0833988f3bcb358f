#pragma once

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "hjm/density.hpp"
#include "hjm/priors.hpp"
#include "hjm/transform.hpp"
#include "hjm/types.hpp"

namespace hjm {

namespace detail {

struct BernoulliTerm {
  double log_mass;
  double residual;  // y - p, the derivative of log_mass with respect to the logit
};

inline BernoulliTerm bernoulli_term(int y, double eta) {
  if (eta >= 0) {
    const double e = std::exp(-eta);
    const double l = std::log1p(e);
    const double p = 1.0 / (1.0 + e);
    return {y ? -l : -eta - l, y - p};
  }
  const double e = std::exp(eta);
  const double l = std::log1p(e);
  const double p = e / (1.0 + e);
  return {y ? eta - l : -l, y - p};
}

}  // namespace detail

/// Latent-coordinate derivatives returned by subject_logdensity_grad.
struct SubjectGradient {
  double value = 0.0;
  double d_ua = 0.0;
  double d_ub = 0.0;
  double d_z = 0.0;
};

/**
 * subject_complete_logdensity together with its gradient. Derivatives with
 * respect to the structural parameters are accumulated into `grad_theta` in
 * unconstrained coordinates (d/dlog(sigma), d/dlog(sigma_t)); tau and rho do
 * not enter the likelihood.
 */
/// Per-evaluation constants shared by all subjects.
struct ScaleTerms {
  double inv_var, log_sigma, inv_var_t, log_sigma_t;
  explicit ScaleTerms(const StructuralParams& p)
      : inv_var(1.0 / (p.sigma * p.sigma)), log_sigma(std::log(p.sigma)),
        inv_var_t(1.0 / (p.sigma_t * p.sigma_t)), log_sigma_t(std::log(p.sigma_t)) {}
};

inline SubjectGradient subject_logdensity_grad(const StructuralParams& p, const ScaleTerms& sc,
                                               Eigen::Index i, const PanelDataset& data,
                                               const LatentState& latent,
                                               std::span<double, kNumParams> grad_theta) {
  SubjectGradient out;
  const auto T = data.n_times();
  const double oa = data.offset(i, 0), ob = data.offset(i, 1);
  const double inv_var = sc.inv_var;
  const double log_sigma = sc.log_sigma;

  for (Eigen::Index t = 1; t + 1 < T; ++t) {
    const int a_prev = data.a(i, t - 1);
    const double b_prev = data.b(i, t - 1);
    const auto bern = detail::bernoulli_term(
        data.a(i, t), p.alpha0 + p.alpha1 * a_prev + p.alpha2 * b_prev + latent.u_a + oa);
    out.value += bern.log_mass;
    grad_theta[kAlpha0] += bern.residual;
    grad_theta[kAlpha1] += bern.residual * a_prev;
    grad_theta[kAlpha2] += bern.residual * b_prev;
    out.d_ua += bern.residual;

    const double r = data.b(i, t) - (p.beta0 + p.beta1 * b_prev + p.beta2 * a_prev + latent.u_b + ob);
    const double r2 = r * r * inv_var;
    out.value += -kLogSqrt2Pi - log_sigma - 0.5 * r2;
    const double w = r * inv_var;
    grad_theta[kBeta0] += w;
    grad_theta[kBeta1] += w * b_prev;
    grad_theta[kBeta2] += w * a_prev;
    grad_theta[kSigma] += r2 - 1.0;
    out.d_ub += w;
  }

  const auto last = T - 1;
  const int a_T = data.a(i, last);
  const double b_T = data.b(i, last);
  const double z = latent.z;

  const auto rev = detail::bernoulli_term(a_T, p.gamma0 + p.gamma1 * z + data.offset(i, 2));
  out.value += rev.log_mass;
  grad_theta[kGamma0] += rev.residual;
  grad_theta[kGamma1] += rev.residual * z;
  out.d_z += rev.residual * p.gamma1;

  const double inv_var_t = sc.inv_var_t;
  const double rt = b_T - (p.delta0 + p.delta1 * z + data.offset(i, 3));
  const double rt2 = rt * rt * inv_var_t;
  out.value += -kLogSqrt2Pi - sc.log_sigma_t - 0.5 * rt2;
  const double wt = rt * inv_var_t;
  grad_theta[kDelta0] += wt;
  grad_theta[kDelta1] += wt * z;
  grad_theta[kSigmaT] += rt2 - 1.0;
  out.d_z += wt * p.delta1;

  const auto outc = detail::bernoulli_term(
      data.y[i], p.eta0 + p.eta1 * a_T + p.eta2 * b_T + p.eta3 * z + data.offset(i, 4));
  out.value += outc.log_mass;
  grad_theta[kEta0] += outc.residual;
  grad_theta[kEta1] += outc.residual * a_T;
  grad_theta[kEta2] += outc.residual * b_T;
  grad_theta[kEta3] += outc.residual * z;
  out.d_z += outc.residual * p.eta3;
  return out;
}

inline SubjectGradient subject_logdensity_grad(const StructuralParams& p, Eigen::Index i,
                                               const PanelDataset& data,
                                               const LatentState& latent,
                                               std::span<double, kNumParams> grad_theta) {
  return subject_logdensity_grad(p, ScaleTerms(p), i, data, latent, grad_theta);
}

/**
 * Bivariate normal intercept log prior with derivatives: d/du_a, d/du_b are
 * returned through the references, d/dlog(tau_a), d/dlog(tau_b), d/datanh(rho)
 * are accumulated into grad_theta.
 */
inline double bvn_logpdf_grad(double u_a, double u_b, const StructuralParams& p, double& d_ua,
                              double& d_ub, std::span<double, kNumParams> grad_theta) {
  const double xa = u_a / p.tau_a;
  const double xb = u_b / p.tau_b;
  const double one_m_r2 = 1.0 - p.rho * p.rho;
  const double s = xa * xa - 2.0 * p.rho * xa * xb + xb * xb;
  const double q = s / one_m_r2;
  d_ua += -(xa - p.rho * xb) / (one_m_r2 * p.tau_a);
  d_ub += -(xb - p.rho * xa) / (one_m_r2 * p.tau_b);
  grad_theta[kTauA] += -1.0 + (xa * xa - p.rho * xa * xb) / one_m_r2;
  grad_theta[kTauB] += -1.0 + (xb * xb - p.rho * xa * xb) / one_m_r2;
  grad_theta[kRho] += p.rho + xa * xb - p.rho * q;
  return -kLog2Pi - std::log(p.tau_a) - std::log(p.tau_b) - 0.5 * std::log(one_m_r2) - 0.5 * q;
}

struct ValueGradient {
  double value = 0.0;
  std::vector<double> gradient;
};

/**
 * Complete-data log posterior in the centered parameterization:
 * sum_i [subject_complete_logdensity + latent_logprior] + log prior + log Jacobian.
 * Gradient layout: 19 unconstrained parameters, then (u_a, u_b, z) per subject.
 */
inline ValueGradient complete_logdensity_grad(const UnconstrainedParams& u,
                                              std::span<const LatentState> latents,
                                              const PanelDataset& data, const PriorConfig& priors) {
  const auto n = data.n_subjects();
  if (static_cast<Eigen::Index>(latents.size()) != n)
    throw std::invalid_argument("complete_logdensity_grad: latent count differs from n_subjects");
  const auto [p, log_jac] = constrain(u);
  (void)log_jac;  // included through log_prior_unconstrained
  ValueGradient out;
  out.gradient.assign(kNumParams + 3 * static_cast<std::size_t>(n), 0.0);
  std::span<double, kNumParams> g_theta(out.gradient.data(), kNumParams);

  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& lat = latents[static_cast<std::size_t>(i)];
    auto sg = subject_logdensity_grad(p, i, data, lat, g_theta);
    sg.value += bvn_logpdf_grad(lat.u_a, lat.u_b, p, sg.d_ua, sg.d_ub, g_theta);
    sg.value += std_normal_lpdf(lat.z);
    sg.d_z += -lat.z;
    out.value += sg.value;
    const std::size_t base = kNumParams + 3 * static_cast<std::size_t>(i);
    out.gradient[base] = sg.d_ua;
    out.gradient[base + 1] = sg.d_ub;
    out.gradient[base + 2] = sg.d_z;
  }
  out.value += log_prior_unconstrained(u, priors, g_theta);
  return out;
}

/**
 * Maps standardized intercepts (e_a, e_b) ~ N(0, I) to (u_a, u_b) through the
 * Cholesky factor of the intercept covariance.
 */
inline std::pair<double, double> noncentered_intercepts(double e_a, double e_b,
                                                        const StructuralParams& p) {
  const double c = std::sqrt(1.0 - p.rho * p.rho);
  return {p.tau_a * e_a, p.tau_b * (p.rho * e_a + c * e_b)};
}

/**
 * Complete-data log posterior in the non-centered parameterization, where the
 * latents of subject i are (e_a, e_b, z) with independent standard normal
 * priors and (u_a, u_b) = noncentered_intercepts(e_a, e_b). Same gradient
 * layout as complete_logdensity_grad.
 */
inline ValueGradient noncentered_logdensity_grad(const UnconstrainedParams& u,
                                                 std::span<const LatentState> std_latents,
                                                 const PanelDataset& data,
                                                 const PriorConfig& priors) {
  const auto n = data.n_subjects();
  if (static_cast<Eigen::Index>(std_latents.size()) != n)
    throw std::invalid_argument("noncentered_logdensity_grad: latent count differs from n_subjects");
  const auto p = constrain(u).params;
  const double c = std::sqrt(1.0 - p.rho * p.rho);
  ValueGradient out;
  out.gradient.assign(kNumParams + 3 * static_cast<std::size_t>(n), 0.0);
  std::span<double, kNumParams> g_theta(out.gradient.data(), kNumParams);

  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& e = std_latents[static_cast<std::size_t>(i)];
    const auto [u_a, u_b] = noncentered_intercepts(e.u_a, e.u_b, p);
    const auto sg = subject_logdensity_grad(p, i, data, LatentState{u_a, u_b, e.z}, g_theta);
    out.value += sg.value + std_normal_lpdf(e.u_a) + std_normal_lpdf(e.u_b) + std_normal_lpdf(e.z);
    g_theta[kTauA] += sg.d_ua * u_a;
    g_theta[kTauB] += sg.d_ub * u_b;
    g_theta[kRho] += sg.d_ub * p.tau_b * (e.u_a * c * c - p.rho * c * e.u_b);
    const std::size_t base = kNumParams + 3 * static_cast<std::size_t>(i);
    out.gradient[base] = sg.d_ua * p.tau_a + sg.d_ub * p.tau_b * p.rho - e.u_a;
    out.gradient[base + 1] = sg.d_ub * p.tau_b * c - e.u_b;
    out.gradient[base + 2] = sg.d_z - e.z;
  }
  out.value += log_prior_unconstrained(u, priors, g_theta);
  return out;
}

}  // namespace hjm
