#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "hjm/types.hpp"

namespace hjm {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)
inline constexpr double kLog2Pi = 2.0 * kLogSqrt2Pi;

inline double inv_logit(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// Bernoulli log-mass of `y` at success logit `eta`.
inline double bernoulli_logit_lpmf(int y, double eta) {
  return y ? -softplus(-eta) : -softplus(eta);
}

inline double normal_lpdf(double x, double mean, double sd) {
  const double r = (x - mean) / sd;
  return -kLogSqrt2Pi - std::log(sd) - 0.5 * r * r;
}

inline double std_normal_lpdf(double x) { return -kLogSqrt2Pi - 0.5 * x * x; }

/// Mean-zero bivariate normal with scales tau_a, tau_b and correlation rho.
inline double bvn_logpdf(double u_a, double u_b, double tau_a, double tau_b, double rho) {
  if (!(tau_a > 0) || !(tau_b > 0))
    throw std::invalid_argument("bvn_logpdf: scales must be positive");
  if (!(rho > -1.0 && rho < 1.0))
    throw std::invalid_argument("bvn_logpdf: correlation must lie in (-1, 1)");
  const double xa = u_a / tau_a;
  const double xb = u_b / tau_b;
  const double one_m_r2 = 1.0 - rho * rho;
  const double quad = (xa * xa - 2.0 * rho * xa * xb + xb * xb) / one_m_r2;
  return -kLog2Pi - std::log(tau_a) - std::log(tau_b) - 0.5 * std::log(one_m_r2) - 0.5 * quad;
}

/// Phase-I transition log density (binary and continuous parts).
inline double phase1_logdensity(const StructuralParams& p, int a_prev, double b_prev,
                                int a_cur, double b_cur, const LatentState& latent,
                                double offset_a = 0.0, double offset_b = 0.0) {
  const double eta = p.alpha0 + p.alpha1 * a_prev + p.alpha2 * b_prev + latent.u_a + offset_a;
  const double mean = p.beta0 + p.beta1 * b_prev + p.beta2 * a_prev + latent.u_b + offset_b;
  return bernoulli_logit_lpmf(a_cur, eta) + normal_lpdf(b_cur, mean, p.sigma);
}

/// Reversal-phase log density of (A_T, B_T) given z.
inline double phase2_logdensity(const StructuralParams& p, int a_final, double b_final, double z,
                                double offset_a = 0.0, double offset_b = 0.0) {
  return bernoulli_logit_lpmf(a_final, p.gamma0 + p.gamma1 * z + offset_a) +
         normal_lpdf(b_final, p.delta0 + p.delta1 * z + offset_b, p.sigma_t);
}

/// Outcome log-mass of Y given (A_T, B_T, z).
inline double phase3_logdensity(const StructuralParams& p, int y, int a_final, double b_final,
                                double z, double offset_y = 0.0) {
  return bernoulli_logit_lpmf(
      y, p.eta0 + p.eta1 * a_final + p.eta2 * b_final + p.eta3 * z + offset_y);
}

namespace detail {
inline void check_subject(const PanelDataset& data, Eigen::Index i) {
  if (i < 0 || i >= data.n_subjects())
    throw std::out_of_range("subject index out of range");
}
}  // namespace detail

/// Sum of the Phase-I transition terms t = 2..T-1 (1-based) of subject i.
inline double subject_phase1_logdensity(const StructuralParams& p, Eigen::Index i,
                                        const PanelDataset& data, double u_a, double u_b) {
  const auto T = data.n_times();
  const LatentState latent{u_a, u_b, 0.0};
  const double oa = data.offset(i, 0), ob = data.offset(i, 1);
  double total = 0.0;
  for (Eigen::Index t = 1; t + 1 < T; ++t)
    total += phase1_logdensity(p, data.a(i, t - 1), data.b(i, t - 1), data.a(i, t),
                               data.b(i, t), latent, oa, ob);
  return total;
}

/// Reversal plus outcome terms of subject i as a function of z.
inline double subject_final_logdensity(const StructuralParams& p, Eigen::Index i,
                                       const PanelDataset& data, double z) {
  const auto last = data.n_times() - 1;
  const int a_T = data.a(i, last);
  const double b_T = data.b(i, last);
  return phase2_logdensity(p, a_T, b_T, z, data.offset(i, 2), data.offset(i, 3)) +
         phase3_logdensity(p, data.y[i], a_T, b_T, z, data.offset(i, 4));
}

/**
 * Complete-data log density of subject i given its latents, excluding the
 * latent priors. The initial observation (A_1, B_1) is conditioned on.
 */
inline double subject_complete_logdensity(const StructuralParams& p, Eigen::Index i,
                                          const PanelDataset& data, const LatentState& latent) {
  detail::check_subject(data, i);
  return subject_phase1_logdensity(p, i, data, latent.u_a, latent.u_b) +
         subject_final_logdensity(p, i, data, latent.z);
}

inline double latent_logprior(const LatentState& latent, const StructuralParams& p) {
  return bvn_logpdf(latent.u_a, latent.u_b, p.tau_a, p.tau_b, p.rho) + std_normal_lpdf(latent.z);
}

}  // namespace hjm
