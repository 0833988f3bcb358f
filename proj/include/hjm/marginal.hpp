#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "hjm/density.hpp"
#include "hjm/laplace.hpp"
#include "hjm/parallel.hpp"
#include "hjm/quadrature.hpp"
#include "hjm/types.hpp"

namespace hjm {

class NonFiniteIntegrand : public std::runtime_error {
 public:
  NonFiniteIntegrand(Eigen::Index subject, const std::string& what)
      : std::runtime_error(what + " (subject " + std::to_string(subject) + ")"),
        subject_(subject) {}
  Eigen::Index subject() const { return subject_; }

 private:
  Eigen::Index subject_;
};

struct MarginalOptions {
  /// When false, z is absent from the model (reversal and outcome terms at
  /// z = 0) and only the 2-D intercept integral is computed.
  bool latent_trait = true;
  std::size_t jobs = 1;
};

namespace detail {

/// Streaming log-sum-exp accumulator.
class LogSumExp {
 public:
  void add(double x) {
    if (x == -std::numeric_limits<double>::infinity()) return;
    if (x <= max_) {
      sum_ += std::exp(x - max_);
    } else {
      sum_ = sum_ * std::exp(max_ - x) + 1.0;
      max_ = x;
    }
  }
  double value() const { return max_ + std::log(sum_); }

 private:
  double max_ = -std::numeric_limits<double>::infinity();
  double sum_ = 0.0;
};

}  // namespace detail

/**
 * log of the adaptively shifted and scaled 2-D quadrature estimate of
 * integral exp(Phase I + intercept prior) d(u_a, u_b).
 */
inline double subject_intercept_integral(const StructuralParams& p, Eigen::Index i,
                                         const PanelDataset& data, const LaplaceResult& lap,
                                         const QuadratureRule& rule) {
  const Eigen::Matrix2d L = lap.chol_neg_hessian.topLeftCorner<2, 2>();
  // u = mode + L^{-T} xi
  const Eigen::Matrix2d Linv_t = L.transpose().inverse();
  const double log_det = std::log(L(0, 0)) + std::log(L(1, 1));
  detail::LogSumExp lse;
  for (std::size_t j = 0; j < rule.size(); ++j) {
    for (std::size_t k = 0; k < rule.size(); ++k) {
      const Eigen::Vector2d xi(rule.nodes[j], rule.nodes[k]);
      const Eigen::Vector2d u = Eigen::Vector2d(lap.mode.u_a, lap.mode.u_b) + Linv_t * xi;
      const double f = subject_phase1_logdensity(p, i, data, u[0], u[1]) +
                       bvn_logpdf(u[0], u[1], p.tau_a, p.tau_b, p.rho);
      lse.add(rule.log_weights[j] + rule.log_weights[k] + f + 0.5 * xi.squaredNorm());
    }
  }
  return lse.value() + kLog2Pi - log_det;
}

/// log of the adaptive 1-D quadrature estimate of integral exp(reversal + outcome + z prior) dz.
inline double subject_trait_integral(const StructuralParams& p, Eigen::Index i,
                                     const PanelDataset& data, const LaplaceResult& lap,
                                     const QuadratureRule& rule) {
  const double l = lap.chol_neg_hessian(2, 2);
  detail::LogSumExp lse;
  for (std::size_t j = 0; j < rule.size(); ++j) {
    const double xi = rule.nodes[j];
    const double z = lap.mode.z + xi / l;
    const double f = subject_final_logdensity(p, i, data, z) + std_normal_lpdf(z);
    lse.add(rule.log_weights[j] + f + 0.5 * xi * xi);
  }
  return lse.value() + kLogSqrt2Pi - std::log(l);
}

/// Marginal log-likelihood contribution of subject i (factorized evaluation).
inline double subject_marginal_loglik(const StructuralParams& p, Eigen::Index i,
                                      const PanelDataset& data, const QuadratureRule& rule,
                                      bool latent_trait = true) {
  const auto lap = subject_laplace(p, i, data, latent_trait);
  double v = subject_intercept_integral(p, i, data, lap, rule);
  v += latent_trait ? subject_trait_integral(p, i, data, lap, rule)
                    : subject_final_logdensity(p, i, data, 0.0);
  if (!std::isfinite(v)) throw NonFiniteIntegrand(i, "marginal_loglik: non-finite integrand");
  return v;
}

/// Per-subject marginal log-likelihood contributions.
inline std::vector<double> marginal_loglik_terms(const StructuralParams& p, const PanelDataset& data,
                                                 const QuadratureRule& rule,
                                                 const MarginalOptions& opt = {}) {
  p.validate();
  const auto n = static_cast<std::size_t>(data.n_subjects());
  std::vector<double> terms(n);
  parallel_for(n, opt.jobs, [&](std::size_t i) {
    terms[i] = subject_marginal_loglik(p, static_cast<Eigen::Index>(i), data, rule, opt.latent_trait);
  });
  return terms;
}

/// Sum over subjects of the log of the adaptive Gauss-Hermite estimate of the triple integral.
inline double marginal_loglik(const StructuralParams& p, const PanelDataset& data,
                              const QuadratureRule& rule, const MarginalOptions& opt = {}) {
  double total = 0.0;
  for (double t : marginal_loglik_terms(p, data, rule, opt)) total += t;  // fixed order
  return total;
}

/**
 * Reference evaluation on the full 3-D tensor-product grid, without using the
 * factorization of the integrand. Cost is n_nodes^3 density evaluations.
 */
inline double subject_marginal_loglik_tensor(const StructuralParams& p, Eigen::Index i,
                                             const PanelDataset& data, const QuadratureRule& rule) {
  const auto lap = subject_laplace(p, i, data, true);
  const Eigen::Matrix3d& L = lap.chol_neg_hessian;
  const Eigen::Matrix3d Linv_t = L.transpose().inverse();
  const double log_det = std::log(L(0, 0)) + std::log(L(1, 1)) + std::log(L(2, 2));
  const Eigen::Vector3d mode(lap.mode.u_a, lap.mode.u_b, lap.mode.z);
  detail::LogSumExp lse;
  for (std::size_t j = 0; j < rule.size(); ++j)
    for (std::size_t k = 0; k < rule.size(); ++k)
      for (std::size_t m = 0; m < rule.size(); ++m) {
        const Eigen::Vector3d xi(rule.nodes[j], rule.nodes[k], rule.nodes[m]);
        const Eigen::Vector3d x = mode + Linv_t * xi;
        const LatentState lat{x[0], x[1], x[2]};
        const double f = subject_complete_logdensity(p, i, data, lat) + latent_logprior(lat, p);
        lse.add(rule.log_weights[j] + rule.log_weights[k] + rule.log_weights[m] + f +
                0.5 * xi.squaredNorm());
      }
  const double v = lse.value() + 3.0 * kLogSqrt2Pi - log_det;
  if (!std::isfinite(v)) throw NonFiniteIntegrand(i, "marginal_loglik_tensor: non-finite integrand");
  return v;
}

inline double marginal_loglik_tensor(const StructuralParams& p, const PanelDataset& data,
                                     const QuadratureRule& rule) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < data.n_subjects(); ++i)
    total += subject_marginal_loglik_tensor(p, i, data, rule);
  return total;
}

}  // namespace hjm
