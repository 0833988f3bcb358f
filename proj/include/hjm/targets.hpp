#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hjm/density.hpp"
#include "hjm/gradient.hpp"
#include "hjm/parallel.hpp"
#include "hjm/priors.hpp"
#include "hjm/rng.hpp"
#include "hjm/transform.hpp"
#include "hjm/types.hpp"

namespace hjm {

struct JointTargetOptions {
  /// Parameters held at `fixed` when false; they are then absent from the state.
  std::array<bool, kNumParams> free{};
  StructuralParams fixed;
  /// False removes z from the model; the state then carries no z coordinates.
  bool latent_trait = true;
  /// Worker threads for the per-subject sums within one evaluation.
  std::size_t jobs = 1;

  JointTargetOptions() { free.fill(true); }
};

/// Outcome log-likelihood of subject i, the pointwise unit used for WAIC.
inline double outcome_loglik(const StructuralParams& p, Eigen::Index i, const PanelDataset& data,
                             double z) {
  const auto last = data.n_times() - 1;
  return phase3_logdensity(p, data.y[i], data.a(i, last), data.b(i, last), z, data.offset(i, 4));
}

/// Posterior predictive probability that Y_i = 1 given one draw.
inline double outcome_probability(const StructuralParams& p, Eigen::Index i,
                                  const PanelDataset& data, double z) {
  const auto last = data.n_times() - 1;
  return inv_logit(p.eta0 + p.eta1 * data.a(i, last) + p.eta2 * data.b(i, last) + p.eta3 * z +
                   data.offset(i, 4));
}

/**
 * Joint posterior of the structural parameters and all per-subject latents in
 * the non-centered parameterization. State layout: the free unconstrained
 * parameters in canonical order, then per subject (e_a, e_b[, z]) where
 * (u_a, u_b) = noncentered_intercepts(e_a, e_b).
 */
class JointTarget {
 public:
  static constexpr Eigen::Index kBlock = 64;  // subjects per reduction block

  JointTarget(const PanelDataset& data, PriorConfig priors = {}, JointTargetOptions opt = {})
      : data_(data), priors_(priors), opt_(std::move(opt)) {
    data_.validate();
    priors_.validate();
    opt_.fixed.validate();
    for (std::size_t k = 0; k < kNumParams; ++k)
      if (opt_.free[k]) free_.push_back(k);
    fixed_u_ = unconstrain(opt_.fixed);
    per_subject_ = opt_.latent_trait ? 3 : 2;
  }

  Eigen::Index dim() const {
    return static_cast<Eigen::Index>(free_.size()) + per_subject_ * data_.n_subjects();
  }
  Eigen::Index n_free() const { return static_cast<Eigen::Index>(free_.size()); }
  const std::vector<std::size_t>& free_indices() const { return free_; }
  const PanelDataset& data() const { return data_; }
  const JointTargetOptions& options() const { return opt_; }
  Eigen::Index n_subjects() const { return data_.n_subjects(); }

  UnconstrainedParams unconstrained(const Eigen::VectorXd& q) const {
    UnconstrainedParams u = fixed_u_;
    for (std::size_t j = 0; j < free_.size(); ++j) u[free_[j]] = q[static_cast<Eigen::Index>(j)];
    return u;
  }
  StructuralParams structural(const Eigen::VectorXd& q) const { return constrain(unconstrained(q)).params; }

  double log_density_gradient(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const {
    grad.setZero(dim());
    double value = -std::numeric_limits<double>::infinity();
    try {
      value = evaluate(q, grad);
    } catch (const std::exception&) {
      return -std::numeric_limits<double>::infinity();
    }
    if (!std::isfinite(value) || !grad.allFinite()) return -std::numeric_limits<double>::infinity();
    return value;
  }

  double log_density(const Eigen::VectorXd& q) const {
    Eigen::VectorXd g;
    return log_density_gradient(q, g);
  }

  /// Latent values of subject i on the natural (centered) scale.
  LatentState latent(const Eigen::VectorXd& q, const StructuralParams& p, Eigen::Index i) const {
    const Eigen::Index base = n_free() + per_subject_ * i;
    const auto [u_a, u_b] = noncentered_intercepts(q[base], q[base + 1], p);
    return {u_a, u_b, opt_.latent_trait ? q[base + 2] : 0.0};
  }

  /**
   * Output columns: the 19 structural parameters, then (u_a, u_b, z) for every
   * subject. When the trait is present and its loadings free, each draw is
   * reported with gamma1 >= 0 by flipping (gamma1, delta1, eta3, z) together,
   * which leaves the posterior density unchanged. Without subjects there is
   * no z to label and draws are reported as sampled.
   */
  std::vector<std::string> column_names() const {
    std::vector<std::string> names(kParamNames.begin(), kParamNames.end());
    for (Eigen::Index i = 0; i < data_.n_subjects(); ++i) {
      const auto s = std::to_string(i);
      names.push_back("u_a[" + s + "]");
      names.push_back("u_b[" + s + "]");
      names.push_back("z[" + s + "]");
    }
    return names;
  }
  std::size_t n_columns() const { return kNumParams + 3 * static_cast<std::size_t>(data_.n_subjects()); }

  void write_constrained(const Eigen::VectorXd& q, std::span<double> out) const {
    const auto p0 = structural(q);
    auto p = p0;
    const bool flip = sign_aligned() && p.gamma1 < 0.0;
    if (flip) {
      p.gamma1 = -p.gamma1;
      p.delta1 = -p.delta1;
      p.eta3 = -p.eta3;
    }
    const auto arr = p.to_array();
    std::copy(arr.begin(), arr.end(), out.begin());
    for (Eigen::Index i = 0; i < data_.n_subjects(); ++i) {
      auto l = latent(q, p0, i);
      if (flip) l.z = -l.z;
      const auto c = kNumParams + 3 * static_cast<std::size_t>(i);
      out[c] = l.u_a;
      out[c + 1] = l.u_b;
      out[c + 2] = l.z;
    }
  }

  bool sign_aligned() const {
    return opt_.latent_trait && data_.n_subjects() > 0 && opt_.free[kGamma1] &&
           opt_.free[kDelta1] && opt_.free[kEta3];
  }

  /// Initial point with every coordinate uniform on (-radius, radius).
  Eigen::VectorXd random_initial_point(Rng& rng, double radius = 2.0) const {
    Eigen::VectorXd q(dim());
    for (Eigen::Index k = 0; k < q.size(); ++k) q[k] = radius * (2.0 * rng.uniform() - 1.0);
    return q;
  }

 private:
  double evaluate(const Eigen::VectorXd& q, Eigen::VectorXd& grad) const {
    if (q.size() != dim()) throw std::invalid_argument("JointTarget: state dimension mismatch");
    const auto u = unconstrained(q);
    const auto p = constrain(u).params;
    const double c = std::sqrt(1.0 - p.rho * p.rho);
    const ScaleTerms sc(p);
    const Eigen::Index n = data_.n_subjects();
    const Eigen::Index n_blocks = (n + kBlock - 1) / kBlock;
    const Eigen::Index off = n_free();

    struct Partial {
      double value = 0.0;
      std::array<double, kNumParams> g{};
    };
    std::vector<Partial> partial(static_cast<std::size_t>(n_blocks));
    auto run_block = [&](std::size_t b) {
      Partial& part = partial[b];
      std::span<double, kNumParams> g_theta(part.g.data(), kNumParams);
      const Eigen::Index lo = static_cast<Eigen::Index>(b) * kBlock;
      const Eigen::Index hi = std::min(n, lo + kBlock);
      for (Eigen::Index i = lo; i < hi; ++i) {
        const Eigen::Index base = off + per_subject_ * i;
        const double e_a = q[base], e_b = q[base + 1];
        const double z = opt_.latent_trait ? q[base + 2] : 0.0;
        const double u_a = p.tau_a * e_a;
        const double u_b = p.tau_b * (p.rho * e_a + c * e_b);
        const auto sg = subject_logdensity_grad(p, sc, i, data_, LatentState{u_a, u_b, z}, g_theta);
        part.value += sg.value + std_normal_lpdf(e_a) + std_normal_lpdf(e_b);
        g_theta[kTauA] += sg.d_ua * u_a;
        g_theta[kTauB] += sg.d_ub * u_b;
        g_theta[kRho] += sg.d_ub * p.tau_b * (e_a * c * c - p.rho * c * e_b);
        grad[base] = sg.d_ua * p.tau_a + sg.d_ub * p.tau_b * p.rho - e_a;
        grad[base + 1] = sg.d_ub * p.tau_b * c - e_b;
        if (opt_.latent_trait) {
          part.value += std_normal_lpdf(z);
          grad[base + 2] = sg.d_z - z;
        }
      }
    };
    if (opt_.jobs > 1 && n_blocks > 1)
      parallel_for(static_cast<std::size_t>(n_blocks), opt_.jobs, run_block);
    else
      for (std::size_t b = 0; b < static_cast<std::size_t>(n_blocks); ++b) run_block(b);

    double value = 0.0;
    std::array<double, kNumParams> g_theta{};
    for (const auto& part : partial) {
      value += part.value;
      for (std::size_t k = 0; k < kNumParams; ++k) g_theta[k] += part.g[k];
    }
    for (std::size_t j = 0; j < free_.size(); ++j) {
      const auto k = free_[j];
      value += param_log_prior_unconstrained(k, u[k], priors_, g_theta[k]);
      grad[static_cast<Eigen::Index>(j)] = g_theta[k];
    }
    return value;
  }

  PanelDataset data_;
  PriorConfig priors_;
  JointTargetOptions opt_;
  std::vector<std::size_t> free_;
  UnconstrainedParams fixed_u_;
  Eigen::Index per_subject_ = 3;
};

/**
 * Bayesian logistic regression with independent N(0, coef_sd^2) priors on the
 * intercept and slopes; used to obtain WAIC for the single-equation
 * comparators. The design matrix excludes the intercept column.
 */
class LogisticTarget {
 public:
  LogisticTarget(Eigen::MatrixXd X, Eigen::VectorXi y, PriorConfig priors = {})
      : X_(std::move(X)), y_(std::move(y)), priors_(priors) {
    if (X_.rows() != y_.size()) throw std::invalid_argument("LogisticTarget: row mismatch");
    priors_.validate();
  }

  Eigen::Index dim() const { return X_.cols() + 1; }
  Eigen::Index n_obs() const { return X_.rows(); }

  double linear_predictor(const Eigen::VectorXd& beta, Eigen::Index i) const {
    return beta[0] + X_.row(i).dot(beta.tail(X_.cols()));
  }

  double log_density_gradient(const Eigen::VectorXd& beta, Eigen::VectorXd& grad) const {
    grad.setZero(dim());
    const double v = 1.0 / (priors_.coef_sd * priors_.coef_sd);
    double value = 0.0;
    for (Eigen::Index k = 0; k < dim(); ++k) {
      value += normal_lpdf(beta[k], 0.0, priors_.coef_sd);
      grad[k] -= beta[k] * v;
    }
    for (Eigen::Index i = 0; i < X_.rows(); ++i) {
      const auto t = detail::bernoulli_term(y_[i], linear_predictor(beta, i));
      value += t.log_mass;
      grad[0] += t.residual;
      grad.tail(X_.cols()) += t.residual * X_.row(i).transpose();
    }
    if (!std::isfinite(value)) return -std::numeric_limits<double>::infinity();
    return value;
  }

  double pointwise_loglik(const Eigen::VectorXd& beta, Eigen::Index i) const {
    return bernoulli_logit_lpmf(y_[i], linear_predictor(beta, i));
  }
  double probability(const Eigen::VectorXd& beta, Eigen::Index i) const {
    return inv_logit(linear_predictor(beta, i));
  }

  std::size_t n_columns() const { return static_cast<std::size_t>(dim()); }
  std::vector<std::string> column_names() const {
    std::vector<std::string> names{"intercept"};
    for (Eigen::Index k = 0; k < X_.cols(); ++k) names.push_back("slope" + std::to_string(k + 1));
    return names;
  }
  void write_constrained(const Eigen::VectorXd& beta, std::span<double> out) const {
    for (Eigen::Index k = 0; k < dim(); ++k) out[static_cast<std::size_t>(k)] = beta[k];
  }
  Eigen::VectorXd random_initial_point(Rng& rng, double radius = 2.0) const {
    Eigen::VectorXd q(dim());
    for (Eigen::Index k = 0; k < q.size(); ++k) q[k] = radius * (2.0 * rng.uniform() - 1.0);
    return q;
  }

 private:
  Eigen::MatrixXd X_;
  Eigen::VectorXi y_;
  PriorConfig priors_;
};

}  // namespace hjm
