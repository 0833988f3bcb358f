#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hjm/logistic.hpp"
#include "hjm/metrics.hpp"
#include "hjm/mle.hpp"
#include "hjm/sampler.hpp"
#include "hjm/targets.hpp"

namespace hjm {

enum class ModelKind { full, baseline, time_averaged, glmm_no_latent };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::full: return "full";
    case ModelKind::baseline: return "baseline";
    case ModelKind::time_averaged: return "time_averaged";
    case ModelKind::glmm_no_latent: return "glmm_no_latent";
  }
  return "unknown";
}

inline constexpr std::array<ModelKind, 3> kComparatorKinds = {
    ModelKind::baseline, ModelKind::time_averaged, ModelKind::glmm_no_latent};

struct ComparatorFit {
  ModelKind kind = ModelKind::baseline;
  std::vector<std::string> names;
  Eigen::VectorXd estimates;
  Eigen::VectorXd standard_errors;
  Eigen::VectorXd interval_lo;
  Eigen::VectorXd interval_hi;
  /// P(Y_i = 1) for every subject, in subject order.
  Eigen::VectorXd predicted;
  double max_loglik = 0.0;
  double aic = 0.0;
  double bic = 0.0;
  int n_params = 0;
  bool converged = false;
  bool separation = false;
  std::string warning;
};

/// (A_i1, B_i1) for every subject.
inline Eigen::MatrixXd baseline_design(const PanelDataset& data) {
  Eigen::MatrixXd X(data.n_subjects(), 2);
  X.col(0) = data.a.col(0).cast<double>();
  X.col(1) = data.b.col(0);
  return X;
}

/// Per-subject means of A and B over all observed times.
inline Eigen::MatrixXd time_averaged_design(const PanelDataset& data) {
  Eigen::MatrixXd X(data.n_subjects(), 2);
  X.col(0) = data.a.cast<double>().rowwise().mean();
  X.col(1) = data.b.rowwise().mean();
  return X;
}

namespace detail {

inline ComparatorFit logistic_comparator(ModelKind kind, const Eigen::MatrixXd& X,
                                         const PanelDataset& data) {
  data.validate();
  if (data.n_subjects() < 10) throw std::invalid_argument("comparator fit: at least 10 subjects required");
  const auto lf = fit_logistic(X, data.y);
  ComparatorFit f;
  f.kind = kind;
  f.names = {"intercept", "a", "b"};
  f.estimates = lf.coef;
  f.standard_errors = lf.standard_errors;
  f.interval_lo = lf.coef - kZ975 * lf.standard_errors;
  f.interval_hi = lf.coef + kZ975 * lf.standard_errors;
  f.predicted.resize(data.n_subjects());
  for (Eigen::Index i = 0; i < data.n_subjects(); ++i)
    f.predicted[i] = inv_logit(lf.coef[0] + X.row(i).dot(lf.coef.tail(2)));
  f.max_loglik = lf.loglik;
  f.n_params = static_cast<int>(lf.coef.size());
  f.aic = aic_from(f.max_loglik, f.n_params);
  f.bic = bic_from(f.max_loglik, f.n_params, static_cast<long>(data.n_subjects()));
  f.converged = lf.converged;
  f.separation = lf.separation;
  f.warning = lf.warning;
  return f;
}

}  // namespace detail

/// Logistic regression of Y on the initial covariate values.
inline ComparatorFit fit_baseline(const PanelDataset& data) {
  return detail::logistic_comparator(ModelKind::baseline, baseline_design(data), data);
}

/// Logistic regression of Y on the time-averaged covariates.
inline ComparatorFit fit_time_averaged(const PanelDataset& data) {
  return detail::logistic_comparator(ModelKind::time_averaged, time_averaged_design(data), data);
}

/// Parameters the GLMM comparator removes from the full model (pinned at 0).
inline constexpr std::array<std::size_t, 5> kGlmmPinned = {kAlpha2, kBeta2, kGamma1, kDelta1, kEta3};

/// Options restricting fit_mle to the GLMM without feedback or latent trait.
inline MleOptions glmm_mle_options(int n_nodes = 9, std::size_t jobs = 1) {
  MleOptions o;
  o.n_nodes = n_nodes;
  o.jobs = jobs;
  o.latent_trait = false;
  for (auto k : kGlmmPinned) o.free[k] = false;
  return o;
}

/// The full-model parameter vector with the GLMM's omitted terms set to 0.
inline StructuralParams pin_glmm(StructuralParams p) {
  p.alpha2 = p.beta2 = 0.0;
  p.gamma1 = p.delta1 = p.eta3 = 0.0;
  return p;
}

/// Restricted joint target of the GLMM comparator for Bayesian fitting.
inline JointTargetOptions glmm_target_options(std::size_t jobs = 1) {
  JointTargetOptions o;
  o.latent_trait = false;
  o.fixed = pin_glmm(StructuralParams{});
  for (auto k : kGlmmPinned) o.free[k] = false;
  o.jobs = jobs;
  return o;
}

/**
 * The three-phase model with alpha2 = beta2 = 0 and no latent trait, random
 * intercepts retained, fitted by the same quadrature machinery restricted to
 * the (u_a, u_b) integral. Predicted outcome probabilities use the observed
 * A_T, B_T.
 */
inline ComparatorFit fit_glmm_no_latent(const PanelDataset& data, int n_nodes = 9, std::size_t jobs = 1) {
  const auto fit = fit_mle(data, pin_glmm(StructuralParams{}), glmm_mle_options(n_nodes, jobs));
  ComparatorFit f;
  f.kind = ModelKind::glmm_no_latent;
  const auto est = fit.estimates.to_array();
  f.names.assign(kParamNames.begin(), kParamNames.end());
  f.estimates = Eigen::Map<const Eigen::VectorXd>(est.data(), kNumParams);
  f.standard_errors = Eigen::Map<const Eigen::VectorXd>(fit.standard_errors.data(), kNumParams);
  f.interval_lo = Eigen::Map<const Eigen::VectorXd>(fit.interval_lo.data(), kNumParams);
  f.interval_hi = Eigen::Map<const Eigen::VectorXd>(fit.interval_hi.data(), kNumParams);
  f.predicted.resize(data.n_subjects());
  for (Eigen::Index i = 0; i < data.n_subjects(); ++i)
    f.predicted[i] = outcome_probability(fit.estimates, i, data, 0.0);
  f.max_loglik = fit.max_loglik;
  f.n_params = fit.n_free;
  f.aic = fit.aic;
  f.bic = fit.bic;
  f.converged = fit.converged;
  if (!fit.converged) f.warning = "fit_glmm_no_latent: optimizer did not converge";
  return f;
}

inline ComparatorFit fit_comparator(ModelKind kind, const PanelDataset& data, int n_nodes = 9,
                                    std::size_t jobs = 1) {
  switch (kind) {
    case ModelKind::baseline: return fit_baseline(data);
    case ModelKind::time_averaged: return fit_time_averaged(data);
    case ModelKind::glmm_no_latent: return fit_glmm_no_latent(data, n_nodes, jobs);
    case ModelKind::full: break;
  }
  throw std::invalid_argument("fit_comparator: the full model is not a comparator");
}

// ---------------------------------------------------------------------------
// Posterior pointwise outcome log-likelihoods

/**
 * [draws x subjects] matrix of log p(Y_i | theta, z_i, A_iT, B_iT) over all
 * pooled draws of a full- or GLMM-model posterior (z = 0 when the samples
 * carry no trait loadings).
 */
inline Eigen::MatrixXd outcome_pointwise(const PosteriorSamples& s, const PanelDataset& data) {
  const Eigen::Index n = data.n_subjects();
  Eigen::MatrixXd out(s.n_draws() * s.n_chains(), n);
  Eigen::Index row = 0;
  for (const auto& chain : s.draws) {
    for (Eigen::Index d = 0; d < chain.rows(); ++d, ++row) {
      std::array<double, kNumParams> v{};
      for (std::size_t k = 0; k < kNumParams; ++k) v[k] = chain(d, static_cast<Eigen::Index>(k));
      const auto p = StructuralParams::from_array(v);
      for (Eigen::Index i = 0; i < n; ++i)
        out(row, i) = outcome_loglik(p, i, data, chain(d, static_cast<Eigen::Index>(kNumParams) + 3 * i + 2));
    }
  }
  return out;
}

/// Posterior-mean predicted outcome probability per subject.
inline Eigen::VectorXd outcome_predicted(const PosteriorSamples& s, const PanelDataset& data) {
  const Eigen::Index n = data.n_subjects();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  double count = 0.0;
  for (const auto& chain : s.draws) {
    for (Eigen::Index d = 0; d < chain.rows(); ++d) {
      std::array<double, kNumParams> v{};
      for (std::size_t k = 0; k < kNumParams; ++k) v[k] = chain(d, static_cast<Eigen::Index>(k));
      const auto p = StructuralParams::from_array(v);
      for (Eigen::Index i = 0; i < n; ++i)
        out[i] += outcome_probability(p, i, data, chain(d, static_cast<Eigen::Index>(kNumParams) + 3 * i + 2));
      count += 1.0;
    }
  }
  return out / count;
}

/// Pointwise log-likelihood of a logistic comparator's posterior.
inline Eigen::MatrixXd logistic_pointwise(const PosteriorSamples& s, const LogisticTarget& target) {
  Eigen::MatrixXd out(s.n_draws() * s.n_chains(), target.n_obs());
  Eigen::Index row = 0;
  for (const auto& chain : s.draws)
    for (Eigen::Index d = 0; d < chain.rows(); ++d, ++row) {
      const Eigen::VectorXd beta = chain.row(d).transpose();
      for (Eigen::Index i = 0; i < target.n_obs(); ++i) out(row, i) = target.pointwise_loglik(beta, i);
    }
  return out;
}

/**
 * WAIC of a comparator from a posterior obtained by running the sampler on
 * the restricted model with the same priors and chain settings.
 */
inline WaicResult comparator_waic(ModelKind kind, const PanelDataset& data, const PriorConfig& priors,
                                  const ChainConfig& cfg, std::size_t eval_jobs = 1) {
  switch (kind) {
    case ModelKind::baseline:
    case ModelKind::time_averaged: {
      const LogisticTarget target(kind == ModelKind::baseline ? baseline_design(data)
                                                              : time_averaged_design(data),
                                  data.y, priors);
      return waic(logistic_pointwise(run_chains(target, cfg), target));
    }
    case ModelKind::glmm_no_latent: {
      const JointTarget target(data, priors, glmm_target_options(eval_jobs));
      return waic(outcome_pointwise(run_chains(target, cfg), data));
    }
    case ModelKind::full: break;
  }
  throw std::invalid_argument("comparator_waic: the full model is not a comparator");
}

}  // namespace hjm
