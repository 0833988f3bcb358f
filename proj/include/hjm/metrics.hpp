#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace hjm {

/**
 * Area under the ROC curve as the Mann-Whitney statistic: the fraction of
 * (positive, negative) pairs ranked correctly, ties counting one half.
 * Computed from average ranks in O(n log n).
 */
inline double auc(const Eigen::VectorXi& labels, const Eigen::VectorXd& scores) {
  const Eigen::Index n = labels.size();
  if (scores.size() != n) throw std::invalid_argument("auc: labels and scores differ in length");
  if (!scores.allFinite()) throw std::invalid_argument("auc: non-finite scores");
  long n_pos = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("auc: labels must be 0/1");
    n_pos += labels[i];
  }
  const long n_neg = static_cast<long>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auc: both classes must be present");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return scores[a] < scores[b]; });
  double rank_sum_pos = 0.0;
  for (std::size_t lo = 0; lo < order.size();) {
    std::size_t hi = lo;
    while (hi + 1 < order.size() && scores[order[hi + 1]] == scores[order[lo]]) ++hi;
    const double rank = 0.5 * static_cast<double>(lo + hi) + 1.0;
    for (std::size_t k = lo; k <= hi; ++k)
      if (labels[order[k]] == 1) rank_sum_pos += rank;
    lo = hi + 1;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

struct WaicResult {
  double lppd = 0.0;
  double p_waic = 0.0;
  double elpd = 0.0;      // lppd - p_waic, higher is better
  double deviance = 0.0;  // -2 elpd, lower is better
};

/**
 * WAIC from a [draws x units] pointwise log-likelihood matrix. lppd uses a
 * stable log-mean-exp per unit; p_waic sums the per-unit sample variances
 * (divisor S - 1, zero when S = 1).
 */
inline WaicResult waic(const Eigen::MatrixXd& pointwise) {
  if (pointwise.rows() < 1) throw std::invalid_argument("waic: need at least one draw");
  if (!pointwise.allFinite()) throw std::invalid_argument("waic: non-finite log-likelihood entries");
  const double S = static_cast<double>(pointwise.rows());
  WaicResult r;
  for (Eigen::Index j = 0; j < pointwise.cols(); ++j) {
    const auto col = pointwise.col(j);
    const double m = col.maxCoeff();
    r.lppd += m + std::log((col.array() - m).exp().sum() / S);
    if (pointwise.rows() > 1) {
      const double mean = col.mean();
      r.p_waic += (col.array() - mean).square().sum() / (S - 1.0);
    }
  }
  r.elpd = r.lppd - r.p_waic;
  r.deviance = -2.0 * r.elpd;
  return r;
}

/// One parameter's truth, point estimate and 95% interval in one replicate.
struct ParameterEstimate {
  std::string name;
  double truth = 0.0;
  double estimate = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

struct ReplicateOutcome {
  std::string label;
  std::vector<ParameterEstimate> parameters;
  Eigen::VectorXd true_z;
  Eigen::VectorXd posterior_mean_z;
  Eigen::VectorXi y;
  Eigen::VectorXd predicted;
  /// [draws x subjects]; may be left empty once WAIC has been computed.
  Eigen::MatrixXd pointwise_loglik;

  const ParameterEstimate* find(const std::string& name) const {
    for (const auto& p : parameters)
      if (p.name == name) return &p;
    return nullptr;
  }
};

struct RecoverySummary {
  double mean_bias = 0.0;
  double rmse = 0.0;
  double coverage = 0.0;
  long n_replicates = 0;
};

/// Bias, RMSE and interval coverage of one parameter across replicates.
inline RecoverySummary recovery_summary(const std::vector<ReplicateOutcome>& outcomes,
                                        const std::string& name) {
  if (outcomes.empty()) throw std::invalid_argument("recovery_summary: no replicates");
  RecoverySummary s;
  double sq = 0.0;
  long covered = 0;
  for (const auto& o : outcomes) {
    const auto* p = o.find(name);
    if (!p) throw std::invalid_argument("recovery_summary: unknown parameter " + name);
    if (p->lo > p->hi) throw std::invalid_argument("recovery_summary: interval with lo > hi");
    const double err = p->estimate - p->truth;
    s.mean_bias += err;
    sq += err * err;
    if (p->truth >= p->lo && p->truth <= p->hi) ++covered;
  }
  const double n = static_cast<double>(outcomes.size());
  s.mean_bias /= n;
  s.rmse = std::sqrt(sq / n);
  s.coverage = static_cast<double>(covered) / n;
  s.n_replicates = static_cast<long>(outcomes.size());
  return s;
}

/// Pearson correlation between true and posterior-mean latent traits.
inline double latent_recovery(const Eigen::VectorXd& true_z, const Eigen::VectorXd& posterior_mean_z) {
  if (true_z.size() != posterior_mean_z.size())
    throw std::invalid_argument("latent_recovery: length mismatch");
  if (true_z.size() < 3) throw std::invalid_argument("latent_recovery: need at least 3 values");
  const Eigen::ArrayXd a = true_z.array() - true_z.mean();
  const Eigen::ArrayXd b = posterior_mean_z.array() - posterior_mean_z.mean();
  const double sa = std::sqrt((a * a).sum());
  const double sb = std::sqrt((b * b).sum());
  if (!(sa > 0) || !(sb > 0)) throw std::invalid_argument("latent_recovery: zero variance");
  return std::clamp((a * b).sum() / (sa * sb), -1.0, 1.0);
}

}  // namespace hjm
