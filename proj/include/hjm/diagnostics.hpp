#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <Eigen/Dense>

namespace hjm {

namespace detail {

inline void check_chains(const Eigen::MatrixXd& draws, const char* who) {
  if (draws.cols() < 2 || draws.rows() < 4)
    throw std::invalid_argument(std::string(who) + ": need at least 2 chains of 4 draws");
  if (!draws.allFinite()) throw std::invalid_argument(std::string(who) + ": non-finite draws");
}

inline bool is_constant(const Eigen::MatrixXd& draws) {
  return (draws.array() == draws(0, 0)).all();
}

/// Splits each chain into halves (dropping the middle draw when odd).
inline Eigen::MatrixXd split_chains(const Eigen::MatrixXd& draws) {
  const Eigen::Index half = draws.rows() / 2;
  const Eigen::Index offset = draws.rows() - half;
  Eigen::MatrixXd out(half, 2 * draws.cols());
  for (Eigen::Index c = 0; c < draws.cols(); ++c) {
    out.col(2 * c) = draws.col(c).head(half);
    out.col(2 * c + 1) = draws.col(c).segment(offset, half);
  }
  return out;
}

/// Normal scores of average ranks: Phi^{-1}((r - 3/8) / (S + 1/4)).
inline Eigen::MatrixXd rank_normalize(const Eigen::MatrixXd& draws) {
  const Eigen::Index S = draws.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(S));
  std::iota(order.begin(), order.end(), 0);
  const double* v = draws.data();
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return v[a] < v[b]; });
  Eigen::MatrixXd out(draws.rows(), draws.cols());
  boost::math::normal_distribution<double> nd;
  for (Eigen::Index lo = 0; lo < S;) {
    Eigen::Index hi = lo;
    while (hi + 1 < S && v[order[static_cast<std::size_t>(hi + 1)]] == v[order[static_cast<std::size_t>(lo)]]) ++hi;
    const double rank = 0.5 * static_cast<double>(lo + hi) + 1.0;
    const double score = boost::math::quantile(nd, (rank - 0.375) / (static_cast<double>(S) + 0.25));
    for (Eigen::Index k = lo; k <= hi; ++k) out.data()[order[static_cast<std::size_t>(k)]] = score;
    lo = hi + 1;
  }
  return out;
}

/// Classic potential scale reduction of the columns of `draws`.
inline double basic_rhat(const Eigen::MatrixXd& draws) {
  const double n = static_cast<double>(draws.rows());
  const Eigen::VectorXd means = draws.colwise().mean();
  double w = 0.0;
  for (Eigen::Index c = 0; c < draws.cols(); ++c)
    w += (draws.col(c).array() - means[c]).square().sum() / (n - 1.0);
  w /= static_cast<double>(draws.cols());
  const double b_over_n = (means.array() - means.mean()).square().sum() / (static_cast<double>(draws.cols()) - 1.0);
  const double var_plus = (n - 1.0) / n * w + b_over_n;
  return std::sqrt(var_plus / w);
}

inline double median(Eigen::VectorXd v) {
  std::sort(v.data(), v.data() + v.size());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Effective sample size of the columns (chains) of `draws` by Geyer's initial
/// monotone sequence on the multi-chain autocorrelation estimate.
inline double ess_raw(const Eigen::MatrixXd& draws) {
  const Eigen::Index n = draws.rows();
  const Eigen::Index m = draws.cols();
  Eigen::MatrixXd centered = draws;
  Eigen::VectorXd chain_var(m);
  for (Eigen::Index c = 0; c < m; ++c) {
    centered.col(c).array() -= draws.col(c).mean();
    chain_var[c] = centered.col(c).squaredNorm() / static_cast<double>(n - 1);
  }
  // Biased autocovariance at lag s, averaged over chains.
  auto mean_acov = [&](Eigen::Index s) {
    double total = 0.0;
    for (Eigen::Index c = 0; c < m; ++c)
      total += centered.col(c).head(n - s).dot(centered.col(c).tail(n - s)) / static_cast<double>(n);
    return total / static_cast<double>(m);
  };
  const double mean_var = chain_var.mean();
  double var_plus = mean_var * static_cast<double>(n - 1) / static_cast<double>(n);
  if (m > 1) {
    const Eigen::VectorXd means = draws.colwise().mean();
    var_plus += (means.array() - means.mean()).square().sum() / static_cast<double>(m - 1);
  }
  Eigen::VectorXd rho = Eigen::VectorXd::Zero(n + 2);
  double rho_even = 1.0;
  rho[0] = rho_even;
  double rho_odd = 1.0 - (mean_var - mean_acov(1)) / var_plus;
  rho[1] = rho_odd;
  Eigen::Index s = 1;
  while (s < n - 4 && rho_even + rho_odd > 0) {
    rho_even = 1.0 - (mean_var - mean_acov(s + 1)) / var_plus;
    rho_odd = 1.0 - (mean_var - mean_acov(s + 2)) / var_plus;
    if (rho_even + rho_odd >= 0) {
      rho[s + 1] = rho_even;
      rho[s + 2] = rho_odd;
    }
    s += 2;
  }
  const Eigen::Index max_s = s;
  if (rho_even > 0) rho[max_s + 1] = rho_even;
  for (Eigen::Index t = 1; t <= max_s - 3; t += 2) {
    if (rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]) {
      rho[t + 1] = 0.5 * (rho[t - 1] + rho[t]);
      rho[t + 2] = rho[t + 1];
    }
  }
  const double total = static_cast<double>(n * m);
  const double tau = -1.0 + 2.0 * rho.head(max_s).sum() + rho[max_s + 1];
  return std::min(total / tau, total * std::log10(total));
}

inline void warn(std::string* warning, const char* msg) {
  if (warning) *warning = msg;
}

}  // namespace detail

/**
 * Rank-normalized split R-hat: the larger of the bulk value (rank-normalized
 * split chains) and the tail value (the same applied to |x - median|).
 * `draws` is [iterations x chains]. Constant input returns NaN and sets
 * `warning` when given.
 */
inline double rhat(const Eigen::MatrixXd& draws, std::string* warning = nullptr) {
  detail::check_chains(draws, "rhat");
  if (detail::is_constant(draws)) {
    detail::warn(warning, "rhat: constant draws, R-hat undefined");
    return std::numeric_limits<double>::quiet_NaN();
  }
  const Eigen::MatrixXd split = detail::split_chains(draws);
  const double bulk = detail::basic_rhat(detail::rank_normalize(split));
  const double med = detail::median(Eigen::Map<const Eigen::VectorXd>(draws.data(), draws.size()));
  const Eigen::MatrixXd folded = (split.array() - med).abs().matrix();
  const double tail = detail::basic_rhat(detail::rank_normalize(folded));
  return std::max(bulk, tail);
}

/// Bulk effective sample size: Geyer's estimator on rank-normalized split chains.
inline double ess(const Eigen::MatrixXd& draws, std::string* warning = nullptr) {
  detail::check_chains(draws, "ess");
  if (detail::is_constant(draws)) {
    detail::warn(warning, "ess: constant draws, ESS undefined");
    return std::numeric_limits<double>::quiet_NaN();
  }
  return detail::ess_raw(detail::rank_normalize(detail::split_chains(draws)));
}

/// Monte Carlo standard error of the posterior mean.
inline double mcse_mean(const Eigen::MatrixXd& draws) {
  detail::check_chains(draws, "mcse_mean");
  const double n = static_cast<double>(draws.size());
  const double mean = draws.mean();
  const double var = (draws.array() - mean).square().sum() / (n - 1.0);
  return std::sqrt(var / detail::ess_raw(detail::split_chains(draws)));
}

/// Monte Carlo standard error of the posterior standard deviation, from the
/// effective sample size of the squared deviations and the delta method.
inline double mcse_sd(const Eigen::MatrixXd& draws) {
  detail::check_chains(draws, "mcse_sd");
  const double mean = draws.mean();
  const Eigen::MatrixXd sq = (draws.array() - mean).square().matrix();
  const double n = static_cast<double>(draws.size());
  const double var = sq.sum() / (n - 1.0);
  const double sq_mean = sq.mean();
  const double var_sq = (sq.array() - sq_mean).square().sum() / (n - 1.0);
  const double se_var = std::sqrt(var_sq / detail::ess_raw(detail::split_chains(sq)));
  return se_var / (2.0 * std::sqrt(var));
}

/// Empirical quantile with linear interpolation between order statistics
/// (type 7 in the Hyndman-Fan classification).
inline double quantile(Eigen::VectorXd v, double p) {
  if (v.size() == 0) throw std::invalid_argument("quantile: empty input");
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("quantile: p outside [0, 1]");
  std::sort(v.data(), v.data() + v.size());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<Eigen::Index>(std::floor(h));
  const auto hi = std::min<Eigen::Index>(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

/**
 * Monte Carlo standard error of the p-quantile: the indicator 1{x <= q_p}
 * has standard error sqrt(p(1-p)/ESS) on the probability scale, which is
 * mapped back through the empirical quantile function.
 */
inline double mcse_quantile(const Eigen::MatrixXd& draws, double p) {
  detail::check_chains(draws, "mcse_quantile");
  const Eigen::VectorXd pooled = Eigen::Map<const Eigen::VectorXd>(draws.data(), draws.size());
  const double q = quantile(pooled, p);
  const Eigen::MatrixXd ind = (draws.array() <= q).cast<double>().matrix();
  if (detail::is_constant(ind)) return std::numeric_limits<double>::quiet_NaN();
  const double n_eff = detail::ess_raw(detail::split_chains(ind));
  const double se_p = std::sqrt(p * (1.0 - p) / n_eff);
  const double lo = quantile(pooled, std::max(0.0, p - se_p));
  const double hi = quantile(pooled, std::min(1.0, p + se_p));
  return 0.5 * (hi - lo);
}

}  // namespace hjm
