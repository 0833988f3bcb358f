#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Eigenvalues>

namespace hjm {

/// Gauss-Hermite rule for the standard normal weight (weights sum to 1).
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
  std::vector<double> log_weights;

  std::size_t size() const { return nodes.size(); }
};

namespace detail {

/// Orthonormal probabilists' Hermite polynomials p_0..p_{n} at x; returns
/// p_n(x), p_{n-1}(x) and sum_{k<n} p_k(x)^2.
struct HermiteEval {
  double pn, pn1, christoffel_sum;
};

inline HermiteEval hermite_orthonormal(int n, double x) {
  double prev = 0.0, cur = 1.0, sum = 0.0;
  for (int k = 0; k < n; ++k) {
    sum += cur * cur;
    const double next = (x * cur - std::sqrt(static_cast<double>(k)) * prev) /
                        std::sqrt(static_cast<double>(k + 1));
    prev = cur;
    cur = next;
  }
  return {cur, prev, sum};
}

}  // namespace detail

/**
 * n-point probabilists' Gauss-Hermite rule: Golub-Welsch eigen-decomposition
 * of the Jacobi matrix, then Newton polishing of each node and Christoffel
 * weights 1 / sum_k p_k(x)^2.
 */
inline QuadratureRule gh_rule(int n) {
  if (n < 1 || n > 50) throw std::invalid_argument("gh_rule: n must lie in [1, 50]");
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd sub(n > 1 ? n - 1 : 0);
  for (int k = 1; k < n; ++k) sub[k - 1] = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
  std::vector<double> x(solver.eigenvalues().data(), solver.eigenvalues().data() + n);

  QuadratureRule rule;
  rule.nodes.resize(static_cast<std::size_t>(n));
  rule.weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double xi = x[static_cast<std::size_t>(i)];
    for (int it = 0; it < 3; ++it) {
      const auto h = detail::hermite_orthonormal(n, xi);
      // p_n'(x) = sqrt(n) p_{n-1}(x)
      xi -= h.pn / (std::sqrt(static_cast<double>(n)) * h.pn1);
    }
    rule.nodes[static_cast<std::size_t>(i)] = xi;
  }
  for (int i = 0; i < n / 2; ++i) {
    const auto j = static_cast<std::size_t>(n - 1 - i);
    const double m = 0.5 * (rule.nodes[j] - rule.nodes[static_cast<std::size_t>(i)]);
    rule.nodes[static_cast<std::size_t>(i)] = -m;
    rule.nodes[j] = m;
  }
  if (n % 2 == 1) rule.nodes[static_cast<std::size_t>(n / 2)] = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    rule.weights[k] = 1.0 / detail::hermite_orthonormal(n, rule.nodes[k]).christoffel_sum;
  }
  for (int i = 0; i < n / 2; ++i) {
    const auto j = static_cast<std::size_t>(n - 1 - i);
    const double w = 0.5 * (rule.weights[j] + rule.weights[static_cast<std::size_t>(i)]);
    rule.weights[static_cast<std::size_t>(i)] = rule.weights[j] = w;
  }
  rule.log_weights.resize(rule.weights.size());
  for (std::size_t k = 0; k < rule.weights.size(); ++k)
    rule.log_weights[k] = std::log(rule.weights[k]);
  return rule;
}

}  // namespace hjm
