#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace hjm {

struct BfgsOptions {
  int max_iterations = 500;
  double grad_tol = 1e-5;        // max-norm of the gradient
  double rel_change_tol = 1e-9;  // |f_k - f_{k+1}| / max(1, |f_k|)
  /// Consecutive accepted iterations the relative change must stay below
  /// rel_change_tol; a single tiny step on a flat ridge is not enough.
  int rel_change_patience = 3;
  double fd_step = 1e-5;         // central-difference step, scaled by max(1, |x|)
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  bool converged = false;
  int iterations = 0;
  long evaluations = 0;
  std::vector<double> trace;  // objective at each accepted iterate
};

/**
 * BFGS minimization with central-difference gradients and a backtracking
 * Armijo line search. Non-finite objective values are treated as +inf, so
 * the search backs away from them.
 */
class NumericBfgs {
 public:
  using Objective = std::function<double(const Eigen::VectorXd&)>;

  explicit NumericBfgs(BfgsOptions opt = {}) : opt_(opt) {}

  BfgsResult minimize(const Objective& f, Eigen::VectorXd x0) const {
    BfgsResult res;
    auto eval = [&](const Eigen::VectorXd& x) {
      ++res.evaluations;
      const double v = f(x);
      return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    };
    auto gradient = [&](const Eigen::VectorXd& x) {
      Eigen::VectorXd g(x.size());
      Eigen::VectorXd xp = x;
      for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double h = opt_.fd_step * std::max(1.0, std::abs(x[k]));
        xp[k] = x[k] + h;
        const double fp = eval(xp);
        xp[k] = x[k] - h;
        const double fm = eval(xp);
        xp[k] = x[k];
        g[k] = (fp - fm) / (2.0 * h);
      }
      return g;
    };

    const Eigen::Index n = x0.size();
    Eigen::VectorXd x = std::move(x0);
    double fx = eval(x);
    res.trace.push_back(fx);
    if (n == 0) {
      res.x = x;
      res.value = fx;
      res.converged = true;
      return res;
    }
    Eigen::VectorXd g = gradient(x);
    Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(n, n);
    bool first = true;
    int small_changes = 0;

    for (int it = 0; it < opt_.max_iterations; ++it) {
      res.iterations = it;
      if (g.lpNorm<Eigen::Infinity>() <= opt_.grad_tol) {
        res.converged = true;
        break;
      }
      Eigen::VectorXd dir = -Hinv * g;
      double slope = g.dot(dir);
      if (!(slope < 0)) {
        Hinv.setIdentity();
        dir = -g;
        slope = -g.squaredNorm();
      }
      double step = 1.0;
      if (first) step = std::min(1.0, 1.0 / std::max(1e-12, g.lpNorm<Eigen::Infinity>()));
      Eigen::VectorXd x_new;
      double f_new = std::numeric_limits<double>::infinity();
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls, step *= 0.5) {
        x_new = x + step * dir;
        f_new = eval(x_new);
        if (f_new <= fx + 1e-4 * step * slope) {
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        // No decrease along the quasi-Newton direction; try once from steepest descent.
        if (!first && Hinv != Eigen::MatrixXd::Identity(n, n)) {
          Hinv.setIdentity();
          first = true;
          continue;
        }
        res.converged = g.lpNorm<Eigen::Infinity>() <= 10 * opt_.grad_tol;
        break;
      }
      const Eigen::VectorXd g_new = gradient(x_new);
      const Eigen::VectorXd s = x_new - x;
      const Eigen::VectorXd y = g_new - g;
      const double sy = s.dot(y);
      if (first && sy > 0) {
        Hinv *= sy / y.squaredNorm();
      }
      if (sy > 1e-12 * s.norm() * y.norm()) {
        const double rho = 1.0 / sy;
        const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
        Hinv = (I - rho * s * y.transpose()) * Hinv * (I - rho * y * s.transpose()) +
               rho * s * s.transpose();
      }
      first = false;
      const double change = std::abs(fx - f_new) / std::max(1.0, std::abs(fx));
      x = x_new;
      fx = f_new;
      g = g_new;
      res.trace.push_back(fx);
      small_changes = change <= opt_.rel_change_tol ? small_changes + 1 : 0;
      if (small_changes >= opt_.rel_change_patience ||
          g.lpNorm<Eigen::Infinity>() <= opt_.grad_tol) {
        res.converged = true;
        res.iterations = it + 1;
        break;
      }
      res.iterations = it + 1;
    }
    res.x = x;
    res.value = fx;
    return res;
  }

 private:
  BfgsOptions opt_;
};

}  // namespace hjm
