#pragma once

#include <cmath>
#include <concepts>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "hjm/rng.hpp"

namespace hjm {

/**
 * A differentiable log density on R^d. log_density_gradient fills grad and
 * returns the log density, or -infinity when the point is not evaluable
 * (the sampler then treats the step as divergent).
 */
template <class T>
concept DifferentiableTarget = requires(const T& t, const Eigen::VectorXd& q, Eigen::VectorXd& g) {
  { t.dim() } -> std::convertible_to<Eigen::Index>;
  { t.log_density_gradient(q, g) } -> std::convertible_to<double>;
};

/// Position, momentum, gradient and log density of one phase-space point.
struct PhasePoint {
  Eigen::VectorXd q;
  Eigen::VectorXd p;
  Eigen::VectorXd grad;
  double log_density = 0.0;
};

/**
 * Leapfrog integration with diagonal inverse metric `inv_metric` (empty means
 * unit mass). Returns false as soon as the log density stops being finite.
 */
template <DifferentiableTarget Target>
bool leapfrog(const Target& target, PhasePoint& z, double step_size, int n_steps,
              const Eigen::VectorXd& inv_metric = Eigen::VectorXd()) {
  const bool unit = inv_metric.size() == 0;
  for (int s = 0; s < n_steps; ++s) {
    z.p.noalias() += 0.5 * step_size * z.grad;
    if (unit)
      z.q.noalias() += step_size * z.p;
    else
      z.q.array() += step_size * inv_metric.array() * z.p.array();
    z.log_density = target.log_density_gradient(z.q, z.grad);
    if (!std::isfinite(z.log_density)) return false;
    z.p.noalias() += 0.5 * step_size * z.grad;
  }
  return true;
}

/// Convenience overload matching the integrator's textbook signature.
template <DifferentiableTarget Target>
PhasePoint leapfrog(const Target& target, const Eigen::VectorXd& q, const Eigen::VectorXd& p,
                    double step_size, int n_steps,
                    const Eigen::VectorXd& inv_metric = Eigen::VectorXd()) {
  PhasePoint z{q, p, Eigen::VectorXd::Zero(q.size()), 0.0};
  z.log_density = target.log_density_gradient(z.q, z.grad);
  leapfrog(target, z, step_size, n_steps, inv_metric);
  return z;
}

struct NutsTuning {
  double step_size = 1.0;
  Eigen::VectorXd inv_metric;  // diagonal; must match the target dimension
  int max_tree_depth = 10;
  double max_energy_error = 1000.0;
};

struct TransitionInfo {
  int tree_depth = 0;
  int n_leapfrog = 0;
  bool divergent = false;
  bool max_depth_reached = false;
  double accept_stat = 0.0;
  double energy = 0.0;
};

namespace detail {

inline double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/// Multinomial no-U-turn sampler with the generalized turning criterion
/// checked across and between merged subtrees. Work vectors are kept per
/// tree depth and reused across transitions.
template <DifferentiableTarget Target>
class NutsKernel {
 public:
  NutsKernel(const Target& target, const NutsTuning& tuning, Rng& rng)
      : target_(target), tuning_(tuning), rng_(rng) {}

  double kinetic(const Eigen::VectorXd& p) const {
    return 0.5 * (p.array().square() * tuning_.inv_metric.array()).sum();
  }
  double hamiltonian(const PhasePoint& z) const {
    if (!std::isfinite(z.log_density)) return std::numeric_limits<double>::infinity();
    return -z.log_density + kinetic(z.p);
  }
  void sample_momentum(PhasePoint& z) {
    z.p.resize(z.q.size());
    for (Eigen::Index k = 0; k < z.q.size(); ++k)
      z.p[k] = rng_.normal() / std::sqrt(tuning_.inv_metric[k]);
  }

  /// One transition from `current` (gradient and log density already set).
  TransitionInfo transition(PhasePoint& current) {
    TransitionInfo info;
    const auto d = current.q.size();
    prepare(d);
    sample_momentum(current);
    z_ = current;
    const double H0 = hamiltonian(z_);

    z_fwd_ = z_;
    z_bck_ = z_;
    z_sample_ = z_;
    z_propose_ = z_;
    p_fwd_fwd_ = z_.p;
    p_sharp_fwd_fwd_ = tuning_.inv_metric.cwiseProduct(z_.p);
    p_fwd_bck_ = z_.p;
    p_sharp_fwd_bck_ = p_sharp_fwd_fwd_;
    p_bck_fwd_ = z_.p;
    p_sharp_bck_fwd_ = p_sharp_fwd_fwd_;
    p_bck_bck_ = z_.p;
    p_sharp_bck_bck_ = p_sharp_fwd_fwd_;
    rho_ = z_.p;

    double log_sum_weight = 0.0;
    n_leapfrog_ = 0;
    sum_metro_prob_ = 0.0;
    divergent_ = false;
    int depth = 0;

    while (depth < tuning_.max_tree_depth) {
      rho_fwd_.setZero(d);
      rho_bck_.setZero(d);
      bool valid = false;
      double log_sum_weight_subtree = -std::numeric_limits<double>::infinity();
      if (rng_.uniform() > 0.5) {
        z_ = z_fwd_;
        rho_bck_ = rho_;
        p_bck_fwd_ = p_fwd_bck_;
        p_sharp_bck_fwd_ = p_sharp_fwd_bck_;
        valid = build_tree(depth, z_propose_, p_sharp_fwd_bck_, p_sharp_fwd_fwd_, rho_fwd_,
                           p_fwd_bck_, p_fwd_fwd_, H0, 1.0, log_sum_weight_subtree);
        z_fwd_ = z_;
      } else {
        z_ = z_bck_;
        rho_fwd_ = rho_;
        p_fwd_bck_ = p_bck_fwd_;
        p_sharp_fwd_bck_ = p_sharp_bck_fwd_;
        valid = build_tree(depth, z_propose_, p_sharp_bck_fwd_, p_sharp_bck_bck_, rho_bck_,
                           p_bck_fwd_, p_bck_bck_, H0, -1.0, log_sum_weight_subtree);
        z_bck_ = z_;
      }
      if (!valid) break;
      ++depth;

      if (log_sum_weight_subtree > log_sum_weight) {
        z_sample_ = z_propose_;
      } else if (rng_.uniform() < std::exp(log_sum_weight_subtree - log_sum_weight)) {
        z_sample_ = z_propose_;
      }
      log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);

      rho_ = rho_bck_ + rho_fwd_;
      // Criterion over the merged trajectory, then across the junction using
      // the extended sums rho_bck + p_fwd_bck and rho_fwd + p_bck_fwd.
      bool persist = criterion(p_sharp_bck_bck_, p_sharp_fwd_fwd_, rho_);
      persist = persist && criterion_ext(p_sharp_bck_bck_, p_sharp_fwd_bck_, rho_bck_, p_fwd_bck_);
      persist = persist && criterion_ext(p_sharp_bck_fwd_, p_sharp_fwd_fwd_, rho_fwd_, p_bck_fwd_);
      if (!persist) break;
    }

    info.tree_depth = depth;
    info.n_leapfrog = n_leapfrog_;
    info.divergent = divergent_;
    info.max_depth_reached = depth >= tuning_.max_tree_depth;
    info.accept_stat = n_leapfrog_ > 0 ? sum_metro_prob_ / n_leapfrog_ : 0.0;
    current = z_sample_;
    info.energy = hamiltonian(current);
    return info;
  }

 private:
  struct Workspace {
    Eigen::VectorXd p_init_end, p_sharp_init_end, rho_init;
    Eigen::VectorXd p_final_beg, p_sharp_final_beg, rho_final;
    PhasePoint z_propose_final;
  };

  void prepare(Eigen::Index d) {
    const auto levels = static_cast<std::size_t>(std::max(1, tuning_.max_tree_depth));
    if (ws_.size() == levels && dim_ == d) return;
    dim_ = d;
    ws_.assign(levels, Workspace{});
    for (auto& w : ws_)
      for (auto* v : {&w.p_init_end, &w.p_sharp_init_end, &w.rho_init, &w.p_final_beg,
                      &w.p_sharp_final_beg, &w.rho_final})
        v->resize(d);
  }

  static bool criterion(const Eigen::VectorXd& p_sharp_minus, const Eigen::VectorXd& p_sharp_plus,
                        const Eigen::VectorXd& rho) {
    return p_sharp_plus.dot(rho) > 0 && p_sharp_minus.dot(rho) > 0;
  }
  /// criterion(minus, plus, rho + extra) without forming the sum.
  static bool criterion_ext(const Eigen::VectorXd& p_sharp_minus, const Eigen::VectorXd& p_sharp_plus,
                            const Eigen::VectorXd& rho, const Eigen::VectorXd& extra) {
    return p_sharp_plus.dot(rho) + p_sharp_plus.dot(extra) > 0 &&
           p_sharp_minus.dot(rho) + p_sharp_minus.dot(extra) > 0;
  }

  bool build_tree(int depth, PhasePoint& z_propose, Eigen::VectorXd& p_sharp_beg,
                  Eigen::VectorXd& p_sharp_end, Eigen::VectorXd& rho, Eigen::VectorXd& p_beg,
                  Eigen::VectorXd& p_end, double H0, double sign, double& log_sum_weight) {
    if (depth == 0) {
      const bool finite = leapfrog(target_, z_, sign * tuning_.step_size, 1, tuning_.inv_metric);
      ++n_leapfrog_;
      double h = finite ? hamiltonian(z_) : std::numeric_limits<double>::infinity();
      if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
      if (h - H0 > tuning_.max_energy_error) divergent_ = true;
      log_sum_weight = log_sum_exp(log_sum_weight, H0 - h);
      sum_metro_prob_ += H0 - h > 0 ? 1.0 : std::exp(H0 - h);
      z_propose = z_;
      p_sharp_beg = tuning_.inv_metric.cwiseProduct(z_.p);
      p_sharp_end = p_sharp_beg;
      rho += z_.p;
      p_beg = z_.p;
      p_end = p_beg;
      return !divergent_;
    }

    Workspace& w = ws_[static_cast<std::size_t>(depth - 1)];
    double log_sum_weight_init = -std::numeric_limits<double>::infinity();
    w.rho_init.setZero();
    if (!build_tree(depth - 1, z_propose, p_sharp_beg, w.p_sharp_init_end, w.rho_init, p_beg,
                    w.p_init_end, H0, sign, log_sum_weight_init))
      return false;

    w.z_propose_final = z_;
    double log_sum_weight_final = -std::numeric_limits<double>::infinity();
    w.rho_final.setZero();
    if (!build_tree(depth - 1, w.z_propose_final, w.p_sharp_final_beg, p_sharp_end, w.rho_final,
                    w.p_final_beg, p_end, H0, sign, log_sum_weight_final))
      return false;

    const double log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
    log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);
    if (log_sum_weight_final > log_sum_weight_subtree) {
      z_propose = w.z_propose_final;
    } else if (rng_.uniform() < std::exp(log_sum_weight_final - log_sum_weight_subtree)) {
      z_propose = w.z_propose_final;
    }

    // rho_subtree = rho_init + rho_final; stored in rho_init.
    w.rho_init += w.rho_final;
    rho += w.rho_init;
    bool persist = criterion(p_sharp_beg, p_sharp_end, w.rho_init);
    if (persist) {
      w.rho_init -= w.rho_final;
      persist = criterion_ext(p_sharp_beg, w.p_sharp_final_beg, w.rho_init, w.p_final_beg) &&
                criterion_ext(w.p_sharp_init_end, p_sharp_end, w.rho_final, w.p_init_end);
    }
    return persist;
  }

  const Target& target_;
  const NutsTuning& tuning_;
  Rng& rng_;
  PhasePoint z_, z_fwd_, z_bck_, z_sample_, z_propose_;
  Eigen::VectorXd p_fwd_fwd_, p_sharp_fwd_fwd_, p_fwd_bck_, p_sharp_fwd_bck_;
  Eigen::VectorXd p_bck_fwd_, p_sharp_bck_fwd_, p_bck_bck_, p_sharp_bck_bck_;
  Eigen::VectorXd rho_, rho_fwd_, rho_bck_;
  std::vector<Workspace> ws_;
  Eigen::Index dim_ = -1;
  int n_leapfrog_ = 0;
  double sum_metro_prob_ = 0.0;
  bool divergent_ = false;
};

}  // namespace detail

/// One NUTS update of `current` in place.
template <DifferentiableTarget Target>
TransitionInfo nuts_transition(const Target& target, PhasePoint& current, Rng& rng,
                               const NutsTuning& tuning) {
  if (tuning.inv_metric.size() != current.q.size())
    throw std::invalid_argument("nuts_transition: metric dimension mismatch");
  detail::NutsKernel<Target> kernel(target, tuning, rng);
  return kernel.transition(current);
}

/**
 * Reusable NUTS transition operator bound to a target, a tuning object (read
 * at every transition, so step-size and metric updates take effect) and a
 * random stream.
 */
template <DifferentiableTarget Target>
class NutsSampler {
 public:
  NutsSampler(const Target& target, const NutsTuning& tuning, Rng& rng)
      : tuning_(tuning), kernel_(target, tuning, rng) {}
  TransitionInfo transition(PhasePoint& current) {
    if (tuning_.inv_metric.size() != current.q.size())
      throw std::invalid_argument("nuts_transition: metric dimension mismatch");
    return kernel_.transition(current);
  }

 private:
  const NutsTuning& tuning_;
  detail::NutsKernel<Target> kernel_;
};

/// Dual-averaging step-size adaptation (Nesterov's scheme as used by NUTS).
class DualAveraging {
 public:
  explicit DualAveraging(double target_accept, double gamma = 0.05, double t0 = 10.0,
                         double kappa = 0.75)
      : delta_(target_accept), gamma_(gamma), t0_(t0), kappa_(kappa) {}

  void set_mu(double mu) { mu_ = mu; }
  void restart() {
    counter_ = 0;
    s_bar_ = 0.0;
    x_bar_ = 0.0;
  }
  /// Returns the next step size given the latest acceptance statistic.
  double learn(double accept_stat) {
    ++counter_;
    accept_stat = std::min(1.0, accept_stat);
    const double eta = 1.0 / (counter_ + t0_);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept_stat);
    const double x = mu_ - s_bar_ * std::sqrt(static_cast<double>(counter_)) / gamma_;
    const double x_eta = std::pow(static_cast<double>(counter_), -kappa_);
    x_bar_ = (1.0 - x_eta) * x_bar_ + x_eta * x;
    return std::exp(x);
  }
  double final_step_size() const { return std::exp(x_bar_); }

 private:
  double delta_, gamma_, t0_, kappa_;
  double mu_ = std::log(10.0);
  long counter_ = 0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
};

/**
 * Warmup schedule for the diagonal metric: an initial fast interval, a series
 * of doubling slow windows in which draws feed the variance estimate, and a
 * terminal fast interval. Mirrors the reference tool's windowed adaptation.
 */
class WindowedAdaptation {
 public:
  WindowedAdaptation(int num_warmup, int init_buffer = 75, int term_buffer = 50,
                     int base_window = 25)
      : num_warmup_(num_warmup), init_buffer_(init_buffer), term_buffer_(term_buffer),
        base_window_(base_window) {
    if (num_warmup < 20) {
      // Too short for metric adaptation; only the step size adapts.
      init_buffer_ = num_warmup;
      term_buffer_ = 0;
      base_window_ = 0;
      metric_enabled_ = false;
    } else if (init_buffer_ + base_window_ + term_buffer_ > num_warmup) {
      init_buffer_ = static_cast<int>(0.15 * num_warmup);
      term_buffer_ = static_cast<int>(0.1 * num_warmup);
      base_window_ = num_warmup - (init_buffer_ + term_buffer_);
    }
    restart();
  }

  void restart() {
    counter_ = 0;
    window_size_ = base_window_;
    next_window_ = init_buffer_ + window_size_ - 1;
  }

  bool in_window() const {
    return metric_enabled_ && counter_ >= init_buffer_ && counter_ < num_warmup_ - term_buffer_ &&
           counter_ != num_warmup_;
  }
  bool window_end() const {
    return metric_enabled_ && counter_ == next_window_ && counter_ != num_warmup_;
  }
  void compute_next_window() {
    if (next_window_ == num_warmup_ - term_buffer_ - 1) return;
    window_size_ *= 2;
    next_window_ = counter_ + window_size_;
    if (next_window_ != num_warmup_ - term_buffer_ - 1) {
      const int boundary = next_window_ + 2 * window_size_;
      if (boundary >= num_warmup_ - term_buffer_) next_window_ = num_warmup_ - term_buffer_ - 1;
    }
  }
  void advance() { ++counter_; }
  int counter() const { return counter_; }

 private:
  int num_warmup_, init_buffer_, term_buffer_, base_window_;
  bool metric_enabled_ = true;
  int counter_ = 0;
  int window_size_ = 0;
  int next_window_ = 0;
};

/// Welford running mean and variance per coordinate.
class RunningVariance {
 public:
  explicit RunningVariance(Eigen::Index dim) : mean_(Eigen::VectorXd::Zero(dim)), m2_(mean_) {}
  void add(const Eigen::VectorXd& x) {
    ++n_;
    const Eigen::VectorXd delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_.array() += delta.array() * (x - mean_).array();
  }
  long count() const { return n_; }
  Eigen::VectorXd variance() const {
    return n_ > 1 ? Eigen::VectorXd(m2_ / static_cast<double>(n_ - 1))
                  : Eigen::VectorXd(Eigen::VectorXd::Ones(mean_.size()));
  }
  void restart() {
    n_ = 0;
    mean_.setZero();
    m2_.setZero();
  }

 private:
  long n_ = 0;
  Eigen::VectorXd mean_, m2_;
};

/**
 * Step-size heuristic: doubles or halves the step until a single leapfrog
 * step crosses an acceptance probability of 0.8. The phase point is left
 * unchanged.
 */
template <DifferentiableTarget Target>
double find_initial_step_size(const Target& target, const PhasePoint& start, double step,
                              const Eigen::VectorXd& inv_metric, Rng& rng) {
  NutsTuning t;
  t.inv_metric = inv_metric;
  detail::NutsKernel<Target> kernel(target, t, rng);
  auto energy_change = [&](double eps) {
    PhasePoint z = start;
    kernel.sample_momentum(z);
    const double H0 = kernel.hamiltonian(z);
    const bool ok = leapfrog(target, z, eps, 1, inv_metric);
    double h = ok ? kernel.hamiltonian(z) : std::numeric_limits<double>::infinity();
    if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
    return H0 - h;
  };
  const double log08 = std::log(0.8);
  const int direction = energy_change(step) > log08 ? 1 : -1;
  for (int guard = 0; guard < 200; ++guard) {
    const double dH = energy_change(step);
    if (direction == 1 && !(dH > log08)) break;
    if (direction == -1 && !(dH < log08)) break;
    step = direction == 1 ? 2.0 * step : 0.5 * step;
    if (step > 1e7) throw std::runtime_error("step-size search diverged: posterior may be improper");
    if (step < 1e-300) throw std::runtime_error("step-size search collapsed: no acceptable step");
  }
  return step;
}

}  // namespace hjm
