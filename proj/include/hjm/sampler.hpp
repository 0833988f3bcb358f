#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hjm/nuts.hpp"
#include "hjm/parallel.hpp"
#include "hjm/priors.hpp"
#include "hjm/rng.hpp"
#include "hjm/targets.hpp"
#include "hjm/types.hpp"

namespace hjm {

struct ChainConfig {
  int n_chains = 4;
  int iterations = 5000;  // including warmup
  int warmup = 2500;
  double target_accept = 0.99;
  int max_tree_depth = 10;
  std::uint64_t seed = 1;
  /// Chains run concurrently on up to this many threads.
  std::size_t jobs = 1;
  double init_radius = 2.0;

  void validate() const {
    if (n_chains < 1) throw std::invalid_argument("ChainConfig: n_chains must be positive");
    if (warmup < 0 || warmup >= iterations)
      throw std::invalid_argument("ChainConfig: warmup must be in [0, iterations)");
    if (!(target_accept > 0.5 && target_accept < 1.0))
      throw std::invalid_argument("ChainConfig: target_accept must lie in (0.5, 1)");
    if (max_tree_depth < 1) throw std::invalid_argument("ChainConfig: max_tree_depth must be positive");
    if (jobs < 1) throw std::invalid_argument("ChainConfig: jobs must be positive");
  }
  int draws_per_chain() const { return iterations - warmup; }
};

struct ChainTelemetry {
  double step_size = 0.0;
  Eigen::VectorXd inv_metric;
  std::vector<int> tree_depth;  // post-warmup
  std::vector<int> n_leapfrog;
  std::vector<double> accept_stat;
  std::vector<char> divergent;
  std::vector<double> energy;
  int divergences = 0;
  int warmup_divergences = 0;
  int max_depth_hits = 0;
  long total_leapfrog = 0;
  double seconds = 0.0;

  double mean_accept_stat() const {
    double s = 0.0;
    for (double a : accept_stat) s += a;
    return accept_stat.empty() ? 0.0 : s / static_cast<double>(accept_stat.size());
  }
};

/**
 * Post-warmup draws in the constrained output space of the target, one
 * matrix per chain with rows indexed by iteration.
 */
struct PosteriorSamples {
  std::vector<std::string> names;
  std::vector<RowMatrixXd> draws;
  std::vector<ChainTelemetry> telemetry;

  int n_chains() const { return static_cast<int>(draws.size()); }
  Eigen::Index n_draws() const { return draws.empty() ? 0 : draws.front().rows(); }
  Eigen::Index n_columns() const { return draws.empty() ? 0 : draws.front().cols(); }

  Eigen::Index column(const std::string& name) const {
    for (std::size_t k = 0; k < names.size(); ++k)
      if (names[k] == name) return static_cast<Eigen::Index>(k);
    throw std::out_of_range("PosteriorSamples: unknown column " + name);
  }
  /// Draws of one column as a [draws x chains] matrix.
  Eigen::MatrixXd chains_of(Eigen::Index col) const {
    Eigen::MatrixXd m(n_draws(), n_chains());
    for (int c = 0; c < n_chains(); ++c) m.col(c) = draws[static_cast<std::size_t>(c)].col(col);
    return m;
  }
  Eigen::MatrixXd chains_of(const std::string& name) const { return chains_of(column(name)); }
  /// All chains of one column concatenated.
  Eigen::VectorXd pooled(Eigen::Index col) const {
    Eigen::VectorXd v(n_draws() * n_chains());
    for (int c = 0; c < n_chains(); ++c)
      v.segment(c * n_draws(), n_draws()) = draws[static_cast<std::size_t>(c)].col(col);
    return v;
  }
  int total_divergences() const {
    int s = 0;
    for (const auto& t : telemetry) s += t.divergences;
    return s;
  }
};

/// Output interface a target needs beyond DifferentiableTarget for run_chains.
template <class T>
concept SampledTarget = DifferentiableTarget<T> && requires(const T& t, const Eigen::VectorXd& q,
                                                            std::span<double> out, Rng& rng) {
  { t.n_columns() } -> std::convertible_to<std::size_t>;
  { t.column_names() } -> std::convertible_to<std::vector<std::string>>;
  t.write_constrained(q, out);
  { t.random_initial_point(rng, 2.0) } -> std::convertible_to<Eigen::VectorXd>;
};

/**
 * Runs one chain: random initialization, windowed warmup adapting the step
 * size by dual averaging and a diagonal metric from warmup draws, then
 * sampling with the adapted tuning frozen.
 */
template <SampledTarget Target>
void run_chain(const Target& target, const ChainConfig& cfg, std::uint64_t chain_seed,
               RowMatrixXd& draws, ChainTelemetry& tel) {
  const auto start_time = std::chrono::steady_clock::now();
  Rng rng(chain_seed);
  const Eigen::Index d = target.dim();

  PhasePoint z;
  z.grad.resize(d);
  bool ok = false;
  for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
    z.q = target.random_initial_point(rng, cfg.init_radius);
    z.log_density = target.log_density_gradient(z.q, z.grad);
    ok = std::isfinite(z.log_density);
  }
  if (!ok) throw std::runtime_error("run_chain: no finite initial point after 100 attempts");

  NutsTuning tuning;
  tuning.inv_metric = Eigen::VectorXd::Ones(d);
  tuning.max_tree_depth = cfg.max_tree_depth;
  tuning.step_size = find_initial_step_size(target, z, 1.0, tuning.inv_metric, rng);

  NutsSampler<Target> sampler(target, tuning, rng);
  DualAveraging da(cfg.target_accept);
  da.set_mu(std::log(10.0 * tuning.step_size));
  WindowedAdaptation windows(cfg.warmup);
  RunningVariance estimator(d);

  for (int it = 0; it < cfg.warmup; ++it) {
    const auto info = sampler.transition(z);
    tel.total_leapfrog += info.n_leapfrog;
    if (info.divergent) ++tel.warmup_divergences;
    tuning.step_size = da.learn(info.accept_stat);
    if (windows.in_window()) estimator.add(z.q);
    if (windows.window_end()) {
      windows.compute_next_window();
      const double n = static_cast<double>(estimator.count());
      tuning.inv_metric = (n / (n + 5.0)) * estimator.variance().array() + 1e-3 * (5.0 / (n + 5.0));
      estimator.restart();
      tuning.step_size = find_initial_step_size(target, z, tuning.step_size, tuning.inv_metric, rng);
      da.set_mu(std::log(10.0 * tuning.step_size));
      da.restart();
    }
    windows.advance();
  }
  if (cfg.warmup > 0) tuning.step_size = da.final_step_size();

  const int n_draws = cfg.draws_per_chain();
  draws.resize(n_draws, static_cast<Eigen::Index>(target.n_columns()));
  tel.tree_depth.reserve(static_cast<std::size_t>(n_draws));
  for (int it = 0; it < n_draws; ++it) {
    const auto info = sampler.transition(z);
    tel.total_leapfrog += info.n_leapfrog;
    tel.tree_depth.push_back(info.tree_depth);
    tel.n_leapfrog.push_back(info.n_leapfrog);
    tel.accept_stat.push_back(info.accept_stat);
    tel.divergent.push_back(info.divergent ? 1 : 0);
    tel.energy.push_back(info.energy);
    if (info.divergent) ++tel.divergences;
    if (info.max_depth_reached) ++tel.max_depth_hits;
    target.write_constrained(z.q, std::span<double>(draws.row(it).data(), target.n_columns()));
  }
  tel.step_size = tuning.step_size;
  tel.inv_metric = tuning.inv_metric;
  tel.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  if (n_draws > 0 && tel.divergences == n_draws)
    throw std::runtime_error("run_chain: every post-warmup transition diverged (step size " +
                             std::to_string(tuning.step_size) + "); the posterior geometry is pathological");
}

/// Seed of chain c derived from the configured base seed.
inline std::uint64_t chain_seed(const ChainConfig& cfg, int c) {
  return derive_seed(cfg.seed, static_cast<std::uint64_t>(c) + 1, 0);
}

/// Independent chains on `target`, concurrently on up to cfg.jobs threads.
template <SampledTarget Target>
PosteriorSamples run_chains(const Target& target, const ChainConfig& cfg) {
  cfg.validate();
  PosteriorSamples out;
  out.names = target.column_names();
  out.draws.resize(static_cast<std::size_t>(cfg.n_chains));
  out.telemetry.resize(static_cast<std::size_t>(cfg.n_chains));
  parallel_for(static_cast<std::size_t>(cfg.n_chains), cfg.jobs, [&](std::size_t c) {
    run_chain(target, cfg, chain_seed(cfg, static_cast<int>(c)), out.draws[c], out.telemetry[c]);
  });
  return out;
}

/// The joint posterior of the full model under `priors`.
inline PosteriorSamples run_chains(const PanelDataset& data, const PriorConfig& priors,
                                   const ChainConfig& cfg) {
  const JointTarget target(data, priors);
  return run_chains(target, cfg);
}

}  // namespace hjm
