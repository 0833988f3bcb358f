#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "hjm/density.hpp"
#include "hjm/rng.hpp"
#include "hjm/types.hpp"

namespace hjm {

/**
 * True values for parameters the factorial grid does not vary. The scales
 * tau_a = tau_b = 1 follow the simulation design; the remaining intercepts,
 * autoregressions and outcome slopes are implementation choices.
 */
inline StructuralParams default_true_params() {
  StructuralParams p;
  p.alpha0 = 0.0; p.alpha1 = 0.5; p.alpha2 = 0.5;
  p.beta0 = 0.0;  p.beta1 = 0.5;  p.beta2 = 0.5;
  p.gamma0 = 0.0; p.gamma1 = 0.8;
  p.delta0 = 0.0; p.delta1 = 0.8;
  p.eta0 = 0.0; p.eta1 = 1.0; p.eta2 = -0.5; p.eta3 = 0.8;
  p.tau_a = 1.0; p.tau_b = 1.0; p.rho = 0.4;
  p.sigma = 1.0; p.sigma_t = 1.0;
  return p;
}

/// One data-generating scenario.
struct ScenarioConfig {
  long n_subjects = 500;
  long n_times = 5;
  StructuralParams true_params = default_true_params();
  std::uint64_t seed = 1;
  std::string label = "scenario";
  std::size_t cell_index = 0;
  std::size_t replicate_index = 0;

  void validate() const {
    if (n_subjects < 0) throw std::invalid_argument("ScenarioConfig: n_subjects must be >= 0");
    if (n_times < 3) throw std::invalid_argument("ScenarioConfig: n_times must be >= 3");
    true_params.validate();
  }
};

/// Factorial simulation grid.
struct StudyGrid {
  std::vector<double> rho_values{0.2, 0.4, 0.6};
  std::vector<double> feedback_values{0.3, 0.5, 0.7};       // alpha2 = beta2
  std::vector<double> latent_effect_values{0.5, 0.8, 1.0};  // gamma1 = delta1 = eta3
  std::vector<long> sample_sizes{200, 500, 1000};
  long replicates_per_cell = 100;
  std::uint64_t base_seed = 20240601;
  long n_times = 5;
  StructuralParams base_params = default_true_params();

  /// The complete four-factor design.
  static StudyGrid full_design() { return StudyGrid{}; }

  /// Single flagship cell at desk scale.
  static StudyGrid desk_default() {
    StudyGrid g;
    g.rho_values = {0.4};
    g.feedback_values = {0.5};
    g.latent_effect_values = {0.8};
    g.sample_sizes = {500};
    g.replicates_per_cell = 20;
    return g;
  }

  std::size_t n_cells() const {
    return rho_values.size() * feedback_values.size() * latent_effect_values.size() *
           sample_sizes.size();
  }

  void validate() const {
    auto positive = [](const auto& v, const char* what) {
      if (v.empty()) throw std::invalid_argument(std::string("StudyGrid: empty ") + what);
      for (auto x : v)
        if (!(x > 0)) throw std::invalid_argument(std::string("StudyGrid: non-positive ") + what);
    };
    positive(rho_values, "rho_values");
    positive(feedback_values, "feedback_values");
    positive(latent_effect_values, "latent_effect_values");
    positive(sample_sizes, "sample_sizes");
    for (double r : rho_values)
      if (r >= 1.0) throw std::invalid_argument("StudyGrid: rho values must be < 1");
    if (replicates_per_cell < 1)
      throw std::invalid_argument("StudyGrid: replicates_per_cell must be >= 1");
    if (n_times < 3) throw std::invalid_argument("StudyGrid: n_times must be >= 3");
  }
};

/// Grid-cell coordinates; cell index = ((r * F + f) * L + l) * S + s.
struct GridCell {
  std::size_t index = 0;
  double rho = 0, feedback = 0, latent_effect = 0;
  long n_subjects = 0;
  std::string label;
};

inline std::vector<GridCell> grid_cells(const StudyGrid& grid) {
  std::vector<GridCell> cells;
  for (double r : grid.rho_values)
    for (double f : grid.feedback_values)
      for (double l : grid.latent_effect_values)
        for (long n : grid.sample_sizes) {
          GridCell c;
          c.index = cells.size();
          c.rho = r;
          c.feedback = f;
          c.latent_effect = l;
          c.n_subjects = n;
          c.label = "rho" + std::to_string(r).substr(0, 4) + "_fb" + std::to_string(f).substr(0, 4) +
                    "_lat" + std::to_string(l).substr(0, 4) + "_n" + std::to_string(n);
          cells.push_back(c);
        }
  return cells;
}

inline StructuralParams cell_params(const StudyGrid& grid, const GridCell& cell) {
  StructuralParams p = grid.base_params;
  p.rho = cell.rho;
  p.alpha2 = p.beta2 = cell.feedback;
  p.gamma1 = p.delta1 = p.eta3 = cell.latent_effect;
  return p;
}

/// Every (cell, replicate) scenario, cell-major, with counter-derived seeds.
inline std::vector<ScenarioConfig> expand_grid(const StudyGrid& grid) {
  grid.validate();
  std::vector<ScenarioConfig> out;
  for (const auto& cell : grid_cells(grid)) {
    for (long r = 0; r < grid.replicates_per_cell; ++r) {
      ScenarioConfig c;
      c.n_subjects = cell.n_subjects;
      c.n_times = grid.n_times;
      c.true_params = cell_params(grid, cell);
      c.seed = derive_seed(grid.base_seed, cell.index, static_cast<std::uint64_t>(r));
      c.label = cell.label;
      c.cell_index = cell.index;
      c.replicate_index = static_cast<std::size_t>(r);
      out.push_back(std::move(c));
    }
  }
  return out;
}

/// Draws the latent triple of one subject.
inline LatentState draw_latents(const StructuralParams& p, Rng& rng) {
  const double n1 = rng.normal();
  const double n2 = rng.normal();
  LatentState l;
  l.u_a = p.tau_a * n1;
  l.u_b = p.tau_b * (p.rho * n1 + std::sqrt(1.0 - p.rho * p.rho) * n2);
  l.z = rng.normal();
  return l;
}

/**
 * Generates the observed trajectory of subject i given its latents, writing
 * row i of a, b and y. Consumes the stream in a fixed order: A_1, B_1, the
 * Phase-I transitions, (A_T, B_T), then Y.
 */
inline void simulate_trajectory(const StructuralParams& p, const LatentState& lat, Rng& rng,
                                PanelDataset& data, Eigen::Index i) {
  const auto T = data.n_times();
  data.a(i, 0) = rng.bernoulli(0.5);
  data.b(i, 0) = rng.normal();
  for (Eigen::Index t = 1; t + 1 < T; ++t) {
    const int a_prev = data.a(i, t - 1);
    const double b_prev = data.b(i, t - 1);
    data.a(i, t) = rng.bernoulli(inv_logit(p.alpha0 + p.alpha1 * a_prev + p.alpha2 * b_prev + lat.u_a));
    data.b(i, t) = p.beta0 + p.beta1 * b_prev + p.beta2 * a_prev + lat.u_b + p.sigma * rng.normal();
  }
  const auto last = T - 1;
  data.a(i, last) = rng.bernoulli(inv_logit(p.gamma0 + p.gamma1 * lat.z));
  data.b(i, last) = p.delta0 + p.delta1 * lat.z + p.sigma_t * rng.normal();
  data.y[i] = rng.bernoulli(inv_logit(p.eta0 + p.eta1 * data.a(i, last) +
                                      p.eta2 * data.b(i, last) + p.eta3 * lat.z));
}

/// Deterministic draw of a full panel from the three-phase model.
inline PanelDataset simulate_dataset(const ScenarioConfig& config) {
  config.validate();
  const auto n = static_cast<Eigen::Index>(config.n_subjects);
  const auto T = static_cast<Eigen::Index>(config.n_times);
  PanelDataset data;
  data.a = RowMatrixXi::Zero(n, T);
  data.b = RowMatrixXd::Zero(n, T);
  data.y = Eigen::VectorXi::Zero(n);
  data.true_latents.emplace();
  data.true_latents->reserve(static_cast<std::size_t>(n));
  Rng rng(config.seed);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto lat = draw_latents(config.true_params, rng);
    data.true_latents->push_back(lat);
    simulate_trajectory(config.true_params, lat, rng, data, i);
  }
  return data;
}

}  // namespace hjm
