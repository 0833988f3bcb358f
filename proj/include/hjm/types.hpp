#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace hjm {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixXi = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::size_t kNumParams = 19;

/// Parameter order used by every flat representation (arrays, files, gradients).
inline constexpr std::array<std::string_view, kNumParams> kParamNames = {
    "alpha0", "alpha1", "alpha2", "beta0", "beta1", "beta2", "gamma0",
    "gamma1", "delta0", "delta1", "eta0",  "eta1",  "eta2",  "eta3",
    "tau_a",  "tau_b",  "rho",    "sigma", "sigma_t"};

enum ParamIndex : std::size_t {
  kAlpha0, kAlpha1, kAlpha2,
  kBeta0, kBeta1, kBeta2,
  kGamma0, kGamma1,
  kDelta0, kDelta1,
  kEta0, kEta1, kEta2, kEta3,
  kTauA, kTauB, kRho, kSigma, kSigmaT
};

inline std::size_t param_index(std::string_view name) {
  for (std::size_t k = 0; k < kNumParams; ++k)
    if (kParamNames[k] == name) return k;
  throw std::invalid_argument("unknown parameter name: " + std::string(name));
}

/// Positive scale parameters (stored as standard deviations, log-mapped).
inline constexpr bool is_scale_param(std::size_t k) {
  return k == kTauA || k == kTauB || k == kSigma || k == kSigmaT;
}

/**
 * Structural parameters of the three-phase model.
 *
 * Phase I: logit P(A_t=1) = alpha0 + alpha1 A_{t-1} + alpha2 B_{t-1} + u_a,
 *          B_t = beta0 + beta1 B_{t-1} + beta2 A_{t-1} + u_b + N(0, sigma^2).
 * Reversal (t = T): logit P(A_T=1) = gamma0 + gamma1 z,
 *          B_T = delta0 + delta1 z + N(0, sigma_t^2).
 * Outcome: logit P(Y=1) = eta0 + eta1 A_T + eta2 B_T + eta3 z.
 * (u_a, u_b) ~ N(0, [[tau_a^2, rho tau_a tau_b], [., tau_b^2]]), z ~ N(0,1).
 */
struct StructuralParams {
  double alpha0 = 0, alpha1 = 0, alpha2 = 0;
  double beta0 = 0, beta1 = 0, beta2 = 0;
  double gamma0 = 0, gamma1 = 0;
  double delta0 = 0, delta1 = 0;
  double eta0 = 0, eta1 = 0, eta2 = 0, eta3 = 0;
  double tau_a = 1, tau_b = 1;
  double rho = 0;
  double sigma = 1, sigma_t = 1;

  std::array<double, kNumParams> to_array() const {
    return {alpha0, alpha1, alpha2, beta0, beta1, beta2, gamma0,
            gamma1, delta0, delta1, eta0,  eta1,  eta2,  eta3,
            tau_a,  tau_b,  rho,    sigma, sigma_t};
  }

  static StructuralParams from_array(const std::array<double, kNumParams>& v) {
    StructuralParams p;
    p.alpha0 = v[kAlpha0]; p.alpha1 = v[kAlpha1]; p.alpha2 = v[kAlpha2];
    p.beta0 = v[kBeta0];   p.beta1 = v[kBeta1];   p.beta2 = v[kBeta2];
    p.gamma0 = v[kGamma0]; p.gamma1 = v[kGamma1];
    p.delta0 = v[kDelta0]; p.delta1 = v[kDelta1];
    p.eta0 = v[kEta0]; p.eta1 = v[kEta1]; p.eta2 = v[kEta2]; p.eta3 = v[kEta3];
    p.tau_a = v[kTauA]; p.tau_b = v[kTauB]; p.rho = v[kRho];
    p.sigma = v[kSigma]; p.sigma_t = v[kSigmaT];
    return p;
  }

  double get(std::size_t k) const { return to_array().at(k); }
  void set(std::size_t k, double value) {
    auto v = to_array();
    v.at(k) = value;
    *this = from_array(v);
  }

  bool valid() const {
    for (double x : to_array())
      if (!std::isfinite(x)) return false;
    return tau_a > 0 && tau_b > 0 && sigma > 0 && sigma_t > 0 && rho > -1 && rho < 1;
  }

  void validate() const {
    if (!valid())
      throw std::invalid_argument(
          "StructuralParams: scales must be positive, |rho| < 1 and all values finite");
  }

  friend bool operator==(const StructuralParams&, const StructuralParams&) = default;
};

/// Per-subject latent triple.
struct LatentState {
  double u_a = 0;
  double u_b = 0;
  double z = 0;

  friend bool operator==(const LatentState&, const LatentState&) = default;
};

/// Unconstrained coordinates: log for scales, atanh for rho, identity otherwise.
struct UnconstrainedParams {
  std::array<double, kNumParams> values{};

  double& operator[](std::size_t k) { return values[k]; }
  double operator[](std::size_t k) const { return values[k]; }
};

/**
 * Known per-subject linear-predictor offsets, one column per predictor.
 * Columns: Phase-I A logit, Phase-I B mean, reversal A logit, reversal B mean,
 * outcome logit. Stands in for fixed demographic adjustment; empty by default.
 */
struct ExogenousOffsets {
  RowMatrixXd values;  // n_subjects x 5
  static constexpr int kColumns = 5;
};

/**
 * Panel of N subjects observed at T >= 3 times: binary series A, continuous
 * series B, and a final binary outcome Y.
 */
struct PanelDataset {
  RowMatrixXi a;  // N x T, 0/1
  RowMatrixXd b;  // N x T
  Eigen::VectorXi y;  // N, 0/1
  std::optional<std::vector<LatentState>> true_latents;
  std::optional<ExogenousOffsets> offsets;

  Eigen::Index n_subjects() const { return a.rows(); }
  Eigen::Index n_times() const { return a.cols(); }

  /// Throws std::invalid_argument when any invariant is violated.
  void validate() const {
    const auto n = a.rows();
    if (b.rows() != n || y.size() != n)
      throw std::invalid_argument("PanelDataset: row counts of a, b, y differ");
    if (n > 0 && b.cols() != a.cols())
      throw std::invalid_argument("PanelDataset: a and b have different numbers of times");
    if (n > 0 && a.cols() < 3)
      throw std::invalid_argument("PanelDataset: at least 3 time points are required");
    for (Eigen::Index i = 0; i < a.size(); ++i)
      if (a.data()[i] != 0 && a.data()[i] != 1)
        throw std::invalid_argument("PanelDataset: a must contain only 0/1");
    for (Eigen::Index i = 0; i < b.size(); ++i)
      if (!std::isfinite(b.data()[i]))
        throw std::invalid_argument("PanelDataset: b must be finite");
    for (Eigen::Index i = 0; i < y.size(); ++i)
      if (y[i] != 0 && y[i] != 1)
        throw std::invalid_argument("PanelDataset: y must contain only 0/1");
    if (true_latents && static_cast<Eigen::Index>(true_latents->size()) != n)
      throw std::invalid_argument("PanelDataset: true_latents length differs from n_subjects");
    if (offsets && (offsets->values.rows() != n ||
                    offsets->values.cols() != ExogenousOffsets::kColumns))
      throw std::invalid_argument("PanelDataset: offsets must be n_subjects x 5");
  }

  double offset(Eigen::Index i, int column) const {
    return offsets ? offsets->values(i, column) : 0.0;
  }

  /// Dataset restricted to the first `count` subjects.
  PanelDataset head(Eigen::Index count) const {
    PanelDataset out;
    out.a = a.topRows(count);
    out.b = b.topRows(count);
    out.y = y.head(count);
    if (true_latents)
      out.true_latents = std::vector<LatentState>(true_latents->begin(),
                                                  true_latents->begin() + count);
    if (offsets) out.offsets = ExogenousOffsets{offsets->values.topRows(count)};
    return out;
  }
};

}  // namespace hjm
