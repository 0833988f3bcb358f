#pragma once

#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "hjm/comparators.hpp"
#include "hjm/dataset_io.hpp"
#include "hjm/mle.hpp"
#include "hjm/sampler.hpp"

namespace hjm {

/// Human-readable table: parameter, estimate, std. error, 95% interval.
inline void write_fit_report(std::ostream& os, const FitResult& fit) {
  const auto est = fit.estimates.to_array();
  os << "Marginal maximum likelihood (adaptive Gauss-Hermite quadrature)\n"
     << "subjects " << fit.n_subjects << ", free parameters " << fit.n_free << ", converged "
     << (fit.converged ? "yes" : "no") << ", iterations " << fit.iterations << "\n"
     << "log-likelihood " << std::setprecision(10) << fit.max_loglik << ", AIC " << fit.aic << ", BIC "
     << fit.bic << "\n";
  if (!fit.hessian_positive_definite)
    os << "warning: Hessian not positive definite; standard errors unavailable\n";
  os << "\n" << std::left << std::setw(10) << "parameter" << std::right << std::setw(14) << "estimate"
     << std::setw(14) << "std.error" << std::setw(14) << "ci_lo" << std::setw(14) << "ci_hi" << "\n";
  os << std::fixed << std::setprecision(6);
  for (std::size_t k = 0; k < kNumParams; ++k)
    os << std::left << std::setw(10) << kParamNames[k] << std::right << std::setw(14) << est[k]
       << std::setw(14) << fit.standard_errors[k] << std::setw(14) << fit.interval_lo[k] << std::setw(14)
       << fit.interval_hi[k] << "\n";
  os.unsetf(std::ios::floatfield);
}

/// Machine-readable "key = value" lines with round-trip precision.
inline void write_fit_kv(std::ostream& os, const FitResult& fit) {
  const auto est = fit.estimates.to_array();
  os << "max_loglik = " << format_real(fit.max_loglik) << "\naic = " << format_real(fit.aic)
     << "\nbic = " << format_real(fit.bic) << "\nn_free = " << fit.n_free << "\nn_subjects = " << fit.n_subjects
     << "\nconverged = " << (fit.converged ? 1 : 0)
     << "\nhessian_positive_definite = " << (fit.hessian_positive_definite ? 1 : 0)
     << "\nn_evaluations = " << fit.n_evaluations << "\niterations = " << fit.iterations << "\n";
  for (std::size_t k = 0; k < kNumParams; ++k) {
    const std::string n(kParamNames[k]);
    os << "estimate." << n << " = " << format_real(est[k]) << "\n"
       << "std_error." << n << " = " << format_real(fit.standard_errors[k]) << "\n"
       << "ci_lo." << n << " = " << format_real(fit.interval_lo[k]) << "\n"
       << "ci_hi." << n << " = " << format_real(fit.interval_hi[k]) << "\n";
  }
}

inline std::map<std::string, std::string> read_kv(std::istream& is) {
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw std::runtime_error("key-value file: malformed line: " + line);
    out[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return out;
}

/// Inverse of write_fit_kv (the likelihood trace is not stored).
inline FitResult read_fit_kv(std::istream& is) {
  const auto kv = read_kv(is);
  auto get = [&](const std::string& k) {
    const auto it = kv.find(k);
    if (it == kv.end()) throw std::runtime_error("fit file: missing key " + k);
    return it->second;
  };
  auto real = [&](const std::string& k) { return detail::parse_real(get(k)); };
  FitResult fit;
  fit.max_loglik = real("max_loglik");
  fit.aic = real("aic");
  fit.bic = real("bic");
  fit.n_free = static_cast<int>(detail::parse_int(get("n_free")));
  fit.n_subjects = detail::parse_int(get("n_subjects"));
  fit.converged = get("converged") == "1";
  fit.hessian_positive_definite = get("hessian_positive_definite") == "1";
  fit.n_evaluations = detail::parse_int(get("n_evaluations"));
  fit.iterations = static_cast<int>(detail::parse_int(get("iterations")));
  std::array<double, kNumParams> est{};
  for (std::size_t k = 0; k < kNumParams; ++k) {
    const std::string n(kParamNames[k]);
    est[k] = real("estimate." + n);
    fit.standard_errors[k] = real("std_error." + n);
    fit.interval_lo[k] = real("ci_lo." + n);
    fit.interval_hi[k] = real("ci_hi." + n);
  }
  fit.estimates = StructuralParams::from_array(est);
  return fit;
}

inline void write_comparator_report(std::ostream& os, const ComparatorFit& f) {
  os << "Comparator " << to_string(f.kind) << ": log-likelihood " << std::setprecision(10) << f.max_loglik
     << ", AIC " << f.aic << ", BIC " << f.bic << ", converged " << (f.converged ? "yes" : "no") << "\n";
  if (!f.warning.empty()) os << "warning: " << f.warning << "\n";
  os << "\n" << std::left << std::setw(10) << "parameter" << std::right << std::setw(14) << "estimate"
     << std::setw(14) << "std.error" << std::setw(14) << "ci_lo" << std::setw(14) << "ci_hi" << "\n";
  os << std::fixed << std::setprecision(6);
  for (std::size_t k = 0; k < f.names.size(); ++k) {
    const auto j = static_cast<Eigen::Index>(k);
    os << std::left << std::setw(10) << f.names[k] << std::right << std::setw(14) << f.estimates[j]
       << std::setw(14) << f.standard_errors[j] << std::setw(14) << f.interval_lo[j] << std::setw(14)
       << f.interval_hi[j] << "\n";
  }
  os.unsetf(std::ios::floatfield);
}

/**
 * Long-format draws file: chain,iteration,parameter,value with iteration
 * counted from 1 after warmup. Only the first `n_columns` columns are written
 * (the structural parameters by default).
 */
inline void write_draws(std::ostream& os, const PosteriorSamples& s, std::size_t n_columns = kNumParams) {
  n_columns = std::min<std::size_t>(n_columns, s.names.size());
  os << "chain,iteration,parameter,value\n";
  for (int c = 0; c < s.n_chains(); ++c) {
    const auto& m = s.draws[static_cast<std::size_t>(c)];
    for (Eigen::Index d = 0; d < m.rows(); ++d)
      for (std::size_t k = 0; k < n_columns; ++k)
        os << (c + 1) << ',' << (d + 1) << ',' << s.names[k] << ','
           << format_real(m(d, static_cast<Eigen::Index>(k))) << '\n';
  }
}

/// Reads a draws file back into per-chain matrices (columns in first-seen order).
inline PosteriorSamples read_draws(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "chain,iteration,parameter,value")
    throw std::runtime_error("draws file: bad header");
  std::map<std::string, std::size_t> col;
  PosteriorSamples s;
  struct Entry { long c, d; std::size_t k; double v; };
  std::vector<Entry> entries;
  long max_c = 0, max_d = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != 4) throw std::runtime_error("draws file: bad row: " + line);
    auto [it, inserted] = col.emplace(f[2], s.names.size());
    if (inserted) s.names.push_back(f[2]);
    Entry e{detail::parse_int(f[0]), detail::parse_int(f[1]), it->second, detail::parse_real(f[3])};
    if (e.c < 1 || e.d < 1) throw std::runtime_error("draws file: bad index: " + line);
    max_c = std::max(max_c, e.c);
    max_d = std::max(max_d, e.d);
    entries.push_back(e);
  }
  s.draws.assign(static_cast<std::size_t>(max_c),
                 RowMatrixXd::Constant(max_d, static_cast<Eigen::Index>(s.names.size()),
                                       std::numeric_limits<double>::quiet_NaN()));
  for (const auto& e : entries) s.draws[static_cast<std::size_t>(e.c - 1)](e.d - 1, static_cast<Eigen::Index>(e.k)) = e.v;
  for (const auto& m : s.draws)
    if (!m.allFinite()) throw std::runtime_error("draws file: incomplete draw matrix");
  s.telemetry.resize(s.draws.size());
  return s;
}

/// One line per chain with its adapted tuning and transition statistics.
inline void write_telemetry(std::ostream& os, const PosteriorSamples& s) {
  os << "chain,step_size,divergences,warmup_divergences,max_depth_hits,mean_tree_depth,mean_accept_stat,"
        "total_leapfrog,seconds\n";
  for (std::size_t c = 0; c < s.telemetry.size(); ++c) {
    const auto& t = s.telemetry[c];
    double depth = 0.0;
    for (int d : t.tree_depth) depth += d;
    if (!t.tree_depth.empty()) depth /= static_cast<double>(t.tree_depth.size());
    os << (c + 1) << ',' << format_real(t.step_size) << ',' << t.divergences << ',' << t.warmup_divergences
       << ',' << t.max_depth_hits << ',' << format_real(depth) << ',' << format_real(t.mean_accept_stat()) << ','
       << t.total_leapfrog << ',' << format_real(t.seconds) << '\n';
  }
}

template <class Writer>
void write_file(const std::string& path, Writer&& writer) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  writer(os);
  if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace hjm
