#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "json.hpp"

#include "hjm/study.hpp"

namespace hjm {

struct ManifestEntry {
  std::string path;  // relative to the report directory
  std::uintmax_t bytes = 0;
  std::string sha256;
};

struct Manifest {
  std::vector<ManifestEntry> files;
};

/// Hex SHA-256 digest of a byte string.
inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256: digest failed");
  std::ostringstream os;
  for (unsigned int k = 0; k < len; ++k) os << std::hex << std::setw(2) << std::setfill('0') << int(md[k]);
  return os.str();
}

inline std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

/// One row of the forest plot: posterior mean and central 95% interval.
struct ForestRow {
  std::string parameter;
  double truth = 0.0;
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

inline const std::vector<std::string>& forest_parameters() {
  static const std::vector<std::string> names = {"alpha2", "beta2", "gamma1", "delta1", "eta3"};
  return names;
}

/// Forest rows from the stored draws of a cell (empty when no draws were kept).
inline std::vector<ForestRow> forest_rows(const CellReport& cell) {
  std::vector<ForestRow> rows;
  if (cell.draws.draws.empty()) return rows;
  const auto truth = cell.truth.to_array();
  for (const auto& name : forest_parameters()) {
    const Eigen::VectorXd v = cell.draws.pooled(cell.draws.column(name));
    rows.push_back({name, truth[param_index(name)], v.mean(), quantile(v, 0.025), quantile(v, 0.975)});
  }
  return rows;
}

namespace detail {

inline std::set<std::string> parse_formats(const std::string& formats) {
  std::set<std::string> out;
  std::istringstream is(formats);
  std::string f;
  while (std::getline(is, f, ',')) {
    if (f != "csv" && f != "md" && f != "svg")
      throw std::invalid_argument("emit_report: unknown format '" + f + "' (expected csv, md or svg)");
    out.insert(f);
  }
  if (out.empty()) throw std::invalid_argument("emit_report: no output format given");
  return out;
}

inline std::string fixed(double x, int prec = 4) {
  if (!std::isfinite(x)) return "NA";
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << x;
  return os.str();
}

inline std::string svg_num(double x) {
  std::ostringstream os;
  os << std::setprecision(6) << x;
  return os.str();
}

struct Axis {
  double lo, hi, px_lo, px_hi;
  double operator()(double v) const { return px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo); }
};

inline std::pair<double, double> padded_range(double lo, double hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

inline void svg_open(std::ostream& os, int w, int h, const std::string& title) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
     << ' ' << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << w / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
}

inline void svg_polyline(std::ostream& os, const std::vector<std::pair<double, double>>& pts, const std::string& color,
                         double width = 1.0) {
  os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << width << "\" points=\"";
  for (const auto& [x, y] : pts) os << svg_num(x) << ',' << svg_num(y) << ' ';
  os << "\"/>\n";
}

inline void svg_x_ticks(std::ostream& os, const Axis& ax, double y, int n = 5) {
  os << "<line x1=\"" << ax.px_lo << "\" y1=\"" << y << "\" x2=\"" << ax.px_hi << "\" y2=\"" << y
     << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= n; ++k) {
    const double v = ax.lo + (ax.hi - ax.lo) * k / n;
    os << "<text x=\"" << svg_num(ax(v)) << "\" y=\"" << y + 16 << "\" text-anchor=\"middle\">" << svg_num(v)
       << "</text>\n";
  }
}

inline const char* chain_color(int c) {
  static const char* colors[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"};
  return colors[c % 6];
}

/// Gaussian kernel density estimate on a regular grid (Silverman bandwidth).
inline std::vector<std::pair<double, double>> kde(const Eigen::VectorXd& v, int points = 200) {
  const double n = static_cast<double>(v.size());
  const double mean = v.mean();
  const double sd = std::sqrt((v.array() - mean).square().sum() / std::max(1.0, n - 1.0));
  const double iqr = quantile(v, 0.75) - quantile(v, 0.25);
  double spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0)) spread = sd > 0 ? sd : 1.0;
  const double bw = 0.9 * spread * std::pow(n, -0.2);
  const double lo = v.minCoeff() - 3 * bw, hi = v.maxCoeff() + 3 * bw;
  std::vector<std::pair<double, double>> out;
  const double norm = 1.0 / (n * bw * std::sqrt(2.0 * std::numbers::pi));
  for (int k = 0; k < points; ++k) {
    const double x = lo + (hi - lo) * k / (points - 1);
    double s = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double u = (x - v[i]) / bw;
      s += std::exp(-0.5 * u * u);
    }
    out.emplace_back(x, s * norm);
  }
  return out;
}

inline void write_forest_svg(std::ostream& os, const std::vector<ForestRow>& rows, const std::string& label) {
  const int w = 560, row_h = 40, top = 40, h = top + row_h * static_cast<int>(rows.size()) + 50;
  double lo = 0.0, hi = 0.0;
  for (const auto& r : rows) {
    lo = std::min({lo, r.lo, r.truth});
    hi = std::max({hi, r.hi, r.truth});
  }
  const auto [a, b] = padded_range(lo, hi);
  const Axis ax{a, b, 110.0, w - 30.0};
  svg_open(os, w, h, "Posterior means and 95% credible intervals, " + label);
  os << "<line x1=\"" << svg_num(ax(0.0)) << "\" y1=\"" << top << "\" x2=\"" << svg_num(ax(0.0)) << "\" y2=\""
     << h - 40 << "\" stroke=\"#999\" stroke-dasharray=\"4,3\"/>\n";
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& r = rows[k];
    const double y = top + row_h * (static_cast<double>(k) + 0.5);
    os << "<text x=\"100\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << r.parameter << "</text>\n";
    os << "<g class=\"interval\" data-parameter=\"" << r.parameter << "\" data-mean=\"" << format_real(r.mean)
       << "\" data-lo=\"" << format_real(r.lo) << "\" data-hi=\"" << format_real(r.hi) << "\" data-truth=\""
       << format_real(r.truth) << "\">\n";
    os << "<line x1=\"" << svg_num(ax(r.lo)) << "\" y1=\"" << y << "\" x2=\"" << svg_num(ax(r.hi)) << "\" y2=\"" << y
       << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    os << "<circle cx=\"" << svg_num(ax(r.mean)) << "\" cy=\"" << y << "\" r=\"4\" fill=\"black\"/>\n";
    os << "<path d=\"M " << svg_num(ax(r.truth)) << ' ' << y - 7 << " l 5 7 l -5 7 l -5 -7 z\" fill=\"#d95f02\"/>\n";
    os << "</g>\n";
  }
  svg_x_ticks(os, ax, h - 40);
  os << "<text x=\"" << w - 30 << "\" y=\"" << h - 5 << "\" text-anchor=\"end\" font-size=\"10\">"
     << "dot: posterior mean; diamond: true value</text>\n</svg>\n";
}

inline void write_trace_svg(std::ostream& os, const PosteriorSamples& s, Eigen::Index col, const std::string& title) {
  const int w = 640, h = 260;
  const Eigen::VectorXd all = s.pooled(col);
  const auto [a, b] = padded_range(all.minCoeff(), all.maxCoeff());
  const Axis ay{a, b, h - 40.0, 30.0};
  const Axis ax{1.0, static_cast<double>(std::max<Eigen::Index>(2, s.n_draws())), 60.0, w - 20.0};
  svg_open(os, w, h, title);
  for (int c = 0; c < s.n_chains(); ++c) {
    const auto& m = s.draws[static_cast<std::size_t>(c)];
    std::vector<std::pair<double, double>> pts;
    for (Eigen::Index d = 0; d < m.rows(); ++d) pts.emplace_back(ax(static_cast<double>(d + 1)), ay(m(d, col)));
    svg_polyline(os, pts, chain_color(c), 0.6);
  }
  for (int k = 0; k <= 4; ++k) {
    const double v = a + (b - a) * k / 4;
    os << "<text x=\"55\" y=\"" << svg_num(ay(v) + 4) << "\" text-anchor=\"end\">" << svg_num(v) << "</text>\n";
  }
  svg_x_ticks(os, ax, h - 40);
  os << "</svg>\n";
}

inline void write_density_svg(std::ostream& os, const PosteriorSamples& s, Eigen::Index col, double truth,
                              const std::string& title) {
  const int w = 480, h = 300;
  std::vector<std::vector<std::pair<double, double>>> curves;
  double xlo = truth, xhi = truth, ymax = 0.0;
  for (int c = 0; c < s.n_chains(); ++c) {
    curves.push_back(kde(s.draws[static_cast<std::size_t>(c)].col(col)));
    for (const auto& [x, y] : curves.back()) {
      xlo = std::min(xlo, x);
      xhi = std::max(xhi, x);
      ymax = std::max(ymax, y);
    }
  }
  const auto [a, b] = padded_range(xlo, xhi);
  const Axis ax{a, b, 40.0, w - 20.0};
  const Axis ay{0.0, ymax > 0 ? 1.05 * ymax : 1.0, h - 40.0, 30.0};
  svg_open(os, w, h, title);
  for (std::size_t c = 0; c < curves.size(); ++c) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& [x, y] : curves[c]) pts.emplace_back(ax(x), ay(y));
    svg_polyline(os, pts, chain_color(static_cast<int>(c)), 1.2);
  }
  os << "<line x1=\"" << svg_num(ax(truth)) << "\" y1=\"30\" x2=\"" << svg_num(ax(truth)) << "\" y2=\"" << h - 40
     << "\" stroke=\"black\" stroke-dasharray=\"4,3\"/>\n";
  svg_x_ticks(os, ax, h - 40);
  os << "</svg>\n";
}

}  // namespace detail

/**
 * Writes the study tables and figures into `out_dir`:
 *   table2.{csv,md}   model performance per cell (mean AUC, mean elpd-WAIC)
 *   table3.{csv,md}   parameter recovery per cell (bias, RMSE, coverage)
 *   forest_<cell>.svg, trace_<cell>_<param>.svg, density_<cell>_<param>.svg
 *   provenance.json   seeds, configuration, version and wall time
 *   manifest.csv      every file above with its size and SHA-256 digest
 * `formats` is a comma list drawn from csv, md, svg.
 */
inline Manifest emit_report(const StudyReport& report, const std::string& out_dir,
                            const std::string& formats = "csv,md,svg") {
  namespace fs = std::filesystem;
  using detail::fixed;
  if (report.cells.empty()) throw std::invalid_argument("emit_report: the report has no cells");
  const auto fmts = detail::parse_formats(formats);
  const fs::path dir(out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("emit_report: cannot create directory " + out_dir);

  Manifest manifest;
  auto emit = [&](const std::string& name, auto&& writer) {
    write_file((dir / name).string(), writer);
    const auto bytes = read_bytes(dir / name);
    manifest.files.push_back({name, bytes.size(), sha256_hex(bytes)});
  };

  if (fmts.count("csv")) {
    emit("table2.csv", [&](std::ostream& os) {
      os << "cell,model,metric,value\n";
      for (const auto& cell : report.cells)
        for (const auto& r : model_table(cell)) {
          const auto m = to_string(r.kind);
          os << cell.cell.label << ',' << m << ",auc," << format_real(r.mean_auc) << '\n'
             << cell.cell.label << ',' << m << ",elpd_waic," << format_real(r.mean_elpd) << '\n'
             << cell.cell.label << ',' << m << ",waic_deviance," << format_real(r.mean_deviance) << '\n'
             << cell.cell.label << ',' << m << ",aic," << format_real(r.mean_aic) << '\n'
             << cell.cell.label << ',' << m << ",best_elpd_count," << r.n_best_elpd << '\n'
             << cell.cell.label << ',' << m << ",replicates," << r.n_ok << '\n';
        }
    });
    emit("table3.csv", [&](std::ostream& os) {
      os << "cell,n_subjects,rho,feedback,latent_effect,parameter,truth,mean_bias,rmse,coverage,replicates,failed,"
            "max_rhat,min_ess\n";
      for (const auto& cell : report.cells)
        for (const auto& r : recovery_table(cell))
          os << cell.cell.label << ',' << cell.cell.n_subjects << ',' << format_real(cell.cell.rho) << ','
             << format_real(cell.cell.feedback) << ',' << format_real(cell.cell.latent_effect) << ',' << r.parameter
             << ',' << format_real(r.truth) << ',' << format_real(r.summary.mean_bias) << ','
             << format_real(r.summary.rmse) << ',' << format_real(r.summary.coverage) << ','
             << r.summary.n_replicates << ',' << cell.n_failed << ',' << format_real(r.max_rhat) << ','
             << format_real(r.min_ess) << '\n';
    });
  }
  if (fmts.count("md")) {
    emit("table2.md", [&](std::ostream& os) {
      os << "# Model performance in simulated data\n";
      for (const auto& cell : report.cells) {
        os << "\n## " << cell.cell.label << "\n\n"
           << "| Model | AUC | elpd-WAIC | Best elpd | Replicates | Notes |\n|---|---|---|---|---|---|\n";
        for (const auto& r : model_table(cell))
          os << "| " << to_string(r.kind) << " | " << fixed(r.mean_auc, 3) << " | " << fixed(r.mean_elpd, 1) << " | "
             << r.n_best_elpd << " | " << r.n_ok << " | " << r.notes << " |\n";
      }
    });
    emit("table3.md", [&](std::ostream& os) {
      os << "# Parameter recovery\n";
      for (const auto& cell : report.cells) {
        os << "\n## " << cell.cell.label << " (" << (cell.n_requested - cell.n_failed) << " of " << cell.n_requested
           << " replicates)\n\n"
           << "| Parameter | True value | Mean bias | RMSE | 95% coverage | max R-hat | min ESS |\n"
           << "|---|---|---|---|---|---|---|\n";
        for (const auto& r : recovery_table(cell))
          os << "| " << r.parameter << " | " << fixed(r.truth, 2) << " | " << fixed(r.summary.mean_bias, 3) << " | "
             << fixed(r.summary.rmse, 3) << " | " << fixed(100 * r.summary.coverage, 1) << "% | "
             << fixed(r.max_rhat, 3) << " | " << fixed(r.min_ess, 0) << " |\n";
      }
    });
  }
  if (fmts.count("svg")) {
    for (const auto& cell : report.cells) {
      const auto rows = forest_rows(cell);
      if (rows.empty()) continue;
      const auto& label = cell.cell.label;
      emit("forest_" + label + ".svg", [&](std::ostream& os) { detail::write_forest_svg(os, rows, label); });
      const auto truth = cell.truth.to_array();
      for (std::size_t k = 0; k < kNumParams; ++k) {
        const std::string name(kParamNames[k]);
        const auto col = cell.draws.column(name);
        emit("trace_" + label + "_" + name + ".svg",
             [&](std::ostream& os) { detail::write_trace_svg(os, cell.draws, col, "Trace of " + name + ", " + label); });
        emit("density_" + label + "_" + name + ".svg", [&](std::ostream& os) {
          detail::write_density_svg(os, cell.draws, col, truth[k], "Posterior density of " + name + ", " + label);
        });
      }
    }
  }

  emit("provenance.json", [&](std::ostream& os) {
    nlohmann::json j;
    j["version"] = report.version;
    j["wall_seconds"] = report.wall_seconds;
    j["grid"] = {{"rho_values", report.grid.rho_values},
                 {"feedback_values", report.grid.feedback_values},
                 {"latent_effect_values", report.grid.latent_effect_values},
                 {"sample_sizes", report.grid.sample_sizes},
                 {"replicates_per_cell", report.grid.replicates_per_cell},
                 {"n_times", report.grid.n_times},
                 {"base_seed", report.grid.base_seed}};
    j["chains"] = {{"n_chains", report.chains.n_chains},     {"iterations", report.chains.iterations},
                   {"warmup", report.chains.warmup},         {"target_accept", report.chains.target_accept},
                   {"max_tree_depth", report.chains.max_tree_depth}};
    j["priors"] = {{"coef_sd", report.options.priors.coef_sd}, {"scale_prior", report.options.priors.scale_prior}};
    j["cells"] = nlohmann::json::array();
    for (const auto& cell : report.cells) {
      nlohmann::json c = {{"label", cell.cell.label},
                          {"n_requested", cell.n_requested},
                          {"n_failed", cell.n_failed},
                          {"truth", cell.truth.to_array()}};
      c["replicates"] = nlohmann::json::array();
      for (const auto& r : cell.replicates)
        c["replicates"].push_back({{"replicate", r.replicate_index},
                                   {"seed", r.seed},
                                   {"chain_seed", replicate_chain_seed(ScenarioConfig{.seed = r.seed}, 0)},
                                   {"ok", r.ok},
                                   {"error", r.error},
                                   {"seconds", r.seconds}});
      j["cells"].push_back(c);
    }
    os << j.dump(1) << '\n';
  });

  const auto entries = manifest.files;
  write_file((dir / "manifest.csv").string(), [&](std::ostream& os) {
    os << "path,bytes,sha256\n";
    for (const auto& e : entries) os << e.path << ',' << e.bytes << ',' << e.sha256 << '\n';
  });
  return manifest;
}

}  // namespace hjm
