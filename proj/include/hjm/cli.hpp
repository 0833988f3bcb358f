#pragma once

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "hjm/comparators.hpp"
#include "hjm/config.hpp"
#include "hjm/dataset_io.hpp"
#include "hjm/diagnostics.hpp"
#include "hjm/fit_io.hpp"
#include "hjm/metrics.hpp"
#include "hjm/mle.hpp"
#include "hjm/report.hpp"
#include "hjm/sampler.hpp"
#include "hjm/simulate.hpp"
#include "hjm/study.hpp"

namespace hjm::cli {

/// Raised for invalid invocations; maps to exit status 1.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Flags shared by all subcommands. Unset optionals leave the configuration alone.
struct Flags {
  std::string config;
  std::string out;
  std::string data;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::optional<int> chains, iters, warmup, nodes;
  std::optional<double> adapt_delta;
  std::optional<long> replicates;
  std::optional<std::string> grid, format;
  std::vector<std::string> set;
  bool quiet = false;
  bool dry_run = false;
  bool waic = false;
};

/**
 * Builds the run configuration: defaults, then the config file (the study
 * directory's config.ini for `report` when no file is given), then --grid,
 * then the named flags, then --set entries in command-line order.
 */
inline RunConfig resolve_config(const Flags& f, const std::string& subcommand) {
  RunConfig c;
  std::string path = f.config;
  if (path.empty() && subcommand == "report" && !f.out.empty() &&
      std::filesystem::exists(std::filesystem::path(f.out) / "config.ini"))
    path = (std::filesystem::path(f.out) / "config.ini").string();
  if (!path.empty()) c = load_config(path, c);
  if (f.grid) apply_setting(c, "grid.preset", *f.grid);
  auto put = [&](const char* key, const auto& v) {
    if (v) apply_setting(c, key, (std::ostringstream() << *v).str());
  };
  put("run.seed", f.seed);
  put("run.jobs", f.jobs);
  put("run.format", f.format);
  put("chains.chains", f.chains);
  put("chains.iters", f.iters);
  put("chains.warmup", f.warmup);
  if (f.adapt_delta) apply_setting(c, "chains.adapt_delta", format_real(*f.adapt_delta));
  put("mle.nodes", f.nodes);
  put("grid.replicates", f.replicates);
  for (const auto& kv : f.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + kv + "'");
    apply_setting(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  c.resolve();
  c.validate();
  return c;
}

inline std::filesystem::path output_dir(const Flags& f, const std::string& subcommand) {
  if (!f.out.empty()) return f.out;
  if (const char* root = std::getenv("HJM_OUTPUT_ROOT"); root && *root) return std::filesystem::path(root) / subcommand;
  return std::filesystem::path("hjm_output") / subcommand;
}

namespace detail {

inline PanelDataset input_data(const Flags& f, const RunConfig& c, const std::filesystem::path& out) {
  if (!f.data.empty()) return read_panel(f.data);
  auto data = simulate_dataset(c.scenario);
  write_panel((out / "data.csv").string(), data);
  return data;
}

inline void write_posterior_summary(std::ostream& os, const PosteriorSamples& s) {
  os << "parameter,mean,sd,q2.5,q97.5,rhat,ess_bulk\n";
  for (std::size_t k = 0; k < kNumParams; ++k) {
    const auto col = static_cast<Eigen::Index>(k);
    const Eigen::VectorXd v = s.pooled(col);
    const double mean = v.mean();
    const double sd = std::sqrt((v.array() - mean).square().sum() / std::max<double>(1.0, v.size() - 1.0));
    double r = std::numeric_limits<double>::quiet_NaN(), e = r;
    if (s.n_chains() >= 2 && s.n_draws() >= 4) {
      const auto m = s.chains_of(col);
      r = rhat(m);
      e = ess(m);
    }
    os << kParamNames[k] << ',' << format_real(mean) << ',' << format_real(sd) << ','
       << format_real(quantile(v, 0.025)) << ',' << format_real(quantile(v, 0.975)) << ',' << format_real(r) << ','
       << format_real(e) << '\n';
  }
}

inline void run_simulate(const Flags&, const RunConfig& c, const std::filesystem::path& out, std::ostream& log) {
  const auto data = simulate_dataset(c.scenario);
  write_panel((out / "data.csv").string(), data);
  log << "wrote " << (out / "data.csv").string() << " (" << data.n_subjects() << " subjects, " << data.n_times()
      << " times)\n";
}

inline void run_fit_mle(const Flags& f, const RunConfig& c, const std::filesystem::path& out, std::ostream& log) {
  const auto data = input_data(f, c, out);
  MleOptions opt;
  opt.n_nodes = c.nodes;
  opt.jobs = c.jobs;
  const auto fit = fit_mle(data, default_mle_init(), opt);
  write_file((out / "fit.txt").string(), [&](std::ostream& os) { write_fit_report(os, fit); });
  write_file((out / "fit.kv").string(), [&](std::ostream& os) { write_fit_kv(os, fit); });
  write_fit_report(log, fit);
}

inline void run_fit_hmc(const Flags& f, const RunConfig& c, const std::filesystem::path& out, std::ostream& log) {
  const auto data = input_data(f, c, out);
  JointTargetOptions topt;
  topt.jobs = 1;
  const JointTarget target(data, c.priors, topt);
  const auto s = run_chains(target, c.chains);
  const std::size_t cols = c.latent_draws ? s.names.size() : kNumParams;
  write_file((out / "draws.csv").string(), [&](std::ostream& os) { write_draws(os, s, cols); });
  write_file((out / "telemetry.csv").string(), [&](std::ostream& os) { write_telemetry(os, s); });
  write_file((out / "summary.csv").string(), [&](std::ostream& os) { write_posterior_summary(os, s); });
  write_posterior_summary(log, s);
  log << "divergent transitions after warmup: " << s.total_divergences() << "\n";
}

inline void run_compare(const Flags& f, const RunConfig& c, const std::filesystem::path& out, std::ostream& log) {
  const auto data = input_data(f, c, out);
  std::ostringstream table;
  table << "model,max_loglik,n_params,aic,bic,auc" << (f.waic ? ",elpd_waic,p_waic" : "") << '\n';
  std::ostringstream text;
  for (auto kind : kComparatorKinds) {
    const auto fit = fit_comparator(kind, data, c.nodes, c.jobs);
    write_comparator_report(text, fit);
    text << '\n';
    table << to_string(kind) << ',' << format_real(fit.max_loglik) << ',' << fit.n_params << ','
          << format_real(fit.aic) << ',' << format_real(fit.bic) << ',' << format_real(auc(data.y, fit.predicted));
    if (f.waic) {
      const auto w = comparator_waic(kind, data, c.priors, c.chains, c.jobs);
      table << ',' << format_real(w.elpd) << ',' << format_real(w.p_waic);
    }
    table << '\n';
  }
  MleOptions opt;
  opt.n_nodes = c.nodes;
  opt.jobs = c.jobs;
  const auto full = fit_mle(data, default_mle_init(), opt);
  Eigen::VectorXd pred(data.n_subjects());
  // Plug-in prediction for the ML fit averages over the latent trait prior.
  const auto rule = gh_rule(c.nodes);
  for (Eigen::Index i = 0; i < data.n_subjects(); ++i) {
    double p = 0.0;
    for (std::size_t k = 0; k < rule.nodes.size(); ++k)
      p += rule.weights[k] * outcome_probability(full.estimates, i, data, rule.nodes[k]);
    pred[i] = p;
  }
  table << "full," << format_real(full.max_loglik) << ',' << full.n_free << ',' << format_real(full.aic) << ','
        << format_real(full.bic) << ',' << format_real(auc(data.y, pred));
  if (f.waic) {
    const JointTarget target(data, c.priors);
    const auto s = run_chains(target, c.chains);
    const auto w = waic(outcome_pointwise(s, data));
    table << ',' << format_real(w.elpd) << ',' << format_real(w.p_waic);
  }
  table << '\n';
  write_file((out / "compare.csv").string(), [&](std::ostream& os) { os << table.str(); });
  write_file((out / "compare.txt").string(), [&](std::ostream& os) { os << text.str(); });
  log << table.str();
}

inline StudyOptions study_options(const Flags& f, const RunConfig& c, const std::filesystem::path& out,
                                  std::ostream& log) {
  StudyOptions opt;
  opt.out_dir = out.string();
  opt.nodes = c.nodes;
  opt.priors = c.priors;
  opt.latent_draws = c.latent_draws;
  if (!f.quiet) opt.progress = [&log](const std::string& m) { log << m << std::endl; };
  return opt;
}

inline void print_summary(const StudyReport& rep, std::ostream& log) {
  for (const auto& cell : rep.cells) {
    log << cell.cell.label << ": " << (cell.n_requested - cell.n_failed) << "/" << cell.n_requested
        << " replicates\n";
    for (const auto& r : model_table(cell))
      log << "  " << std::left << std::setw(16) << to_string(r.kind) << std::right << " AUC " << std::setw(8)
          << hjm::detail::fixed(r.mean_auc, 3) << "  elpd-WAIC " << hjm::detail::fixed(r.mean_elpd, 1) << '\n';
  }
}

inline void run_study_cmd(const Flags& f, const RunConfig& c, const std::filesystem::path& out, std::ostream& log,
                          std::ostream& progress) {
  const auto rep = run_study(c.grid, c.chains, c.jobs, study_options(f, c, out, progress));
  emit_report(rep, (out / "report").string(), c.format);
  print_summary(rep, log);
  log << "report written to " << (out / "report").string() << '\n';
}

inline void run_report_cmd(const Flags& f, const RunConfig& c, const std::filesystem::path& out, std::ostream& log,
                           std::ostream& progress) {
  if (!std::filesystem::is_directory(out / "fits"))
    throw std::runtime_error(out.string() + " is not a study directory (no fits/)");
  auto opt = study_options(f, c, out, progress);
  opt.resume_only = true;
  const auto rep = run_study(c.grid, c.chains, c.jobs, opt);
  emit_report(rep, (out / "report").string(), c.format);
  print_summary(rep, log);
}

}  // namespace detail

/**
 * Parses argv, runs one subcommand and returns the process exit status:
 * 0 on success, 1 on a usage error (with usage text on `err`), 2 on a
 * runtime failure (with a diagnostic on `err`).
 */
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Simulation, estimation and comparison for the three-phase hierarchical joint model", "hjm"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");
  Flags f;

  struct Sub {
    const char* name;
    const char* help;
  };
  const std::vector<Sub> subs = {
      {"simulate", "Simulate one panel dataset from [scenario] and [params]; writes data.csv"},
      {"fit-mle", "Marginal maximum likelihood (adaptive Gauss-Hermite quadrature); writes fit.txt, fit.kv"},
      {"fit-hmc", "Bayesian fit by NUTS; writes draws.csv, telemetry.csv, summary.csv"},
      {"compare", "Fit the comparator models (and the full model by ML); writes compare.csv, compare.txt"},
      {"study", "Run the simulation study over [grid]; writes data/, fits/, draws/, report/"},
      {"report", "Rebuild report/ from the checkpoints of an existing study directory given by --out"},
  };
  std::vector<CLI::App*> apps;
  for (const auto& s : subs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    sub->add_option("--config", f.config, "INI configuration file")->check(CLI::ExistingFile);
    sub->add_option("--out", f.out,
                    "Output directory (default $HJM_OUTPUT_ROOT/<subcommand>, else hjm_output/<subcommand>)");
    sub->add_option("--seed", f.seed, "Master seed [run] seed");
    sub->add_option("--jobs", f.jobs, "Worker threads [run] jobs")->check(CLI::PositiveNumber);
    sub->add_option("--chains", f.chains, "Number of chains [chains] chains");
    sub->add_option("--iters", f.iters, "Iterations per chain including warmup [chains] iters");
    sub->add_option("--warmup", f.warmup, "Warmup iterations [chains] warmup");
    sub->add_option("--adapt-delta", f.adapt_delta, "Target acceptance statistic [chains] adapt_delta");
    sub->add_option("--nodes", f.nodes, "Gauss-Hermite nodes per dimension [mle] nodes");
    sub->add_option("--replicates", f.replicates, "Replicates per grid cell [grid] replicates");
    sub->add_option("--grid", f.grid, "Grid preset: desk or full [grid] preset");
    sub->add_option("--format", f.format, "Report formats, comma list of csv, md, svg [run] format");
    sub->add_option("--set", f.set, "Override any configuration key: section.key=value (repeatable)");
    sub->add_flag("-q,--quiet", f.quiet, "Suppress progress messages");
    sub->add_flag("--dry-run", f.dry_run, "Write the resolved configuration and exit");
    if (std::string(s.name) == "fit-mle" || std::string(s.name) == "fit-hmc" || std::string(s.name) == "compare")
      sub->add_option("--data", f.data, "Panel data file (default: simulate from the configuration)")
          ->check(CLI::ExistingFile);
    if (std::string(s.name) == "compare") sub->add_flag("--waic", f.waic, "Also compute elpd-WAIC by sampling");
    apps.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    CLI::App* active = &app;
    for (auto* s : apps)
      if (s->parsed()) active = s;
    err << "error: " << e.what() << "\n\n" << active->help();
    return 1;
  }
  CLI::App* chosen = app.get_subcommands().front();
  const std::string name = chosen->get_name();

  RunConfig cfg;
  std::filesystem::path dir;
  try {
    cfg = resolve_config(f, name);
    dir = output_dir(f, name);
    if (name == "report" && f.out.empty()) throw UsageError("report requires --out <study directory>");
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n\n" << chosen->help();
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (name == "report" && !std::filesystem::is_directory(dir / "fits"))
      throw std::runtime_error(dir.string() + " is not a study directory (no fits/)");
    const auto echo_dir = name == "report" ? dir / "report" : dir;
    std::filesystem::create_directories(echo_dir);
    write_file((echo_dir / "config.ini").string(), [&](std::ostream& os) { write_config(os, cfg); });
    if (f.dry_run) {
      write_config(out, cfg);
      return 0;
    }
    if (name == "simulate") detail::run_simulate(f, cfg, dir, out);
    else if (name == "fit-mle") detail::run_fit_mle(f, cfg, dir, out);
    else if (name == "fit-hmc") detail::run_fit_hmc(f, cfg, dir, out);
    else if (name == "compare") detail::run_compare(f, cfg, dir, out);
    else if (name == "study") detail::run_study_cmd(f, cfg, dir, out, err);
    else detail::run_report_cmd(f, cfg, dir, out, err);
  } catch (const std::exception& e) {
    err << "error: " << name << ": " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace hjm::cli
