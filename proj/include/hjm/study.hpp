#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "hjm/comparators.hpp"
#include "hjm/dataset_io.hpp"
#include "hjm/diagnostics.hpp"
#include "hjm/fit_io.hpp"
#include "hjm/metrics.hpp"
#include "hjm/parallel.hpp"
#include "hjm/sampler.hpp"
#include "hjm/simulate.hpp"

namespace hjm {

inline constexpr const char* kVersion = "0.1.0";

/// Posterior summary of one structural parameter in one replicate.
struct ParamSummary {
  std::string name;
  double truth = 0.0;
  double mean = 0.0;
  double sd = 0.0;
  double lo = 0.0;  // 2.5% quantile
  double hi = 0.0;  // 97.5% quantile
  double rhat = 0.0;
  double ess = 0.0;
};

/// Predictive performance of one model in one replicate.
struct ModelScore {
  ModelKind kind = ModelKind::full;
  bool ok = false;
  std::string error;
  double auc = std::numeric_limits<double>::quiet_NaN();
  bool has_waic = false;
  WaicResult waic;
  /// Maximum-likelihood fit criteria (comparators only).
  double max_loglik = std::numeric_limits<double>::quiet_NaN();
  double aic = std::numeric_limits<double>::quiet_NaN();
  double bic = std::numeric_limits<double>::quiet_NaN();
};

struct ReplicateRecord {
  std::size_t cell_index = 0;
  std::size_t replicate_index = 0;
  std::string label;
  std::uint64_t seed = 0;
  long n_subjects = 0;
  bool ok = false;
  std::string error;
  std::vector<ParamSummary> params;
  int divergences = 0;
  int max_depth_hits = 0;
  double mean_accept_stat = 0.0;
  double latent_correlation = std::numeric_limits<double>::quiet_NaN();
  std::vector<ModelScore> models;
  std::string config_key;
  /// Wall time of the replicate, and the sum and maximum of its full-model
  /// chain times (chains may run concurrently on a multi-core host).
  double seconds = 0.0;
  double chain_seconds_sum = 0.0;
  double chain_seconds_max = 0.0;

  const ModelScore* model(ModelKind k) const {
    for (const auto& m : models)
      if (m.kind == k) return &m;
    return nullptr;
  }
  const ParamSummary* param(const std::string& name) const {
    for (const auto& p : params)
      if (p.name == name) return &p;
    return nullptr;
  }

  /// Parameter-level view used by recovery_summary (posterior mean and
  /// central 95% interval).
  ReplicateOutcome outcome() const {
    ReplicateOutcome o;
    o.label = label;
    for (const auto& p : params) o.parameters.push_back({p.name, p.truth, p.mean, p.lo, p.hi});
    return o;
  }
};

struct StudyOptions {
  /// Output root with data/, fits/, draws/ subdirectories. Empty keeps
  /// everything in memory and disables checkpoints.
  std::string out_dir;
  bool comparators = true;
  /// Only replicates with index below this fit the comparators.
  long comparator_replicates = std::numeric_limits<long>::max();
  /// Sample each comparator's restricted posterior for WAIC.
  bool comparator_waic = true;
  /// Replicates per cell (counted from 0) whose structural draws are kept.
  long draws_replicates = 1;
  /// Also store per-subject latent draws in the draws files.
  bool latent_draws = false;
  int nodes = 9;
  PriorConfig priors;
  /// Never compute: replicates without a matching checkpoint are reported
  /// as failed. Used to rebuild a report from an existing study directory.
  bool resume_only = false;
  /// Progress messages; calls are serialized.
  std::function<void(const std::string&)> progress;
};

struct CellReport {
  GridCell cell;
  StructuralParams truth;
  long n_requested = 0;
  long n_failed = 0;
  /// All replicates in replicate order, failures included with ok = false.
  std::vector<ReplicateRecord> replicates;
  /// Structural draws of the first stored replicate (empty when none kept).
  PosteriorSamples draws;

  std::vector<ReplicateOutcome> outcomes() const {
    std::vector<ReplicateOutcome> out;
    for (const auto& r : replicates)
      if (r.ok) out.push_back(r.outcome());
    return out;
  }
};

struct StudyReport {
  StudyGrid grid;
  ChainConfig chains;
  StudyOptions options;
  std::vector<CellReport> cells;
  double wall_seconds = 0.0;
  std::string version = kVersion;
};

namespace detail {

using nlohmann::json;

inline json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }
inline double num(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline ModelKind model_kind_from(const std::string& s) {
  for (auto k : {ModelKind::full, ModelKind::baseline, ModelKind::time_averaged, ModelKind::glmm_no_latent})
    if (s == to_string(k)) return k;
  throw std::runtime_error("unknown model kind: " + s);
}

inline json to_json(const ReplicateRecord& r) {
  json j;
  j["cell_index"] = r.cell_index;
  j["replicate_index"] = r.replicate_index;
  j["label"] = r.label;
  j["seed"] = r.seed;
  j["n_subjects"] = r.n_subjects;
  j["ok"] = r.ok;
  j["error"] = r.error;
  j["divergences"] = r.divergences;
  j["max_depth_hits"] = r.max_depth_hits;
  j["mean_accept_stat"] = num(r.mean_accept_stat);
  j["latent_correlation"] = num(r.latent_correlation);
  j["config_key"] = r.config_key;
  j["seconds"] = r.seconds;
  j["chain_seconds_sum"] = r.chain_seconds_sum;
  j["chain_seconds_max"] = r.chain_seconds_max;
  j["params"] = json::array();
  for (const auto& p : r.params)
    j["params"].push_back({{"name", p.name}, {"truth", num(p.truth)}, {"mean", num(p.mean)}, {"sd", num(p.sd)},
                           {"lo", num(p.lo)}, {"hi", num(p.hi)}, {"rhat", num(p.rhat)}, {"ess", num(p.ess)}});
  j["models"] = json::array();
  for (const auto& m : r.models)
    j["models"].push_back({{"kind", to_string(m.kind)}, {"ok", m.ok}, {"error", m.error}, {"auc", num(m.auc)},
                           {"has_waic", m.has_waic}, {"lppd", num(m.waic.lppd)}, {"p_waic", num(m.waic.p_waic)},
                           {"elpd", num(m.waic.elpd)}, {"deviance", num(m.waic.deviance)},
                           {"max_loglik", num(m.max_loglik)}, {"aic", num(m.aic)}, {"bic", num(m.bic)}});
  return j;
}

inline ReplicateRecord record_from_json(const json& j) {
  ReplicateRecord r;
  r.cell_index = j.at("cell_index").get<std::size_t>();
  r.replicate_index = j.at("replicate_index").get<std::size_t>();
  r.label = j.at("label").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.n_subjects = j.at("n_subjects").get<long>();
  r.ok = j.at("ok").get<bool>();
  r.error = j.at("error").get<std::string>();
  r.divergences = j.at("divergences").get<int>();
  r.max_depth_hits = j.at("max_depth_hits").get<int>();
  r.mean_accept_stat = num(j.at("mean_accept_stat"));
  r.latent_correlation = num(j.at("latent_correlation"));
  r.config_key = j.at("config_key").get<std::string>();
  r.seconds = j.at("seconds").get<double>();
  r.chain_seconds_sum = j.at("chain_seconds_sum").get<double>();
  r.chain_seconds_max = j.at("chain_seconds_max").get<double>();
  for (const auto& p : j.at("params"))
    r.params.push_back({p.at("name").get<std::string>(), num(p.at("truth")), num(p.at("mean")), num(p.at("sd")),
                        num(p.at("lo")), num(p.at("hi")), num(p.at("rhat")), num(p.at("ess"))});
  for (const auto& m : j.at("models")) {
    ModelScore s;
    s.kind = model_kind_from(m.at("kind").get<std::string>());
    s.ok = m.at("ok").get<bool>();
    s.error = m.at("error").get<std::string>();
    s.auc = num(m.at("auc"));
    s.has_waic = m.at("has_waic").get<bool>();
    s.waic = {num(m.at("lppd")), num(m.at("p_waic")), num(m.at("elpd")), num(m.at("deviance"))};
    s.max_loglik = num(m.at("max_loglik"));
    s.aic = num(m.at("aic"));
    s.bic = num(m.at("bic"));
    r.models.push_back(s);
  }
  return r;
}

inline bool with_comparators(const ScenarioConfig& sc, const StudyOptions& o) {
  return o.comparators && static_cast<long>(sc.replicate_index) < o.comparator_replicates;
}

/// Everything that determines a replicate's result, as text.
inline std::string replicate_config_key(const ScenarioConfig& sc, const ChainConfig& cfg, const StudyOptions& o) {
  std::ostringstream os;
  os << "v" << kVersion << ";seed=" << sc.seed << ";n=" << sc.n_subjects << ";T=" << sc.n_times << ";theta=";
  for (double v : sc.true_params.to_array()) os << format_real(v) << ',';
  os << ";chains=" << cfg.n_chains << ',' << cfg.iterations << ',' << cfg.warmup << ','
     << format_real(cfg.target_accept) << ',' << cfg.max_tree_depth << ',' << cfg.seed << ','
     << format_real(cfg.init_radius) << ";cmp=" << with_comparators(sc, o) << o.comparator_waic << ";nodes=" << o.nodes
     << ";priors=" << format_real(o.priors.coef_sd) << ',' << format_real(o.priors.scale_prior);
  return os.str();
}

inline std::string replicate_stem(const ScenarioConfig& sc) {
  return sc.label + "_rep" + std::to_string(sc.replicate_index);
}

/// Writes through a temporary file and a rename so readers never see a
/// partially written checkpoint.
template <class Writer>
void write_atomic(const std::filesystem::path& path, Writer&& writer) {
  auto tmp = path;
  tmp += ".tmp";
  write_file(tmp.string(), writer);
  std::filesystem::rename(tmp, path);
}

inline Eigen::VectorXd pooled_column(const PosteriorSamples& s, Eigen::Index col) { return s.pooled(col); }

}  // namespace detail

/// Chain seed of a replicate's full-model fit, and of comparator k's WAIC fit.
inline std::uint64_t replicate_chain_seed(const ScenarioConfig& sc, int stream) {
  return derive_seed(sc.seed, 0xC0FFEEULL + static_cast<std::uint64_t>(stream), 0);
}

/**
 * Fits the full model by HMC and every comparator to one simulated dataset
 * and scores them. Failures inside comparator fits are recorded on the model
 * score; a failure of the full-model fit marks the whole replicate failed.
 */
inline ReplicateRecord run_replicate(const ScenarioConfig& sc, const ChainConfig& chains, const StudyOptions& opt,
                                     PosteriorSamples* keep_draws = nullptr, PanelDataset* keep_data = nullptr) {
  ReplicateRecord rec;
  rec.cell_index = sc.cell_index;
  rec.replicate_index = sc.replicate_index;
  rec.label = sc.label;
  rec.seed = sc.seed;
  rec.n_subjects = sc.n_subjects;
  rec.config_key = detail::replicate_config_key(sc, chains, opt);
  const auto start = std::chrono::steady_clock::now();
  try {
    const auto data = simulate_dataset(sc);
    if (keep_data) *keep_data = data;
    ChainConfig cc = chains;
    cc.seed = replicate_chain_seed(sc, 0);
    JointTargetOptions topt;
    topt.jobs = 1;
    const JointTarget target(data, opt.priors, topt);
    auto samples = run_chains(target, cc);

    const auto truth = sc.true_params.to_array();
    for (std::size_t k = 0; k < kNumParams; ++k) {
      const auto col = static_cast<Eigen::Index>(k);
      const Eigen::MatrixXd m = samples.chains_of(col);
      const Eigen::VectorXd v = samples.pooled(col);
      ParamSummary p;
      p.name = std::string(kParamNames[k]);
      p.truth = truth[k];
      p.mean = v.mean();
      p.sd = v.size() > 1 ? std::sqrt((v.array() - p.mean).square().sum() / static_cast<double>(v.size() - 1)) : 0.0;
      p.lo = quantile(v, 0.025);
      p.hi = quantile(v, 0.975);
      if (m.cols() >= 2 && m.rows() >= 4) {
        p.rhat = rhat(m);
        p.ess = ess(m);
      } else {
        p.rhat = p.ess = std::numeric_limits<double>::quiet_NaN();
      }
      rec.params.push_back(p);
    }
    double acc = 0.0;
    for (const auto& t : samples.telemetry) {
      rec.divergences += t.divergences;
      rec.max_depth_hits += t.max_depth_hits;
      acc += t.mean_accept_stat();
      rec.chain_seconds_sum += t.seconds;
      rec.chain_seconds_max = std::max(rec.chain_seconds_max, t.seconds);
    }
    rec.mean_accept_stat = acc / static_cast<double>(samples.telemetry.size());

    const Eigen::Index n = data.n_subjects();
    if (data.true_latents && n >= 3) {
      Eigen::VectorXd zt(n), zm(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        zt[i] = (*data.true_latents)[static_cast<std::size_t>(i)].z;
        zm[i] = samples.pooled(static_cast<Eigen::Index>(kNumParams) + 3 * i + 2).mean();
      }
      try {
        rec.latent_correlation = latent_recovery(zt, zm);
      } catch (const std::invalid_argument&) {
      }
    }

    ModelScore full;
    full.kind = ModelKind::full;
    try {
      full.auc = auc(data.y, outcome_predicted(samples, data));
      full.waic = waic(outcome_pointwise(samples, data));
      full.has_waic = true;
      full.ok = true;
    } catch (const std::exception& e) {
      full.error = e.what();
    }
    rec.models.push_back(full);
    if (keep_draws) {
      *keep_draws = std::move(samples);
      if (!opt.latent_draws)
        for (auto& d : keep_draws->draws) d = d.leftCols(static_cast<Eigen::Index>(kNumParams)).eval();
      if (!opt.latent_draws) keep_draws->names.resize(kNumParams);
    }

    if (detail::with_comparators(sc, opt)) {
      int stream = 1;
      for (auto kind : kComparatorKinds) {
        ModelScore s;
        s.kind = kind;
        try {
          const auto f = fit_comparator(kind, data, opt.nodes, 1);
          s.max_loglik = f.max_loglik;
          s.aic = f.aic;
          s.bic = f.bic;
          s.auc = auc(data.y, f.predicted);
          if (opt.comparator_waic) {
            ChainConfig wc = chains;
            wc.seed = replicate_chain_seed(sc, stream);
            s.waic = comparator_waic(kind, data, opt.priors, wc);
            s.has_waic = true;
          }
          s.ok = true;
        } catch (const std::exception& e) {
          s.error = e.what();
        }
        ++stream;
        rec.models.push_back(s);
      }
    }
    rec.ok = true;
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
    rec.params.clear();
    rec.models.clear();
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

/**
 * Runs every (cell, replicate) task of the grid on up to `jobs` workers.
 * With an output directory, each finished replicate is checkpointed to
 * fits/<label>_rep<r>.json together with its dataset (data/) and, for the
 * first `draws_replicates` replicates of a cell, its draws (draws/). A rerun
 * loads matching checkpoints instead of recomputing them, so an interrupted
 * study resumes where it stopped. The report does not depend on `jobs`.
 */
inline StudyReport run_study(const StudyGrid& grid, const ChainConfig& chains, std::size_t jobs,
                             const StudyOptions& opt = {}) {
  namespace fs = std::filesystem;
  grid.validate();
  chains.validate();
  opt.priors.validate();
  if (jobs < 1) throw std::invalid_argument("run_study: jobs must be positive");
  const auto start = std::chrono::steady_clock::now();
  const auto scenarios = expand_grid(grid);
  const auto cells = grid_cells(grid);
  const bool persist = !opt.out_dir.empty();
  const fs::path root(opt.out_dir);
  if (persist)
    for (const char* sub : {"data", "fits", "draws"}) fs::create_directories(root / sub);

  std::vector<ReplicateRecord> records(scenarios.size());
  std::vector<PosteriorSamples> kept(scenarios.size());
  std::mutex log_mutex;
  auto log = [&](const std::string& msg) {
    if (!opt.progress) return;
    std::lock_guard lock(log_mutex);
    opt.progress(msg);
  };

  parallel_for(scenarios.size(), jobs, [&](std::size_t t) {
    const auto& sc = scenarios[t];
    const bool keep = static_cast<long>(sc.replicate_index) < opt.draws_replicates;
    const auto stem = detail::replicate_stem(sc);
    const auto fit_path = root / "fits" / (stem + ".json");
    const auto draws_path = root / "draws" / (stem + "_draws.csv");
    const auto key = detail::replicate_config_key(sc, chains, opt);

    if (persist && fs::exists(fit_path)) {
      try {
        std::ifstream is(fit_path);
        auto rec = detail::record_from_json(detail::json::parse(is));
        const bool draws_ok = !keep || !rec.ok || fs::exists(draws_path);
        if (rec.config_key == key && draws_ok) {
          if (keep && rec.ok) {
            std::ifstream ds(draws_path);
            kept[t] = read_draws(ds);
          }
          records[t] = std::move(rec);
          log("resumed " + stem);
          return;
        }
      } catch (const std::exception& e) {
        log("ignoring unreadable checkpoint " + fit_path.string() + ": " + e.what());
      }
    }

    if (opt.resume_only) {
      ReplicateRecord missing;
      missing.cell_index = sc.cell_index;
      missing.replicate_index = sc.replicate_index;
      missing.label = sc.label;
      missing.seed = sc.seed;
      missing.n_subjects = sc.n_subjects;
      missing.config_key = key;
      missing.error = "no matching checkpoint";
      records[t] = std::move(missing);
      log("missing " + stem);
      return;
    }
    ChainConfig cc = chains;
    cc.jobs = 1;
    PanelDataset data;
    PosteriorSamples samples;
    auto rec = run_replicate(sc, cc, opt, keep ? &samples : nullptr, persist ? &data : nullptr);
    if (persist) {
      if (data.n_subjects() > 0) write_panel((root / "data" / (stem + ".csv")).string(), data);
      if (keep && rec.ok) {
        detail::write_atomic(draws_path, [&](std::ostream& os) { write_draws(os, samples, samples.names.size()); });
        write_file((root / "draws" / (stem + "_telemetry.csv")).string(),
                   [&](std::ostream& os) { write_telemetry(os, samples); });
      }
      detail::write_atomic(fit_path, [&](std::ostream& os) { os << detail::to_json(rec).dump(1) << '\n'; });
    }
    if (keep && rec.ok) {
      // Keep exactly what a resumed run would read back.
      if (persist) {
        std::ifstream ds(draws_path);
        kept[t] = read_draws(ds);
      } else {
        kept[t] = std::move(samples);
        kept[t].telemetry.clear();
        kept[t].telemetry.resize(kept[t].draws.size());
      }
    }
    log(std::string(rec.ok ? "finished " : "FAILED ") + stem + (rec.ok ? "" : ": " + rec.error));
    records[t] = std::move(rec);
  });

  StudyReport report;
  report.grid = grid;
  report.chains = chains;
  report.options = opt;
  for (const auto& cell : cells) {
    CellReport cr;
    cr.cell = cell;
    cr.truth = cell_params(grid, cell);
    report.cells.push_back(std::move(cr));
  }
  for (std::size_t t = 0; t < scenarios.size(); ++t) {
    auto& cr = report.cells[scenarios[t].cell_index];
    ++cr.n_requested;
    if (!records[t].ok) ++cr.n_failed;
    if (cr.draws.draws.empty() && !kept[t].draws.empty()) cr.draws = std::move(kept[t]);
    cr.replicates.push_back(std::move(records[t]));
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// ---------------------------------------------------------------------------
// Aggregation

struct RecoveryRow {
  std::string parameter;
  double truth = 0.0;
  RecoverySummary summary;
  double max_rhat = 0.0;
  double min_ess = 0.0;
};

/// Table-3 rows of one cell over its successful replicates.
inline std::vector<RecoveryRow> recovery_table(const CellReport& cell) {
  std::vector<RecoveryRow> rows;
  const auto outcomes = cell.outcomes();
  if (outcomes.empty()) return rows;
  const auto truth = cell.truth.to_array();
  for (std::size_t k = 0; k < kNumParams; ++k) {
    RecoveryRow row;
    row.parameter = std::string(kParamNames[k]);
    row.truth = truth[k];
    row.summary = recovery_summary(outcomes, row.parameter);
    row.max_rhat = -std::numeric_limits<double>::infinity();
    row.min_ess = std::numeric_limits<double>::infinity();
    for (const auto& r : cell.replicates) {
      if (!r.ok) continue;
      const auto* p = r.param(row.parameter);
      row.max_rhat = std::max(row.max_rhat, std::isnan(p->rhat) ? std::numeric_limits<double>::infinity() : p->rhat);
      row.min_ess = std::min(row.min_ess, std::isnan(p->ess) ? 0.0 : p->ess);
    }
    rows.push_back(row);
  }
  return rows;
}

struct ModelRow {
  ModelKind kind = ModelKind::full;
  long n_ok = 0;
  double mean_auc = std::numeric_limits<double>::quiet_NaN();
  double mean_elpd = std::numeric_limits<double>::quiet_NaN();
  double mean_deviance = std::numeric_limits<double>::quiet_NaN();
  double mean_aic = std::numeric_limits<double>::quiet_NaN();
  /// Replicates in which this model has the highest elpd among all models.
  long n_best_elpd = 0;
  std::string notes;
};

/// Table-2 rows of one cell.
inline std::vector<ModelRow> model_table(const CellReport& cell) {
  std::vector<ModelRow> rows;
  const std::array<ModelKind, 4> kinds = {ModelKind::full, ModelKind::baseline, ModelKind::time_averaged,
                                          ModelKind::glmm_no_latent};
  const std::array<const char*, 4> notes = {"feedback, reversal and latent trait", "uses only initial values",
                                            "ignores role reversal", "omits feedback and latent trait"};
  for (std::size_t m = 0; m < kinds.size(); ++m) {
    ModelRow row;
    row.kind = kinds[m];
    row.notes = notes[m];
    double auc_sum = 0, elpd_sum = 0, dev_sum = 0, aic_sum = 0;
    long n_waic = 0, n_aic = 0;
    for (const auto& r : cell.replicates) {
      if (!r.ok) continue;
      const auto* s = r.model(row.kind);
      if (!s || !s->ok) continue;
      ++row.n_ok;
      auc_sum += s->auc;
      if (s->has_waic) {
        ++n_waic;
        elpd_sum += s->waic.elpd;
        dev_sum += s->waic.deviance;
      }
      if (std::isfinite(s->aic)) {
        ++n_aic;
        aic_sum += s->aic;
      }
      bool best = s->has_waic;
      for (const auto& other : r.models)
        if (other.kind != s->kind && other.ok && other.has_waic && s->has_waic && other.waic.elpd >= s->waic.elpd)
          best = false;
      if (best) ++row.n_best_elpd;
    }
    if (row.n_ok > 0) row.mean_auc = auc_sum / static_cast<double>(row.n_ok);
    if (n_waic > 0) {
      row.mean_elpd = elpd_sum / static_cast<double>(n_waic);
      row.mean_deviance = dev_sum / static_cast<double>(n_waic);
    }
    if (n_aic > 0) row.mean_aic = aic_sum / static_cast<double>(n_aic);
    if (row.n_ok > 0) rows.push_back(row);
  }
  return rows;
}

}  // namespace hjm
