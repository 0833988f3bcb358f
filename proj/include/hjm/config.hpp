#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "hjm/dataset_io.hpp"
#include "hjm/priors.hpp"
#include "hjm/sampler.hpp"
#include "hjm/simulate.hpp"

namespace hjm {

/*
 * Run configuration in INI form. Sections and keys:
 *
 *   [run]      seed, jobs, format, latent_draws
 *   [scenario] n_subjects, n_times, label
 *   [params]   any of the 19 parameter names (true values for simulation)
 *   [grid]     preset (desk|full), rho_values, feedback_values,
 *              latent_effect_values, sample_sizes (comma lists), replicates,
 *              n_times
 *   [chains]   chains, iters, warmup, adapt_delta, max_tree_depth
 *   [priors]   coef_sd, scale_prior
 *   [mle]      nodes
 *
 * Precedence, lowest first: built-in defaults, the grid preset, the file,
 * command-line flags. The single seed feeds simulation, sampling and the
 * study's per-replicate seed derivation.
 */
struct RunConfig {
  std::uint64_t seed = 20240601;
  std::size_t jobs = 1;
  std::string format = "csv,md,svg";
  bool latent_draws = false;
  ScenarioConfig scenario;
  std::string grid_preset = "desk";
  StudyGrid grid = StudyGrid::desk_default();
  ChainConfig chains;
  PriorConfig priors;
  int nodes = 9;

  /// Pushes the shared seed and job count into the component configs.
  void resolve() {
    scenario.seed = seed;
    chains.seed = seed;
    grid.base_seed = seed;
    chains.jobs = jobs;
  }

  void validate() const {
    if (jobs < 1) throw std::invalid_argument("config: run.jobs must be positive");
    if (nodes < 1 || nodes > 50) throw std::invalid_argument("config: mle.nodes must lie in [1, 50]");
    scenario.validate();
    grid.validate();
    chains.validate();
    priors.validate();
  }
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

template <class T>
T parse_value(const std::string& key, const std::string& text) {
  std::istringstream is(text);
  T v{};
  is >> v;
  if (!is || !(is >> std::ws).eof()) throw ConfigError("config: bad value for " + key + ": '" + text + "'");
  return v;
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::string item;
  std::istringstream is(text);
  while (std::getline(is, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ConfigError("config: empty list item in " + key);
    out.push_back(parse_value<T>(key, item.substr(b, e - b + 1)));
  }
  if (out.empty()) throw ConfigError("config: empty list for " + key);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("config: bad boolean for " + key + ": '" + text + "'");
}

/// Shortest text that reads back as the same double.
inline std::string short_real(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (k) s += ',';
    if constexpr (std::is_floating_point_v<T>)
      s += short_real(v[k]);
    else
      s += std::to_string(v[k]);
  }
  return s;
}

inline StudyGrid grid_preset(const std::string& name) {
  if (name == "desk") return StudyGrid::desk_default();
  if (name == "full") return StudyGrid::full_design();
  throw ConfigError("config: unknown grid preset '" + name + "' (expected desk or full)");
}

}  // namespace detail

/// Applies one dotted key ("section.key") to the configuration.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  const auto dot = key.find('.');
  if (dot == std::string::npos) throw ConfigError("config: key outside a section: " + key);
  const std::string section = key.substr(0, dot), name = key.substr(dot + 1);
  if (section == "run") {
    if (name == "seed") c.seed = parse_value<std::uint64_t>(key, value);
    else if (name == "jobs") c.jobs = parse_value<std::size_t>(key, value);
    else if (name == "format") c.format = value;
    else if (name == "latent_draws") c.latent_draws = parse_bool(key, value);
    else throw ConfigError("config: unknown key " + key);
  } else if (section == "scenario") {
    if (name == "n_subjects") c.scenario.n_subjects = parse_value<long>(key, value);
    else if (name == "n_times") c.scenario.n_times = parse_value<long>(key, value);
    else if (name == "label") c.scenario.label = value;
    else throw ConfigError("config: unknown key " + key);
  } else if (section == "params") {
    std::size_t k = 0;
    try {
      k = param_index(name);
    } catch (const std::invalid_argument&) {
      throw ConfigError("config: unknown key " + key);
    }
    c.scenario.true_params.set(k, parse_value<double>(key, value));
  } else if (section == "grid") {
    if (name == "preset") {
      c.grid_preset = value;
      c.grid = grid_preset(value);
    } else if (name == "rho_values") c.grid.rho_values = parse_list<double>(key, value);
    else if (name == "feedback_values") c.grid.feedback_values = parse_list<double>(key, value);
    else if (name == "latent_effect_values") c.grid.latent_effect_values = parse_list<double>(key, value);
    else if (name == "sample_sizes") c.grid.sample_sizes = parse_list<long>(key, value);
    else if (name == "replicates") c.grid.replicates_per_cell = parse_value<long>(key, value);
    else if (name == "n_times") c.grid.n_times = parse_value<long>(key, value);
    else throw ConfigError("config: unknown key " + key);
  } else if (section == "chains") {
    if (name == "chains") c.chains.n_chains = parse_value<int>(key, value);
    else if (name == "iters") c.chains.iterations = parse_value<int>(key, value);
    else if (name == "warmup") c.chains.warmup = parse_value<int>(key, value);
    else if (name == "adapt_delta") c.chains.target_accept = parse_value<double>(key, value);
    else if (name == "max_tree_depth") c.chains.max_tree_depth = parse_value<int>(key, value);
    else throw ConfigError("config: unknown key " + key);
  } else if (section == "priors") {
    if (name == "coef_sd") c.priors.coef_sd = parse_value<double>(key, value);
    else if (name == "scale_prior") c.priors.scale_prior = parse_value<double>(key, value);
    else throw ConfigError("config: unknown key " + key);
  } else if (section == "mle") {
    if (name == "nodes") c.nodes = parse_value<int>(key, value);
    else throw ConfigError("config: unknown key " + key);
  } else {
    throw ConfigError("config: unknown section [" + section + "]");
  }
}

/// Reads INI text on top of `base`. The grid preset is applied before the
/// other grid keys regardless of their order in the file.
inline RunConfig parse_config(std::istream& is, RunConfig base = {}) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (auto grid = tree.get_child_optional("grid"))
    if (auto preset = grid->get_optional<std::string>("preset")) apply_setting(base, "grid.preset", *preset);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError("config: key outside a section: " + section);
    for (const auto& [key, value] : body) {
      if (section == "grid" && key == "preset") continue;
      apply_setting(base, section + "." + key, value.data());
    }
  }
  return base;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  return parse_config(is, std::move(base));
}

/// The fully resolved configuration in the same INI form; parse_config of
/// this text reproduces the configuration exactly.
inline void write_config(std::ostream& os, const RunConfig& c) {
  using detail::join;
  using detail::short_real;
  os << "[run]\nseed = " << c.seed << "\njobs = " << c.jobs << "\nformat = " << c.format
     << "\nlatent_draws = " << (c.latent_draws ? "true" : "false") << "\n\n";
  os << "[scenario]\nn_subjects = " << c.scenario.n_subjects << "\nn_times = " << c.scenario.n_times
     << "\nlabel = " << c.scenario.label << "\n\n";
  os << "[params]\n";
  const auto v = c.scenario.true_params.to_array();
  for (std::size_t k = 0; k < kNumParams; ++k) os << kParamNames[k] << " = " << short_real(v[k]) << '\n';
  os << "\n[grid]\npreset = " << c.grid_preset << "\nrho_values = " << join(c.grid.rho_values)
     << "\nfeedback_values = " << join(c.grid.feedback_values)
     << "\nlatent_effect_values = " << join(c.grid.latent_effect_values)
     << "\nsample_sizes = " << join(c.grid.sample_sizes) << "\nreplicates = " << c.grid.replicates_per_cell
     << "\nn_times = " << c.grid.n_times << "\n\n";
  os << "[chains]\nchains = " << c.chains.n_chains << "\niters = " << c.chains.iterations
     << "\nwarmup = " << c.chains.warmup << "\nadapt_delta = " << short_real(c.chains.target_accept)
     << "\nmax_tree_depth = " << c.chains.max_tree_depth << "\n\n";
  os << "[priors]\ncoef_sd = " << short_real(c.priors.coef_sd)
     << "\nscale_prior = " << short_real(c.priors.scale_prior) << "\n\n";
  os << "[mle]\nnodes = " << c.nodes << '\n';
}

inline bool same_config(const RunConfig& a, const RunConfig& b) {
  std::ostringstream x, y;
  write_config(x, a);
  write_config(y, b);
  return x.str() == y.str();
}

}  // namespace hjm
