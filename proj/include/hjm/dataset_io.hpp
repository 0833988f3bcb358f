#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hjm/types.hpp"

namespace hjm {

/*
 * Panel text format (comma separated, one header row per block):
 *
 *   subject,time,a,b            one row per subject-time, time is 1-based
 *   subject,y[,u_a,u_b,z]       one row per subject; latent columns only for
 *                               simulated data
 *
 * Reals are written with 17 significant digits so a write/read cycle is exact.
 */

inline std::string format_real(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void write_panel(std::ostream& os, const PanelDataset& data) {
  data.validate();
  const auto n = data.n_subjects(), T = data.n_times();
  os << "subject,time,a,b\n";
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index t = 0; t < T; ++t)
      os << i << ',' << (t + 1) << ',' << data.a(i, t) << ',' << format_real(data.b(i, t)) << '\n';
  os << (data.true_latents ? "subject,y,u_a,u_b,z\n" : "subject,y\n");
  for (Eigen::Index i = 0; i < n; ++i) {
    os << i << ',' << data.y[i];
    if (data.true_latents) {
      const auto& l = (*data.true_latents)[static_cast<std::size_t>(i)];
      os << ',' << format_real(l.u_a) << ',' << format_real(l.u_b) << ',' << format_real(l.z);
    }
    os << '\n';
  }
}

inline void write_panel(const std::string& path, const PanelDataset& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  write_panel(os, data);
  if (!os) throw std::runtime_error("write failed: " + path);
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_real(const std::string& s) {
  std::size_t pos = 0;
  double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("bad number: " + s);
  return v;
}

inline long parse_int(const std::string& s) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw std::invalid_argument("bad integer: " + s);
  return v;
}

}  // namespace detail

inline PanelDataset read_panel(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "subject,time,a,b")
    throw std::runtime_error("panel file: missing 'subject,time,a,b' header");
  struct Obs { long subject, time; int a; double b; };
  std::vector<Obs> obs;
  bool have_latents = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line.rfind("subject,y", 0) == 0) {
      have_latents = line == "subject,y,u_a,u_b,z";
      if (!have_latents && line != "subject,y")
        throw std::runtime_error("panel file: bad outcome header: " + line);
      break;
    }
    const auto f = detail::split_csv(line);
    if (f.size() != 4) throw std::runtime_error("panel file: expected 4 fields: " + line);
    obs.push_back({detail::parse_int(f[0]), detail::parse_int(f[1]),
                   static_cast<int>(detail::parse_int(f[2])), detail::parse_real(f[3])});
  }
  long n = 0, T = 0;
  for (const auto& o : obs) {
    n = std::max(n, o.subject + 1);
    T = std::max(T, o.time);
  }
  if (static_cast<long>(obs.size()) != n * T)
    throw std::runtime_error("panel file: observations do not form a complete N x T panel");
  PanelDataset data;
  data.a = RowMatrixXi::Constant(n, T, -1);
  data.b = RowMatrixXd::Zero(n, T);
  data.y = Eigen::VectorXi::Constant(n, -1);
  for (const auto& o : obs) {
    if (o.subject < 0 || o.time < 1) throw std::runtime_error("panel file: bad subject/time index");
    data.a(o.subject, o.time - 1) = o.a;
    data.b(o.subject, o.time - 1) = o.b;
  }
  if (have_latents) data.true_latents.emplace(static_cast<std::size_t>(n));
  long rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    if (f.size() != (have_latents ? 5u : 2u))
      throw std::runtime_error("panel file: bad outcome row: " + line);
    const long i = detail::parse_int(f[0]);
    if (i < 0 || i >= n) throw std::runtime_error("panel file: outcome subject out of range");
    data.y[i] = static_cast<int>(detail::parse_int(f[1]));
    if (have_latents)
      (*data.true_latents)[static_cast<std::size_t>(i)] = {
          detail::parse_real(f[2]), detail::parse_real(f[3]), detail::parse_real(f[4])};
    ++rows;
  }
  if (rows != n) throw std::runtime_error("panel file: expected one outcome row per subject");
  data.validate();
  return data;
}

inline PanelDataset read_panel(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  return read_panel(is);
}

}  // namespace hjm
