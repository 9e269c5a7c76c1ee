#pragma once

// Chain-trace CSV read/write and the JSON convergence report built from it.

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <string>
#include <vector>

#include "gdiff/diagnostics.hpp"
#include "gdiff/error.hpp"
#include "gdiff/gibbs.hpp"

namespace gdiff {

inline constexpr double kRHatFlag = 1.1;
inline constexpr double kEssWarnFraction = 0.1;

/// Shortest text that round-trips; nan / inf / -inf spelled out.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline std::vector<std::string> parameter_names(std::size_t n_params) {
  std::vector<std::string> names{"sigma"};
  for (std::size_t i = 1; i < n_params; ++i) names.push_back("spectral_" + std::to_string(i - 1));
  return names;
}

inline std::string chain_csv(const ChainTrace& tr, std::size_t n_params) {
  std::ostringstream s;
  s << "iter,chain";
  for (const auto& n : parameter_names(n_params)) s << ',' << n;
  s << ",accept,delta_H,wall_ms\n";
  for (std::size_t k = 0; k < tr.params.size(); ++k) {
    s << (k + 1) << ',' << tr.chain;
    for (double v : tr.params[k].to_vector()) s << ',' << format_double(v);
    s << ',' << format_double(tr.accept[k]) << ',' << format_double(tr.delta_H[k]) << ','
      << format_double(tr.wall_ms[k]) << '\n';
  }
  return s.str();
}

struct TraceTable {
  std::vector<std::string> names;
  std::size_t chain = 0;
  std::vector<std::vector<double>> params;  ///< [iter][param]
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_cell(const std::string& cell, const std::string& where) {
  if (cell == "nan") return std::nan("");
  if (cell == "inf") return INFINITY;
  if (cell == "-inf") return -INFINITY;
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (cell.empty() || end != cell.c_str() + cell.size()) fail(ErrorKind::Io, "malformed number '" + cell + "' at " + where);
  return v;
}

}  // namespace detail

/// Parses one chain CSV; anything off-format is an I/O error.
inline TraceTable parse_chain_csv(const std::string& text, const std::string& name) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Io, name + ": empty trace file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv_line(line);
  const bool ok = header.size() >= 6 && header[0] == "iter" && header[1] == "chain" && header[2] == "sigma" &&
                  header[header.size() - 3] == "accept" && header[header.size() - 2] == "delta_H" &&
                  header.back() == "wall_ms";
  if (!ok) fail(ErrorKind::Io, name + ": malformed trace header '" + line + "'");
  TraceTable t;
  t.names.assign(header.begin() + 2, header.end() - 3);
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = detail::split_csv_line(line);
    const std::string where = name + ":" + std::to_string(row);
    if (cells.size() != header.size()) fail(ErrorKind::Io, where + ": expected " + std::to_string(header.size()) + " columns");
    const double chain = detail::parse_cell(cells[1], where);
    if (row == 2) t.chain = static_cast<std::size_t>(chain);
    std::vector<double> p;
    for (std::size_t c = 2; c < cells.size() - 3; ++c) p.push_back(detail::parse_cell(cells[c], where));
    for (std::size_t c = cells.size() - 3; c < cells.size(); ++c) detail::parse_cell(cells[c], where);
    detail::parse_cell(cells[0], where);
    t.params.push_back(std::move(p));
  }
  return t;
}

/// draws[chain][iter][param] -> R-hat / ESS report with flags.
inline nlohmann::ordered_json convergence_report(const std::vector<std::vector<std::vector<double>>>& draws,
                                                 const std::vector<std::string>& names) {
  nlohmann::ordered_json j;
  j["n_chains"] = draws.size();
  j["n_draws"] = draws.empty() ? 0 : draws.front().size();
  j["r_hat_threshold"] = kRHatFlag;
  auto notes = nlohmann::ordered_json::array();
  auto params = nlohmann::ordered_json::array();
  bool flagged = false;
  const std::size_t n = draws.empty() ? 0 : draws.front().size();
  for (std::size_t p = 0; p < names.size(); ++p) {
    nlohmann::ordered_json e;
    e["name"] = names[p];
    std::vector<std::vector<double>> chains;
    for (const auto& c : draws) {
      std::vector<double> col;
      for (const auto& row : c) col.push_back(row[p]);
      chains.push_back(std::move(col));
    }
    if (chains.size() >= 2 && n >= 4) {
      const auto r = r_hat(chains);
      e["r_hat"] = std::isfinite(r.value) ? nlohmann::ordered_json(r.value) : nlohmann::ordered_json("inf");
      e["degenerate"] = r.degenerate;
      const bool bad = r.degenerate || !(r.value < kRHatFlag);
      e["flagged"] = bad;
      flagged = flagged || bad;
    } else {
      e["r_hat"] = nullptr;
      e["flagged"] = false;
    }
    auto ess_list = nlohmann::ordered_json::array();
    auto warn = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < chains.size(); ++c) {
      if (chains[c].size() < 8) {
        ess_list.push_back(nullptr);
        continue;
      }
      const auto es = ess(chains[c]);
      ess_list.push_back(es.value);
      if (es.degenerate || es.value < kEssWarnFraction * static_cast<double>(chains[c].size())) warn.push_back(c);
    }
    e["ess"] = ess_list;
    e["low_ess_chains"] = warn;
    params.push_back(std::move(e));
  }
  if (draws.size() < 2) notes.push_back("single chain: R-hat omitted, ESS still computed");
  if (n < 4 && draws.size() >= 2) notes.push_back("fewer than 4 draws per chain: R-hat omitted");
  if (n < 8) notes.push_back("fewer than 8 draws per chain: ESS omitted");
  j["parameters"] = params;
  j["flagged"] = flagged;
  j["notes"] = notes;
  return j;
}

}  // namespace gdiff
