#pragma once

// File formats:
//   instance  (JSON)  agents[] {lower, upper, pi, g, markets}, cap,
//                     price {base, slope_mean, slope_std}, graph [{i, j, w}]
//   reference (JSON)  x_star, lam_star, residual, method, instance_hash
//   trajectory (CSV)  iter,batch,nat_residual,consensus,constraint_violation,norm_dist

#include <sgne/comm_graph.hpp>
#include <sgne/common.hpp>
#include <sgne/diagnostics.hpp>
#include <sgne/game_model.hpp>
#include <sgne/solver.hpp>

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace sgne {

using json = nlohmann::json;

struct Instance {
  GameSpec game;
  DualGraph graph;
};

namespace detail {

inline json to_json_vec(const Vector& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Vector vec_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw ValidationError(what + ": expected an array");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t k = 0; k < j.size(); ++k) {
    if (!j[k].is_number()) throw ValidationError(what + ": expected numbers");
    v[static_cast<Index>(k)] = j[k].get<double>();
  }
  return v;
}

inline const json& field(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key))
    throw ValidationError(where + ": missing key '" + key + "'");
  return j.at(key);
}

}  // namespace detail

inline json instance_to_json(const Instance& inst) {
  const GameSpec& g = inst.game;
  json agents = json::array();
  for (const AgentSpec& a : g.agents) {
    agents.push_back({{"lower", detail::to_json_vec(a.omega.lower)},
                      {"upper", detail::to_json_vec(a.omega.upper)},
                      {"pi", a.quad_coeff},
                      {"g", detail::to_json_vec(a.lin_coeff)},
                      {"markets", selector_indices(a.market_map)}});
  }
  json edges = json::array();
  for (const Edge& e : inst.graph.edges())
    edges.push_back({{"i", e.i}, {"j", e.j}, {"w", e.w}});
  return {{"agents", agents},
          {"cap", detail::to_json_vec(g.coupling.cap)},
          {"price",
           {{"base", detail::to_json_vec(g.price.base_price)},
            {"slope_mean", detail::to_json_vec(g.price.slope_mean)},
            {"slope_std", detail::to_json_vec(g.price.slope_std)}}},
          {"graph", edges}};
}

inline Instance instance_from_json(const json& j) {
  Instance inst;
  const Vector cap = detail::vec_from_json(detail::field(j, "cap", "instance"), "cap");
  const Index m = cap.size();
  const json& agents = detail::field(j, "agents", "instance");
  if (!agents.is_array()) throw ValidationError("instance: agents must be an array");
  int id = 0;
  for (const json& a : agents) {
    const std::string where = "agents[" + std::to_string(id) + "]";
    AgentSpec ag;
    ag.id = id++;
    ag.omega.lower = detail::vec_from_json(detail::field(a, "lower", where), where + ".lower");
    ag.omega.upper = detail::vec_from_json(detail::field(a, "upper", where), where + ".upper");
    ag.quad_coeff = detail::field(a, "pi", where).get<double>();
    ag.lin_coeff = detail::vec_from_json(detail::field(a, "g", where), where + ".g");
    const auto markets = detail::field(a, "markets", where).get<std::vector<int>>();
    ag.market_map = selector_matrix(m, markets);
    inst.game.agents.push_back(std::move(ag));
  }
  const Index n_agents = inst.game.num_agents();
  inst.game.coupling = CouplingConstraints::equal_split(cap, n_agents);
  const json& price = detail::field(j, "price", "instance");
  inst.game.price.base_price =
      detail::vec_from_json(detail::field(price, "base", "price"), "price.base");
  inst.game.price.slope_mean =
      detail::vec_from_json(detail::field(price, "slope_mean", "price"), "price.slope_mean");
  inst.game.price.slope_std =
      detail::vec_from_json(detail::field(price, "slope_std", "price"), "price.slope_std");

  inst.graph = DualGraph(n_agents);
  if (j.contains("graph")) {
    for (const json& e : j.at("graph"))
      inst.graph.add_edge(detail::field(e, "i", "graph").get<Index>(),
                          detail::field(e, "j", "graph").get<Index>(),
                          e.value("w", 1.0));
  }
  return inst;
}

inline Instance load_instance(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open instance file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return instance_from_json(j);
}

inline void save_json(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << j.dump(2) << '\n';
}

/// FNV-1a over the canonical JSON text, as 16 hex digits.
inline std::string content_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string instance_hash(const Instance& inst) {
  return content_hash(instance_to_json(inst));
}

inline json kkt_to_json(const KktResidual& r) {
  return {{"stationarity", detail::to_json_vec(r.stationarity)},
          {"max_stationarity", r.max_stationarity()},
          {"primal_violation", r.primal_violation},
          {"complementarity", r.complementarity},
          {"consensus", r.consensus}};
}

inline json reference_to_json(const ReferenceSolution& ref, const std::string& hash) {
  return {{"x_star", detail::to_json_vec(ref.x_star)},
          {"lam_star", detail::to_json_vec(ref.lam_star)},
          {"residual", kkt_to_json(ref.residual)},
          {"method", ref.method},
          {"iterations", ref.iterations},
          {"instance_hash", hash}};
}

/// Reads x_star / lam_star; the residual is not trusted and left empty.
inline ReferenceSolution reference_from_json(const json& j) {
  ReferenceSolution r;
  r.x_star = detail::vec_from_json(detail::field(j, "x_star", "solution"), "x_star");
  r.lam_star = detail::vec_from_json(detail::field(j, "lam_star", "solution"), "lam_star");
  r.method = j.value("method", std::string("unknown"));
  r.iterations = j.value("iterations", 0L);
  return r;
}

inline const char* kTrajectoryHeader =
    "iter,batch,nat_residual,consensus,constraint_violation,norm_dist";

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_trajectory_csv(std::ostream& out, const RunReport& report) {
  out << kTrajectoryHeader << '\n';
  for (const RunRecord& r : report.records)
    out << r.iter << ',' << r.batch << ',' << format_double(r.nat_residual) << ','
        << format_double(r.consensus) << ',' << format_double(r.constraint_violation)
        << ',' << format_double(r.norm_dist) << '\n';
}

inline void write_trajectory_csv(const std::filesystem::path& path,
                                 const RunReport& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  write_trajectory_csv(out, report);
}

/// Parses a trajectory; errors name the offending row and column.
inline std::vector<RunRecord> read_trajectory_csv(std::istream& in) {
  static const char* columns[] = {"iter", "batch", "nat_residual", "consensus",
                                  "constraint_violation", "norm_dist"};
  std::string line;
  if (!std::getline(in, line) || line != kTrajectoryHeader)
    throw ValidationError("trajectory: header does not match contract");
  std::vector<RunRecord> out;
  long row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6)
      throw ValidationError("trajectory row " + std::to_string(row) + ": expected 6 columns");
    double v[6];
    for (int c = 0; c < 6; ++c) {
      std::size_t used = 0;
      try {
        v[c] = std::stod(cells[static_cast<std::size_t>(c)], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != cells[static_cast<std::size_t>(c)].size())
        throw ValidationError("trajectory row " + std::to_string(row) + " column " +
                              columns[c] + ": not a number");
    }
    RunRecord r;
    r.iter = static_cast<long>(v[0]);
    r.batch = static_cast<std::size_t>(v[1]);
    r.nat_residual = v[2];
    r.consensus = v[3];
    r.constraint_violation = v[4];
    r.norm_dist = v[5];
    out.push_back(r);
  }
  return out;
}

}  // namespace sgne
