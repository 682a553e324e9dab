#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "kronfisher/diagnostics.hpp"
#include "kronfisher/nn/network.hpp"

namespace kronfisher {

using json = nlohmann::json;

// Shortest round-trip decimal form, so CSV output is stable byte for byte.
inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline json matrix_to_json(const Tensor& m) {
  require_matrix(m, "matrix_to_json");
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Tensor matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array() || j.empty() || !j[0].is_array() || j[0].empty())
    throw FormatError(what + ": expected a non-empty 2-D array");
  const std::size_t rows = j.size(), cols = j[0].size();
  Tensor m({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols) throw FormatError(what + ": ragged matrix");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) throw FormatError(what + ": non-numeric entry");
      m(r, c) = j[r][c].get<double>();
    }
  }
  return m;
}

inline std::vector<double> vector_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw FormatError(what + ": expected an array");
  std::vector<double> v;
  for (const auto& x : j) {
    if (!x.is_number()) throw FormatError(what + ": non-numeric entry");
    v.push_back(x.get<double>());
  }
  return v;
}

// ---------------------------------------------------------------------------
// Kronecker-factor snapshots
// ---------------------------------------------------------------------------

struct LayerFactorSnapshot {
  std::size_t layer_id = 0;
  std::string kind;
  std::vector<double> H_diag, S_diag;
  std::uint64_t step = 0;
  std::optional<Tensor> H_full, S_full;
};

struct KfSnapshot {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  std::vector<LayerFactorSnapshot> layers;
};

inline json snapshot_to_json(const KfSnapshot& s) {
  json layers = json::array();
  for (const auto& l : s.layers) {
    json j = {{"layer_id", l.layer_id}, {"kind", l.kind}, {"H_diag", l.H_diag},
              {"S_diag", l.S_diag}, {"step", l.step}};
    if (l.H_full) j["H_full"] = matrix_to_json(*l.H_full);
    if (l.S_full) j["S_full"] = matrix_to_json(*l.S_full);
    layers.push_back(std::move(j));
  }
  return {{"epoch", s.epoch}, {"step", s.step}, {"layers", std::move(layers)}};
}

inline KfSnapshot snapshot_from_json(const json& j) {
  if (!j.is_object() || !j.contains("layers") || !j["layers"].is_array())
    throw FormatError("snapshot: missing 'layers' array");
  KfSnapshot s;
  if (j.contains("epoch")) s.epoch = j["epoch"].get<std::size_t>();
  if (j.contains("step")) s.step = j["step"].get<std::uint64_t>();
  for (const auto& l : j["layers"]) {
    if (!l.is_object() || !l.contains("layer_id") || !l.contains("H_diag") ||
        !l.contains("S_diag"))
      throw FormatError("snapshot: each layer needs layer_id, H_diag and S_diag");
    LayerFactorSnapshot ls;
    if (!l["layer_id"].is_number_unsigned()) throw FormatError("snapshot: bad layer_id");
    ls.layer_id = l["layer_id"].get<std::size_t>();
    ls.kind = l.value("kind", std::string("unknown"));
    ls.step = l.value("step", std::uint64_t{0});
    const std::string where = "snapshot layer " + std::to_string(ls.layer_id);
    ls.H_diag = vector_from_json(l["H_diag"], where + " H_diag");
    ls.S_diag = vector_from_json(l["S_diag"], where + " S_diag");
    if (ls.H_diag.empty() || ls.S_diag.empty()) throw FormatError(where + ": empty factor");
    if (l.contains("H_full")) ls.H_full = matrix_from_json(l["H_full"], where + " H_full");
    if (l.contains("S_full")) ls.S_full = matrix_from_json(l["S_full"], where + " S_full");
    s.layers.push_back(std::move(ls));
  }
  return s;
}

inline KfSnapshot load_snapshot(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open snapshot " + path);
  try {
    return snapshot_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw FormatError("snapshot " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Models and reports
// ---------------------------------------------------------------------------

inline json model_to_json(const nn::Network& net) {
  json layers = json::array();
  for (std::size_t i = 0; i < net.size(); ++i) {
    json params = json::array();
    for (const auto& p : net.layer(i).parameters()) {
      const auto d = p.value.data();
      params.push_back({{"name", p.name},
                        {"shape", p.value.shape()},
                        {"values", std::vector<double>(d.begin(), d.end())}});
    }
    layers.push_back(
        {{"layer_id", i}, {"kind", nn::kind_name(net.layer(i).kind())}, {"params", params}});
  }
  return {{"layers", layers}};
}

// +inf and NaN have no JSON encoding; they are written as null.
inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json landscape_to_json(const LandscapeExport& ex, const std::string& optimizer) {
  json w = json::array();
  for (const auto& p : ex.trajectory) w.push_back({p[0], p[1]});
  return {{"optimizer", optimizer},
          {"w", w},
          {"loss", ex.losses},
          {"grid",
           {{"xmin", ex.grid.xmin},
            {"xmax", ex.grid.xmax},
            {"ymin", ex.grid.ymin},
            {"ymax", ex.grid.ymax},
            {"n", ex.grid.n}}}};
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace kronfisher
