#pragma once

// File formats: labeled CSV matrices, flat key=value run configs, network
// edge lists (CSV and Graphviz), and JSON reports.

#include "causalpred/estimators.hpp"
#include "causalpred/model.hpp"
#include "causalpred/types.hpp"
#include "causalpred/validation.hpp"

#include "json.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <unordered_map>
#include <vector>

namespace causalpred::io {

// ---------------------------------------------------------------------------
// CSV matrices
// ---------------------------------------------------------------------------

struct LabeledMatrix {
  Matrix values;
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::string corner = "condition";
};

namespace detail {

/// Splits one CSV record; handles double-quoted fields with "" escapes.
inline std::vector<std::string> split_record(const std::string& line, std::size_t line_no, const std::string& source) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  if (quoted) throw ParseError(source + ":" + std::to_string(line_no) + ": unterminated quoted field");
  cells.push_back(std::move(cell));
  return cells;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Locale-independent parse; the whole cell must be consumed and finite.
inline bool parse_double(const std::string& text, double& out) {
  const std::string s = trim(text);
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+') ++first;
  const auto res = std::from_chars(first, last, out);
  return res.ec == std::errc() && res.ptr == last && std::isfinite(out);
}

inline std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += (c == '"') ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

}  // namespace detail

/// Header row of column names (first cell is the row-label header), then one
/// row per record: label followed by numeric cells.
inline LabeledMatrix parse_matrix_csv(std::istream& in, const std::string& source = "<input>") {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    rows.push_back(detail::split_record(line, line_no, source));
    line_numbers.push_back(line_no);
  }
  if (rows.empty()) throw ParseError(source + ": empty file, expected a header row");
  const auto& header = rows.front();
  if (header.size() < 2) throw ParseError(source + ":" + std::to_string(line_numbers[0]) + ": header needs at least one column name");
  if (rows.size() < 2) throw ParseError(source + ": no data rows");

  LabeledMatrix out;
  out.corner = detail::trim(header[0]);
  std::set<std::string> seen_cols;
  for (std::size_t c = 1; c < header.size(); ++c) {
    std::string name = detail::trim(header[c]);
    if (name.empty()) throw ParseError(source + ":" + std::to_string(line_numbers[0]) + ": empty column name at column " + std::to_string(c + 1));
    if (!seen_cols.insert(name).second)
      throw ParseError(source + ":" + std::to_string(line_numbers[0]) + ": duplicate column label '" + name + "' at column " + std::to_string(c + 1));
    out.col_labels.push_back(std::move(name));
  }
  const Index n = static_cast<Index>(rows.size() - 1);
  const Index m = static_cast<Index>(out.col_labels.size());
  out.values.resize(n, m);
  std::set<std::string> seen_rows;
  for (Index r = 0; r < n; ++r) {
    const auto& cells = rows[static_cast<std::size_t>(r + 1)];
    const std::string where = source + ":" + std::to_string(line_numbers[static_cast<std::size_t>(r + 1)]);
    if (static_cast<Index>(cells.size()) != m + 1)
      throw ParseError(where + ": ragged row with " + std::to_string(cells.size()) + " cells, expected " + std::to_string(m + 1));
    std::string label = detail::trim(cells[0]);
    if (!seen_rows.insert(label).second) throw ParseError(where + ": duplicate row label '" + label + "'");
    out.row_labels.push_back(std::move(label));
    for (Index c = 0; c < m; ++c) {
      double v = 0.0;
      if (!detail::parse_double(cells[static_cast<std::size_t>(c + 1)], v))
        throw ParseError(where + ": non-numeric cell '" + cells[static_cast<std::size_t>(c + 1)] + "' at column " +
                         std::to_string(c + 2) + " ('" + out.col_labels[static_cast<std::size_t>(c)] + "')");
      out.values(r, c) = v;
    }
  }
  return out;
}

inline LabeledMatrix load_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  return parse_matrix_csv(in, path.string());
}

/// Writes with 17 significant digits so values round-trip exactly.
inline void write_matrix_csv(std::ostream& out, const LabeledMatrix& m) {
  out << detail::quote_if_needed(m.corner);
  for (const auto& c : m.col_labels) out << ',' << detail::quote_if_needed(c);
  out << '\n';
  std::ostringstream cell;
  cell.imbue(std::locale::classic());
  cell << std::setprecision(17);
  for (Index r = 0; r < m.values.rows(); ++r) {
    out << detail::quote_if_needed(m.row_labels[static_cast<std::size_t>(r)]);
    for (Index c = 0; c < m.values.cols(); ++c) {
      cell.str("");
      cell << m.values(r, c);
      out << ',' << cell.str();
    }
    out << '\n';
  }
}

inline void write_matrix_csv(const std::filesystem::path& path, const LabeledMatrix& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path.string() + "'");
  write_matrix_csv(out, m);
}

/// Two-column CSV (old,new) of label renames applied before alignment.
inline std::unordered_map<std::string, std::string> load_rename_map(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::unordered_map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty() || line[0] == '#') continue;
    auto cells = detail::split_record(line, line_no, path.string());
    if (cells.size() != 2) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected old,new");
    out[detail::trim(cells[0])] = detail::trim(cells[1]);
  }
  return out;
}

inline void apply_renames(std::vector<std::string>& labels, const std::unordered_map<std::string, std::string>& renames) {
  for (auto& l : labels) {
    auto it = renames.find(l);
    if (it != renames.end()) l = it->second;
  }
}

/// Reorders columns to match names; every name must be present.
inline Matrix align_columns(const LabeledMatrix& m, const std::vector<std::string>& names, const std::string& what) {
  std::unordered_map<std::string, Index> pos;
  for (std::size_t c = 0; c < m.col_labels.size(); ++c) pos[m.col_labels[c]] = static_cast<Index>(c);
  Matrix out(m.values.rows(), static_cast<Index>(names.size()));
  for (std::size_t k = 0; k < names.size(); ++k) {
    auto it = pos.find(names[k]);
    if (it == pos.end()) throw DimensionError(what + ": missing column '" + names[k] + "'");
    out.col(static_cast<Index>(k)) = m.values.col(it->second);
  }
  return out;
}

inline Matrix align_rows(const LabeledMatrix& m, const std::vector<std::string>& names, const std::string& what) {
  std::unordered_map<std::string, Index> pos;
  for (std::size_t r = 0; r < m.row_labels.size(); ++r) pos[m.row_labels[r]] = static_cast<Index>(r);
  Matrix out(static_cast<Index>(names.size()), m.values.cols());
  for (std::size_t k = 0; k < names.size(); ++k) {
    auto it = pos.find(names[k]);
    if (it == pos.end()) throw DimensionError(what + ": missing row '" + names[k] + "'");
    out.row(static_cast<Index>(k)) = m.values.row(it->second);
  }
  return out;
}

inline ConditionMatrix to_conditions(const LabeledMatrix& m) { return ConditionMatrix(m.values, m.col_labels); }
inline ResponseMatrix to_responses(const LabeledMatrix& m) { return ResponseMatrix(m.values, m.col_labels); }

/// Target map file: rows are responses, columns are drugs; aligned by name.
inline TargetMap to_targets(const LabeledMatrix& m, const std::vector<std::string>& responses,
                            const std::vector<std::string>& drugs) {
  return TargetMap(align_columns(LabeledMatrix{align_rows(m, responses, "target map"), responses, m.col_labels, m.corner},
                                 drugs, "target map"));
}

/// Square p x p file with response names on both axes; nonzero means allowed.
inline EdgeMask to_mask(const LabeledMatrix& m, const std::vector<std::string>& responses) {
  const Matrix rows = align_rows(m, responses, "edge mask");
  const Matrix sq = align_columns(LabeledMatrix{rows, responses, m.col_labels, m.corner}, responses, "edge mask");
  return EdgeMask(sq.array() != 0.0);
}

/// Square interaction file with response names on both axes.
inline Matrix to_square(const LabeledMatrix& m, const std::vector<std::string>& names, const std::string& what) {
  const Matrix rows = align_rows(m, names, what);
  return align_columns(LabeledMatrix{rows, names, m.col_labels, m.corner}, names, what);
}

struct DatasetFiles {
  std::filesystem::path conditions;
  std::filesystem::path responses;
  std::optional<std::filesystem::path> targets;
  std::optional<std::filesystem::path> renames;
};

struct LoadedDataset {
  Dataset data;
  std::vector<std::string> condition_labels;
};

/// Loads paired condition/response tables. Response rows are matched to
/// condition rows by label; the target map is aligned by response and drug name.
inline LoadedDataset load_dataset(const DatasetFiles& files) {
  LabeledMatrix cond = load_matrix_csv(files.conditions);
  LabeledMatrix resp = load_matrix_csv(files.responses);
  std::optional<LabeledMatrix> targ;
  if (files.targets) targ = load_matrix_csv(*files.targets);
  if (files.renames) {
    const auto renames = load_rename_map(*files.renames);
    apply_renames(cond.col_labels, renames);
    apply_renames(resp.col_labels, renames);
    if (targ) {
      apply_renames(targ->row_labels, renames);
      apply_renames(targ->col_labels, renames);
    }
  }
  if (cond.values.rows() != resp.values.rows())
    throw DimensionError("condition file has " + std::to_string(cond.values.rows()) + " rows but response file has " +
                         std::to_string(resp.values.rows()));
  LabeledMatrix aligned = resp;
  aligned.values = align_rows(resp, cond.row_labels, "response file");
  aligned.row_labels = cond.row_labels;

  LoadedDataset out{{to_conditions(cond), to_responses(aligned), std::nullopt}, cond.row_labels};
  if (targ) out.data.b = to_targets(*targ, aligned.col_labels, cond.col_labels);
  return out;
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// Flat key = value file; '#' starts a comment line. Keys outside the allowed
/// set are rejected, and keys listed as paths must name existing files.
class RunConfig {
 public:
  static RunConfig parse(std::istream& in, const std::set<std::string>& allowed,
                         const std::set<std::string>& path_keys = {}, const std::string& source = "<config>") {
    RunConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::string t = detail::trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      const std::string where = source + ":" + std::to_string(line_no);
      if (eq == std::string::npos) throw ParseError(where + ": expected key = value");
      const std::string key = detail::trim(t.substr(0, eq));
      const std::string value = detail::trim(t.substr(eq + 1));
      if (!allowed.count(key)) throw ParseError(where + ": unknown key '" + key + "'");
      if (cfg.values_.count(key)) throw ParseError(where + ": duplicate key '" + key + "'");
      if (path_keys.count(key) && !std::filesystem::exists(value))
        throw ParseError(where + ": path for '" + key + "' does not exist: " + value);
      cfg.values_[key] = value;
    }
    return cfg;
  }

  static RunConfig load(const std::filesystem::path& path, const std::set<std::string>& allowed,
                        const std::set<std::string>& path_keys = {}) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config '" + path.string() + "'");
    return parse(in, allowed, path_keys, path.string());
  }

  const std::map<std::string, std::string>& values() const { return values_; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

 private:
  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Network export
// ---------------------------------------------------------------------------

struct Edge {
  std::string source;
  std::string target;
  double weight = 0.0;
};

struct NetworkExport {
  std::vector<Edge> edges;
  double threshold = 0.2;
};

/// Edges j -> i for every A-form entry with |A(i, j)| >= threshold.
/// W-form input is converted first; its diagonal holds decay rates, so no
/// self loops are drawn from it.
inline NetworkExport export_network(const InteractionMatrix& m, const std::vector<std::string>& names,
                                    double threshold = 0.2) {
  if (static_cast<Index>(names.size()) != m.size()) throw DimensionError("network export: name count mismatch");
  if (!(threshold >= 0.0)) throw InvalidArgument("network export threshold must be >= 0");
  const bool from_w = m.form() == InteractionForm::W;
  const InteractionMatrix a = from_w ? w_to_dag(m) : m;
  NetworkExport out;
  out.threshold = threshold;
  for (Index j = 0; j < a.size(); ++j)
    for (Index i = 0; i < a.size(); ++i) {
      if (from_w && i == j) continue;
      const double v = a.values()(i, j);
      if (std::abs(v) >= threshold && v != 0.0)
        out.edges.push_back({names[static_cast<std::size_t>(j)], names[static_cast<std::size_t>(i)], v});
    }
  return out;
}

inline void write_network_csv(std::ostream& out, const NetworkExport& net) {
  out << "source,target,weight\n" << std::setprecision(17);
  for (const auto& e : net.edges)
    out << detail::quote_if_needed(e.source) << ',' << detail::quote_if_needed(e.target) << ',' << e.weight << '\n';
}

/// Graphviz digraph; pen width proportional to |weight|.
inline void write_network_dot(std::ostream& out, const NetworkExport& net, const std::string& name = "network") {
  auto q = [](const std::string& s) {
    std::string r = "\"";
    for (char c : s) r += (c == '"') ? std::string("\\\"") : std::string(1, c);
    return r + "\"";
  };
  out << "digraph " << q(name) << " {\n";
  out << "  // |weight| >= " << net.threshold << "\n";
  std::set<std::string> nodes;
  for (const auto& e : net.edges) {
    nodes.insert(e.source);
    nodes.insert(e.target);
  }
  for (const auto& n : nodes) out << "  " << q(n) << ";\n";
  for (const auto& e : net.edges) {
    std::ostringstream w;
    w << std::setprecision(6) << e.weight;
    std::ostringstream pw;
    pw << std::setprecision(4) << std::max(0.5, 2.0 * std::abs(e.weight));
    out << "  " << q(e.source) << " -> " << q(e.target) << " [label=\"" << w.str() << "\", penwidth=" << pw.str()
        << (e.weight < 0 ? ", style=dashed" : "") << "];\n";
  }
  out << "}\n";
}

// ---------------------------------------------------------------------------
// JSON reports
// ---------------------------------------------------------------------------

using nlohmann::json;

inline json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json to_json(const FitReport& r) {
  return json{{"final_objective", r.final_objective},
              {"iterations", r.iterations},
              {"converged", r.converged},
              {"unique_solution", r.unique_solution},
              {"diagnostic", r.diagnostic},
              {"objective_trace", r.objective_trace}};
}

inline json to_json(const MetricReport& r, bool include_folds = true) {
  json j{{"pearson_r", optional_number(r.pearson_r)},
         {"mae", r.mae},
         {"n_points", r.n_points},
         {"status", r.status},
         {"pooling", r.pooling},
         {"dropped_conditions", r.dropped_conditions}};
  json per_response = json::array();
  for (const auto& v : r.per_response_r) per_response.push_back(optional_number(v));
  j["per_response_r"] = per_response;
  if (include_folds) {
    json folds = json::array();
    for (const auto& f : r.folds)
      folds.push_back({{"label", f.label}, {"pearson_r", optional_number(f.pearson_r)}, {"mae", f.mae}, {"n_points", f.n_points}});
    j["folds"] = folds;
  }
  return j;
}

inline json to_json(const LodoReport& r) {
  json per = json::array();
  for (const auto& m : r.per_drug) {
    json e = to_json(m, false);
    e["held_out"] = m.folds.empty() ? "" : m.folds.front().label;
    per.push_back(e);
  }
  return json{{"mean_pearson_r", optional_number(r.mean_r)}, {"mean_mae", r.mean_mae}, {"per_drug", per}};
}

/// condition, response, observed, predicted
inline void write_scatter_csv(std::ostream& out, const std::vector<ScatterPoint>& points,
                              const std::vector<std::string>& condition_labels,
                              const std::vector<std::string>& response_labels) {
  out << "condition,response,observed,predicted\n" << std::setprecision(17);
  for (const auto& p : points)
    out << detail::quote_if_needed(condition_labels[static_cast<std::size_t>(p.condition)]) << ','
        << detail::quote_if_needed(response_labels[static_cast<std::size_t>(p.response)]) << ',' << p.observed << ','
        << p.predicted << '\n';
}

}  // namespace causalpred::io
