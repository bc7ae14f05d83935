#ifndef SVYDPD_IO_HPP
#define SVYDPD_IO_HPP

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "svydpd/inference.hpp"
#include "svydpd/simulate.hpp"
#include "svydpd/types.hpp"

namespace svydpd {

using Json = nlohmann::ordered_json;

/// Formats a double with 17 significant digits, enough to reproduce the
/// exact bit pattern on re-parse.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace detail {

inline void escape_json_string(const std::string& s, std::string& out) {
  out += '"';
  for (unsigned char ch : s) {
    switch (ch) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\b': out += "\\b"; break;
      case '\f': out += "\\f"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (ch < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", ch);
          out += buf;
        } else {
          out += static_cast<char>(ch);
        }
    }
  }
  out += '"';
}

inline bool array_is_flat(const Json& arr) {
  for (const auto& item : arr)
    if (item.is_array() || item.is_object()) return false;
  return true;
}

inline void dump_json(const Json& j, std::string& out, int depth) {
  const std::string pad(static_cast<std::size_t>(depth) * 2, ' ');
  const std::string pad_in(static_cast<std::size_t>(depth + 1) * 2, ' ');
  switch (j.type()) {
    case nlohmann::detail::value_t::null: out += "null"; break;
    case nlohmann::detail::value_t::boolean:
      out += j.get<bool>() ? "true" : "false";
      break;
    case nlohmann::detail::value_t::number_integer:
      out += std::to_string(j.get<long long>());
      break;
    case nlohmann::detail::value_t::number_unsigned:
      out += std::to_string(j.get<unsigned long long>());
      break;
    case nlohmann::detail::value_t::number_float: {
      const double v = j.get<double>();
      if (std::isfinite(v))
        out += format_double(v);
      else
        out += "null";
      break;
    }
    case nlohmann::detail::value_t::string:
      escape_json_string(j.get<std::string>(), out);
      break;
    case nlohmann::detail::value_t::array: {
      if (j.empty()) {
        out += "[]";
        break;
      }
      if (array_is_flat(j)) {
        out += '[';
        bool first = true;
        for (const auto& item : j) {
          if (!first) out += ", ";
          first = false;
          dump_json(item, out, depth);
        }
        out += ']';
        break;
      }
      out += "[\n";
      bool first = true;
      for (const auto& item : j) {
        if (!first) out += ",\n";
        first = false;
        out += pad_in;
        dump_json(item, out, depth + 1);
      }
      out += '\n';
      out += pad;
      out += ']';
      break;
    }
    case nlohmann::detail::value_t::object: {
      if (j.empty()) {
        out += "{}";
        break;
      }
      out += "{\n";
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ",\n";
        first = false;
        out += pad_in;
        escape_json_string(it.key(), out);
        out += ": ";
        dump_json(it.value(), out, depth + 1);
      }
      out += '\n';
      out += pad;
      out += '}';
      break;
    }
    default: out += "null"; break;
  }
}

} // namespace detail

/**
 * Deterministic JSON writer: 2-space indent, flat arrays on one line,
 * floats at 17 significant digits.  parse + dump is idempotent, which is
 * what makes report round-trips byte-identical.
 */
inline std::string json_to_string(const Json& j) {
  std::string out;
  detail::dump_json(j, out, 0);
  out += '\n';
  return out;
}

inline Json json_from_string(const std::string& text, const std::string& origin) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw parse_error(origin, 0, e.what());
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes via a temporary file in the same directory plus an atomic rename,
/// so a failed run never leaves a truncated output behind.
inline void atomic_write(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw input_error("cannot open '" + tmp + "' for writing");
    out << content;
    if (!out) throw input_error("failed writing '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    throw input_error("cannot rename '" + tmp + "' to '" + path + "': " +
                      std::strerror(errno));
  }
}

// ---------------------------------------------------------------------------
// Dataset CSV
// ---------------------------------------------------------------------------

/**
 * Column schema of a dataset file.  Declared either by a first-line pragma
 *   # {"d": 2, "k": 1, "intercept": "explicit"}
 * or by a sidecar file <data>.csv.json with the same object.  "intercept"
 * defaults to "implied": the file carries x_1..x_k and the loader prepends
 * the constant x_0 = 1.  With "explicit" the file carries x_0..x_k as-is.
 */
struct DatasetSchema {
  int d = 1;
  int k = 0;
  bool intercept_explicit = false;
};

namespace detail {

inline DatasetSchema schema_from_json(const Json& j, const std::string& origin) {
  DatasetSchema s;
  if (!j.is_object()) throw parse_error(origin, 1, "schema must be a JSON object");
  if (!j.contains("d") || !j.contains("k"))
    throw parse_error(origin, 1, "schema must declare both d and k");
  s.d = j.at("d").get<int>();
  s.k = j.at("k").get<int>();
  if (s.d < 1) throw parse_error(origin, 1, "schema d must be at least 1");
  if (s.k < 0) throw parse_error(origin, 1, "schema k must be nonnegative");
  if (j.contains("intercept")) {
    const std::string mode = j.at("intercept").get<std::string>();
    if (mode == "explicit")
      s.intercept_explicit = true;
    else if (mode != "implied")
      throw parse_error(origin, 1, "intercept must be 'implied' or 'explicit'");
  }
  return s;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  fields.push_back(cur);
  for (auto& f : fields) {
    std::size_t a = f.find_first_not_of(" \t");
    std::size_t b = f.find_last_not_of(" \t");
    f = (a == std::string::npos) ? std::string() : f.substr(a, b - a + 1);
  }
  return fields;
}

inline double parse_number(const std::string& field, const std::string& path,
                           int line, const std::string& what) {
  if (field.empty())
    throw parse_error(path, line, "empty " + what + " field");
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(field.c_str(), &end);
  if (end != field.c_str() + field.size() || errno == ERANGE)
    throw parse_error(path, line, "cannot parse " + what + " value '" + field + "'");
  return v;
}

inline bool file_exists(const std::string& path) {
  std::ifstream in(path);
  return static_cast<bool>(in);
}

} // namespace detail

/**
 * Loads a dataset CSV.  Expected header:
 *   stratum, cluster, weight, m, count_1..count_{d+1}, x_1..x_k
 * (x_0..x_k under an explicit intercept).  Stratum and cluster fields are
 * labels; numeric ids are assigned by order of first appearance.  Errors
 * carry the 1-based line number.
 */
inline SurveyDataset load_dataset(const std::string& path) {
  const std::string text = read_text_file(path);
  std::vector<std::string> lines;
  {
    std::string cur;
    for (char ch : text) {
      if (ch == '\n') {
        if (!cur.empty() && cur.back() == '\r') cur.pop_back();
        lines.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    if (!cur.empty()) {
      if (cur.back() == '\r') cur.pop_back();
      lines.push_back(cur);
    }
  }
  if (lines.empty()) throw parse_error(path, 1, "empty dataset file");

  DatasetSchema schema;
  int first_row = 0;
  if (!lines[0].empty() && lines[0][0] == '#') {
    schema = detail::schema_from_json(
        json_from_string(lines[0].substr(1), path + " pragma"), path);
    first_row = 1;
  } else if (detail::file_exists(path + ".json")) {
    schema = detail::schema_from_json(
        json_from_string(read_text_file(path + ".json"), path + ".json"),
        path + ".json");
  } else {
    throw parse_error(path, 1,
                      "no schema: expected a '# {...}' pragma line or a sidecar '" +
                          path + ".json' declaring d and k");
  }

  if (first_row >= static_cast<int>(lines.size()))
    throw parse_error(path, first_row + 1, "missing header line");
  const std::vector<std::string> header = detail::split_csv_line(lines[first_row]);
  std::vector<std::string> expected = {"stratum", "cluster", "weight", "m"};
  for (int s = 1; s <= schema.d + 1; ++s)
    expected.push_back("count_" + std::to_string(s));
  for (int j = schema.intercept_explicit ? 0 : 1; j <= schema.k; ++j)
    expected.push_back("x_" + std::to_string(j));
  if (header != expected) {
    std::string want;
    for (std::size_t i = 0; i < expected.size(); ++i)
      want += (i ? "," : "") + expected[i];
    throw parse_error(path, first_row + 1, "header mismatch; expected: " + want);
  }

  SurveyDataset data;
  data.d = schema.d;
  data.k = schema.k;
  data.intercept_explicit = schema.intercept_explicit;
  std::map<std::string, int> stratum_ids;
  std::map<std::pair<int, std::string>, int> cluster_ids;
  std::map<int, int> clusters_in_stratum;

  const int n_counts = schema.d + 1;
  const int n_x = schema.intercept_explicit ? schema.k + 1 : schema.k;
  const std::size_t n_fields = 4 + static_cast<std::size_t>(n_counts + n_x);
  for (std::size_t li = static_cast<std::size_t>(first_row) + 1; li < lines.size();
       ++li) {
    const int line_no = static_cast<int>(li) + 1;
    if (lines[li].empty()) continue;
    const std::vector<std::string> f = detail::split_csv_line(lines[li]);
    if (f.size() != n_fields)
      throw parse_error(path, line_no,
                        "expected " + std::to_string(n_fields) + " fields, found " +
                            std::to_string(f.size()));
    ClusterRecord rec;
    rec.stratum_label = f[0];
    rec.cluster_label = f[1];
    auto sit = stratum_ids.find(f[0]);
    if (sit == stratum_ids.end())
      sit = stratum_ids.emplace(f[0], static_cast<int>(stratum_ids.size()) + 1).first;
    rec.stratum_id = sit->second;
    const auto ckey = std::make_pair(rec.stratum_id, f[1]);
    auto cit = cluster_ids.find(ckey);
    if (cit == cluster_ids.end())
      cit = cluster_ids.emplace(ckey, ++clusters_in_stratum[rec.stratum_id]).first;
    else
      throw parse_error(path, line_no,
                        "duplicate cluster '" + f[1] + "' in stratum '" + f[0] + "'");
    rec.cluster_id = cit->second;
    rec.weight = detail::parse_number(f[2], path, line_no, "weight");
    rec.unit_count = detail::parse_number(f[3], path, line_no, "m");
    if (rec.weight < 0.0) throw parse_error(path, line_no, "negative weight");
    if (rec.unit_count <= 0.0) throw parse_error(path, line_no, "m must be positive");
    rec.counts = Vector(n_counts);
    double count_sum = 0.0;
    for (int s = 0; s < n_counts; ++s) {
      rec.counts[s] = detail::parse_number(f[4 + static_cast<std::size_t>(s)], path,
                                           line_no, "count");
      if (rec.counts[s] < 0.0) throw parse_error(path, line_no, "negative count");
      count_sum += rec.counts[s];
    }
    if (std::abs(count_sum - rec.unit_count) >
        1e-6 * std::max(1.0, rec.unit_count))
      throw parse_error(path, line_no,
                        "counts sum to " + format_double(count_sum) +
                            " but m = " + format_double(rec.unit_count));
    rec.covariates = Vector(schema.k + 1);
    int xi = 0;
    if (!schema.intercept_explicit) rec.covariates[xi++] = 1.0;
    for (int j = 0; j < n_x; ++j)
      rec.covariates[xi++] = detail::parse_number(
          f[4 + static_cast<std::size_t>(n_counts + j)], path, line_no, "covariate");
    data.clusters.push_back(std::move(rec));
  }
  if (data.clusters.empty())
    throw parse_error(path, first_row + 2, "dataset has no data rows");
  data.validate();
  return data;
}

// ---------------------------------------------------------------------------
// Matrices, hypotheses, scenarios
// ---------------------------------------------------------------------------

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (int r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Json vector_to_json(const Vector& v) {
  Json arr = Json::array();
  for (int i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

inline Matrix matrix_from_json(const Json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw input_error(what + " must be a nonempty array");
  const bool nested = j.front().is_array();
  const std::size_t rows = nested ? j.size() : 1;
  const std::size_t cols = nested ? j.front().size() : j.size();
  Matrix m(static_cast<int>(rows), static_cast<int>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    const Json& row = nested ? j.at(r) : j;
    if (!row.is_array() || row.size() != cols)
      throw input_error(what + " rows have inconsistent lengths");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!row.at(c).is_number()) throw input_error(what + " entries must be numbers");
      m(static_cast<int>(r), static_cast<int>(c)) = row.at(c).get<double>();
    }
  }
  return m;
}

inline Vector vector_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw input_error(what + " must be an array");
  Vector v(static_cast<int>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j.at(i).is_number()) throw input_error(what + " entries must be numbers");
    v[static_cast<int>(i)] = j.at(i).get<double>();
  }
  return v;
}

/**
 * Hypothesis JSON: either
 *   {"select": [stacked 0-based indices], "rhs": [values]}
 * picking single coefficients, or
 *   {"constraints": [[row of M'], ...], "rhs": [values]}
 * with one length-p row per constraint.
 */
inline LinearHypothesis hypothesis_from_json(const Json& j, int param_dim) {
  if (!j.is_object()) throw input_error("hypothesis must be a JSON object");
  if (!j.contains("rhs")) throw input_error("hypothesis needs an 'rhs' array");
  LinearHypothesis hyp;
  hyp.l_vector = vector_from_json(j.at("rhs"), "hypothesis rhs");
  if (j.contains("select")) {
    const Json& sel = j.at("select");
    if (!sel.is_array() || sel.empty())
      throw input_error("hypothesis 'select' must be a nonempty array");
    hyp.m_matrix = Matrix::Zero(param_dim, static_cast<int>(sel.size()));
    for (std::size_t c = 0; c < sel.size(); ++c) {
      const int idx = sel.at(c).get<int>();
      if (idx < 0 || idx >= param_dim)
        throw input_error("hypothesis index " + std::to_string(idx) +
                          " outside the stacked coefficient range 0.." +
                          std::to_string(param_dim - 1));
      hyp.m_matrix(idx, static_cast<int>(c)) = 1.0;
    }
  } else if (j.contains("constraints")) {
    const Matrix rows = matrix_from_json(j.at("constraints"), "hypothesis constraints");
    if (rows.cols() != param_dim)
      throw input_error("hypothesis constraint rows must have length " +
                        std::to_string(param_dim));
    hyp.m_matrix = rows.transpose();
  } else {
    throw input_error("hypothesis needs either 'select' or 'constraints'");
  }
  hyp.validate(param_dim);
  return hyp;
}

/// Scenario file contents: the spec itself plus the optional test block.
struct ScenarioFile {
  ScenarioSpec spec;
  bool has_hypothesis = false;
  LinearHypothesis hypothesis;
  bool has_beta_alt = false;
  Coefficients beta_alt;
  double alpha = 0.05;
};

inline ScenarioFile scenario_from_json(const Json& j) {
  if (!j.is_object()) throw input_error("scenario must be a JSON object");
  if (j.contains("schema_version") && j.at("schema_version").get<int>() != 1)
    throw input_error("unsupported scenario schema_version (this build reads 1)");
  ScenarioFile out;
  ScenarioSpec& s = out.spec;
  for (const char* key : {"strata", "n_per_stratum", "m", "rho_squared",
                          "distribution", "beta_true", "replications",
                          "lambda_grid", "seed"})
    if (!j.contains(key))
      throw input_error(std::string("scenario is missing '") + key + "'");
  s.strata = j.at("strata").get<int>();
  s.n_per_stratum = j.at("n_per_stratum").get<long>();
  s.m = j.at("m").get<long>();
  s.rho_squared = j.at("rho_squared").get<double>();
  s.distribution = sampler_kind_from_string(j.at("distribution").get<std::string>());
  s.beta_true = Coefficients{matrix_from_json(j.at("beta_true"), "beta_true")};
  s.contamination_rate =
      j.contains("contamination_rate") ? j.at("contamination_rate").get<double>() : 0.0;
  s.replications = j.at("replications").get<long>();
  s.lambda_grid.clear();
  for (const auto& l : j.at("lambda_grid")) s.lambda_grid.push_back(l.get<double>());
  s.seed = j.at("seed").get<std::uint64_t>();
  s.validate();
  const int p = s.beta_true.d() * (s.beta_true.k() + 1);
  if (j.contains("hypothesis")) {
    out.hypothesis = hypothesis_from_json(j.at("hypothesis"), p);
    out.has_hypothesis = true;
  }
  if (j.contains("beta_alt")) {
    out.beta_alt = Coefficients{matrix_from_json(j.at("beta_alt"), "beta_alt")};
    if (out.beta_alt.beta.rows() != s.beta_true.beta.rows() ||
        out.beta_alt.beta.cols() != s.beta_true.beta.cols())
      throw input_error("beta_alt must have the same shape as beta_true");
    out.has_beta_alt = true;
  }
  if (j.contains("alpha")) out.alpha = j.at("alpha").get<double>();
  if (!(out.alpha > 0.0 && out.alpha < 1.0))
    throw input_error("alpha must lie in (0,1)");
  return out;
}

inline Json scenario_to_json(const ScenarioFile& file) {
  const ScenarioSpec& s = file.spec;
  Json j = Json::object();
  j["schema_version"] = 1;
  j["strata"] = s.strata;
  j["n_per_stratum"] = s.n_per_stratum;
  j["m"] = s.m;
  j["rho_squared"] = s.rho_squared;
  j["distribution"] = to_string(s.distribution);
  j["beta_true"] = matrix_to_json(s.beta_true.beta);
  j["contamination_rate"] = s.contamination_rate;
  j["replications"] = s.replications;
  Json grid = Json::array();
  for (double l : s.lambda_grid) grid.push_back(l);
  j["lambda_grid"] = std::move(grid);
  j["seed"] = s.seed;
  if (file.has_hypothesis) {
    Json h = Json::object();
    h["constraints"] = matrix_to_json(file.hypothesis.m_matrix.transpose());
    h["rhs"] = vector_to_json(file.hypothesis.l_vector);
    j["hypothesis"] = std::move(h);
  }
  if (file.has_beta_alt) j["beta_alt"] = matrix_to_json(file.beta_alt.beta);
  j["alpha"] = file.alpha;
  return j;
}

inline ScenarioFile load_scenario(const std::string& path) {
  return scenario_from_json(json_from_string(read_text_file(path), path));
}

// ---------------------------------------------------------------------------
// Study tables as CSV
// ---------------------------------------------------------------------------

inline std::string rmse_study_csv(const RmseStudy& study) {
  std::string out =
      "lambda,replications_used,excluded,rmse_beta,rmse_rho_estimating,"
      "rmse_rho_moments,mean_rho_estimating,mean_rho_moments\n";
  for (const RmseRow& r : study.rows) {
    out += format_double(r.lambda) + "," + std::to_string(r.replications_used) + "," +
           std::to_string(r.excluded) + "," + format_double(r.rmse_beta) + "," +
           format_double(r.rmse_rho_estimating) + "," +
           format_double(r.rmse_rho_moments) + "," +
           format_double(r.mean_rho_estimating) + "," +
           format_double(r.mean_rho_moments) + "\n";
  }
  return out;
}

inline std::string level_power_csv(const LevelPowerStudy& study) {
  std::string out =
      "lambda,level_used,level_excluded,level,level_se,power_used,"
      "power_excluded,power,power_se\n";
  for (const LevelPowerRow& r : study.rows) {
    out += format_double(r.lambda) + "," + std::to_string(r.level_used) + "," +
           std::to_string(r.level_excluded) + "," + format_double(r.level) + "," +
           format_double(r.level_se) + ",";
    if (r.has_power)
      out += std::to_string(r.power_used) + "," + std::to_string(r.power_excluded) +
             "," + format_double(r.power) + "," + format_double(r.power_se);
    else
      out += "0,0,,";
    out += "\n";
  }
  return out;
}

} // namespace svydpd

#endif // SVYDPD_IO_HPP
