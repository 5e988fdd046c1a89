#pragma once

// Plain-text point files, CSV writing and JSON encodings of poses and results.
//
// Point files hold one point per line as whitespace-separated decimals; `#`
// starts a comment. 3-d files have 3 columns plus an optional integer label
// column, 2-d files have 2 columns. Numbers are written with 17 significant
// digits so that a write/read cycle reproduces every double exactly.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dwpnp/errors.hpp"
#include "dwpnp/liegeo.hpp"
#include "dwpnp/metrics.hpp"
#include "dwpnp/pointset.hpp"
#include "dwpnp/solvers.hpp"

namespace dwpnp {

using Json = nlohmann::ordered_json;

/// Shortest text that is read back as the same double (17 significant digits).
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline double parse_number(std::string_view field, const std::string& name, std::size_t line) {
  double v = 0.0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw ParseError(name, line, "invalid number '" + std::string(field) + "'");
  }
  return v;
}

inline int parse_label(std::string_view field, const std::string& name, std::size_t line) {
  int v = 0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ParseError(name, line, "invalid integer label '" + std::string(field) + "'");
  }
  return v;
}

/// Calls fn(fields, line_number) for every non-blank, non-comment line.
template <class Fn>
void for_each_record(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const auto fields = split_fields(line);
    if (!fields.empty()) fn(fields, n);
  }
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file");
  return in;
}

}  // namespace detail

inline PointSet3D parse_points3d(std::istream& in, const std::string& name = "<input>") {
  PointSet3D out;
  std::size_t columns = 0;
  detail::for_each_record(in, [&](const auto& f, std::size_t line) {
    if (f.size() != 3 && f.size() != 4) {
      throw ParseError(name, line, "expected 3 or 4 columns, found " + std::to_string(f.size()));
    }
    if (columns == 0) columns = f.size();
    if (f.size() != columns) {
      throw ParseError(name, line, "label column must be present on every line or on none");
    }
    out.points.emplace_back(detail::parse_number(f[0], name, line),
                            detail::parse_number(f[1], name, line),
                            detail::parse_number(f[2], name, line));
    if (columns == 4) out.labels.push_back(detail::parse_label(f[3], name, line));
  });
  return out;
}

inline PointSet2D parse_points2d(std::istream& in, const std::string& name = "<input>") {
  PointSet2D out;
  detail::for_each_record(in, [&](const auto& f, std::size_t line) {
    if (f.size() != 2) {
      throw ParseError(name, line, "expected 2 columns, found " + std::to_string(f.size()));
    }
    out.emplace_back(detail::parse_number(f[0], name, line), detail::parse_number(f[1], name, line));
  });
  return out;
}

inline PointSet3D read_points3d(const std::string& path) {
  auto in = detail::open_input(path);
  return parse_points3d(in, path);
}

inline PointSet2D read_points2d(const std::string& path) {
  auto in = detail::open_input(path);
  return parse_points2d(in, path);
}

/// Writes `header` lines as comments, then one point per line.
inline void write_points3d(std::ostream& out, const PointSet3D& p,
                           const std::vector<std::string>& header = {}) {
  for (const auto& h : header) out << "# " << h << '\n';
  for (std::size_t i = 0; i < p.size(); ++i) {
    out << format_double(p[i].x()) << ' ' << format_double(p[i].y()) << ' '
        << format_double(p[i].z());
    if (p.has_labels()) out << ' ' << p.labels[i];
    out << '\n';
  }
}

inline void write_points2d(std::ostream& out, const PointSet2D& p,
                           const std::vector<std::string>& header = {}) {
  for (const auto& h : header) out << "# " << h << '\n';
  for (const auto& q : p) out << format_double(q.x()) << ' ' << format_double(q.y()) << '\n';
}

/// Minimal CSV writer: a fixed header row, then rows of the same width.
class CsvWriter {
 public:
  CsvWriter(std::ostream& out, std::vector<std::string> header)
      : out_(out), width_(header.size()) {
    write_row(header);
  }

  CsvWriter& cell(const std::string& s) {
    pending_.push_back(s);
    return *this;
  }
  CsvWriter& cell(double v) { return cell(format_double(v)); }
  CsvWriter& cell(std::size_t v) { return cell(std::to_string(v)); }
  CsvWriter& cell(int v) { return cell(std::to_string(v)); }
  CsvWriter& cell(bool v) { return cell(std::string(v ? "1" : "0")); }
  CsvWriter& cell(const char* s) { return cell(std::string(s)); }

  void end_row() {
    if (pending_.size() != width_) {
      throw Error("CSV row has " + std::to_string(pending_.size()) + " cells, header has " +
                  std::to_string(width_));
    }
    write_row(pending_);
    pending_.clear();
  }

 private:
  static std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + '"';
  }

  void write_row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << quote(cells[i]);
    out_ << '\n';
  }

  std::ostream& out_;
  std::size_t width_;
  std::vector<std::string> pending_;
};

/// Finite doubles as numbers, everything else as null.
inline Json json_number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json json_vector(const auto& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(json_number(v[i]));
  return a;
}

/// Pose as a row-major 4x4 matrix plus its twist (rho, phi). The twist is null
/// when the rotation sits on the cut locus.
inline Json pose_to_json(const Pose& T) {
  Json j;
  const Mat4 m = T.matrix();
  Json rows = Json::array();
  for (int r = 0; r < 4; ++r) rows.push_back(json_vector(Vec4(m.row(r).transpose())));
  j["matrix"] = rows;
  try {
    j["twist"] = json_vector(log_map(T).vector());
  } catch (const CutLocusError&) {
    j["twist"] = nullptr;
  }
  return j;
}

inline Pose pose_from_json(const Json& j) {
  if (j.contains("matrix") && j["matrix"].is_array() && j["matrix"].size() == 4) {
    Mat4 m;
    for (int r = 0; r < 4; ++r) {
      const auto& row = j["matrix"][static_cast<std::size_t>(r)];
      if (!row.is_array() || row.size() != 4) throw ConfigError("pose matrix must be 4x4");
      for (int c = 0; c < 4; ++c) m(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
    return Pose::from_matrix(m);
  }
  if (j.contains("twist") && j["twist"].is_array() && j["twist"].size() == 6) {
    Vec6 v;
    for (int i = 0; i < 6; ++i) v[i] = j["twist"][static_cast<std::size_t>(i)].get<double>();
    return exp_map(v);
  }
  throw ConfigError("pose needs a 4x4 'matrix' or a 6-element 'twist'");
}

inline Json camera_to_json(const CameraIntrinsics& K) {
  return Json{{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy},
              {"width", K.width}, {"height", K.height}};
}

inline CameraIntrinsics camera_from_json(const Json& j) {
  CameraIntrinsics K{j.at("fx").get<double>(), j.at("fy").get<double>(),
                     j.at("cx").get<double>(), j.at("cy").get<double>(),
                     j.at("width").get<double>(), j.at("height").get<double>()};
  K.validate();
  return K;
}

inline Json trace_to_json(const std::vector<IterationRecord>& trace) {
  Json a = Json::array();
  for (const auto& r : trace) {
    a.push_back(Json{{"iteration", r.iteration},
                     {"ell", json_number(r.ell)},
                     {"e_data_before", json_number(r.e_data_before)},
                     {"e_data_candidate", json_number(r.e_data_candidate)},
                     {"e_data", json_number(r.e_data)},
                     {"e_init", json_number(r.e_init)},
                     {"loss", json_number(r.loss)},
                     {"median_tre", json_number(r.median_tre)},
                     {"step_norm", json_number(r.step_norm)},
                     {"damping", json_number(r.damping)},
                     {"excluded", r.excluded},
                     {"accepted", r.accepted},
                     {"depth_guard", r.depth_guard}});
  }
  return a;
}

inline std::vector<std::string> trace_csv_header() {
  return {"iteration", "ell", "e_data_before", "e_data_candidate", "e_data", "e_init", "loss",
          "median_tre", "step_norm", "damping", "excluded", "accepted", "depth_guard"};
}

inline void write_trace_csv(std::ostream& out, const std::vector<IterationRecord>& trace) {
  CsvWriter csv(out, trace_csv_header());
  for (const auto& r : trace) {
    csv.cell(r.iteration).cell(r.ell).cell(r.e_data_before).cell(r.e_data_candidate)
        .cell(r.e_data).cell(r.e_init).cell(r.loss).cell(r.median_tre).cell(r.step_norm)
        .cell(r.damping).cell(r.excluded).cell(r.accepted).cell(r.depth_guard);
    csv.end_row();
  }
}

inline Json metrics_to_json(const MetricsReport& m, bool with_runtime) {
  Json j{{"mean_pr", json_number(m.mean_pr)},
         {"median_pr", json_number(m.median_pr)},
         {"pr_p75", json_number(m.pr_p75)},
         {"pr_p95", json_number(m.pr_p95)},
         {"gfr", json_number(m.gfr)},
         {"median_tre", json_number(m.median_tre)},
         {"angular_error", json_number(m.angular_error)},
         {"translational_error", json_number(m.translational_error)}};
  if (with_runtime) j["runtime_ms"] = json_number(m.runtime_ms);
  return j;
}

/// Serialized JSON text with a trailing newline.
inline std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace dwpnp
