#pragma once

// JSON-lines trace records and the run summary. Doubles are written in
// shortest round-trip form, so parsing a trace gives back identical bits.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "salvs/controller.hpp"
#include "salvs/episode.hpp"
#include "salvs/error.hpp"
#include "salvs/geometry.hpp"
#include "salvs/simulator.hpp"

namespace salvs {

inline constexpr int kTraceFormatVersion = 1;

namespace detail {

using nlohmann::json;

inline json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Eigen::VectorXd json_vec(const json& a) {
  if (!a.is_array()) throw Error(ErrorCode::MalformedFile, "expected a number array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number()) throw Error(ErrorCode::MalformedFile, "expected a number");
    v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  }
  return v;
}

// Non-finite values are not representable in JSON; they are written as null.
inline json num_json(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline double json_num(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::infinity();
  if (!j.is_number()) throw Error(ErrorCode::MalformedFile, "expected a number");
  return j.get<double>();
}

inline json point_json(const HomoPoint& p) { return json::array({p.x, p.y, p.w}); }
inline json line_json(const HomoLine& l) { return json::array({l.a, l.b, l.c}); }

inline HomoPoint json_point(const json& j) {
  const auto v = json_vec(j);
  if (v.size() != 3) throw Error(ErrorCode::MalformedFile, "point needs three coordinates");
  return {v(0), v(1), v(2)};
}

inline HomoLine json_line(const json& j) {
  const auto v = json_vec(j);
  if (v.size() != 3) throw Error(ErrorCode::MalformedFile, "line needs three coefficients");
  return {v(0), v(1), v(2)};
}

}  // namespace detail

inline nlohmann::json to_json(const BoundConstraint& c) {
  using detail::line_json;
  using detail::point_json;
  nlohmann::json j;
  j["kind"] = std::string(to_string(kind_of(c)));
  std::visit(
      [&](const auto& b) {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, PointToPoint>) {
          j["points"] = {point_json(b.f1), point_json(b.f2)};
        } else if constexpr (std::is_same_v<T, PointToLine>) {
          j["points"] = {point_json(b.f1)};
          j["lines"] = {line_json(b.f34)};
        } else if constexpr (std::is_same_v<T, LineToLine>) {
          j["points"] = {point_json(b.f1), point_json(b.f2)};
          j["lines"] = {line_json(b.f34)};
        } else {
          j["lines"] = {line_json(b.f12), line_json(b.f34)};
        }
      },
      c);
  return j;
}

inline BoundConstraint constraint_from_json(const nlohmann::json& j) {
  using detail::json_line;
  using detail::json_point;
  const ConstraintKind kind = parse_constraint_kind(j.at("kind").get<std::string>());
  const auto& pts = j.contains("points") ? j.at("points") : nlohmann::json::array();
  const auto& lns = j.contains("lines") ? j.at("lines") : nlohmann::json::array();
  switch (kind) {
    case ConstraintKind::PointToPoint: return PointToPoint{json_point(pts.at(0)), json_point(pts.at(1))};
    case ConstraintKind::PointToLine: return PointToLine{json_point(pts.at(0)), json_line(lns.at(0))};
    case ConstraintKind::LineToLine:
      return LineToLine{json_point(pts.at(0)), json_point(pts.at(1)), json_line(lns.at(0))};
    case ConstraintKind::ParallelLines: return ParallelLines{json_line(lns.at(0)), json_line(lns.at(1))};
  }
  throw Error(ErrorCode::MalformedFile, "unknown constraint kind");
}

inline nlohmann::json to_json(const TraceRecord& r) {
  nlohmann::json j;
  j["format_version"] = kTraceFormatVersion;
  j["step"] = r.step;
  j["attempt"] = r.attempt;
  j["stage"] = r.stage;
  j["iteration"] = r.servo.iteration;
  j["q"] = detail::vec_json(r.servo.q);
  j["dq"] = detail::vec_json(r.servo.dq);
  j["e"] = detail::vec_json(r.servo.e);
  j["e_norm"] = r.servo.e_norm;
  j["j_cond"] = detail::num_json(r.servo.j_cond);
  nlohmann::json f = nlohmann::json::array();
  for (const auto& c : r.servo.features) f.push_back(to_json(c));
  j["features"] = std::move(f);
  return j;
}

inline TraceRecord trace_record_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kTraceFormatVersion) {
      throw Error(ErrorCode::UnsupportedFormat, "unsupported trace format version");
    }
    TraceRecord r;
    r.step = j.at("step").get<int>();
    r.attempt = j.at("attempt").get<int>();
    r.stage = j.at("stage").get<int>();
    r.servo.iteration = j.at("iteration").get<int>();
    r.servo.q = detail::json_vec(j.at("q"));
    r.servo.dq = detail::json_vec(j.at("dq"));
    r.servo.e = detail::json_vec(j.at("e"));
    r.servo.e_norm = j.at("e_norm").get<double>();
    r.servo.j_cond = detail::json_num(j.at("j_cond"));
    for (const auto& f : j.at("features")) r.servo.features.push_back(constraint_from_json(f));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedFile, std::string("bad trace record: ") + e.what());
  }
}

inline void write_trace_line(std::ostream& out, const TraceRecord& r) { out << to_json(r).dump() << '\n'; }

inline std::vector<TraceRecord> read_trace(std::istream& in) {
  std::vector<TraceRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::MalformedFile, "trace line " + std::to_string(n) + ": " + e.what());
    }
    out.push_back(trace_record_from_json(j));
  }
  return out;
}

inline std::vector<TraceRecord> read_trace_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return read_trace(in);
}

struct RunSummary {
  std::string scenario;
  TaskContext context = TaskContext::ReachAndGrasp;
  std::uint64_t seed = 0;
  std::vector<AttemptOutcome> attempts;
  double success_rate = 0.0;
  int total_steps = 0;
};

inline RunSummary summarize(const Scenario& s, std::uint64_t seed, const EpisodeTrace& t) {
  return {s.name, s.context, seed, t.attempts, t.success_rate, static_cast<int>(t.records.size())};
}

/// One-line outcome such as "Converged attempt 1, 100%" or
/// "IterBudget x2, 0%"; repeated statuses are grouped.
inline std::string outcome_line(const RunSummary& s) {
  std::string out;
  const auto& a = s.attempts;
  if (!a.empty() && a.back().status == AttemptStatus::Converged) {
    for (std::size_t i = 0; i + 1 < a.size(); ++i) out += std::string(to_string(a[i].status)) + ", ";
    out += "Converged attempt " + std::to_string(a.back().attempt);
  } else {
    for (std::size_t i = 0; i < a.size();) {
      std::size_t j = i;
      while (j < a.size() && a[j].status == a[i].status) ++j;
      if (!out.empty()) out += ", ";
      out += std::string(to_string(a[i].status));
      if (j - i > 1) out += " x" + std::to_string(j - i);
      i = j;
    }
  }
  char rate[32];
  std::snprintf(rate, sizeof rate, "%g%%", s.success_rate);
  return out + ", " + rate;
}

inline nlohmann::json to_json(const RunSummary& s) {
  nlohmann::json j;
  j["format_version"] = kTraceFormatVersion;
  j["scenario"] = s.scenario;
  j["context"] = std::string(to_string(s.context));
  j["seed"] = s.seed;
  nlohmann::json attempts = nlohmann::json::array();
  for (const auto& a : s.attempts) {
    attempts.push_back({{"attempt", a.attempt},
                        {"status", std::string(to_string(a.status))},
                        {"stages_completed", a.stages_completed},
                        {"iterations", a.iterations},
                        {"final_error_norm", a.final_error_norm}});
  }
  j["attempts"] = std::move(attempts);
  j["success_rate"] = s.success_rate;
  j["total_steps"] = s.total_steps;
  return j;
}

}  // namespace salvs
