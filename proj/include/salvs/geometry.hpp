#pragma once

// Homogeneous image-plane primitives and the four geometric-constraint
// error functions (point-to-point, point-to-line, line-to-line, parallel).

#include <cmath>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "salvs/error.hpp"

namespace salvs {

using ErrorVector = Eigen::VectorXd;

inline constexpr double kIdealPointEps = 1e-9;

struct HomoPoint {
  double x = 0.0;
  double y = 0.0;
  double w = 1.0;

  Eigen::Vector3d vec() const { return {x, y, w}; }
  static HomoPoint from(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

  friend bool operator==(const HomoPoint&, const HomoPoint&) = default;
};

struct HomoLine {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;

  Eigen::Vector3d vec() const { return {a, b, c}; }
  static HomoLine from(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

  friend bool operator==(const HomoLine&, const HomoLine&) = default;
};

enum class ConstraintKind { PointToPoint, PointToLine, LineToLine, ParallelLines };

constexpr int error_dim(ConstraintKind kind) {
  return kind == ConstraintKind::PointToPoint ? 2 : 1;
}

constexpr std::string_view to_string(ConstraintKind kind) {
  switch (kind) {
    case ConstraintKind::PointToPoint: return "p2p";
    case ConstraintKind::PointToLine: return "p2l";
    case ConstraintKind::LineToLine: return "l2l";
    case ConstraintKind::ParallelLines: return "par";
  }
  return "?";
}

inline ConstraintKind parse_constraint_kind(std::string_view s) {
  if (s == "p2p") return ConstraintKind::PointToPoint;
  if (s == "p2l") return ConstraintKind::PointToLine;
  if (s == "l2l") return ConstraintKind::LineToLine;
  if (s == "par") return ConstraintKind::ParallelLines;
  throw Error(ErrorCode::InvalidArgument, "unknown constraint kind '" + std::string(s) + "'");
}

inline HomoPoint normalize_point(const HomoPoint& p, double eps = kIdealPointEps) {
  if (std::abs(p.w) <= eps) {
    throw Error(ErrorCode::DegeneratePoint, "point at infinity (w = " + std::to_string(p.w) + ")");
  }
  return {p.x / p.w, p.y / p.w, 1.0};
}

/// Scales the line so a^2 + b^2 = 1 and the first nonzero of (a, b) is positive.
inline HomoLine normalize_line(const HomoLine& l) {
  const double n = std::hypot(l.a, l.b);
  if (n == 0.0) throw Error(ErrorCode::CoincidentPoints, "line has a = b = 0");
  const double sign = (l.a > 0.0 || (l.a == 0.0 && l.b > 0.0)) ? 1.0 : -1.0;
  const double s = sign / n;
  return {l.a * s, l.b * s, l.c * s};
}

inline HomoLine line_from_points(const HomoPoint& p1, const HomoPoint& p2) {
  const Eigen::Vector3d l = p1.vec().cross(p2.vec());
  if (l.x() == 0.0 && l.y() == 0.0) {
    throw Error(ErrorCode::CoincidentPoints, "points do not span a finite line");
  }
  return normalize_line(HomoLine::from(l));
}

inline ErrorVector e_pp(const HomoPoint& f1, const HomoPoint& f2) {
  const HomoPoint a = normalize_point(f1);
  const HomoPoint b = normalize_point(f2);
  return Eigen::Vector2d(b.x - a.x, b.y - a.y);
}

inline double point_line_dot(const HomoPoint& p, const HomoLine& l) {
  const HomoPoint n = normalize_point(p);
  return n.x * l.a + n.y * l.b + l.c;
}

inline ErrorVector e_pl(const HomoPoint& f1, const HomoLine& f34) {
  ErrorVector e(1);
  e(0) = point_line_dot(f1, f34);
  return e;
}

inline ErrorVector e_ll(const HomoPoint& f1, const HomoPoint& f2, const HomoLine& f34) {
  ErrorVector e(1);
  e(0) = point_line_dot(f1, f34) + point_line_dot(f2, f34);
  return e;
}

/// w-component of f12 x f34: the sine of the angle between the two line
/// directions when both lines are normalized.
inline ErrorVector e_par(const HomoLine& f12, const HomoLine& f34) {
  ErrorVector e(1);
  e(0) = f12.a * f34.b - f12.b * f34.a;
  return e;
}

// Constraint bindings: the features each error function consumes.
struct PointToPoint {
  HomoPoint f1, f2;
};
struct PointToLine {
  HomoPoint f1;
  HomoLine f34;
};
struct LineToLine {
  HomoPoint f1, f2;
  HomoLine f34;
};
struct ParallelLines {
  HomoLine f12, f34;
};

using BoundConstraint = std::variant<PointToPoint, PointToLine, LineToLine, ParallelLines>;

inline ConstraintKind kind_of(const BoundConstraint& c) {
  return static_cast<ConstraintKind>(c.index());
}

inline ErrorVector evaluate(const BoundConstraint& c) {
  return std::visit(
      [](const auto& b) -> ErrorVector {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, PointToPoint>) return e_pp(b.f1, b.f2);
        if constexpr (std::is_same_v<T, PointToLine>) return e_pl(b.f1, b.f34);
        if constexpr (std::is_same_v<T, LineToLine>) return e_ll(b.f1, b.f2, b.f34);
        if constexpr (std::is_same_v<T, ParallelLines>) return e_par(b.f12, b.f34);
      },
      c);
}

/// Concatenates already-evaluated constraint errors in declaration order.
inline ErrorVector stack_errors(std::span<const ErrorVector> parts) {
  Eigen::Index n = 0;
  for (const auto& p : parts) n += p.size();
  ErrorVector out(n);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.segment(at, p.size()) = p;
    at += p.size();
  }
  return out;
}

inline ErrorVector stack_errors(std::span<const BoundConstraint> constraints) {
  std::vector<ErrorVector> parts;
  parts.reserve(constraints.size());
  for (const auto& c : constraints) parts.push_back(evaluate(c));
  return stack_errors(std::span<const ErrorVector>(parts));
}

inline int stacked_dim(std::span<const ConstraintKind> kinds) {
  int n = 0;
  for (auto k : kinds) n += error_dim(k);
  return n;
}

}  // namespace salvs
