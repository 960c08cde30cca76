#pragma once

// Saliency maps and the PCA feature extraction that turns them into
// constraint features, plus the object-gripper / object-object pairing
// policies.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "salvs/error.hpp"
#include "salvs/geometry.hpp"

namespace salvs {

/// W x H row-major probability grid.
class SaliencyMap {
 public:
  SaliencyMap() = default;
  SaliencyMap(int width, int height, double fill = 0.0) : width_(width), height_(height) {
    if (width < 1 || height < 1) {
      throw Error(ErrorCode::InvalidArgument, "saliency map needs W, H >= 1");
    }
    values_.assign(static_cast<std::size_t>(width) * height, fill);
  }
  SaliencyMap(int width, int height, std::vector<double> values)
      : width_(width), height_(height), values_(std::move(values)) {
    if (width < 1 || height < 1 || values_.size() != static_cast<std::size_t>(width) * height) {
      throw Error(ErrorCode::ShapeMismatch, "saliency map size does not match W x H");
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return values_.size(); }

  double operator()(int x, int y) const { return values_[index(x, y)]; }
  double& operator()(int x, int y) { return values_[index(x, y)]; }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  double mass() const {
    double m = 0.0;
    for (double v : values_) m += v;
    return m;
  }

  bool same_shape(const SaliencyMap& o) const noexcept {
    return width_ == o.width_ && height_ == o.height_;
  }

  friend bool operator==(const SaliencyMap&, const SaliencyMap&) = default;

 private:
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> values_;
};

inline void require_same_shape(const SaliencyMap& a, const SaliencyMap& b) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(a.width()) + "x" + std::to_string(a.height()) +
                                              " vs " + std::to_string(b.width()) + "x" +
                                              std::to_string(b.height()));
  }
}

inline constexpr double kDefaultThreshold = 0.5;
inline constexpr double kMinMass = 10.0;
inline constexpr double kIsotropyRatio = 1.1;

inline SaliencyMap threshold_mask(const SaliencyMap& map, double tau = kDefaultThreshold) {
  SaliencyMap out = map;
  for (double& v : out.values()) {
    if (v < tau) v = 0.0;
  }
  return out;
}

struct WeightedMoments {
  double mass = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  // Central second moments normalised by mass.
  double sxx = 0.0;
  double sxy = 0.0;
  double syy = 0.0;
};

/// Two-pass probability-weighted moments; pixel (i, j) sits at (i, j).
inline WeightedMoments weighted_moments(const SaliencyMap& map) {
  WeightedMoments m;
  double sx = 0.0, sy = 0.0;
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      const double v = map(x, y);
      if (v == 0.0) continue;
      m.mass += v;
      sx += v * x;
      sy += v * y;
    }
  }
  if (m.mass <= 0.0) return m;
  m.cx = sx / m.mass;
  m.cy = sy / m.mass;
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      const double v = map(x, y);
      if (v == 0.0) continue;
      const double dx = x - m.cx;
      const double dy = y - m.cy;
      m.sxx += v * dx * dx;
      m.sxy += v * dx * dy;
      m.syy += v * dy * dy;
    }
  }
  m.sxx /= m.mass;
  m.sxy /= m.mass;
  m.syy /= m.mass;
  return m;
}

struct ExtractedFeatures {
  HomoPoint centroid;
  HomoLine axis_line;
  std::pair<HomoPoint, HomoPoint> axis_endpoints;
  double mass = 0.0;
  double anisotropy = 1.0;
  bool isotropic = false;  // axis fell back to vertical
  double lambda_max = 0.0;
  double lambda_min = 0.0;
};

inline ExtractedFeatures pca_extract(const SaliencyMap& map, double min_mass = kMinMass) {
  const WeightedMoments m = weighted_moments(map);
  if (!(m.mass > min_mass)) {
    throw Error(ErrorCode::EmptyMask, "mask mass " + std::to_string(m.mass) + " <= " + std::to_string(min_mass));
  }

  // Closed-form eigen-decomposition of [[sxx, sxy], [sxy, syy]].
  const double half_tr = 0.5 * (m.sxx + m.syy);
  const double half_diff = 0.5 * (m.sxx - m.syy);
  const double r = std::hypot(half_diff, m.sxy);
  const double lmax = half_tr + r;
  const double lmin = std::max(half_tr - r, 0.0);

  ExtractedFeatures f;
  f.mass = m.mass;
  f.lambda_max = lmax;
  f.lambda_min = lmin;
  f.anisotropy = lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();
  f.isotropic = f.anisotropy < kIsotropyRatio;
  f.centroid = {m.cx, m.cy, 1.0};

  double dx = 0.0, dy = 1.0;
  if (!f.isotropic) {
    // Major-axis direction; the angle form is stable when sxy is tiny.
    const double theta = 0.5 * std::atan2(2.0 * m.sxy, m.sxx - m.syy);
    dx = std::cos(theta);
    dy = std::sin(theta);
    if (dy < 0.0 || (dy == 0.0 && dx < 0.0)) {
      dx = -dx;
      dy = -dy;
    }
  }
  f.axis_line = line_from_points(f.centroid, {m.cx + dx, m.cy + dy, 1.0});
  const double half = 2.0 * std::sqrt(lmax);
  f.axis_endpoints = {HomoPoint{m.cx - half * dx, m.cy - half * dy, 1.0},
                      HomoPoint{m.cx + half * dx, m.cy + half * dy, 1.0}};
  return f;
}

enum class PairingMode { ObjectGripper, ObjectObject };

/// Static point (W/2, 4H/5, 1) and the vertical line through the image
/// mid-centre complete object-gripper pairings.
struct PairingPolicy {
  PairingMode mode = PairingMode::ObjectGripper;
  std::vector<std::string> prompts;
  HomoPoint static_point;
  HomoLine static_line;
  // Second point on the static line, used as f2 of line-to-line pairings.
  HomoPoint static_point_upper;

  static PairingPolicy object_gripper(std::string prompt, int width, int height) {
    PairingPolicy p;
    p.mode = PairingMode::ObjectGripper;
    p.prompts = {std::move(prompt)};
    p.set_default_statics(width, height);
    return p;
  }

  static PairingPolicy object_object(std::string carried, std::string target, int width, int height) {
    PairingPolicy p;
    p.mode = PairingMode::ObjectObject;
    p.prompts = {std::move(carried), std::move(target)};
    p.set_default_statics(width, height);
    return p;
  }

  void set_default_statics(int width, int height) {
    const double w = width, h = height;
    static_point = {w / 2.0, 4.0 * h / 5.0, 1.0};
    static_point_upper = {w / 2.0, h / 5.0, 1.0};
    static_line = line_from_points({w / 2.0, h / 2.0, 1.0}, {w / 2.0, h / 2.0 + 1.0, 1.0});
  }

  std::size_t mask_count() const { return mode == PairingMode::ObjectGripper ? 1 : 2; }

  void validate() const {
    if (prompts.size() != mask_count()) {
      throw Error(ErrorCode::PolicyMismatch, "policy expects " + std::to_string(mask_count()) +
                                                 " prompt(s), got " + std::to_string(prompts.size()));
    }
  }
};

/// Binds constraint features. `carried` is the (frozen) object-object
/// partner and must be present iff the policy is ObjectObject.
inline BoundConstraint bind_features(ConstraintKind kind, const PairingPolicy& policy,
                                     const ExtractedFeatures& target,
                                     const ExtractedFeatures* carried = nullptr) {
  const bool oo = policy.mode == PairingMode::ObjectObject;
  if (oo != (carried != nullptr)) {
    throw Error(ErrorCode::PolicyMismatch, "carried-object features do not match pairing mode");
  }
  switch (kind) {
    case ConstraintKind::PointToPoint:
      return PointToPoint{oo ? carried->centroid : policy.static_point, target.centroid};
    case ConstraintKind::PointToLine:
      return PointToLine{oo ? carried->centroid : policy.static_point, target.axis_line};
    case ConstraintKind::LineToLine:
      if (oo) return LineToLine{carried->axis_endpoints.first, carried->axis_endpoints.second, target.axis_line};
      return LineToLine{policy.static_point, policy.static_point_upper, target.axis_line};
    case ConstraintKind::ParallelLines:
      return ParallelLines{oo ? carried->axis_line : policy.static_line, target.axis_line};
  }
  throw Error(ErrorCode::InvalidArgument, "unknown constraint kind");
}

inline ExtractedFeatures extract_from_mask(const SaliencyMap& mask, double tau = kDefaultThreshold) {
  return pca_extract(threshold_mask(mask, tau));
}

/// Masks are ordered like the policy prompts: (target) for ObjectGripper,
/// (carried, target) for ObjectObject.
inline BoundConstraint features_for_constraint(ConstraintKind kind, const PairingPolicy& policy,
                                               std::span<const SaliencyMap> masks) {
  if (masks.size() != policy.mask_count()) {
    throw Error(ErrorCode::PolicyMismatch, "policy expects " + std::to_string(policy.mask_count()) +
                                               " mask(s), got " + std::to_string(masks.size()));
  }
  if (policy.mode == PairingMode::ObjectGripper) {
    return bind_features(kind, policy, extract_from_mask(masks[0]));
  }
  const ExtractedFeatures carried = extract_from_mask(masks[0]);
  return bind_features(kind, policy, extract_from_mask(masks[1]), &carried);
}

}  // namespace salvs
