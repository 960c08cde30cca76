#pragma once

// Deterministic eye-in-hand world: a pinhole camera carried by an N-DOF rig
// over primitive objects, rendering synthetic saliency masks.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "salvs/controller.hpp"
#include "salvs/error.hpp"
#include "salvs/geometry.hpp"
#include "salvs/saliency.hpp"

namespace salvs {

using Pose = Eigen::Isometry3d;  // maps local coordinates into the parent frame

inline constexpr double kMinDepth = 0.01;
inline constexpr double kMaskSigma = 2.0;

struct CameraModel {
  double fx = 500.0;
  double fy = 500.0;
  double cx = 320.0;
  double cy = 240.0;
  int width = 640;
  int height = 480;

  void validate() const {
    if (!(fx > 0 && fy > 0 && width >= 1 && height >= 1 && cx >= 0 && cx < width && cy >= 0 && cy < height)) {
      throw Error(ErrorCode::InvalidArgument, "camera intrinsics out of range");
    }
  }

  Eigen::Vector3d ray(double u, double v) const { return {(u - cx) / fx, (v - cy) / fy, 1.0}; }
};

/// Projects a camera-frame point.
inline HomoPoint project_camera_point(const CameraModel& cam, const Eigen::Vector3d& pc) {
  if (!(pc.z() > kMinDepth)) {
    throw Error(ErrorCode::BehindCamera, "depth " + std::to_string(pc.z()) + " <= " + std::to_string(kMinDepth));
  }
  return {cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy, 1.0};
}

inline HomoPoint project(const CameraModel& cam, const Pose& camera_pose, const Eigen::Vector3d& world_point) {
  return project_camera_point(cam, camera_pose.inverse() * world_point);
}

/// Camera orientation looking from `eye` toward `target`; `up` appears at
/// the top of the image (camera y points down, z along the optical axis).
inline Pose look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up) {
  const Eigen::Vector3d z = (target - eye).normalized();
  const Eigen::Vector3d up_perp = up - up.dot(z) * z;
  if (up_perp.norm() < 1e-12) throw Error(ErrorCode::InvalidArgument, "look_at: up is parallel to view direction");
  const Eigen::Vector3d y = -up_perp.normalized();
  const Eigen::Vector3d x = y.cross(z);
  Pose p = Pose::Identity();
  p.linear().col(0) = x;
  p.linear().col(1) = y;
  p.linear().col(2) = z;
  p.translation() = eye;
  return p;
}

inline Eigen::Matrix3d ypr_rotation(double yaw, double pitch, double roll) {
  return (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()) * Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

enum class DofAxis { X, Y, Z, Yaw, Pitch, Roll };

constexpr std::string_view to_string(DofAxis a) {
  switch (a) {
    case DofAxis::X: return "x";
    case DofAxis::Y: return "y";
    case DofAxis::Z: return "z";
    case DofAxis::Yaw: return "yaw";
    case DofAxis::Pitch: return "pitch";
    case DofAxis::Roll: return "roll";
  }
  return "?";
}

inline DofAxis parse_dof_axis(std::string_view s) {
  for (auto a : {DofAxis::X, DofAxis::Y, DofAxis::Z, DofAxis::Yaw, DofAxis::Pitch, DofAxis::Roll}) {
    if (to_string(a) == s) return a;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown DOF '" + std::string(s) + "'");
}

constexpr bool is_rotation(DofAxis a) { return a == DofAxis::Yaw || a == DofAxis::Pitch || a == DofAxis::Roll; }

struct Dof {
  DofAxis axis;
  double lower;
  double upper;
};

/// Translations are expressed in the base (tool) frame; rotations apply as
/// yaw (z), pitch (y), roll (x) in that fixed order.
struct Rig {
  Pose base = Pose::Identity();
  std::vector<Dof> dofs;

  static Rig four_dof(const Pose& base, double trans_limit = 0.3, double z_limit = 0.2, double yaw_limit = 1.2) {
    return {base,
            {{DofAxis::X, -trans_limit, trans_limit},
             {DofAxis::Y, -trans_limit, trans_limit},
             {DofAxis::Z, -z_limit, z_limit},
             {DofAxis::Yaw, -yaw_limit, yaw_limit}}};
  }

  std::size_t size() const { return dofs.size(); }

  Pose pose(const JointVector& q) const {
    if (static_cast<std::size_t>(q.size()) != dofs.size()) {
      throw Error(ErrorCode::InvalidArgument, "joint vector has wrong size");
    }
    Eigen::Vector3d t = Eigen::Vector3d::Zero();
    double yaw = 0, pitch = 0, roll = 0;
    for (std::size_t i = 0; i < dofs.size(); ++i) {
      const double v = q(static_cast<Eigen::Index>(i));
      switch (dofs[i].axis) {
        case DofAxis::X: t.x() += v; break;
        case DofAxis::Y: t.y() += v; break;
        case DofAxis::Z: t.z() += v; break;
        case DofAxis::Yaw: yaw += v; break;
        case DofAxis::Pitch: pitch += v; break;
        case DofAxis::Roll: roll += v; break;
      }
    }
    Pose p = Pose::Identity();
    p.translation() = base.translation() + base.linear() * t;
    p.linear() = base.linear() * ypr_rotation(yaw, pitch, roll);
    return p;
  }

  /// Clamps to the limits; returns true if any component moved.
  bool clamp(JointVector& q) const {
    bool clamped = false;
    for (std::size_t i = 0; i < dofs.size(); ++i) {
      auto& v = q(static_cast<Eigen::Index>(i));
      const double c = std::clamp(v, dofs[i].lower, dofs[i].upper);
      if (c != v) {
        clamped = true;
        v = c;
      }
    }
    return clamped;
  }
};

enum class Shape { Ellipsoid, Box, Marker };

constexpr std::string_view to_string(Shape s) {
  switch (s) {
    case Shape::Ellipsoid: return "ellipsoid";
    case Shape::Box: return "box";
    case Shape::Marker: return "marker";
  }
  return "?";
}

struct SceneObject {
  std::string id;
  Shape shape = Shape::Box;
  Pose pose = Pose::Identity();
  Eigen::Vector3d extent{0.01, 0.01, 0.01};  // semi-axes / half sizes, meters
  std::vector<std::string> prompt_tags;

  /// World direction of the longest extent.
  Eigen::Vector3d long_axis(const Pose& world_pose) const {
    Eigen::Index k = 0;
    extent.maxCoeff(&k);
    return world_pose.linear().col(k);
  }
};

namespace detail {

inline void splat_falloff(SaliencyMap& out, int x, int y, double dist) {
  const double v = std::exp(-dist * dist / (2.0 * kMaskSigma * kMaskSigma));
  out(x, y) = std::max(out(x, y), v);
}

struct PixelBox {
  int x0, y0, x1, y1;  // inclusive
  bool empty() const { return x1 < x0 || y1 < y0; }
};

inline PixelBox clip_box(double minx, double miny, double maxx, double maxy, const CameraModel& cam) {
  const double margin = 4.0 * kMaskSigma + 1.0;
  PixelBox b{static_cast<int>(std::floor(std::max(minx - margin, 0.0))),
             static_cast<int>(std::floor(std::max(miny - margin, 0.0))),
             static_cast<int>(std::ceil(std::min(maxx + margin, cam.width - 1.0))),
             static_cast<int>(std::ceil(std::min(maxy + margin, cam.height - 1.0)))};
  if (maxx + margin < 0 || maxy + margin < 0 || minx - margin > cam.width - 1 || miny - margin > cam.height - 1) {
    b.x1 = b.x0 - 1;
  }
  b.x1 = std::min(b.x1, cam.width - 1);
  b.y1 = std::min(b.y1, cam.height - 1);
  return b;
}

inline void render_ellipse(SaliencyMap& out, const CameraModel& cam, const Eigen::Vector2d& c,
                           const Eigen::Matrix2d& shape) {
  const Eigen::Matrix2d inv = shape.inverse();
  const double hx = std::sqrt(shape(0, 0));
  const double hy = std::sqrt(shape(1, 1));
  const PixelBox box = clip_box(c.x() - hx, c.y() - hy, c.x() + hx, c.y() + hy, cam);
  if (box.empty()) return;
  const double cutoff = 4.0 * kMaskSigma;
  for (int y = box.y0; y <= box.y1; ++y) {
    for (int x = box.x0; x <= box.x1; ++x) {
      const Eigen::Vector2d d(x - c.x(), y - c.y());
      const Eigen::Vector2d g = inv * d;
      const double r2 = d.dot(g);
      if (r2 <= 1.0) {
        out(x, y) = 1.0;
        continue;
      }
      const double r = std::sqrt(r2);
      // First-order distance to the r = 1 level set.
      const double dist = (r - 1.0) * r / g.norm();
      if (dist <= cutoff) splat_falloff(out, x, y, dist);
    }
  }
}

inline double cross2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

/// Andrew's monotone chain; counter-clockwise in (x right, y down) terms of cross2 > 0.
inline std::vector<Eigen::Vector2d> convex_hull(std::vector<Eigen::Vector2d> pts) {
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  if (pts.size() < 3) return pts;
  std::vector<Eigen::Vector2d> hull(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross2(hull[k - 1] - hull[k - 2], pts[i] - hull[k - 2]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross2(hull[k - 1] - hull[k - 2], pts[i - 1] - hull[k - 2]) <= 0) --k;
    hull[k++] = pts[i - 1];
  }
  hull.resize(k - 1);
  return hull;
}

inline double segment_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (a + t * ab - p).norm();
}

inline void render_polygon(SaliencyMap& out, const CameraModel& cam, const std::vector<Eigen::Vector2d>& hull) {
  if (hull.size() < 3) return;
  double minx = hull[0].x(), maxx = minx, miny = hull[0].y(), maxy = miny;
  for (const auto& p : hull) {
    minx = std::min(minx, p.x());
    maxx = std::max(maxx, p.x());
    miny = std::min(miny, p.y());
    maxy = std::max(maxy, p.y());
  }
  const PixelBox box = clip_box(minx, miny, maxx, maxy, cam);
  if (box.empty()) return;
  const double cutoff = 4.0 * kMaskSigma;
  const std::size_t n = hull.size();
  for (int y = box.y0; y <= box.y1; ++y) {
    for (int x = box.x0; x <= box.x1; ++x) {
      const Eigen::Vector2d p(x, y);
      bool inside = true;
      for (std::size_t i = 0; i < n && inside; ++i) {
        inside = cross2(hull[(i + 1) % n] - hull[i], p - hull[i]) >= 0.0;
      }
      if (inside) {
        out(x, y) = 1.0;
        continue;
      }
      double dist = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) dist = std::min(dist, segment_distance(p, hull[i], hull[(i + 1) % n]));
      if (dist <= cutoff) splat_falloff(out, x, y, dist);
    }
  }
}

}  // namespace detail

/// Renders the silhouette of an object with world pose `object_pose`:
/// ellipsoids as the ellipse spanned by their projected semi-axes, boxes
/// and markers as the convex hull of the projected corners.
inline SaliencyMap render_mask(const CameraModel& cam, const Pose& camera_pose, const SceneObject& object,
                               const Pose& object_pose) {
  const Pose to_cam = camera_pose.inverse() * object_pose;
  const Eigen::Vector3d c = to_cam.translation();
  std::array<Eigen::Vector3d, 3> axes;
  for (int k = 0; k < 3; ++k) axes[k] = to_cam.linear().col(k) * object.extent(k);

  auto proj = [&](const Eigen::Vector3d& p) -> Eigen::Vector2d {
    try {
      const HomoPoint h = project_camera_point(cam, p);
      return {h.x, h.y};
    } catch (const Error&) {
      throw Error(ErrorCode::NotVisible, "object '" + object.id + "' is behind the camera");
    }
  };

  SaliencyMap out(cam.width, cam.height);
  if (object.shape == Shape::Ellipsoid) {
    const Eigen::Vector2d center = proj(c);
    Eigen::Matrix2d shape = Eigen::Matrix2d::Zero();
    for (const auto& a : axes) {
      const Eigen::Vector2d v = 0.5 * (proj(c + a) - proj(c - a));
      shape += v * v.transpose();
    }
    detail::render_ellipse(out, cam, center, shape);
  } else {
    std::vector<Eigen::Vector2d> corners;
    for (int sx : {-1, 1})
      for (int sy : {-1, 1})
        for (int sz : {-1, 1}) corners.push_back(proj(c + sx * axes[0] + sy * axes[1] + sz * axes[2]));
    detail::render_polygon(out, cam, detail::convex_hull(std::move(corners)));
  }
  bool any = false;
  for (double v : out.values()) {
    if (v > 0.0) {
      any = true;
      break;
    }
  }
  if (!any) throw Error(ErrorCode::NotVisible, "object '" + object.id + "' is outside the field of view");
  return out;
}

inline SaliencyMap render_mask(const CameraModel& cam, const Pose& camera_pose, const SceneObject& object) {
  return render_mask(cam, camera_pose, object, object.pose);
}

enum class TaskContext { ReachAndGrasp, PickAndPlace, PullOpen, GraspAndPour };

constexpr std::string_view to_string(TaskContext c) {
  switch (c) {
    case TaskContext::ReachAndGrasp: return "ReachAndGrasp";
    case TaskContext::PickAndPlace: return "PickAndPlace";
    case TaskContext::PullOpen: return "PullOpen";
    case TaskContext::GraspAndPour: return "GraspAndPour";
  }
  return "?";
}

struct SuccessPredicate {
  enum class Type { Grasp, Over, Converged };
  Type type = Type::Converged;
  std::string object;  // grasped object, or the carried object for Over
  std::string target;  // Over only
  double tolerance_m = 0.01;
  std::optional<double> max_angle_deg;
};

struct AttachAction {
  std::string object;
  double lift_m = 0.0;
};

/// User-annotated constraint: gripper-side points stay fixed in the image,
/// target-side points are world anchors re-projected every frame.
struct ManualConstraint {
  ConstraintKind kind = ConstraintKind::PointToPoint;
  std::vector<HomoPoint> static_points;
  std::vector<Eigen::Vector3d> anchors;
};

struct Stage {
  std::string name;
  PairingPolicy policy;
  std::vector<ConstraintKind> constraints;
  std::vector<ManualConstraint> manual;  // replaces mask-derived features when non-empty
  SuccessPredicate success;
  std::optional<AttachAction> on_success;
};

struct InitialQ {
  JointVector nominal;
  JointVector spread;
};

struct Scenario {
  std::string name;
  TaskContext context = TaskContext::ReachAndGrasp;
  CameraModel camera;
  Rig rig;
  InitialQ initial_q;
  std::uint64_t seed = 0;
  double table_z = 0.0;  // support plane used to anchor annotated points
  std::vector<SceneObject> objects;
  std::vector<Stage> stages;

  const SceneObject* find_object(std::string_view id) const {
    for (const auto& o : objects)
      if (o.id == id) return &o;
    return nullptr;
  }

  const SceneObject* object_for_prompt(std::string_view prompt) const {
    for (const auto& o : objects)
      for (const auto& t : o.prompt_tags)
        if (t == prompt) return &o;
    return nullptr;
  }
};

/// Deterministic 64-bit generator (SplitMix64); portable across standard
/// libraries, unlike the std distributions.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

 private:
  std::uint64_t state_;
};

inline JointVector sample_initial_q(const Scenario& s, std::uint64_t seed, int attempt) {
  SplitMix64 rng(seed * 0x100000001b3ULL + static_cast<std::uint64_t>(attempt) + 1);
  JointVector q = s.initial_q.nominal;
  for (Eigen::Index i = 0; i < q.size(); ++i) q(i) += s.initial_q.spread(i) * rng.uniform(-1.0, 1.0);
  s.rig.clamp(q);
  return q;
}

struct FrameBundle {
  JointVector q;
  std::vector<std::string> prompts;
  std::vector<std::optional<SaliencyMap>> masks;  // nullopt when not visible
  std::vector<std::optional<HomoPoint>> true_points;
  bool clamped = false;
};

/// Single-writer simulation session.
class Session {
 public:
  Session(Scenario scenario, std::uint64_t seed) : scenario_(std::move(scenario)), seed_(seed) {
    scenario_.camera.validate();
    reset(0);
  }

  const Scenario& scenario() const { return scenario_; }
  const CameraModel& camera() const { return scenario_.camera; }
  std::uint64_t seed() const { return seed_; }

  /// Restores the initial world and samples the initial pose of an attempt.
  void reset(int attempt) {
    attached_.clear();
    q_ = sample_initial_q(scenario_, seed_, attempt);
  }

  const JointVector& q() const { return q_; }
  Pose camera_pose() const { return scenario_.rig.pose(q_); }

  /// Moves by dq, clamping at the joint limits.
  bool step(const JointVector& dq) {
    if (dq.size() != q_.size()) throw Error(ErrorCode::InvalidArgument, "dq has wrong size");
    q_ += dq;
    return scenario_.rig.clamp(q_);
  }

  bool set_q(const JointVector& q) {
    if (q.size() != q_.size()) throw Error(ErrorCode::InvalidArgument, "q has wrong size");
    q_ = q;
    return scenario_.rig.clamp(q_);
  }

  Pose object_pose(const SceneObject& o) const {
    if (auto it = attached_.find(o.id); it != attached_.end()) return camera_pose() * it->second;
    return o.pose;
  }

  /// Rigidly attaches an object to the camera, optionally lifting it first.
  void attach(const std::string& id, double lift_m) {
    const SceneObject* o = scenario_.find_object(id);
    if (!o) throw Error(ErrorCode::InvalidArgument, "no object '" + id + "'");
    Pose world = object_pose(*o);
    world.translation().z() += lift_m;
    attached_[id] = camera_pose().inverse() * world;
  }

  bool is_attached(const std::string& id) const { return attached_.count(id) != 0; }

  /// Throws NotVisible when the object projects off-screen or behind the camera.
  SaliencyMap render_prompt(std::string_view prompt) const {
    const SceneObject* o = scenario_.object_for_prompt(prompt);
    if (!o) throw Error(ErrorCode::InvalidArgument, "no object matches prompt '" + std::string(prompt) + "'");
    return render_mask(scenario_.camera, camera_pose(), *o, object_pose(*o));
  }

  FrameBundle frame(const std::vector<std::string>& prompts, bool clamped = false) const {
    FrameBundle f;
    f.q = q_;
    f.prompts = prompts;
    f.clamped = clamped;
    const Pose cam_pose = camera_pose();
    for (const auto& p : prompts) {
      try {
        f.masks.emplace_back(render_prompt(p));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NotVisible) throw;
        f.masks.emplace_back(std::nullopt);
      }
      const SceneObject* o = scenario_.object_for_prompt(p);
      try {
        f.true_points.emplace_back(project(scenario_.camera, cam_pose, object_pose(*o).translation()));
      } catch (const Error&) {
        f.true_points.emplace_back(std::nullopt);
      }
    }
    return f;
  }

  /// Camera-frame ray through pixel (u, v), expressed in the world frame.
  Eigen::ParametrizedLine<double, 3> pixel_ray(double u, double v) const {
    const Pose cp = camera_pose();
    return {cp.translation(), (cp.linear() * scenario_.camera.ray(u, v)).normalized()};
  }

  bool evaluate_stage_success(const Stage& stage) const {
    using T = SuccessPredicate::Type;
    const auto& pred = stage.success;
    if (pred.type == T::Converged) return true;
    const SceneObject* obj = scenario_.find_object(pred.object);
    if (!obj) return false;
    const Pose obj_pose = object_pose(*obj);
    const Pose cam = camera_pose();
    // Angles are compared in the image plane (camera x-y components).
    auto planar_angle_deg = [&](const Eigen::Vector3d& a_world, const Eigen::Vector3d& b_world) {
      const Eigen::Vector3d a = cam.linear().transpose() * a_world;
      const Eigen::Vector3d b = cam.linear().transpose() * b_world;
      const double ang = std::atan2(std::abs(a.x() * b.y() - a.y() * b.x()), a.x() * b.x() + a.y() * b.y());
      const double deg = ang * 180.0 / M_PI;
      return std::min(deg, 180.0 - deg);
    };
    if (pred.type == T::Grasp) {
      const auto& sp = stage.policy.static_point;
      const auto ray = pixel_ray(sp.x, sp.y);
      if (ray.distance(obj_pose.translation()) > pred.tolerance_m) return false;
      if (pred.max_angle_deg) {
        const Eigen::Vector3d gripper_axis = cam.linear().col(1);
        if (planar_angle_deg(obj->long_axis(obj_pose), gripper_axis) > *pred.max_angle_deg) return false;
      }
      return true;
    }
    const SceneObject* tgt = scenario_.find_object(pred.target);
    if (!tgt) return false;
    const Pose tgt_pose = object_pose(*tgt);
    const Eigen::Vector3d dir = (obj_pose.translation() - cam.translation()).normalized();
    const Eigen::ParametrizedLine<double, 3> ray(cam.translation(), dir);
    if (ray.distance(tgt_pose.translation()) > pred.tolerance_m) return false;
    if (pred.max_angle_deg &&
        planar_angle_deg(obj->long_axis(obj_pose), tgt->long_axis(tgt_pose)) > *pred.max_angle_deg) {
      return false;
    }
    return true;
  }

 private:
  Scenario scenario_;
  std::uint64_t seed_;
  JointVector q_;
  std::map<std::string, Pose> attached_;
};

}  // namespace salvs
