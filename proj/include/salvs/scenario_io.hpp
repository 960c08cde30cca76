#pragma once

// Scenario documents (JSON). The schema is documented in docs/scenario_schema.md;
// unknown fields are rejected and every error names the offending path.

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "salvs/error.hpp"
#include "salvs/simulator.hpp"

namespace salvs {

namespace detail {

using nlohmann::json;

class SchemaNode {
 public:
  SchemaNode(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(ErrorCode::SchemaError, (path_.empty() ? std::string("/") : path_) + ": " + msg);
  }

  const std::string& path() const { return path_; }
  const json& raw() const { return j_; }

  void expect_object(std::initializer_list<const char*> allowed) const {
    if (!j_.is_object()) fail("expected an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j_.items()) {
      if (!ok.count(k)) SchemaNode(v, path_ + "/" + k).fail("unknown field");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  SchemaNode at(const char* key) const {
    if (!j_.contains(key)) fail(std::string("missing field '") + key + "'");
    return {j_.at(key), path_ + "/" + key};
  }

  std::vector<SchemaNode> items() const {
    if (!j_.is_array()) fail("expected an array");
    std::vector<SchemaNode> out;
    for (std::size_t i = 0; i < j_.size(); ++i) out.emplace_back(j_.at(i), path_ + "/" + std::to_string(i));
    return out;
  }

  std::string str() const {
    if (!j_.is_string()) fail("expected a string");
    return j_.get<std::string>();
  }

  double num() const {
    if (!j_.is_number()) fail("expected a number");
    return j_.get<double>();
  }

  std::uint64_t uint() const {
    if (!j_.is_number_unsigned() && !(j_.is_number_integer() && j_.get<std::int64_t>() >= 0)) {
      fail("expected a nonnegative integer");
    }
    return j_.get<std::uint64_t>();
  }

  int integer() const {
    if (!j_.is_number_integer()) fail("expected an integer");
    return j_.get<int>();
  }

  Eigen::VectorXd vec(std::size_t n = 0) const {
    const auto xs = items();
    if (n != 0 && xs.size() != n) fail("expected " + std::to_string(n) + " numbers");
    Eigen::VectorXd v(static_cast<Eigen::Index>(xs.size()));
    for (std::size_t i = 0; i < xs.size(); ++i) v(static_cast<Eigen::Index>(i)) = xs[i].num();
    return v;
  }

  Eigen::Vector3d vec3() const { return vec(3); }

  std::vector<std::string> strings() const {
    std::vector<std::string> out;
    for (const auto& x : items()) out.push_back(x.str());
    return out;
  }

 private:
  const json& j_;
  std::string path_;
};

inline TaskContext parse_context(const SchemaNode& n) {
  const std::string s = n.str();
  for (auto c : {TaskContext::ReachAndGrasp, TaskContext::PickAndPlace, TaskContext::PullOpen,
                 TaskContext::GraspAndPour}) {
    if (to_string(c) == s) return c;
  }
  n.fail("unknown context '" + s + "'");
}

inline CameraModel parse_camera(const SchemaNode& n) {
  n.expect_object({"width", "height", "fx", "fy", "cx", "cy"});
  CameraModel c;
  if (n.has("width")) c.width = n.at("width").integer();
  if (n.has("height")) c.height = n.at("height").integer();
  if (n.has("fx")) c.fx = n.at("fx").num();
  if (n.has("fy")) c.fy = n.at("fy").num();
  c.cx = n.has("cx") ? n.at("cx").num() : c.width / 2.0;
  c.cy = n.has("cy") ? n.at("cy").num() : c.height / 2.0;
  try {
    c.validate();
  } catch (const Error& e) {
    n.fail(e.what());
  }
  return c;
}

inline Rig parse_rig(const SchemaNode& n) {
  n.expect_object({"base", "dofs"});
  const SchemaNode b = n.at("base");
  b.expect_object({"eye", "look_at", "up"});
  Rig rig;
  try {
    rig.base = look_at(b.at("eye").vec3(), b.at("look_at").vec3(), b.at("up").vec3());
  } catch (const Error& e) {
    b.fail(e.what());
  }
  for (const auto& d : n.at("dofs").items()) {
    d.expect_object({"axis", "limits"});
    DofAxis axis{};
    try {
      axis = parse_dof_axis(d.at("axis").str());
    } catch (const Error&) {
      d.at("axis").fail("unknown DOF axis");
    }
    const Eigen::VectorXd lim = d.at("limits").vec(2);
    if (!(lim(0) < lim(1))) d.at("limits").fail("lower limit must be below upper limit");
    for (const auto& other : rig.dofs) {
      if (other.axis == axis) d.at("axis").fail("duplicate DOF axis");
    }
    rig.dofs.push_back({axis, lim(0), lim(1)});
  }
  if (rig.dofs.empty()) n.at("dofs").fail("rig needs at least one DOF");
  return rig;
}

inline SceneObject parse_object(const SchemaNode& n) {
  n.expect_object({"id", "shape", "position", "ypr_deg", "extent", "prompts"});
  SceneObject o;
  o.id = n.at("id").str();
  if (o.id.empty()) n.at("id").fail("empty id");
  const std::string shape = n.at("shape").str();
  if (shape == "ellipsoid") {
    o.shape = Shape::Ellipsoid;
  } else if (shape == "box") {
    o.shape = Shape::Box;
  } else if (shape == "marker") {
    o.shape = Shape::Marker;
  } else {
    n.at("shape").fail("unknown shape '" + shape + "'");
  }
  o.pose = Pose::Identity();
  o.pose.translation() = n.at("position").vec3();
  if (n.has("ypr_deg")) {
    const Eigen::Vector3d a = n.at("ypr_deg").vec3() * (M_PI / 180.0);
    o.pose.linear() = ypr_rotation(a(0), a(1), a(2));
  }
  o.extent = n.at("extent").vec3();
  if (!(o.extent.minCoeff() > 0)) n.at("extent").fail("extents must be positive");
  o.prompt_tags = n.at("prompts").strings();
  if (o.prompt_tags.empty()) n.at("prompts").fail("object needs at least one prompt tag");
  return o;
}

inline Stage parse_stage(const SchemaNode& n, const Scenario& s) {
  n.expect_object({"name", "policy", "constraints", "success", "on_success"});
  Stage st;
  st.name = n.at("name").str();

  const SchemaNode pol = n.at("policy");
  pol.expect_object({"mode", "prompts"});
  const std::string mode = pol.at("mode").str();
  const auto prompts = pol.at("prompts").strings();
  if (mode == "ObjectGripper") {
    if (prompts.size() != 1) pol.at("prompts").fail("ObjectGripper takes exactly one prompt");
    st.policy = PairingPolicy::object_gripper(prompts[0], s.camera.width, s.camera.height);
  } else if (mode == "ObjectObject") {
    if (prompts.size() != 2) pol.at("prompts").fail("ObjectObject takes exactly two prompts");
    st.policy = PairingPolicy::object_object(prompts[0], prompts[1], s.camera.width, s.camera.height);
  } else {
    pol.at("mode").fail("unknown pairing mode '" + mode + "'");
  }
  const auto pnodes = pol.at("prompts").items();
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (!s.object_for_prompt(prompts[i])) pnodes[i].fail("prompt '" + prompts[i] + "' matches no object");
  }

  for (const auto& c : n.at("constraints").items()) {
    try {
      st.constraints.push_back(parse_constraint_kind(c.str()));
    } catch (const Error&) {
      c.fail("unknown constraint kind");
    }
  }
  if (st.constraints.empty()) n.at("constraints").fail("stage needs at least one constraint");

  const SchemaNode suc = n.at("success");
  suc.expect_object({"type", "object", "target", "tolerance_m", "max_angle_deg"});
  const std::string type = suc.at("type").str();
  using T = SuccessPredicate::Type;
  if (type == "grasp") {
    st.success.type = T::Grasp;
  } else if (type == "over") {
    st.success.type = T::Over;
  } else if (type == "converged") {
    st.success.type = T::Converged;
  } else {
    suc.at("type").fail("unknown success type '" + type + "'");
  }
  if (st.success.type != T::Converged) {
    st.success.object = suc.at("object").str();
    if (!s.find_object(st.success.object)) suc.at("object").fail("no object '" + st.success.object + "'");
  }
  if (st.success.type == T::Over) {
    st.success.target = suc.at("target").str();
    if (!s.find_object(st.success.target)) suc.at("target").fail("no object '" + st.success.target + "'");
  }
  if (suc.has("tolerance_m")) {
    st.success.tolerance_m = suc.at("tolerance_m").num();
    if (!(st.success.tolerance_m > 0)) suc.at("tolerance_m").fail("tolerance must be positive");
  }
  if (suc.has("max_angle_deg")) st.success.max_angle_deg = suc.at("max_angle_deg").num();

  if (n.has("on_success")) {
    const SchemaNode os = n.at("on_success");
    os.expect_object({"attach", "lift_m"});
    AttachAction a;
    a.object = os.at("attach").str();
    if (!s.find_object(a.object)) os.at("attach").fail("no object '" + a.object + "'");
    if (os.has("lift_m")) a.lift_m = os.at("lift_m").num();
    st.on_success = a;
  }
  return st;
}

}  // namespace detail

inline Scenario load_scenario(const nlohmann::json& doc) {
  using detail::SchemaNode;
  const SchemaNode root(doc, "");
  root.expect_object({"name", "context", "seed", "table_z", "camera", "rig", "initial_q", "objects", "stages"});
  Scenario s;
  s.name = root.at("name").str();
  s.context = detail::parse_context(root.at("context"));
  if (root.has("seed")) s.seed = root.at("seed").uint();
  if (root.has("table_z")) s.table_z = root.at("table_z").num();
  s.camera = detail::parse_camera(root.at("camera"));
  s.rig = detail::parse_rig(root.at("rig"));

  const SchemaNode iq = root.at("initial_q");
  iq.expect_object({"nominal", "spread"});
  s.initial_q.nominal = iq.at("nominal").vec(s.rig.size());
  s.initial_q.spread = iq.has("spread") ? iq.at("spread").vec(s.rig.size())
                                        : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(s.rig.size()));
  if (s.initial_q.spread.minCoeff() < 0) iq.at("spread").fail("spread must be nonnegative");

  std::set<std::string> ids;
  for (const auto& o : root.at("objects").items()) {
    s.objects.push_back(detail::parse_object(o));
    if (!ids.insert(s.objects.back().id).second) o.at("id").fail("duplicate object id");
  }
  const auto stages = root.at("stages").items();
  if (stages.empty()) root.at("stages").fail("scenario needs at least one stage");
  for (const auto& st : stages) s.stages.push_back(detail::parse_stage(st, s));
  return s;
}

inline Scenario load_scenario_text(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::SchemaError, std::string("/: not valid JSON: ") + e.what());
  }
  return load_scenario(doc);
}

inline Scenario load_scenario_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "scenario not found: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return load_scenario_text(ss.str());
}

}  // namespace salvs
