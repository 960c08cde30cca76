#pragma once

// Closed-loop episodes over the simulator: per-stage plants that turn
// frames into stacked constraint errors, a steppable multi-stage attempt
// runner, the attempt protocol, and trace replay.

#include <cstring>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "salvs/controller.hpp"
#include "salvs/error.hpp"
#include "salvs/geometry.hpp"
#include "salvs/saliency.hpp"
#include "salvs/simulator.hpp"

namespace salvs {

constexpr std::size_t annotation_click_count(ConstraintKind kind) {
  switch (kind) {
    case ConstraintKind::PointToPoint: return 2;
    case ConstraintKind::PointToLine: return 3;
    case ConstraintKind::LineToLine: return 4;
    case ConstraintKind::ParallelLines: return 4;
  }
  return 0;
}

/// Leading clicks that belong to the gripper side.
constexpr std::size_t annotation_static_count(ConstraintKind kind) {
  return kind == ConstraintKind::PointToPoint || kind == ConstraintKind::PointToLine ? 1 : 2;
}

/// Binds clicked image points: p2p (f1, f2), p2l (f1, f3, f4),
/// l2l (f1, f2, f3, f4), par (f1, f2, f3, f4); lines via cross products.
inline BoundConstraint bind_annotation(ConstraintKind kind, std::span<const HomoPoint> clicks) {
  if (clicks.size() != annotation_click_count(kind)) {
    throw Error(ErrorCode::InvalidArgument, std::string(to_string(kind)) + " needs " +
                                                std::to_string(annotation_click_count(kind)) + " points, got " +
                                                std::to_string(clicks.size()));
  }
  switch (kind) {
    case ConstraintKind::PointToPoint: return PointToPoint{clicks[0], clicks[1]};
    case ConstraintKind::PointToLine: return PointToLine{clicks[0], line_from_points(clicks[1], clicks[2])};
    case ConstraintKind::LineToLine:
      return LineToLine{clicks[0], clicks[1], line_from_points(clicks[2], clicks[3])};
    case ConstraintKind::ParallelLines:
      return ParallelLines{line_from_points(clicks[0], clicks[1]), line_from_points(clicks[2], clicks[3])};
  }
  throw Error(ErrorCode::InvalidArgument, "unknown constraint kind");
}

/// Anchors the target-side clicks on the support plane as seen from the
/// session's current pose.
inline ManualConstraint make_manual_constraint(const Session& session, ConstraintKind kind,
                                               std::span<const HomoPoint> clicks) {
  (void)bind_annotation(kind, clicks);  // arity and degeneracy check
  ManualConstraint mc;
  mc.kind = kind;
  const std::size_t n_static = annotation_static_count(kind);
  for (std::size_t i = 0; i < clicks.size(); ++i) {
    const HomoPoint p = normalize_point(clicks[i]);
    if (i < n_static) {
      mc.static_points.push_back(p);
      continue;
    }
    const auto ray = session.pixel_ray(p.x, p.y);
    const double dz = ray.direction().z();
    const double t = std::abs(dz) > 1e-12 ? (session.scenario().table_z - ray.origin().z()) / dz : -1.0;
    if (!(t > 0.0)) throw Error(ErrorCode::InvalidArgument, "annotated point does not hit the support plane");
    mc.anchors.push_back(ray.pointAt(t));
  }
  return mc;
}

inline BoundConstraint bind_manual(const ManualConstraint& mc, const CameraModel& cam, const Pose& camera_pose) {
  std::vector<HomoPoint> clicks = mc.static_points;
  for (const auto& a : mc.anchors) clicks.push_back(project(cam, camera_pose, a));
  return bind_annotation(mc.kind, clicks);
}

/// Servo plant for one stage: renders the stage's prompts, extracts PCA
/// features and stacks the constraint errors. Object-object carried
/// features are extracted on the first observation and then frozen.
class StagePlant {
 public:
  StagePlant(Session& session, const Stage& stage) : session_(session), stage_(stage) {
    if (stage_.manual.empty()) stage_.policy.validate();
  }

  JointVector q() const { return session_.q(); }
  void apply(const JointVector& dq) { session_.step(dq); }
  void move_to(const JointVector& q) { session_.set_q(q); }

  Observation observe() {
    Observation obs;
    if (!stage_.manual.empty()) {
      const Pose pose = session_.camera_pose();
      for (const auto& mc : stage_.manual) obs.features.push_back(bind_manual(mc, session_.camera(), pose));
    } else {
      const auto& policy = stage_.policy;
      if (policy.mode == PairingMode::ObjectObject && !carried_) {
        carried_ = extract_from_mask(session_.render_prompt(policy.prompts[0]));
      }
      const ExtractedFeatures target = extract_from_mask(session_.render_prompt(policy.prompts.back()));
      const ExtractedFeatures* carried = carried_ ? &*carried_ : nullptr;
      for (auto kind : stage_.constraints) obs.features.push_back(bind_features(kind, policy, target, carried));
    }
    obs.e = stack_errors(std::span<const BoundConstraint>(obs.features));
    return obs;
  }

  const Stage& stage() const { return stage_; }

 private:
  Session& session_;
  Stage stage_;
  std::optional<ExtractedFeatures> carried_;
};

struct TraceRecord {
  int step = 0;     // global, strictly increasing within a run
  int attempt = 1;  // 1-based
  int stage = 0;
  ServoRecord servo;
};

struct AttemptOutcome {
  int attempt = 1;
  AttemptStatus status = AttemptStatus::IterBudget;
  int stages_completed = 0;
  int iterations = 0;  // control steps over all stages
  double final_error_norm = 0.0;
};

using TraceSink = std::function<void(const TraceRecord&)>;

/// Runs the stages of one attempt from the session's current state. Every
/// `advance()` produces at most one trace record.
class AttemptRunner {
 public:
  AttemptRunner(Session& session, std::vector<Stage> stages, ControllerConfig cfg, int attempt = 1,
                int first_step = 0, TraceSink sink = {})
      : session_(session),
        stages_(std::move(stages)),
        cfg_(cfg),
        attempt_(attempt),
        next_step_(first_step),
        sink_(std::move(sink)) {
    if (stages_.empty()) throw Error(ErrorCode::InvalidArgument, "attempt needs at least one stage");
    cfg_.validate();
  }

  /// Returns false once the attempt has finished.
  bool advance() {
    if (outcome_) return false;
    if (!servo_) {
      plant_ = std::make_unique<StagePlant>(session_, stages_[stage_]);
      servo_ = std::make_unique<Servo<StagePlant>>(*plant_, cfg_, [this](const ServoRecord& r) { record(r); });
      servo_->start();
    } else {
      servo_->advance();
    }
    if (servo_->done()) finish_stage();
    return !outcome_.has_value();
  }

  AttemptOutcome run() {
    while (advance()) {
    }
    return *outcome_;
  }

  void abort() {
    if (outcome_) return;
    if (servo_) servo_->abort();
    close(AttemptStatus::Aborted);
  }

  bool done() const { return outcome_.has_value(); }
  const std::optional<AttemptOutcome>& outcome() const { return outcome_; }
  int next_step() const { return next_step_; }
  int stage_index() const { return stage_; }
  const Stage& current_stage() const { return stages_[std::min(stage_, static_cast<int>(stages_.size()) - 1)]; }
  const std::optional<TraceRecord>& last_record() const { return last_; }

 private:
  void record(const ServoRecord& r) {
    TraceRecord tr{next_step_++, attempt_, stage_, r};
    last_error_norm_ = r.e_norm;
    if (sink_) sink_(tr);
    last_ = std::move(tr);
  }

  void finish_stage() {
    const AttemptStatus s = *servo_->status();
    iterations_ += servo_->iteration();
    if (s != AttemptStatus::Converged) {
      close(s);
      return;
    }
    const Stage& st = stages_[stage_];
    if (!session_.evaluate_stage_success(st)) {
      close(AttemptStatus::Misaligned);
      return;
    }
    if (st.on_success) session_.attach(st.on_success->object, st.on_success->lift_m);
    ++stage_;
    servo_.reset();
    plant_.reset();
    if (stage_ == static_cast<int>(stages_.size())) close(AttemptStatus::Converged);
  }

  void close(AttemptStatus s) {
    outcome_ = AttemptOutcome{attempt_, s, stage_, iterations_, last_error_norm_};
  }

  Session& session_;
  std::vector<Stage> stages_;
  ControllerConfig cfg_;
  int attempt_;
  int next_step_;
  TraceSink sink_;
  int stage_ = 0;
  int iterations_ = 0;
  double last_error_norm_ = 0.0;
  std::unique_ptr<StagePlant> plant_;
  std::unique_ptr<Servo<StagePlant>> servo_;
  std::optional<AttemptOutcome> outcome_;
  std::optional<TraceRecord> last_;
};

inline AttemptOutcome run_attempt(Session& session, std::vector<Stage> stages, const ControllerConfig& cfg,
                                  int attempt = 1, TraceSink sink = {}) {
  return AttemptRunner(session, std::move(stages), cfg, attempt, 0, std::move(sink)).run();
}

struct EpisodeTrace {
  std::vector<TraceRecord> records;
  std::vector<AttemptOutcome> attempts;
  double success_rate = 0.0;

  std::vector<AttemptStatus> statuses() const {
    std::vector<AttemptStatus> out;
    for (const auto& a : attempts) out.push_back(a.status);
    return out;
  }
};

/// Attempt protocol: each attempt restarts from a freshly sampled initial
/// pose with a re-initialised Jacobian; stops once the score is settled.
inline EpisodeTrace run_task(const Scenario& scenario, std::uint64_t seed, const ControllerConfig& cfg,
                             TraceSink sink = {}) {
  cfg.validate();
  EpisodeTrace trace;
  Session session(scenario, seed);
  int step = 0;
  for (int a = 1; a <= cfg.max_attempts; ++a) {
    session.reset(a - 1);
    AttemptRunner runner(session, scenario.stages, cfg, a, step, [&](const TraceRecord& r) {
      trace.records.push_back(r);
      if (sink) sink(r);
    });
    trace.attempts.push_back(runner.run());
    step = runner.next_step();
    const auto st = trace.statuses();
    if (score_settled(st)) break;
  }
  const auto st = trace.statuses();
  trace.success_rate = score_task(st);
  return trace;
}

struct ReplayResult {
  std::vector<ErrorVector> errors;
  bool bit_identical = true;
  std::size_t first_mismatch = 0;
};

/// Re-drives a fresh session through the recorded commands of one attempt
/// and recomputes every error vector.
inline ReplayResult replay_attempt(const Scenario& scenario, std::uint64_t seed, std::span<const TraceRecord> records) {
  ReplayResult out;
  if (records.empty()) return out;
  Session session(scenario, seed);
  session.reset(records.front().attempt - 1);
  std::unique_ptr<StagePlant> plant;
  int stage = -1;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.stage != stage) {
      for (int s = std::max(stage, 0); s < r.stage; ++s) {
        if (const auto& act = scenario.stages[s].on_success) session.attach(act->object, act->lift_m);
      }
      stage = r.stage;
      plant = std::make_unique<StagePlant>(session, scenario.stages[stage]);
    }
    if (r.servo.iteration > 0) session.step(r.servo.dq);
    const ErrorVector e = plant->observe().e;
    const bool same = e.size() == r.servo.e.size() && session.q().size() == r.servo.q.size() &&
                      std::memcmp(e.data(), r.servo.e.data(), sizeof(double) * e.size()) == 0 &&
                      std::memcmp(session.q().data(), r.servo.q.data(), sizeof(double) * r.servo.q.size()) == 0;
    if (!same && out.bit_identical) {
      out.bit_identical = false;
      out.first_mismatch = i;
    }
    out.errors.push_back(e);
  }
  return out;
}

}  // namespace salvs
