#pragma once

// Uncalibrated image-based visual servoing: central-difference Jacobian
// initialisation, Broyden rank-one updates, a damped least-squares control
// step, and a steppable servo loop over any plant that satisfies
// `ServoPlant`.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "salvs/error.hpp"
#include "salvs/geometry.hpp"

namespace salvs {

using JointVector = Eigen::VectorXd;
using JacobianEstimate = Eigen::MatrixXd;

struct ControllerConfig {
  double gain = 0.1;
  double damping = 1e-3;
  double max_step = 0.02;
  double fd_delta = 0.005;
  double min_dq_norm = 1e-6;
  double converge_eps = 2.0;
  int max_iters = 200;
  int max_attempts = 3;
  double diverge_factor = 4.0;
  int diverge_window = 10;
  // Halvings of fd_delta tried when a probe loses the features.
  int probe_retries = 3;

  void validate() const {
    if (!(gain > 0 && damping >= 0 && max_step > 0 && fd_delta > 0 && min_dq_norm > 0 &&
          converge_eps > 0 && max_iters >= 0 && max_attempts >= 1 && diverge_factor > 0 &&
          diverge_window >= 1)) {
      throw Error(ErrorCode::InvalidArgument, "controller configuration out of range");
    }
  }
};

enum class AttemptStatus { Converged, Diverged, IterBudget, FeatureLost, Misaligned, Aborted };

constexpr std::string_view to_string(AttemptStatus s) {
  switch (s) {
    case AttemptStatus::Converged: return "Converged";
    case AttemptStatus::Diverged: return "Diverged";
    case AttemptStatus::IterBudget: return "IterBudget";
    case AttemptStatus::FeatureLost: return "FeatureLost";
    case AttemptStatus::Misaligned: return "Misaligned";
    case AttemptStatus::Aborted: return "Aborted";
  }
  return "?";
}

inline AttemptStatus parse_attempt_status(std::string_view s) {
  for (auto v : {AttemptStatus::Converged, AttemptStatus::Diverged, AttemptStatus::IterBudget,
                 AttemptStatus::FeatureLost, AttemptStatus::Misaligned, AttemptStatus::Aborted}) {
    if (to_string(v) == s) return v;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown attempt status '" + std::string(s) + "'");
}

/// Central differences: column j = (e(q0 + d u_j) - e(q0 - d u_j)) / 2d.
template <class Probe>
  requires std::invocable<Probe&, const JointVector&>
JacobianEstimate init_jacobian(Probe&& probe, const JointVector& q0, const ControllerConfig& cfg) {
  const double d = cfg.fd_delta;
  JacobianEstimate J;
  for (Eigen::Index j = 0; j < q0.size(); ++j) {
    JointVector qp = q0, qm = q0;
    qp(j) += d;
    qm(j) -= d;
    ErrorVector ep, em;
    try {
      ep = probe(qp);
      em = probe(qm);
    } catch (const Error& err) {
      throw Error(ErrorCode::ProbeFailed, "probe on DOF " + std::to_string(j) + " failed: " + err.what());
    }
    if (ep.size() != em.size() || (J.size() != 0 && ep.size() != J.rows())) {
      throw Error(ErrorCode::ProbeFailed, "probe returned inconsistent error dimensions");
    }
    if (J.size() == 0) J = JacobianEstimate::Zero(ep.size(), q0.size());
    J.col(j) = (ep - em) / (2.0 * d);
  }
  return J;
}

/// J' = J + (de - J dq) dq^T / (dq^T dq); skipped when |dq| < min_dq_norm.
inline JacobianEstimate broyden_update(const JacobianEstimate& J, const JointVector& dq, const ErrorVector& de,
                                       const ControllerConfig& cfg, bool* accepted = nullptr) {
  const double nn = dq.squaredNorm();
  const bool ok = std::sqrt(nn) >= cfg.min_dq_norm;
  if (accepted) *accepted = ok;
  if (!ok) return J;
  const ErrorVector residual = de - J * dq;
  return J + residual * dq.transpose() / nn;
}

/// dq = -gain (J^T J + mu I)^-1 J^T e, clamped per DOF to +-max_step.
inline JointVector control_step(const JacobianEstimate& J, const ErrorVector& e, const ControllerConfig& cfg) {
  if (!J.allFinite() || !e.allFinite()) {
    throw Error(ErrorCode::SingularSystem, "non-finite Jacobian or error");
  }
  const Eigen::Index n = J.cols();
  const Eigen::MatrixXd normal = J.transpose() * J + cfg.damping * Eigen::MatrixXd::Identity(n, n);
  const Eigen::VectorXd rhs = J.transpose() * e;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(normal);
  if (!lu.isInvertible()) throw Error(ErrorCode::SingularSystem, "damped normal matrix is singular");
  JointVector dq = -cfg.gain * lu.solve(rhs);
  if (!dq.allFinite()) throw Error(ErrorCode::SingularSystem, "non-finite control step");
  for (Eigen::Index i = 0; i < dq.size(); ++i) dq(i) = std::clamp(dq(i), -cfg.max_step, cfg.max_step);
  return dq;
}

inline double condition_estimate(const JacobianEstimate& J) {
  if (J.size() == 0) return 0.0;
  const Eigen::VectorXd s = Eigen::JacobiSVD<Eigen::MatrixXd>(J).singularValues();
  const double smin = s(s.size() - 1);
  if (smin == 0.0) return std::numeric_limits<double>::infinity();
  return s(0) / smin;
}

/// Percentage credit for one task: first-attempt success 100, second 50,
/// anything else 0.
inline double score_task(std::span<const AttemptStatus> attempts) {
  if (!attempts.empty() && attempts[0] == AttemptStatus::Converged) return 100.0;
  if (attempts.size() >= 2 && attempts[1] == AttemptStatus::Converged) return 50.0;
  return 0.0;
}

/// True once further attempts cannot change the score.
inline bool score_settled(std::span<const AttemptStatus> attempts) {
  if (attempts.empty()) return false;
  if (attempts.back() == AttemptStatus::Converged) return true;
  return attempts.size() >= 2;
}

struct Observation {
  ErrorVector e;
  std::vector<BoundConstraint> features;
};

template <class P>
concept ServoPlant = requires(P& p, const JointVector& v) {
  { p.q() } -> std::convertible_to<JointVector>;
  { p.observe() } -> std::same_as<Observation>;
  p.apply(v);
  p.move_to(v);
};

/// One servo record: the state after `iteration` control steps.
struct ServoRecord {
  int iteration = 0;
  JointVector q;
  JointVector dq;  // command applied to reach this state (zero at iteration 0)
  ErrorVector e;
  double e_norm = 0.0;
  std::vector<BoundConstraint> features;
  double j_cond = 0.0;
};

/// Steppable servo loop. `start()` observes the initial state; each
/// `advance()` runs one control step until a terminal status is reached.
template <ServoPlant Plant>
class Servo {
 public:
  using Observer = std::function<void(const ServoRecord&)>;

  Servo(Plant& plant, ControllerConfig cfg, Observer observer = {})
      : plant_(plant), cfg_(cfg), observer_(std::move(observer)) {
    cfg_.validate();
  }

  void start() {
    Observation obs;
    try {
      obs = plant_.observe();
    } catch (const Error& err) {
      if (!is_feature_loss(err)) throw;
      status_ = AttemptStatus::FeatureLost;
      return;
    }
    q_ = plant_.q();
    e_ = obs.e;
    initial_norm_ = e_.norm();
    emit(JointVector::Zero(q_.size()), obs);
    if (check_converged()) return;
    if (iteration_ >= cfg_.max_iters) {
      status_ = AttemptStatus::IterBudget;
      return;
    }
    if (!initialise_jacobian()) return;
  }

  /// Returns false when the servo has already terminated.
  bool advance() {
    if (status_) return false;
    const JointVector dq_cmd = control_step(J_, e_, cfg_);
    plant_.apply(dq_cmd);
    ++iteration_;
    Observation obs;
    try {
      obs = plant_.observe();
    } catch (const Error& err) {
      if (!is_feature_loss(err)) throw;
      status_ = AttemptStatus::FeatureLost;
      return false;
    }
    const JointVector q_new = plant_.q();
    const JointVector dq = q_new - q_;
    if (obs.e.size() == e_.size()) J_ = broyden_update(J_, dq, obs.e - e_, cfg_);
    q_ = q_new;
    e_ = obs.e;
    emit(dq_cmd, obs);

    if (check_converged()) return false;
    diverging_ = e_.norm() > cfg_.diverge_factor * initial_norm_ ? diverging_ + 1 : 0;
    if (diverging_ >= cfg_.diverge_window) {
      status_ = AttemptStatus::Diverged;
      return false;
    }
    if (iteration_ >= cfg_.max_iters) {
      status_ = AttemptStatus::IterBudget;
      return false;
    }
    return true;
  }

  AttemptStatus run() {
    start();
    while (advance()) {
    }
    return *status_;
  }

  void abort() {
    if (!status_) status_ = AttemptStatus::Aborted;
  }

  bool done() const { return status_.has_value(); }
  std::optional<AttemptStatus> status() const { return status_; }
  int iteration() const { return iteration_; }
  const ErrorVector& error() const { return e_; }
  const JacobianEstimate& jacobian() const { return J_; }

 private:
  static bool is_feature_loss(const Error& err) {
    return err.code() == ErrorCode::EmptyMask || err.code() == ErrorCode::NotVisible ||
           err.code() == ErrorCode::BehindCamera || err.code() == ErrorCode::ProbeFailed;
  }

  bool check_converged() {
    if (e_.norm() < cfg_.converge_eps) {
      status_ = AttemptStatus::Converged;
      return true;
    }
    return false;
  }

  bool initialise_jacobian() {
    const JointVector q0 = q_;
    auto probe = [this](const JointVector& q) {
      plant_.move_to(q);
      return plant_.observe().e;
    };
    ControllerConfig probe_cfg = cfg_;
    for (int attempt = 0; attempt <= cfg_.probe_retries; ++attempt) {
      try {
        J_ = init_jacobian(probe, q0, probe_cfg);
        plant_.move_to(q0);
        return true;
      } catch (const Error& err) {
        if (err.code() != ErrorCode::ProbeFailed) throw;
        plant_.move_to(q0);
        probe_cfg.fd_delta *= 0.5;
      }
    }
    status_ = AttemptStatus::FeatureLost;
    return false;
  }

  void emit(const JointVector& dq, const Observation& obs) {
    if (!observer_) return;
    ServoRecord r;
    r.iteration = iteration_;
    r.q = q_;
    r.dq = dq;
    r.e = e_;
    r.e_norm = e_.norm();
    r.features = obs.features;
    r.j_cond = condition_estimate(J_);
    observer_(r);
  }

  Plant& plant_;
  ControllerConfig cfg_;
  Observer observer_;
  JacobianEstimate J_;
  JointVector q_;
  ErrorVector e_;
  double initial_norm_ = 0.0;
  int iteration_ = 0;
  int diverging_ = 0;
  std::optional<AttemptStatus> status_;
};

/// Plant over an analytic error map e(q); used for linear-map checks.
template <class ErrorFn>
class FunctionPlant {
 public:
  FunctionPlant(ErrorFn fn, JointVector q0) : fn_(std::move(fn)), q_(std::move(q0)) {}

  JointVector q() const { return q_; }
  Observation observe() { return {fn_(q_), {}}; }
  void apply(const JointVector& dq) { q_ += dq; }
  void move_to(const JointVector& q) { q_ = q; }

 private:
  ErrorFn fn_;
  JointVector q_;
};

}  // namespace salvs
