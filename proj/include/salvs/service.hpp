#pragma once

// Session service driven by the companion UI: a thread-safe session
// manager plus an HTTP front end with a server-sent event stream.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "salvs/episode.hpp"
#include "salvs/error.hpp"
#include "salvs/image_io.hpp"
#include "salvs/scenario_io.hpp"
#include "salvs/trace_io.hpp"

// After Eigen: the socket headers pulled in by httplib define macros that
// clash with Eigen's internals.
#include <httplib.h>

namespace salvs::service {

using nlohmann::json;

enum class SessionState { Idle, Ready, Running, Paused, Terminal };

constexpr std::string_view to_string(SessionState s) {
  switch (s) {
    case SessionState::Idle: return "idle";
    case SessionState::Ready: return "ready";
    case SessionState::Running: return "running";
    case SessionState::Paused: return "paused";
    case SessionState::Terminal: return "terminal";
  }
  return "?";
}

enum class Command { Start, Pause, StepOnce, Reset, Abort };

inline Command parse_command(std::string_view s) {
  if (s == "start") return Command::Start;
  if (s == "pause") return Command::Pause;
  if (s == "step_once") return Command::StepOnce;
  if (s == "reset") return Command::Reset;
  if (s == "abort") return Command::Abort;
  throw Error(ErrorCode::IllegalCommand, "unknown command '" + std::string(s) + "'");
}

struct ServiceConfig {
  ControllerConfig controller;
  std::chrono::milliseconds step_interval{20};
};

struct Event {
  std::string type;  // StateUpdate | FrameAvailable
  int id = 0;        // step number
  json data;
};

/// One simulated session. All public methods lock the session mutex; a
/// worker thread advances the attempt while the session is running.
class ServiceSession {
 public:
  ServiceSession(std::string id, Scenario scenario, std::uint64_t seed, ServiceConfig cfg)
      : id_(std::move(id)), sim_(std::move(scenario), seed), cfg_(cfg) {
    worker_ = std::thread([this] { work(); });
  }

  ~ServiceSession() {
    {
      std::lock_guard lock(mu_);
      shutdown_ = true;
    }
    cv_.notify_all();
    events_cv_.notify_all();
    worker_.join();
  }

  ServiceSession(const ServiceSession&) = delete;
  ServiceSession& operator=(const ServiceSession&) = delete;

  const std::string& id() const { return id_; }

  SessionState state() const {
    std::lock_guard lock(mu_);
    return state_;
  }

  json state_json() const {
    std::lock_guard lock(mu_);
    return state_json_locked();
  }

  /// Loads the scenario's staged plan.
  json load_plan() {
    std::lock_guard lock(mu_);
    require_not_running("plan");
    stages_ = sim_.scenario().stages;
    manual_.reset();
    runner_.reset();
    state_ = SessionState::Ready;
    return state_json_locked();
  }

  /// Adds a user-annotated constraint and returns its current error vector.
  json annotate(ConstraintKind kind, const std::vector<HomoPoint>& clicks) {
    std::lock_guard lock(mu_);
    require_not_running("annotate");
    if (!manual_) {
      Stage st;
      st.name = "manual";
      st.success.type = SuccessPredicate::Type::Converged;
      manual_ = st;
    }
    const ManualConstraint mc = make_manual_constraint(sim_, kind, clicks);
    manual_->manual.push_back(mc);
    manual_->constraints.push_back(kind);
    stages_ = {*manual_};
    runner_.reset();
    if (state_ == SessionState::Idle || state_ == SessionState::Ready) state_ = SessionState::Ready;
    const BoundConstraint bc = bind_manual(mc, sim_.camera(), sim_.camera_pose());
    json out;
    out["kind"] = std::string(to_string(kind));
    out["features"] = to_json(bc);
    out["e"] = detail::vec_json(evaluate(bc));
    out["state"] = std::string(to_string(state_));
    return out;
  }

  json command(Command c) {
    std::unique_lock lock(mu_);
    switch (c) {
      case Command::Start:
        if (state_ != SessionState::Ready && state_ != SessionState::Paused) illegal("start");
        ensure_runner();
        state_ = SessionState::Running;
        cv_.notify_all();
        break;
      case Command::Pause:
        if (state_ != SessionState::Running) illegal("pause");
        state_ = SessionState::Paused;
        break;
      case Command::StepOnce:
        if (state_ != SessionState::Ready && state_ != SessionState::Paused) illegal("step_once");
        ensure_runner();
        state_ = SessionState::Paused;
        step_locked();
        break;
      case Command::Reset:
        if (state_ == SessionState::Running) illegal("reset");
        ++attempt_;
        sim_.reset(attempt_ - 1);
        runner_.reset();
        outcome_.reset();
        state_ = stages_.empty() ? SessionState::Idle : SessionState::Ready;
        break;
      case Command::Abort:
        if (state_ == SessionState::Idle || state_ == SessionState::Terminal) illegal("abort");
        if (runner_) {
          runner_->abort();
          outcome_ = runner_->outcome();
        } else {
          outcome_ = AttemptOutcome{attempt_, AttemptStatus::Aborted, 0, 0, 0.0};
        }
        state_ = SessionState::Terminal;
        push_state_event();
        break;
    }
    done_cv_.notify_all();
    return state_json_locked();
  }

  /// Composite of the current prompts' masks as an 8-bit PNG.
  std::string frame_png() const {
    std::lock_guard lock(mu_);
    const CameraModel& cam = sim_.camera();
    Gray8Image img{cam.width, cam.height, std::vector<std::uint8_t>(static_cast<std::size_t>(cam.width) * cam.height, 0)};
    for (const auto& p : prompts_locked()) {
      try {
        const Gray8Image m = to_gray8(sim_.render_prompt(p));
        for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = std::max(img.pixels[i], m.pixels[i]);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NotVisible) throw;
      }
    }
    const auto png = encode_png(img);
    return {png.begin(), png.end()};
  }

  /// Extracted features per prompt plus the bound constraints of the
  /// latest step.
  json overlay() const {
    std::lock_guard lock(mu_);
    json out;
    out["width"] = sim_.camera().width;
    out["height"] = sim_.camera().height;
    json objs = json::array();
    for (const auto& p : prompts_locked()) {
      json o{{"prompt", p}};
      try {
        const auto f = extract_from_mask(sim_.render_prompt(p));
        o["centroid"] = detail::point_json(f.centroid);
        o["axis"] = json::array({detail::point_json(f.axis_endpoints.first), detail::point_json(f.axis_endpoints.second)});
        o["isotropic"] = f.isotropic;
        o["visible"] = true;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NotVisible && e.code() != ErrorCode::EmptyMask) throw;
        o["visible"] = false;
      }
      objs.push_back(std::move(o));
    }
    out["objects"] = std::move(objs);
    json features = json::array();
    if (last_) {
      for (const auto& c : last_->servo.features) features.push_back(to_json(c));
      out["e"] = detail::vec_json(last_->servo.e);
    } else if (manual_) {
      std::vector<BoundConstraint> bound;
      for (const auto& mc : manual_->manual) bound.push_back(bind_manual(mc, sim_.camera(), sim_.camera_pose()));
      for (const auto& c : bound) features.push_back(to_json(c));
      out["e"] = detail::vec_json(stack_errors(std::span<const BoundConstraint>(bound)));
    }
    out["constraints"] = std::move(features);
    if (manual_) {
      const auto& sp = manual_->manual;
      json statics = json::array();
      for (const auto& mc : sp)
        for (const auto& p : mc.static_points) statics.push_back(detail::point_json(p));
      out["static_points"] = std::move(statics);
    }
    return out;
  }

  /// Events with id > after_id, waiting up to `timeout` when none are
  /// pending. Returns an empty list on timeout or shutdown.
  std::vector<Event> events_after(int after_id, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mu_);
    auto pending = [&] { return shutdown_ || (!events_.empty() && events_.back().id > after_id); };
    events_cv_.wait_for(lock, timeout, pending);
    std::vector<Event> out;
    for (const auto& e : events_)
      if (e.id > after_id) out.push_back(e);
    return out;
  }

  /// Blocks until the session leaves the running state.
  json wait_idle() {
    std::unique_lock lock(mu_);
    done_cv_.wait(lock, [&] { return state_ != SessionState::Running; });
    return state_json_locked();
  }

  /// Starts and waits for the attempt to finish (tests and batch use).
  json run_blocking() {
    command(Command::Start);
    return wait_idle();
  }

 private:
  [[noreturn]] void illegal(const char* what) const {
    throw Error(ErrorCode::IllegalCommand,
                std::string(what) + " is not allowed in state " + std::string(to_string(state_)));
  }

  void require_not_running(const char* what) const {
    if (state_ == SessionState::Running) illegal(what);
  }

  std::vector<std::string> prompts_locked() const {
    if (runner_ && !runner_->done()) return runner_->current_stage().policy.prompts;
    if (!stages_.empty() && !stages_.front().policy.prompts.empty()) return stages_.front().policy.prompts;
    std::vector<std::string> out;
    for (const auto& o : sim_.scenario().objects) out.push_back(o.prompt_tags.front());
    return out;
  }

  void ensure_runner() {
    if (runner_) return;
    if (stages_.empty()) illegal("start");
    runner_ = std::make_unique<AttemptRunner>(sim_, stages_, cfg_.controller, attempt_, next_step_,
                                              [this](const TraceRecord& r) { on_record(r); });
  }

  void on_record(const TraceRecord& r) {
    last_ = r;
    next_step_ = r.step + 1;
  }

  void step_locked() {
    const int before = next_step_;
    const bool more = runner_->advance();
    if (!more) {
      outcome_ = runner_->outcome();
      state_ = SessionState::Terminal;
      done_cv_.notify_all();
    }
    if (next_step_ != before || !more) push_state_event(next_step_ != before);
  }

  /// Event ids are step numbers; a transition without a new step takes
  /// the next free one so ids stay strictly increasing.
  void push_state_event(bool new_record = false) {
    const int id = new_record ? last_->step : next_step_++;
    events_.push_back({"StateUpdate", id, state_json_locked()});
    events_cv_.notify_all();
  }

  json state_json_locked() const {
    json j;
    j["type"] = "StateUpdate";
    j["session"] = id_;
    j["state"] = std::string(to_string(state_));
    j["attempt"] = attempt_;
    j["q"] = detail::vec_json(sim_.q());
    if (last_) {
      const json r = to_json(*last_);
      for (const char* k : {"step", "stage", "iteration", "dq", "e", "e_norm", "j_cond", "features"}) j[k] = r.at(k);
    }
    if (outcome_) {
      j["status"] = std::string(to_string(outcome_->status));
      j["stages_completed"] = outcome_->stages_completed;
    }
    return j;
  }

  void work() {
    std::unique_lock lock(mu_);
    while (true) {
      cv_.wait(lock, [&] { return shutdown_ || state_ == SessionState::Running; });
      if (shutdown_) return;
      step_locked();
      if (state_ == SessionState::Running && cfg_.step_interval.count() > 0) {
        cv_.wait_for(lock, cfg_.step_interval, [&] { return shutdown_; });
      } else {
        // Let commands in between steps.
        lock.unlock();
        std::this_thread::yield();
        lock.lock();
      }
    }
  }

  std::string id_;
  Session sim_;
  ServiceConfig cfg_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  mutable std::condition_variable events_cv_;
  std::condition_variable done_cv_;
  SessionState state_ = SessionState::Idle;
  std::vector<Stage> stages_;
  std::optional<Stage> manual_;
  std::unique_ptr<AttemptRunner> runner_;
  std::optional<TraceRecord> last_;
  std::optional<AttemptOutcome> outcome_;
  std::deque<Event> events_;
  int attempt_ = 1;
  int next_step_ = 0;
  bool shutdown_ = false;
  std::thread worker_;
};

class SessionManager {
 public:
  explicit SessionManager(std::map<std::string, Scenario> library, ServiceConfig cfg = {})
      : library_(std::move(library)), cfg_(cfg) {}

  static std::map<std::string, Scenario> load_library(const std::filesystem::path& dir) {
    std::map<std::string, Scenario> lib;
    if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::IoError, "not a directory: " + dir.string());
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      if (entry.path().extension() != ".json") continue;
      Scenario s = load_scenario_file(entry.path());
      lib.emplace(s.name, std::move(s));
    }
    return lib;
  }

  std::vector<std::string> scenario_names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : library_) out.push_back(k);
    return out;
  }

  std::string create(const std::string& scenario, std::optional<std::uint64_t> seed = std::nullopt) {
    auto it = library_.find(scenario);
    if (it == library_.end()) throw Error(ErrorCode::UnknownScenario, "no scenario '" + scenario + "'");
    std::lock_guard lock(mu_);
    const std::string id = "s" + std::to_string(++counter_);
    sessions_.emplace(id, std::make_shared<ServiceSession>(id, it->second, seed.value_or(it->second.seed), cfg_));
    return id;
  }

  std::shared_ptr<ServiceSession> get(const std::string& id) const {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw Error(ErrorCode::UnknownSession, "no session '" + id + "'");
    return it->second;
  }

  void remove(const std::string& id) {
    std::shared_ptr<ServiceSession> s;
    {
      std::lock_guard lock(mu_);
      auto it = sessions_.find(id);
      if (it == sessions_.end()) throw Error(ErrorCode::UnknownSession, "no session '" + id + "'");
      s = std::move(it->second);
      sessions_.erase(it);
    }
  }

 private:
  std::map<std::string, Scenario> library_;
  ServiceConfig cfg_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<ServiceSession>> sessions_;
  int counter_ = 0;
};

inline json api_description() {
  auto ep = [](const char* method, const char* path, const char* body, const char* reply) {
    return json{{"method", method}, {"path", path}, {"body", body}, {"reply", reply}};
  };
  json j;
  j["format_version"] = kTraceFormatVersion;
  j["endpoints"] = {
      ep("GET", "/api", "", "this document"),
      ep("GET", "/scenarios", "", "{scenarios: [name]}"),
      ep("POST", "/sessions", "{scenario, seed?}", "{session}"),
      ep("DELETE", "/sessions/{id}", "", "{}"),
      ep("GET", "/sessions/{id}/state", "", "StateUpdate"),
      ep("GET", "/sessions/{id}/frame", "", "image/png composite of the current masks"),
      ep("GET", "/sessions/{id}/overlay", "", "{objects, constraints, e, static_points?}"),
      ep("POST", "/sessions/{id}/plan", "", "StateUpdate"),
      ep("POST", "/sessions/{id}/annotations", "{kind: p2p|p2l|l2l|par, points: [[u, v]]}",
         "{kind, features, e, state}"),
      ep("POST", "/sessions/{id}/commands", "{command: start|pause|step_once|reset|abort}", "StateUpdate"),
      ep("GET", "/sessions/{id}/events?from=N", "",
         "text/event-stream of StateUpdate (id = step) and FrameAvailable; resumes after Last-Event-ID or from"),
  };
  j["errors"] = {{"UnknownScenario", 404}, {"UnknownSession", 404}, {"IllegalCommand", 409},
                 {"InvalidArgument", 400}, {"SchemaError", 400}};
  j["states"] = {"idle", "ready", "running", "paused", "terminal"};
  return j;
}

inline int http_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::UnknownScenario:
    case ErrorCode::UnknownSession: return 404;
    case ErrorCode::IllegalCommand: return 409;
    default: return 400;
  }
}

inline json error_body(const Error& e) {
  return {{"error", {{"code", std::string(to_string(e.code()))}, {"message", e.what()}}}};
}

/// HTTP front end over a SessionManager.
class Server {
 public:
  explicit Server(SessionManager& manager) : manager_(manager) { routes(); }

  ~Server() { stop(); }

  /// Binds to `port` (0 picks a free one) and returns the bound port.
  int bind(const std::string& host = "127.0.0.1", int port = 0) {
    if (port == 0) return http_.bind_to_any_port(host);
    if (!http_.bind_to_port(host, port)) throw Error(ErrorCode::IoError, "cannot bind port " + std::to_string(port));
    return port;
  }

  void listen() { http_.listen_after_bind(); }

  void start_background() {
    thread_ = std::thread([this] { listen(); });
    http_.wait_until_ready();
  }

  void stop() {
    stopping_ = true;
    http_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  template <class F>
  void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const Error& e) {
      res.status = http_status(e.code());
      res.set_content(error_body(e).dump(), "application/json");
    } catch (const json::exception& e) {
      res.status = 400;
      res.set_content(error_body(Error(ErrorCode::InvalidArgument, e.what())).dump(), "application/json");
    }
  }

  static json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
      return json::parse(req.body);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::InvalidArgument, std::string("body is not JSON: ") + e.what());
    }
  }

  static void reply(httplib::Response& res, const json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }

  void routes() {
    http_.Get("/api", [](const httplib::Request&, httplib::Response& res) { reply(res, api_description()); });

    http_.Get("/scenarios", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, {{"scenarios", manager_.scenario_names()}});
    });

    http_.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const json body = parse_body(req);
        std::optional<std::uint64_t> seed;
        if (body.contains("seed")) seed = body.at("seed").get<std::uint64_t>();
        reply(res, {{"session", manager_.create(body.at("scenario").get<std::string>(), seed)}}, 201);
      });
    });

    http_.Delete(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        manager_.remove(req.matches[1]);
        reply(res, json::object());
      });
    });

    http_.Get(R"(/sessions/([^/]+)/state)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { reply(res, manager_.get(req.matches[1])->state_json()); });
    });

    http_.Get(R"(/sessions/([^/]+)/frame)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { res.set_content(manager_.get(req.matches[1])->frame_png(), "image/png"); });
    });

    http_.Get(R"(/sessions/([^/]+)/overlay)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { reply(res, manager_.get(req.matches[1])->overlay()); });
    });

    http_.Post(R"(/sessions/([^/]+)/plan)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { reply(res, manager_.get(req.matches[1])->load_plan()); });
    });

    http_.Post(R"(/sessions/([^/]+)/annotations)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto s = manager_.get(req.matches[1]);
        const json body = parse_body(req);
        const ConstraintKind kind = parse_constraint_kind(body.at("kind").get<std::string>());
        std::vector<HomoPoint> clicks;
        for (const auto& p : body.at("points")) {
          if (!p.is_array() || p.size() != 2) throw Error(ErrorCode::InvalidArgument, "points are [u, v] pairs");
          clicks.push_back({p[0].get<double>(), p[1].get<double>(), 1.0});
        }
        reply(res, s->annotate(kind, clicks));
      });
    });

    http_.Post(R"(/sessions/([^/]+)/commands)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto s = manager_.get(req.matches[1]);
        const json body = parse_body(req);
        reply(res, s->command(parse_command(body.at("command").get<std::string>())));
      });
    });

    http_.Get(R"(/sessions/([^/]+)/events)", [this](const httplib::Request& req, httplib::Response& res) {
      std::shared_ptr<ServiceSession> s;
      guarded(res, [&] { s = manager_.get(req.matches[1]); });
      if (!s) return;
      int after = -1;
      try {
        if (req.has_header("Last-Event-ID")) after = std::stoi(req.get_header_value("Last-Event-ID"));
        if (req.has_param("from")) after = std::stoi(req.get_param_value("from")) - 1;
      } catch (const std::exception&) {
        reply(res, error_body(Error(ErrorCode::InvalidArgument, "bad event cursor")), 400);
        return;
      }
      auto cursor = std::make_shared<int>(after);
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider("text/event-stream", [this, s, cursor](std::size_t, httplib::DataSink& sink) {
        if (stopping_) return false;
        for (const auto& e : s->events_after(*cursor, std::chrono::milliseconds(200))) {
          std::string msg = "id: " + std::to_string(e.id) + "\nevent: " + e.type + "\ndata: " + e.data.dump() + "\n\n";
          msg += "event: FrameAvailable\ndata: {\"step\":" + std::to_string(e.id) + "}\n\n";
          if (!sink.write(msg.data(), msg.size())) return false;
          *cursor = e.id;
        }
        return !stopping_;
      });
    });
  }

  SessionManager& manager_;
  httplib::Server http_;
  std::thread thread_;
  std::atomic<bool> stopping_{false};
};

}  // namespace salvs::service
