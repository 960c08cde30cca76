// salvs: run scenarios, evaluate masks, serve sessions, spot-check kernels.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include <CLI11.hpp>

#include "salvs/evaluation.hpp"
#include "salvs/fusionmath.hpp"
#include "salvs/service.hpp"

namespace fs = std::filesystem;
using namespace salvs;

namespace {

struct RunOptions {
  std::string scenario;
  std::optional<std::uint64_t> seed;
  std::string out = "salvs_out";
  std::optional<int> max_iters;
  std::optional<double> gain;
  std::optional<double> damping;
  std::optional<double> max_step;
  std::string constraints;
  bool dump_masks = false;
};

// {"annotations": [{"kind": "p2p", "points": [[u, v], ...]}, ...]}, anchored
// from the first attempt's initial pose.
Stage load_annotation_stage(const fs::path& path, const Scenario& scenario, std::uint64_t seed) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "constraints file not found: " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::SchemaError, std::string("constraints file: ") + e.what());
  }
  Session session(scenario, seed);
  Stage st;
  st.name = "annotated";
  st.success.type = SuccessPredicate::Type::Converged;
  for (const auto& a : doc.at("annotations")) {
    const ConstraintKind kind = parse_constraint_kind(a.at("kind").get<std::string>());
    std::vector<HomoPoint> clicks;
    for (const auto& p : a.at("points")) clicks.push_back({p.at(0).get<double>(), p.at(1).get<double>(), 1.0});
    st.manual.push_back(make_manual_constraint(session, kind, clicks));
    st.constraints.push_back(kind);
  }
  if (st.manual.empty()) throw Error(ErrorCode::SchemaError, "constraints file has no annotations");
  return st;
}

// Re-drives each attempt and writes the stage prompts' masks per step.
void dump_masks(const Scenario& scenario, std::uint64_t seed, const std::vector<TraceRecord>& records,
                const fs::path& dir) {
  fs::create_directories(dir);
  Session session(scenario, seed);
  int attempt = -1, stage = -1;
  for (const auto& r : records) {
    if (r.attempt != attempt) {
      attempt = r.attempt;
      stage = -1;
      session.reset(attempt - 1);
    }
    if (r.stage != stage) {
      for (int s = std::max(stage, 0); s < r.stage; ++s) {
        if (const auto& act = scenario.stages[s].on_success) session.attach(act->object, act->lift_m);
      }
      stage = r.stage;
    }
    if (r.servo.iteration > 0) session.step(r.servo.dq);
    const auto& prompts = scenario.stages[stage].policy.prompts;
    for (std::size_t k = 0; k < prompts.size(); ++k) {
      char name[64];
      std::snprintf(name, sizeof name, "step%06d_mask%zu.pgm", r.step, k);
      try {
        write_file_bytes(dir / name, encode_pgm(to_gray8(session.render_prompt(prompts[k]))));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NotVisible) throw;
      }
    }
  }
}

int cmd_run(const RunOptions& o) {
  if (!fs::is_regular_file(o.scenario)) {
    std::cerr << "salvs: scenario not found: " << o.scenario << "\n";
    return 2;
  }
  Scenario scenario = load_scenario_file(o.scenario);
  const std::uint64_t seed = o.seed.value_or(scenario.seed);
  ControllerConfig cfg;
  if (o.max_iters) cfg.max_iters = *o.max_iters;
  if (o.gain) cfg.gain = *o.gain;
  if (o.damping) cfg.damping = *o.damping;
  if (o.max_step) cfg.max_step = *o.max_step;
  cfg.validate();
  if (!o.constraints.empty()) scenario.stages = {load_annotation_stage(o.constraints, scenario, seed)};

  const fs::path out(o.out);
  fs::create_directories(out);
  std::ofstream trace_out(out / "trace.jsonl");
  if (!trace_out) throw Error(ErrorCode::IoError, "cannot write " + (out / "trace.jsonl").string());
  const EpisodeTrace trace = run_task(scenario, seed, cfg, [&](const TraceRecord& r) { write_trace_line(trace_out, r); });
  trace_out.close();

  const RunSummary summary = summarize(scenario, seed, trace);
  std::ofstream(out / "summary.json") << to_json(summary).dump(2) << "\n";
  if (o.dump_masks) dump_masks(scenario, seed, trace.records, out / "masks");
  std::cout << scenario.name << " seed " << seed << ": " << outcome_line(summary) << "\n";
  return 0;
}

int cmd_eval(const std::string& pred, const std::string& gt, const metrics::EvalOptions& opt,
             const std::string& report) {
  try {
    const auto r = metrics::evaluate_directories(pred, gt, opt);
    const auto j = metrics::to_json(r, opt);
    if (!report.empty()) {
      std::ofstream out(report);
      if (!out) throw Error(ErrorCode::IoError, "cannot write " + report);
      out << j.dump(2) << "\n";
    }
    std::printf("pairs %zu  mIoU %.6f  cIoU %.6f  MAE %.6f  maxF %.6f\n", r.rows.size(), r.miou, r.ciou, r.mae,
                r.max_f);
    return 0;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::UnpairedFiles) throw;
    std::cerr << "salvs: " << e.what() << "\n";
    return 3;
  }
}

std::atomic<service::Server*> g_server{nullptr};

int cmd_serve(int port, const std::string& dir, int step_ms) {
  service::ServiceConfig cfg;
  cfg.step_interval = std::chrono::milliseconds(step_ms);
  service::SessionManager manager(service::SessionManager::load_library(dir), cfg);
  service::Server server(manager);
  const int bound = server.bind("0.0.0.0", port);
  if (bound <= 0) throw Error(ErrorCode::IoError, "cannot bind port " + std::to_string(port));
  std::cout << "listening on port " << bound << " with " << manager.scenario_names().size() << " scenarios"
            << std::endl;
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (auto* s = g_server.load()) s->stop();
  });
  server.listen();
  g_server = nullptr;
  return 0;
}

// Small self-consistency checks of the fusion kernels on random inputs.
int cmd_kernels(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  const int L = 6, D = 8;
  Eigen::MatrixXd q(L + 1, D), k(L + 1, D), v(L + 1, D);
  for (auto* m : {&q, &k, &v})
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = n01(rng);
  const auto mask = fusion::build_mask(L);
  const auto w = fusion::attention_weights(q, k, mask, D);
  double masked = 0.0, row_err = 0.0;
  for (int i = 0; i <= L; ++i) {
    row_err = std::max(row_err, std::abs(w.row(i).sum() - 1.0));
    for (int j = 0; j <= L; ++j)
      if (mask(i, j) != 0.0) masked = std::max(masked, std::abs(w(i, j)));
  }
  std::printf("attention: max |row sum - 1| = %.3g, max masked weight = %.3g\n", row_err, masked);

  SaliencyMap pred(8, 8), gt(8, 8);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      pred(x, y) = u01(rng);
      gt(x, y) = (x + y) % 3 == 0 ? 1.0 : 0.0;
    }
  const double focal = fusion::focal_loss(pred, gt, {0.0, 0.5});
  double bce = 0.0;
  for (std::size_t i = 0; i < pred.values().size(); ++i) {
    const double p = pred.values()[i], g = gt.values()[i];
    bce -= g * std::log(p) + (1 - g) * std::log(1 - p);
  }
  bce /= static_cast<double>(pred.values().size());
  std::printf("focal(gamma=0, alpha=0.5) - 0.5 * BCE = %.3g\n", focal - 0.5 * bce);
  std::printf("dice = %.6f, output loss = %.6f\n", fusion::dice_loss(pred, gt), fusion::output_loss(pred, gt));
  const bool ok = masked == 0.0 && row_err < 1e-12 && std::abs(focal - 0.5 * bce) < 1e-9;
  std::printf("%s\n", ok ? "kernels ok" : "kernels FAILED");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Salient-constraint visual servoing toolkit"};
  app.require_subcommand(1);

  RunOptions run;
  auto* run_cmd = app.add_subcommand("run", "Run a scenario and write trace.jsonl and summary.json");
  run_cmd->add_option("--scenario", run.scenario, "Scenario document")->required();
  run_cmd->add_option("--seed", run.seed, "Override the scenario seed");
  run_cmd->add_option("--out", run.out, "Output directory")->capture_default_str();
  run_cmd->add_option("--max-iters", run.max_iters, "Iteration budget per stage");
  run_cmd->add_option("--gain", run.gain, "Control gain");
  run_cmd->add_option("--damping", run.damping, "Damping of the least-squares step");
  run_cmd->add_option("--max-step", run.max_step, "Per-DOF step clamp");
  run_cmd->add_option("--constraints", run.constraints, "Annotation file replacing the scenario plan");
  run_cmd->add_flag("--dump-masks", run.dump_masks, "Write per-step masks as PGM");

  std::string pred_dir, gt_dir, report;
  metrics::EvalOptions eval_opt;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate prediction masks against ground truth");
  eval_cmd->add_option("--pred", pred_dir, "Prediction directory")->required();
  eval_cmd->add_option("--gt", gt_dir, "Ground-truth directory")->required();
  eval_cmd->add_option("--tau", eval_opt.tau, "IoU binarisation threshold")->capture_default_str();
  eval_cmd->add_option("--beta2", eval_opt.beta2, "F-measure beta squared")->capture_default_str();
  eval_cmd->add_option("--report", report, "Report path (JSON)");

  int port = 8080, step_ms = 20;
  std::string scenario_dir = "scenarios";
  auto* serve_cmd = app.add_subcommand("serve", "Serve simulated sessions over HTTP");
  serve_cmd->add_option("--port", port, "Port (0 picks a free one)")->capture_default_str();
  serve_cmd->add_option("--scenarios", scenario_dir, "Scenario directory")->capture_default_str();
  serve_cmd->add_option("--step-ms", step_ms, "Delay between control steps while running")->capture_default_str();

  std::uint64_t kseed = 1;
  auto* kernels_cmd = app.add_subcommand("kernels", "Spot-check the fusion kernels");
  kernels_cmd->add_option("--seed", kseed, "Random seed")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run_cmd) return cmd_run(run);
    if (*eval_cmd) return cmd_eval(pred_dir, gt_dir, eval_opt, report);
    if (*serve_cmd) return cmd_serve(port, scenario_dir, step_ms);
    if (*kernels_cmd) return cmd_kernels(kseed);
  } catch (const Error& e) {
    std::cerr << "salvs: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "salvs: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
