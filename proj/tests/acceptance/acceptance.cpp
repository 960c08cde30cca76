// Acceptance run: one PASS/FAIL line per criterion. `--write-golden`
// regenerates the golden traces instead of comparing against them.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "salvs/episode.hpp"
#include "salvs/fusionmath.hpp"
#include "salvs/metrics.hpp"
#include "salvs/scenario_io.hpp"
#include "salvs/trace_io.hpp"

using namespace salvs;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int g_failures = 0;

void report(bool ok, const char* name, const std::string& detail) {
  std::printf("%s %-22s %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------- geometry

void geometry_suite() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> coord(-1000, 1000), scale(0.05, 20.0);
  int fixtures = 0, bad = 0;
  for (int i = 0; i < 5000; ++i) {
    const HomoPoint p{coord(rng), coord(rng), 1.0}, q{coord(rng), coord(rng), 1.0}, r{coord(rng), coord(rng), 1.0};
    HomoLine l, m;
    try {
      l = line_from_points(q, r);
      m = line_from_points(p, q);
    } catch (const Error&) {
      continue;
    }
    ++fixtures;
    const double s = (rng() & 1 ? 1 : -1) * scale(rng);
    const HomoPoint ps{s * p.x, s * p.y, s * p.w};
    const bool ok = e_pp(p, p).isZero(0) && e_pl(q, l).cwiseAbs().maxCoeff() <= 1e-9 &&
                    e_pl(r, l).cwiseAbs().maxCoeff() <= 1e-9 && e_par(l, l)(0) == 0.0 &&
                    e_ll(p, q, l)(0) == e_pl(p, l)(0) + e_pl(q, l)(0) && e_par(l, m)(0) == -e_par(m, l)(0) &&
                    std::abs(e_pl(ps, l)(0) - e_pl(p, l)(0)) <= 1e-9 * (1 + std::abs(e_pl(p, l)(0))) &&
                    e_pp(ps, p).cwiseAbs().maxCoeff() <= 1e-9;
    bad += !ok;
  }
  const double secs = seconds_since(t0);
  report(bad == 0 && fixtures >= 1000 && secs < 5.0, "geometry",
         fmt("%d fixtures, %d violations, %.2f s (limit 5 s)", fixtures, bad, secs));
}

// ---------------------------------------------------------------- Broyden

Eigen::MatrixXd random_conditioned(std::mt19937_64& rng, int n, double max_cond) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd a(n, n), b(n, n);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    a.data()[i] = g(rng);
    b.data()[i] = g(rng);
  }
  const Eigen::MatrixXd U = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ();
  const Eigen::MatrixXd V = Eigen::HouseholderQR<Eigen::MatrixXd>(b).householderQ();
  std::uniform_real_distribution<double> sv(std::log(1.0), std::log(max_cond));
  Eigen::VectorXd s(n);
  for (int i = 0; i < n; ++i) s(i) = 10.0 * std::exp(sv(rng));
  s(0) = 10.0;
  return U * s.asDiagonal() * V.transpose();
}

void broyden_suite() {
  std::mt19937_64 rng(202);
  std::normal_distribution<double> g;
  int init_ok = 0, converged = 0, secant_ok = 0, updates = 0, max_steps = 0;
  double worst_cond = 0.0;
  for (int t = 0; t < 100; ++t) {
    const int n = 2 + t % 5;
    const Eigen::MatrixXd A = random_conditioned(rng, n, 50.0);
    worst_cond = std::max(worst_cond, condition_estimate(A));
    Eigen::VectorXd q0(n);
    for (int i = 0; i < n; ++i) q0(i) = g(rng);
    auto fn = [&](const JointVector& q) -> ErrorVector { return A * q; };

    ControllerConfig cfg;
    cfg.gain = 0.5;
    cfg.max_step = 1.0;
    cfg.converge_eps = 1e-6;
    cfg.max_iters = 50;
    auto probe = fn;
    if ((init_jacobian(probe, q0, cfg) - A).cwiseAbs().maxCoeff() <= 1e-9) ++init_ok;

    FunctionPlant plant(fn, q0);
    Servo servo(plant, cfg);
    servo.start();
    JointVector q_prev = plant.q();
    ErrorVector e_prev = servo.error();
    for (bool more = !servo.done(); more;) {
      const int before = servo.iteration();
      more = servo.advance();
      if (servo.iteration() == before) break;
      ++updates;
      const JointVector dq = plant.q() - q_prev;
      const ErrorVector de = servo.error() - e_prev;
      if ((servo.jacobian() * dq - de).norm() <= 1e-9 * (1 + de.norm())) ++secant_ok;
      q_prev = plant.q();
      e_prev = servo.error();
    }
    if (servo.status() == AttemptStatus::Converged && servo.error().norm() < 1e-6 && servo.iteration() <= 50) {
      ++converged;
    }
    max_steps = std::max(max_steps, servo.iteration());
  }
  report(init_ok == 100 && converged == 100 && secant_ok == updates, "broyden",
         fmt("init %d/100 within 1e-9, converged %d/100 (max %d steps, limit 50), secant %d/%d, max cond %.1f",
             init_ok, converged, max_steps, secant_ok, updates, worst_cond));
}

// ---------------------------------------------------------------- closed loop

// Object at the origin seen by a top-down camera 0.5 m above the table.
Scenario top_down_scene(SceneObject object, std::vector<ConstraintKind> kinds) {
  Scenario s;
  s.name = "closed_loop";
  s.rig = Rig::four_dof(look_at({0, 0, 0.5}, {0, 0, 0}, {0, 1, 0}));
  s.initial_q = {JointVector::Zero(4), JointVector::Zero(4)};
  s.objects = {std::move(object)};
  Stage st;
  st.name = "align";
  st.policy = PairingPolicy::object_gripper(s.objects[0].prompt_tags[0], 640, 480);
  st.constraints = std::move(kinds);
  st.success.type = SuccessPredicate::Type::Converged;
  s.stages = {st};
  return s;
}

// Joint offset putting a point at table height `height` (du, dv) px away from the static point.
JointVector offset_pose(double du, double dv, double dz, double height) {
  const double Z = 0.5 - dz - height;
  const double pcx = (320 + du - 320) / 500.0 * Z, pcy = (384 + dv - 240) / 500.0 * Z;
  return Eigen::Vector4d(-pcx, -pcy, dz, 0.0);
}

// The static point sits at v = 384, so large downward offsets would start
// with the target cut by the image border. Only starts with the whole target
// in view are drawn.
bool fully_in_view(double du, double dv, double radius_px) {
  const double u = 320 + du, v = 384 + dv;
  return u - radius_px >= 0 && u + radius_px <= 640 && v - radius_px >= 0 && v + radius_px <= 480;
}

void closed_loop_suite() {
  const auto t0 = Clock::now();
  ControllerConfig cfg;
  cfg.max_iters = 200;

  SceneObject ball;
  ball.id = "ball";
  ball.shape = Shape::Ellipsoid;
  ball.pose.translation() = Eigen::Vector3d(0, 0, 0.02);
  ball.extent = {0.02, 0.02, 0.02};
  ball.prompt_tags = {"ball"};
  const Scenario reach = top_down_scene(ball, {ConstraintKind::PointToPoint});

  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> u01(0, 1), dz(-0.05, 0.05);
  int reach_ok = 0;
  double worst = 0.0;
  for (int ep = 0; ep < 100; ++ep) {
    double du, dv;
    do {
      const double r = 150.0 * std::sqrt(u01(rng)), a = 2 * M_PI * u01(rng);
      du = r * std::cos(a);
      dv = r * std::sin(a);
    } while (!fully_in_view(du, dv, 25.0));
    Session s(reach, static_cast<std::uint64_t>(ep));
    s.set_q(offset_pose(du, dv, dz(rng), 0.02));
    const AttemptOutcome out = run_attempt(s, reach.stages, cfg);
    if (out.status == AttemptStatus::Converged && out.final_error_norm < 2.0) ++reach_ok;
    if (out.status == AttemptStatus::Converged) worst = std::max(worst, out.final_error_norm);
  }

  std::uniform_real_distribution<double> tilt(-40.0, 40.0);
  int par_ok = 0, par_converged = 0;
  for (int ep = 0; ep < 50; ++ep) {
    SceneObject bar;
    bar.id = "bar";
    bar.shape = Shape::Box;
    bar.pose.linear() = ypr_rotation((90.0 + tilt(rng)) * M_PI / 180.0, 0, 0);
    bar.pose.translation() = Eigen::Vector3d(0, 0, 0.015);
    bar.extent = {0.06, 0.012, 0.015};
    bar.prompt_tags = {"bar"};
    const Scenario sc = top_down_scene(bar, {ConstraintKind::ParallelLines, ConstraintKind::PointToPoint});
    double du, dv;
    do {
      const double r = 100.0 * std::sqrt(u01(rng)), a = 2 * M_PI * u01(rng);
      du = r * std::cos(a);
      dv = r * std::sin(a);
    } while (!fully_in_view(du, dv, 70.0));
    Session s(sc, static_cast<std::uint64_t>(ep));
    s.set_q(offset_pose(du, dv, dz(rng), 0.03));
    std::optional<TraceRecord> last;
    const AttemptOutcome out = run_attempt(s, sc.stages, cfg, 1, [&](const TraceRecord& t) { last = t; });
    // Converged also requires the axes to agree within 2 degrees.
    const bool aligned = last && std::abs(last->servo.e(0)) < std::sin(2.0 * M_PI / 180.0);
    par_converged += out.status == AttemptStatus::Converged;
    if (out.status == AttemptStatus::Converged && out.final_error_norm < 2.0 && aligned) ++par_ok;
  }
  const double secs = seconds_since(t0);
  report(reach_ok >= 95 && par_ok >= 45 && secs < 120.0, "closed_loop",
         fmt("reach %d/100 (need 95, worst final %.2f px), par+p2p %d/50 converged and within 2 deg (need 45; %d/50 "
             "converged), %.1f s (limit 120 s)",
             reach_ok, worst, par_ok, par_converged, secs));
}

// ---------------------------------------------------------------- scenarios

std::string trace_text(const std::vector<TraceRecord>& records) {
  std::ostringstream out;
  for (const auto& r : records) write_trace_line(out, r);
  return out.str();
}

void scenario_suite(bool write_golden) {
  const fs::path dir = SALVS_SCENARIO_DIR, golden = SALVS_GOLDEN_DIR;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  int full = 0, golden_ok = 0, replay_ok = 0;
  std::string failures;
  for (const auto& f : files) {
    const Scenario sc = load_scenario_file(f);
    const EpisodeTrace t = run_task(sc, sc.seed, ControllerConfig{});
    if (t.success_rate == 100.0) {
      ++full;
    } else {
      failures += " " + sc.name + "=" + fmt("%g%%", t.success_rate);
    }
    const std::string text = trace_text(t.records);
    const fs::path gpath = golden / (sc.name + ".jsonl");
    if (write_golden) {
      fs::create_directories(golden);
      std::ofstream(gpath, std::ios::binary) << text;
    }
    std::ifstream in(gpath, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    if (in && ss.str() == text) {
      ++golden_ok;
    } else {
      failures += " " + sc.name + "(golden)";
    }
    // Replay each attempt from the golden file itself.
    std::istringstream gin(ss.str());
    const auto recorded = in ? read_trace(gin) : std::vector<TraceRecord>{};
    bool replay = !recorded.empty();
    for (std::size_t i = 0; i < recorded.size() && replay;) {
      std::size_t j = i;
      while (j < recorded.size() && recorded[j].attempt == recorded[i].attempt) ++j;
      replay = replay_attempt(sc, sc.seed, std::span(recorded).subspan(i, j - i)).bit_identical;
      i = j;
    }
    replay_ok += replay;
  }
  const int n = static_cast<int>(files.size());
  report(n == 8 && full == 8 && golden_ok == 8 && replay_ok == 8, "scenarios",
         fmt("%d scenarios, %d at 100%%, %d golden traces identical, %d replays bit-identical%s", n, full, golden_ok,
             replay_ok, failures.c_str()));
}

// ---------------------------------------------------------------- PCA

SaliencyMap rotated_rectangle(int W, int H, double cx, double cy, double len, double wid, double theta) {
  SaliencyMap m(W, H);
  const double c = std::cos(theta), s = std::sin(theta);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double dx = x - cx, dy = y - cy;
      if (std::abs(dx * c + dy * s) <= len / 2 && std::abs(-dx * s + dy * c) <= wid / 2) m(x, y) = 1.0;
    }
  return m;
}

void pca_suite() {
  double worst_angle = 0.0, worst_centroid = 0.0;
  const double cx = 100.3, cy = 80.7;
  for (int k = 0; k < 36; ++k) {
    const double theta = k * 5.0 * M_PI / 180.0;
    const auto f = pca_extract(rotated_rectangle(200, 160, cx, cy, 80, 14, theta));
    const double got = std::atan2(-f.axis_line.a, f.axis_line.b);
    double d = std::fmod(std::abs(got - theta), M_PI);
    d = std::min(d, M_PI - d) * 180.0 / M_PI;
    worst_angle = std::max(worst_angle, d);
    worst_centroid = std::max(worst_centroid, std::hypot(f.centroid.x - cx, f.centroid.y - cy));
  }

  int isotropic = 0;
  for (int k = 0; k < 10; ++k) {
    const double r = 6 + 2 * k, dx = 0.37 * k, dy = 0.21 * k;
    SaliencyMap m(100, 100);
    for (int y = 0; y < 100; ++y)
      for (int x = 0; x < 100; ++x)
        if (std::hypot(x - 50 - dx, y - 50 - dy) <= r) m(x, y) = 1.0;
    const auto f = pca_extract(m);
    isotropic += f.isotropic && f.axis_line.b == 0.0;
  }

  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> u(0, 1);
  double worst_moment = 0.0;
  for (int t = 0; t < 50; ++t) {
    SaliencyMap m(30 + t, 20 + t);
    for (double& v : m.values()) v = u(rng) < 0.4 ? u(rng) : 0.0;
    long double s = 0, sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (int y = 0; y < m.height(); ++y)
      for (int x = 0; x < m.width(); ++x) {
        const long double v = m(x, y);
        s += v;
        sx += v * x;
        sy += v * y;
        sxx += v * x * x;
        sxy += v * x * y;
        syy += v * y * y;
      }
    const long double mx = sx / s, my = sy / s;
    const auto w = weighted_moments(m);
    for (const double d : {w.cx - double(mx), w.cy - double(my), w.sxx - double(sxx / s - mx * mx),
                           w.sxy - double(sxy / s - mx * my), w.syy - double(syy / s - my * my)}) {
      worst_moment = std::max(worst_moment, std::abs(d));
    }
  }
  report(worst_angle <= 1.0 && worst_centroid <= 0.5 && isotropic == 10 && worst_moment <= 1e-9, "pca",
         fmt("36 orientations: max angle error %.3f deg (limit 1), max centroid error %.3f px (limit 0.5); "
             "%d/10 disks isotropic; moments max deviation %.2e (limit 1e-9)",
             worst_angle, worst_centroid, isotropic, worst_moment));
}

// ---------------------------------------------------------------- fusion

void fusion_suite() {
  using namespace salvs::fusion;
  std::mt19937_64 rng(505);
  std::normal_distribution<double> g;
  auto rnd = [&](Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
  };
  double worst = 0.0, masked = 0.0, row = 0.0;
  for (int t = 0; t < 200; ++t) {
    const int L = 1 + static_cast<int>(rng() % 16), D = 1 + static_cast<int>(rng() % 32);
    const auto q = rnd(L + 1, D), k = rnd(L + 1, D), v = rnd(L + 1, D);
    const auto M = build_mask(L);
    const Eigen::MatrixXd logits = (q * k.transpose() + M) / std::sqrt(double(D));
    Eigen::MatrixXd w(L + 1, L + 1);
    for (int i = 0; i <= L; ++i) {
      const double mx = logits.row(i).maxCoeff();
      const Eigen::RowVectorXd ex = (logits.row(i).array() - mx).exp();
      w.row(i) = ex / ex.sum();
    }
    worst = std::max(worst, (masked_attention(q, k, v, M, D) - w * v).cwiseAbs().maxCoeff());
    const auto aw = attention_weights(q, k, M, D);
    for (int i = 0; i <= L; ++i) {
      row = std::max(row, std::abs(aw.row(i).sum() - 1.0));
      for (int j = 0; j <= L; ++j)
        if (M(i, j) != 0.0) masked = std::max(masked, std::abs(aw(i, j)));
    }
  }

  std::uniform_real_distribution<double> u(0.02, 0.98);
  auto map = [&](bool binary) {
    SaliencyMap m(8, 8);
    for (double& x : m.values()) x = binary ? (u(rng) < 0.5 ? 0.0 : 1.0) : u(rng);
    return m;
  };
  double worst_grad = 0.0, worst_focal = 0.0;
  for (int t = 0; t < 20; ++t) {
    const SaliencyMap gt = map(true);
    SaliencyMap p = map(false);
    const std::array<SaliencyMap, 4> side{map(false), map(false), map(false), map(false)};
    const auto grad = output_loss_gradient(p, gt);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double x = p.values()[i], h = 1e-6;
      p.values()[i] = x + h;
      const double up = total_loss(p, side, gt);
      p.values()[i] = x - h;
      const double down = total_loss(p, side, gt);
      p.values()[i] = x;
      const double fd = (up - down) / (2 * h);
      worst_grad = std::max(worst_grad, std::abs(fd - grad[i]) / std::max(1.0, std::abs(fd)));
    }
    double bce = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double pi = p.values()[i], gi = gt.values()[i];
      bce -= gi * std::log(pi) + (1 - gi) * std::log(1 - pi);
    }
    bce /= static_cast<double>(p.size());
    worst_focal = std::max(worst_focal, std::abs(focal_loss(p, gt, {0.0, 0.5}) - 0.5 * bce));
  }
  report(worst <= 1e-6 && masked == 0.0 && row <= 1e-6 && worst_grad <= 1e-4 && worst_focal <= 1e-9, "fusion",
         fmt("200 attention instances max deviation %.2e (limit 1e-6), masked weight max %.1g, row-sum error %.1e; "
             "gradient rel error %.2e (limit 1e-4); focal identity error %.1e (limit 1e-9)",
             worst, masked, row, worst_grad, worst_focal));
}

// ---------------------------------------------------------------- metrics

void metrics_suite() {
  using namespace salvs::metrics;
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> u(0, 1);
  int mismatches = 0, cases = 0;
  auto rand_pair = [&](int w, int h) {
    EvalPair p{SaliencyMap(w, h), SaliencyMap(w, h)};
    for (double& v : p.pred.values()) v = std::round(u(rng) * 255) / 255;
    for (double& v : p.gt.values()) v = u(rng) < 0.35 ? 1.0 : 0.0;
    return p;
  };
  for (int t = 0; t < 30; ++t) {
    std::vector<EvalPair> pairs;
    for (int k = 0; k < 4; ++k) pairs.push_back(rand_pair(10 + t, 7 + k));
    long inter_total = 0, uni_total = 0;
    double iou_sum = 0.0;
    for (const auto& p : pairs) {
      long in = 0, un = 0;
      double abs_sum = 0.0, best_f = 0.0;
      for (std::size_t i = 0; i < p.pred.size(); ++i) {
        const bool a = p.pred.values()[i] >= 0.5, b = p.gt.values()[i] == 1.0;
        in += a && b;
        un += a || b;
        abs_sum += std::abs(p.pred.values()[i] - p.gt.values()[i]);
      }
      for (int k = 0; k < 256; ++k) {
        long tp = 0, pp = 0, ap = 0;
        for (std::size_t i = 0; i < p.pred.size(); ++i) {
          const bool a = p.pred.values()[i] > k / 255.0, b = p.gt.values()[i] == 1.0;
          tp += a && b;
          pp += a;
          ap += b;
        }
        if (tp == 0) continue;
        const double P = double(tp) / pp, R = double(tp) / ap;
        best_f = std::max(best_f, 1.3 * P * R / (0.3 * P + R));
      }
      const double iou_ref = un == 0 ? 1.0 : double(in) / un;
      mismatches += iou(p.pred, p.gt) != iou_ref;
      mismatches += std::abs(mae(p.pred, p.gt) - abs_sum / p.pred.size()) > 1e-15;
      mismatches += std::abs(max_f_measure(p.pred, p.gt) - best_f) > 1e-15;
      cases += 3;
      inter_total += in;
      uni_total += un;
      iou_sum += iou_ref;
    }
    mismatches += std::abs(miou(pairs) - iou_sum / pairs.size()) > 1e-15;
    mismatches += ciou(pairs) != double(inter_total) / uni_total;
    cases += 2;
  }

  // Constructed fixture: one perfect pair, one disjoint pair of equal area.
  SaliencyMap a(16, 16), b(16, 16), c(16, 16);
  for (int y = 2; y < 6; ++y)
    for (int x = 2; x < 6; ++x) a(x, y) = 1.0;
  for (int y = 10; y < 14; ++y)
    for (int x = 10; x < 14; ++x) b(x, y) = 1.0;
  c = a;
  const std::vector<EvalPair> fixture{{a, c}, {b, c}};
  const bool fixture_ok = miou(fixture) == 0.5 && ciou(fixture) == 16.0 / 48.0;

  // Strictly monotone rescaling on well-separated levels.
  int rescale_bad = 0;
  const double step = 1.0 / 255.0;
  for (int t = 0; t < 30; ++t) {
    SaliencyMap p(12, 12), gt(12, 12);
    for (double& v : p.values()) v = (static_cast<int>(u(rng) * 20) + 0.5) / 20.0;
    for (double& v : gt.values()) v = u(rng) < 0.4 ? 1.0 : 0.0;
    SaliencyMap r = p;
    for (double& v : r.values()) v = std::sqrt(v);
    rescale_bad += std::abs(max_f_measure(p, gt) - max_f_measure(r, gt)) > step;
  }
  report(mismatches == 0 && fixture_ok && rescale_bad == 0, "metrics",
         fmt("%d/%d brute-force comparisons exact, fixture mIoU 0.5 / cIoU 1/3 %s, rescaling violations %d/30",
             cases - mismatches, cases, fixture_ok ? "ok" : "WRONG", rescale_bad));
}

// ---------------------------------------------------------------- score_task

void score_suite() {
  using S = AttemptStatus;
  const std::vector<S> one{S::Converged}, two{S::Diverged, S::Converged}, none{S::Diverged, S::IterBudget};
  const double a = score_task(one), b = score_task(two), c = score_task(none);
  report(a == 100.0 && b == 50.0 && c == 0.0, "score_task",
         fmt("[success] %g%%, [fail, success] %g%%, [fail, fail] %g%%", a, b, c));
}

}  // namespace

int main(int argc, char** argv) {
  const bool write_golden = argc > 1 && std::string(argv[1]) == "--write-golden";
  const auto t0 = Clock::now();
  geometry_suite();
  broyden_suite();
  closed_loop_suite();
  scenario_suite(write_golden);
  pca_suite();
  fusion_suite();
  metrics_suite();
  score_suite();
  std::printf("%s: %d criteria failed, %.1f s\n", g_failures ? "FAILED" : "ALL PASS", g_failures,
              seconds_since(t0));
  return g_failures ? 1 : 0;
}
