// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: acceptance <ferryplan-binary> <scenarios-dir>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "ferryplan/envfield.hpp"
#include "ferryplan/ferry_model.hpp"
#include "ferryplan/identification.hpp"
#include "ferryplan/nlp.hpp"
#include "ferryplan/ocp.hpp"
#include "ferryplan/planner.hpp"
#include "oracles.hpp"

using namespace ferryplan;
using nlp::Vector;

namespace {

std::filesystem::path g_cli;
std::filesystem::path g_scenarios;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// --- 1 -------------------------------------------------------------------

Outcome field_fit_recovery() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> pos(-1000.0, 1000.0);
  double worst = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    const auto wind = oracle::random_quadratic(rng, 10.0);
    const auto current = oracle::random_quadratic(rng, 0.3);
    std::vector<env::EnvSample> samples;
    for (int i = 0; i < 50; ++i) {
      const double x = pos(rng), y = pos(rng);
      const auto w = wind(x, y), c = current(x, y);
      samples.push_back({x, y, w.x(), w.y(), c.x(), c.y()});
    }
    const auto model = env::fit_env_model(samples);
    const auto pw = model.wind.parameters(), pc = model.current.parameters();
    const auto tw = wind.parameters(), tc = current.parameters();
    for (std::size_t i = 0; i < 12; ++i) worst = std::max({worst, std::abs(pw[i] - tw[i]), std::abs(pc[i] - tc[i])});
  }
  return {worst <= 1e-9, fmt("max parameter error %.2e", worst)};
}

// --- 2 -------------------------------------------------------------------

Outcome derivative_suite() {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const model::FerryParams p;
  const auto random_env = [&] {
    env::EnvModel e;
    e.wind = env::QuadraticField2D::from_parameters(oracle::random_quadratic(rng, 8.0).parameters());
    e.current = env::QuadraticField2D::from_parameters(oracle::random_quadratic(rng, 0.2).parameters());
    return e;
  };
  double field = 0, dyn = 0, pow = 0, obj = 0, con = 0;

  for (int i = 0; i < 100; ++i) {
    const auto f = random_env().wind;
    const Eigen::Vector2d x(1000 * u(rng), 1000 * u(rng));
    const auto value = [&](const Eigen::VectorXd& q) -> Eigen::VectorXd { return f.value(env::Vec2(q(0), q(1))); };
    field = std::max(field, oracle::relative_error(f.eval(x).jacobian, oracle::fd_jacobian(value, x, 1e-4)));
  }
  for (int i = 0; i < 100; ++i) {
    const env::EnvModel e = random_env();
    model::StateVec x;
    x << 500 * u(rng), 500 * u(rng), 3 * u(rng), 3 + 2 * u(rng), 0.5 * u(rng), 0.02 * u(rng);
    const model::InputVec in(3e4 * u(rng), 1e4 * u(rng), 1e-3 * u(rng));
    const auto lin = model::linearize_dynamics(x, in, e, p);
    const auto fx = [&](const Eigen::VectorXd& xx) -> Eigen::VectorXd { return model::linearize_dynamics(xx, in, e, p).f; };
    const auto fu = [&](const Eigen::VectorXd& uu) -> Eigen::VectorXd { return model::linearize_dynamics(x, uu, e, p).f; };
    dyn = std::max({dyn, oracle::relative_error(lin.A, oracle::fd_jacobian(fx, x)),
                    oracle::relative_error(lin.B, oracle::fd_jacobian(fu, in), 1e-6)});
  }
  for (int i = 0; i < 100; ++i) {
    const Eigen::Vector2d w(3e4 * u(rng), 3e4 * u(rng));
    const auto d = model::smoothed_power_derivatives(w.x(), w.y(), p.c_p_check, 1.0);
    const auto P = [&](const Eigen::VectorXd& z) { return model::smoothed_power(z(0), z(1), p.c_p_check, 1.0); };
    pow = std::max(pow, oracle::relative_error(d.gradient, oracle::fd_gradient(P, w), 1e-9));
  }

  const std::vector<env::Vec2> poly = {{-300, -100}, {300, -100}, {300, 2000}, {-300, 2000}};
  ocp::OcpSpec s{.x_hat = {0, 1500, std::numbers::pi / 2, 4, 0, 0},
                 .x_dock = {20, 1700, std::numbers::pi / 2, 0, 0, 0},
                 .env = random_env(),
                 .params = p,
                 .constraints = {corridor::corridor_from_polygon(poly)}};
  s.T_end = 60.0;
  s.N_nodes = 5;
  const auto problem = ocp::build_nlp(s);
  std::normal_distribution<double> g(0.0, 0.3);
  for (int i = 0; i < 100; ++i) {
    Vector z = ocp::initial_guess(s);
    for (Eigen::Index k = 0; k < z.size(); ++k) z(k) += g(rng);
    const auto f = [&](const Eigen::VectorXd& q) { return problem.objective(q); };
    const auto ce = [&](const Eigen::VectorXd& q) -> Eigen::VectorXd { return problem.equalities(q); };
    const auto ci = [&](const Eigen::VectorXd& q) -> Eigen::VectorXd { return problem.inequalities(q); };
    obj = std::max(obj, oracle::relative_error(problem.objective_gradient(z), oracle::fd_gradient(f, z)));
    con = std::max({con, oracle::relative_error(Eigen::MatrixXd(problem.equality_jacobian(z)), oracle::fd_jacobian(ce, z)),
                    oracle::relative_error(Eigen::MatrixXd(problem.inequality_jacobian(z)), oracle::fd_jacobian(ci, z))});
  }
  const double worst = std::max({field, dyn, pow, obj, con});
  return {worst <= 1e-5, fmt("relative errors: field %.1e, dynamics %.1e, power %.1e, objective %.1e, constraints %.1e",
                             field, dyn, pow, obj, con)};
}

// --- 3 -------------------------------------------------------------------

Outcome rk4_order() {
  const model::FerryParams p;
  const double u = 3.0, v = 0.4, r = 0.05, T = 60.0;
  // Input that keeps (u, v, r) constant in still water and air.
  const env::Vec2 D = model::damping_force(u, v, p);
  const double air = std::hypot(u, v);
  const model::ControlInput hold{D.x() + 0.5 * p.rho * air * p.c_x * p.A_Fw * u - p.m * v * r,
                                 D.y() + 0.5 * p.rho * air * p.c_y * p.A_Lw * v + p.m * u * r, 0.0};
  const Eigen::Vector3d exact = oracle::rotation_kinematics({10.0, -20.0, 0.3}, u, v, r, T);
  std::vector<double> errors;
  for (int n : {4, 8, 16, 32}) {
    model::State x{10.0, -20.0, 0.3, u, v, r};
    for (int k = 0; k < n; ++k) x = model::rk4_step(x, hold, {}, p, T / n);
    errors.push_back((Eigen::Vector3d(x.x_l, x.y_l, x.psi) - exact).norm());
  }
  bool ok = true;
  std::string orders;
  for (std::size_t i = 1; i < errors.size(); ++i) {
    const double order = std::log2(errors[i - 1] / errors[i]);
    ok = ok && std::abs(order - 4.0) <= 0.2;
    orders += fmt("%s%.3f", i > 1 ? ", " : "", order);
  }
  return {ok, "orders " + orders};
}

// --- 4 -------------------------------------------------------------------

Outcome solver_closed_form() {
  nlp::SolverConfig cfg;
  cfg.kkt_tolerance = 1e-10;
  cfg.constraint_tolerance = 1e-10;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  const int n = 6, m = 2;
  Eigen::MatrixXd A0(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A0(i, j) = g(rng);
  const Eigen::MatrixXd H = A0 * A0.transpose() + n * Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd b(n), c(m);
  Eigen::MatrixXd A(m, n);
  for (int i = 0; i < n; ++i) b(i) = g(rng);
  for (int i = 0; i < m; ++i) {
    c(i) = g(rng);
    for (int j = 0; j < n; ++j) A(i, j) = g(rng);
  }
  const auto quad = [&](const Vector& z) { return 0.5 * z.dot(H * z) - b.dot(z); };
  const auto grad = [&](const Vector& z) { return Vector(H * z - b); };
  const auto hess = [&](const Vector&, double of, const Vector&, const Vector&) { return Eigen::MatrixXd(of * H); };

  double err = 0.0, kkt = 0.0;
  bool converged = true;
  const auto record = [&](const nlp::NlpProblem& p, const nlp::NlpSolution& s, const Eigen::VectorXd& exact) {
    converged = converged && s.status == nlp::SolveStatus::converged;
    err = std::max(err, (s.z - exact).cwiseAbs().maxCoeff());
    const auto r = nlp::kkt_residuals(p, s.z, s.lambda_eq, s.lambda_ineq);
    kkt = std::max({kkt, r.stationarity, r.primal, r.dual, r.complementarity});
  };

  nlp::FunctionProblem unc(n, quad, grad);
  unc.hessian(hess);
  record(unc, nlp::solve(unc, Vector::Zero(n), cfg), H.ldlt().solve(b));

  nlp::FunctionProblem eq(n, quad, grad);
  eq.equalities(m, [&](const Vector& z) { return Vector(A * z - c); }, [&](const Vector&) { return A; });
  eq.hessian(hess);
  Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + m, n + m);
  K.topLeftCorner(n, n) = H;
  K.topRightCorner(n, m) = A.transpose();
  K.bottomLeftCorner(m, n) = A;
  Eigen::VectorXd rhs(n + m);
  rhs << b, c;
  record(eq, nlp::solve(eq, Vector::Zero(n), cfg), K.fullPivLu().solve(rhs).head(n));

  // Projection of (2, 1) onto x + y <= 1 is (1, 0).
  nlp::FunctionProblem ineq(2, [](const Vector& z) { return (z(0) - 2) * (z(0) - 2) + (z(1) - 1) * (z(1) - 1); });
  ineq.inequalities(1, [](const Vector& z) { return Vector::Constant(1, z(0) + z(1) - 1.0); });
  record(ineq, nlp::solve(ineq, Vector::Zero(2), cfg), Eigen::Vector2d(1.0, 0.0));

  return {converged && err <= 1e-8 && kkt <= 1e-8, fmt("max solution error %.2e, max KKT residual %.2e", err, kkt)};
}

// --- 5 -------------------------------------------------------------------

Outcome hover_plan() {
  const auto s = planner::load_scenario(g_scenarios / "hover.json");
  auto session = planner::start_session(s, "hover", s.departure, s.x_hat);
  const auto plan = planner::plan_session(session, s);
  return {plan.converged() && plan.total_energy <= 1.0,
          fmt("E = %.3e J, R = diag(%g, %g, %g)", plan.total_energy, s.R(0, 0), s.R(1, 1), s.R(2, 2))};
}

// --- 6 -------------------------------------------------------------------

Outcome straight_corridor() {
  auto s = planner::load_scenario(g_scenarios / "scenario2.json");
  s.env = {};
  auto session = planner::start_session(s, "straight", s.departure, s.x_hat);
  const auto plan = planner::plan_session(session, s);
  double cross = 0.0;
  for (const auto& x : plan.states) cross = std::max(cross, std::abs(x.x_l));
  const double distance = (s.x_dock.position() - s.x_hat.position()).norm();
  const auto dp = oracle::dp_surge_energy(oracle::Vessel{}, distance, s.arrival - s.departure, s.constraints.F_limit);
  const double gap = std::abs(plan.total_energy - dp.energy) / dp.energy;
  return {plan.converged() && cross <= 1.0 && gap <= 0.05,
          fmt("%.0f m in %.0f s: E = %.4f MJ, DP oracle %.4f MJ (gap %.2f%%), cross-track %.1e m", distance,
              s.arrival - s.departure, plan.total_energy / 1e6, dp.energy / 1e6, 100 * gap, cross)};
}

// --- 7 -------------------------------------------------------------------

Outcome pareto_monotone() {
  const auto s = planner::load_scenario(g_scenarios / "scenario2.json");
  const auto r = planner::pareto_sweep(s, {420, 480, 540, 600}, {0.0, 0.5, 1.0}, {}, 0);
  int converged = 0;
  for (const auto& row : r.rows) converged += row.converged();
  const bool mono = planner::pareto_monotone(r);
  return {mono && converged > 0, fmt("%d/%zu rows converged, monotone: %s", converged, r.rows.size(), mono ? "yes" : "no")};
}

// --- 8 -------------------------------------------------------------------

Outcome dp_consistency() {
  const auto s = planner::load_scenario(g_scenarios / "scenario1.json");
  const double t_half = 0.5 * (s.departure + s.arrival);

  auto a = planner::start_session(s, "tail", s.departure, s.x_hat);
  const auto first = planner::plan_session(a, s);
  const auto replan = planner::update_state(a, s, t_half, first.state_at(t_half));
  const double tail = first.energy_from(t_half);
  const double gap = std::abs(replan.total_energy - tail) / tail;

  auto b = planner::start_session(s, "lateral", s.departure, s.x_hat);
  planner::plan_session(b, s);
  model::State off = first.state_at(t_half);
  off.x_l += 50.0;
  const auto lat = planner::update_state(b, s, t_half, off);
  const double start_err = (lat.states.front().vec() - off.vec()).cwiseAbs().maxCoeff();
  const double end_err = (lat.states.back().vec() - s.x_dock.vec()).cwiseAbs().maxCoeff();
  double corridor = 0.0;
  for (const auto& x : lat.states) corridor = std::max(corridor, s.constraints.corridor.max_violation(x.position()));
  double force = 0.0;
  for (const auto& u : lat.inputs) force = std::max(force, u.force_norm());

  const bool ok = replan.converged() && gap <= 0.01 && lat.converged() && start_err <= 1e-6 && end_err <= 1e-4 &&
                  corridor <= 1e-6 && force <= s.constraints.F_limit * (1.0 + 1e-6);
  return {ok, fmt("tail %.4f MJ vs replan %.4f MJ (gap %.3f%%); 50 m offset: start %.1e, dock %.1e, corridor %.1e",
                  tail / 1e6, replan.total_energy / 1e6, 100 * gap, start_err, end_err, corridor)};
}

// --- 9 -------------------------------------------------------------------

Outcome identification_round_trip() {
  const oracle::Vessel vessel;
  std::vector<ident::SteadyStateSample> rows;
  for (const auto& r : oracle::synthetic_telemetry(vessel, {0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0}))
    rows.push_back({r.speed, r.thrust, r.power});
  const auto id = ident::identify(rows);
  const double e = std::max({std::abs(id.params.X_u - vessel.X_u) / vessel.X_u,
                             std::abs(id.params.X_uu - vessel.X_uu) / vessel.X_uu,
                             std::abs(id.params.c_p_check - vessel.c_p) / vessel.c_p});
  const model::FerryParams p;
  const double P = model::power({model::steady_surge_thrust(1.0, p), 0.0, 0.0}, p);
  const double ref = oracle::thruster_power(vessel, oracle::surge_resistance(vessel, 1.0));
  const double pe = std::abs(P - ref) / ref;
  return {e <= 1e-9 && pe <= 1e-6 && std::abs(P - 3090.0) < 10.0,
          fmt("max relative parameter error %.1e; P(1 m/s) = %.2f W (oracle %.2f W, rel %.1e)", e, P, ref, pe)};
}

// --- 10 ------------------------------------------------------------------

Outcome simulate_determinism() {
  const auto dir = std::filesystem::temp_directory_path() / ("ferryplan_accept_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  std::string files[2];
  int codes[2];
  for (int i = 0; i < 2; ++i) {
    const auto out = dir / ("history" + std::to_string(i) + ".json");
    const std::string cmd = "\"" + g_cli.string() + "\" simulate \"" + (g_scenarios / "scenario1.json").string() +
                            "\" --updates \"" + (g_scenarios / "updates.json").string() + "\" -o \"" + out.string() +
                            "\" 2>/dev/null";
    codes[i] = std::system(cmd.c_str());
    std::ifstream in(out, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    files[i] = ss.str();
  }
  std::filesystem::remove_all(dir);
  const bool same = !files[0].empty() && files[0] == files[1];
  return {codes[0] == 0 && codes[1] == 0 && same,
          fmt("exit codes %d/%d, %zu bytes, identical: %s", codes[0], codes[1], files[0].size(), same ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: acceptance <ferryplan-binary> <scenarios-dir>\n";
    return 2;
  }
  g_cli = argv[1];
  g_scenarios = argv[2];

  struct Criterion {
    const char* name;
    double limit_s;  // 0 = no runtime bound
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {"field-fit recovery", 5, field_fit_recovery},
      {"derivative suite", 30, derivative_suite},
      {"RK4 order", 0, rk4_order},
      {"solver closed-form suite", 0, solver_closed_form},
      {"hover plan", 2, hover_plan},
      {"zero-disturbance straight corridor", 60, straight_corridor},
      {"Pareto monotonicity", 300, pareto_monotone},
      {"shrinking-horizon DP-consistency", 0, dp_consistency},
      {"identification round trip", 0, identification_round_trip},
      {"end-to-end determinism", 0, simulate_determinism},
  };

  int failures = 0;
  int index = 0;
  for (const auto& c : criteria) {
    ++index;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.limit_s > 0 && secs >= c.limit_s) {
      o.pass = false;
      o.detail += fmt("; over the %.0f s limit", c.limit_s);
    }
    failures += !o.pass;
    std::printf("%s %2d %s (%.2f s): %s\n", o.pass ? "PASS" : "FAIL", index, c.name, secs, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
