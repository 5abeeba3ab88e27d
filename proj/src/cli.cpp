#include "ferryplan/cli.hpp"

#include <algorithm>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <pthread.h>
#include <unistd.h>

#include <CLI11.hpp>

#include "ferryplan/identification.hpp"
#include "ferryplan/planner.hpp"
#include "ferryplan/service.hpp"

namespace ferryplan::cli {

namespace {

using io::Json;

// Writes to the file, or to `out` when no path was given.
void emit(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-")
    out << text;
  else
    io::write_text_file(path, text);
}

void emit_json(const std::string& path, const Json& doc, std::ostream& out) { emit(path, doc.dump(2) + "\n", out); }

std::vector<env::EnvSample> read_samples(const std::string& path) {
  std::istringstream in(io::read_text_file(path));
  return env::parse_samples(in);
}

Json stats_json(const env::QuadraticField2D& field, const std::vector<env::EnvSample>& samples, env::FieldKind kind,
                const env::FitReport& report) {
  const env::FieldErrorStats st = env::error_stats(field, samples, kind);
  return {{"samples", st.sample_count()},
          {"max_abs_error", st.max_abs_error()},
          {"rmse", st.rmse()},
          {"fraction_below_0_1", st.fraction_below(0.1)},
          {"condition_number", report.condition_number},
          {"ill_conditioned", report.ill_conditioned}};
}

int fit_env_cmd(const std::string& csv, const std::string& output, bool stats, const std::string& fitted_at,
                std::ostream& out, std::ostream& err) {
  const auto samples = read_samples(csv);
  env::FitReport wr, cr;
  const env::EnvModel model = env::fit_env_model(samples, fitted_at, &wr, &cr);
  Json doc = io::to_json(model);
  doc["schema_version"] = io::kSchemaVersion;
  if (stats) {
    doc["stats"] = {{"wind", stats_json(model.wind, samples, env::FieldKind::wind, wr)},
                    {"current", stats_json(model.current, samples, env::FieldKind::current, cr)}};
  }
  if (wr.ill_conditioned || cr.ill_conditioned) err << "warning: ill-conditioned fit\n";
  emit_json(output, doc, out);
  return 0;
}

int identify_cmd(const std::string& csv, const std::string& output, const std::string& base, std::ostream& out) {
  std::istringstream in(io::read_text_file(csv));
  const auto samples = ident::parse_telemetry(in);
  model::FerryParams start;
  if (!base.empty()) {
    const Json doc = io::read_json_file(base);
    start = io::params_from_json(doc.contains("params") ? doc["params"] : doc);
  }
  const ident::IdentificationResult r = ident::identify(samples, start);
  const Json doc{{"schema_version", io::kSchemaVersion},
                 {"params", io::to_json(r.params)},
                 {"damping",
                  {{"X_u", r.damping.X_u},
                   {"X_uu", r.damping.X_uu},
                   {"residual_sum_squares", r.damping.residual_sum_squares},
                   {"clamped", r.damping.clamped}}},
                 {"power",
                  {{"c_p_check", r.power.c_p_check},
                   {"residual_sum_squares", r.power.residual_sum_squares},
                   {"rms_residual", r.power.rms_residual},
                   {"max_abs_residual", r.power.max_abs_residual},
                   {"samples", r.power.sample_count}}}};
  emit_json(output, doc, out);
  return 0;
}

Eigen::Matrix3d read_weight(const std::string& path, const char* key) {
  const Json doc = io::read_json_file(path);
  return io::weight_from_json(doc.is_object() && doc.contains(key) ? doc[key] : doc);
}

int plan_cmd(const std::string& scenario_path, const std::string& output, const std::vector<std::string>& weights,
             std::ostream& out) {
  planner::Scenario sc = planner::load_scenario(scenario_path);
  if (weights.size() == 2) {
    sc.Q = read_weight(weights[0], "Q");
    sc.R = read_weight(weights[1], "R");
  }
  planner::LiveSession session = planner::start_session(sc, "plan", sc.departure, sc.x_hat);
  const ocp::TrajectoryPlan plan = planner::plan_session(session, sc);
  emit_json(output, io::to_json(plan), out);
  return 0;
}

// One scripted operator update: an absolute state, or a deviation added to the
// state the active plan predicts at t.
struct ScriptedUpdate {
  double t = 0.0;
  std::optional<model::State> state;
  model::StateVec deviation = model::StateVec::Zero();
};

std::vector<ScriptedUpdate> read_updates(const std::string& path) {
  const Json doc = io::read_json_file(path);
  const Json& list = doc.is_object() ? doc.at("updates") : doc;
  if (!list.is_array()) throw ParseError("updates must be an array");
  std::vector<ScriptedUpdate> updates;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const Json& u = list[i];
    ScriptedUpdate s;
    s.t = io::get_number(u, "t");
    if (u.contains("state") == u.contains("deviation"))
      throw ParseError("update " + std::to_string(i) + " needs exactly one of 'state' and 'deviation'");
    if (u.contains("state")) s.state = io::state_from_json(u["state"]);
    if (u.contains("deviation")) s.deviation = io::state_from_json(u["deviation"]).vec();
    updates.push_back(s);
  }
  return updates;
}

int simulate_cmd(const std::string& scenario_path, const std::string& updates_path, const std::string& output,
                 std::ostream& out, std::ostream& err) {
  const planner::Scenario sc = planner::load_scenario(scenario_path);
  const auto updates = read_updates(updates_path);
  planner::LiveSession session = planner::start_session(sc, "simulation", sc.departure, sc.x_hat);

  auto attempt = [&](auto&& f) {
    try {
      f();
    } catch (const planner::PlanFailedError& e) {
      err << "warning: " << e.what() << "\n";
    }
  };
  attempt([&] { planner::plan_session(session, sc); });
  for (const auto& u : updates) {
    model::State x;
    if (u.state) {
      x = *u.state;
    } else {
      const model::State base = session.active ? session.active->state_at(u.t) : session.x_hat;
      x = model::State::from_vec(base.vec() + u.deviation);
    }
    attempt([&] { planner::update_state(session, sc, u.t, x); });
  }

  Json doc = planner::to_json(session);
  doc["scenario_id"] = sc.id;
  emit_json(output, doc, out);
  return 0;
}

int pareto_cmd(const std::string& scenario_path, const std::vector<double>& durations,
               const std::vector<double>& scalings, int threads, const std::string& output, std::ostream& out) {
  const planner::Scenario sc = planner::load_scenario(scenario_path);
  if (threads <= 0) threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const planner::ParetoResult r = planner::pareto_sweep(sc, durations, scalings, {}, threads);
  emit(output, planner::to_csv(r), out);
  return 0;
}

int serve_cmd(const std::string& host, int port, const std::string& data, const std::string& token, int threads,
              std::ostream& err) {
  service::ServiceConfig cfg;
  cfg.data_dir = data;
  cfg.token = token;
  cfg.pareto_threads = std::max(1, threads);
  service::PlannerService svc(cfg);
  service::ApiServer server(svc);
  const int bound = server.bind(host, port);
  err << "listening on " << host << ":" << bound << std::endl;

  // SIGINT/SIGTERM are taken by a dedicated thread so stop() never runs inside a handler.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  sigset_t previous;
  pthread_sigmask(SIG_BLOCK, &set, &previous);
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
  const bool ok = server.serve();
  kill(getpid(), SIGTERM);
  waiter.join();
  const timespec zero{};
  while (sigtimedwait(&set, nullptr, &zero) > 0) {
  }
  pthread_sigmask(SIG_SETMASK, &previous, nullptr);
  return ok ? 0 : 1;
}

const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const planner::PlanFailedError*>(&e)) return "plan-failed";
  if (dynamic_cast<const planner::SessionCompleteError*>(&e)) return "session-complete";
  if (dynamic_cast<const ParseError*>(&e)) return "parse";
  if (dynamic_cast<const RejectionError*>(&e)) return "rejected";
  if (dynamic_cast<const InsufficientDataError*>(&e)) return "insufficient-data";
  if (dynamic_cast<const RankError*>(&e)) return "rank-deficient";
  if (dynamic_cast<const GeometryError*>(&e)) return "geometry";
  if (dynamic_cast<const BuildError*>(&e)) return "build";
  if (dynamic_cast<const HorizonExpiredError*>(&e)) return "session-complete";
  if (dynamic_cast<const Json::exception*>(&e)) return "parse";
  return "error";
}

void report(const std::exception& e, std::ostream& err) {
  Json j{{"error", error_kind(e)}, {"message", e.what()}};
  if (const auto* r = dynamic_cast<const RejectionError*>(&e)) j["field"] = r->field();
  if (const auto* p = dynamic_cast<const ParseError*>(&e); p && p->line()) j["line"] = p->line();
  if (const auto* f = dynamic_cast<const planner::PlanFailedError*>(&e)) {
    const auto& d = f->diagnostics();
    j["diagnostics"] = {{"status", d.status},
                        {"iterations", d.iterations},
                        {"kkt_residual", d.kkt_residual},
                        {"constraint_violation", d.constraint_violation},
                        {"message", d.message}};
  }
  err << j.dump() << "\n";
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Energy-optimal ferry crossing planner", "ferryplan"};
  app.set_version_flag("--version", planner::kVersion);
  app.require_subcommand(1);

  std::string input, output;

  auto* fit = app.add_subcommand("fit-env", "Fit quadratic wind and current fields to a sample table");
  bool stats = false;
  std::string fitted_at;
  fit->add_option("csv", input, "x_l,y_l,vx_wind,vy_wind,vx_current,vy_current table")->required();
  fit->add_option("-o,--output", output, "model JSON (default stdout)");
  fit->add_flag("--stats", stats, "add residual statistics");
  fit->add_option("--fitted-at", fitted_at, "stamp stored with the model");

  auto* idf = app.add_subcommand("identify", "Identify damping and power coefficients from steady-state telemetry");
  std::string base;
  idf->add_option("csv", input, "surge_speed,thrust_total,power_total table")->required();
  idf->add_option("-o,--output", output, "parameter JSON (default stdout)");
  idf->add_option("--base", base, "parameter file supplying the values telemetry cannot identify");

  auto* pln = app.add_subcommand("plan", "Plan a dock-to-dock crossing");
  std::vector<std::string> weights;
  pln->add_option("scenario", input, "scenario JSON")->required();
  pln->add_option("-o,--output", output, "plan JSON (default stdout)");
  pln->add_option("--weights", weights, "Q and R weight files")->expected(2);

  auto* sim = app.add_subcommand("simulate", "Replay scripted state updates through shrinking-horizon replanning");
  std::string updates;
  sim->add_option("scenario", input, "scenario JSON")->required();
  sim->add_option("--updates", updates, "update script JSON")->required();
  sim->add_option("-o,--output", output, "history JSON (default stdout)");

  auto* par = app.add_subcommand("pareto", "Sweep energy over maneuver duration and disturbance scaling");
  std::vector<double> durations, scalings{1.0};
  int threads = 0;
  par->add_option("scenario", input, "scenario JSON")->required();
  par->add_option("--durations", durations, "comma-separated durations in s")->delimiter(',')->required();
  par->add_option("--scalings", scalings, "comma-separated environment scalings (1 = scenario fields)")
      ->delimiter(',');
  par->add_option("--threads", threads, "worker threads (0 = all cores)");
  par->add_option("-o,--output", output, "CSV (default stdout)");

  auto* srv = app.add_subcommand("serve", "Run the HTTP planning service");
  std::string host = "127.0.0.1", data, token;
  int port = 8080;
  srv->add_option("--host", host, "bind address")->capture_default_str();
  srv->add_option("--port", port, "TCP port, 0 picks a free one")->capture_default_str();
  srv->add_option("--data", data, "directory for scenario and session files");
  srv->add_option("--token", token, "static bearer token required on every route except /health");
  srv->add_option("--threads", threads, "worker threads for Pareto sweeps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << planner::kVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (fit->parsed()) return fit_env_cmd(input, output, stats, fitted_at, out, err);
    if (idf->parsed()) return identify_cmd(input, output, base, out);
    if (pln->parsed()) return plan_cmd(input, output, weights, out);
    if (sim->parsed()) return simulate_cmd(input, updates, output, out, err);
    if (par->parsed()) return pareto_cmd(input, durations, scalings, threads, output, out);
    if (srv->parsed()) return serve_cmd(host, port, data, token, threads, err);
  } catch (const std::exception& e) {
    report(e, err);
    return 1;
  }
  return 2;
}

}  // namespace ferryplan::cli
