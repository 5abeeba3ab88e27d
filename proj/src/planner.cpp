#include "ferryplan/planner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>
#include <thread>

namespace ferryplan::planner {

namespace {

model::State at_rest(const model::State& pose) { return {pose.x_l, pose.y_l, pose.psi, 0.0, 0.0, 0.0}; }

model::State pose_from_json(const io::Json& j) {
  if (j.is_array() && j.size() == 3) {
    const io::Json full = {j[0], j[1], j[2], 0.0, 0.0, 0.0};
    return io::state_from_json(full);
  }
  return io::state_from_json(j);
}

std::string string_or(const io::Json& j, const char* key) {
  if (!j.contains(key)) return {};
  if (!j[key].is_string()) throw ParseError(std::string("field '") + key + "' must be a string");
  return j[key].get<std::string>();
}

double wrap_angle(double a) { return std::remainder(a, 2.0 * std::numbers::pi); }

}  // namespace

void Scenario::validate() const {
  if (!(arrival > departure)) throw BuildError("arrival must be later than departure");
  if (N_nodes < 1) throw BuildError("N_nodes must be positive");
  if (docks.empty()) throw BuildError("scenario needs at least one dock");
  for (std::size_t i = 0; i < docks.size(); ++i)
    if (!(constraints.corridor.max_violation(docks[i].position()) < 0.0))
      throw BuildError("dock " + std::to_string(i) + " is not strictly inside the corridor");
  if (!(constraints.corridor.max_violation(x_dock.position()) < 0.0))
    throw BuildError("x_dock is not strictly inside the corridor");
}

ocp::OcpSpec Scenario::spec(double t, const model::State& x) const {
  ocp::OcpSpec s{.t_now = t,
                 .T_end = arrival,
                 .x_hat = x,
                 .x_dock = x_dock,
                 .env = env,
                 .params = params,
                 .constraints = constraints,
                 .Q = Q,
                 .R = R,
                 .N_nodes = N_nodes,
                 .power_epsilon = power_epsilon,
                 .substeps = substeps};
  return s;
}

Scenario scenario_from_json(const io::Json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ParseError("scenario must be an object");
  model::FerryParams params;
  if (j.contains("params") && j["params"].is_string()) {
    // Path to a parameter file, e.g. the output of `identify`.
    std::filesystem::path file = j["params"].get<std::string>();
    if (file.is_relative()) file = base_dir / file;
    const io::Json doc = io::read_json_file(file);
    params = io::params_from_json(doc.contains("params") ? doc["params"] : doc);
  } else if (j.contains("params")) {
    params = io::params_from_json(j["params"]);
  }
  if (!j.contains("corridor")) throw ParseError("missing field 'corridor'");
  corridor::PathConstraintSet constraints{io::corridor_from_json(j["corridor"]),
                                          io::get_number_or(j, "F_limit", corridor::default_force_limit(params))};
  if (!(constraints.F_limit > 0.0)) throw ParseError("field 'F_limit' must be positive");

  env::EnvModel env;
  if (j.contains("env_model") && j.contains("env_csv")) throw ParseError("give either 'env_model' or 'env_csv'");
  if (j.contains("env_model")) {
    env = io::env_model_from_json(j["env_model"]);
  } else if (j.contains("env_csv")) {
    if (!j["env_csv"].is_string()) throw ParseError("field 'env_csv' must be a path");
    std::filesystem::path csv = j["env_csv"].get<std::string>();
    if (csv.is_relative()) csv = base_dir / csv;
    std::istringstream in(io::read_text_file(csv));
    const auto samples = env::parse_samples(in);
    env = env::fit_env_model(samples);
  }

  if (!j.contains("x_hat")) throw ParseError("missing field 'x_hat'");
  if (!j.contains("x_dock")) throw ParseError("missing field 'x_dock'");
  const model::State x_hat = io::state_from_json(j["x_hat"]);
  const model::State x_dock = at_rest(pose_from_json(j["x_dock"]));

  std::vector<model::State> docks;
  if (j.contains("docks")) {
    if (!j["docks"].is_array()) throw ParseError("field 'docks' must be an array");
    for (const auto& d : j["docks"]) docks.push_back(at_rest(pose_from_json(d)));
  } else {
    docks = {at_rest(x_hat), x_dock};
  }

  Scenario s{.id = string_or(j, "id"),
             .params = params,
             .constraints = std::move(constraints),
             .env = std::move(env),
             .x_hat = x_hat,
             .x_dock = x_dock,
             .docks = std::move(docks),
             .departure = io::get_number_or(j, "t_now", 0.0),
             .arrival = io::get_number(j, "T_end"),
             .N_nodes = io::get_int_or(j, "N_nodes", 40),
             .Q = j.contains("Q") ? io::weight_from_json(j["Q"]) : ocp::default_Q(),
             .R = j.contains("R") ? io::weight_from_json(j["R"]) : ocp::default_R(),
             .power_epsilon = io::get_number_or(j, "power_epsilon", 1.0),
             .substeps = io::get_int_or(j, "substeps", 0),
             .created = string_or(j, "created"),
             .modified = string_or(j, "modified")};
  s.validate();
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  return scenario_from_json(io::read_json_file(path), path.parent_path());
}

io::Json to_json(const Scenario& s) {
  io::Json docks = io::Json::array();
  for (const auto& d : s.docks) docks.push_back({d.x_l, d.y_l, d.psi});
  io::Json j{{"schema_version", io::kSchemaVersion},
             {"id", s.id},
             {"params", io::to_json(s.params)},
             {"corridor", io::to_json(s.constraints.corridor)},
             {"F_limit", s.constraints.F_limit},
             {"env_model", io::to_json(s.env)},
             {"x_hat", io::to_json(s.x_hat)},
             {"x_dock", io::to_json(s.x_dock)},
             {"docks", docks},
             {"t_now", s.departure},
             {"T_end", s.arrival},
             {"N_nodes", s.N_nodes},
             {"Q", io::to_json(s.Q)},
             {"R", io::to_json(s.R)},
             {"power_epsilon", s.power_epsilon},
             {"substeps", s.substeps}};
  if (!s.created.empty()) j["created"] = s.created;
  if (!s.modified.empty()) j["modified"] = s.modified;
  return j;
}

// ---------------------------------------------------------------------------

LiveSession start_session(const Scenario& scenario, std::string id, double t, const model::State& x_hat) {
  if (t >= scenario.arrival) throw SessionCompleteError("session starts at or after the arrival time");
  LiveSession s;
  s.id = std::move(id);
  s.scenario_id = scenario.id;
  s.t = t;
  s.x_hat = x_hat;
  return s;
}

namespace {

ocp::TrajectoryPlan record(LiveSession& session, double t, const model::State& x, ocp::TrajectoryPlan plan) {
  const bool ok = plan.converged();
  session.t = t;
  session.x_hat = x;
  session.history.push_back({t, x, ok, plan});
  if (!ok) throw PlanFailedError("plan did not converge: " + plan.diagnostics.message, plan.diagnostics);
  session.active = plan;
  return plan;
}

}  // namespace

ocp::TrajectoryPlan plan_session(LiveSession& session, const Scenario& scenario, const PlannerConfig& config) {
  if (session.t >= scenario.arrival) throw SessionCompleteError("arrival time reached");
  const ocp::OcpSpec spec = scenario.spec(session.t, session.x_hat);
  return record(session, session.t, session.x_hat, ocp::solve_ocp(spec, config.solver));
}

ocp::TrajectoryPlan update_state(LiveSession& session, const Scenario& scenario, double t_new,
                                 const model::State& x_new, const PlannerConfig& config) {
  if (t_new >= scenario.arrival) throw SessionCompleteError("arrival time reached");
  if (t_new < session.t) throw BuildError("state update goes back in time");
  if (!session.active) {
    const ocp::OcpSpec spec = scenario.spec(t_new, x_new);
    return record(session, t_new, x_new, ocp::solve_ocp(spec, config.solver));
  }
  const ocp::TrajectoryPlan& prev = *session.active;
  ocp::OcpSpec prev_spec = scenario.spec(prev.t_now, prev.states.front());
  prev_spec.N_nodes = static_cast<int>(prev.inputs.size());
  const ocp::ShrinkResult shrunk = ocp::shrink(prev_spec, t_new, x_new, prev, {}, config.shrink_grid);
  return record(session, t_new, x_new, ocp::solve_ocp(shrunk.spec, config.solver, shrunk.warm_start));
}

// ---------------------------------------------------------------------------

const char* to_string(Severity s) {
  switch (s) {
    case Severity::info:
      return "info";
    case Severity::advise:
      return "advise";
    case Severity::warn:
      return "warn";
  }
  return "info";
}

Nudge make_nudge(const LiveSession& session, const NudgeConfig& config, std::optional<double> now) {
  if (!session.active) throw Error("session has no active plan");
  const ocp::TrajectoryPlan& plan = *session.active;
  const double t = now.value_or(session.t);
  const model::State target = plan.state_at(t + config.lookahead);

  Nudge n;
  n.heading_delta = wrap_angle(target.psi - session.x_hat.psi);
  n.speed_delta = target.u_bf - session.x_hat.u_bf;

  const double dh = std::abs(n.heading_delta);
  const double ds = std::abs(n.speed_delta);
  const bool stale = t - plan.t_now > config.stale_after;
  if (stale || dh > config.warn_heading || ds > config.warn_speed)
    n.severity = Severity::warn;
  else if (dh > config.advise_heading || ds > config.advise_speed)
    n.severity = Severity::advise;

  std::vector<std::string> parts;
  char buf[96];
  if (ds > config.advise_speed) {
    std::snprintf(buf, sizeof buf, "%s speed by %.1f m/s", n.speed_delta > 0.0 ? "increase" : "reduce", ds);
    parts.emplace_back(buf);
  }
  if (dh > config.advise_heading) {
    std::snprintf(buf, sizeof buf, "turn to %s by %.0f deg", n.heading_delta > 0.0 ? "port" : "starboard",
                  dh * 180.0 / std::numbers::pi);
    parts.emplace_back(buf);
  }
  if (parts.empty()) parts.emplace_back("on plan, hold course and speed");
  std::string text;
  for (std::size_t i = 0; i < parts.size(); ++i) text += (i ? ", " : "") + parts[i];
  if (stale) text += " (plan is stale)";
  text[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(text[0])));
  n.text = text;
  return n;
}

io::Json to_json(const Nudge& n) {
  return {{"heading_delta", n.heading_delta},
          {"speed_delta", n.speed_delta},
          {"text", n.text},
          {"severity", to_string(n.severity)}};
}

io::Json to_json(const LiveSession& s) {
  io::Json history = io::Json::array();
  std::optional<std::size_t> active_index;
  for (std::size_t i = 0; i < s.history.size(); ++i) {
    const auto& r = s.history[i];
    history.push_back({{"t", r.t}, {"x_hat", io::to_json(r.x_hat)}, {"accepted", r.accepted}, {"plan", io::to_json(r.plan)}});
    if (r.accepted) active_index = i;
  }
  io::Json j{{"schema_version", io::kSchemaVersion},
             {"id", s.id},
             {"scenario_id", s.scenario_id},
             {"t", s.t},
             {"x_hat", io::to_json(s.x_hat)},
             {"history", history}};
  j["active"] = active_index ? io::Json(*active_index) : io::Json(nullptr);
  return j;
}

LiveSession session_from_json(const io::Json& j) {
  LiveSession s;
  s.id = string_or(j, "id");
  s.scenario_id = string_or(j, "scenario_id");
  s.t = io::get_number(j, "t");
  if (!j.contains("x_hat")) throw ParseError("missing field 'x_hat'");
  s.x_hat = io::state_from_json(j["x_hat"]);
  if (j.contains("history")) {
    for (const auto& r : j["history"]) {
      PlanRecord rec;
      rec.t = io::get_number(r, "t");
      rec.x_hat = io::state_from_json(r.at("x_hat"));
      rec.accepted = r.value("accepted", false);
      rec.plan = io::plan_from_json(r.at("plan"));
      s.history.push_back(std::move(rec));
    }
  }
  if (j.contains("active") && j["active"].is_number_integer()) {
    const auto idx = j["active"].get<std::size_t>();
    if (idx >= s.history.size()) throw ParseError("field 'active' is out of range");
    s.active = s.history[idx].plan;
  }
  return s;
}

// ---------------------------------------------------------------------------

ParetoResult pareto_sweep(const Scenario& scenario, const std::vector<double>& durations,
                          const std::vector<double>& scalings, const nlp::SolverConfig& config, int threads) {
  for (double d : durations)
    if (!(d > 0.0)) throw BuildError("durations must be positive");
  for (double s : scalings)
    if (!(s >= 0.0)) throw BuildError("scalings must be non-negative");

  ParetoResult result;
  for (double s : scalings)
    for (double d : durations) result.rows.push_back({d, s, 0.0, "pending", 0});

  nlp::SolverConfig cfg = config;
  cfg.on_iteration = nullptr;
  const double dt_ref = scenario.reference_dt();
  const model::State start = scenario.docks.front();

  const auto solve_row = [&](ParetoRow& row) {
    try {
      ocp::OcpSpec spec = scenario.spec(0.0, start);
      spec.T_end = row.duration;
      spec.N_nodes = std::max(4, static_cast<int>(std::lround(row.duration / dt_ref)));
      spec.env = scenario.env.scaled(row.scaling);
      const ocp::TrajectoryPlan plan = ocp::solve_ocp(spec, cfg);
      row.total_energy = plan.total_energy;
      row.status = plan.diagnostics.status;
      row.iterations = plan.diagnostics.iterations;
    } catch (const Error& e) {
      row.status = std::string("error: ") + e.what();
    }
  };

  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(result.rows.size())));
  std::atomic<std::size_t> next{0};
  const auto work = [&] {
    for (std::size_t i = next++; i < result.rows.size(); i = next++) solve_row(result.rows[i]);
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return result;
}

bool pareto_monotone(const ParetoResult& result, double slack) {
  for (const auto& a : result.rows) {
    if (!a.converged()) continue;
    for (const auto& b : result.rows) {
      if (!b.converged()) continue;
      const double tol = slack * std::max(std::abs(a.total_energy), std::abs(b.total_energy));
      if (a.scaling == b.scaling && a.duration < b.duration && b.total_energy > a.total_energy + tol) return false;
      if (a.duration == b.duration && a.scaling < b.scaling && b.total_energy < a.total_energy - tol) return false;
    }
  }
  return true;
}

std::string to_csv(const ParetoResult& result) {
  std::string out = "duration_s,scaling,total_energy_J,status,iterations,schema_version\n";
  char buf[256];
  for (const auto& r : result.rows) {
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    std::snprintf(buf, sizeof buf, "%.6g,%.6g,%.3f,", r.duration, r.scaling, r.total_energy);
    out += buf;
    out += status + "," + std::to_string(r.iterations) + "," + std::to_string(io::kSchemaVersion) + "\n";
  }
  return out;
}

io::Json to_json(const ParetoResult& result) {
  io::Json rows = io::Json::array();
  for (const auto& r : result.rows)
    rows.push_back({{"duration", r.duration},
                    {"scaling", r.scaling},
                    {"total_energy", r.total_energy},
                    {"status", r.status},
                    {"iterations", r.iterations}});
  return {{"schema_version", io::kSchemaVersion}, {"rows", rows}};
}

}  // namespace ferryplan::planner
