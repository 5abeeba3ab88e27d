#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ferryplan/error.hpp"
#include "ferryplan/json_io.hpp"
#include "ferryplan/ocp.hpp"

namespace ferryplan::planner {

inline constexpr const char* kVersion = "0.1.0";

/// Everything needed to plan one crossing: vessel, corridor, environment,
/// docks and schedule, plus the transcription settings.
struct Scenario {
  std::string id;
  model::FerryParams params;
  corridor::PathConstraintSet constraints;
  env::EnvModel env;
  model::State x_hat;               ///< state at departure
  model::State x_dock;              ///< arrival pose, at rest
  std::vector<model::State> docks;  ///< every dock pose; front() is the departure dock
  double departure = 0.0;           ///< s
  double arrival = 240.0;           ///< s
  int N_nodes = 40;
  Eigen::Matrix3d Q = ocp::default_Q();
  Eigen::Matrix3d R = ocp::default_R();
  double power_epsilon = 1.0;
  int substeps = 0;
  std::string created;
  std::string modified;

  /// Throws BuildError unless the docks lie strictly inside the corridor and arrival > departure.
  void validate() const;

  /// Problem P(t, x_hat) towards x_dock with the scenario's node count.
  ocp::OcpSpec spec(double t, const model::State& x_hat) const;

  /// Step of the scenario's own grid, (arrival - departure) / N_nodes.
  double reference_dt() const { return (arrival - departure) / N_nodes; }
};

/// Reads the scenario document. `env_csv` paths are resolved against base_dir.
Scenario scenario_from_json(const io::Json& j, const std::filesystem::path& base_dir = {});
Scenario load_scenario(const std::filesystem::path& path);
/// Writes the environment inline, never as a CSV reference.
io::Json to_json(const Scenario& scenario);

struct PlannerConfig {
  nlp::SolverConfig solver;
  /// Replans keep the step of the plan they replace, so a replan from the
  /// predicted state reproduces that plan's tail.
  ocp::ShrinkGrid shrink_grid = ocp::ShrinkGrid::fixed_step;
};

/// Raised when a plan attempt does not converge; the session keeps its previous plan.
class PlanFailedError : public Error {
 public:
  PlanFailedError(const std::string& what, ocp::SolverDiagnostics diagnostics)
      : Error(what), diagnostics_(std::move(diagnostics)) {}
  const ocp::SolverDiagnostics& diagnostics() const { return diagnostics_; }

 private:
  ocp::SolverDiagnostics diagnostics_;
};

/// Raised when an update reaches the arrival time.
class SessionCompleteError : public Error {
 public:
  using Error::Error;
};

struct PlanRecord {
  double t = 0.0;
  model::State x_hat;
  bool accepted = false;
  ocp::TrajectoryPlan plan;  ///< failed attempts keep whatever the solver returned
};

struct LiveSession {
  std::string id;
  std::string scenario_id;
  double t = 0.0;
  model::State x_hat;
  std::optional<ocp::TrajectoryPlan> active;
  std::vector<PlanRecord> history;  ///< append-only
};

LiveSession start_session(const Scenario& scenario, std::string id, double t, const model::State& x_hat);

/// Solves P(session.t, session.x_hat) from scratch and activates the result.
/// Throws BuildError for an invalid problem and PlanFailedError on non-convergence.
ocp::TrajectoryPlan plan_session(LiveSession& session, const Scenario& scenario, const PlannerConfig& config = {});

/// Shrinks the horizon to t_new (see PlannerConfig::shrink_grid), warm-starts from the active plan and solves.
/// Throws SessionCompleteError when t_new >= arrival and BuildError when t_new
/// lies before the session time.
ocp::TrajectoryPlan update_state(LiveSession& session, const Scenario& scenario, double t_new,
                                 const model::State& x_new, const PlannerConfig& config = {});

enum class Severity { info, advise, warn };
const char* to_string(Severity s);

struct Nudge {
  double heading_delta = 0.0;  ///< rad, positive turns to port
  double speed_delta = 0.0;    ///< m/s
  std::string text;
  Severity severity = Severity::info;
};

struct NudgeConfig {
  double lookahead = 10.0;         ///< s
  double advise_heading = 0.087;   ///< rad
  double warn_heading = 0.26;      ///< rad
  double advise_speed = 0.3;       ///< m/s
  double warn_speed = 1.0;         ///< m/s
  double stale_after = 60.0;       ///< s without a new plan
};

/// Compares the current state with the active plan at now + lookahead. `now`
/// defaults to the session time. Throws Error without an active plan.
Nudge make_nudge(const LiveSession& session, const NudgeConfig& config = {}, std::optional<double> now = std::nullopt);

io::Json to_json(const Nudge& nudge);
io::Json to_json(const LiveSession& session);
LiveSession session_from_json(const io::Json& j);

struct ParetoRow {
  double duration = 0.0;  ///< s
  double scaling = 0.0;   ///< fraction of the scenario's environment
  double total_energy = 0.0;
  std::string status;
  int iterations = 0;

  bool converged() const { return status == "converged"; }
};

struct ParetoResult {
  std::vector<ParetoRow> rows;  ///< scaling-major, in the order requested
};

/// One dock-to-dock problem per grid point: from docks.front() at rest to
/// x_dock in `duration` seconds with the environment scaled by `scaling`. The
/// node count keeps the scenario's step. Rows fail individually; `threads`
/// only changes the wall time, never the rows.
ParetoResult pareto_sweep(const Scenario& scenario, const std::vector<double>& durations,
                          const std::vector<double>& scalings, const nlp::SolverConfig& config = {},
                          int threads = 1);

/// Converged rows only: energy non-increasing in duration and non-decreasing in scaling.
bool pareto_monotone(const ParetoResult& result, double relative_slack = 0.0);

std::string to_csv(const ParetoResult& result);
io::Json to_json(const ParetoResult& result);

}  // namespace ferryplan::planner
