#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ferryplan/corridor.hpp"
#include "ferryplan/ferry_model.hpp"
#include "ferryplan/nlp.hpp"

namespace ferryplan::ocp {

using nlp::Vector;

/// Default regularization weights on body velocities (Q) and inputs (R).
Eigen::Matrix3d default_Q();
Eigen::Matrix3d default_R();

/// Shrinking-horizon problem P(t, x_hat, xi): reach the dock pose at T_end with
/// minimal actuator energy plus quadratic regularization.
struct OcpSpec {
  double t_now = 0.0;
  double T_end = 240.0;
  model::State x_hat;
  model::State x_dock;
  env::EnvModel env;
  model::FerryParams params;
  corridor::PathConstraintSet constraints;
  Eigen::Matrix3d Q = default_Q();
  Eigen::Matrix3d R = default_R();
  int N_nodes = 40;
  double power_epsilon = 1.0;  ///< N
  /// RK4 steps per shooting interval; 0 picks the smallest count whose step
  /// does not exceed max_substep.
  int substeps = 0;
  double max_substep = 2.0;  ///< s

  double horizon() const { return T_end - t_now; }
  double dt() const { return horizon() / N_nodes; }
  int effective_substeps() const;

  /// Throws BuildError when an invariant does not hold.
  void validate() const;

  /// Copy whose dock yaw is shifted by a multiple of 2 pi to the value nearest x_hat.psi.
  OcpSpec normalized() const;
};

/// Characteristic magnitudes; the NLP works on physical value / scale.
struct Scaling {
  double position = 100.0;    ///< m
  double yaw = 1.0;           ///< rad
  double velocity = 1.0;      ///< m/s
  double yaw_rate = 0.01;     ///< rad/s
  double force = 1e4;         ///< N
  double yaw_accel = 1e-3;    ///< rad/s^2
  double objective = 1e-6;    ///< objective units per J

  model::StateVec state() const;
  model::InputVec input() const;
};

/// Decision vector layout [x_0, u_0, x_1, u_1, ..., u_{N-1}, x_N] in scaled units.
class VariableLayout {
 public:
  VariableLayout(int N, Scaling scaling = {});

  int nodes() const { return N_; }
  Eigen::Index dimension() const { return 9 * static_cast<Eigen::Index>(N_) + 6; }
  Eigen::Index state_offset(int k) const { return 9 * static_cast<Eigen::Index>(k); }
  Eigen::Index input_offset(int k) const { return 9 * static_cast<Eigen::Index>(k) + 6; }
  const Scaling& scaling() const { return scaling_; }

  model::StateVec state(const Vector& z, int k) const;
  model::InputVec input(const Vector& z, int k) const;

  Vector pack(const std::vector<model::State>& states, const std::vector<model::ControlInput>& inputs) const;
  void unpack(const Vector& z, std::vector<model::State>& states, std::vector<model::ControlInput>& inputs) const;

 private:
  int N_;
  Scaling scaling_;
  model::StateVec sx_;
  model::InputVec su_;
};

/// Multiple-shooting transcription.
///
/// Equalities: initial state (6), one RK4 continuity block per interval (6 N),
/// terminal state (6). Inequalities: corridor half-planes at every node and the
/// force bound on every interval, grouped per node k as [corridor..., force]
/// with the last node carrying only its corridor rows.
class OcpNlp : public nlp::NlpProblem {
 public:
  explicit OcpNlp(OcpSpec spec, Scaling scaling = {});

  const OcpSpec& spec() const { return spec_; }
  const VariableLayout& layout() const { return layout_; }

  Eigen::Index num_variables() const override { return layout_.dimension(); }
  Eigen::Index num_equalities() const override { return 6 * static_cast<Eigen::Index>(spec_.N_nodes) + 12; }
  Eigen::Index num_inequalities() const override;

  double objective(const Vector& z) const override;
  Vector objective_gradient(const Vector& z) const override;
  Vector equalities(const Vector& z) const override;
  nlp::SparseMatrix equality_jacobian(const Vector& z) const override;
  Vector inequalities(const Vector& z) const override;
  nlp::SparseMatrix inequality_jacobian(const Vector& z) const override;
  std::optional<std::vector<nlp::HessianBlock>> lagrangian_hessian(const Vector& z, double objective_factor,
                                                                   const Vector& lambda_eq,
                                                                   const Vector& lambda_ineq) const override;

  /// Physical objective (J) of a decision vector.
  double physical_objective(const Vector& z) const;

 private:
  double stage_cost(const model::StateVec& x, const model::InputVec& u) const;

  OcpSpec spec_;
  VariableLayout layout_;
  double dt_;
  int substeps_;
  int corridor_rows_;
};

/// Throws BuildError if the spec is invalid or x_hat / x_dock lie outside the corridor.
OcpNlp build_nlp(const OcpSpec& spec, Scaling scaling = {});

/// Straight-line guess from x_hat to the dock with inputs from inverse dynamics.
Vector initial_guess(const OcpSpec& spec, Scaling scaling = {});

struct SolverDiagnostics {
  std::string status = "not_solved";
  int iterations = 0;
  double kkt_residual = 0.0;
  double constraint_violation = 0.0;
  std::string message;
  bool extrapolated = false;  ///< some node lies outside the fitted environment region
};

struct TrajectoryPlan {
  double t_now = 0.0;
  std::vector<double> times;
  std::vector<model::State> states;
  std::vector<model::ControlInput> inputs;
  std::vector<double> step_energy;  ///< J per interval
  double total_energy = 0.0;        ///< J
  double objective_value = 0.0;     ///< J, including regularization
  SolverDiagnostics diagnostics;

  bool converged() const { return diagnostics.status == "converged"; }

  /// Linear interpolation of the node states; clamped to the plan's time span.
  model::State state_at(double t) const;
  /// Held input of the interval containing t.
  model::ControlInput input_at(double t) const;
  /// Energy of the intervals starting at or after t.
  double energy_from(double t) const;
};

/// Unpacks a decision vector. Throws Error on non-finite entries.
TrajectoryPlan extract_plan(const OcpSpec& spec, const Vector& z, const SolverDiagnostics& diagnostics,
                            Scaling scaling = {});

struct ShrinkResult {
  OcpSpec spec;
  Vector warm_start;
};

enum class ShrinkGrid {
  fixed_nodes,  ///< keep N_nodes, dt shrinks with the horizon
  fixed_step,   ///< keep dt (rounded up to whole intervals), drop nodes
};

/// Moves the problem to t_new with a new state estimate, keeping T_end. Throws
/// HorizonExpiredError when t_new >= T_end.
ShrinkResult shrink(const OcpSpec& spec, double t_new, const model::State& x_hat_new, const TrajectoryPlan& previous,
                    Scaling scaling = {}, ShrinkGrid grid = ShrinkGrid::fixed_nodes);

/// build_nlp + solve + extract_plan. Uses initial_guess when no warm start is given.
TrajectoryPlan solve_ocp(const OcpSpec& spec, const nlp::SolverConfig& config = {},
                         const std::optional<Vector>& warm_start = std::nullopt, Scaling scaling = {});

}  // namespace ferryplan::ocp
