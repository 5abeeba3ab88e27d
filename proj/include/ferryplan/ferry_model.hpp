#pragma once

#include <Eigen/Dense>

#include "ferryplan/envfield.hpp"

namespace ferryplan::model {

using env::Vec2;
using StateVec = Eigen::Matrix<double, 6, 1>;
using InputVec = Eigen::Vector3d;
using Mat66 = Eigen::Matrix<double, 6, 6>;
using Mat63 = Eigen::Matrix<double, 6, 3>;

/// Component indices of the state and input vectors.
enum StateIndex : int { kX = 0, kY = 1, kPsi = 2, kSurge = 3, kSway = 4, kYawRate = 5 };
enum InputIndex : int { kForceX = 0, kForceY = 1, kYawAccel = 2 };

/// Pose in the local ENU frame and body-fixed velocity over ground.
/// psi is stored unwrapped along a trajectory.
struct State {
  double x_l = 0.0;
  double y_l = 0.0;
  double psi = 0.0;
  double u_bf = 0.0;
  double v_bf = 0.0;
  double r_bf = 0.0;

  StateVec vec() const;
  static State from_vec(const StateVec& v);
  Vec2 position() const { return {x_l, y_l}; }
  bool finite() const;
};

/// Body-frame actuator forces and commanded yaw acceleration.
struct ControlInput {
  double X_a = 0.0;
  double Y_a = 0.0;
  double rdot_bf = 0.0;

  InputVec vec() const { return {X_a, Y_a, rdot_bf}; }
  static ControlInput from_vec(const InputVec& v) { return {v(0), v(1), v(2)}; }
  double force_norm() const;
};

/// Vessel parameters; defaults are the identified MS Insel Mainau values.
struct FerryParams {
  double m = 35000.0;          ///< kg
  double X_u = 1470.0;         ///< N s/m
  double X_uu = 753.0;         ///< N s^2/m^2
  double Y_v = 10290.0;        ///< N s/m
  double Y_vv = 5272.0;        ///< N s^2/m^2
  double A_Fw = 59.2;          ///< m^2, frontal windage
  double A_Lw = 219.0;         ///< m^2, lateral windage
  double c_x = 0.59;
  double c_y = 0.84;
  double rho = 1.204;          ///< kg/m^3, air
  double F_AT_max = 24000.0;   ///< N per azimuth thruster
  double c_p_check = 0.0417;   ///< m^(1/2) kg^(-1/2)
  /// m/s; when positive, |a| in the modulus damping becomes sqrt(a^2 + eps^2).
  double modulus_epsilon = 0.0;

  /// Throws RejectionError naming the first invalid field.
  void validate() const;
};

/// Per-thruster setting produced by the simplified control allocation.
struct ActuatorSetting {
  double F_AT = 0.0;   ///< N
  double alpha = 0.0;  ///< rad
  double n_AT = 0.0;   ///< propeller speed up to the constant folded into c_p_check
};

/// Flow relative to the hull in the body frame, with its angle of attack.
struct RelativeVelocity {
  double u_r = 0.0;
  double v_r = 0.0;
  double gamma_r = 0.0;
};

Eigen::Matrix3d rotation_body_to_enu(double psi);

/// Vessel-minus-medium velocity in the body frame.
RelativeVelocity relative_velocity(const State& state, const env::QuadraticField2D& field);

/// Second-order modulus damping on the relative water velocity; subtracted in the dynamics.
Vec2 damping_force(double u_r, double v_r, const FerryParams& params);

/// Aerodynamic drag on the relative air velocity. Always opposes the relative motion.
Vec2 wind_force(const State& state, const env::QuadraticField2D& wind, const FerryParams& params);

/// Rigid-body point-mass Coriolis term C(nu) nu; subtracted in the dynamics.
Vec2 coriolis_force(const Eigen::Vector3d& nu, double mass);

StateVec dynamics(const State& state, const ControlInput& input, const env::EnvModel& env, const FerryParams& params);

/// Dynamics with analytic Jacobians wrt state (A) and input (B).
struct DynamicsLinearization {
  StateVec f = StateVec::Zero();
  Mat66 A = Mat66::Zero();
  Mat63 B = Mat63::Zero();
};

DynamicsLinearization linearize_dynamics(const StateVec& x, const InputVec& u, const env::EnvModel& env,
                                         const FerryParams& params);

/// One classical RK4 step with the input held over the step. Throws
/// IntegrationError on a non-finite stage.
State rk4_step(const State& state, const ControlInput& input, const env::EnvModel& env, const FerryParams& params,
               double dt);

/// `substeps` RK4 steps of length dt/substeps, with the sensitivity of the end
/// state wrt the initial state (A) and the held input (B).
struct StepLinearization {
  StateVec next = StateVec::Zero();
  Mat66 A = Mat66::Identity();
  Mat63 B = Mat63::Zero();
};

StepLinearization rk4_linearized(const StateVec& x, const InputVec& u, const env::EnvModel& env,
                                 const FerryParams& params, double dt, int substeps = 1);

StateVec rk4_propagate(const StateVec& x, const InputVec& u, const env::EnvModel& env, const FerryParams& params,
                       double dt, int substeps = 1);

/// Exact actuator power 2 c_p ((X^2 + Y^2)/4)^(3/4) in W.
double power(const ControlInput& input, const FerryParams& params);

/// Smoothed power used inside the optimizer:
///   2 c_p [((X^2 + Y^2 + eps^2)/4)^(3/4) - (eps^2/4)^(3/4)],
/// which equals power() at eps = 0 and vanishes at zero force for every eps.
struct PowerDerivatives {
  double value = 0.0;
  Eigen::Vector2d gradient = Eigen::Vector2d::Zero();  ///< wrt (X_a, Y_a)
  Eigen::Matrix2d hessian = Eigen::Matrix2d::Zero();
};

double smoothed_power(double X_a, double Y_a, double c_p_check, double epsilon);
PowerDerivatives smoothed_power_derivatives(double X_a, double Y_a, double c_p_check, double epsilon);

/// Inverts X = 2 F cos(alpha), Y = 2 F sin(alpha). Throws SaturationError when
/// the demand exceeds 2 F_AT_max.
ActuatorSetting allocate_actuators(double X_a, double Y_a, const FerryParams& params);

/// Forward allocation: forces produced by a thruster setting.
Vec2 allocation_forces(const ActuatorSetting& setting);

/// Steady surge force balancing hull damping at speed v >= 0 in still water.
double steady_surge_thrust(double speed, const FerryParams& params);

}  // namespace ferryplan::model
