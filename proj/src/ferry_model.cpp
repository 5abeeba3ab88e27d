#include "ferryplan/ferry_model.hpp"

#include <cmath>
#include <string>

#include "ferryplan/error.hpp"

namespace ferryplan::model {

namespace {

Eigen::Matrix2d rot2(double psi) {
  const double c = std::cos(psi);
  const double s = std::sin(psi);
  Eigen::Matrix2d R;
  R << c, -s, s, c;
  return R;
}

Eigen::Matrix2d rot2_derivative(double psi) {
  const double c = std::cos(psi);
  const double s = std::sin(psi);
  Eigen::Matrix2d dR;
  dR << -s, -c, c, -s;
  return dR;
}

// Relative velocity of the hull wrt one medium, with derivatives wrt
// position, yaw and body velocity (the last is the identity).
struct RelativeFlow {
  Vec2 w = Vec2::Zero();
  Eigen::Matrix2d d_pos = Eigen::Matrix2d::Zero();
  Vec2 d_psi = Vec2::Zero();
};

RelativeFlow relative_flow(const StateVec& x, const env::QuadraticField2D& field) {
  const Vec2 p(x(kX), x(kY));
  const auto fe = field.eval(p);
  const Eigen::Matrix2d Rt = rot2(x(kPsi)).transpose();
  RelativeFlow out;
  out.w = Vec2(x(kSurge), x(kSway)) - Rt * fe.value;
  out.d_pos = -Rt * fe.jacobian;
  out.d_psi = -rot2_derivative(x(kPsi)).transpose() * fe.value;
  return out;
}

// |a|, or sqrt(a^2 + eps^2) when smoothing is enabled.
double modulus(double a, double eps) { return eps > 0.0 ? std::sqrt(a * a + eps * eps) : std::abs(a); }

// d/da (a * modulus(a))
double modulus_product_derivative(double a, double eps) {
  if (eps <= 0.0) return 2.0 * std::abs(a);
  const double m = modulus(a, eps);
  return m + a * a / m;
}

Vec2 damping(const Vec2& w, const FerryParams& p) {
  const double e = p.modulus_epsilon;
  return {p.X_u * w.x() + p.X_uu * modulus(w.x(), e) * w.x(), p.Y_v * w.y() + p.Y_vv * modulus(w.y(), e) * w.y()};
}

Eigen::Matrix2d damping_jacobian(const Vec2& w, const FerryParams& p) {
  Eigen::Matrix2d J = Eigen::Matrix2d::Zero();
  J(0, 0) = p.X_u + p.X_uu * modulus_product_derivative(w.x(), p.modulus_epsilon);
  J(1, 1) = p.Y_v + p.Y_vv * modulus_product_derivative(w.y(), p.modulus_epsilon);
  return J;
}

// (u^2 + v^2) [cos g, sin g] == |w| w, so the drag is smooth away from w = 0.
Vec2 wind_drag(const Vec2& w, const FerryParams& p) {
  const double V = w.norm();
  return -0.5 * p.rho * V * Vec2(p.c_x * p.A_Fw * w.x(), p.c_y * p.A_Lw * w.y());
}

Eigen::Matrix2d wind_drag_jacobian(const Vec2& w, const FerryParams& p) {
  const double V = w.norm();
  if (V == 0.0) return Eigen::Matrix2d::Zero();
  const Eigen::Matrix2d K = Vec2(p.c_x * p.A_Fw, p.c_y * p.A_Lw).asDiagonal();
  return -0.5 * p.rho * K * (V * Eigen::Matrix2d::Identity() + w * w.transpose() / V);
}

void check_finite(const StateVec& v, const char* stage) {
  if (!v.allFinite()) throw IntegrationError(std::string("non-finite state at RK4 ") + stage);
}

}  // namespace

StateVec State::vec() const {
  StateVec v;
  v << x_l, y_l, psi, u_bf, v_bf, r_bf;
  return v;
}

State State::from_vec(const StateVec& v) { return {v(0), v(1), v(2), v(3), v(4), v(5)}; }

bool State::finite() const { return vec().allFinite(); }

double ControlInput::force_norm() const { return std::hypot(X_a, Y_a); }

void FerryParams::validate() const {
  const auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw RejectionError(name, "must be finite and strictly positive");
  };
  positive(m, "m");
  positive(X_u, "X_u");
  positive(X_uu, "X_uu");
  positive(Y_v, "Y_v");
  positive(Y_vv, "Y_vv");
  positive(A_Fw, "A_Fw");
  positive(A_Lw, "A_Lw");
  positive(rho, "rho");
  positive(F_AT_max, "F_AT_max");
  positive(c_p_check, "c_p_check");
  if (!(c_x >= 0.0 && c_x <= 1.0)) throw RejectionError("c_x", "must lie in [0, 1]");
  if (!(c_y >= 0.0 && c_y <= 1.0)) throw RejectionError("c_y", "must lie in [0, 1]");
  if (!(modulus_epsilon >= 0.0) || !std::isfinite(modulus_epsilon))
    throw RejectionError("modulus_epsilon", "must be finite and non-negative");
}

Eigen::Matrix3d rotation_body_to_enu(double psi) {
  Eigen::Matrix3d J = Eigen::Matrix3d::Identity();
  J.topLeftCorner<2, 2>() = rot2(psi);
  return J;
}

RelativeVelocity relative_velocity(const State& state, const env::QuadraticField2D& field) {
  const Vec2 w = relative_flow(state.vec(), field).w;
  RelativeVelocity out{w.x(), w.y(), 0.0};
  if (w.x() != 0.0 || w.y() != 0.0) out.gamma_r = std::atan2(w.y(), w.x());
  return out;
}

Vec2 damping_force(double u_r, double v_r, const FerryParams& params) { return damping(Vec2(u_r, v_r), params); }

Vec2 wind_force(const State& state, const env::QuadraticField2D& wind, const FerryParams& params) {
  return wind_drag(relative_flow(state.vec(), wind).w, params);
}

Vec2 coriolis_force(const Eigen::Vector3d& nu, double mass) {
  return {-mass * nu(1) * nu(2), mass * nu(0) * nu(2)};
}

StateVec dynamics(const State& state, const ControlInput& input, const env::EnvModel& env, const FerryParams& params) {
  return linearize_dynamics(state.vec(), input.vec(), env, params).f;
}

DynamicsLinearization linearize_dynamics(const StateVec& x, const InputVec& u, const env::EnvModel& env,
                                         const FerryParams& params) {
  DynamicsLinearization out;
  const double psi = x(kPsi);
  const Vec2 vel(x(kSurge), x(kSway));
  const double r = x(kYawRate);
  const double m = params.m;

  // Kinematics.
  const Eigen::Matrix2d R = rot2(psi);
  out.f.head<2>() = R * vel;
  out.f(kPsi) = r;
  out.A.block<2, 1>(0, kPsi) = rot2_derivative(psi) * vel;
  out.A.block<2, 2>(0, kSurge) = R;
  out.A(kPsi, kYawRate) = 1.0;

  // Hull damping on the water-relative velocity.
  const RelativeFlow water = relative_flow(x, env.current);
  const Vec2 D = damping(water.w, params);
  const Eigen::Matrix2d dD = damping_jacobian(water.w, params);

  // Wind drag on the air-relative velocity.
  const RelativeFlow air = relative_flow(x, env.wind);
  const Vec2 tau_w = wind_drag(air.w, params);
  const Eigen::Matrix2d dW = wind_drag_jacobian(air.w, params);

  const Vec2 C = coriolis_force(Eigen::Vector3d(vel.x(), vel.y(), r), m);
  Eigen::Matrix<double, 2, 3> dC;
  dC << 0.0, -m * r, -m * vel.y(), m * r, 0.0, m * vel.x();

  out.f.segment<2>(kSurge) = (Vec2(u(kForceX), u(kForceY)) + tau_w - C - D) / m;
  out.f(kYawRate) = u(kYawAccel);

  Eigen::Matrix<double, 2, 6> dacc = Eigen::Matrix<double, 2, 6>::Zero();
  dacc.block<2, 2>(0, kX) = dW * air.d_pos - dD * water.d_pos;
  dacc.col(kPsi) = dW * air.d_psi - dD * water.d_psi;
  dacc.block<2, 2>(0, kSurge) = dW - dD;
  dacc.block<2, 3>(0, kSurge) -= dC;
  out.A.block<2, 6>(kSurge, 0) = dacc / m;

  out.B(kSurge, kForceX) = 1.0 / m;
  out.B(kSway, kForceY) = 1.0 / m;
  out.B(kYawRate, kYawAccel) = 1.0;
  return out;
}

State rk4_step(const State& state, const ControlInput& input, const env::EnvModel& env, const FerryParams& params,
               double dt) {
  if (!(dt > 0.0)) throw IntegrationError("RK4 step needs dt > 0");
  return State::from_vec(rk4_propagate(state.vec(), input.vec(), env, params, dt, 1));
}

StateVec rk4_propagate(const StateVec& x0, const InputVec& u, const env::EnvModel& env, const FerryParams& params,
                       double dt, int substeps) {
  const double h = dt / substeps;
  StateVec x = x0;
  for (int s = 0; s < substeps; ++s) {
    const StateVec k1 = linearize_dynamics(x, u, env, params).f;
    check_finite(k1, "stage 1");
    const StateVec k2 = linearize_dynamics(x + 0.5 * h * k1, u, env, params).f;
    check_finite(k2, "stage 2");
    const StateVec k3 = linearize_dynamics(x + 0.5 * h * k2, u, env, params).f;
    check_finite(k3, "stage 3");
    const StateVec k4 = linearize_dynamics(x + h * k3, u, env, params).f;
    check_finite(k4, "stage 4");
    x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    check_finite(x, "update");
  }
  return x;
}

StepLinearization rk4_linearized(const StateVec& x0, const InputVec& u, const env::EnvModel& env,
                                 const FerryParams& params, double dt, int substeps) {
  using Mat69 = Eigen::Matrix<double, 6, 9>;
  const double h = dt / substeps;
  StepLinearization out;
  StateVec x = x0;
  // Sensitivity of the running state wrt (x0, u).
  Mat69 S = Mat69::Zero();
  S.leftCols<6>() = Mat66::Identity();
  Mat69 input_part = Mat69::Zero();

  for (int s = 0; s < substeps; ++s) {
    const auto stage = [&](const StateVec& xs, const Mat69& dxs, StateVec& k, Mat69& dk) {
      const auto lin = linearize_dynamics(xs, u, env, params);
      k = lin.f;
      check_finite(k, "stage");
      input_part.rightCols<3>() = lin.B;
      dk = lin.A * dxs + input_part;
    };
    StateVec k1, k2, k3, k4;
    Mat69 d1, d2, d3, d4;
    stage(x, S, k1, d1);
    stage(x + 0.5 * h * k1, S + 0.5 * h * d1, k2, d2);
    stage(x + 0.5 * h * k2, S + 0.5 * h * d2, k3, d3);
    stage(x + h * k3, S + h * d3, k4, d4);
    x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    S += h / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4);
    check_finite(x, "update");
  }
  out.next = x;
  out.A = S.leftCols<6>();
  out.B = S.rightCols<3>();
  return out;
}

double power(const ControlInput& input, const FerryParams& params) {
  return smoothed_power(input.X_a, input.Y_a, params.c_p_check, 0.0);
}

double smoothed_power(double X_a, double Y_a, double c_p_check, double epsilon) {
  const double e2 = epsilon * epsilon;
  const double rho = 0.25 * (X_a * X_a + Y_a * Y_a + e2);
  return 2.0 * c_p_check * (std::pow(rho, 0.75) - std::pow(0.25 * e2, 0.75));
}

PowerDerivatives smoothed_power_derivatives(double X_a, double Y_a, double c_p_check, double epsilon) {
  PowerDerivatives out;
  out.value = smoothed_power(X_a, Y_a, c_p_check, epsilon);
  const double rho = 0.25 * (X_a * X_a + Y_a * Y_a + epsilon * epsilon);
  if (rho == 0.0) return out;
  const Eigen::Vector2d w(X_a, Y_a);
  // dP/dw = (3c/4) rho^(-1/4) w,  d2P/dw2 = (3c/4) rho^(-1/4) (I - w w^T / (8 rho)).
  const double g = 0.75 * c_p_check * std::pow(rho, -0.25);
  out.gradient = g * w;
  out.hessian = g * (Eigen::Matrix2d::Identity() - w * w.transpose() / (8.0 * rho));
  return out;
}

ActuatorSetting allocate_actuators(double X_a, double Y_a, const FerryParams& params) {
  const double demand = std::hypot(X_a, Y_a);
  const double limit = 2.0 * params.F_AT_max;
  if (demand > limit)
    throw SaturationError("force demand " + std::to_string(demand) + " N exceeds limit " + std::to_string(limit) + " N",
                          limit / demand);
  ActuatorSetting out;
  out.F_AT = 0.5 * demand;
  out.alpha = demand > 0.0 ? std::atan2(Y_a, X_a) : 0.0;
  out.n_AT = std::sqrt(out.F_AT);
  return out;
}

Vec2 allocation_forces(const ActuatorSetting& setting) {
  return {2.0 * setting.F_AT * std::cos(setting.alpha), 2.0 * setting.F_AT * std::sin(setting.alpha)};
}

double steady_surge_thrust(double speed, const FerryParams& params) {
  return params.X_u * speed + params.X_uu * std::abs(speed) * speed;
}

}  // namespace ferryplan::model
