#include "ferryplan/ocp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Eigenvalues>

#include "ferryplan/error.hpp"

namespace ferryplan::ocp {

using model::InputVec;
using model::StateVec;

namespace {

using Triplets = std::vector<Eigen::Triplet<double>>;

bool is_psd(const Eigen::Matrix3d& M) {
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + M.cwiseAbs().maxCoeff())) return false;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(M);
  return es.eigenvalues().minCoeff() >= -1e-12 * (1.0 + M.cwiseAbs().maxCoeff());
}

double nearest_equivalent_angle(double angle, double reference) {
  const double two_pi = 2.0 * std::numbers::pi;
  return angle + two_pi * std::round((reference - angle) / two_pi);
}

void add_block(Triplets& t, Eigen::Index row, Eigen::Index col, const Eigen::MatrixXd& block) {
  for (Eigen::Index r = 0; r < block.rows(); ++r)
    for (Eigen::Index c = 0; c < block.cols(); ++c)
      if (block(r, c) != 0.0) t.emplace_back(row + r, col + c, block(r, c));
}

}  // namespace

Eigen::Matrix3d default_Q() { return Eigen::Vector3d(0.0, 0.0, 10.0).asDiagonal(); }
Eigen::Matrix3d default_R() { return Eigen::Vector3d(1e-6, 1e-6, 10.0).asDiagonal(); }

void OcpSpec::validate() const {
  if (!(t_now < T_end) || !std::isfinite(t_now) || !std::isfinite(T_end))
    throw BuildError("t_now must be finite and earlier than T_end");
  if (N_nodes < 1) throw BuildError("N_nodes must be at least 1");
  if (substeps < 0) throw BuildError("substeps must be non-negative");
  if (substeps == 0 && !(max_substep > 0.0)) throw BuildError("max_substep must be positive");
  if (!is_psd(Q)) throw BuildError("Q must be symmetric positive semi-definite");
  if (!is_psd(R)) throw BuildError("R must be symmetric positive semi-definite");
  if (!(power_epsilon >= 0.0)) throw BuildError("power_epsilon must be non-negative");
  if (!(constraints.F_limit > 0.0)) throw BuildError("F_limit must be positive");
  if (!x_hat.finite() || !x_dock.finite()) throw BuildError("x_hat and x_dock must be finite");
  try {
    params.validate();
  } catch (const Error& e) {
    throw BuildError(std::string("invalid ferry parameters: ") + e.what());
  }
  const double tol = 1e-9;
  if (!constraints.corridor.contains(x_hat.position(), tol)) throw BuildError("x_hat lies outside the corridor");
  if (!constraints.corridor.contains(x_dock.position(), tol)) throw BuildError("x_dock lies outside the corridor");
}

int OcpSpec::effective_substeps() const {
  if (substeps > 0) return substeps;
  return std::max(1, static_cast<int>(std::ceil(dt() / max_substep - 1e-9)));
}

OcpSpec OcpSpec::normalized() const {
  OcpSpec out = *this;
  out.x_dock.psi = nearest_equivalent_angle(x_dock.psi, x_hat.psi);
  return out;
}

StateVec Scaling::state() const {
  StateVec s;
  s << position, position, yaw, velocity, velocity, yaw_rate;
  return s;
}

InputVec Scaling::input() const { return {force, force, yaw_accel}; }

// ---------------------------------------------------------------------------

VariableLayout::VariableLayout(int N, Scaling scaling) : N_(N), scaling_(scaling) {
  sx_ = scaling_.state();
  su_ = scaling_.input();
}

StateVec VariableLayout::state(const Vector& z, int k) const {
  return z.segment<6>(state_offset(k)).cwiseProduct(sx_);
}

InputVec VariableLayout::input(const Vector& z, int k) const {
  return z.segment<3>(input_offset(k)).cwiseProduct(su_);
}

Vector VariableLayout::pack(const std::vector<model::State>& states,
                            const std::vector<model::ControlInput>& inputs) const {
  if (states.size() != static_cast<std::size_t>(N_ + 1) || inputs.size() != static_cast<std::size_t>(N_))
    throw DimensionError("pack: expected N+1 states and N inputs");
  Vector z(dimension());
  for (int k = 0; k <= N_; ++k) z.segment<6>(state_offset(k)) = states[k].vec().cwiseQuotient(sx_);
  for (int k = 0; k < N_; ++k) z.segment<3>(input_offset(k)) = inputs[k].vec().cwiseQuotient(su_);
  return z;
}

void VariableLayout::unpack(const Vector& z, std::vector<model::State>& states,
                            std::vector<model::ControlInput>& inputs) const {
  if (z.size() != dimension()) throw DimensionError("unpack: decision vector has the wrong size");
  states.resize(static_cast<std::size_t>(N_ + 1));
  inputs.resize(static_cast<std::size_t>(N_));
  for (int k = 0; k <= N_; ++k) states[k] = model::State::from_vec(state(z, k));
  for (int k = 0; k < N_; ++k) inputs[k] = model::ControlInput::from_vec(input(z, k));
}

// ---------------------------------------------------------------------------

OcpNlp::OcpNlp(OcpSpec spec, Scaling scaling)
    : spec_(std::move(spec)),
      layout_(spec_.N_nodes, scaling),
      dt_(spec_.dt()),
      substeps_(spec_.effective_substeps()),
      corridor_rows_(static_cast<int>(spec_.constraints.corridor.size())) {}

Eigen::Index OcpNlp::num_inequalities() const {
  return static_cast<Eigen::Index>(corridor_rows_ + 1) * spec_.N_nodes + corridor_rows_;
}

double OcpNlp::stage_cost(const StateVec& x, const InputVec& u) const {
  const double P = model::smoothed_power(u(0), u(1), spec_.params.c_p_check, spec_.power_epsilon);
  const Eigen::Vector3d nu = x.tail<3>();
  return dt_ * (P + nu.dot(spec_.Q * nu) + u.dot(spec_.R * u));
}

double OcpNlp::physical_objective(const Vector& z) const {
  double J = 0.0;
  for (int k = 0; k < spec_.N_nodes; ++k) J += stage_cost(layout_.state(z, k), layout_.input(z, k));
  return J;
}

double OcpNlp::objective(const Vector& z) const { return layout_.scaling().objective * physical_objective(z); }

Vector OcpNlp::objective_gradient(const Vector& z) const {
  Vector g = Vector::Zero(z.size());
  const double w = layout_.scaling().objective * dt_;
  const StateVec sx = layout_.scaling().state();
  const InputVec su = layout_.scaling().input();
  for (int k = 0; k < spec_.N_nodes; ++k) {
    const StateVec x = layout_.state(z, k);
    const InputVec u = layout_.input(z, k);
    const auto pd = model::smoothed_power_derivatives(u(0), u(1), spec_.params.c_p_check, spec_.power_epsilon);
    StateVec gx = StateVec::Zero();
    gx.tail<3>() = 2.0 * spec_.Q * x.tail<3>();
    InputVec gu = 2.0 * spec_.R * u;
    gu.head<2>() += pd.gradient;
    g.segment<6>(layout_.state_offset(k)) = w * gx.cwiseProduct(sx);
    g.segment<3>(layout_.input_offset(k)) = w * gu.cwiseProduct(su);
  }
  return g;
}

Vector OcpNlp::equalities(const Vector& z) const {
  const int N = spec_.N_nodes;
  const StateVec sx = layout_.scaling().state();
  Vector c(num_equalities());
  c.head<6>() = (layout_.state(z, 0) - spec_.x_hat.vec()).cwiseQuotient(sx);
  for (int k = 0; k < N; ++k) {
    // A trial point may drive the integrator to overflow; report it as a
    // non-finite residual so the line search can back off.
    try {
      const StateVec next =
          model::rk4_propagate(layout_.state(z, k), layout_.input(z, k), spec_.env, spec_.params, dt_, substeps_);
      c.segment<6>(6 + 6 * k) = (layout_.state(z, k + 1) - next).cwiseQuotient(sx);
    } catch (const IntegrationError&) {
      c.segment<6>(6 + 6 * k).setConstant(std::numeric_limits<double>::quiet_NaN());
    }
  }
  c.tail<6>() = (layout_.state(z, N) - spec_.x_dock.vec()).cwiseQuotient(sx);
  return c;
}

nlp::SparseMatrix OcpNlp::equality_jacobian(const Vector& z) const {
  const int N = spec_.N_nodes;
  const StateVec sx = layout_.scaling().state();
  const InputVec su = layout_.scaling().input();
  const Eigen::Matrix<double, 6, 6> I6 = Eigen::Matrix<double, 6, 6>::Identity();
  Triplets t;
  t.reserve(static_cast<std::size_t>(N) * 60 + 12);
  add_block(t, 0, layout_.state_offset(0), I6);
  for (int k = 0; k < N; ++k) {
    const auto lin =
        model::rk4_linearized(layout_.state(z, k), layout_.input(z, k), spec_.env, spec_.params, dt_, substeps_);
    const Eigen::Index row = 6 + 6 * k;
    const Eigen::MatrixXd Ax = -(sx.cwiseInverse().asDiagonal() * lin.A * sx.asDiagonal());
    const Eigen::MatrixXd Bu = -(sx.cwiseInverse().asDiagonal() * lin.B * su.asDiagonal());
    add_block(t, row, layout_.state_offset(k), Ax);
    add_block(t, row, layout_.input_offset(k), Bu);
    add_block(t, row, layout_.state_offset(k + 1), I6);
  }
  add_block(t, 6 + 6 * N, layout_.state_offset(N), I6);
  nlp::SparseMatrix J(num_equalities(), num_variables());
  J.setFromTriplets(t.begin(), t.end());
  return J;
}

Vector OcpNlp::inequalities(const Vector& z) const {
  const int N = spec_.N_nodes;
  const auto& cor = spec_.constraints.corridor;
  const double F2 = spec_.constraints.F_limit * spec_.constraints.F_limit;
  Vector c(num_inequalities());
  Eigen::Index row = 0;
  for (int k = 0; k <= N; ++k) {
    const StateVec x = layout_.state(z, k);
    c.segment(row, corridor_rows_) = cor.eval(x.head<2>());
    row += corridor_rows_;
    if (k < N) {
      const InputVec u = layout_.input(z, k);
      c(row++) = (u(0) * u(0) + u(1) * u(1) - F2) / F2;
    }
  }
  return c;
}

nlp::SparseMatrix OcpNlp::inequality_jacobian(const Vector& z) const {
  const int N = spec_.N_nodes;
  const auto& hp = spec_.constraints.corridor.halfplanes();
  const double F2 = spec_.constraints.F_limit * spec_.constraints.F_limit;
  const double sp = layout_.scaling().position;
  const double sf = layout_.scaling().force;
  Triplets t;
  Eigen::Index row = 0;
  for (int k = 0; k <= N; ++k) {
    for (const auto& h : hp) {
      t.emplace_back(row, layout_.state_offset(k) + model::kX, h.s * sp);
      t.emplace_back(row, layout_.state_offset(k) + model::kY, h.q * sp);
      ++row;
    }
    if (k < N) {
      const InputVec u = layout_.input(z, k);
      t.emplace_back(row, layout_.input_offset(k) + model::kForceX, 2.0 * u(0) * sf / F2);
      t.emplace_back(row, layout_.input_offset(k) + model::kForceY, 2.0 * u(1) * sf / F2);
      ++row;
    }
  }
  nlp::SparseMatrix J(num_inequalities(), num_variables());
  J.setFromTriplets(t.begin(), t.end());
  return J;
}

std::optional<std::vector<nlp::HessianBlock>> OcpNlp::lagrangian_hessian(const Vector& z, double objective_factor,
                                                                         const Vector& lambda_eq,
                                                                         const Vector& lambda_ineq) const {
  using Vec9 = Eigen::Matrix<double, 9, 1>;
  using Mat9 = Eigen::Matrix<double, 9, 9>;
  const int N = spec_.N_nodes;
  const StateVec sx = layout_.scaling().state();
  const InputVec su = layout_.scaling().input();
  Vec9 scale;
  scale << sx, su;
  const double F2 = spec_.constraints.F_limit * spec_.constraints.F_limit;
  const double w = objective_factor * layout_.scaling().objective * dt_;

  std::vector<nlp::HessianBlock> blocks;
  blocks.reserve(static_cast<std::size_t>(N));
  for (int k = 0; k < N; ++k) {
    const StateVec x = layout_.state(z, k);
    const InputVec u = layout_.input(z, k);
    Mat9 H = Mat9::Zero();  // physical units

    const auto pd = model::smoothed_power_derivatives(u(0), u(1), spec_.params.c_p_check, spec_.power_epsilon);
    H.block<3, 3>(3, 3) += w * 2.0 * spec_.Q;
    H.block<3, 3>(6, 6) += w * 2.0 * spec_.R;
    H.block<2, 2>(6, 6) += w * pd.hessian;

    const double mu_force = lambda_ineq((corridor_rows_ + 1) * k + corridor_rows_);
    H.block<2, 2>(6, 6) += mu_force * 2.0 / F2 * Eigen::Matrix2d::Identity();

    // Curvature of the continuity rows: -(lambda ./ sx)' d2F, by central
    // differences of the analytic sensitivities.
    const StateVec lam = lambda_eq.segment<6>(6 + 6 * k).cwiseQuotient(sx);
    if (lam.cwiseAbs().maxCoeff() > 0.0) {
      Vec9 v;
      v << x, u;
      const auto grad = [&](const Vec9& p) {
        const auto lin = model::rk4_linearized(p.head<6>(), p.tail<3>(), spec_.env, spec_.params, dt_, substeps_);
        Vec9 gr;
        gr.head<6>() = -lin.A.transpose() * lam;
        gr.tail<3>() = -lin.B.transpose() * lam;
        return gr;
      };
      Mat9 Hc;
      for (int j = 0; j < 9; ++j) {
        const double h = 1e-5 * scale(j);
        Vec9 vp = v;
        Vec9 vm = v;
        vp(j) += h;
        vm(j) -= h;
        Hc.col(j) = (grad(vp) - grad(vm)) / (2.0 * h);
      }
      H += 0.5 * (Hc + Hc.transpose());
    }

    nlp::HessianBlock block;
    block.indices.resize(9);
    for (int i = 0; i < 6; ++i) block.indices[static_cast<std::size_t>(i)] = layout_.state_offset(k) + i;
    for (int i = 0; i < 3; ++i) block.indices[static_cast<std::size_t>(6 + i)] = layout_.input_offset(k) + i;
    block.values = scale.asDiagonal() * H * scale.asDiagonal();
    blocks.push_back(std::move(block));
  }
  return blocks;
}

// ---------------------------------------------------------------------------

OcpNlp build_nlp(const OcpSpec& spec, Scaling scaling) {
  spec.validate();
  return OcpNlp(spec.normalized(), scaling);
}

Vector initial_guess(const OcpSpec& raw, Scaling scaling) {
  const OcpSpec spec = raw.normalized();
  const int N = spec.N_nodes;
  const double T = spec.horizon();
  const double dt = spec.dt();
  const auto& p = spec.params;

  const env::Vec2 p0 = spec.x_hat.position();
  const env::Vec2 p1 = spec.x_dock.position();
  const double psi0 = spec.x_hat.psi;
  const double psi1 = spec.x_dock.psi;
  const env::Vec2 ground_velocity = (p1 - p0) / T;

  std::vector<model::State> states(static_cast<std::size_t>(N + 1));
  for (int k = 0; k <= N; ++k) {
    const double s = static_cast<double>(k) / N;
    model::State x;
    x.x_l = p0.x() + s * (p1.x() - p0.x());
    x.y_l = p0.y() + s * (p1.y() - p0.y());
    x.psi = psi0 + s * (psi1 - psi0);
    const env::Vec2 body = model::rotation_body_to_enu(x.psi).topLeftCorner<2, 2>().transpose() * ground_velocity;
    x.u_bf = body.x();
    x.v_bf = body.y();
    x.r_bf = (psi1 - psi0) / T;
    states[k] = x;
  }
  states.front() = spec.x_hat;
  states.back() = spec.x_dock;

  std::vector<model::ControlInput> inputs(static_cast<std::size_t>(N));
  for (int k = 0; k < N; ++k) {
    const model::State& x = states[k];
    const model::State& xn = states[k + 1];
    const auto water = model::relative_velocity(x, spec.env.current);
    const env::Vec2 D = model::damping_force(water.u_r, water.v_r, p);
    const env::Vec2 W = model::wind_force(x, spec.env.wind, p);
    const env::Vec2 C = model::coriolis_force(Eigen::Vector3d(x.u_bf, x.v_bf, x.r_bf), p.m);
    const env::Vec2 accel((xn.u_bf - x.u_bf) / dt, (xn.v_bf - x.v_bf) / dt);
    env::Vec2 F = p.m * accel - W + C + D;
    const double norm = F.norm();
    if (norm > spec.constraints.F_limit) F *= spec.constraints.F_limit / norm;
    inputs[k] = {F.x(), F.y(), (xn.r_bf - x.r_bf) / dt};
  }
  return VariableLayout(N, scaling).pack(states, inputs);
}

// ---------------------------------------------------------------------------

model::State TrajectoryPlan::state_at(double t) const {
  if (states.empty()) return {};
  if (t <= times.front()) return states.front();
  if (t >= times.back()) return states.back();
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  const std::size_t k = static_cast<std::size_t>(it - times.begin()) - 1;
  const double s = (t - times[k]) / (times[k + 1] - times[k]);
  return model::State::from_vec((1.0 - s) * states[k].vec() + s * states[k + 1].vec());
}

model::ControlInput TrajectoryPlan::input_at(double t) const {
  if (inputs.empty()) return {};
  if (t <= times.front()) return inputs.front();
  const auto it = std::upper_bound(times.begin(), times.end(), t);
  const std::size_t k = std::min(static_cast<std::size_t>(it - times.begin()) - 1, inputs.size() - 1);
  return inputs[k];
}

double TrajectoryPlan::energy_from(double t) const {
  double e = 0.0;
  for (std::size_t k = 0; k < step_energy.size(); ++k)
    if (times[k] >= t - 1e-9) e += step_energy[k];
  return e;
}

TrajectoryPlan extract_plan(const OcpSpec& raw, const Vector& z, const SolverDiagnostics& diagnostics,
                            Scaling scaling) {
  const OcpSpec spec = raw.normalized();
  if (!z.allFinite()) throw Error("extract_plan: decision vector has non-finite entries");
  const VariableLayout layout(spec.N_nodes, scaling);
  TrajectoryPlan plan;
  plan.t_now = spec.t_now;
  layout.unpack(z, plan.states, plan.inputs);
  const double dt = spec.dt();
  plan.times.resize(static_cast<std::size_t>(spec.N_nodes + 1));
  for (int k = 0; k <= spec.N_nodes; ++k) plan.times[k] = spec.t_now + k * dt;
  plan.times.back() = spec.T_end;
  plan.step_energy.resize(plan.inputs.size());
  for (std::size_t k = 0; k < plan.inputs.size(); ++k) {
    const auto& u = plan.inputs[k];
    plan.step_energy[k] = dt * model::smoothed_power(u.X_a, u.Y_a, spec.params.c_p_check, spec.power_epsilon);
    plan.total_energy += plan.step_energy[k];
  }
  plan.objective_value = OcpNlp(spec, scaling).physical_objective(z);
  plan.diagnostics = diagnostics;
  for (const auto& x : plan.states) plan.diagnostics.extrapolated = plan.diagnostics.extrapolated || spec.env.extrapolates(x.position());
  return plan;
}

ShrinkResult shrink(const OcpSpec& spec, double t_new, const model::State& x_hat_new, const TrajectoryPlan& previous,
                    Scaling scaling, ShrinkGrid grid) {
  if (t_new >= spec.T_end) throw HorizonExpiredError("horizon expired: t_new >= T_end");
  if (t_new < spec.t_now) throw BuildError("shrink: t_new lies before t_now");

  ShrinkResult out{spec, Vector()};
  out.spec.t_now = t_new;
  out.spec.x_hat = x_hat_new;
  if (grid == ShrinkGrid::fixed_step) {
    // The tolerance keeps an on-grid t_new from picking up a sliver interval.
    const double intervals = (spec.T_end - t_new) / spec.dt();
    out.spec.N_nodes = std::max(1, static_cast<int>(std::ceil(intervals - 1e-9)));
  }
  const OcpSpec norm = out.spec.normalized();

  const int N = out.spec.N_nodes;
  const double dt = (spec.T_end - t_new) / N;
  std::vector<model::State> states(static_cast<std::size_t>(N + 1));
  std::vector<model::ControlInput> inputs(static_cast<std::size_t>(N));

  // Keep the warm start on the same yaw branch as the new estimate.
  const double plan_psi = previous.state_at(t_new).psi;
  const double offset = nearest_equivalent_angle(plan_psi, x_hat_new.psi) - plan_psi;
  for (int k = 0; k <= N; ++k) {
    const double t = (k == N) ? spec.T_end : t_new + k * dt;
    states[k] = previous.state_at(t);
    states[k].psi += offset;
  }
  for (int k = 0; k < N; ++k) {
    const double t = t_new + k * dt;
    // Inputs are stamped at their interval start; interpolate between stamps.
    const auto& times = previous.times;
    const auto& u = previous.inputs;
    if (u.empty()) break;
    if (t <= times.front()) {
      inputs[k] = u.front();
    } else if (t >= times[u.size() - 1]) {
      inputs[k] = u.back();
    } else {
      const auto it = std::upper_bound(times.begin(), times.begin() + static_cast<long>(u.size()), t);
      const std::size_t j = static_cast<std::size_t>(it - times.begin()) - 1;
      const double s = (t - times[j]) / (times[j + 1] - times[j]);
      inputs[k] = model::ControlInput::from_vec((1.0 - s) * u[j].vec() + s * u[j + 1].vec());
    }
  }
  states.front() = x_hat_new;
  states.back().psi = norm.x_dock.psi;
  out.warm_start = VariableLayout(N, scaling).pack(states, inputs);
  return out;
}

TrajectoryPlan solve_ocp(const OcpSpec& spec, const nlp::SolverConfig& config, const std::optional<Vector>& warm_start,
                         Scaling scaling) {
  const OcpNlp problem = build_nlp(spec, scaling);
  const Vector init = warm_start ? *warm_start : initial_guess(spec, scaling);
  const nlp::NlpSolution sol = nlp::solve(problem, init, config);
  SolverDiagnostics diag;
  diag.status = nlp::to_string(sol.status);
  diag.iterations = sol.iterations;
  diag.kkt_residual = sol.kkt_residual;
  diag.constraint_violation = sol.constraint_violation;
  diag.message = sol.message;
  return extract_plan(spec, sol.z, diag, scaling);
}

}  // namespace ferryplan::ocp
