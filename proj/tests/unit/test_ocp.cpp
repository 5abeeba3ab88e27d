#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "ferryplan/error.hpp"
#include "ferryplan/ocp.hpp"
#include "oracles.hpp"

using namespace ferryplan;
using nlp::Vector;

namespace {

constexpr double kHalfPi = std::numbers::pi / 2;

const std::vector<env::Vec2> kPolygon = {{-50, -30}, {50, -30}, {250, 500}, {250, 2050},
                                         {50, 2557}, {-50, 2557}, {-250, 2050}, {-250, 500}};

env::EnvModel crosswind_env() {
  env::EnvModel e;
  e.wind = env::QuadraticField2D::constant({11.0, 0.0});
  const double c = 2527.0 / 2.0;
  env::Mat2 Qx;
  Qx << 0.0, 0.0, 0.0, -0.2 / (c * c);
  e.current = env::QuadraticField2D(Qx, env::Mat2::Zero(), {0.0, 0.2 / c}, {0.0, 0.0}, 0.0, 0.0);
  return e;
}

ocp::OcpSpec crossing_spec() {
  ocp::OcpSpec s{.x_hat = {0, 1500, kHalfPi, 4, 0, 0},
                 .x_dock = {0, 2527, kHalfPi, 0, 0, 0},
                 .env = crosswind_env(),
                 .params = {},
                 .constraints = {corridor::corridor_from_polygon(kPolygon)}};
  s.T_end = 240.0;
  s.N_nodes = 40;
  return s;
}

ocp::OcpSpec small_spec() {
  auto s = crossing_spec();
  s.N_nodes = 5;
  s.T_end = 60.0;
  s.x_dock = {20, 1700, kHalfPi, 0, 0, 0};
  return s;
}

Vector perturbed_guess(const ocp::OcpSpec& s, std::mt19937_64& rng) {
  Vector z = ocp::initial_guess(s);
  std::normal_distribution<double> g(0.0, 0.3);
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) += g(rng);
  return z;
}

void expect_plan_invariants(const ocp::OcpSpec& spec, const ocp::TrajectoryPlan& plan) {
  ASSERT_TRUE(plan.converged()) << plan.diagnostics.message;
  EXPECT_LE((plan.states.front().vec() - spec.x_hat.vec()).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LE((plan.states.back().vec() - spec.normalized().x_dock.vec()).cwiseAbs().maxCoeff(), 1e-4);
  for (const auto& x : plan.states) EXPECT_LE(spec.constraints.corridor.max_violation(x.position()), 1e-6);
  for (const auto& u : plan.inputs) EXPECT_LE(u.force_norm(), spec.constraints.F_limit * (1.0 + 1e-6));
  EXPECT_NEAR(plan.times.back(), spec.T_end, 1e-9);
}

}  // namespace

TEST(OcpSpec, ValidationCatchesBadProblems) {
  auto s = crossing_spec();
  s.N_nodes = 0;
  EXPECT_THROW(s.validate(), BuildError);
  s = crossing_spec();
  s.x_hat.x_l = 1000.0;
  EXPECT_THROW(ocp::build_nlp(s), BuildError);
  s = crossing_spec();
  s.t_now = 300.0;
  EXPECT_THROW(s.validate(), BuildError);
  s = crossing_spec();
  s.R(0, 0) = -1.0;
  EXPECT_THROW(s.validate(), BuildError);
}

TEST(OcpSpec, SubstepsKeepStepsShort) {
  auto s = crossing_spec();
  EXPECT_EQ(s.effective_substeps(), 3);  // dt = 6 s
  s.N_nodes = 120;
  EXPECT_EQ(s.effective_substeps(), 1);
  s.substeps = 4;
  EXPECT_EQ(s.effective_substeps(), 4);
}

TEST(OcpSpec, NormalizedDockYawIsNearest) {
  auto s = crossing_spec();
  s.x_hat.psi = kHalfPi + 4.0 * std::numbers::pi;
  EXPECT_NEAR(s.normalized().x_dock.psi, s.x_hat.psi, 1e-12);
}

TEST(Layout, PackUnpackRoundTrip) {
  const ocp::VariableLayout layout(3);
  EXPECT_EQ(layout.dimension(), 33);
  std::vector<model::State> xs{{1, 2, 3, 4, 5, 6}, {7, 8, 9, 10, 11, 12}, {0, 0, 0, 0, 0, 0}, {1, 1, 1, 1, 1, 1}};
  std::vector<model::ControlInput> us{{1e4, 2e4, 1e-3}, {0, 0, 0}, {-5e3, 1, 2}};
  const Vector z = layout.pack(xs, us);
  std::vector<model::State> xs2;
  std::vector<model::ControlInput> us2;
  layout.unpack(z, xs2, us2);
  for (std::size_t k = 0; k < xs.size(); ++k) EXPECT_LT((xs[k].vec() - xs2[k].vec()).norm(), 1e-12);
  for (std::size_t k = 0; k < us.size(); ++k) EXPECT_LT((us[k].vec() - us2[k].vec()).norm(), 1e-9);
  // Scaled values are O(1) for typical magnitudes.
  EXPECT_NEAR(z(layout.input_offset(0)), 1.0, 1e-12);
}

TEST(OcpNlp, DimensionsMatchTranscription) {
  const auto s = crossing_spec();
  const auto nlp = ocp::build_nlp(s);
  EXPECT_EQ(nlp.num_variables(), 9 * 40 + 6);
  EXPECT_EQ(nlp.num_equalities(), 6 * 40 + 12);
  EXPECT_EQ(nlp.num_inequalities(), 41 * 8 + 40);
}

TEST(OcpNlp, DerivativesMatchFiniteDifferences) {
  std::mt19937_64 rng(41);
  const auto s = small_spec();
  const auto nlp = ocp::build_nlp(s);
  for (int trial = 0; trial < 10; ++trial) {
    const Vector z = perturbed_guess(s, rng);
    const auto f = [&](const Eigen::VectorXd& x) { return nlp.objective(x); };
    const auto ce = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return nlp.equalities(x); };
    const auto ci = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return nlp.inequalities(x); };
    EXPECT_LT(oracle::relative_error(nlp.objective_gradient(z), oracle::fd_gradient(f, z)), 1e-5);
    EXPECT_LT(oracle::relative_error(Eigen::MatrixXd(nlp.equality_jacobian(z)), oracle::fd_jacobian(ce, z)), 1e-5);
    EXPECT_LT(oracle::relative_error(Eigen::MatrixXd(nlp.inequality_jacobian(z)), oracle::fd_jacobian(ci, z)), 1e-5);
  }
}

TEST(OcpNlp, HessianMatchesFiniteDifferenceOfLagrangianGradient) {
  std::mt19937_64 rng(43);
  const auto s = small_spec();
  const auto nlp = ocp::build_nlp(s);
  const Vector z = perturbed_guess(s, rng);
  std::normal_distribution<double> g;
  Vector le(nlp.num_equalities()), li(nlp.num_inequalities());
  for (Eigen::Index i = 0; i < le.size(); ++i) le(i) = g(rng);
  for (Eigen::Index i = 0; i < li.size(); ++i) li(i) = std::abs(g(rng));
  const double of = 0.7;

  const auto grad_L = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return of * nlp.objective_gradient(x) + Eigen::MatrixXd(nlp.equality_jacobian(x)).transpose() * le +
           Eigen::MatrixXd(nlp.inequality_jacobian(x)).transpose() * li;
  };
  const auto blocks = nlp.lagrangian_hessian(z, of, le, li);
  ASSERT_TRUE(blocks);
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(z.size(), z.size());
  for (const auto& b : *blocks)
    for (std::size_t i = 0; i < b.indices.size(); ++i)
      for (std::size_t j = 0; j < b.indices.size(); ++j)
        H(b.indices[i], b.indices[j]) += b.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  const Eigen::MatrixXd fd = oracle::fd_jacobian(grad_L, z, 1e-5);
  EXPECT_LT(oracle::relative_error(H, 0.5 * (fd + fd.transpose())), 1e-4);
}

TEST(SolveOcp, HoverCostsNothing) {
  ocp::OcpSpec s{.x_hat = {0, 0, kHalfPi, 0, 0, 0},
                 .x_dock = {0, 0, kHalfPi, 0, 0, 0},
                 .env = {},
                 .params = {},
                 .constraints = {corridor::corridor_from_polygon(kPolygon)}};
  const auto plan = ocp::solve_ocp(s);
  expect_plan_invariants(s, plan);
  EXPECT_LE(plan.total_energy, 1.0);
}

TEST(SolveOcp, CrosswindCrossingSatisfiesInvariants) {
  const auto s = crossing_spec();
  const auto plan = ocp::solve_ocp(s);
  expect_plan_invariants(s, plan);
  EXPECT_FALSE(plan.diagnostics.extrapolated);
  EXPECT_GT(plan.total_energy, 0.0);
  EXPECT_GE(plan.objective_value, plan.total_energy);

  // Step energies against direct quadrature of the exact power.
  const double dt = s.dt();
  std::vector<std::array<double, 2>> forces;
  for (const auto& u : plan.inputs) forces.push_back({u.X_a, u.Y_a});
  const double quad = oracle::power_quadrature(oracle::Vessel{}, forces, dt);
  EXPECT_NEAR(plan.total_energy, quad, 1e-6 * quad);
}

TEST(SolveOcp, ExtrapolationIsFlagged) {
  auto s = crossing_spec();
  s.env.bounding_box = env::BoundingBox{{-100, -100}, {100, 1000}};
  const auto plan = ocp::solve_ocp(s);
  ASSERT_TRUE(plan.converged());
  EXPECT_TRUE(plan.diagnostics.extrapolated);
}

TEST(Shrink, MovesStartAndKeepsEnd) {
  const auto s = crossing_spec();
  const auto plan = ocp::solve_ocp(s);
  ASSERT_TRUE(plan.converged());
  const model::State x = plan.state_at(120.0);
  const auto r = ocp::shrink(s, 120.0, x, plan);
  EXPECT_EQ(r.spec.t_now, 120.0);
  EXPECT_EQ(r.spec.T_end, s.T_end);
  EXPECT_EQ(r.spec.N_nodes, s.N_nodes);
  EXPECT_EQ(r.warm_start.size(), ocp::VariableLayout(s.N_nodes).dimension());
  EXPECT_THROW(ocp::shrink(s, 240.0, x, plan), HorizonExpiredError);
}

TEST(TrajectoryPlan, InterpolationAndTails) {
  ocp::TrajectoryPlan p;
  p.times = {0.0, 10.0, 20.0};
  p.states = {{0, 0, 0, 0, 0, 0}, {10, 0, 0, 1, 0, 0}, {20, 0, 0, 0, 0, 0}};
  p.inputs = {{1, 0, 0}, {2, 0, 0}};
  p.step_energy = {5.0, 7.0};
  EXPECT_DOUBLE_EQ(p.state_at(5.0).x_l, 5.0);
  EXPECT_DOUBLE_EQ(p.state_at(-1.0).x_l, 0.0);
  EXPECT_DOUBLE_EQ(p.state_at(99.0).x_l, 20.0);
  EXPECT_DOUBLE_EQ(p.input_at(12.0).X_a, 2.0);
  EXPECT_DOUBLE_EQ(p.input_at(25.0).X_a, 2.0);
  EXPECT_DOUBLE_EQ(p.energy_from(0.0), 12.0);
  EXPECT_DOUBLE_EQ(p.energy_from(10.0), 7.0);
}

TEST(Shrink, FixedStepDropsNodes) {
  const auto s = crossing_spec();
  const auto plan = ocp::solve_ocp(s);
  ASSERT_TRUE(plan.converged());
  const auto on_grid = ocp::shrink(s, 120.0, plan.state_at(120.0), plan, {}, ocp::ShrinkGrid::fixed_step);
  EXPECT_EQ(on_grid.spec.N_nodes, s.N_nodes / 2);
  EXPECT_DOUBLE_EQ(on_grid.spec.dt(), s.dt());
  const auto off_grid = ocp::shrink(s, 121.0, plan.state_at(121.0), plan, {}, ocp::ShrinkGrid::fixed_step);
  EXPECT_EQ(off_grid.spec.N_nodes, s.N_nodes / 2);
  EXPECT_LT(off_grid.spec.dt(), s.dt());
  EXPECT_EQ(off_grid.warm_start.size(), ocp::VariableLayout(off_grid.spec.N_nodes).dimension());
  const auto last = ocp::shrink(s, s.T_end - 0.5, plan.state_at(s.T_end - 0.5), plan, {}, ocp::ShrinkGrid::fixed_step);
  EXPECT_EQ(last.spec.N_nodes, 1);
}
