#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace ferryplan::nlp {

using Vector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

/// Dense block of the Lagrangian Hessian on a subset of the variables. Blocks
/// may overlap; overlapping contributions add up.
struct HessianBlock {
  std::vector<Eigen::Index> indices;
  Eigen::MatrixXd values;
};

enum class DerivativeSource { analytic, finite_difference };

/// minimize f(z)  subject to  c_E(z) = 0,  c_I(z) <= 0.
///
/// Multiplier convention used throughout: the Lagrangian is
///   L = f + lambda_E' c_E + lambda_I' c_I,  lambda_I >= 0,
/// so a KKT point has grad f + J_E' lambda_E + J_I' lambda_I = 0.
class NlpProblem {
 public:
  virtual ~NlpProblem() = default;

  virtual Eigen::Index num_variables() const = 0;
  virtual Eigen::Index num_equalities() const = 0;
  virtual Eigen::Index num_inequalities() const = 0;

  virtual double objective(const Vector& z) const = 0;
  virtual Vector objective_gradient(const Vector& z) const = 0;
  virtual Vector equalities(const Vector& z) const = 0;
  virtual SparseMatrix equality_jacobian(const Vector& z) const = 0;
  virtual Vector inequalities(const Vector& z) const = 0;
  virtual SparseMatrix inequality_jacobian(const Vector& z) const = 0;

  /// Hessian of objective_factor * f + lambda_E' c_E + lambda_I' c_I. Problems
  /// without second-order information return nullopt and get a quasi-Newton
  /// approximation instead.
  virtual std::optional<std::vector<HessianBlock>> lagrangian_hessian(const Vector& /*z*/, double /*objective_factor*/,
                                                                      const Vector& /*lambda_eq*/,
                                                                      const Vector& /*lambda_ineq*/) const {
    return std::nullopt;
  }

  virtual DerivativeSource derivative_source() const { return DerivativeSource::analytic; }
};

/// Problem assembled from callables; missing derivatives fall back to central
/// differences.
class FunctionProblem : public NlpProblem {
 public:
  using ScalarFn = std::function<double(const Vector&)>;
  using VectorFn = std::function<Vector(const Vector&)>;
  using MatrixFn = std::function<Eigen::MatrixXd(const Vector&)>;
  using HessianFn = std::function<Eigen::MatrixXd(const Vector&, double, const Vector&, const Vector&)>;

  FunctionProblem(Eigen::Index n, ScalarFn objective, VectorFn gradient = {});

  FunctionProblem& equalities(Eigen::Index m, VectorFn c, MatrixFn jacobian = {});
  FunctionProblem& inequalities(Eigen::Index m, VectorFn c, MatrixFn jacobian = {});
  FunctionProblem& hessian(HessianFn h);

  Eigen::Index num_variables() const override { return n_; }
  Eigen::Index num_equalities() const override { return m_eq_; }
  Eigen::Index num_inequalities() const override { return m_in_; }
  double objective(const Vector& z) const override { return f_(z); }
  Vector objective_gradient(const Vector& z) const override;
  Vector equalities(const Vector& z) const override;
  SparseMatrix equality_jacobian(const Vector& z) const override;
  Vector inequalities(const Vector& z) const override;
  SparseMatrix inequality_jacobian(const Vector& z) const override;
  std::optional<std::vector<HessianBlock>> lagrangian_hessian(const Vector& z, double objective_factor,
                                                              const Vector& lambda_eq,
                                                              const Vector& lambda_ineq) const override;
  DerivativeSource derivative_source() const override;

 private:
  Eigen::Index n_;
  ScalarFn f_;
  VectorFn grad_;
  Eigen::Index m_eq_ = 0;
  VectorFn ce_;
  MatrixFn je_;
  Eigen::Index m_in_ = 0;
  VectorFn ci_;
  MatrixFn ji_;
  HessianFn hess_;
};

struct KktResiduals {
  double stationarity = 0.0;     ///< |grad f + J_E' lambda_E + J_I' lambda_I|_inf
  double primal = 0.0;           ///< max(|c_E|_inf, max(c_I, 0))
  double dual = 0.0;             ///< max(-lambda_I, 0)
  double complementarity = 0.0;  ///< max |lambda_I,i c_I,i|

  /// The dual part of the optimality conditions.
  double kkt() const;
};

KktResiduals kkt_residuals(const NlpProblem& problem, const Vector& z, const Vector& lambda_eq,
                           const Vector& lambda_ineq);

struct IterationRecord {
  int iteration = 0;
  double objective = 0.0;
  double constraint_violation = 0.0;  ///< primal residual before the step
  double kkt_residual = 0.0;
  double barrier = 0.0;               ///< barrier parameter mu used for the step
  double step_size = 0.0;
  double merit_before = 0.0;  ///< merit at the iterate, current mu and penalty
  double merit_after = 0.0;   ///< merit at the accepted point, same mu and penalty
  double penalty = 0.0;
  /// mu or the penalty changed before this step, so the merit function is a
  /// new one and the merit sequence restarts here.
  bool merit_reset = false;
  bool second_order_correction = false;
  int inertia_corrections = 0;  ///< refactorizations until the curvature test passed
  double regularization = 0.0;  ///< delta in W + delta I
};

struct SolverConfig {
  double kkt_tolerance = 1e-6;
  double constraint_tolerance = 1e-6;
  int max_iterations = 500;
  /// First diagonal shift tried when the Hessian lacks positive curvature.
  double regularization_initial = 1e-4;
  double regularization_max = 1e12;
  /// Required curvature d'Wd >= curvature_floor * |d|^2 of the regularized step.
  double curvature_floor = 1e-10;
  double armijo = 1e-4;
  double backtrack = 0.5;
  double min_step = 1e-12;
  double barrier_initial = 0.1;
  double barrier_decrease = 0.2;
  double fraction_to_boundary = 0.99;
  double penalty_initial = 1.0;
  double penalty_max = 1e10;
  bool second_order_correction = true;
  std::function<void(const IterationRecord&)> on_iteration;
};

enum class SolveStatus { converged, max_iterations, infeasible_detected, numerical_failure };

const char* to_string(SolveStatus status);

struct NlpSolution {
  Vector z;
  Vector lambda_eq;
  Vector lambda_ineq;
  SolveStatus status = SolveStatus::numerical_failure;
  double objective = 0.0;
  double kkt_residual = 0.0;
  double constraint_violation = 0.0;
  double complementarity = 0.0;
  int iterations = 0;
  std::string message;
  std::vector<IterationRecord> trace;
};

/// Primal-dual interior-point method. Inequalities get slacks, c_I + s = 0 with
/// s > 0; the Newton system is condensed onto (z, lambda_E) and factored by
/// sparse LU. Hessian regularization follows a curvature test on the computed
/// step, globalization an l1 merit line search on the barrier problem with
/// second-order corrections.
/// Throws DimensionError on a size mismatch and Error when the initial point
/// yields non-finite values.
NlpSolution solve(const NlpProblem& problem, const Vector& init, const SolverConfig& config = {});

struct DerivativeCheck {
  double gradient_error = 0.0;  ///< relative, Frobenius
  double equality_jacobian_error = 0.0;
  double inequality_jacobian_error = 0.0;
  double max() const;
};

/// Compares the problem's derivatives against central differences at z.
DerivativeCheck check_derivatives(const NlpProblem& problem, const Vector& z, double step = 1e-6);

}  // namespace ferryplan::nlp
