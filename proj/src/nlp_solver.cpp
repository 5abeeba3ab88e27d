#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/SparseLU>

#include "ferryplan/error.hpp"
#include "ferryplan/nlp.hpp"

namespace ferryplan::nlp {

namespace {

double inf_norm(const Vector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

double primal_residual(const Vector& ce, const Vector& ci) {
  return std::max(inf_norm(ce), ci.size() ? std::max(0.0, ci.maxCoeff()) : 0.0);
}

Eigen::MatrixXd fd_jacobian(const std::function<Vector(const Vector&)>& fn, const Vector& z, Eigen::Index rows) {
  Eigen::MatrixXd J(rows, z.size());
  Vector zp = z;
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(z(j)));
    zp(j) = z(j) + h;
    const Vector fp = fn(zp);
    zp(j) = z(j) - h;
    const Vector fm = fn(zp);
    zp(j) = z(j);
    J.col(j) = (fp - fm) / (2.0 * h);
  }
  return J;
}

SparseMatrix to_sparse(const Eigen::MatrixXd& m) { return m.sparseView(0.0, 0.0); }

struct Values {
  double f = 0.0;
  Vector ce;
  Vector ci;
  bool finite() const { return std::isfinite(f) && ce.allFinite() && ci.allFinite(); }
};

struct Derivatives {
  Vector g;
  SparseMatrix Je;
  SparseMatrix Ji;
};

Values eval_values(const NlpProblem& p, const Vector& z) { return {p.objective(z), p.equalities(z), p.inequalities(z)}; }

Derivatives eval_derivatives(const NlpProblem& p, const Vector& z) {
  return {p.objective_gradient(z), p.equality_jacobian(z), p.inequality_jacobian(z)};
}

SparseMatrix assemble_hessian(const std::vector<HessianBlock>& blocks, Eigen::Index n) {
  std::vector<Eigen::Triplet<double>> trips;
  for (const auto& b : blocks) {
    const auto k = static_cast<Eigen::Index>(b.indices.size());
    for (Eigen::Index r = 0; r < k; ++r)
      for (Eigen::Index c = 0; c < k; ++c)
        trips.emplace_back(b.indices[static_cast<std::size_t>(r)], b.indices[static_cast<std::size_t>(c)],
                           0.5 * (b.values(r, c) + b.values(c, r)));
  }
  SparseMatrix H(n, n);
  H.setFromTriplets(trips.begin(), trips.end());
  return H;
}

void damped_bfgs_update(Eigen::MatrixXd& B, const Vector& s, const Vector& y) {
  const Vector Bs = B * s;
  const double sBs = s.dot(Bs);
  if (!(sBs > 0.0)) return;
  double sy = s.dot(y);
  Vector r = y;
  if (sy < 0.2 * sBs) {
    const double theta = 0.8 * sBs / (sBs - sy);
    r = theta * y + (1.0 - theta) * Bs;
    sy = s.dot(r);
  }
  if (!(sy > 0.0)) return;
  B += r * r.transpose() / sy - Bs * Bs.transpose() / sBs;
}

Vector lagrangian_gradient(const Derivatives& d, const Vector& le, const Vector& li) {
  Vector out = d.g;
  if (le.size()) out += d.Je.transpose() * le;
  if (li.size()) out += d.Ji.transpose() * li;
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

FunctionProblem::FunctionProblem(Eigen::Index n, ScalarFn objective, VectorFn gradient)
    : n_(n), f_(std::move(objective)), grad_(std::move(gradient)) {}

FunctionProblem& FunctionProblem::equalities(Eigen::Index m, VectorFn c, MatrixFn jacobian) {
  m_eq_ = m;
  ce_ = std::move(c);
  je_ = std::move(jacobian);
  return *this;
}

FunctionProblem& FunctionProblem::inequalities(Eigen::Index m, VectorFn c, MatrixFn jacobian) {
  m_in_ = m;
  ci_ = std::move(c);
  ji_ = std::move(jacobian);
  return *this;
}

FunctionProblem& FunctionProblem::hessian(HessianFn h) {
  hess_ = std::move(h);
  return *this;
}

Vector FunctionProblem::objective_gradient(const Vector& z) const {
  if (grad_) return grad_(z);
  const auto wrapped = [this](const Vector& x) { return Vector::Constant(1, f_(x)); };
  return fd_jacobian(wrapped, z, 1).row(0).transpose();
}

Vector FunctionProblem::equalities(const Vector& z) const { return m_eq_ ? ce_(z) : Vector(); }

SparseMatrix FunctionProblem::equality_jacobian(const Vector& z) const {
  if (!m_eq_) return SparseMatrix(0, n_);
  return to_sparse(je_ ? je_(z) : fd_jacobian(ce_, z, m_eq_));
}

Vector FunctionProblem::inequalities(const Vector& z) const { return m_in_ ? ci_(z) : Vector(); }

SparseMatrix FunctionProblem::inequality_jacobian(const Vector& z) const {
  if (!m_in_) return SparseMatrix(0, n_);
  return to_sparse(ji_ ? ji_(z) : fd_jacobian(ci_, z, m_in_));
}

std::optional<std::vector<HessianBlock>> FunctionProblem::lagrangian_hessian(const Vector& z, double objective_factor,
                                                                             const Vector& lambda_eq,
                                                                             const Vector& lambda_ineq) const {
  if (!hess_) return std::nullopt;
  HessianBlock block;
  block.indices.resize(static_cast<std::size_t>(n_));
  for (Eigen::Index i = 0; i < n_; ++i) block.indices[static_cast<std::size_t>(i)] = i;
  block.values = hess_(z, objective_factor, lambda_eq, lambda_ineq);
  return std::vector<HessianBlock>{std::move(block)};
}

DerivativeSource FunctionProblem::derivative_source() const {
  const bool fd = !grad_ || (m_eq_ && !je_) || (m_in_ && !ji_);
  return fd ? DerivativeSource::finite_difference : DerivativeSource::analytic;
}

// ---------------------------------------------------------------------------

double KktResiduals::kkt() const { return std::max({stationarity, dual, complementarity}); }

const char* to_string(SolveStatus status) {
  switch (status) {
    case SolveStatus::converged:
      return "converged";
    case SolveStatus::max_iterations:
      return "max_iterations";
    case SolveStatus::infeasible_detected:
      return "infeasible_detected";
    case SolveStatus::numerical_failure:
      return "numerical_failure";
  }
  return "unknown";
}

KktResiduals kkt_residuals(const NlpProblem& problem, const Vector& z, const Vector& lambda_eq,
                           const Vector& lambda_ineq) {
  if (z.size() != problem.num_variables() || lambda_eq.size() != problem.num_equalities() ||
      lambda_ineq.size() != problem.num_inequalities())
    throw DimensionError("kkt_residuals: dimension mismatch");
  const Values v = eval_values(problem, z);
  const Derivatives d = eval_derivatives(problem, z);
  KktResiduals r;
  r.stationarity = inf_norm(lagrangian_gradient(d, lambda_eq, lambda_ineq));
  r.primal = primal_residual(v.ce, v.ci);
  r.dual = lambda_ineq.size() ? std::max(0.0, (-lambda_ineq).maxCoeff()) : 0.0;
  r.complementarity = lambda_ineq.size() ? inf_norm(lambda_ineq.cwiseProduct(v.ci)) : 0.0;
  return r;
}

double DerivativeCheck::max() const {
  return std::max({gradient_error, equality_jacobian_error, inequality_jacobian_error});
}

DerivativeCheck check_derivatives(const NlpProblem& problem, const Vector& z, double step) {
  const auto rel = [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& fd) {
    if (a.size() == 0) return 0.0;
    return (a - fd).norm() / std::max(fd.norm(), 1e-8);
  };
  const auto fd = [&](const std::function<Vector(const Vector&)>& fn, Eigen::Index rows) {
    Eigen::MatrixXd J(rows, z.size());
    Vector zp = z;
    for (Eigen::Index j = 0; j < z.size(); ++j) {
      const double h = step * std::max(1.0, std::abs(z(j)));
      zp(j) = z(j) + h;
      const Vector fp = fn(zp);
      zp(j) = z(j) - h;
      const Vector fm = fn(zp);
      zp(j) = z(j);
      J.col(j) = (fp - fm) / (2.0 * h);
    }
    return J;
  };
  DerivativeCheck out;
  const Eigen::MatrixXd g_fd =
      fd([&](const Vector& x) { return Vector::Constant(1, problem.objective(x)); }, 1).row(0).transpose();
  out.gradient_error = rel(problem.objective_gradient(z), g_fd);
  if (problem.num_equalities())
    out.equality_jacobian_error = rel(Eigen::MatrixXd(problem.equality_jacobian(z)),
                                      fd([&](const Vector& x) { return problem.equalities(x); }, problem.num_equalities()));
  if (problem.num_inequalities())
    out.inequality_jacobian_error =
        rel(Eigen::MatrixXd(problem.inequality_jacobian(z)),
            fd([&](const Vector& x) { return problem.inequalities(x); }, problem.num_inequalities()));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Condensed Newton system of the barrier problem
//   [W + Ji' Sigma Ji + dw I   Je'  ] [dz]   [-r_z - Ji' Sigma r_I]
//   [Je                        -dc I] [dl] = [-c_E               ]
// with Sigma = y ./ s and r_I = c_I + mu ./ y.
class NewtonSystem {
 public:
  NewtonSystem(const SparseMatrix& W, const Derivatives& der, const Vector& sigma)
      : der_(der), n_(W.rows()), mE_(der.Je.rows()) {
    top_ = W;
    if (sigma.size()) top_ += SparseMatrix(der.Ji.transpose() * sigma.asDiagonal() * der.Ji);
  }

  bool factorize(double dw, double dc) {
    const Eigen::Index N = n_ + mE_;
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(static_cast<std::size_t>(top_.nonZeros() + 2 * der_.Je.nonZeros() + N));
    for (Eigen::Index k = 0; k < top_.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(top_, k); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
    for (Eigen::Index k = 0; k < der_.Je.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(der_.Je, k); it; ++it) {
        t.emplace_back(n_ + it.row(), it.col(), it.value());
        t.emplace_back(it.col(), n_ + it.row(), it.value());
      }
    for (Eigen::Index i = 0; i < n_; ++i) t.emplace_back(i, i, dw);
    for (Eigen::Index i = 0; i < mE_; ++i) t.emplace_back(n_ + i, n_ + i, -dc);
    K_.resize(N, N);
    K_.setFromTriplets(t.begin(), t.end());
    K_.makeCompressed();
    dw_ = dw;
    lu_.compute(K_);
    return lu_.info() == Eigen::Success;
  }

  bool solve(const Vector& r1, const Vector& r2, Vector& dz, Vector& dl) const {
    Vector rhs(n_ + mE_);
    rhs << r1, r2;
    Vector sol = lu_.solve(rhs);
    for (int refine = 0; refine < 3 && sol.allFinite(); ++refine) {
      const Vector r = rhs - K_ * sol;
      if (inf_norm(r) <= 1e-14 * (1.0 + inf_norm(rhs))) break;
      sol += lu_.solve(r);
    }
    if (!sol.allFinite()) return false;
    dz = sol.head(n_);
    dl = sol.tail(mE_);
    return true;
  }

  // d' (W + Ji' Sigma Ji + dw I) d
  double curvature(const Vector& d) const { return d.dot(top_ * d) + dw_ * d.squaredNorm(); }

 private:
  const Derivatives& der_;
  Eigen::Index n_;
  Eigen::Index mE_;
  SparseMatrix top_;
  SparseMatrix K_;
  double dw_ = 0.0;
  Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu_;
};

struct Direction {
  Vector dz;
  Vector dl;
  Vector ds;
  Vector dy;
};

double max_step(const Vector& v, const Vector& dv, double tau) {
  double alpha = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv(i) < 0.0) alpha = std::min(alpha, -tau * v(i) / dv(i));
  return alpha;
}

double barrier_merit(const Values& v, const Vector& s, double mu, double penalty) {
  double phi = v.f + penalty * (v.ce.cwiseAbs().sum() + (v.ci + s).cwiseAbs().sum());
  for (Eigen::Index i = 0; i < s.size(); ++i) phi -= mu * std::log(s(i));
  return phi;
}

}  // namespace

NlpSolution solve(const NlpProblem& problem, const Vector& init, const SolverConfig& config) {
  const Eigen::Index n = problem.num_variables();
  const Eigen::Index mE = problem.num_equalities();
  const Eigen::Index mI = problem.num_inequalities();
  if (init.size() != n)
    throw DimensionError("initial point has " + std::to_string(init.size()) + " entries, problem has " +
                         std::to_string(n) + " variables");

  Vector z = init;
  Values val = eval_values(problem, z);
  if (val.ce.size() != mE || val.ci.size() != mI) throw DimensionError("constraint functions return wrong sizes");
  if (!val.finite()) throw Error("objective or constraints are not finite at the initial point");
  Derivatives der = eval_derivatives(problem, z);

  const double mu_min = 0.1 * std::min(config.kkt_tolerance, config.constraint_tolerance);
  double mu = std::max(config.barrier_initial, mu_min);
  Vector s = (-val.ci).cwiseMax(1e-2);
  Vector lambda_eq = Vector::Zero(mE);
  Vector y = (mu * s.cwiseInverse());
  double penalty = config.penalty_initial;
  double dw_last = 0.0;
  bool merit_changed = true;

  const bool quasi_newton = !problem.lagrangian_hessian(z, 1.0, lambda_eq, y).has_value();
  Eigen::MatrixXd bfgs = Eigen::MatrixXd::Identity(n, n);

  NlpSolution out;

  const auto finish = [&](SolveStatus status, std::string message) {
    const KktResiduals r = kkt_residuals(problem, z, lambda_eq, y);
    out.z = z;
    out.lambda_eq = lambda_eq;
    out.lambda_ineq = y;
    out.status = status;
    out.objective = val.f;
    out.kkt_residual = r.kkt();
    out.constraint_violation = r.primal;
    out.complementarity = r.complementarity;
    out.message = std::move(message);
    return out;
  };

  const auto converged = [&](const KktResiduals& r) {
    return r.kkt() <= config.kkt_tolerance && r.primal <= config.constraint_tolerance;
  };

  // Optimality error of the barrier problem; duals scaled as in common IPM practice.
  const auto barrier_error = [&](double mu_now) {
    const double ysum = lambda_eq.cwiseAbs().sum() + y.cwiseAbs().sum();
    const double sd = std::max(100.0, ysum / std::max<double>(1.0, static_cast<double>(mE + mI))) / 100.0;
    const double stat = inf_norm(lagrangian_gradient(der, lambda_eq, y)) / sd;
    const double prim = std::max(inf_norm(val.ce), inf_norm(val.ci + s));
    const double comp = mI ? inf_norm(s.cwiseProduct(y) - Vector::Constant(mI, mu_now)) / sd : 0.0;
    return std::max({stat, prim, comp});
  };

  for (int iter = 0; iter < config.max_iterations; ++iter) {
    out.iterations = iter;
    const KktResiduals res = kkt_residuals(problem, z, lambda_eq, y);
    if (converged(res)) return finish(SolveStatus::converged, "KKT conditions satisfied");

    while (mu > mu_min && barrier_error(mu) <= 10.0 * mu) {
      mu = std::max(mu_min, std::min(config.barrier_decrease * mu, std::pow(mu, 1.5)));
      merit_changed = true;
    }

    IterationRecord rec;
    rec.iteration = iter;
    rec.objective = val.f;
    rec.constraint_violation = res.primal;
    rec.kkt_residual = res.kkt();
    rec.barrier = mu;

    SparseMatrix W;
    if (quasi_newton) {
      W = bfgs.sparseView();
    } else {
      W = assemble_hessian(*problem.lagrangian_hessian(z, 1.0, lambda_eq, y), n);
    }

    const Vector sigma = y.cwiseQuotient(s);
    NewtonSystem kkt(W, der, sigma);
    const Vector r_z = lagrangian_gradient(der, lambda_eq, y);

    const auto direction = [&](const Vector& ce, const Vector& ci, Direction& d) {
      const Vector r_I = ci + mu * y.cwiseInverse();
      Vector rhs1 = -r_z;
      if (mI) rhs1 -= der.Ji.transpose() * sigma.cwiseProduct(r_I);
      if (!kkt.solve(rhs1, -ce, d.dz, d.dl)) return false;
      d.ds = -(ci + s) - der.Ji * d.dz;
      d.dy = mu * s.cwiseInverse() - y - sigma.cwiseProduct(d.ds);
      return true;
    };

    // Regularize until the step sees positive curvature.
    Direction dir;
    double dw = 0.0;
    double dc = 0.0;
    for (;;) {
      const bool ok = kkt.factorize(dw, dc) && direction(val.ce, val.ci, dir);
      if (ok && kkt.curvature(dir.dz) >= config.curvature_floor * dir.dz.squaredNorm()) break;
      ++rec.inertia_corrections;
      if (!ok && dc == 0.0 && mE > 0) {
        dc = 1e-8 * std::pow(mu, 0.25);
        continue;
      }
      if (dw == 0.0)
        dw = dw_last == 0.0 ? config.regularization_initial : std::max(1e-20, dw_last / 3.0);
      else
        dw *= dw_last == 0.0 ? 100.0 : 8.0;
      if (dw > config.regularization_max) {
        out.trace.push_back(rec);
        return finish(SolveStatus::numerical_failure, "Hessian regularization exceeded its limit");
      }
    }
    if (dw > 0.0) dw_last = dw;
    rec.regularization = dw;

    // Penalty large enough for the step to descend on the merit function.
    const double theta = val.ce.cwiseAbs().sum() + (val.ci + s).cwiseAbs().sum();
    double barrier_slope = der.g.dot(dir.dz);
    for (Eigen::Index i = 0; i < mI; ++i) barrier_slope -= mu * dir.ds(i) / s(i);
    if (theta > 0.0) {
      const double curv = std::max(0.0, kkt.curvature(dir.dz));
      const double required = (barrier_slope + 0.5 * curv) / (0.9 * theta);
      if (required > penalty) {
        penalty = std::max(2.0 * penalty, 1.5 * required);
        merit_changed = true;
        if (penalty > config.penalty_max && res.primal > config.constraint_tolerance) {
          out.trace.push_back(rec);
          return finish(SolveStatus::infeasible_detected, "merit penalty exceeded its limit; constraints appear infeasible");
        }
      }
    }
    rec.penalty = penalty;
    rec.merit_reset = merit_changed;
    merit_changed = false;

    const double slope = barrier_slope - penalty * theta;
    const double phi0 = barrier_merit(val, s, mu, penalty);
    rec.merit_before = phi0;
    const double tau = std::max(config.fraction_to_boundary, 1.0 - mu);
    const double alpha_max = max_step(s, dir.ds, tau);
    const double alpha_dual = max_step(y, dir.dy, tau);

    const auto acceptable = [&](const Values& v, const Vector& s_new, double alpha) {
      if (!v.finite()) return false;
      if (slope >= 0.0) return barrier_merit(v, s_new, mu, penalty) <= phi0 + 1e-14 * (1.0 + std::abs(phi0));
      return barrier_merit(v, s_new, mu, penalty) <= phi0 + config.armijo * alpha * slope;
    };

    double alpha = alpha_max;
    Vector z_new = z + alpha * dir.dz;
    Vector s_new = s + alpha * dir.ds;
    Values val_new = eval_values(problem, z_new);
    bool accepted = acceptable(val_new, s_new, alpha);
    Direction used = dir;
    if (!accepted && config.second_order_correction && alpha_max == 1.0 && val_new.finite()) {
      Direction soc;
      if (direction(val_new.ce - der.Je * dir.dz, val_new.ci - der.Ji * dir.dz, soc) &&
          max_step(s, soc.ds, tau) == 1.0) {
        const Vector z_soc = z + soc.dz;
        const Vector s_soc = s + soc.ds;
        const Values v_soc = eval_values(problem, z_soc);
        if (acceptable(v_soc, s_soc, 1.0)) {
          accepted = true;
          z_new = z_soc;
          s_new = s_soc;
          val_new = v_soc;
          used.dz = soc.dz;
          used.ds = soc.ds;
          rec.second_order_correction = true;
        }
      }
    }
    while (!accepted) {
      alpha *= config.backtrack;
      if (alpha < config.min_step) break;
      z_new = z + alpha * dir.dz;
      s_new = s + alpha * dir.ds;
      val_new = eval_values(problem, z_new);
      accepted = acceptable(val_new, s_new, alpha);
    }
    if (!accepted) {
      out.trace.push_back(rec);
      // A direction that cannot reduce the violation although the Jacobian
      // gradient of the violation vanishes signals a locally infeasible problem.
      Vector infeas_grad = Vector::Zero(n);
      if (mE) infeas_grad += der.Je.transpose() * val.ce;
      if (mI) infeas_grad += der.Ji.transpose() * val.ci.cwiseMax(0.0);
      if (res.primal > config.constraint_tolerance &&
          inf_norm(infeas_grad) <= 1e-6 * std::max(1.0, primal_residual(val.ce, val.ci)))
        return finish(SolveStatus::infeasible_detected, "no descent on the constraint violation");
      return finish(SolveStatus::numerical_failure, "line search failed");
    }
    rec.step_size = alpha;
    rec.merit_after = barrier_merit(val_new, s_new, mu, penalty);

    const double ad = std::min(alpha_dual, 1.0);
    Vector le_new = lambda_eq + alpha * dir.dl;
    Vector y_new = y + ad * dir.dy;
    // Keep the duals within a bounded distance of the central path.
    for (Eigen::Index i = 0; i < mI; ++i) {
      const double c = mu / s_new(i);
      y_new(i) = std::clamp(y_new(i), c / 1e10, c * 1e10);
    }

    const Derivatives der_new = eval_derivatives(problem, z_new);
    if (quasi_newton) {
      const Vector step = z_new - z;
      const Vector grad_change =
          lagrangian_gradient(der_new, le_new, y_new) - lagrangian_gradient(der, le_new, y_new);
      damped_bfgs_update(bfgs, step, grad_change);
    }

    z = z_new;
    s = s_new;
    val = val_new;
    der = der_new;
    lambda_eq = le_new;
    y = y_new;

    out.trace.push_back(rec);
    if (config.on_iteration) config.on_iteration(rec);
  }
  out.iterations = config.max_iterations;
  const KktResiduals res = kkt_residuals(problem, z, lambda_eq, y);
  if (converged(res)) return finish(SolveStatus::converged, "KKT conditions satisfied");
  return finish(SolveStatus::max_iterations, "iteration limit reached");
}

}  // namespace ferryplan::nlp
