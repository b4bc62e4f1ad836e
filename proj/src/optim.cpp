#include "mdprod/optim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "mdprod/errors.hpp"

namespace mdprod {

namespace {

VectorXd clamp_to_box(VectorXd x, const std::optional<VectorXd>& lo, const std::optional<VectorXd>& hi) {
  if (lo) x = x.cwiseMax(*lo);
  if (hi) x = x.cwiseMin(*hi);
  return x;
}

// Gradient components that would push the iterate out of the box are zeroed.
VectorXd projected_gradient(const VectorXd& grad, const VectorXd& x, const std::optional<VectorXd>& lo,
                            const std::optional<VectorXd>& hi) {
  VectorXd pg = grad;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if (lo && x[j] <= (*lo)[j] && grad[j] > 0.0) pg[j] = 0.0;
    if (hi && x[j] >= (*hi)[j] && grad[j] < 0.0) pg[j] = 0.0;
  }
  return pg;
}

bool all_finite(const VectorXd& v) { return v.allFinite(); }

OptimResult levenberg_marquardt(const VectorFunction& residual, const MatrixFunction& jacobian,
                                const VectorXd& initial, const std::optional<VectorXd>& lower,
                                const std::optional<VectorXd>& upper, const OptimOptions& options) {
  OptimResult out;
  VectorXd x = clamp_to_box(initial, lower, upper);
  VectorXd r = residual(x);
  if (!all_finite(r)) throw EstimationError("residual is not finite at the initial point");
  double f = r.squaredNorm();
  const double f0 = f;
  out.objective_trace.push_back(f);
  // Scale-free stopping: the gradient is measured against the objective, and
  // an objective that has fallen by twenty orders of magnitude, or below
  // zero_objective, counts as zero.
  auto small_enough = [&](double fval, double g) {
    return !(fval > 1e-20 * f0) || fval <= options.zero_objective ||
           g <= options.gradient_tol * std::max(fval, 1e-12 * f0);
  };
  MatrixXd jac = jacobian ? jacobian(x) : finite_diff_jacobian(residual, x);
  if (jac.rows() != r.size() || jac.cols() != x.size()) {
    throw std::invalid_argument("jacobian has the wrong shape");
  }

  double mu = -1.0;
  double nu = 2.0;
  VectorXd diag_scale = VectorXd::Zero(x.size());
  bool stalled = false;
  int iter = 0;
  double grad_norm = 0.0;
  for (;;) {
    const VectorXd half_grad = jac.transpose() * r;
    grad_norm = 2.0 * projected_gradient(half_grad, x, lower, upper).lpNorm<Eigen::Infinity>();
    if (small_enough(f, grad_norm)) break;
    if (iter >= options.max_iterations || stalled) break;
    ++iter;

    const MatrixXd normal = jac.transpose() * jac;
    diag_scale = diag_scale.cwiseMax(normal.diagonal());
    const double dmax = std::max(diag_scale.maxCoeff(), std::numeric_limits<double>::min());
    const VectorXd d = diag_scale.cwiseMax(1e-12 * dmax);
    if (mu < 0.0) mu = 1e-3;

    bool accepted = false;
    while (!accepted) {
      MatrixXd lhs = normal;
      lhs.diagonal() += mu * d;
      const VectorXd step = lhs.ldlt().solve(-half_grad);
      const VectorXd x_new = clamp_to_box(x + step, lower, upper);
      const VectorXd taken = x_new - x;
      if (taken.norm() <= options.step_tol * (x.norm() + options.step_tol)) {
        stalled = true;
        break;
      }
      const VectorXd r_new = residual(x_new);
      const double f_new = all_finite(r_new) ? r_new.squaredNorm() : std::numeric_limits<double>::infinity();
      const double predicted = f - (r + jac * taken).squaredNorm();
      const double gain = predicted > 0.0 ? (f - f_new) / predicted : -1.0;
      if (f_new < f && gain > 0.0) {
        x = x_new;
        r = r_new;
        f = f_new;
        jac = jacobian ? jacobian(x) : finite_diff_jacobian(residual, x);
        out.objective_trace.push_back(f);
        mu *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * gain - 1.0, 3));
        nu = 2.0;
        accepted = true;
      } else {
        mu *= nu;
        nu *= 2.0;
        if (mu > 1e32) {
          stalled = true;
          break;
        }
      }
    }
  }
  bool converged = small_enough(f, grad_norm);
  if (!converged && stalled) {
    // A stall is accepted when even the full Gauss-Newton step cannot lower
    // f by more than rounding noise.
    const VectorXd g = projected_gradient(jac.transpose() * r, x, lower, upper);
    MatrixXd normal = jac.transpose() * jac;
    normal.diagonal() += 1e-12 * std::max(normal.diagonal().maxCoeff(), std::numeric_limits<double>::min()) *
                         VectorXd::Ones(x.size());
    const double predicted = g.dot(normal.ldlt().solve(g));
    converged = predicted <= 1e3 * std::numeric_limits<double>::epsilon() * f;
  }

  // Gauss-Newton polish by QR on the free coordinates: the normal equations
  // only pin flat directions to about sqrt(eps).
  for (int k = 0; k < 3 && f > 0.0; ++k) {
    const VectorXd g = jac.transpose() * r;
    std::vector<Eigen::Index> free;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      const bool at_lo = lower && x[j] <= (*lower)[j] && g[j] > 0.0;
      const bool at_hi = upper && x[j] >= (*upper)[j] && g[j] < 0.0;
      if (!at_lo && !at_hi) free.push_back(j);
    }
    if (free.empty()) break;
    MatrixXd jf(jac.rows(), static_cast<Eigen::Index>(free.size()));
    for (std::size_t j = 0; j < free.size(); ++j) jf.col(static_cast<Eigen::Index>(j)) = jac.col(free[j]);
    const VectorXd df = jf.colPivHouseholderQr().solve(-r);
    if (!df.allFinite()) break;
    VectorXd x_new = x;
    for (std::size_t j = 0; j < free.size(); ++j) x_new[free[j]] += df[static_cast<Eigen::Index>(j)];
    x_new = clamp_to_box(x_new, lower, upper);
    if ((x_new - x).norm() <= std::numeric_limits<double>::epsilon() * (x.norm() + 1e-300)) break;
    const VectorXd r_new = residual(x_new);
    if (!all_finite(r_new)) break;
    const double f_new = r_new.squaredNorm();
    if (!(f_new <= f * (1.0 + 1e3 * std::numeric_limits<double>::epsilon()))) break;
    x = x_new;
    r = r_new;
    f = f_new;
    jac = jacobian ? jacobian(x) : finite_diff_jacobian(residual, x);
    grad_norm = 2.0 * projected_gradient(jac.transpose() * r, x, lower, upper).lpNorm<Eigen::Infinity>();
  }

  out.point = x;
  out.objective = f;
  out.gradient_norm = grad_norm;
  out.iterations = iter;
  out.converged = converged || small_enough(f, grad_norm);
  return out;
}

}  // namespace

OptimResult minimize_nls(const NlsProblem& problem, const OptimOptions& options) {
  if (!problem.residual) throw std::invalid_argument("NlsProblem without residual");
  return levenberg_marquardt(problem.residual, problem.jacobian, problem.initial, problem.lower,
                             problem.upper, options);
}

OptimResult minimize_nls_multistart(NlsProblem problem, const std::vector<VectorXd>& starts,
                                    const OptimOptions& options) {
  if (starts.empty()) throw std::invalid_argument("no starting points");
  std::optional<OptimResult> best;
  for (const auto& s : starts) {
    problem.initial = s;
    OptimResult res;
    try {
      res = minimize_nls(problem, options);
    } catch (const EstimationError&) {
      continue;
    }
    if (!best || res.objective < best->objective) best = std::move(res);
  }
  if (!best) throw EstimationError("all starting points failed");
  return *best;
}

VectorXd gmm_moments(const GmmProblem& problem, const VectorXd& theta) {
  const auto n = static_cast<double>(problem.instruments.rows());
  return problem.instruments.transpose() * problem.residual(theta) / n;
}

MatrixXd first_stage_weight(const MatrixXd& instruments, Weighting weighting) {
  const auto q = instruments.cols();
  if (weighting == Weighting::Identity) return MatrixXd::Identity(q, q);
  const MatrixXd gram = instruments.transpose() * instruments / static_cast<double>(instruments.rows());
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(gram);
  const double top = eig.eigenvalues().maxCoeff();
  if (!(top > 0.0) || eig.eigenvalues().minCoeff() <= 1e-12 * top) {
    throw EstimationError("instrument Gram matrix is singular");
  }
  return eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
}

MatrixXd efficient_weight(const MatrixXd& instruments, const VectorXd& residual) {
  const auto q = instruments.cols();
  const MatrixXd scaled = instruments.array().colwise() * residual.array();
  MatrixXd s = scaled.transpose() * scaled / static_cast<double>(instruments.rows());
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(s);
  double top = eig.eigenvalues().maxCoeff();
  if (!(top > 0.0)) throw EstimationError("moment covariance is zero; efficient weight undefined");
  if (eig.eigenvalues().minCoeff() <= 1e-10 * top) {
    s += 1e-8 * s.trace() / static_cast<double>(q) * MatrixXd::Identity(q, q);
    eig.compute(s);
    top = eig.eigenvalues().maxCoeff();
    if (eig.eigenvalues().minCoeff() <= 1e-14 * top) {
      throw EstimationError("moment covariance singular beyond ridge tolerance");
    }
  }
  return eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
}

OptimResult minimize_gmm(const GmmProblem& problem, const MatrixXd& weight, const OptimOptions& options) {
  if (!problem.residual) throw std::invalid_argument("GmmProblem without residual");
  if (problem.instruments.cols() < problem.initial.size()) {
    throw std::invalid_argument("fewer moments than parameters");
  }
  Eigen::LLT<MatrixXd> llt(weight);
  if (llt.info() != Eigen::Success) throw EstimationError("weighting matrix is not positive definite");
  const MatrixXd root_t = llt.matrixL().transpose();  // W = L L'
  const double n = static_cast<double>(problem.instruments.rows());
  const MatrixXd proj = root_t * problem.instruments.transpose() / n;  // q x N
  VectorFunction whitened = [&](const VectorXd& th) -> VectorXd { return proj * problem.residual(th); };
  MatrixFunction whitened_jac;
  if (problem.jacobian) {
    whitened_jac = [&](const VectorXd& th) -> MatrixXd { return proj * problem.jacobian(th); };
  }
  return levenberg_marquardt(whitened, whitened_jac, problem.initial, problem.lower, problem.upper, options);
}

OptimResult minimize_gmm(const GmmProblem& problem, Weighting weighting, const OptimOptions& options) {
  if (weighting != Weighting::TwoStepEfficient) {
    return minimize_gmm(problem, first_stage_weight(problem.instruments, weighting), options);
  }
  const OptimResult first =
      minimize_gmm(problem, first_stage_weight(problem.instruments, Weighting::InverseInstrumentGram), options);
  const MatrixXd w = efficient_weight(problem.instruments, problem.residual(first.point));
  GmmProblem second = problem;
  second.initial = first.point;
  return minimize_gmm(second, w, options);
}

MatrixXd finite_diff_jacobian(const VectorFunction& f, const VectorXd& point, double step) {
  const VectorXd f0 = f(point);
  MatrixXd jac(f0.size(), point.size());
  for (Eigen::Index j = 0; j < point.size(); ++j) {
    const double h = step * std::max(1.0, std::abs(point[j]));
    VectorXd up = point, down = point;
    up[j] += h;
    down[j] -= h;
    jac.col(j) = (f(up) - f(down)) / (up[j] - down[j]);
  }
  return jac;
}

double check_gradient(const MatrixXd& analytic, const MatrixXd& numeric) {
  if (analytic.rows() != numeric.rows() || analytic.cols() != numeric.cols()) {
    throw std::invalid_argument("check_gradient: shape mismatch");
  }
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.rows(); ++i) {
    for (Eigen::Index j = 0; j < analytic.cols(); ++j) {
      const double a = analytic(i, j), n = numeric(i, j);
      worst = std::max(worst, std::abs(a - n) / std::max({1.0, std::abs(a), std::abs(n)}));
    }
  }
  return worst;
}

}  // namespace mdprod
