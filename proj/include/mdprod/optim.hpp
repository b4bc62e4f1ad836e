#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <vector>

namespace mdprod {

using Eigen::MatrixXd;
using Eigen::VectorXd;

using VectorFunction = std::function<VectorXd(const VectorXd&)>;
using MatrixFunction = std::function<MatrixXd(const VectorXd&)>;

struct OptimOptions {
  double gradient_tol = 1e-8;  ///< gradient infinity norm relative to the objective value
  double step_tol = 1e-12;     ///< relative step length
  int max_iterations = 500;
  double zero_objective = 1e-20;  ///< an objective at or below this counts as an exact fit
};

/// Minimize sum of squared residuals r(theta), optionally inside a box.
struct NlsProblem {
  VectorFunction residual;
  MatrixFunction jacobian;  ///< optional; central differences when empty
  VectorXd initial;
  std::optional<VectorXd> lower;
  std::optional<VectorXd> upper;
};

struct OptimResult {
  VectorXd point;
  double objective = 0.0;
  double gradient_norm = 0.0;
  bool converged = false;
  int iterations = 0;
  /// Objective after every accepted iteration (first entry is the start).
  std::vector<double> objective_trace;
};

/// Levenberg-Marquardt with Marquardt diagonal scaling. The objective reported
/// is ||r||^2 and the gradient is 2 J'r (projected onto the box).
OptimResult minimize_nls(const NlsProblem& problem, const OptimOptions& options = {});

/// GMM problem with moments g(theta) = (1/N) sum_i Q_i eps_i(theta).
struct GmmProblem {
  MatrixXd instruments;      ///< N x q
  VectorFunction residual;   ///< eps(theta), length N
  MatrixFunction jacobian;   ///< d eps / d theta', N x p; optional
  VectorXd initial;
  std::optional<VectorXd> lower;
  std::optional<VectorXd> upper;
};

enum class Weighting { Identity, InverseInstrumentGram, TwoStepEfficient };

/// Sample moment vector g(theta).
VectorXd gmm_moments(const GmmProblem& problem, const VectorXd& theta);
/// W for the first stage: identity or (Q'Q/N)^{-1}. Throws EstimationError
/// when the instrument Gram matrix is singular.
MatrixXd first_stage_weight(const MatrixXd& instruments, Weighting weighting);
/// Optimal weight (1/N sum eps^2 Q Q')^{-1} with a small ridge when needed.
MatrixXd efficient_weight(const MatrixXd& instruments, const VectorXd& residual);

/// Minimizes g'Wg through the whitened moment vector L'g (W = LL').
OptimResult minimize_gmm(const GmmProblem& problem, Weighting weighting = Weighting::InverseInstrumentGram,
                         const OptimOptions& options = {});
/// Same, with a caller-supplied positive-definite W.
OptimResult minimize_gmm(const GmmProblem& problem, const MatrixXd& weight,
                         const OptimOptions& options = {});

/// Central differences, step h_j = step * max(1, |x_j|).
MatrixXd finite_diff_jacobian(const VectorFunction& f, const VectorXd& point, double step = 1e-6);

/// max_ij |a - n| / max(1, |a|, |n|). Throws std::invalid_argument on shape mismatch.
double check_gradient(const MatrixXd& analytic, const MatrixXd& numeric);

/// Runs minimize_nls from each start and keeps the lowest objective
/// (earliest start wins ties).
OptimResult minimize_nls_multistart(NlsProblem problem, const std::vector<VectorXd>& starts,
                                    const OptimOptions& options = {});

}  // namespace mdprod
