#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mdprod/translog.hpp"

namespace mdprod {

/// Multivariate polynomial basis in graded lexicographic order.
struct SieveBasis {
  std::size_t dim = 0;
  int degree = 0;
  bool intercept = false;
  std::vector<std::vector<int>> terms;  ///< exponent multi-index per term

  std::size_t size() const { return terms.size(); }
};

/// All monomials with total degree 1..degree (0..degree with intercept).
/// Within a degree, higher powers of earlier variables come first.
SieveBasis build_basis(std::size_t dim, int degree, bool intercept);

/// Rows of u are points; returns N x size().
Eigen::MatrixXd evaluate_basis(const SieveBasis& basis, const Eigen::MatrixXd& u);
/// Partial derivative of every term with respect to variable `var`.
Eigen::MatrixXd evaluate_basis_derivative(const SieveBasis& basis, const Eigen::MatrixXd& u, std::size_t var);

/// Columnwise u -> (u - center) / scale.
struct AffineMap {
  Eigen::VectorXd center;
  Eigen::VectorXd scale;

  Eigen::MatrixXd apply(const Eigen::MatrixXd& raw) const;
  /// center = mean (when `centered`), scale = standard deviation about the
  /// center (root mean square when not centered); zero scales become 1.
  static AffineMap fit(const Eigen::MatrixXd& raw, bool centered);
};

/// A fitted sieve law sum_r coef_r P_r(map(u)).
struct SieveLaw {
  SieveBasis basis;
  AffineMap map;
  Eigen::VectorXd coef;

  double evaluate(const Eigen::VectorXd& raw) const;
};

/// GCV ratio (RSS/N) / (1 - p/N)^2 of the projection of y on the columns.
/// Throws EstimationError when the columns are rank deficient or p >= N.
double gcv_score(const Eigen::MatrixXd& columns, const Eigen::VectorXd& y, double* rss = nullptr);

struct GcvCandidate {
  int degree = 0;
  double score = 0.0;
  double rss = 0.0;
  std::size_t terms = 0;
  bool skipped = false;
};

struct GcvResult {
  int degree = 0;
  std::vector<GcvCandidate> candidates;
  std::vector<std::string> warnings;
};

/// Argmin of GCV over the candidate degrees; ties go to the smaller degree.
/// `regressors` are used as given (standardize them first).
GcvResult gcv_select_degree(const std::vector<int>& candidates, const Eigen::MatrixXd& regressors,
                            const Eigen::VectorXd& y, bool intercept);

/// Second step with r_phi approximated by a degree-d polynomial without
/// intercept in (phi(t-1), z(t-1)), scaled but not centered. Instruments are
/// the degree-d expansion of the standardized base instruments.
struct SieveStep2Result {
  Step2Result step2;  ///< rho_phi_1 / rho_phi_2 hold the mapped linear coefficients
  SieveLaw law;
};

/// Inputs (phi(t-1), z(t-1)) of the law at the given alpha.
Eigen::MatrixXd sieve_phi_inputs(const Step2Data& data, double delta_lm, double beta_0, double beta_l);

SieveStep2Result sieve_step2_gmm(const Step2Data& data, double delta_lm, int degree,
                                 const Step2Result& parametric, const Step2Options& options = {});

/// GCV degree choice for r_phi at a given (beta_0, beta_l).
GcvResult sieve_phi_gcv(const Step2Data& data, double delta_lm, double beta_0, double beta_l,
                        const std::vector<int>& candidates);

struct SieveStep3Result {
  Step3Result step3;  ///< rho_omega_* hold the mapped linear coefficients
  SieveLaw law;       ///< inputs (omega(t-1) proxy, x(t-1))
};

SieveStep3Result sieve_step3_nls(const Step3Data& data, int degree, const Step3Result& parametric,
                                 const OptimOptions& options = {});

GcvResult sieve_omega_gcv(const Step3Data& data, double beta_k, double beta_kk, const std::vector<int>& candidates);

}  // namespace mdprod
