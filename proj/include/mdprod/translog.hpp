#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "mdprod/optim.hpp"
#include "mdprod/panel.hpp"
#include "mdprod/simulate.hpp"

namespace mdprod {

enum class ProxyChoice { Material, Labor, Average };

// ---- step 1 ---------------------------------------------------------------

struct Step1Result {
  double delta_lm = 0.0;  ///< beta_l + beta_m
  double theta = 0.0;
  std::vector<double> eta_hat;  ///< ln(theta * delta_lm) - ln_r per observation
};

/// Closed form from the cost-to-revenue ratios. Throws DataError when empty.
Step1Result step1_cost_share(const std::vector<double>& ln_r);
Step1Result step1_cost_share(const PanelDataset& dataset);

// ---- step 2 ---------------------------------------------------------------

/// phi = (m - l) + bL/b0 - (delta/b0) s_l. Throws DomainError when b0 == 0.
double phi_proxy(double m_minus_l, double s_l, double beta_0, double beta_l, double delta_lm);

/// Lag-pair sample of the Harrod-neutral law.
struct Step2Data {
  std::vector<LagPair> pairs;
  Eigen::VectorXd ml;      ///< (m - l)(t)
  Eigen::VectorXd ml_lag;  ///< (m - l)(t-1)
  Eigen::VectorXd s;       ///< s_l(t)
  Eigen::VectorXd s_lag;
  Eigen::MatrixXd z_lag;        ///< N x dim_z
  Eigen::MatrixXd instruments;  ///< N x q; see build_step2_data
  Eigen::MatrixXd base;         ///< unexpanded instrument columns without the constant
};

/// Instruments (1, ml(t-1), s_l(t-1), z(t-1), k(t), k(t-1), ..., k(t-capital_lags)).
/// Pairs whose capital history is too short are dropped. `ml_override`, when
/// given, replaces m - l for every observation (bootstrap outcomes).
Step2Data build_step2_data(const PanelDataset& dataset, const std::vector<LagPair>& pairs, int capital_lags = 1,
                           const std::vector<double>* ml_override = nullptr);

/// eps(alpha) for alpha = (b0, bL, rho_1, rho_2').
Eigen::VectorXd step2_residual(const Step2Data& data, double delta_lm, const Eigen::VectorXd& alpha);
/// d eps / d alpha', N x (3 + dim_z).
Eigen::MatrixXd step2_jacobian(const Step2Data& data, double delta_lm, const Eigen::VectorXd& alpha);
/// g' W g.
double step2_objective(const Step2Data& data, double delta_lm, const Eigen::VectorXd& alpha,
                       const Eigen::MatrixXd& weight);

struct Step2Options {
  Weighting weighting = Weighting::InverseInstrumentGram;
  OptimOptions optim;
  int starts = 5;  ///< best grid points refined by the optimizer
  /// Keep b0 above step2_beta0_floor, where the implied inputs stay on the
  /// profit-maximizing branch for every sample share.
  bool enforce_branch = true;
  /// Also start from b0 > 0. Off by default: on data with a nearly linear
  /// share-to-phi map the objective keeps falling as b0 grows without bound.
  bool positive_beta0 = false;
};

struct Step2Result {
  double beta_0 = 0.0;
  double beta_l = 0.0;
  double beta_m = 0.0;
  double rho_phi_1 = 0.0;
  std::vector<double> rho_phi_2;
  Eigen::VectorXd alpha;
  double objective = 0.0;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;
  Eigen::VectorXd residual;  ///< aligned with the Step2Data pairs
  /// Share of observations with labor elasticity bL + b0 (m - phi - l) <= 0.
  double nonpositive_labor_share = 0.0;
  double beta_0_floor = 0.0;  ///< -inf when the branch restriction is off
  std::vector<std::string> warnings;
};

/// -delta * min S(1-S) over the current and lagged shares of the sample.
/// Below it the proxy phi(S) stops being monotone for some observation, i.e.
/// 1 + b0 / (delta S (1-S)) <= 0.
double step2_beta0_floor(const Step2Data& data, double delta_lm);

/// b0 in {-0.2, ..., -0.005} (mirrored when `positive_beta0`) x bL in
/// fractions {0.2, 0.4, 0.6, 0.8} of delta, rho_1 = 0.5, rho_2 = 0.
std::vector<Eigen::VectorXd> step2_start_grid(double delta_lm, std::size_t dim_z, bool positive_beta0 = false);

/// Multi-start GMM. Each start keeps b0 on its own side of zero.
Step2Result step2_gmm(const Step2Data& data, double delta_lm, const Step2Options& options = {});

struct InformationMatrixReport {
  Eigen::MatrixXd matrix;  ///< E[Q d eps / d alpha'], q x p
  Eigen::VectorXd singular_values;
  int rank = 0;
  bool full_column_rank = false;
};

/// Analytic information matrix; rank uses the tolerance 1e-10 * largest singular value.
InformationMatrixReport information_matrix(const Step2Data& data, double delta_lm, const Eigen::VectorXd& alpha);

// ---- step 3 ---------------------------------------------------------------

/// Proxy of omega + bK k + bKK k^2/2. Returns nullopt when the log argument is
/// not positive.
std::optional<double> omega_proxy(const PanelObservation& obs, double phi, const TranslogParams& params,
                                  double price_ratio_m, double price_ratio_l, ProxyChoice choice);

/// y* = y - bM m - bL (phi + l) + b0 (m - phi - l)^2 / 2.
double y_star(const PanelObservation& obs, double phi, const TranslogParams& params);

struct Step3Data {
  std::vector<LagPair> pairs;
  Eigen::VectorXd ystar;      ///< y*(t)
  Eigen::VectorXd k;          ///< k(t)
  Eigen::VectorXd k_lag;
  Eigen::VectorXd mstar_lag;  ///< proxy at t-1
  Eigen::MatrixXd x_lag;
  std::vector<RejectedRow> dropped;  ///< pairs lost to invalid proxies (line = observation index)
};

/// `ystar` and `mstar` are per observation; NaN marks an unusable value.
Step3Data build_step3_data(const PanelDataset& dataset, const std::vector<LagPair>& pairs,
                           const std::vector<double>& ystar, const std::vector<double>& mstar);

struct Step3Options {
  OptimOptions optim;
  bool beta_kk_zero = false;  ///< impose bKK = 0
};

struct Step3Result {
  double beta_k = 0.0;
  double beta_kk = 0.0;
  double rho_omega_0 = 0.0;
  double rho_omega_1 = 0.0;
  std::vector<double> rho_omega_2;
  Eigen::VectorXd gamma;  ///< (bK, bKK, r0, r1, r2') or without bKK
  double objective = 0.0;
  bool converged = false;
  int iterations = 0;
  Eigen::VectorXd residual;  ///< aligned with Step3Data pairs
};

/// gamma = (bK, bKK, r0, r1, r2'); without bKK when it is fixed at zero.
Eigen::VectorXd step3_residual(const Step3Data& data, const Eigen::VectorXd& gamma, bool beta_kk_zero = false);
Eigen::MatrixXd step3_jacobian(const Step3Data& data, const Eigen::VectorXd& gamma, bool beta_kk_zero = false);

/// Starts from the unrestricted OLS fit of the same equation.
Step3Result step3_nls(const Step3Data& data, const Step3Options& options = {});

// ---- recovery ---------------------------------------------------------------

struct LatentSeries {
  std::vector<double> phi;
  std::vector<double> omega;
  std::vector<double> eta;
};

/// phi from the share proxy, eta = ln(theta * delta) - ln_r, omega = y - translog - eta.
LatentSeries recover_productivity(const PanelDataset& dataset, const TranslogParams& params);

}  // namespace mdprod
