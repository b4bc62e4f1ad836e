#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mdprod/optim.hpp"
#include "mdprod/panel.hpp"
#include "mdprod/simulate.hpp"
#include "mdprod/translog.hpp"

namespace mdprod {

/// phi = [(m - l) - sigma ln bM + sigma (ln P^M - ln P^L)] / (1 - sigma).
/// Throws DomainError when sigma == 1.
double ces_phi_proxy(double m_minus_l, double sigma, double beta_m, double price_gap);

struct CesStep1Result {
  double sigma = 0.0;
  double beta_m = 0.0;
  double rho_phi_1 = 0.0;
  std::vector<double> rho_phi_2;
  Eigen::VectorXd point;  ///< (sigma, bM, rho_1, rho_2')
  double objective = 0.0;
  bool converged = false;
  int iterations = 0;
  Eigen::VectorXd residual;
  bool constant_price_gap = false;
  std::vector<std::string> warnings;
};

/// NLS on the CES labor-augmenting law. sigma is searched on (0.05, 0.95)
/// and on (1.05, 20); the better of the two brackets is kept.
CesStep1Result ces_step1_nls(const PanelDataset& dataset, const std::vector<LagPair>& pairs,
                             const OptimOptions& options = {});

struct CesStep2Result {
  double nu = 0.0;
  double beta_k = 0.0;
  double intercept = 0.0;  ///< rho_omega_0 - rho_omega_1 ln(theta nu)
  double rho_omega_0 = 0.0;
  double rho_omega_1 = 0.0;
  std::vector<double> rho_omega_2;
  Eigen::VectorXd point;  ///< (nu, bK, intercept, rho_1, rho_2')
  double objective = 0.0;
  bool converged = false;
  int iterations = 0;
  Eigen::VectorXd residual;
};

/// NLS on the output equation with the lagged material proxy for omega.
/// `phi_hat` is per observation.
CesStep2Result ces_step2_nls(const PanelDataset& dataset, const std::vector<LagPair>& pairs, double sigma,
                             double beta_m, const std::vector<double>& phi_hat, double theta,
                             const OptimOptions& options = {});

struct CesEstimate {
  CesParams params;  ///< theta from the cost-share step
  ProductivityLaws laws;
  Step1Result cost_share;
  CesStep1Result step1;
  CesStep2Result step2;
  std::vector<double> phi_hat;
  std::vector<double> omega_hat;
  std::vector<double> eta_hat;
  std::vector<LagPair> pairs;
  std::vector<std::string> warnings;

  /// (sigma, nu, bK, bM, rho_phi_1, rho_omega_0, rho_omega_1, rho_phi_2..., rho_omega_2...).
  std::vector<double> parameter_vector() const;
  std::vector<std::string> parameter_names() const;
};

CesEstimate estimate_ces(const PanelDataset& dataset, const OptimOptions& options = {});

void write_ces_estimate(const std::string& params_path, const std::string& series_path,
                        const PanelDataset& dataset, const CesEstimate& estimate);

}  // namespace mdprod
