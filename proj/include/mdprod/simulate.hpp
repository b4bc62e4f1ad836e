#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mdprod/panel.hpp"

namespace mdprod {

/// Restricted translog y = bK k + bKK k^2/2 + bM m + bL (phi + l) - b0 (m - phi - l)^2 / 2.
struct TranslogParams {
  double beta_k = 0.2;
  double beta_kk = -0.01;
  double beta_l = 0.25;
  double beta_m = 0.5;
  double beta_0 = -0.05;
  double theta = 1.0;  ///< E[exp(eta)]

  double delta_lm() const { return beta_l + beta_m; }
  /// Throws ConfigError when an invariant fails.
  void validate() const;
};

/// Linear Markov laws. phi has no intercept.
struct ProductivityLaws {
  double rho_phi_1 = 0.9;
  std::vector<double> rho_phi_2;  ///< on z(t-1)
  double rho_omega_0 = 0.2;
  double rho_omega_1 = 0.6;
  std::vector<double> rho_omega_2;  ///< on x(t-1)

  void validate() const;
};

/// Nested CES {bK K^-r + (e^phi L)^-r + bM M^-r}^(-nu/r), r = (1 - sigma)/sigma.
struct CesParams {
  double sigma = 0.6;
  double nu = 0.9;
  double beta_k = 0.2;
  double beta_m = 0.5;
  double theta = 1.0;

  double r() const { return (1.0 - sigma) / sigma; }
  void validate() const;
};

enum class Technology { Translog, Ces };

struct UniformRange {
  double lo = 0.0;
  double hi = 0.0;
};

struct DgpConfig {
  int n = 400;
  int T = 10;
  int first_period = 1;
  Technology technology = Technology::Translog;
  TranslogParams params;  ///< theta is ignored; see effective_theta()
  CesParams ces;
  ProductivityLaws laws;
  double sigma_omega = 0.04;
  double sigma_phi = 0.04;
  double sigma_eta = 0.07;
  double iota_1 = 0.8;
  double iota_2 = 0.1;
  double iota_3 = 0.1;
  std::vector<double> depreciation_set{0.05, 0.075, 0.10, 0.125, 0.15};
  UniformRange k_init{10.0, 200.0};  ///< capital level, not log
  UniformRange omega_init{-1.0, 1.0};
  UniformRange phi_init{-1.0, 1.0};
  /// Per-period price levels (length T). Empty means P^L = P^M = theta, P^Y = 1.
  std::vector<double> price_l;
  std::vector<double> price_m;
  std::vector<double> price_y;
  double markup = 1.0;
  std::uint64_t seed = 0;
  /// iid U(control_range) controls entering the laws.
  std::size_t dim_x = 0;
  std::size_t dim_z = 0;
  UniformRange control_range{0.0, 1.0};

  /// theta = E[exp(eta)] = exp(sigma_eta^2 / 2) for normal eta.
  double effective_theta() const;
  void validate() const;
};

struct ProductivitySeries {
  std::vector<double> phi;
  std::vector<double> omega;
  std::vector<double> eta;
  std::vector<double> zeta_phi;    ///< 0 in each firm's first period
  std::vector<double> zeta_omega;  ///< 0 in each firm's first period
};

struct SimulatedPanel {
  PanelDataset data;
  ProductivitySeries truth;  ///< aligned with data.observations()
  TranslogParams params;     ///< theta filled in
  CesParams ces;             ///< theta filled in
  ProductivityLaws laws;
  std::vector<double> depreciation;  ///< per firm, in firm order
  double max_foc_residual = 0.0;
};

/// Deterministic given config.seed; independent of `threads`.
SimulatedPanel generate_panel(const DgpConfig& config, int threads = 1);

/// Writes firm_id,year,phi,omega,eta,zeta_phi,zeta_omega.
void write_truth_csv(const std::string& path, const SimulatedPanel& panel);

struct StaticSolution {
  double l = 0.0;
  double m = 0.0;
  double foc_residual = 0.0;  ///< max |log FOC residual|
};

/// Solves both log FOCs of expected-profit maximization (markup >= 1 scales
/// marginal revenue down). Throws EstimationError on failure.
StaticSolution solve_static_inputs(double k, double omega, double phi, const TranslogParams& params,
                                   double price_l, double price_m, double price_y, double markup = 1.0);

/// Log FOC residuals (labor, material) at (l, m).
std::pair<double, double> translog_foc_residuals(double l, double m, double k, double omega, double phi,
                                                 const TranslogParams& params, double price_l,
                                                 double price_m, double price_y, double markup = 1.0);

StaticSolution solve_static_inputs_ces(double k, double omega, double phi, const CesParams& params,
                                       double price_l, double price_m, double price_y, double markup = 1.0);

std::pair<double, double> ces_foc_residuals(double l, double m, double k, double omega, double phi,
                                            const CesParams& params, double price_l, double price_m,
                                            double price_y, double markup = 1.0);

/// Deterministic part of log output.
double translog_output(double k, double l, double m, double phi, const TranslogParams& params);
double ces_output(double k, double l, double m, double phi, const CesParams& params);

/// One step of both laws: returns (phi', omega').
std::pair<double, double> evolve_productivity(const ProductivityLaws& laws, double phi, double omega,
                                              const std::vector<double>& x, const std::vector<double>& z,
                                              double zeta_phi, double zeta_omega);

}  // namespace mdprod
