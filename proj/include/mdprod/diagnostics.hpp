#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mdprod/estimate.hpp"
#include "mdprod/simulate.hpp"

namespace mdprod {

struct ElasticityRecord {
  double capital = 0.0;
  double labor = 0.0;
  double material = 0.0;
  double rts = 0.0;  ///< capital + labor + material
};

/// Derivatives of the translog at one observation with productivity phi.
ElasticityRecord elasticities(const TranslogParams& params, const PanelObservation& obs, double phi);

/// One record per observation at the estimate's phi_hat.
std::vector<ElasticityRecord> elasticity_table(const PanelDataset& dataset, const TranslogEstimate& estimate);

struct AggregateSeries {
  std::vector<int> periods;
  std::vector<double> phi;        ///< output-weighted labor-augmenting productivity
  std::vector<double> omega;      ///< output-weighted Hicks-neutral productivity
  std::vector<double> labor_phi;  ///< output-weighted labor elasticity x phi
};

/// Per-period weighted means, each series shifted to 0 in the first period.
/// All vectors are per observation; weights need not be normalized.
AggregateSeries aggregate_productivity(const PanelDataset& dataset, const std::vector<double>& phi,
                                       const std::vector<double>& omega, const std::vector<double>& labor_elasticity,
                                       const std::vector<double>& weights);

/// Output weights exp(y) and the estimate's series.
AggregateSeries aggregate_productivity(const PanelDataset& dataset, const TranslogEstimate& estimate);

void write_aggregate_csv(const std::string& path, const AggregateSeries& series);

/// (bK, bKK, bL, bM, b0, rho_phi_1, rho_omega_0, rho_omega_1, rho_phi_2..., rho_omega_2...).
std::vector<double> truth_vector(const DgpConfig& config);

struct McStudyReport {
  DgpConfig config;
  int requested = 0;
  std::vector<std::string> names;
  std::vector<double> truth;
  std::vector<double> mean;
  std::vector<double> rmse;
  std::vector<double> mae;
  std::vector<std::vector<double>> estimates;  ///< successful replications, in order
  std::vector<int> replication_index;
  int failures = 0;
  std::vector<std::string> failure_messages;

  std::size_t successes() const { return estimates.size(); }
};

/// Replication r simulates with seed derive_seed(config.seed, r). Throws
/// EstimationError when every replication fails. Independent of `threads`.
McStudyReport monte_carlo_study(const DgpConfig& config, int replications, const EstimateOptions& options = {},
                                int threads = 1);

/// parameter,truth,mean,rmse,mae at 17 significant digits.
void write_mc_csv(const std::string& path, const McStudyReport& report);
/// Aligned plain-text table with Mean, RMSE and MAE columns.
std::string format_mc_table(const McStudyReport& report);

/// Plain-text post-estimation summary: parameters, elasticity quantiles and
/// the aggregate productivity series.
std::string diagnostics_report(const PanelDataset& dataset, const TranslogEstimate& estimate);

}  // namespace mdprod
