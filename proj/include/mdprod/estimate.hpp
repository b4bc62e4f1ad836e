#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mdprod/sieve.hpp"
#include "mdprod/translog.hpp"

namespace mdprod {

enum class LawForm { Parametric, Sieve };

struct SieveOptions {
  std::vector<int> candidates{1, 2, 3};
  int degree = 0;  ///< 0 selects the degree by GCV
};

struct EstimateOptions {
  ProxyChoice proxy = ProxyChoice::Material;
  int capital_lags = 1;
  Step2Options step2;
  Step3Options step3;
  LawForm law = LawForm::Parametric;
  SieveOptions sieve;
};

struct TranslogEstimate {
  TranslogParams params;  ///< theta from step 1
  ProductivityLaws laws;  ///< linear coefficients (mapped back for sieve laws)
  Step1Result step1;
  Step2Result step2;
  Step3Result step3;
  std::vector<double> phi_hat;
  std::vector<double> omega_hat;
  std::vector<double> eta_hat;
  std::vector<double> mstar;  ///< omega proxy per observation (NaN if invalid)
  std::vector<LagPair> step2_pairs;
  std::vector<LagPair> step3_pairs;
  std::vector<RejectedRow> step3_dropped;
  InformationMatrixReport information;
  LawForm law = LawForm::Parametric;
  std::optional<SieveLaw> phi_law;    ///< set for sieve estimates
  std::optional<SieveLaw> omega_law;  ///< set for sieve estimates
  std::optional<GcvResult> phi_gcv;
  std::optional<GcvResult> omega_gcv;
  std::vector<std::string> warnings;

  /// E[phi(t) | phi(t-1), z(t-1)] under the fitted law.
  double predict_phi(double phi_lag, const std::vector<double>& z_lag) const;
  /// E[omega(t) | omega(t-1), x(t-1)] under the fitted law.
  double predict_omega(double omega_lag, const std::vector<double>& x_lag) const;
  /// (bK, bKK, bL, bM, b0, rho_phi_1, rho_omega_0, rho_omega_1, rho_phi_2..., rho_omega_2...).
  std::vector<double> parameter_vector() const;
  std::vector<std::string> parameter_names() const;
};

/// Outcome replacements used by the bootstrap. Empty vectors mean "observed".
struct OutcomeOverrides {
  std::vector<double> ln_r;   ///< per observation
  std::vector<double> ml;     ///< m - l per observation, used by step 2
  std::vector<double> ystar;  ///< y* per observation (NaN = unavailable), used by step 3
};

/// Runs steps 1 -> 2 -> 3. Throws EstimationError ("insufficient temporal
/// depth" when there are no lag pairs) or on non-convergence.
TranslogEstimate estimate(const PanelDataset& dataset, const EstimateOptions& options = {});
TranslogEstimate estimate(const PanelDataset& dataset, const EstimateOptions& options,
                          const OutcomeOverrides& overrides);

/// Parameter table (technology,parameter,value) and latent series CSV, 17 significant digits.
void write_estimate(const std::string& params_path, const std::string& series_path, const PanelDataset& dataset,
                    const TranslogEstimate& estimate);

const char* to_string(ProxyChoice choice);
const char* to_string(LawForm law);

}  // namespace mdprod
