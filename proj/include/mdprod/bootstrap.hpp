#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mdprod/estimate.hpp"

namespace mdprod {

/// Two-point Mammen distribution: mean 0, variance 1.
inline constexpr double kMammenHigh = 1.6180339887498949;   // (1 + sqrt 5) / 2
inline constexpr double kMammenLow = -0.6180339887498949;   // (1 - sqrt 5) / 2
inline constexpr double kMammenHighProb = 0.27639320225002103;  // (sqrt 5 - 1) / (2 sqrt 5)

/// One weight per firm, in dense firm order.
std::vector<double> mammen_weights(std::size_t firm_count, std::uint64_t seed);

/// Residuals of the three steps, one entry per observation. NaN where the
/// step has no residual (first period of a run, dropped step-3 pairs).
struct BootstrapResiduals {
  std::vector<double> eta;         ///< step 1
  std::vector<double> zeta_phi;    ///< step 2
  std::vector<double> zeta_omega;  ///< step 3, zeta_omega + eta
};

/// Residuals at the point estimate; `recenter` subtracts each set's mean.
BootstrapResiduals bootstrap_residuals(const PanelDataset& dataset, const TranslogEstimate& estimate,
                                       bool recenter = true);

/// Synthetic ln R, m - l and y* for one set of firm weights. The m - l
/// recursion starts from the observed value at the first observation of every
/// consecutive run of a firm; shares stay at their observed values.
OutcomeOverrides bootstrap_outcomes(const PanelDataset& dataset, const TranslogEstimate& estimate,
                                    const BootstrapResiduals& residuals, const std::vector<double>& firm_weights);

/// Re-estimates on the synthetic outcomes and returns the parameter vector.
/// Throws whatever the estimator throws.
std::vector<double> bootstrap_replicate(const PanelDataset& dataset, const TranslogEstimate& estimate,
                                        const BootstrapResiduals& residuals,
                                        const std::vector<double>& firm_weights,
                                        const EstimateOptions& options = {});

struct BootstrapConfig {
  int B = 200;
  std::uint64_t seed = 0;
  std::optional<double> weight_override;  ///< every firm gets this weight
  bool recenter = true;
  std::vector<double> levels{0.90, 0.95, 0.99};
  int threads = 1;
  double unreliable_failure_rate = 0.2;

  void validate() const;
};

struct PercentileInterval {
  double level = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct BootstrapResult {
  std::vector<std::string> names;
  std::vector<double> point;
  std::vector<std::vector<double>> draws;  ///< successful replicates, in replicate order
  std::vector<int> replicate_index;        ///< replicate number of each draw
  std::vector<double> standard_errors;
  std::vector<std::vector<PercentileInterval>> intervals;  ///< per parameter, per level
  int requested = 0;
  int failures = 0;
  std::vector<std::string> failure_messages;  ///< "replicate b: message"
  bool unreliable = false;
  std::vector<std::string> warnings;
};

/// Replicate b uses weights from derive_seed(config.seed, b); the result does
/// not depend on config.threads.
BootstrapResult run_bootstrap(const PanelDataset& dataset, const TranslogEstimate& estimate,
                              const BootstrapConfig& config, const EstimateOptions& options = {});

/// Linear interpolation between order statistics (q in [0, 1]); `sorted` ascending.
double percentile(const std::vector<double>& sorted, double q);

/// parameter,estimate,se,lower_90,upper_90,... at 17 significant digits.
void write_bootstrap(const std::string& path, const BootstrapResult& result);

}  // namespace mdprod
