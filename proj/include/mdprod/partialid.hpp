#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mdprod/panel.hpp"
#include "mdprod/simulate.hpp"

namespace mdprod {

struct PropensityOptions {
  int degree = 1;  ///< powers of each regressor up to this degree
  double clip_lo = 0.01;
  double clip_hi = 0.99;
  int max_iterations = 100;
  double tolerance = 1e-10;
};

/// Logistic fit of 1{m(t) > cutoff} on (1, k(t-1), x(t-1), z(t-1)).
struct PropensityFit {
  std::vector<std::size_t> observations;  ///< current-period indices
  std::vector<double> score;              ///< clipped fitted probabilities
  std::vector<int> outcome;               ///< 1{m > cutoff}
  Eigen::VectorXd coefficients;           ///< on standardized regressors
  int iterations = 0;
};

/// Throws EstimationError when the outcome is constant or completely
/// separated by the regressors.
PropensityFit estimate_propensity(const PanelDataset& dataset, const std::vector<LagPair>& pairs,
                                  double cutoff, const PropensityOptions& options = {});

/// Candidate beta = (bK, bKK, bL, bM, b0).
using BetaPoint = std::array<double, 5>;

/// y - ybar(v; beta) with ybar = bL^2/(2 b0) + bK k + bKK k^2/2 + (bL + bM) m - (bL + bM)^2 s_l^2 / (2 b0).
double y_residual_no_phi(const PanelObservation& obs, const BetaPoint& beta);

/// E_N[u D / p] - E_N[u (1 - D) / (1 - p)] over the fit's observations,
/// u = y - ybar(v; beta), D = 1{m > cutoff}. Requires b0 != 0.
double moment_statistic(const PanelDataset& dataset, const BetaPoint& beta, const PropensityFit& fit);

struct GridAxis {
  double lo = 0.0;
  double hi = 0.0;
  int count = 11;

  double value(int i) const { return count == 1 ? lo : lo + (hi - lo) * i / (count - 1); }
};

struct MomentInequalityConfig {
  std::vector<double> cutoff_levels{0.25, 0.5, 0.75};  ///< quantiles of m(t)
  std::array<GridAxis, 5> grid;                         ///< bK, bKK, bL, bM, b0
  double slack = 0.0;
  PropensityOptions propensity;
  int threads = 1;

  void validate() const;
};

/// Center +- 50% of |center| per coordinate, 11 points per axis.
std::array<GridAxis, 5> default_grid(const BetaPoint& center, double half_width = 0.5, int count = 11);

inline constexpr double kDefaultSlackConstant = 0.5;

/// c N^(-1/3).
double default_slack(std::size_t n, double c = kDefaultSlackConstant);

struct IdentifiedSetPoint {
  BetaPoint beta{};
  std::vector<double> statistics;  ///< evaluated cutoffs only (early rejection)
  bool feasible = false;
};

struct IdentifiedSet {
  std::vector<double> cutoffs;  ///< m values
  std::vector<IdentifiedSetPoint> points;
  std::size_t feasible_count = 0;
  double volume_fraction = 0.0;
  BetaPoint lower{};  ///< bounding box of feasible points
  BetaPoint upper{};
  bool empty = true;
  double slack = 0.0;
  std::size_t sample_size = 0;
};

/// Moment inequalities precomputed per cutoff; statistic(beta) is linear in a
/// handful of weighted sums.
class MomentInequalities {
 public:
  MomentInequalities(const PanelDataset& dataset, const std::vector<double>& cutoff_levels,
                     const PropensityOptions& options = {});

  const std::vector<double>& cutoffs() const { return cutoffs_; }
  const std::vector<PropensityFit>& fits() const { return fits_; }
  std::size_t sample_size() const { return n_; }
  double statistic(std::size_t cutoff, const BetaPoint& beta) const;
  /// Feasible iff every statistic >= -slack; stops at the first violation.
  bool feasible(const BetaPoint& beta, double slack, std::vector<double>* statistics = nullptr) const;

 private:
  struct Sums {
    double a = 0, ay = 0, ak = 0, akk = 0, am = 0, as2 = 0;
  };
  std::vector<double> cutoffs_;
  std::vector<PropensityFit> fits_;
  std::vector<Sums> sums_;
  std::size_t n_ = 0;
};

IdentifiedSet identified_set(const PanelDataset& dataset, const MomentInequalityConfig& config);
IdentifiedSet identified_set(const MomentInequalities& inequalities, const MomentInequalityConfig& config);

/// beta_0,...: one row per grid point with the statistics and flag.
void write_identified_set(const std::string& path, const IdentifiedSet& set);

struct MonotonicityReport {
  std::size_t comparisons = 0;
  std::size_t violations = 0;
  double worst = 0.0;  ///< most negative m difference seen
  bool passed = false;
};

/// Solves the static inputs on a k x omega x phi grid and checks that m is
/// nondecreasing in omega and in phi.
MonotonicityReport monotonicity_grid_test(const TranslogParams& params, double markup = 1.0, int points = 20,
                                          UniformRange log_k = {2.302585092994046, 5.298317366548036},
                                          UniformRange omega = {-1.0, 1.0}, UniformRange phi = {-1.0, 1.0},
                                          double price_l = 1.0, double price_m = 1.0, double price_y = 1.0);

}  // namespace mdprod
