#include "mdprod/partialid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "mdprod/errors.hpp"
#include "mdprod/parallel.hpp"

namespace mdprod {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// Standardized powers of (k, x, z) at t-1, with a leading intercept.
MatrixXd propensity_design(const PanelDataset& ds, const std::vector<LagPair>& pairs, int degree) {
  const auto n = static_cast<Eigen::Index>(pairs.size());
  const auto base = static_cast<Eigen::Index>(1 + ds.dim_x() + ds.dim_z());
  MatrixXd raw(n, base);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& lag = ds[pairs[static_cast<std::size_t>(i)].previous];
    Eigen::Index c = 0;
    raw(i, c++) = lag.k;
    for (double v : lag.x) raw(i, c++) = v;
    for (double v : lag.z) raw(i, c++) = v;
  }
  MatrixXd x(n, 1 + base * degree);
  x.col(0).setOnes();
  Eigen::Index c = 1;
  for (int d = 1; d <= degree; ++d) {
    for (Eigen::Index j = 0; j < base; ++j) {
      VectorXd col = raw.col(j).array().pow(d);
      const double mean = col.mean();
      const double sd = std::sqrt((col.array() - mean).square().mean());
      x.col(c++) = sd > 0.0 ? VectorXd((col.array() - mean) / sd) : VectorXd(col.array() - mean);
    }
  }
  return x;
}

}  // namespace

PropensityFit estimate_propensity(const PanelDataset& ds, const std::vector<LagPair>& pairs, double cutoff,
                                  const PropensityOptions& opt) {
  if (pairs.empty()) throw EstimationError("propensity: no lag pairs");
  if (opt.degree < 1) throw ConfigError("propensity degree must be at least 1");
  PropensityFit fit;
  const auto n = static_cast<Eigen::Index>(pairs.size());
  VectorXd d(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t cur = pairs[static_cast<std::size_t>(i)].current;
    fit.observations.push_back(cur);
    fit.outcome.push_back(ds[cur].m > cutoff ? 1 : 0);
    d[i] = fit.outcome.back();
  }
  const double share = d.mean();
  if (share == 0.0 || share == 1.0) {
    throw EstimationError("propensity: 1{m > cutoff} is constant; choose a cutoff inside the range of m");
  }
  const MatrixXd x = propensity_design(ds, pairs, opt.degree);
  VectorXd b = VectorXd::Zero(x.cols());
  b[0] = std::log(share / (1.0 - share));
  VectorXd eta = x * b;
  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    const VectorXd p = (1.0 / (1.0 + (-eta.array()).exp())).matrix();
    const VectorXd w = (p.array() * (1.0 - p.array())).max(1e-12).matrix();
    const MatrixXd h = x.transpose() * w.asDiagonal() * x;
    const VectorXd g = x.transpose() * (d - p);
    const VectorXd step = h.ldlt().solve(g);
    if (!step.allFinite()) break;
    b += step;
    eta = x * b;
    if (step.lpNorm<Eigen::Infinity>() <= opt.tolerance * (1.0 + b.lpNorm<Eigen::Infinity>())) {
      ++it;
      break;
    }
  }
  // Complete separation: the fitted index classifies every observation and keeps growing.
  bool separated = eta.cwiseAbs().minCoeff() > 15.0 || !b.allFinite();
  if (!separated && eta.cwiseAbs().maxCoeff() > 30.0) {
    separated = true;
    for (Eigen::Index i = 0; i < n; ++i) {
      if ((eta[i] > 0.0) != (d[i] > 0.5)) {
        separated = false;
        break;
      }
    }
  }
  if (separated) {
    throw EstimationError("propensity: complete separation of 1{m > cutoff}; use a coarser cutoff");
  }
  fit.coefficients = b;
  fit.iterations = it;
  fit.score.resize(fit.observations.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-eta[i]));
    fit.score[static_cast<std::size_t>(i)] = std::clamp(p, opt.clip_lo, opt.clip_hi);
  }
  return fit;
}

double y_residual_no_phi(const PanelObservation& o, const BetaPoint& b) {
  const double bk = b[0], bkk = b[1], bl = b[2], bm = b[3], b0 = b[4];
  const double delta = bl + bm;
  const double ybar = bl * bl / (2.0 * b0) + bk * o.k + 0.5 * bkk * o.k * o.k + delta * o.m -
                      delta * delta / (2.0 * b0) * o.s_l * o.s_l;
  return o.y - ybar;
}

double moment_statistic(const PanelDataset& ds, const BetaPoint& beta, const PropensityFit& fit) {
  if (beta[4] == 0.0) throw DomainError("moment_statistic: beta_0 must be nonzero");
  double hi = 0.0, lo = 0.0;
  for (std::size_t i = 0; i < fit.observations.size(); ++i) {
    const double u = y_residual_no_phi(ds[fit.observations[i]], beta);
    if (fit.outcome[i]) {
      hi += u / fit.score[i];
    } else {
      lo += u / (1.0 - fit.score[i]);
    }
  }
  const auto n = static_cast<double>(fit.observations.size());
  return (hi - lo) / n;
}

void MomentInequalityConfig::validate() const {
  if (cutoff_levels.empty()) throw ConfigError("partialid: at least one cutoff level is required");
  for (double q : cutoff_levels) {
    if (!(q > 0.0 && q < 1.0)) throw ConfigError("partialid: cutoff levels must lie in (0, 1)");
  }
  for (const auto& a : grid) {
    if (a.count < 1) throw ConfigError("partialid: every grid axis needs at least one point");
    if (!(a.lo <= a.hi)) throw ConfigError("partialid: grid axis with lo > hi");
  }
  if (!(slack >= 0.0)) throw ConfigError("partialid: slack must be nonnegative");
  if (threads < 1) throw ConfigError("threads must be at least 1");
}

std::array<GridAxis, 5> default_grid(const BetaPoint& c, double half_width, int count) {
  std::array<GridAxis, 5> g;
  for (std::size_t j = 0; j < 5; ++j) {
    const double h = half_width * std::abs(c[j]);
    g[j] = {c[j] - h, c[j] + h, count};
  }
  return g;
}

double default_slack(std::size_t n, double c) { return c * std::pow(static_cast<double>(n), -1.0 / 3.0); }

MomentInequalities::MomentInequalities(const PanelDataset& ds, const std::vector<double>& levels,
                                       const PropensityOptions& options) {
  const auto pairs = build_lag_pairs(ds);
  if (pairs.empty()) throw EstimationError("insufficient temporal depth: no lag pairs for the moment inequalities");
  n_ = pairs.size();
  std::vector<double> m;
  m.reserve(pairs.size());
  for (const auto& p : pairs) m.push_back(ds[p.current].m);
  for (double q : levels) {
    const double cut = quantile(m, q);
    cutoffs_.push_back(cut);
    fits_.push_back(estimate_propensity(ds, pairs, cut, options));
    const PropensityFit& f = fits_.back();
    Sums s;
    for (std::size_t i = 0; i < f.observations.size(); ++i) {
      const auto& o = ds[f.observations[i]];
      const double a = (f.outcome[i] ? 1.0 / f.score[i] : -1.0 / (1.0 - f.score[i])) / static_cast<double>(n_);
      s.a += a;
      s.ay += a * o.y;
      s.ak += a * o.k;
      s.akk += a * o.k * o.k;
      s.am += a * o.m;
      s.as2 += a * o.s_l * o.s_l;
    }
    sums_.push_back(s);
  }
}

double MomentInequalities::statistic(std::size_t j, const BetaPoint& b) const {
  const Sums& s = sums_.at(j);
  const double delta = b[2] + b[3];
  return s.ay - (b[2] * b[2] / (2.0 * b[4]) * s.a + b[0] * s.ak + 0.5 * b[1] * s.akk + delta * s.am -
                 delta * delta / (2.0 * b[4]) * s.as2);
}

bool MomentInequalities::feasible(const BetaPoint& b, double slack, std::vector<double>* stats) const {
  if (stats) stats->clear();
  for (std::size_t j = 0; j < sums_.size(); ++j) {
    const double v = statistic(j, b);
    if (stats) stats->push_back(v);
    if (!(v >= -slack)) return false;
  }
  return true;
}

IdentifiedSet identified_set(const PanelDataset& ds, const MomentInequalityConfig& cfg) {
  cfg.validate();
  return identified_set(MomentInequalities(ds, cfg.cutoff_levels, cfg.propensity), cfg);
}

IdentifiedSet identified_set(const MomentInequalities& mi, const MomentInequalityConfig& cfg) {
  cfg.validate();
  if (cfg.grid[4].lo <= 0.0 && cfg.grid[4].hi >= 0.0) throw ConfigError("partialid: the beta_0 axis must not contain 0");
  IdentifiedSet set;
  set.cutoffs = mi.cutoffs();
  set.slack = cfg.slack;
  set.sample_size = mi.sample_size();
  std::size_t total = 1;
  for (const auto& a : cfg.grid) total *= static_cast<std::size_t>(a.count);
  set.points.resize(total);
  parallel_for(total, cfg.threads, [&](std::size_t idx) {
    IdentifiedSetPoint& pt = set.points[idx];
    std::size_t rest = idx;
    for (std::size_t j = 5; j-- > 0;) {
      const auto c = static_cast<std::size_t>(cfg.grid[j].count);
      pt.beta[j] = cfg.grid[j].value(static_cast<int>(rest % c));
      rest /= c;
    }
    pt.feasible = mi.feasible(pt.beta, cfg.slack, &pt.statistics);
  });
  for (const auto& pt : set.points) {
    if (!pt.feasible) continue;
    if (set.feasible_count == 0) {
      set.lower = pt.beta;
      set.upper = pt.beta;
    }
    ++set.feasible_count;
    for (std::size_t j = 0; j < 5; ++j) {
      set.lower[j] = std::min(set.lower[j], pt.beta[j]);
      set.upper[j] = std::max(set.upper[j], pt.beta[j]);
    }
  }
  set.empty = set.feasible_count == 0;
  set.volume_fraction = static_cast<double>(set.feasible_count) / static_cast<double>(total);
  return set;
}

void write_identified_set(const std::string& path, const IdentifiedSet& set) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << std::setprecision(17) << "beta_k,beta_kk,beta_l,beta_m,beta_0";
  for (std::size_t j = 0; j < set.cutoffs.size(); ++j) out << ",statistic_" << j + 1;
  out << ",feasible\n";
  for (const auto& pt : set.points) {
    for (std::size_t j = 0; j < 5; ++j) out << (j ? "," : "") << pt.beta[j];
    for (std::size_t j = 0; j < set.cutoffs.size(); ++j) {
      out << ',';
      if (j < pt.statistics.size()) out << pt.statistics[j];  // blank after early rejection
    }
    out << ',' << (pt.feasible ? 1 : 0) << '\n';
  }
}

MonotonicityReport monotonicity_grid_test(const TranslogParams& params, double markup, int points,
                                          UniformRange log_k, UniformRange omega, UniformRange phi,
                                          double price_l, double price_m, double price_y) {
  if (points < 2) throw ConfigError("monotonicity grid needs at least two points per axis");
  auto axis = [&](const UniformRange& r, int i) { return r.lo + (r.hi - r.lo) * i / (points - 1); };
  const auto np = static_cast<std::size_t>(points);
  std::vector<double> m(np * np * np);
  for (int a = 0; a < points; ++a) {
    for (int b = 0; b < points; ++b) {
      for (int c = 0; c < points; ++c) {
        const auto s = solve_static_inputs(axis(log_k, a), axis(omega, b), axis(phi, c), params, price_l, price_m,
                                           price_y, markup);
        m[(static_cast<std::size_t>(a) * np + static_cast<std::size_t>(b)) * np + static_cast<std::size_t>(c)] = s.m;
      }
    }
  }
  MonotonicityReport rep;
  constexpr double kTol = 1e-9;
  auto at = [&](std::size_t a, std::size_t b, std::size_t c) { return m[(a * np + b) * np + c]; };
  for (std::size_t a = 0; a < np; ++a) {
    for (std::size_t b = 0; b < np; ++b) {
      for (std::size_t c = 0; c < np; ++c) {
        if (b + 1 < np) {
          const double diff = at(a, b + 1, c) - at(a, b, c);
          ++rep.comparisons;
          rep.worst = std::min(rep.worst, diff);
          if (diff < -kTol) ++rep.violations;
        }
        if (c + 1 < np) {
          const double diff = at(a, b, c + 1) - at(a, b, c);
          ++rep.comparisons;
          rep.worst = std::min(rep.worst, diff);
          if (diff < -kTol) ++rep.violations;
        }
      }
    }
  }
  rep.passed = rep.violations == 0;
  return rep;
}

}  // namespace mdprod
