#include "mdprod/translog.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "mdprod/errors.hpp"

namespace mdprod {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

Step1Result step1_cost_share(const std::vector<double>& ln_r) {
  if (ln_r.empty()) throw DataError("step 1 needs at least one observation");
  const double n = static_cast<double>(ln_r.size());
  // Shifted by the first value so a constant series averages exactly.
  double shifted = 0.0;
  for (double v : ln_r) shifted += v - ln_r.front();
  const double mean_ln_r = ln_r.front() + shifted / n;
  double denom = 0.0;
  for (double v : ln_r) denom += std::exp(mean_ln_r - v);
  denom /= n;
  Step1Result out;
  out.theta = denom;
  out.delta_lm = std::exp(mean_ln_r) / denom;
  const double level = mean_ln_r;  // ln(theta * delta_lm)
  out.eta_hat.reserve(ln_r.size());
  for (double v : ln_r) out.eta_hat.push_back(level - v);
  return out;
}

Step1Result step1_cost_share(const PanelDataset& dataset) {
  std::vector<double> ln_r;
  ln_r.reserve(dataset.size());
  for (const auto& o : dataset.observations()) ln_r.push_back(o.ln_r);
  return step1_cost_share(ln_r);
}

double phi_proxy(double m_minus_l, double s_l, double beta_0, double beta_l, double delta_lm) {
  if (beta_0 == 0.0) throw DomainError("phi proxy undefined for beta_0 = 0");
  return m_minus_l + beta_l / beta_0 - (delta_lm / beta_0) * s_l;
}

Step2Data build_step2_data(const PanelDataset& dataset, const std::vector<LagPair>& pairs, int capital_lags,
                           const std::vector<double>* ml_override) {
  if (capital_lags < 0) throw ConfigError("capital_lags must be nonnegative");
  if (ml_override && ml_override->size() != dataset.size()) {
    throw std::invalid_argument("ml_override must have one entry per observation");
  }
  const auto prev = previous_index(dataset, pairs);
  auto ml_of = [&](std::size_t i) {
    const auto& o = dataset[i];
    return ml_override ? (*ml_override)[i] : o.m - o.l;
  };
  // Keep pairs with the required capital history.
  std::vector<LagPair> kept;
  std::vector<std::vector<double>> k_hist;
  for (const auto& p : pairs) {
    std::vector<double> ks{dataset[p.current].k};
    std::optional<std::size_t> at = p.current;
    bool ok = true;
    for (int lag = 1; lag <= capital_lags; ++lag) {
      at = prev[*at];
      if (!at) {
        ok = false;
        break;
      }
      ks.push_back(dataset[*at].k);
    }
    if (!ok) continue;
    kept.push_back(p);
    k_hist.push_back(std::move(ks));
  }
  const auto n = static_cast<Eigen::Index>(kept.size());
  const auto dz = static_cast<Eigen::Index>(dataset.dim_z());
  Step2Data d;
  d.pairs = kept;
  d.ml.resize(n);
  d.ml_lag.resize(n);
  d.s.resize(n);
  d.s_lag.resize(n);
  d.z_lag.resize(n, dz);
  const Eigen::Index nbase = 2 + dz + 1 + capital_lags;
  d.base.resize(n, nbase);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& cur = dataset[kept[r].current];
    const auto& lag = dataset[kept[r].previous];
    d.ml[r] = ml_of(kept[r].current);
    d.ml_lag[r] = ml_of(kept[r].previous);
    d.s[r] = cur.s_l;
    d.s_lag[r] = lag.s_l;
    for (Eigen::Index j = 0; j < dz; ++j) d.z_lag(r, j) = lag.z[j];
    Eigen::Index c = 0;
    d.base(r, c++) = d.ml_lag[r];
    d.base(r, c++) = d.s_lag[r];
    for (Eigen::Index j = 0; j < dz; ++j) d.base(r, c++) = d.z_lag(r, j);
    for (double kv : k_hist[r]) d.base(r, c++) = kv;
  }
  d.instruments.resize(n, nbase + 1);
  d.instruments.col(0).setOnes();
  d.instruments.rightCols(nbase) = d.base;
  return d;
}

VectorXd step2_residual(const Step2Data& d, double delta, const VectorXd& a) {
  const double b0 = a[0], bl = a[1], rho = a[2];
  if (b0 == 0.0) return VectorXd::Constant(d.ml.size(), kNaN);
  VectorXd phi = d.ml.array() + bl / b0 - (delta / b0) * d.s.array();
  VectorXd phi_lag = d.ml_lag.array() + bl / b0 - (delta / b0) * d.s_lag.array();
  VectorXd eps = phi - rho * phi_lag;
  if (d.z_lag.cols() > 0) eps -= d.z_lag * a.tail(d.z_lag.cols());
  return eps;
}

MatrixXd step2_jacobian(const Step2Data& d, double delta, const VectorXd& a) {
  const double b0 = a[0], bl = a[1], rho = a[2];
  const auto n = d.ml.size();
  MatrixXd j(n, a.size());
  j.col(0) = (-bl / (b0 * b0) * (1.0 - rho)) + (delta / (b0 * b0)) * (d.s.array() - rho * d.s_lag.array());
  j.col(1).setConstant((1.0 - rho) / b0);
  j.col(2) = -(d.ml_lag.array() + bl / b0 - (delta / b0) * d.s_lag.array());
  if (d.z_lag.cols() > 0) j.rightCols(d.z_lag.cols()) = -d.z_lag;
  return j;
}

double step2_objective(const Step2Data& d, double delta, const VectorXd& alpha, const MatrixXd& weight) {
  const VectorXd g = d.instruments.transpose() * step2_residual(d, delta, alpha) / static_cast<double>(d.ml.size());
  return g.dot(weight * g);
}

std::vector<VectorXd> step2_start_grid(double delta, std::size_t dim_z, bool positive_beta0) {
  static const double kBeta0[] = {-0.2, -0.1, -0.05, -0.02, -0.01, -0.005};
  static const double kShare[] = {0.2, 0.4, 0.6, 0.8};
  std::vector<VectorXd> grid;
  for (int sign : {1, -1}) {
    if (sign < 0 && !positive_beta0) break;
    for (double b0 : kBeta0) {
    for (double f : kShare) {
      VectorXd a = VectorXd::Zero(3 + static_cast<Eigen::Index>(dim_z));
      a[0] = sign * b0;
      a[1] = f * delta;
      a[2] = 0.5;
      grid.push_back(a);
    }
    }
  }
  return grid;
}

double step2_beta0_floor(const Step2Data& d, double delta) {
  double lo = 0.25;
  for (Eigen::Index r = 0; r < d.s.size(); ++r) {
    lo = std::min({lo, d.s[r] * (1.0 - d.s[r]), d.s_lag[r] * (1.0 - d.s_lag[r])});
  }
  return -delta * lo;
}

Step2Result step2_gmm(const Step2Data& d, double delta, const Step2Options& options) {
  if (d.pairs.empty()) throw EstimationError("insufficient temporal depth: no lag pairs for step 2");
  if (!(delta > 0.0)) throw EstimationError("step 2 needs a positive delta_lm");
  const auto p = static_cast<Eigen::Index>(3 + d.z_lag.cols());
  if (d.instruments.cols() < p) throw EstimationError("fewer instruments than step-2 parameters");

  const Weighting first = options.weighting == Weighting::Identity ? Weighting::Identity
                                                                  : Weighting::InverseInstrumentGram;
  MatrixXd weight = first_stage_weight(d.instruments, first);

  GmmProblem prob;
  prob.instruments = d.instruments;
  prob.residual = [&](const VectorXd& a) { return step2_residual(d, delta, a); };
  prob.jacobian = [&](const VectorXd& a) { return step2_jacobian(d, delta, a); };

  const double floor = options.enforce_branch ? step2_beta0_floor(d, delta) : -kInf;

  auto run_from = [&](const VectorXd& start, const MatrixXd& w) {
    GmmProblem local = prob;
    local.initial = start;
    VectorXd lo = VectorXd::Constant(p, -kInf), hi = VectorXd::Constant(p, kInf);
    if (start[0] < 0.0) {
      lo[0] = floor;
      hi[0] = -1e-10;
    } else {
      lo[0] = 1e-10;
    }
    local.lower = lo;
    local.upper = hi;
    return minimize_gmm(local, w, options.optim);
  };

  auto multistart = [&](const MatrixXd& w, const std::vector<VectorXd>& grid) {
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (grid[i][0] <= floor) continue;
      const double v = step2_objective(d, delta, grid[i], w);
      if (std::isfinite(v)) scored.emplace_back(v, i);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    const std::size_t count = std::min<std::size_t>(scored.size(), static_cast<std::size_t>(std::max(1, options.starts)));
    std::optional<OptimResult> best;
    for (std::size_t s = 0; s < count; ++s) {
      OptimResult r;
      try {
        r = run_from(grid[scored[s].second], w);
      } catch (const EstimationError&) {
        continue;
      }
      if (!best || r.objective < best->objective) best = std::move(r);
    }
    if (!best) throw EstimationError("step 2: every GMM start failed");
    return *best;
  };

  OptimResult best = multistart(weight, step2_start_grid(delta, static_cast<std::size_t>(d.z_lag.cols()), options.positive_beta0));
  if (options.weighting == Weighting::TwoStepEfficient) {
    weight = efficient_weight(d.instruments, step2_residual(d, delta, best.point));
    best = run_from(best.point, weight);
  }
  if (!best.converged) {
    std::ostringstream os;
    os << "step 2 GMM did not converge (gradient norm " << best.gradient_norm << " after " << best.iterations
       << " iterations, beta_0=" << best.point[0] << ", beta_l=" << best.point[1] << ")";
    throw EstimationError(os.str());
  }

  Step2Result out;
  out.alpha = best.point;
  out.beta_0 = best.point[0];
  out.beta_l = best.point[1];
  out.beta_m = delta - out.beta_l;
  out.rho_phi_1 = best.point[2];
  for (Eigen::Index j = 3; j < p; ++j) out.rho_phi_2.push_back(best.point[j]);
  out.objective = best.objective;
  out.converged = best.converged;
  out.iterations = best.iterations;
  out.gradient_norm = best.gradient_norm;
  out.residual = step2_residual(d, delta, best.point);
  out.beta_0_floor = floor;
  if (std::isfinite(floor) && out.beta_0 <= floor * (1.0 - 1e-6)) {
    out.warnings.push_back("beta_0 is at the branch floor " + std::to_string(floor));
  }
  // Labor elasticity implied at each current observation of the sample.
  std::size_t bad = 0;
  for (Eigen::Index r = 0; r < d.ml.size(); ++r) {
    const double phi = phi_proxy(d.ml[r], d.s[r], out.beta_0, out.beta_l, delta);
    const double x = d.ml[r] - phi;
    if (!(out.beta_l + out.beta_0 * x > 0.0)) ++bad;
  }
  out.nonpositive_labor_share = d.ml.size() ? static_cast<double>(bad) / static_cast<double>(d.ml.size()) : 0.0;
  if (out.nonpositive_labor_share > 0.01) {
    out.warnings.push_back("implied labor elasticity is nonpositive for more than 1% of observations");
  }
  return out;
}

InformationMatrixReport information_matrix(const Step2Data& d, double delta, const VectorXd& alpha) {
  if (alpha[0] == 0.0) throw DomainError("information matrix undefined for beta_0 = 0");
  InformationMatrixReport rep;
  rep.matrix = d.instruments.transpose() * step2_jacobian(d, delta, alpha) / static_cast<double>(d.ml.size());
  Eigen::JacobiSVD<MatrixXd> svd(rep.matrix);
  rep.singular_values = svd.singularValues();
  const double top = rep.singular_values.size() ? rep.singular_values[0] : 0.0;
  rep.rank = 0;
  for (Eigen::Index i = 0; i < rep.singular_values.size(); ++i) {
    if (rep.singular_values[i] > 1e-10 * top) ++rep.rank;
  }
  rep.full_column_rank = top > 0.0 && rep.rank == rep.matrix.cols();
  return rep;
}

std::optional<double> omega_proxy(const PanelObservation& o, double phi, const TranslogParams& p,
                                  double price_ratio_m, double price_ratio_l, ProxyChoice choice) {
  const double x = o.m - phi - o.l;
  const double quad = 0.5 * p.beta_0 * x * x;
  const double log_theta = std::log(p.theta);
  auto material = [&]() -> std::optional<double> {
    const double arg = p.beta_m - p.beta_0 * x;
    if (!(arg > 0.0)) return std::nullopt;
    return price_ratio_m - log_theta - std::log(arg) + (1.0 - p.beta_m) * o.m - p.beta_l * (phi + o.l) + quad;
  };
  auto labor = [&]() -> std::optional<double> {
    const double arg = p.beta_l + p.beta_0 * x;
    if (!(arg > 0.0)) return std::nullopt;
    return price_ratio_l - log_theta - std::log(arg) + (1.0 - p.beta_l) * o.l - p.beta_m * o.m - p.beta_l * phi +
           quad;
  };
  switch (choice) {
    case ProxyChoice::Material:
      return material();
    case ProxyChoice::Labor:
      return labor();
    case ProxyChoice::Average: {
      const auto a = material(), b = labor();
      if (!a || !b) return std::nullopt;
      return 0.5 * (*a + *b);
    }
  }
  return std::nullopt;
}

double y_star(const PanelObservation& o, double phi, const TranslogParams& p) {
  const double x = o.m - phi - o.l;
  return o.y - p.beta_m * o.m - p.beta_l * (phi + o.l) + 0.5 * p.beta_0 * x * x;
}

Step3Data build_step3_data(const PanelDataset& dataset, const std::vector<LagPair>& pairs,
                           const std::vector<double>& ystar, const std::vector<double>& mstar) {
  if (ystar.size() != dataset.size() || mstar.size() != dataset.size()) {
    throw std::invalid_argument("step 3 inputs must have one entry per observation");
  }
  Step3Data d;
  std::vector<LagPair> kept;
  for (const auto& p : pairs) {
    if (!std::isfinite(ystar[p.current])) {
      d.dropped.push_back({p.current, "y* not available"});
      continue;
    }
    if (!std::isfinite(mstar[p.previous])) {
      d.dropped.push_back({p.previous, "omega proxy has a nonpositive log argument"});
      continue;
    }
    kept.push_back(p);
  }
  const auto n = static_cast<Eigen::Index>(kept.size());
  const auto dx = static_cast<Eigen::Index>(dataset.dim_x());
  d.pairs = kept;
  d.ystar.resize(n);
  d.k.resize(n);
  d.k_lag.resize(n);
  d.mstar_lag.resize(n);
  d.x_lag.resize(n, dx);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& cur = dataset[kept[r].current];
    const auto& lag = dataset[kept[r].previous];
    d.ystar[r] = ystar[kept[r].current];
    d.k[r] = cur.k;
    d.k_lag[r] = lag.k;
    d.mstar_lag[r] = mstar[kept[r].previous];
    for (Eigen::Index j = 0; j < dx; ++j) d.x_lag(r, j) = lag.x[j];
  }
  return d;
}

namespace {

// Unpacks gamma into (bK, bKK, r0, r1, tail offset).
struct Gamma {
  double bk, bkk, r0, r1;
  Eigen::Index tail;
};

Gamma unpack(const VectorXd& g, bool kk_zero) {
  if (kk_zero) return {g[0], 0.0, g[1], g[2], 3};
  return {g[0], g[1], g[2], g[3], 4};
}

}  // namespace

VectorXd step3_residual(const Step3Data& d, const VectorXd& gamma, bool kk_zero) {
  const Gamma g = unpack(gamma, kk_zero);
  const auto ksq = d.k.array().square(), klsq = d.k_lag.array().square();
  VectorXd omega_lag = d.mstar_lag.array() - g.bk * d.k_lag.array() - 0.5 * g.bkk * klsq;
  VectorXd e = d.ystar.array() - g.bk * d.k.array() - 0.5 * g.bkk * ksq - g.r0 - g.r1 * omega_lag.array();
  if (d.x_lag.cols() > 0) e -= d.x_lag * gamma.segment(g.tail, d.x_lag.cols());
  return e;
}

MatrixXd step3_jacobian(const Step3Data& d, const VectorXd& gamma, bool kk_zero) {
  const Gamma g = unpack(gamma, kk_zero);
  const auto n = d.k.size();
  MatrixXd j(n, gamma.size());
  Eigen::Index c = 0;
  j.col(c++) = -d.k.array() + g.r1 * d.k_lag.array();
  if (!kk_zero) j.col(c++) = -0.5 * d.k.array().square() + 0.5 * g.r1 * d.k_lag.array().square();
  j.col(c++).setConstant(-1.0);
  j.col(c++) = -(d.mstar_lag.array() - g.bk * d.k_lag.array() - 0.5 * g.bkk * d.k_lag.array().square());
  if (d.x_lag.cols() > 0) j.rightCols(d.x_lag.cols()) = -d.x_lag;
  return j;
}

Step3Result step3_nls(const Step3Data& d, const Step3Options& options) {
  const auto n = d.k.size();
  const auto dx = d.x_lag.cols();
  const bool kk0 = options.beta_kk_zero;
  const Eigen::Index p = (kk0 ? 3 : 4) + dx;
  if (n <= p) throw EstimationError("insufficient temporal depth: too few lag pairs for step 3");

  // Unrestricted OLS: y* on k, k^2, 1, m*(t-1), k(t-1), k(t-1)^2, x(t-1).
  const Eigen::Index cols = (kk0 ? 4 : 6) + dx;
  MatrixXd X(n, cols);
  Eigen::Index c = 0;
  X.col(c++) = d.k;
  if (!kk0) X.col(c++) = 0.5 * d.k.array().square();
  X.col(c++).setOnes();
  X.col(c++) = d.mstar_lag;
  X.col(c++) = d.k_lag;
  if (!kk0) X.col(c++) = 0.5 * d.k_lag.array().square();
  if (dx > 0) X.rightCols(dx) = d.x_lag;
  const VectorXd ols = X.colPivHouseholderQr().solve(d.ystar);
  VectorXd start(p);
  c = 0;
  start[c++] = ols[0];
  if (!kk0) start[c++] = ols[1];
  start[c++] = ols[kk0 ? 1 : 2];
  start[c++] = ols[kk0 ? 2 : 3];
  if (dx > 0) start.tail(dx) = ols.tail(dx);
  if (!start.allFinite()) start = VectorXd::Zero(p);

  NlsProblem prob;
  prob.residual = [&](const VectorXd& g) { return step3_residual(d, g, kk0); };
  prob.jacobian = [&](const VectorXd& g) { return step3_jacobian(d, g, kk0); };
  prob.initial = start;
  OptimResult r = minimize_nls(prob, options.optim);
  if (!r.converged) {
    std::ostringstream os;
    os << "step 3 NLS did not converge (gradient norm " << r.gradient_norm << " after " << r.iterations
       << " iterations)";
    throw EstimationError(os.str());
  }
  Step3Result out;
  out.gamma = r.point;
  const Gamma g = unpack(r.point, kk0);
  out.beta_k = g.bk;
  out.beta_kk = g.bkk;
  out.rho_omega_0 = g.r0;
  out.rho_omega_1 = g.r1;
  for (Eigen::Index j = 0; j < dx; ++j) out.rho_omega_2.push_back(r.point[g.tail + j]);
  out.objective = r.objective;
  out.converged = r.converged;
  out.iterations = r.iterations;
  out.residual = step3_residual(d, r.point, kk0);
  return out;
}

LatentSeries recover_productivity(const PanelDataset& dataset, const TranslogParams& p) {
  LatentSeries out;
  const double level = std::log(p.theta * p.delta_lm());
  for (const auto& o : dataset.observations()) {
    const double phi = phi_proxy(o.m - o.l, o.s_l, p.beta_0, p.beta_l, p.delta_lm());
    const double eta = level - o.ln_r;
    const double omega = y_star(o, phi, p) - p.beta_k * o.k - 0.5 * p.beta_kk * o.k * o.k - eta;
    out.phi.push_back(phi);
    out.omega.push_back(omega);
    out.eta.push_back(eta);
  }
  return out;
}

}  // namespace mdprod
