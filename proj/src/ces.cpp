#include "mdprod/ces.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>

#include "mdprod/errors.hpp"

namespace mdprod {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct PairColumns {
  VectorXd ml, ml_lag, gap, gap_lag;
  MatrixXd z_lag;
};

PairColumns step1_columns(const PanelDataset& ds, const std::vector<LagPair>& pairs) {
  const auto n = static_cast<Eigen::Index>(pairs.size());
  PairColumns c;
  c.ml.resize(n);
  c.ml_lag.resize(n);
  c.gap.resize(n);
  c.gap_lag.resize(n);
  c.z_lag.resize(n, static_cast<Eigen::Index>(ds.dim_z()));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& cur = ds[pairs[static_cast<std::size_t>(i)].current];
    const auto& prev = ds[pairs[static_cast<std::size_t>(i)].previous];
    c.ml[i] = cur.m - cur.l;
    c.ml_lag[i] = prev.m - prev.l;
    c.gap[i] = ds.price_ratio_m(cur.t) - ds.price_ratio_l(cur.t);
    c.gap_lag[i] = ds.price_ratio_m(prev.t) - ds.price_ratio_l(prev.t);
    for (std::size_t j = 0; j < ds.dim_z(); ++j) c.z_lag(i, static_cast<Eigen::Index>(j)) = prev.z[j];
  }
  return c;
}

VectorXd phi_column(const VectorXd& ml, const VectorXd& gap, double sigma, double beta_m) {
  return (ml.array() - sigma * std::log(beta_m) + sigma * gap.array()) / (1.0 - sigma);
}

// OLS of y on the columns of x; empty x returns an empty vector.
VectorXd ols(const MatrixXd& x, const VectorXd& y) {
  if (x.cols() == 0) return VectorXd();
  return x.colPivHouseholderQr().solve(y);
}

std::optional<OptimResult> best_of(std::vector<std::pair<double, VectorXd>> starts, NlsProblem problem,
                                   std::size_t keep, const OptimOptions& options) {
  std::stable_sort(starts.begin(), starts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::optional<OptimResult> best;
  for (std::size_t s = 0; s < std::min(keep, starts.size()); ++s) {
    if (!std::isfinite(starts[s].first)) break;
    problem.initial = starts[s].second;
    try {
      OptimResult r = minimize_nls(problem, options);
      if (!best || r.objective < best->objective) best = std::move(r);
    } catch (const EstimationError&) {
    }
  }
  return best;
}

}  // namespace

double ces_phi_proxy(double m_minus_l, double sigma, double beta_m, double price_gap) {
  if (sigma == 1.0) throw DomainError("ces_phi_proxy: sigma must differ from 1");
  return (m_minus_l - sigma * std::log(beta_m) + sigma * price_gap) / (1.0 - sigma);
}

CesStep1Result ces_step1_nls(const PanelDataset& ds, const std::vector<LagPair>& pairs,
                             const OptimOptions& options) {
  if (pairs.empty()) throw EstimationError("insufficient temporal depth: no lag pairs for the CES step");
  const PairColumns c = step1_columns(ds, pairs);
  const auto n = c.ml.size();
  const auto dz = c.z_lag.cols();
  const auto p = 3 + dz;

  auto residual = [&](const VectorXd& a) -> VectorXd {
    const VectorXd phi = phi_column(c.ml, c.gap, a[0], a[1]);
    const VectorXd phi_lag = phi_column(c.ml_lag, c.gap_lag, a[0], a[1]);
    VectorXd e = phi - a[2] * phi_lag;
    if (dz > 0) e -= c.z_lag * a.tail(dz);
    return e;
  };
  auto jacobian = [&](const VectorXd& a) -> MatrixXd {
    const double s = a[0], bm = a[1], rho = a[2];
    const double lb = std::log(bm), w = 1.0 / ((1.0 - s) * (1.0 - s));
    MatrixXd j(n, p);
    j.col(0) = w * ((c.ml.array() + c.gap.array() - lb) - rho * (c.ml_lag.array() + c.gap_lag.array() - lb));
    j.col(1).setConstant(-s / ((1.0 - s) * bm) * (1.0 - rho));
    j.col(2) = -phi_column(c.ml_lag, c.gap_lag, s, bm);
    if (dz > 0) j.rightCols(dz) = -c.z_lag;
    return j;
  };

  NlsProblem prob;
  prob.residual = residual;
  prob.jacobian = jacobian;

  struct Bracket {
    double lo, hi;
    std::vector<double> sigmas;
  };
  const Bracket brackets[] = {{0.05, 0.95, {0.2, 0.4, 0.6, 0.8}}, {1.05, 20.0, {1.5, 3.0, 8.0}}};
  std::optional<OptimResult> best;
  for (const auto& b : brackets) {
    std::vector<std::pair<double, VectorXd>> starts;
    for (double s : b.sigmas) {
      for (double bm : {0.25, 1.0, 4.0}) {
        // rho (and rho_2) from OLS given (sigma, bM).
        const VectorXd phi = phi_column(c.ml, c.gap, s, bm);
        MatrixXd x(n, 1 + dz);
        x.col(0) = phi_column(c.ml_lag, c.gap_lag, s, bm);
        if (dz > 0) x.rightCols(dz) = c.z_lag;
        const VectorXd coef = ols(x, phi);
        VectorXd a(p);
        a << s, bm, coef;
        const VectorXd e = residual(a);
        starts.emplace_back(e.allFinite() ? e.squaredNorm() : kInf, a);
      }
    }
    VectorXd lo = VectorXd::Constant(p, -kInf), hi = VectorXd::Constant(p, kInf);
    lo[0] = b.lo;
    hi[0] = b.hi;
    lo[1] = 1e-8;
    prob.lower = lo;
    prob.upper = hi;
    auto r = best_of(starts, prob, 3, options);
    if (r && (!best || r->objective < best->objective)) best = std::move(r);
  }
  if (!best) throw EstimationError("CES step 1: every start failed");
  if (!best->converged) {
    std::ostringstream os;
    os << "CES step 1 NLS did not converge (objective " << best->objective << ", gradient norm " << best->gradient_norm << ")";
    throw EstimationError(os.str());
  }

  CesStep1Result out;
  out.point = best->point;
  out.sigma = out.point[0];
  out.beta_m = out.point[1];
  out.rho_phi_1 = out.point[2];
  for (Eigen::Index j = 0; j < dz; ++j) out.rho_phi_2.push_back(out.point[3 + j]);
  out.objective = best->objective;
  out.converged = best->converged;
  out.iterations = best->iterations;
  out.residual = residual(out.point);
  const double gmin = std::min(c.gap.minCoeff(), c.gap_lag.minCoeff());
  const double gmax = std::max(c.gap.maxCoeff(), c.gap_lag.maxCoeff());
  out.constant_price_gap = gmax - gmin < 1e-12;
  if (out.constant_price_gap) {
    out.warnings.push_back(
        "price gap ln P^M - ln P^L is constant: sigma and beta_m are identified only through sigma (gap - ln beta_m)");
  }
  if (std::abs(out.sigma - 0.95) < 1e-9 || std::abs(out.sigma - 1.05) < 1e-9 || std::abs(out.sigma - 0.05) < 1e-9 ||
      std::abs(out.sigma - 20.0) < 1e-9) {
    out.warnings.push_back("CES sigma at a search bound");
  }
  return out;
}

CesStep2Result ces_step2_nls(const PanelDataset& ds, const std::vector<LagPair>& pairs, double sigma,
                             double beta_m, const std::vector<double>& phi_hat, double theta,
                             const OptimOptions& options) {
  if (pairs.empty()) throw EstimationError("insufficient temporal depth: no lag pairs for the CES step");
  if (sigma == 1.0 || !(sigma > 0.0)) throw DomainError("ces_step2_nls: sigma must be positive and differ from 1");
  if (phi_hat.size() != ds.size()) throw std::invalid_argument("ces_step2_nls: phi_hat size mismatch");
  const double r = (1.0 - sigma) / sigma;
  const auto n = static_cast<Eigen::Index>(pairs.size());
  const auto dx = static_cast<Eigen::Index>(ds.dim_x());
  VectorXd y(n), ks(n), ks_lag(n), hs(n), hs_lag(n), mstar_lag(n);
  MatrixXd x_lag(n, dx);
  auto hstar = [&](std::size_t i) {
    const auto& o = ds[i];
    return std::exp(-r * (phi_hat[i] + o.l)) + beta_m * std::exp(-r * o.m);
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t cu = pairs[static_cast<std::size_t>(i)].current;
    const std::size_t pr = pairs[static_cast<std::size_t>(i)].previous;
    y[i] = ds[cu].y;
    ks[i] = std::exp(-r * ds[cu].k);
    ks_lag[i] = std::exp(-r * ds[pr].k);
    hs[i] = hstar(cu);
    hs_lag[i] = hstar(pr);
    mstar_lag[i] = ds.price_ratio_m(ds[pr].t) + ds[pr].m / sigma - std::log(beta_m);
    for (Eigen::Index j = 0; j < dx; ++j) x_lag(i, j) = ds[pr].x[static_cast<std::size_t>(j)];
  }
  const auto p = 4 + dx;

  auto omega_lag = [&](double nu, double bk) -> VectorXd {
    return mstar_lag.array() + (1.0 + nu / r) * (bk * ks_lag.array() + hs_lag.array()).log();
  };
  auto residual = [&](const VectorXd& a) -> VectorXd {
    const double nu = a[0], bk = a[1];
    VectorXd e = y.array() + (nu / r) * (bk * ks.array() + hs.array()).log() - a[2];
    e -= a[3] * omega_lag(nu, bk);
    if (dx > 0) e -= x_lag * a.tail(dx);
    return e;
  };
  auto jacobian = [&](const VectorXd& a) -> MatrixXd {
    const double nu = a[0], bk = a[1], rho = a[3];
    const Eigen::ArrayXd ac = bk * ks.array() + hs.array();
    const Eigen::ArrayXd ap = bk * ks_lag.array() + hs_lag.array();
    MatrixXd j(n, p);
    j.col(0) = (ac.log() - rho * ap.log()) / r;
    j.col(1) = (nu / r) * ks.array() / ac - rho * (1.0 + nu / r) * ks_lag.array() / ap;
    j.col(2).setConstant(-1.0);
    j.col(3) = -omega_lag(nu, bk);
    if (dx > 0) j.rightCols(dx) = -x_lag;
    return j;
  };

  std::vector<std::pair<double, VectorXd>> starts;
  for (double nu : {0.5, 0.9, 1.3}) {
    for (double bk : {0.05, 0.2, 0.5, 1.0}) {
      const VectorXd lhs = y.array() + (nu / r) * (bk * ks.array() + hs.array()).log();
      MatrixXd x(n, 2 + dx);
      x.col(0).setOnes();
      x.col(1) = omega_lag(nu, bk);
      if (dx > 0) x.rightCols(dx) = x_lag;
      VectorXd a(p);
      a << nu, bk, ols(x, lhs);
      const VectorXd e = residual(a);
      starts.emplace_back(e.allFinite() ? e.squaredNorm() : kInf, a);
    }
  }
  NlsProblem prob;
  prob.residual = residual;
  prob.jacobian = jacobian;
  VectorXd lo = VectorXd::Constant(p, -kInf);
  lo[0] = 1e-6;
  lo[1] = 0.0;
  prob.lower = lo;
  auto best = best_of(starts, prob, 3, options);
  if (!best) throw EstimationError("CES step 2: every start failed");
  if (!best->converged) {
    std::ostringstream os;
    os << "CES step 2 NLS did not converge (objective " << best->objective << ", gradient norm " << best->gradient_norm << ")";
    throw EstimationError(os.str());
  }
  CesStep2Result out;
  out.point = best->point;
  out.nu = out.point[0];
  out.beta_k = out.point[1];
  out.intercept = out.point[2];
  out.rho_omega_1 = out.point[3];
  out.rho_omega_0 = out.intercept + out.rho_omega_1 * std::log(theta * out.nu);
  for (Eigen::Index j = 0; j < dx; ++j) out.rho_omega_2.push_back(out.point[4 + j]);
  out.objective = best->objective;
  out.converged = best->converged;
  out.iterations = best->iterations;
  out.residual = residual(out.point);
  return out;
}

std::vector<double> CesEstimate::parameter_vector() const {
  std::vector<double> v{params.sigma,  params.nu,        params.beta_k,    params.beta_m,
                        laws.rho_phi_1, laws.rho_omega_0, laws.rho_omega_1};
  v.insert(v.end(), laws.rho_phi_2.begin(), laws.rho_phi_2.end());
  v.insert(v.end(), laws.rho_omega_2.begin(), laws.rho_omega_2.end());
  return v;
}

std::vector<std::string> CesEstimate::parameter_names() const {
  std::vector<std::string> v{"sigma", "nu", "beta_k", "beta_m", "rho_phi_1", "rho_omega_0", "rho_omega_1"};
  for (std::size_t j = 0; j < laws.rho_phi_2.size(); ++j) v.push_back("rho_phi_2_" + std::to_string(j + 1));
  for (std::size_t j = 0; j < laws.rho_omega_2.size(); ++j) v.push_back("rho_omega_2_" + std::to_string(j + 1));
  return v;
}

CesEstimate estimate_ces(const PanelDataset& ds, const OptimOptions& options) {
  if (ds.empty()) throw DataError("empty dataset");
  CesEstimate est;
  est.pairs = build_lag_pairs(ds);
  if (est.pairs.empty()) throw EstimationError("insufficient temporal depth: no consecutive periods in the panel");
  est.cost_share = step1_cost_share(ds);
  est.step1 = ces_step1_nls(ds, est.pairs, options);
  for (const auto& w : est.step1.warnings) est.warnings.push_back(w);

  const double sigma = est.step1.sigma, bm = est.step1.beta_m;
  est.phi_hat.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& o = ds[i];
    est.phi_hat[i] = ces_phi_proxy(o.m - o.l, sigma, bm, ds.price_ratio_m(o.t) - ds.price_ratio_l(o.t));
  }
  est.step2 = ces_step2_nls(ds, est.pairs, sigma, bm, est.phi_hat, est.cost_share.theta, options);

  est.params.sigma = sigma;
  est.params.beta_m = bm;
  est.params.nu = est.step2.nu;
  est.params.beta_k = est.step2.beta_k;
  est.params.theta = est.cost_share.theta;
  est.laws.rho_phi_1 = est.step1.rho_phi_1;
  est.laws.rho_phi_2 = est.step1.rho_phi_2;
  est.laws.rho_omega_0 = est.step2.rho_omega_0;
  est.laws.rho_omega_1 = est.step2.rho_omega_1;
  est.laws.rho_omega_2 = est.step2.rho_omega_2;

  // omega from the material proxy; eta is what the output equation leaves.
  const double r = est.params.r(), nu = est.params.nu;
  est.omega_hat.resize(ds.size());
  est.eta_hat.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& o = ds[i];
    const double a = est.params.beta_k * std::exp(-r * o.k) + std::exp(-r * (est.phi_hat[i] + o.l)) +
                     bm * std::exp(-r * o.m);
    const double mstar = ds.price_ratio_m(o.t) + o.m / sigma - std::log(bm);
    est.omega_hat[i] = mstar + (1.0 + nu / r) * std::log(a) - std::log(est.params.theta * nu);
    est.eta_hat[i] = o.y - ces_output(o.k, o.l, o.m, est.phi_hat[i], est.params) - est.omega_hat[i];
  }
  return est;
}

void write_ces_estimate(const std::string& params_path, const std::string& series_path, const PanelDataset& ds,
                        const CesEstimate& est) {
  {
    std::ofstream out(params_path);
    if (!out) throw DataError("cannot open " + params_path + " for writing");
    out << std::setprecision(17) << "technology,parameter,value\n";
    const auto names = est.parameter_names();
    const auto values = est.parameter_vector();
    for (std::size_t j = 0; j < names.size(); ++j) out << "ces," << names[j] << ',' << values[j] << '\n';
    out << "ces,theta," << est.params.theta << '\n';
  }
  std::ofstream out(series_path);
  if (!out) throw DataError("cannot open " + series_path + " for writing");
  out << std::setprecision(17) << "firm_id,year,phi_hat,omega_hat,eta_hat\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds[i].firm_id << ',' << ds[i].t << ',' << est.phi_hat[i] << ',' << est.omega_hat[i] << ','
        << est.eta_hat[i] << '\n';
  }
}

}  // namespace mdprod
