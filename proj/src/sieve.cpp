#include "mdprod/sieve.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "mdprod/errors.hpp"

namespace mdprod {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void monomials(std::size_t dim, int total, std::vector<int>& prefix, std::vector<std::vector<int>>& out) {
  if (prefix.size() + 1 == dim) {
    prefix.push_back(total);
    out.push_back(prefix);
    prefix.pop_back();
    return;
  }
  for (int e = total; e >= 0; --e) {
    prefix.push_back(e);
    monomials(dim, total - e, prefix, out);
    prefix.pop_back();
  }
}

// Position of the linear term in variable `var`, or -1.
Eigen::Index linear_term(const SieveBasis& b, std::size_t var) {
  for (std::size_t t = 0; t < b.terms.size(); ++t) {
    int total = 0;
    for (int e : b.terms[t]) total += e;
    if (total == 1 && b.terms[t][var] == 1) return static_cast<Eigen::Index>(t);
  }
  return -1;
}

double dphi_dbeta0(double s, double beta_0, double beta_l, double delta) {
  return (-beta_l + delta * s) / (beta_0 * beta_0);
}

}  // namespace

SieveBasis build_basis(std::size_t dim, int degree, bool intercept) {
  if (dim < 1 || degree < 1) throw ConfigError("sieve basis needs dim >= 1 and degree >= 1");
  SieveBasis b;
  b.dim = dim;
  b.degree = degree;
  b.intercept = intercept;
  std::vector<int> prefix;
  for (int total = intercept ? 0 : 1; total <= degree; ++total) monomials(dim, total, prefix, b.terms);
  return b;
}

MatrixXd evaluate_basis(const SieveBasis& b, const MatrixXd& u) {
  if (static_cast<std::size_t>(u.cols()) != b.dim) throw std::invalid_argument("basis input has the wrong width");
  MatrixXd out(u.rows(), static_cast<Eigen::Index>(b.size()));
  for (std::size_t t = 0; t < b.size(); ++t) {
    VectorXd col = VectorXd::Ones(u.rows());
    for (std::size_t j = 0; j < b.dim; ++j) {
      const int e = b.terms[t][j];
      if (e > 0) col.array() *= u.col(static_cast<Eigen::Index>(j)).array().pow(e);
    }
    out.col(static_cast<Eigen::Index>(t)) = col;
  }
  return out;
}

MatrixXd evaluate_basis_derivative(const SieveBasis& b, const MatrixXd& u, std::size_t var) {
  MatrixXd out(u.rows(), static_cast<Eigen::Index>(b.size()));
  for (std::size_t t = 0; t < b.size(); ++t) {
    const int ev = b.terms[t][var];
    if (ev == 0) {
      out.col(static_cast<Eigen::Index>(t)).setZero();
      continue;
    }
    VectorXd col = VectorXd::Constant(u.rows(), static_cast<double>(ev));
    for (std::size_t j = 0; j < b.dim; ++j) {
      const int e = j == var ? ev - 1 : b.terms[t][j];
      if (e > 0) col.array() *= u.col(static_cast<Eigen::Index>(j)).array().pow(e);
    }
    out.col(static_cast<Eigen::Index>(t)) = col;
  }
  return out;
}

MatrixXd AffineMap::apply(const MatrixXd& raw) const {
  return (raw.rowwise() - center.transpose()).array().rowwise() / scale.transpose().array();
}

AffineMap AffineMap::fit(const MatrixXd& raw, bool centered) {
  AffineMap m;
  const auto n = static_cast<double>(std::max<Eigen::Index>(1, raw.rows()));
  m.center = centered ? VectorXd(raw.colwise().mean().transpose()) : VectorXd::Zero(raw.cols());
  m.scale.resize(raw.cols());
  for (Eigen::Index j = 0; j < raw.cols(); ++j) {
    const double s = std::sqrt((raw.col(j).array() - m.center[j]).square().sum() / n);
    m.scale[j] = s > 0.0 ? s : 1.0;
  }
  return m;
}

double SieveLaw::evaluate(const VectorXd& raw) const {
  const MatrixXd row = map.apply(raw.transpose());
  return (evaluate_basis(basis, row) * coef)(0, 0);
}

double gcv_score(const MatrixXd& columns, const VectorXd& y, double* rss_out) {
  const auto n = columns.rows();
  const auto p = columns.cols();
  if (p >= n) throw EstimationError("GCV: basis has at least as many columns as observations");
  Eigen::ColPivHouseholderQR<MatrixXd> qr(columns);
  qr.setThreshold(1e-10);
  if (qr.rank() < p) throw EstimationError("GCV: rank-deficient basis");
  const VectorXd fit = columns * qr.solve(y);
  const double rss = (y - fit).squaredNorm();
  if (rss_out) *rss_out = rss;
  const double ratio = 1.0 - static_cast<double>(p) / static_cast<double>(n);
  return (rss / static_cast<double>(n)) / (ratio * ratio);
}

GcvResult gcv_select_degree(const std::vector<int>& candidates, const MatrixXd& regressors, const VectorXd& y,
                            bool intercept) {
  if (candidates.empty()) throw ConfigError("no candidate sieve degrees");
  std::vector<int> sorted = candidates;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  GcvResult out;
  if (sorted.size() == 1) {
    out.degree = sorted[0];
    GcvCandidate c{sorted[0], 0.0, 0.0, build_basis(regressors.cols(), sorted[0], intercept).size(), false};
    try {
      c.score = gcv_score(evaluate_basis(build_basis(regressors.cols(), sorted[0], intercept), regressors), y, &c.rss);
    } catch (const EstimationError& e) {
      c.skipped = true;
      out.warnings.push_back(e.what());
    }
    out.candidates.push_back(c);
    return out;
  }
  double best = kInf;
  for (int d : sorted) {
    const SieveBasis b = build_basis(static_cast<std::size_t>(regressors.cols()), d, intercept);
    GcvCandidate c{d, 0.0, 0.0, b.size(), false};
    try {
      c.score = gcv_score(evaluate_basis(b, regressors), y, &c.rss);
    } catch (const EstimationError& e) {
      c.skipped = true;
      out.warnings.push_back("degree " + std::to_string(d) + " skipped: " + e.what());
    }
    if (!c.skipped && c.score < best) {
      best = c.score;
      out.degree = d;
    }
    out.candidates.push_back(c);
  }
  if (out.degree == 0) throw EstimationError("GCV: every candidate degree was skipped");
  return out;
}

MatrixXd sieve_phi_inputs(const Step2Data& d, double delta, double beta_0, double beta_l) {
  MatrixXd u(d.ml.size(), 1 + d.z_lag.cols());
  u.col(0) = d.ml_lag.array() + beta_l / beta_0 - (delta / beta_0) * d.s_lag.array();
  if (d.z_lag.cols() > 0) u.rightCols(d.z_lag.cols()) = d.z_lag;
  return u;
}

GcvResult sieve_phi_gcv(const Step2Data& d, double delta, double beta_0, double beta_l,
                        const std::vector<int>& candidates) {
  const MatrixXd raw = sieve_phi_inputs(d, delta, beta_0, beta_l);
  const AffineMap map = AffineMap::fit(raw, false);
  const VectorXd phi = d.ml.array() + beta_l / beta_0 - (delta / beta_0) * d.s.array();
  return gcv_select_degree(candidates, map.apply(raw), phi, false);
}

namespace {

// Higher-degree expansions of (m-l, S) lags are nearly collinear; keep a
// well-conditioned subset of columns in their original order.
MatrixXd independent_columns(const MatrixXd& m) {
  Eigen::ColPivHouseholderQR<MatrixXd> qr(m);
  qr.setThreshold(1e-6);
  const auto rank = qr.rank();
  if (rank == m.cols()) return m;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < rank; ++j) keep.push_back(qr.colsPermutation().indices()[j]);
  std::sort(keep.begin(), keep.end());
  MatrixXd out(m.rows(), rank);
  for (Eigen::Index j = 0; j < rank; ++j) out.col(j) = m.col(keep[static_cast<std::size_t>(j)]);
  return out;
}

}  // namespace

SieveStep2Result sieve_step2_gmm(const Step2Data& d, double delta, int degree, const Step2Result& parametric,
                                 const Step2Options& options) {
  const double b0_start = parametric.beta_0, bl_start = parametric.beta_l;
  const MatrixXd raw = sieve_phi_inputs(d, delta, b0_start, bl_start);
  SieveLaw law;
  law.map = AffineMap::fit(raw, false);
  law.basis = build_basis(static_cast<std::size_t>(raw.cols()), degree, false);
  const auto R = static_cast<Eigen::Index>(law.basis.size());
  const auto dz = d.z_lag.cols();

  // Instruments: degree-d expansion (with constant) of the standardized base columns.
  const AffineMap inst_map = AffineMap::fit(d.base, true);
  const SieveBasis inst_basis = build_basis(static_cast<std::size_t>(d.base.cols()), degree, true);
  GmmProblem prob;
  prob.instruments = independent_columns(evaluate_basis(inst_basis, inst_map.apply(d.base)));
  if (prob.instruments.cols() < 2 + R) throw EstimationError("sieve step 2: fewer instruments than parameters");

  const VectorXd scale = law.map.scale;
  auto residual = [&](const VectorXd& a) -> VectorXd {
    const MatrixXd u = law.map.apply(sieve_phi_inputs(d, delta, a[0], a[1]));
    const VectorXd phi = d.ml.array() + a[1] / a[0] - (delta / a[0]) * d.s.array();
    return phi - evaluate_basis(law.basis, u) * a.tail(R);
  };
  auto jacobian = [&](const VectorXd& a) -> MatrixXd {
    const double b0 = a[0], bl = a[1];
    const MatrixXd u = law.map.apply(sieve_phi_inputs(d, delta, b0, bl));
    const VectorXd dr = evaluate_basis_derivative(law.basis, u, 0) * a.tail(R) / scale[0];
    MatrixXd j(d.ml.size(), 2 + R);
    for (Eigen::Index r = 0; r < d.ml.size(); ++r) {
      j(r, 0) = dphi_dbeta0(d.s[r], b0, bl, delta) - dr[r] * dphi_dbeta0(d.s_lag[r], b0, bl, delta);
      j(r, 1) = (1.0 - dr[r]) / b0;
    }
    j.rightCols(R) = -evaluate_basis(law.basis, u);
    return j;
  };
  prob.residual = residual;
  prob.jacobian = jacobian;

  // Start at the parametric solution expressed in the scaled basis.
  VectorXd start = VectorXd::Zero(2 + R);
  start[0] = b0_start;
  start[1] = bl_start;
  start[2 + linear_term(law.basis, 0)] = parametric.rho_phi_1 * scale[0];
  for (Eigen::Index j = 0; j < dz; ++j) {
    start[2 + linear_term(law.basis, static_cast<std::size_t>(1 + j))] =
        parametric.rho_phi_2[static_cast<std::size_t>(j)] * scale[1 + j];
  }
  prob.initial = start;
  VectorXd lo = VectorXd::Constant(2 + R, -kInf), hi = VectorXd::Constant(2 + R, kInf);
  if (b0_start < 0.0) {
    lo[0] = std::isfinite(parametric.beta_0_floor) ? std::min(parametric.beta_0_floor, b0_start) : -kInf;
    hi[0] = -1e-10;
  } else {
    lo[0] = 1e-10;
  }
  prob.lower = lo;
  prob.upper = hi;

  const Weighting first = options.weighting == Weighting::Identity ? Weighting::Identity
                                                                  : Weighting::InverseInstrumentGram;
  OptimResult r = minimize_gmm(prob, first_stage_weight(prob.instruments, first), options.optim);
  if (options.weighting == Weighting::TwoStepEfficient) {
    GmmProblem second = prob;
    second.initial = r.point;
    r = minimize_gmm(second, efficient_weight(prob.instruments, residual(r.point)), options.optim);
  }
  if (!r.converged) {
    std::ostringstream os;
    os << "sieve step 2 (degree " << degree << ") did not converge (gradient norm " << r.gradient_norm << ")";
    throw EstimationError(os.str());
  }
  SieveStep2Result out;
  law.coef = r.point.tail(R);
  out.law = law;
  Step2Result& s = out.step2;
  s.alpha = r.point;
  s.beta_0 = r.point[0];
  s.beta_l = r.point[1];
  s.beta_m = delta - s.beta_l;
  s.rho_phi_1 = law.coef[linear_term(law.basis, 0)] / scale[0];
  for (Eigen::Index j = 0; j < dz; ++j) {
    s.rho_phi_2.push_back(law.coef[linear_term(law.basis, static_cast<std::size_t>(1 + j))] / scale[1 + j]);
  }
  s.objective = r.objective;
  s.converged = r.converged;
  s.iterations = r.iterations;
  s.gradient_norm = r.gradient_norm;
  s.residual = residual(r.point);
  return out;
}

namespace {

MatrixXd omega_inputs(const Step3Data& d, double bk, double bkk) {
  MatrixXd u(d.k.size(), 1 + d.x_lag.cols());
  u.col(0) = d.mstar_lag.array() - bk * d.k_lag.array() - 0.5 * bkk * d.k_lag.array().square();
  if (d.x_lag.cols() > 0) u.rightCols(d.x_lag.cols()) = d.x_lag;
  return u;
}

}  // namespace

GcvResult sieve_omega_gcv(const Step3Data& d, double bk, double bkk, const std::vector<int>& candidates) {
  const MatrixXd raw = omega_inputs(d, bk, bkk);
  const AffineMap map = AffineMap::fit(raw, true);
  const VectorXd y = d.ystar.array() - bk * d.k.array() - 0.5 * bkk * d.k.array().square();
  return gcv_select_degree(candidates, map.apply(raw), y, true);
}

SieveStep3Result sieve_step3_nls(const Step3Data& d, int degree, const Step3Result& parametric,
                                 const OptimOptions& options) {
  if (parametric.gamma.size() != 4 + d.x_lag.cols()) {
    throw ConfigError("sieve step 3 requires beta_kk to be estimated");
  }
  const MatrixXd raw = omega_inputs(d, parametric.beta_k, parametric.beta_kk);
  SieveLaw law;
  law.map = AffineMap::fit(raw, true);
  law.basis = build_basis(static_cast<std::size_t>(raw.cols()), degree, true);
  const auto R = static_cast<Eigen::Index>(law.basis.size());
  const auto dx = d.x_lag.cols();
  const VectorXd scale = law.map.scale, center = law.map.center;
  if (d.k.size() <= 2 + R) throw EstimationError("sieve step 3: too few lag pairs for the basis");

  auto residual = [&](const VectorXd& g) -> VectorXd {
    const MatrixXd u = law.map.apply(omega_inputs(d, g[0], g[1]));
    return d.ystar.array() - g[0] * d.k.array() - 0.5 * g[1] * d.k.array().square() -
           (evaluate_basis(law.basis, u) * g.tail(R)).array();
  };
  auto jacobian = [&](const VectorXd& g) -> MatrixXd {
    const MatrixXd u = law.map.apply(omega_inputs(d, g[0], g[1]));
    const VectorXd dr = evaluate_basis_derivative(law.basis, u, 0) * g.tail(R) / scale[0];
    MatrixXd j(d.k.size(), 2 + R);
    j.col(0) = -d.k.array() + dr.array() * d.k_lag.array();
    j.col(1) = -0.5 * d.k.array().square() + 0.5 * dr.array() * d.k_lag.array().square();
    j.rightCols(R) = -evaluate_basis(law.basis, u);
    return j;
  };

  VectorXd start = VectorXd::Zero(2 + R);
  start[0] = parametric.beta_k;
  start[1] = parametric.beta_kk;
  double intercept = parametric.rho_omega_0 + parametric.rho_omega_1 * center[0];
  start[2 + linear_term(law.basis, 0)] = parametric.rho_omega_1 * scale[0];
  for (Eigen::Index j = 0; j < dx; ++j) {
    const double rho = parametric.rho_omega_2[static_cast<std::size_t>(j)];
    intercept += rho * center[1 + j];
    start[2 + linear_term(law.basis, static_cast<std::size_t>(1 + j))] = rho * scale[1 + j];
  }
  start[2] = intercept;  // the constant is the first term

  NlsProblem prob;
  prob.residual = residual;
  prob.jacobian = jacobian;
  prob.initial = start;
  const OptimResult r = minimize_nls(prob, options);
  if (!r.converged) {
    std::ostringstream os;
    os << "sieve step 3 (degree " << degree << ") did not converge (gradient norm " << r.gradient_norm << ")";
    throw EstimationError(os.str());
  }
  SieveStep3Result out;
  law.coef = r.point.tail(R);
  out.law = law;
  Step3Result& s = out.step3;
  s.gamma = r.point;
  s.beta_k = r.point[0];
  s.beta_kk = r.point[1];
  s.rho_omega_1 = law.coef[linear_term(law.basis, 0)] / scale[0];
  s.rho_omega_0 = law.coef[0] - s.rho_omega_1 * center[0];
  for (Eigen::Index j = 0; j < dx; ++j) {
    const double rho = law.coef[linear_term(law.basis, static_cast<std::size_t>(1 + j))] / scale[1 + j];
    s.rho_omega_2.push_back(rho);
    s.rho_omega_0 -= rho * center[1 + j];
  }
  s.objective = r.objective;
  s.converged = r.converged;
  s.iterations = r.iterations;
  s.residual = residual(r.point);
  return out;
}

}  // namespace mdprod
