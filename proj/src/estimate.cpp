#include "mdprod/estimate.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>

#include "mdprod/errors.hpp"

namespace mdprod {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

const char* to_string(ProxyChoice choice) {
  switch (choice) {
    case ProxyChoice::Material:
      return "material";
    case ProxyChoice::Labor:
      return "labor";
    case ProxyChoice::Average:
      return "average";
  }
  return "?";
}

const char* to_string(LawForm law) { return law == LawForm::Parametric ? "parametric" : "sieve"; }

double TranslogEstimate::predict_phi(double phi_lag, const std::vector<double>& z_lag) const {
  if (phi_law) {
    Eigen::VectorXd u(1 + static_cast<Eigen::Index>(z_lag.size()));
    u[0] = phi_lag;
    for (std::size_t j = 0; j < z_lag.size(); ++j) u[1 + static_cast<Eigen::Index>(j)] = z_lag[j];
    return phi_law->evaluate(u);
  }
  double v = laws.rho_phi_1 * phi_lag;
  for (std::size_t j = 0; j < laws.rho_phi_2.size(); ++j) v += laws.rho_phi_2[j] * z_lag[j];
  return v;
}

double TranslogEstimate::predict_omega(double omega_lag, const std::vector<double>& x_lag) const {
  if (omega_law) {
    Eigen::VectorXd u(1 + static_cast<Eigen::Index>(x_lag.size()));
    u[0] = omega_lag;
    for (std::size_t j = 0; j < x_lag.size(); ++j) u[1 + static_cast<Eigen::Index>(j)] = x_lag[j];
    return omega_law->evaluate(u);
  }
  double v = laws.rho_omega_0 + laws.rho_omega_1 * omega_lag;
  for (std::size_t j = 0; j < laws.rho_omega_2.size(); ++j) v += laws.rho_omega_2[j] * x_lag[j];
  return v;
}

std::vector<double> TranslogEstimate::parameter_vector() const {
  std::vector<double> v{params.beta_k,   params.beta_kk,    params.beta_l,     params.beta_m,
                        params.beta_0,   laws.rho_phi_1,    laws.rho_omega_0,  laws.rho_omega_1};
  v.insert(v.end(), laws.rho_phi_2.begin(), laws.rho_phi_2.end());
  v.insert(v.end(), laws.rho_omega_2.begin(), laws.rho_omega_2.end());
  return v;
}

std::vector<std::string> TranslogEstimate::parameter_names() const {
  std::vector<std::string> v{"beta_k", "beta_kk", "beta_l", "beta_m", "beta_0", "rho_phi_1", "rho_omega_0",
                             "rho_omega_1"};
  for (std::size_t j = 0; j < laws.rho_phi_2.size(); ++j) v.push_back("rho_phi_2_" + std::to_string(j + 1));
  for (std::size_t j = 0; j < laws.rho_omega_2.size(); ++j) v.push_back("rho_omega_2_" + std::to_string(j + 1));
  return v;
}

TranslogEstimate estimate(const PanelDataset& dataset, const EstimateOptions& options) {
  return estimate(dataset, options, OutcomeOverrides{});
}

TranslogEstimate estimate(const PanelDataset& ds, const EstimateOptions& opt, const OutcomeOverrides& ov) {
  if (ds.empty()) throw DataError("empty dataset");
  const auto pairs = build_lag_pairs(ds);
  if (pairs.empty()) throw EstimationError("insufficient temporal depth: no consecutive periods in the panel");

  TranslogEstimate est;
  est.law = opt.law;
  // Step 1.
  if (ov.ln_r.empty()) {
    est.step1 = step1_cost_share(ds);
  } else {
    est.step1 = step1_cost_share(ov.ln_r);
  }
  const double delta = est.step1.delta_lm;

  // Step 2.
  const Step2Data d2 = build_step2_data(ds, pairs, opt.capital_lags, ov.ml.empty() ? nullptr : &ov.ml);
  if (d2.pairs.empty()) throw EstimationError("insufficient temporal depth: no pairs with the capital lags required");
  est.step2_pairs = d2.pairs;
  est.step2 = step2_gmm(d2, delta, opt.step2);
  est.information = information_matrix(d2, delta, est.step2.alpha);
  if (!est.information.full_column_rank) est.warnings.push_back("step-2 information matrix is rank deficient");
  if (opt.law == LawForm::Sieve) {
    int degree = opt.sieve.degree;
    if (degree == 0) {
      est.phi_gcv = sieve_phi_gcv(d2, delta, est.step2.beta_0, est.step2.beta_l, opt.sieve.candidates);
      degree = est.phi_gcv->degree;
      for (const auto& w : est.phi_gcv->warnings) est.warnings.push_back(w);
    }
    SieveStep2Result s = sieve_step2_gmm(d2, delta, degree, est.step2, opt.step2);
    est.step2 = std::move(s.step2);
    est.phi_law = std::move(s.law);
  }
  for (const auto& w : est.step2.warnings) est.warnings.push_back(w);

  TranslogParams& p = est.params;
  p.beta_l = est.step2.beta_l;
  p.beta_m = est.step2.beta_m;
  p.beta_0 = est.step2.beta_0;
  p.theta = est.step1.theta;
  p.beta_k = 0.0;
  p.beta_kk = 0.0;
  est.laws.rho_phi_1 = est.step2.rho_phi_1;
  est.laws.rho_phi_2 = est.step2.rho_phi_2;

  // Step 3 inputs: phi from the observed m - l, proxies from the fitted steps.
  const std::size_t n = ds.size();
  est.phi_hat.resize(n);
  est.mstar.resize(n);
  std::vector<double> ystar_obs(n), ystar(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& o = ds[i];
    est.phi_hat[i] = phi_proxy(o.m - o.l, o.s_l, p.beta_0, p.beta_l, delta);
    const auto proxy =
        omega_proxy(o, est.phi_hat[i], p, ds.price_ratio_m(o.t), ds.price_ratio_l(o.t), opt.proxy);
    est.mstar[i] = proxy ? *proxy : kNaN;
    ystar_obs[i] = y_star(o, est.phi_hat[i], p);
    ystar[i] = ov.ystar.empty() ? ystar_obs[i] : ov.ystar[i];
  }
  const Step3Data d3 = build_step3_data(ds, pairs, ystar, est.mstar);
  est.step3_pairs = d3.pairs;
  est.step3_dropped = d3.dropped;
  if (!d3.dropped.empty()) {
    est.warnings.push_back(std::to_string(d3.dropped.size()) + " lag pairs dropped from step 3");
  }
  est.step3 = step3_nls(d3, opt.step3);
  if (opt.law == LawForm::Sieve) {
    int degree = opt.sieve.degree;
    if (degree == 0) {
      est.omega_gcv = sieve_omega_gcv(d3, est.step3.beta_k, est.step3.beta_kk, opt.sieve.candidates);
      degree = est.omega_gcv->degree;
      for (const auto& w : est.omega_gcv->warnings) est.warnings.push_back(w);
    }
    SieveStep3Result s = sieve_step3_nls(d3, degree, est.step3, opt.step3.optim);
    est.step3 = std::move(s.step3);
    est.omega_law = std::move(s.law);
  }
  p.beta_k = est.step3.beta_k;
  p.beta_kk = est.step3.beta_kk;
  est.laws.rho_omega_0 = est.step3.rho_omega_0;
  est.laws.rho_omega_1 = est.step3.rho_omega_1;
  est.laws.rho_omega_2 = est.step3.rho_omega_2;

  est.eta_hat = est.step1.eta_hat;
  est.omega_hat.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double k = ds[i].k;
    est.omega_hat[i] = ystar_obs[i] - p.beta_k * k - 0.5 * p.beta_kk * k * k - est.eta_hat[i];
  }
  return est;
}

void write_estimate(const std::string& params_path, const std::string& series_path, const PanelDataset& ds,
                    const TranslogEstimate& est) {
  {
    std::ofstream out(params_path);
    if (!out) throw DataError("cannot open " + params_path + " for writing");
    out << std::setprecision(17) << "technology,parameter,value\n";
    const auto names = est.parameter_names();
    const auto values = est.parameter_vector();
    for (std::size_t j = 0; j < names.size(); ++j) out << "translog," << names[j] << ',' << values[j] << '\n';
    out << "translog,theta," << est.params.theta << '\n';
    out << "translog,delta_lm," << est.step1.delta_lm << '\n';
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
