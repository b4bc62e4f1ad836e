#include "mdprod/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "mdprod/errors.hpp"
#include "mdprod/parallel.hpp"
#include "mdprod/rng.hpp"

namespace mdprod {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void recenter_finite(std::vector<double>& v) {
  double sum = 0.0;
  std::size_t count = 0;
  for (double e : v) {
    if (std::isfinite(e)) {
      sum += e;
      ++count;
    }
  }
  if (count == 0) return;
  const double mean = sum / static_cast<double>(count);
  for (double& e : v) {
    if (std::isfinite(e)) e -= mean;
  }
}

double omega_from_proxy(double mstar, double k, const TranslogParams& p) {
  return mstar - p.beta_k * k - 0.5 * p.beta_kk * k * k;
}

}  // namespace

std::vector<double> mammen_weights(std::size_t firm_count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(firm_count);
  for (double& x : w) x = rng.bernoulli(kMammenHighProb) ? kMammenHigh : kMammenLow;
  return w;
}

BootstrapResiduals bootstrap_residuals(const PanelDataset& ds, const TranslogEstimate& est, bool recenter) {
  const std::size_t n = ds.size();
  if (est.phi_hat.size() != n || est.eta_hat.size() != n || est.mstar.size() != n) {
    throw std::invalid_argument("bootstrap_residuals: estimate does not belong to this dataset");
  }
  BootstrapResiduals res;
  res.eta = est.eta_hat;
  res.zeta_phi.assign(n, kNaN);
  res.zeta_omega.assign(n, kNaN);
  for (const auto& p : build_lag_pairs(ds)) {
    res.zeta_phi[p.current] = est.phi_hat[p.current] - est.predict_phi(est.phi_hat[p.previous], ds[p.previous].z);
  }
  const TranslogParams& prm = est.params;
  for (const auto& p : est.step3_pairs) {
    const auto& cur = ds[p.current];
    const auto& lag = ds[p.previous];
    const double ystar = y_star(cur, est.phi_hat[p.current], prm);
    const double fitted = prm.beta_k * cur.k + 0.5 * prm.beta_kk * cur.k * cur.k +
                          est.predict_omega(omega_from_proxy(est.mstar[p.previous], lag.k, prm), lag.x);
    res.zeta_omega[p.current] = ystar - fitted;
  }
  if (recenter) {
    recenter_finite(res.eta);
    recenter_finite(res.zeta_phi);
    recenter_finite(res.zeta_omega);
  }
  return res;
}

OutcomeOverrides bootstrap_outcomes(const PanelDataset& ds, const TranslogEstimate& est,
                                    const BootstrapResiduals& res, const std::vector<double>& w) {
  const std::size_t n = ds.size();
  if (w.size() != ds.firm_count()) throw std::invalid_argument("bootstrap_outcomes: one weight per firm required");
  if (res.eta.size() != n || res.zeta_phi.size() != n || res.zeta_omega.size() != n) {
    throw std::invalid_argument("bootstrap_outcomes: residuals do not match the dataset");
  }
  const TranslogParams& p = est.params;
  const double delta = est.step1.delta_lm;
  const double lev = std::log(est.step1.theta * delta);

  OutcomeOverrides ov;
  ov.ln_r.resize(n);
  ov.ml.resize(n);
  ov.ystar.assign(n, kNaN);
  const auto prev = previous_index(ds, build_lag_pairs(ds));
  std::vector<double> phi_b(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& o = ds[i];
    const double xi = w[ds.firm_index(i)];
    ov.ln_r[i] = lev - xi * res.eta[i];
    if (!prev[i]) {
      ov.ml[i] = o.m - o.l;
      phi_b[i] = est.phi_hat[i];
      continue;
    }
    const std::size_t j = *prev[i];
    phi_b[i] = est.predict_phi(phi_b[j], ds[j].z) + xi * res.zeta_phi[i];
    ov.ml[i] = phi_b[i] - p.beta_l / p.beta_0 + (delta / p.beta_0) * o.s_l;
  }
  for (const auto& pr : est.step3_pairs) {
    const auto& cur = ds[pr.current];
    const auto& lag = ds[pr.previous];
    const double xi = w[ds.firm_index(pr.current)];
    ov.ystar[pr.current] = p.beta_k * cur.k + 0.5 * p.beta_kk * cur.k * cur.k +
                           est.predict_omega(omega_from_proxy(est.mstar[pr.previous], lag.k, p), lag.x) +
                           xi * res.zeta_omega[pr.current];
  }
  return ov;
}

std::vector<double> bootstrap_replicate(const PanelDataset& ds, const TranslogEstimate& est,
                                        const BootstrapResiduals& res, const std::vector<double>& w,
                                        const EstimateOptions& options) {
  return estimate(ds, options, bootstrap_outcomes(ds, est, res, w)).parameter_vector();
}

void BootstrapConfig::validate() const {
  if (B < 1 && !weight_override) throw ConfigError("bootstrap B must be at least 1");
  if (B < 0) throw ConfigError("bootstrap B must be nonnegative");
  for (double l : levels) {
    if (!(l > 0.0 && l < 1.0)) throw ConfigError("bootstrap levels must lie in (0, 1)");
  }
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (!(unreliable_failure_rate >= 0.0 && unreliable_failure_rate <= 1.0)) {
    throw ConfigError("unreliable_failure_rate must lie in [0, 1]");
  }
}

double percentile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return kNaN;
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

BootstrapResult run_bootstrap(const PanelDataset& ds, const TranslogEstimate& est, const BootstrapConfig& cfg,
                              const EstimateOptions& options) {
  cfg.validate();
  const int B = std::max(cfg.B, 1);
  const BootstrapResiduals res = bootstrap_residuals(ds, est, cfg.recenter);

  struct Slot {
    std::vector<double> params;
    std::string error;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(B));
  parallel_for(slots.size(), cfg.threads, [&](std::size_t b) {
    const std::vector<double> w = cfg.weight_override
                                      ? std::vector<double>(ds.firm_count(), *cfg.weight_override)
                                      : mammen_weights(ds.firm_count(), derive_seed(cfg.seed, b));
    try {
      slots[b].params = bootstrap_replicate(ds, est, res, w, options);
    } catch (const std::exception& e) {
      slots[b].error = e.what();
    }
  });

  BootstrapResult out;
  out.names = est.parameter_names();
  out.point = est.parameter_vector();
  out.requested = B;
  for (std::size_t b = 0; b < slots.size(); ++b) {
    if (slots[b].error.empty()) {
      out.draws.push_back(std::move(slots[b].params));
      out.replicate_index.push_back(static_cast<int>(b));
    } else {
      ++out.failures;
      out.failure_messages.push_back("replicate " + std::to_string(b) + ": " + slots[b].error);
    }
  }
  out.unreliable = static_cast<double>(out.failures) > cfg.unreliable_failure_rate * B;
  if (out.unreliable) {
    out.warnings.push_back(std::to_string(out.failures) + " of " + std::to_string(B) +
                           " replicates failed; bootstrap result is unreliable");
  }
  if (out.draws.size() < 2) out.warnings.push_back("fewer than two successful replicates: standard errors are 0");

  const std::size_t p = out.point.size();
  const std::size_t s = out.draws.size();
  out.standard_errors.assign(p, 0.0);
  out.intervals.assign(p, {});
  for (std::size_t j = 0; j < p; ++j) {
    std::vector<double> col(s);
    for (std::size_t b = 0; b < s; ++b) col[b] = out.draws[b][j];
    if (s >= 2) {
      double mean = 0.0;
      for (double v : col) mean += v;
      mean /= static_cast<double>(s);
      double ss = 0.0;
      for (double v : col) ss += (v - mean) * (v - mean);
      out.standard_errors[j] = std::sqrt(ss / static_cast<double>(s - 1));
    }
    std::sort(col.begin(), col.end());
    for (double level : cfg.levels) {
      const double a = 0.5 * (1.0 - level);
      out.intervals[j].push_back({level, percentile(col, a), percentile(col, 1.0 - a)});
    }
  }
  return out;
}

void write_bootstrap(const std::string& path, const BootstrapResult& r) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << std::setprecision(17) << "parameter,estimate,se";
  if (!r.intervals.empty()) {
    for (const auto& iv : r.intervals.front()) {
      const int pct = static_cast<int>(std::lround(iv.level * 100.0));
      out << ",lower_" << pct << ",upper_" << pct;
    }
  }
  out << '\n';
  for (std::size_t j = 0; j < r.names.size(); ++j) {
    out << r.names[j] << ',' << r.point[j] << ',' << r.standard_errors[j];
    for (const auto& iv : r.intervals[j]) out << ',' << iv.lower << ',' << iv.upper;
    out << '\n';
  }
}

}  // namespace mdprod
