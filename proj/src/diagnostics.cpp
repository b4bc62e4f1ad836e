#include "mdprod/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "mdprod/errors.hpp"
#include "mdprod/parallel.hpp"
#include "mdprod/rng.hpp"

namespace mdprod {

ElasticityRecord elasticities(const TranslogParams& p, const PanelObservation& o, double phi) {
  const double x = o.m - phi - o.l;
  ElasticityRecord e;
  e.capital = p.beta_k + p.beta_kk * o.k;
  e.labor = p.beta_l + p.beta_0 * x;
  e.material = p.beta_m - p.beta_0 * x;
  e.rts = e.capital + e.labor + e.material;
  return e;
}

std::vector<ElasticityRecord> elasticity_table(const PanelDataset& ds, const TranslogEstimate& est) {
  std::vector<ElasticityRecord> out;
  out.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) out.push_back(elasticities(est.params, ds[i], est.phi_hat[i]));
  return out;
}

AggregateSeries aggregate_productivity(const PanelDataset& ds, const std::vector<double>& phi,
                                       const std::vector<double>& omega, const std::vector<double>& labor,
                                       const std::vector<double>& w) {
  const std::size_t n = ds.size();
  if (phi.size() != n || omega.size() != n || labor.size() != n || w.size() != n) {
    throw std::invalid_argument("aggregate_productivity: one entry per observation required");
  }
  struct Acc {
    double w = 0, phi = 0, omega = 0, lphi = 0;
  };
  std::map<int, Acc> acc;
  for (std::size_t i = 0; i < n; ++i) {
    Acc& a = acc[ds[i].t];
    a.w += w[i];
    a.phi += w[i] * phi[i];
    a.omega += w[i] * omega[i];
    a.lphi += w[i] * labor[i] * phi[i];
  }
  AggregateSeries s;
  for (const auto& [t, a] : acc) {
    if (!(a.w > 0.0)) throw DataError("aggregate_productivity: nonpositive total weight in period " + std::to_string(t));
    s.periods.push_back(t);
    s.phi.push_back(a.phi / a.w);
    s.omega.push_back(a.omega / a.w);
    s.labor_phi.push_back(a.lphi / a.w);
  }
  for (auto* v : {&s.phi, &s.omega, &s.labor_phi}) {
    if (v->empty()) continue;
    const double base = v->front();
    for (double& x : *v) x -= base;
  }
  return s;
}

AggregateSeries aggregate_productivity(const PanelDataset& ds, const TranslogEstimate& est) {
  std::vector<double> labor(ds.size()), w(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    labor[i] = elasticities(est.params, ds[i], est.phi_hat[i]).labor;
    w[i] = std::exp(ds[i].y);
  }
  return aggregate_productivity(ds, est.phi_hat, est.omega_hat, labor, w);
}

void write_aggregate_csv(const std::string& path, const AggregateSeries& s) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << std::setprecision(17) << "year,phi,omega,labor_phi\n";
  for (std::size_t j = 0; j < s.periods.size(); ++j) {
    out << s.periods[j] << ',' << s.phi[j] << ',' << s.omega[j] << ',' << s.labor_phi[j] << '\n';
  }
}

std::vector<double> truth_vector(const DgpConfig& c) {
  std::vector<double> v{c.params.beta_k,   c.params.beta_kk,   c.params.beta_l,   c.params.beta_m,
                        c.params.beta_0,   c.laws.rho_phi_1,   c.laws.rho_omega_0, c.laws.rho_omega_1};
  v.insert(v.end(), c.laws.rho_phi_2.begin(), c.laws.rho_phi_2.end());
  v.insert(v.end(), c.laws.rho_omega_2.begin(), c.laws.rho_omega_2.end());
  return v;
}

McStudyReport monte_carlo_study(const DgpConfig& config, int replications, const EstimateOptions& options,
                                int threads) {
  if (replications < 1) throw ConfigError("monte carlo study needs at least one replication");
  config.validate();
  if (config.technology != Technology::Translog) throw ConfigError("monte carlo study supports the translog DGP only");
  struct Slot {
    std::vector<double> params;
    std::vector<std::string> names;
    std::string error;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(replications));
  parallel_for(slots.size(), threads, [&](std::size_t r) {
    DgpConfig c = config;
    c.seed = derive_seed(config.seed, r);
    try {
      const SimulatedPanel sp = generate_panel(c, 1);
      const TranslogEstimate est = estimate(sp.data, options);
      slots[r].params = est.parameter_vector();
      slots[r].names = est.parameter_names();
    } catch (const std::exception& e) {
      slots[r].error = e.what();
    }
  });

  McStudyReport rep;
  rep.config = config;
  rep.requested = replications;
  rep.truth = truth_vector(config);
  for (std::size_t r = 0; r < slots.size(); ++r) {
    if (!slots[r].error.empty()) {
      ++rep.failures;
      rep.failure_messages.push_back("replication " + std::to_string(r) + ": " + slots[r].error);
      continue;
    }
    if (rep.names.empty()) rep.names = slots[r].names;
    rep.estimates.push_back(std::move(slots[r].params));
    rep.replication_index.push_back(static_cast<int>(r));
  }
  if (rep.estimates.empty()) {
    throw EstimationError("monte carlo study: all " + std::to_string(replications) + " replications failed (" +
                          rep.failure_messages.front() + ")");
  }
  const std::size_t p = rep.truth.size();
  const auto s = static_cast<double>(rep.estimates.size());
  rep.mean.assign(p, 0.0);
  rep.rmse.assign(p, 0.0);
  rep.mae.assign(p, 0.0);
  for (const auto& e : rep.estimates) {
    for (std::size_t j = 0; j < p; ++j) {
      const double err = e[j] - rep.truth[j];
      rep.mean[j] += e[j];
      rep.rmse[j] += err * err;
      rep.mae[j] += std::abs(err);
    }
  }
  for (std::size_t j = 0; j < p; ++j) {
    rep.mean[j] /= s;
    rep.rmse[j] = std::sqrt(rep.rmse[j] / s);
    rep.mae[j] /= s;
  }
  return rep;
}

void write_mc_csv(const std::string& path, const McStudyReport& r) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << std::setprecision(17) << "parameter,truth,mean,rmse,mae\n";
  for (std::size_t j = 0; j < r.names.size(); ++j) {
    out << r.names[j] << ',' << r.truth[j] << ',' << r.mean[j] << ',' << r.rmse[j] << ',' << r.mae[j] << '\n';
  }
}

std::string format_mc_table(const McStudyReport& r) {
  std::ostringstream os;
  os << "Monte Carlo study: n=" << r.config.n << " T=" << r.config.T << " seed=" << r.config.seed
     << " replications=" << r.requested << " successes=" << r.successes() << " failures=" << r.failures << "\n";
  os << std::left << std::setw(14) << "parameter" << std::right << std::setw(12) << "truth" << std::setw(12)
     << "Mean" << std::setw(12) << "RMSE" << std::setw(12) << "MAE" << "\n";
  os << std::fixed << std::setprecision(4);
  for (std::size_t j = 0; j < r.names.size(); ++j) {
    os << std::left << std::setw(14) << r.names[j] << std::right << std::setw(12) << r.truth[j] << std::setw(12)
       << r.mean[j] << std::setw(12) << r.rmse[j] << std::setw(12) << r.mae[j] << "\n";
  }
  return os.str();
}

namespace {

double quantile_sorted(const std::vector<double>& v, double q) {
  const double h = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

std::string diagnostics_report(const PanelDataset& ds, const TranslogEstimate& est) {
  std::ostringstream os;
  os << std::setprecision(6);
  os << "Estimate (" << to_string(est.law) << " laws, " << ds.size() << " observations, " << ds.firm_count()
     << " firms)\n";
  const auto names = est.parameter_names();
  const auto values = est.parameter_vector();
  for (std::size_t j = 0; j < names.size(); ++j) {
    os << "  " << std::left << std::setw(14) << names[j] << std::right << std::setw(14) << values[j] << "\n";
  }
  os << "  " << std::left << std::setw(14) << "theta" << std::right << std::setw(14) << est.params.theta << "\n";
  for (const auto& w : est.warnings) os << "  warning: " << w << "\n";

  const auto table = elasticity_table(ds, est);
  if (!table.empty()) {
    os << "\nElasticities       mean       p10       p50       p90\n";
    auto row = [&](const char* name, double ElasticityRecord::*field) {
      std::vector<double> v;
      v.reserve(table.size());
      double sum = 0.0;
      for (const auto& e : table) {
        v.push_back(e.*field);
        sum += e.*field;
      }
      std::sort(v.begin(), v.end());
      os << "  " << std::left << std::setw(12) << name << std::right << std::fixed << std::setprecision(4)
         << std::setw(10) << sum / static_cast<double>(v.size()) << std::setw(10) << quantile_sorted(v, 0.1)
         << std::setw(10) << quantile_sorted(v, 0.5) << std::setw(10) << quantile_sorted(v, 0.9) << "\n";
      os.unsetf(std::ios::fixed);
    };
    row("capital", &ElasticityRecord::capital);
    row("labor", &ElasticityRecord::labor);
    row("material", &ElasticityRecord::material);
    row("rts", &ElasticityRecord::rts);
  }

  const AggregateSeries agg = aggregate_productivity(ds, est);
  os << "\nOutput-weighted productivity (first period = 0)\n  year         phi       omega   labor*phi\n";
  os << std::fixed << std::setprecision(4);
  for (std::size_t j = 0; j < agg.periods.size(); ++j) {
    os << "  " << std::setw(4) << agg.periods[j] << std::setw(12) << agg.phi[j] << std::setw(12) << agg.omega[j]
       << std::setw(12) << agg.labor_phi[j] << "\n";
  }
  return os.str();
}

}  // namespace mdprod
