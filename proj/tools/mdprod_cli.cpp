// mdprod command-line driver: simulate, estimate, montecarlo, bootstrap,
// partialid and report.

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "mdprod/bootstrap.hpp"
#include "mdprod/ces.hpp"
#include "mdprod/config.hpp"
#include "mdprod/diagnostics.hpp"
#include "mdprod/errors.hpp"
#include "mdprod/estimate.hpp"
#include "mdprod/partialid.hpp"
#include "mdprod/simulate.hpp"

using namespace mdprod;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kEstimation = 4 };

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
};

struct InputFlags {
  std::optional<std::string> input;
  std::optional<std::string> price_m;
  std::optional<std::string> price_l;
};

struct EstimatorFlags {
  std::optional<std::string> tech;
  std::optional<std::string> law;
  std::optional<std::string> proxy;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("-c,--config", f.config, "YAML run configuration")->check(CLI::ExistingFile);
  app->add_option("--seed", f.seed, "master seed (default 0)");
  app->add_option("-o,--out", f.out, "output path prefix");
  app->add_option("--threads", f.threads, "worker threads")->check(CLI::PositiveNumber);
}

void add_input(CLI::App* app, InputFlags& f) {
  app->add_option("-i,--input", f.input, "panel CSV");
  app->add_option("--price-m", f.price_m, "(year, log P^M/P^Y) series CSV");
  app->add_option("--price-l", f.price_l, "(year, log P^L/P^Y) series CSV");
}

void add_estimator(CLI::App* app, EstimatorFlags& f) {
  app->add_option("--tech", f.tech, "translog or ces");
  app->add_option("--law", f.law, "parametric or sieve");
  app->add_option("--proxy", f.proxy, "material, labor or average");
}

// Flag > file > default.
RunConfig resolve(const CommonFlags& f) {
  RunConfig c = f.config.empty() ? parse_run_config("version: 1\n") : load_run_config(f.config);
  if (f.seed) {
    c.seed = *f.seed;
    c.seed_given = true;
  }
  c.dgp.seed = c.seed;
  c.bootstrap.seed = c.seed;
  if (f.out) c.output = *f.out;
  if (f.threads) {
    c.threads = *f.threads;
    c.bootstrap.threads = c.threads;
  }
  return c;
}

void apply(const InputFlags& f, RunConfig& c) {
  if (f.input) c.input.panel = *f.input;
  if (f.price_m) c.input.price_m = *f.price_m;
  if (f.price_l) c.input.price_l = *f.price_l;
}

void apply(const EstimatorFlags& f, RunConfig& c) {
  if (f.tech) c.technology = parse_technology(*f.tech);
  if (f.law) c.estimator.law = parse_law(*f.law);
  if (f.proxy) c.estimator.proxy = parse_proxy(*f.proxy);
}

void echo_seed(const RunConfig& c) {
  std::cout << "seed: " << c.seed << (c.seed_given ? "" : " (default)") << "\n";
}

PanelDataset load_input(const RunConfig& c) {
  if (c.input.panel.empty()) throw ConfigError("no input panel: pass --input or set input.panel");
  PanelDataset::PriceSeries pm, pl;
  if (!c.input.price_m.empty()) pm = load_price_series(c.input.price_m);
  if (!c.input.price_l.empty()) pl = load_price_series(c.input.price_l);
  LoadedPanel lp = load_csv(c.input.panel, c.input.columns, pm, pl);
  if (!lp.report.rejected.empty()) std::cerr << lp.report.summary();
  return std::move(lp.dataset);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << text;
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

int cmd_simulate(const RunConfig& c) {
  echo_seed(c);
  const SimulatedPanel sp = generate_panel(c.dgp, c.threads);
  const std::string panel = c.output + "_panel.csv";
  write_csv(panel, sp.data);
  write_truth_csv(c.output + "_truth.csv", sp);
  write_price_series(c.output + "_price_m.csv", sp.data.price_ratio_m_series());
  write_price_series(c.output + "_price_l.csv", sp.data.price_ratio_l_series());
  std::cout << std::setprecision(17) << "technology: " << to_string(c.dgp.technology) << "\n"
            << "firms: " << c.dgp.n << "\nperiods: " << c.dgp.T << "\nrows: " << sp.data.size() << "\n"
            << "max FOC residual: " << sp.max_foc_residual << "\n"
            << "wrote " << panel << ", " << c.output << "_truth.csv, " << c.output << "_price_m.csv, " << c.output
            << "_price_l.csv\n";
  return kOk;
}

int cmd_estimate(const RunConfig& c) {
  const PanelDataset ds = load_input(c);
  const std::string params = c.output + "_params.csv", series = c.output + "_series.csv";
  std::cout << std::setprecision(17);
  if (c.technology == Technology::Ces) {
    const CesEstimate est = estimate_ces(ds, c.estimator.step3.optim);
    print_warnings(est.warnings);
    write_ces_estimate(params, series, ds, est);
    const auto names = est.parameter_names();
    const auto values = est.parameter_vector();
    std::cout << "technology: ces\n";
    for (std::size_t j = 0; j < names.size(); ++j) std::cout << names[j] << ": " << values[j] << "\n";
  } else {
    const TranslogEstimate est = estimate(ds, c.estimator);
    print_warnings(est.warnings);
    write_estimate(params, series, ds, est);
    const std::string report = diagnostics_report(ds, est);
    write_text(c.output + "_report.txt", report);
    std::cout << "technology: translog\n";
    const auto names = est.parameter_names();
    const auto values = est.parameter_vector();
    for (std::size_t j = 0; j < names.size(); ++j) std::cout << names[j] << ": " << values[j] << "\n";
  }
  std::cout << "wrote " << params << ", " << series << "\n";
  return kOk;
}

int cmd_montecarlo(const RunConfig& c) {
  echo_seed(c);
  const auto t0 = std::chrono::steady_clock::now();
  const McStudyReport rep = monte_carlo_study(c.dgp, c.replications, c.estimator, c.threads);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_mc_csv(c.output + "_montecarlo.csv", rep);
  const std::string table = format_mc_table(rep);
  write_text(c.output + "_montecarlo.txt", table);
  std::cout << table;
  for (const auto& m : rep.failure_messages) std::cerr << "failed " << m << "\n";
  std::cout << "elapsed seconds: " << std::fixed << std::setprecision(1) << secs << "\n";
  return kOk;
}

int cmd_bootstrap(const RunConfig& c) {
  if (c.technology != Technology::Translog) throw ConfigError("bootstrap supports the translog technology only");
  echo_seed(c);
  const PanelDataset ds = load_input(c);
  const TranslogEstimate est = estimate(ds, c.estimator);
  print_warnings(est.warnings);
  const BootstrapResult r = run_bootstrap(ds, est, c.bootstrap, c.estimator);
  print_warnings(r.warnings);
  for (const auto& m : r.failure_messages) std::cerr << "failed " << m << "\n";
  const std::string path = c.output + "_bootstrap.csv";
  write_bootstrap(path, r);
  std::cout << "replicates: " << r.requested << " failures: " << r.failures << (r.unreliable ? " (unreliable)" : "")
            << "\n";
  std::cout << std::left << std::setw(14) << "parameter" << std::right << std::setw(24) << "estimate"
            << std::setw(24) << "se" << "\n";
  std::cout << std::setprecision(17);
  for (std::size_t j = 0; j < r.names.size(); ++j) {
    std::cout << std::left << std::setw(14) << r.names[j] << std::right << std::setw(24) << r.point[j]
              << std::setw(24) << r.standard_errors[j] << "\n";
  }
  std::cout << "wrote " << path << "\n";
  return kOk;
}

int cmd_partialid(const RunConfig& c) {
  const PanelDataset ds = load_input(c);
  const Step1Result s1 = step1_cost_share(ds);
  MomentInequalityConfig cfg;
  cfg.cutoff_levels = c.partialid.cutoff_levels;
  cfg.propensity = c.partialid.propensity;
  cfg.threads = c.threads;
  if (c.partialid.grid) {
    cfg.grid = *c.partialid.grid;
  } else {
    const TranslogEstimate est = estimate(ds, c.estimator);
    const BetaPoint center{est.params.beta_k, est.params.beta_kk, est.params.beta_l, est.params.beta_m,
                           est.params.beta_0};
    cfg.grid = default_grid(center, c.partialid.half_width, c.partialid.count);
  }
  const MomentInequalities mi(ds, cfg.cutoff_levels, cfg.propensity);
  cfg.slack = c.partialid.slack ? *c.partialid.slack : default_slack(mi.sample_size(), c.partialid.slack_constant);
  const IdentifiedSet set = identified_set(mi, cfg);
  const std::string path = c.output + "_partialid.csv";
  write_identified_set(path, set);
  std::cout << std::setprecision(17) << "delta_lm (cost share): " << s1.delta_lm << "\n"
            << "slack: " << set.slack << "\ngrid points: " << set.points.size() << "\nfeasible: " << set.feasible_count
            << "\nvolume fraction: " << set.volume_fraction << "\n";
  if (set.empty) {
    std::cout << "identified set is empty on this grid\n";
  } else {
    const char* names[] = {"beta_k", "beta_kk", "beta_l", "beta_m", "beta_0"};
    for (std::size_t j = 0; j < 5; ++j) {
      std::cout << names[j] << ": [" << set.lower[j] << ", " << set.upper[j] << "]\n";
    }
  }
  std::cout << "wrote " << path << "\n";
  return kOk;
}

int cmd_report(const RunConfig& c) {
  const PanelDataset ds = load_input(c);
  const TranslogEstimate est = estimate(ds, c.estimator);
  const std::string text = diagnostics_report(ds, est);
  write_text(c.output + "_report.txt", text);
  write_aggregate_csv(c.output + "_aggregate.csv", aggregate_productivity(ds, est));
  {
    std::ofstream out(c.output + "_elasticities.csv");
    if (!out) throw DataError("cannot open " + c.output + "_elasticities.csv for writing");
    out << std::setprecision(17) << "firm_id,year,capital,labor,material,rts\n";
    const auto table = elasticity_table(ds, est);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      out << ds[i].firm_id << ',' << ds[i].t << ',' << table[i].capital << ',' << table[i].labor << ','
          << table[i].material << ',' << table[i].rts << '\n';
    }
  }
  std::cout << text << "wrote " << c.output << "_report.txt, " << c.output << "_aggregate.csv, " << c.output
            << "_elasticities.csv\n";
  return kOk;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("not a number in list: '" + item + "'");
    }
  }
  return v;
}

// "lo:hi:count" for bK, bKK, bL, bM, b0, separated by ';'.
std::array<GridAxis, 5> parse_grid(const std::string& s) {
  std::array<GridAxis, 5> g;
  std::stringstream ss(s);
  std::string axis;
  std::size_t j = 0;
  while (std::getline(ss, axis, ';')) {
    if (j >= 5) throw ConfigError("--grid: expected five axes");
    std::replace(axis.begin(), axis.end(), ':', ',');
    const auto v = parse_list(axis);
    if (v.size() != 3 || v[2] < 1 || v[2] != std::floor(v[2])) throw ConfigError("--grid: axis must be lo:hi:count");
    g[j++] = {v[0], v[1], static_cast<int>(v[2])};
  }
  if (j != 5) throw ConfigError("--grid: expected five axes (beta_k;beta_kk;beta_l;beta_m;beta_0)");
  return g;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Production function estimation with two-dimensional productivity"};
  app.require_subcommand(1);

  CommonFlags common;
  InputFlags input;
  EstimatorFlags est_flags;
  std::optional<int> replications, boot_b;
  std::optional<std::string> cutoffs, grid;
  std::optional<double> slack;

  auto* sim = app.add_subcommand("simulate", "simulate a panel from the data-generating process");
  add_common(sim, common);

  auto* est = app.add_subcommand("estimate", "estimate the production function");
  add_common(est, common);
  add_input(est, input);
  add_estimator(est, est_flags);

  auto* mc = app.add_subcommand("montecarlo", "simulate-and-estimate study");
  add_common(mc, common);
  add_estimator(mc, est_flags);
  mc->add_option("-R,--replications", replications, "replication count")->check(CLI::PositiveNumber);

  auto* boot = app.add_subcommand("bootstrap", "wild residual block bootstrap");
  add_common(boot, common);
  add_input(boot, input);
  add_estimator(boot, est_flags);
  boot->add_option("-B,--B", boot_b, "replicate count")->check(CLI::PositiveNumber);

  auto* pid = app.add_subcommand("partialid", "moment-inequality identified set under market power");
  add_common(pid, common);
  add_input(pid, input);
  add_estimator(pid, est_flags);
  pid->add_option("--cutoffs", cutoffs, "quantile levels of m, comma separated");
  pid->add_option("--grid", grid, "lo:hi:count for beta_k;beta_kk;beta_l;beta_m;beta_0");
  pid->add_option("--slack", slack, "nonnegative slack")->check(CLI::NonNegativeNumber);

  auto* rep = app.add_subcommand("report", "post-estimation diagnostics");
  add_common(rep, common);
  add_input(rep, input);
  add_estimator(rep, est_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    RunConfig c = resolve(common);
    apply(input, c);
    apply(est_flags, c);
    if (replications) c.replications = *replications;
    if (boot_b) c.bootstrap.B = *boot_b;
    if (cutoffs) c.partialid.cutoff_levels = parse_list(*cutoffs);
    if (grid) c.partialid.grid = parse_grid(*grid);
    if (slack) c.partialid.slack = *slack;
    c.bootstrap.validate();

    if (*sim) return cmd_simulate(c);
    if (*est) return cmd_estimate(c);
    if (*mc) return cmd_montecarlo(c);
    if (*boot) return cmd_bootstrap(c);
    if (*pid) return cmd_partialid(c);
    if (*rep) return cmd_report(c);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kConfig;
  } catch (const DomainError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const EstimationError& e) {
    std::cerr << "estimation error: " << e.what() << "\n";
    return kEstimation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
