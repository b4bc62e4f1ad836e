#include "mdprod/simulate.hpp"

#include <Eigen/Dense>
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
constexpr double kFocTol = 1e-13;

std::string firm_label(int i, int n) {
  const int width = static_cast<int>(std::to_string(n).size());
  std::ostringstream os;
  os << 'f' << std::setw(width) << std::setfill('0') << (i + 1);
  return os.str();
}

// log(e^a + e^b) without overflow.
double log_add(double a, double b) {
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

struct TranslogFoc {
  const TranslogParams& p;
  double k, omega, phi, c_l, c_m;  // c_* = ln theta + ln PY - ln mu - ln P*

  Eigen::Vector2d residual(double l, double m) const {
    const double x = m - phi - l;
    const double a = p.beta_l + p.beta_0 * x;
    const double b = p.beta_m - p.beta_0 * x;
    if (!(a > 0.0) || !(b > 0.0)) return {kNaN, kNaN};
    const double ybar = translog_output(k, l, m, phi, p);
    return {c_l + ybar + omega + std::log(a) - l, c_m + ybar + omega + std::log(b) - m};
  }

  Eigen::Matrix2d jacobian(double l, double m) const {
    const double x = m - phi - l;
    const double a = p.beta_l + p.beta_0 * x;
    const double b = p.beta_m - p.beta_0 * x;
    const double b0 = p.beta_0;
    Eigen::Matrix2d j;
    j << a - b0 / a - 1.0, b + b0 / a, a + b0 / b, b - b0 / b - 1.0;
    return j;
  }

  // Labor given x from the labor FOC: (1 - delta) l = const + ...
  double labor_given_x(double x) const {
    const double a = p.beta_l + p.beta_0 * x;
    const double num = c_l + omega + p.beta_k * k + 0.5 * p.beta_kk * k * k + p.beta_m * (x + phi) +
                       p.beta_l * phi - 0.5 * p.beta_0 * x * x + std::log(a);
    return num / (1.0 - p.delta_lm());
  }
};

// Damped Newton on a 2-D system. Returns true when max |F| <= tol.
template <class Res, class Jac>
bool newton2(const Res& res, const Jac& jac, double& l, double& m, double tol, int max_iter = 100) {
  Eigen::Vector2d f = res(l, m);
  if (!f.allFinite()) return false;
  for (int it = 0; it < max_iter; ++it) {
    const double norm = f.lpNorm<Eigen::Infinity>();
    if (norm <= tol) return true;
    const Eigen::Matrix2d j = jac(l, m);
    const Eigen::Vector2d step = j.fullPivLu().solve(-f);
    if (!step.allFinite()) return false;
    double t = 1.0;
    bool moved = false;
    for (int half = 0; half < 40; ++half, t *= 0.5) {
      const double ln = l + t * step[0], mn = m + t * step[1];
      const Eigen::Vector2d fn = res(ln, mn);
      if (fn.allFinite() && fn.lpNorm<Eigen::Infinity>() < norm) {
        l = ln;
        m = mn;
        f = fn;
        moved = true;
        break;
      }
    }
    if (!moved) return norm <= tol;
  }
  return f.lpNorm<Eigen::Infinity>() <= tol;
}

// Bisection on [lo, hi] with f(lo) < 0 < f(hi) (or reversed signs).
template <class F>
double bisect(const F& f, double lo, double hi) {
  double flo = f(lo);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if ((fm < 0.0) == (flo < 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

std::string state_text(double k, double omega, double phi) {
  std::ostringstream os;
  os << std::setprecision(17) << "k=" << k << " omega=" << omega << " phi=" << phi;
  return os.str();
}

}  // namespace

void TranslogParams::validate() const {
  if (!(beta_l > 0.0) || !(beta_m > 0.0)) throw ConfigError("beta_l and beta_m must be positive");
  if (!(beta_l + beta_m < 1.0)) throw ConfigError("beta_l + beta_m must be below 1");
  if (beta_0 == 0.0 || !std::isfinite(beta_0)) throw ConfigError("beta_0 must be nonzero");
  if (!std::isfinite(beta_k) || !std::isfinite(beta_kk)) throw ConfigError("beta_k and beta_kk must be finite");
  if (!(theta > 0.0)) throw ConfigError("theta must be positive");
}

void ProductivityLaws::validate() const {
  if (!(std::abs(rho_phi_1) < 1.0)) throw ConfigError("|rho_phi_1| must be below 1");
  if (!(std::abs(rho_omega_1) < 1.0)) throw ConfigError("|rho_omega_1| must be below 1");
  if (!std::isfinite(rho_omega_0)) throw ConfigError("rho_omega_0 must be finite");
}

void CesParams::validate() const {
  if (!(sigma > 0.0) || sigma == 1.0) throw ConfigError("sigma must be positive and different from 1");
  if (!(nu > 0.0)) throw ConfigError("nu must be positive");
  if (!(beta_k > 0.0) || !(beta_m > 0.0)) throw ConfigError("CES distribution parameters must be positive");
  if (!(theta > 0.0)) throw ConfigError("theta must be positive");
}

double DgpConfig::effective_theta() const { return std::exp(0.5 * sigma_eta * sigma_eta); }

void DgpConfig::validate() const {
  if (n < 1) throw ConfigError("n must be at least 1");
  if (T < 2) throw ConfigError("T must be at least 2");
  if (!(sigma_omega >= 0.0) || !(sigma_phi >= 0.0) || !(sigma_eta >= 0.0)) {
    throw ConfigError("innovation standard deviations must be nonnegative");
  }
  if (!(markup >= 1.0)) throw ConfigError("markup must be at least 1");
  if (depreciation_set.empty()) throw ConfigError("depreciation_set is empty");
  for (double d : depreciation_set) {
    if (!(d > 0.0 && d < 1.0)) throw ConfigError("depreciation rates must lie in (0, 1)");
  }
  auto check_range = [](const UniformRange& r, const char* name) {
    if (!std::isfinite(r.lo) || !std::isfinite(r.hi) || r.lo > r.hi) {
      throw ConfigError(std::string(name) + ": invalid range");
    }
  };
  check_range(k_init, "k_init_range");
  check_range(omega_init, "omega_init_range");
  check_range(phi_init, "phi_init_range");
  check_range(control_range, "control_range");
  if (!(k_init.lo > 0.0)) throw ConfigError("k_init_range must be positive (capital levels)");
  for (const auto* prices : {&price_l, &price_m, &price_y}) {
    if (!prices->empty() && prices->size() != static_cast<std::size_t>(T)) {
      throw ConfigError("price series must have T entries");
    }
    for (double v : *prices) {
      if (!(v > 0.0)) throw ConfigError("prices must be positive");
    }
  }
  if (!laws.rho_omega_2.empty() && laws.rho_omega_2.size() != dim_x) {
    throw ConfigError("rho_omega_2 length must equal dim_x");
  }
  if (!laws.rho_phi_2.empty() && laws.rho_phi_2.size() != dim_z) {
    throw ConfigError("rho_phi_2 length must equal dim_z");
  }
  laws.validate();
  if (technology == Technology::Translog) {
    TranslogParams p = params;
    p.theta = effective_theta();
    p.validate();
  } else {
    CesParams c = ces;
    c.theta = effective_theta();
    c.validate();
  }
}

double translog_output(double k, double l, double m, double phi, const TranslogParams& p) {
  const double x = m - phi - l;
  return p.beta_k * k + 0.5 * p.beta_kk * k * k + p.beta_m * m + p.beta_l * (phi + l) - 0.5 * p.beta_0 * x * x;
}

double ces_output(double k, double l, double m, double phi, const CesParams& p) {
  const double r = p.r();
  const double a = p.beta_k * std::exp(-r * k) + std::exp(-r * (phi + l)) + p.beta_m * std::exp(-r * m);
  return -(p.nu / r) * std::log(a);
}

std::pair<double, double> translog_foc_residuals(double l, double m, double k, double omega, double phi,
                                                 const TranslogParams& params, double price_l,
                                                 double price_m, double price_y, double markup) {
  const double c = std::log(params.theta) + std::log(price_y) - std::log(markup);
  const TranslogFoc foc{params, k, omega, phi, c - std::log(price_l), c - std::log(price_m)};
  const Eigen::Vector2d f = foc.residual(l, m);
  return {f[0], f[1]};
}

StaticSolution solve_static_inputs(double k, double omega, double phi, const TranslogParams& params,
                                   double price_l, double price_m, double price_y, double markup) {
  if (!(price_l > 0.0) || !(price_m > 0.0) || !(price_y > 0.0) || !(markup >= 1.0)) {
    throw ConfigError("prices must be positive and markup at least 1");
  }
  const double c = std::log(params.theta) + std::log(price_y) - std::log(markup);
  const TranslogFoc foc{params, k, omega, phi, c - std::log(price_l), c - std::log(price_m)};
  const double gap = std::log(price_l / price_m);
  auto res = [&](double l, double m) { return foc.residual(l, m); };
  auto jac = [&](double l, double m) { return foc.jacobian(l, m); };

  // Cobb-Douglas start: x solves x + phi = ln(bM/bL) + gap exactly when b0 = 0.
  TranslogParams cd = params;
  cd.beta_0 = 0.0;
  const TranslogFoc cd_foc{cd, k, omega, phi, foc.c_l, foc.c_m};
  const double x0 = std::log(params.beta_m / params.beta_l) + gap - phi;
  double l = cd_foc.labor_given_x(x0);
  double m = l + x0 + phi;

  StaticSolution out;
  bool ok = newton2(res, jac, l, m, kFocTol);
  if (ok) {
    const double x = m - phi - l;
    // Newton can land on an outer root of the ratio equation; keep only the
    // one on the increasing branch, which is the profit maximum.
    const double a = params.beta_l + params.beta_0 * x, b = params.beta_m - params.beta_0 * x;
    ok = 1.0 + params.beta_0 / a + params.beta_0 / b > 0.0;
  }
  if (!ok) {
    // Reduced problem in x = m - phi - l, bracketed around the CD start.
    const double b0 = params.beta_0;
    const double a_root = -params.beta_l / b0, b_root = params.beta_m / b0;
    const double xmin = std::min(a_root, b_root), xmax = std::max(a_root, b_root);
    auto h = [&](double x) {
      const double a = params.beta_l + b0 * x, b = params.beta_m - b0 * x;
      return x + phi - gap - std::log(b / a);
    };
    double start = std::clamp(x0, xmin + 1e-9 * (xmax - xmin), xmax - 1e-9 * (xmax - xmin));
    const double h0 = h(start);
    double other = start;
    double step = 0.05;
    bool bracketed = h0 == 0.0;
    for (int it = 0; it < 200 && !bracketed; ++it) {
      const double target = h0 < 0.0 ? other + step : other - step;
      const double edge = h0 < 0.0 ? xmax : xmin;
      other = (h0 < 0.0 ? target < edge : target > edge) ? target : 0.5 * (other + edge);
      const double ho = h(other);
      if (std::isfinite(ho) && (ho > 0.0) == (h0 < 0.0)) bracketed = true;
      step *= 1.5;
    }
    if (!bracketed) {
      throw EstimationError("static FOC solver failed to bracket the input ratio (" + state_text(k, omega, phi) + ")");
    }
    const double x = h0 == 0.0 ? start : bisect(h, std::min(start, other), std::max(start, other));
    l = foc.labor_given_x(x);
    m = l + x + phi;
    newton2(res, jac, l, m, kFocTol, 5);
  }
  const Eigen::Vector2d f = res(l, m);
  out.l = l;
  out.m = m;
  out.foc_residual = f.lpNorm<Eigen::Infinity>();
  if (!(out.foc_residual < 1e-10)) {
    throw EstimationError("static FOC solver did not converge (" + state_text(k, omega, phi) + ")");
  }
  return out;
}

std::pair<double, double> ces_foc_residuals(double l, double m, double k, double omega, double phi,
                                            const CesParams& p, double price_l, double price_m, double price_y,
                                            double markup) {
  const double r = p.r();
  const double c = std::log(p.theta) + std::log(price_y) - std::log(markup) + std::log(p.nu) + omega;
  const double ln_a =
      std::log(p.beta_k * std::exp(-r * k) + std::exp(-r * (phi + l)) + p.beta_m * std::exp(-r * m));
  const double lnf = -(p.nu / r) * ln_a;
  const double fl = c + lnf - r * (phi + l) - ln_a - l - std::log(price_l);
  const double fm = c + lnf + std::log(p.beta_m) - r * m - ln_a - m - std::log(price_m);
  return {fl, fm};
}

StaticSolution solve_static_inputs_ces(double k, double omega, double phi, const CesParams& p, double price_l,
                                       double price_m, double price_y, double markup) {
  if (!(price_l > 0.0) || !(price_m > 0.0) || !(price_y > 0.0) || !(markup >= 1.0)) {
    throw ConfigError("prices must be positive and markup at least 1");
  }
  const double r = p.r();
  const double sigma = p.sigma;
  // The FOC ratio pins down m - l in closed form.
  const double d = (1.0 - sigma) * phi + sigma * std::log(p.beta_m) + sigma * std::log(price_l / price_m);
  auto g = [&](double l) { return ces_foc_residuals(l, l + d, k, omega, phi, p, price_l, price_m, price_y, markup).first; };
  double lo = -1.0, hi = 1.0;
  double glo = g(lo), ghi = g(hi);
  for (int it = 0; it < 200 && (glo > 0.0) == (ghi > 0.0); ++it) {
    const double w = hi - lo;
    lo -= w;
    hi += w;
    glo = g(lo);
    ghi = g(hi);
  }
  if (!std::isfinite(glo) || !std::isfinite(ghi) || (glo > 0.0) == (ghi > 0.0)) {
    throw EstimationError("CES FOC solver failed to bracket labor (" + state_text(k, omega, phi) + ")");
  }
  double l = bisect(g, lo, hi);
  double m = l + d;
  auto res = [&](double ll, double mm) {
    const auto f = ces_foc_residuals(ll, mm, k, omega, phi, p, price_l, price_m, price_y, markup);
    return Eigen::Vector2d(f.first, f.second);
  };
  auto jac = [&](double ll, double mm) {
    const double el = std::exp(-r * (phi + ll)), em = p.beta_m * std::exp(-r * mm);
    const double a = p.beta_k * std::exp(-r * k) + el + em;
    const double wl = el / a, wm = em / a;
    Eigen::Matrix2d j;
    j << (r + p.nu) * wl - r - 1.0, (r + p.nu) * wm, (r + p.nu) * wl, (r + p.nu) * wm - r - 1.0;
    return j;
  };
  newton2(res, jac, l, m, kFocTol, 10);
  StaticSolution out{l, m, res(l, m).lpNorm<Eigen::Infinity>()};
  if (!(out.foc_residual < 1e-10)) {
    throw EstimationError("CES FOC solver did not converge (" + state_text(k, omega, phi) + ")");
  }
  return out;
}

std::pair<double, double> evolve_productivity(const ProductivityLaws& laws, double phi, double omega,
                                              const std::vector<double>& x, const std::vector<double>& z,
                                              double zeta_phi, double zeta_omega) {
  double phi_next = laws.rho_phi_1 * phi + zeta_phi;
  for (std::size_t j = 0; j < laws.rho_phi_2.size() && j < z.size(); ++j) phi_next += laws.rho_phi_2[j] * z[j];
  double omega_next = laws.rho_omega_0 + laws.rho_omega_1 * omega + zeta_omega;
  for (std::size_t j = 0; j < laws.rho_omega_2.size() && j < x.size(); ++j) {
    omega_next += laws.rho_omega_2[j] * x[j];
  }
  return {phi_next, omega_next};
}

namespace {

struct FirmPath {
  std::vector<PanelObservation> obs;
  std::vector<double> phi, omega, eta, zeta_phi, zeta_omega;
  double max_residual = 0.0;
};

FirmPath simulate_firm(const DgpConfig& cfg, int firm, double depreciation, const TranslogParams& tl,
                       const CesParams& ces, const std::vector<double>& pl, const std::vector<double>& pm,
                       const std::vector<double>& py) {
  const int T = cfg.T;
  Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(firm)));
  // Draw order: innovations, initial conditions, controls.
  std::vector<double> z_omega(T, 0.0), z_phi(T, 0.0), eta(T);
  for (int t = 1; t < T; ++t) {
    z_omega[t] = cfg.sigma_omega * rng.normal();
    z_phi[t] = cfg.sigma_phi * rng.normal();
  }
  for (int t = 0; t < T; ++t) eta[t] = cfg.sigma_eta * rng.normal();
  double capital = rng.uniform(cfg.k_init.lo, cfg.k_init.hi);
  double omega = rng.uniform(cfg.omega_init.lo, cfg.omega_init.hi);
  double phi = rng.uniform(cfg.phi_init.lo, cfg.phi_init.hi);
  std::vector<std::vector<double>> xs(T), zs(T);
  for (int t = 0; t < T; ++t) {
    xs[t].resize(cfg.dim_x);
    zs[t].resize(cfg.dim_z);
    for (auto& v : xs[t]) v = rng.uniform(cfg.control_range.lo, cfg.control_range.hi);
    for (auto& v : zs[t]) v = rng.uniform(cfg.control_range.lo, cfg.control_range.hi);
  }

  FirmPath path;
  const std::string id = firm_label(firm, cfg.n);
  for (int t = 0; t < T; ++t) {
    if (t > 0) {
      const double invest = std::pow(capital, cfg.iota_1) * std::exp(cfg.iota_2 * omega + cfg.iota_3 * phi);
      capital = invest + (1.0 - depreciation) * capital;
      std::tie(phi, omega) = evolve_productivity(cfg.laws, phi, omega, xs[t - 1], zs[t - 1], z_phi[t], z_omega[t]);
    }
    const double k = std::log(capital);
    StaticSolution s;
    double ybar;
    try {
      if (cfg.technology == Technology::Translog) {
        s = solve_static_inputs(k, omega, phi, tl, pl[t], pm[t], py[t], cfg.markup);
        ybar = translog_output(k, s.l, s.m, phi, tl);
      } else {
        s = solve_static_inputs_ces(k, omega, phi, ces, pl[t], pm[t], py[t], cfg.markup);
        ybar = ces_output(k, s.l, s.m, phi, ces);
      }
    } catch (const EstimationError& e) {
      throw EstimationError("generation failed for firm " + id + ", period " +
                            std::to_string(cfg.first_period + t) + ": " + e.what());
    }
    PanelObservation o;
    o.firm_id = id;
    o.t = cfg.first_period + t;
    o.k = k;
    o.l = s.l;
    o.m = s.m;
    o.y = ybar + omega + eta[t];
    const double ln_wage = std::log(pl[t]) + s.l, ln_mat = std::log(pm[t]) + s.m;
    o.s_l = 1.0 / (1.0 + std::exp(ln_mat - ln_wage));
    o.ln_r = log_add(ln_wage, ln_mat) - std::log(py[t]) - o.y;
    o.x = xs[t];
    o.z = zs[t];
    path.obs.push_back(std::move(o));
    path.phi.push_back(phi);
    path.omega.push_back(omega);
    path.eta.push_back(eta[t]);
    path.zeta_phi.push_back(z_phi[t]);
    path.zeta_omega.push_back(z_omega[t]);
    path.max_residual = std::max(path.max_residual, s.foc_residual);
  }
  return path;
}

}  // namespace

SimulatedPanel generate_panel(const DgpConfig& config, int threads) {
  config.validate();
  const double theta = config.effective_theta();
  TranslogParams tl = config.params;
  tl.theta = theta;
  CesParams ces = config.ces;
  ces.theta = theta;
  const auto T = static_cast<std::size_t>(config.T);
  auto fill = [&](const std::vector<double>& v, double dflt) { return v.empty() ? std::vector<double>(T, dflt) : v; };
  const std::vector<double> pl = fill(config.price_l, theta);
  const std::vector<double> pm = fill(config.price_m, theta);
  const std::vector<double> py = fill(config.price_y, 1.0);

  // Depreciation assignment: its own stream, after the firm streams.
  std::vector<double> rates = config.depreciation_set;
  Rng dep_rng(derive_seed(config.seed, std::numeric_limits<std::uint64_t>::max()));
  dep_rng.shuffle(rates);
  std::vector<double> depreciation(config.n);
  for (int i = 0; i < config.n; ++i) depreciation[i] = rates[static_cast<std::size_t>(i) % rates.size()];

  std::vector<FirmPath> paths(config.n);
  parallel_for(static_cast<std::size_t>(config.n), threads, [&](std::size_t i) {
    paths[i] = simulate_firm(config, static_cast<int>(i), depreciation[i], tl, ces, pl, pm, py);
  });

  SimulatedPanel out;
  std::vector<PanelObservation> obs;
  obs.reserve(config.n * T);
  for (auto& p : paths) {
    for (auto& o : p.obs) obs.push_back(std::move(o));
    auto append = [](std::vector<double>& dst, const std::vector<double>& src) {
      dst.insert(dst.end(), src.begin(), src.end());
    };
    append(out.truth.phi, p.phi);
    append(out.truth.omega, p.omega);
    append(out.truth.eta, p.eta);
    append(out.truth.zeta_phi, p.zeta_phi);
    append(out.truth.zeta_omega, p.zeta_omega);
    out.max_foc_residual = std::max(out.max_foc_residual, p.max_residual);
  }
  PanelDataset::PriceSeries prm, prl;
  for (std::size_t t = 0; t < T; ++t) {
    const int period = config.first_period + static_cast<int>(t);
    prm[period] = std::log(pm[t] / py[t]);
    prl[period] = std::log(pl[t] / py[t]);
  }
  // Firm labels are zero padded, so the dataset's sort keeps this order.
  out.data = PanelDataset(std::move(obs), std::move(prm), std::move(prl));
  out.params = tl;
  out.ces = ces;
  out.laws = config.laws;
  out.depreciation = std::move(depreciation);
  return out;
}

void write_truth_csv(const std::string& path, const SimulatedPanel& panel) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << std::setprecision(17);
  out << "firm_id,year,phi,omega,eta,zeta_phi,zeta_omega\n";
  const auto& obs = panel.data.observations();
  for (std::size_t i = 0; i < obs.size(); ++i) {
    out << obs[i].firm_id << ',' << obs[i].t << ',' << panel.truth.phi[i] << ',' << panel.truth.omega[i] << ','
        << panel.truth.eta[i] << ',' << panel.truth.zeta_phi[i] << ',' << panel.truth.zeta_omega[i] << '\n';
  }
}

}  // namespace mdprod
