#include <doctest.h>

#include <cmath>
#include <numeric>

#include "mdprod/errors.hpp"
#include "mdprod/rng.hpp"
#include "mdprod/translog.hpp"

using namespace mdprod;

namespace {

DgpConfig noiseless_config(int n = 100) {
  DgpConfig c;
  c.n = n;
  c.sigma_eta = c.sigma_omega = c.sigma_phi = 0.0;
  c.seed = 21;
  return c;
}

Eigen::VectorXd true_alpha(const SimulatedPanel& sp) {
  Eigen::VectorXd a(3);
  a << sp.params.beta_0, sp.params.beta_l, sp.laws.rho_phi_1;
  return a;
}

// Direct evaluation of the closed form: delta = exp(mean ln R) / mean exp(mean ln R - ln R).
std::pair<double, double> step1_oracle(const std::vector<double>& ln_r) {
  long double mean = 0.0L;
  for (double v : ln_r) mean += v;
  mean /= static_cast<long double>(ln_r.size());
  long double denom = 0.0L;
  for (double v : ln_r) denom += std::exp(mean - static_cast<long double>(v));
  denom /= static_cast<long double>(ln_r.size());
  return {static_cast<double>(std::exp(mean) / denom), static_cast<double>(denom)};
}

}  // namespace

TEST_CASE("step 1 with a constant cost ratio") {
  const auto r = step1_cost_share(std::vector<double>(10, std::log(0.75)));
  CHECK(std::abs(r.delta_lm - 0.75) < 1e-15);
  CHECK(std::abs(r.theta - 1.0) < 1e-15);
  for (double e : r.eta_hat) CHECK(std::abs(e) < 1e-15);
}

TEST_CASE("step 1 with two cost ratios in equal halves") {
  std::vector<double> v{std::log(0.7), std::log(0.8), std::log(0.7), std::log(0.8)};
  const auto r = step1_cost_share(v);
  // Frozen values: sqrt(0.56) / mean(sqrt(0.56)/0.7, sqrt(0.56)/0.8).
  CHECK(r.delta_lm == doctest::Approx(0.74666666666666667).epsilon(1e-14));
  CHECK(r.theta == doctest::Approx(1.0022296).epsilon(1e-7));
  const double s = std::sqrt(0.56);
  CHECK(std::abs(r.theta - 0.5 * (s / 0.7 + s / 0.8)) < 1e-14);
}

TEST_CASE("step 1 identities and oracle on simulated data") {
  DgpConfig c;
  c.n = 200;
  c.seed = 8;
  const auto sp = generate_panel(c);
  std::vector<double> ln_r;
  for (const auto& o : sp.data.observations()) ln_r.push_back(o.ln_r);
  const auto r = step1_cost_share(sp.data);
  const auto [delta, theta] = step1_oracle(ln_r);
  CHECK(std::abs(r.delta_lm - delta) < 1e-12);
  CHECK(std::abs(r.theta - theta) < 1e-12);
  double mean_exp = 0.0, mean_eta = 0.0;
  for (double e : r.eta_hat) {
    mean_exp += std::exp(e);
    mean_eta += e;
  }
  CHECK(std::abs(mean_exp / r.eta_hat.size() - r.theta) < 1e-12);
  CHECK(std::abs(mean_eta / r.eta_hat.size()) < 1e-12);
  CHECK(step1_cost_share(std::vector<double>{std::log(0.6)}).delta_lm == doctest::Approx(0.6));
  CHECK_THROWS_AS(step1_cost_share(std::vector<double>{}), DataError);
}

TEST_CASE("phi proxy") {
  CHECK(phi_proxy(1.0, 0.3, -0.05, 0.25, 0.75) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(phi_proxy(0.7, 0.25 / 0.75, -0.05, 0.25, 0.75) == doctest::Approx(0.7).epsilon(1e-14));
  CHECK_THROWS_AS(phi_proxy(1.0, 0.3, 0.0, 0.25, 0.75), DomainError);
}

TEST_CASE("exact identities at the true parameters") {
  DgpConfig c;
  c.n = 100;
  c.seed = 4;
  const auto sp = generate_panel(c);
  const auto& p = sp.params;
  const auto& ds = sp.data;
  double phi_err = 0.0, proxy_gap = 0.0, ystar_err = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& o = ds[i];
    const double phi = phi_proxy(o.m - o.l, o.s_l, p.beta_0, p.beta_l, p.delta_lm());
    phi_err = std::max(phi_err, std::abs(phi - sp.truth.phi[i]));
    const auto mm = omega_proxy(o, phi, p, ds.price_ratio_m(o.t), ds.price_ratio_l(o.t), ProxyChoice::Material);
    const auto ll = omega_proxy(o, phi, p, ds.price_ratio_m(o.t), ds.price_ratio_l(o.t), ProxyChoice::Labor);
    const auto av = omega_proxy(o, phi, p, ds.price_ratio_m(o.t), ds.price_ratio_l(o.t), ProxyChoice::Average);
    REQUIRE(mm);
    REQUIRE(ll);
    REQUIRE(av);
    proxy_gap = std::max(proxy_gap, std::abs(*mm - *ll));
    CHECK(*av == doctest::Approx(0.5 * (*mm + *ll)));
    // The simulated panel carries the true price ratios ln(theta / 1).
    const double target = sp.truth.omega[i] + p.beta_k * o.k + 0.5 * p.beta_kk * o.k * o.k;
    CHECK(std::abs(*mm - target) < 1e-8);
    ystar_err = std::max(ystar_err, std::abs(y_star(o, phi, p) - (target + sp.truth.eta[i])));
  }
  CHECK(phi_err < 1e-8);
  CHECK(proxy_gap < 1e-8);
  CHECK(ystar_err < 1e-8);

  const auto lat = recover_productivity(ds, p);
  double omega_err = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    // recover_productivity uses step-1 eta_hat: exact only up to the estimated theta*delta.
    omega_err = std::max(omega_err, std::abs(lat.omega[i] + lat.eta[i] - sp.truth.omega[i] - sp.truth.eta[i]));
  }
  CHECK(omega_err < 1e-8);
}

TEST_CASE("material proxy on a hand-built row") {
  PanelObservation o;
  o.m = 1.0;
  o.l = 0.5;
  TranslogParams p;  // bK 0.2, bKK -0.01, bL 0.25, bM 0.5, b0 -0.05, theta 1
  const double phi = 0.2;  // x = m - phi - l = 0.3
  const auto v = omega_proxy(o, phi, p, 0.0, 0.0, ProxyChoice::Material);
  REQUIRE(v);
  CHECK(*v == doctest::Approx(-std::log(0.515) + 0.5 - 0.175 - 0.00225).epsilon(1e-14));
  p.theta = 1.1;
  CHECK(*omega_proxy(o, phi, p, 0.3, 0.0, ProxyChoice::Material) ==
        doctest::Approx(*v + 0.3 - std::log(1.1)).epsilon(1e-14));
  p.beta_0 = 5.0;  // bM - b0 x < 0
  CHECK_FALSE(omega_proxy(o, phi, p, 0.0, 0.0, ProxyChoice::Material));
  CHECK_FALSE(omega_proxy(o, phi, p, 0.0, 0.0, ProxyChoice::Average));
}

TEST_CASE("zero shocks give zero omega") {
  TranslogParams p;
  p.theta = 1.0;
  std::vector<PanelObservation> v;
  for (int t = 1; t <= 3; ++t) {
    const auto s = solve_static_inputs(3.0 + 0.1 * t, 0.0, 0.1 * t, p, 1.0, 1.0, 1.0);
    PanelObservation o;
    o.firm_id = "A";
    o.t = t;
    o.k = 3.0 + 0.1 * t;
    o.l = s.l;
    o.m = s.m;
    o.y = translog_output(o.k, o.l, o.m, 0.1 * t, p);
    o.s_l = std::exp(o.l) / (std::exp(o.l) + std::exp(o.m));
    o.ln_r = std::log(p.delta_lm());
    v.push_back(o);
  }
  const auto lat = recover_productivity(PanelDataset(v), p);
  for (std::size_t i = 0; i < v.size(); ++i) {
    CHECK(std::abs(lat.omega[i]) < 1e-10);
    CHECK(std::abs(lat.eta[i]) < 1e-12);
    CHECK(std::abs(lat.phi[i] - 0.1 * (i + 1)) < 1e-10);
  }
}

TEST_CASE("noiseless step-2 residual vanishes at the truth") {
  const auto sp = generate_panel(noiseless_config());
  const auto d = build_step2_data(sp.data, build_lag_pairs(sp.data));
  CHECK(d.instruments.cols() == 5);
  CHECK(d.pairs.size() == 900);
  const auto eps = step2_residual(d, sp.params.delta_lm(), true_alpha(sp));
  CHECK(eps.lpNorm<Eigen::Infinity>() < 1e-10);
  const auto W = first_stage_weight(d.instruments, Weighting::InverseInstrumentGram);
  CHECK(step2_objective(d, sp.params.delta_lm(), true_alpha(sp), W) < 1e-20);
}

TEST_CASE("deeper capital lags drop short histories") {
  const auto sp = generate_panel(noiseless_config(20));
  const auto pairs = build_lag_pairs(sp.data);
  const auto d2 = build_step2_data(sp.data, pairs, 2);
  CHECK(d2.pairs.size() == 20 * 8);
  CHECK(d2.instruments.cols() == 6);
}

TEST_CASE("analytic step-2 Jacobian and information matrix match finite differences") {
  DgpConfig c;
  c.n = 60;
  c.seed = 31;
  c.dim_z = 1;
  c.laws.rho_phi_2 = {0.05};
  const auto sp = generate_panel(c);
  const auto d = build_step2_data(sp.data, build_lag_pairs(sp.data));
  const double delta = sp.params.delta_lm();
  Rng r(77);
  for (int k = 0; k < 20; ++k) {
    Eigen::VectorXd a(4);
    a << r.uniform(-0.2, -0.01), r.uniform(0.05, 0.7), r.uniform(0.0, 1.0), r.uniform(-0.5, 0.5);
    const auto f = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return step2_residual(d, delta, x); };
    CHECK(check_gradient(step2_jacobian(d, delta, a), finite_diff_jacobian(f, a)) < 1e-6);
    const auto g = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
      return d.instruments.transpose() * step2_residual(d, delta, x) / static_cast<double>(d.pairs.size());
    };
    CHECK(check_gradient(information_matrix(d, delta, a).matrix, finite_diff_jacobian(g, a)) < 1e-6);
  }
}

TEST_CASE("information matrix has full rank at the truth and a null beta_l column at rho = 1") {
  DgpConfig c;
  c.n = 200;
  c.seed = 2;
  const auto sp = generate_panel(c);
  const auto d = build_step2_data(sp.data, build_lag_pairs(sp.data));
  const auto rep = information_matrix(d, sp.params.delta_lm(), true_alpha(sp));
  CHECK(rep.full_column_rank);
  CHECK(rep.rank == 3);
  Eigen::VectorXd a(3);
  a << -0.05, 0.25, 1.0;
  const auto unit = information_matrix(d, 0.75, a);
  CHECK(unit.matrix.col(1).lpNorm<Eigen::Infinity>() < 1e-14);
  CHECK_FALSE(unit.full_column_rank);
}

TEST_CASE("step-2 GMM beats the truth and reports its branch floor") {
  DgpConfig c;
  c.n = 200;
  c.seed = 12;
  const auto sp = generate_panel(c);
  const auto d = build_step2_data(sp.data, build_lag_pairs(sp.data));
  const auto s1 = step1_cost_share(sp.data);
  const auto res = step2_gmm(d, s1.delta_lm);
  CHECK(res.converged);
  const auto W = first_stage_weight(d.instruments, Weighting::InverseInstrumentGram);
  CHECK(res.objective <= step2_objective(d, s1.delta_lm, true_alpha(sp), W) + 1e-15);
  CHECK(res.beta_m == s1.delta_lm - res.beta_l);
  CHECK(res.beta_0 > res.beta_0_floor);
  CHECK(res.beta_0_floor == doctest::Approx(step2_beta0_floor(d, s1.delta_lm)));
  CHECK(std::abs(res.beta_l - 0.25) < 0.05);
  CHECK(std::abs(res.rho_phi_1 - 0.9) < 0.05);
}

TEST_CASE("start grid covers negative b0 and the mirrored side on request") {
  const auto g = step2_start_grid(0.75, 0);
  for (const auto& a : g) {
    CHECK(a[0] < 0.0);
    CHECK(a[1] > 0.0);
    CHECK(a[1] < 0.75);
    CHECK(a[2] == 0.5);
  }
  const auto both = step2_start_grid(0.75, 1, true);
  CHECK(both.size() == 2 * g.size());
  CHECK(both.front().size() == 4);
  bool pos = false;
  for (const auto& a : both) pos = pos || a[0] > 0.0;
  CHECK(pos);
}

TEST_CASE("step 3 with bKK fixed at zero equals the profiled linear regression") {
  DgpConfig c;
  c.n = 150;
  c.seed = 13;
  c.params.beta_kk = 0.0;
  const auto sp = generate_panel(c);
  const auto& ds = sp.data;
  const auto pairs = build_lag_pairs(ds);
  std::vector<double> ys(ds.size()), ms(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ys[i] = y_star(ds[i], sp.truth.phi[i], sp.params);
    ms[i] = *omega_proxy(ds[i], sp.truth.phi[i], sp.params, 0.0, 0.0, ProxyChoice::Material);
  }
  const auto d = build_step3_data(ds, pairs, ys, ms);
  Step3Options opt;
  opt.beta_kk_zero = true;
  const auto res = step3_nls(d, opt);
  CHECK(res.converged);
  CHECK(res.beta_kk == 0.0);

  // Profile: for fixed bK the model is linear in (r0, r1).
  auto concentrated = [&](double bk, Eigen::Vector2d* coef) {
    Eigen::MatrixXd X(d.k.size(), 2);
    X.col(0).setOnes();
    X.col(1) = d.mstar_lag - bk * d.k_lag;
    const Eigen::VectorXd y = d.ystar - bk * d.k;
    const Eigen::Vector2d b = X.colPivHouseholderQr().solve(y);
    if (coef) *coef = b;
    return (y - X * b).squaredNorm();
  };
  double lo = -1.0, hi = 1.5;
  const double g = 0.5 * (std::sqrt(5.0) - 1.0);
  for (int it = 0; it < 200; ++it) {
    const double a = hi - g * (hi - lo), b = lo + g * (hi - lo);
    if (concentrated(a, nullptr) < concentrated(b, nullptr)) hi = b;
    else lo = a;
  }
  const double bk = 0.5 * (lo + hi);
  Eigen::Vector2d coef;
  concentrated(bk, &coef);
  CHECK(std::abs(res.beta_k - bk) < 1e-8);
  CHECK(std::abs(res.rho_omega_0 - coef[0]) < 1e-8);
  CHECK(std::abs(res.rho_omega_1 - coef[1]) < 1e-8);
}

TEST_CASE("analytic step-3 Jacobian matches finite differences") {
  DgpConfig c;
  c.n = 40;
  c.seed = 14;
  c.dim_x = 1;
  c.laws.rho_omega_2 = {0.1};
  const auto sp = generate_panel(c);
  const auto& ds = sp.data;
  std::vector<double> ys(ds.size()), ms(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ys[i] = y_star(ds[i], sp.truth.phi[i], sp.params);
    ms[i] = *omega_proxy(ds[i], sp.truth.phi[i], sp.params, 0.0, 0.0, ProxyChoice::Material);
  }
  const auto d = build_step3_data(ds, build_lag_pairs(ds), ys, ms);
  Rng r(5);
  for (int k = 0; k < 20; ++k) {
    Eigen::VectorXd g(5);
    for (int j = 0; j < 5; ++j) g[j] = r.uniform(-0.5, 0.5);
    auto f = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return step3_residual(d, x); };
    CHECK(check_gradient(step3_jacobian(d, g), finite_diff_jacobian(f, g)) < 1e-6);
  }
}

TEST_CASE("invalid proxies are dropped with a report") {
  DgpConfig c;
  c.n = 10;
  const auto sp = generate_panel(c);
  const auto& ds = sp.data;
  std::vector<double> ys(ds.size(), 1.0), ms(ds.size(), 1.0);
  ms[0] = NAN;
  ys[3] = NAN;
  const auto d = build_step3_data(ds, build_lag_pairs(ds), ys, ms);
  CHECK(d.pairs.size() == 90 - 2);
  REQUIRE(d.dropped.size() == 2);
}
