#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <map>

#include "mdprod/errors.hpp"
#include "mdprod/simulate.hpp"

using namespace mdprod;

namespace {

TranslogParams baseline(double theta) {
  TranslogParams p;
  p.theta = theta;
  return p;
}

double expected_profit(double l, double m, double k, double omega, double phi, const TranslogParams& p,
                       double pl, double pm, double py) {
  return py * p.theta * std::exp(omega + translog_output(k, l, m, phi, p)) - pl * std::exp(l) - pm * std::exp(m);
}

}  // namespace

TEST_CASE("evolve_productivity") {
  ProductivityLaws laws;
  auto [phi0, omega0] = evolve_productivity(laws, 0.0, 0.0, {}, {}, 0.0, 0.0);
  CHECK(phi0 == 0.0);
  CHECK(omega0 == doctest::Approx(0.2));
  auto [phi1, omega1] = evolve_productivity(laws, 1.0, 0.0, {}, {}, 0.0, 0.0);
  CHECK(phi1 == doctest::Approx(0.9));
  (void)omega1;
  // Iterating the omega law converges to 0.2 / (1 - 0.6).
  double w = 0.0;
  for (int i = 0; i < 200; ++i) w = evolve_productivity(laws, 0.0, w, {}, {}, 0.0, 0.0).second;
  CHECK(w == doctest::Approx(0.5).epsilon(1e-12));
  laws.rho_omega_2 = {0.5};
  laws.rho_phi_2 = {-0.25};
  auto [phi2, omega2] = evolve_productivity(laws, 0.2, 0.4, {2.0}, {1.0}, 0.01, 0.02);
  CHECK(phi2 == doctest::Approx(0.9 * 0.2 - 0.25 + 0.01));
  CHECK(omega2 == doctest::Approx(0.2 + 0.6 * 0.4 + 1.0 + 0.02));
}

TEST_CASE("near-zero b0 matches the Cobb-Douglas closed form") {
  TranslogParams p = baseline(1.0);
  p.beta_0 = -1e-12;
  const double k = 3.0, omega = 0.1, phi = -0.2;
  const auto sol = solve_static_inputs(k, omega, phi, p, 1.0, 1.0, 1.0);
  // l and m from the log FOCs with b0 = 0: a 2x2 linear system.
  const double base = omega + p.beta_k * k + 0.5 * p.beta_kk * k * k + p.beta_l * phi;
  Eigen::Matrix2d A;
  A << p.beta_l - 1.0, p.beta_m, p.beta_l, p.beta_m - 1.0;
  Eigen::Vector2d b(-(std::log(p.beta_l) + base), -(std::log(p.beta_m) + base));
  const Eigen::Vector2d lm = A.lu().solve(b);
  CHECK(std::abs(sol.l - lm[0]) < 1e-6);
  CHECK(std::abs(sol.m - lm[1]) < 1e-6);
}

TEST_CASE("static solution agrees with a brute-force profit maximizer") {
  const double theta = std::exp(0.5 * 0.07 * 0.07);
  const TranslogParams p = baseline(theta);
  const double k = 3.0, omega = 0.1, phi = -0.2;
  const auto sol = solve_static_inputs(k, omega, phi, p, theta, theta, 1.0);
  CHECK(sol.foc_residual < 1e-10);

  // With b0 < 0 the translog is convex in m - phi - l far from the optimum, so
  // profit has no global maximum. Search a box around the Cobb-Douglas point.
  const double base = std::log(theta) + omega + p.beta_k * k + 0.5 * p.beta_kk * k * k + p.beta_l * phi;
  Eigen::Matrix2d A;
  A << p.beta_l - 1.0, p.beta_m, p.beta_l, p.beta_m - 1.0;
  const Eigen::Vector2d cd = A.lu().solve(
      Eigen::Vector2d(-(std::log(p.beta_l / theta) + base), -(std::log(p.beta_m / theta) + base)));
  double cl = cd[0], cm = cd[1], half = 2.0;
  for (int round = 0; round < 40; ++round) {
    double best = -INFINITY, bl = cl, bm = cm;
    for (int i = -20; i <= 20; ++i)
      for (int j = -20; j <= 20; ++j) {
        const double l = cl + half * i / 20.0, m = cm + half * j / 20.0;
        const double v = expected_profit(l, m, k, omega, phi, p, theta, theta, 1.0);
        if (v > best) {
          best = v;
          bl = l;
          bm = m;
        }
      }
    cl = bl;
    cm = bm;
    half *= 0.7;
  }
  CHECK(std::abs(sol.l - cl) < 1e-4);
  CHECK(std::abs(sol.m - cm) < 1e-4);
}

TEST_CASE("solved inputs give the share identity and interior elasticities") {
  const TranslogParams p = baseline(1.0);
  for (double omega : {-1.0, 0.0, 1.0})
    for (double phi : {-1.0, 0.0, 1.0}) {
      const auto s = solve_static_inputs(3.0, omega, phi, p, 1.0, 1.0, 1.0);
      const double x = s.m - phi - s.l;
      const double eps_l = p.beta_l + p.beta_0 * x, eps_m = p.beta_m - p.beta_0 * x;
      CHECK(eps_l > 0.0);
      CHECK(eps_m > 0.0);
      // Equal prices: S^L = L / (L + M) must equal eps_l / (eps_l + eps_m).
      const double share = std::exp(s.l) / (std::exp(s.l) + std::exp(s.m));
      CHECK(std::abs(share - eps_l / p.delta_lm()) < 1e-10);
      auto [rl, rm] = translog_foc_residuals(s.l, s.m, 3.0, omega, phi, p, 1.0, 1.0, 1.0);
      CHECK(std::abs(rl) < 1e-10);
      CHECK(std::abs(rm) < 1e-10);
    }
}

TEST_CASE("markup scales marginal revenue") {
  const TranslogParams p = baseline(1.0);
  const auto s = solve_static_inputs(3.0, 0.0, 0.0, p, 1.0, 1.0, 1.0, 1.25);
  auto [rl, rm] = translog_foc_residuals(s.l, s.m, 3.0, 0.0, 0.0, p, 1.0, 1.0, 1.0, 1.25);
  CHECK(std::abs(rl) < 1e-10);
  CHECK(std::abs(rm) < 1e-10);
  const auto c = solve_static_inputs(3.0, 0.0, 0.0, p, 1.0, 1.0, 1.0, 1.0);
  CHECK(s.m < c.m);
  CHECK_THROWS_AS(solve_static_inputs(3.0, 0.0, 0.0, p, 1.0, 1.0, 1.0, 0.5), ConfigError);
}

TEST_CASE("same seed gives bit-identical panels for any thread count") {
  DgpConfig c;
  c.n = 50;
  c.seed = 99;
  const auto a = generate_panel(c, 1);
  const auto b = generate_panel(c, 4);
  REQUIRE(a.data.size() == b.data.size());
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    CHECK(a.data[i].y == b.data[i].y);
    CHECK(a.data[i].k == b.data[i].k);
    CHECK(a.data[i].l == b.data[i].l);
    CHECK(a.data[i].m == b.data[i].m);
    CHECK(a.data[i].ln_r == b.data[i].ln_r);
    CHECK(a.truth.omega[i] == b.truth.omega[i]);
  }
  c.seed = 100;
  const auto d = generate_panel(c, 1);
  CHECK(d.data[0].y != a.data[0].y);
}

TEST_CASE("no randomness gives identical firm paths") {
  DgpConfig c;
  c.n = 5;
  c.sigma_eta = c.sigma_omega = c.sigma_phi = 0.0;
  c.k_init = {50.0, 50.0};
  c.omega_init = {0.3, 0.3};
  c.phi_init = {-0.1, -0.1};
  c.depreciation_set = {0.1};
  const auto sp = generate_panel(c);
  const auto& ds = sp.data;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::size_t j = i % static_cast<std::size_t>(c.T);  // same period of firm 0
    CHECK(ds[i].t == ds[j].t);
    CHECK(ds[i].y == ds[j].y);
    CHECK(ds[i].k == ds[j].k);
    CHECK(ds[i].m == ds[j].m);
  }
}

TEST_CASE("generated panel invariants") {
  for (double markup : {1.0, 1.25}) {
    DgpConfig c;
    c.n = 100;
    c.markup = markup;
    c.seed = 5;
    const auto sp = generate_panel(c);
    const auto& ds = sp.data;
    REQUIRE(ds.size() == 1000);
    CHECK(sp.max_foc_residual < 1e-10);
    const TranslogParams& p = sp.params;
    CHECK(p.theta == doctest::Approx(std::exp(0.5 * 0.07 * 0.07)));
    double worst_r = 0.0, worst_law = 0.0, worst_k = 0.0, worst_foc = 0.0;
    const double ln_td = std::log(p.theta * p.delta_lm()) - std::log(markup);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto& o = ds[i];
      CHECK(o.s_l > 0.0);
      CHECK(o.s_l < 1.0);
      worst_r = std::max(worst_r, std::abs(o.ln_r - (ln_td - sp.truth.eta[i])));
      auto [rl, rm] = translog_foc_residuals(o.l, o.m, o.k, sp.truth.omega[i], sp.truth.phi[i], p, p.theta,
                                             p.theta, 1.0, markup);
      worst_foc = std::max({worst_foc, std::abs(rl), std::abs(rm)});
      if (i > 0 && ds[i - 1].firm_id == o.firm_id) {
        auto [phi, omega] = evolve_productivity(sp.laws, sp.truth.phi[i - 1], sp.truth.omega[i - 1], {}, {},
                                                sp.truth.zeta_phi[i], sp.truth.zeta_omega[i]);
        worst_law = std::max({worst_law, std::abs(phi - sp.truth.phi[i]), std::abs(omega - sp.truth.omega[i])});
        const double kp = std::exp(ds[i - 1].k);
        const double inv = std::pow(kp, c.iota_1) * std::exp(c.iota_2 * sp.truth.omega[i - 1]) *
                           std::exp(c.iota_3 * sp.truth.phi[i - 1]);
        const double kn = inv + (1.0 - sp.depreciation[ds.firm_index(i)]) * kp;
        worst_k = std::max(worst_k, std::abs(std::log(kn) - o.k));
      } else {
        CHECK(sp.truth.zeta_phi[i] == 0.0);
        CHECK(std::exp(o.k) >= 10.0 - 1e-9);
        CHECK(std::exp(o.k) <= 200.0 + 1e-9);
      }
      // Output is the technology plus both shocks.
      CHECK(std::abs(o.y - (translog_output(o.k, o.l, o.m, sp.truth.phi[i], p) + sp.truth.omega[i] +
                            sp.truth.eta[i])) < 1e-12);
    }
    CHECK(worst_r < 1e-12);
    CHECK(worst_law < 1e-12);
    CHECK(worst_k < 1e-12);
    CHECK(worst_foc < 1e-10);
  }
}

TEST_CASE("depreciation rates are spread uniformly across firms") {
  DgpConfig c;
  c.n = 400;
  const auto sp = generate_panel(c);
  std::map<double, int> count;
  for (double d : sp.depreciation) ++count[d];
  REQUIRE(count.size() == 5);
  for (const auto& [d, n] : count) CHECK(n == 80);
}

TEST_CASE("CES technology satisfies its FOCs") {
  DgpConfig c;
  c.technology = Technology::Ces;
  c.n = 50;
  const auto sp = generate_panel(c);
  CHECK(sp.max_foc_residual < 1e-10);
  for (std::size_t i = 0; i < sp.data.size(); i += 7) {
    const auto& o = sp.data[i];
    auto [rl, rm] = ces_foc_residuals(o.l, o.m, o.k, sp.truth.omega[i], sp.truth.phi[i], sp.ces, sp.ces.theta,
                                      sp.ces.theta, 1.0);
    CHECK(std::abs(rl) < 1e-10);
    CHECK(std::abs(rm) < 1e-10);
    CHECK(std::abs(o.y - (ces_output(o.k, o.l, o.m, sp.truth.phi[i], sp.ces) + sp.truth.omega[i] +
                          sp.truth.eta[i])) < 1e-12);
  }
}

TEST_CASE("config validation") {
  DgpConfig c;
  c.params.beta_0 = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DgpConfig{};
  c.T = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DgpConfig{};
  c.markup = 0.9;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DgpConfig{};
  c.depreciation_set = {1.0};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DgpConfig{};
  c.laws.rho_phi_1 = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DgpConfig{};
  c.params.beta_m = 0.8;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = DgpConfig{};
  c.ces.sigma = 1.0;
  c.technology = Technology::Ces;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_NOTHROW(DgpConfig{}.validate());
}
