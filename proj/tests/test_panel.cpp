#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mdprod/errors.hpp"
#include "mdprod/panel.hpp"
#include "mdprod/simulate.hpp"

using namespace mdprod;

namespace {

PanelObservation obs(const std::string& firm, int t, double s_l = 0.5) {
  PanelObservation o;
  o.firm_id = firm;
  o.t = t;
  o.s_l = s_l;
  return o;
}

}  // namespace

TEST_CASE("compute_shares") {
  auto a = compute_shares(30, 70, 100);
  CHECK(a.s_l == doctest::Approx(0.3));
  CHECK(std::abs(a.ln_r) < 1e-15);
  auto b = compute_shares(50, 50, 200);
  CHECK(b.s_l == 0.5);
  CHECK(b.ln_r == doctest::Approx(std::log(0.5)));
  auto c = compute_shares(25, 50, 100);
  CHECK(c.s_l == doctest::Approx(1.0 / 3.0));
  CHECK(c.ln_r == doctest::Approx(std::log(0.75)));
  CHECK_THROWS_AS(compute_shares(0, 1, 1), DomainError);
  CHECK_THROWS_AS(compute_shares(1, -1, 1), DomainError);
  CHECK_THROWS_AS(compute_shares(1, 1, 0), DomainError);
}

TEST_CASE("lag pairs skip gaps") {
  PanelDataset ds({obs("A", 1998), obs("A", 1999), obs("A", 2001)});
  auto pairs = build_lag_pairs(ds);
  REQUIRE(pairs.size() == 1);
  CHECK(ds[pairs[0].current].t == 1999);
  CHECK(ds[pairs[0].previous].t == 1998);
  CHECK(build_lag_pairs(PanelDataset{}).empty());
}

TEST_CASE("balanced panel has n(T-1) pairs, deterministically ordered") {
  std::vector<PanelObservation> v;
  for (int i = 9; i >= 0; --i)
    for (int t = 10; t >= 1; --t) v.push_back(obs("f" + std::to_string(100 + i), t));
  PanelDataset ds(v);
  auto pairs = build_lag_pairs(ds);
  CHECK(pairs.size() == 90);
  CHECK(build_lag_pairs(ds).size() == pairs.size());
  for (std::size_t j = 0; j < pairs.size(); ++j) {
    const auto& c = ds[pairs[j].current];
    const auto& p = ds[pairs[j].previous];
    CHECK(c.firm_id == p.firm_id);
    CHECK(c.t == p.t + 1);
    if (j > 0) CHECK(pairs[j].current > pairs[j - 1].current);
  }
  CHECK(ds.firm_count() == 10);
  CHECK(ds.periods().size() == 10);
}

TEST_CASE("dataset invariants") {
  CHECK_THROWS_AS(PanelDataset({obs("A", 1), obs("A", 1)}), DataError);
  CHECK_THROWS_AS(PanelDataset({obs("A", 1, 0.0)}), DataError);
  CHECK_THROWS_AS(PanelDataset({obs("A", 1, 1.0)}), DataError);
  auto bad = obs("A", 1);
  bad.y = NAN;
  CHECK_THROWS_AS(PanelDataset({bad}), DataError);
  auto ragged = obs("B", 1);
  ragged.x = {1.0};
  CHECK_THROWS_AS(PanelDataset({obs("A", 1), ragged}), DataError);
  CHECK_THROWS_AS(PanelDataset({obs("A", 1), obs("A", 2)}, {{1, 0.0}}), DataError);
  PanelDataset ok({obs("A", 1), obs("A", 2)});
  CHECK(ok.price_ratio_m(1) == 0.0);
  CHECK(ok.price_ratio_l(2) == 0.0);
}

TEST_CASE("read_csv builds logs, shares and a rejection report") {
  std::istringstream in(
      "firm_id,year,output,capital,labor_cost,material_cost,revenue,fes\n"
      "A,1998,100,50,30,70,100,0.1\n"
      "A,1999,110,55,25,50,100,0.2\n"
      "B,1998,-1,50,30,70,100,0.0\n"
      "B,1999,abc,50,30,70,100,0.0\n"
      "B,2000,100,50,30,70\n");
  ColumnSchema schema;
  schema.z = {"fes"};
  auto loaded = read_csv(in, schema);
  const auto& ds = loaded.dataset;
  REQUIRE(ds.size() == 2);
  CHECK(loaded.report.accepted == 2);
  REQUIRE(loaded.report.rejected.size() == 3);
  CHECK(loaded.report.rejected[0].line == 4);
  CHECK(loaded.report.rejected[1].line == 5);
  CHECK(loaded.report.rejected[2].line == 6);
  CHECK(loaded.report.summary().find("rejected rows: 3") != std::string::npos);
  CHECK(ds[0].s_l == doctest::Approx(0.3));
  CHECK(std::abs(ds[0].ln_r) < 1e-15);
  CHECK(ds[1].ln_r == doctest::Approx(std::log(0.75)));
  CHECK(ds[0].y == doctest::Approx(std::log(100.0)));
  CHECK(ds[0].l == doctest::Approx(std::log(30.0)));
  CHECK(ds[0].m == doctest::Approx(std::log(70.0)));
  CHECK(ds.dim_z() == 1);
  CHECK(ds[1].z[0] == 0.2);
  CHECK(std::abs(std::exp(ds[1].ln_r) - 75.0 / 100.0) < 1e-12 * 0.75);
}

TEST_CASE("read_csv applies price ratios to the input logs") {
  std::istringstream in(
      "firm_id,year,output,capital,labor_cost,material_cost,revenue\n"
      "A,1,100,50,30,70,100\n");
  auto ds = read_csv(in, {}, {{1, 0.2}}, {{1, -0.1}}).dataset;
  CHECK(ds[0].m == doctest::Approx(std::log(70.0) - 0.2));
  CHECK(ds[0].l == doctest::Approx(std::log(30.0) + 0.1));
  CHECK(ds.price_ratio_m(1) == 0.2);
}

TEST_CASE("read_csv errors") {
  std::istringstream missing("firm_id,year,output,capital,labor_cost,revenue\nA,1,1,1,1,1\n");
  CHECK_THROWS_AS(read_csv(missing), DataError);
  std::istringstream none(
      "firm_id,year,output,capital,labor_cost,material_cost,revenue\n"
      "A,1,0,1,1,1,1\n");
  CHECK_THROWS_AS(read_csv(none), DataError);
  std::istringstream empty("");
  CHECK_THROWS_AS(read_csv(empty), DataError);
}

TEST_CASE("write_csv and read_csv round-trip a simulated panel") {
  DgpConfig c;
  c.n = 20;
  c.T = 4;
  c.dim_x = 1;
  c.dim_z = 1;
  c.laws.rho_omega_2 = {0.05};
  c.laws.rho_phi_2 = {0.02};
  c.seed = 17;
  const auto sp = generate_panel(c);
  ColumnSchema schema;
  schema.x = {"x1"};
  schema.z = {"z1"};
  std::stringstream io;
  write_csv(io, sp.data, schema);
  const auto back = read_csv(io, schema, sp.data.price_ratio_m_series(), sp.data.price_ratio_l_series());
  REQUIRE(back.report.rejected.empty());
  const auto& a = sp.data;
  const auto& b = back.dataset;
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].firm_id == b[i].firm_id);
    CHECK(a[i].t == b[i].t);
    for (auto [u, v] : {std::pair{a[i].y, b[i].y}, {a[i].k, b[i].k}, {a[i].l, b[i].l}, {a[i].m, b[i].m},
                        {a[i].s_l, b[i].s_l}, {a[i].ln_r, b[i].ln_r}, {a[i].x[0], b[i].x[0]},
                        {a[i].z[0], b[i].z[0]}})
      worst = std::max(worst, std::abs(u - v));
  }
  CHECK(worst < 1e-12);
  // A second trip changes nothing beyond rounding.
  std::stringstream io2;
  write_csv(io2, b, schema);
  const auto again = read_csv(io2, schema, a.price_ratio_m_series(), a.price_ratio_l_series()).dataset;
  double drift = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i)
    drift = std::max({drift, std::abs(again[i].y - b[i].y), std::abs(again[i].m - b[i].m),
                      std::abs(again[i].ln_r - b[i].ln_r), std::abs(again[i].s_l - b[i].s_l)});
  CHECK(drift < 1e-13);
}
