#include "mdprod/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "mdprod/errors.hpp"

namespace mdprod {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(trim(field));
      field.clear();
    } else {
      field += c;
    }
  }
  fields.push_back(trim(field));
  return fields;
}

std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::optional<int> parse_int(const std::string& s) {
  int v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

void check_finite(double v, const char* what, const PanelObservation& o) {
  if (!std::isfinite(v)) {
    throw DataError(std::string("non-finite ") + what + " for firm " + o.firm_id + " period " +
                    std::to_string(o.t));
  }
}

}  // namespace

PanelDataset::PanelDataset(std::vector<PanelObservation> observations, PriceSeries price_ratio_m,
                           PriceSeries price_ratio_l)
    : observations_(std::move(observations)),
      price_ratio_m_(std::move(price_ratio_m)),
      price_ratio_l_(std::move(price_ratio_l)) {
  std::stable_sort(observations_.begin(), observations_.end(),
                   [](const PanelObservation& a, const PanelObservation& b) {
                     return a.firm_id != b.firm_id ? a.firm_id < b.firm_id : a.t < b.t;
                   });
  if (!observations_.empty()) {
    dim_x_ = observations_.front().x.size();
    dim_z_ = observations_.front().z.size();
  }
  std::set<int> periods;
  firm_index_.reserve(observations_.size());
  for (std::size_t i = 0; i < observations_.size(); ++i) {
    const auto& o = observations_[i];
    if (i > 0 && observations_[i - 1].firm_id == o.firm_id && observations_[i - 1].t == o.t) {
      throw DataError("duplicate observation for firm " + o.firm_id + " period " +
                      std::to_string(o.t));
    }
    check_finite(o.y, "output", o);
    check_finite(o.k, "capital", o);
    check_finite(o.l, "labor", o);
    check_finite(o.m, "materials", o);
    check_finite(o.ln_r, "ln_r", o);
    if (!(o.s_l > 0.0 && o.s_l < 1.0)) {
      throw DataError("labor share outside (0,1) for firm " + o.firm_id + " period " +
                      std::to_string(o.t));
    }
    if (o.x.size() != dim_x_ || o.z.size() != dim_z_) {
      throw DataError("inconsistent control dimensions for firm " + o.firm_id);
    }
    for (double v : o.x) check_finite(v, "x control", o);
    for (double v : o.z) check_finite(v, "z control", o);
    if (firm_ids_.empty() || firm_ids_.back() != o.firm_id) firm_ids_.push_back(o.firm_id);
    firm_index_.push_back(firm_ids_.size() - 1);
    periods.insert(o.t);
  }
  for (auto* series : {&price_ratio_m_, &price_ratio_l_}) {
    if (series->empty()) {
      for (int t : periods) (*series)[t] = 0.0;
    } else {
      for (int t : periods) {
        auto it = series->find(t);
        if (it == series->end()) {
          throw DataError("price-ratio series misses period " + std::to_string(t));
        }
        if (!std::isfinite(it->second)) {
          throw DataError("non-finite price ratio for period " + std::to_string(t));
        }
      }
    }
  }
}

std::vector<int> PanelDataset::periods() const {
  std::set<int> p;
  for (const auto& o : observations_) p.insert(o.t);
  return {p.begin(), p.end()};
}

std::vector<LagPair> build_lag_pairs(const PanelDataset& dataset) {
  std::vector<LagPair> pairs;
  const auto& obs = dataset.observations();
  for (std::size_t i = 1; i < obs.size(); ++i) {
    if (obs[i].firm_id == obs[i - 1].firm_id && obs[i].t == obs[i - 1].t + 1) {
      pairs.push_back({i, i - 1});
    }
  }
  return pairs;
}

std::vector<std::optional<std::size_t>> previous_index(const PanelDataset& dataset,
                                                       const std::vector<LagPair>& pairs) {
  std::vector<std::optional<std::size_t>> prev(dataset.size());
  for (const auto& p : pairs) prev[p.current] = p.previous;
  return prev;
}

Shares compute_shares(double labor_cost, double material_cost, double revenue) {
  if (!(labor_cost > 0.0) || !(material_cost > 0.0) || !(revenue > 0.0)) {
    throw DomainError("compute_shares: labor, material and revenue must be strictly positive");
  }
  const double cost = labor_cost + material_cost;
  return {labor_cost / cost, std::log(cost / revenue)};
}

std::string LoadReport::summary() const {
  std::ostringstream os;
  os << "accepted rows: " << accepted << "\n";
  os << "rejected rows: " << rejected.size() << "\n";
  for (const auto& r : rejected) os << "  line " << r.line << ": " << r.reason << "\n";
  return os.str();
}

LoadedPanel read_csv(std::istream& in, const ColumnSchema& schema,
                     PanelDataset::PriceSeries price_ratio_m,
                     PanelDataset::PriceSeries price_ratio_l) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("CSV has no header row");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DataError("schema error: missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_firm = column(schema.firm_id);
  const std::size_t c_year = column(schema.year);
  const std::size_t c_out = column(schema.output);
  const std::size_t c_cap = column(schema.capital);
  const std::size_t c_lab = column(schema.labor_cost);
  const std::size_t c_mat = column(schema.material_cost);
  const std::size_t c_rev = column(schema.revenue);
  std::vector<std::size_t> c_x, c_z;
  for (const auto& n : schema.x) c_x.push_back(column(n));
  for (const auto& n : schema.z) c_z.push_back(column(n));

  LoadReport report;
  std::vector<PanelObservation> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    auto reject = [&](std::string why) { report.rejected.push_back({line_no, std::move(why)}); };
    if (f.size() != header.size()) {
      reject("expected " + std::to_string(header.size()) + " fields, got " +
             std::to_string(f.size()));
      continue;
    }
    PanelObservation o;
    o.firm_id = f[c_firm];
    if (o.firm_id.empty()) {
      reject("empty firm_id");
      continue;
    }
    const auto year = parse_int(f[c_year]);
    if (!year) {
      reject("non-integer year '" + f[c_year] + "'");
      continue;
    }
    o.t = *year;
    struct Level {
      std::size_t col;
      const char* name;
      double value = 0.0;
    };
    Level levels[] = {{c_out, "output"},      {c_cap, "capital"},       {c_lab, "labor_cost"},
                      {c_mat, "material_cost"}, {c_rev, "revenue"}};
    bool ok = true;
    for (auto& lv : levels) {
      const auto v = parse_double(f[lv.col]);
      if (!v) {
        reject(std::string("non-numeric ") + lv.name + " '" + f[lv.col] + "'");
        ok = false;
        break;
      }
      if (!(*v > 0.0)) {
        reject(std::string("nonpositive ") + lv.name);
        ok = false;
        break;
      }
      lv.value = *v;
    }
    if (!ok) continue;
    auto read_controls = [&](const std::vector<std::size_t>& cols, std::vector<double>& out) {
      for (auto c : cols) {
        const auto v = parse_double(f[c]);
        if (!v) {
          reject("non-numeric control '" + header[c] + "'");
          return false;
        }
        out.push_back(*v);
      }
      return true;
    };
    if (!read_controls(c_x, o.x) || !read_controls(c_z, o.z)) continue;
    const Shares sh = compute_shares(levels[2].value, levels[3].value, levels[4].value);
    if (!(sh.s_l > 0.0 && sh.s_l < 1.0)) {
      reject("labor share numerically at the boundary");
      continue;
    }
    o.y = std::log(levels[0].value);
    o.k = std::log(levels[1].value);
    o.l = std::log(levels[2].value);
    o.m = std::log(levels[3].value);
    o.s_l = sh.s_l;
    o.ln_r = sh.ln_r;
    rows.push_back(std::move(o));
  }
  if (rows.empty()) throw DataError("dataset error: no valid rows in CSV");
  report.accepted = rows.size();

  // Expenditures are converted to input quantities when price ratios are known.
  if (!price_ratio_m.empty() || !price_ratio_l.empty()) {
    for (auto& o : rows) {
      if (!price_ratio_l.empty()) {
        auto it = price_ratio_l.find(o.t);
        if (it == price_ratio_l.end())
          throw DataError("price_ratio_l misses period " + std::to_string(o.t));
        o.l -= it->second;
      }
      if (!price_ratio_m.empty()) {
        auto it = price_ratio_m.find(o.t);
        if (it == price_ratio_m.end())
          throw DataError("price_ratio_m misses period " + std::to_string(o.t));
        o.m -= it->second;
      }
    }
  }
  return {PanelDataset(std::move(rows), std::move(price_ratio_m), std::move(price_ratio_l)),
          std::move(report)};
}

LoadedPanel load_csv(const std::string& path, const ColumnSchema& schema,
                     PanelDataset::PriceSeries price_ratio_m,
                     PanelDataset::PriceSeries price_ratio_l) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV file '" + path + "'");
  return read_csv(in, schema, std::move(price_ratio_m), std::move(price_ratio_l));
}

void write_csv(std::ostream& out, const PanelDataset& dataset, const ColumnSchema& schema) {
  if (schema.x.size() != dataset.dim_x() || schema.z.size() != dataset.dim_z()) {
    throw DataError("write_csv: schema control columns do not match the dataset");
  }
  out << std::setprecision(17);
  out << schema.firm_id << ',' << schema.year << ',' << schema.output << ',' << schema.capital
      << ',' << schema.labor_cost << ',' << schema.material_cost << ',' << schema.revenue;
  for (const auto& n : schema.x) out << ',' << n;
  for (const auto& n : schema.z) out << ',' << n;
  out << '\n';
  for (const auto& o : dataset.observations()) {
    const double labor = std::exp(o.l + dataset.price_ratio_l(o.t));
    const double material = std::exp(o.m + dataset.price_ratio_m(o.t));
    // Revenue reproduces ln_r given the expenditures.
    const double revenue = (labor + material) * std::exp(-o.ln_r);
    out << o.firm_id << ',' << o.t << ',' << std::exp(o.y) << ',' << std::exp(o.k) << ','
        << labor << ',' << material << ',' << revenue;
    for (double v : o.x) out << ',' << v;
    for (double v : o.z) out << ',' << v;
    out << '\n';
  }
}

void write_csv(const std::string& path, const PanelDataset& dataset, const ColumnSchema& schema) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  write_csv(out, dataset, schema);
}

PanelDataset::PriceSeries load_price_series(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open price series '" + path + "'");
  PanelDataset::PriceSeries series;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 2) throw DataError(path + ":" + std::to_string(line_no) + ": expected 2 fields");
    const auto year = parse_int(f[0]);
    const auto value = parse_double(f[1]);
    if (!year || !value) {
      if (line_no == 1) continue;  // header
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed row");
    }
    series[*year] = *value;
  }
  if (series.empty()) throw DataError("price series '" + path + "' is empty");
  return series;
}

void write_price_series(const std::string& path, const PanelDataset::PriceSeries& series) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << std::setprecision(17) << "year,value\n";
  for (const auto& [t, v] : series) out << t << ',' << v << '\n';
}

}  // namespace mdprod
