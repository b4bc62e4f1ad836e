#pragma once

#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mdprod {

/// One firm-year record, all quantities in logs except the labor share.
struct PanelObservation {
  std::string firm_id;
  int t = 0;
  double y = 0.0;     ///< log output
  double k = 0.0;     ///< log capital
  double l = 0.0;     ///< log labor
  double m = 0.0;     ///< log materials
  double s_l = 0.5;   ///< labor share of variable cost, in (0, 1)
  double ln_r = 0.0;  ///< log variable-cost-to-revenue ratio
  std::vector<double> x;  ///< controls of the Hicks-neutral law
  std::vector<double> z;  ///< controls of the labor-augmenting law
};

/// Immutable, validated panel sorted by (firm_id, t).
class PanelDataset {
 public:
  using PriceSeries = std::map<int, double>;

  PanelDataset() = default;
  /// Validates and sorts. Empty price series default to 0 for every period.
  /// Throws DataError on duplicate (firm, t), invalid values, ragged controls
  /// or price series that miss a period.
  PanelDataset(std::vector<PanelObservation> observations, PriceSeries price_ratio_m = {},
               PriceSeries price_ratio_l = {});

  const std::vector<PanelObservation>& observations() const { return observations_; }
  const PanelObservation& operator[](std::size_t i) const { return observations_[i]; }
  std::size_t size() const { return observations_.size(); }
  bool empty() const { return observations_.empty(); }

  /// log(P^M / P^Y) and log(P^L / P^Y) for period t.
  double price_ratio_m(int t) const { return price_ratio_m_.at(t); }
  double price_ratio_l(int t) const { return price_ratio_l_.at(t); }
  const PriceSeries& price_ratio_m_series() const { return price_ratio_m_; }
  const PriceSeries& price_ratio_l_series() const { return price_ratio_l_; }

  std::size_t dim_x() const { return dim_x_; }
  std::size_t dim_z() const { return dim_z_; }
  std::size_t firm_count() const { return firm_ids_.size(); }
  const std::vector<std::string>& firm_ids() const { return firm_ids_; }
  /// Dense firm index (0..firm_count-1) of observation i.
  std::size_t firm_index(std::size_t i) const { return firm_index_[i]; }
  std::vector<int> periods() const;

 private:
  std::vector<PanelObservation> observations_;
  PriceSeries price_ratio_m_;
  PriceSeries price_ratio_l_;
  std::vector<std::string> firm_ids_;
  std::vector<std::size_t> firm_index_;
  std::size_t dim_x_ = 0;
  std::size_t dim_z_ = 0;
};

/// Consecutive-period observation pair of one firm.
struct LagPair {
  std::size_t current = 0;
  std::size_t previous = 0;
};

/// (t, t-1) pairs ordered by firm then period. Gaps break the chain.
std::vector<LagPair> build_lag_pairs(const PanelDataset& dataset);

/// Index of the previous-period observation, or nullopt, for every observation.
std::vector<std::optional<std::size_t>> previous_index(const PanelDataset& dataset,
                                                       const std::vector<LagPair>& pairs);

struct Shares {
  double s_l;
  double ln_r;
};

/// s_l = labor/(labor+material), ln_r = ln((labor+material)/revenue).
Shares compute_shares(double labor_cost, double material_cost, double revenue);

/// Maps logical fields to CSV header names.
struct ColumnSchema {
  std::string firm_id = "firm_id";
  std::string year = "year";
  std::string output = "output";
  std::string capital = "capital";
  std::string labor_cost = "labor_cost";
  std::string material_cost = "material_cost";
  std::string revenue = "revenue";
  std::vector<std::string> x;  ///< optional omega-law control columns
  std::vector<std::string> z;  ///< optional phi-law control columns
};

struct RejectedRow {
  std::size_t line = 0;  ///< 1-based line number in the file
  std::string reason;
};

struct LoadReport {
  std::size_t accepted = 0;
  std::vector<RejectedRow> rejected;
  /// Plain-text summary of accepted and rejected rows.
  std::string summary() const;
};

struct LoadedPanel {
  PanelDataset dataset;
  LoadReport report;
};

/// Loads a level-valued CSV. Labor and material columns are expenditures;
/// when price-ratio series are given, l = ln(labor_cost) - price_ratio_l(t)
/// and m = ln(material_cost) - price_ratio_m(t) (both 0 by default).
/// Throws DataError on missing columns or when no row survives.
LoadedPanel load_csv(const std::string& path, const ColumnSchema& schema = {},
                     PanelDataset::PriceSeries price_ratio_m = {},
                     PanelDataset::PriceSeries price_ratio_l = {});
LoadedPanel read_csv(std::istream& in, const ColumnSchema& schema = {},
                     PanelDataset::PriceSeries price_ratio_m = {},
                     PanelDataset::PriceSeries price_ratio_l = {});

/// Writes the level CSV that load_csv reads back into the same dataset
/// (given the same price-ratio series). 17 significant digits.
void write_csv(std::ostream& out, const PanelDataset& dataset, const ColumnSchema& schema = {});
void write_csv(const std::string& path, const PanelDataset& dataset, const ColumnSchema& schema = {});

/// Two-column (year, value) series.
PanelDataset::PriceSeries load_price_series(const std::string& path);
void write_price_series(const std::string& path, const PanelDataset::PriceSeries& series);

}  // namespace mdprod
