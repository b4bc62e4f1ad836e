#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "mdprod/bootstrap.hpp"
#include "mdprod/estimate.hpp"
#include "mdprod/panel.hpp"
#include "mdprod/partialid.hpp"
#include "mdprod/simulate.hpp"

namespace mdprod {

inline constexpr int kConfigVersion = 1;

struct InputConfig {
  std::string panel;    ///< level CSV
  std::string price_m;  ///< optional (year, log P^M/P^Y) series
  std::string price_l;  ///< optional (year, log P^L/P^Y) series
  ColumnSchema columns;
};

struct PartialIdSettings {
  std::vector<double> cutoff_levels{0.25, 0.5, 0.75};
  std::optional<double> slack;  ///< default c N^(-1/3)
  double slack_constant = kDefaultSlackConstant;
  double half_width = 0.5;  ///< default grid around the point estimate
  int count = 11;
  std::optional<std::array<GridAxis, 5>> grid;  ///< explicit grid overrides the default
  PropensityOptions propensity;
};

/// Everything a CLI run can be configured with. Keys absent from the file keep
/// these defaults.
struct RunConfig {
  int version = kConfigVersion;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int threads = 1;
  std::string output = "out";  ///< output path prefix
  DgpConfig dgp;
  Technology technology = Technology::Translog;  ///< estimator technology
  EstimateOptions estimator;
  int replications = 200;
  BootstrapConfig bootstrap;
  PartialIdSettings partialid;
  InputConfig input;
};

/// Parses YAML text. Unknown keys, wrong types and invalid values throw
/// ConfigError naming the field and line.
RunConfig parse_run_config(const std::string& yaml);
RunConfig load_run_config(const std::string& path);

const char* to_string(Technology technology);
Technology parse_technology(const std::string& name);
LawForm parse_law(const std::string& name);
ProxyChoice parse_proxy(const std::string& name);

}  // namespace mdprod
