#include "mdprod/config.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

#include "mdprod/errors.hpp"

namespace mdprod {

namespace {

[[noreturn]] void fail(const YAML::Node& node, const std::string& path, const std::string& msg) {
  std::ostringstream os;
  os << "config: " << path << ": " << msg;
  if (node.IsDefined() && node.Mark().line >= 0) os << " (line " << node.Mark().line + 1 << ")";
  throw ConfigError(os.str());
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

void require_map(const YAML::Node& n, const std::string& path) {
  if (!n.IsMap()) fail(n, path, "expected a mapping");
}

void check_keys(const YAML::Node& n, const std::string& path, const std::set<std::string>& allowed) {
  require_map(n, path);
  for (const auto& kv : n) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) fail(kv.first, join(path, key), "unknown key");
  }
}

template <class T>
T scalar(const YAML::Node& n, const std::string& path, const char* what) {
  if (!n.IsScalar()) fail(n, path, std::string("expected ") + what);
  try {
    return n.as<T>();
  } catch (const YAML::Exception&) {
    fail(n, path, std::string("expected ") + what);
  }
}

template <class T>
void read(const YAML::Node& parent, const std::string& path, const char* key, T& out) {
  const YAML::Node n = parent[key];
  if (!n.IsDefined()) return;
  if constexpr (std::is_same_v<T, bool>) {
    out = scalar<bool>(n, join(path, key), "a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    out = scalar<T>(n, join(path, key), "an integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    out = scalar<T>(n, join(path, key), "a number");
  } else {
    out = scalar<T>(n, join(path, key), "a string");
  }
}

template <class T>
void read_list(const YAML::Node& parent, const std::string& path, const char* key, std::vector<T>& out) {
  const YAML::Node n = parent[key];
  if (!n.IsDefined()) return;
  const std::string p = join(path, key);
  if (!n.IsSequence()) fail(n, p, "expected a list");
  out.clear();
  for (std::size_t i = 0; i < n.size(); ++i) {
    out.push_back(scalar<T>(n[i], p + "[" + std::to_string(i) + "]", "a number"));
  }
}

void read_range(const YAML::Node& parent, const std::string& path, const char* key, UniformRange& out) {
  std::vector<double> v;
  read_list(parent, path, key, v);
  if (!parent[key].IsDefined()) return;
  if (v.size() != 2) fail(parent[key], join(path, key), "expected [lo, hi]");
  out = {v[0], v[1]};
}

template <class Fn>
void with_map(const YAML::Node& parent, const std::string& path, const char* key, const std::set<std::string>& keys,
              Fn&& fn) {
  const YAML::Node n = parent[key];
  if (!n.IsDefined() || n.IsNull()) return;
  const std::string p = join(path, key);
  check_keys(n, p, keys);
  fn(n, p);
}

template <class Parse>
auto read_enum(const YAML::Node& parent, const std::string& path, const char* key, Parse parse)
    -> std::optional<decltype(parse(std::string()))> {
  const YAML::Node n = parent[key];
  if (!n.IsDefined()) return std::nullopt;
  const auto s = scalar<std::string>(n, join(path, key), "a string");
  try {
    return parse(s);
  } catch (const ConfigError& e) {
    fail(n, join(path, key), e.what());
  }
}

Weighting parse_weighting(const std::string& s) {
  if (s == "identity") return Weighting::Identity;
  if (s == "inverse_gram") return Weighting::InverseInstrumentGram;
  if (s == "two_step") return Weighting::TwoStepEfficient;
  throw ConfigError("unknown weighting '" + s + "' (identity, inverse_gram, two_step)");
}

void read_dgp(const YAML::Node& n, const std::string& p, DgpConfig& d) {
  read(n, p, "n", d.n);
  read(n, p, "T", d.T);
  read(n, p, "first_period", d.first_period);
  if (auto t = read_enum(n, p, "technology", parse_technology)) d.technology = *t;
  with_map(n, p, "params", {"beta_k", "beta_kk", "beta_l", "beta_m", "beta_0"},
           [&](const YAML::Node& m, const std::string& q) {
             read(m, q, "beta_k", d.params.beta_k);
             read(m, q, "beta_kk", d.params.beta_kk);
             read(m, q, "beta_l", d.params.beta_l);
             read(m, q, "beta_m", d.params.beta_m);
             read(m, q, "beta_0", d.params.beta_0);
           });
  with_map(n, p, "ces", {"sigma", "nu", "beta_k", "beta_m"}, [&](const YAML::Node& m, const std::string& q) {
    read(m, q, "sigma", d.ces.sigma);
    read(m, q, "nu", d.ces.nu);
    read(m, q, "beta_k", d.ces.beta_k);
    read(m, q, "beta_m", d.ces.beta_m);
  });
  with_map(n, p, "laws", {"rho_phi_1", "rho_phi_2", "rho_omega_0", "rho_omega_1", "rho_omega_2"},
           [&](const YAML::Node& m, const std::string& q) {
             read(m, q, "rho_phi_1", d.laws.rho_phi_1);
             read_list(m, q, "rho_phi_2", d.laws.rho_phi_2);
             read(m, q, "rho_omega_0", d.laws.rho_omega_0);
             read(m, q, "rho_omega_1", d.laws.rho_omega_1);
             read_list(m, q, "rho_omega_2", d.laws.rho_omega_2);
           });
  read(n, p, "sigma_omega", d.sigma_omega);
  read(n, p, "sigma_phi", d.sigma_phi);
  read(n, p, "sigma_eta", d.sigma_eta);
  if (n["iota"].IsDefined()) {
    std::vector<double> iota;
    read_list(n, p, "iota", iota);
    if (iota.size() != 3) fail(n["iota"], join(p, "iota"), "expected three coefficients");
    d.iota_1 = iota[0];
    d.iota_2 = iota[1];
    d.iota_3 = iota[2];
  }
  read_list(n, p, "depreciation", d.depreciation_set);
  read_range(n, p, "k_init", d.k_init);
  read_range(n, p, "omega_init", d.omega_init);
  read_range(n, p, "phi_init", d.phi_init);
  read_list(n, p, "price_l", d.price_l);
  read_list(n, p, "price_m", d.price_m);
  read_list(n, p, "price_y", d.price_y);
  read(n, p, "markup", d.markup);
  read(n, p, "dim_x", d.dim_x);
  read(n, p, "dim_z", d.dim_z);
  read_range(n, p, "control_range", d.control_range);
}

void read_estimator(const YAML::Node& n, const std::string& p, RunConfig& c) {
  EstimateOptions& e = c.estimator;
  if (auto t = read_enum(n, p, "technology", parse_technology)) c.technology = *t;
  if (auto l = read_enum(n, p, "law", parse_law)) e.law = *l;
  if (auto x = read_enum(n, p, "proxy", parse_proxy)) e.proxy = *x;
  if (auto w = read_enum(n, p, "weighting", parse_weighting)) e.step2.weighting = *w;
  read(n, p, "capital_lags", e.capital_lags);
  read(n, p, "starts", e.step2.starts);
  read(n, p, "enforce_branch", e.step2.enforce_branch);
  read(n, p, "positive_beta0", e.step2.positive_beta0);
  read(n, p, "beta_kk_zero", e.step3.beta_kk_zero);
  OptimOptions o = e.step2.optim;
  read(n, p, "gradient_tol", o.gradient_tol);
  read(n, p, "step_tol", o.step_tol);
  read(n, p, "max_iterations", o.max_iterations);
  e.step2.optim = o;
  e.step3.optim = o;
  with_map(n, p, "sieve", {"degree", "candidates"}, [&](const YAML::Node& m, const std::string& q) {
    read(m, q, "degree", e.sieve.degree);
    read_list(m, q, "candidates", e.sieve.candidates);
  });
  if (e.capital_lags < 1) fail(n["capital_lags"], join(p, "capital_lags"), "must be at least 1");
  if (e.step2.starts < 1) fail(n["starts"], join(p, "starts"), "must be at least 1");
  if (o.max_iterations < 1) fail(n["max_iterations"], join(p, "max_iterations"), "must be at least 1");
  if (!(o.gradient_tol > 0.0)) fail(n["gradient_tol"], join(p, "gradient_tol"), "must be positive");
  if (e.sieve.degree < 0 || e.sieve.degree > 3) fail(n["sieve"], join(p, "sieve.degree"), "must be 0 (GCV) or 1..3");
  if (e.sieve.candidates.empty()) fail(n["sieve"], join(p, "sieve.candidates"), "must not be empty");
  for (int d : e.sieve.candidates) {
    if (d < 1 || d > 3) fail(n["sieve"], join(p, "sieve.candidates"), "degrees must lie in 1..3");
  }
}

void read_partialid(const YAML::Node& n, const std::string& p, PartialIdSettings& s) {
  read_list(n, p, "cutoffs", s.cutoff_levels);
  if (n["slack"].IsDefined()) {
    double v = 0.0;
    read(n, p, "slack", v);
    if (!(v >= 0.0)) fail(n["slack"], join(p, "slack"), "must be nonnegative");
    s.slack = v;
  }
  read(n, p, "slack_constant", s.slack_constant);
  read(n, p, "half_width", s.half_width);
  read(n, p, "count", s.count);
  with_map(n, p, "grid", {"beta_k", "beta_kk", "beta_l", "beta_m", "beta_0"},
           [&](const YAML::Node& m, const std::string& q) {
             std::array<GridAxis, 5> g;
             const char* keys[] = {"beta_k", "beta_kk", "beta_l", "beta_m", "beta_0"};
             for (std::size_t j = 0; j < 5; ++j) {
               if (!m[keys[j]].IsDefined()) fail(m, join(q, keys[j]), "missing; give all five axes");
               std::vector<double> v;
               read_list(m, q, keys[j], v);
               if (v.size() != 3 || v[2] < 1 || v[2] != static_cast<int>(v[2])) {
                 fail(m[keys[j]], join(q, keys[j]), "expected [lo, hi, count]");
               }
               g[j] = {v[0], v[1], static_cast<int>(v[2])};
             }
             s.grid = g;
           });
  with_map(n, p, "propensity", {"degree", "clip"}, [&](const YAML::Node& m, const std::string& q) {
    read(m, q, "degree", s.propensity.degree);
    if (m["clip"].IsDefined()) {
      std::vector<double> v;
      read_list(m, q, "clip", v);
      if (v.size() != 2 || !(0.0 < v[0] && v[0] < v[1] && v[1] < 1.0)) {
        fail(m["clip"], join(q, "clip"), "expected [lo, hi] with 0 < lo < hi < 1");
      }
      s.propensity.clip_lo = v[0];
      s.propensity.clip_hi = v[1];
    }
  });
  if (!(s.slack_constant >= 0.0)) fail(n["slack_constant"], join(p, "slack_constant"), "must be nonnegative");
  if (!(s.half_width > 0.0)) fail(n["half_width"], join(p, "half_width"), "must be positive");
  if (s.count < 1) fail(n["count"], join(p, "count"), "must be at least 1");
  if (s.propensity.degree < 1) fail(n["propensity"], join(p, "propensity.degree"), "must be at least 1");
  for (double q : s.cutoff_levels) {
    if (!(q > 0.0 && q < 1.0)) fail(n["cutoffs"], join(p, "cutoffs"), "levels must lie in (0, 1)");
  }
  if (s.cutoff_levels.empty()) fail(n["cutoffs"], join(p, "cutoffs"), "must not be empty");
}

void read_input(const YAML::Node& n, const std::string& p, InputConfig& in) {
  read(n, p, "panel", in.panel);
  read(n, p, "price_m", in.price_m);
  read(n, p, "price_l", in.price_l);
  with_map(n, p, "columns",
           {"firm_id", "year", "output", "capital", "labor_cost", "material_cost", "revenue", "x", "z"},
           [&](const YAML::Node& m, const std::string& q) {
             ColumnSchema& c = in.columns;
             read(m, q, "firm_id", c.firm_id);
             read(m, q, "year", c.year);
             read(m, q, "output", c.output);
             read(m, q, "capital", c.capital);
             read(m, q, "labor_cost", c.labor_cost);
             read(m, q, "material_cost", c.material_cost);
             read(m, q, "revenue", c.revenue);
             for (const char* key : {"x", "z"}) {
               const YAML::Node l = m[key];
               if (!l.IsDefined()) continue;
               if (!l.IsSequence()) fail(l, join(q, key), "expected a list of column names");
               auto& out = std::string(key) == "x" ? c.x : c.z;
               out.clear();
               for (std::size_t i = 0; i < l.size(); ++i) {
                 out.push_back(scalar<std::string>(l[i], join(q, key), "a string"));
               }
             }
           });
}

}  // namespace

const char* to_string(Technology t) { return t == Technology::Translog ? "translog" : "ces"; }

Technology parse_technology(const std::string& s) {
  if (s == "translog") return Technology::Translog;
  if (s == "ces") return Technology::Ces;
  throw ConfigError("unknown technology '" + s + "' (translog, ces)");
}

LawForm parse_law(const std::string& s) {
  if (s == "parametric") return LawForm::Parametric;
  if (s == "sieve") return LawForm::Sieve;
  throw ConfigError("unknown law '" + s + "' (parametric, sieve)");
}

ProxyChoice parse_proxy(const std::string& s) {
  if (s == "material") return ProxyChoice::Material;
  if (s == "labor") return ProxyChoice::Labor;
  if (s == "average") return ProxyChoice::Average;
  throw ConfigError("unknown proxy '" + s + "' (material, labor, average)");
}

RunConfig parse_run_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: not valid YAML: ") + e.what());
  }
  RunConfig c;
  if (root.IsNull()) fail(root, "version", "missing");
  check_keys(root, "",
             {"version", "seed", "threads", "output", "dgp", "estimator", "montecarlo", "bootstrap", "partialid",
              "input"});
  if (!root["version"].IsDefined()) fail(root, "version", "missing");
  read(root, "", "version", c.version);
  if (c.version != kConfigVersion) {
    fail(root["version"], "version", "unsupported schema version " + std::to_string(c.version));
  }
  if (root["seed"].IsDefined()) {
    read(root, "", "seed", c.seed);
    c.seed_given = true;
  }
  read(root, "", "threads", c.threads);
  if (c.threads < 1) fail(root["threads"], "threads", "must be at least 1");
  read(root, "", "output", c.output);

  with_map(root, "", "dgp",
           {"n", "T", "first_period", "technology", "params", "ces", "laws", "sigma_omega", "sigma_phi", "sigma_eta",
            "iota", "depreciation", "k_init", "omega_init", "phi_init", "price_l", "price_m", "price_y", "markup",
            "dim_x", "dim_z", "control_range"},
           [&](const YAML::Node& n, const std::string& p) { read_dgp(n, p, c.dgp); });
  with_map(root, "", "estimator",
           {"technology", "law", "proxy", "weighting", "capital_lags", "starts", "enforce_branch", "positive_beta0",
            "beta_kk_zero", "gradient_tol", "step_tol", "max_iterations", "sieve"},
           [&](const YAML::Node& n, const std::string& p) { read_estimator(n, p, c); });
  with_map(root, "", "montecarlo", {"replications"}, [&](const YAML::Node& n, const std::string& p) {
    read(n, p, "replications", c.replications);
    if (c.replications < 1) fail(n["replications"], join(p, "replications"), "must be at least 1");
  });
  with_map(root, "", "bootstrap", {"B", "recenter", "levels", "weight_override", "unreliable_failure_rate"},
           [&](const YAML::Node& n, const std::string& p) {
             read(n, p, "B", c.bootstrap.B);
             read(n, p, "recenter", c.bootstrap.recenter);
             read_list(n, p, "levels", c.bootstrap.levels);
             read(n, p, "unreliable_failure_rate", c.bootstrap.unreliable_failure_rate);
             if (n["weight_override"].IsDefined()) {
               double w = 0.0;
               read(n, p, "weight_override", w);
               c.bootstrap.weight_override = w;
             }
           });
  with_map(root, "", "partialid",
           {"cutoffs", "slack", "slack_constant", "half_width", "count", "grid", "propensity"},
           [&](const YAML::Node& n, const std::string& p) { read_partialid(n, p, c.partialid); });
  with_map(root, "", "input", {"panel", "price_m", "price_l", "columns"},
           [&](const YAML::Node& n, const std::string& p) { read_input(n, p, c.input); });

  c.dgp.seed = c.seed;
  c.bootstrap.seed = c.seed;
  c.bootstrap.threads = c.threads;
  try {
    c.dgp.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: dgp: ") + e.what());
  }
  try {
    c.bootstrap.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: bootstrap: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace mdprod
