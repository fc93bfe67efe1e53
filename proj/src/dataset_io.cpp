#include "occu/dataset_io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "occu/common.hpp"

namespace fs = std::filesystem;

namespace occu {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

std::vector<std::vector<std::string>> read_csv(const std::string& path,
                                               std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path + "' is empty");
  header = split_csv(line);
  std::vector<std::vector<std::string>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto fields = split_csv(line);
    if (fields.size() != header.size()) {
      throw DataError("'" + path + "' line " + std::to_string(lineno) +
                      ": expected " + std::to_string(header.size()) +
                      " fields, got " + std::to_string(fields.size()));
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) {
    throw DataError("invalid number '" + s + "' in " + where);
  }
  return v;
}

long parse_int(const std::string& s, const std::string& where) {
  long v = 0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) {
    throw DataError("invalid integer '" + s + "' in " + where);
  }
  return v;
}

int column_of(const std::vector<std::string>& header, const std::string& name,
              const std::string& path) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) {
    throw DataError("'" + path + "' is missing required column '" + name + "'");
  }
  return static_cast<int>(it - header.begin());
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

// ---------------------------------------------------------------------------
// Model spec

namespace {

void assign_prior_field(PriorSpec& p, const std::string& key, double v) {
  if (key == "beta_mean") p.beta_mean = v;
  else if (key == "beta_var") p.beta_var = v;
  else if (key == "alpha_mean") p.alpha_mean = v;
  else if (key == "alpha_var") p.alpha_var = v;
  else if (key == "mu_mean") p.mu_mean = v;
  else if (key == "mu_var") p.mu_var = v;
  else if (key == "tau2_shape") p.tau2_shape = v;
  else if (key == "tau2_scale") p.tau2_scale = v;
  else if (key == "sigma2_shape") p.sigma2_shape = v;
  else if (key == "sigma2_scale") p.sigma2_scale = v;
  else if (key == "re_var_shape") p.re_var_shape = v;
  else if (key == "re_var_scale") p.re_var_scale = v;
  else if (key == "phi_lower") p.phi_lower = v;
  else if (key == "phi_upper") p.phi_upper = v;
  else if (key == "nu_lower") p.nu_lower = v;
  else if (key == "nu_upper") p.nu_upper = v;
  else throw ConfigError("unknown prior field '" + key + "'");
}

void check_spec(const ModelSpec& s) {
  const auto& m = s.mcmc;
  if (m.n_thin < 1) throw ConfigError("thin must be >= 1");
  if (m.n_chains < 1) throw ConfigError("chains must be >= 1");
  if (m.n_iter < 1) throw ConfigError("iters must be >= 1");
  if (m.n_burn < 0 || m.n_burn >= m.n_iter)
    throw ConfigError("burn must lie in [0, iters)");
  if (s.spatial && s.nngp && s.neighbors < 1)
    throw ConfigError("neighbors must be >= 1 for the nngp mode");
  const auto& p = s.priors;
  if (p.beta_var <= 0 || p.alpha_var <= 0 || p.mu_var <= 0)
    throw ConfigError("prior variances must be positive");
  if (p.tau2_shape <= 0 || p.tau2_scale <= 0 || p.sigma2_shape <= 0 ||
      p.sigma2_scale <= 0 || p.re_var_shape <= 0 || p.re_var_scale <= 0)
    throw ConfigError("inverse-gamma prior shapes and scales must be positive");
  if (p.phi_lower != 0.0 || p.phi_upper != 0.0) {
    if (!(p.phi_lower > 0.0) || !(p.phi_upper > p.phi_lower))
      throw ConfigError("phi prior requires 0 < lower < upper");
  }
  if (!(p.nu_lower > 0.0) || !(p.nu_upper > p.nu_lower))
    throw ConfigError("nu prior requires 0 < lower < upper");
}

}  // namespace

ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  for (const auto& [key, val] : j.items()) {
    if (key == "model") s.model = model_from_string(val.get<std::string>());
    else if (key == "spatial") s.spatial = val.get<bool>();
    else if (key == "kernel") s.kernel = kernel_from_string(val.get<std::string>());
    else if (key == "gp") {
      const auto g = val.get<std::string>();
      if (g == "nngp") s.nngp = true;
      else if (g == "full") s.nngp = false;
      else throw ConfigError("gp must be 'full' or 'nngp', got '" + g + "'");
    } else if (key == "neighbors") s.neighbors = val.get<int>();
    else if (key == "iters") s.mcmc.n_iter = val.get<int>();
    else if (key == "burn") s.mcmc.n_burn = val.get<int>();
    else if (key == "thin") s.mcmc.n_thin = val.get<int>();
    else if (key == "chains") s.mcmc.n_chains = val.get<int>();
    else if (key == "seed") s.mcmc.seed = val.get<std::uint64_t>();
    else if (key == "standardize") s.standardize = val.get<bool>();
    else if (key == "store_latent") s.store_latent = val.get<bool>();
    else if (key == "det_random_effects")
      s.det_random_effects = val.get<std::vector<std::string>>();
    else if (key == "occ_random_effects")
      s.occ_random_effects = val.get<std::vector<std::string>>();
    else if (key == "priors") {
      for (const auto& [pk, pv] : val.items())
        assign_prior_field(s.priors, pk, pv.get<double>());
    } else {
      throw ConfigError("unknown spec field '" + key + "'");
    }
  }
  check_spec(s);
  return s;
}

nlohmann::json spec_to_json(const ModelSpec& s) {
  nlohmann::json j;
  j["model"] = model_name(s.model);
  j["spatial"] = s.spatial;
  j["kernel"] = kernel_name(s.kernel);
  j["gp"] = s.nngp ? "nngp" : "full";
  j["neighbors"] = s.neighbors;
  j["iters"] = s.mcmc.n_iter;
  j["burn"] = s.mcmc.n_burn;
  j["thin"] = s.mcmc.n_thin;
  j["chains"] = s.mcmc.n_chains;
  j["seed"] = s.mcmc.seed;
  j["standardize"] = s.standardize;
  j["store_latent"] = s.store_latent;
  j["det_random_effects"] = s.det_random_effects;
  j["occ_random_effects"] = s.occ_random_effects;
  const auto& p = s.priors;
  j["priors"] = {
      {"beta_mean", p.beta_mean},     {"beta_var", p.beta_var},
      {"alpha_mean", p.alpha_mean},   {"alpha_var", p.alpha_var},
      {"mu_mean", p.mu_mean},         {"mu_var", p.mu_var},
      {"tau2_shape", p.tau2_shape},   {"tau2_scale", p.tau2_scale},
      {"sigma2_shape", p.sigma2_shape}, {"sigma2_scale", p.sigma2_scale},
      {"re_var_shape", p.re_var_shape}, {"re_var_scale", p.re_var_scale},
      {"phi_lower", p.phi_lower},     {"phi_upper", p.phi_upper},
      {"nu_lower", p.nu_lower},       {"nu_upper", p.nu_upper}};
  return j;
}

std::uint64_t spec_hash(const ModelSpec& spec) {
  const std::string canon = spec_to_json(spec).dump();
  return fnv1a64(canon.data(), canon.size());
}

nlohmann::json toml_subset_to_json(const std::string& text) {
  nlohmann::json root = nlohmann::json::object();
  nlohmann::json* table = &root;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;

  auto parse_scalar = [&](const std::string& tok) -> nlohmann::json {
    if (tok.size() >= 2 && tok.front() == '"' && tok.back() == '"')
      return tok.substr(1, tok.size() - 2);
    if (tok == "true") return true;
    if (tok == "false") return false;
    // integers kept integral so seeds survive exactly
    long iv = 0;
    auto [ip, iec] = std::from_chars(tok.data(), tok.data() + tok.size(), iv);
    if (iec == std::errc{} && ip == tok.data() + tok.size()) return iv;
    double dv = 0.0;
    auto [dp, dec] = std::from_chars(tok.data(), tok.data() + tok.size(), dv);
    if (dec == std::errc{} && dp == tok.data() + tok.size()) return dv;
    throw ConfigError("toml line " + std::to_string(lineno) +
                      ": cannot parse value '" + tok + "'");
  };

  while (std::getline(in, raw)) {
    ++lineno;
    // strip comments outside strings
    bool in_str = false;
    std::string line;
    for (char c : raw) {
      if (c == '"') in_str = !in_str;
      if (c == '#' && !in_str) break;
      line += c;
    }
    line = trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("toml line " + std::to_string(lineno) +
                          ": malformed section header");
      std::string path = trim(line.substr(1, line.size() - 2));
      table = &root;
      std::size_t start = 0;
      while (start <= path.size()) {
        const auto dot = path.find('.', start);
        const std::string part = trim(
            path.substr(start, dot == std::string::npos ? std::string::npos
                                                        : dot - start));
        if (part.empty())
          throw ConfigError("toml line " + std::to_string(lineno) +
                            ": empty section name");
        table = &(*table)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
      }
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("toml line " + std::to_string(lineno) +
                        ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty() || val.empty())
      throw ConfigError("toml line " + std::to_string(lineno) +
                        ": expected key = value");
    if (val.front() == '[') {
      if (val.back() != ']')
        throw ConfigError("toml line " + std::to_string(lineno) +
                          ": unterminated array");
      nlohmann::json arr = nlohmann::json::array();
      const std::string inner = trim(val.substr(1, val.size() - 2));
      if (!inner.empty()) {
        for (const auto& tok : split_csv(inner)) arr.push_back(parse_scalar(tok));
      }
      (*table)[key] = arr;
    } else {
      (*table)[key] = parse_scalar(val);
    }
  }
  return root;
}

ModelSpec load_model_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open spec file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".toml") {
    return spec_from_json(toml_subset_to_json(buf.str()));
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse '" + path + "': " + e.what());
  }
  try {
    return spec_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad spec value in '" + path + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Dataset bundle

namespace {

struct YRow {
  int species;  // index into species_names
  int site;     // shared site index
  int rep;      // zero-based
  int value;
};

Standardizer identity_standardizer(int cols) {
  Standardizer s;
  s.offset.assign(cols, 0.0);
  s.scale.assign(cols, 1.0);
  return s;
}

// Center/scale every non-intercept column in place; constant columns keep
// scale 1 so they stay finite. Moments use only rows marked in `rows`
// (empty mask = all rows), so zero-filled unsurveyed cells don't leak in.
Standardizer standardize_columns(Eigen::MatrixXd& X,
                                 const std::vector<char>& rows = {}) {
  Standardizer s = identity_standardizer(static_cast<int>(X.cols()));
  std::vector<Eigen::Index> use;
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    if (rows.empty() || rows[static_cast<std::size_t>(r)]) use.push_back(r);
  }
  if (use.empty()) return s;
  for (Eigen::Index c = 1; c < X.cols(); ++c) {
    double mean = 0.0;
    for (Eigen::Index r : use) mean += X(r, c);
    mean /= static_cast<double>(use.size());
    double var = 0.0;
    for (Eigen::Index r : use) var += (X(r, c) - mean) * (X(r, c) - mean);
    var /= std::max<double>(1.0, double(use.size()) - 1.0);
    const double sd = std::sqrt(var);
    s.offset[c] = mean;
    s.scale[c] = sd > 0.0 ? sd : 1.0;
    X.col(c) = (X.col(c).array() - s.offset[c]) / s.scale[c];
  }
  return s;
}

// Level labels are numeric text; codes follow ascending numeric order so
// they are stable across row orderings.
std::vector<std::string> code_levels(const std::set<double>& values) {
  std::vector<std::string> labels;
  labels.reserve(values.size());
  for (double v : values) labels.push_back(format_double(v));
  return labels;
}

}  // namespace

Dataset load_dataset(const std::string& dir, const ModelSpec& spec) {
  Dataset d;
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw DataError("'" + dir + "' is not a directory");

  // sites.csv
  {
    const std::string path = (root / "sites.csv").string();
    std::vector<std::string> header;
    const auto rows = read_csv(path, header);
    const int c_id = column_of(header, "site_id", path);
    const int c_x = column_of(header, "x", path);
    const int c_y = column_of(header, "y", path);
    if (rows.empty()) throw DataError("'" + path + "' lists no sites");
    for (const auto& r : rows) {
      d.site_ids.push_back(static_cast<int>(parse_int(r[c_id], path)));
      d.coords.push_back({parse_double(r[c_x], path), parse_double(r[c_y], path)});
    }
  }
  const int J = d.n_sites();
  std::map<int, int> site_index;
  for (int j = 0; j < J; ++j) {
    if (!site_index.emplace(d.site_ids[j], j).second) {
      throw DataError("duplicate site_id " + std::to_string(d.site_ids[j]) +
                      " in sites.csv");
    }
  }

  // occ_covs.csv (optional; intercept-only occurrence design without it)
  std::vector<std::string> occ_cov_names;
  std::map<std::string, std::vector<double>> occ_cols;
  {
    const std::string path = (root / "occ_covs.csv").string();
    if (fs::exists(path)) {
      std::vector<std::string> header;
      const auto rows = read_csv(path, header);
      const int c_id = column_of(header, "site_id", path);
      if (static_cast<int>(rows.size()) != J) {
        throw DataError("'" + path + "' has " + std::to_string(rows.size()) +
                        " rows but sites.csv lists " + std::to_string(J));
      }
      for (std::size_t c = 0; c < header.size(); ++c) {
        if (static_cast<int>(c) == c_id) continue;
        occ_cov_names.push_back(header[c]);
        occ_cols[header[c]].assign(J, 0.0);
      }
      std::vector<bool> seen(J, false);
      for (const auto& r : rows) {
        const auto it = site_index.find(static_cast<int>(parse_int(r[c_id], path)));
        if (it == site_index.end()) {
          throw DataError("'" + path + "' references unknown site_id " + r[c_id]);
        }
        if (seen[it->second]) {
          throw DataError("'" + path + "' repeats site_id " + r[c_id]);
        }
        seen[it->second] = true;
        for (std::size_t c = 0; c < header.size(); ++c) {
          if (static_cast<int>(c) == c_id) continue;
          occ_cols[header[c]][it->second] = parse_double(r[c], path);
        }
      }
    }
  }

  // Split occurrence columns into fixed covariates and random-effect levels.
  std::vector<std::string> occ_fixed;
  for (const auto& name : occ_cov_names) {
    const bool is_re =
        std::find(spec.occ_random_effects.begin(), spec.occ_random_effects.end(),
                  name) != spec.occ_random_effects.end();
    if (!is_re) occ_fixed.push_back(name);
  }
  for (const auto& re : spec.occ_random_effects) {
    if (!occ_cols.count(re)) {
      throw ConfigError("occurrence random effect '" + re +
                        "' is not a column of occ_covs.csv");
    }
  }

  d.X.resize(J, 1 + static_cast<int>(occ_fixed.size()));
  d.X.col(0).setOnes();
  d.occ_names = {"intercept"};
  for (std::size_t c = 0; c < occ_fixed.size(); ++c) {
    d.occ_names.push_back(occ_fixed[c]);
    const auto& col = occ_cols[occ_fixed[c]];
    for (int j = 0; j < J; ++j) d.X(j, static_cast<int>(c) + 1) = col[j];
  }
  d.occ_std = spec.standardize ? standardize_columns(d.X)
                               : identity_standardizer(int(d.X.cols()));

  for (const auto& re : spec.occ_random_effects) {
    const auto& col = occ_cols[re];
    std::set<double> uniq(col.begin(), col.end());
    const auto labels = code_levels(uniq);
    std::map<std::string, int> code;
    for (std::size_t i = 0; i < labels.size(); ++i) code[labels[i]] = int(i);
    Eigen::VectorXi lv(J);
    for (int j = 0; j < J; ++j) lv(j) = code[format_double(col[j])];
    d.occ_re_names.push_back(re);
    d.occ_re_levels.push_back(lv);
    d.occ_re_n_levels.push_back(static_cast<int>(labels.size()));
    d.occ_re_labels.push_back(labels);
  }

  // Discover source ids from y_<id>.csv files.
  std::vector<int> source_ids;
  for (const auto& entry : fs::directory_iterator(root)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > 6 && name.substr(0, 2) == "y_" &&
        name.substr(name.size() - 4) == ".csv") {
      source_ids.push_back(
          static_cast<int>(parse_int(name.substr(2, name.size() - 6), name)));
    }
  }
  std::sort(source_ids.begin(), source_ids.end());
  if (source_ids.empty()) throw DataError("no y_<id>.csv files in '" + dir + "'");

  // First pass over y files: species set and raw rows per source.
  std::set<std::string> species_set;
  std::vector<std::vector<std::array<std::string, 4>>> raw_y(source_ids.size());
  bool any_species_col = false;
  for (std::size_t s = 0; s < source_ids.size(); ++s) {
    const std::string path =
        (root / ("y_" + std::to_string(source_ids[s]) + ".csv")).string();
    std::vector<std::string> header;
    const auto rows = read_csv(path, header);
    const bool has_species =
        std::find(header.begin(), header.end(), "species") != header.end();
    any_species_col = any_species_col || has_species;
    const int c_sp = has_species ? column_of(header, "species", path) : -1;
    const int c_id = column_of(header, "site_id", path);
    const int c_rep = column_of(header, "rep", path);
    const int c_val = column_of(header, "value", path);
    for (const auto& r : rows) {
      raw_y[s].push_back({has_species ? r[c_sp] : std::string("sp"), r[c_id],
                          r[c_rep], r[c_val]});
      species_set.insert(raw_y[s].back()[0]);
    }
  }
  d.species_names.assign(species_set.begin(), species_set.end());
  d.n_species = static_cast<int>(d.species_names.size());
  d.y_species_column = any_species_col;
  std::map<std::string, int> species_index;
  for (int i = 0; i < d.n_species; ++i) species_index[d.species_names[i]] = i;

  if (spec.model == ModelClass::Msom && source_ids.size() != 1) {
    throw DataError("msom expects exactly one y_<id>.csv source, found " +
                    std::to_string(source_ids.size()));
  }
  if (spec.model != ModelClass::Msom && d.n_species != 1) {
    throw DataError(model_name(spec.model) +
                    " expects a single species, found " +
                    std::to_string(d.n_species));
  }

  for (std::size_t s = 0; s < source_ids.size(); ++s) {
    DataSource src;
    src.id = source_ids[s];
    const std::string ypath = "y_" + std::to_string(src.id) + ".csv";

    std::vector<YRow> parsed;
    std::set<int> local_sites;
    int max_rep = 0;
    for (const auto& r : raw_y[s]) {
      const auto it = site_index.find(static_cast<int>(parse_int(r[1], ypath)));
      if (it == site_index.end()) {
        throw DataError("'" + ypath + "' references unmapped site_id " + r[1]);
      }
      const int rep = static_cast<int>(parse_int(r[2], ypath));
      if (rep < 1) {
        throw DataError("'" + ypath + "' has rep " + r[2] +
                        " at site_id " + r[1] + "; replicates are 1-based");
      }
      const long value = parse_int(r[3], ypath);
      if (value != 0 && value != 1) {
        throw DataError("non-binary detection value " + r[3] + " in '" + ypath +
                        "' (site_id " + r[1] + ", rep " + r[2] + ")");
      }
      parsed.push_back(YRow{species_index[r[0]], it->second, rep - 1,
                            static_cast<int>(value)});
      local_sites.insert(it->second);
      max_rep = std::max(max_rep, rep);
    }
    if (parsed.empty()) throw DataError("'" + ypath + "' lists no observations");

    src.site_map.assign(local_sites.begin(), local_sites.end());
    std::map<int, int> local_of;
    for (std::size_t jl = 0; jl < src.site_map.size(); ++jl)
      local_of[src.site_map[jl]] = static_cast<int>(jl);
    src.K_max = max_rep;
    const int Js = static_cast<int>(src.site_map.size());

    src.y.assign(d.n_species, Eigen::MatrixXi::Constant(Js, src.K_max, -1));
    for (const auto& row : parsed) {
      int& cell = src.y[row.species](local_of[row.site], row.rep);
      if (cell >= 0) {
        throw DataError("'" + ypath + "' repeats (site_id " +
                        std::to_string(d.site_ids[row.site]) + ", rep " +
                        std::to_string(row.rep + 1) + ")");
      }
      cell = row.value;
    }

    // det_covs_<id>.csv (optional; intercept-only detection without it)
    std::vector<std::string> det_fixed;
    std::map<std::string, std::map<std::pair<int, int>, double>> det_vals;
    const std::string dpath =
        (root / ("det_covs_" + std::to_string(src.id) + ".csv")).string();
    if (fs::exists(dpath)) {
      std::vector<std::string> header;
      const auto rows = read_csv(dpath, header);
      const int c_id = column_of(header, "site_id", dpath);
      const int c_rep = column_of(header, "rep", dpath);
      const int c_name = column_of(header, "name", dpath);
      const int c_val = column_of(header, "value", dpath);
      for (const auto& r : rows) {
        const auto it = site_index.find(static_cast<int>(parse_int(r[c_id], dpath)));
        if (it == site_index.end() || !local_of.count(it->second)) {
          throw DataError("'" + dpath + "' references site_id " + r[c_id] +
                          " not surveyed by this source");
        }
        const int rep = static_cast<int>(parse_int(r[c_rep], dpath));
        if (rep < 1 || rep > src.K_max) {
          throw DataError("'" + dpath + "' has rep " + r[c_rep] +
                          " outside 1.." + std::to_string(src.K_max));
        }
        const auto cell = std::make_pair(local_of[it->second], rep - 1);
        if (!det_vals[r[c_name]].emplace(cell, parse_double(r[c_val], dpath)).second) {
          throw DataError("'" + dpath + "' repeats (site_id " + r[c_id] +
                          ", rep " + r[c_rep] + ", " + r[c_name] + ")");
        }
      }
      for (const auto& [name, vals] : det_vals) {
        const bool is_re = std::find(spec.det_random_effects.begin(),
                                     spec.det_random_effects.end(),
                                     name) != spec.det_random_effects.end();
        if (!is_re) det_fixed.push_back(name);
      }
    }

    // Any cell surveyed by any species needs every fixed covariate.
    auto cell_surveyed = [&](int jl, int k) {
      for (int i = 0; i < d.n_species; ++i)
        if (src.y[i](jl, k) >= 0) return true;
      return false;
    };

    src.V = Eigen::MatrixXd::Zero(Js * src.K_max, 1 + int(det_fixed.size()));
    src.V.col(0).setOnes();
    src.det_names = {"intercept"};
    for (std::size_t c = 0; c < det_fixed.size(); ++c) {
      src.det_names.push_back(det_fixed[c]);
      const auto& vals = det_vals[det_fixed[c]];
      for (int jl = 0; jl < Js; ++jl) {
        for (int k = 0; k < src.K_max; ++k) {
          const auto it = vals.find({jl, k});
          if (it != vals.end()) {
            src.V(jl * src.K_max + k, int(c) + 1) = it->second;
          } else if (cell_surveyed(jl, k)) {
            throw DataError("'" + dpath + "' is missing '" + det_fixed[c] +
                            "' at (site_id " +
                            std::to_string(d.site_ids[src.site_map[jl]]) +
                            ", rep " + std::to_string(k + 1) + ")");
          }
        }
      }
    }
    std::vector<char> surveyed_rows(static_cast<std::size_t>(src.V.rows()), 0);
    for (int jl = 0; jl < Js; ++jl) {
      for (int k = 0; k < src.K_max; ++k) {
        if (cell_surveyed(jl, k)) surveyed_rows[jl * src.K_max + k] = 1;
      }
    }
    src.det_std = spec.standardize
                      ? standardize_columns(src.V, surveyed_rows)
                      : identity_standardizer(int(src.V.cols()));

    for (const auto& re : spec.det_random_effects) {
      if (!det_vals.count(re)) continue;  // source without this effect
      const auto& vals = det_vals[re];
      std::set<double> uniq;
      for (const auto& [cell, v] : vals) uniq.insert(v);
      const auto labels = code_levels(uniq);
      std::map<std::string, int> code;
      for (std::size_t i = 0; i < labels.size(); ++i) code[labels[i]] = int(i);
      Eigen::MatrixXi lv = Eigen::MatrixXi::Constant(Js, src.K_max, -1);
      for (int jl = 0; jl < Js; ++jl) {
        for (int k = 0; k < src.K_max; ++k) {
          const auto it = vals.find({jl, k});
          if (it != vals.end()) {
            lv(jl, k) = code[format_double(it->second)];
          } else if (cell_surveyed(jl, k)) {
            throw DataError("'" + dpath + "' is missing random effect '" + re +
                            "' at (site_id " +
                            std::to_string(d.site_ids[src.site_map[jl]]) +
                            ", rep " + std::to_string(k + 1) + ")");
          }
        }
      }
      src.re_names.push_back(re);
      src.re_levels.push_back(lv);
      src.re_n_levels.push_back(static_cast<int>(labels.size()));
      src.re_labels.push_back(labels);
    }
    d.sources.push_back(std::move(src));
  }

  if (spec.model != ModelClass::Iom && d.sources.size() != 1) {
    throw DataError(model_name(spec.model) + " expects exactly one source, found " +
                    std::to_string(d.sources.size()));
  }

  if (spec.spatial) {
    std::vector<Point2> sorted = d.coords;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 1; i < sorted.size(); ++i) {
      if (sorted[i] == sorted[i - 1]) {
        throw DataError("duplicate coordinates (" + format_double(sorted[i][0]) +
                        ", " + format_double(sorted[i][1]) +
                        ") under a spatial model");
      }
    }
  }
  return d;
}

void write_dataset(const std::string& dir, const Dataset& d) {
  const fs::path root(dir);
  fs::create_directories(root);
  const int J = d.n_sites();

  {
    std::ofstream out(root / "sites.csv");
    out << "site_id,x,y\n";
    for (int j = 0; j < J; ++j) {
      out << d.site_ids[j] << ',' << format_double(d.coords[j][0]) << ','
          << format_double(d.coords[j][1]) << '\n';
    }
  }

  const bool have_occ = d.X.cols() > 1 || !d.occ_re_names.empty();
  if (have_occ) {
    std::ofstream out(root / "occ_covs.csv");
    out << "site_id";
    for (std::size_t c = 1; c < d.occ_names.size(); ++c) out << ',' << d.occ_names[c];
    for (const auto& name : d.occ_re_names) out << ',' << name;
    out << '\n';
    for (int j = 0; j < J; ++j) {
      out << d.site_ids[j];
      for (Eigen::Index c = 1; c < d.X.cols(); ++c) {
        out << ',' << format_double(d.occ_std.invert(int(c), d.X(j, c)));
      }
      for (std::size_t e = 0; e < d.occ_re_names.size(); ++e) {
        out << ',' << d.occ_re_labels[e][d.occ_re_levels[e](j)];
      }
      out << '\n';
    }
  }

  for (const auto& src : d.sources) {
    {
      std::ofstream out(root / ("y_" + std::to_string(src.id) + ".csv"));
      if (d.y_species_column) out << "species,site_id,rep,value\n";
      else out << "site_id,rep,value\n";
      for (int i = 0; i < d.n_species; ++i) {
        for (std::size_t jl = 0; jl < src.site_map.size(); ++jl) {
          for (int k = 0; k < src.K_max; ++k) {
            const int v = src.y[i](static_cast<int>(jl), k);
            if (v < 0) continue;
            if (d.y_species_column) out << d.species_names[i] << ',';
            out << d.site_ids[src.site_map[jl]] << ',' << (k + 1) << ',' << v
                << '\n';
          }
        }
      }
    }
    const bool have_det = src.V.cols() > 1 || !src.re_names.empty();
    if (!have_det) continue;
    std::ofstream out(root / ("det_covs_" + std::to_string(src.id) + ".csv"));
    out << "site_id,rep,name,value\n";
    for (std::size_t jl = 0; jl < src.site_map.size(); ++jl) {
      for (int k = 0; k < src.K_max; ++k) {
        bool surveyed = false;
        for (int i = 0; i < d.n_species; ++i)
          surveyed = surveyed || src.y[i](static_cast<int>(jl), k) >= 0;
        if (!surveyed) continue;
        // names in canonical order: fixed covariates, then random effects
        std::vector<std::pair<std::string, std::string>> cells;
        for (Eigen::Index c = 1; c < src.V.cols(); ++c) {
          cells.emplace_back(src.det_names[c],
                             format_double(src.det_std.invert(
                                 int(c), src.V(int(jl) * src.K_max + k, c))));
        }
        for (std::size_t e = 0; e < src.re_names.size(); ++e) {
          cells.emplace_back(src.re_names[e],
                             src.re_labels[e][src.re_levels[e](int(jl), k)]);
        }
        std::sort(cells.begin(), cells.end());
        for (const auto& [name, value] : cells) {
          out << d.site_ids[src.site_map[jl]] << ',' << (k + 1) << ',' << name
              << ',' << value << '\n';
        }
      }
    }
  }
}

std::vector<std::string> validate(const Dataset& d, const ModelSpec& spec) {
  std::vector<std::string> diag;
  const int J = d.n_sites();

  for (int j = 0; j < J; ++j) {
    if (!std::isfinite(d.coords[j][0]) || !std::isfinite(d.coords[j][1])) {
      diag.push_back("site " + std::to_string(d.site_ids[j]) +
                     ": non-finite coordinates");
    }
  }
  for (int j = 0; j < J; ++j) {
    for (Eigen::Index c = 0; c < d.X.cols(); ++c) {
      if (!std::isfinite(d.X(j, c))) {
        diag.push_back("occ_covs row " + std::to_string(d.site_ids[j]) +
                       " column '" + d.occ_names[c] + "': non-finite value");
      }
    }
    if (d.X(j, 0) != 1.0) {
      diag.push_back("occurrence design row " + std::to_string(d.site_ids[j]) +
                     ": intercept column is not 1");
    }
  }

  if (spec.spatial) {
    std::vector<std::pair<Point2, int>> pts;
    for (int j = 0; j < J; ++j) pts.push_back({d.coords[j], d.site_ids[j]});
    std::sort(pts.begin(), pts.end());
    for (std::size_t i = 1; i < pts.size(); ++i) {
      if (pts[i].first == pts[i - 1].first) {
        diag.push_back("zero inter-site distance between site " +
                       std::to_string(pts[i - 1].second) + " and site " +
                       std::to_string(pts[i].second));
      }
    }
  }

  for (const auto& src : d.sources) {
    const std::string tag = "source " + std::to_string(src.id);
    const int Js = static_cast<int>(src.site_map.size());
    std::set<int> targets;
    for (int jl = 0; jl < Js; ++jl) {
      if (src.site_map[jl] < 0 || src.site_map[jl] >= J) {
        diag.push_back(tag + ": site_map[" + std::to_string(jl) +
                       "] out of range");
      } else if (!targets.insert(src.site_map[jl]).second) {
        diag.push_back(tag + ": site_map is not injective at local site " +
                       std::to_string(jl));
      }
    }
    for (int jl = 0; jl < Js; ++jl) {
      bool any = false;
      for (int i = 0; i < d.n_species; ++i) {
        for (int k = 0; k < src.K_max; ++k) {
          const int v = src.y[i](jl, k);
          if (v < -1 || v > 1) {
            diag.push_back(tag + ": non-binary detection value at (site " +
                           std::to_string(d.site_ids[src.site_map[jl]]) +
                           ", rep " + std::to_string(k + 1) + ")");
          }
          any = any || v >= 0;
        }
      }
      if (!any) {
        diag.push_back(tag + ": site " +
                       std::to_string(d.site_ids[src.site_map[jl]]) +
                       " has no surveyed replicate");
      }
    }
    for (Eigen::Index r = 0; r < src.V.rows(); ++r) {
      for (Eigen::Index c = 0; c < src.V.cols(); ++c) {
        if (!std::isfinite(src.V(r, c))) {
          diag.push_back(tag + ": detection design row " + std::to_string(r) +
                         " column '" + src.det_names[c] + "': non-finite value");
        }
      }
    }
    for (std::size_t e = 0; e < src.re_names.size(); ++e) {
      for (int jl = 0; jl < Js; ++jl) {
        for (int k = 0; k < src.K_max; ++k) {
          const int lv = src.re_levels[e](jl, k);
          if (lv < -1 || lv >= src.re_n_levels[e]) {
            diag.push_back(tag + ": random effect '" + src.re_names[e] +
                           "' level code out of range at local site " +
                           std::to_string(jl));
          }
        }
      }
    }
  }
  return diag;
}

std::uint64_t dataset_hash(const std::string& dir) {
  const fs::path root(dir);
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(root)) {
    const std::string name = entry.path().filename().string();
    if (name == "sites.csv" || name == "occ_covs.csv" ||
        (name.size() > 6 && name.substr(0, 2) == "y_" &&
         name.substr(name.size() - 4) == ".csv") ||
        (name.size() > 13 && name.substr(0, 9) == "det_covs_" &&
         name.substr(name.size() - 4) == ".csv")) {
      names.push_back(name);
    }
  }
  std::sort(names.begin(), names.end());
  std::uint64_t h = fnv1a64(nullptr, 0);
  for (const auto& name : names) {
    h = fnv1a64(name.data(), name.size(), h);
    std::ifstream in(root / name, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string bytes = buf.str();
    h = fnv1a64(bytes.data(), bytes.size(), h);
  }
  return h;
}

Dataset subset_sites(const Dataset& data, const std::vector<char>& keep) {
  Dataset out;
  std::vector<int> newindex(data.n_sites(), -1);
  for (int j = 0; j < data.n_sites(); ++j)
    if (keep[j]) {
      newindex[j] = static_cast<int>(out.coords.size());
      out.coords.push_back(data.coords[j]);
      out.site_ids.push_back(data.site_ids[j]);
    }
  const int Jt = static_cast<int>(out.coords.size());
  out.X.resize(Jt, data.X.cols());
  for (int j = 0, t = 0; j < data.n_sites(); ++j)
    if (keep[j]) out.X.row(t++) = data.X.row(j);
  out.occ_names = data.occ_names;
  out.occ_std = data.occ_std;
  out.n_species = data.n_species;
  out.species_names = data.species_names;
  out.y_species_column = data.y_species_column;
  for (std::size_t e = 0; e < data.occ_re_names.size(); ++e) {
    Eigen::VectorXi lv(Jt);
    for (int j = 0, t = 0; j < data.n_sites(); ++j)
      if (keep[j]) lv(t++) = data.occ_re_levels[e](j);
    out.occ_re_names.push_back(data.occ_re_names[e]);
    out.occ_re_levels.push_back(lv);
    out.occ_re_n_levels.push_back(data.occ_re_n_levels[e]);
    out.occ_re_labels.push_back(data.occ_re_labels[e]);
  }
  for (const auto& src : data.sources) {
    DataSource t;
    t.id = src.id;
    t.K_max = src.K_max;
    t.det_names = src.det_names;
    t.det_std = src.det_std;
    t.re_names = src.re_names;
    t.re_n_levels = src.re_n_levels;
    t.re_labels = src.re_labels;
    std::vector<int> rows;
    for (std::size_t jl = 0; jl < src.site_map.size(); ++jl)
      if (keep[src.site_map[jl]]) {
        t.site_map.push_back(newindex[src.site_map[jl]]);
        rows.push_back(static_cast<int>(jl));
      }
    if (t.site_map.empty())
      throw ConfigError("site subset removes every site of source " +
                        std::to_string(src.id));
    const int Jl = static_cast<int>(rows.size());
    t.V.resize(Jl * t.K_max, src.V.cols());
    t.y.assign(data.n_species, Eigen::MatrixXi(Jl, t.K_max));
    for (int a = 0; a < Jl; ++a) {
      t.V.middleRows(a * t.K_max, t.K_max) =
          src.V.middleRows(rows[a] * t.K_max, t.K_max);
      for (int i = 0; i < data.n_species; ++i)
        t.y[i].row(a) = src.y[i].row(rows[a]);
    }
    for (std::size_t e = 0; e < src.re_levels.size(); ++e) {
      Eigen::MatrixXi lv(Jl, t.K_max);
      for (int a = 0; a < Jl; ++a) lv.row(a) = src.re_levels[e].row(rows[a]);
      t.re_levels.push_back(lv);
    }
    out.sources.push_back(std::move(t));
  }
  return out;
}

}  // namespace occu
