// Batch driver over the dataset-bundle and chain-file formats: fit, predict,
// simulate, assess, summarize. Errors leave a machine-readable JSON object on
// stderr and map the library's taxonomy onto exit codes 2 (config), 3 (data),
// 4 (numerical).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "occu/assessment.hpp"
#include "occu/chains.hpp"
#include "occu/common.hpp"
#include "occu/dataset_io.hpp"
#include "occu/predict.hpp"
#include "occu/samplers.hpp"
#include "occu/simulate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace occu;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

void write_manifest(const std::string& dir, const json& body) {
  fs::create_directories(dir);
  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::trunc);
  if (!out) throw DataError("cannot write manifest.json in '" + dir + "'");
  out << body.dump(2) << "\n";
}

// Text inside the last [...] group of a column label, e.g.
// "beta[sp2][(Intercept)]" -> "(Intercept)".
std::string last_bracket(const std::string& s) {
  const auto close = s.rfind(']');
  if (close == std::string::npos) return s;
  const auto open = s.rfind('[', close);
  if (open == std::string::npos) return s;
  return s.substr(open + 1, close - open - 1);
}

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) return static_cast<int>(c);
    return -1;
  }
};

// Minimal comma-separated reader: header row required, no quoting.
Csv read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  Csv csv;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    if (first) {
      csv.header = std::move(fields);
      first = false;
    } else {
      if (fields.size() != csv.header.size())
        throw DataError("'" + path + "': row with " +
                        std::to_string(fields.size()) + " fields, header has " +
                        std::to_string(csv.header.size()));
      csv.rows.push_back(std::move(fields));
    }
  }
  if (first) throw DataError("'" + path + "' is empty");
  return csv;
}

double parse_num(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("non-numeric value '" + s + "' in " + where);
  }
}

// ---------------------------------------------------------------- fit -----

struct FitArgs {
  std::string data_dir, spec_file, out_dir;
  std::string model, kernel, gp;
  bool spatial = false;
  int neighbors = 0, iters = 0, burn = 0, thin = 0, chains = 0, threads = 1;
  std::uint64_t seed = 0;
  bool quiet = false;
  CLI::Option *o_model = nullptr, *o_kernel = nullptr, *o_gp = nullptr,
              *o_spatial = nullptr, *o_neighbors = nullptr, *o_iters = nullptr,
              *o_burn = nullptr, *o_thin = nullptr, *o_chains = nullptr,
              *o_seed = nullptr;
};

int run_fit(const FitArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  ModelSpec spec = load_model_spec(a.spec_file);
  // Precedence: command-line flags > spec file > defaults.
  if (a.o_model->count()) spec.model = model_from_string(a.model);
  if (a.o_spatial->count()) spec.spatial = a.spatial;
  if (a.o_kernel->count()) spec.kernel = kernel_from_string(a.kernel);
  if (a.o_gp->count()) spec.nngp = a.gp == "nngp";
  if (a.o_neighbors->count()) spec.neighbors = a.neighbors;
  if (a.o_iters->count()) spec.mcmc.n_iter = a.iters;
  if (a.o_burn->count()) spec.mcmc.n_burn = a.burn;
  if (a.o_thin->count()) spec.mcmc.n_thin = a.thin;
  if (a.o_chains->count()) spec.mcmc.n_chains = a.chains;
  if (a.o_seed->count()) spec.mcmc.seed = a.seed;

  const Dataset data = load_dataset(a.data_dir, spec);
  const auto problems = validate(data, spec);
  if (!problems.empty()) {
    std::string msg = "dataset fails validation:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw DataError(msg);
  }
  const std::uint64_t dhash = dataset_hash(a.data_dir);

  FitOptions opt;
  opt.threads = a.threads;
  opt.progress = !a.quiet;
  FitResult fit = fit_model(spec, data, opt);
  fit.data_hash = dhash;
  save_fit(a.out_dir, fit);

  json manifest;
  manifest["command"] = "fit";
  manifest["spec_hash"] = hash_hex(spec_hash(fit.spec));
  manifest["dataset_hash"] = hash_hex(dhash);
  manifest["effective_spec"] = spec_to_json(fit.spec);
  manifest["threads"] = a.threads;
  manifest["seed"] = fit.spec.mcmc.seed;
  json arts = json::array({"chains.json", "manifest.json"});
  for (int c = 0; c < fit.n_chains(); ++c)
    arts.push_back("chain_" + std::to_string(c) + ".bin");
  manifest["artifacts"] = arts;
  // Wall-clock only; everything numeric lives in the byte-stable sidecar.
  manifest["wall_seconds"] = {{"total", seconds_since(t0)},
                              {"blocks", fit.block_seconds}};
  write_manifest(a.out_dir, manifest);
  return 0;
}

// ------------------------------------------------------------- predict ----

struct PredictArgs {
  std::string fit_dir, covs_file, out_dir, data_dir;
  int neighbors = 0, threads = 1;
  std::uint64_t seed = 1;
  CLI::Option* o_neighbors = nullptr;
};

int run_predict(const PredictArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  const FitResult fit = load_fit(a.fit_dir);
  if (!a.data_dir.empty() && fit.data_hash != 0 &&
      dataset_hash(a.data_dir) != fit.data_hash)
    throw ConfigError("chains at '" + a.fit_dir +
                      "' were fit to a different dataset than '" + a.data_dir +
                      "'");
  const Layout& lay = fit.layout;

  const Csv csv = read_csv(a.covs_file);
  const int Q = static_cast<int>(csv.rows.size());
  if (Q == 0) throw DataError("'" + a.covs_file + "' has no data rows");
  const int cx = csv.column("x"), cy = csv.column("y");
  if (cx < 0 || cy < 0)
    throw DataError("'" + a.covs_file + "' needs x and y columns");

  // Training covariate names are recorded in the beta column labels.
  Eigen::MatrixXd X(Q, lay.p_occ);
  X.col(0).setOnes();
  for (int r = 1; r < lay.p_occ; ++r) {
    const std::string name = last_bracket(fit.columns[lay.beta(0, r)]);
    const int c = csv.column(name);
    if (c < 0)
      throw DataError("'" + a.covs_file + "' is missing covariate column '" +
                      name + "'");
    for (int q = 0; q < Q; ++q)
      X(q, r) = fit.occ_std.transform(
          r, parse_num(csv.rows[q][c], "column " + name));
  }
  std::vector<Point2> coords(Q);
  for (int q = 0; q < Q; ++q)
    coords[q] = {parse_num(csv.rows[q][cx], "column x"),
                 parse_num(csv.rows[q][cy], "column y")};

  Prediction pred;
  if (lay.spatial) {
    const int m = a.o_neighbors->count() ? a.neighbors : fit.spec.neighbors;
    pred = predict_spatial(fit, X, coords, m, a.seed, a.threads);
  } else {
    // Occurrence random intercepts map by level label; labels unseen in
    // training contribute zero.
    std::vector<Eigen::VectorXi> levels;
    for (std::size_t e = 0; e < lay.re_occ_names.size(); ++e) {
      Eigen::VectorXi lv = Eigen::VectorXi::Constant(Q, -1);
      const int c = csv.column(lay.re_occ_names[e]);
      if (c >= 0)
        for (int q = 0; q < Q; ++q) {
          for (int l = 0; l < lay.re_occ_levels[e]; ++l)
            if (last_bracket(fit.columns[lay.re_occ(
                    static_cast<int>(e), 0, l)]) == csv.rows[q][c]) {
              lv(q) = l;
              break;
            }
        }
      levels.push_back(lv);
    }
    pred = predict_nonspatial(fit, X, a.seed,
                              levels.empty() ? nullptr : &levels);
  }

  fs::create_directories(a.out_dir);
  prediction_csv((fs::path(a.out_dir) / "predictions.csv").string(), coords,
                 pred, fit.species_names);
  json arts = json::array({"predictions.csv", "manifest.json"});
  if (lay.n_species > 1) {
    richness_csv((fs::path(a.out_dir) / "richness.csv").string(), coords,
                 pred);
    arts.push_back("richness.csv");
  }
  json manifest;
  manifest["command"] = "predict";
  manifest["spec_hash"] = hash_hex(spec_hash(fit.spec));
  manifest["dataset_hash"] = hash_hex(fit.data_hash);
  manifest["seed"] = a.seed;
  manifest["sites"] = Q;
  manifest["draws"] = pred.n_draws();
  manifest["artifacts"] = arts;
  manifest["wall_seconds"] = {{"total", seconds_since(t0)}};
  write_manifest(a.out_dir, manifest);
  return 0;
}

// ------------------------------------------------------------ simulate ----

struct SimulateArgs {
  std::string out_dir, preset, sim_spec;
  double scale = 1.0;
  std::uint64_t seed = 1;
  CLI::Option* o_seed = nullptr;
};

Eigen::VectorXd vec_from_json(const json& a, const std::string& what) {
  if (!a.is_array() || a.empty())
    throw ConfigError(what + " must be a non-empty array");
  Eigen::VectorXd v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v(i) = a[i].get<double>();
  return v;
}

SimResult run_sim_spec(const std::string& path, std::uint64_t seed,
                       bool seed_given) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("malformed simulation spec: " + std::string(e.what()));
  }
  try {
    const std::string model = j.at("model").get<std::string>();
    const int J = j.at("J").get<int>();
    if (!seed_given && j.contains("seed"))
      seed = j.at("seed").get<std::uint64_t>();
    const bool grid = j.value("grid", false);
    const double extent = j.value("extent", 1.0);
    std::optional<SimSpatial> spatial;
    if (j.contains("spatial") && !j.at("spatial").is_null()) {
      const auto& s = j.at("spatial");
      SimSpatial sp;
      sp.kernel = kernel_from_string(s.value("kernel", "exponential"));
      sp.sigma2 = s.value("sigma2", 1.0);
      sp.phi = s.value("phi", 1.0);
      sp.nu = s.value("nu", 0.5);
      sp.dense_limit = s.value("dense_limit", 10000);
      sp.neighbors = s.value("neighbors", 15);
      spatial = sp;
    }
    if (model == "ssom") {
      return sim_occ(J, j.at("K").get<int>(),
                     vec_from_json(j.at("beta"), "beta"),
                     vec_from_json(j.at("alpha"), "alpha"), spatial, seed,
                     grid, extent);
    }
    if (model == "msom") {
      CommunityParams c;
      const auto& cj = j.at("community");
      c.mu_beta = vec_from_json(cj.at("mu_beta"), "mu_beta");
      c.tau2_beta = vec_from_json(cj.at("tau2_beta"), "tau2_beta");
      c.mu_alpha = vec_from_json(cj.at("mu_alpha"), "mu_alpha");
      c.tau2_alpha = vec_from_json(cj.at("tau2_alpha"), "tau2_alpha");
      return sim_ms_occ(J, j.at("K").get<int>(), j.at("N").get<int>(), c,
                        spatial, seed, grid, extent);
    }
    if (model == "iom") {
      std::vector<SimSource> sources;
      for (const auto& sj : j.at("sources")) {
        SimSource s;
        s.n_sites = sj.at("n_sites").get<int>();
        s.K = sj.at("K").get<int>();
        s.alpha = vec_from_json(sj.at("alpha"), "source alpha");
        sources.push_back(std::move(s));
      }
      return sim_int_occ(J, sources, vec_from_json(j.at("beta"), "beta"),
                         spatial, seed, grid, extent);
    }
    throw ConfigError("unknown simulation model '" + model + "'");
  } catch (const json::exception& e) {
    throw ConfigError("simulation spec: " + std::string(e.what()));
  }
}

int run_simulate(const SimulateArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  SimResult sim;
  if (!a.preset.empty()) {
    if (a.preset != "iom-paper")
      throw ConfigError("unknown preset '" + a.preset + "'");
    sim = sim_iom_paper(a.scale, a.seed);
  } else if (!a.sim_spec.empty()) {
    sim = run_sim_spec(a.sim_spec, a.seed, a.o_seed->count() > 0);
  } else {
    throw ConfigError("simulate needs --preset or --sim-spec");
  }
  write_dataset(a.out_dir, sim.data);
  write_truth(a.out_dir, sim.truth);

  json manifest;
  manifest["command"] = "simulate";
  if (!a.preset.empty()) {
    manifest["preset"] = a.preset;
    manifest["scale"] = a.scale;
  } else {
    manifest["sim_spec"] = a.sim_spec;
  }
  manifest["seed"] = sim.truth.seed;
  manifest["dataset_hash"] = hash_hex(dataset_hash(a.out_dir));
  manifest["sites"] = sim.data.n_sites();
  manifest["species"] = sim.data.n_species;
  manifest["sources"] = sim.data.sources.size();
  manifest["artifacts"] = json::array({"truth.json", "manifest.json"});
  manifest["wall_seconds"] = {{"total", seconds_since(t0)}};
  write_manifest(a.out_dir, manifest);
  return 0;
}

// -------------------------------------------------------------- assess ----

struct AssessArgs {
  std::string fit_dir, data_dir, out_dir;
  int kfold = 0, threads = 1;
  std::string ppc_stat = "chisq", ppc_bin = "site";
  std::uint64_t seed = 1;
};

int run_assess(const AssessArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  const FitResult fit = load_fit(a.fit_dir);
  if (fit.data_hash != 0 && dataset_hash(a.data_dir) != fit.data_hash)
    throw ConfigError("chains at '" + a.fit_dir +
                      "' were fit to a different dataset than '" + a.data_dir +
                      "'");
  const Dataset data = load_dataset(a.data_dir, fit.spec);

  json report;
  report["spec_hash"] = hash_hex(spec_hash(fit.spec));
  report["dataset_hash"] = hash_hex(fit.data_hash);

  const WaicResult w = waic(fit, data);
  report["waic"] = {{"elpd", w.elpd}, {"p_eff", w.p_eff}, {"waic", w.waic}};

  const PpcStat stat = ppc_stat_from_string(a.ppc_stat);
  const PpcBin bin = ppc_bin_from_string(a.ppc_bin);
  json ppcs = json::array();
  for (const auto& r : ppc(fit, data, stat, bin, a.seed)) {
    double mo = 0.0, mr = 0.0;
    for (double v : r.t_obs) mo += v;
    for (double v : r.t_rep) mr += v;
    const double n = static_cast<double>(r.t_obs.size());
    ppcs.push_back({{"source", r.source_id},
                    {"species", r.species},
                    {"stat", a.ppc_stat},
                    {"bin", a.ppc_bin},
                    {"bayesian_p", r.bayesian_p},
                    {"mean_t_obs", mo / n},
                    {"mean_t_rep", mr / n}});
  }
  report["ppc"] = ppcs;

  json rows = json::array();
  for (const auto& s : summarize(fit)) {
    json row = {{"name", s.name},   {"mean", s.mean}, {"sd", s.sd},
                {"q025", s.q025},   {"q500", s.q500}, {"q975", s.q975}};
    if (std::isfinite(s.rhat)) row["rhat"] = s.rhat;
    rows.push_back(row);
  }
  report["summary"] = rows;

  if (a.kfold > 0) {
    FitOptions opt;
    opt.threads = a.threads;
    const CvResult cv = kfold_cv(fit.spec, data, a.kfold, a.seed, opt);
    report["kfold"] = {{"k", a.kfold},
                       {"fold_deviance", cv.fold_deviance},
                       {"total_deviance", cv.total_deviance}};
  }
  report["wall_seconds"] = seconds_since(t0);

  fs::create_directories(a.out_dir);
  std::ofstream out(fs::path(a.out_dir) / "assessment.json", std::ios::trunc);
  if (!out)
    throw DataError("cannot write assessment.json in '" + a.out_dir + "'");
  out << report.dump(2) << "\n";
  return 0;
}

// ----------------------------------------------------------- summarize ----

int run_summarize(const std::string& fit_dir, bool latent) {
  const FitResult fit = load_fit(fit_dir);
  const auto rows = summarize(fit, latent);
  std::size_t width = 9;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  std::printf("%-*s %10s %10s %10s %10s %10s %8s\n", static_cast<int>(width),
              "parameter", "mean", "sd", "2.5%", "50%", "97.5%", "rhat");
  for (const auto& r : rows) {
    std::printf("%-*s %10.4f %10.4f %10.4f %10.4f %10.4f",
                static_cast<int>(width), r.name.c_str(), r.mean, r.sd, r.q025,
                r.q500, r.q975);
    if (std::isfinite(r.rhat))
      std::printf(" %8.4f\n", r.rhat);
    else
      std::printf(" %8s\n", "-");
  }
  return 0;
}

int fail(const char* type, const std::string& msg, int code) {
  json j;
  j["error"] = {{"type", type}, {"message", msg}};
  std::fprintf(stderr, "%s\n", j.dump().c_str());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Occupancy-model MCMC toolkit"};
  app.require_subcommand(1);

  FitArgs fa;
  auto* fit_cmd = app.add_subcommand("fit", "sample posteriors for a bundle");
  fit_cmd->add_option("--data", fa.data_dir, "dataset bundle directory")
      ->required();
  fit_cmd->add_option("--spec", fa.spec_file, "model spec (json or toml)")
      ->required();
  fit_cmd->add_option("--out", fa.out_dir, "output directory")->required();
  fa.o_model = fit_cmd->add_option("--model", fa.model, "ssom, msom, or iom");
  fa.o_spatial = fit_cmd->add_flag("--spatial,!--no-spatial", fa.spatial,
                                   "spatial random effect");
  fa.o_kernel = fit_cmd->add_option(
      "--kernel", fa.kernel, "exponential, gaussian, spherical, or matern");
  fa.o_neighbors = fit_cmd->add_option("--neighbors", fa.neighbors,
                                       "nearest-neighbor set size");
  fa.o_gp = fit_cmd->add_option("--gp", fa.gp, "full or nngp")
                ->check(CLI::IsMember({"full", "nngp"}));
  fa.o_iters = fit_cmd->add_option("--iters", fa.iters, "MCMC iterations");
  fa.o_burn = fit_cmd->add_option("--burn", fa.burn, "burn-in iterations");
  fa.o_thin = fit_cmd->add_option("--thin", fa.thin, "thinning interval");
  fa.o_chains = fit_cmd->add_option("--chains", fa.chains, "chain count");
  fa.o_seed = fit_cmd->add_option("--seed", fa.seed, "RNG seed");
  fit_cmd->add_option("--threads", fa.threads, "worker threads for chains");
  fit_cmd->add_flag("--quiet", fa.quiet, "suppress progress lines");

  PredictArgs pa;
  auto* pred_cmd =
      app.add_subcommand("predict", "posterior prediction at new sites");
  pred_cmd->add_option("--fit", pa.fit_dir, "chains directory")->required();
  pred_cmd->add_option("--covs", pa.covs_file,
                       "CSV of x, y, and raw covariates")
      ->required();
  pred_cmd->add_option("--out", pa.out_dir, "output directory")->required();
  pred_cmd->add_option("--data", pa.data_dir,
                       "training bundle (hash cross-check only)");
  pa.o_neighbors = pred_cmd->add_option("--neighbors", pa.neighbors,
                                        "conditioning set size (kriging)");
  pred_cmd->add_option("--seed", pa.seed, "RNG seed");
  pred_cmd->add_option("--threads", pa.threads, "worker threads");

  SimulateArgs sa;
  auto* sim_cmd =
      app.add_subcommand("simulate", "generate a dataset bundle plus truth");
  sim_cmd->add_option("--out", sa.out_dir, "output directory")->required();
  sim_cmd->add_option("--preset", sa.preset, "named design (iom-paper)");
  sim_cmd->add_option("--scale", sa.scale, "site-count scale for the preset");
  sim_cmd->add_option("--sim-spec", sa.sim_spec,
                      "JSON describing a custom simulation");
  sa.o_seed = sim_cmd->add_option("--seed", sa.seed, "RNG seed");

  AssessArgs aa;
  auto* ass_cmd =
      app.add_subcommand("assess", "WAIC, checks, and optional k-fold CV");
  ass_cmd->add_option("--fit", aa.fit_dir, "chains directory")->required();
  ass_cmd->add_option("--data", aa.data_dir, "dataset bundle directory")
      ->required();
  ass_cmd->add_option("--out", aa.out_dir, "output directory")->required();
  ass_cmd->add_option("--kfold", aa.kfold, "fold count (0 = skip CV)");
  ass_cmd->add_option("--ppc-stat", aa.ppc_stat, "chisq or ftukey")
      ->check(CLI::IsMember({"chisq", "ftukey"}));
  ass_cmd->add_option("--ppc-bin", aa.ppc_bin, "site or replicate")
      ->check(CLI::IsMember({"site", "replicate"}));
  ass_cmd->add_option("--seed", aa.seed, "RNG seed for checks and CV");
  ass_cmd->add_option("--threads", aa.threads, "worker threads for refits");

  std::string sum_fit;
  bool sum_latent = false;
  auto* sum_cmd = app.add_subcommand("summarize", "posterior quantile table");
  sum_cmd->add_option("--fit", sum_fit, "chains directory")->required();
  sum_cmd->add_flag("--latent", sum_latent, "include per-site columns");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    return fail("config", e.what(), 2);
  }

  try {
    if (fit_cmd->parsed()) return run_fit(fa);
    if (pred_cmd->parsed()) return run_predict(pa);
    if (sim_cmd->parsed()) return run_simulate(sa);
    if (ass_cmd->parsed()) return run_assess(aa);
    if (sum_cmd->parsed()) return run_summarize(sum_fit, sum_latent);
    return fail("config", "no subcommand", 2);
  } catch (const ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const DataError& e) {
    return fail("data", e.what(), 3);
  } catch (const NumericalError& e) {
    return fail("numerical", e.what(), 4);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 4);
  }
}
