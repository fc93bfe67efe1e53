#include "occu/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>

#include "json.hpp"
#include "occu/common.hpp"
#include "occu/dataset_io.hpp"
#include "occu/rng.hpp"
#include "occu/spatial.hpp"

namespace occu {
namespace {

using nlohmann::json;

void require_finite(const Eigen::VectorXd& v, const std::string& what) {
  if (v.size() == 0) throw ConfigError(what + " must not be empty");
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (!std::isfinite(v(i)))
      throw ConfigError(what + " must be finite");
}

void check_spatial(const SimSpatial& sp) {
  if (!std::isfinite(sp.sigma2) || sp.sigma2 <= 0.0)
    throw ConfigError("spatial variance must be positive and finite");
  if (!std::isfinite(sp.phi) || sp.phi <= 0.0)
    throw ConfigError("spatial decay must be positive and finite");
  if (sp.kernel == Kernel::Matern && (!std::isfinite(sp.nu) || sp.nu <= 0.0))
    throw ConfigError("Matern smoothness must be positive and finite");
  if (sp.neighbors < 1) throw ConfigError("neighbor count must be positive");
}

std::vector<Point2> make_coords(int J, bool grid, double extent,
                                RngStream& rng) {
  std::vector<Point2> coords;
  coords.reserve(J);
  if (grid) {
    const int nx = static_cast<int>(std::llround(std::sqrt(double(J))));
    if (nx * nx != J)
      throw ConfigError("grid layout needs a square site count, got " +
                        std::to_string(J));
    for (int j = 0; j < J; ++j)
      coords.push_back({(j % nx + 0.5) / nx * extent,
                        (j / nx + 0.5) / nx * extent});
  } else {
    for (int j = 0; j < J; ++j) {
      const double x = draw_uniform(0.0, extent, rng);
      const double y = draw_uniform(0.0, extent, rng);
      coords.push_back({x, y});
    }
  }
  return coords;
}

// Zero-mean GP realization: dense Cholesky up to dense_limit sites, the
// sequential nearest-neighbor factorization above it. Both consume exactly J
// standard normals.
Eigen::VectorXd draw_field(int J, const NeighborGraph* graph,
                           const NngpFactors* factors,
                           const Eigen::LLT<Eigen::MatrixXd>* dense_chol,
                           RngStream& rng) {
  Eigen::VectorXd w(J);
  if (dense_chol != nullptr) {
    Eigen::VectorXd zvec(J);
    for (int j = 0; j < J; ++j) zvec(j) = draw_normal(rng);
    w = dense_chol->matrixL() * zvec;
    return w;
  }
  for (int r = 0; r < J; ++r) {
    const int j = graph->order[r];
    double mean = 0.0;
    const auto& nbr = graph->neighbors[j];
    for (std::size_t k = 0; k < nbr.size(); ++k)
      mean += factors->B[j](static_cast<Eigen::Index>(k)) * w(nbr[k]);
    w(j) = mean + std::sqrt(factors->F(j)) * draw_normal(rng);
  }
  return w;
}

// Uniform without-replacement subset of {0..J-1}, returned sorted. A full
// subset is the identity and consumes no randomness, so a source covering
// every site leaves the stream untouched.
std::vector<int> sample_sites(int J, int n, RngStream& rng) {
  std::vector<int> idx(J);
  std::iota(idx.begin(), idx.end(), 0);
  if (n < J) {
    for (int t = 0; t < n; ++t) {
      const int r = t + static_cast<int>(rng.uniform01() * (J - t));
      std::swap(idx[t], idx[r]);
    }
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

// Shared generator. Exactly one of (beta_fixed, community) is set; community
// implies a single source. Draw order, fixed for reproducibility: coordinates
// (uniform layout only), occurrence covariates row-major, community species
// coefficients, per-species w, per-species z by site, then per source the
// site subset, detection covariates row-major, and y over occupied cells.
SimResult simulate_core(int J, int N, const std::vector<SimSource>& sources,
                        const Eigen::VectorXd* beta_fixed,
                        const CommunityParams* community,
                        const std::optional<SimSpatial>& spatial,
                        std::uint64_t seed, bool grid, double extent) {
  if (J < 1) throw ConfigError("site count must be positive");
  if (N < 1) throw ConfigError("species count must be positive");
  if (sources.empty()) throw ConfigError("at least one source is required");
  if (!(extent > 0.0) || !std::isfinite(extent))
    throw ConfigError("extent must be positive and finite");
  if (spatial) check_spatial(*spatial);
  int p = 0;
  if (beta_fixed != nullptr) {
    require_finite(*beta_fixed, "beta");
    p = static_cast<int>(beta_fixed->size());
    for (const auto& src : sources) require_finite(src.alpha, "alpha");
  } else {
    if (sources.size() != 1)
      throw ConfigError("community coefficients imply a single source");
    require_finite(community->mu_beta, "mu_beta");
    require_finite(community->tau2_beta, "tau2_beta");
    require_finite(community->mu_alpha, "mu_alpha");
    require_finite(community->tau2_alpha, "tau2_alpha");
    if (community->tau2_beta.size() != community->mu_beta.size() ||
        community->tau2_alpha.size() != community->mu_alpha.size())
      throw ConfigError("community mean and variance lengths differ");
    if (community->tau2_beta.minCoeff() < 0.0 ||
        community->tau2_alpha.minCoeff() < 0.0)
      throw ConfigError("community variances must be non-negative");
    p = static_cast<int>(community->mu_beta.size());
  }
  for (const auto& src : sources) {
    if (src.n_sites < 1) throw ConfigError("source site count must be positive");
    if (src.n_sites > J)
      throw ConfigError("source samples " + std::to_string(src.n_sites) +
                        " sites but only " + std::to_string(J) + " exist");
    if (src.K < 1) throw ConfigError("replicate count must be positive");
  }

  RngStream rng(seed, 0, 4);
  SimResult out;
  Dataset& d = out.data;
  SimTruth& truth = out.truth;
  truth.seed = seed;
  truth.grid = grid;
  truth.extent = extent;
  truth.spatial = spatial;

  d.coords = make_coords(J, grid, extent, rng);
  d.site_ids.resize(J);
  std::iota(d.site_ids.begin(), d.site_ids.end(), 1);
  d.X = Eigen::MatrixXd::Ones(J, p);
  d.occ_names = {"(Intercept)"};
  for (int j = 0; j < J; ++j)
    for (int c = 1; c < p; ++c) d.X(j, c) = draw_normal(rng);
  for (int c = 1; c < p; ++c) d.occ_names.push_back("x" + std::to_string(c));
  d.occ_std.offset.assign(p, 0.0);
  d.occ_std.scale.assign(p, 1.0);
  d.n_species = N;
  for (int i = 0; i < N; ++i)
    d.species_names.push_back("sp" + std::to_string(i + 1));
  d.y_species_column = N > 1;

  truth.beta.resize(N);
  truth.alpha.assign(sources.size(), std::vector<Eigen::VectorXd>(N));
  if (beta_fixed != nullptr) {
    for (int i = 0; i < N; ++i) truth.beta[i] = *beta_fixed;
    for (std::size_t s = 0; s < sources.size(); ++s)
      for (int i = 0; i < N; ++i) truth.alpha[s][i] = sources[s].alpha;
  } else {
    truth.community = *community;
    const int q = static_cast<int>(community->mu_alpha.size());
    for (int i = 0; i < N; ++i) {
      truth.beta[i].resize(p);
      for (int c = 0; c < p; ++c)
        truth.beta[i](c) = community->mu_beta(c) +
                           std::sqrt(community->tau2_beta(c)) * draw_normal(rng);
      truth.alpha[0][i].resize(q);
      for (int c = 0; c < q; ++c)
        truth.alpha[0][i](c) =
            community->mu_alpha(c) +
            std::sqrt(community->tau2_alpha(c)) * draw_normal(rng);
    }
  }

  truth.w.resize(J, N);
  truth.w.setZero();
  if (spatial) {
    const KernelParams kp{spatial->sigma2, spatial->phi, spatial->nu};
    if (J <= spatial->dense_limit) {
      const Eigen::MatrixXd cov =
          dense_covariance(d.coords, spatial->kernel, kp);
      const auto chol = cholesky_with_jitter(cov, spatial->sigma2);
      for (int i = 0; i < N; ++i)
        truth.w.col(i) = draw_field(J, nullptr, nullptr, &chol, rng);
    } else {
      const NeighborGraph graph =
          build_neighbor_graph(d.coords, spatial->neighbors);
      const NngpFactors factors = nngp_factors(graph, spatial->kernel, kp);
      for (int i = 0; i < N; ++i)
        truth.w.col(i) = draw_field(J, &graph, &factors, nullptr, rng);
    }
  }

  truth.psi.resize(J, N);
  truth.z.resize(J, N);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < J; ++j) {
      truth.psi(j, i) = logistic(d.X.row(j).dot(truth.beta[i]) + truth.w(j, i));
      truth.z(j, i) = draw_bernoulli(truth.psi(j, i), rng);
    }

  for (std::size_t s = 0; s < sources.size(); ++s) {
    const SimSource& spec = sources[s];
    DataSource src;
    src.id = static_cast<int>(s) + 1;
    src.site_map = sample_sites(J, spec.n_sites, rng);
    src.K_max = spec.K;
    const int Jl = spec.n_sites;
    const int q = static_cast<int>(truth.alpha[s][0].size());
    src.V = Eigen::MatrixXd::Ones(Jl * spec.K, q);
    src.det_names = {"(Intercept)"};
    for (int row = 0; row < Jl * spec.K; ++row)
      for (int c = 1; c < q; ++c) src.V(row, c) = draw_normal(rng);
    for (int c = 1; c < q; ++c)
      src.det_names.push_back("v" + std::to_string(c));
    src.det_std.offset.assign(q, 0.0);
    src.det_std.scale.assign(q, 1.0);
    src.y.assign(N, Eigen::MatrixXi::Zero(Jl, spec.K));
    for (int i = 0; i < N; ++i)
      for (int jl = 0; jl < Jl; ++jl) {
        if (truth.z(src.site_map[jl], i) == 0) continue;  // no false positives
        for (int k = 0; k < spec.K; ++k) {
          const double pdet =
              logistic(src.V.row(jl * spec.K + k).dot(truth.alpha[s][i]));
          src.y[i](jl, k) = draw_bernoulli(pdet, rng);
        }
      }
    d.sources.push_back(std::move(src));
  }
  return out;
}

}  // namespace

SimResult sim_occ(int J, int K, const Eigen::VectorXd& beta,
                  const Eigen::VectorXd& alpha,
                  const std::optional<SimSpatial>& spatial, std::uint64_t seed,
                  bool grid, double extent) {
  const std::vector<SimSource> sources{{J, K, alpha}};
  return simulate_core(J, 1, sources, &beta, nullptr, spatial, seed, grid,
                       extent);
}

SimResult sim_ms_occ(int J, int K, int N, const CommunityParams& community,
                     const std::optional<SimSpatial>& spatial,
                     std::uint64_t seed, bool grid, double extent) {
  const std::vector<SimSource> sources{{J, K, Eigen::VectorXd()}};
  return simulate_core(J, N, sources, nullptr, &community, spatial, seed,
                       grid, extent);
}

SimResult sim_int_occ(int J, const std::vector<SimSource>& sources,
                      const Eigen::VectorXd& beta,
                      const std::optional<SimSpatial>& spatial,
                      std::uint64_t seed, bool grid, double extent) {
  return simulate_core(J, 1, sources, &beta, nullptr, spatial, seed, grid,
                       extent);
}

SimResult sim_iom_paper(double scale, std::uint64_t seed) {
  if (!(scale > 0.0) || !std::isfinite(scale) || scale > 1.0)
    throw ConfigError("scale must lie in (0, 1]");
  const int nx = static_cast<int>(std::llround(200.0 * std::sqrt(scale)));
  if (nx < 2) throw ConfigError("scale too small for a grid");
  const int J = nx * nx;
  Eigen::VectorXd beta(3);
  beta << 0.0, -0.5, 1.0;
  std::vector<SimSource> sources(3);
  const double fraction[3] = {0.625, 0.375, 0.125};
  const double a0[3] = {-1.0, 0.0, 1.0};
  const double a1[3] = {0.4, -0.5, 0.8};
  for (int s = 0; s < 3; ++s) {
    sources[s].n_sites = static_cast<int>(std::llround(J * fraction[s]));
    sources[s].K = 3;
    sources[s].alpha.resize(2);
    sources[s].alpha << a0[s], a1[s];
  }
  SimSpatial sp;
  sp.kernel = Kernel::Exponential;
  sp.sigma2 = 2.0;
  sp.phi = 5.0;
  return sim_int_occ(J, sources, beta, sp, seed, /*grid=*/true, 1.0);
}

namespace {

json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::VectorXd vec_from(const json& a) {
  Eigen::VectorXd v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v(i) = a[i].get<double>();
  return v;
}

json col_json(const Eigen::MatrixXd& m, int c) {
  json a = json::array();
  for (Eigen::Index j = 0; j < m.rows(); ++j) a.push_back(m(j, c));
  return a;
}

}  // namespace

void write_truth(const std::string& dir, const SimTruth& truth) {
  json j;
  j["seed"] = truth.seed;
  j["grid"] = truth.grid;
  j["extent"] = truth.extent;
  json beta = json::array();
  for (const auto& b : truth.beta) beta.push_back(vec_json(b));
  j["beta"] = beta;
  json alpha = json::array();
  for (const auto& per_species : truth.alpha) {
    json row = json::array();
    for (const auto& a : per_species) row.push_back(vec_json(a));
    alpha.push_back(row);
  }
  j["alpha"] = alpha;
  if (truth.spatial) {
    j["spatial"] = {{"kernel", kernel_name(truth.spatial->kernel)},
                    {"sigma2", truth.spatial->sigma2},
                    {"phi", truth.spatial->phi},
                    {"nu", truth.spatial->nu},
                    {"dense_limit", truth.spatial->dense_limit},
                    {"neighbors", truth.spatial->neighbors}};
    json w = json::array();
    for (int i = 0; i < truth.w.cols(); ++i) w.push_back(col_json(truth.w, i));
    j["w"] = w;
  }
  if (truth.community) {
    j["community"] = {{"mu_beta", vec_json(truth.community->mu_beta)},
                      {"tau2_beta", vec_json(truth.community->tau2_beta)},
                      {"mu_alpha", vec_json(truth.community->mu_alpha)},
                      {"tau2_alpha", vec_json(truth.community->tau2_alpha)}};
  }
  json psi = json::array(), z = json::array();
  for (int i = 0; i < truth.psi.cols(); ++i) {
    psi.push_back(col_json(truth.psi, i));
    json zi = json::array();
    for (int row = 0; row < truth.z.rows(); ++row)
      zi.push_back(truth.z(row, i));
    z.push_back(zi);
  }
  j["psi"] = psi;
  j["z"] = z;
  std::filesystem::create_directories(dir);
  std::ofstream out(std::filesystem::path(dir) / "truth.json");
  if (!out) throw DataError("cannot write truth.json in '" + dir + "'");
  out << j.dump(1) << '\n';
}

SimTruth read_truth(const std::string& dir) {
  const auto path = std::filesystem::path(dir) / "truth.json";
  std::ifstream in(path);
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  json j;
  SimTruth t;
  try {
    in >> j;
    t.seed = j.at("seed").get<std::uint64_t>();
    t.grid = j.at("grid").get<bool>();
    t.extent = j.at("extent").get<double>();
    for (const auto& b : j.at("beta")) t.beta.push_back(vec_from(b));
    for (const auto& row : j.at("alpha")) {
      std::vector<Eigen::VectorXd> per_species;
      for (const auto& a : row) per_species.push_back(vec_from(a));
      t.alpha.push_back(std::move(per_species));
    }
    const int N = static_cast<int>(t.beta.size());
    const auto& psi = j.at("psi");
    const int J = static_cast<int>(psi.at(0).size());
    t.psi.resize(J, N);
    t.z.resize(J, N);
    t.w = Eigen::MatrixXd::Zero(J, N);
    for (int i = 0; i < N; ++i)
      for (int row = 0; row < J; ++row) {
        t.psi(row, i) = psi.at(i).at(row).get<double>();
        t.z(row, i) = j.at("z").at(i).at(row).get<int>();
      }
    if (j.contains("spatial")) {
      SimSpatial sp;
      const auto& s = j.at("spatial");
      sp.kernel = kernel_from_string(s.at("kernel").get<std::string>());
      sp.sigma2 = s.at("sigma2").get<double>();
      sp.phi = s.at("phi").get<double>();
      sp.nu = s.at("nu").get<double>();
      sp.dense_limit = s.at("dense_limit").get<int>();
      sp.neighbors = s.at("neighbors").get<int>();
      t.spatial = sp;
      for (int i = 0; i < N; ++i)
        for (int row = 0; row < J; ++row)
          t.w(row, i) = j.at("w").at(i).at(row).get<double>();
    }
    if (j.contains("community")) {
      CommunityParams c;
      c.mu_beta = vec_from(j.at("community").at("mu_beta"));
      c.tau2_beta = vec_from(j.at("community").at("tau2_beta"));
      c.mu_alpha = vec_from(j.at("community").at("mu_alpha"));
      c.tau2_alpha = vec_from(j.at("community").at("tau2_alpha"));
      t.community = c;
    }
  } catch (const json::exception& e) {
    throw DataError("malformed truth.json: " + std::string(e.what()));
  }
  return t;
}

}  // namespace occu
