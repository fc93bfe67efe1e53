#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "occu/kdtree.hpp"
#include "occu/kernels.hpp"

namespace occu {

enum class ModelClass { Ssom, Msom, Iom };

ModelClass model_from_string(const std::string& name);
std::string model_name(ModelClass m);

// Prior hyperparameters. Defaults: Normal(0, 2.72) on logit-scale
// coefficients (near-uniform induced probability), inverse-gamma(2, 1) on
// variances, uniform(3/max_dist, 3/min_dist) on phi, uniform(0.1, 2.5) on nu.
// phi bounds of zero mean "derive from the data extent at fit time".
struct PriorSpec {
  double beta_mean = 0.0, beta_var = 2.72;
  double alpha_mean = 0.0, alpha_var = 2.72;
  double mu_mean = 0.0, mu_var = 2.72;            // community means
  double tau2_shape = 2.0, tau2_scale = 1.0;      // community variances
  double sigma2_shape = 2.0, sigma2_scale = 1.0;  // spatial variance
  double re_var_shape = 2.0, re_var_scale = 1.0;  // random-effect variances
  double phi_lower = 0.0, phi_upper = 0.0;
  double nu_lower = 0.1, nu_upper = 2.5;
};

struct McmcControls {
  int n_iter = 2000;
  int n_burn = 1000;
  int n_thin = 1;
  int n_chains = 1;
  std::uint64_t seed = 1;
};

struct ModelSpec {
  ModelClass model = ModelClass::Ssom;
  bool spatial = false;
  Kernel kernel = Kernel::Exponential;
  bool nngp = true;
  int neighbors = 15;
  PriorSpec priors;
  McmcControls mcmc;
  bool standardize = false;
  std::vector<std::string> det_random_effects;
  std::vector<std::string> occ_random_effects;
  bool store_latent = true;  // persist w, psi, z draws
};

// Per-column centering/scaling transform recorded so new covariates can be
// mapped into the training scale. Intercept columns carry offset 0, scale 1.
struct Standardizer {
  std::vector<double> offset;
  std::vector<double> scale;

  void apply(Eigen::MatrixXd& X) const;
  double transform(int col, double raw) const {
    return (raw - offset[col]) / scale[col];
  }
  double invert(int col, double std) const {
    return std * scale[col] + offset[col];
  }
};

// One detection data source: its own sites (mapped injectively into the
// shared site list), replicated binary detections, and detection design.
struct DataSource {
  int id = 0;
  std::vector<int> site_map;  // local site -> shared site index
  int K_max = 0;
  // One J_s x K_max matrix per species; -1 marks an unsurveyed cell.
  std::vector<Eigen::MatrixXi> y;
  // Fixed-effect detection design, row (j_local * K_max + k); intercept first.
  Eigen::MatrixXd V;
  std::vector<std::string> det_names;
  Standardizer det_std;
  // Declared detection random intercepts: dense level codes per cell
  // (-1 where unsurveyed), level counts, and the original labels.
  std::vector<std::string> re_names;
  std::vector<Eigen::MatrixXi> re_levels;
  std::vector<int> re_n_levels;
  std::vector<std::vector<std::string>> re_labels;

  bool observed(int species, int j_local, int k) const {
    return y[species](j_local, k) >= 0;
  }
};

struct Dataset {
  std::vector<Point2> coords;    // shared occurrence sites
  std::vector<int> site_ids;     // original ids, index-aligned with coords
  Eigen::MatrixXd X;             // J x p_occ occurrence design, intercept first
  std::vector<std::string> occ_names;
  Standardizer occ_std;
  int n_species = 1;
  std::vector<std::string> species_names;
  bool y_species_column = false;  // y files carry an explicit species column
  std::vector<DataSource> sources;
  // Occurrence random intercepts (nonspatial models only).
  std::vector<std::string> occ_re_names;
  std::vector<Eigen::VectorXi> occ_re_levels;
  std::vector<int> occ_re_n_levels;
  std::vector<std::vector<std::string>> occ_re_labels;

  int n_sites() const { return static_cast<int>(coords.size()); }
  int n_occ_covs() const { return static_cast<int>(X.cols()); }

  // True when any source records a detection for (species, shared site).
  bool any_detection(int species, int site) const;
  // True when any source surveyed (species, shared site) at least once.
  bool any_survey(int species, int site) const;
};

std::uint64_t fnv1a64(const void* data, std::size_t len,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hash_hex(std::uint64_t h);

}  // namespace occu
