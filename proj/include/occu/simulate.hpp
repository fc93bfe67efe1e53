#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "occu/types.hpp"

namespace occu {

// Synthetic data generators for the three model classes. Each returns a
// ready-to-fit dataset together with every value the generator drew, and is a
// pure function of its parameters and seed (bit-reproducible).

// Gaussian-process settings for a simulated spatial random effect. Fields
// J <= dense_limit use an exact dense Cholesky; larger fields fall back to
// the sequential nearest-neighbor factorization (approximate, documented).
struct SimSpatial {
  Kernel kernel = Kernel::Exponential;
  double sigma2 = 1.0;
  double phi = 1.0;
  double nu = 0.5;  // Matern only
  int dense_limit = 10000;
  int neighbors = 15;  // sequential generator's neighbor count
};

// One detection source: how many of the shared sites it samples (uniform
// without replacement; n_sites == J keeps the identity order), its replicate
// count, and its detection coefficients. alpha is intercept-first; length q
// implies q - 1 standard-normal survey-level covariates.
struct SimSource {
  int n_sites = 0;
  int K = 0;
  Eigen::VectorXd alpha;
};

// Community hyperparameters for the multispecies generator: species
// coefficients are drawn elementwise from Normal(mu, tau2).
struct CommunityParams {
  Eigen::VectorXd mu_beta, tau2_beta;
  Eigen::VectorXd mu_alpha, tau2_alpha;
};

// Everything the generator drew. Coefficients plus the covariates stored in
// the dataset reconstruct psi and p exactly; w is empty when nonspatial and
// community is empty unless the multispecies generator ran.
struct SimTruth {
  std::uint64_t seed = 0;
  bool grid = false;
  double extent = 1.0;
  std::vector<Eigen::VectorXd> beta;               // per species
  std::vector<std::vector<Eigen::VectorXd>> alpha; // [source][species]
  std::optional<SimSpatial> spatial;
  Eigen::MatrixXd w;    // J x N
  Eigen::MatrixXd psi;  // J x N
  Eigen::MatrixXi z;    // J x N
  std::optional<CommunityParams> community;
};

struct SimResult {
  Dataset data;
  SimTruth truth;
};

// Single species, one source surveying every site.
SimResult sim_occ(int J, int K, const Eigen::VectorXd& beta,
                  const Eigen::VectorXd& alpha,
                  const std::optional<SimSpatial>& spatial, std::uint64_t seed,
                  bool grid = false, double extent = 1.0);

// N species with coefficients drawn from the community distribution; one
// source surveying every site; independent per-species spatial fields.
SimResult sim_ms_occ(int J, int K, int N, const CommunityParams& community,
                     const std::optional<SimSpatial>& spatial,
                     std::uint64_t seed, bool grid = false,
                     double extent = 1.0);

// Single species, several sources each surveying its own uniformly sampled
// subset of the shared sites. Occurrence (psi, z, w) is shared; each source
// carries its own detection model.
SimResult sim_int_occ(int J, const std::vector<SimSource>& sources,
                      const Eigen::VectorXd& beta,
                      const std::optional<SimSpatial>& spatial,
                      std::uint64_t seed, bool grid = false,
                      double extent = 1.0);

// Benchmark preset: three overlapping sources of decreasing size and
// increasing detectability on a gridded unit square over an exponential
// spatial field (sigma2 = 2, phi = 5). scale shrinks the full 40,000-site
// design; scale = 1/16 gives a 50 x 50 grid with sources of 1563/938/313
// sites. The grid side is rounded to the nearest integer.
SimResult sim_iom_paper(double scale, std::uint64_t seed);

// truth.json alongside the dataset bundle; numbers round-trip exactly.
void write_truth(const std::string& dir, const SimTruth& truth);
SimTruth read_truth(const std::string& dir);

}  // namespace occu
