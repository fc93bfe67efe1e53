#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "occu/chains.hpp"
#include "occu/samplers.hpp"

namespace occu {

struct WaicResult {
  double elpd = 0.0;
  double p_eff = 0.0;  // effective number of parameters
  double waic = 0.0;   // -2 (elpd - p_eff)
};

enum class PpcStat { ChiSquare, FreemanTukey };
enum class PpcBin { Site, Replicate };

PpcStat ppc_stat_from_string(const std::string& s);
PpcBin ppc_bin_from_string(const std::string& s);

// One posterior predictive check for one (source, species) pair.
struct PpcResult {
  int source_id = 0;
  std::string species;
  PpcStat stat = PpcStat::ChiSquare;
  PpcBin bin = PpcBin::Site;
  std::vector<double> t_obs;  // discrepancy of the data, per pooled draw
  std::vector<double> t_rep;  // discrepancy of replicated data, per draw
  double bayesian_p = 0.0;    // fraction of draws with t_rep > t_obs
};

struct CvResult {
  std::vector<int> fold_of_site;      // J entries in [0, k)
  std::vector<double> fold_deviance;  // k entries
  double total_deviance = 0.0;
};

struct RhatResult {
  std::vector<std::string> names;
  std::vector<double> rhat;
};

struct SummaryRow {
  std::string name;
  double mean = 0.0, sd = 0.0;
  double q025 = 0.0, q500 = 0.0, q975 = 0.0;
  double rhat = 1.0;
};

// Widely applicable information criterion with the occupancy state
// marginalized out. The likelihood unit is one (species, site), pooling
// every source that surveyed the site: L = psi prod p^y (1-p)^(1-y) +
// (1-psi) [no detections]. elpd = sum log mean L, p_eff = sum var log L.
WaicResult waic(const FitResult& fit, const Dataset& data);

// Per draw, replicate data are simulated from that draw's (psi, p), binned
// by site (row sums) or replicate (column sums), and compared to the
// binned observations through a chi-square or Freeman-Tukey discrepancy
// against the draw's expected bin counts. rep_equals_obs short-circuits the
// simulation with y itself (degenerate diagnostics of the strict compare).
std::vector<PpcResult> ppc(const FitResult& fit, const Dataset& data,
                           PpcStat stat, PpcBin bin, std::uint64_t seed,
                           bool rep_equals_obs = false);

// Sites are partitioned into k balanced folds by a seeded shuffle; each fold
// is scored by -2 sum log mean L at the held-out sites after refitting on
// the rest. Spatial fits krige w to held-out sites with the training
// neighbor count.
CvResult kfold_cv(const ModelSpec& spec, const Dataset& data, int k,
                  std::uint64_t seed, const FitOptions& opt = {});

// Split-chain potential scale reduction per stored column. Zero-variance
// columns report exactly 1.
RhatResult rhat(const FitResult& fit);

// Posterior quantile table over pooled chains. Latent per-site columns
// (w, psi, z) are skipped unless include_latent is set.
std::vector<SummaryRow> summarize(const FitResult& fit,
                                  bool include_latent = false);

}  // namespace occu
