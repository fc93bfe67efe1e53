#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "occu/chains.hpp"

namespace occu {

// Posterior predictive draws at new sites. One matrix per species, shaped
// (pooled draws across chains) x (new sites).
struct Prediction {
  std::vector<Eigen::MatrixXd> psi;
  std::vector<Eigen::MatrixXi> z;
  std::vector<Eigen::MatrixXd> w;  // spatial fits only

  int n_draws() const { return psi.empty() ? 0 : static_cast<int>(psi[0].rows()); }
  int n_sites() const { return psi.empty() ? 0 : static_cast<int>(psi[0].cols()); }
};

// psi* = logit^-1(X_new beta_d) per pooled draw, z* ~ Bernoulli(psi*).
// X_new must already be on the training (standardized) scale. Occurrence
// random intercepts contribute when new-site level codes are supplied; codes
// outside the training levels contribute zero.
Prediction predict_nonspatial(
    const FitResult& fit, const Eigen::MatrixXd& X_new, std::uint64_t seed,
    const std::vector<Eigen::VectorXi>* occ_re_levels = nullptr);

// Composition sampling for spatial fits: per draw, w* at a new site is
// Normal(B w_N, F) conditioning on the m nearest training sites under that
// draw's covariance parameters; psi* = logit^-1(X beta + w*). A new site
// coincident with a training site copies that site's w draw. m >= J uses
// every training site, which is the dense-GP conditional.
Prediction predict_spatial(const FitResult& fit, const Eigen::MatrixXd& X_new,
                           const std::vector<Point2>& coords_new, int m,
                           std::uint64_t seed, int threads = 1);

// Long-format per-site summary: coords, species, posterior mean/sd/2.5/50/
// 97.5 of psi, mean z.
void prediction_csv(const std::string& path,
                    const std::vector<Point2>& coords_new,
                    const Prediction& pred,
                    const std::vector<std::string>& species);

// Species richness (per-draw count of occupied species per site) summarized
// to mean and sd.
void richness_csv(const std::string& path,
                  const std::vector<Point2>& coords_new,
                  const Prediction& pred);

}  // namespace occu
