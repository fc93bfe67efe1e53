#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "occu/types.hpp"

namespace occu {

// Flat column layout of one stored draw. Offsets are fixed by (spec,
// dataset) so chains from different runs of the same problem align.
// Order: beta | community | alpha | detection REs | occurrence REs |
//        spatial theta | w | psi | z.
struct Layout {
  int n_species = 1;
  int p_occ = 1;
  std::vector<int> p_det;          // per source
  std::vector<int> re_det_levels;  // flattened (source, effect) level counts
  std::vector<int> re_det_source;  // source index per flattened effect
  std::vector<std::string> re_det_names;
  std::vector<int> re_occ_levels;
  std::vector<std::string> re_occ_names;
  int J = 0;
  bool msom = false;
  bool spatial = false;
  bool matern = false;
  bool store_latent = true;

  int n_cols = 0;
  int off_beta = 0, off_mu_beta = 0, off_tau2_beta = 0;
  int off_mu_alpha = 0, off_tau2_alpha = 0;
  std::vector<int> off_alpha;        // per source
  std::vector<int> off_re_det_var;   // per flattened detection effect
  std::vector<int> off_re_det;       // values start per flattened effect
  std::vector<int> off_re_occ_var;
  std::vector<int> off_re_occ;
  int off_theta = 0;  // per species: sigma2, phi[, nu]
  int theta_stride = 0;
  int off_w = 0, off_psi = 0, off_z = 0;

  int beta(int i, int r) const { return off_beta + i * p_occ + r; }
  int mu_beta(int r) const { return off_mu_beta + r; }
  int tau2_beta(int r) const { return off_tau2_beta + r; }
  int mu_alpha(int r) const { return off_mu_alpha + r; }
  int tau2_alpha(int r) const { return off_tau2_alpha + r; }
  int alpha(int s, int i, int r) const {
    return off_alpha[s] + i * p_det[s] + r;
  }
  int re_det_var(int e) const { return off_re_det_var[e]; }
  int re_det(int e, int i, int l) const {
    return off_re_det[e] + i * re_det_levels[e] + l;
  }
  int re_occ_var(int e) const { return off_re_occ_var[e]; }
  int re_occ(int e, int i, int l) const {
    return off_re_occ[e] + i * re_occ_levels[e] + l;
  }
  int sigma2(int i) const { return off_theta + i * theta_stride; }
  int phi(int i) const { return off_theta + i * theta_stride + 1; }
  int nu(int i) const { return off_theta + i * theta_stride + 2; }
  int w(int i, int j) const { return off_w + i * J + j; }
  int psi(int i, int j) const { return off_psi + i * J + j; }
  int z(int i, int j) const { return off_z + i * J + j; }
};

Layout make_layout(const ModelSpec& spec, const Dataset& data);
std::vector<std::string> column_names(const Layout& lay, const Dataset& data);

struct FitResult {
  ModelSpec spec;  // effective: phi/nu support resolved
  std::uint64_t data_hash = 0;
  Layout layout;
  std::vector<std::string> columns;
  std::vector<Eigen::MatrixXd> draws;  // per chain, n_stored x n_cols

  // Training context needed downstream without reopening the bundle.
  std::vector<Point2> coords;
  std::vector<int> site_order;  // NNGP update order (empty when nonspatial)
  Standardizer occ_std;
  std::vector<std::string> species_names;

  std::vector<double> accept_phi;  // per chain, post-burn acceptance
  std::vector<double> accept_nu;
  nlohmann::json block_seconds;

  int n_chains() const { return static_cast<int>(draws.size()); }
  int n_stored() const {
    return draws.empty() ? 0 : static_cast<int>(draws[0].rows());
  }
};

// One chain_<c>.bin per chain (magic, dims, row-major little-endian f64)
// plus a chains.json sidecar with columns and provenance.
void save_fit(const std::string& dir, const FitResult& fit);
FitResult load_fit(const std::string& dir);

}  // namespace occu
