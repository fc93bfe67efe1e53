#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "occu/chains.hpp"
#include "occu/rng.hpp"
#include "occu/spatial.hpp"
#include "occu/types.hpp"

namespace occu {

// Exact conjugate draw for logistic-regression coefficients under the
// Polya-gamma augmentation: Normal(V (X' kappa' + S0^-1 mu0), V) with
// V = (X' Omega X + S0^-1)^-1 and kappa'_r = kappa_r - omega_r * offset_r.
// Zero rows reduce to a prior draw.
Eigen::VectorXd update_coefficients(const Eigen::MatrixXd& X,
                                    const Eigen::VectorXd& kappa,
                                    const Eigen::VectorXd& omega,
                                    const Eigen::VectorXd& offset,
                                    const Eigen::VectorXd& prior_mean,
                                    const Eigen::VectorXd& prior_var,
                                    RngStream& rng);

// P(z = 1 | no detection) = psi prod(1-p) / (psi prod(1-p) + 1 - psi), the
// product running over the observed replicates pooled across sources.
double z_conditional(double psi, const double* p, int n);

struct CommunityDraw {
  double mu = 0.0;
  double tau2 = 1.0;
};

// Normal-normal draw for the community mean given the current variance,
// followed by the conjugate inverse-gamma draw for the community variance,
// for one coefficient column.
CommunityDraw update_community(const Eigen::VectorXd& coef, double cur_tau2,
                               double mu_mean, double mu_var,
                               double tau2_shape, double tau2_scale,
                               RngStream& rng);

// Per-level conjugate draws for one random intercept given PG weights and
// the linear predictor excluding this effect. Rows with level < 0 are
// skipped; levels with no rows fall back to Normal(0, variance).
Eigen::VectorXd update_random_effect_values(const Eigen::VectorXi& levels,
                                            const Eigen::VectorXd& kappa,
                                            const Eigen::VectorXd& omega,
                                            const Eigen::VectorXd& offset,
                                            int n_levels, double variance,
                                            RngStream& rng);

struct FitOptions {
  int threads = 1;
  bool progress = false;
};

// One model state plus every conditional update, shared by the six model
// classes. The y copy is mutable so the prior-invariance harness can
// resimulate data against the current state.
class GibbsSampler {
 public:
  GibbsSampler(const ModelSpec& spec, const Dataset& data);

  // Deterministic-leaning start: z = 1 where detected else Bernoulli(0.5),
  // coefficients 0, variances at prior means, decay at support midpoint,
  // w and random effects 0.
  void init_default(RngStream& rng);
  // Full joint draw from the prior, including z and a fresh y.
  void init_from_prior(RngStream& rng);
  // y | current state: zero where z = 0, Bernoulli(p) where z = 1.
  void resimulate_y(RngStream& rng);

  void sweep(RngStream& rng, bool adapt);
  void store_row(Eigen::Ref<Eigen::VectorXd> row) const;

  const ModelSpec& effective_spec() const { return spec_; }
  const Layout& layout() const { return lay_; }
  const std::vector<int>& site_order() const { return graph_.order; }
  double accept_rate_phi() const;
  double accept_rate_nu() const;
  void reset_accept_counters();
  const std::map<std::string, double>& block_seconds() const {
    return block_s_;
  }

  // Linear predictors under the current state.
  double eta_occ(int i, int j) const;
  double eta_det(int s, int i, int jl, int k) const;

  // Direct state access for unit tests and the invariance harness.
  const Eigen::MatrixXd& omega_occ() const { return omega_; }
  Eigen::MatrixXd& omega_det(int s, int i) { return omega_det_[s][i]; }
  Eigen::MatrixXd& beta() { return beta_; }
  std::vector<Eigen::MatrixXd>& alpha() { return alpha_; }
  Eigen::MatrixXi& z() { return z_; }
  Eigen::VectorXd& w(int i) { return w_[i]; }
  KernelParams& theta(int i) { return theta_[i]; }
  std::vector<Eigen::MatrixXi>& y(int s) { return y_[s]; }
  double sigma2_det_re(int e) const { return re_det_var_[e]; }
  double sigma2_occ_re(int e) const { return re_occ_var_[e]; }
  double mu_beta(int r) const { return mu_beta_(r); }
  double tau2_beta(int r) const { return tau2_beta_(r); }

  // Individual blocks, exposed so conditionals can be tested in isolation.
  void update_pg_occ(RngStream& rng);
  void update_beta(RngStream& rng);
  void update_community_block(RngStream& rng);
  void update_det_source(int s, RngStream& rng);  // PG weights then alpha
  void update_random_effects_block(RngStream& rng);
  void update_z_block(RngStream& rng);
  void update_w_block(RngStream& rng);
  void update_theta_block(RngStream& rng, bool adapt);

  // Log target for the decay/smoothness Metropolis step (spatial prior
  // density of w plus the logit-transform Jacobian), used by boundary tests.
  double theta_log_target(int i, double phi, double nu) const;

 private:
  void check_detection_invariant() const;
  double re_det_contrib(int s, int i, int jl, int k) const;
  double re_occ_contrib(int i, int j) const;
  void refresh_dense(int i);

  ModelSpec spec_;
  const Dataset* data_;
  Layout lay_;
  int N_ = 1, J_ = 0, S_ = 1;
  double phi_lo_ = 0.0, phi_hi_ = 0.0;

  Eigen::MatrixXd beta_;                // N x p_occ
  std::vector<Eigen::MatrixXd> alpha_;  // per source: N x p_det
  Eigen::VectorXd mu_beta_, tau2_beta_, mu_alpha_, tau2_alpha_;
  std::vector<double> re_det_var_;           // flattened (source, effect)
  std::vector<Eigen::MatrixXd> re_det_val_;  // e -> N x levels
  std::vector<double> re_occ_var_;
  std::vector<Eigen::MatrixXd> re_occ_val_;
  std::vector<Eigen::VectorXd> w_;  // per species
  std::vector<KernelParams> theta_;
  Eigen::MatrixXi z_;       // N x J
  Eigen::MatrixXd omega_;   // N x J occurrence PG weights
  std::vector<std::vector<Eigen::MatrixXd>> omega_det_;  // [s][i] Js x K
  std::vector<std::vector<Eigen::MatrixXi>> y_;          // mutable copy

  NeighborGraph graph_;
  std::vector<NngpFactors> factors_;
  NngpFactors factors_prop_;
  Eigen::MatrixXd dist_;  // dense mode
  std::vector<Eigen::LLT<Eigen::MatrixXd>> corr_llt_;
  std::vector<Eigen::MatrixXd> corr_inv_;

  // (source, local site) pairs observing each shared site.
  std::vector<std::vector<std::pair<int, int>>> cells_at_site_;
  std::vector<int> re_flat_source_;  // flattened det effect -> source
  std::vector<int> re_flat_local_;   // flattened det effect -> index in source

  // Adaptive Metropolis state, per species.
  std::vector<double> step_phi_, step_nu_;
  std::vector<int> acc_phi_, try_phi_, acc_nu_, try_nu_;
  std::vector<int> batch_acc_phi_, batch_acc_nu_;
  int batch_iter_ = 0, batch_count_ = 0;

  std::map<std::string, double> block_s_;
};

FitResult fit_model(const ModelSpec& spec, const Dataset& data,
                    const FitOptions& opt = {});

}  // namespace occu
