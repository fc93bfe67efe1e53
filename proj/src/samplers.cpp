#include "occu/samplers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <thread>

#include "occu/dataset_io.hpp"
#include "occu/polya_gamma.hpp"

namespace occu {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;

double ig_prior_mean(double shape, double scale) {
  return shape > 1.0 ? scale / (shape - 1.0) : scale;
}

// Scoped wall-clock accumulator for one update block.
class BlockTimer {
 public:
  BlockTimer(std::map<std::string, double>& sink, const char* key)
      : sink_(sink), key_(key), t0_(std::chrono::steady_clock::now()) {}
  ~BlockTimer() {
    sink_[key_] += std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - t0_)
                       .count();
  }

 private:
  std::map<std::string, double>& sink_;
  const char* key_;
  std::chrono::steady_clock::time_point t0_;
};

}  // namespace

Eigen::VectorXd update_coefficients(const Eigen::MatrixXd& X,
                                    const Eigen::VectorXd& kappa,
                                    const Eigen::VectorXd& omega,
                                    const Eigen::VectorXd& offset,
                                    const Eigen::VectorXd& prior_mean,
                                    const Eigen::VectorXd& prior_var,
                                    RngStream& rng) {
  const auto p = X.cols();
  const auto n = X.rows();
  if (prior_mean.size() != p || prior_var.size() != p)
    throw ConfigError("coefficient prior dimensions do not match the design");
  if (p > 0 && prior_var.minCoeff() <= 0.0)
    throw ConfigError("coefficient prior variances must be positive");
  if (kappa.size() != n || omega.size() != n || offset.size() != n)
    throw ConfigError("coefficient update rows are not aligned");
  Eigen::MatrixXd P = prior_var.cwiseInverse().asDiagonal();
  Eigen::VectorXd b = prior_mean.cwiseQuotient(prior_var);
  if (n > 0) {
    P.noalias() += X.transpose() * omega.asDiagonal() * X;
    b.noalias() += X.transpose() * (kappa - omega.cwiseProduct(offset));
  }
  return draw_mvn_canonical(b, P, rng);
}

double z_conditional(double psi, const double* p, int n) {
  double log_miss = 0.0;
  for (int i = 0; i < n; ++i) log_miss += std::log1p(-p[i]);
  const double ln = std::log(psi) + log_miss;
  const double ld = std::log1p(-psi);
  const double m = std::max(ln, ld);
  const double num = std::exp(ln - m);
  return num / (num + std::exp(ld - m));
}

CommunityDraw update_community(const Eigen::VectorXd& coef, double cur_tau2,
                               double mu_mean, double mu_var,
                               double tau2_shape, double tau2_scale,
                               RngStream& rng) {
  const auto N = coef.size();
  if (N < 1) throw ConfigError("community update needs at least one species");
  const double vn = 1.0 / (static_cast<double>(N) / cur_tau2 + 1.0 / mu_var);
  const double mn = vn * (coef.sum() / cur_tau2 + mu_mean / mu_var);
  CommunityDraw out;
  out.mu = mn + std::sqrt(vn) * draw_normal(rng);
  const double ss = (coef.array() - out.mu).square().sum();
  out.tau2 = draw_inverse_gamma(tau2_shape + 0.5 * static_cast<double>(N),
                                tau2_scale + 0.5 * ss, rng);
  return out;
}

Eigen::VectorXd update_random_effect_values(const Eigen::VectorXi& levels,
                                            const Eigen::VectorXd& kappa,
                                            const Eigen::VectorXd& omega,
                                            const Eigen::VectorXd& offset,
                                            int n_levels, double variance,
                                            RngStream& rng) {
  Eigen::VectorXd prec = Eigen::VectorXd::Constant(n_levels, 1.0 / variance);
  Eigen::VectorXd num = Eigen::VectorXd::Zero(n_levels);
  for (Eigen::Index r = 0; r < levels.size(); ++r) {
    const int l = levels(r);
    if (l < 0) continue;
    prec(l) += omega(r);
    num(l) += kappa(r) - omega(r) * offset(r);
  }
  Eigen::VectorXd out(n_levels);
  for (int l = 0; l < n_levels; ++l)
    out(l) = num(l) / prec(l) + std::sqrt(1.0 / prec(l)) * draw_normal(rng);
  return out;
}

GibbsSampler::GibbsSampler(const ModelSpec& spec, const Dataset& data)
    : spec_(spec), data_(&data) {
  N_ = data.n_species;
  J_ = data.n_sites();
  S_ = static_cast<int>(data.sources.size());
  if (S_ < 1) throw ConfigError("dataset has no detection sources");
  if (spec_.model != ModelClass::Iom && S_ != 1)
    throw ConfigError(
        "only the integrated model takes multiple detection sources");
  if (spec_.model != ModelClass::Msom && N_ != 1)
    throw ConfigError("single-species models take exactly one species");
  if (spec_.spatial && !data.occ_re_names.empty())
    throw ConfigError(
        "occurrence random effects are only supported in nonspatial models");

  if (spec_.spatial) {
    const auto [dmin, dmax] = distance_extremes(data.coords);
    if (spec_.priors.phi_lower <= 0.0 && spec_.priors.phi_upper <= 0.0) {
      spec_.priors.phi_lower = 3.0 / dmax;
      spec_.priors.phi_upper = 3.0 / dmin;
    }
    phi_lo_ = spec_.priors.phi_lower;
    phi_hi_ = spec_.priors.phi_upper;
    if (!(phi_lo_ > 0.0) || !(phi_hi_ > phi_lo_))
      throw ConfigError("decay prior support must satisfy 0 < lower < upper");
    if (spec_.nngp) {
      if (spec_.neighbors >= J_) spec_.neighbors = J_ - 1;
      if (spec_.neighbors < 1)
        throw ConfigError("neighbor count must be at least 1");
      graph_ = build_neighbor_graph(data.coords, spec_.neighbors);
    } else {
      dist_ = pairwise_distances(data.coords);
    }
  }
  lay_ = make_layout(spec_, data);

  beta_ = Eigen::MatrixXd::Zero(N_, lay_.p_occ);
  for (int s = 0; s < S_; ++s)
    alpha_.push_back(Eigen::MatrixXd::Zero(N_, lay_.p_det[s]));
  mu_beta_ = Eigen::VectorXd::Zero(lay_.p_occ);
  tau2_beta_ = Eigen::VectorXd::Ones(lay_.p_occ);
  mu_alpha_ = Eigen::VectorXd::Zero(lay_.p_det[0]);
  tau2_alpha_ = Eigen::VectorXd::Ones(lay_.p_det[0]);
  for (int s = 0; s < S_; ++s) {
    const auto& src = data.sources[s];
    for (std::size_t e = 0; e < src.re_names.size(); ++e) {
      re_det_var_.push_back(1.0);
      re_det_val_.push_back(
          Eigen::MatrixXd::Zero(N_, src.re_n_levels[e]));
      re_flat_source_.push_back(s);
      re_flat_local_.push_back(static_cast<int>(e));
    }
  }
  for (std::size_t e = 0; e < data.occ_re_names.size(); ++e) {
    re_occ_var_.push_back(1.0);
    re_occ_val_.push_back(Eigen::MatrixXd::Zero(N_, data.occ_re_n_levels[e]));
  }
  w_.assign(N_, Eigen::VectorXd::Zero(spec_.spatial ? J_ : 0));
  theta_.assign(N_, KernelParams{});
  z_ = Eigen::MatrixXi::Zero(N_, J_);
  omega_ = Eigen::MatrixXd::Zero(N_, J_);
  omega_det_.resize(S_);
  y_.resize(S_);
  for (int s = 0; s < S_; ++s) {
    const auto& src = data.sources[s];
    omega_det_[s].assign(
        N_, Eigen::MatrixXd::Zero(src.site_map.size(), src.K_max));
    y_[s] = src.y;
  }
  if (spec_.spatial) {
    factors_.resize(N_);
    corr_llt_.resize(spec_.nngp ? 0 : N_);
    corr_inv_.resize(spec_.nngp ? 0 : N_);
  }

  cells_at_site_.resize(J_);
  for (int s = 0; s < S_; ++s) {
    const auto& map = data.sources[s].site_map;
    for (std::size_t jl = 0; jl < map.size(); ++jl)
      cells_at_site_[map[jl]].push_back({s, static_cast<int>(jl)});
  }

  step_phi_.assign(N_, 0.5);
  step_nu_.assign(N_, 0.5);
  acc_phi_.assign(N_, 0);
  try_phi_.assign(N_, 0);
  acc_nu_.assign(N_, 0);
  try_nu_.assign(N_, 0);
  batch_acc_phi_.assign(N_, 0);
  batch_acc_nu_.assign(N_, 0);
}

double GibbsSampler::re_det_contrib(int s, int i, int jl, int k) const {
  double v = 0.0;
  for (std::size_t e = 0; e < re_det_var_.size(); ++e) {
    if (re_flat_source_[e] != s) continue;
    const int lv = data_->sources[s].re_levels[re_flat_local_[e]](jl, k);
    if (lv >= 0) v += re_det_val_[e](i, lv);
  }
  return v;
}

double GibbsSampler::re_occ_contrib(int i, int j) const {
  double v = 0.0;
  for (std::size_t e = 0; e < re_occ_var_.size(); ++e)
    v += re_occ_val_[e](i, data_->occ_re_levels[e](j));
  return v;
}

double GibbsSampler::eta_occ(int i, int j) const {
  double v = data_->X.row(j).dot(beta_.row(i));
  if (spec_.spatial) v += w_[i](j);
  if (!re_occ_var_.empty()) v += re_occ_contrib(i, j);
  return v;
}

double GibbsSampler::eta_det(int s, int i, int jl, int k) const {
  const auto& src = data_->sources[s];
  double v = src.V.row(jl * src.K_max + k).dot(alpha_[s].row(i));
  if (!re_det_var_.empty()) v += re_det_contrib(s, i, jl, k);
  return v;
}

void GibbsSampler::refresh_dense(int i) {
  Eigen::MatrixXd R(J_, J_);
  correlation_many(spec_.kernel, theta_[i], dist_.data(), R.data(), J_ * J_);
  corr_llt_[i] = cholesky_with_jitter(R, 1.0);
  corr_inv_[i] =
      corr_llt_[i].solve(Eigen::MatrixXd::Identity(J_, J_));
}

void GibbsSampler::init_default(RngStream& rng) {
  beta_.setZero();
  for (auto& a : alpha_) a.setZero();
  const auto& pr = spec_.priors;
  mu_beta_.setZero();
  mu_alpha_.setZero();
  tau2_beta_.setConstant(ig_prior_mean(pr.tau2_shape, pr.tau2_scale));
  tau2_alpha_.setConstant(ig_prior_mean(pr.tau2_shape, pr.tau2_scale));
  for (std::size_t e = 0; e < re_det_var_.size(); ++e) {
    re_det_var_[e] = ig_prior_mean(pr.re_var_shape, pr.re_var_scale);
    re_det_val_[e].setZero();
  }
  for (std::size_t e = 0; e < re_occ_var_.size(); ++e) {
    re_occ_var_[e] = ig_prior_mean(pr.re_var_shape, pr.re_var_scale);
    re_occ_val_[e].setZero();
  }
  for (int i = 0; i < N_; ++i) {
    theta_[i].sigma2 = ig_prior_mean(pr.sigma2_shape, pr.sigma2_scale);
    theta_[i].phi = 0.5 * (phi_lo_ + phi_hi_);
    theta_[i].nu = 0.5 * (pr.nu_lower + pr.nu_upper);
    if (spec_.spatial) {
      w_[i].setZero();
      if (spec_.nngp)
        nngp_factors_update(factors_[i], graph_, spec_.kernel, theta_[i]);
      else
        refresh_dense(i);
    }
  }
  for (int i = 0; i < N_; ++i)
    for (int j = 0; j < J_; ++j) {
      bool det = false;
      for (const auto& [s, jl] : cells_at_site_[j])
        for (int k = 0; k < data_->sources[s].K_max && !det; ++k)
          det = y_[s][i](jl, k) == 1;
      z_(i, j) = det ? 1 : draw_bernoulli(0.5, rng);
    }
}

void GibbsSampler::init_from_prior(RngStream& rng) {
  const auto& pr = spec_.priors;
  const bool msom = spec_.model == ModelClass::Msom;
  if (msom) {
    for (int r = 0; r < lay_.p_occ; ++r) {
      mu_beta_(r) = pr.mu_mean + std::sqrt(pr.mu_var) * draw_normal(rng);
      tau2_beta_(r) = draw_inverse_gamma(pr.tau2_shape, pr.tau2_scale, rng);
    }
    for (int r = 0; r < lay_.p_det[0]; ++r) {
      mu_alpha_(r) = pr.mu_mean + std::sqrt(pr.mu_var) * draw_normal(rng);
      tau2_alpha_(r) = draw_inverse_gamma(pr.tau2_shape, pr.tau2_scale, rng);
    }
  }
  for (int i = 0; i < N_; ++i)
    for (int r = 0; r < lay_.p_occ; ++r)
      beta_(i, r) = msom ? mu_beta_(r) +
                               std::sqrt(tau2_beta_(r)) * draw_normal(rng)
                         : pr.beta_mean +
                               std::sqrt(pr.beta_var) * draw_normal(rng);
  for (int s = 0; s < S_; ++s)
    for (int i = 0; i < N_; ++i)
      for (int r = 0; r < lay_.p_det[s]; ++r)
        alpha_[s](i, r) =
            msom ? mu_alpha_(r) + std::sqrt(tau2_alpha_(r)) * draw_normal(rng)
                 : pr.alpha_mean + std::sqrt(pr.alpha_var) * draw_normal(rng);
  for (std::size_t e = 0; e < re_det_var_.size(); ++e) {
    re_det_var_[e] = draw_inverse_gamma(pr.re_var_shape, pr.re_var_scale, rng);
    const double sd = std::sqrt(re_det_var_[e]);
    for (int i = 0; i < N_; ++i)
      for (int l = 0; l < re_det_val_[e].cols(); ++l)
        re_det_val_[e](i, l) = sd * draw_normal(rng);
  }
  for (std::size_t e = 0; e < re_occ_var_.size(); ++e) {
    re_occ_var_[e] = draw_inverse_gamma(pr.re_var_shape, pr.re_var_scale, rng);
    const double sd = std::sqrt(re_occ_var_[e]);
    for (int i = 0; i < N_; ++i)
      for (int l = 0; l < re_occ_val_[e].cols(); ++l)
        re_occ_val_[e](i, l) = sd * draw_normal(rng);
  }
  if (spec_.spatial)
    for (int i = 0; i < N_; ++i) {
      theta_[i].sigma2 = draw_inverse_gamma(pr.sigma2_shape, pr.sigma2_scale, rng);
      theta_[i].phi = draw_uniform(phi_lo_, phi_hi_, rng);
      theta_[i].nu = draw_uniform(pr.nu_lower, pr.nu_upper, rng);
      if (spec_.nngp) {
        nngp_factors_update(factors_[i], graph_, spec_.kernel, theta_[i]);
        // Ancestral draw in graph order: each site given its neighbors.
        for (int r = 0; r < J_; ++r) {
          const int j = graph_.order[r];
          double mu = 0.0;
          const auto& nbr = graph_.neighbors[j];
          for (std::size_t a = 0; a < nbr.size(); ++a)
            mu += factors_[i].B[j](a) * w_[i](nbr[a]);
          w_[i](j) = mu + std::sqrt(factors_[i].F(j)) * draw_normal(rng);
        }
      } else {
        refresh_dense(i);
        Eigen::VectorXd zvec(J_);
        for (int j = 0; j < J_; ++j) zvec(j) = draw_normal(rng);
        w_[i] = corr_llt_[i].matrixL() * zvec;
        w_[i] *= std::sqrt(theta_[i].sigma2);
      }
    }
  for (int i = 0; i < N_; ++i)
    for (int j = 0; j < J_; ++j)
      z_(i, j) = draw_bernoulli(logistic(eta_occ(i, j)), rng);
  resimulate_y(rng);
}

void GibbsSampler::resimulate_y(RngStream& rng) {
  for (int s = 0; s < S_; ++s) {
    const auto& src = data_->sources[s];
    for (int i = 0; i < N_; ++i)
      for (std::size_t jl = 0; jl < src.site_map.size(); ++jl) {
        const int zj = z_(i, src.site_map[jl]);
        for (int k = 0; k < src.K_max; ++k) {
          if (src.y[i](static_cast<int>(jl), k) < 0) continue;  // unsurveyed
          y_[s][i](static_cast<int>(jl), k) =
              zj == 1 ? draw_bernoulli(
                            logistic(eta_det(s, i, static_cast<int>(jl), k)),
                            rng)
                      : 0;
        }
      }
  }
}

void GibbsSampler::update_pg_occ(RngStream& rng) {
  BlockTimer t(block_s_, "pg_occ");
  for (int i = 0; i < N_; ++i)
    for (int j = 0; j < J_; ++j) omega_(i, j) = pg_draw1(eta_occ(i, j), rng);
}

void GibbsSampler::update_beta(RngStream& rng) {
  BlockTimer t(block_s_, "beta");
  const bool msom = spec_.model == ModelClass::Msom;
  Eigen::VectorXd kappa(J_), om(J_), off(J_);
  Eigen::VectorXd pm(lay_.p_occ), pv(lay_.p_occ);
  for (int i = 0; i < N_; ++i) {
    for (int j = 0; j < J_; ++j) {
      kappa(j) = z_(i, j) - 0.5;
      om(j) = omega_(i, j);
      double o = spec_.spatial ? w_[i](j) : 0.0;
      if (!re_occ_var_.empty()) o += re_occ_contrib(i, j);
      off(j) = o;
    }
    if (msom) {
      pm = mu_beta_;
      pv = tau2_beta_;
    } else {
      pm.setConstant(spec_.priors.beta_mean);
      pv.setConstant(spec_.priors.beta_var);
    }
    beta_.row(i) =
        update_coefficients(data_->X, kappa, om, off, pm, pv, rng).transpose();
  }
}

void GibbsSampler::update_community_block(RngStream& rng) {
  BlockTimer t(block_s_, "community");
  const auto& pr = spec_.priors;
  for (int r = 0; r < lay_.p_occ; ++r) {
    const CommunityDraw d =
        update_community(beta_.col(r), tau2_beta_(r), pr.mu_mean, pr.mu_var,
                         pr.tau2_shape, pr.tau2_scale, rng);
    mu_beta_(r) = d.mu;
    tau2_beta_(r) = d.tau2;
  }
  for (int r = 0; r < lay_.p_det[0]; ++r) {
    const CommunityDraw d =
        update_community(alpha_[0].col(r), tau2_alpha_(r), pr.mu_mean,
                         pr.mu_var, pr.tau2_shape, pr.tau2_scale, rng);
    mu_alpha_(r) = d.mu;
    tau2_alpha_(r) = d.tau2;
  }
}

void GibbsSampler::update_det_source(int s, RngStream& rng) {
  BlockTimer t(block_s_, "detection");
  const auto& src = data_->sources[s];
  const int Js = static_cast<int>(src.site_map.size());
  const int K = src.K_max;
  const int p = lay_.p_det[s];
  const bool msom = spec_.model == ModelClass::Msom;
  std::vector<int> rows;
  for (int i = 0; i < N_; ++i) {
    // PG weights, conditional-likelihood construction: only live where the
    // site is occupied; other cells are left untouched.
    for (int jl = 0; jl < Js; ++jl) {
      if (z_(i, src.site_map[jl]) != 1) continue;
      for (int k = 0; k < K; ++k) {
        if (y_[s][i](jl, k) < 0) continue;
        omega_det_[s][i](jl, k) = pg_draw1(eta_det(s, i, jl, k), rng);
      }
    }
    rows.clear();
    for (int jl = 0; jl < Js; ++jl) {
      if (z_(i, src.site_map[jl]) != 1) continue;
      for (int k = 0; k < K; ++k)
        if (y_[s][i](jl, k) >= 0) rows.push_back(jl * K + k);
    }
    const int n = static_cast<int>(rows.size());
    Eigen::MatrixXd Xs(n, p);
    Eigen::VectorXd kappa(n), om(n), off(n);
    for (int r = 0; r < n; ++r) {
      const int jl = rows[r] / K;
      const int k = rows[r] % K;
      Xs.row(r) = src.V.row(rows[r]);
      kappa(r) = y_[s][i](jl, k) - 0.5;
      om(r) = omega_det_[s][i](jl, k);
      off(r) = re_det_var_.empty() ? 0.0 : re_det_contrib(s, i, jl, k);
    }
    Eigen::VectorXd pm(p), pv(p);
    if (msom) {
      pm = mu_alpha_;
      pv = tau2_alpha_;
    } else {
      pm.setConstant(spec_.priors.alpha_mean);
      pv.setConstant(spec_.priors.alpha_var);
    }
    alpha_[s].row(i) =
        update_coefficients(Xs, kappa, om, off, pm, pv, rng).transpose();
  }
}

void GibbsSampler::update_random_effects_block(RngStream& rng) {
  if (re_det_var_.empty() && re_occ_var_.empty()) return;
  BlockTimer t(block_s_, "random_effects");
  const auto& pr = spec_.priors;
  std::vector<int> lv_buf;
  std::vector<double> ka_buf, om_buf, of_buf;
  for (std::size_t e = 0; e < re_det_var_.size(); ++e) {
    const int s = re_flat_source_[e];
    const int le = re_flat_local_[e];
    const auto& src = data_->sources[s];
    const int Js = static_cast<int>(src.site_map.size());
    const int L = static_cast<int>(re_det_val_[e].cols());
    for (int i = 0; i < N_; ++i) {
      lv_buf.clear();
      ka_buf.clear();
      om_buf.clear();
      of_buf.clear();
      for (int jl = 0; jl < Js; ++jl) {
        if (z_(i, src.site_map[jl]) != 1) continue;
        for (int k = 0; k < src.K_max; ++k) {
          if (y_[s][i](jl, k) < 0) continue;
          const int lv = src.re_levels[le](jl, k);
          if (lv < 0) continue;
          lv_buf.push_back(lv);
          ka_buf.push_back(y_[s][i](jl, k) - 0.5);
          om_buf.push_back(omega_det_[s][i](jl, k));
          of_buf.push_back(eta_det(s, i, jl, k) - re_det_val_[e](i, lv));
        }
      }
      const int n = static_cast<int>(lv_buf.size());
      re_det_val_[e].row(i) =
          update_random_effect_values(
              Eigen::Map<const Eigen::VectorXi>(lv_buf.data(), n),
              Eigen::Map<const Eigen::VectorXd>(ka_buf.data(), n),
              Eigen::Map<const Eigen::VectorXd>(om_buf.data(), n),
              Eigen::Map<const Eigen::VectorXd>(of_buf.data(), n), L,
              re_det_var_[e], rng)
              .transpose();
    }
    re_det_var_[e] = draw_inverse_gamma(
        pr.re_var_shape + 0.5 * static_cast<double>(N_ * L),
        pr.re_var_scale + 0.5 * re_det_val_[e].squaredNorm(), rng);
  }
  for (std::size_t e = 0; e < re_occ_var_.size(); ++e) {
    const int L = static_cast<int>(re_occ_val_[e].cols());
    Eigen::VectorXd kappa(J_), om(J_), off(J_);
    for (int i = 0; i < N_; ++i) {
      for (int j = 0; j < J_; ++j) {
        const int lv = data_->occ_re_levels[e](j);
        kappa(j) = z_(i, j) - 0.5;
        om(j) = omega_(i, j);
        off(j) = eta_occ(i, j) - re_occ_val_[e](i, lv);
      }
      re_occ_val_[e].row(i) =
          update_random_effect_values(data_->occ_re_levels[e], kappa, om, off,
                                      L, re_occ_var_[e], rng)
              .transpose();
    }
    re_occ_var_[e] = draw_inverse_gamma(
        pr.re_var_shape + 0.5 * static_cast<double>(N_ * L),
        pr.re_var_scale + 0.5 * re_occ_val_[e].squaredNorm(), rng);
  }
}

void GibbsSampler::update_z_block(RngStream& rng) {
  BlockTimer t(block_s_, "z");
  for (int i = 0; i < N_; ++i)
    for (int j = 0; j < J_; ++j) {
      bool det = false;
      for (const auto& [s, jl] : cells_at_site_[j]) {
        for (int k = 0; k < data_->sources[s].K_max && !det; ++k)
          det = y_[s][i](jl, k) == 1;
        if (det) break;
      }
      if (det) {
        z_(i, j) = 1;
        continue;
      }
      // logit P(z=1 | no detection) = eta_occ + sum log(1 - p) over the
      // observed replicates pooled across sources.
      double l = eta_occ(i, j);
      for (const auto& [s, jl] : cells_at_site_[j])
        for (int k = 0; k < data_->sources[s].K_max; ++k)
          if (y_[s][i](jl, k) >= 0) l -= log1pexp(eta_det(s, i, jl, k));
      z_(i, j) = draw_bernoulli(logistic(l), rng);
    }
}

void GibbsSampler::update_w_block(RngStream& rng) {
  BlockTimer t(block_s_, "w");
  Eigen::VectorXd prec(J_), rhs(J_);
  for (int i = 0; i < N_; ++i) {
    for (int j = 0; j < J_; ++j) {
      const double om = omega_(i, j);
      prec(j) = om;
      rhs(j) = (z_(i, j) - 0.5) - om * (eta_occ(i, j) - w_[i](j));
    }
    if (spec_.nngp) {
      sample_w_sequential(w_[i], graph_, factors_[i], prec, rhs, rng);
    } else {
      Eigen::MatrixXd P = corr_inv_[i] / theta_[i].sigma2;
      P.diagonal() += prec;
      w_[i] = draw_mvn_canonical(rhs, P, rng);
    }
  }
}

double GibbsSampler::theta_log_target(int i, double phi, double nu) const {
  const auto& pr = spec_.priors;
  if (!(phi > phi_lo_) || !(phi < phi_hi_))
    return -std::numeric_limits<double>::infinity();
  const bool matern = spec_.kernel == Kernel::Matern;
  if (matern && (!(nu > pr.nu_lower) || !(nu < pr.nu_upper)))
    return -std::numeric_limits<double>::infinity();
  KernelParams cand{theta_[i].sigma2, phi, nu};
  double ll;
  if (spec_.nngp) {
    const NngpFactors f = nngp_factors(graph_, spec_.kernel, cand);
    ll = nngp_log_density(w_[i], graph_, f);
  } else {
    Eigen::MatrixXd R(J_, J_);
    correlation_many(spec_.kernel, cand, dist_.data(), R.data(), J_ * J_);
    const auto llt = cholesky_with_jitter(R, 1.0);
    const double logdet =
        2.0 * llt.matrixLLT().diagonal().array().log().sum();
    const double quad = w_[i].dot(llt.solve(w_[i]));
    ll = -0.5 * (J_ * (kLog2Pi + std::log(cand.sigma2)) + logdet +
                 quad / cand.sigma2);
  }
  double jac = std::log(phi - phi_lo_) + std::log(phi_hi_ - phi);
  if (matern) jac += std::log(nu - pr.nu_lower) + std::log(pr.nu_upper - nu);
  return ll + jac;
}

void GibbsSampler::update_theta_block(RngStream& rng, bool adapt) {
  BlockTimer t(block_s_, "theta");
  const auto& pr = spec_.priors;
  const bool matern = spec_.kernel == Kernel::Matern;
  for (int i = 0; i < N_; ++i) {
    // Conjugate variance draw from the sigma2-free quadratic form.
    double quad_unit;
    if (spec_.nngp) {
      quad_unit = nngp_quadratic(w_[i], graph_, factors_[i]);
    } else {
      quad_unit = w_[i].dot(corr_llt_[i].solve(w_[i]));
    }
    const double s2 =
        draw_inverse_gamma(pr.sigma2_shape + 0.5 * J_,
                           pr.sigma2_scale + 0.5 * quad_unit, rng);
    theta_[i].sigma2 = s2;
    if (spec_.nngp) factors_[i].sigma2 = s2;

    // Decay (and smoothness) by Metropolis on the logit of the rescaled
    // support; the Jacobian terms make the walk symmetric on that scale.
    auto mh_step = [&](double lo, double hi, double cur, double step,
                       double nu_cur, bool stepping_nu, bool& accepted) {
      Eigen::LLT<Eigen::MatrixXd> llt_prop;
      const double u = logit((cur - lo) / (hi - lo));
      const double uprop = u + step * draw_normal(rng);
      const double prop = lo + (hi - lo) * logistic(uprop);
      const double phi_c = stepping_nu ? theta_[i].phi : cur;
      const double phi_p = stepping_nu ? theta_[i].phi : prop;
      const double nu_c = stepping_nu ? cur : nu_cur;
      const double nu_p = stepping_nu ? prop : nu_cur;
      double ll_cur, ll_prop;
      if (spec_.nngp) {
        ll_cur = nngp_log_density(w_[i], graph_, factors_[i]);
        nngp_factors_update(factors_prop_, graph_, spec_.kernel,
                            {s2, phi_p, nu_p});
        ll_prop = nngp_log_density(w_[i], graph_, factors_prop_);
      } else {
        const double logdet_c =
            2.0 * corr_llt_[i].matrixLLT().diagonal().array().log().sum();
        const double quad_c = w_[i].dot(corr_llt_[i].solve(w_[i]));
        ll_cur = -0.5 * (logdet_c + quad_c / s2);
        Eigen::MatrixXd R(J_, J_);
        correlation_many(spec_.kernel, {s2, phi_p, nu_p}, dist_.data(),
                         R.data(), J_ * J_);
        llt_prop = cholesky_with_jitter(R, 1.0);
        const double logdet_p =
            2.0 * llt_prop.matrixLLT().diagonal().array().log().sum();
        const double quad_p = w_[i].dot(llt_prop.solve(w_[i]));
        ll_prop = -0.5 * (logdet_p + quad_p / s2);
      }
      const double la = ll_prop - ll_cur + std::log(prop - lo) +
                        std::log(hi - prop) - std::log(cur - lo) -
                        std::log(hi - cur);
      accepted = std::log(rng.uniform01_open0()) < la;
      if (accepted) {
        if (spec_.nngp)
          std::swap(factors_[i], factors_prop_);
        else {
          corr_llt_[i] = llt_prop;
          corr_inv_[i] =
              corr_llt_[i].solve(Eigen::MatrixXd::Identity(J_, J_));
        }
        return prop;
      }
      return cur;
    };

    bool acc = false;
    theta_[i].phi = mh_step(phi_lo_, phi_hi_, theta_[i].phi, step_phi_[i],
                            theta_[i].nu, false, acc);
    ++try_phi_[i];
    if (acc) {
      ++acc_phi_[i];
      ++batch_acc_phi_[i];
    }
    if (matern) {
      theta_[i].nu = mh_step(pr.nu_lower, pr.nu_upper, theta_[i].nu,
                             step_nu_[i], 0.0, true, acc);
      ++try_nu_[i];
      if (acc) {
        ++acc_nu_[i];
        ++batch_acc_nu_[i];
      }
    }
  }
  if (adapt && ++batch_iter_ == 25) {
    batch_iter_ = 0;
    ++batch_count_;
    const double delta =
        std::min(0.01, 1.0 / std::sqrt(static_cast<double>(batch_count_)));
    for (int i = 0; i < N_; ++i) {
      step_phi_[i] *=
          std::exp(batch_acc_phi_[i] / 25.0 > 0.43 ? delta : -delta);
      if (matern)
        step_nu_[i] *=
            std::exp(batch_acc_nu_[i] / 25.0 > 0.43 ? delta : -delta);
      batch_acc_phi_[i] = 0;
      batch_acc_nu_[i] = 0;
    }
  }
}

void GibbsSampler::check_detection_invariant() const {
  for (int i = 0; i < N_; ++i)
    for (int j = 0; j < J_; ++j) {
      if (z_(i, j) == 1) continue;
      for (const auto& [s, jl] : cells_at_site_[j])
        for (int k = 0; k < data_->sources[s].K_max; ++k)
          if (y_[s][i](jl, k) == 1)
            throw NumericalError(
                "occupancy state contradicts an observed detection at site " +
                std::to_string(data_->site_ids[j]));
    }
}

void GibbsSampler::sweep(RngStream& rng, bool adapt) {
  update_pg_occ(rng);
  update_beta(rng);
  if (spec_.model == ModelClass::Msom) update_community_block(rng);
  for (int s = 0; s < S_; ++s) update_det_source(s, rng);
  update_random_effects_block(rng);
  update_z_block(rng);
  if (spec_.spatial) {
    update_w_block(rng);
    update_theta_block(rng, adapt);
  }
  check_detection_invariant();
}

void GibbsSampler::store_row(Eigen::Ref<Eigen::VectorXd> row) const {
  for (int i = 0; i < N_; ++i)
    for (int r = 0; r < lay_.p_occ; ++r) row(lay_.beta(i, r)) = beta_(i, r);
  if (lay_.msom) {
    for (int r = 0; r < lay_.p_occ; ++r) {
      row(lay_.mu_beta(r)) = mu_beta_(r);
      row(lay_.tau2_beta(r)) = tau2_beta_(r);
    }
    for (int r = 0; r < lay_.p_det[0]; ++r) {
      row(lay_.mu_alpha(r)) = mu_alpha_(r);
      row(lay_.tau2_alpha(r)) = tau2_alpha_(r);
    }
  }
  for (int s = 0; s < S_; ++s)
    for (int i = 0; i < N_; ++i)
      for (int r = 0; r < lay_.p_det[s]; ++r)
        row(lay_.alpha(s, i, r)) = alpha_[s](i, r);
  for (std::size_t e = 0; e < re_det_var_.size(); ++e) {
    row(lay_.re_det_var(static_cast<int>(e))) = re_det_var_[e];
    for (int i = 0; i < N_; ++i)
      for (int l = 0; l < re_det_val_[e].cols(); ++l)
        row(lay_.re_det(static_cast<int>(e), i, l)) = re_det_val_[e](i, l);
  }
  for (std::size_t e = 0; e < re_occ_var_.size(); ++e) {
    row(lay_.re_occ_var(static_cast<int>(e))) = re_occ_var_[e];
    for (int i = 0; i < N_; ++i)
      for (int l = 0; l < re_occ_val_[e].cols(); ++l)
        row(lay_.re_occ(static_cast<int>(e), i, l)) = re_occ_val_[e](i, l);
  }
  if (lay_.spatial)
    for (int i = 0; i < N_; ++i) {
      row(lay_.sigma2(i)) = theta_[i].sigma2;
      row(lay_.phi(i)) = theta_[i].phi;
      if (lay_.matern) row(lay_.nu(i)) = theta_[i].nu;
    }
  if (lay_.store_latent)
    for (int i = 0; i < N_; ++i)
      for (int j = 0; j < J_; ++j) {
        if (lay_.spatial) row(lay_.w(i, j)) = w_[i](j);
        row(lay_.psi(i, j)) = logistic(eta_occ(i, j));
        row(lay_.z(i, j)) = z_(i, j);
      }
}

double GibbsSampler::accept_rate_phi() const {
  long acc = 0, tries = 0;
  for (int i = 0; i < N_; ++i) {
    acc += acc_phi_[i];
    tries += try_phi_[i];
  }
  return tries == 0 ? 0.0 : static_cast<double>(acc) / tries;
}

double GibbsSampler::accept_rate_nu() const {
  long acc = 0, tries = 0;
  for (int i = 0; i < N_; ++i) {
    acc += acc_nu_[i];
    tries += try_nu_[i];
  }
  return tries == 0 ? 0.0 : static_cast<double>(acc) / tries;
}

void GibbsSampler::reset_accept_counters() {
  std::fill(acc_phi_.begin(), acc_phi_.end(), 0);
  std::fill(try_phi_.begin(), try_phi_.end(), 0);
  std::fill(acc_nu_.begin(), acc_nu_.end(), 0);
  std::fill(try_nu_.begin(), try_nu_.end(), 0);
}

FitResult fit_model(const ModelSpec& spec, const Dataset& data,
                    const FitOptions& opt) {
  {
    const auto diags = validate(data, spec);
    if (!diags.empty()) throw DataError(diags.front());
  }
  const auto& mc = spec.mcmc;
  if (mc.n_iter <= 0 || mc.n_burn < 0 || mc.n_burn >= mc.n_iter)
    throw ConfigError("need 0 <= n_burn < n_iter");
  if (mc.n_thin < 1 || mc.n_chains < 1)
    throw ConfigError("n_thin and n_chains must be positive");
  const int n_stored = (mc.n_iter - mc.n_burn) / mc.n_thin;
  if (n_stored < 1)
    throw ConfigError("no draws would be stored; lengthen the chain");

  // A probe sampler resolves data-derived defaults (decay support,
  // neighbor cap) so the returned spec is the effective one.
  GibbsSampler probe(spec, data);
  FitResult out;
  out.spec = probe.effective_spec();
  out.layout = probe.layout();
  out.columns = column_names(out.layout, data);
  out.coords = data.coords;
  out.site_order = probe.site_order();
  out.occ_std = data.occ_std;
  out.species_names = data.species_names;
  out.draws.assign(mc.n_chains,
                   Eigen::MatrixXd::Zero(n_stored, out.layout.n_cols));
  out.accept_phi.assign(mc.n_chains, 0.0);
  out.accept_nu.assign(mc.n_chains, 0.0);

  std::mutex mu;
  nlohmann::json blocks = nlohmann::json::object();
  std::vector<std::exception_ptr> errors(mc.n_chains);

  auto run_chain = [&](int c) {
    int iter = 0;
    const char* phase = "initialization";
    try {
      GibbsSampler s(out.spec, data);
      RngStream rng(mc.seed, static_cast<std::uint64_t>(c), 0);
      s.init_default(rng);
      phase = "sweep";
      int stored = 0;
      Eigen::VectorXd rowbuf(out.layout.n_cols);
      for (int t = 1; t <= mc.n_iter; ++t) {
        iter = t;
        s.sweep(rng, t <= mc.n_burn);
        if (t == mc.n_burn) s.reset_accept_counters();
        if (t > mc.n_burn && (t - mc.n_burn) % mc.n_thin == 0) {
          s.store_row(rowbuf);
          out.draws[c].row(stored++) = rowbuf.transpose();
        }
        if (opt.progress && t % 1000 == 0) {
          std::lock_guard<std::mutex> lk(mu);
          std::fprintf(stderr,
                       "chain %d iter %d/%d accept-phi %.3f accept-nu %.3f\n",
                       c + 1, t, mc.n_iter, s.accept_rate_phi(),
                       s.accept_rate_nu());
        }
      }
      out.accept_phi[c] = s.accept_rate_phi();
      out.accept_nu[c] = s.accept_rate_nu();
      std::lock_guard<std::mutex> lk(mu);
      for (const auto& [k, v] : s.block_seconds()) {
        blocks[k] = blocks.value(k, 0.0) + v;
      }
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lk(mu);
      errors[c] = std::make_exception_ptr(NumericalError(
          "chain " + std::to_string(c + 1) + ", " + phase +
          (iter > 0 ? " at iteration " + std::to_string(iter) : "") + ": " +
          e.what()));
    }
  };

  const int workers = std::max(1, std::min(opt.threads, mc.n_chains));
  if (workers == 1) {
    for (int c = 0; c < mc.n_chains; ++c) run_chain(c);
  } else {
    std::vector<std::thread> pool;
    for (int wkr = 0; wkr < workers; ++wkr)
      pool.emplace_back([&, wkr] {
        for (int c = wkr; c < mc.n_chains; c += workers) run_chain(c);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& err : errors)
    if (err) std::rethrow_exception(err);
  out.block_seconds = blocks;
  return out;
}

}  // namespace occu
