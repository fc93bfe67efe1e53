#include "occu/assessment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "occu/common.hpp"
#include "occu/dataset_io.hpp"
#include "occu/predict.hpp"
#include "occu/rng.hpp"

namespace occu {
namespace {

// Chain-major view over the pooled draws of a fit.
struct Pooled {
  const FitResult* fit;
  int per_chain;
  int total() const { return per_chain * fit->n_chains(); }
  double at(int d, int col) const {
    return fit->draws[d / per_chain](d % per_chain, col);
  }
};

// (source, local site) pairs observing each shared site.
std::vector<std::vector<std::pair<int, int>>> cells_by_site(
    const Dataset& data) {
  std::vector<std::vector<std::pair<int, int>>> cells(data.n_sites());
  for (std::size_t s = 0; s < data.sources.size(); ++s) {
    const auto& map = data.sources[s].site_map;
    for (std::size_t jl = 0; jl < map.size(); ++jl)
      cells[map[jl]].push_back({static_cast<int>(s), static_cast<int>(jl)});
  }
  return cells;
}

// Detection linear predictor for one cell under one stored draw.
double eta_det_draw(const Pooled& pool, const Layout& lay, const Dataset& data,
                    int d, int s, int i, int jl, int k) {
  const auto& src = data.sources[s];
  const int row = jl * src.K_max + k;
  double eta = 0.0;
  for (int r = 0; r < lay.p_det[s]; ++r)
    eta += src.V(row, r) * pool.at(d, lay.alpha(s, i, r));
  for (std::size_t e = 0; e < lay.re_det_levels.size(); ++e) {
    if (lay.re_det_source[e] != s) continue;
    // Flattened effects for source s appear in declaration order.
    int local = 0;
    for (std::size_t e2 = 0; e2 < e; ++e2)
      if (lay.re_det_source[e2] == s) ++local;
    const int l = src.re_levels[local](jl, k);
    if (l >= 0) eta += pool.at(d, lay.re_det(static_cast<int>(e), i, l));
  }
  return eta;
}

// Occurrence probability for (species, shared site) under one stored draw,
// from the persisted psi column when present, otherwise rebuilt from beta
// and the occurrence random effects (nonspatial only).
double psi_draw(const Pooled& pool, const Layout& lay, const Dataset& data,
                int d, int i, int j) {
  if (lay.store_latent) return pool.at(d, lay.psi(i, j));
  if (lay.spatial)
    throw ConfigError(
        "chains were stored without latent fields; spatial assessment needs "
        "the w draws");
  double eta = 0.0;
  for (int r = 0; r < lay.p_occ; ++r)
    eta += data.X(j, r) * pool.at(d, lay.beta(i, r));
  for (std::size_t e = 0; e < lay.re_occ_levels.size(); ++e) {
    const int l = data.occ_re_levels[e](j);
    if (l >= 0) eta += pool.at(d, lay.re_occ(static_cast<int>(e), i, l));
  }
  return logistic(eta);
}

// log of the z-marginalized site likelihood: psi prod p^y (1-p)^(1-y) plus
// (1-psi) when no detection was recorded at the site.
double unit_log_lik(const Pooled& pool, const Layout& lay, const Dataset& data,
                    const std::vector<std::vector<std::pair<int, int>>>& cells,
                    int d, int i, int j, double psi) {
  double a = 0.0;
  bool any_det = false;
  for (const auto& [s, jl] : cells[j]) {
    const auto& src = data.sources[s];
    for (int k = 0; k < src.K_max; ++k) {
      const int y = src.y[i](jl, k);
      if (y < 0) continue;
      a += bernoulli_logpmf_logit(y, eta_det_draw(pool, lay, data, d, s, i, jl, k));
      any_det = any_det || y == 1;
    }
  }
  const double lp = std::log(psi) + a;
  if (any_det) return lp;
  const double lq = std::log1p(-psi);
  const double m = std::max(lp, lq);
  return m + std::log(std::exp(lp - m) + std::exp(lq - m));
}

double log_mean_exp(const std::vector<double>& x) {
  const double m = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s / static_cast<double>(x.size()));
}

double sample_variance(const std::vector<double>& x) {
  const auto n = x.size();
  if (n < 2) return 0.0;
  const double m = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(n - 1);
}

}  // namespace

PpcStat ppc_stat_from_string(const std::string& s) {
  if (s == "chisq") return PpcStat::ChiSquare;
  if (s == "ftukey") return PpcStat::FreemanTukey;
  throw ConfigError("unknown fit statistic '" + s + "' (chisq, ftukey)");
}

PpcBin ppc_bin_from_string(const std::string& s) {
  if (s == "site") return PpcBin::Site;
  if (s == "replicate") return PpcBin::Replicate;
  throw ConfigError("unknown binning '" + s + "' (site, replicate)");
}

WaicResult waic(const FitResult& fit, const Dataset& data) {
  const Pooled pool{&fit, fit.n_stored()};
  const int D = pool.total();
  if (D < 1) throw ConfigError("fit holds no stored draws");
  const Layout& lay = fit.layout;
  const auto cells = cells_by_site(data);
  WaicResult out;
  std::vector<double> logL(D);
  for (int i = 0; i < lay.n_species; ++i)
    for (int j = 0; j < data.n_sites(); ++j) {
      for (int d = 0; d < D; ++d)
        logL[d] = unit_log_lik(pool, lay, data, cells, d, i, j,
                               psi_draw(pool, lay, data, d, i, j));
      const double lme = log_mean_exp(logL);
      if (!std::isfinite(lme))
        throw NumericalError("likelihood underflow at site " +
                             std::to_string(data.site_ids[j]));
      out.elpd += lme;
      out.p_eff += sample_variance(logL);
    }
  out.waic = -2.0 * (out.elpd - out.p_eff);
  return out;
}

namespace {

double discrepancy(const Eigen::VectorXd& counts, const Eigen::VectorXd& expd,
                   PpcStat stat) {
  double t = 0.0;
  for (Eigen::Index b = 0; b < counts.size(); ++b) {
    if (stat == PpcStat::ChiSquare) {
      const double e = std::max(expd(b), 1e-6);
      const double d = counts(b) - expd(b);
      t += d * d / e;
    } else {
      const double d = std::sqrt(counts(b)) - std::sqrt(std::max(expd(b), 0.0));
      t += d * d;
    }
  }
  return t;
}

}  // namespace

std::vector<PpcResult> ppc(const FitResult& fit, const Dataset& data,
                           PpcStat stat, PpcBin bin, std::uint64_t seed,
                           bool rep_equals_obs) {
  const Pooled pool{&fit, fit.n_stored()};
  const int D = pool.total();
  const Layout& lay = fit.layout;
  std::vector<PpcResult> results;
  for (std::size_t s = 0; s < data.sources.size(); ++s) {
    const auto& src = data.sources[s];
    const int Js = static_cast<int>(src.site_map.size());
    const int K = src.K_max;
    const int nb = bin == PpcBin::Site ? Js : K;
    for (int i = 0; i < lay.n_species; ++i) {
      RngStream rng(seed, s * lay.n_species + i, 2);
      PpcResult r;
      r.source_id = src.id;
      r.species = fit.species_names[i];
      r.stat = stat;
      r.bin = bin;
      r.t_obs.resize(D);
      r.t_rep.resize(D);

      Eigen::VectorXd obs = Eigen::VectorXd::Zero(nb);
      for (int jl = 0; jl < Js; ++jl)
        for (int k = 0; k < K; ++k)
          if (src.y[i](jl, k) >= 0)
            obs(bin == PpcBin::Site ? jl : k) += src.y[i](jl, k);

      Eigen::VectorXd expd(nb), rep(nb);
      int exceed = 0;
      for (int d = 0; d < D; ++d) {
        expd.setZero();
        rep.setZero();
        for (int jl = 0; jl < Js; ++jl) {
          const double psi =
              psi_draw(pool, lay, data, d, i, src.site_map[jl]);
          const int zstar = rep_equals_obs ? 0 : draw_bernoulli(psi, rng);
          for (int k = 0; k < K; ++k) {
            if (src.y[i](jl, k) < 0) continue;
            const double p = logistic(
                eta_det_draw(pool, lay, data, d, static_cast<int>(s), i, jl, k));
            const int b = bin == PpcBin::Site ? jl : k;
            expd(b) += psi * p;
            if (!rep_equals_obs && zstar == 1)
              rep(b) += draw_bernoulli(p, rng);
          }
        }
        if (rep_equals_obs) rep = obs;
        r.t_obs[d] = discrepancy(obs, expd, stat);
        r.t_rep[d] = discrepancy(rep, expd, stat);
        if (r.t_rep[d] > r.t_obs[d]) ++exceed;
      }
      r.bayesian_p = static_cast<double>(exceed) / std::max(1, D);
      results.push_back(std::move(r));
    }
  }
  return results;
}

CvResult kfold_cv(const ModelSpec& spec, const Dataset& data, int k,
                  std::uint64_t seed, const FitOptions& opt) {
  const int J = data.n_sites();
  if (k < 2) throw ConfigError("cross-validation needs at least 2 folds");
  if (k > J) throw ConfigError("more folds than sites");

  // Balanced assignment: shuffled order dealt round-robin into folds.
  std::vector<int> perm(J);
  std::iota(perm.begin(), perm.end(), 0);
  RngStream rng(seed, 0, 3);
  for (int t = J - 1; t > 0; --t) {
    const int u = static_cast<int>(draw_uniform(0.0, t + 1.0, rng));
    std::swap(perm[t], perm[std::min(u, t)]);
  }
  CvResult out;
  out.fold_of_site.resize(J);
  for (int t = 0; t < J; ++t) out.fold_of_site[perm[t]] = t % k;
  out.fold_deviance.assign(k, 0.0);

  const auto cells = cells_by_site(data);
  for (int f = 0; f < k; ++f) {
    std::vector<char> keep(J, 0);
    std::vector<int> held;
    for (int j = 0; j < J; ++j) {
      if (out.fold_of_site[j] == f)
        held.push_back(j);
      else
        keep[j] = 1;
    }
    Dataset train;
    try {
      train = subset_sites(data, keep);
    } catch (const ConfigError& e) {
      throw ConfigError("fold " + std::to_string(f) + ": " + e.what());
    }
    const FitResult fit = fit_model(spec, train, opt);

    const int Q = static_cast<int>(held.size());
    Eigen::MatrixXd X_held(Q, data.X.cols());
    for (int q = 0; q < Q; ++q) X_held.row(q) = data.X.row(held[q]);

    // Held-out occurrence probabilities via the prediction machinery.
    Prediction pred;
    if (spec.spatial) {
      std::vector<Point2> coords_held(Q);
      for (int q = 0; q < Q; ++q) coords_held[q] = data.coords[held[q]];
      pred = predict_spatial(fit, X_held, coords_held, fit.spec.neighbors,
                             seed + 17 * f + 1, opt.threads);
    } else {
      std::vector<Eigen::VectorXi> lv;
      for (const auto& full : data.occ_re_levels) {
        Eigen::VectorXi col(Q);
        for (int q = 0; q < Q; ++q) col(q) = full(held[q]);
        lv.push_back(col);
      }
      pred = predict_nonspatial(fit, X_held, seed + 17 * f + 1,
                                lv.empty() ? nullptr : &lv);
    }

    const Pooled pool{&fit, fit.n_stored()};
    const int D = pool.total();
    std::vector<double> logL(D);
    double dev = 0.0;
    for (int i = 0; i < fit.layout.n_species; ++i)
      for (int q = 0; q < Q; ++q) {
        for (int d = 0; d < D; ++d)
          logL[d] = unit_log_lik(pool, fit.layout, data, cells, d, i, held[q],
                                 pred.psi[i](d, q));
        const double lme = log_mean_exp(logL);
        if (!std::isfinite(lme))
          throw NumericalError("held-out likelihood underflow at site " +
                               std::to_string(data.site_ids[held[q]]));
        dev += -2.0 * lme;
      }
    out.fold_deviance[f] = dev;
    out.total_deviance += dev;
  }
  return out;
}

namespace {

double split_rhat_column(const FitResult& fit, int col) {
  const int n2 = fit.n_stored() / 2;
  std::vector<double> means, vars;
  for (int c = 0; c < fit.n_chains(); ++c) {
    for (int half = 0; half < 2; ++half) {
      // Odd lengths drop the middle draw.
      const int start = half == 0 ? 0 : fit.n_stored() - n2;
      const auto seg = fit.draws[c].col(col).segment(start, n2);
      const double m = seg.mean();
      means.push_back(m);
      vars.push_back((seg.array() - m).square().sum() / (n2 - 1));
    }
  }
  const double W =
      std::accumulate(vars.begin(), vars.end(), 0.0) / vars.size();
  const double var_means = sample_variance(means);
  if (W == 0.0 && var_means == 0.0) return 1.0;  // constant everywhere
  const double var_plus = (n2 - 1.0) / n2 * W + var_means;
  return std::sqrt(var_plus / W);
}

}  // namespace

RhatResult rhat(const FitResult& fit) {
  if (fit.n_stored() < 4)
    throw ConfigError("split R-hat needs at least 4 stored draws per chain");
  RhatResult out;
  out.names = fit.columns;
  out.rhat.resize(fit.columns.size());
  for (std::size_t c = 0; c < fit.columns.size(); ++c)
    out.rhat[c] = split_rhat_column(fit, static_cast<int>(c));
  return out;
}

std::vector<SummaryRow> summarize(const FitResult& fit, bool include_latent) {
  const Layout& lay = fit.layout;
  const int latent_start =
      lay.store_latent ? (lay.spatial ? lay.off_w : lay.off_psi) : lay.n_cols;
  const bool have_rhat = fit.n_stored() >= 4;
  const int D = fit.n_stored() * fit.n_chains();
  std::vector<SummaryRow> rows;
  std::vector<double> pooled(D);
  for (int c = 0; c < lay.n_cols; ++c) {
    if (!include_latent && c >= latent_start) break;
    SummaryRow r;
    r.name = fit.columns[c];
    int t = 0;
    for (const auto& m : fit.draws)
      for (Eigen::Index d = 0; d < m.rows(); ++d) pooled[t++] = m(d, c);
    r.mean = std::accumulate(pooled.begin(), pooled.end(), 0.0) / D;
    r.sd = std::sqrt(sample_variance(pooled));
    std::sort(pooled.begin(), pooled.end());
    r.q025 = quantile_sorted(pooled, 0.025);
    r.q500 = quantile_sorted(pooled, 0.5);
    r.q975 = quantile_sorted(pooled, 0.975);
    r.rhat = have_rhat ? split_rhat_column(fit, c)
                       : std::numeric_limits<double>::quiet_NaN();
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace occu
