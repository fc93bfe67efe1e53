#include "occu/predict.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

#include "occu/common.hpp"
#include "occu/kdtree.hpp"
#include "occu/kernels.hpp"
#include "occu/rng.hpp"

namespace occu {
namespace {

void check_design(const FitResult& fit, const Eigen::MatrixXd& X_new) {
  if (X_new.cols() != fit.layout.p_occ)
    throw DataError("new covariates have " + std::to_string(X_new.cols()) +
                    " columns but the fit used " +
                    std::to_string(fit.layout.p_occ));
  if (!X_new.allFinite())
    throw DataError("new covariates contain non-finite values");
}

// Pooled draw access: chain-major ordering (all of chain 0, then chain 1...).
struct Pooled {
  const FitResult* fit;
  int per_chain;
  int total() const { return per_chain * fit->n_chains(); }
  double at(int d, int col) const {
    return fit->draws[d / per_chain](d % per_chain, col);
  }
};

double occ_re_term(const Pooled& pool, const Layout& lay, int d, int i,
                   const std::vector<Eigen::VectorXi>* levels, int q) {
  if (levels == nullptr) return 0.0;
  double out = 0.0;
  for (std::size_t e = 0; e < lay.re_occ_levels.size(); ++e) {
    const int l = (*levels)[e](q);
    if (l >= 0 && l < lay.re_occ_levels[e])
      out += pool.at(d, lay.re_occ(static_cast<int>(e), i, l));
  }
  return out;
}

}  // namespace

Prediction predict_nonspatial(
    const FitResult& fit, const Eigen::MatrixXd& X_new, std::uint64_t seed,
    const std::vector<Eigen::VectorXi>* occ_re_levels) {
  check_design(fit, X_new);
  if (occ_re_levels != nullptr &&
      occ_re_levels->size() != fit.layout.re_occ_levels.size())
    throw DataError("random-effect level columns do not match the fit");
  const Pooled pool{&fit, fit.n_stored()};
  const int D = pool.total();
  const int Q = static_cast<int>(X_new.rows());
  const int N = fit.layout.n_species;
  const Layout& lay = fit.layout;

  Prediction out;
  out.psi.assign(N, Eigen::MatrixXd(D, Q));
  out.z.assign(N, Eigen::MatrixXi(D, Q));
  Eigen::VectorXd beta(lay.p_occ);
  for (int q = 0; q < Q; ++q) {
    RngStream rng(seed, static_cast<std::uint64_t>(q), 1);
    for (int d = 0; d < D; ++d)
      for (int i = 0; i < N; ++i) {
        for (int r = 0; r < lay.p_occ; ++r) beta(r) = pool.at(d, lay.beta(i, r));
        const double eta = X_new.row(q).dot(beta) +
                           occ_re_term(pool, lay, d, i, occ_re_levels, q);
        const double psi = logistic(eta);
        out.psi[i](d, q) = psi;
        out.z[i](d, q) = draw_bernoulli(psi, rng);
      }
  }
  return out;
}

Prediction predict_spatial(const FitResult& fit, const Eigen::MatrixXd& X_new,
                           const std::vector<Point2>& coords_new, int m,
                           std::uint64_t seed, int threads) {
  check_design(fit, X_new);
  if (!fit.layout.spatial)
    throw ConfigError("spatial prediction requires a spatial fit");
  if (!fit.layout.store_latent)
    throw ConfigError("chains were stored without the latent field draws");
  if (static_cast<int>(coords_new.size()) != X_new.rows())
    throw DataError("coordinate rows do not match covariate rows");
  for (const auto& c : coords_new)
    if (!std::isfinite(c[0]) || !std::isfinite(c[1]))
      throw DataError("new coordinates contain non-finite values");
  const int J = static_cast<int>(fit.coords.size());
  if (m < 1) throw ConfigError("prediction needs at least one neighbor");
  m = std::min(m, J);

  const Pooled pool{&fit, fit.n_stored()};
  const int D = pool.total();
  const int Q = static_cast<int>(coords_new.size());
  const int N = fit.layout.n_species;
  const Layout& lay = fit.layout;
  const Kernel kern = fit.spec.kernel;

  Prediction out;
  out.psi.assign(N, Eigen::MatrixXd(D, Q));
  out.z.assign(N, Eigen::MatrixXi(D, Q));
  out.w.assign(N, Eigen::MatrixXd(D, Q));

  const KdTree tree(fit.coords);

  auto run_site = [&](int q) {
    RngStream rng(seed, static_cast<std::uint64_t>(q), 1);
    const std::vector<int> nbr = tree.nearest(coords_new[q], m);
    const int k = static_cast<int>(nbr.size());
    // A coincident training site makes the conditional degenerate: copy.
    const int twin =
        sq_dist(coords_new[q], fit.coords[nbr[0]]) == 0.0 ? nbr[0] : -1;
    Eigen::VectorXd dq(k);
    Eigen::MatrixXd dpair(k, k);
    for (int a = 0; a < k; ++a) {
      dq(a) = std::sqrt(sq_dist(coords_new[q], fit.coords[nbr[a]]));
      for (int b = 0; b < k; ++b)
        dpair(a, b) = std::sqrt(sq_dist(fit.coords[nbr[a]], fit.coords[nbr[b]]));
    }
    Eigen::MatrixXd R(k, k);
    Eigen::VectorXd r(k), wn(k), bvec(k), beta(lay.p_occ);
    for (int d = 0; d < D; ++d)
      for (int i = 0; i < N; ++i) {
        double wstar;
        if (twin >= 0) {
          wstar = pool.at(d, lay.w(i, twin));
        } else {
          const KernelParams th{pool.at(d, lay.sigma2(i)),
                                pool.at(d, lay.phi(i)),
                                lay.matern ? pool.at(d, lay.nu(i)) : 0.5};
          correlation_many(kern, th, dpair.data(), R.data(), k * k);
          correlation_many(kern, th, dq.data(), r.data(), k);
          for (int a = 0; a < k; ++a) wn(a) = pool.at(d, lay.w(i, nbr[a]));
          R.diagonal().array() += 1e-10;
          bvec = R.llt().solve(r);
          const double var =
              std::max(0.0, th.sigma2 * (1.0 - r.dot(bvec)));
          wstar = bvec.dot(wn) + std::sqrt(var) * draw_normal(rng);
        }
        for (int rr = 0; rr < lay.p_occ; ++rr)
          beta(rr) = pool.at(d, lay.beta(i, rr));
        const double psi = logistic(X_new.row(q).dot(beta) + wstar);
        out.w[i](d, q) = wstar;
        out.psi[i](d, q) = psi;
        out.z[i](d, q) = draw_bernoulli(psi, rng);
      }
  };

  threads = std::max(1, threads);
  if (threads == 1 || Q < 2) {
    for (int q = 0; q < Q; ++q) run_site(q);
  } else {
    std::vector<std::thread> pool_t;
    std::atomic<int> next{0};
    for (int t = 0; t < std::min(threads, Q); ++t)
      pool_t.emplace_back([&] {
        for (int q = next.fetch_add(1); q < Q; q = next.fetch_add(1))
          run_site(q);
      });
    for (auto& th : pool_t) th.join();
  }
  return out;
}

namespace {

void summary_cols(const Eigen::VectorXd& col, double* mean_out, double* sd_out,
                  double* q025, double* q500, double* q975) {
  std::vector<double> v(col.data(), col.data() + col.size());
  const double m = col.mean();
  *mean_out = m;
  *sd_out = std::sqrt((col.array() - m).square().sum() /
                      std::max<Eigen::Index>(1, col.size() - 1));
  std::sort(v.begin(), v.end());
  *q025 = quantile_sorted(v, 0.025);
  *q500 = quantile_sorted(v, 0.5);
  *q975 = quantile_sorted(v, 0.975);
}

}  // namespace

void prediction_csv(const std::string& path,
                    const std::vector<Point2>& coords_new,
                    const Prediction& pred,
                    const std::vector<std::string>& species) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "x,y,species,psi_mean,psi_sd,psi_q025,psi_q500,psi_q975,z_mean\n";
  out.precision(10);
  const int Q = pred.n_sites();
  for (int q = 0; q < Q; ++q)
    for (std::size_t i = 0; i < pred.psi.size(); ++i) {
      double m, sd, q025, q500, q975;
      summary_cols(pred.psi[i].col(q), &m, &sd, &q025, &q500, &q975);
      out << coords_new[q][0] << ',' << coords_new[q][1] << ',' << species[i]
          << ',' << m << ',' << sd << ',' << q025 << ',' << q500 << ','
          << q975 << ',' << pred.z[i].col(q).cast<double>().mean() << '\n';
    }
  if (!out) throw DataError("failed while writing " + path);
}

void richness_csv(const std::string& path,
                  const std::vector<Point2>& coords_new,
                  const Prediction& pred) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "x,y,richness_mean,richness_sd\n";
  out.precision(10);
  const int Q = pred.n_sites();
  const int D = pred.n_draws();
  Eigen::VectorXd rich(D);
  for (int q = 0; q < Q; ++q) {
    rich.setZero();
    for (const auto& zi : pred.z) rich += zi.col(q).cast<double>();
    const double m = rich.mean();
    const double sd = std::sqrt((rich.array() - m).square().sum() /
                                std::max(1, D - 1));
    out << coords_new[q][0] << ',' << coords_new[q][1] << ',' << m << ','
        << sd << '\n';
  }
  if (!out) throw DataError("failed while writing " + path);
}

}  // namespace occu
