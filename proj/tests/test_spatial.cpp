#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "doctest.h"
#include "occu/common.hpp"
#include "occu/kdtree.hpp"
#include "occu/spatial.hpp"
#include "test_util.hpp"

using namespace occu;

namespace {

std::vector<Point2> random_sites(int J, std::uint64_t seed) {
  RngStream r(seed, 0, 0);
  std::vector<Point2> pts(J);
  for (auto& p : pts) p = {r.uniform01(), r.uniform01()};
  return pts;
}

// Dense covariance implied by the NNGP factors: (I-B)^{-1} F (I-B)^{-T}
// assembled directly from the per-site regressions.
Eigen::MatrixXd nngp_implied_covariance(const NeighborGraph& g,
                                        const NngpFactors& f) {
  const int J = static_cast<int>(g.neighbors.size());
  Eigen::MatrixXd Bm = Eigen::MatrixXd::Zero(J, J);
  Eigen::MatrixXd Fm = Eigen::MatrixXd::Zero(J, J);
  for (int j = 0; j < J; ++j) {
    Fm(j, j) = f.F(j);
    for (std::size_t a = 0; a < g.neighbors[j].size(); ++a)
      Bm(j, g.neighbors[j][a]) = f.B[j](a);
  }
  const Eigen::MatrixXd ImB = Eigen::MatrixXd::Identity(J, J) - Bm;
  const Eigen::MatrixXd inv = ImB.inverse();
  return inv * Fm * inv.transpose();
}

double dense_mvn_logpdf(const Eigen::VectorXd& w, const Eigen::MatrixXd& C) {
  const int J = static_cast<int>(w.size());
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  double logdet = 0.0;
  for (int i = 0; i < J; ++i) logdet += 2.0 * std::log(llt.matrixLLT()(i, i));
  const double quad = w.dot(llt.solve(w));
  return -0.5 * (J * std::log(2.0 * 3.14159265358979323846) + logdet + quad);
}

}  // namespace

TEST_CASE("correlation is 1 at distance zero for every kernel") {
  for (Kernel k : {Kernel::Exponential, Kernel::Gaussian, Kernel::Spherical,
                   Kernel::Matern}) {
    CHECK(correlation(k, 3.0, 1.2, 0.0) == 1.0);
  }
}

TEST_CASE("exponential correlation matches direct evaluation") {
  // Oracle: exp(-phi*d) with phi = 5, d = 3/5.
  CHECK(correlation(Kernel::Exponential, 5.0, 0.5, 0.6) ==
        doctest::Approx(0.049787068367863944).epsilon(1e-12));
}

TEST_CASE("matern nu=1/2 coincides with the exponential kernel") {
  for (double phi : {1.0, 2.3}) {
    for (double d : {0.1, 1.0, 10.0}) {
      const double m = correlation(Kernel::Matern, phi, 0.5, d);
      const double e = std::exp(-phi * d);
      CHECK(std::fabs(m - e) < 1e-10);
    }
  }
}

TEST_CASE("correlation stays in [0,1] and never increases with distance") {
  for (Kernel k : {Kernel::Exponential, Kernel::Gaussian, Kernel::Spherical,
                   Kernel::Matern}) {
    for (double phi : {0.5, 2.0, 5.0}) {
      for (double nu : {0.3, 0.5, 1.7, 2.5}) {
        double prev = 1.0 + 1e-15;
        for (double d = 0.0; d <= 3.0; d += 0.01) {
          const double c = correlation(k, phi, nu, d);
          CHECK(c >= 0.0);
          CHECK(c <= 1.0);
          CHECK(c <= prev + 1e-12);
          prev = c;
        }
      }
    }
  }
}

TEST_CASE("correlation rejects negative distance") {
  CHECK_THROWS_AS(correlation(Kernel::Exponential, 1.0, 0.5, -0.1),
                  NumericalError);
}

TEST_CASE("kernel names round-trip") {
  for (Kernel k : {Kernel::Exponential, Kernel::Gaussian, Kernel::Spherical,
                   Kernel::Matern}) {
    CHECK(kernel_from_string(kernel_name(k)) == k);
  }
  CHECK_THROWS_AS(kernel_from_string("cubic"), ConfigError);
}

TEST_CASE("kd-tree matches brute force, with and without index limits") {
  const auto pts = random_sites(200, 555);
  KdTree tree(pts);
  RngStream r(556, 0, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const Point2 q{r.uniform01() * 1.2 - 0.1, r.uniform01() * 1.2 - 0.1};
    const int k = 1 + int(r.uniform01() * 12);
    const int limit = (trial % 3 == 0) ? -1 : 1 + int(r.uniform01() * 199);
    CHECK(tree.nearest(q, k, limit) == brute_force_nearest(pts, q, k, limit));
  }
  // Query at an existing point, excluding itself via the limit.
  CHECK(tree.nearest(pts[50], 3, 50) == brute_force_nearest(pts, pts[50], 3, 50));
}

TEST_CASE("neighbor graph rejects m = 0") {
  CHECK_THROWS_AS(build_neighbor_graph(random_sites(5, 1), 0), ConfigError);
}

TEST_CASE("neighbor graph rejects duplicate coordinates") {
  std::vector<Point2> pts{{0.1, 0.2}, {0.5, 0.5}, {0.1, 0.2}};
  CHECK_THROWS_AS(build_neighbor_graph(pts, 1), DataError);
}

TEST_CASE("three collinear sites with m = 1 chain along the ordering") {
  // Hand enumeration: ordering by x gives 0,1,2; each site's nearest
  // predecessor is the one immediately to its left.
  std::vector<Point2> pts{{0.0, 0.0}, {1.0, 0.0}, {2.0, 0.0}};
  const auto g = build_neighbor_graph(pts, 1);
  CHECK(g.order == std::vector<int>{0, 1, 2});
  CHECK(g.neighbors[0].empty());
  CHECK(g.neighbors[1] == std::vector<int>{0});
  CHECK(g.neighbors[2] == std::vector<int>{1});
  CHECK(g.children[0] == std::vector<int>{1});
  CHECK(g.children[1] == std::vector<int>{2});
  CHECK(g.children[2].empty());
}

TEST_CASE("m >= J-1 gives every site all its predecessors") {
  const auto pts = random_sites(17, 90);
  const auto g = build_neighbor_graph(pts, 16);
  for (int r = 0; r < 17; ++r) {
    const int j = g.order[r];
    CHECK(static_cast<int>(g.neighbors[j].size()) == r);
  }
}

TEST_CASE("children are exactly the transpose of neighbors") {
  for (const auto& [J, m] : std::vector<std::pair<int, int>>{
           {30, 1}, {30, 5}, {80, 10}, {80, 79}}) {
    const auto pts = random_sites(J, 1000 + J + m);
    const auto g = build_neighbor_graph(pts, m);
    int pairs = 0, cpairs = 0;
    for (int j = 0; j < J; ++j) {
      CHECK(static_cast<int>(g.neighbors[j].size()) ==
            std::min(m, g.rank[j]));
      pairs += static_cast<int>(g.neighbors[j].size());
      cpairs += static_cast<int>(g.children[j].size());
      for (std::size_t t = 0; t < g.children[j].size(); ++t) {
        const int c = g.children[j][t];
        CHECK(g.neighbors[c][g.child_pos[j][t]] == j);
      }
    }
    CHECK(pairs == cpairs);
  }
}

TEST_CASE("dense covariance basics") {
  KernelParams p{2.0, 5.0, 0.5};
  const Eigen::MatrixXd one =
      dense_covariance({{0.3, 0.4}}, Kernel::Exponential, p);
  CHECK(one.rows() == 1);
  CHECK(one(0, 0) == doctest::Approx(2.0));

  const Eigen::MatrixXd two =
      dense_covariance({{0.0, 0.0}, {0.6, 0.0}}, Kernel::Exponential, p);
  CHECK(two(0, 1) == doctest::Approx(2.0 * std::exp(-3.0)).epsilon(1e-12));
  CHECK(two(0, 1) == two(1, 0));
}

TEST_CASE("nngp with full neighbor sets reproduces the dense covariance") {
  const auto pts = random_sites(50, 42);
  for (Kernel k : {Kernel::Exponential, Kernel::Matern}) {
    KernelParams p{1.7, 4.0, 1.3};
    const auto g = build_neighbor_graph(pts, 49);
    const auto f = nngp_factors(g, k, p);
    const Eigen::MatrixXd implied = nngp_implied_covariance(g, f);
    const Eigen::MatrixXd dense = dense_covariance(pts, k, p);
    CHECK((implied - dense).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("first-ordered site has empty B and F = sigma2") {
  const auto pts = random_sites(10, 7);
  const auto g = build_neighbor_graph(pts, 3);
  const auto f = nngp_factors(g, Kernel::Exponential, {2.5, 3.0, 0.5});
  const int first = g.order[0];
  CHECK(f.B[first].size() == 0);
  CHECK(f.F(first) == doctest::Approx(2.5));
}

TEST_CASE("two-site factors follow the conditional-normal algebra") {
  // Oracle: for a bivariate normal, w2 | w1 has slope corr and variance
  // sigma2 (1 - corr^2).
  std::vector<Point2> pts{{0.0, 0.0}, {0.25, 0.0}};
  KernelParams p{2.0, 5.0, 0.5};
  const auto g = build_neighbor_graph(pts, 1);
  const auto f = nngp_factors(g, Kernel::Exponential, p);
  const double rho = std::exp(-5.0 * 0.25);
  CHECK(f.B[1](0) == doctest::Approx(rho).epsilon(1e-12));
  CHECK(f.F(1) == doctest::Approx(2.0 * (1.0 - rho * rho)).epsilon(1e-12));
}

TEST_CASE("full-neighbor nngp log-density equals the dense mvn log-density") {
  for (int J : {20, 50, 60}) {
    const auto pts = random_sites(J, 300 + J);
    KernelParams p{1.4, 6.0, 0.8};
    const auto g = build_neighbor_graph(pts, J - 1);
    RngStream r(301, 0, 0);
    Eigen::VectorXd w(J);
    for (int j = 0; j < J; ++j) w(j) = draw_normal(r);
    for (Kernel k : {Kernel::Exponential, Kernel::Gaussian, Kernel::Matern}) {
      const auto f = nngp_factors(g, k, p);
      const double lp_nngp = nngp_log_density(w, g, f);
      const double lp_dense = dense_mvn_logpdf(w, dense_covariance(pts, k, p));
      CHECK(std::fabs(lp_nngp - lp_dense) < 1e-8);
    }
  }
}

TEST_CASE("conditional variances stay positive across kernels and params") {
  const auto pts = random_sites(120, 8123);
  const auto g = build_neighbor_graph(pts, 10);
  for (Kernel k : {Kernel::Exponential, Kernel::Gaussian, Kernel::Spherical,
                   Kernel::Matern}) {
    for (double phi : {0.7, 3.0, 20.0}) {
      const auto f = nngp_factors(g, k, {1.9, phi, 2.2});
      for (double fc : f.f_corr) CHECK(fc > 0.0);
    }
  }
}

TEST_CASE("nngp quadratic matches the sigma2-scaled log-density quadratic") {
  const auto pts = random_sites(30, 99);
  const auto g = build_neighbor_graph(pts, 5);
  KernelParams p{3.1, 4.0, 0.5};
  const auto f = nngp_factors(g, Kernel::Exponential, p);
  RngStream r(100, 0, 0);
  Eigen::VectorXd w(30);
  for (int j = 0; j < 30; ++j) w(j) = draw_normal(r);
  // log density = -0.5*(J log 2pi + sum log F_j) - quad/(2 sigma2)
  double logF = 0.0;
  for (int j = 0; j < 30; ++j) logF += std::log(f.F(j));
  const double expected =
      -0.5 * (30 * std::log(2.0 * 3.14159265358979323846) + logF) -
      nngp_quadratic(w, g, f) / (2.0 * p.sigma2);
  CHECK(nngp_log_density(w, g, f) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("single site with no data is drawn from its prior") {
  std::vector<Point2> pts{{0.5, 0.5}};
  const auto g = build_neighbor_graph(pts, 1);
  const auto f = nngp_factors(g, Kernel::Exponential, {2.0, 3.0, 0.5});
  RngStream r(71, 0, 0);
  Eigen::VectorXd w(1);
  w << 0.0;
  const int n = 200000;
  std::vector<double> draws(n);
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
  for (int i = 0; i < n; ++i) {
    sample_w_sequential(w, g, f, zero, zero, r);
    draws[i] = w(0);
  }
  CHECK(std::fabs(testutil::mean(draws)) < 4.0 * std::sqrt(2.0 / n));
  CHECK(testutil::variance(draws) == doctest::Approx(2.0).epsilon(0.03));
}

TEST_CASE("gibbs passes over w converge to the dense conditional posterior") {
  // Toy Gaussian model: w ~ N(0, C), data terms with precision prec_j and
  // rhs r_j. Exact posterior is N((C^{-1}+P)^{-1} r, (C^{-1}+P)^{-1}).
  const int J = 20;
  const auto pts = random_sites(J, 2024);
  KernelParams p{1.5, 4.0, 0.5};
  const auto g = build_neighbor_graph(pts, J - 1);
  const auto f = nngp_factors(g, Kernel::Exponential, p);

  RngStream r(2025, 0, 0);
  Eigen::VectorXd prec(J), rhs(J);
  for (int j = 0; j < J; ++j) {
    prec(j) = 0.5 + r.uniform01();
    rhs(j) = draw_normal(r);
  }
  const Eigen::MatrixXd C = dense_covariance(pts, Kernel::Exponential, p);
  const Eigen::MatrixXd post_prec =
      C.inverse() + Eigen::MatrixXd(prec.asDiagonal());
  const Eigen::MatrixXd post_cov = post_prec.inverse();
  const Eigen::VectorXd post_mean = post_cov * rhs;

  Eigen::VectorXd w = Eigen::VectorXd::Zero(J);
  const int burn = 500, keep = 40000;
  for (int i = 0; i < burn; ++i) sample_w_sequential(w, g, f, prec, rhs, r);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(J);
  Eigen::MatrixXd acc2 = Eigen::MatrixXd::Zero(J, J);
  for (int i = 0; i < keep; ++i) {
    sample_w_sequential(w, g, f, prec, rhs, r);
    acc += w;
    acc2 += w * w.transpose();
  }
  const Eigen::VectorXd emp_mean = acc / keep;
  const Eigen::MatrixXd emp_cov =
      acc2 / keep - emp_mean * emp_mean.transpose();
  CHECK((emp_mean - post_mean).cwiseAbs().maxCoeff() < 0.03);
  CHECK((emp_cov - post_cov).cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("per-pass cost grows linearly when J doubles at fixed m") {
  const int m = 10;
  auto time_passes = [&](int J) {
    const auto pts = random_sites(J, 9000 + J);
    const auto g = build_neighbor_graph(pts, m);
    const auto f = nngp_factors(g, Kernel::Exponential, {1.0, 3.0, 0.5});
    Eigen::VectorXd w = Eigen::VectorXd::Zero(J);
    Eigen::VectorXd prec = Eigen::VectorXd::Constant(J, 0.8);
    Eigen::VectorXd rhs = Eigen::VectorXd::Constant(J, 0.1);
    RngStream r(9001, 0, 0);
    const int passes = 400;
    double best = 1e300;
    for (int rep = 0; rep < 3; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      for (int i = 0; i < passes; ++i)
        sample_w_sequential(w, g, f, prec, rhs, r);
      const auto t1 = std::chrono::steady_clock::now();
      best = std::min(best,
                      std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
  };
  // A quadratic term would push the doubling ratio toward 4; allow headroom
  // above 2 for cache effects at the larger size.
  const double t1 = time_passes(2000);
  const double t2 = time_passes(4000);
  const double ratio = t2 / t1;
  CHECK(ratio > 1.5);
  CHECK(ratio < 3.2);
}

TEST_CASE("jitter escalation rescues an exactly singular covariance") {
  // Duplicate locations give a rank-deficient matrix; the escalating ridge
  // must still produce a usable factor.
  std::vector<Point2> pts{{0.1, 0.1}, {0.1, 0.1}, {0.7, 0.3}};
  const Eigen::MatrixXd C =
      dense_covariance(pts, Kernel::Exponential, {2.0, 1.0, 0.5});
  const auto llt = cholesky_with_jitter(C, 2.0);
  CHECK(llt.info() == Eigen::Success);
}

TEST_CASE("jitter escalation gives up on an indefinite matrix") {
  Eigen::MatrixXd M(3, 3);
  M << 1.0, 0.9, 0.0, 0.9, 1.0, 0.9, 0.0, 0.9, 1.0;  // eigenvalue 1 - 0.9*sqrt(2) < 0
  CHECK_THROWS_AS(cholesky_with_jitter(M, 1.0), SpdError);
}

TEST_CASE("graph export lists sites with their ordered neighbors") {
  std::vector<Point2> pts{{0.0, 0.0}, {1.0, 0.0}, {2.0, 0.0}};
  const auto g = build_neighbor_graph(pts, 2);
  const std::string path = "graph_export_test.csv";
  export_graph_csv(g, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "site,order_rank,neighbors");
  std::getline(in, line);
  CHECK(line == "0,0,");
  std::getline(in, line);
  CHECK(line == "1,1,0");
  std::getline(in, line);
  CHECK(line == "2,2,1;0");
  in.close();
  std::remove(path.c_str());
}

TEST_CASE("distance extremes bracket the pairwise distances") {
  std::vector<Point2> pts{{0.0, 0.0}, {0.0, 0.5}, {3.0, 4.0}};
  const auto [lo, hi] = distance_extremes(pts);
  CHECK(lo == doctest::Approx(0.5));
  CHECK(hi == doctest::Approx(5.0));
}

TEST_CASE("vectorized correlation matches the scalar form elementwise") {
  std::vector<double> d;
  for (int i = 0; i < 40; ++i) d.push_back(i * 0.09);
  std::vector<double> out(d.size());
  for (Kernel k : {Kernel::Exponential, Kernel::Gaussian, Kernel::Spherical,
                   Kernel::Matern}) {
    KernelParams p{1.7, 2.3, 1.2};
    correlation_many(k, p, d.data(), out.data(), static_cast<int>(d.size()));
    for (std::size_t i = 0; i < d.size(); ++i)
      CHECK(out[i] == doctest::Approx(correlation(k, p, d[i])).epsilon(1e-14));
  }
}
