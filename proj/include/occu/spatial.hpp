#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "occu/kdtree.hpp"
#include "occu/kernels.hpp"
#include "occu/rng.hpp"

namespace occu {

// Directed acyclic neighbor structure over sites. Sites are processed in a
// fixed ordering (ascending first coordinate, ties by second, then by site
// index); each site's neighbor set holds its m nearest predecessors in that
// ordering. All index fields refer to original site indices.
struct NeighborGraph {
  int m = 0;
  std::vector<int> order;               // update sequence: order[r] = site
  std::vector<int> rank;                // inverse of order
  std::vector<std::vector<int>> neighbors;
  std::vector<std::vector<int>> children;   // transpose of neighbors
  std::vector<std::vector<int>> child_pos;  // position of j in neighbors[child]
  // Cached geometry so factor rebuilds only evaluate the kernel:
  std::vector<std::vector<double>> nbr_dist;       // d(j, neighbors[j][k])
  std::vector<std::vector<double>> nbr_pair_dist;  // row-major k x k
};

NeighborGraph build_neighbor_graph(const std::vector<Point2>& coords, int m);

// Per-site conditional weights and variances. B[j] spans neighbors[j];
// conditional variance of w_j is sigma2 * f_corr[j].
struct NngpFactors {
  std::vector<Eigen::VectorXd> B;
  std::vector<double> f_corr;
  double sigma2 = 1.0;

  double F(int j) const { return sigma2 * f_corr[j]; }
};

NngpFactors nngp_factors(const NeighborGraph& graph, Kernel kernel,
                         const KernelParams& params);

// Recompute factors in place, reusing the existing per-site storage. This is
// the hot path of the decay Metropolis step.
void nngp_factors_update(NngpFactors& f, const NeighborGraph& graph,
                         Kernel kernel, const KernelParams& params);

// Joint log-density of w under the factored model prod_j N(w_j | B_j w_N, F_j).
double nngp_log_density(const Eigen::VectorXd& w, const NeighborGraph& graph,
                        const NngpFactors& factors);

// sum_j (w_j - B_j w_N)^2 / f_corr[j]; the sigma2-free quadratic form used by
// the conjugate variance update.
double nngp_quadratic(const Eigen::VectorXd& w, const NeighborGraph& graph,
                      const NngpFactors& factors);

// One full Gibbs pass over w. data_prec[j] and data_rhs[j] carry the
// site's likelihood contribution (PG weight and weighted residual); zero
// entries mean no data term at that site.
void sample_w_sequential(Eigen::VectorXd& w, const NeighborGraph& graph,
                         const NngpFactors& factors,
                         const Eigen::VectorXd& data_prec,
                         const Eigen::VectorXd& data_rhs, RngStream& rng);

Eigen::MatrixXd pairwise_distances(const std::vector<Point2>& coords);

Eigen::MatrixXd dense_covariance(const std::vector<Point2>& coords,
                                 Kernel kernel, const KernelParams& params);

// Cholesky of a dense covariance with escalating diagonal jitter: starts at
// 1e-8*sigma2 and multiplies by 10 up to 1e-4*sigma2 before giving up.
Eigen::LLT<Eigen::MatrixXd> cholesky_with_jitter(Eigen::MatrixXd cov,
                                                 double sigma2);

void export_graph_csv(const NeighborGraph& graph, const std::string& path);

// Smallest and largest nonzero inter-site distances, used for the default
// decay prior support.
std::pair<double, double> distance_extremes(const std::vector<Point2>& coords);

}  // namespace occu
