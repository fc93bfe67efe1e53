#include "occu/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "occu/common.hpp"

namespace occu {

NeighborGraph build_neighbor_graph(const std::vector<Point2>& coords, int m) {
  const int J = static_cast<int>(coords.size());
  if (m < 1) throw ConfigError("neighbor count m must be at least 1");
  if (J < 1) throw DataError("neighbor graph needs at least one site");

  NeighborGraph g;
  g.m = m;
  g.order.resize(J);
  std::iota(g.order.begin(), g.order.end(), 0);
  std::sort(g.order.begin(), g.order.end(), [&](int a, int b) {
    if (coords[a][0] != coords[b][0]) return coords[a][0] < coords[b][0];
    if (coords[a][1] != coords[b][1]) return coords[a][1] < coords[b][1];
    return a < b;
  });
  g.rank.resize(J);
  for (int r = 0; r < J; ++r) g.rank[g.order[r]] = r;

  for (int r = 1; r < J; ++r) {
    if (coords[g.order[r]] == coords[g.order[r - 1]]) {
      throw DataError("duplicate site coordinates are not allowed");
    }
  }

  std::vector<Point2> ordered(J);
  for (int r = 0; r < J; ++r) ordered[r] = coords[g.order[r]];
  KdTree tree(ordered);

  g.neighbors.resize(J);
  g.children.resize(J);
  g.child_pos.resize(J);
  g.nbr_dist.resize(J);
  g.nbr_pair_dist.resize(J);

  for (int r = 1; r < J; ++r) {
    const int j = g.order[r];
    const std::vector<int> nn = tree.nearest(ordered[r], std::min(m, r), r);
    auto& nbr = g.neighbors[j];
    nbr.reserve(nn.size());
    for (int rr : nn) nbr.push_back(g.order[rr]);

    const int k = static_cast<int>(nbr.size());
    g.nbr_dist[j].resize(k);
    g.nbr_pair_dist[j].resize(static_cast<std::size_t>(k) * k);
    for (int a = 0; a < k; ++a) {
      g.nbr_dist[j][a] = std::sqrt(sq_dist(coords[j], coords[nbr[a]]));
      for (int b = 0; b < k; ++b) {
        g.nbr_pair_dist[j][a * k + b] =
            std::sqrt(sq_dist(coords[nbr[a]], coords[nbr[b]]));
      }
    }
    for (int pos = 0; pos < k; ++pos) {
      g.children[nbr[pos]].push_back(j);
      g.child_pos[nbr[pos]].push_back(pos);
    }
  }
  return g;
}

namespace {

// Solve the k x k correlation system for one site, with the same escalating
// jitter policy as the dense path. Returns false only if even the largest
// jitter cannot produce a usable factorization. The workspace keeps the
// rebuild allocation-free once warm (this runs every decay proposal).
struct FactorWorkspace {
  Eigen::MatrixXd M;
  Eigen::VectorXd c;
  Eigen::LLT<Eigen::MatrixXd> llt;
};

bool site_factors(const std::vector<double>& pair_dist,
                  const std::vector<double>& dist, Kernel kernel,
                  const KernelParams& p, Eigen::VectorXd& B, double& f_corr,
                  double& min_pivot, FactorWorkspace& ws) {
  const int k = static_cast<int>(dist.size());
  ws.M.resize(k, k);
  ws.c.resize(k);
  // pair_dist is the full k x k distance block; correlating it elementwise
  // yields the symmetric unit-diagonal matrix directly.
  correlation_many(kernel, p, pair_dist.data(), ws.M.data(), k * k);
  correlation_many(kernel, p, dist.data(), ws.c.data(), k);
  double applied = 0.0;
  for (double jitter = 0.0; jitter <= 1e-4;
       jitter = (jitter == 0.0 ? 1e-8 : jitter * 10.0)) {
    ws.M.diagonal().array() += jitter - applied;
    applied = jitter;
    ws.llt.compute(ws.M);
    if (ws.llt.info() == Eigen::Success) {
      B.resize(k);
      B = ws.c;
      ws.llt.solveInPlace(B);
      const double f = 1.0 - B.dot(ws.c);
      if (f > 0.0) {
        f_corr = f;
        return true;
      }
    }
    min_pivot = ws.llt.matrixLLT().diagonal().minCoeff();
  }
  return false;
}

}  // namespace

void nngp_factors_update(NngpFactors& f, const NeighborGraph& graph,
                         Kernel kernel, const KernelParams& params) {
  const int J = static_cast<int>(graph.neighbors.size());
  f.sigma2 = params.sigma2;
  f.B.resize(J);
  f.f_corr.assign(J, 1.0);
  FactorWorkspace ws;
  for (int j = 0; j < J; ++j) {
    if (graph.neighbors[j].empty()) {
      f.B[j].resize(0);
      continue;  // first-ordered site: unconditional, F = sigma2
    }
    double min_pivot = 0.0;
    if (!site_factors(graph.nbr_pair_dist[j], graph.nbr_dist[j], kernel,
                      params, f.B[j], f.f_corr[j], min_pivot, ws)) {
      throw SpdError("neighbor correlation submatrix failed to factor",
                     min_pivot);
    }
  }
}

NngpFactors nngp_factors(const NeighborGraph& graph, Kernel kernel,
                         const KernelParams& params) {
  NngpFactors f;
  nngp_factors_update(f, graph, kernel, params);
  return f;
}

double nngp_log_density(const Eigen::VectorXd& w, const NeighborGraph& graph,
                        const NngpFactors& factors) {
  constexpr double log2pi = 1.8378770664093453;
  const int J = static_cast<int>(w.size());
  double lp = 0.0;
  for (int j = 0; j < J; ++j) {
    double mu = 0.0;
    const auto& nbr = graph.neighbors[j];
    for (std::size_t a = 0; a < nbr.size(); ++a) mu += factors.B[j](a) * w(nbr[a]);
    const double Fj = factors.F(j);
    const double r = w(j) - mu;
    lp += -0.5 * (log2pi + std::log(Fj)) - 0.5 * r * r / Fj;
  }
  return lp;
}

double nngp_quadratic(const Eigen::VectorXd& w, const NeighborGraph& graph,
                      const NngpFactors& factors) {
  const int J = static_cast<int>(w.size());
  double q = 0.0;
  for (int j = 0; j < J; ++j) {
    double mu = 0.0;
    const auto& nbr = graph.neighbors[j];
    for (std::size_t a = 0; a < nbr.size(); ++a) mu += factors.B[j](a) * w(nbr[a]);
    const double r = w(j) - mu;
    q += r * r / factors.f_corr[j];
  }
  return q;
}

void sample_w_sequential(Eigen::VectorXd& w, const NeighborGraph& graph,
                         const NngpFactors& factors,
                         const Eigen::VectorXd& data_prec,
                         const Eigen::VectorXd& data_rhs, RngStream& rng) {
  const int J = static_cast<int>(w.size());
  // dot(c) = B_c . w_N(c), kept current as predecessors change, so each
  // child term costs O(1) and the full pass costs O(J m) rather than O(J m^2).
  Eigen::VectorXd dot = Eigen::VectorXd::Zero(J);
  for (int c = 0; c < J; ++c) {
    const auto& nbr = graph.neighbors[c];
    double s = 0.0;
    for (std::size_t a = 0; a < nbr.size(); ++a)
      s += factors.B[c](a) * w(nbr[a]);
    dot(c) = s;
  }
  for (int r = 0; r < J; ++r) {
    const int j = graph.order[r];
    const double Fj = factors.F(j);

    // Own conditional prior N(B_j w_N, F_j).
    double v = 1.0 / Fj;
    double a_num = dot(j) / Fj;

    // Each child c conditions on w_j through B_c; peel j's term out of the
    // child's conditional mean.
    const auto& kids = graph.children[j];
    const auto& kpos = graph.child_pos[j];
    for (std::size_t t = 0; t < kids.size(); ++t) {
      const int c = kids[t];
      const double bj = factors.B[c](kpos[t]);
      const double Fc = factors.F(c);
      const double mu_minus = dot(c) - bj * w(j);
      v += bj * bj / Fc;
      a_num += bj * (w(c) - mu_minus) / Fc;
    }

    v += data_prec(j);
    a_num += data_rhs(j);

    const double sd = std::sqrt(1.0 / v);
    const double w_new = a_num / v + sd * draw_normal(rng);
    const double delta = w_new - w(j);
    for (std::size_t t = 0; t < kids.size(); ++t)
      dot(kids[t]) += factors.B[kids[t]](kpos[t]) * delta;
    w(j) = w_new;
  }
}

Eigen::MatrixXd pairwise_distances(const std::vector<Point2>& coords) {
  const int J = static_cast<int>(coords.size());
  Eigen::MatrixXd D(J, J);
  for (int a = 0; a < J; ++a) {
    D(a, a) = 0.0;
    for (int b = a + 1; b < J; ++b) {
      const double d = std::sqrt(sq_dist(coords[a], coords[b]));
      D(a, b) = d;
      D(b, a) = d;
    }
  }
  return D;
}

Eigen::MatrixXd dense_covariance(const std::vector<Point2>& coords,
                                 Kernel kernel, const KernelParams& params) {
  const int J = static_cast<int>(coords.size());
  Eigen::MatrixXd C(J, J);
  for (int a = 0; a < J; ++a) {
    C(a, a) = params.sigma2;
    for (int b = a + 1; b < J; ++b) {
      const double d = std::sqrt(sq_dist(coords[a], coords[b]));
      const double v = params.sigma2 * correlation(kernel, params, d);
      C(a, b) = v;
      C(b, a) = v;
    }
  }
  return C;
}

Eigen::LLT<Eigen::MatrixXd> cholesky_with_jitter(Eigen::MatrixXd cov,
                                                 double sigma2) {
  double min_pivot = 0.0;
  for (double jitter = 0.0; jitter <= 1e-4 * sigma2;
       jitter = (jitter == 0.0 ? 1e-8 * sigma2 : jitter * 10.0)) {
    Eigen::MatrixXd Cj = cov;
    if (jitter > 0.0) Cj.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(Cj);
    if (llt.info() == Eigen::Success) return llt;
    min_pivot = llt.matrixLLT().diagonal().minCoeff();
  }
  throw SpdError("covariance failed to factor after jitter escalation", min_pivot);
}

void export_graph_csv(const NeighborGraph& graph, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "site,order_rank,neighbors\n";
  const int J = static_cast<int>(graph.neighbors.size());
  for (int j = 0; j < J; ++j) {
    out << j << ',' << graph.rank[j] << ',';
    const auto& nbr = graph.neighbors[j];
    for (std::size_t a = 0; a < nbr.size(); ++a) {
      if (a) out << ';';
      out << nbr[a];
    }
    out << '\n';
  }
}

std::pair<double, double> distance_extremes(const std::vector<Point2>& coords) {
  const int J = static_cast<int>(coords.size());
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (int a = 0; a < J; ++a) {
    for (int b = a + 1; b < J; ++b) {
      const double d = std::sqrt(sq_dist(coords[a], coords[b]));
      if (d > 0.0) lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
  }
  if (!(hi > 0.0)) throw DataError("need at least two distinct sites");
  return {lo, hi};
}

}  // namespace occu
