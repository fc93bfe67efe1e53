#pragma once

#include <array>
#include <cstdint>
#include <limits>

#include <Eigen/Dense>

namespace occu {

// Counter-based Philox4x32-10 generator. Streams are keyed on
// (seed, chain, substream): equal keys give byte-identical draw sequences
// regardless of how many threads run or in what order streams are consumed,
// which is what the reproducibility contract requires.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream() : RngStream(0, 0, 0) {}
  RngStream(std::uint64_t seed, std::uint32_t chain, std::uint32_t substream);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()();

  // Uniform on [0, 1) with 53 random bits.
  double uniform01();
  // Uniform on (0, 1]; safe as a log() argument.
  double uniform01_open0();

  std::uint64_t seed() const { return seed_; }
  std::uint32_t chain() const { return chain_; }
  std::uint32_t substream() const { return substream_; }

 private:
  void refill();

  std::uint64_t seed_;
  std::uint32_t chain_, substream_;
  std::array<std::uint32_t, 4> counter_;
  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> block_;
  int block_pos_;  // next 32-bit word in block_, 4 = empty
  bool have_cached_normal_ = false;
  double cached_normal_ = 0.0;

  friend double draw_normal(RngStream&);
};

double draw_uniform(double lo, double hi, RngStream& rng);
double draw_normal(RngStream& rng);  // standard normal (Marsaglia polar)
double draw_exponential(RngStream& rng);
double draw_gamma(double shape, RngStream& rng);  // unit scale
double draw_inverse_gamma(double shape, double scale, RngStream& rng);
int draw_bernoulli(double p, RngStream& rng);
// Inverse Gaussian with mean mu and shape lambda.
double draw_inverse_gaussian(double mu, double lambda, RngStream& rng);

enum class MatrixForm { Covariance, Precision };

// Exact multivariate normal draw via Cholesky factorization of `mat`,
// interpreted per `form`. Throws SpdError on factorization failure.
Eigen::VectorXd draw_mvn(const Eigen::VectorXd& mean, const Eigen::MatrixXd& mat,
                         MatrixForm form, RngStream& rng);

// Canonical-form draw N(P^{-1} b, P^{-1}) used by the conditional updates.
Eigen::VectorXd draw_mvn_canonical(const Eigen::VectorXd& b,
                                   const Eigen::MatrixXd& precision,
                                   RngStream& rng);

}  // namespace occu
