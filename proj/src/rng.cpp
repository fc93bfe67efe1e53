#include "occu/rng.hpp"

#include <cmath>

#include "occu/common.hpp"

namespace occu {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline std::uint32_t mulhi32(std::uint32_t a, std::uint32_t b) {
  return static_cast<std::uint32_t>(
      (static_cast<std::uint64_t>(a) * static_cast<std::uint64_t>(b)) >> 32);
}

inline void philox_round(std::array<std::uint32_t, 4>& ctr,
                         const std::array<std::uint32_t, 2>& key) {
  const std::uint32_t hi0 = mulhi32(kPhiloxM0, ctr[0]);
  const std::uint32_t lo0 = kPhiloxM0 * ctr[0];
  const std::uint32_t hi1 = mulhi32(kPhiloxM1, ctr[2]);
  const std::uint32_t lo1 = kPhiloxM1 * ctr[2];
  ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
}

inline std::array<std::uint32_t, 4> philox10(std::array<std::uint32_t, 4> ctr,
                                             std::array<std::uint32_t, 2> key) {
  for (int r = 0; r < 10; ++r) {
    philox_round(ctr, key);
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint32_t chain,
                     std::uint32_t substream)
    : seed_(seed), chain_(chain), substream_(substream), block_pos_(4) {
  key_ = {static_cast<std::uint32_t>(seed & 0xFFFFFFFFu),
          static_cast<std::uint32_t>(seed >> 32)};
  // Counter words 2 and 3 carry the stream identity; words 0 and 1 are the
  // per-stream draw counter, so each (seed, chain, substream) triple indexes a
  // disjoint 2^64-block slice of the Philox sequence.
  counter_ = {0u, 0u, chain, substream};
}

void RngStream::refill() {
  block_ = philox10(counter_, key_);
  block_pos_ = 0;
  if (++counter_[0] == 0u) ++counter_[1];
}

RngStream::result_type RngStream::operator()() {
  if (block_pos_ >= 3) refill();
  const std::uint64_t lo = block_[block_pos_];
  const std::uint64_t hi = block_[block_pos_ + 1];
  block_pos_ += 2;
  return (hi << 32) | lo;
}

double RngStream::uniform01() {
  return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
}

double RngStream::uniform01_open0() { return 1.0 - uniform01(); }

double draw_uniform(double lo, double hi, RngStream& rng) {
  return lo + (hi - lo) * rng.uniform01();
}

double draw_normal(RngStream& rng) {
  if (rng.have_cached_normal_) {
    rng.have_cached_normal_ = false;
    return rng.cached_normal_;
  }
  double u, v, s;
  do {
    u = 2.0 * rng.uniform01() - 1.0;
    v = 2.0 * rng.uniform01() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  rng.cached_normal_ = v * f;
  rng.have_cached_normal_ = true;
  return u * f;
}

double draw_exponential(RngStream& rng) {
  return -std::log(rng.uniform01_open0());
}

double draw_gamma(double shape, RngStream& rng) {
  if (!(shape > 0.0)) throw NumericalError("gamma shape must be positive");
  // Marsaglia-Tsang squeeze; shapes below 1 are boosted via the power trick.
  if (shape < 1.0) {
    const double u = rng.uniform01_open0();
    return draw_gamma(shape + 1.0, rng) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = draw_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform01_open0();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

double draw_inverse_gamma(double shape, double scale, RngStream& rng) {
  if (!(scale > 0.0)) throw NumericalError("inverse-gamma scale must be positive");
  return scale / draw_gamma(shape, rng);
}

int draw_bernoulli(double p, RngStream& rng) {
  return rng.uniform01() < p ? 1 : 0;
}

double draw_inverse_gaussian(double mu, double lambda, RngStream& rng) {
  // Michael-Schucany-Haas: solve the quadratic for one root, pick by ratio.
  const double nu = draw_normal(rng);
  const double y = nu * nu;
  const double x = mu + 0.5 * mu * mu * y / lambda -
                   0.5 * (mu / lambda) *
                       std::sqrt(4.0 * mu * lambda * y + mu * mu * y * y);
  const double u = rng.uniform01();
  if (u <= mu / (mu + x)) return x;
  return mu * mu / x;
}

namespace {

// Cholesky with an explicit conditioning gate: LLT succeeding is not enough,
// because a numerically singular matrix can still factor with a tiny positive
// pivot. Reject when the smallest pivot is below 1e-6 of the largest
// (eigenvalue ratio below ~1e-12).
Eigen::LLT<Eigen::MatrixXd> checked_llt(const Eigen::MatrixXd& mat,
                                        const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(mat);
  double min_pivot = std::numeric_limits<double>::infinity();
  double max_pivot = 0.0;
  for (Eigen::Index i = 0; i < mat.rows(); ++i) {
    const double d = llt.matrixLLT()(i, i);
    min_pivot = std::min(min_pivot, d);
    max_pivot = std::max(max_pivot, d);
  }
  if (llt.info() != Eigen::Success || !(min_pivot > 1e-6 * max_pivot)) {
    throw SpdError(std::string(what) + " is not positive definite within tolerance",
                   min_pivot);
  }
  return llt;
}

}  // namespace

Eigen::VectorXd draw_mvn(const Eigen::VectorXd& mean, const Eigen::MatrixXd& mat,
                         MatrixForm form, RngStream& rng) {
  const Eigen::Index n = mean.size();
  const auto llt = checked_llt(mat, form == MatrixForm::Covariance
                                        ? "covariance matrix"
                                        : "precision matrix");
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = draw_normal(rng);
  if (form == MatrixForm::Covariance) {
    return mean + llt.matrixL() * z;
  }
  // Precision form: x = mean + L^{-T} z with P = L L^T.
  return mean + llt.matrixU().solve(z);
}

Eigen::VectorXd draw_mvn_canonical(const Eigen::VectorXd& b,
                                   const Eigen::MatrixXd& precision,
                                   RngStream& rng) {
  const Eigen::Index n = b.size();
  const auto llt = checked_llt(precision, "conditional precision matrix");
  const Eigen::VectorXd mean = llt.solve(b);
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = draw_normal(rng);
  return mean + llt.matrixU().solve(z);
}

}  // namespace occu
