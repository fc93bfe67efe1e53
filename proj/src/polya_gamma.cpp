#include "occu/polya_gamma.hpp"

#include <cmath>
#include <numbers>

#include "occu/common.hpp"

namespace occu {

namespace {

// Truncation point of the Jacobi density split; the alternating series is
// monotone on both sides of this value.
constexpr double kTrunc = 0.64;
constexpr double kTruncRecip = 1.0 / kTrunc;
constexpr double kPi = 3.14159265358979323846;

// log Phi(x), accurate far into the left tail where erfc underflows.
double log_norm_cdf(double x) {
  if (x > -10.0) return std::log(0.5 * std::erfc(-x / std::numbers::sqrt2));
  const double x2 = x * x;
  // Asymptotic tail expansion of Mills' ratio.
  const double series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2);
  return -0.5 * x2 - 0.5 * std::log(2.0 * kPi) - std::log(-x) +
         std::log(series);
}

// n-th coefficient of the alternating series for the Jacobi density at x,
// piecewise by which proposal regime x fell into.
double a_coef(int n, double x) {
  const double k = (n + 0.5) * kPi;
  if (x > kTrunc) return k * std::exp(-0.5 * k * k * x);
  const double expnt = -1.5 * (std::log(0.5 * kPi) + std::log(x)) +
                       std::log(k) - 2.0 * (n + 0.5) * (n + 0.5) / x;
  return std::exp(expnt);
}

// Probability that the proposal draws from the exponential piece on
// (kTrunc, inf) rather than the inverse-Gaussian piece on (0, kTrunc].
double mass_texpon(double z) {
  const double t = kTrunc;
  const double fz = 0.125 * kPi * kPi + 0.5 * z * z;
  const double b = std::sqrt(1.0 / t) * (t * z - 1.0);
  const double a = -std::sqrt(1.0 / t) * (t * z + 1.0);

  const double x0 = std::log(fz) + fz * t;
  const double xb = x0 - z + log_norm_cdf(b);
  const double xa = x0 + z + log_norm_cdf(a);

  const double qdivp = 4.0 / kPi * (std::exp(xb) + std::exp(xa));
  return 1.0 / (1.0 + qdivp);
}

// Inverse-Gaussian(1/z, 1) truncated to (0, kTrunc].
double rtigauss(double z, RngStream& rng) {
  z = std::fabs(z);
  const double t = kTrunc;
  double x = t + 1.0;
  if (kTruncRecip > z) {
    // Small tilt: rejection from a truncated chi proposal.
    double alpha = 0.0;
    while (rng.uniform01() > alpha) {
      double e1 = draw_exponential(rng);
      double e2 = draw_exponential(rng);
      while (e1 * e1 > 2.0 * e2 / t) {
        e1 = draw_exponential(rng);
        e2 = draw_exponential(rng);
      }
      x = 1.0 + e1 * t;
      x = t / (x * x);
      alpha = std::exp(-0.5 * z * z * x);
    }
  } else {
    // Mean below the truncation point: plain rejection on the support.
    const double mu = 1.0 / z;
    while (x > t) {
      double y = draw_normal(rng);
      y *= y;
      const double mu_y = mu * y;
      x = mu + 0.5 * mu * mu_y -
          0.5 * mu * std::sqrt(4.0 * mu_y + mu_y * mu_y);
      if (rng.uniform01() > mu / (mu + x)) x = mu * mu / x;
    }
  }
  return x;
}

}  // namespace

double pg_draw1(double c, RngStream& rng) {
  const double z = std::fabs(c) * 0.5;
  const double fz = 0.125 * kPi * kPi + 0.5 * z * z;
  const double p_expon = mass_texpon(z);

  for (;;) {
    double x;
    if (rng.uniform01() < p_expon) {
      x = kTrunc + draw_exponential(rng) / fz;
    } else {
      x = rtigauss(z, rng);
    }

    // Squeeze on the partial sums: odd partial sums bound the density from
    // below, even ones from above, so acceptance is decided exactly.
    double s = a_coef(0, x);
    const double y = rng.uniform01() * s;
    int n = 0;
    for (;;) {
      ++n;
      if (n % 2 == 1) {
        s -= a_coef(n, x);
        if (y <= s) return 0.25 * x;
      } else {
        s += a_coef(n, x);
        if (y > s) break;
      }
    }
  }
}

double pg_draw(int b, double c, RngStream& rng) {
  if (b < 1) throw NumericalError("PG shape must be a positive integer");
  double sum = 0.0;
  for (int i = 0; i < b; ++i) sum += pg_draw1(c, rng);
  return sum;
}

double pg_mean(int b, double c) {
  const double ac = std::fabs(c);
  if (ac < 1e-3) return b * (0.25 - c * c / 48.0);
  return b / (2.0 * ac) * std::tanh(ac / 2.0);
}

double pg_var(int b, double c) {
  const double ac = std::fabs(c);
  if (ac < 1e-3) return b * (1.0 / 24.0 - c * c / 120.0);
  const double ch = std::cosh(ac / 2.0);
  return b / (4.0 * ac * ac * ac) * (std::sinh(ac) - ac) / (ch * ch);
}

}  // namespace occu
