#include <cmath>
#include <vector>

#include "doctest.h"
#include "occu/polya_gamma.hpp"
#include "occu/rng.hpp"
#include "test_util.hpp"

using namespace occu;

namespace {

// Independent oracle: PG(b, c) as a truncated sum of gammas,
//   (1 / 2pi^2) * sum_k g_k / ((k - 1/2)^2 + c^2 / (4pi^2)),  g_k ~ Gamma(b, 1).
// 200 terms; used only to validate the exact sampler, never in the library.
double pg_oracle_draw(int b, double c, RngStream& rng) {
  constexpr double pi = 3.14159265358979323846;
  const double tilt = c * c / (4.0 * pi * pi);
  double sum = 0.0;
  for (int k = 1; k <= 200; ++k) {
    const double denom = (k - 0.5) * (k - 0.5) + tilt;
    sum += draw_gamma(double(b), rng) / denom;
  }
  return sum / (2.0 * pi * pi);
}

// Closed-form moments, written out independently of the library versions.
double oracle_mean(int b, double c) {
  if (c == 0.0) return b / 4.0;
  return b / (2.0 * c) * std::tanh(c / 2.0);
}

double oracle_var(int b, double c) {
  if (c == 0.0) return b / 24.0;
  const double ch = std::cosh(c / 2.0);
  return b / (4.0 * c * c * c) * (std::sinh(c) - c) / (ch * ch);
}

}  // namespace

TEST_CASE("pg(1,0) mean matches b/4") {
  RngStream r(101, 0, 0);
  const int n = 1000000;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += pg_draw1(0.0, r);
  const double se = std::sqrt(oracle_var(1, 0.0) / n);
  CHECK(std::fabs(s / n - 0.25) < 3.0 * se);
}

TEST_CASE("pg(1,2) mean matches tanh(1)/4") {
  RngStream r(103, 0, 0);
  const int n = 1000000;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += pg_draw1(2.0, r);
  const double se = std::sqrt(oracle_var(1, 2.0) / n);
  CHECK(std::fabs(s / n - 0.19039853898894116) < 3.0 * se);
}

TEST_CASE("pg(3,c) equals the sum of three pg(1,c) draws in distribution") {
  RngStream r(107, 0, 0);
  const int n = 100000;
  for (double c : {0.0, 1.5}) {
    std::vector<double> direct(n), summed(n);
    for (int i = 0; i < n; ++i) {
      direct[i] = pg_draw(3, c, r);
      summed[i] = pg_draw1(c, r) + pg_draw1(c, r) + pg_draw1(c, r);
    }
    CHECK(testutil::ks_two_sample_p(direct, summed) > 0.01);
  }
}

TEST_CASE("pg sampler agrees with the truncated-gamma oracle in distribution") {
  RngStream r(109, 0, 0);
  const int n = 40000;
  for (double c : {0.0, 1.0, 4.0}) {
    std::vector<double> exact(n), oracle(n);
    for (int i = 0; i < n; ++i) {
      exact[i] = pg_draw1(c, r);
      oracle[i] = pg_oracle_draw(1, c, r);
    }
    // The truncated sum slightly under-disperses, so demand only that the
    // distributions are not grossly different at the 0.1% level.
    CHECK(testutil::ks_two_sample_p(exact, oracle) > 0.001);
  }
}

TEST_CASE("pg moments across the (b, c) grid") {
  RngStream r(113, 0, 0);
  const int n = 200000;
  for (int b : {1, 2, 3}) {
    for (double c : {0.0, 0.5, 1.0, 2.0, 5.0}) {
      std::vector<double> x(n);
      for (double& v : x) v = pg_draw(b, c, r);
      const double m = oracle_mean(b, c);
      const double v = oracle_var(b, c);
      CHECK(std::fabs(testutil::mean(x) - m) < 4.0 * std::sqrt(v / n));
      // SE of the sample variance via the fourth-moment normal proxy.
      CHECK(std::fabs(testutil::variance(x) - v) <
            5.0 * v * std::sqrt(2.0 / n));
    }
  }
}

TEST_CASE("pg draws are symmetric in the sign of c") {
  RngStream r(127, 0, 0);
  const int n = 50000;
  std::vector<double> pos(n), neg(n);
  for (int i = 0; i < n; ++i) pos[i] = pg_draw1(1.3, r);
  for (int i = 0; i < n; ++i) neg[i] = pg_draw1(-1.3, r);
  CHECK(testutil::ks_two_sample_p(pos, neg) > 0.01);
}

TEST_CASE("closed-form moments are continuous at the small-c switch") {
  CHECK(pg_mean(1, 0.000999) == doctest::Approx(pg_mean(1, 0.001001)).epsilon(1e-9));
  CHECK(pg_var(2, 0.000999) == doctest::Approx(pg_var(2, 0.001001)).epsilon(1e-9));
  CHECK(pg_mean(1, 0.0) == doctest::Approx(0.25));
  CHECK(pg_var(1, 0.0) == doctest::Approx(1.0 / 24.0));
  CHECK(pg_mean(2, 5.0) == doctest::Approx(2.0 / 10.0 * std::tanh(2.5)));
}
