#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace occu {

// Error taxonomy mirrors the CLI exit codes: config -> 2, data -> 3,
// numerical -> 4.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Symmetric positive definiteness violation; carries the smallest pivot seen
// so callers can report how far from SPD the matrix was.
struct SpdError : NumericalError {
  double min_pivot;
  explicit SpdError(const std::string& msg, double pivot)
      : NumericalError(msg), min_pivot(pivot) {}
};

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline double logistic(double x) {
  // Branch keeps exp() argument non-positive so neither side overflows.
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
inline double log1pexp(double x) {
  if (x > 35.0) return x;
  if (x < -35.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

// log Bernoulli(y | p) on the logit scale: y*eta - log(1+exp(eta)).
inline double bernoulli_logpmf_logit(int y, double eta) {
  return y * eta - log1pexp(eta);
}

// Linear-interpolation quantile of an already sorted vector.
inline double quantile_sorted(const std::vector<double>& x, double q) {
  if (x.empty()) return std::nan("");
  const double h = q * (static_cast<double>(x.size()) - 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= x.size()) return x.back();
  return x[lo] + (h - lo) * (x[lo + 1] - x[lo]);
}

}  // namespace occu
