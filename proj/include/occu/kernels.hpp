#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "occu/common.hpp"

namespace occu {

enum class Kernel { Exponential, Gaussian, Spherical, Matern };

struct KernelParams {
  double sigma2 = 1.0;  // spatial variance
  double phi = 1.0;     // decay
  double nu = 0.5;      // Matern smoothness, ignored by the other kernels
};

Kernel kernel_from_string(const std::string& name);
std::string kernel_name(Kernel k);

// Correlation at separation d. Always 1 at d = 0 and within [0, 1];
// spherical hits exactly 0 beyond the range 1/phi.
inline double correlation(Kernel k, double phi, double nu, double d) {
  if (d < 0.0) throw NumericalError("correlation distance must be non-negative");
  if (d == 0.0) return 1.0;
  const double t = phi * d;
  switch (k) {
    case Kernel::Exponential:
      return std::exp(-t);
    case Kernel::Gaussian:
      return std::exp(-t * t);
    case Kernel::Spherical:
      return t <= 1.0 ? 1.0 - 1.5 * t + 0.5 * t * t * t : 0.0;
    case Kernel::Matern: {
      // 2^{1-nu}/Gamma(nu) * t^nu * K_nu(t); underflows cleanly for large t.
      const double log_pre = (1.0 - nu) * std::numbers::ln2 - std::lgamma(nu);
      const double bessel = std::cyl_bessel_k(nu, t);
      if (bessel <= 0.0) return 0.0;
      return std::exp(log_pre + nu * std::log(t) + std::log(bessel));
    }
  }
  throw ConfigError("unknown correlation kernel");
}

inline double correlation(Kernel k, const KernelParams& p, double d) {
  return correlation(k, p.phi, p.nu, d);
}

// Vectorized correlation over a packed distance array; matches the scalar
// form elementwise.
void correlation_many(Kernel k, const KernelParams& p, const double* d,
                      double* out, int n);

}  // namespace occu
