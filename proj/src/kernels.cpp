#include "occu/kernels.hpp"

#include <Eigen/Dense>

namespace occu {

Kernel kernel_from_string(const std::string& name) {
  if (name == "exponential") return Kernel::Exponential;
  if (name == "gaussian") return Kernel::Gaussian;
  if (name == "spherical") return Kernel::Spherical;
  if (name == "matern") return Kernel::Matern;
  throw ConfigError("unknown kernel '" + name +
                    "' (expected exponential, gaussian, spherical, or matern)");
}

void correlation_many(Kernel k, const KernelParams& p, const double* d,
                      double* out, int n) {
  Eigen::Map<const Eigen::ArrayXd> din(d, n);
  Eigen::Map<Eigen::ArrayXd> o(out, n);
  switch (k) {
    case Kernel::Exponential:
      o = (-p.phi * din).exp();
      return;
    case Kernel::Gaussian:
      o = (-(p.phi * din).square()).exp();
      return;
    case Kernel::Spherical:
      for (int i = 0; i < n; ++i) {
        const double t = p.phi * d[i];
        out[i] = t <= 1.0 ? 1.0 - 1.5 * t + 0.5 * t * t * t : 0.0;
      }
      return;
    case Kernel::Matern:
      for (int i = 0; i < n; ++i) out[i] = correlation(k, p, d[i]);
      return;
  }
  throw ConfigError("unknown correlation kernel");
}

std::string kernel_name(Kernel k) {
  switch (k) {
    case Kernel::Exponential: return "exponential";
    case Kernel::Gaussian: return "gaussian";
    case Kernel::Spherical: return "spherical";
    case Kernel::Matern: return "matern";
  }
  return "unknown";
}

}  // namespace occu
