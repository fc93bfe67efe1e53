#include "occu/types.hpp"

#include <charconv>

#include "occu/common.hpp"

namespace occu {

ModelClass model_from_string(const std::string& name) {
  if (name == "ssom") return ModelClass::Ssom;
  if (name == "msom") return ModelClass::Msom;
  if (name == "iom") return ModelClass::Iom;
  throw ConfigError("unknown model '" + name + "' (expected ssom, msom, or iom)");
}

std::string model_name(ModelClass m) {
  switch (m) {
    case ModelClass::Ssom: return "ssom";
    case ModelClass::Msom: return "msom";
    case ModelClass::Iom: return "iom";
  }
  return "unknown";
}

void Standardizer::apply(Eigen::MatrixXd& X) const {
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    X.col(c) = (X.col(c).array() - offset[c]) / scale[c];
  }
}

bool Dataset::any_detection(int species, int site) const {
  for (const auto& src : sources) {
    for (std::size_t jl = 0; jl < src.site_map.size(); ++jl) {
      if (src.site_map[jl] != site) continue;
      for (int k = 0; k < src.K_max; ++k) {
        if (src.y[species](static_cast<int>(jl), k) == 1) return true;
      }
    }
  }
  return false;
}

bool Dataset::any_survey(int species, int site) const {
  for (const auto& src : sources) {
    for (std::size_t jl = 0; jl < src.site_map.size(); ++jl) {
      if (src.site_map[jl] != site) continue;
      for (int k = 0; k < src.K_max; ++k) {
        if (src.y[species](static_cast<int>(jl), k) >= 0) return true;
      }
    }
  }
  return false;
}

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  auto [ptr, ec] = std::to_chars(buf, buf + 16, h, 16);
  std::string s(buf, ptr);
  return std::string(16 - s.size(), '0') + s;
}

}  // namespace occu
