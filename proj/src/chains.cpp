#include "occu/chains.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "occu/dataset_io.hpp"

static_assert(std::endian::native == std::endian::little,
              "chain files are little-endian");

namespace occu {
namespace {

constexpr char kMagic[8] = {'O', 'C', 'C', 'U', 'C', 'H', 'N', '1'};

// Assign offsets from the dimension fields, in storage order.
void finalize_layout(Layout& lay) {
  const int N = lay.n_species;
  int off = 0;
  lay.off_beta = off;
  off += N * lay.p_occ;
  lay.off_mu_beta = off;
  lay.off_tau2_beta = off;
  lay.off_mu_alpha = off;
  lay.off_tau2_alpha = off;
  if (lay.msom) {
    lay.off_mu_beta = off;
    off += lay.p_occ;
    lay.off_tau2_beta = off;
    off += lay.p_occ;
    lay.off_mu_alpha = off;
    off += lay.p_det[0];
    lay.off_tau2_alpha = off;
    off += lay.p_det[0];
  }
  lay.off_alpha.clear();
  for (int p : lay.p_det) {
    lay.off_alpha.push_back(off);
    off += N * p;
  }
  lay.off_re_det_var.clear();
  lay.off_re_det.clear();
  for (int levels : lay.re_det_levels) {
    lay.off_re_det_var.push_back(off);
    off += 1;
    lay.off_re_det.push_back(off);
    off += N * levels;
  }
  lay.off_re_occ_var.clear();
  lay.off_re_occ.clear();
  for (int levels : lay.re_occ_levels) {
    lay.off_re_occ_var.push_back(off);
    off += 1;
    lay.off_re_occ.push_back(off);
    off += N * levels;
  }
  lay.off_theta = off;
  lay.theta_stride = lay.matern ? 3 : 2;
  if (lay.spatial) off += N * lay.theta_stride;
  lay.off_w = off;
  if (lay.spatial && lay.store_latent) off += N * lay.J;
  lay.off_psi = off;
  if (lay.store_latent) off += N * lay.J;
  lay.off_z = off;
  if (lay.store_latent) off += N * lay.J;
  lay.n_cols = off;
}

}  // namespace

Layout make_layout(const ModelSpec& spec, const Dataset& data) {
  Layout lay;
  lay.n_species = data.n_species;
  lay.p_occ = data.n_occ_covs();
  for (const auto& src : data.sources) {
    lay.p_det.push_back(static_cast<int>(src.V.cols()));
    for (std::size_t e = 0; e < src.re_names.size(); ++e) {
      lay.re_det_levels.push_back(src.re_n_levels[e]);
      lay.re_det_source.push_back(src.id);
      lay.re_det_names.push_back(src.re_names[e]);
    }
  }
  lay.re_occ_levels = data.occ_re_n_levels;
  lay.re_occ_names = data.occ_re_names;
  lay.J = data.n_sites();
  lay.msom = spec.model == ModelClass::Msom;
  lay.spatial = spec.spatial;
  lay.matern = spec.spatial && spec.kernel == Kernel::Matern;
  lay.store_latent = spec.store_latent;
  finalize_layout(lay);
  return lay;
}

std::vector<std::string> column_names(const Layout& lay, const Dataset& data) {
  std::vector<std::string> names(lay.n_cols);
  const bool sp = lay.msom;
  const bool multi_src = data.sources.size() > 1;
  auto sp_tag = [&](int i) {
    return sp ? "[" + data.species_names[i] + "]" : std::string();
  };
  auto src_tag = [&](int s) {
    return multi_src ? "[src" + std::to_string(data.sources[s].id) + "]"
                     : std::string();
  };
  for (int i = 0; i < lay.n_species; ++i)
    for (int r = 0; r < lay.p_occ; ++r)
      names[lay.beta(i, r)] = "beta" + sp_tag(i) + "[" + data.occ_names[r] + "]";
  if (lay.msom) {
    for (int r = 0; r < lay.p_occ; ++r) {
      names[lay.mu_beta(r)] = "mu_beta[" + data.occ_names[r] + "]";
      names[lay.tau2_beta(r)] = "tau2_beta[" + data.occ_names[r] + "]";
    }
    for (int r = 0; r < lay.p_det[0]; ++r) {
      names[lay.mu_alpha(r)] = "mu_alpha[" + data.sources[0].det_names[r] + "]";
      names[lay.tau2_alpha(r)] =
          "tau2_alpha[" + data.sources[0].det_names[r] + "]";
    }
  }
  for (std::size_t s = 0; s < data.sources.size(); ++s)
    for (int i = 0; i < lay.n_species; ++i)
      for (int r = 0; r < lay.p_det[s]; ++r)
        names[lay.alpha(static_cast<int>(s), i, r)] =
            "alpha" + src_tag(static_cast<int>(s)) + sp_tag(i) + "[" +
            data.sources[s].det_names[r] + "]";
  {
    int e = 0;
    for (std::size_t s = 0; s < data.sources.size(); ++s) {
      const auto& src = data.sources[s];
      for (std::size_t se = 0; se < src.re_names.size(); ++se, ++e) {
        names[lay.re_det_var(e)] = "sigma2_det" + src_tag(static_cast<int>(s)) +
                                   "[" + src.re_names[se] + "]";
        for (int i = 0; i < lay.n_species; ++i)
          for (int l = 0; l < lay.re_det_levels[e]; ++l)
            names[lay.re_det(e, i, l)] =
                "re_det" + src_tag(static_cast<int>(s)) + "[" +
                src.re_names[se] + "]" + sp_tag(i) + "[" +
                src.re_labels[se][l] + "]";
      }
    }
  }
  for (std::size_t e = 0; e < lay.re_occ_levels.size(); ++e) {
    names[lay.re_occ_var(static_cast<int>(e))] =
        "sigma2_occ[" + lay.re_occ_names[e] + "]";
    for (int i = 0; i < lay.n_species; ++i)
      for (int l = 0; l < lay.re_occ_levels[e]; ++l)
        names[lay.re_occ(static_cast<int>(e), i, l)] =
            "re_occ[" + lay.re_occ_names[e] + "]" + sp_tag(i) + "[" +
            data.occ_re_labels[e][l] + "]";
  }
  if (lay.spatial)
    for (int i = 0; i < lay.n_species; ++i) {
      names[lay.sigma2(i)] = "sigma2" + sp_tag(i);
      names[lay.phi(i)] = "phi" + sp_tag(i);
      if (lay.matern) names[lay.nu(i)] = "nu" + sp_tag(i);
    }
  auto site_tag = [&](int j) {
    return "[" + std::to_string(data.site_ids[j]) + "]";
  };
  if (lay.store_latent)
    for (int i = 0; i < lay.n_species; ++i)
      for (int j = 0; j < lay.J; ++j) {
        if (lay.spatial) names[lay.w(i, j)] = "w" + sp_tag(i) + site_tag(j);
        names[lay.psi(i, j)] = "psi" + sp_tag(i) + site_tag(j);
        names[lay.z(i, j)] = "z" + sp_tag(i) + site_tag(j);
      }
  return names;
}

namespace {

nlohmann::json layout_to_json(const Layout& lay) {
  nlohmann::json j;
  j["n_species"] = lay.n_species;
  j["p_occ"] = lay.p_occ;
  j["p_det"] = lay.p_det;
  j["re_det_levels"] = lay.re_det_levels;
  j["re_det_source"] = lay.re_det_source;
  j["re_det_names"] = lay.re_det_names;
  j["re_occ_levels"] = lay.re_occ_levels;
  j["re_occ_names"] = lay.re_occ_names;
  j["J"] = lay.J;
  j["msom"] = lay.msom;
  j["spatial"] = lay.spatial;
  j["matern"] = lay.matern;
  j["store_latent"] = lay.store_latent;
  return j;
}

Layout layout_from_json(const nlohmann::json& j) {
  Layout lay;
  lay.n_species = j.at("n_species").get<int>();
  lay.p_occ = j.at("p_occ").get<int>();
  lay.p_det = j.at("p_det").get<std::vector<int>>();
  lay.re_det_levels = j.at("re_det_levels").get<std::vector<int>>();
  lay.re_det_source = j.at("re_det_source").get<std::vector<int>>();
  lay.re_det_names = j.at("re_det_names").get<std::vector<std::string>>();
  lay.re_occ_levels = j.at("re_occ_levels").get<std::vector<int>>();
  lay.re_occ_names = j.at("re_occ_names").get<std::vector<std::string>>();
  lay.J = j.at("J").get<int>();
  lay.msom = j.at("msom").get<bool>();
  lay.spatial = j.at("spatial").get<bool>();
  lay.matern = j.at("matern").get<bool>();
  lay.store_latent = j.at("store_latent").get<bool>();
  finalize_layout(lay);
  return lay;
}

void write_chain_file(const std::string& path, const Eigen::MatrixXd& draws) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write chain file: " + path);
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t n_draws = static_cast<std::uint64_t>(draws.rows());
  const std::uint64_t n_cols = static_cast<std::uint64_t>(draws.cols());
  out.write(reinterpret_cast<const char*>(&n_draws), 8);
  out.write(reinterpret_cast<const char*>(&n_cols), 8);
  // Stored row-major so one draw is contiguous on disk.
  using RowMajor =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMajor rows = draws;
  out.write(reinterpret_cast<const char*>(rows.data()),
            static_cast<std::streamsize>(sizeof(double) * rows.size()));
  if (!out) throw DataError("short write on chain file: " + path);
}

Eigen::MatrixXd read_chain_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open chain file: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw DataError("not a chain file: " + path);
  std::uint64_t n_draws = 0, n_cols = 0;
  in.read(reinterpret_cast<char*>(&n_draws), 8);
  in.read(reinterpret_cast<char*>(&n_cols), 8);
  if (!in || n_draws > (1ULL << 32) || n_cols > (1ULL << 32))
    throw DataError("corrupt chain header: " + path);
  using RowMajor =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMajor rows(static_cast<Eigen::Index>(n_draws),
                static_cast<Eigen::Index>(n_cols));
  in.read(reinterpret_cast<char*>(rows.data()),
          static_cast<std::streamsize>(sizeof(double) * rows.size()));
  if (!in) throw DataError("truncated chain file: " + path);
  return rows;
}

}  // namespace

void save_fit(const std::string& dir, const FitResult& fit) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (int c = 0; c < fit.n_chains(); ++c)
    write_chain_file(dir + "/chain_" + std::to_string(c) + ".bin",
                     fit.draws[c]);
  nlohmann::json j;
  j["format"] = "occufit-chains-1";
  j["spec"] = spec_to_json(fit.spec);
  j["spec_hash"] = hash_hex(spec_hash(fit.spec));
  j["dataset_hash"] = hash_hex(fit.data_hash);
  j["layout"] = layout_to_json(fit.layout);
  j["columns"] = fit.columns;
  j["seed"] = fit.spec.mcmc.seed;
  j["thin"] = fit.spec.mcmc.n_thin;
  j["n_chains"] = fit.n_chains();
  j["n_stored"] = fit.n_stored();
  nlohmann::json coords = nlohmann::json::array();
  for (const auto& p : fit.coords) coords.push_back({p[0], p[1]});
  j["coords"] = coords;
  j["site_order"] = fit.site_order;
  j["occ_std"] = {{"offset", fit.occ_std.offset}, {"scale", fit.occ_std.scale}};
  j["species"] = fit.species_names;
  // No timings here: the sidecar must be byte-identical across re-runs with
  // the same seed. Wall-clock diagnostics go to a separate log.
  j["accept_phi"] = fit.accept_phi;
  j["accept_nu"] = fit.accept_nu;
  std::ofstream out(dir + "/chains.json", std::ios::trunc);
  if (!out) throw DataError("cannot write " + dir + "/chains.json");
  out << j.dump(2) << "\n";
}

FitResult load_fit(const std::string& dir) {
  std::ifstream in(dir + "/chains.json");
  if (!in) throw DataError("cannot open " + dir + "/chains.json");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(dir + "/chains.json: " + e.what());
  }
  if (j.value("format", "") != "occufit-chains-1")
    throw DataError(dir + ": unrecognized chains format");
  FitResult fit;
  fit.spec = spec_from_json(j.at("spec"));
  fit.data_hash = std::stoull(j.at("dataset_hash").get<std::string>(),
                              nullptr, 16);
  fit.layout = layout_from_json(j.at("layout"));
  fit.columns = j.at("columns").get<std::vector<std::string>>();
  for (const auto& p : j.at("coords"))
    fit.coords.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  fit.site_order = j.at("site_order").get<std::vector<int>>();
  fit.occ_std.offset = j.at("occ_std").at("offset").get<std::vector<double>>();
  fit.occ_std.scale = j.at("occ_std").at("scale").get<std::vector<double>>();
  fit.species_names = j.at("species").get<std::vector<std::string>>();
  fit.accept_phi = j.at("accept_phi").get<std::vector<double>>();
  fit.accept_nu = j.at("accept_nu").get<std::vector<double>>();
  const int n_chains = j.at("n_chains").get<int>();
  for (int c = 0; c < n_chains; ++c) {
    fit.draws.push_back(
        read_chain_file(dir + "/chain_" + std::to_string(c) + ".bin"));
    if (fit.draws.back().cols() != fit.layout.n_cols)
      throw DataError(dir + ": chain width does not match layout");
  }
  return fit;
}

}  // namespace occu
