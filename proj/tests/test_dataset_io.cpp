#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "doctest.h"
#include "occu/common.hpp"
#include "occu/dataset_io.hpp"

using namespace occu;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) {
    path = fs::temp_directory_path() / name;
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  void file(const std::string& name, const std::string& content) const {
    std::ofstream out(path / name);
    out << content;
  }
  std::string str() const { return path.string(); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_toy_bundle(const TempDir& dir) {
  dir.file("sites.csv",
           "site_id,x,y\n"
           "0,0.1,0.2\n"
           "1,0.4,0.9\n"
           "2,0.8,0.3\n");
  dir.file("occ_covs.csv",
           "site_id,elev\n"
           "0,1.5\n"
           "1,-0.25\n"
           "2,0.75\n");
  dir.file("y_1.csv",
           "site_id,rep,value\n"
           "0,1,1\n"
           "0,2,0\n"
           "1,1,0\n"
           "2,1,1\n"
           "2,2,1\n");
  dir.file("det_covs_1.csv",
           "site_id,rep,name,value\n"
           "0,1,wind,0.3\n"
           "0,2,wind,-1.2\n"
           "1,1,wind,0.05\n"
           "2,1,wind,2\n"
           "2,2,wind,0.5\n");
}

}  // namespace

TEST_CASE("toy bundle loads with aligned shapes") {
  TempDir dir("occu_io_toy");
  write_toy_bundle(dir);
  const auto data = load_dataset(dir.str(), ModelSpec{});
  CHECK(data.n_sites() == 3);
  CHECK(data.n_species == 1);
  CHECK(data.sources.size() == 1);
  CHECK(data.X.cols() == 2);
  CHECK(data.X(0, 0) == 1.0);
  CHECK(data.X(0, 1) == 1.5);
  const auto& src = data.sources[0];
  CHECK(src.K_max == 2);
  CHECK(src.site_map == std::vector<int>{0, 1, 2});
  CHECK(src.y[0](0, 0) == 1);
  CHECK(src.y[0](1, 1) == -1);  // site 1 rep 2 unsurveyed
  CHECK(src.V(0, 1) == 0.3);
  CHECK(validate(data, ModelSpec{}).empty());
}

TEST_CASE("non-binary detection value is rejected with its location") {
  TempDir dir("occu_io_nonbin");
  write_toy_bundle(dir);
  dir.file("y_1.csv",
           "site_id,rep,value\n"
           "0,1,1\n"
           "2,1,2\n");
  try {
    load_dataset(dir.str(), ModelSpec{});
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("non-binary detection value") != std::string::npos);
    CHECK(msg.find("site_id 2") != std::string::npos);
    CHECK(msg.find("rep 1") != std::string::npos);
  }
}

TEST_CASE("minimal single-site single-replicate bundle is legal") {
  TempDir dir("occu_io_minimal");
  dir.file("sites.csv", "site_id,x,y\n0,0,0\n");
  dir.file("y_1.csv", "site_id,rep,value\n0,1,0\n");
  const auto data = load_dataset(dir.str(), ModelSpec{});
  CHECK(data.n_sites() == 1);
  CHECK(data.sources[0].K_max == 1);
  CHECK(data.X.cols() == 1);  // intercept only
  CHECK(validate(data, ModelSpec{}).empty());
}

TEST_CASE("unmapped site in a y file is rejected") {
  TempDir dir("occu_io_unmapped");
  write_toy_bundle(dir);
  dir.file("y_1.csv", "site_id,rep,value\n7,1,0\n");
  CHECK_THROWS_WITH_AS(load_dataset(dir.str(), ModelSpec{}),
                       doctest::Contains("unmapped site_id 7"), DataError);
}

TEST_CASE("duplicate coordinates rejected only under a spatial spec") {
  TempDir dir("occu_io_dupcoord");
  dir.file("sites.csv", "site_id,x,y\n0,0.5,0.5\n1,0.5,0.5\n");
  dir.file("y_1.csv", "site_id,rep,value\n0,1,0\n1,1,1\n");
  ModelSpec flat;
  CHECK(load_dataset(dir.str(), flat).n_sites() == 2);
  ModelSpec spatial;
  spatial.spatial = true;
  CHECK_THROWS_AS(load_dataset(dir.str(), spatial), DataError);
}

TEST_CASE("validate reports NaN covariates and coincident coordinates") {
  TempDir dir("occu_io_validate");
  write_toy_bundle(dir);
  auto data = load_dataset(dir.str(), ModelSpec{});
  data.X(1, 1) = std::nan("");
  data.coords[2] = data.coords[0];
  ModelSpec spatial;
  spatial.spatial = true;
  const auto diag = validate(data, spatial);
  REQUIRE(diag.size() == 2);
  CHECK(diag[0].find("non-finite value") != std::string::npos);
  CHECK(diag[0].find("elev") != std::string::npos);
  CHECK(diag[1].find("zero inter-site distance") != std::string::npos);
}

TEST_CASE("canonical bundles round-trip byte-identically") {
  TempDir dir("occu_io_rt_src");
  write_toy_bundle(dir);
  const auto data = load_dataset(dir.str(), ModelSpec{});

  TempDir out1("occu_io_rt1"), out2("occu_io_rt2");
  write_dataset(out1.str(), data);
  const auto reloaded = load_dataset(out1.str(), ModelSpec{});
  write_dataset(out2.str(), reloaded);
  for (const char* name : {"sites.csv", "occ_covs.csv", "y_1.csv",
                           "det_covs_1.csv"}) {
    CHECK(slurp(out1.path / name) == slurp(out2.path / name));
  }
  CHECK(dataset_hash(out1.str()) == dataset_hash(out2.str()));
}

TEST_CASE("standardization records an invertible transform") {
  TempDir dir("occu_io_std");
  write_toy_bundle(dir);
  ModelSpec spec;
  spec.standardize = true;
  const auto data = load_dataset(dir.str(), spec);
  // column mean ~ 0 after centering
  CHECK(std::fabs(data.X.col(1).mean()) < 1e-12);
  const double raw = 1.5;
  const double z = data.occ_std.transform(1, raw);
  CHECK(std::fabs(data.occ_std.invert(1, z) - raw) < 1e-12 * std::fabs(raw));
  // detection design standardized over surveyed cells only
  const auto& src = data.sources[0];
  double mean = 0.0;
  int n = 0;
  for (int jl = 0; jl < 3; ++jl) {
    for (int k = 0; k < src.K_max; ++k) {
      if (src.observed(0, jl, k)) {
        mean += src.V(jl * src.K_max + k, 1);
        ++n;
      }
    }
  }
  CHECK(std::fabs(mean / n) < 1e-12);
}

TEST_CASE("multispecies y files carry a species column") {
  TempDir dir("occu_io_ms");
  dir.file("sites.csv", "site_id,x,y\n0,0,0\n1,1,0\n");
  dir.file("y_1.csv",
           "species,site_id,rep,value\n"
           "warbler,0,1,1\n"
           "warbler,1,1,0\n"
           "thrush,0,1,0\n"
           "thrush,1,1,1\n");
  ModelSpec spec;
  spec.model = ModelClass::Msom;
  const auto data = load_dataset(dir.str(), spec);
  CHECK(data.n_species == 2);
  CHECK(data.species_names == std::vector<std::string>{"thrush", "warbler"});
  CHECK(data.sources[0].y[0](1, 0) == 1);  // thrush at site 1
  CHECK(data.sources[0].y[1](0, 0) == 1);  // warbler at site 0

  // round-trip keeps the species column
  TempDir out("occu_io_ms_out");
  write_dataset(out.str(), data);
  const auto again = load_dataset(out.str(), spec);
  CHECK(again.n_species == 2);
  CHECK(slurp(out.path / "y_1.csv").substr(0, 8) == "species,");
}

TEST_CASE("multiple sources map into the shared site list") {
  TempDir dir("occu_io_iom");
  dir.file("sites.csv", "site_id,x,y\n0,0,0\n1,1,0\n2,2,0\n3,3,0\n");
  dir.file("y_1.csv", "site_id,rep,value\n0,1,1\n1,1,0\n2,1,0\n");
  dir.file("y_2.csv", "site_id,rep,value\n2,1,1\n3,1,0\n3,2,1\n");
  ModelSpec spec;
  spec.model = ModelClass::Iom;
  const auto data = load_dataset(dir.str(), spec);
  REQUIRE(data.sources.size() == 2);
  CHECK(data.sources[0].site_map == std::vector<int>{0, 1, 2});
  CHECK(data.sources[1].site_map == std::vector<int>{2, 3});
  CHECK(data.sources[1].K_max == 2);
  CHECK(data.any_detection(0, 2));
  CHECK(data.any_survey(0, 3));
  CHECK(validate(data, spec).empty());
}

TEST_CASE("detection random effects become coded levels") {
  TempDir dir("occu_io_re");
  dir.file("sites.csv", "site_id,x,y\n0,0,0\n1,1,0\n");
  dir.file("y_1.csv", "site_id,rep,value\n0,1,1\n0,2,0\n1,1,0\n");
  dir.file("det_covs_1.csv",
           "site_id,rep,name,value\n"
           "0,1,observer,12\n"
           "0,2,observer,3\n"
           "1,1,observer,12\n");
  ModelSpec spec;
  spec.det_random_effects = {"observer"};
  const auto data = load_dataset(dir.str(), spec);
  const auto& src = data.sources[0];
  REQUIRE(src.re_names == std::vector<std::string>{"observer"});
  CHECK(src.re_n_levels[0] == 2);
  CHECK(src.re_labels[0] == std::vector<std::string>{"3", "12"});  // numeric order
  CHECK(src.re_levels[0](0, 0) == 1);  // observer 12
  CHECK(src.re_levels[0](0, 1) == 0);  // observer 3
  CHECK(src.re_levels[0](1, 1) == -1); // unsurveyed
  CHECK(src.V.cols() == 1);            // observer not a fixed covariate
}

TEST_CASE("spec json round-trips through the parser") {
  ModelSpec s;
  s.model = ModelClass::Iom;
  s.spatial = true;
  s.kernel = Kernel::Matern;
  s.nngp = true;
  s.neighbors = 12;
  s.mcmc = {4000, 2000, 4, 3, 99};
  s.standardize = true;
  s.det_random_effects = {"observer"};
  s.priors.phi_lower = 1.0;
  s.priors.phi_upper = 30.0;
  const auto j = spec_to_json(s);
  const auto back = spec_from_json(j);
  CHECK(spec_to_json(back) == j);
  CHECK(spec_hash(back) == spec_hash(s));

  ModelSpec other = s;
  other.mcmc.seed = 100;
  CHECK(spec_hash(other) != spec_hash(s));
}

TEST_CASE("spec validation rejects inconsistent controls") {
  nlohmann::json j;
  j["iters"] = 100;
  j["burn"] = 100;
  CHECK_THROWS_AS(spec_from_json(j), ConfigError);
  j["burn"] = 50;
  j["thin"] = 0;
  CHECK_THROWS_AS(spec_from_json(j), ConfigError);
  j["thin"] = 1;
  j["bogus_field"] = true;
  CHECK_THROWS_AS(spec_from_json(j), ConfigError);
}

TEST_CASE("toml subset parses to the same spec as json") {
  const std::string toml =
      "# fit configuration\n"
      "model = \"iom\"\n"
      "spatial = true\n"
      "kernel = \"exponential\"\n"
      "gp = \"nngp\"\n"
      "neighbors = 15\n"
      "iters = 2000\n"
      "burn = 500\n"
      "seed = 42\n"
      "det_random_effects = [\"observer\", \"wind_band\"]\n"
      "\n"
      "[priors]\n"
      "beta_var = 2.72\n"
      "phi_lower = 3.0   # effective range cap\n"
      "phi_upper = 60.0\n";
  const auto j = toml_subset_to_json(toml);
  const auto spec = spec_from_json(j);
  CHECK(spec.model == ModelClass::Iom);
  CHECK(spec.spatial);
  CHECK(spec.neighbors == 15);
  CHECK(spec.mcmc.seed == 42);
  CHECK(spec.det_random_effects ==
        std::vector<std::string>{"observer", "wind_band"});
  CHECK(spec.priors.phi_lower == 3.0);
  CHECK(spec.priors.phi_upper == 60.0);

  TempDir dir("occu_io_toml");
  dir.file("spec.toml", toml);
  const auto from_file = load_model_spec((dir.path / "spec.toml").string());
  CHECK(spec_hash(from_file) == spec_hash(spec));
}

TEST_CASE("dataset hash is sensitive to any byte change") {
  TempDir dir("occu_io_hash");
  write_toy_bundle(dir);
  const auto h1 = dataset_hash(dir.str());
  dir.file("y_1.csv",
           "site_id,rep,value\n"
           "0,1,1\n"
           "0,2,0\n"
           "1,1,0\n"
           "2,1,1\n"
           "2,2,0\n");  // last value flipped
  const auto h2 = dataset_hash(dir.str());
  CHECK(h1 != h2);
}

TEST_CASE("union coverage of overlapping sources is computed from site maps") {
  TempDir dir("occu_io_union");
  std::ostringstream sites, y1, y2, y3;
  sites << "site_id,x,y\n";
  y1 << "site_id,rep,value\n";
  y2 << "site_id,rep,value\n";
  y3 << "site_id,rep,value\n";
  // 40 sites; sources cover 25, 15, 5 with known overlap
  for (int j = 0; j < 40; ++j) sites << j << ',' << j << ",0\n";
  for (int j = 0; j < 25; ++j) y1 << j << ",1,0\n";
  for (int j = 20; j < 35; ++j) y2 << j << ",1,1\n";
  for (int j = 33; j < 38; ++j) y3 << j << ",1,0\n";
  dir.file("sites.csv", sites.str());
  dir.file("y_1.csv", y1.str());
  dir.file("y_2.csv", y2.str());
  dir.file("y_3.csv", y3.str());
  ModelSpec spec;
  spec.model = ModelClass::Iom;
  const auto data = load_dataset(dir.str(), spec);
  std::set<int> covered;
  for (const auto& src : data.sources)
    covered.insert(src.site_map.begin(), src.site_map.end());
  CHECK(covered.size() == 38);  // 0..37
}
