#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "occu/types.hpp"

namespace occu {

// Parse spec.json or spec.toml (detected by extension).
ModelSpec load_model_spec(const std::string& path);
ModelSpec spec_from_json(const nlohmann::json& j);
// Canonical serialized form; the spec hash is FNV-1a over its dump().
nlohmann::json spec_to_json(const ModelSpec& spec);
std::uint64_t spec_hash(const ModelSpec& spec);

// Minimal TOML reader covering flat key/value pairs, [dotted.sections],
// strings, numbers, booleans, and arrays of strings; mapped onto JSON.
nlohmann::json toml_subset_to_json(const std::string& text);

// Load a dataset bundle directory: sites.csv, occ_covs.csv, y_<id>.csv and
// det_covs_<id>.csv per source. The spec supplies random-effect declarations
// and the standardization flag.
Dataset load_dataset(const std::string& dir, const ModelSpec& spec);

// Write the canonical bundle form (sorted rows, shortest round-trip
// numbers). load + write of a canonical bundle is byte-identical.
void write_dataset(const std::string& dir, const Dataset& data);

// One diagnostic string per invariant violation; empty means valid.
std::vector<std::string> validate(const Dataset& data, const ModelSpec& spec);

// Restriction of a dataset to the sites with keep[j] != 0. Sources keep only
// their surviving rows; random-effect level codes are left untouched so a
// refit on the subset stays column-compatible with fits on the full data
// (levels that lose every row fall back to their prior). Throws ConfigError
// when the subset would leave a source with no sites.
Dataset subset_sites(const Dataset& data, const std::vector<char>& keep);

// FNV-1a over every bundle data file (sorted by name), mixed with names.
std::uint64_t dataset_hash(const std::string& dir);

std::string format_double(double v);  // shortest round-trip decimal text

}  // namespace occu
