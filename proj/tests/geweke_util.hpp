#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "occu/samplers.hpp"
#include "test_util.hpp"

// Prior-invariance (getting-it-right) harness: the successive-substitution
// chain {prior init -> sweep -> resimulate data -> ...} must leave the prior
// marginals invariant, so its parameter streams and direct prior draws are
// compared by two-sample KS.

namespace testutil {

using GewekeFn = std::function<double(occu::GibbsSampler&)>;

inline std::map<std::string, double> geweke_ks(
    const occu::ModelSpec& spec, const occu::Dataset& data, int n, int thin,
    const std::vector<std::pair<std::string, GewekeFn>>& fns,
    std::uint64_t seed) {
  std::vector<std::vector<double>> marg(fns.size()), succ(fns.size());

  occu::GibbsSampler a(spec, data);
  occu::RngStream ra(seed, 0, 0);
  for (int t = 0; t < n; ++t) {
    a.init_from_prior(ra);
    for (std::size_t f = 0; f < fns.size(); ++f)
      marg[f].push_back(fns[f].second(a));
  }

  occu::GibbsSampler b(spec, data);
  occu::RngStream rb(seed, 1, 0);
  b.init_from_prior(rb);
  for (int t = 0; t < n; ++t) {
    for (int s = 0; s < thin; ++s) {
      b.sweep(rb, false);
      b.resimulate_y(rb);
    }
    for (std::size_t f = 0; f < fns.size(); ++f)
      succ[f].push_back(fns[f].second(b));
  }

  std::map<std::string, double> p;
  for (std::size_t f = 0; f < fns.size(); ++f)
    p[fns[f].first] = ks_two_sample_p(marg[f], succ[f]);
  return p;
}

}  // namespace testutil
