#pragma once

#include <string>
#include <vector>

#include "dsen/dataio.hpp"
#include "dsen/synchrony.hpp"

namespace dsen::analysis {

/// Per-pair ISC and PLV in each named band over all of the pair's windows.
std::vector<synchrony::PairObservation> pair_observations(const data::Dataset& ds,
                                                          const std::vector<std::string>& bands);

/// The t-test table for one independent variable, "relation" or "gender".
/// Unknown bands or variables raise ConfigError.
synchrony::SynchronyReport synchrony_stats(const data::Dataset& ds, const std::vector<std::string>& bands,
                                           const std::string& iv);

/// Same, from observations computed once.
synchrony::SynchronyReport synchrony_stats(const std::vector<synchrony::PairObservation>& obs,
                                           const std::vector<std::string>& bands, const std::string& iv);

}  // namespace dsen::analysis
