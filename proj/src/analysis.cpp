#include "dsen/analysis.hpp"

#include <map>

#include "dsen/error.hpp"

namespace dsen::analysis {

std::vector<synchrony::PairObservation> pair_observations(const data::Dataset& ds,
                                                          const std::vector<std::string>& bands) {
  std::vector<signal::BandSpec> specs;
  for (const auto& b : bands) specs.push_back(signal::BandSpec::parse(b));
  if (specs.empty()) throw ConfigError("no bands requested");

  std::map<int, std::vector<const data::DyadicSample*>> by_pair;
  for (const auto& s : ds.samples) by_pair[s.pair_id].push_back(&s);

  std::vector<synchrony::PairObservation> out;
  for (const auto& [pid, windows] : by_pair) {
    std::vector<signal::EEGRecording> xs, ys;
    for (const auto* s : windows) {
      xs.push_back(ds.recording(*s, 0));
      ys.push_back(ds.recording(*s, 1));
    }
    synchrony::PairObservation obs;
    obs.pair_id = std::to_string(pid);
    obs.relation = windows.front()->label;
    obs.same_gender = windows.front()->same_gender;
    obs.feature = synchrony::pair_feature(xs, ys, specs);
    out.push_back(std::move(obs));
  }
  return out;
}

synchrony::SynchronyReport synchrony_stats(const std::vector<synchrony::PairObservation>& obs,
                                           const std::vector<std::string>& bands, const std::string& iv) {
  synchrony::Grouping grouping;
  if (iv == "relation") {
    grouping = synchrony::relation_grouping();
  } else if (iv == "gender") {
    grouping = synchrony::gender_grouping();
  } else {
    throw ConfigError("unknown independent variable '" + iv + "' (expected relation or gender)");
  }
  return synchrony::synchrony_table(obs, grouping, iv, bands);
}

synchrony::SynchronyReport synchrony_stats(const data::Dataset& ds, const std::vector<std::string>& bands,
                                           const std::string& iv) {
  if (iv != "relation" && iv != "gender") {
    throw ConfigError("unknown independent variable '" + iv + "' (expected relation or gender)");
  }
  return synchrony_stats(pair_observations(ds, bands), bands, iv);
}

}  // namespace dsen::analysis
