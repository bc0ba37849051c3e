#include "doctest.h"

#include "dsen/analysis.hpp"
#include "dsen/error.hpp"

using namespace dsen;

namespace {

data::Dataset coupled(std::uint64_t seed) {
  data::GeneratorConfig g;
  g.n_stranger_pairs = 10;
  g.n_friend_pairs = 14;
  g.n_channels = 4;
  g.n_segments = 3;
  g.windows_per_pair = 1;
  g.seed = seed;
  return data::generate(g);
}

}  // namespace

TEST_CASE("pair observations carry metadata from the dataset") {
  const auto ds = coupled(3);
  const auto obs = analysis::pair_observations(ds, {"beta", "gamma"});
  REQUIRE(obs.size() == 24);
  int friends = 0;
  for (const auto& o : obs) {
    friends += o.relation;
    CHECK(o.feature.isc_per_band.size() == 2);
    CHECK(o.feature.plv_per_band.size() == 2);
  }
  CHECK(friends == 14);
  for (const auto& s : ds.samples) {
    const auto& o = obs[static_cast<std::size_t>(s.pair_id)];
    CHECK(o.pair_id == std::to_string(s.pair_id));
    CHECK(o.same_gender == s.same_gender);
  }
}

TEST_CASE("relation table flags the coupled bands") {
  const std::vector<std::string> bands{"theta", "alpha", "beta", "gamma"};
  const auto report = analysis::synchrony_stats(coupled(8), bands, "relation");
  REQUIRE(report.rows.size() == 8);
  CHECK(report.n_group_a == 14);
  CHECK(report.n_group_b == 10);
  CHECK(report.rows[0].feature == synchrony::Feature::PLV);
  CHECK(report.rows[0].band == "theta");
  CHECK(report.rows[6].feature == synchrony::Feature::ISC);
  CHECK(report.rows[6].band == "beta");
  CHECK(report.rows[6].p_value < 0.05);
  CHECK(report.rows[7].p_value < 0.05);
  CHECK(report.rows[6].statistic > 0.0);
}

TEST_CASE("observations computed once give the same table") {
  const auto ds = coupled(2);
  const std::vector<std::string> bands{"alpha", "gamma"};
  const auto obs = analysis::pair_observations(ds, bands);
  for (const char* iv : {"relation", "gender"}) {
    const auto a = analysis::synchrony_stats(ds, bands, iv);
    const auto b = analysis::synchrony_stats(obs, bands, iv);
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
      CHECK(a.rows[i].iv == iv);
      CHECK(a.rows[i].p_value == b.rows[i].p_value);
      CHECK(a.rows[i].statistic == b.rows[i].statistic);
    }
  }
}

TEST_CASE("analysis rejects unknown variables and bands") {
  const auto ds = coupled(1);
  CHECK_THROWS_AS(analysis::synchrony_stats(ds, {"beta"}, "age"), ConfigError);
  CHECK_THROWS_AS(analysis::pair_observations(ds, {"delta"}), ConfigError);
  CHECK_THROWS_AS(analysis::pair_observations(ds, {}), ConfigError);
}
