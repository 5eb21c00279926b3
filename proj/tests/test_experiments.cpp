#include <set>

#include "doctest.h"
#include "isrkd/error.hpp"
#include "isrkd/experiments.hpp"

using namespace isrkd;

TEST_CASE("grid spec parsing") {
  const auto spec = parse_grid_spec(
      "direction = reverse\n"
      "pool_size = 64\n"
      "seeds = 0, 1,2\n"
      "epochs = 5\n"
      "lambda_edge = 0.5\n"
      "setting.2.name = kd\n"
      "setting.2.mix = 16,32\n"
      "setting.2.lambda_kd_response = 2\n"
      "setting.1.mix = 0,32\n");
  CHECK(spec.pretrained == Domain::target);
  CHECK(spec.incremental() == Domain::source);
  CHECK(spec.pool_size == 64);
  CHECK(spec.seeds == std::vector<std::uint64_t>{0, 1, 2});
  CHECK(spec.base.epochs == 5);
  REQUIRE(spec.settings.size() == 2);
  CHECK(spec.settings[0].name == "setting1");
  CHECK(spec.settings[0].mix == MixSpec{0, 32});
  CHECK(spec.settings[0].weights.edge == 0.5);
  CHECK(spec.settings[1].name == "kd");
  CHECK(spec.settings[1].weights.kd_response == 2.0);
  CHECK(spec.settings[1].weights.edge == 0.5);
  CHECK(experiment_id(spec, spec.settings[1], 2) == "kd_s2");

  const auto single = parse_grid_spec("setting.1.name = a\nsetting.1.mix = 0,8\n");
  CHECK(experiment_id(single, single.settings[0], 0) == "a");
  CHECK(single.pretrained == Domain::source);

  CHECK_THROWS_AS(parse_grid_spec(""), ConfigError);
  CHECK_THROWS_AS(parse_grid_spec("setting.1.name = a\n"), ConfigError);
  CHECK_THROWS_AS(parse_grid_spec("setting.1.mix = 0,8\nsetting.1.colour = red\n"), ConfigError);
  CHECK_THROWS_AS(parse_grid_spec("setting.x.mix = 0,8\n"), ConfigError);
  CHECK_THROWS_AS(parse_grid_spec("setting.1.mix = 0,8\ndirection = sideways\n"), ConfigError);
  CHECK_THROWS_AS(parse_grid_spec("setting.1.mix = 0,8\nwidgets = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_grid_spec("setting.1.mix = 0,300\n"), ConfigError);
  CHECK_THROWS_AS(parse_grid_spec("setting.1.name = a\nsetting.1.mix = 0,8\nsetting.2.name = a\nsetting.2.mix = 0,8\n"),
                  ConfigError);
  CHECK_THROWS_AS(parse_grid_spec("seeds = \nsetting.1.mix = 0,8\n"), ConfigError);
}

TEST_CASE("experiment data is deterministic and disjoint") {
  const auto a = make_experiment_data(4, 10, 3);
  const auto b = make_experiment_data(4, 10, 3);
  for (Domain d : {Domain::source, Domain::target}) {
    REQUIRE(a.pool_of(d).size() == 10);
    REQUIRE(a.test_of(d).size() == 3);
    std::set<std::uint64_t> ids;
    for (const auto& s : a.pool_of(d)) {
      CHECK(s.domain == d);
      ids.insert(s.id);
    }
    for (const auto& s : a.test_of(d)) CHECK(ids.insert(s.id).second);
    for (std::size_t i = 0; i < 3; ++i) CHECK(a.test_of(d)[i].hr == b.test_of(d)[i].hr);
  }
  CHECK_FALSE(make_experiment_data(5, 10, 3).test_of(Domain::source)[0].hr == a.test_of(Domain::source)[0].hr);
  CHECK_THROWS_AS(make_experiment_data(1, 0, 3), ConfigError);
}
