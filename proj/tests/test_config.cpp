#include <fstream>

#include "doctest.h"
#include "pbsdet/config.hpp"
#include "test_util.hpp"

using namespace pbsdet;
using nlohmann::json;

namespace {

json base_config() {
  return json::parse(R"({
    "seed": 3,
    "out_dir": "runs/x",
    "anchors": {"feature_w": 8, "feature_h": 8, "stride": 8.0,
                "scales": [1.5, 2.0, 2.5, 3.5]},
    "rule": {"kind": "split_two", "bound_pos": 0.4, "bound_neg": 0.3,
             "bound_1": 0.4, "score_1": 0.8, "bound_2": 0.5, "score_2": 0.9},
    "loss": {"lambda": 300.0},
    "net": {"channels": [16, 32, 64, 64], "total_stride": 8},
    "train": {"head": "precise_sigmoid", "iterations": 10}
  })");
}

}  // namespace

TEST_CASE("config: valid file parses and wires the cross fields") {
  const ExperimentConfig c = ExperimentConfig::from_json(base_config());
  CHECK(c.seed == 3);
  CHECK(c.rule.kind == RuleKind::SplitTwo);
  CHECK(c.rule.score_2 == doctest::Approx(0.9));
  CHECK(c.train.head == HeadType::PreciseSigmoid);
  CHECK(c.train.rule.kind == RuleKind::SplitTwo);
  CHECK(c.train.anchors.feature_w == 8);
  CHECK(c.train.seed == 3);
  const NetArch arch = c.net.to_arch(c.anchors.num_scales(), c.train.head);
  CHECK(arch.total_stride() == 8);
  CHECK(arch.strides == std::vector<int>{2, 2, 2, 1});
}

TEST_CASE("config: unknown keys are rejected at every level") {
  json j = base_config();
  j["surprise"] = 1;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

  j = base_config();
  j["train"]["surprise"] = 1;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

  j = base_config();
  j["anchors"]["extra"] = true;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

  j = base_config();
  j["rule"]["bounds"] = 0.4;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
}

TEST_CASE("config: invariant violations fail fast") {
  json j = base_config();
  j["rule"]["bound_neg"] = 0.8;  // neg > pos
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

  j = base_config();
  j["loss"]["lambda"] = -1.0;
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

  j = base_config();
  j["train"]["head"] = "tanh";
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

  j = base_config();
  j["net"]["total_stride"] = 12;  // not a power of two
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

  j = base_config();
  j["anchors"]["scales"] = json::array();
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);

  j = base_config();
  j["distill"] = {{"student_init", "warm"}};
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ConfigError);
}

TEST_CASE("config: every rule kind parses") {
  json j = base_config();
  j["rule"] = {{"kind", "binary"}, {"bound_pos", 0.7}, {"bound_neg", 0.3}};
  CHECK(ExperimentConfig::from_json(j).rule.kind == RuleKind::Binary);

  j["rule"] = {{"kind", "shift"}, {"bound_pos", 0.4}, {"bound_neg", 0.3},
               {"shift_a", 0.6}};
  CHECK(ExperimentConfig::from_json(j).rule.shift_a == doctest::Approx(0.6));

  j["rule"] = {{"kind", "split_one"}, {"bound_pos", 0.4}, {"bound_neg", 0.3},
               {"bound_1", 0.7}, {"score_1", 0.8}};
  const ExperimentConfig c = ExperimentConfig::from_json(j);
  CHECK(c.rule.kind == RuleKind::SplitOne);
  CHECK(c.rule.describe() == "pos0.4+split_0.7_0.8");
}

TEST_CASE("config: file load, echo round trip") {
  TempDir tmp;
  {
    std::ofstream os(tmp.file("cfg.json"));
    os << base_config().dump(2);
  }
  const ExperimentConfig c = ExperimentConfig::load(tmp.file("cfg.json"));
  // the echo must itself be a valid config with identical contents
  const ExperimentConfig back = ExperimentConfig::from_json(c.to_json());
  CHECK(back.seed == c.seed);
  CHECK(back.rule.kind == c.rule.kind);
  CHECK(back.rule.score_1 == c.rule.score_1);
  CHECK(back.net.channels == c.net.channels);
  CHECK(back.eval.fp_budgets == c.eval.fp_budgets);

  CHECK_THROWS_AS(ExperimentConfig::load(tmp.file("missing.json")), ConfigError);
  {
    std::ofstream os(tmp.file("bad.json"));
    os << "{ not json";
  }
  CHECK_THROWS_AS(ExperimentConfig::load(tmp.file("bad.json")), ConfigError);
}

TEST_CASE("eval budgets scale with dataset size, rounded up") {
  EvalConfig e;
  e.fp_budgets = {100, 500, 1000};
  e.budget_reference_gts = 5171;
  // 180 gts at desk scale: 100*180/5171 = 3.48 -> 4, etc.
  CHECK(e.scaled(180) == std::vector<int>{4, 18, 35});
  e.scale_budgets = false;
  CHECK(e.scaled(180) == std::vector<int>{100, 500, 1000});
}
