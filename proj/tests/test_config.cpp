#include <doctest.h>

#include "sketchkp/config.hpp"

using namespace sketchkp;

namespace {

const char* kSampleConfig = R"(# run settings
[dataset]
index = "data/index.json"
image_size = 384

[encoder]
backbone = "tiny"     # small net for tests
freeze = false
xi = 14.0

[locator]
scales = [8, 12, 16]

[trainer]
k = 1
m = 5
iterations = 200
learning_rate = 1e-4
lambda_da = 0.001
t_values = [0.25, 0.5, 0.75]
eval_classes = ["cat", "dog"]
)";

}  // namespace

TEST_CASE("config parser handles sections, comments, and typed values") {
  ConfigMap map = ConfigMap::parse_text(kSampleConfig, "<test>");
  CHECK(map.at("dataset.index").as_text("dataset.index") == "data/index.json");
  CHECK(map.at("dataset.image_size").as_int("dataset.image_size") == 384);
  CHECK(map.at("encoder.freeze").as_bool("encoder.freeze") == false);
  CHECK(map.at("encoder.xi").as_real("encoder.xi") == 14.0);
  CHECK(map.at("trainer.learning_rate").as_real("lr") == doctest::Approx(1e-4));
  auto scales = map.at("locator.scales").as_int_list("locator.scales");
  REQUIRE(scales.size() == 3);
  CHECK(scales[1] == 12);
  auto classes = map.at("trainer.eval_classes").as_text_list("trainer.eval_classes");
  REQUIRE(classes.size() == 2);
  CHECK(classes[0] == "cat");
}

TEST_CASE("config parser rejects malformed input") {
  CHECK_THROWS_AS(ConfigMap::parse_text("[broken\nk = 1\n", "<t>"), ParseError);
  CHECK_THROWS_AS(ConfigMap::parse_text("just a line\n", "<t>"), ParseError);
  CHECK_THROWS_AS(ConfigMap::parse_text("[a]\nk = \n", "<t>"), ParseError);
  CHECK_THROWS_AS(ConfigMap::parse_text("[a]\nk = [1, [2]]\n", "<t>"), ParseError);
  CHECK_THROWS_AS(ConfigMap::parse_text("[a]\nk = 1\nk = 2\n", "<t>"), ParseError);
  // Bare words are not valid values in files (only in CLI overrides).
  CHECK_THROWS_AS(ConfigMap::parse_text("[a]\nk = oops\n", "<t>"), ParseError);
}

TEST_CASE("integer values keep their type; floats promote on demand") {
  ConfigMap map = ConfigMap::parse_text("[a]\nn = 7\nx = 7.5\n", "<t>");
  CHECK(map.at("a.n").as_int("a.n") == 7);
  CHECK(map.at("a.n").as_real("a.n") == 7.0);
  CHECK_THROWS_AS(map.at("a.x").as_int("a.x"), ConfigError);
}

TEST_CASE("overrides replace values and default to the trainer section") {
  ConfigMap map = ConfigMap::parse_text(kSampleConfig, "<test>");
  map.apply_overrides({"seed=9", "trainer.lambda_da=0", "encoder.backbone=reference",
                       "trainer.modality_mode=photo_support"});
  CHECK(map.at("trainer.seed").as_int("trainer.seed") == 9);
  CHECK(map.at("trainer.lambda_da").as_real("trainer.lambda_da") == 0.0);
  CHECK(map.at("encoder.backbone").as_text("encoder.backbone") == "reference");
  CHECK(map.at("trainer.modality_mode").as_text("m") == "photo_support");
}

TEST_CASE("RunConfig resolves defaults and validates") {
  ConfigMap map = ConfigMap::parse_text(kSampleConfig, "<test>");
  RunConfig cfg = RunConfig::from_map(map);
  cfg.validate();
  CHECK(cfg.backbone == "tiny");
  CHECK(cfg.k == 1);
  CHECK(cfg.m == 5);
  CHECK(cfg.lambda_kp == 0.5);       // default
  CHECK(cfg.lambda_style == 0.001);  // default
  CHECK_FALSE(cfg.lambda_style_explicit);
  CHECK(cfg.iterations == 200);
  CHECK(cfg.eval_classes == std::vector<std::string>({"cat", "dog"}));
}

TEST_CASE("RunConfig rejects unknown keys") {
  ConfigMap map = ConfigMap::parse_text("[trainer]\nlerning_rate = 0.1\n", "<t>");
  CHECK_THROWS_WITH_AS(RunConfig::from_map(map),
                       doctest::Contains("trainer.lerning_rate"), ConfigError);
}

TEST_CASE("RunConfig validation catches bad values") {
  auto mutate = [&](const std::string& override_kv) {
    ConfigMap map = ConfigMap::parse_text(kSampleConfig, "<test>");
    map.apply_overrides({override_kv});
    RunConfig cfg = RunConfig::from_map(map);
    cfg.validate();
  };
  CHECK_THROWS_AS(mutate("encoder.backbone=resnet50"), ConfigError);
  CHECK_THROWS_AS(mutate("encoder.xi=0"), ConfigError);
  CHECK_THROWS_AS(mutate("locator.scales=[16, 12]"), ConfigError);
  CHECK_THROWS_AS(mutate("locator.scales=[]"), ConfigError);
  CHECK_THROWS_AS(mutate("k=0"), ConfigError);
  CHECK_THROWS_AS(mutate("lambda_da=-0.5"), ConfigError);
  CHECK_THROWS_AS(mutate("t_values=[0.5, 1.5]"), ConfigError);
  CHECK_THROWS_AS(mutate("modality_mode=sketchy"), ConfigError);
  CHECK_NOTHROW(mutate("lambda_da=0"));
}

TEST_CASE("multimodal mode shrinks the style weight unless set explicitly") {
  ConfigMap m1 = ConfigMap::parse_text(kSampleConfig, "<t>");
  m1.apply_overrides({"modality_mode=multimodal"});
  RunConfig c1 = RunConfig::from_map(m1);
  CHECK(c1.effective_lambda_style() == doctest::Approx(1e-8));

  ConfigMap m2 = ConfigMap::parse_text(kSampleConfig, "<t>");
  m2.apply_overrides({"modality_mode=multimodal", "lambda_style=0.01"});
  RunConfig c2 = RunConfig::from_map(m2);
  CHECK(c2.effective_lambda_style() == doctest::Approx(0.01));

  ConfigMap m3 = ConfigMap::parse_text(kSampleConfig, "<t>");
  RunConfig c3 = RunConfig::from_map(m3);
  CHECK(c3.effective_lambda_style() == doctest::Approx(0.001));
}

TEST_CASE("canonical form is stable and drives the hash") {
  ConfigMap m1 = ConfigMap::parse_text(kSampleConfig, "<t>");
  RunConfig c1 = RunConfig::from_map(m1);
  ConfigMap m2 = ConfigMap::parse_text(kSampleConfig, "<t>");
  RunConfig c2 = RunConfig::from_map(m2);
  CHECK(c1.canonical() == c2.canonical());
  CHECK(c1.hash() == c2.hash());
  c2.seed = 1234;
  CHECK(c1.hash() != c2.hash());
  // Every configured key appears in the canonical dump.
  CHECK(c1.canonical().find("trainer.seed = 0\n") != std::string::npos);
  CHECK(c1.canonical().find("encoder.backbone = \"tiny\"\n") != std::string::npos);
}
