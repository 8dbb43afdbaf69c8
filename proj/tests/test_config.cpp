#include <doctest.h>

#include <cstdlib>

#include "multitrans/config.hpp"

using namespace multitrans;

namespace {

struct EnvSeed {
  explicit EnvSeed(const char* value) { ::setenv("MULTITRANS_SEED", value, 1); }
  ~EnvSeed() { ::unsetenv("MULTITRANS_SEED"); }
};

}  // namespace

TEST_CASE("empty config gives defaults") {
  auto c = parse_config("");
  RunConfig d;
  CHECK(echo_config(c) == echo_config(d));
  CHECK(c.model.mode == FusionMode::multimodal);
}

TEST_CASE("nested keys") {
  auto c = parse_config(
      "seed: 7\n"
      "model:\n"
      "  mode: text_only\n"
      "  text:\n"
      "    variant: roberta\n"
      "    depth: 3\n"
      "train:\n"
      "  epochs: 5\n"
      "  learning_rate: 0.01\n"
      "  encoder_lr_scale: 0.5\n"
      "data:\n"
      "  filler_min: 1\n"
      "  filler_max: 2\n");
  CHECK(c.seed == 7);
  CHECK(c.model.mode == FusionMode::text_only);
  CHECK(c.model.text.variant == TextVariant::roberta);
  CHECK(c.model.text.depth == 3);
  CHECK(c.train.epochs == 5);
  CHECK(c.train.learning_rate == 0.01);
  CHECK(c.train.encoder_lr_scale == 0.5);
  CHECK(c.synth.filler_min == 1);
  CHECK(c.synth.filler_max == 2);
  c.finalize();
  CHECK(c.train.seed == 7);
  CHECK(c.synth.seed == 7);
}

TEST_CASE("bad input is a config error") {
  CHECK_THROWS_AS(parse_config("model:\n  colour: red\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("train:\n  epochs: 5\n  epochs: 6\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("train:\n  epochs: many\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("train:\n  epochs: -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("model:\n  mode: trimodal\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("- a\n- b\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("a: [1, 2\n"), ConfigError);
  auto c = parse_config("train:\n  learning_rate: -0.1\n");
  CHECK_THROWS_AS(c.finalize(), ConfigError);
  try {
    parse_config("nope: 1\n", "run.yaml");
    FAIL("accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("run.yaml") != std::string::npos);
    CHECK(std::string(e.what()).find("nope") != std::string::npos);
  }
}

TEST_CASE("echo round trip") {
  auto c = parse_config(
      "seed: 11\n"
      "model:\n"
      "  image:\n"
      "    variant: windowed\n"
      "  fusion:\n"
      "    hidden: 16\n"
      "train:\n"
      "  learning_rate: 0.000123456789\n"
      "  optimizer: sgd_momentum\n");
  const auto text = echo_config(c);
  auto back = parse_config(text);
  CHECK(echo_config(back) == text);
  CHECK(back.train.learning_rate == c.train.learning_rate);
  CHECK(back.model.image.variant == ImageVariant::windowed);
  CHECK(back.model.fusion.hidden == 16);
  CHECK(back.train.optimizer == OptimizerKind::sgd_momentum);
}

TEST_CASE("every documented key is accepted") {
  const auto keys = describe_config();
  CHECK(keys.find("train.encoder_lr_scale") != std::string::npos);
  CHECK(keys.find("model.text.final_norm") != std::string::npos);
  CHECK(keys.find("data.filler_max") != std::string::npos);
}

TEST_CASE("seed precedence") {
  auto c = parse_config("seed: 5\n");
  ::unsetenv("MULTITRANS_SEED");
  apply_seed_overrides(c, std::nullopt);
  CHECK(c.seed == 5);
  {
    EnvSeed env("9");
    apply_seed_overrides(c, std::nullopt);
    CHECK(c.seed == 9);
    apply_seed_overrides(c, 3);
    CHECK(c.seed == 3);
  }
  {
    EnvSeed env("x");
    CHECK_THROWS_AS(apply_seed_overrides(c, std::nullopt), ConfigError);
  }
  CHECK(parse_seed("42") == 42);
  CHECK_THROWS_AS(parse_seed("-1"), ConfigError);
}

TEST_CASE("adapt to dataset") {
  RunConfig c;
  Dataset d;
  d.height = 16;
  d.width = 24;
  d.channels = 1;
  d.vocab = Vocabulary::from_words({"a", "b", "c"});
  adapt_to_dataset(c, d);
  CHECK(c.model.image.height == 16);
  CHECK(c.model.image.width == 24);
  CHECK(c.model.text.vocab_size == d.vocab.size());
}
