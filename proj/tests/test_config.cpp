#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "hypogen/config.hpp"

using namespace hypogen;

TEST(RunConfig, DefaultsAreValidAndEchoed) {
  RunConfig c;
  EXPECT_NO_THROW(c.validate());
  const auto j = c.to_json();
  EXPECT_EQ(j.size(), RunConfig::keys().size());
  EXPECT_EQ(j["mode"], "sim_only");
  EXPECT_EQ(j["epochs"], "30");
  EXPECT_EQ(j["learning_rate"], "3e-04");  // shortest round-trip form
  EXPECT_EQ(j["gumbel"], "true");
}

TEST(RunConfig, EveryKeyRoundTripsThroughItsTextForm) {
  RunConfig a;
  a.set("lambda_kld", "0.123456789");
  a.set("tau", "0.3");
  a.set("mode", "joint");
  a.set("data_dir", "/tmp/some dir");
  RunConfig b;
  for (const auto& k : RunConfig::keys()) b.set(k, a.get(k));
  for (const auto& k : RunConfig::keys()) EXPECT_EQ(b.get(k), a.get(k)) << k;
  EXPECT_EQ(b.train.lambda_kld, 0.123456789);
  EXPECT_EQ(b.train.tau, 0.3);
  EXPECT_EQ(b.train.mode, Mode::Joint);
  EXPECT_EQ(b.data_dir, "/tmp/some dir");
}

TEST(RunConfig, ValuesAreTypeChecked) {
  RunConfig c;
  EXPECT_THROW(c.set("epochs", "ten"), ConfigError);
  EXPECT_THROW(c.set("epochs", "-1"), ConfigError);
  EXPECT_THROW(c.set("epochs", "3x"), ConfigError);
  EXPECT_THROW(c.set("learning_rate", ""), ConfigError);
  EXPECT_THROW(c.set("gumbel", "maybe"), ConfigError);
  EXPECT_THROW(c.set("mode", "reinforce"), ConfigError);
  EXPECT_THROW(c.set("no_such_key", "1"), ConfigError);
  c.set("gumbel", "0");
  EXPECT_FALSE(c.train.gumbel);
  c.set("straight_through", "false");
  EXPECT_FALSE(c.train.straight_through);
}

TEST(RunConfig, ValidationCatchesInconsistencies) {
  RunConfig c;
  c.set("warmup_epochs", "40");
  EXPECT_THROW(c.validate(), ConfigError);
  RunConfig d;
  d.set("n_heads", "3");
  EXPECT_THROW(d.validate(), ConfigError);
  RunConfig e;
  e.set("corpus_repeats", "0");
  EXPECT_THROW(e.validate(), ConfigError);
}

TEST(ParseConfig, SkipsCommentsAndBlankLines) {
  std::istringstream in("# a comment\n\n  epochs = 7  \nmode=e2e\r\n\ttau\t=\t0.5\n");
  RunConfig c;
  parse_config(in, c);
  EXPECT_EQ(c.train.epochs, 7u);
  EXPECT_EQ(c.train.mode, Mode::E2E);
  EXPECT_EQ(c.train.tau, 0.5);
}

TEST(ParseConfig, ErrorsNameTheLine) {
  std::istringstream unknown("epochs = 3\nbogus = 1\n");
  RunConfig c;
  try {
    parse_config(unknown, c, "run.cfg");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos) << e.what();
  }
  std::istringstream no_eq("epochs 3\n");
  EXPECT_THROW(parse_config(no_eq, c), ConfigError);
}

TEST(LoadConfig, MissingFileIsAnIoError) {
  EXPECT_THROW(load_config("/nonexistent/dir/run.cfg"), IoError);
}

TEST(EnvOverride, SeedComesFromTheEnvironment) {
  RunConfig c;
  c.set("seed", "3");
  ::setenv("HYPOGEN_SEED", "42", 1);
  apply_env_overrides(c);
  EXPECT_EQ(c.train.seed, 42u);
  ::setenv("HYPOGEN_SEED", "x", 1);
  EXPECT_THROW(apply_env_overrides(c), ConfigError);
  ::unsetenv("HYPOGEN_SEED");
  apply_env_overrides(c);
  EXPECT_EQ(c.train.seed, 42u);
}
