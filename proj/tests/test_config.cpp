#include <gtest/gtest.h>

#include "piecer/config.hpp"

using namespace piecer;

namespace {

std::string error_path(const std::vector<std::string>& overrides) {
  try {
    load_run_config("", overrides);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<no error>";
}

}  // namespace

TEST(RunConfig, DefaultsFollowTrainingRecipe) {
  const auto c = load_run_config("", {});
  EXPECT_EQ(c.model.piecer.layers, 3u);
  EXPECT_EQ(c.model.piecer.heads, 4u);
  EXPECT_EQ(c.model.piecer.dropout, 0.1);
  EXPECT_EQ(c.model.dropout, 0.1);
  EXPECT_EQ(c.train.ema_decay, 0.9999);
  EXPECT_EQ(c.train.adamw.beta1, 0.9);
  EXPECT_EQ(c.train.adamw.beta2, 0.98);
  EXPECT_EQ(c.train.adamw.eps, 1e-6);
  EXPECT_EQ(c.train.adamw.weight_decay, 0.01);
  EXPECT_EQ(c.train.learning_rate, 1e-3);
  EXPECT_EQ(c.train.batch_size, 32u);
  EXPECT_EQ(c.train.epochs, 30u);
  EXPECT_EQ(c.kge.dim, 100u);
  EXPECT_EQ(c.kge.epochs, 10000u);
  EXPECT_EQ(c.kge.learning_rate, 1e-5);
  EXPECT_EQ(c.model.plugs.size(), 2u);
  EXPECT_EQ(c.gradcheck.h, 1e-5);
  EXPECT_EQ(c.gradcheck.tolerance, 1e-5);
}

TEST(RunConfig, EchoRoundTrips) {
  const auto c = load_run_config("", {"data.mode=pattern", "piecer.combiner=residual", "model.plugs=[]"}, 11);
  const auto j = to_json(c);
  EXPECT_EQ(to_json(parse_run_config(j)), j);
  EXPECT_EQ(j["data"]["mode"], "pattern");
  EXPECT_EQ(j["seed"], 11);
  EXPECT_FALSE(j["piecer"].contains("hidden"));
}

TEST(RunConfig, OverridesBeatFileAndSeedBeatsOverrides) {
  nlohmann::json file = {{"seed", 1}, {"train", {{"epochs", 7}}}};
  apply_override(file, "train.epochs=9");
  apply_override(file, "seed=2");
  const auto c = parse_run_config(file);
  EXPECT_EQ(c.train.epochs, 9u);
  EXPECT_EQ(c.seed, 2u);
  EXPECT_EQ(c.kge.seed, 2u);
  EXPECT_EQ(c.data.seed, 2u);
  EXPECT_EQ(load_run_config("", {"seed=3"}, 4).seed, 4u);
}

TEST(RunConfig, FieldPathDiagnostics) {
  EXPECT_EQ(error_path({"train.epoch=5"}), "train.epoch");
  EXPECT_EQ(error_path({"bogus=1"}), "bogus");
  EXPECT_EQ(error_path({"piecer.edges.semantic=true"}), "piecer.edges.semantic");
  EXPECT_EQ(error_path({"train.epochs=-1"}), "train.epochs");
  EXPECT_EQ(error_path({"train.epochs=2.5"}), "train.epochs");
  EXPECT_EQ(error_path({"train.learning_rate=fast"}), "train.learning_rate");
  EXPECT_EQ(error_path({"piecer.use_injection=1"}), "piecer.use_injection");
  EXPECT_EQ(error_path({"piecer.combiner=gin"}), "piecer.combiner");
  EXPECT_EQ(error_path({"model.plugs=[\"after-embedding\",\"middle\"]"}), "model.plugs[1]");
  EXPECT_EQ(error_path({"kge.method=rotate"}), "kge.method");
  EXPECT_EQ(error_path({"train.epochs=0"}), "train");
  EXPECT_EQ(error_path({"version=2"}), "version");
  EXPECT_EQ(error_path({"model=3"}), "model");
}

TEST(RunConfig, PiecerHeadsMustDivideEncoderWidth) {
  EXPECT_EQ(error_path({"model.hidden=30", "model.heads=3"}), "piecer");
  EXPECT_NO_THROW(load_run_config("", {"model.hidden=30", "model.heads=3", "piecer.heads=3"}));
}

TEST(RunConfig, MalformedOverride) {
  nlohmann::json j = nlohmann::json::object();
  EXPECT_THROW(apply_override(j, "train.epochs"), ConfigError);
  EXPECT_THROW(apply_override(j, "train..epochs=1"), ConfigError);
  EXPECT_THROW(apply_override(j, "=1"), ConfigError);
  apply_override(j, "seed=4");
  EXPECT_THROW(apply_override(j, "seed.x=1"), ConfigError);
}

TEST(RunConfig, ShippedPresetsParse) {
  for (const char* name : {"paper", "kge-paper", "kge-toy", "mrc-toy-overfit", "mrc-toy-khop", "gradcheck"}) {
    SCOPED_TRACE(name);
    const std::string path = std::string(PIECER_SOURCE_DIR) + "/configs/" + name + ".json";
    RunConfig c;
    ASSERT_NO_THROW(c = load_run_config(path, {}));
    EXPECT_EQ(c.name, name);
  }
}

TEST(RunConfig, ToyPresetsMatchAcceptanceSettings) {
  const std::string dir = std::string(PIECER_SOURCE_DIR) + "/configs/";
  const auto kge = load_run_config(dir + "kge-toy.json", {});
  EXPECT_EQ(kge.kge.dim, 16u);
  EXPECT_EQ(kge.kge.epochs, 500u);
  EXPECT_EQ(kge.kge.learning_rate, 1e-2);
  EXPECT_EQ(kge.seed, 7u);
  const auto overfit = load_run_config(dir + "mrc-toy-overfit.json", {});
  EXPECT_EQ(overfit.data.mode, SyntheticMode::kPattern);
  EXPECT_EQ(overfit.data.train_examples, 50u);
  EXPECT_EQ(overfit.seed, 11u);
  EXPECT_LE(overfit.train.epochs, 200u);
  const auto khop = load_run_config(dir + "mrc-toy-khop.json", {});
  EXPECT_EQ(khop.data.mode, SyntheticMode::kKnowledgeHop);
  EXPECT_EQ(khop.data.train_examples, 200u);
  EXPECT_EQ(khop.data.dev_examples, 50u);
  EXPECT_EQ(khop.seed, 13u);
  const auto paper = load_run_config(dir + "paper.json", {});
  EXPECT_EQ(paper.train.ema_decay, 0.9999);
  EXPECT_EQ(paper.kge.dim, 100u);
}
