#include <gtest/gtest.h>

#include <fstream>

#include "support.hpp"

using namespace egmae;
using namespace egmae::testing;

namespace {

std::filesystem::path write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
  return p;
}

}  // namespace

TEST(Config, DefaultsValidateAndRoundTrip) {
  const PipelineConfig c;
  EXPECT_NO_THROW(c.validate());
  const auto j = to_json(c);
  EXPECT_EQ(to_json(config_from_json(j)), j);
}

TEST(Config, TomlAndJsonAgree) {
  const auto dir = temp_dir("config_parity");
  const auto toml = write(dir / "c.toml", R"J([noise]
sigma_scale = 0.5
normalize_entropy = true
[pretrain]
epochs = 3
loss_patch_policy = "top-quantile(0.25)"
[model]
stage_dims = [8, 16, 32]
)J");
  const auto json = write(dir / "c.json", R"J({"noise": {"sigma_scale": 0.5, "normalize_entropy": true},
"pretrain": {"epochs": 3, "loss_patch_policy": "top-quantile(0.25)"},
"model": {"stage_dims": [8, 16, 32]}})J");
  const auto a = resolve_config(toml), b = resolve_config(json);
  EXPECT_EQ(to_json(a), to_json(b));
  EXPECT_EQ(a.pretrain.epochs, 3u);
  EXPECT_DOUBLE_EQ(a.noise.sigma_scale, 0.5);
  EXPECT_EQ(a.pretrain.loss_policy.kind, LossPatchPolicy::Kind::TopQuantile);
  EXPECT_EQ(a.encoder.stage_dims, (std::vector<std::size_t>{8, 16, 32}));
}

TEST(Config, OverridesWinOverFile) {
  const auto dir = temp_dir("config_override");
  const auto f = write(dir / "c.toml", "[pretrain]\nepochs = 3\nseed = 9\n");
  const auto c = resolve_config(f, {"pretrain.epochs=7", "noise.normalize_entropy=true", "eval.split=val"});
  EXPECT_EQ(c.pretrain.epochs, 7u);
  EXPECT_EQ(c.pretrain.seed, 9u);
  EXPECT_TRUE(c.noise.normalize_entropy);
  EXPECT_EQ(c.eval_split, "val");
}

TEST(Config, UnknownKeysRejected) {
  const auto dir = temp_dir("config_unknown");
  EXPECT_THROW(resolve_config(write(dir / "a.toml", "[pretrain]\nepoch = 3\n")), ConfigError);
  EXPECT_THROW(resolve_config(write(dir / "b.toml", "[optimizer]\nlr = 3\n")), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {"pretrain.learning_rate=1"}), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {"pretrain_epochs=1"}), ConfigError);
  try {
    resolve_config(write(dir / "c.toml", "[noise]\nsigma = 1.0\n"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("noise.sigma"), std::string::npos) << e.what();
  }
}

TEST(Config, RunSectionIsFreeForm) {
  const auto dir = temp_dir("config_run");
  const auto c = resolve_config(write(dir / "a.toml", "[run]\ncommand = \"pretrain\"\nanything = 1\n"),
                                {"run.data=x.csv"});
  EXPECT_EQ(c.run["command"], "pretrain");
  EXPECT_EQ(c.run["data"], "x.csv");
}

TEST(Config, SyntaxErrorsAndExtensions) {
  const auto dir = temp_dir("config_syntax");
  EXPECT_THROW(resolve_config(write(dir / "a.toml", "[pretrain\nepochs = 3\n")), ConfigError);
  EXPECT_THROW(resolve_config(write(dir / "b.json", "{\"pretrain\": ")), ConfigError);
  EXPECT_THROW(resolve_config(write(dir / "c.yaml", "pretrain: {}")), ConfigError);
  EXPECT_THROW(resolve_config(dir / "missing.toml"), ConfigError);
}

TEST(Config, SemanticValidation) {
  EXPECT_THROW(resolve_config(std::nullopt, {"data.image_size=40"}), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {"pretrain.lr_min=1"}), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {"pretrain.epochs=0"}), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {"noise.sigma_scale=-1"}), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {"eval.split=holdout"}), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {"data.mean=[0.5, 0.5]", "data.std=[0.2, 0.2]"}), ConfigError);
  EXPECT_THROW(resolve_config(std::nullopt, {"pretrain.epochs=\"ten\""}), ConfigError);
}

TEST(LossPolicy, ParseForms) {
  EXPECT_EQ(LossPatchPolicy::parse("all").kind, LossPatchPolicy::Kind::All);
  const auto a = LossPatchPolicy::parse("top-quantile(0.75)");
  EXPECT_EQ(a.kind, LossPatchPolicy::Kind::TopQuantile);
  EXPECT_DOUBLE_EQ(a.quantile, 0.75);
  EXPECT_DOUBLE_EQ(LossPatchPolicy::parse("top-quantile:0.5").quantile, 0.5);
  EXPECT_DOUBLE_EQ(LossPatchPolicy::parse(a.str()).quantile, 0.75);
  EXPECT_DOUBLE_EQ(LossPatchPolicy::parse("top-quantile(0)").quantile, 0.0);
  for (const char* bad : {"top-quantile(1)", "top-quantile(-0.1)", "top-quantile(0.5", "top-quantile(x)", "some"}) {
    EXPECT_THROW(LossPatchPolicy::parse(bad), ConfigError) << bad;
  }
}

TEST(Config, DeskConfigLoads) {
  const auto c = resolve_config(std::filesystem::path(EGMAE_SOURCE_DIR) / "configs" / "desk.toml");
  EXPECT_TRUE(c.noise.normalize_entropy);
  EXPECT_EQ(c.pretrain.epochs, 30u);
  EXPECT_EQ(c.finetune.epochs, 15u);
  EXPECT_EQ(c.data.image_size, 32u);
}
