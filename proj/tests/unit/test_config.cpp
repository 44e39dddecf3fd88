#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "torch_doctest.hpp"

#include <filesystem>

#include "loctex/config.hpp"

using namespace loctex;

TEST_CASE("full preset carries the large-scale schedule") {
  const auto cfg = TrainConfig::full();
  CHECK(cfg.batch_size == 1024);
  CHECK(cfg.epochs == 600);
  CHECK(cfg.warmup_epochs == 20);
  CHECK(cfg.lr_visual == 0.4);
  CHECK(cfg.lr_textual == 0.002);
  CHECK(cfg.lr_heads == 0.4);
  CHECK(cfg.model.input_size == 224);
  CHECK(cfg.model.textual.layers == 4);
  CHECK(cfg.model.textual.width == 1024);
  CHECK(cfg.model.textual.heads == 16);
  CHECK(cfg.model.heads.embed_dim == 1024);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("ini round trip preserves every field") {
  TrainConfig cfg = TrainConfig::toy();
  cfg.loss.tau = 0.07;
  cfg.loss.denominator = DenominatorMode::kStandard;
  cfg.loss.symmetric = true;
  cfg.loss.scales = {1};
  cfg.augment.flip = false;
  cfg.augment.crop_min_scale = 0.35;
  cfg.lr_textual = 0.0123456789;
  cfg.seed = 1234567890123ull;
  cfg.dataset = "/tmp/data";
  cfg.output_dir = "/tmp/run";
  cfg.model.visual.layers = {2, 1, 1, 1};
  cfg.checkpoint_every = 5;

  const auto back = TrainConfig::from_ini(cfg.to_ini());
  CHECK(back.to_ini() == cfg.to_ini());
  CHECK(back.loss.denominator == DenominatorMode::kStandard);
  CHECK(back.lr_textual == cfg.lr_textual);
  CHECK(back.seed == cfg.seed);
  CHECK(back.model.visual.layers == std::vector<int>{2, 1, 1, 1});
}

TEST_CASE("omitted keys keep the preset value") {
  const auto cfg = TrainConfig::from_ini("[model]\npreset = full\n[optim]\nepochs = 30\n");
  CHECK(cfg.batch_size == 1024);
  CHECK(cfg.epochs == 30);
  CHECK(cfg.model.input_size == 224);

  const auto toy = TrainConfig::from_ini("");
  CHECK(toy.to_ini() == TrainConfig::toy().to_ini());
}

TEST_CASE("unknown keys and bad values are rejected") {
  CHECK_THROWS_AS(TrainConfig::from_ini("[optim]\nbatchsize = 3\n"), std::invalid_argument);
  CHECK_THROWS_AS(TrainConfig::from_ini("[nope]\nx = 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(TrainConfig::from_ini("[optim]\nepochs = ten\n"), std::invalid_argument);
  CHECK_THROWS_AS(TrainConfig::from_ini("[optim]\nepochs = 10x\n"), std::invalid_argument);
  CHECK_THROWS_AS(TrainConfig::from_ini("[loss]\nsymmetric = maybe\n"), std::invalid_argument);
  CHECK_THROWS_AS(TrainConfig::from_ini("[loss]\ndenominator = weird\n"), std::invalid_argument);
  CHECK_THROWS_AS(TrainConfig::from_ini("[model]\npreset = huge\n"), std::invalid_argument);
  CHECK_THROWS_AS(TrainConfig::from_ini("[model]\nscales = 1,a\n"), std::invalid_argument);
}

TEST_CASE("validation catches inconsistent settings") {
  CHECK_THROWS_AS(TrainConfig::from_ini("[optim]\nepochs = 5\nwarmup_epochs = 5\n"), std::invalid_argument);
  CHECK_THROWS_AS(TrainConfig::from_ini("[optim]\nlr_heads = 0\n"), std::invalid_argument);
  CHECK_THROWS_AS(TrainConfig::from_ini("[loss]\ntau = 0\n"), std::invalid_argument);
  CHECK_THROWS_AS(TrainConfig::from_ini("[model]\ninput_size = 50\n"), std::invalid_argument);
  CHECK_THROWS_AS(TrainConfig::from_ini("[model]\nscales = 1\n[loss]\nscales = 1,2\n"), std::invalid_argument);
  CHECK_THROWS_AS(TrainConfig::from_ini("[model]\ntext_width = 30\ntext_heads = 4\n"), std::invalid_argument);
}

TEST_CASE("save and load through a file") {
  const auto dir = std::filesystem::temp_directory_path() / "loctex_test_config";
  std::filesystem::create_directories(dir);
  TrainConfig cfg = TrainConfig::toy();
  cfg.epochs = 7;
  cfg.warmup_epochs = 2;
  cfg.save(dir / "run.ini");
  CHECK(TrainConfig::load(dir / "run.ini").epochs == 7);
  CHECK_THROWS(TrainConfig::load(dir / "missing.ini"));
  std::filesystem::remove_all(dir);
}
