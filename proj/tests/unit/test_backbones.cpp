#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "torch_doctest.hpp"

#include "finite_diff.hpp"
#include "loctex/backbones.hpp"

using namespace loctex;

namespace {

torch::Tensor caption_ids(std::initializer_list<int64_t> content, int64_t length) {
  auto ids = torch::zeros({1, length}, torch::kLong);
  int64_t i = 0;
  for (auto v : content) ids[0][i++] = v;
  return ids;
}

}  // namespace

TEST_CASE("visual feature shapes follow the input size") {
  torch::manual_seed(0);
  for (int width : {8, 16}) {
    VisualConfig cfg;
    cfg.base_width = width;
    VisualBackbone net(cfg);
    net->eval();
    for (int s : {64, 96}) {
      const auto f = net(torch::randn({2, 3, s, s}));
      CHECK(f.final_map.sizes() == torch::IntArrayRef({2, width * 8, s / 32, s / 32}));
      CHECK(f.penult_map.sizes() == torch::IntArrayRef({2, width * 4, s / 16, s / 16}));
      CHECK(f.at_scale(4).size(2) == s / 8);
    }
    CHECK_THROWS_AS(net(torch::randn({1, 3, 48, 48})), std::invalid_argument);
    CHECK_THROWS_AS(net(torch::randn({1, 3, 64, 32})), std::invalid_argument);
  }
}

TEST_CASE("full preset widths") {
  const auto cfg = ModelConfig::full();
  CHECK(cfg.visual.out_channels() == 2048);
  CHECK(cfg.visual.stage_channels(2) == 1024);
  CHECK(cfg.final_resolution() == 7);
  CHECK(cfg.textual.width == 1024);
  CHECK(cfg.textual.heads == 16);
  CHECK(cfg.textual.layers == 4);
  CHECK(ModelConfig::toy(100).visual.out_channels() == 64);
}

TEST_CASE("full preset runs at 224") {
  torch::NoGradGuard guard;
  VisualBackbone net(ModelConfig::full().visual);
  net->eval();
  const auto f = net(torch::randn({1, 3, 224, 224}));
  CHECK(f.final_map.sizes() == torch::IntArrayRef({1, 2048, 7, 7}));
  CHECK(f.penult_map.sizes() == torch::IntArrayRef({1, 1024, 14, 14}));
}

TEST_CASE("text features have shape (D, L) and reject other lengths") {
  torch::manual_seed(1);
  TextualConfig cfg;
  cfg.vocab_size = 50;
  cfg.max_length = 12;
  cfg.width = 32;
  cfg.layers = 1;
  cfg.heads = 4;
  cfg.dropout = 0.0;
  TextualBackbone net(cfg);
  net->eval();
  const auto f = net(caption_ids({1, 7, 9, 2}, 12));
  CHECK(f.seq.sizes() == torch::IntArrayRef({1, 32, 12}));
  CHECK(f.pad_mask.sum().item<int64_t>() == 8);
  CHECK_THROWS_AS(net(caption_ids({1, 2}, 10)), std::invalid_argument);
}

TEST_CASE("content features ignore whatever sits in pad positions") {
  torch::manual_seed(2);
  auto cfg = ModelConfig::toy(40, 16).textual;
  TextualBackbone net(cfg);
  net->eval();
  torch::NoGradGuard guard;
  const auto ids = caption_ids({1, 5, 6, 7, 2}, 16);
  const auto before = net(ids).seq.narrow(2, 0, 5).clone();
  for (auto& p : net->named_parameters()) {
    if (p.key() == "token_embedding.weight") p.value()[0].normal_();
  }
  const auto after = net(ids).seq.narrow(2, 0, 5);
  CHECK(torch::allclose(before, after, 1e-6, 1e-6));
}

TEST_CASE("forward passes are deterministic in eval mode") {
  torch::manual_seed(3);
  LocTexModel model(ModelConfig::toy(40, 16));
  model->eval();
  torch::NoGradGuard guard;
  const auto images = torch::randn({2, 3, 64, 64});
  const auto ids = torch::cat({caption_ids({1, 4, 5, 2}, 16), caption_ids({1, 9, 2}, 16)});
  const auto a = model(images, ids);
  const auto b = model(images, ids);
  CHECK(torch::equal(a.embeddings.visual, b.embeddings.visual));
  CHECK(torch::equal(a.localization.visual.at(2), b.localization.visual.at(2)));
  CHECK(a.localization.visual.at(1).sizes() == torch::IntArrayRef({2, 32, 2, 2}));
  CHECK(a.localization.visual.at(2).sizes() == torch::IntArrayRef({2, 32, 4, 4}));
  CHECK(a.localization.textual.sizes() == torch::IntArrayRef({2, 32, 16}));
  CHECK(a.embeddings.textual.sizes() == torch::IntArrayRef({2, 32}));
  CHECK(model(images, ids, false).localization.visual.empty());
}

TEST_CASE("pooling matches brute-force means") {
  torch::manual_seed(4);
  const auto map = torch::randn({2, 3, 4, 5}, torch::kDouble);
  const auto pooled = spatial_mean(map);
  for (int n = 0; n < 2; ++n) {
    for (int c = 0; c < 3; ++c) {
      double sum = 0.0;
      for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 5; ++x) sum += map[n][c][y][x].item<double>();
      }
      CHECK(pooled[n][c].item<double>() == doctest::Approx(sum / 20.0));
    }
  }
  CHECK(torch::allclose(spatial_mean(torch::full({1, 2, 3, 3}, 2.5)), torch::full({1, 2}, 2.5)));

  const auto seq = torch::randn({1, 2, 6}, torch::kDouble);
  auto pad = torch::zeros({1, 6}, torch::kBool);
  pad[0][4] = true;
  pad[0][5] = true;
  const auto m = masked_sequence_mean(seq, pad);
  CHECK(m[0][1].item<double>() == doctest::Approx(seq[0][1].narrow(0, 0, 4).mean().item<double>()));
}

TEST_CASE("projection heads: zero weights, identity weights, position-wise") {
  torch::manual_seed(5);
  auto cfg = ModelConfig::toy(40, 16);
  cfg.heads.embed_dim = 64;
  ProjectionHeads heads(cfg);
  torch::NoGradGuard guard;
  VisualFeatures v;
  for (int s = 0; s < 4; ++s) v.stage_maps.push_back(torch::randn({1, cfg.visual.stage_channels(s), 16 >> s, 16 >> s}));
  v.final_map = v.stage_maps[3];
  v.penult_map = v.stage_maps[2];
  TextualFeatures t{torch::randn({1, 32, 16}), torch::zeros({1, 16}, torch::kBool)};

  heads->contrastive_visual->weight.zero_();
  heads->contrastive_visual->bias.zero_();
  CHECK(heads->project_contrastive(v, t).visual.abs().sum().item<float>() == 0.0f);

  auto& lin = heads->localization_visual.at(1);
  lin->weight.copy_(torch::eye(64));
  lin->bias.zero_();
  const auto z = heads->project_localization(v, t);
  CHECK(torch::allclose(z.visual.at(1), v.final_map));

  const auto perm = torch::randperm(16, torch::kLong);
  const auto flat = v.penult_map.flatten(2);
  const auto after = apply_channelwise(heads->localization_visual.at(2), flat.index_select(2, perm));
  const auto before = apply_channelwise(heads->localization_visual.at(2), flat).index_select(2, perm);
  CHECK(torch::allclose(after, before, 1e-5, 1e-6));
  CHECK(heads->localization_visual.at(1).get() != heads->localization_visual.at(2).get());
}

TEST_CASE("backbone gradients match central differences") {
  torch::manual_seed(6);
  LocTexModel model(ModelConfig::toy(30, 8));
  model->to(torch::kDouble);
  model->eval();
  const auto ids = torch::cat({caption_ids({1, 4, 5, 2}, 8), caption_ids({1, 9, 7, 6, 2}, 8)});
  const auto check = testing::check_gradients(
      [&](const std::vector<torch::Tensor>& x) {
        const auto out = model(x[0], ids);
        return out.embeddings.visual.pow(2).sum() + (out.embeddings.textual * out.localization.textual.mean(2)).sum() +
               out.localization.visual.at(2).tanh().sum();
      },
      {torch::randn({2, 3, 64, 64})}, 1e-4, 300);
  CHECK(check.passes());
}
