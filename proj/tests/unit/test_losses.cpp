#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "torch_doctest.hpp"

#include <cmath>
#include <random>

#include "finite_diff.hpp"
#include "loctex/losses.hpp"

using namespace loctex;

namespace {

const auto kDouble = torch::TensorOptions().dtype(torch::kDouble);

LossConfig config(DenominatorMode mode, double tau = 0.1) {
  LossConfig cfg;
  cfg.tau = tau;
  cfg.denominator = mode;
  return cfg;
}

// The contrastive loss evaluated with plain loops over the cosine similarity matrix.
double contrastive_reference(const torch::Tensor& v, const torch::Tensor& t, double tau, bool include_positive,
                             bool symmetric) {
  const auto n = v.size(0);
  std::vector<std::vector<double>> s(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n)));
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      const auto a = v[i], b = t[j];
      s[i][j] = (a * b).sum().item<double>() / (a.norm().item<double>() * b.norm().item<double>()) / tau;
    }
  }
  auto direction = [&](bool transpose) {
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double denom = 0.0;
      for (int64_t j = 0; j < n; ++j) {
        if (j == i && !include_positive) continue;
        denom += std::exp(transpose ? s[j][i] : s[i][j]);
      }
      total += -(s[i][i] - std::log(denom));
    }
    return total;
  };
  return direction(false) + (symmetric ? direction(true) : 0.0);
}

}  // namespace

TEST_CASE("cosine similarity") {
  const std::vector<double> u{3.0, -1.0, 2.0};
  CHECK(cosine_sim(u, u) == doctest::Approx(1.0));
  CHECK(cosine_sim(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  CHECK(cosine_sim(std::vector<double>{1, 1}, std::vector<double>{1, 0}) == doctest::Approx(1.0 / std::sqrt(2.0)));
  CHECK_THROWS_AS(cosine_sim(std::vector<double>{0, 0}, std::vector<double>{1, 0}), std::invalid_argument);
}

TEST_CASE("contrastive loss on hand-evaluated batches") {
  const auto eye = torch::eye(2, kDouble);
  CHECK(contrastive_loss(eye, eye, config(DenominatorMode::kAsWritten)).item<double>() ==
        doctest::Approx(-20.0).epsilon(1e-9));
  const auto same = torch::ones({2, 2}, kDouble);
  CHECK(std::abs(contrastive_loss(same, same, config(DenominatorMode::kAsWritten)).item<double>()) < 1e-9);
  const auto swapped = torch::tensor({{0.0, 1.0}, {1.0, 0.0}}, kDouble);
  CHECK(contrastive_loss(eye, swapped, config(DenominatorMode::kAsWritten, 1.0)).item<double>() ==
        doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("contrastive loss argument checks") {
  const auto one = torch::ones({1, 4}, kDouble);
  CHECK_THROWS_AS(contrastive_loss(one, one, config(DenominatorMode::kAsWritten)), std::invalid_argument);
  CHECK_NOTHROW(contrastive_loss(one, one, config(DenominatorMode::kStandard)));
  const auto zero = torch::zeros({2, 4}, kDouble);
  CHECK_THROWS_AS(contrastive_loss(zero, torch::ones({2, 4}, kDouble), config(DenominatorMode::kStandard)),
                  std::invalid_argument);
  LossConfig bad;
  bad.tau = 0.0;
  CHECK_THROWS_AS(contrastive_loss(torch::ones({2, 2}), torch::ones({2, 2}), bad), std::invalid_argument);
  CHECK(denominator_mode_from_string("standard") == DenominatorMode::kStandard);
  CHECK_THROWS_AS(denominator_mode_from_string("nope"), std::invalid_argument);
}

TEST_CASE("property: contrastive loss matches the loop reference in every mode") {
  torch::manual_seed(0);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t n = 2 + trial % 5;
    const auto v = torch::randn({n, 6}, kDouble);
    const auto t = torch::randn({n, 6}, kDouble);
    for (auto mode : {DenominatorMode::kAsWritten, DenominatorMode::kStandard}) {
      for (bool sym : {false, true}) {
        auto cfg = config(mode, 0.1 + 0.2 * (trial % 3));
        cfg.symmetric = sym;
        const double got = contrastive_loss(v, t, cfg).item<double>();
        const double want = contrastive_reference(v, t, cfg.tau, mode == DenominatorMode::kStandard, sym);
        CHECK(got == doctest::Approx(want).epsilon(1e-9));
        if (mode == DenominatorMode::kStandard) CHECK(got >= 0.0);
      }
    }
  }
}

TEST_CASE("property: contrastive loss invariances") {
  torch::manual_seed(1);
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t n = 3 + trial % 4;
    const auto v = torch::randn({n, 5}, kDouble);
    const auto t = torch::randn({n, 5}, kDouble);
    const auto cfg = config(trial % 2 ? DenominatorMode::kStandard : DenominatorMode::kAsWritten);
    const double base = contrastive_loss(v, t, cfg).item<double>();
    const auto perm = torch::randperm(n, torch::kLong);
    CHECK(contrastive_loss(v.index_select(0, perm), t.index_select(0, perm), cfg).item<double>() ==
          doctest::Approx(base).epsilon(1e-9));
    const auto d1 = torch::rand({n, 1}, kDouble) * 5 + 0.1;
    const auto d2 = torch::rand({n, 1}, kDouble) * 5 + 0.1;
    CHECK(contrastive_loss(v * d1, t * d2, cfg).item<double>() == doctest::Approx(base).epsilon(1e-9));
  }
}

TEST_CASE("attention map is a spatial distribution per token") {
  const auto zt = torch::zeros({1, 4, 3}, kDouble);
  const auto zv = torch::randn({1, 4, 7, 7}, kDouble);
  const auto m = attention_map(zt, zv);
  CHECK(m.sizes() == torch::IntArrayRef({1, 3, 7, 7}));
  CHECK(torch::allclose(m, torch::full_like(m, 1.0 / 49.0)));

  // Token logits (10, 0, ..., 0): channel 0 of z_V one-hot at cell 0, z_T = 10 e_0.
  auto v = torch::zeros({1, 1, 7, 7}, kDouble);
  v[0][0][0][0] = 1.0;
  const auto peak = attention_map(torch::full({1, 1, 1}, 10.0, kDouble), v);
  CHECK(peak[0][0][0][0].item<double>() == doctest::Approx(std::exp(10.0) / (std::exp(10.0) + 48.0)));
  CHECK(peak[0][0][0][0].item<double>() == doctest::Approx(0.99782).epsilon(1e-5));

  CHECK_THROWS_AS(attention_map(torch::zeros({1, 3, 2}), torch::zeros({1, 4, 2, 2})), std::invalid_argument);
}

TEST_CASE("property: attention slices are nonnegative, sum to one, and ignore per-token shifts") {
  torch::manual_seed(2);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t n = 1 + trial % 3, c = 4, l = 2 + trial % 5, r = 1 + trial % 7;
    const auto zt = torch::randn({n, c, l}) * 3;
    const auto zv = torch::randn({n, c, r, r}) * 3;
    const auto m = attention_map(zt, zv);
    CHECK(m.min().item<float>() >= 0.0f);
    CHECK((m.flatten(2).sum(2) - 1).abs().max().item<float>() <= 1e-5f);
  }
  // Shifting every spatial logit of a token by a constant: add a constant
  // channel to z_V and a per-token weight on it in z_T.
  const auto zt = torch::randn({1, 3, 4}, kDouble);
  const auto zv = torch::randn({1, 3, 5, 5}, kDouble);
  const auto zt2 = torch::cat({zt, torch::randn({1, 1, 4}, kDouble)}, 1);
  const auto zv2 = torch::cat({zv, torch::ones({1, 1, 5, 5}, kDouble)}, 1);
  CHECK(torch::allclose(attention_map(zt, zv), attention_map(zt2, zv2), 1e-12, 1e-12));
}

TEST_CASE("localization loss on hand examples") {
  LossConfig cfg;
  const auto mask = torch::ones({1, 2});
  auto m = torch::zeros({1, 2, 2, 2}, kDouble);
  auto t = torch::zeros({1, 2, 2, 2}, kDouble);
  m[0][0][0][0] = 0.7;
  m[0][1][1][1] = 0.3;
  t[0][0][1][0] = 1.0;
  CHECK(localization_loss(m, t, mask, cfg).item<double>() == doctest::Approx(std::sqrt(2.0)).epsilon(1e-9));
  CHECK(localization_loss(m, m * 4, mask, cfg).item<double>() == doctest::Approx(0.0));
  CHECK(localization_loss(m * 3, t, mask, cfg).item<double>() ==
        doctest::Approx(localization_loss(m, t, mask, cfg).item<double>()));
  CHECK(localization_loss(m, torch::zeros_like(t), mask, cfg).item<double>() == 0.0);
  CHECK_THROWS_AS(localization_loss(m, torch::zeros({1, 2, 3, 3}, kDouble), mask, cfg), std::invalid_argument);
}

TEST_CASE("masked tokens do not contribute") {
  LossConfig cfg;
  torch::manual_seed(3);
  const auto m = torch::rand({2, 3, 2, 2}, kDouble);
  auto t = torch::rand({2, 3, 2, 2}, kDouble).round();
  t[0][0][0][0] = 1.0;
  t[1][0][0][0] = 1.0;
  auto mask = torch::ones({2, 3});
  mask[0][2] = 0;
  mask[1][2] = 0;
  const double base = localization_loss(m, t, mask, cfg).item<double>();
  auto m2 = m.clone();
  auto t2 = t.clone();
  m2.select(1, 2).fill_(9.0);
  t2.select(1, 2).fill_(1.0);
  CHECK(localization_loss(m2, t2, mask, cfg).item<double>() == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("property: per-sample localization term lies in [0, 2]") {
  torch::manual_seed(4);
  LossConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = torch::rand({1, 3, 2, 2}, kDouble);
    const auto t = torch::rand({1, 3, 2, 2}, kDouble).round();
    const double v = localization_loss(m, t, torch::ones({1, 3}), cfg).item<double>();
    CHECK(v >= 0.0);
    CHECK(v <= 2.0);
  }
}

TEST_CASE("total loss combines weighted terms") {
  torch::manual_seed(5);
  const auto v = torch::randn({3, 4}, kDouble), t = torch::randn({3, 4}, kDouble);
  std::map<int, torch::Tensor> maps{{1, torch::softmax(torch::randn({3, 4, 4}, kDouble), -1).view({3, 4, 2, 2})},
                                    {2, torch::softmax(torch::randn({3, 4, 16}, kDouble), -1).view({3, 4, 4, 4})}};
  std::map<int, LocalizationTarget> targets{
      {1, {torch::rand({3, 4, 2, 2}, kDouble).round(), torch::ones({3, 4})}},
      {2, {torch::rand({3, 4, 4, 4}, kDouble).round(), torch::ones({3, 4})}}};
  LossConfig cfg;
  cfg.denominator = DenominatorMode::kStandard;
  const auto all = total_loss({v, t}, maps, targets, cfg);
  const double lc = contrastive_loss(v, t, cfg).item<double>();
  const double l1 = localization_loss(maps[1], targets[1].target, targets[1].token_mask, cfg).item<double>();
  const double l2 = localization_loss(maps[2], targets[2].target, targets[2].token_mask, cfg).item<double>();
  CHECK(all.total_value() == doctest::Approx(lc + l1 + l2).epsilon(1e-12));
  CHECK(all.contrastive == doctest::Approx(lc));
  CHECK(all.localization.at(2) == doctest::Approx(l2));

  cfg.weight_localization = 0.0;
  CHECK(total_loss({v, t}, maps, targets, cfg).total_value() == doctest::Approx(lc));
  cfg.weight_localization = 1.0;
  cfg.weight_contrastive = 0.0;
  cfg.scales = {1};
  CHECK(total_loss({v, t}, maps, targets, cfg).total_value() == doctest::Approx(l1));

  cfg.scales = {1, 4};
  CHECK_THROWS_AS(total_loss({v, t}, maps, targets, cfg), std::invalid_argument);
}

TEST_CASE("gradients match central differences") {
  torch::manual_seed(6);
  const int64_t n = 3, l = 4, r = 2, c = 5;
  for (auto mode : {DenominatorMode::kAsWritten, DenominatorMode::kStandard}) {
    auto cfg = config(mode);
    cfg.symmetric = mode == DenominatorMode::kStandard;
    const auto check = testing::check_gradients(
        [&](const std::vector<torch::Tensor>& x) { return contrastive_loss(x[0], x[1], cfg); },
        {torch::randn({n, c}), torch::randn({n, c})});
    CHECK(check.passes());
    CHECK(check.worst <= 1e-3);
  }

  const auto target = torch::rand({n, l, r, r}).round().to(torch::kDouble);
  auto mask = torch::ones({n, l});
  mask[0][3] = 0;
  LossConfig cfg;
  const auto composite = testing::check_gradients(
      [&](const std::vector<torch::Tensor>& x) {
        return localization_loss(attention_map(x[0], x[1]), target, mask, cfg);
      },
      {torch::randn({n, c, l}), torch::randn({n, c, r, r})});
  CHECK(composite.passes());
  CHECK(composite.worst <= 1e-3);
}
