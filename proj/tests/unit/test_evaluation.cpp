#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "torch_doctest.hpp"

#include <cmath>
#include <filesystem>
#include <random>

#include <opencv2/imgcodecs.hpp>

#include "loctex/evaluation.hpp"
#include "loctex/image.hpp"
#include "loctex/synthetic.hpp"
#include "loctex/training.hpp"

using namespace loctex;

namespace {

/// Half-pixel-center bilinear interpolation with edge clamping, written out
/// independently of OpenCV.
double bilinear_oracle(const std::vector<std::vector<double>>& src, int size, int u, int v) {
  const int n = static_cast<int>(src.size());
  const double scale = static_cast<double>(n) / size;
  auto coord = [&](int p, int& i0, int& i1, double& w) {
    double x = (p + 0.5) * scale - 0.5;
    x = std::max(x, 0.0);
    i0 = std::min(static_cast<int>(std::floor(x)), n - 1);
    i1 = std::min(i0 + 1, n - 1);
    w = x - i0;
  };
  int r0, r1, c0, c1;
  double wr, wc;
  coord(v, r0, r1, wr);
  coord(u, c0, c1, wc);
  return (1 - wr) * ((1 - wc) * src[r0][c0] + wc * src[r0][c1]) + wr * ((1 - wc) * src[r1][c0] + wc * src[r1][c1]);
}

std::vector<cv::Mat> random_images(int n, int size, unsigned seed) {
  cv::RNG rng(seed);
  std::vector<cv::Mat> out;
  for (int i = 0; i < n; ++i) {
    cv::Mat m(size, size, CV_32FC3);
    rng.fill(m, cv::RNG::UNIFORM, 0.0, 1.0);
    out.push_back(m);
  }
  return out;
}

LocTexModel toy_model(int vocab_size = 40) {
  TrainConfig cfg = TrainConfig::toy();
  return make_model(resolved_model_config(cfg, vocab_size), 1);
}

}  // namespace

TEST_CASE("bilinear resize matches the hand oracle") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int n : {2, 4, 7, 14}) {
    std::vector<std::vector<double>> src(n, std::vector<double>(n));
    auto t = torch::empty({n, n});
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) t[r][c] = src[r][c] = unit(rng);
    const int size = n * 16;
    const cv::Mat out = resize_attention(t, size);
    double worst = 0.0;
    for (int v = 0; v < size; ++v)
      for (int u = 0; u < size; ++u) worst = std::max(worst, std::abs(out.at<float>(v, u) - bilinear_oracle(src, size, u, v)));
    CHECK(worst < 1e-3);  // OpenCV interpolates in fixed point for float maps too
  }
}

TEST_CASE("a 14x14 one-hot keeps its argmax inside the matching 16x16 block") {
  for (int r = 0; r < 14; ++r) {
    for (int c = 0; c < 14; ++c) {
      auto t = torch::zeros({14, 14});
      t[r][c] = 1.0;
      const cv::Mat out = resize_attention(t, 224);
      cv::Point loc;
      cv::minMaxLoc(out, nullptr, nullptr, nullptr, &loc);
      CHECK(loc.x / 16 == c);
      CHECK(loc.y / 16 == r);
    }
  }
}

TEST_CASE("uniform slice tints the image uniformly") {
  const cv::Mat img(32, 32, CV_32FC3, cv::Scalar(0.2, 0.4, 0.6));
  const cv::Mat out = overlay_attention(img, torch::full({7, 7}, 1.0 / 49), {0.5, cv::COLORMAP_JET});
  const cv::Vec3f first = out.at<cv::Vec3f>(0, 0);
  double worst = 0.0;
  for (int y = 0; y < out.rows; ++y)
    for (int x = 0; x < out.cols; ++x) worst = std::max(worst, cv::norm(out.at<cv::Vec3f>(y, x) - first));
  CHECK(worst < 1e-6);
  // JET at the maximum is dark red (128, 0, 0) in RGB.
  CHECK(first[0] == doctest::Approx(0.5 * 0.2 + 0.5 * 128.0 / 255.0).epsilon(1e-5));
  CHECK(first[1] == doctest::Approx(0.5 * 0.4).epsilon(1e-5));
}

TEST_CASE("one-hot slice at (0,0) puts the hotspot top left") {
  const cv::Mat img(224, 224, CV_32FC3, cv::Scalar::all(0.0));
  auto slice = torch::zeros({14, 14});
  slice[0][0] = 1.0;
  const cv::Mat out = overlay_attention(img, slice, {1.0, cv::COLORMAP_HOT});
  cv::Mat gray;
  cv::cvtColor(out, gray, cv::COLOR_RGB2GRAY);
  cv::Point loc;
  cv::minMaxLoc(gray, nullptr, nullptr, nullptr, &loc);
  CHECK(loc.x < 16);
  CHECK(loc.y < 16);
  CHECK(gray.at<float>(200, 200) < gray.at<float>(loc));
}

TEST_CASE("overlay argument checks") {
  const cv::Mat img(8, 8, CV_32FC3, cv::Scalar::all(0.0));
  CHECK_THROWS_AS(overlay_attention(img, torch::zeros({2, 2}), {1.5, cv::COLORMAP_JET}), std::invalid_argument);
  CHECK_THROWS_AS(overlay_attention(cv::Mat(8, 4, CV_32FC3), torch::zeros({2, 2})), std::invalid_argument);
  CHECK_THROWS_AS(resize_attention(torch::zeros({2, 2, 2}), 8), std::invalid_argument);
}

TEST_CASE("toy features have the final visual width") {
  auto model = toy_model();
  const auto f = extract_features(model, random_images(3, 80, 1));
  CHECK(f.sizes() == std::vector<std::int64_t>{3, 64});
  const auto m = to_feature_matrix(f);
  CHECK(m.rows == 3);
  CHECK(m.cols == 64);
  CHECK(m.at(2, 5) == doctest::Approx(f[2][5].item<double>()));
}

TEST_CASE("full preset features are 2048 wide") {
  ModelConfig cfg = ModelConfig::full();
  cfg.textual.vocab_size = 16;  // the text side is irrelevant here
  torch::manual_seed(0);
  LocTexModel model(cfg);
  CHECK(extract_features(model, random_images(1, 64, 3)).size(1) == 2048);
}

TEST_CASE("features do not depend on batch partitioning or repetition") {
  auto model = toy_model();
  auto images = random_images(7, 64, 5);
  images.push_back(images[2]);
  const auto all = extract_features(model, images, 32);
  const auto ones = extract_features(model, images, 1);
  const auto threes = extract_features(model, images, 3);
  CHECK(torch::allclose(all, ones, 1e-5, 1e-6));
  CHECK(torch::allclose(all, threes, 1e-5, 1e-6));
  CHECK(torch::equal(ones[2], ones[7]));
}

TEST_CASE("load_model restores weights and rejects mismatched configs") {
  const auto dir = std::filesystem::temp_directory_path() / "loctex_test_eval";
  std::filesystem::remove_all(dir);
  SyntheticOptions so;
  so.count = 4;
  const auto synth = make_quadrant_shapes(so);
  const auto vocab = train_bpe(captions_of(synth), 100);
  TrainConfig cfg = TrainConfig::toy();
  cfg.epochs = 2;
  cfg.warmup_epochs = 1;
  cfg.batch_size = 4;
  auto model = make_model(resolved_model_config(cfg, vocab.size()), 0);
  FitOptions opts;
  opts.output_dir = dir;
  const auto res = fit(cfg, as_training_data(synth), vocab, model, opts);

  auto loaded = load_model(res.last_checkpoint);
  CHECK(loaded.meta.epoch == 2);
  CHECK((loaded.vocab == vocab));
  const auto images = random_images(2, 64, 9);
  CHECK(torch::equal(extract_features(model, images), extract_features(loaded.model, images)));

  ModelConfig same = resolved_model_config(cfg, vocab.size());
  CHECK_NOTHROW(load_model(res.last_checkpoint, &same));
  ModelConfig other = same;
  other.heads.embed_dim = 16;
  CHECK_THROWS_AS(load_model(res.last_checkpoint, &other), CheckpointError);
  CHECK_THROWS_AS(load_model(dir / "missing.pt"), CheckpointError);

  SUBCASE("visualize writes one file per token of the chosen words") {
    const auto out = dir / "vis";
    VisualizeOptions vo;
    vo.words = {"Circle"};
    const auto& s = synth[0];
    const std::string caption = "a red circle in the top left corner";
    const auto r = visualize_attention(loaded.model, vocab, s.sample.image, caption, out, vo);
    const auto tok = encode_words(split_whitespace(caption), vocab, EncodeOptions{16, std::nullopt});
    std::size_t expected = 0;
    for (auto w : tok.word_alignment) expected += w == 2;
    CHECK(r.token_files.size() == expected);
    for (const auto& f : r.token_files) {
      CHECK(std::filesystem::exists(f));
      CHECK(f.filename().string().find("_w_") == std::string::npos);
    }
    const cv::Mat sheet = cv::imread(r.contact_sheet.string());
    CHECK(sheet.cols == 64 * static_cast<int>(1 + expected));

    vo.words = {"hexagon"};
    CHECK_THROWS_AS(visualize_attention(loaded.model, vocab, s.sample.image, caption, out, vo), std::invalid_argument);

    vo.words.clear();
    const auto every = visualize_attention(loaded.model, vocab, s.sample.image, caption, out, vo);
    std::size_t aligned = 0;
    for (auto w : tok.word_alignment) aligned += w != kNoWord;
    CHECK(every.token_files.size() == aligned);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("predicted attention slices are distributions") {
  auto model = toy_model();
  TokenizedCaption tok;
  tok.ids = {1, 5, 6, 7, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  for (int scale : {1, 2}) {
    const auto a = predict_attention(model, random_images(1, 64, 4)[0], tok, scale);
    CHECK(a.sizes() == std::vector<std::int64_t>{16, 2 * scale, 2 * scale});
    CHECK(torch::allclose(a.sum({1, 2}), torch::ones({16}), 1e-5, 1e-5));
  }
  CHECK_THROWS_AS(predict_attention(model, random_images(1, 64, 4)[0], tok, 4), std::invalid_argument);
}
