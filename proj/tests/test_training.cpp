#include <doctest.h>

#include <numeric>

#include "fmpi/training.hpp"
#include "support.hpp"

using namespace fmpi;

TEST_CASE("gaussian taps") {
  const auto t = gaussian_taps(11, 1.5);
  REQUIRE(t.size() == 11);
  CHECK(std::accumulate(t.begin(), t.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(t[5] / t[4] == doctest::Approx(std::exp(1.0 / (2 * 1.5 * 1.5))));
}

TEST_CASE("ssim closed forms") {
  std::mt19937_64 rng(1);
  const auto x = test::random_tensor({3, 20, 24}, rng, 0, 1);
  CHECK(ssim(x, x).item() == doctest::Approx(1.0).epsilon(1e-12));

  // Constant images: both variances vanish and only the C1 term remains.
  const double a = 0.4, b = 0.43, c1 = 0.01 * 0.01;
  const auto s = ssim(Tensor<double>::full({1, 16, 16}, a), Tensor<double>::full({1, 16, 16}, b)).item();
  CHECK(s == doctest::Approx((2 * a * b + c1) / (a * a + b * b + c1)).epsilon(1e-12));

  std::vector<double> board(16 * 16), inverse(16 * 16);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) {
      board[i * 16 + j] = (i + j) % 2;
      inverse[i * 16 + j] = 1.0 - board[i * 16 + j];
    }
  CHECK(ssim(Tensor<double>({1, 16, 16}, board), Tensor<double>({1, 16, 16}, inverse)).item() < 0.0);
  CHECK_THROWS_AS(ssim(Tensor<double>::zeros({1, 16, 16}), Tensor<double>::zeros({1, 16, 17})), Error);
}

TEST_CASE("ssim matches a direct windowed evaluation") {
  std::mt19937_64 rng(2);
  const auto x = test::random_tensor({2, 13, 14}, rng, 0, 1);
  const auto y = test::random_tensor({2, 13, 14}, rng, 0, 1);
  const auto g = gaussian_taps(11, 1.5);
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0.0;
  int n = 0;
  for (Index c = 0; c < 2; ++c)
    for (Index i = 0; i + 11 <= 13; ++i)
      for (Index j = 0; j + 11 <= 14; ++j) {
        double mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
        for (int a = 0; a < 11; ++a)
          for (int b = 0; b < 11; ++b) {
            const double w = g[a] * g[b], u = x.at({c, i + a, j + b}), v = y.at({c, i + a, j + b});
            mx += w * u;
            my += w * v;
            xx += w * u * u;
            yy += w * v * v;
            xy += w * u * v;
          }
        const double sx = xx - mx * mx, sy = yy - my * my, sxy = xy - mx * my;
        total += (2 * mx * my + c1) * (2 * sxy + c2) / ((mx * mx + my * my + c1) * (sx + sy + c2));
        ++n;
      }
  CHECK(ssim(x, y).item() == doctest::Approx(total / n).epsilon(1e-12));
}

TEST_CASE("image loss terms") {
  std::mt19937_64 rng(3);
  const auto y = test::random_tensor({3, 16, 16}, rng, 0.2, 0.8);
  const auto same = image_loss(y, y);
  CHECK(same.total.item() == doctest::Approx(0.0).epsilon(1e-12));
  LossConfig l1_only;
  l1_only.use_ssim = false;
  CHECK(image_loss(y, add_scalar(y, 0.1), l1_only).total.item() == doctest::Approx(0.1).epsilon(1e-12));

  const auto z = test::random_tensor({3, 16, 16}, rng, 0, 1);
  double l1 = 0.0;
  for (std::size_t i = 0; i < y.data().size(); ++i) l1 += std::abs(y.data()[i] - z.data()[i]);
  l1 /= static_cast<double>(y.numel());
  const auto terms = image_loss(y, z);
  CHECK(terms.l1 == doctest::Approx(l1));
  CHECK(terms.total.item() == doctest::Approx(l1 + 1.0 - ssim(y, z).item()));
  LossConfig none;
  none.use_l1 = none.use_ssim = false;
  CHECK_THROWS_AS(none.validate(), Error);
}

TEST_CASE("psnr") {
  const std::vector<float> a(12, 0.5f);
  std::vector<float> b(12, 0.6f);
  CHECK(psnr(a, a) == 99.0);
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-5));
}

TEST_CASE("lion update rule") {
  std::vector<double> p{1.0, -2.0}, m{0.0, 0.0};
  const std::vector<double> g{0.3, 5.0};
  lion_update<double>(p, g, m, 0.01, 0.99, 0.9);
  CHECK(p[0] == doctest::Approx(0.99));
  CHECK(p[1] == doctest::Approx(-2.01));

  std::vector<double> q{0.7}, mq{0.0};
  lion_update<double>(q, std::vector<double>{0.0}, mq, 0.1, 0.99, 0.9);
  CHECK(q[0] == 0.7);
  CHECK(mq[0] == 0.0);

  // Hand trace: g1 = 1 then g2 = -1.
  // step 1: c = 0.01 -> p = 0.9, m = 0.1; step 2: c = 0.099 - 0.01 > 0 -> p = 0.8, m = -0.01.
  std::vector<double> s{1.0}, ms{0.0};
  lion_update<double>(s, std::vector<double>{1.0}, ms, 0.1, 0.99, 0.9);
  CHECK(s[0] == doctest::Approx(0.9));
  CHECK(ms[0] == doctest::Approx(0.1));
  lion_update<double>(s, std::vector<double>{-1.0}, ms, 0.1, 0.99, 0.9);
  CHECK(s[0] == doctest::Approx(0.8));
  CHECK(ms[0] == doctest::Approx(-0.01));

  CHECK_THROWS_AS(lion_update<double>(s, std::vector<double>{NAN}, ms, 0.1, 0.99, 0.9), Error);
}

TEST_CASE("learning rate schedule") {
  const LionConfig c;
  CHECK(scheduled_lr(c, 0, 100) == c.lr);
  CHECK(scheduled_lr(c, 79, 100) == c.lr);
  CHECK(scheduled_lr(c, 80, 100) == doctest::Approx(c.lr / 10));
  CHECK(scheduled_lr(c, 99, 100) == doctest::Approx(c.lr / 10));
}

TEST_CASE("patch cropping") {
  const SceneBundle scene = generate_scene(8, 0);
  const auto whole = crop_example<float>(scene, 1, 0, 0, 96);
  CHECK(whole.target == scene.targets[1].camera);
  CHECK(test::bit_equal(whole.target_image, scene.targets[1].image));
  for (std::size_t v = 0; v < 4; ++v) CHECK(test::bit_equal(whole.views[v], scene.sources[v].image));

  const auto shifted = crop_example<float>(scene, 0, 8, 0, 64);
  for (std::size_t v = 0; v < 4; ++v) {
    CHECK(shifted.cameras[v].intrinsics.cx == scene.sources[v].camera.intrinsics.cx - 8);
    CHECK(shifted.cameras[v].intrinsics.cy == scene.sources[v].camera.intrinsics.cy);
    CHECK(shifted.cameras[v].width == 64);
  }
  CHECK(shifted.target.intrinsics.cx == scene.targets[0].camera.intrinsics.cx - 8);
  CHECK(shifted.target_image.at({1, 3, 5}) == scene.targets[0].image.at({1, 3, 13}));
  CHECK_THROWS_AS(crop_example<float>(scene, 0, 40, 0, 64), Error);

  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(sample_patch<float>(scene, 128, rng), Error);
  CHECK(sample_patch<float>(scene, 32, rng).target_image.shape() == Shape{3, 32, 32});
}

TEST_CASE("toy training plumbing") {
  TrainConfig cfg;
  cfg.net = UNetConfig{4, 2, 2, 4};
  cfg.patch = 32;
  cfg.seed = 12;
  cfg.log_interval = 2;
  cfg.iterations = 0;
  const auto init = init_weights<double>(cfg.net, cfg.seed);
  const auto zero = train_toy<double>(cfg);
  for (std::size_t i = 0; i < init.records.size(); ++i)
    CHECK(test::bit_equal(zero.weights.records[i].second, init.records[i].second));

  cfg.iterations = 4;
  const auto a = train_toy<double>(cfg);
  const auto b = train_toy<double>(cfg);
  REQUIRE(a.log.size() == 2);
  REQUIRE(b.log.size() == 2);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].iteration == b.log[i].iteration);
    CHECK(a.log[i].loss == b.log[i].loss);
    CHECK(a.log[i].psnr == b.log[i].psnr);
  }

  test::TempDir dir("train");
  write_train_log(dir / "log.csv", a.log);
  const auto text = test::file_bytes(dir / "log.csv");
  CHECK(text.rfind("iter,loss,l1,ssim,psnr\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3);

  cfg.eval_scenes = 2;
  const auto scenes = held_out_scenes(cfg);
  REQUIRE(scenes.size() == 2);
  CHECK_FALSE(test::bit_equal(scenes[0].sources[0].image, generate_scene(cfg.seed, 0).sources[0].image));
  const auto m = evaluate<double>(cfg, a.weights, scenes);
  CHECK(m.psnr > 0.0);
  CHECK(m.ssim <= 1.0);
}
