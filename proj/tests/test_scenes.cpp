#include <doctest.h>

#include <json.hpp>

#include "fmpi/image_io.hpp"
#include "fmpi/mpi.hpp"
#include "fmpi/scenes.hpp"
#include "support.hpp"

using namespace fmpi;

namespace {

Texture constant(double r, double g, double b) {
  return Texture::make(TextureSpec{TextureKind::kConstant, 2, 2, {r, g, b}, {0, 0, 0}, 8, 0});
}

CameraModel small_camera() { return camera_at({40, 40, 15.5, 11.5}, 32, 24, Eigen::Vector3d::Zero()); }

}  // namespace

TEST_CASE("ray tracer basics") {
  const CameraModel cam = small_camera();
  const auto black = raytrace<double>(SyntheticScene{}, cam);
  CHECK(std::all_of(black.data().begin(), black.data().end(), [](double v) { return v == 0.0; }));

  // Full-frame aligned plane renders its texels.
  TextureSpec t{TextureKind::kNoise, 32, 24, {1, 0.5, 0}, {0, 0.2, 1}, 4, 9};
  const Texture tex = Texture::make(t);
  SyntheticScene one;
  one.rectangles.push_back(aligned_rectangle(cam, 2.5, tex));
  const auto img = raytrace<double>(one, cam);
  double worst = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 32; ++x) worst = std::max(worst, std::abs(img.at({c, y, x}) - tex.at(c, y, x)));
  CHECK(worst < 1e-9);

  // Two half-opaque constant planes over black.
  SyntheticScene two;
  Rectangle near = aligned_rectangle(cam, 2.0, constant(1.0, 0.0, 0.0), 0.5, -4, -4);
  Rectangle far = aligned_rectangle(cam, 5.0, constant(0.0, 0.0, 1.0), 0.5, -4, -4);
  near.texture = Texture::make(TextureSpec{TextureKind::kConstant, 48, 40, {1, 0, 0}});
  far.texture = Texture::make(TextureSpec{TextureKind::kConstant, 48, 40, {0, 0, 1}});
  two.rectangles = {far, near};
  two.sort_by_depth();
  CHECK(two.rectangles[0].depth == 2.0);
  const auto mix = raytrace<double>(two, cam);
  CHECK(mix.at({0, 10, 10}) == doctest::Approx(0.5));
  CHECK(mix.at({1, 10, 10}) == doctest::Approx(0.0));
  CHECK(mix.at({2, 10, 10}) == doctest::Approx(0.25));
}

TEST_CASE("ray tracer agrees with the homography sampler") {
  const CameraModel ref = small_camera();
  const CameraModel moved = camera_at(ref.intrinsics, 32, 24, {0.04, 0.02, 0});
  TextureSpec t{TextureKind::kChecker, 64, 56, {1, 1, 1}, {0, 0.3, 0.6}, 3, 0};
  SyntheticScene s;
  s.rectangles.push_back(aligned_rectangle(ref, 3.0, Texture::make(t), 1.0, -16, -16));
  const auto a = raytrace<double>(s, ref);
  const auto b = raytrace<double>(s, moved);
  const auto grid = warp_grid<double>(plane_homography(ref, moved, 3.0), ref, moved);
  const auto warped = sample_bilinear(a, grid);
  double worst = 0.0;
  for (std::size_t i = 0; i < grid.valid.size(); ++i)
    if (grid.valid[i])
      for (std::size_t c = 0; c < 3; ++c) worst = std::max(worst, std::abs(warped.data()[c * 768 + i] - b.data()[c * 768 + i]));
  CHECK(worst < 1e-9);
}

TEST_CASE("rasterized planes composite to the ray-traced image") {
  const SceneBundle scene = generate_scene(21, 3, FamilySpec{.depth_levels = 6});
  const CameraModel cam = scene.targets[0].camera;
  const auto planes = rasterize_planes<double>(*scene.synthetic, cam, make_schedule(scene.near, scene.far, 6));
  CHECK(planes.shape() == Shape{6, 4, 96, 96});
  // Every rectangle sits exactly on a plane, so compositing is lossless.
  CHECK(test::max_abs_diff(composite(planes), raytrace<double>(*scene.synthetic, cam)) < 1e-6);
}

TEST_CASE("scene family") {
  const FamilySpec spec;
  const auto rig = rig_cameras(spec);
  REQUIRE(rig.size() == 4);
  double xs = 0, ys = 0;
  for (const auto& c : rig) {
    xs = std::max(xs, std::abs(c.center().x()));
    ys = std::max(ys, std::abs(c.center().y()));
    CHECK(c.rotation == Eigen::Matrix3d::Identity());
  }
  CHECK(2 * xs == doctest::Approx(0.40));
  CHECK(2 * ys == doctest::Approx(0.25));

  const auto a = generate_scene(3, 7), b = generate_scene(3, 7);
  CHECK(test::bit_equal(a.sources[2].image, b.sources[2].image));
  CHECK(a.targets[1].camera == b.targets[1].camera);
  CHECK_FALSE(test::bit_equal(a.sources[0].image, generate_scene(3, 8).sources[0].image));
  for (int i = 0; i < 20; ++i) {
    const auto s = generate_scene(5, static_cast<std::uint64_t>(i));
    for (const auto& r : s.synthetic->rectangles) {
      CHECK(r.depth >= s.near);
      CHECK(r.depth <= s.far);
    }
  }
}

TEST_CASE("image files") {
  test::TempDir dir("img");
  std::mt19937_64 rng(2);
  const auto img = test::random_tensor<float>({3, 5, 7}, rng, 0, 1);
  write_fimg(dir / "a.fimg", img);
  CHECK(test::bit_equal(read_fimg(dir / "a.fimg"), img));

  std::vector<float> q(img.data().begin(), img.data().end());
  for (auto& v : q) v = std::round(v * 255.0f) / 255.0f;
  const Tensor<float> quant(img.shape(), q);
  write_png(dir / "a.png", quant);
  CHECK(test::max_abs_diff(read_image(dir / "a.png"), quant) < 1e-7);
  write_image(dir / "g.png", Tensor<float>::full({1, 3, 3}, 0.5f));
  CHECK(read_png(dir / "g.png").shape() == Shape{1, 3, 3});
  CHECK_THROWS_AS(read_image(dir / "missing.png"), Error);
  CHECK_THROWS_AS(write_image(dir / "a.bmp", img), Error);
}

TEST_CASE("scene directories") {
  test::TempDir dir("scene");
  const SceneBundle scene = generate_scene(2, 1);
  save_scene_dir(dir / "png", scene, ImageFormat::kPng);
  const auto png = load_scene_dir(dir / "png");
  CHECK(png.sources.size() == 4);
  CHECK(test::max_abs_diff(png.sources[0].image, scene.sources[0].image) <= 0.5 / 255.0 + 1e-6);

  // One source, no targets, infinite far plane.
  SceneBundle minimal;
  minimal.sources.push_back(View{small_camera(), Tensor<float>::full({3, 24, 32}, 0.2f)});
  minimal.near = 1.0;
  minimal.far = INFINITY;
  save_scene_dir(dir / "min", minimal);
  const auto m = load_scene_dir(dir / "min");
  CHECK(m.targets.empty());
  CHECK(std::isinf(m.far));
  CHECK_FALSE(m.synthetic.has_value());

  // Corrupt the rotation.
  std::ifstream in(dir / "min" / "scene.json");
  auto doc = nlohmann::json::parse(in);
  in.close();
  doc["sources"][0]["camera"]["R"][0] = 2.0;
  std::ofstream(dir / "min" / "scene.json") << doc.dump();
  CHECK_THROWS_AS(load_scene_dir(dir / "min"), Error);

  // Image size must match the camera.
  doc["sources"][0]["camera"]["R"][0] = 1.0;
  doc["sources"][0]["camera"]["width"] = 30;
  std::ofstream(dir / "min" / "scene.json") << doc.dump();
  CHECK_THROWS_AS(load_scene_dir(dir / "min"), Error);

  CHECK_THROWS_AS(load_scene_dir(dir / "nowhere"), Error);
}
