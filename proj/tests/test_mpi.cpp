#include <doctest.h>

#include "fmpi/mpi.hpp"
#include "fmpi/scenes.hpp"
#include "support.hpp"

using namespace fmpi;

namespace {

// V = 2 views of constant colour over a single plane, 2x2 pixels.
PlaneSweepVolume<double> constant_psv(double view0, double view1) {
  PlaneSweepVolume<double> psv;
  psv.schedule = make_schedule(2, 20, 1);
  psv.target_camera = camera_at({2, 2, 0.5, 0.5}, 2, 2, Eigen::Vector3d::Zero());
  psv.source_cameras.assign(2, psv.target_camera);
  std::vector<double> v(2 * 3 * 4);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i < 12 ? view0 : view1;
  psv.data = Tensor<double>({1, 2, 3, 2, 2}, v);
  psv.valid.assign(8, 1);
  return psv;
}

NetHeadOutput<double> head(double cam1, double bg_logit, double alpha_logit, double bg_raw) {
  std::vector<double> v;
  for (double x : {cam1, bg_logit, alpha_logit, bg_raw, bg_raw, bg_raw}) v.insert(v.end(), 4, x);
  return NetHeadOutput<double>{Tensor<double>({6, 2, 2}, v), 1, 2};
}

Tensor<double> stack(std::initializer_list<std::array<double, 4>> planes, Index h = 1, Index w = 1) {
  std::vector<double> v;
  for (const auto& p : planes)
    for (double c : p) v.insert(v.end(), static_cast<std::size_t>(h * w), c);
  return Tensor<double>({static_cast<Index>(planes.size()), 4, h, w}, v);
}

}  // namespace

TEST_CASE("head slicing") {
  std::mt19937_64 rng(1);
  const NetHeadOutput<double> h{test::random_tensor({NetHeadOutput<double>::channels(2, 3), 2, 2}, rng), 2, 3};
  CHECK(h.raw.dim(0) == 11);
  CHECK(h.camera_logits(1).at({1, 0, 0}) == h.raw.at({4 + 1, 0, 0}));
  CHECK(h.background_logit(1).at({0, 1, 1}) == h.raw.at({4 + 2, 1, 1}));
  CHECK(h.alpha_logit(0).at({0, 0, 1}) == h.raw.at({3, 0, 1}));
  CHECK(h.background_logits_raw().at({2, 1, 0}) == h.raw.at({10, 1, 0}));
}

TEST_CASE("assemble_group closed forms") {
  const std::vector<Index> map{0};
  SUBCASE("zero logits average every candidate") {
    const auto planes = assemble_group(head(0, 0, 0, 0), constant_psv(1.0, 0.0), map);
    REQUIRE(planes.size() == 1);
    CHECK(planes[0].at({0, 0, 0}) == doctest::Approx((1.0 + 0.0 + 0.5) / 3.0));
    CHECK(planes[0].at({3, 1, 1}) == doctest::Approx(0.5));
  }
  SUBCASE("saturated background logit") {
    const double bg = 0.3;
    const auto planes = assemble_group(head(0, 20, 2, std::log(bg / (1 - bg))), constant_psv(1.0, 0.0), map);
    CHECK(std::abs(planes[0].at({1, 0, 1}) - bg) < 1e-6);
    CHECK(planes[0].at({3, 0, 0}) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))));
  }
  SUBCASE("ln 2 camera logit") {
    const auto planes = assemble_group(head(std::log(2.0), 0, 0, 0), constant_psv(1.0, 0.0), map);
    CHECK(planes[0].at({2, 1, 0}) == doctest::Approx(0.625).epsilon(1e-14));
  }
  CHECK_THROWS_AS(assemble_group(head(0, 0, 0, 0), constant_psv(1, 0), std::vector<Index>{}), Error);
}

TEST_CASE("nearest input planes") {
  const auto in = make_schedule(2, 20, 4);
  const auto out = make_schedule(2, 20, 8);
  const auto m = nearest_input_planes(in, out);
  REQUIRE(m.size() == 8);
  CHECK(m.front() == 0);
  CHECK(m.back() == 3);
  for (std::size_t k = 0; k < m.size(); ++k) {
    const double disp = 1.0 / out.depths[k];
    for (Index j = 0; j < 4; ++j) CHECK(std::abs(in.disparity(m[k]) - disp) <= std::abs(in.disparity(j) - disp) + 1e-15);
  }
  CHECK(nearest_input_planes(in, in) == std::vector<Index>{0, 1, 2, 3});
  CHECK_THROWS_AS(nearest_input_planes(DepthSchedule{}, out), Error);
}

TEST_CASE("composite closed forms") {
  // Front plane opaque wins.
  auto img = composite(stack({{0.2, 0.4, 0.6, 1.0}, {0.9, 0.9, 0.9, 0.7}}));
  CHECK(img.data()[0] == 0.2);
  CHECK(img.data()[2] == 0.6);
  img = composite(stack({{0.2, 0.4, 0.6, 0.0}, {0.9, 0.9, 0.9, 0.0}}));
  CHECK(img.data()[1] == 0.0);
  img = composite(stack({{1.0, 1.0, 1.0, 0.5}, {0.0, 0.0, 0.0, 1.0}}));
  CHECK(img.data()[0] == doctest::Approx(0.5));

  std::mt19937_64 rng(4);
  const auto rgba = test::random_tensor({5, 4, 3, 3}, rng, 0, 1);
  CHECK(test::max_abs_diff(composite(rgba), composite_back_to_front(rgba)) < 1e-14);
  const auto f = composite(rgba.cast<float>()).cast<double>();
  CHECK(test::max_abs_diff(f, composite(rgba)) < 1e-6);
}

TEST_CASE("composite depth") {
  MultiplaneImage<double> mpi;
  mpi.schedule = DepthSchedule{1, 2, {1.0, 2.0}};
  mpi.rgba = stack({{0, 0, 0, 0.5}, {0, 0, 0, 1.0}});
  CHECK(composite_depth(mpi).item() == doctest::Approx(1.5));
  CHECK(composite_depth(mpi, DepthMode::kDisparity).item() == doctest::Approx(0.75));
  mpi.rgba = stack({{0, 0, 0, 0}, {0, 0, 0, 0}});
  CHECK(composite_depth(mpi).item() == 0.0);
  mpi.schedule = DepthSchedule{3, 3, {3.0}};
  mpi.rgba = stack({{0.1, 0.2, 0.3, 1.0}}, 2, 3);
  const auto flat = composite_depth(mpi);
  for (double d : flat.data()) CHECK(d == 3.0);
}

TEST_CASE("softmax blend gradient and NaN guard") {
  std::mt19937_64 rng(5);
  const auto r = test::check_gradients(
      {test::random_tensor({3, 2, 2}, rng, -2, 2), test::random_tensor({3, 3, 2, 2}, rng, 0, 1)},
      [](const auto& in) { return sum(square(softmax_blend(in[0], in[1]))); });
  CHECK(r.rel_error < 1e-7);
  CHECK_THROWS_AS(softmax_blend(Tensor<double>({2, 1, 1}, {NAN, 0.0}), Tensor<double>::zeros({2, 3, 1, 1})), Error);
}

TEST_CASE("warp_mpi") {
  std::mt19937_64 rng(6);
  MultiplaneImage<double> mpi;
  mpi.camera = camera_at({30, 30, 11.5, 7.5}, 24, 16, Eigen::Vector3d::Zero());
  mpi.schedule = make_schedule(2, 20, 4);
  mpi.rgba = test::random_tensor({4, 4, 16, 24}, rng, 0, 1);
  CHECK(test::bit_equal(warp_mpi(mpi, mpi.camera), composite(mpi.rgba)));

  MultiplaneImage<double> clear = mpi;
  std::vector<double> v(mpi.rgba.data().begin(), mpi.rgba.data().end());
  for (Index d = 0; d < 4; ++d) std::fill_n(v.begin() + (d * 4 + 3) * 16 * 24, 16 * 24, 0.0);
  clear.rgba = Tensor<double>(mpi.rgba.shape(), v);
  const auto moved = camera_at(mpi.camera.intrinsics, 24, 16, {0.05, 0, 0});
  const auto black = warp_mpi(clear, moved);
  CHECK(std::all_of(black.data().begin(), black.data().end(), [](double x) { return x == 0.0; }));

  // Aligned single plane: the warp reproduces the ray tracer away from the border.
  const double depth = 3.0;
  TextureSpec t{TextureKind::kChecker, 64, 48, {0.9, 0.1, 0.3}, {0.2, 0.8, 0.5}, 4, 0};
  SyntheticScene scene;
  scene.rectangles.push_back(aligned_rectangle(mpi.camera, depth, Texture::make(t), 1.0, -20, -16));
  MultiplaneImage<double> opaque{rasterize_planes<double>(scene, mpi.camera, DepthSchedule{3, 3, {depth}}),
                                 DepthSchedule{3, 3, {depth}}, mpi.camera};
  const auto target = camera_at(mpi.camera.intrinsics, 24, 16, {0.013, -0.007, 0});
  const auto out = warp_mpi(opaque, target);
  const auto truth = raytrace<double>(scene, target);
  const auto grid = warp_grid<double>(plane_homography(mpi.camera, target, depth, PlaneFrame::kSource), mpi.camera,
                                      target);
  double worst = 0.0;
  for (std::size_t i = 0; i < grid.valid.size(); ++i)
    if (grid.valid[i])
      for (std::size_t c = 0; c < 3; ++c)
        worst = std::max(worst, std::abs(out.data()[c * 384 + i] - truth.data()[c * 384 + i]));
  CHECK(worst < 1e-4);

  const auto planes = warp_mpi_planes(opaque, target);
  CHECK(test::max_abs_diff(composite(planes.rgba), out) < 1e-12);
}

TEST_CASE("FMPI round trip and errors") {
  test::TempDir dir("mpi");
  std::mt19937_64 rng(7);
  MultiplaneImage<float> mpi;
  mpi.camera = camera_at({30, 30, 11.5, 7.5}, 24, 16, {1, 2, 3});
  mpi.schedule = make_schedule(2, INFINITY, 3);
  mpi.rgba = test::random_tensor<float>({3, 4, 16, 24}, rng, 0, 1);
  save_mpi(dir / "a.fmpi", mpi);
  const auto back = load_mpi<float>(dir / "a.fmpi");
  CHECK(test::bit_equal(back.rgba, mpi.rgba));
  CHECK(back.camera == mpi.camera);
  CHECK(back.schedule.depths == mpi.schedule.depths);

  const auto bytes = test::file_bytes(dir / "a.fmpi");
  std::ofstream(dir / "short.fmpi", std::ios::binary) << bytes.substr(0, bytes.size() - 5);
  CHECK_THROWS_AS(load_mpi<float>(dir / "short.fmpi"), Error);
  std::ofstream(dir / "magic.fmpi", std::ios::binary) << "XXXX" << bytes.substr(4);
  CHECK_THROWS_AS(load_mpi<float>(dir / "magic.fmpi"), Error);
  CHECK_THROWS_AS(load_mpi<float>(dir / "missing.fmpi"), Error);
}
