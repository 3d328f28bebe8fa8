#include <doctest.h>

#include <Eigen/Geometry>

#include "fmpi/geometry.hpp"
#include "fmpi/ops.hpp"
#include "support.hpp"

using namespace fmpi;

namespace {

CameraModel cam(double x, double y, double z, const Eigen::Matrix3d& r = Eigen::Matrix3d::Identity()) {
  return camera_at({50.0, 50.0, 15.5, 11.5}, 32, 24, {x, y, z}, r);
}

}  // namespace

TEST_CASE("camera conventions") {
  const CameraModel c = cam(1.0, 2.0, 3.0, Eigen::AngleAxisd(0.3, Eigen::Vector3d::UnitY()).toRotationMatrix());
  CHECK((c.center() - Eigen::Vector3d(1, 2, 3)).norm() < 1e-12);
  double depth = 0.0;
  const Eigen::Vector3d p = c.center() + c.ray_direction(4.0, 7.0) * 2.5;
  const Eigen::Vector2d px = c.project(p, &depth);
  CHECK(px.x() == doctest::Approx(4.0));
  CHECK(px.y() == doctest::Approx(7.0));
  CHECK(depth > 0);

  CameraModel bad = c;
  bad.rotation(0, 0) = 1.5;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("plane homography special cases") {
  const CameraModel t = cam(0.1, -0.2, 0.3, Eigen::AngleAxisd(0.2, Eigen::Vector3d::UnitX()).toRotationMatrix());
  CHECK(plane_homography(t, t, 3.0).matrix == Eigen::Matrix3d::Identity());

  // Baseline b along x: u_s = u_t - fx b / d.
  const double b = 0.07, d = 2.5;
  const auto h = plane_homography(cam(b, 0, 0), cam(0, 0, 0), d).matrix;
  for (double u : {0.0, 7.0, 31.0}) {
    const Eigen::Vector3d m = h * Eigen::Vector3d(u, 5.0, 1.0);
    CHECK(m.x() / m.z() == doctest::Approx(u - 50.0 * b / d).epsilon(1e-12));
    CHECK(m.y() / m.z() == doctest::Approx(5.0).epsilon(1e-12));
  }

  // Infinite depth: pure rotation homography.
  const Eigen::Matrix3d r = Eigen::AngleAxisd(0.1, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
  const CameraModel src = cam(0.3, 0.1, -0.2, r);
  const CameraModel tgt = cam(0, 0, 0);
  const Eigen::Matrix3d expect = src.K() * src.rotation * tgt.rotation.transpose() * tgt.K_inverse();
  const Eigen::Matrix3d got = plane_homography(src, tgt, INFINITY).matrix;
  CHECK((got / got(2, 2) - expect / expect(2, 2)).norm() < 1e-12);
}

TEST_CASE("plane through the source center is degenerate") {
  // Source sits on the plane z = 2 of the target frame.
  try {
    plane_homography(cam(0, 0, 2.0), cam(0, 0, 0), 2.0);
    FAIL("expected a degenerate-plane error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegeneratePlane);
  }
}

TEST_CASE("source-frame planes") {
  // Same plane expressed in either frame when both cameras share a rotation.
  const auto a = plane_homography(cam(0.05, 0.02, 0), cam(0, 0, 0), 4.0, PlaneFrame::kTarget).matrix;
  const auto b = plane_homography(cam(0.05, 0.02, 0), cam(0, 0, 0), 4.0, PlaneFrame::kSource).matrix;
  CHECK((a / a(2, 2) - b / b(2, 2)).norm() < 1e-12);
}

TEST_CASE("warp grid") {
  const CameraModel c = cam(0, 0, 0);
  const auto grid = warp_grid<double>(Homography{Eigen::Matrix3d::Identity(), 1.0}, c, c);
  bool all_valid = true, on_grid = true;
  for (Index y = 0; y < 24; ++y)
    for (Index x = 0; x < 32; ++x) {
      all_valid &= grid.valid[static_cast<std::size_t>(y * 32 + x)] == 1;
      on_grid &= grid.coords.at({0, y, x}) == x && grid.coords.at({1, y, x}) == y;
    }
  CHECK(all_valid);
  CHECK(on_grid);

  const auto h = plane_homography(cam(0.1, 0, 0), c, 2.0);
  const auto shifted = warp_grid<double>(h, c, c);
  const double du = -50.0 * 0.1 / 2.0;
  CHECK(shifted.coords.at({0, 3, 10}) == doctest::Approx(10 + du));
  CHECK(shifted.coords.at({1, 3, 10}) == doctest::Approx(3));
  // Columns 0..2 land left of the source image.
  CHECK(shifted.valid[3 * 32 + 2] == 0);
  CHECK(shifted.valid[3 * 32 + 3] == 1);
}

TEST_CASE("bilinear sampling") {
  std::mt19937_64 rng(3);
  const CameraModel c = cam(0, 0, 0);
  const auto img = test::random_tensor({3, 24, 32}, rng, 0, 1);
  const auto id = warp_grid<double>(Homography{}, c, c);
  CHECK(test::bit_equal(sample_bilinear(img, id), img));

  // Integer shift: out(x) = in(x + 1) with a zero-filled last column.
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 2) = 1.0;
  const auto sh = sample_bilinear(img, warp_grid<double>(Homography{m, 1.0}, c, c));
  bool ok = true;
  for (Index ch = 0; ch < 3; ++ch)
    for (Index y = 0; y < 24; ++y)
      for (Index x = 0; x < 32; ++x)
        ok &= sh.at({ch, y, x}) == (x < 31 ? img.at({ch, y, x + 1}) : 0.0);
  CHECK(ok);

  const Tensor<double> two({1, 1, 2}, {2.0, 4.0});
  WarpGrid<double> g{Tensor<double>({2, 1, 1}, {0.5, 0.0}), {1}, 1, 1};
  CHECK(sample_bilinear(two, g).item() == 3.0);

  const auto r = test::check_gradients({img}, [&](const auto& in) {
    return sum(square(sample_bilinear(in[0], warp_grid<double>(plane_homography(cam(0.03, 0.01, 0), c, 1.7), c, c))));
  });
  CHECK(r.rel_error < 1e-7);
}
