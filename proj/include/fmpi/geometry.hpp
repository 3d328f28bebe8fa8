#pragma once

// Pinhole cameras and plane-induced warps.
//
// Conventions: x_cam = R * x_world + t (world-to-camera); pixel centers sit
// at integer coordinates, so u in [0, width-1] and v in [0, height-1] cover
// the image; K maps metric rays straight to those coordinates.

#include <Eigen/Core>

#include <cstdint>
#include <vector>

#include "fmpi/tensor.hpp"

namespace fmpi {

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
};

struct CameraModel {
  Intrinsics intrinsics;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  int width = 0;
  int height = 0;

  Eigen::Matrix3d K() const;
  Eigen::Matrix3d K_inverse() const;
  /// Camera center in world coordinates.
  Eigen::Vector3d center() const;

  /// Throws Error(kInvalidArgument) unless R is a rotation (to 1e-6),
  /// fx, fy > 0 and the principal point lies inside the image.
  void validate() const;

  /// Pixel projection of a world point; z of the camera-frame point in `depth`.
  Eigen::Vector2d project(const Eigen::Vector3d& world, double* depth = nullptr) const;

  /// World-space direction through pixel (u, v), not normalized.
  Eigen::Vector3d ray_direction(double u, double v) const;

  bool operator==(const CameraModel& other) const;
};

/// Builds a camera whose center is `center` (world) and whose rotation is `rotation`.
CameraModel camera_at(const Intrinsics& intrinsics, int width, int height,
                      const Eigen::Vector3d& center,
                      const Eigen::Matrix3d& rotation = Eigen::Matrix3d::Identity());

/// Maps homogeneous target pixels [u_t, v_t, 1] to source pixel directions.
struct Homography {
  Eigen::Matrix3d matrix = Eigen::Matrix3d::Identity();
  double plane_depth = 0.0;
};

/// Camera whose optical axis the plane is fronto-parallel to.
enum class PlaneFrame { kTarget, kSource };

/// Inverse warp induced by the plane z = depth in the target (default) or
/// source camera frame. `depth` may be +infinity (rotation-only limit).
/// Coincident cameras give exactly the identity.
Homography plane_homography(const CameraModel& source, const CameraModel& target, double depth,
                            PlaneFrame frame = PlaneFrame::kTarget);

/// Source-pixel coordinates for every target pixel.
template <typename T>
struct WarpGrid {
  Tensor<T> coords;                 // [2, H, W]: u_s then v_s
  std::vector<std::uint8_t> valid;  // [H, W]
  Index height = 0;
  Index width = 0;
};

template <typename T>
WarpGrid<T> warp_grid(const Homography& homography, const CameraModel& source,
                      const CameraModel& target);

/// Bilinear lookup of a [C,H,W] image at grid coordinates; invalid samples
/// are 0 in every channel. Differentiable with respect to the image.
template <typename T>
Tensor<T> sample_bilinear(const Tensor<T>& image, const WarpGrid<T>& grid);

namespace detail {

/// Applies a homography to one target row. Validity is decided on the
/// coordinates as stored in T so sampling never sees an out-of-range value.
template <typename T>
inline void transform_row(const Eigen::Matrix3d& h, Index row, Index width, Index src_width,
                          Index src_height, T* us, T* vs, std::uint8_t* valid) {
  const double v = static_cast<double>(row);
  const double bx = h(0, 1) * v + h(0, 2);
  const double by = h(1, 1) * v + h(1, 2);
  const double bz = h(2, 1) * v + h(2, 2);
  const T umax = static_cast<T>(src_width - 1);
  const T vmax = static_cast<T>(src_height - 1);
  for (Index col = 0; col < width; ++col) {
    const double u = static_cast<double>(col);
    const double z = h(2, 0) * u + bz;
    if (!(z > 0.0)) {
      us[col] = T(-1);
      vs[col] = T(-1);
      valid[col] = 0;
      continue;
    }
    const T su = static_cast<T>((h(0, 0) * u + bx) / z);
    const T sv = static_cast<T>((h(1, 0) * u + by) / z);
    us[col] = su;
    vs[col] = sv;
    valid[col] = (su >= T(0) && su <= umax && sv >= T(0) && sv <= vmax) ? 1 : 0;
  }
}

/// Corner indices and fractional weights of a bilinear lookup at a valid
/// location (0 <= u <= width-1, 0 <= v <= height-1).
template <typename T>
struct BilinearTap {
  Index i00, i01, i10, i11;
  T wx, wy;
};

template <typename T>
inline BilinearTap<T> bilinear_tap(T u, T v, Index width, Index height) {
  const Index x0 = static_cast<Index>(u);
  const Index y0 = static_cast<Index>(v);
  const Index x1 = x0 + 1 < width ? x0 + 1 : x0;
  const Index y1 = y0 + 1 < height ? y0 + 1 : y0;
  return BilinearTap<T>{y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1,
                        u - static_cast<T>(x0), v - static_cast<T>(y0)};
}

template <typename T>
inline T bilinear_value(const T* plane, const BilinearTap<T>& tap) {
  const T top = plane[tap.i00] + tap.wx * (plane[tap.i01] - plane[tap.i00]);
  const T bot = plane[tap.i10] + tap.wx * (plane[tap.i11] - plane[tap.i10]);
  return top + tap.wy * (bot - top);
}

}  // namespace detail

}  // namespace fmpi
