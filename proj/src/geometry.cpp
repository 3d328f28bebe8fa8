#include "fmpi/geometry.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <sstream>

namespace fmpi {

Eigen::Matrix3d CameraModel::K() const {
  Eigen::Matrix3d k;
  k << intrinsics.fx, 0.0, intrinsics.cx, 0.0, intrinsics.fy, intrinsics.cy, 0.0, 0.0, 1.0;
  return k;
}

Eigen::Matrix3d CameraModel::K_inverse() const {
  Eigen::Matrix3d k;
  k << 1.0 / intrinsics.fx, 0.0, -intrinsics.cx / intrinsics.fx, 0.0, 1.0 / intrinsics.fy,
      -intrinsics.cy / intrinsics.fy, 0.0, 0.0, 1.0;
  return k;
}

Eigen::Vector3d CameraModel::center() const { return -rotation.transpose() * translation; }

void CameraModel::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::kInvalidArgument, "camera: " + what); };
  if (width <= 0 || height <= 0) bad("non-positive image size");
  if (!(intrinsics.fx > 0.0) || !(intrinsics.fy > 0.0)) bad("focal lengths must be positive");
  if (!(intrinsics.cx >= 0.0 && intrinsics.cx < width && intrinsics.cy >= 0.0 &&
        intrinsics.cy < height)) {
    bad("principal point outside the image");
  }
  if (!rotation.allFinite() || !translation.allFinite()) bad("non-finite pose");
  const double ortho = (rotation * rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (ortho > 1e-6) bad("rotation is not orthonormal");
  if (std::abs(rotation.determinant() - 1.0) > 1e-6) bad("rotation determinant is not +1");
}

Eigen::Vector2d CameraModel::project(const Eigen::Vector3d& world, double* depth) const {
  const Eigen::Vector3d cam = rotation * world + translation;
  if (depth) *depth = cam.z();
  return {intrinsics.fx * cam.x() / cam.z() + intrinsics.cx,
          intrinsics.fy * cam.y() / cam.z() + intrinsics.cy};
}

Eigen::Vector3d CameraModel::ray_direction(double u, double v) const {
  const Eigen::Vector3d cam((u - intrinsics.cx) / intrinsics.fx, (v - intrinsics.cy) / intrinsics.fy,
                            1.0);
  return rotation.transpose() * cam;
}

bool CameraModel::operator==(const CameraModel& other) const {
  return width == other.width && height == other.height && intrinsics.fx == other.intrinsics.fx &&
         intrinsics.fy == other.intrinsics.fy && intrinsics.cx == other.intrinsics.cx &&
         intrinsics.cy == other.intrinsics.cy && rotation == other.rotation &&
         translation == other.translation;
}

CameraModel camera_at(const Intrinsics& intrinsics, int width, int height,
                      const Eigen::Vector3d& center, const Eigen::Matrix3d& rotation) {
  CameraModel cam;
  cam.intrinsics = intrinsics;
  cam.width = width;
  cam.height = height;
  cam.rotation = rotation;
  cam.translation = -rotation * center;
  return cam;
}

Homography plane_homography(const CameraModel& source, const CameraModel& target, double depth,
                            PlaneFrame frame) {
  if (std::isnan(depth) || !(depth > 0.0)) {
    std::ostringstream msg;
    msg << "plane depth must be positive, got " << depth;
    fail(ErrorCode::kInvalidArgument, msg.str());
  }
  Homography out;
  out.plane_depth = depth;
  if (source.intrinsics.fx == target.intrinsics.fx && source.intrinsics.fy == target.intrinsics.fy &&
      source.intrinsics.cx == target.intrinsics.cx && source.intrinsics.cy == target.intrinsics.cy &&
      source.rotation == target.rotation && source.translation == target.translation) {
    return out;
  }
  // Relative pose target -> source: x_s = R x_t + t.
  const Eigen::Matrix3d r = source.rotation * target.rotation.transpose();
  const Eigen::Vector3d t = source.translation - r * target.translation;
  Eigen::Matrix3d metric = r;
  if (std::isfinite(depth)) {
    // Plane n . x_t = d in target coordinates; points on it satisfy
    // x_s = (R + t n^T / d) x_t, whose determinant (d + n . R^T t) / d
    // vanishes when the plane contains the source center.
    Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
    double offset = depth;
    if (frame == PlaneFrame::kSource) {
      normal = r.row(2).transpose();
      offset = depth - t.z();
    }
    const double tol = 1e-12 * std::max(1.0, depth);
    if (std::abs(offset) <= tol) {
      std::ostringstream msg;
      msg << "plane at depth " << depth << " passes through the target camera center";
      fail(ErrorCode::kDegeneratePlane, msg.str());
    }
    if (std::abs(offset + normal.dot(r.transpose() * t)) <= tol) {
      std::ostringstream msg;
      msg << "plane at depth " << depth << " passes through the source camera center";
      fail(ErrorCode::kDegeneratePlane, msg.str());
    }
    metric += t * normal.transpose() / offset;
  }
  out.matrix = source.K() * metric * target.K_inverse();
  return out;
}

template <typename T>
WarpGrid<T> warp_grid(const Homography& homography, const CameraModel& source,
                      const CameraModel& target) {
  const Index h = target.height;
  const Index w = target.width;
  std::vector<T> coords(static_cast<std::size_t>(2 * h * w));
  WarpGrid<T> grid;
  grid.height = h;
  grid.width = w;
  grid.valid.resize(static_cast<std::size_t>(h * w));
  for (Index row = 0; row < h; ++row) {
    detail::transform_row<T>(homography.matrix, row, w, source.width, source.height,
                             coords.data() + row * w, coords.data() + h * w + row * w,
                             grid.valid.data() + row * w);
  }
  grid.coords = Tensor<T>(Shape{2, h, w}, std::move(coords));
  return grid;
}

template <typename T>
Tensor<T> sample_bilinear(const Tensor<T>& image, const WarpGrid<T>& grid) {
  if (image.rank() != 3) {
    fail(ErrorCode::kDimension, "sample_bilinear: image must be [C,H,W], got " + shape_str(image.shape()));
  }
  const Index c = image.dim(0);
  const Index ih = image.dim(1);
  const Index iw = image.dim(2);
  const Index n = grid.height * grid.width;
  auto coords = grid.coords.data();
  auto img = image.data();
  std::vector<T> out(static_cast<std::size_t>(c * n), T(0));
  for (Index p = 0; p < n; ++p) {
    if (!grid.valid[p]) continue;
    const auto tap = detail::bilinear_tap<T>(coords[p], coords[n + p], iw, ih);
    for (Index ch = 0; ch < c; ++ch) out[ch * n + p] = detail::bilinear_value(img.data() + ch * ih * iw, tap);
  }
  return make_result<T>(Shape{c, grid.height, grid.width}, std::move(out), {image},
                        [image, grid, c, ih, iw, n](std::span<const T> g) {
                          auto gi = grad_sink(image);
                          if (gi.empty()) return;
                          auto coords = grid.coords.data();
                          for (Index p = 0; p < n; ++p) {
                            if (!grid.valid[p]) continue;
                            const auto tap = detail::bilinear_tap<T>(coords[p], coords[n + p], iw, ih);
                            for (Index ch = 0; ch < c; ++ch) {
                              T* plane = gi.data() + ch * ih * iw;
                              const T gv = g[ch * n + p];
                              plane[tap.i00] += gv * (1 - tap.wx) * (1 - tap.wy);
                              plane[tap.i01] += gv * tap.wx * (1 - tap.wy);
                              plane[tap.i10] += gv * (1 - tap.wx) * tap.wy;
                              plane[tap.i11] += gv * tap.wx * tap.wy;
                            }
                          }
                        });
}

template struct WarpGrid<float>;
template struct WarpGrid<double>;
template WarpGrid<float> warp_grid<float>(const Homography&, const CameraModel&, const CameraModel&);
template WarpGrid<double> warp_grid<double>(const Homography&, const CameraModel&, const CameraModel&);
template Tensor<float> sample_bilinear<float>(const Tensor<float>&, const WarpGrid<float>&);
template Tensor<double> sample_bilinear<double>(const Tensor<double>&, const WarpGrid<double>&);

}  // namespace fmpi
