#pragma once

#include <span>
#include <vector>

#include "fmpi/geometry.hpp"
#include "fmpi/tensor.hpp"

namespace fmpi {

/// Plane depths spaced uniformly in disparity, nearest first.
struct DepthSchedule {
  double near = 1.0;
  double far = 100.0;  // may be +infinity
  std::vector<double> depths;

  Index count() const { return static_cast<Index>(depths.size()); }
  double disparity(Index k) const { return 1.0 / depths[static_cast<std::size_t>(k)]; }
};

/// depth_k = 1 / lerp(1/near, 1/far, k/(D-1)); a single plane sits at `near`.
DepthSchedule make_schedule(double near, double far, Index count);

/// Wall-clock per construction stage, summed over all (plane, view) pairs.
struct PsvTimings {
  double mapping_ms = 0.0;
  double coord_ms = 0.0;
  double sampling_ms = 0.0;
  double total_ms = 0.0;
};

template <typename T>
struct PlaneSweepVolume {
  Tensor<T> data;                   // [D, V, 3, H, W]
  std::vector<std::uint8_t> valid;  // [D, V, 1, H, W]; data is 0 where invalid
  DepthSchedule schedule;
  CameraModel target_camera;
  std::vector<CameraModel> source_cameras;
  PsvTimings timings;

  Index planes() const { return schedule.count(); }
  Index views() const { return static_cast<Index>(source_cameras.size()); }
  Index height() const { return target_camera.height; }
  Index width() const { return target_camera.width; }
  bool is_valid(Index d, Index v, Index y, Index x) const {
    return valid[static_cast<std::size_t>(((d * views() + v) * height() + y) * width() + x)] != 0;
  }
};

struct PsvOptions {
  int threads = 1;  // 0 = hardware concurrency
};

/// Warps every view onto every plane of the target camera:
/// data[d, v] = sample_bilinear(view_v, warp_grid(plane_homography(cam_v, target, depth_d))).
template <typename T>
PlaneSweepVolume<T> build_psv(std::span<const Tensor<T>> views,
                              std::span<const CameraModel> source_cameras,
                              const CameraModel& target_camera, const DepthSchedule& schedule,
                              const PsvOptions& options = {});

/// Same as build_psv but reuses the buffers of `psv` when the shape matches.
template <typename T>
void build_psv_into(PlaneSweepVolume<T>& psv, std::span<const Tensor<T>> views,
                    std::span<const CameraModel> source_cameras, const CameraModel& target_camera,
                    const DepthSchedule& schedule, const PsvOptions& options = {});

/// Channel bookkeeping of a grouped PSV. Group g holds the consecutive planes
/// [g*D/G, (g+1)*D/G); channels are ordered plane-in-group major, then view,
/// then RGB.
struct GroupLayout {
  Index groups = 1;
  Index planes_per_group = 1;
  Index views = 1;
  static constexpr Index kColors = 3;

  Index channels() const { return planes_per_group * views * kColors; }
  Index channel(Index plane_in_group, Index view, Index color) const {
    return (plane_in_group * views + view) * kColors + color;
  }
  Index plane(Index group, Index plane_in_group) const { return group * planes_per_group + plane_in_group; }
};

template <typename T>
struct GroupedPsv {
  Tensor<T> data;  // [G, (D/G)*V*3, H, W]
  GroupLayout layout;

  /// One group as a [(D/G)*V*3, H, W] network input.
  Tensor<T> group_input(Index g) const;
};

/// Splits the depth axis into G consecutive groups. D mod G != 0 is an
/// invalid-grouping error.
template <typename T>
GroupedPsv<T> group(const PlaneSweepVolume<T>& psv, Index groups);

/// Inverse plane ordering for per-group outputs with S*D/G planes each:
/// [G, (S*D/G)*C', H, W] -> [S*D, C', H, W]. `planes` is D.
template <typename T>
Tensor<T> ungroup(const Tensor<T>& grouped, Index groups, Index supersample, Index planes);

}  // namespace fmpi
