#include "fmpi/psv.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <sstream>

#include "fmpi/ops.hpp"
#include "fmpi/parallel.hpp"

namespace fmpi {

DepthSchedule make_schedule(double near, double far, Index count) {
  if (!(near > 0.0) || !std::isfinite(near)) {
    fail(ErrorCode::kInvalidArgument, "schedule: near must be positive and finite");
  }
  if (!(far > near)) fail(ErrorCode::kInvalidArgument, "schedule: far must exceed near");
  if (count < 1) fail(ErrorCode::kInvalidArgument, "schedule: need at least one plane");
  DepthSchedule s;
  s.near = near;
  s.far = far;
  s.depths.resize(static_cast<std::size_t>(count));
  const double near_disp = 1.0 / near;
  const double far_disp = std::isinf(far) ? 0.0 : 1.0 / far;
  for (Index k = 0; k < count; ++k) {
    if (count == 1) {
      s.depths[0] = near;
      break;
    }
    const double frac = static_cast<double>(k) / static_cast<double>(count - 1);
    const double disp = near_disp + frac * (far_disp - near_disp);
    s.depths[k] = disp == 0.0 ? std::numeric_limits<double>::infinity() : 1.0 / disp;
  }
  s.depths.front() = near;
  if (count > 1) s.depths.back() = far;
  return s;
}

namespace {

using Clock = std::chrono::steady_clock;

std::int64_t elapsed_ns(Clock::time_point from, Clock::time_point to) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(to - from).count();
}

}  // namespace

template <typename T>
void build_psv_into(PlaneSweepVolume<T>& psv, std::span<const Tensor<T>> views,
                    std::span<const CameraModel> source_cameras, const CameraModel& target_camera,
                    const DepthSchedule& schedule, const PsvOptions& options) {
  const auto start = Clock::now();
  if (views.size() != source_cameras.size() || views.empty()) {
    fail(ErrorCode::kDimension, "build_psv: need one camera per view and at least one view");
  }
  const Index nv = static_cast<Index>(views.size());
  const Index nd = schedule.count();
  if (nd < 1) fail(ErrorCode::kInvalidArgument, "build_psv: empty depth schedule");
  const Index h = target_camera.height;
  const Index w = target_camera.width;
  for (Index v = 0; v < nv; ++v) {
    const auto& cam = source_cameras[v];
    const Shape expected{3, cam.height, cam.width};
    if (views[v].shape() != expected) {
      fail(ErrorCode::kDimension, "build_psv: view " + std::to_string(v) + " has shape " +
                                      shape_str(views[v].shape()) + ", camera declares " +
                                      shape_str(expected));
    }
  }

  // Mapping: one homography per (plane, view).
  std::vector<Homography> homographies(static_cast<std::size_t>(nd * nv));
  for (Index d = 0; d < nd; ++d) {
    for (Index v = 0; v < nv; ++v) {
      try {
        homographies[d * nv + v] = plane_homography(source_cameras[v], target_camera, schedule.depths[d]);
      } catch (const Error& e) {
        std::ostringstream msg;
        msg << "plane " << d << ", view " << v << ": " << e.what();
        throw Error(e.code(), msg.str());
      }
    }
  }
  const auto mapped = Clock::now();

  const Shape shape{nd, nv, 3, h, w};
  const std::size_t plane_px = static_cast<std::size_t>(h * w);
  if (!psv.data.defined() || psv.data.shape() != shape) {
    psv.data = Tensor<T>::zeros(shape);
    psv.valid.assign(static_cast<std::size_t>(nd * nv) * plane_px, 0);
  }
  T* out = psv.data.mutable_data().data();
  std::uint8_t* valid = psv.valid.data();

  std::atomic<std::int64_t> coord_ns{0};
  std::atomic<std::int64_t> sample_ns{0};
  const int threads = options.threads;
  const int workers = threads <= 0 ? default_thread_count() : threads;
  std::vector<std::vector<T>> grids(static_cast<std::size_t>(std::max(1, workers)));

  parallel_for(nd * nv, workers, [&](Index pair) {
    const Index v = pair % nv;
    const CameraModel& cam = source_cameras[v];
    const Index sw = cam.width;
    const Index sh = cam.height;
    // Each worker owns the slot of its first assigned pair modulo the pool size.
    auto& grid = grids[static_cast<std::size_t>(pair % std::max(1, workers))];
    grid.resize(2 * plane_px);
    T* us = grid.data();
    T* vs = grid.data() + plane_px;
    std::uint8_t* ok = valid + static_cast<std::size_t>(pair) * plane_px;

    const auto t0 = Clock::now();
    for (Index row = 0; row < h; ++row) {
      detail::transform_row<T>(homographies[pair].matrix, row, w, sw, sh, us + row * w, vs + row * w,
                               ok + row * w);
    }
    const auto t1 = Clock::now();

    const T* src = views[v].data().data();
    T* dst = out + static_cast<std::size_t>(pair) * 3 * plane_px;
    const std::size_t src_plane = static_cast<std::size_t>(sh * sw);
    for (std::size_t p = 0; p < plane_px; ++p) {
      if (!ok[p]) {
        dst[p] = T(0);
        dst[plane_px + p] = T(0);
        dst[2 * plane_px + p] = T(0);
        continue;
      }
      const auto tap = detail::bilinear_tap<T>(us[p], vs[p], sw, sh);
      dst[p] = detail::bilinear_value(src, tap);
      dst[plane_px + p] = detail::bilinear_value(src + src_plane, tap);
      dst[2 * plane_px + p] = detail::bilinear_value(src + 2 * src_plane, tap);
    }
    const auto t2 = Clock::now();
    coord_ns += elapsed_ns(t0, t1);
    sample_ns += elapsed_ns(t1, t2);
  });

  psv.schedule = schedule;
  psv.target_camera = target_camera;
  psv.source_cameras.assign(source_cameras.begin(), source_cameras.end());
  psv.timings.mapping_ms = elapsed_ns(start, mapped) * 1e-6;
  psv.timings.coord_ms = coord_ns.load() * 1e-6;
  psv.timings.sampling_ms = sample_ns.load() * 1e-6;
  psv.timings.total_ms = elapsed_ns(start, Clock::now()) * 1e-6;
}

template <typename T>
PlaneSweepVolume<T> build_psv(std::span<const Tensor<T>> views,
                              std::span<const CameraModel> source_cameras,
                              const CameraModel& target_camera, const DepthSchedule& schedule,
                              const PsvOptions& options) {
  PlaneSweepVolume<T> psv;
  build_psv_into(psv, views, source_cameras, target_camera, schedule, options);
  return psv;
}

template <typename T>
Tensor<T> GroupedPsv<T>::group_input(Index g) const {
  return reshape(slice(data, 0, g, 1), Shape{data.dim(1), data.dim(2), data.dim(3)});
}

template <typename T>
GroupedPsv<T> group(const PlaneSweepVolume<T>& psv, Index groups) {
  const Index nd = psv.planes();
  if (groups < 1 || nd % groups != 0) {
    fail(ErrorCode::kInvalidGrouping, "cannot split " + std::to_string(nd) + " planes into " +
                                          std::to_string(groups) + " groups (D mod G must be 0)");
  }
  GroupedPsv<T> out;
  out.layout = GroupLayout{groups, nd / groups, psv.views()};
  // The [D,V,3,H,W] buffer is already plane-major, so the grouping is a pure view change.
  out.data = reshape(psv.data, Shape{groups, out.layout.channels(), psv.height(), psv.width()});
  return out;
}

template <typename T>
Tensor<T> ungroup(const Tensor<T>& grouped, Index groups, Index supersample, Index planes) {
  if (grouped.rank() != 4 || grouped.dim(0) != groups) {
    fail(ErrorCode::kDimension, "ungroup: expected [G,C,H,W] with G=" + std::to_string(groups) +
                                    ", got " + shape_str(grouped.shape()));
  }
  if (groups < 1 || supersample < 1 || planes % groups != 0) {
    fail(ErrorCode::kInvalidGrouping, "ungroup: invalid G/S/D combination");
  }
  const Index out_per_group = supersample * planes / groups;
  const Index channels = grouped.dim(1);
  if (channels % out_per_group != 0) {
    fail(ErrorCode::kDimension, "ungroup: " + std::to_string(channels) +
                                    " channels not divisible by " + std::to_string(out_per_group) +
                                    " planes per group");
  }
  return reshape(grouped, Shape{supersample * planes, channels / out_per_group, grouped.dim(2),
                                grouped.dim(3)});
}

#define FMPI_INSTANTIATE(T)                                                                       \
  template struct PlaneSweepVolume<T>;                                                            \
  template struct GroupedPsv<T>;                                                                  \
  template PlaneSweepVolume<T> build_psv<T>(std::span<const Tensor<T>>,                           \
                                            std::span<const CameraModel>, const CameraModel&,     \
                                            const DepthSchedule&, const PsvOptions&);             \
  template void build_psv_into<T>(PlaneSweepVolume<T>&, std::span<const Tensor<T>>,              \
                                  std::span<const CameraModel>, const CameraModel&,               \
                                  const DepthSchedule&, const PsvOptions&);                       \
  template GroupedPsv<T> group<T>(const PlaneSweepVolume<T>&, Index);                             \
  template Tensor<T> ungroup<T>(const Tensor<T>&, Index, Index, Index);

FMPI_INSTANTIATE(float)
FMPI_INSTANTIATE(double)
#undef FMPI_INSTANTIATE

}  // namespace fmpi
