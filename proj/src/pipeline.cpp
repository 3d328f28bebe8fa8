#include "fmpi/pipeline.hpp"

#include <chrono>
#include <cmath>

#include "fmpi/ops.hpp"

namespace fmpi {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

}  // namespace

template <typename T>
Synthesis<T> synthesize(const PipelineConfig& cfg, const WeightStore<T>& weights,
                        std::span<const Tensor<T>> views, std::span<const CameraModel> cameras,
                        const CameraModel& target, DepthMode depth_mode) {
  const UNetConfig& net = cfg.net;
  net.validate();
  if (static_cast<Index>(views.size()) != net.views) {
    fail(ErrorCode::kConfigMismatch, "network expects " + std::to_string(net.views) + " views, scene has " +
                                         std::to_string(views.size()));
  }
  Synthesis<T> out;
  const DepthSchedule input_schedule = make_schedule(cfg.near, cfg.far, net.planes);
  const DepthSchedule output_schedule = make_schedule(cfg.near, cfg.far, net.output_planes());
  const auto psv = build_psv(views, cameras, target, input_schedule, PsvOptions{cfg.psv_threads});
  out.psv_timings = psv.timings;

  auto start = Clock::now();
  const auto grouped = group(psv, net.groups);
  const auto heads = run_groups(net, weights, grouped, cfg.group_threads);
  out.network_ms = ms_since(start);

  start = Clock::now();
  out.mpi = assemble_mpi<T>(heads, psv, output_schedule);
  out.assemble_ms = ms_since(start);

  start = Clock::now();
  out.rgb = composite(out.mpi.rgba);
  out.depth = composite_depth(out.mpi, depth_mode);
  out.composite_ms = ms_since(start);
  return out;
}

template <typename T>
MultiplaneImage<T> oracle_alpha_mpi(const SyntheticScene& scene, std::span<const Tensor<T>> views,
                                    std::span<const CameraModel> cameras, const CameraModel& target,
                                    const DepthSchedule& schedule) {
  const auto psv = build_psv(views, cameras, target, schedule);
  const Tensor<T> truth = rasterize_planes<T>(scene, target, schedule);
  const Index nd = schedule.count();
  const Index nv = psv.views();
  const Index h = target.height;
  const Index w = target.width;
  const Index n = h * w;

  std::vector<Index> by_distance(static_cast<std::size_t>(nv));
  for (Index v = 0; v < nv; ++v) by_distance[v] = v;
  const Eigen::Vector3d center = target.center();
  std::stable_sort(by_distance.begin(), by_distance.end(), [&](Index a, Index b) {
    return (cameras[a].center() - center).norm() < (cameras[b].center() - center).norm();
  });

  auto color = psv.data.data();
  auto gt = truth.data();
  std::vector<T> rgba(static_cast<std::size_t>(nd * 4 * n), T(0));
  for (Index d = 0; d < nd; ++d) {
    T* plane = rgba.data() + d * 4 * n;
    std::copy_n(gt.data() + (d * 4 + 3) * n, n, plane + 3 * n);
    for (Index p = 0; p < n; ++p) {
      for (Index v : by_distance) {
        if (!psv.valid[static_cast<std::size_t>((d * nv + v) * n + p)]) continue;
        for (Index c = 0; c < 3; ++c) plane[c * n + p] = color[((d * nv + v) * 3 + c) * n + p];
        break;
      }
    }
  }
  return MultiplaneImage<T>{Tensor<T>(Shape{nd, 4, h, w}, std::move(rgba)), schedule, target};
}

CameraModel pad_camera(const CameraModel& camera, int multiple) {
  if (multiple < 1) fail(ErrorCode::kInvalidArgument, "padding multiple must be positive");
  CameraModel out = camera;
  out.width = (camera.width + multiple - 1) / multiple * multiple;
  out.height = (camera.height + multiple - 1) / multiple * multiple;
  return out;
}

template <typename T>
Tensor<T> crop_top_left(const Tensor<T>& image, Index height, Index width) {
  if (image.rank() != 3 || image.dim(1) < height || image.dim(2) < width) {
    fail(ErrorCode::kDimension, "crop: cannot take " + std::to_string(height) + "x" + std::to_string(width) +
                                    " from " + shape_str(image.shape()));
  }
  if (image.dim(1) == height && image.dim(2) == width) return image;
  return slice(slice(image, 1, 0, height), 2, 0, width);
}

template <typename T>
std::vector<Tensor<T>> cast_images(std::span<const Tensor<float>> images) {
  std::vector<Tensor<T>> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(img.template cast<T>());
  return out;
}

#define FMPI_INSTANTIATE(T)                                                                             \
  template struct Synthesis<T>;                                                                         \
  template Synthesis<T> synthesize<T>(const PipelineConfig&, const WeightStore<T>&,                     \
                                      std::span<const Tensor<T>>, std::span<const CameraModel>,         \
                                      const CameraModel&, DepthMode);                                   \
  template MultiplaneImage<T> oracle_alpha_mpi<T>(const SyntheticScene&, std::span<const Tensor<T>>,    \
                                                  std::span<const CameraModel>, const CameraModel&,     \
                                                  const DepthSchedule&);                                \
  template Tensor<T> crop_top_left<T>(const Tensor<T>&, Index, Index);                                  \
  template std::vector<Tensor<T>> cast_images<T>(std::span<const Tensor<float>>);

FMPI_INSTANTIATE(float)
FMPI_INSTANTIATE(double)
#undef FMPI_INSTANTIATE

}  // namespace fmpi
