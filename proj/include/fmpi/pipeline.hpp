#pragma once

// End-to-end view synthesis: PSV -> grouping -> U-Net -> MPI assembly ->
// compositing.

#include <span>
#include <vector>

#include "fmpi/backbone.hpp"
#include "fmpi/mpi.hpp"
#include "fmpi/psv.hpp"
#include "fmpi/scenes.hpp"

namespace fmpi {

struct PipelineConfig {
  UNetConfig net;
  double near = 2.0;
  double far = 20.0;
  int psv_threads = 1;
  int group_threads = 1;  // concurrent group forward passes
};

template <typename T>
struct Synthesis {
  MultiplaneImage<T> mpi;
  Tensor<T> rgb;    // [3, H, W]
  Tensor<T> depth;  // [1, H, W]
  PsvTimings psv_timings;
  double network_ms = 0.0;
  double assemble_ms = 0.0;
  double composite_ms = 0.0;
};

/// Full pipeline for one target camera. Differentiable with respect to the
/// weights when a gradient tape is active.
template <typename T>
Synthesis<T> synthesize(const PipelineConfig& cfg, const WeightStore<T>& weights,
                        std::span<const Tensor<T>> views, std::span<const CameraModel> cameras,
                        const CameraModel& target, DepthMode depth_mode = DepthMode::kDepth);

/// MPI whose alpha comes from the scene's ground truth and whose colour on
/// each plane is taken from the nearest source view (by camera center) that
/// sees the pixel. Input and output planes share `schedule`.
template <typename T>
MultiplaneImage<T> oracle_alpha_mpi(const SyntheticScene& scene, std::span<const Tensor<T>> views,
                                    std::span<const CameraModel> cameras, const CameraModel& target,
                                    const DepthSchedule& schedule);

/// Camera whose image is enlarged to the next multiple of `multiple` on the
/// right and bottom; the principal point is unchanged.
CameraModel pad_camera(const CameraModel& camera, int multiple);

/// Top-left [C, height, width] window of a [C, H, W] tensor.
template <typename T>
Tensor<T> crop_top_left(const Tensor<T>& image, Index height, Index width);

/// Casts every float image to T.
template <typename T>
std::vector<Tensor<T>> cast_images(std::span<const Tensor<float>> images);

}  // namespace fmpi
