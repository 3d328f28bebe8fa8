#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "fmpi/geometry.hpp"
#include "fmpi/psv.hpp"
#include "fmpi/tensor.hpp"

namespace fmpi {

/// Stack of fronto-parallel RGBA planes, nearest first.
template <typename T>
struct MultiplaneImage {
  Tensor<T> rgba;  // [D', 4, H, W]
  DepthSchedule schedule;
  CameraModel camera;

  Index planes() const { return rgba.dim(0); }
};

/// Per-group network head. For each of the group's output planes p the
/// channels p*(V+1) .. p*(V+1)+V hold V-1 camera logits, the background
/// logit and the alpha logit; the last three channels are the group's
/// background image (pre-activation).
template <typename T>
struct NetHeadOutput {
  Tensor<T> raw;  // [planes*(V+1) + 3, H, W]
  Index planes = 0;
  Index views = 0;

  static Index channels(Index planes, Index views) { return planes * (views + 1) + 3; }

  Tensor<T> camera_logits(Index plane) const;  // [V-1, H, W]
  Tensor<T> background_logit(Index plane) const;  // [1, H, W]
  Tensor<T> alpha_logit(Index plane) const;  // [1, H, W]
  Tensor<T> background_logits_raw() const;  // [3, H, W]
};

/// Softmax-weighted blend: out[c] = sum_k softmax(logits)[k] * candidates[k, c].
/// logits [K,H,W], candidates [K,C,H,W] -> [C,H,W].
template <typename T>
Tensor<T> softmax_blend(const Tensor<T>& logits, const Tensor<T>& candidates);

/// For each output plane, the input plane closest in disparity (ties go to
/// the nearer plane).
std::vector<Index> nearest_input_planes(const DepthSchedule& input, const DepthSchedule& output);

/// Builds the RGBA planes of one group from its head output. Candidates for
/// output plane p are the V warped views of input plane mapping[p] plus the
/// group background image; camera V's logit is fixed to 0.
template <typename T>
std::vector<Tensor<T>> assemble_group(const NetHeadOutput<T>& head, const PlaneSweepVolume<T>& psv,
                                      std::span<const Index> input_plane_of_output);

/// Assembles the full MPI from G head outputs of S*D/G planes each.
template <typename T>
MultiplaneImage<T> assemble_mpi(std::span<const NetHeadOutput<T>> heads, const PlaneSweepVolume<T>& psv,
                                const DepthSchedule& output_schedule);

/// Over-operator: I = sum_d rgb_d * a_d * prod_{j<d} (1 - a_j). [D,4,H,W] -> [3,H,W].
template <typename T>
Tensor<T> composite(const Tensor<T>& rgba);
template <typename T>
Tensor<T> composite(const MultiplaneImage<T>& mpi) {
  return composite(mpi.rgba);
}

/// Reference accumulation from the farthest plane forward (not differentiable).
template <typename T>
Tensor<T> composite_back_to_front(const Tensor<T>& rgba);

/// Per-plane contribution a_d * prod_{j<d}(1 - a_j), [D,1,H,W].
template <typename T>
Tensor<T> contribution_weights(const Tensor<T>& rgba);

enum class DepthMode { kDepth, kDisparity };

/// Expected depth (or disparity) under the plane weights, [1,H,W]. Pixels
/// where every plane is transparent ("no hit") come out as 0.
template <typename T>
Tensor<T> composite_depth(const MultiplaneImage<T>& mpi, DepthMode mode = DepthMode::kDepth);

/// Re-renders a fixed MPI from another camera: every plane is warped with its
/// own plane homography using premultiplied colour, then composited.
template <typename T>
Tensor<T> warp_mpi(const MultiplaneImage<T>& mpi, const CameraModel& new_camera);

/// The warped planes themselves, un-premultiplied where alpha > epsilon.
template <typename T>
MultiplaneImage<T> warp_mpi_planes(const MultiplaneImage<T>& mpi, const CameraModel& new_camera,
                                   T epsilon = T(1e-6));

/// "FMPI" container: magic, u32 version, u32 D', H, W, f64 near, far,
/// D' f64 depths, camera block, then [D',4,H,W] little-endian f32.
template <typename T>
void save_mpi(const std::filesystem::path& path, const MultiplaneImage<T>& mpi);
template <typename T>
MultiplaneImage<T> load_mpi(const std::filesystem::path& path);

}  // namespace fmpi
