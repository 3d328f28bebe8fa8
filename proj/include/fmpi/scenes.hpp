#pragma once

// Scene bundles, the on-disk scene directory, and synthetic scenes of
// textured rectangles with an exact ray-traced ground truth.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fmpi/geometry.hpp"
#include "fmpi/psv.hpp"
#include "fmpi/tensor.hpp"

namespace fmpi {

enum class TextureKind { kConstant, kChecker, kNoise };

/// Procedural texture parameters; texels are regenerated from these.
struct TextureSpec {
  TextureKind kind = TextureKind::kConstant;
  int width = 2;
  int height = 2;
  std::array<double, 3> color_a{0.5, 0.5, 0.5};
  std::array<double, 3> color_b{0.0, 0.0, 0.0};
  int cell = 8;  // checker square / noise lattice spacing, in texels
  std::uint64_t seed = 0;
};

struct Texture {
  TextureSpec spec;
  std::vector<double> texels;  // [3, height, width]

  static Texture make(const TextureSpec& spec);
  double at(int channel, int row, int col) const {
    return texels[static_cast<std::size_t>((channel * spec.height + row) * spec.width + col)];
  }
};

/// A textured rectangle on the plane z = depth of the world frame. Texel
/// (i, j) sits at (x0 + i*pitch, y0 + j*pitch, depth); the rectangle spans
/// the texel centers, and lookups between them are bilinear.
struct Rectangle {
  double depth = 1.0;
  double x0 = 0.0;
  double y0 = 0.0;
  double pitch = 0.01;
  double opacity = 1.0;
  Texture texture;
};

struct SyntheticScene {
  std::vector<Rectangle> rectangles;  // kept sorted nearest first

  void sort_by_depth();
};

/// Texel pitch and origin that put texel (i, j) exactly on pixel (i, j) of
/// `camera` (which must have R = I) for a rectangle at `depth`.
Rectangle aligned_rectangle(const CameraModel& camera, double depth, const Texture& texture,
                            double opacity = 1.0, int col0 = 0, int row0 = 0);

/// Front-to-back over-compositing of every rectangle hit by each pixel ray;
/// [3, H, W]. Empty scenes render black.
template <typename T>
Tensor<T> raytrace(const SyntheticScene& scene, const CameraModel& camera);

/// Ground-truth MPI planes [D, 4, H, W]: each rectangle is placed on the
/// schedule plane nearest to it in disparity and rendered there; RGB is
/// un-premultiplied, alpha is the coverage-weighted opacity.
template <typename T>
Tensor<T> rasterize_planes(const SyntheticScene& scene, const CameraModel& camera, const DepthSchedule& schedule);

struct View {
  CameraModel camera;
  Tensor<float> image;  // undefined for targets without ground truth
};

struct SceneBundle {
  std::vector<View> sources;
  std::vector<View> targets;
  double near = 1.0;
  double far = 100.0;
  std::optional<SyntheticScene> synthetic;

  std::vector<Tensor<float>> source_images() const;
  std::vector<CameraModel> source_cameras() const;
  /// Throws unless there is at least one source and image sizes match cameras.
  void validate() const;
};

/// Rig and scene-content parameters of the synthetic family.
struct FamilySpec {
  int width = 96;
  int height = 96;
  double focal = 96.0;
  double rig_width = 0.40;
  double rig_height = 0.25;
  double near = 2.0;
  double far = 20.0;
  int targets = 2;
  int min_foreground = 1;
  int max_foreground = 3;
  /// Foreground rectangles snap to this many disparity-uniform depths when > 0.
  int depth_levels = 0;
  bool translucent = true;
};

/// The 2x2 source rig: R = I, centers at (+-rig_width/2, +-rig_height/2, 0).
std::vector<CameraModel> rig_cameras(const FamilySpec& spec);

/// Scene `index` of the family drawn from `seed`; deterministic.
SceneBundle generate_scene(std::uint64_t seed, std::uint64_t index, const FamilySpec& spec = {});

/// Renders every source and target of `scene` with the ray tracer.
SceneBundle render_bundle(const SyntheticScene& scene, const std::vector<CameraModel>& sources,
                          const std::vector<CameraModel>& targets, double near, double far);

enum class ImageFormat { kFimg, kPng };

/// Directory with scene.json plus one image file per view.
SceneBundle load_scene_dir(const std::filesystem::path& dir);
void save_scene_dir(const std::filesystem::path& dir, const SceneBundle& bundle,
                    ImageFormat format = ImageFormat::kFimg);

}  // namespace fmpi
