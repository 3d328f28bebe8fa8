#include "fmpi/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "fmpi/image_io.hpp"

namespace fmpi {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Textures

namespace {

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

}  // namespace

Texture Texture::make(const TextureSpec& spec) {
  if (spec.width < 1 || spec.height < 1) fail(ErrorCode::kInvalidArgument, "texture size must be positive");
  Texture tex;
  tex.spec = spec;
  const int w = spec.width;
  const int h = spec.height;
  tex.texels.assign(static_cast<std::size_t>(3 * w * h), 0.0);
  const int cell = std::max(1, spec.cell);
  switch (spec.kind) {
    case TextureKind::kConstant:
      for (int c = 0; c < 3; ++c)
        std::fill_n(tex.texels.begin() + c * w * h, w * h, spec.color_a[c]);
      break;
    case TextureKind::kChecker:
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const bool odd = ((x / cell) + (y / cell)) % 2 != 0;
          for (int c = 0; c < 3; ++c) tex.texels[(c * h + y) * w + x] = odd ? spec.color_b[c] : spec.color_a[c];
        }
      break;
    case TextureKind::kNoise: {
      // Value noise: random lattice values, smoothstep-interpolated, mixed
      // between the two colours per channel.
      const int lw = w / cell + 2;
      const int lh = h / cell + 2;
      std::mt19937_64 rng(spec.seed);
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      std::vector<double> lattice(static_cast<std::size_t>(3 * lw * lh));
      for (auto& v : lattice) v = unit(rng);
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) {
            const double fx = static_cast<double>(x) / cell;
            const double fy = static_cast<double>(y) / cell;
            const int ix = static_cast<int>(fx);
            const int iy = static_cast<int>(fy);
            const double sx = smoothstep(fx - ix);
            const double sy = smoothstep(fy - iy);
            const double* l = lattice.data() + c * lw * lh;
            const double top = l[iy * lw + ix] + sx * (l[iy * lw + ix + 1] - l[iy * lw + ix]);
            const double bot = l[(iy + 1) * lw + ix] + sx * (l[(iy + 1) * lw + ix + 1] - l[(iy + 1) * lw + ix]);
            const double n = top + sy * (bot - top);
            tex.texels[(c * h + y) * w + x] = spec.color_a[c] + n * (spec.color_b[c] - spec.color_a[c]);
          }
      break;
    }
  }
  return tex;
}

void SyntheticScene::sort_by_depth() {
  std::stable_sort(rectangles.begin(), rectangles.end(),
                   [](const Rectangle& a, const Rectangle& b) { return a.depth < b.depth; });
}

Rectangle aligned_rectangle(const CameraModel& camera, double depth, const Texture& texture, double opacity,
                            int col0, int row0) {
  const Eigen::Vector3d c = camera.center();
  const double z = depth - c.z();
  Rectangle r;
  r.depth = depth;
  r.pitch = z / camera.intrinsics.fx;
  r.x0 = c.x() + (col0 - camera.intrinsics.cx) * z / camera.intrinsics.fx;
  r.y0 = c.y() + (row0 - camera.intrinsics.cy) * z / camera.intrinsics.fy;
  r.opacity = opacity;
  r.texture = texture;
  return r;
}

// ---------------------------------------------------------------------------
// Ray tracing

namespace {

// Texture colour where the ray hits the rectangle; false when it misses.
bool hit(const Rectangle& r, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, double* rgb) {
  if (!(dir.z() > 0.0)) return false;
  const double t = (r.depth - origin.z()) / dir.z();
  if (!(t > 0.0)) return false;
  const double tw = r.texture.spec.width - 1;
  const double th = r.texture.spec.height - 1;
  constexpr double kEps = 1e-9;
  double i = (origin.x() + t * dir.x() - r.x0) / r.pitch;
  double j = (origin.y() + t * dir.y() - r.y0) / r.pitch;
  if (i < -kEps || j < -kEps || i > tw + kEps || j > th + kEps) return false;
  i = std::clamp(i, 0.0, tw);
  j = std::clamp(j, 0.0, th);
  const int x0 = static_cast<int>(i);
  const int y0 = static_cast<int>(j);
  const int x1 = std::min(x0 + 1, r.texture.spec.width - 1);
  const int y1 = std::min(y0 + 1, r.texture.spec.height - 1);
  const double wx = i - x0;
  const double wy = j - y0;
  for (int c = 0; c < 3; ++c) {
    const double top = r.texture.at(c, y0, x0) + wx * (r.texture.at(c, y0, x1) - r.texture.at(c, y0, x0));
    const double bot = r.texture.at(c, y1, x0) + wx * (r.texture.at(c, y1, x1) - r.texture.at(c, y1, x0));
    rgb[c] = top + wy * (bot - top);
  }
  return true;
}

std::vector<const Rectangle*> depth_order(const SyntheticScene& scene) {
  std::vector<const Rectangle*> order;
  for (const auto& r : scene.rectangles) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(), [](const Rectangle* a, const Rectangle* b) { return a->depth < b->depth; });
  return order;
}

}  // namespace

template <typename T>
Tensor<T> raytrace(const SyntheticScene& scene, const CameraModel& camera) {
  const Index h = camera.height;
  const Index w = camera.width;
  const Index n = h * w;
  const auto order = depth_order(scene);
  const Eigen::Vector3d origin = camera.center();
  std::vector<T> out(static_cast<std::size_t>(3 * n), T(0));
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const Eigen::Vector3d dir = camera.ray_direction(static_cast<double>(x), static_cast<double>(y));
      double acc[3] = {0, 0, 0};
      double transmit = 1.0;
      for (const Rectangle* r : order) {
        double rgb[3];
        if (!hit(*r, origin, dir, rgb)) continue;
        for (int c = 0; c < 3; ++c) acc[c] += (rgb[c] * r->opacity) * transmit;
        transmit *= 1.0 - r->opacity;
      }
      for (int c = 0; c < 3; ++c) out[c * n + y * w + x] = static_cast<T>(acc[c]);
    }
  }
  return Tensor<T>(Shape{3, h, w}, std::move(out));
}

template <typename T>
Tensor<T> rasterize_planes(const SyntheticScene& scene, const CameraModel& camera, const DepthSchedule& schedule) {
  const Index nd = schedule.count();
  if (nd < 1) fail(ErrorCode::kInvalidArgument, "rasterize_planes: empty schedule");
  const Index h = camera.height;
  const Index w = camera.width;
  const Index n = h * w;
  const auto order = depth_order(scene);
  std::vector<Index> plane_of(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    const double disp = 1.0 / order[k]->depth;
    Index best = 0;
    for (Index d = 1; d < nd; ++d) {
      if (std::abs(schedule.disparity(d) - disp) < std::abs(schedule.disparity(best) - disp)) best = d;
    }
    plane_of[k] = best;
  }
  const Eigen::Vector3d origin = camera.center();
  std::vector<T> out(static_cast<std::size_t>(nd * 4 * n), T(0));
  std::vector<double> premult(static_cast<std::size_t>(nd * 3));
  std::vector<double> transmit(static_cast<std::size_t>(nd));
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const Eigen::Vector3d dir = camera.ray_direction(static_cast<double>(x), static_cast<double>(y));
      std::fill(premult.begin(), premult.end(), 0.0);
      std::fill(transmit.begin(), transmit.end(), 1.0);
      for (std::size_t k = 0; k < order.size(); ++k) {
        double rgb[3];
        if (!hit(*order[k], origin, dir, rgb)) continue;
        const Index d = plane_of[k];
        const double a = order[k]->opacity;
        for (int c = 0; c < 3; ++c) premult[d * 3 + c] += (rgb[c] * a) * transmit[d];
        transmit[d] *= 1.0 - a;
      }
      const Index p = y * w + x;
      for (Index d = 0; d < nd; ++d) {
        const double alpha = 1.0 - transmit[d];
        T* plane = out.data() + d * 4 * n;
        plane[3 * n + p] = static_cast<T>(alpha);
        if (alpha > 0.0) {
          for (int c = 0; c < 3; ++c) plane[c * n + p] = static_cast<T>(premult[d * 3 + c] / alpha);
        }
      }
    }
  }
  return Tensor<T>(Shape{nd, 4, h, w}, std::move(out));
}

// ---------------------------------------------------------------------------
// Bundles

std::vector<Tensor<float>> SceneBundle::source_images() const {
  std::vector<Tensor<float>> out;
  for (const auto& v : sources) out.push_back(v.image);
  return out;
}

std::vector<CameraModel> SceneBundle::source_cameras() const {
  std::vector<CameraModel> out;
  for (const auto& v : sources) out.push_back(v.camera);
  return out;
}

void SceneBundle::validate() const {
  if (sources.empty()) fail(ErrorCode::kInvalidArgument, "scene has no source views");
  auto check = [](const View& v, const std::string& what, bool required) {
    if (!v.image.defined()) {
      if (required) fail(ErrorCode::kFormat, what + " has no image");
      return;
    }
    const Shape expected{3, v.camera.height, v.camera.width};
    if (v.image.shape() != expected) {
      fail(ErrorCode::kDimension, what + " image is " + shape_str(v.image.shape()) + " but its camera declares " +
                                      shape_str(expected));
    }
  };
  for (std::size_t i = 0; i < sources.size(); ++i) check(sources[i], "source " + std::to_string(i), true);
  for (std::size_t i = 0; i < targets.size(); ++i) check(targets[i], "target " + std::to_string(i), false);
  if (!(near > 0.0) || !(far > near)) fail(ErrorCode::kInvalidArgument, "scene near/far hints must satisfy 0 < near < far");
}

std::vector<CameraModel> rig_cameras(const FamilySpec& spec) {
  const Intrinsics intr{spec.focal, spec.focal, 0.5 * (spec.width - 1), 0.5 * (spec.height - 1)};
  std::vector<CameraModel> cams;
  for (double sy : {-0.5, 0.5})
    for (double sx : {-0.5, 0.5})
      cams.push_back(camera_at(intr, spec.width, spec.height, Eigen::Vector3d(sx * spec.rig_width, sy * spec.rig_height, 0.0)));
  return cams;
}

SceneBundle render_bundle(const SyntheticScene& scene, const std::vector<CameraModel>& sources,
                          const std::vector<CameraModel>& targets, double near, double far) {
  SceneBundle bundle;
  bundle.near = near;
  bundle.far = far;
  bundle.synthetic = scene;
  bundle.synthetic->sort_by_depth();
  for (const auto& cam : sources) bundle.sources.push_back(View{cam, raytrace<float>(scene, cam)});
  for (const auto& cam : targets) bundle.targets.push_back(View{cam, raytrace<float>(scene, cam)});
  return bundle;
}

SceneBundle generate_scene(std::uint64_t seed, std::uint64_t index, const FamilySpec& spec) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  auto colour = [&] { return std::array<double, 3>{unit(rng), unit(rng), unit(rng)}; };
  auto from_disparity = [&](double u) { return 1.0 / (1.0 / spec.near + u * (1.0 / spec.far - 1.0 / spec.near)); };

  const auto sources = rig_cameras(spec);
  const double half_fov_x = 0.5 * spec.width / spec.focal;
  const double half_fov_y = 0.5 * spec.height / spec.focal;
  const double margin = 0.5 * std::max(spec.rig_width, spec.rig_height) + 0.1;

  SyntheticScene scene;
  // Opaque background filling every view.
  {
    const double depth = from_disparity(uniform(0.85, 1.0));
    const double pitch = depth / spec.focal;
    const double half_w = depth * half_fov_x + margin;
    const double half_h = depth * half_fov_y + margin;
    TextureSpec ts;
    ts.kind = TextureKind::kNoise;
    ts.width = static_cast<int>(std::ceil(2.0 * half_w / pitch)) + 1;
    ts.height = static_cast<int>(std::ceil(2.0 * half_h / pitch)) + 1;
    ts.color_a = colour();
    ts.color_b = colour();
    ts.cell = 6 + static_cast<int>(rng() % 8);
    ts.seed = rng();
    Rectangle bg;
    bg.depth = depth;
    bg.pitch = pitch;
    bg.x0 = -half_w;
    bg.y0 = -half_h;
    bg.texture = Texture::make(ts);
    scene.rectangles.push_back(std::move(bg));
  }
  const std::optional<DepthSchedule> levels =
      spec.depth_levels > 0 ? std::optional(make_schedule(spec.near, spec.far, spec.depth_levels)) : std::nullopt;
  const int count = spec.min_foreground +
                    static_cast<int>(rng() % static_cast<std::uint64_t>(spec.max_foreground - spec.min_foreground + 1));
  for (int k = 0; k < count; ++k) {
    double depth = from_disparity(uniform(0.0, 0.75));
    if (levels) {
      const Index last = std::max<Index>(0, levels->count() - 2);
      depth = levels->depths[static_cast<std::size_t>(rng() % static_cast<std::uint64_t>(last + 1))];
    }
    const double pitch = depth / spec.focal;
    const double size_x = uniform(0.25, 0.6) * spec.width * pitch;
    const double size_y = uniform(0.25, 0.6) * spec.height * pitch;
    const double cx = uniform(-0.6, 0.6) * depth * half_fov_x;
    const double cy = uniform(-0.6, 0.6) * depth * half_fov_y;
    TextureSpec ts;
    ts.kind = unit(rng) < 0.5 ? TextureKind::kChecker : TextureKind::kNoise;
    ts.width = static_cast<int>(size_x / pitch) + 1;
    ts.height = static_cast<int>(size_y / pitch) + 1;
    ts.color_a = colour();
    ts.color_b = colour();
    ts.cell = 4 + static_cast<int>(rng() % 8);
    ts.seed = rng();
    Rectangle r;
    r.depth = depth;
    r.pitch = pitch;
    r.x0 = cx - 0.5 * size_x;
    r.y0 = cy - 0.5 * size_y;
    r.opacity = (spec.translucent && unit(rng) < 0.3) ? uniform(0.4, 0.9) : 1.0;
    r.texture = Texture::make(ts);
    scene.rectangles.push_back(std::move(r));
  }
  scene.sort_by_depth();

  std::vector<CameraModel> targets;
  for (int t = 0; t < spec.targets; ++t) {
    const Eigen::Vector3d center(uniform(-0.5, 0.5) * spec.rig_width, uniform(-0.5, 0.5) * spec.rig_height,
                                 uniform(-0.05, 0.05));
    targets.push_back(camera_at(sources.front().intrinsics, spec.width, spec.height, center));
  }
  return render_bundle(scene, sources, targets, spec.near, spec.far);
}

// ---------------------------------------------------------------------------
// Scene directory

namespace {

constexpr const char* kConvention =
    "x_cam = R * x_world + t (R row-major, world-to-camera, t in meters); pixel centers at integer "
    "coordinates, u right, v down, z forward";

json camera_json(const CameraModel& c) {
  json R = json::array();
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 3; ++k) R.push_back(c.rotation(r, k));
  return {{"width", c.width},
          {"height", c.height},
          {"fx", c.intrinsics.fx},
          {"fy", c.intrinsics.fy},
          {"cx", c.intrinsics.cx},
          {"cy", c.intrinsics.cy},
          {"R", R},
          {"t", {c.translation.x(), c.translation.y(), c.translation.z()}}};
}

CameraModel camera_from_json(const json& j, const std::string& what) {
  CameraModel c;
  try {
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    c.intrinsics = {j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
                    j.at("cy").get<double>()};
    const auto& R = j.at("R");
    const auto& t = j.at("t");
    if (R.size() != 9 || t.size() != 3) fail(ErrorCode::kFormat, what + ": R needs 9 values and t needs 3");
    for (int r = 0; r < 3; ++r)
      for (int k = 0; k < 3; ++k) c.rotation(r, k) = R.at(r * 3 + k).get<double>();
    for (int i = 0; i < 3; ++i) c.translation(i) = t.at(i).get<double>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, what + ": " + e.what());
  }
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kFormat, what + ": " + e.what());
  }
  return c;
}

const char* texture_kind_name(TextureKind k) {
  switch (k) {
    case TextureKind::kConstant: return "constant";
    case TextureKind::kChecker: return "checker";
    case TextureKind::kNoise: return "noise";
  }
  return "constant";
}

TextureKind parse_texture_kind(const std::string& s) {
  if (s == "constant") return TextureKind::kConstant;
  if (s == "checker") return TextureKind::kChecker;
  if (s == "noise") return TextureKind::kNoise;
  fail(ErrorCode::kFormat, "scene.json: unknown texture kind '" + s + "'");
}

json scene_json(const SyntheticScene& scene) {
  json rects = json::array();
  for (const auto& r : scene.rectangles) {
    const auto& s = r.texture.spec;
    rects.push_back({{"depth", r.depth},
                     {"x0", r.x0},
                     {"y0", r.y0},
                     {"pitch", r.pitch},
                     {"opacity", r.opacity},
                     {"texture",
                      {{"kind", texture_kind_name(s.kind)},
                       {"width", s.width},
                       {"height", s.height},
                       {"color_a", s.color_a},
                       {"color_b", s.color_b},
                       {"cell", s.cell},
                       {"seed", s.seed}}}});
  }
  return {{"rectangles", rects}};
}

SyntheticScene scene_from_json(const json& j) {
  SyntheticScene scene;
  try {
    for (const auto& r : j.at("rectangles")) {
      const auto& t = r.at("texture");
      TextureSpec s;
      s.kind = parse_texture_kind(t.at("kind").get<std::string>());
      s.width = t.at("width").get<int>();
      s.height = t.at("height").get<int>();
      s.color_a = t.at("color_a").get<std::array<double, 3>>();
      s.color_b = t.at("color_b").get<std::array<double, 3>>();
      s.cell = t.at("cell").get<int>();
      s.seed = t.at("seed").get<std::uint64_t>();
      Rectangle rect;
      rect.depth = r.at("depth").get<double>();
      rect.x0 = r.at("x0").get<double>();
      rect.y0 = r.at("y0").get<double>();
      rect.pitch = r.at("pitch").get<double>();
      rect.opacity = r.at("opacity").get<double>();
      if (!(rect.depth > 0.0) || !(rect.pitch > 0.0) || !(rect.opacity >= 0.0 && rect.opacity <= 1.0)) {
        fail(ErrorCode::kFormat, "scene.json: invalid synthetic rectangle");
      }
      rect.texture = Texture::make(s);
      scene.rectangles.push_back(std::move(rect));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, std::string("scene.json synthetic block: ") + e.what());
  }
  scene.sort_by_depth();
  return scene;
}

}  // namespace

SceneBundle load_scene_dir(const std::filesystem::path& dir) {
  const auto file = dir / "scene.json";
  std::ifstream in(file);
  if (!in) fail(ErrorCode::kIo, "cannot read " + file.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, file.string() + ": " + e.what());
  }
  SceneBundle bundle;
  try {
    bundle.near = doc.at("near").get<double>();
    bundle.far = doc.contains("far") && doc.at("far").is_string() && doc.at("far").get<std::string>() == "inf"
                     ? std::numeric_limits<double>::infinity()
                     : doc.at("far").get<double>();
    const auto& sources = doc.at("sources");
    for (std::size_t i = 0; i < sources.size(); ++i) {
      const std::string what = "scene.json source " + std::to_string(i);
      View v{camera_from_json(sources[i].at("camera"), what), {}};
      v.image = read_image(dir / sources[i].at("image").get<std::string>());
      bundle.sources.push_back(std::move(v));
    }
    if (doc.contains("targets")) {
      const auto& targets = doc.at("targets");
      for (std::size_t i = 0; i < targets.size(); ++i) {
        const std::string what = "scene.json target " + std::to_string(i);
        View v{camera_from_json(targets[i].at("camera"), what), {}};
        if (targets[i].contains("image")) v.image = read_image(dir / targets[i].at("image").get<std::string>());
        bundle.targets.push_back(std::move(v));
      }
    }
    if (doc.contains("synthetic")) bundle.synthetic = scene_from_json(doc.at("synthetic"));
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, file.string() + ": " + e.what());
  }
  bundle.validate();
  return bundle;
}

void save_scene_dir(const std::filesystem::path& dir, const SceneBundle& bundle, ImageFormat format) {
  bundle.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + dir.string() + ": " + ec.message());
  const std::string ext = format == ImageFormat::kFimg ? ".fimg" : ".png";
  json doc;
  doc["convention"] = kConvention;
  doc["near"] = bundle.near;
  if (std::isinf(bundle.far)) {
    doc["far"] = "inf";
  } else {
    doc["far"] = bundle.far;
  }
  doc["sources"] = json::array();
  for (std::size_t i = 0; i < bundle.sources.size(); ++i) {
    const std::string name = "source_" + std::to_string(i) + ext;
    write_image(dir / name, bundle.sources[i].image);
    doc["sources"].push_back({{"image", name}, {"camera", camera_json(bundle.sources[i].camera)}});
  }
  doc["targets"] = json::array();
  for (std::size_t i = 0; i < bundle.targets.size(); ++i) {
    json entry{{"camera", camera_json(bundle.targets[i].camera)}};
    if (bundle.targets[i].image.defined()) {
      const std::string name = "target_" + std::to_string(i) + ext;
      write_image(dir / name, bundle.targets[i].image);
      entry["image"] = name;
    }
    doc["targets"].push_back(std::move(entry));
  }
  if (bundle.synthetic) doc["synthetic"] = scene_json(*bundle.synthetic);
  std::ofstream out(dir / "scene.json");
  if (!out) fail(ErrorCode::kIo, "cannot write " + (dir / "scene.json").string());
  out << doc.dump(2) << '\n';
}

template Tensor<float> raytrace<float>(const SyntheticScene&, const CameraModel&);
template Tensor<double> raytrace<double>(const SyntheticScene&, const CameraModel&);
template Tensor<float> rasterize_planes<float>(const SyntheticScene&, const CameraModel&, const DepthSchedule&);
template Tensor<double> rasterize_planes<double>(const SyntheticScene&, const CameraModel&, const DepthSchedule&);

}  // namespace fmpi
