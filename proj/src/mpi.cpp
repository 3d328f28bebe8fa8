#include "fmpi/mpi.hpp"

#include <cmath>
#include <limits>

#include "binary_io.hpp"
#include "fmpi/ops.hpp"

namespace fmpi {

// ---------------------------------------------------------------------------
// Head layout

template <typename T>
Tensor<T> NetHeadOutput<T>::camera_logits(Index plane) const {
  return slice(raw, 0, plane * (views + 1), views - 1);
}

template <typename T>
Tensor<T> NetHeadOutput<T>::background_logit(Index plane) const {
  return slice(raw, 0, plane * (views + 1) + views - 1, 1);
}

template <typename T>
Tensor<T> NetHeadOutput<T>::alpha_logit(Index plane) const {
  return slice(raw, 0, plane * (views + 1) + views, 1);
}

template <typename T>
Tensor<T> NetHeadOutput<T>::background_logits_raw() const {
  return slice(raw, 0, planes * (views + 1), 3);
}

// ---------------------------------------------------------------------------
// Colour assembly

template <typename T>
Tensor<T> softmax_blend(const Tensor<T>& logits, const Tensor<T>& candidates) {
  if (logits.rank() != 3 || candidates.rank() != 4 || candidates.dim(0) != logits.dim(0) ||
      candidates.dim(2) != logits.dim(1) || candidates.dim(3) != logits.dim(2)) {
    fail(ErrorCode::kDimension, "softmax_blend: logits " + shape_str(logits.shape()) +
                                    " incompatible with candidates " + shape_str(candidates.shape()));
  }
  const Index k = logits.dim(0);
  const Index c = candidates.dim(1);
  const Index n = logits.dim(1) * logits.dim(2);
  auto z = logits.data();
  auto img = candidates.data();
  for (T v : z) {
    if (std::isnan(v)) fail(ErrorCode::kNumeric, "softmax_blend: NaN logit");
  }
  auto weights = std::make_shared<std::vector<T>>(static_cast<std::size_t>(k * n));
  auto& p = *weights;
  std::vector<T> out(static_cast<std::size_t>(c * n), T(0));
  for (Index i = 0; i < n; ++i) {
    T peak = z[i];
    for (Index j = 1; j < k; ++j) peak = std::max(peak, z[j * n + i]);
    T total = 0;
    for (Index j = 0; j < k; ++j) {
      p[j * n + i] = std::exp(z[j * n + i] - peak);
      total += p[j * n + i];
    }
    for (Index j = 0; j < k; ++j) p[j * n + i] /= total;
    for (Index ch = 0; ch < c; ++ch) {
      T acc = 0;
      for (Index j = 0; j < k; ++j) acc += p[j * n + i] * img[(j * c + ch) * n + i];
      out[ch * n + i] = acc;
    }
  }
  auto result = std::make_shared<std::vector<T>>(out);
  return make_result<T>(
      Shape{c, logits.dim(1), logits.dim(2)}, std::move(out), {logits, candidates},
      [logits, candidates, weights, result, k, c, n](std::span<const T> g) {
        const auto& p = *weights;
        auto img = candidates.data();
        if (auto gc = grad_sink(candidates); !gc.empty()) {
          for (Index j = 0; j < k; ++j)
            for (Index ch = 0; ch < c; ++ch)
              for (Index i = 0; i < n; ++i) gc[(j * c + ch) * n + i] += p[j * n + i] * g[ch * n + i];
        }
        if (auto gz = grad_sink(logits); !gz.empty()) {
          const auto& y = *result;
          for (Index i = 0; i < n; ++i) {
            T gy = 0;
            for (Index ch = 0; ch < c; ++ch) gy += g[ch * n + i] * y[ch * n + i];
            for (Index j = 0; j < k; ++j) {
              T gi = 0;
              for (Index ch = 0; ch < c; ++ch) gi += g[ch * n + i] * img[(j * c + ch) * n + i];
              gz[j * n + i] += p[j * n + i] * (gi - gy);
            }
          }
        }
      });
}

std::vector<Index> nearest_input_planes(const DepthSchedule& input, const DepthSchedule& output) {
  if (input.count() < 1) fail(ErrorCode::kInvalidArgument, "no input planes to map output planes onto");
  std::vector<Index> mapping(static_cast<std::size_t>(output.count()));
  for (Index o = 0; o < output.count(); ++o) {
    const double target = output.disparity(o);
    Index best = 0;
    double best_gap = std::numeric_limits<double>::infinity();
    // Planes are nearest first, so a strict comparison keeps the nearer plane on ties.
    for (Index i = 0; i < input.count(); ++i) {
      const double gap = std::abs(input.disparity(i) - target);
      if (gap < best_gap) {
        best_gap = gap;
        best = i;
      }
    }
    mapping[o] = best;
  }
  return mapping;
}

template <typename T>
std::vector<Tensor<T>> assemble_group(const NetHeadOutput<T>& head, const PlaneSweepVolume<T>& psv,
                                      std::span<const Index> input_plane_of_output) {
  const Index nv = psv.views();
  const Index h = psv.height();
  const Index w = psv.width();
  if (nv < 1) fail(ErrorCode::kInvalidArgument, "assemble: PSV has no views");
  if (head.views != nv || static_cast<Index>(input_plane_of_output.size()) != head.planes ||
      head.raw.shape() != Shape{NetHeadOutput<T>::channels(head.planes, nv), h, w}) {
    fail(ErrorCode::kDimension, "assemble: head output " + shape_str(head.raw.shape()) +
                                    " does not match " + std::to_string(head.planes) + " planes of " +
                                    std::to_string(nv) + " views at " + std::to_string(h) + "x" +
                                    std::to_string(w));
  }
  const Tensor<T> background = reshape(sigmoid(head.background_logits_raw()), Shape{1, 3, h, w});
  const Tensor<T> fixed_logit = Tensor<T>::zeros(Shape{1, h, w});
  std::vector<Tensor<T>> planes;
  planes.reserve(static_cast<std::size_t>(head.planes));
  for (Index p = 0; p < head.planes; ++p) {
    const Index d = input_plane_of_output[p];
    if (d < 0 || d >= psv.planes()) fail(ErrorCode::kInvalidArgument, "assemble: bad plane mapping");
    const Tensor<T> views = reshape(slice(psv.data, 0, d, 1), Shape{nv, 3, h, w});
    const Tensor<T> candidates = concat<T>(std::vector<Tensor<T>>{views, background}, 0);
    const Tensor<T> logits =
        concat<T>(std::vector<Tensor<T>>{head.camera_logits(p), fixed_logit, head.background_logit(p)}, 0);
    const Tensor<T> rgb = softmax_blend(logits, candidates);
    const Tensor<T> alpha = sigmoid(head.alpha_logit(p));
    planes.push_back(concat<T>(std::vector<Tensor<T>>{rgb, alpha}, 0));
  }
  return planes;
}

template <typename T>
MultiplaneImage<T> assemble_mpi(std::span<const NetHeadOutput<T>> heads, const PlaneSweepVolume<T>& psv,
                                const DepthSchedule& output_schedule) {
  Index total = 0;
  for (const auto& head : heads) total += head.planes;
  if (total != output_schedule.count()) {
    fail(ErrorCode::kDimension, "assemble: heads provide " + std::to_string(total) +
                                    " planes, schedule has " + std::to_string(output_schedule.count()));
  }
  const auto mapping = nearest_input_planes(psv.schedule, output_schedule);
  const Index h = psv.height();
  const Index w = psv.width();
  std::vector<Tensor<T>> planes;
  Index offset = 0;
  for (const auto& head : heads) {
    auto group_planes =
        assemble_group(head, psv, std::span<const Index>(mapping).subspan(offset, head.planes));
    for (auto& plane : group_planes) planes.push_back(reshape(plane, Shape{1, 4, h, w}));
    offset += head.planes;
  }
  MultiplaneImage<T> mpi;
  mpi.rgba = concat<T>(planes, 0);
  mpi.schedule = output_schedule;
  mpi.camera = psv.target_camera;
  return mpi;
}

// ---------------------------------------------------------------------------
// Compositing

namespace {

template <typename T>
void require_rgba(const Tensor<T>& rgba, const char* op) {
  if (rgba.rank() != 4 || rgba.dim(1) != 4) {
    fail(ErrorCode::kDimension, std::string(op) + ": expected [D,4,H,W], got " + shape_str(rgba.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> composite(const Tensor<T>& rgba) {
  require_rgba(rgba, "composite");
  const Index nd = rgba.dim(0);
  const Index n = rgba.dim(2) * rgba.dim(3);
  auto x = rgba.data();
  std::vector<T> out(static_cast<std::size_t>(3 * n), T(0));
  std::vector<T> transmit(static_cast<std::size_t>(n), T(1));
  for (Index d = 0; d < nd; ++d) {
    const T* plane = x.data() + d * 4 * n;
    const T* alpha = plane + 3 * n;
    for (Index i = 0; i < n; ++i) {
      for (Index ch = 0; ch < 3; ++ch) out[ch * n + i] += (plane[ch * n + i] * alpha[i]) * transmit[i];
      transmit[i] *= T(1) - alpha[i];
    }
  }
  return make_result<T>(
      Shape{3, rgba.dim(2), rgba.dim(3)}, std::move(out), {rgba}, [rgba, nd, n](std::span<const T> g) {
        auto gx = grad_sink(rgba);
        if (gx.empty()) return;
        auto x = rgba.data();
        // Transmittance in front of every plane.
        std::vector<T> front(static_cast<std::size_t>(nd * n));
        std::vector<T> transmit(static_cast<std::size_t>(n), T(1));
        for (Index d = 0; d < nd; ++d) {
          const T* alpha = x.data() + (d * 4 + 3) * n;
          for (Index i = 0; i < n; ++i) {
            front[d * n + i] = transmit[i];
            transmit[i] *= T(1) - alpha[i];
          }
        }
        // behind[ch] = colour composited from planes strictly behind d, seen without occluders.
        std::vector<T> behind(static_cast<std::size_t>(3 * n), T(0));
        for (Index d = nd; d-- > 0;) {
          const T* plane = x.data() + d * 4 * n;
          const T* alpha = plane + 3 * n;
          T* gplane = gx.data() + d * 4 * n;
          for (Index i = 0; i < n; ++i) {
            const T tf = front[d * n + i];
            T ga = 0;
            for (Index ch = 0; ch < 3; ++ch) {
              const T gv = g[ch * n + i];
              gplane[ch * n + i] += gv * alpha[i] * tf;
              ga += gv * tf * (plane[ch * n + i] - behind[ch * n + i]);
              behind[ch * n + i] = plane[ch * n + i] * alpha[i] + (T(1) - alpha[i]) * behind[ch * n + i];
            }
            gplane[3 * n + i] += ga;
          }
        }
      });
}

template <typename T>
Tensor<T> composite_back_to_front(const Tensor<T>& rgba) {
  require_rgba(rgba, "composite_back_to_front");
  const Index nd = rgba.dim(0);
  const Index n = rgba.dim(2) * rgba.dim(3);
  auto x = rgba.data();
  std::vector<T> out(static_cast<std::size_t>(3 * n), T(0));
  for (Index d = nd; d-- > 0;) {
    const T* plane = x.data() + d * 4 * n;
    const T* alpha = plane + 3 * n;
    for (Index ch = 0; ch < 3; ++ch)
      for (Index i = 0; i < n; ++i)
        out[ch * n + i] = plane[ch * n + i] * alpha[i] + (T(1) - alpha[i]) * out[ch * n + i];
  }
  return Tensor<T>(Shape{3, rgba.dim(2), rgba.dim(3)}, std::move(out));
}

template <typename T>
Tensor<T> contribution_weights(const Tensor<T>& rgba) {
  require_rgba(rgba, "contribution_weights");
  const Index nd = rgba.dim(0);
  const Index n = rgba.dim(2) * rgba.dim(3);
  auto x = rgba.data();
  std::vector<T> out(static_cast<std::size_t>(nd * n));
  std::vector<T> transmit(static_cast<std::size_t>(n), T(1));
  for (Index d = 0; d < nd; ++d) {
    const T* alpha = x.data() + (d * 4 + 3) * n;
    for (Index i = 0; i < n; ++i) {
      out[d * n + i] = alpha[i] * transmit[i];
      transmit[i] *= T(1) - alpha[i];
    }
  }
  return Tensor<T>(Shape{nd, 1, rgba.dim(2), rgba.dim(3)}, std::move(out));
}

template <typename T>
Tensor<T> composite_depth(const MultiplaneImage<T>& mpi, DepthMode mode) {
  const Tensor<T>& rgba = mpi.rgba;
  require_rgba(rgba, "composite_depth");
  const Index nd = rgba.dim(0);
  if (mpi.schedule.count() != nd) fail(ErrorCode::kDimension, "composite_depth: schedule/plane count mismatch");
  const Index n = rgba.dim(2) * rgba.dim(3);
  std::vector<T> values(static_cast<std::size_t>(nd));
  for (Index d = 0; d < nd; ++d) {
    const double depth = mpi.schedule.depths[d];
    values[d] = static_cast<T>(mode == DepthMode::kDepth ? depth : 1.0 / depth);
  }
  auto x = rgba.data();
  std::vector<T> out(static_cast<std::size_t>(n), T(0));
  std::vector<T> transmit(static_cast<std::size_t>(n), T(1));
  for (Index d = 0; d < nd; ++d) {
    const T* alpha = x.data() + (d * 4 + 3) * n;
    for (Index i = 0; i < n; ++i) {
      const T weight = alpha[i] * transmit[i];
      if (weight != T(0)) out[i] += values[d] * weight;
      transmit[i] *= T(1) - alpha[i];
    }
  }
  return make_result<T>(
      Shape{1, rgba.dim(2), rgba.dim(3)}, std::move(out), {rgba}, [rgba, values, nd, n](std::span<const T> g) {
        auto gx = grad_sink(rgba);
        if (gx.empty()) return;
        auto x = rgba.data();
        std::vector<T> front(static_cast<std::size_t>(nd * n));
        std::vector<T> transmit(static_cast<std::size_t>(n), T(1));
        for (Index d = 0; d < nd; ++d) {
          const T* alpha = x.data() + (d * 4 + 3) * n;
          for (Index i = 0; i < n; ++i) {
            front[d * n + i] = transmit[i];
            transmit[i] *= T(1) - alpha[i];
          }
        }
        std::vector<T> behind(static_cast<std::size_t>(n), T(0));
        for (Index d = nd; d-- > 0;) {
          const T* alpha = x.data() + (d * 4 + 3) * n;
          for (Index i = 0; i < n; ++i) {
            gx[(d * 4 + 3) * n + i] += g[i] * front[d * n + i] * (values[d] - behind[i]);
            behind[i] = values[d] * alpha[i] + (T(1) - alpha[i]) * behind[i];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Static-MPI warping

namespace {

// Warped premultiplied colour (channels 0..2) and alpha (channel 3) of every plane.
template <typename T>
Tensor<T> warp_premultiplied(const MultiplaneImage<T>& mpi, const CameraModel& new_camera) {
  require_rgba(mpi.rgba, "warp_mpi");
  const Index nd = mpi.planes();
  const Index sh = mpi.rgba.dim(2);
  const Index sw = mpi.rgba.dim(3);
  if (sh != mpi.camera.height || sw != mpi.camera.width) {
    fail(ErrorCode::kDimension, "warp_mpi: MPI size does not match its camera");
  }
  if (mpi.schedule.count() != nd) fail(ErrorCode::kDimension, "warp_mpi: schedule/plane count mismatch");
  const Index n_src = sh * sw;
  const Index h = new_camera.height;
  const Index w = new_camera.width;
  const Index n = h * w;
  auto x = mpi.rgba.data();
  std::vector<T> premult(static_cast<std::size_t>(4 * n_src));
  std::vector<T> out(static_cast<std::size_t>(nd * 4 * n), T(0));
  std::vector<T> us(static_cast<std::size_t>(n));
  std::vector<T> vs(static_cast<std::size_t>(n));
  std::vector<std::uint8_t> valid(static_cast<std::size_t>(n));
  for (Index d = 0; d < nd; ++d) {
    const T* plane = x.data() + d * 4 * n_src;
    const T* alpha = plane + 3 * n_src;
    for (Index ch = 0; ch < 3; ++ch)
      for (Index i = 0; i < n_src; ++i) premult[ch * n_src + i] = plane[ch * n_src + i] * alpha[i];
    std::copy_n(alpha, n_src, premult.begin() + 3 * n_src);

    const Homography hom =
        plane_homography(mpi.camera, new_camera, mpi.schedule.depths[d], PlaneFrame::kSource);
    for (Index row = 0; row < h; ++row) {
      detail::transform_row<T>(hom.matrix, row, w, sw, sh, us.data() + row * w, vs.data() + row * w,
                               valid.data() + row * w);
    }
    T* dst = out.data() + d * 4 * n;
    for (Index i = 0; i < n; ++i) {
      if (!valid[i]) continue;
      const auto tap = detail::bilinear_tap<T>(us[i], vs[i], sw, sh);
      for (Index ch = 0; ch < 4; ++ch) dst[ch * n + i] = detail::bilinear_value(premult.data() + ch * n_src, tap);
    }
  }
  return Tensor<T>(Shape{nd, 4, h, w}, std::move(out));
}

}  // namespace

template <typename T>
Tensor<T> warp_mpi(const MultiplaneImage<T>& mpi, const CameraModel& new_camera) {
  const Tensor<T> warped = warp_premultiplied(mpi, new_camera);
  const Index nd = warped.dim(0);
  const Index n = warped.dim(2) * warped.dim(3);
  auto x = warped.data();
  std::vector<T> out(static_cast<std::size_t>(3 * n), T(0));
  std::vector<T> transmit(static_cast<std::size_t>(n), T(1));
  for (Index d = 0; d < nd; ++d) {
    const T* plane = x.data() + d * 4 * n;
    const T* alpha = plane + 3 * n;
    for (Index i = 0; i < n; ++i) {
      for (Index ch = 0; ch < 3; ++ch) out[ch * n + i] += plane[ch * n + i] * transmit[i];
      transmit[i] *= T(1) - alpha[i];
    }
  }
  return Tensor<T>(Shape{3, warped.dim(2), warped.dim(3)}, std::move(out));
}

template <typename T>
MultiplaneImage<T> warp_mpi_planes(const MultiplaneImage<T>& mpi, const CameraModel& new_camera, T epsilon) {
  Tensor<T> warped = warp_premultiplied(mpi, new_camera);
  const Index nd = warped.dim(0);
  const Index n = warped.dim(2) * warped.dim(3);
  auto x = warped.mutable_data();
  for (Index d = 0; d < nd; ++d) {
    T* plane = x.data() + d * 4 * n;
    const T* alpha = plane + 3 * n;
    for (Index i = 0; i < n; ++i) {
      for (Index ch = 0; ch < 3; ++ch) {
        plane[ch * n + i] = alpha[i] > epsilon ? plane[ch * n + i] / alpha[i] : T(0);
      }
    }
  }
  return MultiplaneImage<T>{warped, mpi.schedule, new_camera};
}

// ---------------------------------------------------------------------------
// Serialization

namespace {
constexpr std::uint32_t kMpiVersion = 1;
}

template <typename T>
void save_mpi(const std::filesystem::path& path, const MultiplaneImage<T>& mpi) {
  require_rgba(mpi.rgba, "save_mpi");
  auto out = io::open_out(path);
  out.write("FMPI", 4);
  io::put<std::uint32_t>(out, kMpiVersion);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(mpi.planes()));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(mpi.rgba.dim(2)));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(mpi.rgba.dim(3)));
  io::put<double>(out, mpi.schedule.near);
  io::put<double>(out, mpi.schedule.far);
  for (double depth : mpi.schedule.depths) io::put<double>(out, depth);
  io::put_camera(out, mpi.camera);
  for (T v : mpi.rgba.data()) io::put<float>(out, static_cast<float>(v));
  if (!out) fail(ErrorCode::kIo, "failed writing " + path.string());
}

template <typename T>
MultiplaneImage<T> load_mpi(const std::filesystem::path& path) {
  auto in = io::open_in(path);
  io::Reader reader(in, path.string());
  reader.expect_magic("FMPI");
  const auto version = reader.get<std::uint32_t>();
  if (version != kMpiVersion) {
    fail(ErrorCode::kFormat, path.string() + ": unsupported FMPI version " + std::to_string(version));
  }
  const Index nd = reader.get<std::uint32_t>();
  const Index h = reader.get<std::uint32_t>();
  const Index w = reader.get<std::uint32_t>();
  MultiplaneImage<T> mpi;
  mpi.schedule.near = reader.get<double>();
  mpi.schedule.far = reader.get<double>();
  mpi.schedule.depths.resize(static_cast<std::size_t>(nd));
  for (auto& depth : mpi.schedule.depths) depth = reader.get<double>();
  mpi.camera = io::get_camera(reader);
  if (mpi.camera.width != w || mpi.camera.height != h) {
    fail(ErrorCode::kFormat, path.string() + ": camera size does not match plane size");
  }
  std::vector<T> values(static_cast<std::size_t>(nd * 4 * h * w));
  for (auto& v : values) v = static_cast<T>(reader.get<float>());
  mpi.rgba = Tensor<T>(Shape{nd, 4, h, w}, std::move(values));
  return mpi;
}

#define FMPI_INSTANTIATE(T)                                                                          \
  template struct NetHeadOutput<T>;                                                                  \
  template Tensor<T> softmax_blend<T>(const Tensor<T>&, const Tensor<T>&);                           \
  template std::vector<Tensor<T>> assemble_group<T>(const NetHeadOutput<T>&,                         \
                                                    const PlaneSweepVolume<T>&, std::span<const Index>); \
  template MultiplaneImage<T> assemble_mpi<T>(std::span<const NetHeadOutput<T>>,                     \
                                              const PlaneSweepVolume<T>&, const DepthSchedule&);     \
  template Tensor<T> composite<T>(const Tensor<T>&);                                                 \
  template Tensor<T> composite_back_to_front<T>(const Tensor<T>&);                                   \
  template Tensor<T> contribution_weights<T>(const Tensor<T>&);                                      \
  template Tensor<T> composite_depth<T>(const MultiplaneImage<T>&, DepthMode);                       \
  template Tensor<T> warp_mpi<T>(const MultiplaneImage<T>&, const CameraModel&);                     \
  template MultiplaneImage<T> warp_mpi_planes<T>(const MultiplaneImage<T>&, const CameraModel&, T);  \
  template void save_mpi<T>(const std::filesystem::path&, const MultiplaneImage<T>&);                \
  template MultiplaneImage<T> load_mpi<T>(const std::filesystem::path&);

FMPI_INSTANTIATE(float)
FMPI_INSTANTIATE(double)
#undef FMPI_INSTANTIATE

}  // namespace fmpi
