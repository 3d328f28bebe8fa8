#include "fmpi/training.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "fmpi/ops.hpp"

namespace fmpi {

void LossConfig::validate() const {
  if (!use_l1 && !use_ssim) fail(ErrorCode::kInvalidArgument, "loss: at least one term must be enabled");
  if (window < 1 || window % 2 == 0) fail(ErrorCode::kInvalidArgument, "loss: SSIM window must be odd");
  if (!(sigma > 0.0) || !(dynamic_range > 0.0)) fail(ErrorCode::kInvalidArgument, "loss: bad SSIM parameters");
}

std::vector<double> gaussian_taps(int window, double sigma) {
  std::vector<double> taps(static_cast<std::size_t>(window));
  const double mid = 0.5 * (window - 1);
  double total = 0.0;
  for (int i = 0; i < window; ++i) {
    const double d = i - mid;
    taps[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += taps[i];
  }
  for (auto& t : taps) t /= total;
  return taps;
}

template <typename T>
Tensor<T> ssim(const Tensor<T>& x, const Tensor<T>& y, const LossConfig& cfg) {
  if (x.shape() != y.shape()) {
    fail(ErrorCode::kDimension, "ssim: shapes differ, " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  if (x.rank() != 3 || x.dim(1) < cfg.window || x.dim(2) < cfg.window) {
    fail(ErrorCode::kDimension, "ssim: need [C,H,W] of at least the window size, got " + shape_str(x.shape()));
  }
  const auto taps64 = gaussian_taps(cfg.window, cfg.sigma);
  const std::vector<T> taps(taps64.begin(), taps64.end());
  const T c1 = static_cast<T>((0.01 * cfg.dynamic_range) * (0.01 * cfg.dynamic_range));
  const T c2 = static_cast<T>((0.03 * cfg.dynamic_range) * (0.03 * cfg.dynamic_range));
  auto blur = [&](const Tensor<T>& t) { return separable_filter_valid<T>(t, taps); };

  const Tensor<T> mx = blur(x);
  const Tensor<T> my = blur(y);
  const Tensor<T> mxx = mx * mx;
  const Tensor<T> myy = my * my;
  const Tensor<T> mxy = mx * my;
  const Tensor<T> vx = blur(x * x) - mxx;
  const Tensor<T> vy = blur(y * y) - myy;
  const Tensor<T> cxy = blur(x * y) - mxy;
  const Tensor<T> num = add_scalar(mul_scalar(mxy, T(2)), c1) * add_scalar(mul_scalar(cxy, T(2)), c2);
  const Tensor<T> den = add_scalar(mxx + myy, c1) * add_scalar(vx + vy, c2);
  return mean(num / den);
}

bool note_perceptual_term_omitted() {
  static std::atomic<bool> noted{false};
  return !noted.exchange(true);
}

template <typename T>
LossTerms<T> image_loss(const Tensor<T>& truth, const Tensor<T>& prediction, const LossConfig& cfg) {
  cfg.validate();
  if (truth.shape() != prediction.shape()) {
    fail(ErrorCode::kDimension, "loss: shapes differ, " + shape_str(truth.shape()) + " vs " +
                                    shape_str(prediction.shape()));
  }
  if (note_perceptual_term_omitted()) {
    std::clog << "note: perceptual (VGG) loss term with weight " << cfg.lambda_lpips
              << " is not computed; loss = L1 + (1 - SSIM)\n";
  }
  LossTerms<T> out;
  Tensor<T> total;
  if (cfg.use_l1) {
    const Tensor<T> l1 = mean(abs(prediction - truth));
    out.l1 = static_cast<double>(l1.item());
    total = l1;
  }
  if (cfg.use_ssim) {
    const Tensor<T> s = ssim(truth, prediction, cfg);
    out.ssim = static_cast<double>(s.item());
    const Tensor<T> dissim = add_scalar(neg(s), T(1));
    total = total.defined() ? total + dissim : dissim;
  }
  out.total = total;
  return out;
}

double psnr(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size() || a.empty()) fail(ErrorCode::kDimension, "psnr: image sizes differ");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.size());
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::kDimension, "psnr: shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  auto da = a.data();
  auto db = b.data();
  double se = 0.0;
  for (std::size_t i = 0; i < da.size(); ++i) {
    const double d = static_cast<double>(da[i]) - static_cast<double>(db[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(da.size());
  return mse <= 0.0 ? 99.0 : std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double scheduled_lr(const LionConfig& cfg, Index it, Index total) {
  const double boundary = (1.0 - cfg.decay_fraction) * static_cast<double>(total);
  return static_cast<double>(it) >= boundary ? cfg.lr / cfg.decay_factor : cfg.lr;
}

template <typename T>
void lion_update(std::span<T> param, std::span<const T> grad, std::span<T> momentum, double lr, double beta1,
                 double beta2) {
  if (param.size() != grad.size() || param.size() != momentum.size()) {
    fail(ErrorCode::kDimension, "lion: parameter, gradient and momentum sizes differ");
  }
  for (T g : grad) {
    if (std::isnan(g)) fail(ErrorCode::kNumeric, "lion: NaN gradient");
  }
  const T b1 = static_cast<T>(beta1);
  const T b2 = static_cast<T>(beta2);
  const T step = static_cast<T>(lr);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T c = b1 * momentum[i] + (T(1) - b1) * grad[i];
    if (c > T(0)) {
      param[i] -= step;
    } else if (c < T(0)) {
      param[i] += step;
    }
    momentum[i] = b2 * momentum[i] + (T(1) - b2) * grad[i];
  }
}

template <typename T>
void LionState<T>::step(std::span<Tensor<T>> params, double lr) {
  if (momentum.empty()) {
    for (const auto& p : params) momentum.emplace_back(static_cast<std::size_t>(p.numel()), T(0));
  }
  if (momentum.size() != params.size()) fail(ErrorCode::kDimension, "lion: parameter list changed");
  std::vector<T> zeros;
  for (std::size_t k = 0; k < params.size(); ++k) {
    std::span<const T> g;
    if (params[k].has_grad()) {
      g = params[k].grad();
    } else {
      zeros.assign(static_cast<std::size_t>(params[k].numel()), T(0));
      g = zeros;
    }
    lion_update<T>(params[k].mutable_data(), g, momentum[k], lr, config.beta1, config.beta2);
  }
}

template <typename T>
TrainingExample<T> crop_example(const SceneBundle& scene, std::size_t target_index, Index x0, Index y0,
                                Index patch) {
  if (target_index >= scene.targets.size() || !scene.targets[target_index].image.defined()) {
    fail(ErrorCode::kInvalidArgument, "crop: target " + std::to_string(target_index) + " has no ground truth");
  }
  auto crop_camera = [&](CameraModel cam) {
    cam.intrinsics.cx -= static_cast<double>(x0);
    cam.intrinsics.cy -= static_cast<double>(y0);
    cam.width = static_cast<int>(patch);
    cam.height = static_cast<int>(patch);
    return cam;
  };
  auto crop_image = [&](const Tensor<float>& img) {
    if (x0 < 0 || y0 < 0 || x0 + patch > img.dim(2) || y0 + patch > img.dim(1)) {
      fail(ErrorCode::kInvalidArgument, "crop: window exceeds the image");
    }
    return slice(slice(img.cast<T>(), 1, y0, patch), 2, x0, patch);
  };
  TrainingExample<T> ex;
  for (const auto& v : scene.sources) {
    ex.views.push_back(crop_image(v.image));
    ex.cameras.push_back(crop_camera(v.camera));
  }
  const View& target = scene.targets[target_index];
  ex.target = crop_camera(target.camera);
  ex.target_image = crop_image(target.image);
  return ex;
}

template <typename T>
TrainingExample<T> sample_patch(const SceneBundle& scene, Index patch, std::mt19937_64& rng) {
  if (scene.targets.empty()) fail(ErrorCode::kInvalidArgument, "sample_patch: scene has no targets");
  if (patch < 8 || patch % 8 != 0) fail(ErrorCode::kInvalidArgument, "sample_patch: patch must be a positive multiple of 8");
  Index h = scene.targets.front().camera.height;
  Index w = scene.targets.front().camera.width;
  for (const auto& v : scene.sources) {
    h = std::min<Index>(h, v.camera.height);
    w = std::min<Index>(w, v.camera.width);
  }
  if (patch > h || patch > w) {
    fail(ErrorCode::kInvalidArgument, "sample_patch: patch " + std::to_string(patch) + " exceeds image " +
                                          std::to_string(h) + "x" + std::to_string(w));
  }
  const std::size_t target = static_cast<std::size_t>(rng() % scene.targets.size());
  const Index x0 = static_cast<Index>(rng() % static_cast<std::uint64_t>(w - patch + 1));
  const Index y0 = static_cast<Index>(rng() % static_cast<std::uint64_t>(h - patch + 1));
  return crop_example<T>(scene, target, x0, y0, patch);
}

namespace {

template <typename T>
WeightStore<T> clone(const WeightStore<T>& src) {
  WeightStore<T> out;
  out.config = src.config;
  for (const auto& [name, t] : src.records) {
    Tensor<T> copy(t.shape(), std::vector<T>(t.data().begin(), t.data().end()));
    copy.set_requires_grad(true);
    out.records.emplace_back(name, copy);
  }
  return out;
}

PipelineConfig pipeline_for(const TrainConfig& cfg) {
  PipelineConfig pc;
  pc.net = cfg.net;
  pc.near = cfg.scenes.near;
  pc.far = cfg.scenes.far;
  pc.group_threads = cfg.group_threads;
  return pc;
}

// Held-out scenes come from a seed stream that training never touches.
constexpr std::uint64_t kHeldOutSalt = 0x9e3779b97f4a7c15ull;

}  // namespace

template <typename T>
TrainResult<T> train_toy(const TrainConfig& cfg, const WeightStore<T>* initial,
                         const std::function<void(const TrainLogRow&)>& on_log) {
  cfg.net.validate();
  cfg.loss.validate();
  if (cfg.iterations < 0) fail(ErrorCode::kInvalidArgument, "train: negative iteration count");
  TrainResult<T> result;
  result.weights = initial ? clone(*initial) : init_weights<T>(cfg.net, cfg.seed);
  if (initial && parameter_count(initial->config) != parameter_count(cfg.net)) {
    fail(ErrorCode::kConfigMismatch, "train: initial weights do not match the network config");
  }
  std::vector<Tensor<T>> params = result.weights.tensors();
  LionState<T> optimizer{cfg.optimizer, {}};
  std::mt19937_64 rng(cfg.seed);
  const PipelineConfig pc = pipeline_for(cfg);

  TrainLogRow acc;
  Index in_window = 0;
  for (Index it = 0; it < cfg.iterations; ++it) {
    const SceneBundle scene = generate_scene(cfg.seed, static_cast<std::uint64_t>(it), cfg.scenes);
    const TrainingExample<T> ex = sample_patch<T>(scene, cfg.patch, rng);
    GradTape<T> tape;
    LossTerms<T> terms;
    Tensor<T> rgb;
    {
      typename GradTape<T>::Scope scope(tape);
      const auto syn = synthesize<T>(pc, result.weights, ex.views, ex.cameras, ex.target);
      rgb = syn.rgb.detach();
      terms = image_loss(ex.target_image, syn.rgb, cfg.loss);
      const double value = static_cast<double>(terms.total.item());
      if (!std::isfinite(value)) {
        fail(ErrorCode::kNumeric, "training diverged at iteration " + std::to_string(it) + ": loss is " +
                                      std::to_string(value));
      }
      tape.backward(terms.total);
    }
    optimizer.step(params, scheduled_lr(cfg.optimizer, it, cfg.iterations));
    tape.clear();
    for (auto& p : params) p.zero_grad();

    acc.loss += static_cast<double>(terms.total.item());
    acc.l1 += terms.l1;
    acc.ssim += terms.ssim;
    acc.psnr += psnr(ex.target_image, rgb);
    ++in_window;
    if (in_window == cfg.log_interval || it + 1 == cfg.iterations) {
      TrainLogRow row{it + 1, acc.loss / in_window, acc.l1 / in_window, acc.ssim / in_window, acc.psnr / in_window};
      result.log.push_back(row);
      if (on_log) on_log(row);
      acc = TrainLogRow{};
      in_window = 0;
    }
  }
  return result;
}

std::vector<SceneBundle> held_out_scenes(const TrainConfig& cfg) {
  std::vector<SceneBundle> scenes;
  for (Index i = 0; i < cfg.eval_scenes; ++i) {
    scenes.push_back(generate_scene(cfg.seed ^ kHeldOutSalt, static_cast<std::uint64_t>(i), cfg.scenes));
  }
  return scenes;
}

template <typename T>
EvalMetrics evaluate(const TrainConfig& cfg, const WeightStore<T>& weights, const std::vector<SceneBundle>& scenes) {
  const PipelineConfig pc = pipeline_for(cfg);
  LossConfig loss = cfg.loss;
  EvalMetrics m;
  Index count = 0;
  for (const auto& scene : scenes) {
    const auto views = cast_images<T>(scene.source_images());
    const auto cams = scene.source_cameras();
    for (const auto& target : scene.targets) {
      if (!target.image.defined()) continue;
      CameraModel cam = target.camera;
      const CameraModel padded = pad_camera(cam, 8);
      auto syn = synthesize<T>(pc, weights, views, cams, padded);
      const Tensor<T> rgb = crop_top_left(syn.rgb, cam.height, cam.width);
      const Tensor<T> truth = target.image.template cast<T>();
      m.psnr += psnr(truth, rgb);
      m.ssim += static_cast<double>(ssim(truth, rgb, loss).item());
      m.l1 += static_cast<double>(mean(abs(rgb - truth)).item());
      ++count;
    }
  }
  if (count == 0) fail(ErrorCode::kInvalidArgument, "evaluate: no targets with ground truth");
  m.psnr /= count;
  m.ssim /= count;
  m.l1 /= count;
  return m;
}

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << "iter,loss,l1,ssim,psnr\n" << std::setprecision(9);
  for (const auto& r : rows) out << r.iteration << ',' << r.loss << ',' << r.l1 << ',' << r.ssim << ',' << r.psnr << '\n';
}

#define FMPI_INSTANTIATE(T)                                                                                  \
  template Tensor<T> ssim<T>(const Tensor<T>&, const Tensor<T>&, const LossConfig&);                         \
  template struct LossTerms<T>;                                                                              \
  template LossTerms<T> image_loss<T>(const Tensor<T>&, const Tensor<T>&, const LossConfig&);                \
  template double psnr<T>(const Tensor<T>&, const Tensor<T>&);                                               \
  template void lion_update<T>(std::span<T>, std::span<const T>, std::span<T>, double, double, double);      \
  template struct LionState<T>;                                                                              \
  template TrainingExample<T> crop_example<T>(const SceneBundle&, std::size_t, Index, Index, Index);         \
  template TrainingExample<T> sample_patch<T>(const SceneBundle&, Index, std::mt19937_64&);                  \
  template TrainResult<T> train_toy<T>(const TrainConfig&, const WeightStore<T>*,                            \
                                       const std::function<void(const TrainLogRow&)>&);                      \
  template EvalMetrics evaluate<T>(const TrainConfig&, const WeightStore<T>&, const std::vector<SceneBundle>&);

FMPI_INSTANTIATE(float)
FMPI_INSTANTIATE(double)
#undef FMPI_INSTANTIATE

}  // namespace fmpi
