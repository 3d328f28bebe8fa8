#pragma once

// Image loss, Lion optimizer, patch sampling and the toy training loop.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fmpi/backbone.hpp"
#include "fmpi/pipeline.hpp"
#include "fmpi/scenes.hpp"

namespace fmpi {

struct LossConfig {
  bool use_l1 = true;
  bool use_ssim = true;
  double lambda_lpips = 0.01;  // kept for reference; the perceptual term is not computed
  int window = 11;
  double sigma = 1.5;
  double dynamic_range = 1.0;

  void validate() const;
};

/// Normalized 1-D Gaussian taps.
std::vector<double> gaussian_taps(int window, double sigma);

/// Mean SSIM over all channels and all fully covered window positions.
template <typename T>
Tensor<T> ssim(const Tensor<T>& x, const Tensor<T>& y, const LossConfig& cfg = {});

template <typename T>
struct LossTerms {
  Tensor<T> total;  // differentiable scalar
  double l1 = 0.0;
  double ssim = 0.0;
};

/// mean |Y - Yhat| + (1 - SSIM(Y, Yhat)), each term optional.
template <typename T>
LossTerms<T> image_loss(const Tensor<T>& truth, const Tensor<T>& prediction, const LossConfig& cfg = {});

/// Returns true the first time it is called in the process; used to note
/// the missing perceptual term once per run.
bool note_perceptual_term_omitted();

/// 10 log10(1 / MSE), capped at 99 dB.
double psnr(std::span<const float> a, std::span<const float> b);
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b);

struct LionConfig {
  double lr = 9e-5;
  double beta1 = 0.99;
  double beta2 = 0.90;
  double decay_fraction = 0.2;  // final share of iterations run at lr / decay_factor
  double decay_factor = 10.0;
};

/// lr for iteration `it` of `total`.
double scheduled_lr(const LionConfig& cfg, Index it, Index total);

/// One Lion step on raw buffers: p -= lr * sign(b1 m + (1-b1) g); m = b2 m + (1-b2) g.
/// NaN gradients are a numeric error.
template <typename T>
void lion_update(std::span<T> param, std::span<const T> grad, std::span<T> momentum, double lr, double beta1,
                 double beta2);

template <typename T>
struct LionState {
  LionConfig config;
  std::vector<std::vector<T>> momentum;  // one buffer per parameter

  /// Updates every parameter from its accumulated gradient (missing gradient = 0).
  void step(std::span<Tensor<T>> params, double lr);
};

template <typename T>
struct TrainingExample {
  std::vector<Tensor<T>> views;
  std::vector<CameraModel> cameras;
  CameraModel target;
  Tensor<T> target_image;
};

/// Crops the same window out of every view and the chosen target, shifting
/// each principal point by the window offset.
template <typename T>
TrainingExample<T> crop_example(const SceneBundle& scene, std::size_t target_index, Index x0, Index y0,
                                Index patch);

/// Uniform random target and window offset.
template <typename T>
TrainingExample<T> sample_patch(const SceneBundle& scene, Index patch, std::mt19937_64& rng);

struct TrainConfig {
  UNetConfig net;
  Index iterations = 2000;
  Index patch = 64;
  Index log_interval = 50;
  std::uint64_t seed = 1;
  LionConfig optimizer;
  LossConfig loss;
  FamilySpec scenes;
  Index eval_scenes = 6;
  int group_threads = 1;
};

struct TrainLogRow {
  Index iteration = 0;
  double loss = 0.0;
  double l1 = 0.0;
  double ssim = 0.0;
  double psnr = 0.0;
};

struct EvalMetrics {
  double psnr = 0.0;
  double ssim = 0.0;
  double l1 = 0.0;
};

template <typename T>
struct TrainResult {
  WeightStore<T> weights;
  std::vector<TrainLogRow> log;  // means over each logging interval
};

/// Deterministic for a fixed seed. Training scenes are drawn from the
/// family with `seed`; `initial` defaults to init_weights(net, seed).
template <typename T>
TrainResult<T> train_toy(const TrainConfig& cfg, const WeightStore<T>* initial = nullptr,
                         const std::function<void(const TrainLogRow&)>& on_log = {});

/// Held-out scenes for evaluation: a seed stream disjoint from training.
std::vector<SceneBundle> held_out_scenes(const TrainConfig& cfg);

/// Full-image metrics over every target of every scene.
template <typename T>
EvalMetrics evaluate(const TrainConfig& cfg, const WeightStore<T>& weights, const std::vector<SceneBundle>& scenes);

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows);

}  // namespace fmpi
