// fmpi command-line front end.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>

#include "fmpi/bench.hpp"
#include "fmpi/image_io.hpp"
#include "fmpi/pipeline.hpp"
#include "fmpi/training.hpp"

namespace {

using namespace fmpi;

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct Globals {
  Index planes = 16;
  Index groups = 4;
  Index supersample = 2;
  double near = std::numeric_limits<double>::quiet_NaN();
  double far = std::numeric_limits<double>::quiet_NaN();
  int threads = 1;
  std::string precision = "f32";
  std::string upsample = "bilinear";
  std::uint64_t seed = 1;
};

UNetConfig net_config(const Globals& g, Index views) {
  UNetConfig cfg{g.planes, g.groups, g.supersample, views, parse_upsample_mode(g.upsample)};
  cfg.validate();
  return cfg;
}

std::vector<Index> parse_list(const std::string& text) {
  std::vector<Index> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v < 1) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      fail(ErrorCode::kInvalidArgument, "bad list entry '" + item + "' in '" + text + "'");
    }
  }
  if (out.empty()) fail(ErrorCode::kInvalidArgument, "empty list '" + text + "'");
  return out;
}

void write_depth(const std::filesystem::path& path, const Tensor<float>& depth, double far) {
  if (path.extension() == ".png") {
    // Normalized inverse depth reads naturally as an image.
    std::vector<float> v(depth.data().begin(), depth.data().end());
    float peak = 0.0f;
    for (auto& x : v) {
      x = x > 0.0f ? 1.0f / x : 0.0f;
      peak = std::max(peak, x);
    }
    const float floor_disp = std::isfinite(far) ? static_cast<float>(1.0 / far) : 0.0f;
    for (auto& x : v) x = peak > floor_disp ? std::max(0.0f, (x - floor_disp) / (peak - floor_disp)) : 0.0f;
    write_png(path, Tensor<float>(depth.shape(), std::move(v)));
  } else {
    write_image(path, depth);
  }
}

void print_fit(const std::string& what, const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() < 2) return;
  const auto fit = fit_linear(x, y);
  std::cout << what << ": slope=" << fit.slope << " ms/unit intercept=" << fit.intercept << " ms r2=" << fit.r2
            << '\n';
}

// ---------------------------------------------------------------------------
// render / warp-mpi

struct RenderArgs {
  std::string scene;
  std::string weights;
  int target_index = 0;
  std::string out = "render.png";
  std::string depth_out;
  std::string save_mpi;
  bool static_mpi = false;
  bool oracle_alpha = false;
  int pad_to_multiple = 0;
  int parallel_groups = 0;
};

CameraModel reference_camera(const std::vector<CameraModel>& sources) {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  for (const auto& c : sources) center += c.center();
  center /= static_cast<double>(sources.size());
  const auto& first = sources.front();
  return camera_at(first.intrinsics, first.width, first.height, center, first.rotation);
}

template <typename T>
int run_render(const Globals& g, const RenderArgs& a) {
  const SceneBundle scene = load_scene_dir(a.scene);
  if (a.target_index < 0 || static_cast<std::size_t>(a.target_index) >= scene.targets.size()) {
    fail(ErrorCode::kInvalidArgument, "target index " + std::to_string(a.target_index) + " out of range (scene has " +
                                          std::to_string(scene.targets.size()) + " targets)");
  }
  const double near = std::isnan(g.near) ? scene.near : g.near;
  const double far = std::isnan(g.far) ? scene.far : g.far;
  const auto views = cast_images<T>(scene.source_images());
  const auto cams = scene.source_cameras();
  const UNetConfig cfg = net_config(g, static_cast<Index>(cams.size()));
  const CameraModel target = scene.targets[a.target_index].camera;
  const CameraModel anchor = a.static_mpi ? reference_camera(cams) : target;
  const CameraModel padded = a.pad_to_multiple > 0 ? pad_camera(anchor, a.pad_to_multiple) : anchor;

  MultiplaneImage<T> mpi;
  if (a.oracle_alpha) {
    if (!scene.synthetic) fail(ErrorCode::kInvalidArgument, "--oracle-alpha needs a scene with a synthetic block");
    mpi = oracle_alpha_mpi<T>(*scene.synthetic, views, cams, padded, make_schedule(near, far, g.planes));
  } else {
    if (a.weights.empty()) fail(ErrorCode::kInvalidArgument, "render needs --weights unless --oracle-alpha is set");
    const auto weights = load_weights<T>(a.weights, &cfg);
    PipelineConfig pc{cfg, near, far, g.threads, a.parallel_groups > 0 ? a.parallel_groups : 1};
    mpi = synthesize<T>(pc, weights, views, cams, padded).mpi;
  }
  if (a.pad_to_multiple > 0 && !a.static_mpi) {
    const Index planes = mpi.planes();
    mpi.rgba = crop_top_left(reshape(mpi.rgba, Shape{planes * 4, padded.height, padded.width}), anchor.height,
                             anchor.width);
    mpi.rgba = reshape(mpi.rgba, Shape{planes, 4, anchor.height, anchor.width});
    mpi.camera = anchor;
  }
  if (!a.save_mpi.empty()) save_mpi(a.save_mpi, mpi);

  Tensor<T> rgb;
  Tensor<T> depth;
  if (a.static_mpi) {
    rgb = warp_mpi(mpi, target);
    depth = composite_depth(warp_mpi_planes(mpi, target));
  } else {
    rgb = composite(mpi.rgba);
    depth = composite_depth(mpi);
  }
  write_image(a.out, rgb.template cast<float>());
  if (!a.depth_out.empty()) write_depth(a.depth_out, depth.template cast<float>(), far);
  std::cout << "wrote " << a.out;
  const auto& gt = scene.targets[a.target_index].image;
  if (gt.defined()) std::cout << " psnr=" << psnr(gt, rgb.template cast<float>());
  std::cout << '\n';
  return 0;
}

struct WarpArgs {
  std::string mpi;
  std::string scene;
  int target_index = 0;
  std::string out = "warped.png";
};

template <typename T>
int run_warp(const WarpArgs& a) {
  const auto mpi = load_mpi<T>(a.mpi);
  const SceneBundle scene = load_scene_dir(a.scene);
  if (a.target_index < 0 || static_cast<std::size_t>(a.target_index) >= scene.targets.size()) {
    fail(ErrorCode::kInvalidArgument, "target index " + std::to_string(a.target_index) + " out of range");
  }
  const auto& target = scene.targets[a.target_index];
  const Tensor<float> rgb = warp_mpi(mpi, target.camera).template cast<float>();
  write_image(a.out, rgb);
  std::cout << "wrote " << a.out;
  if (target.image.defined()) std::cout << " psnr=" << psnr(target.image, rgb);
  std::cout << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  Index iterations = 2000;
  Index patch = 64;
  Index log_interval = 50;
  Index eval_scenes = 6;
  double lr = 9e-5;
  std::string out = "weights.fmpw";
  std::string log = "train_log.csv";
  std::string init;
  Index views = 4;
};

template <typename T>
int run_train(const Globals& g, const TrainArgs& a) {
  TrainConfig cfg;
  cfg.net = net_config(g, a.views);
  cfg.iterations = a.iterations;
  cfg.patch = a.patch;
  cfg.log_interval = a.log_interval;
  cfg.eval_scenes = a.eval_scenes;
  cfg.seed = g.seed;
  cfg.optimizer.lr = a.lr;
  if (!std::isnan(g.near)) cfg.scenes.near = g.near;
  if (!std::isnan(g.far)) cfg.scenes.far = g.far;
  std::optional<WeightStore<T>> initial;
  if (!a.init.empty()) initial = load_weights<T>(a.init, &cfg.net);
  const auto result = train_toy<T>(cfg, initial ? &*initial : nullptr, [](const TrainLogRow& r) {
    std::cout << "iter " << r.iteration << " loss=" << r.loss << " l1=" << r.l1 << " ssim=" << r.ssim
              << " psnr=" << r.psnr << '\n';
  });
  save_weights(a.out, result.weights);
  write_train_log(a.log, result.log);
  if (cfg.eval_scenes > 0) {
    const auto m = evaluate<T>(cfg, result.weights, held_out_scenes(cfg));
    std::cout << "held-out psnr=" << m.psnr << " ssim=" << m.ssim << " l1=" << m.l1 << '\n';
  }
  std::cout << "wrote " << a.out << " and " << a.log << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// benchmarks

struct BenchArgs {
  std::string d_list;
  std::string v_list = "2,3,4,6,8";
  std::string g_list;
  std::string s_list = "1,2";
  Index views = 4;
  Index height = 464;
  Index width = 800;
  int repeats = 30;
  int warmup = 3;
  int parallel_groups = 0;
  std::string csv;
  std::string svg;
};

BenchOptions bench_options(const Globals& g, const BenchArgs& a) {
  if (a.repeats < 10) fail(ErrorCode::kInvalidArgument, "reported rows need at least 10 repeats");
  BenchOptions o;
  o.warmup = a.warmup;
  o.repeats = a.repeats;
  o.threads = g.threads;
  o.height = a.height;
  o.width = a.width;
  o.seed = g.seed;
  o.upsample = parse_upsample_mode(g.upsample);
  o.parallel_groups = a.parallel_groups;
  if (!std::isnan(g.near)) o.near = g.near;
  if (!std::isnan(g.far)) o.far = g.far;
  return o;
}

void emit(const BenchReport& report, const BenchArgs& a, const std::string& svg) {
  std::cout << report.csv();
  if (!a.csv.empty()) report.write_csv(a.csv);
  if (!a.svg.empty()) write_text(a.svg, svg);
}

int run_bench_psv(const Globals& g, const BenchArgs& a) {
  const auto report = bench_psv(parse_list(a.d_list.empty() ? "8,16,32,64,128" : a.d_list), parse_list(a.v_list),
                                bench_options(g, a));
  PlotSeries planes{"planes (V=4)", {}, {}};
  PlotSeries views{"views (D=32)", {}, {}};
  for (const auto& r : report.rows) {
    auto& s = r.operation == "psv_planes" ? planes : views;
    s.x.push_back(static_cast<double>(r.operation == "psv_planes" ? r.D : r.V));
    s.y.push_back(r.mean_ms);
  }
  emit(report, a, svg_plot("Plane sweep volume build time", "planes / views", "ms", {planes, views}));
  print_fit("fit planes", planes.x, planes.y);
  print_fit("fit views", views.x, views.y);
  for (std::size_t i = 1; i < planes.x.size(); ++i) {
    if (planes.x[i] == 2 * planes.x[i - 1]) {
      std::cout << "ratio D=" << planes.x[i] << "/D=" << planes.x[i - 1] << ": " << planes.y[i] / planes.y[i - 1] << '\n';
    }
  }
  return 0;
}

int run_bench_grouping(const Globals& g, const BenchArgs& a) {
  std::vector<Index> groups;
  if (a.g_list.empty()) {
    for (Index k = 1; k <= g.planes; k *= 2)
      if (g.planes % k == 0) groups.push_back(k);
  } else {
    groups = parse_list(a.g_list);
  }
  const auto report = bench_grouping(g.planes, groups, a.views, g.supersample, bench_options(g, a));
  PlotSeries latency{"end-to-end latency", {}, {}};
  for (const auto& r : report.rows) {
    latency.x.push_back(static_cast<double>(r.G));
    latency.y.push_back(r.mean_ms);
  }
  emit(report, a, svg_plot("Latency over the number of plane groups", "G", "ms", {latency}));
  for (const auto& r : report.rows) {
    const UNetConfig cfg{r.D, r.G, r.S, r.V, parse_upsample_mode(g.upsample)};
    std::cout << "G=" << r.G << " macs=" << r.macs << " analytic=" << r.G * analytic_macs(cfg, r.H, r.W) << '\n';
  }
  return 0;
}

int run_bench_supersample(const Globals& g, const BenchArgs& a) {
  const auto report = bench_supersample(parse_list(a.d_list.empty() ? "32,64" : a.d_list), parse_list(a.s_list),
                                        a.views, bench_options(g, a));
  std::vector<PlotSeries> series;
  for (const auto& r : report.rows) {
    const std::string label = "S=" + std::to_string(r.S);
    auto it = std::find_if(series.begin(), series.end(), [&](const PlotSeries& s) { return s.label == label; });
    if (it == series.end()) {
      series.push_back({label, {}, {}});
      it = series.end() - 1;
    }
    it->x.push_back(static_cast<double>(r.D * r.S));
    it->y.push_back(r.mean_ms);
  }
  emit(report, a, svg_plot("PSV build time over output planes", "output planes S*D", "ms", series));
  for (const auto& sparse : report.rows) {
    if (sparse.S == 1) continue;
    for (const auto& dense : report.rows) {
      if (dense.S == 1 && dense.D == sparse.D * sparse.S) {
        std::cout << "saving D=" << sparse.D << ",S=" << sparse.S << " vs D=" << dense.D << ",S=1: ratio "
                  << sparse.mean_ms / dense.mean_ms << " (output planes " << sparse.D * sparse.S << " == " << dense.D
                  << ")\n";
      }
    }
  }
  return 0;
}

// ---------------------------------------------------------------------------
// metrics / generate-scene

int run_metrics(const std::string& rendered, const std::string& truth) {
  const Tensor<float> a = read_image(rendered);
  const Tensor<float> b = read_image(truth);
  if (a.shape() != b.shape()) {
    fail(ErrorCode::kDimension, "image sizes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const Tensor<double> ad = a.cast<double>();
  const Tensor<double> bd = b.cast<double>();
  double l1 = 0.0;
  for (std::size_t i = 0; i < ad.data().size(); ++i) l1 += std::abs(ad.data()[i] - bd.data()[i]);
  l1 /= static_cast<double>(ad.numel());
  std::cout << std::setprecision(8) << "{\"psnr\": " << psnr(ad, bd) << ", \"ssim\": " << ssim(ad, bd).item()
            << ", \"l1\": " << l1 << "}\n";
  return 0;
}

struct GenerateArgs {
  std::string out;
  std::uint64_t index = 0;
  int targets = 2;
  int width = 96;
  int height = 96;
  std::string format = "fimg";
};

int run_generate(const Globals& g, const GenerateArgs& a) {
  FamilySpec spec;
  spec.targets = a.targets;
  spec.width = a.width;
  spec.height = a.height;
  spec.focal = a.width;
  if (!std::isnan(g.near)) spec.near = g.near;
  if (!std::isnan(g.far)) spec.far = g.far;
  const auto bundle = generate_scene(g.seed, a.index, spec);
  save_scene_dir(a.out, bundle, a.format == "png" ? ImageFormat::kPng : ImageFormat::kFimg);
  std::cout << "wrote " << a.out << '\n';
  return 0;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fast multiplane-image view synthesis"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file with flag values");
  Globals g;
  app.add_option("--planes", g.planes, "input PSV planes D")->check(CLI::PositiveNumber);
  app.add_option("--groups", g.groups, "plane groups G")->check(CLI::PositiveNumber);
  app.add_option("--supersample", g.supersample, "output planes per input plane S")->check(CLI::PositiveNumber);
  app.add_option("--near", g.near, "nearest plane depth (m)");
  app.add_option("--far", g.far, "farthest plane depth (m), may be inf");
  app.add_option("--threads", g.threads, "PSV worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--precision", g.precision, "scalar type")->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--upsample-mode", g.upsample, "decoder upsampling")->check(CLI::IsMember({"bilinear", "nearest"}));
  app.add_option("--seed", g.seed, "random seed");
  app.fallthrough();

  RenderArgs render;
  auto* render_cmd = app.add_subcommand("render", "synthesize a target view of a scene directory");
  render_cmd->add_option("--scene", render.scene, "scene directory")->required();
  render_cmd->add_option("--weights", render.weights, "FMPW weight file");
  render_cmd->add_option("--target-index", render.target_index, "target camera index");
  render_cmd->add_option("--out", render.out, "RGB output (.png or .fimg)");
  render_cmd->add_option("--depth-out", render.depth_out, "depth output (.fimg raw, .png normalized disparity)");
  render_cmd->add_option("--save-mpi", render.save_mpi, "write the MPI as FMPI");
  render_cmd->add_flag("--static-mpi", render.static_mpi, "build one MPI at the rig center and warp it");
  render_cmd->add_flag("--oracle-alpha", render.oracle_alpha, "use ground-truth alpha from the synthetic scene");
  render_cmd->add_option("--pad-to-multiple", render.pad_to_multiple, "pad the target canvas, crop after")
      ->check(CLI::NonNegativeNumber);
  render_cmd->add_option("--parallel-groups", render.parallel_groups, "concurrent group passes (0 = sequential)")
      ->check(CLI::NonNegativeNumber);

  WarpArgs warp;
  auto* warp_cmd = app.add_subcommand("warp-mpi", "re-render a stored MPI from a scene target camera");
  warp_cmd->add_option("--mpi", warp.mpi, "FMPI file")->required();
  warp_cmd->add_option("--scene", warp.scene, "scene directory with the target cameras")->required();
  warp_cmd->add_option("--target-index", warp.target_index, "target camera index");
  warp_cmd->add_option("--out", warp.out, "RGB output");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "toy training on the synthetic scene family");
  train_cmd->add_option("--iters", train.iterations, "iterations")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--patch", train.patch, "patch size (multiple of 8)");
  train_cmd->add_option("--views", train.views, "source views V");
  train_cmd->add_option("--lr", train.lr, "Lion learning rate");
  train_cmd->add_option("--log-interval", train.log_interval, "iterations per log row")->check(CLI::PositiveNumber);
  train_cmd->add_option("--eval-scenes", train.eval_scenes, "held-out scenes")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--out", train.out, "FMPW output");
  train_cmd->add_option("--log", train.log, "CSV metric log");
  train_cmd->add_option("--init", train.init, "resume from this FMPW file");

  BenchArgs bench;
  auto add_bench_flags = [&](CLI::App* cmd) {
    cmd->add_option("--repeats", bench.repeats, "timed repeats (>= 10)");
    cmd->add_option("--warmup", bench.warmup, "untimed warm-up runs");
    cmd->add_option("--height", bench.height, "image height")->check(CLI::PositiveNumber);
    cmd->add_option("--width", bench.width, "image width")->check(CLI::PositiveNumber);
    cmd->add_option("--csv", bench.csv, "CSV report path");
    cmd->add_option("--svg", bench.svg, "SVG plot path");
  };
  auto* bench_psv_cmd = app.add_subcommand("bench-psv", "PSV build time over planes and views");
  add_bench_flags(bench_psv_cmd);
  bench_psv_cmd->add_option("--d-list", bench.d_list, "comma-separated plane counts");
  bench_psv_cmd->add_option("--v-list", bench.v_list, "comma-separated view counts");

  auto* bench_grouping_cmd = app.add_subcommand("bench-grouping", "end-to-end latency over G at fixed D");
  add_bench_flags(bench_grouping_cmd);
  bench_grouping_cmd->add_option("--g-list", bench.g_list, "comma-separated group counts");
  bench_grouping_cmd->add_option("--views", bench.views, "source views V");
  bench_grouping_cmd->add_option("--parallel-groups", bench.parallel_groups, "concurrent group passes (0 = sequential)")
      ->check(CLI::NonNegativeNumber);

  auto* bench_ss_cmd = app.add_subcommand("bench-supersample", "PSV cost of sparse input planes");
  add_bench_flags(bench_ss_cmd);
  bench_ss_cmd->add_option("--d-list", bench.d_list, "comma-separated input plane counts");
  bench_ss_cmd->add_option("--s-list", bench.s_list, "comma-separated super-sampling factors");
  bench_ss_cmd->add_option("--views", bench.views, "source views V");

  std::string rendered, truth;
  auto* metrics_cmd = app.add_subcommand("metrics", "PSNR, SSIM and L1 between two images");
  metrics_cmd->add_option("rendered", rendered, "rendered image")->required();
  metrics_cmd->add_option("ground_truth", truth, "reference image")->required();

  GenerateArgs gen;
  auto* gen_cmd = app.add_subcommand("generate-scene", "write one synthetic scene directory");
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  gen_cmd->add_option("--index", gen.index, "scene index within the seed's family");
  gen_cmd->add_option("--targets", gen.targets, "target views")->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--width", gen.width, "image width")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--height", gen.height, "image height")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--format", gen.format, "image format")->check(CLI::IsMember({"fimg", "png"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << '\n';
    return kExitUsage;
  }

  const bool f64 = g.precision == "f64";
  try {
    if (*render_cmd) return f64 ? run_render<double>(g, render) : run_render<float>(g, render);
    if (*warp_cmd) return f64 ? run_warp<double>(warp) : run_warp<float>(warp);
    if (*train_cmd) return f64 ? run_train<double>(g, train) : run_train<float>(g, train);
    if (*bench_psv_cmd) return run_bench_psv(g, bench);
    if (*bench_grouping_cmd) return run_bench_grouping(g, bench);
    if (*bench_ss_cmd) return run_bench_supersample(g, bench);
    if (*metrics_cmd) return run_metrics(rendered, truth);
    if (*gen_cmd) return run_generate(g, gen);
  } catch (const Error& e) {
    std::cerr << "error: " << error_code_name(e.code()) << ": " << one_line(e.what()) << '\n';
    return e.code() == ErrorCode::kNumeric ? kExitNumeric : kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << one_line(e.what()) << '\n';
    return kExitData;
  }
  return kExitUsage;
}
