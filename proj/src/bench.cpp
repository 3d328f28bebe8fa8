#include "fmpi/bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include "fmpi/ops.hpp"
#include "fmpi/pipeline.hpp"
#include "fmpi/psv.hpp"

#ifndef FMPI_BUILD_TYPE
#define FMPI_BUILD_TYPE "unknown"
#endif

namespace fmpi {

Environment capture_environment(int threads, const std::string& precision) {
  Environment env;
  env.threads = threads;
  env.precision = precision;
  env.hardware_threads = std::thread::hardware_concurrency();
  env.build_type = FMPI_BUILD_TYPE;
#if defined(__clang__)
  env.compiler = "clang " __clang_version__;
#elif defined(__GNUC__)
  env.compiler = "gcc " __VERSION__;
#else
  env.compiler = "unknown";
#endif
  std::ifstream info("/proc/cpuinfo");
  std::string line;
  while (std::getline(info, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) env.cpu = line.substr(colon + 2);
      break;
    }
  }
  if (env.cpu.empty()) env.cpu = "unknown";
  return env;
}

std::string BenchReport::csv() const {
  std::ostringstream out;
  out << "# cpu=" << env.cpu << "\n# compiler=" << env.compiler << "\n# build=" << env.build_type
      << "\n# threads=" << env.threads << "\n# hardware_threads=" << env.hardware_threads
      << "\n# precision=" << env.precision << '\n';
  out << "operation,D,G,S,V,H,W,repeats,mean_ms,std_ms,mapping_ms,coord_ms,sampling_ms,network_ms,composite_ms,macs\n";
  out << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    out << r.operation << ',' << r.D << ',' << r.G << ',' << r.S << ',' << r.V << ',' << r.H << ',' << r.W << ','
        << r.repeats << ',' << r.mean_ms << ',' << r.std_ms << ',' << r.mapping_ms << ',' << r.coord_ms << ','
        << r.sampling_ms << ',' << r.network_ms << ',' << r.composite_ms << ',' << r.macs << '\n';
  }
  return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
}

void BenchReport::write_csv(const std::filesystem::path& path) const { write_text(path, csv()); }

LinearFit fit_linear(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) fail(ErrorCode::kInvalidArgument, "linear fit needs two or more points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) fail(ErrorCode::kInvalidArgument, "linear fit needs distinct x values");
  LinearFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss_res = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (fit.intercept + fit.slope * x[i]);
    ss_res += e * e;
  }
  fit.r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
  return fit;
}

std::pair<double, double> mean_std(const std::vector<double>& samples) {
  if (samples.empty()) return {0.0, 0.0};
  double m = 0;
  for (double s : samples) m += s;
  m /= static_cast<double>(samples.size());
  double v = 0;
  for (double s : samples) v += (s - m) * (s - m);
  const double sd = samples.size() > 1 ? std::sqrt(v / static_cast<double>(samples.size() - 1)) : 0.0;
  return {m, sd};
}

namespace {

// V cameras spread over the 40 x 25 cm rig ellipse around a target at the origin.
std::vector<CameraModel> bench_cameras(Index views, Index height, Index width) {
  const Intrinsics intr{0.8 * static_cast<double>(width), 0.8 * static_cast<double>(width), 0.5 * (width - 1),
                        0.5 * (height - 1)};
  std::vector<CameraModel> cams;
  for (Index v = 0; v < views; ++v) {
    const double a = 2.0 * std::numbers::pi * (static_cast<double>(v) + 0.5) / static_cast<double>(views);
    cams.push_back(camera_at(intr, static_cast<int>(width), static_cast<int>(height),
                             Eigen::Vector3d(0.2 * std::cos(a), 0.125 * std::sin(a), 0.0)));
  }
  return cams;
}

CameraModel bench_target(Index height, Index width) {
  const Intrinsics intr{0.8 * static_cast<double>(width), 0.8 * static_cast<double>(width), 0.5 * (width - 1),
                        0.5 * (height - 1)};
  return camera_at(intr, static_cast<int>(width), static_cast<int>(height), Eigen::Vector3d::Zero());
}

std::vector<Tensor<float>> random_views(Index views, Index height, Index width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  std::vector<Tensor<float>> out;
  for (Index v = 0; v < views; ++v) {
    std::vector<float> px(static_cast<std::size_t>(3 * height * width));
    for (auto& p : px) p = unit(rng);
    out.emplace_back(Shape{3, height, width}, std::move(px));
  }
  return out;
}

BenchRow psv_row(const std::string& op, Index planes, Index views, const BenchOptions& opts) {
  const auto cams = bench_cameras(views, opts.height, opts.width);
  const auto target = bench_target(opts.height, opts.width);
  const auto images = random_views(views, opts.height, opts.width, opts.seed);
  const DepthSchedule schedule = make_schedule(opts.near, opts.far, planes);
  PlaneSweepVolume<float> psv;
  PsvTimings stages;
  int measured = 0;
  int call = 0;
  const auto samples = time_repeats(opts.warmup, opts.repeats, [&] {
    build_psv_into<float>(psv, images, cams, target, schedule, PsvOptions{opts.threads});
    if (call++ >= opts.warmup) {
      stages.mapping_ms += psv.timings.mapping_ms;
      stages.coord_ms += psv.timings.coord_ms;
      stages.sampling_ms += psv.timings.sampling_ms;
      ++measured;
    }
  });
  BenchRow row;
  row.operation = op;
  row.D = planes;
  row.G = 1;
  row.S = 1;
  row.V = views;
  row.H = opts.height;
  row.W = opts.width;
  row.repeats = opts.repeats;
  std::tie(row.mean_ms, row.std_ms) = mean_std(samples);
  row.mapping_ms = stages.mapping_ms / measured;
  row.coord_ms = stages.coord_ms / measured;
  row.sampling_ms = stages.sampling_ms / measured;
  return row;
}

}  // namespace

BenchReport bench_psv(const std::vector<Index>& d_list, const std::vector<Index>& v_list, const BenchOptions& opts,
                      Index d_for_views, Index v_for_planes) {
  BenchReport report;
  report.env = capture_environment(opts.threads, "f32");
  for (Index d : d_list) report.rows.push_back(psv_row("psv_planes", d, v_for_planes, opts));
  for (Index v : v_list) report.rows.push_back(psv_row("psv_views", d_for_views, v, opts));
  return report;
}

BenchReport bench_grouping(Index planes, std::vector<Index> g_list, Index views, Index supersample,
                           const BenchOptions& opts) {
  std::sort(g_list.begin(), g_list.end());
  for (Index g : g_list) {
    if (g < 1 || planes % g != 0) {
      fail(ErrorCode::kInvalidGrouping, "cannot split " + std::to_string(planes) + " planes into " +
                                            std::to_string(g) + " groups (D mod G must be 0)");
    }
  }
  BenchReport report;
  report.env = capture_environment(opts.parallel_groups > 0 ? opts.parallel_groups : 1, "f32");
  const auto cams = bench_cameras(views, opts.height, opts.width);
  const auto target = bench_target(opts.height, opts.width);
  const auto images = random_views(views, opts.height, opts.width, opts.seed);
  for (Index g : g_list) {
    PipelineConfig pc;
    pc.net = UNetConfig{planes, g, supersample, views, opts.upsample};
    pc.near = opts.near;
    pc.far = opts.far;
    pc.psv_threads = opts.threads;
    pc.group_threads = opts.parallel_groups > 0 ? opts.parallel_groups : 1;
    const auto weights = init_weights<float>(pc.net, opts.seed);
    BenchRow row;
    row.operation = "grouping";
    row.D = planes;
    row.G = g;
    row.S = supersample;
    row.V = views;
    row.H = opts.height;
    row.W = opts.width;
    row.repeats = opts.repeats;
    int call = 0;
    const auto samples = time_repeats(opts.warmup, opts.repeats, [&] {
      const bool measured = call++ >= opts.warmup;
      if (measured) reset_conv_mac_count();
      const auto syn = synthesize<float>(pc, weights, images, cams, target);
      if (measured) {
        row.macs = conv_mac_count();
        row.mapping_ms += syn.psv_timings.mapping_ms;
        row.coord_ms += syn.psv_timings.coord_ms;
        row.sampling_ms += syn.psv_timings.sampling_ms;
        row.network_ms += syn.network_ms;
        row.composite_ms += syn.assemble_ms + syn.composite_ms;
      }
    });
    std::tie(row.mean_ms, row.std_ms) = mean_std(samples);
    for (double* stage : {&row.mapping_ms, &row.coord_ms, &row.sampling_ms, &row.network_ms, &row.composite_ms}) {
      *stage /= opts.repeats;
    }
    report.rows.push_back(row);
  }
  return report;
}

BenchReport bench_supersample(const std::vector<Index>& d_list, const std::vector<Index>& s_list, Index views,
                              const BenchOptions& opts) {
  BenchReport report;
  report.env = capture_environment(opts.threads, "f32");
  for (Index d : d_list) {
    // The PSV only depends on D; every S shares one measurement.
    const BenchRow base = psv_row("supersample", d, views, opts);
    for (Index s : s_list) {
      BenchRow row = base;
      row.S = s;
      report.rows.push_back(row);
    }
  }
  return report;
}

std::string svg_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                     const std::vector<PlotSeries>& series) {
  constexpr double kW = 640, kH = 420, kLeft = 70, kRight = 20, kTop = 40, kBottom = 55;
  static const char* kColours[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
  bool first = true;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (first) {
        x_min = x_max = s.x[i];
        y_max = s.y[i];
        first = false;
      }
      x_min = std::min(x_min, s.x[i]);
      x_max = std::max(x_max, s.x[i]);
      y_max = std::max(y_max, s.y[i]);
    }
  y_min = 0.0;
  if (x_max == x_min) x_max = x_min + 1.0;
  if (y_max <= y_min) y_max = y_min + 1.0;
  y_max *= 1.05;
  auto px = [&](double x) { return kLeft + (x - x_min) / (x_max - x_min) * (kW - kLeft - kRight); };
  auto py = [&](double y) { return kH - kBottom - (y - y_min) / (y_max - y_min) * (kH - kTop - kBottom); };

  std::ostringstream svg;
  svg << std::fixed << std::setprecision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" viewBox=\"0 0 "
      << kW << ' ' << kH << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  svg << "<line x1=\"" << kLeft << "\" y1=\"" << kH - kBottom << "\" x2=\"" << kW - kRight << "\" y2=\"" << kH - kBottom
      << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kH - kBottom
      << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    const double xv = x_min + (x_max - x_min) * t / 5.0;
    const double yv = y_min + (y_max - y_min) * t / 5.0;
    svg << "<text x=\"" << px(xv) << "\" y=\"" << kH - kBottom + 18 << "\" text-anchor=\"middle\">" << xv << "</text>\n";
    svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << yv << "</text>\n";
    svg << "<line x1=\"" << kLeft << "\" y1=\"" << py(yv) << "\" x2=\"" << kW - kRight << "\" y2=\"" << py(yv)
        << "\" stroke=\"#dddddd\"/>\n";
  }
  svg << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">" << x_label << "</text>\n";
  svg << "<text x=\"16\" y=\"" << kH / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << kH / 2 << ")\">"
      << y_label << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* colour = kColours[k % 6];
    svg << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) svg << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    svg << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      svg << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\"" << colour << "\"/>\n";
    }
    svg << "<text x=\"" << kLeft + 10 << "\" y=\"" << kTop + 16 * (k + 1) << "\" fill=\"" << colour << "\">" << s.label
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace fmpi
