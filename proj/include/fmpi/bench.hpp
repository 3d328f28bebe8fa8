#pragma once

// Timing harness for PSV construction, grouping and super-sampling.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fmpi/backbone.hpp"

namespace fmpi {

struct BenchRow {
  std::string operation;
  Index D = 0, G = 0, S = 0, V = 0, H = 0, W = 0;
  int repeats = 0;
  double mean_ms = 0.0;
  double std_ms = 0.0;
  double mapping_ms = 0.0;
  double coord_ms = 0.0;
  double sampling_ms = 0.0;
  double network_ms = 0.0;
  double composite_ms = 0.0;
  std::uint64_t macs = 0;
};

struct Environment {
  int threads = 1;
  std::string precision = "f32";
  std::string cpu;
  std::string compiler;
  std::string build_type;
  unsigned hardware_threads = 0;
};

Environment capture_environment(int threads, const std::string& precision);

struct BenchReport {
  std::vector<BenchRow> rows;
  Environment env;

  /// Header line, environment comment lines (prefixed '#'), then one line per row.
  std::string csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

LinearFit fit_linear(const std::vector<double>& x, const std::vector<double>& y);

struct BenchOptions {
  int warmup = 3;
  int repeats = 30;
  int threads = 1;
  Index height = 464;
  Index width = 800;
  std::uint64_t seed = 1;
  UpsampleMode upsample = UpsampleMode::kBilinear;
  int parallel_groups = 0;  // concurrent group passes; 0 = sequential
  double near = 2.0;
  double far = 20.0;
};

/// Runs `fn` warmup + repeats times and returns per-repeat milliseconds.
template <typename Fn>
std::vector<double> time_repeats(int warmup, int repeats, Fn&& fn);

/// Mean and sample standard deviation.
std::pair<double, double> mean_std(const std::vector<double>& samples);

/// "psv" rows: D sweep at V=4 then V sweep at D=32.
BenchReport bench_psv(const std::vector<Index>& d_list, const std::vector<Index>& v_list, const BenchOptions& opts,
                      Index d_for_views = 32, Index v_for_planes = 4);

/// "grouping" rows, sorted by G: end-to-end synthesis at fixed D for each G.
BenchReport bench_grouping(Index planes, std::vector<Index> g_list, Index views, Index supersample,
                           const BenchOptions& opts);

/// "supersample" rows: PSV-build time for each (D, S), with output plane count S*D.
BenchReport bench_supersample(const std::vector<Index>& d_list, const std::vector<Index>& s_list, Index views,
                              const BenchOptions& opts);

struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Static SVG line plot; the output depends only on its arguments.
std::string svg_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                     const std::vector<PlotSeries>& series);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace fmpi

#include <chrono>

namespace fmpi {

template <typename Fn>
std::vector<double> time_repeats(int warmup, int repeats, Fn&& fn) {
  if (repeats < 1) fail(ErrorCode::kInvalidArgument, "benchmark needs at least one repeat");
  for (int i = 0; i < warmup; ++i) fn();
  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(repeats));
  for (int i = 0; i < repeats; ++i) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    samples.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
  }
  return samples;
}

}  // namespace fmpi
