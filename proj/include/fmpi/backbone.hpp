#pragma once

// Four-level U-Net applied to one PSV group at a time.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fmpi/mpi.hpp"
#include "fmpi/ops.hpp"
#include "fmpi/psv.hpp"

namespace fmpi {

struct UNetConfig {
  Index planes = 16;      // D, input PSV planes
  Index groups = 4;       // G
  Index supersample = 2;  // S
  Index views = 4;        // V
  UpsampleMode upsample = UpsampleMode::kBilinear;

  Index planes_per_group() const { return planes / groups; }
  Index output_planes_per_group() const { return supersample * planes / groups; }
  Index output_planes() const { return supersample * planes; }
  Index in_channels() const { return planes_per_group() * 3 * views; }
  Index out_channels() const { return NetHeadOutput<float>::channels(output_planes_per_group(), views); }

  /// kInvalidGrouping if G does not divide D, kInvalidArgument for non-positive sizes.
  void validate() const;
};

struct LayerSpec {
  std::string name;
  Index in_channels;
  Index out_channels;
  int kernel;
  int stride;
  bool relu;
};

/// conv1 .. conv9 in execution order.
std::vector<LayerSpec> unet_layers(const UNetConfig& cfg);

/// Trainable parameter count (weights plus biases).
Index parameter_count(const UNetConfig& cfg);

/// Multiply-accumulates of one forward pass over an H x W group input.
std::uint64_t analytic_macs(const UNetConfig& cfg, Index height, Index width);

/// Named parameters in layer order: "<layer>.weight" [out,in,k,k], "<layer>.bias" [out].
template <typename T>
struct WeightStore {
  UNetConfig config;
  std::vector<std::pair<std::string, Tensor<T>>> records;

  const Tensor<T>& get(std::string_view name) const;
  std::vector<Tensor<T>> tensors() const;
  Index parameter_count() const;
};

/// Uniform weights in +-sqrt(6 / fan_in), zero biases.
template <typename T>
WeightStore<T> init_weights(const UNetConfig& cfg, std::uint64_t seed);

template <typename T>
WeightStore<T> zero_weights(const UNetConfig& cfg);

/// One group: [(D/G)*3V, H, W] -> head with S*D/G planes. H and W must be
/// multiples of 8.
template <typename T>
NetHeadOutput<T> unet_forward(const UNetConfig& cfg, const WeightStore<T>& weights, const Tensor<T>& input);

/// Runs every group with the shared weights. With threads > 1 groups run
/// concurrently; while a gradient tape is active they always run in order.
template <typename T>
std::vector<NetHeadOutput<T>> run_groups(const UNetConfig& cfg, const WeightStore<T>& weights,
                                         const GroupedPsv<T>& grouped, int threads = 1);

/// "FMPW": magic, u32 version, u32 D, G, S, V, upsample mode, u32 scalar
/// bytes, u32 record count, then per record u32 name length, name, u32 rank,
/// u64 dims, little-endian values.
template <typename T>
void save_weights(const std::filesystem::path& path, const WeightStore<T>& weights);

/// Loads a weight file. With `expected` set, every record must match that
/// config's layer table; the error names the first layer that does not.
template <typename T>
WeightStore<T> load_weights(const std::filesystem::path& path, const UNetConfig* expected = nullptr);

}  // namespace fmpi
