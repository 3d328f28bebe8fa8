#include "fmpi/backbone.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "binary_io.hpp"
#include "fmpi/parallel.hpp"

namespace fmpi {

void UNetConfig::validate() const {
  if (planes < 1 || groups < 1 || supersample < 1 || views < 1) {
    fail(ErrorCode::kInvalidArgument, "network config: D, G, S and V must be positive");
  }
  if (planes % groups != 0) {
    fail(ErrorCode::kInvalidGrouping, "cannot split " + std::to_string(planes) + " planes into " +
                                          std::to_string(groups) + " groups (D mod G must be 0)");
  }
}

std::vector<LayerSpec> unet_layers(const UNetConfig& cfg) {
  return {
      {"conv1", cfg.in_channels(), 16, 3, 1, true},
      {"conv2", 16, 32, 3, 2, true},
      {"conv3", 32, 64, 3, 2, true},
      {"conv4", 64, 128, 3, 2, true},
      {"conv5", 128, 128, 3, 1, true},
      {"conv6a", 128, 256, 3, 1, true},
      {"conv6b", 256 + 64, 64, 3, 1, true},
      {"conv7", 64 + 32, 32, 3, 1, true},
      {"conv8", 32 + 16, 16, 3, 1, true},
      {"conv9", 16, cfg.out_channels(), 3, 1, false},
  };
}

Index parameter_count(const UNetConfig& cfg) {
  Index total = 0;
  for (const auto& l : unet_layers(cfg)) total += l.out_channels * (l.in_channels * l.kernel * l.kernel + 1);
  return total;
}

std::uint64_t analytic_macs(const UNetConfig& cfg, Index height, Index width) {
  // Spatial scale (as a power of two) at which each layer produces its output.
  static constexpr int kLevel[] = {0, 1, 2, 3, 3, 3, 2, 1, 0, 0};
  const auto layers = unet_layers(cfg);
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    const std::uint64_t pixels =
        static_cast<std::uint64_t>(height >> kLevel[i]) * static_cast<std::uint64_t>(width >> kLevel[i]);
    total += pixels * static_cast<std::uint64_t>(l.out_channels * l.in_channels * l.kernel * l.kernel);
  }
  return total;
}

template <typename T>
const Tensor<T>& WeightStore<T>::get(std::string_view name) const {
  for (const auto& [n, t] : records) {
    if (n == name) return t;
  }
  fail(ErrorCode::kConfigMismatch, "weights: missing record " + std::string(name));
}

template <typename T>
std::vector<Tensor<T>> WeightStore<T>::tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.second);
  return out;
}

template <typename T>
Index WeightStore<T>::parameter_count() const {
  Index total = 0;
  for (const auto& r : records) total += r.second.numel();
  return total;
}

namespace {

template <typename T>
WeightStore<T> make_store(const UNetConfig& cfg, std::mt19937_64* rng) {
  cfg.validate();
  WeightStore<T> store;
  store.config = cfg;
  for (const auto& l : unet_layers(cfg)) {
    const Shape wshape{l.out_channels, l.in_channels, l.kernel, l.kernel};
    std::vector<T> w(static_cast<std::size_t>(shape_numel(wshape)), T(0));
    if (rng) {
      const double bound = std::sqrt(6.0 / static_cast<double>(l.in_channels * l.kernel * l.kernel));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : w) v = static_cast<T>(dist(*rng));
    }
    Tensor<T> weight(wshape, std::move(w));
    weight.set_requires_grad(true);
    Tensor<T> bias = Tensor<T>::zeros(Shape{l.out_channels});
    bias.set_requires_grad(true);
    store.records.emplace_back(l.name + ".weight", weight);
    store.records.emplace_back(l.name + ".bias", bias);
  }
  return store;
}

}  // namespace

template <typename T>
WeightStore<T> init_weights(const UNetConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return make_store<T>(cfg, &rng);
}

template <typename T>
WeightStore<T> zero_weights(const UNetConfig& cfg) {
  return make_store<T>(cfg, nullptr);
}

template <typename T>
NetHeadOutput<T> unet_forward(const UNetConfig& cfg, const WeightStore<T>& weights, const Tensor<T>& input) {
  if (input.rank() != 3 || input.dim(0) != cfg.in_channels()) {
    fail(ErrorCode::kDimension, "network input must be [" + std::to_string(cfg.in_channels()) +
                                    ",H,W], got " + shape_str(input.shape()));
  }
  if (input.dim(1) % 8 != 0 || input.dim(2) % 8 != 0) {
    fail(ErrorCode::kDimension, "network input " + std::to_string(input.dim(1)) + "x" +
                                    std::to_string(input.dim(2)) + " is not a multiple of 8");
  }
  auto layer = [&](const char* name, const Tensor<T>& x, int stride, bool act) {
    const std::string base(name);
    Tensor<T> y = conv2d(x, weights.get(base + ".weight"), weights.get(base + ".bias"), stride, 1);
    return act ? relu(y) : y;
  };
  auto cat = [](const Tensor<T>& a, const Tensor<T>& b) { return concat<T>(std::vector<Tensor<T>>{a, b}, 0); };

  const Tensor<T> c1 = layer("conv1", input, 1, true);
  const Tensor<T> c2 = layer("conv2", c1, 2, true);
  const Tensor<T> c3 = layer("conv3", c2, 2, true);
  const Tensor<T> c4 = layer("conv4", c3, 2, true);
  const Tensor<T> c5 = layer("conv5", c4, 1, true);
  const Tensor<T> c6a = layer("conv6a", c5, 1, true);
  const Tensor<T> c6b = layer("conv6b", cat(upsample2x(c6a, cfg.upsample), c3), 1, true);
  const Tensor<T> c7 = layer("conv7", cat(upsample2x(c6b, cfg.upsample), c2), 1, true);
  const Tensor<T> c8 = layer("conv8", cat(upsample2x(c7, cfg.upsample), c1), 1, true);
  return NetHeadOutput<T>{layer("conv9", c8, 1, false), cfg.output_planes_per_group(), cfg.views};
}

template <typename T>
std::vector<NetHeadOutput<T>> run_groups(const UNetConfig& cfg, const WeightStore<T>& weights,
                                         const GroupedPsv<T>& grouped, int threads) {
  if (grouped.layout.groups != cfg.groups || grouped.layout.channels() != cfg.in_channels()) {
    fail(ErrorCode::kDimension, "grouped PSV " + shape_str(grouped.data.shape()) +
                                    " does not match network input of " +
                                    std::to_string(cfg.in_channels()) + " channels in " +
                                    std::to_string(cfg.groups) + " groups");
  }
  std::vector<NetHeadOutput<T>> heads(static_cast<std::size_t>(cfg.groups));
  const int workers = GradTape<T>::active() ? 1 : threads;
  parallel_for(cfg.groups, workers, [&](Index g) {
    heads[static_cast<std::size_t>(g)] = unet_forward(cfg, weights, grouped.group_input(g));
  });
  return heads;
}

namespace {

constexpr std::uint32_t kWeightsVersion = 1;

std::string describe(const Shape& s) { return shape_str(s); }

}  // namespace

template <typename T>
void save_weights(const std::filesystem::path& path, const WeightStore<T>& weights) {
  auto out = io::open_out(path);
  out.write("FMPW", 4);
  const UNetConfig& c = weights.config;
  io::put<std::uint32_t>(out, kWeightsVersion);
  for (Index v : {c.planes, c.groups, c.supersample, c.views}) io::put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  io::put<std::uint32_t>(out, c.upsample == UpsampleMode::kBilinear ? 0u : 1u);
  io::put<std::uint32_t>(out, sizeof(T));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(weights.records.size()));
  for (const auto& [name, tensor] : weights.records) {
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    io::put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.rank()));
    for (Index d : tensor.shape()) io::put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    for (T v : tensor.data()) io::put<T>(out, v);
  }
  if (!out) fail(ErrorCode::kIo, "failed writing " + path.string());
}

template <typename T>
WeightStore<T> load_weights(const std::filesystem::path& path, const UNetConfig* expected) {
  auto in = io::open_in(path);
  const std::string what = path.string();
  io::Reader reader(in, what);
  reader.expect_magic("FMPW");
  const auto version = reader.get<std::uint32_t>();
  if (version != kWeightsVersion) {
    fail(ErrorCode::kFormat, what + ": unsupported FMPW version " + std::to_string(version));
  }
  WeightStore<T> store;
  UNetConfig& c = store.config;
  c.planes = reader.get<std::uint32_t>();
  c.groups = reader.get<std::uint32_t>();
  c.supersample = reader.get<std::uint32_t>();
  c.views = reader.get<std::uint32_t>();
  const auto mode = reader.get<std::uint32_t>();
  if (mode > 1) fail(ErrorCode::kFormat, what + ": unknown upsample mode " + std::to_string(mode));
  c.upsample = mode == 0 ? UpsampleMode::kBilinear : UpsampleMode::kNearest;
  const auto scalar_bytes = reader.get<std::uint32_t>();
  if (scalar_bytes != 4 && scalar_bytes != 8) {
    fail(ErrorCode::kFormat, what + ": unsupported scalar size " + std::to_string(scalar_bytes));
  }
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kFormat, what + ": " + e.what());
  }
  const auto count = reader.get<std::uint32_t>();

  std::vector<std::pair<std::string, Shape>> wanted;
  if (expected) {
    for (const auto& l : unet_layers(*expected)) {
      wanted.emplace_back(l.name + ".weight", Shape{l.out_channels, l.in_channels, l.kernel, l.kernel});
      wanted.emplace_back(l.name + ".bias", Shape{l.out_channels});
    }
  }

  for (std::uint32_t r = 0; r < count; ++r) {
    const auto name_len = reader.get<std::uint32_t>();
    if (name_len > 4096) fail(ErrorCode::kFormat, what + ": corrupt record name");
    std::string name = reader.get_bytes(name_len);
    const auto rank = reader.get<std::uint32_t>();
    if (rank > 8) fail(ErrorCode::kFormat, what + ": corrupt rank in record " + name);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<Index>(reader.get<std::uint64_t>());
    if (expected) {
      if (r >= wanted.size()) fail(ErrorCode::kConfigMismatch, what + ": unexpected extra layer " + name);
      if (wanted[r].first != name || wanted[r].second != shape) {
        fail(ErrorCode::kConfigMismatch, what + ": layer " + wanted[r].first + " expects shape " +
                                             describe(wanted[r].second) + ", file has " + name + " " +
                                             describe(shape));
      }
    }
    std::vector<T> values(static_cast<std::size_t>(shape_numel(shape)));
    if (scalar_bytes == 4) {
      for (auto& v : values) v = static_cast<T>(reader.get<float>());
    } else {
      for (auto& v : values) v = static_cast<T>(reader.get<double>());
    }
    Tensor<T> tensor(shape, std::move(values));
    tensor.set_requires_grad(true);
    store.records.emplace_back(std::move(name), tensor);
  }
  if (expected) {
    if (store.records.size() < wanted.size()) {
      fail(ErrorCode::kConfigMismatch, what + ": missing layer " + wanted[store.records.size()].first);
    }
    const UNetConfig& e = *expected;
    if (e.planes_per_group() != c.planes_per_group() || e.output_planes_per_group() != c.output_planes_per_group() ||
        e.views != c.views) {
      std::ostringstream msg;
      msg << what << ": weights were trained for D/G=" << c.planes_per_group()
          << ", S*D/G=" << c.output_planes_per_group() << ", V=" << c.views << " but the run needs D/G="
          << e.planes_per_group() << ", S*D/G=" << e.output_planes_per_group() << ", V=" << e.views;
      fail(ErrorCode::kConfigMismatch, msg.str());
    }
  }
  if (!reader.at_end()) fail(ErrorCode::kFormat, what + ": trailing bytes after last record");
  return store;
}

#define FMPI_INSTANTIATE(T)                                                                            \
  template struct WeightStore<T>;                                                                      \
  template WeightStore<T> init_weights<T>(const UNetConfig&, std::uint64_t);                           \
  template WeightStore<T> zero_weights<T>(const UNetConfig&);                                          \
  template NetHeadOutput<T> unet_forward<T>(const UNetConfig&, const WeightStore<T>&, const Tensor<T>&); \
  template std::vector<NetHeadOutput<T>> run_groups<T>(const UNetConfig&, const WeightStore<T>&,       \
                                                       const GroupedPsv<T>&, int);                     \
  template void save_weights<T>(const std::filesystem::path&, const WeightStore<T>&);                  \
  template WeightStore<T> load_weights<T>(const std::filesystem::path&, const UNetConfig*);

FMPI_INSTANTIATE(float)
FMPI_INSTANTIATE(double)
#undef FMPI_INSTANTIATE

}  // namespace fmpi
