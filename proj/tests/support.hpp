#pragma once

// Shared helpers for the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "fmpi/ops.hpp"
#include "fmpi/tensor.hpp"

namespace fmpi::test {

template <typename T = double>
Tensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>(shape, std::move(v));
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
  return m;
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

struct GradCheck {
  double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  std::size_t probes = 0;
};

/// Compares tape gradients of a scalar function with central differences.
/// At most `max_probes` entries per input are probed (all when 0).
inline GradCheck check_gradients(const std::vector<Tensor<double>>& inputs, const ScalarFn& fn,
                                 std::size_t max_probes = 0, double h = 1e-6, std::uint64_t seed = 7) {
  std::vector<Tensor<double>> leaves;
  for (const auto& x : inputs) {
    Tensor<double> leaf(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
    leaf.set_requires_grad(true);
    leaves.push_back(leaf);
  }
  std::vector<std::vector<double>> analytic;
  {
    GradTape<double> tape;
    typename GradTape<double>::Scope scope(tape);
    const Tensor<double> loss = fn(leaves);
    tape.backward(loss);
    for (const auto& l : leaves) {
      if (l.has_grad()) analytic.emplace_back(l.grad().begin(), l.grad().end());
      else analytic.emplace_back(static_cast<std::size_t>(l.numel()), 0.0);
    }
  }
  std::mt19937_64 rng(seed);
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  GradCheck out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::size_t n = static_cast<std::size_t>(inputs[i].numel());
    std::vector<std::size_t> idx(n);
    for (std::size_t k = 0; k < n; ++k) idx[k] = k;
    if (max_probes > 0 && n > max_probes) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_probes);
    }
    for (std::size_t k : idx) {
      auto eval = [&](double delta) {
        std::vector<Tensor<double>> args(inputs.begin(), inputs.end());
        std::vector<double> v(inputs[i].data().begin(), inputs[i].data().end());
        v[k] += delta;
        args[i] = Tensor<double>(inputs[i].shape(), std::move(v));
        return fn(args).item();
      };
      const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
      const double a = analytic[i][k];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      ++out.probes;
    }
  }
  const double denom = std::sqrt(std::max({a2, n2, 1e-300}));
  out.rel_error = std::sqrt(diff2) / denom;
  return out;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("fmpi_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace fmpi::test
