#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "fmpi/tensor.hpp"

namespace fmpi {

// Elementwise ops require identical shapes; there is no broadcasting.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T c);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& x, T c);
template <typename T> Tensor<T> neg(const Tensor<T>& x);
template <typename T> Tensor<T> abs(const Tensor<T>& x);
template <typename T> Tensor<T> square(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
/// max(x, 0); the subgradient at 0 is 0.
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<Index>& axes);
template <typename T> Tensor<T> concat(std::span<const Tensor<T>> parts, Index axis);
template <typename T> Tensor<T> slice(const Tensor<T>& x, Index axis, Index start, Index length);

/// 2-D cross-correlation of a [C_in,H,W] input with [C_out,C_in,k,k] weights.
/// Zero padding, square kernels, any stride >= 1.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 int padding);

/// Multiply-accumulate count of all conv2d forward calls since the last reset.
std::uint64_t conv_mac_count();
void reset_conv_mac_count();

enum class UpsampleMode { kBilinear, kNearest };

UpsampleMode parse_upsample_mode(std::string_view name);
std::string_view upsample_mode_name(UpsampleMode mode);

/// Doubles both spatial extents of a [C,H,W] tensor. Bilinear uses
/// half-pixel centers with edge clamping.
template <typename T>
Tensor<T> upsample2x(const Tensor<T>& x, UpsampleMode mode);

/// Numerically stable softmax along `axis`. NaN input is a numeric error.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, Index axis);

/// Applies `taps` along rows then columns of every channel of a [C,H,W]
/// tensor, keeping only fully covered positions.
template <typename T>
Tensor<T> separable_filter_valid(const Tensor<T>& x, std::span<const T> taps);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

}  // namespace fmpi
