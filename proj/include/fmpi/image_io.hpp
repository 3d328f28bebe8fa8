#pragma once

// Images are [C,H,W] float tensors with values nominally in [0,1].
// ".png" files are 8-bit gray/RGB(A); ".fimg" files are lossless:
// magic "FIMG", u32 C, H, W, then little-endian f32 values.

#include <filesystem>

#include "fmpi/tensor.hpp"

namespace fmpi {

Tensor<float> read_png(const std::filesystem::path& path);
/// Clamps to [0,1] and rounds to 8 bits. One or three channels.
void write_png(const std::filesystem::path& path, const Tensor<float>& image);

Tensor<float> read_fimg(const std::filesystem::path& path);
void write_fimg(const std::filesystem::path& path, const Tensor<float>& image);

/// Dispatches on the file extension.
Tensor<float> read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Tensor<float>& image);

}  // namespace fmpi
