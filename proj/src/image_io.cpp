#include "fmpi/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "binary_io.hpp"

namespace fmpi {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

}  // namespace

Tensor<float> read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.string().c_str(), "rb"));
  if (!file) fail(ErrorCode::kIo, "cannot read " + path.string());
  png_byte header[8];
  if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8) != 0) {
    fail(ErrorCode::kFormat, path.string() + ": not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::kIo, "libpng initialisation failed");
  }
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0, height = 0;
  int channels = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::kFormat, path.string() + ": corrupt PNG data");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  pixels.resize(stride * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const Index c = channels;
  const Index h = height;
  const Index w = width;
  std::vector<float> values(static_cast<std::size_t>(c * h * w));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index ch = 0; ch < c; ++ch)
        values[(ch * h + y) * w + x] = pixels[y * stride + x * c + ch] / 255.0f;
  return Tensor<float>(Shape{c, h, w}, std::move(values));
}

void write_png(const std::filesystem::path& path, const Tensor<float>& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    fail(ErrorCode::kDimension, "write_png: expected [1|3,H,W], got " + shape_str(image.shape()));
  }
  const Index c = image.dim(0);
  const Index h = image.dim(1);
  const Index w = image.dim(2);
  auto src = image.data();
  std::vector<png_byte> pixels(static_cast<std::size_t>(c * h * w));
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      for (Index ch = 0; ch < c; ++ch) {
        const float v = std::clamp(src[(ch * h + y) * w + x], 0.0f, 1.0f);
        pixels[(y * w + x) * c + ch] = static_cast<png_byte>(std::lround(v * 255.0f));
      }

  FilePtr file(std::fopen(path.string().c_str(), "wb"));
  if (!file) fail(ErrorCode::kIo, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::kIo, "libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::kIo, "failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (Index y = 0; y < h; ++y) png_write_row(png, pixels.data() + y * w * c);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor<float> read_fimg(const std::filesystem::path& path) {
  auto in = io::open_in(path);
  io::Reader reader(in, path.string());
  reader.expect_magic("FIMG");
  const Index c = reader.get<std::uint32_t>();
  const Index h = reader.get<std::uint32_t>();
  const Index w = reader.get<std::uint32_t>();
  if (c * h * w > (Index{1} << 32)) fail(ErrorCode::kFormat, path.string() + ": implausible image size");
  std::vector<float> values(static_cast<std::size_t>(c * h * w));
  for (auto& v : values) v = reader.get<float>();
  if (!reader.at_end()) fail(ErrorCode::kFormat, path.string() + ": trailing bytes");
  return Tensor<float>(Shape{c, h, w}, std::move(values));
}

void write_fimg(const std::filesystem::path& path, const Tensor<float>& image) {
  if (image.rank() != 3) fail(ErrorCode::kDimension, "write_fimg: expected [C,H,W], got " + shape_str(image.shape()));
  auto out = io::open_out(path);
  out.write("FIMG", 4);
  for (Index d : image.shape()) io::put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (float v : image.data()) io::put<float>(out, v);
  if (!out) fail(ErrorCode::kIo, "failed writing " + path.string());
}

Tensor<float> read_image(const std::filesystem::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".fimg") return read_fimg(path);
  fail(ErrorCode::kFormat, path.string() + ": unsupported image extension '" + ext + "'");
}

void write_image(const std::filesystem::path& path, const Tensor<float>& image) {
  const std::string ext = lower_extension(path);
  if (ext == ".png") return write_png(path, image);
  if (ext == ".fimg") return write_fimg(path, image);
  fail(ErrorCode::kFormat, path.string() + ": unsupported image extension '" + ext + "'");
}

}  // namespace fmpi
