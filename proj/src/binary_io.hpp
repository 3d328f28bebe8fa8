#pragma once

// Little-endian primitives for the FMPW / FMPI / FIMG containers.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>

#include "fmpi/error.hpp"
#include "fmpi/geometry.hpp"

namespace fmpi::io {

template <typename V>
void put(std::ostream& out, V value) {
  std::array<char, sizeof(V)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(V));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(bytes.data(), sizeof(V));
}

class Reader {
 public:
  Reader(std::istream& in, std::string what) : in_(in), what_(std::move(what)) {}

  template <typename V>
  V get() {
    std::array<char, sizeof(V)> bytes;
    in_.read(bytes.data(), sizeof(V));
    if (in_.gcount() != static_cast<std::streamsize>(sizeof(V))) {
      fail(ErrorCode::kFormat, what_ + ": truncated file");
    }
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    V value;
    std::memcpy(&value, bytes.data(), sizeof(V));
    return value;
  }

  std::string get_bytes(std::size_t n) {
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n)) fail(ErrorCode::kFormat, what_ + ": truncated file");
    return s;
  }

  void expect_magic(std::string_view magic) {
    if (get_bytes(magic.size()) != magic) {
      fail(ErrorCode::kFormat, what_ + ": bad magic, expected '" + std::string(magic) + "'");
    }
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

 private:
  std::istream& in_;
  std::string what_;
};

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  return out;
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read " + path.string());
  return in;
}

inline void put_camera(std::ostream& out, const CameraModel& cam) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cam.width));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(cam.height));
  put<double>(out, cam.intrinsics.fx);
  put<double>(out, cam.intrinsics.fy);
  put<double>(out, cam.intrinsics.cx);
  put<double>(out, cam.intrinsics.cy);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) put<double>(out, cam.rotation(r, c));
  for (int i = 0; i < 3; ++i) put<double>(out, cam.translation(i));
}

inline CameraModel get_camera(Reader& in) {
  CameraModel cam;
  cam.width = static_cast<int>(in.get<std::uint32_t>());
  cam.height = static_cast<int>(in.get<std::uint32_t>());
  cam.intrinsics.fx = in.get<double>();
  cam.intrinsics.fy = in.get<double>();
  cam.intrinsics.cx = in.get<double>();
  cam.intrinsics.cy = in.get<double>();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) cam.rotation(r, c) = in.get<double>();
  for (int i = 0; i < 3; ++i) cam.translation(i) = in.get<double>();
  return cam;
}

}  // namespace fmpi::io
