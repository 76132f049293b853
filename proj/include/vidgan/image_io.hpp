// SPDX-License-Identifier: Apache-2.0
//
// 8-bit PNG frames and frame grids.

#pragma once

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "vidgan/tensor.hpp"

namespace vidgan {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Interleaved 8-bit image, 1 (gray) or 3 (RGB) channels.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int y, int x, int c) {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

// Decodes any PNG into 8-bit gray or RGB (alpha is dropped, palettes expanded).
inline Image read_png(const std::filesystem::path& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw ImageError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8)) {
    throw ImageError(path.string() + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw ImageError("libpng initialisation failed");
  }
  Image img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageError("failed to decode " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = static_cast<int>(png_get_channels(png, info));
  if (img.channels != 1 && img.channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageError(path.string() + ": unsupported channel count " + std::to_string(img.channels));
  }
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  rows.resize(static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) {
    rows[static_cast<std::size_t>(y)] = img.pixels.data() + static_cast<std::size_t>(y) * img.width * img.channels;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline void write_png(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw ImageError("write_png: channels must be 1 or 3");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw ImageError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw ImageError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageError("failed to encode " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() +
                                             static_cast<std::size_t>(y) * img.width * img.channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// [-1, 1] -> [0, 255], rounded and clamped.
inline std::uint8_t to_byte(double v) {
  const double b = std::round((v + 1.0) * 127.5);
  return static_cast<std::uint8_t>(b < 0 ? 0 : (b > 255 ? 255 : b));
}

// Frame t of clip n of an (N, C, T, H, W) video.
template <class T>
Image frame_image(const Tensor<T>& video, Index n, Index t) {
  require_rank(video.shape(), 5, "frame_image");
  Image img;
  img.channels = static_cast<int>(video.dim(1));
  img.height = static_cast<int>(video.dim(3));
  img.width = static_cast<int>(video.dim(4));
  if (img.channels != 1 && img.channels != 3) throw ImageError("frame_image: channels must be 1 or 3");
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c)
        img.at(y, x, c) = to_byte(static_cast<double>(video.at(n, c, t, y, x)));
  return img;
}

// Rows are clips, columns are frames 0, stride, 2*stride, ...
template <class T>
Image frame_grid(const Tensor<T>& video, int stride, int padding = 1) {
  require_rank(video.shape(), 5, "frame_grid");
  if (stride < 1) throw std::invalid_argument("frame_grid: stride must be >= 1");
  const int n = static_cast<int>(video.dim(0)), frames = static_cast<int>(video.dim(2));
  const int h = static_cast<int>(video.dim(3)), w = static_cast<int>(video.dim(4));
  const int cols = (frames + stride - 1) / stride;
  Image grid;
  grid.channels = static_cast<int>(video.dim(1));
  grid.width = cols * w + (cols + 1) * padding;
  grid.height = n * h + (n + 1) * padding;
  grid.pixels.assign(static_cast<std::size_t>(grid.width) * grid.height * grid.channels, 255);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < cols; ++k) {
      const Image f = frame_image(video, i, static_cast<Index>(k) * stride);
      const int oy = padding + i * (h + padding), ox = padding + k * (w + padding);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int c = 0; c < grid.channels; ++c) grid.at(oy + y, ox + x, c) = f.at(y, x, c);
    }
  return grid;
}

}  // namespace vidgan
