// Copyright 2026 The Histograde Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "histograde/raster.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "histograde/error.hpp"

namespace histograde {

Rect intersect(const Rect& a, const Rect& b) {
  const std::int64_t x0 = std::max(a.x, b.x);
  const std::int64_t y0 = std::max(a.y, b.y);
  const std::int64_t x1 = std::min(a.right(), b.right());
  const std::int64_t y1 = std::min(a.bottom(), b.bottom());
  if (x1 <= x0 || y1 <= y0) return {x0, y0, 0, 0};
  return {x0, y0, x1 - x0, y1 - y0};
}

RasterImage::RasterImage(int width, int height, Rgb fill)
    : width_(width), height_(height),
      data_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3) {
  require(width >= 0 && height >= 0, ErrorCode::kShape, "negative raster size");
  for (std::size_t i = 0; i < data_.size(); i += 3) {
    data_[i] = fill.r;
    data_[i + 1] = fill.g;
    data_[i + 2] = fill.b;
  }
}

RasterImage RasterImage::crop(const Rect& rect) const {
  require(rect.x >= 0 && rect.y >= 0 && rect.right() <= width_ && rect.bottom() <= height_,
          ErrorCode::kBounds, "crop rect outside raster");
  RasterImage out(static_cast<int>(rect.w), static_cast<int>(rect.h));
  for (std::int64_t y = 0; y < rect.h; ++y) {
    std::copy_n(row(static_cast<int>(rect.y + y)) + rect.x * 3, rect.w * 3,
                out.row(static_cast<int>(y)));
  }
  return out;
}

void RasterImage::paste(const RasterImage& src, int x, int y) {
  const Rect dst = intersect({x, y, src.width(), src.height()}, {0, 0, width_, height_});
  if (dst.empty()) return;
  for (std::int64_t yy = dst.y; yy < dst.bottom(); ++yy) {
    const std::uint8_t* from = src.row(static_cast<int>(yy - y)) + (dst.x - x) * 3;
    std::copy_n(from, dst.w * 3, row(static_cast<int>(yy)) + dst.x * 3);
  }
}

RasterImage downsample_half(const RasterImage& src) {
  const int w = (src.width() + 1) / 2;
  const int h = (src.height() + 1) / 2;
  RasterImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int sum[3] = {0, 0, 0};
      int n = 0;
      for (int dy = 0; dy < 2; ++dy) {
        const int sy = 2 * y + dy;
        if (sy >= src.height()) continue;
        for (int dx = 0; dx < 2; ++dx) {
          const int sx = 2 * x + dx;
          if (sx >= src.width()) continue;
          const Rgb c = src.at(sx, sy);
          sum[0] += c.r;
          sum[1] += c.g;
          sum[2] += c.b;
          ++n;
        }
      }
      out.set(x, y,
              {static_cast<std::uint8_t>((sum[0] + n / 2) / n),
               static_cast<std::uint8_t>((sum[1] + n / 2) / n),
               static_cast<std::uint8_t>((sum[2] + n / 2) / n)});
    }
  }
  return out;
}

RasterImage resample_bilinear(const RasterImage& src, double factor, int out_width,
                              int out_height) {
  RasterImage out(out_width, out_height);
  if (src.empty()) return out;
  const int max_x = src.width() - 1;
  const int max_y = src.height() - 1;
  for (int y = 0; y < out_height; ++y) {
    const double sy = std::clamp((y + 0.5) * factor - 0.5, 0.0, static_cast<double>(max_y));
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, max_y);
    const double fy = sy - y0;
    for (int x = 0; x < out_width; ++x) {
      const double sx =
          std::clamp((x + 0.5) * factor - 0.5, 0.0, static_cast<double>(max_x));
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, max_x);
      const double fx = sx - x0;
      const std::uint8_t* a = src.row(y0) + x0 * 3;
      const std::uint8_t* b = src.row(y0) + x1 * 3;
      const std::uint8_t* c = src.row(y1) + x0 * 3;
      const std::uint8_t* d = src.row(y1) + x1 * 3;
      std::uint8_t* o = out.row(y) + x * 3;
      for (int k = 0; k < 3; ++k) {
        const double top = a[k] + (b[k] - a[k]) * fx;
        const double bottom = c[k] + (d[k] - c[k]) * fx;
        o[k] = static_cast<std::uint8_t>(std::lround(top + (bottom - top) * fy));
      }
    }
  }
  return out;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

RasterImage read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) fail(ErrorCode::kCorruption, "missing image file: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::kCorruption, "unreadable PNG: " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  RasterImage image(width, height);
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) rows[y] = image.row(y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

void write_png(const RasterImage& image, const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) fail(ErrorCode::kIo, "cannot open for writing: " + path.string());

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::kIo, "PNG encode failed: " + path.string());
  }
  png_init_io(png, file.get());
  png_set_compression_level(png, 1);
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width()),
               static_cast<png_uint_32>(image.height()), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height(); ++y) {
    png_write_row(png, const_cast<png_bytep>(image.row(y)));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) fail(ErrorCode::kIo, "write failed: " + path.string());
}

}  // namespace histograde
