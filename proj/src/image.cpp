// SPDX-License-Identifier: Apache-2.0
#include "hindsight/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "hindsight/rng.hpp"

namespace hindsight {

ImageBuffer::ImageBuffer(std::size_t height, std::size_t width, float fill)
    : height_(height), width_(width), pixels_(Shape{3, height, width}, fill) {
  if (height == 0 || width == 0) throw DimensionError("image extents must be positive");
}

ImageBuffer::ImageBuffer(Tensor<float> pixels) {
  if (pixels.rank() != 3 || pixels.dim(0) != 3 || pixels.dim(1) == 0 || pixels.dim(2) == 0) {
    throw DimensionError("image must be [3 x h x w], got " + shape_str(pixels.shape()));
  }
  for (float v : pixels.vec()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DimensionError("image values must lie in [0, 1]");
  }
  height_ = pixels.dim(1);
  width_ = pixels.dim(2);
  pixels_ = std::move(pixels);
}

Tensor<float> ImageBuffer::crop(const PixelRect& r) const {
  if (r.x1 > width_ || r.y1 > height_ || r.x0 >= r.x1 || r.y0 >= r.y1) {
    throw DimensionError("crop rectangle outside image");
  }
  Tensor<float> out(Shape{3, r.height(), r.width()});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < r.height(); ++y)
      std::copy_n(pixels_.data() + (c * height_ + r.y0 + y) * width_ + r.x0, r.width(),
                  out.data() + (c * r.height() + y) * r.width());
  return out;
}

ImageBuffer read_png(const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot read PNG '" + path.string() + "': " + img.message);
  }
  img.format = PNG_FORMAT_RGBA;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw IoError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  const std::size_t h = img.height, w = img.width;
  ImageBuffer out(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(c, y, x) = static_cast<float>(buf[(y * w + x) * 4 + c]) / 255.0f;
  return out;
}

void write_png(const std::filesystem::path& path, const ImageBuffer& image) {
  const std::size_t h = image.height(), w = image.width();
  std::vector<png_byte> buf(h * w * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        buf[(y * w + x) * 3 + c] = static_cast<png_byte>(std::lround(v * 255.0f));
      }
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw IoError("cannot write PNG '" + path.string() + "': " + img.message);
  }
}

}  // namespace hindsight

namespace hindsight {

ImageBuffer synthetic_image(std::size_t side, std::uint64_t seed) {
  Rng rng(seed);
  ImageBuffer img(side, side);
  float from[3], to[3];
  for (float& c : from) c = static_cast<float>(rng.uniform());
  for (float& c : to) c = static_cast<float>(rng.uniform());
  const double angle = rng.uniform(0.0, 6.283185307179586);
  const double dx = std::cos(angle), dy = std::sin(angle);
  const double n = static_cast<double>(side > 1 ? side - 1 : 1);
  for (std::size_t y = 0; y < side; ++y) {
    for (std::size_t x = 0; x < side; ++x) {
      const double t = std::clamp(0.5 + 0.5 * ((x / n - 0.5) * dx + (y / n - 0.5) * dy) * 1.41421356, 0.0, 1.0);
      for (std::size_t c = 0; c < 3; ++c) {
        img.at(c, y, x) = static_cast<float>(from[c] + (to[c] - from[c]) * t);
      }
    }
  }
  const std::size_t shapes = 2 + rng.uniform_int(3);
  for (std::size_t s = 0; s < shapes; ++s) {
    float colour[3];
    for (float& c : colour) c = static_cast<float>(rng.uniform());
    const bool disc = rng.uniform() < 0.5;
    const double cx = rng.uniform(0.0, static_cast<double>(side)), cy = rng.uniform(0.0, static_cast<double>(side));
    const double r = rng.uniform(0.1, 0.3) * static_cast<double>(side);
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const double ox = x + 0.5 - cx, oy = y + 0.5 - cy;
        const bool inside = disc ? ox * ox + oy * oy <= r * r : std::abs(ox) <= r && std::abs(oy) <= 0.6 * r;
        if (!inside) continue;
        for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = colour[c];
      }
    }
  }
  return img;
}

}  // namespace hindsight
