// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>

#include "hindsight/tensor.hpp"

namespace hindsight {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct PixelRect {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  std::size_t width() const { return x1 - x0; }
  std::size_t height() const { return y1 - y0; }
  std::size_t area() const { return width() * height(); }
  bool contains(const PixelRect& o) const { return o.x0 >= x0 && o.y0 >= y0 && o.x1 <= x1 && o.y1 <= y1; }
  friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

/// RGB image, channel-planar [3 x height x width], values in [0, 1].
class ImageBuffer {
 public:
  ImageBuffer() = default;
  ImageBuffer(std::size_t height, std::size_t width, float fill = 0.0f);
  /// Validates shape [3 x h x w] and the [0, 1] value range.
  explicit ImageBuffer(Tensor<float> pixels);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  bool square() const { return height_ == width_; }

  float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels_[(c * height_ + y) * width_ + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return pixels_[(c * height_ + y) * width_ + x]; }
  const Tensor<float>& pixels() const { return pixels_; }

  /// Copy of the region as a [3 x h x w] tensor.
  Tensor<float> crop(const PixelRect& r) const;

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  std::size_t height_ = 0, width_ = 0;
  Tensor<float> pixels_;
};

/// Reads an 8-bit PNG; any alpha channel is dropped and values scaled by 1/255.
ImageBuffer read_png(const std::filesystem::path& path);
/// Writes 8-bit RGB, rounding v * 255 to nearest.
void write_png(const std::filesystem::path& path, const ImageBuffer& image);

/// Square test image determined by `seed`: a two-colour linear gradient
/// with a few solid rectangles and discs on top.
ImageBuffer synthetic_image(std::size_t side, std::uint64_t seed);

}  // namespace hindsight
