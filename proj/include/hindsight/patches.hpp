// SPDX-License-Identifier: Apache-2.0
//
// Multi-level patch generation.
//
// Coordinates: (0, 0) is the image centre, x grows rightward and y downward,
// and the longer image axis spans [-1, 1]. Metadata uses the nominal
// quadtree geometry (exact halves of the parent), so a level-l patch always
// covers 4^(1-l) of the image regardless of pixel rounding; the pixel
// rectangle used for cropping gives the ceiling half to the left/top child.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "hindsight/image.hpp"

namespace hindsight {

struct PatchMeta {
  double x = 0.0;
  double y = 0.0;
  double area_coverage = 1.0;
  int level = 1;
};

struct PatchSet {
  std::vector<Tensor<float>> patches;  // X', each [3 x H x H]
  std::vector<PatchMeta> meta;         // M, same index as patches
  std::vector<PixelRect> regions;      // source pixel rectangle per patch
  std::size_t rescale_dim = 0;
  /// Dynamic grids only: divisible leaves ran out before D divisions.
  bool exhausted = false;
  std::size_t divisions = 0;

  std::size_t size() const { return patches.size(); }
  /// Patch count per level, index 0 = level 1.
  std::vector<std::size_t> level_counts() const;
};

enum class GridMode { Static, Dynamic };

struct GridConfig {
  GridMode mode = GridMode::Static;
  int k = 3;
  int D = 0;
  std::size_t H = 16;

  void validate() const;
};

GridMode parse_grid_mode(const std::string& s);

/// 1 + 2 log4(area_ratio) / k. Throws ConfigError for ratio <= 0 or k < 1.
double area_coverage(double area_ratio, int k);

/// Mean over pixels and channels of the squared deviation from the
/// region's per-channel mean colour.
double info_heuristic(const Tensor<float>& pixels);
double info_heuristic(const ImageBuffer& image, const PixelRect& region);

/// Bilinear resize of [3 x h x w] to [3 x H x H], align-corners convention.
Tensor<float> bilinear_resize(const Tensor<float>& pixels, std::size_t H);

/// Static-grid cell geometry over the centred largest square of an image.
class StaticGrid {
 public:
  StaticGrid(std::size_t height, std::size_t width, int k);

  int levels() const { return k_; }
  std::size_t side() const { return side_; }
  static std::size_t cells_per_side(int level) { return std::size_t{1} << (level - 1); }
  PixelRect cell(int level, std::size_t row, std::size_t col) const;
  PatchMeta meta(int level, std::size_t row, std::size_t col) const;
  /// Index of (level, row, col) in a static PatchSet.
  static std::size_t patch_index(int level, std::size_t row, std::size_t col);
  static std::size_t patch_count(int k);

 private:
  int k_;
  std::size_t side_, ox_, oy_;
};

/// Levels 1..k of 4^(level-1) cells, level-major then raster order.
PatchSet static_grid(const ImageBuffer& image, int k, std::size_t H);

struct QuadtreeNode {
  PixelRect region;
  int level = 1;
  int parent = -1;
  std::array<int, 4> children{-1, -1, -1, -1};  // TL, TR, BL, BR
  double info_score = 0.0;
  double center_x = 0.0, center_y = 0.0;  // nominal centre in pixels
  double nominal_w = 0.0, nominal_h = 0.0;

  bool leaf() const { return children[0] < 0; }
};

struct Quadtree {
  std::vector<QuadtreeNode> nodes;  // creation order; nodes[0] is the root
  std::vector<int> division_order;  // node ids in the order they were divided
  bool exhausted = false;
};

/// Greedy quadtree: D times divide the leaf with the highest info_heuristic
/// among leaves with level < k (ties: earliest created).
Quadtree build_quadtree(const ImageBuffer& image, int k, int D);

/// Every quadtree node (internal and leaf), ascending level then creation order.
PatchSet dynamic_grid(const ImageBuffer& image, int k, int D, std::size_t H);

PatchSet generate_patches(const ImageBuffer& image, const GridConfig& config);

}  // namespace hindsight
