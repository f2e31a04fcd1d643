// SPDX-License-Identifier: Apache-2.0
#include "hindsight/patches.hpp"

#include <algorithm>
#include <cmath>
#include <queue>

namespace hindsight {

std::vector<std::size_t> PatchSet::level_counts() const {
  std::vector<std::size_t> counts;
  for (const auto& m : meta) {
    if (counts.size() < static_cast<std::size_t>(m.level)) counts.resize(m.level, 0);
    ++counts[m.level - 1];
  }
  return counts;
}

void GridConfig::validate() const {
  if (k < 1) throw ConfigError("grid: k must be >= 1");
  if (D < 0) throw ConfigError("grid: D must be >= 0");
  if (H < 8) throw ConfigError("grid: H must be >= 8");
}

GridMode parse_grid_mode(const std::string& s) {
  if (s == "static") return GridMode::Static;
  if (s == "dynamic") return GridMode::Dynamic;
  throw ConfigError("unknown grid mode '" + s + "' (expected static|dynamic)");
}

double area_coverage(double area_ratio, int k) {
  if (!(area_ratio > 0.0)) throw ConfigError("area_coverage: area ratio must be > 0");
  if (k < 1) throw ConfigError("area_coverage: k must be >= 1");
  // log4(r) = log2(r) / 2, exact for powers of two
  return 1.0 + (std::log2(area_ratio) / 2.0) * 2.0 / static_cast<double>(k);
}

double info_heuristic(const Tensor<float>& pixels) {
  const std::size_t C = pixels.dim(0);
  const std::size_t n = pixels.size() / C;
  if (n == 0) throw DimensionError("info_heuristic: empty region");
  double total = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    const float* p = pixels.data() + c * n;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += p[i];
    mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) total += (p[i] - mean) * (p[i] - mean);
  }
  return total / static_cast<double>(C * n);
}

double info_heuristic(const ImageBuffer& image, const PixelRect& region) {
  return info_heuristic(image.crop(region));
}

Tensor<float> bilinear_resize(const Tensor<float>& pixels, std::size_t H) {
  if (pixels.rank() != 3 || pixels.dim(1) == 0 || pixels.dim(2) == 0 || H == 0) {
    throw DimensionError("bilinear_resize: bad input " + shape_str(pixels.shape()));
  }
  const std::size_t C = pixels.dim(0), h = pixels.dim(1), w = pixels.dim(2);
  auto source = [H](std::size_t i, std::size_t extent) {
    return H > 1 ? static_cast<double>(i) * static_cast<double>(extent - 1) / static_cast<double>(H - 1) : 0.0;
  };
  Tensor<float> out(Shape{C, H, H});
  for (std::size_t i = 0; i < H; ++i) {
    const double sy = source(i, h);
    const std::size_t y0 = static_cast<std::size_t>(std::floor(sy));
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double wy = sy - static_cast<double>(y0);
    for (std::size_t j = 0; j < H; ++j) {
      const double sx = source(j, w);
      const std::size_t x0 = static_cast<std::size_t>(std::floor(sx));
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double wx = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < C; ++c) {
        const float* p = pixels.data() + c * h * w;
        const double top = (1.0 - wx) * p[y0 * w + x0] + wx * p[y0 * w + x1];
        const double bottom = (1.0 - wx) * p[y1 * w + x0] + wx * p[y1 * w + x1];
        const double v = (1.0 - wy) * top + wy * bottom;
        out[(c * H + i) * H + j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

StaticGrid::StaticGrid(std::size_t height, std::size_t width, int k) : k_(k) {
  if (k < 1) throw ConfigError("static grid: k must be >= 1");
  if (k > 31) throw ConfigError("static grid: k too large");
  side_ = std::min(height, width);
  ox_ = (width - side_) / 2;
  oy_ = (height - side_) / 2;
  if (cells_per_side(k) > side_) {
    throw ConfigError("static grid: level " + std::to_string(k) + " needs " + std::to_string(cells_per_side(k)) +
                      " cells per side but the image square is only " + std::to_string(side_) + " px");
  }
}

PixelRect StaticGrid::cell(int level, std::size_t row, std::size_t col) const {
  const std::size_t n = cells_per_side(level);
  return PixelRect{ox_ + col * side_ / n, oy_ + row * side_ / n, ox_ + (col + 1) * side_ / n,
                   oy_ + (row + 1) * side_ / n};
}

PatchMeta StaticGrid::meta(int level, std::size_t row, std::size_t col) const {
  const double n = static_cast<double>(cells_per_side(level));
  PatchMeta m;
  m.x = -1.0 + (2.0 * static_cast<double>(col) + 1.0) / n;
  m.y = -1.0 + (2.0 * static_cast<double>(row) + 1.0) / n;
  m.area_coverage = area_coverage(1.0 / (n * n), k_);
  m.level = level;
  return m;
}

std::size_t StaticGrid::patch_count(int k) {
  std::size_t p = 0;
  for (int l = 1; l <= k; ++l) p += cells_per_side(l) * cells_per_side(l);
  return p;
}

std::size_t StaticGrid::patch_index(int level, std::size_t row, std::size_t col) {
  return patch_count(level - 1) + row * cells_per_side(level) + col;
}

PatchSet static_grid(const ImageBuffer& image, int k, std::size_t H) {
  StaticGrid grid(image.height(), image.width(), k);
  PatchSet set;
  set.rescale_dim = H;
  for (int level = 1; level <= k; ++level) {
    const std::size_t n = StaticGrid::cells_per_side(level);
    for (std::size_t row = 0; row < n; ++row) {
      for (std::size_t col = 0; col < n; ++col) {
        const PixelRect r = grid.cell(level, row, col);
        set.patches.push_back(bilinear_resize(image.crop(r), H));
        set.meta.push_back(grid.meta(level, row, col));
        set.regions.push_back(r);
      }
    }
  }
  return set;
}

namespace {

bool divisible(const QuadtreeNode& n, int k) {
  return n.level < k && n.region.width() >= 2 && n.region.height() >= 2;
}

}  // namespace

Quadtree build_quadtree(const ImageBuffer& image, int k, int D) {
  if (k < 1) throw ConfigError("dynamic grid: k must be >= 1");
  if (D < 0) throw ConfigError("dynamic grid: D must be >= 0");
  Quadtree tree;
  QuadtreeNode root;
  root.region = PixelRect{0, 0, image.width(), image.height()};
  root.nominal_w = static_cast<double>(image.width());
  root.nominal_h = static_cast<double>(image.height());
  root.center_x = root.nominal_w / 2.0;
  root.center_y = root.nominal_h / 2.0;
  root.info_score = info_heuristic(image, root.region);
  tree.nodes.push_back(root);

  // Highest score first; equal scores pop the earliest-created node.
  auto lower_priority = [&tree](int a, int b) {
    const double sa = tree.nodes[a].info_score, sb = tree.nodes[b].info_score;
    if (sa != sb) return sa < sb;
    return a > b;
  };
  std::priority_queue<int, std::vector<int>, decltype(lower_priority)> frontier(lower_priority);
  if (divisible(tree.nodes[0], k)) frontier.push(0);

  for (int step = 0; step < D; ++step) {
    if (frontier.empty()) {
      tree.exhausted = true;
      break;
    }
    const int id = frontier.top();
    frontier.pop();
    tree.division_order.push_back(id);
    const QuadtreeNode parent = tree.nodes[id];
    const PixelRect& r = parent.region;
    const std::size_t xm = r.x0 + (r.width() + 1) / 2;
    const std::size_t ym = r.y0 + (r.height() + 1) / 2;
    const PixelRect quads[4] = {{r.x0, r.y0, xm, ym}, {xm, r.y0, r.x1, ym}, {r.x0, ym, xm, r.y1}, {xm, ym, r.x1, r.y1}};
    const double dx[4] = {-1, 1, -1, 1}, dy[4] = {-1, -1, 1, 1};
    for (int q = 0; q < 4; ++q) {
      QuadtreeNode child;
      child.region = quads[q];
      child.level = parent.level + 1;
      child.parent = id;
      child.nominal_w = parent.nominal_w / 2.0;
      child.nominal_h = parent.nominal_h / 2.0;
      child.center_x = parent.center_x + dx[q] * child.nominal_w / 2.0;
      child.center_y = parent.center_y + dy[q] * child.nominal_h / 2.0;
      child.info_score = info_heuristic(image, child.region);
      const int cid = static_cast<int>(tree.nodes.size());
      tree.nodes[id].children[q] = cid;
      tree.nodes.push_back(child);
      if (divisible(tree.nodes[cid], k)) frontier.push(cid);
    }
  }
  return tree;
}

PatchSet dynamic_grid(const ImageBuffer& image, int k, int D, std::size_t H) {
  const Quadtree tree = build_quadtree(image, k, D);
  std::vector<int> order(tree.nodes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(),
                   [&tree](int a, int b) { return tree.nodes[a].level < tree.nodes[b].level; });

  const double W = static_cast<double>(image.width()), Hh = static_cast<double>(image.height());
  const double half_long = std::max(W, Hh) / 2.0;
  PatchSet set;
  set.rescale_dim = H;
  set.exhausted = tree.exhausted;
  set.divisions = tree.division_order.size();
  for (int id : order) {
    const QuadtreeNode& n = tree.nodes[id];
    PatchMeta m;
    m.x = (n.center_x - W / 2.0) / half_long;
    m.y = (n.center_y - Hh / 2.0) / half_long;
    m.area_coverage = area_coverage(std::ldexp(1.0, -2 * (n.level - 1)), k);
    m.level = n.level;
    set.patches.push_back(bilinear_resize(image.crop(n.region), H));
    set.meta.push_back(m);
    set.regions.push_back(n.region);
  }
  return set;
}

PatchSet generate_patches(const ImageBuffer& image, const GridConfig& config) {
  config.validate();
  return config.mode == GridMode::Static ? static_grid(image, config.k, config.H)
                                         : dynamic_grid(image, config.k, config.D, config.H);
}

}  // namespace hindsight
