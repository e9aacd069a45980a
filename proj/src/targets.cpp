#include "bevtrack/targets.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <tuple>

#include "bevtrack/error.hpp"

namespace bevtrack {

int TargetMaps::num_objects() const {
  int n = 0;
  for (auto v : center_mask.data()) n += v != 0;
  return n;
}

int gaussian_radius(double half_width, double half_height, int scale, double min_overlap) {
  if (!(half_width > 0.0) || !(half_height > 0.0)) throw DomainError("half extents must be positive");
  const double w = 2.0 * half_width / scale;
  const double h = 2.0 * half_height / scale;
  const double o = min_overlap;
  const double s = w + h;

  // Both corners shifted by r in the same direction.
  const double shifted = 0.5 * (s - std::sqrt(s * s - 4.0 * w * h * (1.0 - o) / (1.0 + o)));
  // Both corners moved inward.
  const double shrunk = (2.0 * s - std::sqrt(4.0 * s * s - 16.0 * (1.0 - o) * w * h)) / 8.0;
  // Both corners moved outward.
  const double grown = (-2.0 * o * s + std::sqrt(4.0 * o * o * s * s + 16.0 * o * (1.0 - o) * w * h)) / (8.0 * o);

  const double r = std::min({shifted, shrunk, grown});
  return std::max(1, static_cast<int>(std::floor(r)));
}

void splat_gaussian(GridD& grid, int channel, int row, int col, int radius, double peak) {
  const double sigma = radius / 3.0;
  const double denom = 2.0 * sigma * sigma;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      const int r = row + dy;
      const int c = col + dx;
      if (!grid.contains(r, c)) continue;
      const double g = peak * std::exp(-(dx * dx + dy * dy) / denom);
      double& cell = grid(channel, r, c);
      cell = std::max(cell, g);
    }
}

namespace {

struct CellRange {
  int r0, r1, c0, c1;  // inclusive
};

CellRange box_cells(const BoxAnnotation2D& box, int scale, int rows, int cols) {
  auto cell = [scale](double v) { return static_cast<int>(std::floor(v / scale)); };
  // Right/bottom edges are exclusive in pixel space.
  const double eps = 1e-9;
  return {std::clamp(cell(box.y1), 0, rows - 1), std::clamp(cell(box.y2 - eps), 0, rows - 1),
          std::clamp(cell(box.x1), 0, cols - 1), std::clamp(cell(box.x2 - eps), 0, cols - 1)};
}

}  // namespace

std::optional<double> object_depth(const SparseDepthMap& depth, const BoxAnnotation2D& box) {
  const int scale = depth.scale;
  const int cr = static_cast<int>(std::floor(box.center_v() / scale));
  const int cc = static_cast<int>(std::floor(box.center_u() / scale));
  if (depth.values.contains(cr, cc) && depth.is_valid(cr, cc)) return depth.depth(cr, cc);

  const auto range = box_cells(box, scale, depth.rows(), depth.cols());
  std::optional<double> best;
  long best_dist = std::numeric_limits<long>::max();
  for (int r = range.r0; r <= range.r1; ++r)
    for (int c = range.c0; c <= range.c1; ++c) {
      if (!depth.is_valid(r, c)) continue;
      const long d = static_cast<long>(r - cr) * (r - cr) + static_cast<long>(c - cc) * (c - cc);
      if (d < best_dist) {
        best_dist = d;
        best = depth.depth(r, c);
      }
    }
  return best;
}

TargetMaps encode_targets(const Frame& current, const Frame& previous, const SparseDepthMap& depth_current,
                          const SparseDepthMap* depth_previous, int scale, int num_classes) {
  if (scale < 1) throw DomainError("downscale factor must be >= 1");
  if (depth_current.scale != scale) throw ContractError("depth map scale does not match R");
  const int rows = (current.image.height() + scale - 1) / scale;
  const int cols = (current.image.width() + scale - 1) / scale;
  if (depth_current.rows() != rows || depth_current.cols() != cols)
    throw ContractError("depth map shape does not match the image grid");

  TargetMaps t;
  t.scale = scale;
  t.heatmap = GridD(num_classes, rows, cols, 0.0);
  t.size = GridD(2, rows, cols, 0.0);
  t.subpixel_offset = GridD(2, rows, cols, 0.0);
  t.displacement = GridD(3, rows, cols, 0.0);
  t.depth = depth_current;
  t.center_mask = Mask(1, rows, cols, 0);
  t.displacement_mask = Mask(1, rows, cols, 0);

  std::map<int, const BoxAnnotation2D*> prev_by_track;
  for (const auto& box : previous.annotations) prev_by_track[box.track_id] = &box;

  for (const auto& box : current.annotations) {
    if (box.class_id < 0 || box.class_id >= num_classes) {
      ++t.skipped_objects;
      continue;
    }
    const double cu = box.center_u() / scale;
    const double cv = box.center_v() / scale;
    const int col = static_cast<int>(std::floor(cu));
    const int row = static_cast<int>(std::floor(cv));
    if (!t.heatmap.contains(row, col)) {
      ++t.skipped_objects;
      continue;
    }
    const int radius = gaussian_radius(box.half_width(), box.half_height(), scale);
    splat_gaussian(t.heatmap, box.class_id, row, col, radius);
    t.size(0, row, col) = box.half_width();
    t.size(1, row, col) = box.half_height();
    t.subpixel_offset(0, row, col) = cu - col;
    t.subpixel_offset(1, row, col) = cv - row;
    t.center_mask.at(row, col) = 1;

    const auto z = object_depth(depth_current, box);
    if (!z) continue;
    auto it = prev_by_track.find(box.track_id);
    if (it == prev_by_track.end()) {
      // New object: supervised towards zero motion.
      t.displacement(0, row, col) = 0.0;
      t.displacement(1, row, col) = 0.0;
      t.displacement(2, row, col) = 0.0;
      t.displacement_mask.at(row, col) = 1;
      continue;
    }
    const BoxAnnotation2D& prev = *it->second;
    const bool self_pair = &previous == &current || (previous.sequence_id == current.sequence_id &&
                                                     previous.frame_index == current.frame_index);
    std::optional<double> z_prev;
    if (depth_previous)
      z_prev = object_depth(*depth_previous, prev);
    else if (self_pair)
      z_prev = z;
    if (!z_prev) continue;
    t.displacement(0, row, col) = prev.center_u() / scale - cu;
    t.displacement(1, row, col) = prev.center_v() / scale - cv;
    t.displacement(2, row, col) = *z_prev - *z;
    t.displacement_mask.at(row, col) = 1;
  }
  return t;
}

std::vector<Detection> decode_detections(const GridD& heatmap, const GridD& size, const GridD& offset,
                                         const GridD& depth, const DecodeOptions& options,
                                         const GridD* displacement) {
  if (!heatmap.same_plane(size) || !heatmap.same_plane(offset) || !heatmap.same_plane(depth) ||
      (displacement && !heatmap.same_plane(*displacement)))
    throw ContractError("decode inputs must share the spatial shape");

  struct Peak {
    double score;
    int row, col, cls;
  };
  std::vector<Peak> peaks;
  const int rows = heatmap.rows();
  const int cols = heatmap.cols();
  for (int k = 0; k < heatmap.channels(); ++k)
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        const double v = heatmap(k, r, c);
        if (!(v >= options.threshold)) continue;
        bool is_max = true;
        for (int dy = -1; dy <= 1 && is_max; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if ((dx || dy) && heatmap.contains(r + dy, c + dx) && heatmap(k, r + dy, c + dx) > v) {
              is_max = false;
              break;
            }
          }
        if (is_max) peaks.push_back({v, r, c, k});
      }

  std::sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.row, a.col, a.cls) < std::tie(b.row, b.col, b.cls);
  });
  if (static_cast<int>(peaks.size()) > options.max_detections) peaks.resize(std::max(0, options.max_detections));

  std::vector<Detection> out;
  out.reserve(peaks.size());
  for (const auto& p : peaks) {
    Detection d;
    d.center_u = (p.col + offset(0, p.row, p.col)) * options.scale;
    d.center_v = (p.row + offset(1, p.row, p.col)) * options.scale;
    d.half_width = size(0, p.row, p.col);
    d.half_height = size(1, p.row, p.col);
    d.confidence = p.score;
    d.depth = depth(0, p.row, p.col);
    d.class_id = p.cls;
    if (displacement) {
      d.disp_u = (*displacement)(0, p.row, p.col);
      d.disp_v = (*displacement)(1, p.row, p.col);
      d.disp_z = (*displacement)(2, p.row, p.col);
    }
    out.push_back(d);
  }
  return out;
}

PriorMaps render_prior_map(std::span<const PriorObject> objects, int rows, int cols, int scale) {
  PriorMaps maps{GridD(1, rows, cols, 0.0), GridD(1, rows, cols, 0.0)};
  for (const auto& obj : objects) {
    const int col = static_cast<int>(std::floor(obj.center_u / scale));
    const int row = static_cast<int>(std::floor(obj.center_v / scale));
    if (!(obj.half_width > 0.0) || !(obj.half_height > 0.0)) continue;
    const int radius = gaussian_radius(obj.half_width, obj.half_height, scale);
    splat_gaussian(maps.heatmap, 0, row, col, radius, std::clamp(obj.confidence, 0.0, 1.0));
    if (!(obj.depth > 0.0)) continue;
    for (int dy = -radius; dy <= radius; ++dy)
      for (int dx = -radius; dx <= radius; ++dx) {
        if (!maps.depth.contains(row + dy, col + dx)) continue;
        double& cell = maps.depth.at(row + dy, col + dx);
        if (cell == 0.0 || obj.depth < cell) cell = obj.depth;
      }
  }
  return maps;
}

}  // namespace bevtrack
