#pragma once

#include <optional>
#include <span>
#include <vector>

#include "bevtrack/geometry.hpp"
#include "bevtrack/grid.hpp"
#include "bevtrack/kitti.hpp"

namespace bevtrack {

inline constexpr double kDefaultMinOverlap = 0.7;

// Training targets on the output grid (rows = ceil(H/R), cols = ceil(W/R)).
struct TargetMaps {
  GridD heatmap;          // K channels, [0, 1]
  GridD size;             // (half width, half height) in input pixels
  GridD subpixel_offset;  // C/R - floor(C/R), in output cells
  GridD displacement;     // (du, dv) output cells, dz meters; previous minus current
  SparseDepthMap depth;
  Mask center_mask;        // ground-truth center cells
  Mask displacement_mask;  // center cells whose displacement is defined
  int skipped_objects = 0;
  int scale = 4;

  int rows() const { return heatmap.rows(); }
  int cols() const { return heatmap.cols(); }
  int num_objects() const;
};

struct Detection {
  double center_u = 0;  // full-resolution pixels
  double center_v = 0;
  double half_width = 0;
  double half_height = 0;
  double confidence = 0;
  std::optional<int> label;  // track identity, set by the tracker
  double depth = 0;          // meters
  int class_id = 0;
  double disp_u = 0;  // output cells
  double disp_v = 0;
  double disp_z = 0;  // meters

  double x1() const { return center_u - half_width; }
  double y1() const { return center_v - half_height; }
  double x2() const { return center_u + half_width; }
  double y2() const { return center_v + half_height; }
};

// Previous-frame object fed back to the network as a tracklet prior.
struct PriorObject {
  double center_u = 0;
  double center_v = 0;
  double half_width = 0;
  double half_height = 0;
  double depth = 0;
  double confidence = 1;
};

struct PriorMaps {
  GridD heatmap;  // 1 channel, class agnostic
  GridD depth;    // 1 channel, meters, 0 outside every splat
};

// Largest corner displacement (output cells, floored, >= 1) that keeps the
// IoU with the true box at or above `min_overlap`.
int gaussian_radius(double half_width, double half_height, int scale,
                    double min_overlap = kDefaultMinOverlap);

// Element-wise max splat of exp(-(dx^2 + dy^2) / (2 sigma^2)), sigma = radius / 3,
// scaled by `peak`, over |dx|, |dy| <= radius.
void splat_gaussian(GridD& grid, int channel, int row, int col, int radius, double peak = 1.0);

// Per-object depth: value at the center cell, else the nearest valid cell
// inside the box (ties by lowest row, col).
std::optional<double> object_depth(const SparseDepthMap& depth, const BoxAnnotation2D& box);

TargetMaps encode_targets(const Frame& current, const Frame& previous, const SparseDepthMap& depth_current,
                          const SparseDepthMap* depth_previous, int scale, int num_classes);

struct DecodeOptions {
  double threshold = 0.3;
  int max_detections = 100;
  int scale = 4;
};

// Peaks are cells >= every 3x3 neighbour in their channel and >= threshold.
// Sorted by confidence, ties by lowest (row, col, class).
std::vector<Detection> decode_detections(const GridD& heatmap, const GridD& size, const GridD& offset,
                                         const GridD& depth, const DecodeOptions& options,
                                         const GridD* displacement = nullptr);

PriorMaps render_prior_map(std::span<const PriorObject> objects, int rows, int cols, int scale);

}  // namespace bevtrack
