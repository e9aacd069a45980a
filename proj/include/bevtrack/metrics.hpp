#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bevtrack/geometry.hpp"
#include "bevtrack/kitti.hpp"

namespace bevtrack {

// Minimum-cost assignment of rows to columns (Hungarian method). Returns the
// column assigned to each row, or -1 when rows outnumber columns.
std::vector<int> solve_assignment(const std::vector<std::vector<double>>& cost);

// One box of a trajectory in one frame; ground is (x, z) on the ground plane.
struct TrackedBox {
  int frame = 0;
  int id = 0;
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  int class_id = 0;
  std::optional<std::pair<double, double>> ground;
};

double box_iou(const TrackedBox& a, const TrackedBox& b);

enum class MatchCriterion {
  iou,              // similarity = IoU, pairs need IoU >= threshold
  ground_distance,  // similarity = 1 - d / threshold, pairs need d <= threshold meters
};

struct PairMatch {
  std::size_t gt;
  std::size_t pred;
  double similarity;
};

struct FrameMatch {
  std::vector<PairMatch> matches;
  std::vector<std::size_t> false_positives;  // pred indices
  std::vector<std::size_t> misses;           // gt indices
};

// `previous` maps gt id to the pred id it matched last frame; such pairs are
// kept first if still eligible. The rest are assigned to maximise total
// similarity among eligible pairs.
FrameMatch match_frame(std::span<const TrackedBox> gt, std::span<const TrackedBox> pred, double threshold,
                       const std::map<int, int>& previous = {}, MatchCriterion criterion = MatchCriterion::iou);

struct MotReport {
  double mota = 0;
  double motp = 0;
  double mostly_tracked = 0;
  double mostly_lost = 0;
  long id_switches = 0;
  long fragmentations = 0;
  long false_positives = 0;
  long misses = 0;
  long ground_truth = 0;
  long matches = 0;
  long trajectories = 0;
};

// Throws ValidationError for a repeated gt id within a frame or for an empty ground truth.
MotReport compute_mot(std::span<const TrackedBox> gt, std::span<const TrackedBox> pred, double threshold,
                      MatchCriterion criterion = MatchCriterion::iou);

struct DepthErrors {
  double abs_rel = 0;
  double sq_rel = 0;
  double rmse = 0;
  double rmse_log = 0;
  double delta1 = 0;
  double delta2 = 0;
  double delta3 = 0;
};

struct DepthReport {
  std::string region_label;
  std::size_t pixel_count = 0;
  std::optional<DepthErrors> errors;  // absent when no cell qualifies
};

// Running sums behind DepthReport; merges by addition.
struct DepthAccumulator {
  std::size_t count = 0;
  double abs_rel = 0;
  double sq_rel = 0;
  double sq = 0;
  double sq_log = 0;
  std::size_t within[3] = {0, 0, 0};

  void add(double pred, double gt);
  DepthAccumulator& operator+=(const DepthAccumulator& other);
  DepthReport report(std::string label) const;
};

inline constexpr double kDefaultDepthCap = 80.0;

// Cells valid in gt, inside the mask (if any) and with gt <= cap. Predictions
// must be positive on those cells (DomainError otherwise).
DepthAccumulator accumulate_depth(const GridD& pred, const SparseDepthMap& gt, const Mask* region,
                                  double depth_cap = kDefaultDepthCap);
DepthReport compute_depth_metrics(const GridD& pred, const SparseDepthMap& gt, const Mask* region = nullptr,
                                  double depth_cap = kDefaultDepthCap, std::string label = "whole_image");

namespace reference {
DepthAccumulator accumulate_depth(const GridD& pred, const SparseDepthMap& gt, const Mask* region,
                                  double depth_cap = kDefaultDepthCap);
}

struct NamedMask {
  std::string label;
  Mask mask;
};

using DepthRange = std::pair<double, double>;
std::vector<DepthRange> default_depth_ranges();  // 0-20, 20-50, 50-80 m
std::string range_label(const DepthRange& range);  // "range_20_50"

// "whole_image", "object_boxes", then one mask per range. A cell covered by
// several boxes belongs to the nearest one.
std::vector<NamedMask> region_masks(std::span<const BoxAnnotation2D> annotations, const SparseDepthMap& gt_depth,
                                    std::span<const DepthRange> ranges);

nlohmann::json to_json(const MotReport& report);
nlohmann::json to_json(const DepthReport& report);
std::string to_key_value(const MotReport& report);
std::string to_key_value(const DepthReport& report);

}  // namespace bevtrack
