#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bevtrack/geometry.hpp"
#include "bevtrack/tracker.hpp"

namespace bevtrack {

inline const std::string kEgoActor = "ego";

struct BevSample {
  int frame = 0;
  double latitude = 0;
  double longitude = 0;
  double range_m = 0;  // depth from the ego camera
  double confidence = 0;

  bool operator==(const BevSample&) const = default;
};

struct BevTrajectory {
  std::string actor_id;
  std::vector<BevSample> samples;

  bool operator==(const BevTrajectory&) const = default;
};

struct BevExtraction {
  std::vector<BevTrajectory> trajectories;  // ego first, then tracks by id
  int skipped_states = 0;                   // states whose frame has no pose
};

// `poses[f]` is the ego pose at frame f. Track depths are median-smoothed with
// `smooth_window` before lifting. Throws ExportError when `poses` is empty.
BevExtraction extract_bev(std::span<const Track> tracks, std::span<const EgoPose> poses,
                          const CameraCalibration& calib, const RigidTransform& cam_to_ego, int smooth_window = 1);

// Ground-plane position relative to the ego origin, for sequences without
// poses. Forward and left are meters in the ego frame.
struct EgoRelativeSample {
  int frame = 0;
  double forward_m = 0;
  double left_m = 0;
  double range_m = 0;
  double confidence = 0;

  bool operator==(const EgoRelativeSample&) const = default;
};

struct EgoRelativeTrajectory {
  std::string actor_id;
  std::vector<EgoRelativeSample> samples;

  bool operator==(const EgoRelativeTrajectory&) const = default;
};

// Tracks by id; no ego actor since the ego sits at the origin.
std::vector<EgoRelativeTrajectory> extract_ego_relative(std::span<const Track> tracks, const CameraCalibration& calib,
                                                        const RigidTransform& cam_to_ego, int smooth_window = 1);

// CSV columns: actor_id, frame, forward_m, left_m, range_m, confidence.
std::string format_ego_relative_csv(std::span<const EgoRelativeTrajectory> trajectories);
std::vector<EgoRelativeTrajectory> parse_ego_relative_csv(const std::string& text);

enum class BevFormat { csv, geojson };

BevFormat parse_bev_format(const std::string& name);
const char* bev_format_extension(BevFormat format);

// CSV columns: actor_id, frame, lat, lon, range_m, confidence. GeoJSON: a
// FeatureCollection with one LineString per actor (a Point for single-sample
// actors) carrying per-point frame, range_m and confidence arrays.
std::string format_trajectories(std::span<const BevTrajectory> trajectories, BevFormat format);
std::vector<BevTrajectory> parse_trajectories(const std::string& text, BevFormat format);

// Throws ExportError for an empty list and IoError when the file cannot be written.
void export_trajectories(std::span<const BevTrajectory> trajectories, BevFormat format,
                         const std::filesystem::path& path);

// Static SVG: each actor as a polyline of dots that fade with frame age.
std::string plot_trajectories_svg(std::span<const BevTrajectory> trajectories, int width = 800, int height = 800);

}  // namespace bevtrack
