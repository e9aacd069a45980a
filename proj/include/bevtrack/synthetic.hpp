#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bevtrack/geometry.hpp"
#include "bevtrack/image.hpp"
#include "bevtrack/kitti.hpp"

namespace bevtrack {

// Procedural KITTI-layout scenes: a flat ground plane under a pinhole camera
// with upright fronto-parallel boxes moving at constant velocity. Surface
// brightness falls off with depth, so depth is recoverable from appearance.
struct SyntheticConfig {
  int width = 128;
  int height = 96;
  int frames = 10;
  int sequences = 1;
  int objects = 4;
  double focal = 140.0;
  double camera_height = 1.6;  // meters above the ground
  double max_range = 80.0;
  double min_object_depth = 8.0;
  double max_object_depth = 16.0;
  double max_speed = 0.35;  // meters per frame, per axis
  int lidar_stride = 2;     // sample every n-th pixel row and column
  double ego_speed = 0.0;   // meters per frame along the heading
  EgoPose ego_start{49.0, 8.4, 110.0, 1.5707963267948966, 0.0};
  std::uint64_t seed = 7;
};

struct SyntheticObject {
  int track_id;
  int class_id;
  double x, z;    // camera-frame position of the front face, meters
  double vx, vz;  // meters per frame
  double width, height;
};

struct SyntheticFrame {
  Image image;
  Grid<double> depth;  // per pixel, 0 where nothing is hit within range
  std::vector<BoxAnnotation2D> boxes;
  std::vector<Vec3> cloud;  // LiDAR frame
  EgoPose ego;
};

struct SyntheticSequence {
  CameraCalibration calib;
  std::vector<SyntheticObject> objects;  // state at frame 0
  std::vector<SyntheticFrame> frames;
};

SyntheticSequence generate_sequence(const SyntheticConfig& config, int sequence_index);

// Writes image_02, velodyne, label_02, calib and oxts trees under `root`.
void write_synthetic_dataset(const std::filesystem::path& root, const SyntheticConfig& config);

std::string calibration_text(const CameraCalibration& calib);

}  // namespace bevtrack
