#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "bevtrack/grid.hpp"

namespace bevtrack {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  RigidTransform inverse() const;
  static RigidTransform identity() { return {}; }
};

// True when `m` is orthonormal with determinant +1 within `tol`.
bool is_rotation(const Mat3& m, double tol = 1e-6);

// Pinhole camera plus LiDAR extrinsics. Camera frame: x right, y down,
// z forward, meters. `camera_offset` is the translation part of the
// projection matrix (stereo baseline for KITTI P2) expressed in meters.
struct CameraCalibration {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  RigidTransform lidar_to_cam;
  std::optional<Mat3> rect;
  Vec3 camera_offset = Vec3::Zero();
  int image_width = 0;
  int image_height = 0;

  // Throws ValidationError when intrinsics or rotation blocks are invalid.
  void validate() const;

  // LiDAR point to camera frame: rect * (R x + t) + offset.
  Vec3 lidar_to_camera(const Vec3& p) const;
  RigidTransform cam_to_lidar() const;
};

struct ProjectedPoint {
  double u;
  double v;
  double z;
};

struct SparseDepthMap {
  Grid<double> values;
  Mask valid;
  int scale = 1;

  SparseDepthMap() = default;
  SparseDepthMap(int rows, int cols, int scale_factor)
      : values(1, rows, cols, 0.0), valid(1, rows, cols, 0), scale(scale_factor) {}

  int rows() const { return values.rows(); }
  int cols() const { return values.cols(); }
  bool is_valid(int r, int c) const { return valid.at(r, c) != 0; }
  double depth(int r, int c) const { return values.at(r, c); }
  std::size_t valid_count() const;
};

// GPS pose of the ego vehicle. Yaw 0 = east, counter-clockwise positive.
struct EgoPose {
  double latitude = 0.0;
  double longitude = 0.0;
  double altitude = 0.0;
  double yaw = 0.0;
  double timestamp = 0.0;

  void validate() const;
};

struct GeoPoint {
  double latitude;
  double longitude;
};

// Meters per degree of latitude on the local tangent plane.
inline constexpr double kMetersPerDegree = 111320.0;

CameraCalibration load_calibration(std::string_view raw_text, int image_width = 1242,
                                   int image_height = 375);

// Points in the LiDAR frame. Only points in front of the camera that land
// inside the image are returned.
std::vector<ProjectedPoint> project_points(std::span<const Vec3> cloud, const CameraCalibration& calib);

// Downscaled sparse depth target. Cell (floor(v/R), floor(u/R)) keeps the
// nearest return.
SparseDepthMap render_depth_map(std::span<const Vec3> cloud, const CameraCalibration& calib, int scale);
SparseDepthMap rasterize_depth(std::span<const ProjectedPoint> points, int image_width,
                               int image_height, int scale);

// Inverse pinhole projection. Throws DomainError for z <= 0.
Vec3 lift_pixel(double u, double v, double z, const CameraCalibration& calib);

// Camera-frame point to geodetic coordinates. The ego frame shares the
// camera axis convention (x right, y down, z forward); `cam_to_ego` maps
// camera to ego.
GeoPoint ego_to_world(const Vec3& point_cam, const EgoPose& ego, const RigidTransform& cam_to_ego);

// Default camera mounting relative to the GPS/IMU unit.
RigidTransform default_cam_to_ego();

// KITTI velodyne scan: little-endian float32 (x, y, z, reflectance) records.
std::vector<Vec3> read_velodyne(const std::filesystem::path& path);
void write_velodyne(const std::filesystem::path& path, std::span<const Vec3> cloud);

}  // namespace bevtrack
