#include "bevtrack/geometry.hpp"

#include <Eigen/LU>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>

#include "bevtrack/error.hpp"
#include "bevtrack/fileio.hpp"

namespace bevtrack {

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

bool is_rotation(const Mat3& m, double tol) {
  const double ortho = (m * m.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tol && std::abs(m.determinant() - 1.0) <= tol;
}

void CameraCalibration::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw ValidationError("focal lengths must be positive");
  if (!is_rotation(lidar_to_cam.rotation))
    throw ValidationError("lidar_to_cam rotation is not orthonormal with determinant +1");
  if (rect && !is_rotation(*rect))
    throw ValidationError("rectifying rotation is not orthonormal with determinant +1");
}

Vec3 CameraCalibration::lidar_to_camera(const Vec3& p) const {
  Vec3 q = lidar_to_cam.apply(p);
  if (rect) q = *rect * q;
  return q + camera_offset;
}

RigidTransform CameraCalibration::cam_to_lidar() const {
  RigidTransform full;
  const Mat3 r = rect ? *rect : Mat3::Identity();
  full.rotation = r * lidar_to_cam.rotation;
  full.translation = r * lidar_to_cam.translation + camera_offset;
  // Calibrated rotations are only orthonormal to ~1e-7; invert exactly.
  RigidTransform inv;
  inv.rotation = full.rotation.inverse();
  inv.translation = -(inv.rotation * full.translation);
  return inv;
}

std::size_t SparseDepthMap::valid_count() const {
  std::size_t n = 0;
  for (auto v : valid.data()) n += v != 0;
  return n;
}

void EgoPose::validate() const {
  if (!(std::abs(latitude) <= 90.0)) throw ValidationError("latitude outside [-90, 90]");
  if (!(std::abs(longitude) <= 180.0)) throw ValidationError("longitude outside [-180, 180]");
}

namespace {

std::map<std::string, std::vector<double>> parse_calib_entries(std::string_view raw_text) {
  std::map<std::string, std::vector<double>> entries;
  std::istringstream lines{std::string(raw_text)};
  std::string line;
  while (std::getline(lines, line)) {
    std::istringstream tokens(line);
    std::string key;
    if (!(tokens >> key)) continue;
    if (key.back() == ':') key.pop_back();
    std::vector<double> values;
    std::string tok;
    while (tokens >> tok) {
      try {
        values.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw ParseError("calibration entry " + key + " has non-numeric value '" + tok + "'");
      }
    }
    entries[key] = std::move(values);
  }
  return entries;
}

const std::vector<double>& require(const std::map<std::string, std::vector<double>>& entries,
                                   std::initializer_list<const char*> aliases, std::size_t count) {
  for (const char* name : aliases) {
    auto it = entries.find(name);
    if (it == entries.end()) continue;
    if (it->second.size() < count)
      throw ParseError(std::string("calibration entry ") + name + " expects " +
                       std::to_string(count) + " values");
    return it->second;
  }
  throw ParseError(std::string("missing calibration key ") + *aliases.begin());
}

Mat3 rows3(const std::vector<double>& v, std::size_t stride) {
  Mat3 m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = v[r * stride + c];
  return m;
}

}  // namespace

CameraCalibration load_calibration(std::string_view raw_text, int image_width, int image_height) {
  const auto entries = parse_calib_entries(raw_text);
  const auto& p2 = require(entries, {"P2"}, 12);
  const auto& r_rect = require(entries, {"R_rect", "R0_rect"}, 9);
  const auto& tr = require(entries, {"Tr_velo_cam", "Tr_velo_to_cam"}, 12);

  CameraCalibration calib;
  calib.fx = p2[0];
  calib.fy = p2[5];
  calib.cx = p2[2];
  calib.cy = p2[6];
  calib.image_width = image_width;
  calib.image_height = image_height;
  calib.lidar_to_cam.rotation = rows3(tr, 4);
  calib.lidar_to_cam.translation = Vec3(tr[3], tr[7], tr[11]);
  calib.rect = rows3(r_rect, 3);

  // P2 = K [I | t]  =>  t = K^-1 * P2[:, 3]
  Mat3 k = rows3(p2, 4);
  if (!(calib.fx > 0.0) || !(calib.fy > 0.0)) throw ValidationError("focal lengths must be positive");
  calib.camera_offset = k.inverse() * Vec3(p2[3], p2[7], p2[11]);

  calib.validate();
  return calib;
}

std::vector<ProjectedPoint> project_points(std::span<const Vec3> cloud, const CameraCalibration& calib) {
  const long n = static_cast<long>(cloud.size());
  std::vector<ProjectedPoint> projected(n);
  std::vector<unsigned char> keep(n, 0);
  const double w = calib.image_width;
  const double h = calib.image_height;

#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) {
    const Vec3 p = calib.lidar_to_camera(cloud[i]);
    if (!(p.z() > 0.0)) continue;
    const double u = calib.fx * p.x() / p.z() + calib.cx;
    const double v = calib.fy * p.y() / p.z() + calib.cy;
    if (u < 0.0 || v < 0.0 || u >= w || v >= h) continue;
    projected[i] = {u, v, p.z()};
    keep[i] = 1;
  }

  std::vector<ProjectedPoint> out;
  out.reserve(n);
  for (long i = 0; i < n; ++i)
    if (keep[i]) out.push_back(projected[i]);
  return out;
}

SparseDepthMap rasterize_depth(std::span<const ProjectedPoint> points, int image_width,
                               int image_height, int scale) {
  if (scale < 1) throw DomainError("depth map scale must be >= 1");
  const int rows = (image_height + scale - 1) / scale;
  const int cols = (image_width + scale - 1) / scale;
  SparseDepthMap map(rows, cols, scale);
  for (const auto& p : points) {
    const int r = static_cast<int>(std::floor(p.v / scale));
    const int c = static_cast<int>(std::floor(p.u / scale));
    if (!map.values.contains(r, c) || !(p.z > 0.0)) continue;
    if (!map.is_valid(r, c) || p.z < map.values.at(r, c)) {
      map.values.at(r, c) = p.z;
      map.valid.at(r, c) = 1;
    }
  }
  return map;
}

SparseDepthMap render_depth_map(std::span<const Vec3> cloud, const CameraCalibration& calib, int scale) {
  const auto points = project_points(cloud, calib);
  return rasterize_depth(points, calib.image_width, calib.image_height, scale);
}

Vec3 lift_pixel(double u, double v, double z, const CameraCalibration& calib) {
  if (!(z > 0.0)) throw DomainError("lift_pixel requires positive depth");
  return {(u - calib.cx) * z / calib.fx, (v - calib.cy) * z / calib.fy, z};
}

GeoPoint ego_to_world(const Vec3& point_cam, const EgoPose& ego, const RigidTransform& cam_to_ego) {
  const Vec3 p = cam_to_ego.apply(point_cam);
  const double forward = p.z();
  const double right = p.x();
  const double cy = std::cos(ego.yaw);
  const double sy = std::sin(ego.yaw);
  const double east = cy * forward + sy * right;
  const double north = sy * forward - cy * right;
  const double lat_rad = ego.latitude * std::numbers::pi / 180.0;
  return {ego.latitude + north / kMetersPerDegree,
          ego.longitude + east / (kMetersPerDegree * std::cos(lat_rad))};
}

RigidTransform default_cam_to_ego() {
  // KITTI rig: the left color camera sits about 1.08 m ahead of and
  // 0.93 m above the OXTS unit. Vertical offset is irrelevant for BEV.
  RigidTransform t;
  t.translation = Vec3(0.0, -0.93, 1.08);
  return t;
}

std::vector<Vec3> read_velodyne(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open velodyne scan: " + path.string());
  std::vector<Vec3> cloud;
  float x, y, z, r;
  while (read_le(in, x) && read_le(in, y) && read_le(in, z) && read_le(in, r))
    cloud.emplace_back(x, y, z);
  return cloud;
}

void write_velodyne(const std::filesystem::path& path, std::span<const Vec3> cloud) {
  AtomicFile out(path);
  {
    std::ofstream os(out.temp_path(), std::ios::binary);
    if (!os) throw IoError("cannot write velodyne scan: " + path.string());
    for (const auto& p : cloud) {
      write_le(os, static_cast<float>(p.x()));
      write_le(os, static_cast<float>(p.y()));
      write_le(os, static_cast<float>(p.z()));
      write_le(os, 0.0f);
    }
  }
  out.commit();
}

}  // namespace bevtrack
