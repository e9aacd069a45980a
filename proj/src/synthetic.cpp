#include "bevtrack/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "bevtrack/error.hpp"
#include "bevtrack/fileio.hpp"

namespace bevtrack {

namespace fs = std::filesystem;

namespace {

struct Extent {
  double width, height;
};

Extent class_extent(int class_id) { return class_id == 0 ? Extent{1.8, 1.5} : Extent{0.8, 1.8}; }

BoxAnnotation2D project_box(const SyntheticObject& o, double x, double z, const CameraCalibration& calib,
                            double cam_height) {
  BoxAnnotation2D b;
  b.track_id = o.track_id;
  b.class_id = o.class_id;
  b.x1 = calib.fx * (x - 0.5 * o.width) / z + calib.cx;
  b.x2 = calib.fx * (x + 0.5 * o.width) / z + calib.cx;
  b.y1 = calib.fy * (cam_height - o.height) / z + calib.cy;
  b.y2 = calib.fy * cam_height / z + calib.cy;
  b.location = Vec3(x, cam_height, z);
  return b;
}

std::vector<BoxAnnotation2D> boxes_at(const std::vector<SyntheticObject>& objects, int t, double ego_speed,
                                      const CameraCalibration& calib, double cam_height) {
  std::vector<BoxAnnotation2D> out;
  for (const auto& o : objects) {
    const double x = o.x + o.vx * t;
    const double z = o.z + (o.vz - ego_speed) * t;
    out.push_back(project_box(o, x, z, calib, cam_height));
  }
  return out;
}

bool separated(const BoxAnnotation2D& a, const BoxAnnotation2D& b, double gap) {
  return a.x2 + gap <= b.x1 || b.x2 + gap <= a.x1 || a.y2 + gap <= b.y1 || b.y2 + gap <= a.y1;
}

double shade(double z) { return 0.3 + 0.7 * std::exp(-z / 20.0); }

void write_matrix_row(std::ostream& os, const char* key, std::initializer_list<double> values) {
  os << key;
  char buf[32];
  for (double v : values) {
    std::snprintf(buf, sizeof buf, " %.12e", v);
    os << buf;
  }
  os << "\n";
}

}  // namespace

std::string calibration_text(const CameraCalibration& c) {
  std::ostringstream os;
  const double ox = c.fx * c.camera_offset.x() + c.cx * c.camera_offset.z();
  const double oy = c.fy * c.camera_offset.y() + c.cy * c.camera_offset.z();
  for (const char* key : {"P0:", "P1:", "P2:", "P3:"})
    write_matrix_row(os, key, {c.fx, 0, c.cx, ox, 0, c.fy, c.cy, oy, 0, 0, 1, c.camera_offset.z()});
  const Mat3 r = c.rect ? *c.rect : Mat3::Identity();
  write_matrix_row(os, "R_rect", {r(0, 0), r(0, 1), r(0, 2), r(1, 0), r(1, 1), r(1, 2), r(2, 0), r(2, 1), r(2, 2)});
  const Mat3& m = c.lidar_to_cam.rotation;
  const Vec3& t = c.lidar_to_cam.translation;
  write_matrix_row(os, "Tr_velo_cam",
                   {m(0, 0), m(0, 1), m(0, 2), t.x(), m(1, 0), m(1, 1), m(1, 2), t.y(), m(2, 0), m(2, 1), m(2, 2), t.z()});
  write_matrix_row(os, "Tr_imu_velo", {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0});
  return os.str();
}

SyntheticSequence generate_sequence(const SyntheticConfig& cfg, int sequence_index) {
  if (cfg.width <= 0 || cfg.height <= 0 || cfg.frames <= 0 || cfg.objects < 0)
    throw ConfigError("synthetic scene dimensions must be positive");
  SyntheticSequence seq;
  auto& calib = seq.calib;
  calib.fx = calib.fy = cfg.focal;
  calib.cx = 0.5 * cfg.width;
  calib.cy = 0.5 * cfg.height;
  calib.image_width = cfg.width;
  calib.image_height = cfg.height;
  // LiDAR axes: x forward, y left, z up.
  calib.lidar_to_cam.rotation << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  calib.lidar_to_cam.translation = Vec3(0.0, -0.08, -0.27);
  calib.rect = Mat3::Identity();

  std::mt19937_64 rng(cfg.seed * 7919ULL + static_cast<std::uint64_t>(sequence_index));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const double margin = 2.0;
  const double gap = 8.0;

  bool ok = false;
  for (int attempt = 0; attempt < 20000 && !ok; ++attempt) {
    seq.objects.clear();
    for (int i = 0; i < cfg.objects; ++i) {
      SyntheticObject o;
      o.track_id = i;
      o.class_id = i % 2;
      const Extent e = class_extent(o.class_id);
      o.width = e.width;
      o.height = e.height;
      o.z = uniform(cfg.min_object_depth, cfg.max_object_depth);
      const double half_fov = 0.5 * cfg.width / cfg.focal * o.z;
      o.x = uniform(-0.85 * half_fov, 0.85 * half_fov);
      o.vx = uniform(-cfg.max_speed, cfg.max_speed);
      o.vz = uniform(-cfg.max_speed, cfg.max_speed);
      seq.objects.push_back(o);
    }
    ok = true;
    for (int t = 0; t < cfg.frames && ok; ++t) {
      const auto boxes = boxes_at(seq.objects, t, cfg.ego_speed, calib, cfg.camera_height);
      for (std::size_t i = 0; i < boxes.size() && ok; ++i) {
        const auto& b = boxes[i];
        const double z = b.location->z();
        if (z < 3.0 || b.x1 < margin || b.y1 < margin || b.x2 > cfg.width - margin || b.y2 > cfg.height - margin)
          ok = false;
        for (std::size_t j = 0; j < i && ok; ++j)
          if (!separated(b, boxes[j], gap)) ok = false;
      }
    }
  }
  if (!ok) throw ConfigError("could not place synthetic objects; reduce the object count");

  for (int t = 0; t < cfg.frames; ++t) {
    SyntheticFrame frame;
    frame.boxes = boxes_at(seq.objects, t, cfg.ego_speed, calib, cfg.camera_height);
    frame.image = Image(cfg.width, cfg.height);
    frame.depth = Grid<double>(1, cfg.height, cfg.width, 0.0);

    for (int r = 0; r < cfg.height; ++r)
      for (int x = 0; x < cfg.width; ++x) {
        const double u = x + 0.5;
        const double v = r + 0.5;
        double depth = 0.0;
        int hit = -1;
        for (std::size_t i = 0; i < frame.boxes.size(); ++i) {
          const auto& b = frame.boxes[i];
          const double z = b.location->z();
          if (u >= b.x1 && u < b.x2 && v >= b.y1 && v < b.y2 && (hit < 0 || z < depth)) {
            hit = static_cast<int>(i);
            depth = z;
          }
        }
        double rgb[3] = {0.55, 0.75, 0.95};
        if (hit >= 0) {
          const bool car = frame.boxes[hit].class_id == 0;
          const double base[3] = {car ? 0.9 : 0.15, car ? 0.2 : 0.35, car ? 0.1 : 0.95};
          for (int c = 0; c < 3; ++c) rgb[c] = base[c] * shade(depth);
        } else if (v > calib.cy) {
          const double z = calib.fy * cfg.camera_height / (v - calib.cy);
          if (z <= cfg.max_range) {
            depth = z;
            const double base[3] = {0.5, 0.47, 0.42};
            for (int c = 0; c < 3; ++c) rgb[c] = base[c] * shade(z);
          }
        }
        frame.depth.at(r, x) = depth;
        for (int c = 0; c < 3; ++c) frame.image(c, r, x) = static_cast<float>(rgb[c]);
      }

    const RigidTransform to_lidar = calib.cam_to_lidar();
    for (int r = 0; r < cfg.height; r += cfg.lidar_stride)
      for (int x = 0; x < cfg.width; x += cfg.lidar_stride) {
        const double z = frame.depth.at(r, x);
        if (z <= 0.0) continue;
        frame.cloud.push_back(to_lidar.apply(lift_pixel(x + 0.5, r + 0.5, z, calib)));
      }

    frame.ego = cfg.ego_start;
    const double dist = cfg.ego_speed * t;
    const double lat_rad = cfg.ego_start.latitude * 3.14159265358979323846 / 180.0;
    frame.ego.latitude += dist * std::sin(cfg.ego_start.yaw) / kMetersPerDegree;
    frame.ego.longitude += dist * std::cos(cfg.ego_start.yaw) / (kMetersPerDegree * std::cos(lat_rad));
    frame.ego.timestamp = 0.1 * t;
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

void write_synthetic_dataset(const fs::path& root, const SyntheticConfig& cfg) {
  for (const char* dir : {"image_02", "velodyne", "label_02", "calib", "oxts"}) fs::create_directories(root / dir);
  for (int s = 0; s < cfg.sequences; ++s) {
    const auto seq = generate_sequence(cfg, s);
    const auto name = sequence_name(s);
    fs::create_directories(root / "image_02" / name);
    fs::create_directories(root / "velodyne" / name);
    std::ostringstream labels, oxts;
    char buf[512];
    for (int t = 0; t < cfg.frames; ++t) {
      const auto& f = seq.frames[t];
      write_png(root / "image_02" / name / (frame_name(t) + ".png"), f.image);
      write_velodyne(root / "velodyne" / name / (frame_name(t) + ".bin"), f.cloud);
      for (std::size_t i = 0; i < f.boxes.size(); ++i) {
        const auto& b = f.boxes[i];
        const auto& o = seq.objects[i];
        const Vec3& loc = *b.location;
        std::snprintf(buf, sizeof buf,
                      "%d %d %s 0 0 -10 %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f 0\n", t, b.track_id,
                      class_name(b.class_id), b.x1, b.y1, b.x2, b.y2, o.height, o.width, o.width, loc.x(), loc.y(),
                      loc.z());
        labels << buf;
      }
      std::snprintf(buf, sizeof buf, "%.12f %.12f %.6f 0 0 %.12f", f.ego.latitude, f.ego.longitude, f.ego.altitude,
                    f.ego.yaw);
      oxts << buf;
      for (int k = 6; k < 30; ++k) oxts << " 0";
      oxts << "\n";
    }
    write_text_file(root / "label_02" / (name + ".txt"), labels.str());
    write_text_file(root / "oxts" / (name + ".txt"), oxts.str());
    write_text_file(root / "calib" / (name + ".txt"), calibration_text(seq.calib));
  }
}

}  // namespace bevtrack
