#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "bevtrack/error.hpp"
#include "bevtrack/fileio.hpp"
#include "bevtrack/geometry.hpp"
#include "support/generators.hpp"

using namespace bevtrack;
using bevtrack::testing::Rng;

namespace {

std::string fixture(const char* name) { return read_text_file(std::filesystem::path(BEVTRACK_TEST_DATA) / name); }

double haversine_m(double lat1, double lon1, double lat2, double lon2) {
  // Sphere whose degree of latitude spans kMetersPerDegree meters.
  const double radius = kMetersPerDegree * 180.0 / std::numbers::pi;
  const double d2r = std::numbers::pi / 180.0;
  const double dlat = (lat2 - lat1) * d2r;
  const double dlon = (lon2 - lon1) * d2r;
  const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(lat1 * d2r) * std::cos(lat2 * d2r) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2 * radius * std::asin(std::sqrt(a));
}

}  // namespace

TEST_CASE("kitti calibration fixture loads") {
  const CameraCalibration c = load_calibration(fixture("calib_0000.txt"));
  CHECK(c.fx == doctest::Approx(721.5377));
  CHECK(c.fy == doctest::Approx(721.5377));
  CHECK(c.cx == doctest::Approx(609.5593));
  CHECK(c.cy == doctest::Approx(172.854));
  CHECK(c.image_width == 1242);
  CHECK(c.image_height == 375);
  REQUIRE(c.rect.has_value());
  CHECK(is_rotation(*c.rect));
  CHECK(is_rotation(c.lidar_to_cam.rotation));
  // P2 carries the stereo baseline: t = K^-1 p4.
  const double tx = (44.85728 - 609.5593 * 2.745884e-3) / 721.5377;
  CHECK(c.camera_offset.x() == doctest::Approx(tx).epsilon(1e-9));
  CHECK(c.camera_offset.z() == doctest::Approx(2.745884e-3));
}

TEST_CASE("calibration aliases and errors") {
  const std::string p2 = "P2: 700 0 600 0 0 700 180 0 0 0 1 0\n";
  const std::string tr = "Tr_velo_to_cam: 0 -1 0 0 0 0 -1 0 1 0 0 0\n";
  const CameraCalibration c = load_calibration(p2 + "R0_rect: 1 0 0 0 1 0 0 0 1\n" + tr, 640, 480);
  CHECK(c.image_width == 640);
  CHECK(c.camera_offset.norm() == 0.0);

  CHECK_THROWS_AS(load_calibration("R_rect 1 0 0 0 1 0 0 0 1\n" + tr), ParseError);
  CHECK_THROWS_WITH_AS(load_calibration(p2 + tr), doctest::Contains("R_rect"), ParseError);
  CHECK_THROWS_AS(load_calibration(p2 + "R_rect 1 0 0 0 1 0 0 0 x\n" + tr), ParseError);
  CHECK_THROWS_AS(load_calibration(p2 + "R_rect 1 0 0 0 1 0 0 0\n" + tr), ParseError);
  CHECK_THROWS_AS(load_calibration(p2 + "R_rect 2 0 0 0 1 0 0 0 1\n" + tr), ValidationError);
  CHECK_THROWS_AS(load_calibration("P2: 0 0 600 0 0 700 180 0 0 0 1 0\nR_rect 1 0 0 0 1 0 0 0 1\n" + tr),
                  ValidationError);
}

TEST_CASE("lift inverts projection for random points") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    CameraCalibration c = bevtrack::testing::kitti_like_calibration();
    c.lidar_to_cam.rotation = bevtrack::testing::random_rotation(rng);
    c.lidar_to_cam.translation = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    c.rect = bevtrack::testing::random_rotation(rng);
    c.camera_offset = Vec3(rng.uniform(-0.5, 0.5), rng.uniform(-0.1, 0.1), rng.uniform(-0.01, 0.01));
    // Build a LiDAR point that lands inside the image.
    const double u = rng.uniform(0, c.image_width);
    const double v = rng.uniform(0, c.image_height);
    const double z = rng.uniform(1, 80);
    const Vec3 lidar = c.cam_to_lidar().apply(lift_pixel(u, v, z, c));
    const std::vector<Vec3> cloud{lidar};
    const auto projected = project_points(cloud, c);
    REQUIRE(projected.size() == 1);
    const Vec3 back = c.cam_to_lidar().apply(lift_pixel(projected[0].u, projected[0].v, projected[0].z, c));
    CHECK((back - lidar).norm() < 1e-9);
  }
}

TEST_CASE("projection drops points behind the camera or outside the image") {
  CameraCalibration c = bevtrack::testing::kitti_like_calibration(100, 50);
  c.cx = 50;
  c.cy = 25;
  c.lidar_to_cam = RigidTransform::identity();
  c.rect.reset();
  const std::vector<Vec3> cloud{{0, 0, -5}, {0, 0, 0}, {0, 0, 5}, {100, 0, 5}, {0, 100, 5}};
  const auto p = project_points(cloud, c);
  REQUIRE(p.size() == 1);
  CHECK(p[0].u == doctest::Approx(50));
  CHECK(p[0].z == doctest::Approx(5));
}

TEST_CASE("rasterization keeps the nearest return per cell") {
  const std::vector<ProjectedPoint> pts{{5.0, 5.0, 20.0}, {6.9, 7.9, 12.0}, {7.99, 4.0, 30.0}, {8.0, 4.0, 3.0}};
  const SparseDepthMap m = rasterize_depth(pts, 17, 9, 4);
  CHECK(m.rows() == 3);
  CHECK(m.cols() == 5);
  CHECK(m.scale == 4);
  CHECK(m.valid_count() == 2);
  CHECK(m.is_valid(1, 1));
  CHECK(m.depth(1, 1) == 12.0);
  CHECK(m.depth(1, 2) == 3.0);

  SUBCASE("collision order does not matter") {
    std::vector<ProjectedPoint> reversed(pts.rbegin(), pts.rend());
    const SparseDepthMap r = rasterize_depth(reversed, 17, 9, 4);
    CHECK(r.values == m.values);
    CHECK(r.valid == m.valid);
  }
}

TEST_CASE("rasterization bounds") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int w = rng.integer(1, 60);
    const int h = rng.integer(1, 60);
    const int s = rng.integer(1, 8);
    std::vector<ProjectedPoint> pts;
    for (int i = 0; i < 100; ++i) pts.push_back({rng.uniform(-10, w + 10), rng.uniform(-10, h + 10), rng.uniform(-5, 90)});
    const SparseDepthMap m = rasterize_depth(pts, w, h, s);
    CHECK(m.rows() == (h + s - 1) / s);
    CHECK(m.cols() == (w + s - 1) / s);
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c) {
        if (!m.is_valid(r, c)) continue;
        double best = 1e300;
        for (const auto& p : pts)
          if (p.z > 0 && std::floor(p.v / s) == r && std::floor(p.u / s) == c) best = std::min(best, p.z);
        CHECK(m.depth(r, c) == best);
      }
  }
  CHECK_THROWS_AS(rasterize_depth({}, 10, 10, 0), DomainError);
}

TEST_CASE("lift rejects non-positive depth") {
  const CameraCalibration c = bevtrack::testing::kitti_like_calibration();
  CHECK_THROWS_AS(lift_pixel(1, 1, 0.0, c), DomainError);
  CHECK_THROWS_AS(lift_pixel(1, 1, -2.0, c), DomainError);
}

TEST_CASE("ego_to_world against a haversine oracle") {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    EgoPose ego{rng.uniform(-60, 60), rng.uniform(-179, 179), 0, rng.uniform(-3.1, 3.1), 0};
    const Vec3 p(rng.uniform(-20, 20), rng.uniform(-2, 2), rng.uniform(1, 60));
    const GeoPoint g = ego_to_world(p, ego, RigidTransform::identity());
    const double ground = std::hypot(p.x(), p.z());
    CHECK(haversine_m(ego.latitude, ego.longitude, g.latitude, g.longitude) ==
          doctest::Approx(ground).epsilon(2e-3));
  }
}

TEST_CASE("ego_to_world heading convention") {
  const EgoPose north{48.0, 11.0, 0, std::numbers::pi / 2, 0};
  const GeoPoint ahead = ego_to_world(Vec3(0, 0, 10), north, RigidTransform::identity());
  CHECK((ahead.latitude - 48.0) * kMetersPerDegree == doctest::Approx(10.0));
  CHECK(ahead.longitude == doctest::Approx(11.0));
  const GeoPoint right = ego_to_world(Vec3(5, 0, 0), north, RigidTransform::identity());
  CHECK(right.longitude > 11.0);
  CHECK(right.latitude == doctest::Approx(48.0));

  const EgoPose east{48.0, 11.0, 0, 0.0, 0};
  const GeoPoint e = ego_to_world(Vec3(0, 0, 10), east, RigidTransform::identity());
  CHECK((e.longitude - 11.0) * kMetersPerDegree * std::cos(48.0 * std::numbers::pi / 180) == doctest::Approx(10.0));
  const GeoPoint s = ego_to_world(Vec3(5, 0, 0), east, RigidTransform::identity());
  CHECK(s.latitude < 48.0);
}

TEST_CASE("velodyne files round trip at float precision") {
  const auto path = std::filesystem::temp_directory_path() / "bevtrack_velo_test.bin";
  const std::vector<Vec3> cloud{{1.5, -2.25, 0.125}, {10, 20, -1}};
  write_velodyne(path, cloud);
  CHECK(std::filesystem::file_size(path) == 32);
  const auto back = read_velodyne(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0] == cloud[0]);
  CHECK(back[1] == cloud[1]);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_velodyne(path), IoError);
}

TEST_CASE("ego pose validation") {
  CHECK_THROWS_AS((EgoPose{91, 0, 0, 0, 0}.validate()), ValidationError);
  CHECK_THROWS_AS((EgoPose{0, 181, 0, 0, 0}.validate()), ValidationError);
  CHECK_NOTHROW((EgoPose{45, 90, 0, 0, 0}.validate()));
}

namespace {

CameraCalibration simple_camera(double f, double cx, double cy, int w, int h) {
  CameraCalibration c;
  c.fx = c.fy = f;
  c.cx = cx;
  c.cy = cy;
  c.image_width = w;
  c.image_height = h;
  return c;
}

}  // namespace

TEST_CASE("calibration validation") {
  CHECK_NOTHROW(simple_camera(1, 0, 0, 1, 1).validate());
  CameraCalibration c = simple_camera(1, 0, 0, 1, 1);
  c.lidar_to_cam.rotation = Mat3::Identity();
  c.lidar_to_cam.rotation(2, 2) = -1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("fixture matrices match the file rows") {
  const CameraCalibration c = load_calibration(fixture("calib_0000.txt"));
  CHECK(c.lidar_to_cam.rotation(0, 1) == doctest::Approx(-9.999714e-01));
  CHECK(c.lidar_to_cam.rotation(2, 0) == doctest::Approx(9.998621e-01));
  CHECK(c.lidar_to_cam.translation.x() == doctest::Approx(-4.069766e-03));
  CHECK(c.lidar_to_cam.translation.z() == doctest::Approx(-2.717806e-01));
  CHECK((*c.rect)(0, 1) == doctest::Approx(9.837760e-03));
  CHECK((*c.rect)(2, 2) == doctest::Approx(9.999631e-01));
}

TEST_CASE("pinhole hand examples") {
  CameraCalibration c = simple_camera(700, 600, 180, 1242, 375);
  const std::vector<Vec3> cloud{{1, 0, 10}, {0, 0, 10}};
  const auto p = project_points(cloud, c);
  REQUIRE(p.size() == 2);
  CHECK(p[0].u == doctest::Approx(670));
  CHECK(p[0].v == doctest::Approx(180));
  CHECK(p[1].u == doctest::Approx(600));
  const Vec3 back = lift_pixel(670, 180, 10, c);
  CHECK(back.x() == doctest::Approx(1));
  CHECK(back.y() == doctest::Approx(0));
  CHECK(lift_pixel(600, 180, 10, c).norm() == doctest::Approx(10));

  const SparseDepthMap three = render_depth_map(std::vector<Vec3>{{0, 0, 10}, {1, 0, 10}, {0, 1, 20}}, c, 4);
  CHECK(three.valid_count() == 3);
  CHECK(three.depth(45, 150) == 10);
  CHECK(three.depth(45, 167) == 10);
  CHECK(three.depth(53, 150) == 20);
  CHECK(render_depth_map({}, c, 4).valid_count() == 0);
}

TEST_CASE("re-lifting a cell center stays within the rasterization bound") {
  Rng rng(21);
  const CameraCalibration c = simple_camera(720, 620, 180, 1242, 375);
  for (int i = 0; i < 300; ++i) {
    const int s = 1 << rng.integer(0, 3);
    const Vec3 p = lift_pixel(rng.uniform(0, 1242), rng.uniform(0, 375), rng.uniform(1, 80), c);
    const SparseDepthMap m = render_depth_map(std::vector<Vec3>{p}, c, s);
    REQUIRE(m.valid_count() == 1);
    for (int r = 0; r < m.rows(); ++r)
      for (int col = 0; col < m.cols(); ++col) {
        if (!m.is_valid(r, col)) continue;
        const Vec3 q = lift_pixel((col + 0.5) * s, (r + 0.5) * s, m.depth(r, col), c);
        CHECK(q.z() == p.z());
        const double lateral = std::hypot(q.x() - p.x(), q.y() - p.y());
        CHECK(lateral <= p.z() * s * (1.0 / 720) * std::sqrt(2.0));
      }
  }
}

TEST_CASE("adding a farther point never raises a stored depth") {
  Rng rng(8);
  const CameraCalibration c = simple_camera(100, 32, 24, 64, 48);
  std::vector<Vec3> cloud;
  for (int i = 0; i < 200; ++i) cloud.push_back(lift_pixel(rng.uniform(0, 64), rng.uniform(0, 48), rng.uniform(1, 50), c));
  SparseDepthMap before = render_depth_map(cloud, c, 4);
  for (int i = 0; i < 200; ++i) {
    cloud.push_back(lift_pixel(rng.uniform(0, 64), rng.uniform(0, 48), rng.uniform(1, 50), c));
    const SparseDepthMap after = render_depth_map(cloud, c, 4);
    for (int r = 0; r < after.rows(); ++r)
      for (int col = 0; col < after.cols(); ++col)
        if (before.is_valid(r, col)) {
          REQUIRE(after.is_valid(r, col));
          CHECK(after.depth(r, col) <= before.depth(r, col));
        }
    before = after;
  }
}

TEST_CASE("tangent-plane geodesy examples") {
  const EgoPose ego{49.0, 8.4, 0, std::numbers::pi / 2, 0};
  CHECK(ego_to_world(Vec3::Zero(), ego, RigidTransform::identity()).latitude == 49.0);
  CHECK(ego_to_world(Vec3::Zero(), ego, RigidTransform::identity()).longitude == 8.4);
  // Heading north, east is to the right.
  const GeoPoint g = ego_to_world(Vec3(100, 0, 0), ego, RigidTransform::identity());
  CHECK(g.longitude - 8.4 == doctest::Approx(100.0 / (111320.0 * std::cos(49.0 * std::numbers::pi / 180))).epsilon(1e-12));
  CHECK(g.latitude == doctest::Approx(49.0).epsilon(1e-12));

  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const EgoPose e{rng.uniform(-70, 70), rng.uniform(-170, 170), 0, rng.uniform(-3.1, 3.1), 0};
    const double range = rng.uniform(1, 200);
    const double bearing = rng.uniform(0, 2 * std::numbers::pi);
    const double step = rng.uniform(0, 2 * std::numbers::pi);
    const Vec3 a(range * std::cos(bearing), 0, range * std::sin(bearing));
    const Vec3 b = a + Vec3(std::cos(step), 0, std::sin(step));
    const GeoPoint ga = ego_to_world(a, e, RigidTransform::identity());
    const GeoPoint gb = ego_to_world(b, e, RigidTransform::identity());
    CHECK(haversine_m(ga.latitude, ga.longitude, gb.latitude, gb.longitude) == doctest::Approx(1.0).epsilon(1e-3));
  }
}
