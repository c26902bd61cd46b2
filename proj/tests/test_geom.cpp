#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "lrm/geom.hpp"
#include "lrm/io.hpp"
#include "support.hpp"

using namespace lrm;

namespace {

ProjectionModel small_model(int rows, int cols) {
  ProjectionModel m;
  m.rows = rows;
  m.cols = cols;
  m.elevation_min = -0.4;
  m.elevation_max = 0.1;
  return m;
}

Vec3 from_angles(double el, double az, double r) {
  return {r * std::cos(el) * std::cos(az), r * std::cos(el) * std::sin(az), r * std::sin(el)};
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("lrm_geom_" + name);
}

}  // namespace

TEST(Projection, AxisAlignedPoint) {
  const auto m = small_model(1, 4);
  PointCloud c;
  c.points.emplace_back(1.0, 0.0, 0.0);
  const auto img = project_cylindrical(c, m);
  ASSERT_EQ(img.valid_count(), 1u);
  EXPECT_TRUE(img.is_valid(0, 2));
  EXPECT_DOUBLE_EQ(img.at(0, 2), 1.0);
}

TEST(Projection, EmptyCloudGivesInvalidImage) {
  const auto img = project_cylindrical(PointCloud{}, small_model(4, 8));
  EXPECT_EQ(img.valid_count(), 0u);
  EXPECT_EQ(img.depth.size(), 32u);
  img.validate();
}

TEST(Projection, MatchesBinningOracle) {
  const auto m = small_model(4, 8);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    PointCloud c;
    for (int i = 0; i < 8; ++i)
      c.points.push_back(from_angles(-0.5 + 0.7 * u(rng), -M_PI + 2 * M_PI * u(rng), 1.0 + 30.0 * u(rng)));
    std::vector<double> expect(32, std::numeric_limits<double>::infinity());
    std::size_t dropped = 0;
    for (const auto& p : c.points) {
      const double el = std::atan2(p.z(), std::hypot(p.x(), p.y()));
      if (el < m.elevation_min || el > m.elevation_max) {
        ++dropped;
        continue;
      }
      const int row = std::min(static_cast<int>(std::floor((m.elevation_max - el) / m.row_height())), m.rows - 1);
      const int col = static_cast<int>(std::floor((std::atan2(p.y(), p.x()) + M_PI) / (2 * M_PI / m.cols))) % m.cols;
      auto& d = expect[static_cast<std::size_t>(row * m.cols + col)];
      d = std::min(d, p.norm());
    }
    ProjectionStats stats;
    const auto img = project_cylindrical(c, m, &stats);
    EXPECT_EQ(stats.dropped_elevation, dropped);
    for (std::size_t i = 0; i < expect.size(); ++i) {
      ASSERT_EQ(img.valid[i] != 0, std::isfinite(expect[i])) << "seed " << seed << " cell " << i;
      if (img.valid[i]) EXPECT_DOUBLE_EQ(img.depth[i], expect[i]);
    }
  }
}

TEST(Projection, KeepsNearestReturnAndCountsCollisions) {
  const auto m = small_model(2, 4);
  PointCloud c;
  c.points.push_back(m.direction(1, 1) * 5.0);
  c.points.push_back(m.direction(1, 1) * 3.0);
  c.points.push_back(m.direction(1, 1) * 4.0);
  ProjectionStats stats;
  const auto img = project_cylindrical(c, m, &stats);
  EXPECT_DOUBLE_EQ(img.at(1, 1), 3.0);
  EXPECT_EQ(stats.collisions, 2u);
  EXPECT_EQ(stats.projected, 3u);
}

TEST(Backproject, InvalidImageGivesEmptyCloud) { EXPECT_TRUE(backproject(RangeImage(small_model(3, 5))).empty()); }

TEST(Backproject, CellCenterPointsAreFixedPoints) {
  const auto m = ProjectionModel::hdl64(16, 64);
  Rng rng(3);
  std::uniform_real_distribution<double> u(1.0, 50.0);
  PointCloud c;
  for (int r = 0; r < m.rows; r += 3)
    for (int col = 0; col < m.cols; col += 5) c.points.push_back(m.direction(r, col) * u(rng));
  const auto back = backproject(project_cylindrical(c, m));
  ASSERT_EQ(back.size(), c.size());
  // Both clouds are in row-major cell order.
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_LT((back.points[i] - c.points[i]).norm(), 1e-9);
}

TEST(Backproject, ArbitraryRoundtripWithinHalfBin) {
  const auto m = ProjectionModel::hdl64(32, 128);
  Rng rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  PointCloud c;
  for (int i = 0; i < 400; ++i)
    c.points.push_back(from_angles(m.elevation_min + (m.elevation_max - m.elevation_min) * u(rng), -M_PI + 2 * M_PI * u(rng),
                                   1.0 + 60.0 * u(rng)));
  const auto img = project_cylindrical(c, m);
  const auto back = backproject(img);
  // every back-projected point carries the range of an original point inside its cell
  for (const auto& b : back.points) {
    double best_angle = 1e9;
    for (const auto& p : c.points)
      if (std::abs(p.norm() - b.norm()) < 1e-9)
        best_angle = std::min(best_angle, std::acos(std::clamp(p.normalized().dot(b.normalized()), -1.0, 1.0)));
    EXPECT_LE(best_angle, 0.5 * std::hypot(m.row_height(), m.col_width()) + 1e-12);
  }
}

TEST(Projection, ModelGeometry) {
  const auto m = ProjectionModel::hdl64(64, 2048);
  EXPECT_NEAR(m.row_elevation(0), m.elevation_max - m.row_height() / 2, 1e-15);
  EXPECT_NEAR(m.col_azimuth(0), -M_PI + m.col_width() / 2, 1e-15);
  EXPECT_NEAR(m.direction(5, 7).norm(), 1.0, 1e-15);
  const auto lr = m.subsampled(4);
  EXPECT_EQ(lr.rows, 16);
  EXPECT_NEAR(lr.row_elevation(1), m.row_elevation(4), 1e-12);
  const auto up = lr.upsampled(4);
  EXPECT_EQ(up.rows, m.rows);
  EXPECT_EQ(up.cols, m.cols);
  EXPECT_NEAR(up.elevation_min, m.elevation_min, 1e-12);
  EXPECT_NEAR(up.elevation_max, m.elevation_max, 1e-12);
  EXPECT_THROW(m.subsampled(3), InvalidArgument);
  ProjectionModel bad = m;
  bad.elevation_min = bad.elevation_max;
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(Normalize, Examples) {
  const Vec3 q(1, 2, 3);
  const std::vector<Vec3> same{q, q};
  for (const auto& v : normalize_neighborhood(same, q)) EXPECT_EQ(v, Vec3::Zero());
  const std::vector<Vec3> one{Vec3(1, 2, 4)};
  EXPECT_EQ(normalize_neighborhood(one, q)[0], Vec3(0, 0, 1));
}

TEST(Normalize, SubtractionOracleAndTranslation) {
  Rng rng(4);
  const auto cloud = test::random_cloud(10, rng);
  const Vec3 q(0.3, -2.0, 5.5);
  const Vec3 t(10.0, -4.0, 0.25);
  const auto out = normalize_neighborhood(cloud.points, q);
  std::vector<Vec3> shifted;
  for (const auto& p : cloud.points) shifted.push_back(p + t);
  const auto moved = normalize_neighborhood(shifted, q + t);
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_EQ(out[i], cloud.points[i] - q);
    EXPECT_LT((moved[i] - out[i]).norm(), 1e-12);
  }
}

TEST(RangeImageType, ValidateCatchesBrokenInvariants) {
  RangeImage img(small_model(2, 2));
  img.set(0, 0, 4.0);
  img.validate();
  img.depth[1] = 3.0;  // invalid cell with a depth
  EXPECT_THROW(img.validate(), InvalidArgument);
  img.clear(0, 1);
  img.set(1, 1, -1.0);
  EXPECT_THROW(img.validate(), InvalidArgument);
}

TEST(PointCloudType, RejectsNonFinite) {
  PointCloud c;
  c.points.emplace_back(0, NAN, 0);
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(Io, KittiRoundTrip) {
  Rng rng(5);
  const auto c = test::random_cloud(100, rng);
  const auto path = temp_path("cloud.bin");
  io::write_kitti_bin(path, c);
  EXPECT_EQ(std::filesystem::file_size(path), 100u * 16u);
  const auto back = io::read_kitti_bin(path);
  ASSERT_EQ(back.size(), 100u);
  for (std::size_t i = 0; i < 100; ++i)
    EXPECT_LT((back.points[i] - c.points[i].cast<float>().cast<double>()).norm(), 1e-12);
  std::filesystem::resize_file(path, 100u * 16u - 3u);
  EXPECT_THROW(io::read_kitti_bin(path), IoError);
  EXPECT_THROW(io::read_kitti_bin(temp_path("missing.bin")), IoError);
  std::filesystem::remove(path);
}

TEST(Io, RangeImageRoundTrip) {
  RangeImage img(ProjectionModel::hdl64(4, 8));
  img.set(0, 0, 1.5);
  img.set(3, 7, 42.25);
  const auto path = temp_path("img.rimg");
  io::write_range_image(path, img);
  const auto back = io::read_range_image(path);
  EXPECT_EQ(back.valid, img.valid);
  EXPECT_EQ(back.depth, img.depth);
  EXPECT_EQ(back.rows(), 4);
  EXPECT_NEAR(back.model.elevation_min, img.model.elevation_min, 0.0);
  std::filesystem::remove(path);
}

TEST(Io, ColoredPly) {
  const std::vector<Vec3> pts{Vec3(1, 2, 3), Vec3(4, 5, 6)};
  const std::vector<io::Rgb> colors{{{255, 0, 0}}, {{0, 0, 255}}};
  const auto path = temp_path("c.ply");
  io::write_colored_ply(path, pts, colors);
  std::ifstream in(path);
  std::string all((std::istreambuf_iterator<char>(in)), {});
  EXPECT_NE(all.find("element vertex 2"), std::string::npos);
  EXPECT_NE(all.find("property uchar red"), std::string::npos);
  EXPECT_NE(all.find("0 0 255"), std::string::npos);
  EXPECT_THROW(io::write_colored_ply(path, pts, std::span<const io::Rgb>(colors.data(), 1)), InvalidArgument);
  std::filesystem::remove(path);
}
