#include "lrm/geom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace lrm {

void PointCloud::validate() const {
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!points[i].allFinite()) throw InvalidArgument("non-finite coordinate at point " + std::to_string(i));
  }
}

void ProjectionModel::validate() const {
  LRM_REQUIRE(rows >= 1 && cols >= 1, "projection model needs rows >= 1 and cols >= 1");
  LRM_REQUIRE(std::isfinite(elevation_min) && std::isfinite(elevation_max) && elevation_min < elevation_max,
              "projection model needs elevation_min < elevation_max");
  LRM_REQUIRE(std::isfinite(invalid_depth), "invalid_depth must be finite");
}

double ProjectionModel::col_width() const noexcept { return 2.0 * std::numbers::pi / cols; }

double ProjectionModel::col_azimuth(int col) const noexcept { return -std::numbers::pi + (col + 0.5) * col_width(); }

Vec3 ProjectionModel::direction(int row, int col) const noexcept {
  const double theta = row_elevation(row);
  const double phi = col_azimuth(col);
  return {std::cos(theta) * std::cos(phi), std::cos(theta) * std::sin(phi), std::sin(theta)};
}

ProjectionModel ProjectionModel::subsampled(int factor) const {
  LRM_REQUIRE(factor >= 1, "subsample factor must be >= 1");
  LRM_REQUIRE(rows % factor == 0, "rows not divisible by subsample factor");
  ProjectionModel m = *this;
  const double shift = 0.5 * (factor - 1) * row_height();
  m.rows = rows / factor;
  m.elevation_max = elevation_max + shift;
  m.elevation_min = elevation_min + shift;
  return m;
}

ProjectionModel ProjectionModel::upsampled(int factor) const {
  LRM_REQUIRE(factor >= 1, "upsample factor must be >= 1");
  ProjectionModel m = *this;
  const double fine = row_height() / factor;
  const double shift = 0.5 * (factor - 1) * fine;
  m.rows = rows * factor;
  m.elevation_max = elevation_max - shift;
  m.elevation_min = elevation_min - shift;
  return m;
}

ProjectionModel ProjectionModel::hdl64(int rows, int cols) {
  ProjectionModel m;
  m.rows = rows;
  m.cols = cols;
  m.elevation_min = -24.9 * std::numbers::pi / 180.0;
  m.elevation_max = 2.0 * std::numbers::pi / 180.0;
  return m;
}

RangeImage::RangeImage(const ProjectionModel& m)
    : model(m),
      depth(static_cast<std::size_t>(m.rows) * static_cast<std::size_t>(m.cols), m.invalid_depth),
      valid(depth.size(), 0) {}

std::size_t RangeImage::valid_count() const noexcept {
  std::size_t n = 0;
  for (auto v : valid) n += v != 0;
  return n;
}

void RangeImage::validate() const {
  model.validate();
  const std::size_t n = static_cast<std::size_t>(model.rows) * static_cast<std::size_t>(model.cols);
  LRM_REQUIRE(depth.size() == n && valid.size() == n, "range image size does not match its model");
  for (std::size_t i = 0; i < n; ++i) {
    LRM_REQUIRE(std::isfinite(depth[i]), "range image holds a non-finite depth");
    if (valid[i]) {
      LRM_REQUIRE(depth[i] > 0.0, "valid range image cell with non-positive depth");
    } else {
      LRM_REQUIRE(depth[i] == model.invalid_depth, "invalid range image cell not at invalid_depth");
    }
  }
}

RangeImage project_cylindrical(const PointCloud& cloud, const ProjectionModel& model, ProjectionStats* stats) {
  model.validate();
  RangeImage image(model);
  ProjectionStats local;
  const double dtheta = model.row_height();
  const double dphi = model.col_width();
  for (const Vec3& p : cloud.points) {
    if (!p.allFinite()) throw InvalidArgument("non-finite point in projection");
    const double r = std::sqrt(p.x() * p.x() + p.y() * p.y() + p.z() * p.z());
    if (r == 0.0) throw InvalidArgument("point at the sensor origin has no direction");
    const double theta = std::asin(std::clamp(p.z() / r, -1.0, 1.0));
    if (theta < model.elevation_min || theta > model.elevation_max) {
      ++local.dropped_elevation;
      continue;
    }
    int row = static_cast<int>(std::floor((model.elevation_max - theta) / dtheta));
    row = std::clamp(row, 0, model.rows - 1);
    const double phi = std::atan2(p.y(), p.x());
    int col = static_cast<int>(std::floor((phi + std::numbers::pi) / dphi));
    col %= model.cols;
    if (col < 0) col += model.cols;
    const std::size_t idx = image.index(row, col);
    if (image.valid[idx]) {
      ++local.collisions;
      if (r < image.depth[idx]) image.depth[idx] = r;
    } else {
      image.depth[idx] = r;
      image.valid[idx] = 1;
    }
    ++local.projected;
  }
  if (stats) *stats = local;
  return image;
}

PointCloud backproject(const RangeImage& image) {
  PointCloud out;
  out.points.reserve(image.valid_count());
  for (int r = 0; r < image.rows(); ++r) {
    for (int c = 0; c < image.cols(); ++c) {
      if (!image.is_valid(r, c)) continue;
      out.points.push_back(image.model.direction(r, c) * image.at(r, c));
    }
  }
  return out;
}

std::vector<Vec3> normalize_neighborhood(std::span<const Vec3> neighbors, const Vec3& query) {
  std::vector<Vec3> out;
  out.reserve(neighbors.size());
  for (const Vec3& n : neighbors) out.push_back(n - query);
  return out;
}

}  // namespace lrm
