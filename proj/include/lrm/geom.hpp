#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "lrm/common.hpp"

namespace lrm {

using Vec3 = Eigen::Vector3d;

/// Unordered set of sensor-relative points in meters.
struct PointCloud {
  std::vector<Vec3> points;

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }
  std::span<const Vec3> view() const noexcept { return points; }

  /// Throws if any coordinate is non-finite.
  void validate() const;
};

/// Cylindrical binning of directions into an H x W grid.
///
/// Rows are elevation bins spaced linearly over [elevation_min, elevation_max],
/// row 0 is the highest elevation. Columns split the full azimuth revolution
/// [-pi, pi) into W equal bins, column 0 starting at -pi.
struct ProjectionModel {
  int rows = 64;
  int cols = 2048;
  double elevation_min = -0.4345870;  // -24.9 deg
  double elevation_max = 0.0349066;   //  +2.0 deg
  double invalid_depth = 0.0;

  void validate() const;

  double row_height() const noexcept { return (elevation_max - elevation_min) / rows; }
  double col_width() const noexcept;
  double row_elevation(int row) const noexcept { return elevation_max - (row + 0.5) * row_height(); }
  double col_azimuth(int col) const noexcept;
  /// Unit ray direction through the center of cell (row, col).
  Vec3 direction(int row, int col) const noexcept;

  /// Model describing rows 0, f, 2f, ... of this model (row 0 phase).
  ProjectionModel subsampled(int factor) const;
  /// Inverse of subsampled(): f times as many rows covering the same directions.
  ProjectionModel upsampled(int factor) const;

  /// HDL-64-like elevation span with the given resolution.
  static ProjectionModel hdl64(int rows, int cols);

  bool operator==(const ProjectionModel&) const = default;
};

/// Dense H x W range grid with a validity mask.
struct RangeImage {
  ProjectionModel model;
  std::vector<double> depth;      // row-major, size rows*cols
  std::vector<std::uint8_t> valid;

  RangeImage() = default;
  /// All-invalid image for the model.
  explicit RangeImage(const ProjectionModel& m);

  int rows() const noexcept { return model.rows; }
  int cols() const noexcept { return model.cols; }
  std::size_t index(int r, int c) const noexcept {
    return static_cast<std::size_t>(r) * static_cast<std::size_t>(model.cols) + static_cast<std::size_t>(c);
  }
  double at(int r, int c) const noexcept { return depth[index(r, c)]; }
  bool is_valid(int r, int c) const noexcept { return valid[index(r, c)] != 0; }
  void set(int r, int c, double d) noexcept {
    depth[index(r, c)] = d;
    valid[index(r, c)] = 1;
  }
  void clear(int r, int c) noexcept {
    depth[index(r, c)] = model.invalid_depth;
    valid[index(r, c)] = 0;
  }
  std::size_t valid_count() const noexcept;

  /// Checks the invariants: finite depths, invalid cells at invalid_depth, valid depths > 0.
  void validate() const;
};

struct ProjectionStats {
  std::size_t projected = 0;
  std::size_t dropped_elevation = 0;  // outside [elevation_min, elevation_max]
  std::size_t collisions = 0;         // points that landed on an occupied cell
};

/// Bins each point to its (row, col) cell, keeping the nearest return per cell.
RangeImage project_cylindrical(const PointCloud& cloud, const ProjectionModel& model,
                               ProjectionStats* stats = nullptr);

/// One point per valid cell, placed along the cell-center ray at the stored range.
PointCloud backproject(const RangeImage& image);

/// Translates neighbors so the query sits at the origin.
std::vector<Vec3> normalize_neighborhood(std::span<const Vec3> neighbors, const Vec3& query);

}  // namespace lrm
