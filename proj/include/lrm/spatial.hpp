#pragma once

#include <Eigen/Core>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "lrm/geom.hpp"

namespace lrm::spatial {

/// Indices into a referenced point sequence.
using IndexSet = std::vector<int>;

/// Q x K grid of point indices, row q holding the neighbors of query q.
struct NeighborGrid {
  int queries = 0;
  int k = 0;
  std::vector<int> indices;

  int at(int q, int j) const noexcept { return indices[static_cast<std::size_t>(q) * k + j]; }
  std::span<const int> row(int q) const noexcept {
    return {indices.data() + static_cast<std::size_t>(q) * k, static_cast<std::size_t>(k)};
  }
  bool operator==(const NeighborGrid&) const = default;
};

/// Squared Euclidean distance with a fixed evaluation order; every search path
/// compares distances produced by this function.
inline double squared_distance(const Vec3& a, const Vec3& b) noexcept {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

/// Point farthest from the centroid, ties to the lowest index.
int fps_start_index(std::span<const Vec3> cloud);

/// Greedy max-min sampling. Without an explicit start, fps_start_index() is used.
/// For count > N the first N picks repeat cyclically.
IndexSet farthest_point_sample(std::span<const Vec3> cloud, int count, std::optional<int> start = std::nullopt);

/// Exact K nearest neighbors per query, ascending by distance, ties to the lower
/// index. When k > N the nearest index fills the remaining slots.
NeighborGrid knn(std::span<const Vec3> cloud, std::span<const Vec3> queries, int k);
NeighborGrid knn(std::span<const Vec3> cloud, const IndexSet& query_indices, int k);

/// Uniform voxel grid answering exact KNN queries by expanding cell shells.
class GridIndex {
 public:
  explicit GridIndex(std::span<const Vec3> points, double points_per_cell = 4.0);

  /// Sorted (squared distance, index) pairs for the min(k, N) nearest points.
  void nearest(const Vec3& query, int k, std::vector<std::pair<double, int>>& out) const;

  std::size_t size() const noexcept { return points_.size(); }

 private:
  std::span<const Vec3> points_;
  Vec3 origin_ = Vec3::Zero();
  double cell_ = 1.0;
  int dims_[3] = {1, 1, 1};
  std::vector<int> cell_start_;
  std::vector<int> cell_points_;

  int cell_coord(double v, int axis) const noexcept;
};

/// Gathers rows of `source` into a (Q*K) x C block, row q*K + j = source.row(grid.at(q, j)).
template <typename Matrix>
Matrix group(const Matrix& source, const NeighborGrid& grid) {
  Matrix out(static_cast<Eigen::Index>(grid.indices.size()), source.cols());
  for (std::size_t i = 0; i < grid.indices.size(); ++i) {
    const int idx = grid.indices[i];
    LRM_REQUIRE(idx >= 0 && idx < source.rows(), "group index out of range");
    out.row(static_cast<Eigen::Index>(i)) = source.row(idx);
  }
  return out;
}

std::vector<Vec3> group(std::span<const Vec3> source, const NeighborGrid& grid);

/// Single-threaded exhaustive reference kernels; the parallel paths must agree
/// with these exactly.
namespace serial {
IndexSet farthest_point_sample(std::span<const Vec3> cloud, int count, std::optional<int> start = std::nullopt);
NeighborGrid knn(std::span<const Vec3> cloud, std::span<const Vec3> queries, int k);
}  // namespace serial

}  // namespace lrm::spatial
