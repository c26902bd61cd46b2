#include "lrm/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace lrm::spatial {
namespace {

constexpr int kExhaustiveBelow = 64;

struct Best {
  double d;
  int i;
};

// Larger distance wins, ties to the lower index.
inline Best better(const Best& a, const Best& b) noexcept {
  if (a.d > b.d) return a;
  if (b.d > a.d) return b;
  return a.i <= b.i ? a : b;
}

#pragma omp declare reduction(fps_best:Best : omp_out = better(omp_out, omp_in)) \
    initializer(omp_priv = Best{-1.0, std::numeric_limits<int>::max()})

inline bool less_pair(const std::pair<double, int>& a, const std::pair<double, int>& b) noexcept {
  return a.first < b.first || (a.first == b.first && a.second < b.second);
}

void check_start(std::span<const Vec3> cloud, int start) {
  LRM_REQUIRE(start >= 0 && static_cast<std::size_t>(start) < cloud.size(), "FPS start index out of range");
}

IndexSet pad_cyclic(IndexSet picked, int count) {
  const std::size_t n = picked.size();
  picked.reserve(static_cast<std::size_t>(count));
  for (std::size_t i = n; i < static_cast<std::size_t>(count); ++i) picked.push_back(picked[i % n]);
  return picked;
}

void fill_row(std::vector<std::pair<double, int>>& found, int k, int* row) {
  for (int j = 0; j < k; ++j) row[j] = j < static_cast<int>(found.size()) ? found[j].second : found.front().second;
}

void exhaustive_nearest(std::span<const Vec3> cloud, const Vec3& q, int k, std::vector<std::pair<double, int>>& out) {
  out.clear();
  out.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) out.emplace_back(squared_distance(cloud[i], q), static_cast<int>(i));
  const auto keep = std::min<std::size_t>(static_cast<std::size_t>(k), out.size());
  std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(keep), out.end(), less_pair);
  out.resize(keep);
}

}  // namespace

int fps_start_index(std::span<const Vec3> cloud) {
  LRM_REQUIRE(!cloud.empty(), "farthest point sampling needs a nonempty cloud");
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : cloud) centroid += p;
  centroid /= static_cast<double>(cloud.size());
  Best best{-1.0, 0};
  for (std::size_t i = 0; i < cloud.size(); ++i) best = better(best, {squared_distance(cloud[i], centroid), static_cast<int>(i)});
  return best.i;
}

IndexSet farthest_point_sample(std::span<const Vec3> cloud, int count, std::optional<int> start) {
  LRM_REQUIRE(!cloud.empty(), "farthest point sampling needs a nonempty cloud");
  LRM_REQUIRE(count >= 0, "negative sample count");
  if (count == 0) return {};
  const int first = start ? *start : fps_start_index(cloud);
  check_start(cloud, first);
  const int n = static_cast<int>(cloud.size());
  const int distinct = std::min(count, n);
  std::vector<double> min_d(cloud.size(), std::numeric_limits<double>::infinity());
  IndexSet picked;
  picked.reserve(static_cast<std::size_t>(count));
  picked.push_back(first);
  min_d[static_cast<std::size_t>(first)] = -1.0;
  int last = first;
  for (int s = 1; s < distinct; ++s) {
    Best best{-1.0, std::numeric_limits<int>::max()};
    const Vec3 anchor = cloud[static_cast<std::size_t>(last)];
#pragma omp parallel for schedule(static) reduction(fps_best : best)
    for (int i = 0; i < n; ++i) {
      double& m = min_d[static_cast<std::size_t>(i)];
      if (m < 0.0) continue;
      m = std::min(m, squared_distance(cloud[static_cast<std::size_t>(i)], anchor));
      best = better(best, {m, i});
    }
    last = best.i;
    min_d[static_cast<std::size_t>(last)] = -1.0;
    picked.push_back(last);
  }
  return pad_cyclic(std::move(picked), count);
}

GridIndex::GridIndex(std::span<const Vec3> points, double points_per_cell) : points_(points) {
  LRM_REQUIRE(!points.empty(), "grid index needs a nonempty cloud");
  Vec3 lo = points[0];
  Vec3 hi = points[0];
  for (const Vec3& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  origin_ = lo;
  Vec3 ext = hi - lo;
  const double max_ext = std::max(ext.maxCoeff(), 1e-12);
  // Degenerate axes get a single layer of cells.
  double volume = 1.0;
  int live_axes = 0;
  for (int a = 0; a < 3; ++a) {
    if (ext[a] > 1e-9 * max_ext) {
      volume *= ext[a];
      ++live_axes;
    }
  }
  const double per_cell = std::max(points_per_cell, 1.0);
  cell_ = std::pow(volume * per_cell / static_cast<double>(points.size()), 1.0 / std::max(live_axes, 1));
  cell_ = std::max(cell_, max_ext / 512.0);
  if (!(cell_ > 0.0) || !std::isfinite(cell_)) cell_ = 1.0;
  std::size_t total = 1;
  for (int a = 0; a < 3; ++a) {
    dims_[a] = std::max(1, static_cast<int>(std::floor(ext[a] / cell_)) + 1);
    total *= static_cast<std::size_t>(dims_[a]);
  }
  std::vector<int> cell_of(points.size());
  cell_start_.assign(total + 1, 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3& p = points[i];
    const std::size_t c = (static_cast<std::size_t>(cell_coord(p.z(), 2)) * dims_[1] + cell_coord(p.y(), 1)) * dims_[0] +
                          cell_coord(p.x(), 0);
    cell_of[i] = static_cast<int>(c);
    ++cell_start_[c + 1];
  }
  for (std::size_t c = 0; c < total; ++c) cell_start_[c + 1] += cell_start_[c];
  cell_points_.resize(points.size());
  std::vector<int> cursor(cell_start_.begin(), cell_start_.end() - 1);
  for (std::size_t i = 0; i < points.size(); ++i) cell_points_[cursor[cell_of[i]]++] = static_cast<int>(i);
}

int GridIndex::cell_coord(double v, int axis) const noexcept {
  const int c = static_cast<int>(std::floor((v - origin_[axis]) / cell_));
  return std::clamp(c, 0, dims_[axis] - 1);
}

void GridIndex::nearest(const Vec3& query, int k, std::vector<std::pair<double, int>>& out) const {
  out.clear();
  if (k <= 0) return;
  const int want = std::min<int>(k, static_cast<int>(points_.size()));
  auto cmp = [](const std::pair<double, int>& a, const std::pair<double, int>& b) { return less_pair(a, b); };
  std::priority_queue<std::pair<double, int>, std::vector<std::pair<double, int>>, decltype(cmp)> heap(cmp);
  const int qc[3] = {cell_coord(query.x(), 0), cell_coord(query.y(), 1), cell_coord(query.z(), 2)};
  const double inf = std::numeric_limits<double>::infinity();

  auto visit_cell = [&](int x, int y, int z) {
    const std::size_t c = (static_cast<std::size_t>(z) * dims_[1] + y) * dims_[0] + x;
    for (int p = cell_start_[c]; p < cell_start_[c + 1]; ++p) {
      const int idx = cell_points_[p];
      std::pair<double, int> cand{squared_distance(points_[idx], query), idx};
      if (static_cast<int>(heap.size()) < want) {
        heap.push(cand);
      } else if (less_pair(cand, heap.top())) {
        heap.pop();
        heap.push(cand);
      }
    }
  };

  for (int r = 0;; ++r) {
    const int lo[3] = {qc[0] - r, qc[1] - r, qc[2] - r};
    const int hi[3] = {qc[0] + r, qc[1] + r, qc[2] + r};
    for (int z = std::max(lo[2], 0); z <= std::min(hi[2], dims_[2] - 1); ++z) {
      const bool z_edge = z == lo[2] || z == hi[2];
      for (int y = std::max(lo[1], 0); y <= std::min(hi[1], dims_[1] - 1); ++y) {
        const bool y_edge = y == lo[1] || y == hi[1];
        if (z_edge || y_edge) {
          for (int x = std::max(lo[0], 0); x <= std::min(hi[0], dims_[0] - 1); ++x) visit_cell(x, y, z);
        } else {
          if (lo[0] >= 0) visit_cell(lo[0], y, z);
          if (hi[0] < dims_[0] && hi[0] != lo[0]) visit_cell(hi[0], y, z);
        }
      }
    }
    // Distance from the query to any cell outside the explored cube.
    double bound = inf;
    bool covers_all = true;
    for (int a = 0; a < 3; ++a) {
      if (lo[a] > 0) {
        covers_all = false;
        bound = std::min(bound, query[a] - (origin_[a] + lo[a] * cell_));
      }
      if (hi[a] < dims_[a] - 1) {
        covers_all = false;
        bound = std::min(bound, (origin_[a] + (hi[a] + 1) * cell_) - query[a]);
      }
    }
    if (covers_all) break;
    bound = std::max(bound, 0.0);
    if (static_cast<int>(heap.size()) == want && heap.top().first < bound * bound) break;
  }
  out.resize(heap.size());
  for (std::size_t i = heap.size(); i-- > 0;) {
    out[i] = heap.top();
    heap.pop();
  }
}

NeighborGrid knn(std::span<const Vec3> cloud, std::span<const Vec3> queries, int k) {
  LRM_REQUIRE(!cloud.empty(), "knn needs a nonempty cloud");
  LRM_REQUIRE(k >= 1, "knn needs k >= 1");
  NeighborGrid grid{static_cast<int>(queries.size()), k, std::vector<int>(queries.size() * static_cast<std::size_t>(k))};
  const int nq = static_cast<int>(queries.size());
  if (cloud.size() < static_cast<std::size_t>(kExhaustiveBelow)) {
#pragma omp parallel
    {
      std::vector<std::pair<double, int>> found;
#pragma omp for schedule(static)
      for (int q = 0; q < nq; ++q) {
        exhaustive_nearest(cloud, queries[static_cast<std::size_t>(q)], k, found);
        fill_row(found, k, grid.indices.data() + static_cast<std::size_t>(q) * k);
      }
    }
    return grid;
  }
  const GridIndex index(cloud);
#pragma omp parallel
  {
    std::vector<std::pair<double, int>> found;
#pragma omp for schedule(dynamic, 16)
    for (int q = 0; q < nq; ++q) {
      index.nearest(queries[static_cast<std::size_t>(q)], k, found);
      fill_row(found, k, grid.indices.data() + static_cast<std::size_t>(q) * k);
    }
  }
  return grid;
}

NeighborGrid knn(std::span<const Vec3> cloud, const IndexSet& query_indices, int k) {
  std::vector<Vec3> queries;
  queries.reserve(query_indices.size());
  for (int i : query_indices) {
    LRM_REQUIRE(i >= 0 && static_cast<std::size_t>(i) < cloud.size(), "knn query index out of range");
    queries.push_back(cloud[static_cast<std::size_t>(i)]);
  }
  return knn(cloud, queries, k);
}

std::vector<Vec3> group(std::span<const Vec3> source, const NeighborGrid& grid) {
  std::vector<Vec3> out;
  out.reserve(grid.indices.size());
  for (int idx : grid.indices) {
    LRM_REQUIRE(idx >= 0 && static_cast<std::size_t>(idx) < source.size(), "group index out of range");
    out.push_back(source[static_cast<std::size_t>(idx)]);
  }
  return out;
}

namespace serial {

IndexSet farthest_point_sample(std::span<const Vec3> cloud, int count, std::optional<int> start) {
  LRM_REQUIRE(!cloud.empty(), "farthest point sampling needs a nonempty cloud");
  LRM_REQUIRE(count >= 0, "negative sample count");
  if (count == 0) return {};
  const int first = start ? *start : fps_start_index(cloud);
  check_start(cloud, first);
  const std::size_t n = cloud.size();
  const auto distinct = std::min<std::size_t>(static_cast<std::size_t>(count), n);
  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
  std::vector<bool> taken(n, false);
  IndexSet picked{first};
  taken[static_cast<std::size_t>(first)] = true;
  while (picked.size() < distinct) {
    const Vec3& anchor = cloud[static_cast<std::size_t>(picked.back())];
    Best best{-1.0, std::numeric_limits<int>::max()};
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      min_d[i] = std::min(min_d[i], squared_distance(cloud[i], anchor));
      best = better(best, {min_d[i], static_cast<int>(i)});
    }
    taken[static_cast<std::size_t>(best.i)] = true;
    picked.push_back(best.i);
  }
  return pad_cyclic(std::move(picked), count);
}

NeighborGrid knn(std::span<const Vec3> cloud, std::span<const Vec3> queries, int k) {
  LRM_REQUIRE(!cloud.empty(), "knn needs a nonempty cloud");
  LRM_REQUIRE(k >= 1, "knn needs k >= 1");
  NeighborGrid grid{static_cast<int>(queries.size()), k, std::vector<int>(queries.size() * static_cast<std::size_t>(k))};
  std::vector<std::pair<double, int>> found;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    exhaustive_nearest(cloud, queries[q], k, found);
    fill_row(found, k, grid.indices.data() + q * static_cast<std::size_t>(k));
  }
  return grid;
}

}  // namespace serial
}  // namespace lrm::spatial
