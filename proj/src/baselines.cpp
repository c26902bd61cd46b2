#include "lrm/baselines.hpp"

#include <cmath>
#include <limits>

#include "lrm/spatial.hpp"

namespace lrm::baselines {
namespace {

// Per-point work runs in parallel; the sum is taken serially in index order.
double mean_nearest(const std::vector<Vec3>& from, const spatial::GridIndex& to) {
  std::vector<double> d(from.size());
  const auto n = static_cast<std::ptrdiff_t>(from.size());
#pragma omp parallel
  {
    std::vector<std::pair<double, int>> found;
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      to.nearest(from[static_cast<std::size_t>(i)], 1, found);
      d[static_cast<std::size_t>(i)] = std::sqrt(found.front().first);
    }
  }
  double sum = 0.0;
  for (double v : d) sum += v;
  return sum / static_cast<double>(from.size());
}

double mean_nearest_exhaustive(const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
  double sum = 0.0;
  for (const Vec3& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& q : to) best = std::min(best, spatial::squared_distance(q, p));
    sum += std::sqrt(best);
  }
  return sum / static_cast<double>(from.size());
}

}  // namespace

double chamfer(const PointCloud& pred, const PointCloud& target) {
  LRM_REQUIRE(!pred.empty() && !target.empty(), "Chamfer distance needs two nonempty clouds");
  const spatial::GridIndex pred_index(pred.view());
  const spatial::GridIndex target_index(target.view());
  return mean_nearest(pred.points, target_index) + mean_nearest(target.points, pred_index);
}

double serial::chamfer(const PointCloud& pred, const PointCloud& target) {
  LRM_REQUIRE(!pred.empty() && !target.empty(), "Chamfer distance needs two nonempty clouds");
  return mean_nearest_exhaustive(pred.points, target.points) + mean_nearest_exhaustive(target.points, pred.points);
}

ImageErrors image_errors(const RangeImage& pred, const RangeImage& target) {
  LRM_REQUIRE(pred.rows() == target.rows() && pred.cols() == target.cols(), "image shapes differ");
  ImageErrors e;
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  for (std::size_t i = 0; i < pred.depth.size(); ++i) {
    if (!pred.valid[i] || !target.valid[i]) continue;
    const double d = pred.depth[i] - target.depth[i];
    abs_sum += std::abs(d);
    sq_sum += d * d;
    ++e.count;
  }
  if (e.count == 0) throw InvalidArgument("no jointly valid cells to compare");
  e.mae = abs_sum / static_cast<double>(e.count);
  e.mse = sq_sum / static_cast<double>(e.count);
  return e;
}

CovMmd paired_cov_mmd(std::span<const PointCloud> pred, std::span<const PointCloud> target) {
  LRM_REQUIRE(!pred.empty(), "coverage/MMD needs at least one pair");
  LRM_REQUIRE(pred.size() == target.size(), "coverage/MMD needs equally long paired sets");
  CovMmd r;
  for (std::size_t i = 0; i < pred.size(); ++i) r.mmd += chamfer(pred[i], target[i]);
  r.mmd /= static_cast<double>(pred.size());
  return r;
}

std::vector<Aggregate> aggregate(std::span<const BaselineRow> rows) {
  std::vector<Aggregate> out;
  std::vector<std::vector<const BaselineRow*>> groups;
  for (const auto& r : rows) {
    std::size_t g = 0;
    while (g < out.size() && out[g].method != r.method) ++g;
    if (g == out.size()) {
      out.push_back({r.method, {}, {}});
      groups.emplace_back();
    }
    groups[g].push_back(&r);
  }
  for (std::size_t g = 0; g < out.size(); ++g) {
    const double n = static_cast<double>(groups[g].size());
    auto& m = out[g].mean;
    auto& s = out[g].stddev;
    m.scene_id = "mean";
    s.scene_id = "std";
    m.method = s.method = out[g].method;
    for (const auto* r : groups[g]) {
      m.cd_m += r->cd_m;
      m.mae_m += r->mae_m;
      m.mse_m2 += r->mse_m2;
    }
    m.cd_m /= n;
    m.mae_m /= n;
    m.mse_m2 /= n;
    for (const auto* r : groups[g]) {
      s.cd_m += (r->cd_m - m.cd_m) * (r->cd_m - m.cd_m);
      s.mae_m += (r->mae_m - m.mae_m) * (r->mae_m - m.mae_m);
      s.mse_m2 += (r->mse_m2 - m.mse_m2) * (r->mse_m2 - m.mse_m2);
    }
    s.cd_m = std::sqrt(s.cd_m / n);
    s.mae_m = std::sqrt(s.mae_m / n);
    s.mse_m2 = std::sqrt(s.mse_m2 / n);
  }
  return out;
}

BaselineRow evaluate_pair(const std::string& scene_id, const std::string& method, const RangeImage& pred,
                          const RangeImage& target) {
  const auto e = image_errors(pred, target);
  return {scene_id, method, chamfer(backproject(pred), backproject(target)), e.mae, e.mse};
}

}  // namespace lrm::baselines
