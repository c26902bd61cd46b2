#pragma once

#include <span>
#include <string>
#include <vector>

#include "lrm/geom.hpp"

namespace lrm::baselines {

/// Symmetric mean nearest-neighbor distance in meters, exact.
double chamfer(const PointCloud& pred, const PointCloud& target);

struct ImageErrors {
  double mae = 0.0;  // meters
  double mse = 0.0;  // square meters
  std::size_t count = 0;
};

/// Errors over cells valid in both images. Throws if no cell is jointly valid.
ImageErrors image_errors(const RangeImage& pred, const RangeImage& target);

struct CovMmd {
  double coverage = 1.0;
  double mmd = 0.0;
};

/// Paired translation makes every target covered by its own prediction, so
/// coverage is 1 and MMD reduces to the mean pairwise Chamfer distance.
CovMmd paired_cov_mmd(std::span<const PointCloud> pred, std::span<const PointCloud> target);

struct BaselineRow {
  std::string scene_id;
  std::string method;
  double cd_m = 0.0;
  double mae_m = 0.0;
  double mse_m2 = 0.0;

  bool operator==(const BaselineRow&) const = default;
};

struct Aggregate {
  std::string method;
  BaselineRow mean;
  BaselineRow stddev;  // population standard deviation
};

/// Mean and standard deviation per method, methods in first-seen order.
std::vector<Aggregate> aggregate(std::span<const BaselineRow> rows);

/// Scores one predicted scene against its target on both the cloud and the image.
BaselineRow evaluate_pair(const std::string& scene_id, const std::string& method, const RangeImage& pred,
                          const RangeImage& target);

namespace serial {
/// Exhaustive O(|A||B|) reference.
double chamfer(const PointCloud& pred, const PointCloud& target);
}  // namespace serial

}  // namespace lrm::baselines
