#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lrm/baselines.hpp"
#include "lrm/io.hpp"
#include "lrm/metric.hpp"
#include "lrm/metric_train.hpp"

// CSV reports. Numbers are written with max_digits10 significant digits so
// every value parses back to the same double; column order is fixed.

namespace lrm::reports {

/// step,classifier_acc,adv_real_acc,adv_syn_acc,adv_misc_acc,adv_weighted_acc,loss
void write_history_csv(const std::filesystem::path& path, const metric::History& history);
metric::History read_history_csv(const std::filesystem::path& path, double lambda);

struct ScoreRow {
  std::string scene_id;
  std::array<double, metric::kCategories> scene{};

  bool operator==(const ScoreRow&) const = default;
};

/// scene_id,S_real,S_syn,S_misc
void write_scores_csv(const std::filesystem::path& path, std::span<const ScoreRow> rows);
std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path);

struct QueryRow {
  std::string scene_id;
  double qx = 0, qy = 0, qz = 0;
  double p_real = 0, p_syn = 0, p_misc = 0;

  bool operator==(const QueryRow&) const = default;
};

std::vector<QueryRow> query_rows(const std::string& scene_id, const metric::MetricScores& scores);

/// scene_id,qx,qy,qz,p_real,p_syn,p_misc
void write_query_csv(const std::filesystem::path& path, std::span<const QueryRow> rows);
std::vector<QueryRow> read_query_csv(const std::filesystem::path& path);

/// scene_id,method,cd_m,mae_m,mse_m2. Per-scene rows first, then one "mean"
/// and one "std" row per method.
void write_baselines_csv(const std::filesystem::path& path, std::span<const baselines::BaselineRow> rows);

struct BaselineReport {
  std::vector<baselines::BaselineRow> rows;
  std::vector<baselines::Aggregate> aggregates;
};
BaselineReport read_baselines_csv(const std::filesystem::path& path);

enum class FeatureLayout { PerQuery, Flattened };
std::string_view layout_name(FeatureLayout l);
FeatureLayout parse_layout(std::string_view name);

struct FeatureRow {
  metric::Category category = metric::Category::Real;
  int dataset_id = 0;
  std::vector<double> z;
};

/// category,dataset_id,z0..z{width-1}. PerQuery writes one row per query
/// (width U_F); Flattened writes one row per sample (width Q2 * U_F).
void write_features_csv(const std::filesystem::path& path, std::span<const FeatureRow> rows);
std::vector<FeatureRow> read_features_csv(const std::filesystem::path& path);

/// Rows for one sample in the given layout.
std::vector<FeatureRow> feature_rows(const metric::FeatureMatrix<float>& features, metric::Category category,
                                     int dataset_id, FeatureLayout layout);

/// Category colors: Real green, Syn blue, Misc red.
inline constexpr std::array<io::Rgb, metric::kCategories> kCategoryColors{
    {{40, 180, 60}, {40, 90, 220}, {220, 50, 40}}};

/// Probability-weighted blend of the category colors.
io::Rgb score_color(double p_real, double p_syn, double p_misc);

/// One vertex per query point, colored by its probabilities.
void write_score_ply(const std::filesystem::path& path, const metric::MetricScores& scores);

}  // namespace lrm::reports
