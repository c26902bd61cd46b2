#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrm/datagen.hpp"
#include "lrm/metric.hpp"
#include "lrm/metric_train.hpp"
#include "lrm/reports.hpp"
#include "lrm/upsample.hpp"

// JSON run configuration shared by every CLI command. Missing keys keep their
// defaults; unknown keys are rejected so typos fail loudly.

namespace lrm::config {

struct RegistryConfig {
  std::string preset = "standard";  // "standard" or "custom"
  std::array<int, 3> counts{200, 0, 50};
  std::vector<datagen::DatasetSpec> datasets;  // used when preset == "custom"

  datagen::DatasetRegistry build(const ProjectionModel& projection) const;
};

struct ScoreConfig {
  bool per_query = false;
  bool ply = false;
};

struct UpsampleSection {
  std::string method = "bilinear";  // nearest | bilinear | learned
  upsample::GeneratorConfig generator = upsample::GeneratorConfig::desk();
  upsample::DiscriminatorConfig discriminator = upsample::DiscriminatorConfig::desk(32, 32);
  upsample::UpsampleTrainConfig train;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ProjectionModel projection = ProjectionModel::hdl64(32, 128);
  RegistryConfig registry;
  metric::MetricArchConfig metric = metric::MetricArchConfig::desk();
  metric::TrainConfig train;
  std::vector<double> sweep_lambdas{0.0, 0.001, 0.01, 0.1, 0.3, 1.0, 3.0, 10.0};
  ScoreConfig score;
  reports::FeatureLayout feature_layout = reports::FeatureLayout::PerQuery;
  UpsampleSection upsample;

  void validate() const;
};

/// Overlays `j` on the defaults. Throws InvalidArgument on unknown keys or bad values.
RunConfig from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& config);

RunConfig load(const std::filesystem::path& path);
void save(const std::filesystem::path& path, const RunConfig& config);

nlohmann::json projection_json(const ProjectionModel& m);
ProjectionModel projection_from_json(const nlohmann::json& j);

}  // namespace lrm::config
