#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "lrm/metric.hpp"
#include "lrm/nn/optim.hpp"

namespace lrm::metric {

struct TrainConfig {
  int steps = 2000;
  int per_category = 2;  // stratified batch of 3 * per_category samples
  double lambda = 0.3;
  std::uint64_t seed = 0;
  int eval_every = 100;
  bool adversaries = true;
  nn::AdamConfig adam;

  void validate() const;
};

/// Per-query accuracies of every head on a labeled set.
struct Accuracy {
  double classifier = 0.0;      // per-query argmax vs category, averaged per sample
  double scene = 0.0;           // argmax of the scene score vs category
  std::array<double, kCategories> adversary{};  // within-category dataset accuracy
  std::array<int, kCategories> samples{};       // evaluated samples per category
  double adversary_weighted = 0.0;              // adversary accuracy weighted by samples
  std::array<double, kCategories> chance{};     // 1 / U_A
  double weighted_chance = 0.0;
};

/// Held-out samples (dataset_id >= U_A) count for the classifier but not the adversaries.
Accuracy evaluate(const MetricModel<float>& model, std::span<const PreparedSample> samples);

struct HistoryRow {
  std::int64_t step = 0;
  double classifier_acc = 0.0;
  std::array<double, kCategories> adv_acc{};
  double adv_weighted_acc = 0.0;
  double loss = 0.0;  // training loss of the logged step
};

struct History {
  double lambda = 0.3;
  std::vector<HistoryRow> rows;
};

struct TrainResult {
  MetricModel<float> model;
  History history;
};

/// Seeded, deterministic adversarial training. Throws DivergenceError on a non-finite step.
TrainResult train_metric(std::span<const PreparedSample> train, std::span<const PreparedSample> val,
                         const MetricArchConfig& arch, const TrainConfig& config,
                         const std::function<void(const HistoryRow&)>& on_log = {});

}  // namespace lrm::metric
