#include "lrm/metric_train.hpp"

#include <cmath>

namespace lrm::metric {

void TrainConfig::validate() const {
  LRM_REQUIRE(steps >= 0, "step count must be nonnegative");
  LRM_REQUIRE(per_category >= 1, "batch needs at least one sample per category");
  LRM_REQUIRE(lambda >= 0.0 && std::isfinite(lambda), "lambda must be finite and nonnegative");
  LRM_REQUIRE(eval_every >= 1, "eval cadence must be positive");
}

namespace {

struct SampleEval {
  double classifier = 0.0;
  bool scene_correct = false;
  double adversary = 0.0;
  bool adversary_counted = false;
};

SampleEval evaluate_one(const MetricModel<float>& model, const PreparedSample& s) {
  const auto features = model.extract_features(s.hood);
  const MetricScores scores = model.classify(features);
  SampleEval e;
  const int label = index_of(s.category);
  const Eigen::Index q = scores.per_query.rows();
  int hits = 0;
  for (Eigen::Index i = 0; i < q; ++i) {
    Eigen::Index arg = 0;
    scores.per_query.row(i).maxCoeff(&arg);
    hits += arg == label;
  }
  e.classifier = static_cast<double>(hits) / static_cast<double>(q);
  e.scene_correct = scores.argmax() == s.category;
  const int width = model.config().adversary_outputs[static_cast<std::size_t>(label)];
  if (s.dataset_id < width) {
    const auto probs = model.adversary_predict(features, s.category);
    int adv_hits = 0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
      Eigen::Index arg = 0;
      probs.row(i).maxCoeff(&arg);
      adv_hits += arg == s.dataset_id;
    }
    e.adversary = static_cast<double>(adv_hits) / static_cast<double>(probs.rows());
    e.adversary_counted = true;
  }
  return e;
}

}  // namespace

Accuracy evaluate(const MetricModel<float>& model, std::span<const PreparedSample> samples) {
  LRM_REQUIRE(!samples.empty(), "evaluation set is empty");
  std::vector<SampleEval> evals(samples.size());
  const auto n = static_cast<std::ptrdiff_t>(samples.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i)
    evals[static_cast<std::size_t>(i)] = evaluate_one(model, samples[static_cast<std::size_t>(i)]);

  Accuracy acc;
  std::array<double, kCategories> adv_sum{};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    acc.classifier += evals[i].classifier;
    acc.scene += evals[i].scene_correct ? 1.0 : 0.0;
    if (evals[i].adversary_counted) {
      const auto c = static_cast<std::size_t>(index_of(samples[i].category));
      adv_sum[c] += evals[i].adversary;
      ++acc.samples[c];
    }
  }
  acc.classifier /= static_cast<double>(samples.size());
  acc.scene /= static_cast<double>(samples.size());
  int total = 0;
  for (std::size_t c = 0; c < kCategories; ++c) {
    acc.chance[c] = 1.0 / model.config().adversary_outputs[c];
    if (acc.samples[c] > 0) acc.adversary[c] = adv_sum[c] / acc.samples[c];
    acc.adversary_weighted += acc.adversary[c] * acc.samples[c];
    acc.weighted_chance += acc.chance[c] * acc.samples[c];
    total += acc.samples[c];
  }
  if (total > 0) {
    acc.adversary_weighted /= total;
    acc.weighted_chance /= total;
  }
  return acc;
}

TrainResult train_metric(std::span<const PreparedSample> train, std::span<const PreparedSample> val,
                         const MetricArchConfig& arch, const TrainConfig& config,
                         const std::function<void(const HistoryRow&)>& on_log) {
  config.validate();
  arch.validate();
  std::array<std::vector<std::size_t>, kCategories> pools;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& s = train[i];
    const auto c = static_cast<std::size_t>(index_of(s.category));
    LRM_REQUIRE(s.dataset_id >= 0 && s.dataset_id < arch.adversary_outputs[c],
                "training sample dataset_id exceeds its adversary width");
    pools[c].push_back(i);
  }
  for (auto c : kAllCategories)
    LRM_REQUIRE(!pools[static_cast<std::size_t>(index_of(c))].empty(),
                "training set has no samples of category " + std::string(category_name(c)));

  TrainResult result{MetricModel<float>(arch, derive_seed(config.seed, fnv1a("init"))), {}};
  result.history.lambda = config.lambda;
  MetricModel<float>& model = result.model;
  nn::Adam<float> adam(model.params(), config.adam);

  std::vector<PreparedSample> batch;
  for (int step = 0; step < config.steps; ++step) {
    Rng rng(derive_seed(config.seed, fnv1a("batch"), static_cast<std::uint64_t>(step)));
    std::vector<const PreparedSample*> picks;
    for (const auto& pool : pools) {
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      for (int k = 0; k < config.per_category; ++k) picks.push_back(&train[pool[pick(rng)]]);
    }
    batch.clear();
    for (const auto* p : picks) batch.push_back(*p);

    LossOptions opts;
    opts.seed = derive_seed(config.seed, fnv1a("dropout"), static_cast<std::uint64_t>(step));
    opts.include_adversaries = config.adversaries;
    LossResult<float> loss;
    try {
      loss = model.metric_loss(batch, static_cast<float>(config.lambda), opts);
      adam.update(model.params(), loss.grads);
    } catch (const NonFiniteError& e) {
      throw DivergenceError(step, e.what());
    }

    const bool last = step + 1 == config.steps;
    if ((step + 1) % config.eval_every == 0 || last) {
      HistoryRow row;
      row.step = step + 1;
      row.loss = loss.loss;
      if (!val.empty()) {
        const Accuracy acc = evaluate(model, val);
        row.classifier_acc = acc.classifier;
        row.adv_acc = acc.adversary;
        row.adv_weighted_acc = acc.adversary_weighted;
      }
      result.history.rows.push_back(row);
      if (on_log) on_log(row);
    }
  }
  return result;
}

}  // namespace lrm::metric
