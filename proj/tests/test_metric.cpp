#include <gtest/gtest.h>

#include <numeric>

#include "lrm/metric.hpp"
#include "lrm/metric_train.hpp"
#include "support.hpp"

using namespace lrm;
using namespace lrm::metric;

namespace {

MetricArchConfig tiny_arch() {
  MetricArchConfig a;
  a.q1 = 16;
  a.k1 = 4;
  a.q2 = 4;
  a.k2 = 3;
  a.mlp1 = {6, 5, 8};
  a.mlp2 = {7, 6, 9};
  a.head_hidden = 5;
  a.adversary_outputs = {2, 2, 3};
  return a;
}

std::vector<PreparedSample> toy_batch(const MetricArchConfig& arch, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PreparedSample> batch;
  const std::array<std::pair<Category, int>, 4> labels{{{Category::Real, 1}, {Category::Syn, 0}, {Category::Misc, 2}, {Category::Real, 0}}};
  for (auto [cat, id] : labels) batch.push_back(prepare_sample({test::random_cloud(64, rng, 3.0), cat, id}, arch));
  return batch;
}

LossOptions no_dropout() {
  LossOptions o;
  o.head_mode = nn::Mode::Eval;
  return o;
}

void zero_all(nn::ParamSet<double>& p) {
  for (std::size_t i = 0; i < p.size(); ++i) p.value(i).setZero();
}

bool is_adversary(const std::string& name, std::string_view cat) {
  return name.rfind("adversary_" + std::string(cat) + "/", 0) == 0;
}

}  // namespace

TEST(MetricArch, DefaultsAndDigest) {
  const MetricArchConfig a;
  EXPECT_EQ(a.q1, 2048);
  EXPECT_EQ(a.k1, 20);
  EXPECT_EQ(a.q2, 256);
  EXPECT_EQ(a.k2, 10);
  EXPECT_EQ(a.feature_width(), 256);
  EXPECT_EQ(a.level2_input_width(), 131);
  EXPECT_EQ(a.adversary_outputs[2], 3);
  MetricArchConfig b = a;
  b.k2 = 11;
  EXPECT_NE(a.digest(), b.digest());
  b.q2 = 4096;
  EXPECT_THROW(b.validate(), InvalidArgument);
}

TEST(MetricModel, FeatureShapeFullScale) {
  Rng rng(3);
  const auto cloud = test::random_cloud(2300, rng, 30.0);
  const MetricModel<float> model(MetricArchConfig::full(), 1);
  const auto f = model.extract_features(cloud);
  EXPECT_EQ(f.z.rows(), 256);
  EXPECT_EQ(f.z.cols(), 256);
  EXPECT_EQ(f.query_points.rows(), 256);
  EXPECT_TRUE(f.z.allFinite());
}

TEST(MetricModel, RejectsTooFewPoints) {
  Rng rng(1);
  const MetricModel<double> model(tiny_arch(), 1);
  EXPECT_THROW(model.extract_features(test::random_cloud(3, rng)), InvalidArgument);
}

TEST(MetricModel, DuplicatedPointsKeepFeatures) {
  Rng rng(5);
  const auto cloud = test::random_cloud(64, rng, 4.0);
  PointCloud doubled = cloud;
  doubled.points.insert(doubled.points.end(), cloud.points.begin(), cloud.points.end());
  auto arch = tiny_arch();
  const MetricModel<double> model(arch, 11);
  const auto z = model.extract_features(cloud).z;
  arch.k1 *= 2;
  MetricModel<double> wide(arch, 11);
  wide.params() = model.params();
  const auto z2 = wide.extract_features(doubled).z;
  EXPECT_EQ((z - z2).cwiseAbs().maxCoeff(), 0.0);
}

TEST(MetricModel, ZeroWeightsGiveUniformScores) {
  Rng rng(2);
  MetricModel<double> model(tiny_arch(), 4);
  zero_all(model.params());
  const auto cloud = test::random_cloud(50, rng);
  const auto f = model.extract_features(cloud);
  const auto s = model.classify(f);
  for (Eigen::Index i = 0; i < s.per_query.rows(); ++i)
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(s.per_query(i, c), 1.0 / 3.0, 1e-15);
  for (double v : s.scene) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const auto real = model.adversary_predict(f, Category::Real);
  EXPECT_EQ(real.cols(), 2);
  EXPECT_NEAR(real(0, 0), 0.5, 1e-15);
  EXPECT_EQ(model.adversary_predict(f, Category::Misc).cols(), 3);
}

TEST(MetricModel, SceneScoreIsQueryMean) {
  Rng rng(8);
  const MetricModel<double> model(tiny_arch(), 9);
  const auto s = model.score_scene(test::random_cloud(80, rng));
  ASSERT_EQ(s.per_query.rows(), 4);
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    double mean = 0.0;
    for (Eigen::Index i = 0; i < s.per_query.rows(); ++i) mean += s.per_query(i, c);
    mean /= static_cast<double>(s.per_query.rows());
    EXPECT_DOUBLE_EQ(s.scene[static_cast<std::size_t>(c)], mean);
    EXPECT_GE(s.scene[static_cast<std::size_t>(c)], 0.0);
    EXPECT_LE(s.scene[static_cast<std::size_t>(c)], 1.0);
    total += s.scene[static_cast<std::size_t>(c)];
  }
  EXPECT_NEAR(total, 1.0, 1e-6);
  for (Eigen::Index i = 0; i < s.per_query.rows(); ++i) EXPECT_NEAR(s.per_query.row(i).sum(), 1.0, 1e-6);
}

TEST(MetricModel, PermutationInvariantScores) {
  Rng rng(21);
  const auto cloud = test::random_cloud(120, rng);
  PointCloud shuffled = cloud;
  std::shuffle(shuffled.points.begin(), shuffled.points.end(), rng);
  const MetricModel<double> model(tiny_arch(), 3);
  const auto a = model.score_scene(cloud);
  const auto b = model.score_scene(shuffled);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(a.scene[static_cast<std::size_t>(c)], b.scene[static_cast<std::size_t>(c)], 1e-12);
  EXPECT_NEAR((a.query_points - b.query_points).cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

class MetricGradient : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(MetricGradient, MatchesFiniteDifferences) {
  const auto arch = tiny_arch();
  MetricModel<double> model(arch, GetParam());
  test::nudge_biases(model.params(), GetParam());
  const auto batch = toy_batch(arch, GetParam() + 100);
  const double lambda = 0.3;
  const auto result = model.metric_loss(batch, lambda, no_dropout());
  // Below the reversal node the extractor descends L_C - lambda * L_A.
  const auto reversed = [&] {
    const auto r = model.metric_loss(batch, lambda, no_dropout());
    return r.classifier_loss - lambda * (r.adversary_loss[0] + r.adversary_loss[1] + r.adversary_loss[2]);
  };
  const auto front = test::check_gradients(model.params(), result.grads, reversed, 0, 1e-6,
                                           [](const std::string& n) { return n.rfind("adversary_", 0) != 0; });
  const auto heads = test::check_gradients(
      model.params(), result.grads, [&] { return model.metric_loss(batch, lambda, no_dropout()).loss; }, 0, 1e-6,
      [](const std::string& n) { return n.rfind("adversary_", 0) == 0; });
  EXPECT_GT(front.checked + heads.checked, 500u);
  EXPECT_LT(front.worst, 1e-4) << front.worst_param;
  EXPECT_LT(heads.worst, 1e-4) << heads.worst_param;
}

INSTANTIATE_TEST_SUITE_P(Seeds, MetricGradient, ::testing::Values(1u, 2u, 3u));

TEST(MetricLoss, LambdaZeroExtractorSeesOnlyClassifier) {
  const auto arch = tiny_arch();
  const MetricModel<double> model(arch, 5);
  const auto batch = toy_batch(arch, 6);
  const auto full = model.metric_loss(batch, 0.0, no_dropout());
  auto opts = no_dropout();
  opts.include_adversaries = false;
  const auto cls = model.metric_loss(batch, 0.0, opts);
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    if (model.params()[i].name.rfind("extractor/", 0) != 0) continue;
    EXPECT_EQ((full.grads[i] - cls.grads[i]).cwiseAbs().maxCoeff(), 0.0) << model.params()[i].name;
  }
  EXPECT_GT(full.loss, cls.loss);
}

TEST(MetricLoss, SingleSynSampleMasksOtherAdversaries) {
  const auto arch = tiny_arch();
  const MetricModel<double> model(arch, 5);
  Rng rng(4);
  const std::vector<PreparedSample> batch{prepare_sample({test::random_cloud(40, rng), Category::Syn, 1}, arch)};
  const auto r = model.metric_loss(batch, 0.3, no_dropout());
  EXPECT_EQ(r.adversary_loss[0], 0.0);
  EXPECT_EQ(r.adversary_loss[2], 0.0);
  EXPECT_GT(r.adversary_loss[1], 0.0);
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    const auto& name = model.params()[i].name;
    if (is_adversary(name, "real") || is_adversary(name, "misc")) {
      EXPECT_EQ(r.grads[i].cwiseAbs().maxCoeff(), 0.0) << name;
    } else if (is_adversary(name, "syn") && name.find("weight") != std::string::npos) {
      EXPECT_GT(r.grads[i].cwiseAbs().maxCoeff(), 0.0) << name;
    }
  }
}

TEST(MetricLoss, ReversalScalesAdversaryComponentLinearly) {
  const auto arch = tiny_arch();
  const MetricModel<double> model(arch, 12);
  const auto batch = toy_batch(arch, 13);
  const auto g0 = model.metric_loss(batch, 0.0, no_dropout()).grads;
  const auto g1 = model.metric_loss(batch, 0.1, no_dropout()).grads;
  const auto g2 = model.metric_loss(batch, 0.2, no_dropout()).grads;
  for (std::size_t i = 0; i < g0.size(); ++i) {
    const auto& name = model.params()[i].name;
    if (name.rfind("extractor/", 0) == 0) {
      const nn::Matrix<double> a = g1[i] - g0[i];
      const nn::Matrix<double> b = g2[i] - g0[i];
      EXPECT_GT(a.cwiseAbs().maxCoeff(), 0.0) << name;
      EXPECT_LT((b - 2.0 * a).cwiseAbs().maxCoeff(), 1e-12 * (1.0 + b.cwiseAbs().maxCoeff())) << name;
    } else {
      EXPECT_EQ((g1[i] - g0[i]).cwiseAbs().maxCoeff(), 0.0) << name;
    }
  }
}

TEST(MetricLoss, RejectsOutOfRangeDatasetId) {
  const auto arch = tiny_arch();
  const MetricModel<double> model(arch, 5);
  Rng rng(4);
  const std::vector<PreparedSample> batch{prepare_sample({test::random_cloud(40, rng), Category::Misc, 3}, arch)};
  EXPECT_THROW(model.metric_loss(batch, 0.3, no_dropout()), InvalidArgument);
}

TEST(MetricCheckpoint, RoundTrip) {
  const MetricModel<float> model(tiny_arch(), 77);
  const auto bytes = nn::serialize_checkpoint(model.to_checkpoint(R"({"lambda":0.3})"));
  const auto back = MetricModel<float>::from_checkpoint(nn::parse_checkpoint(bytes));
  EXPECT_EQ(back.config(), model.config());
  for (std::size_t i = 0; i < model.params().size(); ++i) EXPECT_EQ(back.params().value(i), model.params().value(i));

  auto ckpt = model.to_checkpoint();
  ckpt.arch_digest ^= 1;
  EXPECT_THROW(MetricModel<float>::from_checkpoint(ckpt), IoError);
}

TEST(MetricTraining, SeededRunsAreBitwiseIdentical) {
  const auto arch = tiny_arch();
  const auto train = toy_batch(arch, 31);
  TrainConfig cfg;
  cfg.steps = 6;
  cfg.per_category = 1;
  cfg.eval_every = 3;
  cfg.seed = 99;
  const auto a = train_metric(train, train, arch, cfg);
  const auto b = train_metric(train, train, arch, cfg);
  EXPECT_EQ(nn::serialize_checkpoint(a.model.to_checkpoint()), nn::serialize_checkpoint(b.model.to_checkpoint()));
  ASSERT_EQ(a.history.rows.size(), 2u);
  EXPECT_EQ(a.history.rows[1].step, 6);
  EXPECT_DOUBLE_EQ(a.history.lambda, 0.3);
  cfg.seed = 100;
  const auto c = train_metric(train, train, arch, cfg);
  EXPECT_NE(nn::serialize_checkpoint(a.model.to_checkpoint()), nn::serialize_checkpoint(c.model.to_checkpoint()));
}

TEST(MetricTraining, RequiresEveryCategory) {
  const auto arch = tiny_arch();
  auto train = toy_batch(arch, 31);
  train.erase(train.begin() + 1);  // drop the Syn sample
  TrainConfig cfg;
  cfg.steps = 1;
  EXPECT_THROW(train_metric(train, train, arch, cfg), InvalidArgument);
}
