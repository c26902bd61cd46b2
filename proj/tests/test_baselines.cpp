#include <gtest/gtest.h>

#include "lrm/baselines.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace lrm;
using namespace lrm::baselines;

namespace {

PointCloud cloud_of(std::initializer_list<Vec3> pts) { return PointCloud{std::vector<Vec3>(pts)}; }

RangeImage random_image(Rng& rng, double fill = 0.8) {
  RangeImage img(ProjectionModel::hdl64(8, 16));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 16; ++c)
      if (u(rng) < fill) img.set(r, c, 1.0 + 40.0 * u(rng));
  return img;
}

}  // namespace

TEST(Chamfer, Examples) {
  Rng rng(1);
  const auto a = test::random_cloud(50, rng);
  EXPECT_EQ(chamfer(a, a), 0.0);
  const auto p = cloud_of({Vec3(0, 0, 0)});
  const auto t = cloud_of({Vec3(1, 0, 0), Vec3(3, 0, 0)});
  EXPECT_DOUBLE_EQ(chamfer(p, t), 3.0);
  const auto b = test::random_cloud(70, rng);
  EXPECT_NEAR(chamfer(a, b), chamfer(b, a), 1e-12);
  EXPECT_THROW(chamfer(PointCloud{}, a), InvalidArgument);
}

TEST(Chamfer, MatchesOracleAndSerial) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const auto a = test::random_cloud(1 + rng() % 400, rng, 20.0);
    const auto b = test::random_cloud(1 + rng() % 400, rng, 20.0);
    const double expect = oracle::chamfer(a.points, b.points);
    EXPECT_NEAR(chamfer(a, b), expect, 1e-12 * std::max(1.0, expect));
    EXPECT_NEAR(serial::chamfer(a, b), expect, 1e-12 * std::max(1.0, expect));
  }
}

TEST(ImageErrors, Examples) {
  Rng rng(2);
  const auto img = random_image(rng);
  const auto same = image_errors(img, img);
  EXPECT_EQ(same.mae, 0.0);
  EXPECT_EQ(same.mse, 0.0);
  EXPECT_EQ(same.count, img.valid_count());

  auto shifted = img;
  for (std::size_t i = 0; i < shifted.depth.size(); ++i)
    if (shifted.valid[i]) shifted.depth[i] += 2.0;
  const auto e = image_errors(shifted, img);
  EXPECT_NEAR(e.mae, 2.0, 1e-12);
  EXPECT_NEAR(e.mse, 4.0, 1e-12);
}

TEST(ImageErrors, JointMaskRecomputation) {
  Rng rng(3);
  const auto a = random_image(rng, 0.7);
  const auto b = random_image(rng, 0.7);
  double abs_sum = 0.0, sq_sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.depth.size(); ++i) {
    if (!a.valid[i] || !b.valid[i]) continue;
    abs_sum += std::abs(a.depth[i] - b.depth[i]);
    sq_sum += (a.depth[i] - b.depth[i]) * (a.depth[i] - b.depth[i]);
    ++n;
  }
  const auto e = image_errors(a, b);
  EXPECT_EQ(e.count, n);
  EXPECT_NEAR(e.mae, abs_sum / static_cast<double>(n), 1e-12);
  EXPECT_NEAR(e.mse, sq_sum / static_cast<double>(n), 1e-10);
  EXPECT_THROW(image_errors(a, RangeImage(a.model)), InvalidArgument);
  EXPECT_THROW(image_errors(a, RangeImage(ProjectionModel::hdl64(4, 16))), InvalidArgument);
}

TEST(CovMmd, PairedDefinition) {
  Rng rng(4);
  std::vector<PointCloud> pred, target;
  double total = 0.0;
  for (int i = 0; i < 4; ++i) {
    pred.push_back(test::random_cloud(30, rng));
    target.push_back(test::random_cloud(30, rng));
    total += chamfer(pred.back(), target.back());
  }
  const auto r = paired_cov_mmd(pred, target);
  EXPECT_EQ(r.coverage, 1.0);
  EXPECT_NEAR(r.mmd, total / 4.0, 1e-12);
  EXPECT_THROW(paired_cov_mmd({}, {}), InvalidArgument);
  EXPECT_THROW(paired_cov_mmd(std::span(pred).first(2), target), InvalidArgument);
}

TEST(Aggregate, MeanAndStdPerMethod) {
  std::vector<BaselineRow> rows{{"a", "nearest", 1.0, 2.0, 4.0},
                                {"a", "bilinear", 0.5, 1.0, 1.0},
                                {"b", "nearest", 3.0, 4.0, 16.0},
                                {"b", "bilinear", 0.5, 3.0, 9.0}};
  const auto agg = aggregate(rows);
  ASSERT_EQ(agg.size(), 2u);
  EXPECT_EQ(agg[0].method, "nearest");
  EXPECT_DOUBLE_EQ(agg[0].mean.cd_m, 2.0);
  EXPECT_DOUBLE_EQ(agg[0].mean.mse_m2, 10.0);
  EXPECT_DOUBLE_EQ(agg[0].stddev.cd_m, 1.0);
  EXPECT_DOUBLE_EQ(agg[1].stddev.cd_m, 0.0);
  EXPECT_DOUBLE_EQ(agg[1].mean.mae_m, 2.0);
}

TEST(EvaluatePair, IdenticalScenesAreZero) {
  Rng rng(5);
  const auto img = random_image(rng);
  const auto row = evaluate_pair("s0", "nearest", img, img);
  EXPECT_EQ(row.scene_id, "s0");
  EXPECT_EQ(row.method, "nearest");
  EXPECT_EQ(row.cd_m, 0.0);
  EXPECT_EQ(row.mae_m, 0.0);
  EXPECT_EQ(row.mse_m2, 0.0);
}
