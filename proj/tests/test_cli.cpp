#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "lrm/datagen.hpp"
#include "lrm/io.hpp"
#include "lrm/reports.hpp"

namespace fs = std::filesystem;
using namespace lrm;

namespace {

class CliFlow : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "lrm_cli_test";
    fs::remove_all(root_);
    fs::create_directories(root_);
    std::ofstream(root_ / "config.json") << R"({
      "seed": 5,
      "projection": {"rows": 16, "cols": 64},
      "registry": {"counts": [3, 0, 2]},
      "metric": {"q1": 32, "k1": 4, "q2": 8, "k2": 3, "mlp1": [8, 8, 16], "mlp2": [16, 16, 16], "head_hidden": 8},
      "train": {"steps": 4, "eval_every": 2, "per_category": 1},
      "upsample": {
        "generator": {"residual_blocks": 1, "channels": 4, "stage_channels": 8, "head_kernel": 3, "tail_kernel": 3},
        "train": {"steps": 3, "batch": 2, "crop_cols": 32, "log_every": 1}
      }
    })";
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  int run(std::vector<std::string> args) {
    out_.str("");
    err_.str("");
    return cli::run(args, out_, err_);
  }
  std::string config() const { return (root_ / "config.json").string(); }
  std::string path(const std::string& rel) const { return (root_ / rel).string(); }

  static fs::path root_;
  std::ostringstream out_, err_;
};

fs::path CliFlow::root_;

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST_F(CliFlow, EndToEnd) {
  ASSERT_EQ(run({"generate", "--config", config(), "--out", path("data")}), 0) << err_.str();
  EXPECT_TRUE(fs::exists(path("data/manifest.jsonl")));
  EXPECT_TRUE(fs::exists(path("data/test/pseudoreal0/00000.bin")));
  EXPECT_TRUE(fs::exists(path("data/resolved_config.json")));

  ASSERT_EQ(run({"train-metric", "--config", config(), "--data", path("data"), "--out", path("metric")}), 0)
      << err_.str();
  for (const char* f : {"metric.ckpt", "history.csv", "summary.json", "resolved_config.json"})
    EXPECT_TRUE(fs::exists(path("metric/") + f)) << f;
  EXPECT_EQ(line_count(path("metric/history.csv")), 3u);

  ASSERT_EQ(run({"score", "--config", config(), "--checkpoint", path("metric/metric.ckpt"), "--data", path("data"),
                 "--per-query", "--ply", "--out", path("score")}),
            0)
      << err_.str();
  const auto scores = reports::read_scores_csv(path("score/scores.csv"));
  std::size_t test_records = 0;
  for (const auto& r : datagen::read_manifest(path("data/manifest.jsonl"))) test_records += r.split == datagen::Split::Test;
  ASSERT_EQ(scores.size(), test_records);
  EXPECT_EQ(test_records, 8u * 2u);
  for (const auto& r : scores) EXPECT_NEAR(r.scene[0] + r.scene[1] + r.scene[2], 1.0, 1e-6);
  EXPECT_EQ(reports::read_query_csv(path("score/queries.csv")).size(), scores.size() * 8u);
  EXPECT_TRUE(fs::exists(path("score/ply/test_pseudoreal0_00000.ply")));

  ASSERT_EQ(run({"export-features", "--config", config(), "--checkpoint", path("metric/metric.ckpt"), "--data",
                 path("data"), "--layout", "flattened", "--out", path("features")}),
            0)
      << err_.str();
  const auto features = reports::read_features_csv(path("features/features.csv"));
  ASSERT_EQ(features.size(), scores.size());
  EXPECT_EQ(features[0].z.size(), 8u * 16u);

  const std::string bin = path("data/test/pseudoreal0/00000.bin");
  ASSERT_EQ(run({"upsample", "--config", config(), "--method", "nearest", "--out", path("up"), bin}), 0) << err_.str();
  EXPECT_EQ(io::read_range_image(path("up/00000.rimg")).rows(), 64);
  EXPECT_TRUE(fs::exists(path("up/00000.bin")));

  ASSERT_EQ(run({"upsample", "--config", config(), "--method", "bilinear", "--from-hr", "--out", path("paired"), bin}), 0)
      << err_.str();
  EXPECT_EQ(io::read_range_image(path("paired/00000.rimg")).rows(), 16);

  ASSERT_EQ(run({"eval-baselines", "--pred", path("paired"), "--target", path("paired"), "--out", path("eval")}), 0)
      << err_.str();
  const auto report = reports::read_baselines_csv(path("eval/baselines.csv"));
  ASSERT_EQ(report.rows.size(), 1u);
  EXPECT_EQ(report.rows[0].method, "paired");
  EXPECT_EQ(report.rows[0].cd_m, 0.0);
  EXPECT_EQ(report.rows[0].mae_m, 0.0);

  ASSERT_EQ(run({"train-upsampler", "--config", config(), "--data", path("data"), "--mode", "l1", "--out", path("sr")}),
            0)
      << err_.str();
  EXPECT_TRUE(fs::exists(path("sr/generator.ckpt")));
  EXPECT_EQ(line_count(path("sr/upsampler_log.csv")), 4u);

  ASSERT_EQ(run({"upsample", "--config", config(), "--method", "learned", "--checkpoint", path("sr/generator.ckpt"),
                 "--from-hr", "--out", path("learned"), bin}),
            0)
      << err_.str();
  EXPECT_EQ(io::read_range_image(path("learned/00000.rimg")).rows(), 16);

  ASSERT_EQ(run({"sweep-lambda", "--config", config(), "--data", path("data"), "--lambdas", "0,1", "--steps", "2",
                 "--out", path("sweep")}),
            0)
      << err_.str();
  EXPECT_EQ(line_count(path("sweep/sweep.csv")), 3u);
  EXPECT_TRUE(fs::exists(path("sweep/lambda_1/metric.ckpt")));
}

TEST_F(CliFlow, UsageErrors) {
  EXPECT_EQ(run({}), 1);
  EXPECT_EQ(run({"frobnicate"}), 1);
  EXPECT_EQ(run({"train-metric", "--out", path("x")}), 1);
  EXPECT_EQ(run({"generate", "--config", config(), "--out", path("x"), "--bogus"}), 1);
  fs::create_directories(root_ / "lr");
  EXPECT_EQ(run({"upsample", "--config", config(), "--method", "learned", "--out", path("lr"), config()}), 1);
  EXPECT_FALSE(err_.str().empty());
}

TEST_F(CliFlow, RuntimeErrors) {
  EXPECT_EQ(run({"train-metric", "--config", config(), "--data", path("missing"), "--out", path("y")}), 2);
  EXPECT_NE(err_.str().find("manifest.jsonl"), std::string::npos);
}
