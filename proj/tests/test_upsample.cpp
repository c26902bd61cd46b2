#include <gtest/gtest.h>

#include <cmath>

#include "lrm/datagen.hpp"
#include "lrm/upsample.hpp"
#include "support.hpp"

using namespace lrm;
using namespace lrm::upsample;

namespace {

RangeImage image_from_rows(const std::vector<double>& rows, int cols) {
  auto m = ProjectionModel::hdl64(static_cast<int>(rows.size()), cols);
  RangeImage img(m);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < cols; ++c) img.set(r, c, rows[static_cast<std::size_t>(r)]);
  return img;
}

RangeImage random_image(int rows, int cols, Rng& rng, double fill = 1.0) {
  RangeImage img(ProjectionModel::hdl64(rows, cols));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      if (u(rng) < fill) img.set(r, c, 2.0 + 30.0 * u(rng));
  return img;
}

GeneratorConfig tiny_generator() {
  GeneratorConfig g = GeneratorConfig::desk();
  g.residual_blocks = 2;
  g.channels = 4;
  g.stage_channels = 4;
  g.head_kernel = 3;
  g.tail_kernel = 3;
  return g;
}

}  // namespace

TEST(Nearest, Examples) {
  Rng rng(1);
  const auto img = random_image(3, 5, rng, 0.7);
  const auto same = upsample_nearest(img, 1);
  EXPECT_EQ(same.depth, img.depth);
  EXPECT_EQ(same.valid, img.valid);

  const auto two = image_from_rows({1.0, 2.0}, 3);
  const auto up = upsample_nearest(two, 2);
  ASSERT_EQ(up.rows(), 4);
  EXPECT_EQ(up.cols(), 3);
  const std::vector<double> expect{1, 1, 2, 2};
  for (int r = 0; r < 4; ++r) EXPECT_EQ(up.at(r, 1), expect[static_cast<std::size_t>(r)]);
  EXPECT_EQ(up.model, two.model.upsampled(2));
}

TEST(Bilinear, Examples) {
  const auto constant = image_from_rows({5, 5, 5}, 4);
  const auto c = upsample_bilinear(constant, 4);
  ASSERT_EQ(c.rows(), 12);
  for (std::size_t i = 0; i < c.depth.size(); ++i) EXPECT_DOUBLE_EQ(c.depth[i], 5.0);

  const auto up = upsample_bilinear(image_from_rows({1, 3}, 2), 2);
  const std::vector<double> expect{1.0, 1.5, 2.5, 3.0};
  for (int r = 0; r < 4; ++r) EXPECT_DOUBLE_EQ(up.at(r, 0), expect[static_cast<std::size_t>(r)]);

  Rng rng(2);
  const auto img = random_image(4, 6, rng, 0.6);
  const auto id = upsample_bilinear(img, 1);
  EXPECT_EQ(id.depth, img.depth);
  EXPECT_EQ(id.valid, img.valid);
}

TEST(Bilinear, ValidityFollowsReadCells) {
  Rng rng(3);
  const auto img = random_image(6, 8, rng, 0.6);
  const int f = 4;
  const auto up = upsample_bilinear(img, f);
  for (int y = 0; y < up.rows(); ++y) {
    const double src = std::clamp((y + 0.5) / f - 0.5, 0.0, static_cast<double>(img.rows() - 1));
    const int lo = static_cast<int>(std::floor(src));
    const int hi = std::min(lo + 1, img.rows() - 1);
    const double t = src - lo;
    for (int c = 0; c < up.cols(); ++c) {
      const bool need_lo = t < 1.0;
      const bool need_hi = t > 0.0;
      const bool ok = (!need_lo || img.is_valid(lo, c)) && (!need_hi || img.is_valid(hi, c));
      ASSERT_EQ(up.is_valid(y, c), ok) << y << "," << c;
      if (ok) {
        const double a = need_lo ? img.at(lo, c) : 0.0;
        const double b = need_hi ? img.at(hi, c) : 0.0;
        EXPECT_NEAR(up.at(y, c), (1 - t) * a + t * b, 1e-12);
      }
    }
  }
}

TEST(MakeLr, Examples) {
  Rng rng(4);
  const auto img = random_image(8, 5, rng, 0.8);
  const auto same = make_lr(img, 1);
  EXPECT_EQ(same.depth, img.depth);
  const auto lr = make_lr(img, 4);
  ASSERT_EQ(lr.rows(), 2);
  EXPECT_EQ(lr.cols(), 5);
  for (int c = 0; c < 5; ++c) {
    EXPECT_EQ(lr.at(0, c), img.at(0, c));
    EXPECT_EQ(lr.at(1, c), img.at(4, c));
    EXPECT_EQ(lr.is_valid(1, c), img.is_valid(4, c));
  }
  EXPECT_EQ(lr.model, img.model.subsampled(4));
  EXPECT_THROW(make_lr(img, 3), InvalidArgument);
}

TEST(MakeLr, InvertsNearest) {
  Rng rng(5);
  const auto lr = random_image(4, 16, rng, 0.7);
  const auto back = make_lr(upsample_nearest(lr, 4), 4);
  EXPECT_EQ(back.depth, lr.depth);
  EXPECT_EQ(back.valid, lr.valid);
  EXPECT_EQ(back.model, lr.model);
}

TEST(LAlphaLoss, Examples) {
  const std::vector<double> t{1, 2, 3};
  const std::vector<std::uint8_t> all{1, 1, 1};
  EXPECT_EQ(l_alpha_loss(t, t, all, 1.0).loss, 0.0);
  const std::vector<double> p{3, 0, 0};
  const std::vector<std::uint8_t> first{1, 0, 0};
  const auto r = l_alpha_loss(p, t, first, 2.0);
  EXPECT_DOUBLE_EQ(r.loss, 2.0);
  EXPECT_EQ(r.count, 1u);
  EXPECT_DOUBLE_EQ(r.grad[0], 2.0);
  EXPECT_EQ(r.grad[1], 0.0);
  const std::vector<std::uint8_t> none{0, 0, 0};
  EXPECT_THROW(l_alpha_loss(p, t, none, 1.0), InvalidArgument);
}

TEST(LAlphaLoss, MaskingAndGradient) {
  Rng rng(6);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  std::vector<double> pred(40), target(40);
  std::vector<std::uint8_t> valid(40);
  for (int i = 0; i < 40; ++i) {
    pred[i] = u(rng);
    target[i] = u(rng);
    valid[i] = i % 3 != 0;
  }
  for (double alpha : {1.0, 2.0, 1.5}) {
    const auto a = l_alpha_loss(pred, target, valid, alpha);
    auto moved = pred;
    for (int i = 0; i < 40; i += 3) moved[i] += 100.0;
    const auto b = l_alpha_loss(moved, target, valid, alpha);
    EXPECT_EQ(a.loss, b.loss);
    EXPECT_EQ(a.grad, b.grad);
    for (int i = 0; i < 40; ++i) {
      if (!valid[i]) {
        EXPECT_EQ(a.grad[i], 0.0);
        continue;
      }
      auto up = pred, down = pred;
      up[i] += 1e-6;
      down[i] -= 1e-6;
      const double fd = (l_alpha_loss(up, target, valid, alpha).loss - l_alpha_loss(down, target, valid, alpha).loss) / 2e-6;
      EXPECT_LT(test::rel_error(a.grad[i], fd), 1e-5);
    }
  }
  RangeImage x(ProjectionModel::hdl64(2, 2)), y(ProjectionModel::hdl64(2, 2));
  x.set(0, 0, 4.0);
  y.set(0, 0, 3.0);
  y.set(1, 1, 2.0);  // pred invalid there: still compared against invalid_depth
  EXPECT_DOUBLE_EQ(l_alpha_loss(x, y, 1.0).loss, (1.0 + 2.0) / 2.0);
}

TEST(Generator, OutputShapeAndEncoding) {
  const auto cfg = tiny_generator();
  SrGenerator<float> g(cfg, 1);
  Rng rng(7);
  std::vector<RangeImage> imgs{random_image(4, 8, rng, 0.8), random_image(4, 8, rng, 0.8)};
  const auto in = encode_batch<float>(imgs, cfg);
  EXPECT_EQ(in.shape, (nn::ImageShape{2, 4, 8, 1}));
  for (int i = 0; i < 32; ++i) {
    const double expect = imgs[0].valid[static_cast<std::size_t>(i)] ? std::log(imgs[0].depth[static_cast<std::size_t>(i)])
                                                                      : std::log(cfg.fill_depth);
    EXPECT_NEAR(in.x(i, 0), expect - cfg.log_offset, 1e-6);
  }
  const auto out = g.forward(in);
  EXPECT_EQ(out.shape, (nn::ImageShape{2, 16, 8, 1}));
  const auto up = g.upsample(imgs[0]);
  EXPECT_EQ(up.rows(), 16);
  EXPECT_EQ(up.valid, upsample_nearest(imgs[0], 4).valid);
  for (std::size_t i = 0; i < up.depth.size(); ++i)
    if (up.valid[i]) {
      EXPECT_GE(up.depth[i], cfg.min_depth);
      EXPECT_LE(up.depth[i], cfg.max_depth);
    }
  up.validate();
}

TEST(Generator, ZeroResidualSectionIsIdentity) {
  const auto cfg = tiny_generator();
  SrGenerator<double> a(cfg, 3, true);
  Rng rng(8);
  std::vector<RangeImage> imgs{random_image(4, 8, rng)};
  const auto in = encode_batch<double>(imgs, cfg);
  const auto base = a.forward(in).x;
  std::normal_distribution<double> n01;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    const auto& name = a.params()[i].name;
    const bool residual = name.find("/block") != std::string::npos || name.rfind("generator/post/", 0) == 0;
    const bool final_norm = name.find("norm2") != std::string::npos || name.find("post_norm") != std::string::npos;
    if (residual && a.params()[i].trainable && !final_norm)
      for (Eigen::Index k = 0; k < a.params().value(i).size(); ++k) a.params().value(i).data()[k] += n01(rng);
  }
  EXPECT_LT((a.forward(in).x - base).cwiseAbs().maxCoeff(), 1e-12);
  typename SrGenerator<double>::Tape tape;
  EXPECT_LT((a.forward(in, nn::Mode::Train, &tape).x - base).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Generator, CheckpointRoundTrip) {
  const auto cfg = tiny_generator();
  SrGenerator<float> g(cfg, 9);
  const auto back = SrGenerator<float>::from_checkpoint(nn::parse_checkpoint(nn::serialize_checkpoint(g.to_checkpoint())));
  EXPECT_EQ(back.config(), cfg);
  Rng rng(9);
  const auto img = random_image(4, 8, rng);
  EXPECT_EQ(back.upsample(img).depth, g.upsample(img).depth);
  const SrDiscriminator<float> d(DiscriminatorConfig::desk(16, 8), 1);
  EXPECT_THROW(SrGenerator<float>::from_checkpoint(d.to_checkpoint()), IoError);
}

TEST(Discriminator, ShapesAndDeterminism) {
  auto dc = DiscriminatorConfig::desk(16, 32);
  EXPECT_EQ(dc.feature_shape(), (nn::ImageShape{1, 2, 1, 128}));
  EXPECT_EQ(dc.flatten_size(), 2 * 1 * 128);
  const auto full = DiscriminatorConfig::full(64, 2048);
  EXPECT_EQ(full.feature_shape().h, 8);
  EXPECT_EQ(full.feature_shape().w, 64);
  dc.widths = {2, 2, 2, 2, 2, 2, 2, 2};
  dc.dense = 3;
  SrDiscriminator<float> d(dc, 2);
  Rng rng(10);
  std::vector<RangeImage> imgs{random_image(16, 32, rng), random_image(16, 32, rng)};
  imgs.push_back(imgs[0]);
  const auto in = encode_batch<float>(imgs, GeneratorConfig::desk());
  const auto logits = d.forward(in);
  ASSERT_EQ(logits.rows(), 3);
  ASSERT_EQ(logits.cols(), 1);
  EXPECT_EQ(logits(0, 0), logits(2, 0));
  EXPECT_NE(logits(0, 0), logits(1, 0));
  const auto back = SrDiscriminator<float>::from_checkpoint(d.to_checkpoint());
  EXPECT_EQ(back.forward(in), logits);
}

TEST(Training, L1ReducesLossOnConstantScenes) {
  std::vector<RangeImage> hr;
  for (int i = 0; i < 4; ++i) hr.push_back(image_from_rows(std::vector<double>(16, 20.0 + i), 32));
  const auto pairs = make_pairs(hr, 4);
  ASSERT_EQ(pairs.size(), 4u);
  EXPECT_EQ(pairs[0].lr.rows(), 4);
  UpsampleTrainConfig tc;
  tc.steps = 300;
  tc.batch = 2;
  tc.crop_cols = 16;
  tc.log_every = 50;
  const auto r = train_upsampler(pairs, tiny_generator(), DiscriminatorConfig::desk(16, 16), tc);
  ASSERT_EQ(r.log.size(), 6u);
  EXPECT_LT(r.log.back().generator_loss, 0.2 * r.log.front().generator_loss);
  EXPECT_EQ(r.log.back().step, 300);
}

TEST(Training, GanLossesFinite) {
  auto pr = datagen::GeneratorConfig{};
  pr.kind = datagen::GeneratorKind::PseudoReal;
  pr.projection = ProjectionModel::hdl64(16, 32);
  pr.pseudoreal = datagen::PseudoRealParams::regime(0);
  std::vector<RangeImage> hr;
  for (int i = 0; i < 4; ++i) hr.push_back(datagen::pseudoreal_image(pr, 100 + i));
  UpsampleTrainConfig tc;
  tc.mode = TrainMode::Gan;
  tc.steps = 6;
  tc.batch = 2;
  tc.crop_cols = 16;
  tc.log_every = 1;
  auto dc = DiscriminatorConfig::desk(16, 16);
  dc.widths = {2, 2, 2, 2, 2, 2, 2, 2};
  dc.dense = 4;
  int calls = 0;
  const auto r = train_upsampler(make_pairs(hr, 4), tiny_generator(), dc, tc, [&](const UpsampleLogRow&) { ++calls; });
  EXPECT_EQ(calls, 6);
  for (const auto& row : r.log) {
    EXPECT_TRUE(std::isfinite(row.generator_loss));
    EXPECT_TRUE(std::isfinite(row.discriminator_loss));
    EXPECT_GT(row.discriminator_loss, 0.0);
  }
}

TEST(Training, ModeNamesAndAlpha) {
  EXPECT_EQ(parse_mode("l1"), TrainMode::L1);
  EXPECT_EQ(parse_mode(mode_name(TrainMode::Gan)), TrainMode::Gan);
  EXPECT_THROW(parse_mode("l3"), InvalidArgument);
  UpsampleTrainConfig tc;
  tc.mode = TrainMode::L2;
  EXPECT_EQ(tc.alpha(), 2.0);
  tc.mode = TrainMode::L1;
  EXPECT_EQ(tc.alpha(), 1.0);
}
