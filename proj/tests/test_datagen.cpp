#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <tuple>

#include "lrm/datagen.hpp"
#include "lrm/io.hpp"

using namespace lrm;
using namespace lrm::datagen;
using metric::Category;

namespace {

GeneratorConfig config_for(GeneratorKind kind, int rows = 32, int cols = 128) {
  GeneratorConfig c;
  c.kind = kind;
  c.projection = ProjectionModel::hdl64(rows, cols);
  return c;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(RayCasting, AnalyticHits) {
  EXPECT_NEAR(*intersect(Sphere{Vec3(5, 0, 0), 1.0}, Vec3(1, 0, 0)), 4.0, 1e-12);
  EXPECT_FALSE(intersect(Sphere{Vec3(5, 3, 0), 1.0}, Vec3(1, 0, 0)).has_value());
  EXPECT_NEAR(*intersect(Box{Vec3(2, -1, -1), Vec3(3, 1, 1)}, Vec3(1, 0, 0)), 2.0, 1e-12);
  EXPECT_NEAR(*intersect(Cylinder{4, 0, 0.5, -2, 2}, Vec3(1, 0, 0)), 3.5, 1e-12);
  const Vec3 down = Vec3(1, 0, -1).normalized();
  EXPECT_NEAR(*intersect(Ground{}, down, 80.0), 1.73 * std::sqrt(2.0), 1e-9);
  EXPECT_FALSE(intersect(Ground{}, Vec3(1, 0, 0.1).normalized(), 80.0).has_value());
  Scene s;
  s.spheres.push_back({Vec3(6, 0, 0), 1.0});
  s.boxes.push_back({Vec3(3, -1, -1), Vec3(4, 1, 1)});
  EXPECT_NEAR(*trace_ray(s, Vec3(1, 0, 0), 80.0), 3.0, 1e-12);
  EXPECT_FALSE(trace_ray(s, Vec3(1, 0, 0), 2.5).has_value());
}

TEST(GeoSet, EmptySceneLiesOnGround) {
  auto c = config_for(GeneratorKind::GeoSet);
  c.geoset.spheres = {0, 0};
  c.geoset.boxes = {0, 0};
  const auto s = gen_geoset(c, 4);
  ASSERT_FALSE(s.cloud.empty());
  for (const auto& p : s.cloud.points) EXPECT_NEAR(p.z(), -c.sensor_height, 1e-9);
}

TEST(GeoSet, SphereOnRayAxis) {
  const auto m = ProjectionModel::hdl64(8, 16);
  Scene scene;
  const Vec3 dir = m.direction(3, 5);
  scene.spheres.push_back({dir * 10.0, 2.0});
  const auto img = render(scene, m, 80.0);
  EXPECT_NEAR(img.at(3, 5), 8.0, 1e-9);
}

TEST(GeoSet, DeterministicAndLabelled) {
  const auto c = config_for(GeneratorKind::GeoSet);
  const auto a = gen_geoset(c, 11);
  const auto b = gen_geoset(c, 11);
  EXPECT_EQ(a.cloud.points, b.cloud.points);
  EXPECT_EQ(a.category, Category::Syn);
  EXPECT_NE(gen_geoset(c, 12).cloud.points, a.cloud.points);
}

TEST(Misc, RampsFollowTheirAxis) {
  auto c = config_for(GeneratorKind::Misc1, 16, 32);
  c.misc.ramp_noise = {0.0, 0.0};
  const auto m1 = misc_image(1, c, 3);
  for (int r = 0; r < 16; ++r) {
    for (int col = 1; col < 32; ++col) EXPECT_EQ(m1.at(r, col), m1.at(r, 0));
    if (r > 0) EXPECT_GT(m1.at(r, 0), m1.at(r - 1, 0));
  }
  const auto m2 = misc_image(2, c, 3);
  for (int col = 0; col < 32; ++col) {
    for (int r = 1; r < 16; ++r) EXPECT_EQ(m2.at(r, col), m2.at(0, col));
    if (col > 0) EXPECT_GT(m2.at(0, col), m2.at(0, col - 1));
  }
  EXPECT_EQ(m1.valid_count(), 16u * 32u);
}

TEST(Misc, GaussianNoiseStatistics) {
  auto c = config_for(GeneratorKind::Misc3, 100, 100);
  c.misc.gaussian_sigma = {0.5, 0.5};
  c.misc.gaussian_mean = {30.0, 30.0};
  const auto img = misc_image(3, c, 21);
  EXPECT_NEAR(stddev_of(img.depth), 0.5, 0.025);
  EXPECT_NEAR(mean_of(img.depth), 30.0, 0.05);
}

TEST(Misc, PatchesShareOneDepth) {
  auto c = config_for(GeneratorKind::Misc4);
  c.misc.patch_noise = {0.0, 0.0};
  std::vector<int> owner;
  const auto img = misc_image(4, c, 5, &owner);
  std::map<int, double> depth;
  int patched = 0;
  for (std::size_t i = 0; i < owner.size(); ++i) {
    if (owner[i] < 0) continue;
    ++patched;
    auto [it, fresh] = depth.emplace(owner[i], img.depth[i]);
    if (!fresh) EXPECT_EQ(it->second, img.depth[i]);
  }
  EXPECT_GT(patched, 0);
  EXPECT_THROW(misc_image(5, c, 1), InvalidArgument);
}

TEST(Augment, ZeroSigmaIsIdentity) {
  const auto cloud = gen_geoset(config_for(GeneratorKind::GeoSet), 2).cloud;
  EXPECT_EQ(augment_syn(cloud, {0.0, 0.0}, 9).points, cloud.points);
}

TEST(Augment, RadialWithDrawnSigma) {
  PointCloud cloud;
  Rng rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 10000; ++i) cloud.points.push_back(Vec3(u(rng), u(rng), u(rng)).normalized() * 30.0);
  double sigma = 0.0;
  const auto out = augment_syn(cloud, {0.1, 0.5}, 17, &sigma);
  EXPECT_GE(sigma, 0.1);
  EXPECT_LE(sigma, 0.5);
  std::vector<double> residual;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    EXPECT_LT((out.points[i].normalized() - cloud.points[i].normalized()).norm(), 1e-9);
    residual.push_back(out.points[i].norm() - cloud.points[i].norm());
  }
  EXPECT_NEAR(stddev_of(residual), sigma, 0.1 * sigma);
  EXPECT_THROW(augment_syn(cloud, {-1.0, 0.0}, 1), InvalidArgument);
}

TEST(PseudoReal, DropoutRate) {
  auto c = config_for(GeneratorKind::PseudoReal, 64, 512);
  auto clean = c;
  c.pseudoreal.dropout = 0.3;
  const auto dropped = pseudoreal_image(c, 8);
  const auto full = pseudoreal_image(clean, 8);
  std::size_t base = 0, lost = 0;
  for (std::size_t i = 0; i < full.valid.size(); ++i) {
    if (!full.valid[i]) continue;
    ++base;
    if (!dropped.valid[i]) ++lost;
  }
  EXPECT_NEAR(static_cast<double>(lost) / static_cast<double>(base), 0.3, 0.02);
}

TEST(PseudoReal, WithoutEnrichmentsEqualsGeoSet) {
  const auto c = config_for(GeneratorKind::PseudoReal);
  const auto pr = gen_pseudoreal(c, 31);
  const auto geo = gen_geoset(c, 31);
  EXPECT_EQ(pr.cloud.points, geo.cloud.points);
  EXPECT_EQ(pr.category, Category::Real);
}

TEST(PseudoReal, RegimesDiffer) {
  auto c = config_for(GeneratorKind::PseudoReal);
  c.pseudoreal = PseudoRealParams::regime(0);
  const auto a = pseudoreal_image(c, 3);
  c.pseudoreal = PseudoRealParams::regime(1);
  EXPECT_NE(pseudoreal_image(c, 3).depth, a.depth);
  EXPECT_THROW(PseudoRealParams::regime(3), InvalidArgument);
}

TEST(Registry, StandardLayout) {
  const auto reg = DatasetRegistry::standard(ProjectionModel::hdl64(32, 128), {2, 1, 1});
  reg.validate();
  EXPECT_EQ(reg.adversary_outputs(), (std::array<int, 3>{2, 1, 3}));
  EXPECT_TRUE(reg.find("misc4").held_out);
  EXPECT_TRUE(reg.find("pseudoreal2").held_out);
  EXPECT_FALSE(reg.find("geoset").held_out);
  EXPECT_GT(reg.find("geoset").generator.augment.sigma.hi, 0.0);
  for (const auto& d : reg.datasets)
    if (d.category == Category::Real && !d.held_out) EXPECT_LT(d.dataset_id, 2);
  EXPECT_THROW(reg.find("nope"), InvalidArgument);
}

TEST(Registry, ValidationRejectsBrokenRegistries) {
  auto reg = DatasetRegistry::standard(ProjectionModel::hdl64(8, 16), {1, 0, 0});
  auto dup = reg;
  dup.datasets[1].name = dup.datasets[0].name;
  EXPECT_THROW(dup.validate(), InvalidArgument);
  auto sparse = reg;
  sparse.datasets[4].dataset_id = 7;  // misc1
  EXPECT_THROW(sparse.validate(), InvalidArgument);
  auto missing = reg;
  std::erase_if(missing.datasets, [](const DatasetSpec& d) { return d.category == Category::Syn; });
  EXPECT_THROW(missing.validate(), InvalidArgument);
}

TEST(Registry, PlanCountsAndDisjointSplits) {
  DatasetRegistry reg;
  for (auto [name, cat, kind] : {std::tuple{"r", Category::Real, GeneratorKind::PseudoReal},
                                 std::tuple{"s", Category::Syn, GeneratorKind::GeoSet},
                                 std::tuple{"m", Category::Misc, GeneratorKind::Misc3}}) {
    DatasetSpec d;
    d.name = name;
    d.category = cat;
    d.generator = config_for(kind, 8, 16);
    d.counts = {30, 10, 10};
    reg.datasets.push_back(d);
  }
  const auto plan = plan_registry(reg, 3);
  EXPECT_EQ(plan.size(), 150u);
  std::map<std::pair<std::string, Split>, int> counts;
  std::set<std::string> paths;
  for (const auto& r : plan) {
    ++counts[{r.dataset, r.split}];
    EXPECT_TRUE(paths.insert(r.relative_path).second);
  }
  for (const auto& d : reg.datasets) {
    EXPECT_EQ((counts[{d.name, Split::Train}]), 30);
    EXPECT_EQ((counts[{d.name, Split::Val}]), 10);
    EXPECT_EQ((counts[{d.name, Split::Test}]), 10);
  }
}

TEST(Registry, MaterializeRoundTripAndDeterminism) {
  auto reg = DatasetRegistry::standard(ProjectionModel::hdl64(8, 32), {2, 1, 1});
  const auto root_a = std::filesystem::temp_directory_path() / "lrm_reg_a";
  const auto root_b = std::filesystem::temp_directory_path() / "lrm_reg_b";
  std::filesystem::remove_all(root_a);
  std::filesystem::remove_all(root_b);
  const auto recs = materialize_registry(reg, 5, root_a);
  materialize_registry(reg, 5, root_b);
  EXPECT_EQ(recs.size(), 8u * 4u);
  const auto back = read_manifest(root_a / "manifest.jsonl");
  EXPECT_EQ(back, recs);
  for (const auto& r : recs) {
    EXPECT_EQ(slurp(root_a / r.relative_path), slurp(root_b / r.relative_path)) << r.relative_path;
    const auto s = load_sample(root_a, r);
    EXPECT_EQ(s.category, r.category);
    EXPECT_EQ(s.dataset_id, r.dataset_id);
  }
  // In-memory generation matches the on-disk float32 samples.
  const std::vector<ManifestRecord> one{recs[3]};
  EXPECT_EQ(generate_records(reg, one)[0].cloud.points, load_sample(root_a, recs[3]).cloud.points);
  std::filesystem::remove_all(root_a);
  std::filesystem::remove_all(root_b);
  EXPECT_THROW(read_manifest(root_a / "manifest.jsonl"), IoError);
}

TEST(Names, RoundTrip) {
  for (auto k : {GeneratorKind::GeoSet, GeneratorKind::Misc1, GeneratorKind::Misc4, GeneratorKind::PseudoReal})
    EXPECT_EQ(parse_kind(kind_name(k)), k);
  for (auto s : {Split::Train, Split::Val, Split::Test}) EXPECT_EQ(parse_split(split_name(s)), s);
  EXPECT_THROW(parse_kind("bogus"), InvalidArgument);
  EXPECT_THROW(parse_split("bogus"), InvalidArgument);
}
