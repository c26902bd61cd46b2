#include "lrm/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <limits>
#include <numbers>
#include <sstream>

#include "lrm/io.hpp"

namespace lrm::datagen {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double uniform(Rng& rng, Range r) {
  if (r.hi <= r.lo) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

int uniform_int(Rng& rng, CountRange r) {
  if (r.hi <= r.lo) return r.lo;
  return std::uniform_int_distribution<int>(r.lo, r.hi)(rng);
}

double normal(Rng& rng, double sigma) {
  if (sigma <= 0.0) return 0.0;
  return std::normal_distribution<double>(0.0, sigma)(rng);
}

void require_range(Range r, const char* what) {
  LRM_REQUIRE(std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi, std::string(what) + " range must satisfy lo <= hi");
}

void require_nonneg(Range r, const char* what) {
  require_range(r, what);
  LRM_REQUIRE(r.lo >= 0.0, std::string(what) + " must be nonnegative");
}

void require_count(CountRange r, const char* what) {
  LRM_REQUIRE(r.lo >= 0 && r.lo <= r.hi, std::string(what) + " count range must satisfy 0 <= lo <= hi");
}

/// Random position on the ground annulus around the sensor.
std::pair<double, double> place(Rng& rng, Range distance) {
  const double d = uniform(rng, distance);
  const double a = std::uniform_real_distribution<double>(-std::numbers::pi, std::numbers::pi)(rng);
  return {d * std::cos(a), d * std::sin(a)};
}

metric::SceneSample to_sample(const RangeImage& image, metric::Category category) {
  metric::SceneSample s;
  s.cloud = backproject(image);
  s.category = category;
  return s;
}

}  // namespace

double Ground::elevation(double x, double y) const noexcept {
  if (amplitude == 0.0) return height;
  return height + amplitude * std::sin(kTwoPi * x / wavelength + phase_x) * std::sin(kTwoPi * y / wavelength + phase_y);
}

std::optional<double> intersect(const Sphere& s, const Vec3& dir) {
  const double b = dir.dot(s.center);
  const double c = s.center.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double root = std::sqrt(disc);
  const double t0 = b - root;
  if (t0 > 0.0) return t0;
  const double t1 = b + root;
  if (t1 > 0.0) return t1;
  return std::nullopt;
}

std::optional<double> intersect(const Box& box, const Vec3& dir) {
  double tmin = 0.0;
  double tmax = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (0.0 < box.lo[a] || 0.0 > box.hi[a]) return std::nullopt;
      continue;
    }
    double t0 = box.lo[a] / dir[a];
    double t1 = box.hi[a] / dir[a];
    if (t0 > t1) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return std::nullopt;
  }
  if (tmin > 0.0) return tmin;
  if (tmax > 0.0) return tmax;
  return std::nullopt;
}

std::optional<double> intersect(const Cylinder& cyl, const Vec3& dir) {
  std::optional<double> best;
  const double a = dir.x() * dir.x() + dir.y() * dir.y();
  if (a > 0.0) {
    const double b = dir.x() * cyl.cx + dir.y() * cyl.cy;
    const double c = cyl.cx * cyl.cx + cyl.cy * cyl.cy - cyl.radius * cyl.radius;
    const double disc = b * b - a * c;
    if (disc >= 0.0) {
      const double root = std::sqrt(disc);
      for (double t : {(b - root) / a, (b + root) / a}) {
        const double z = t * dir.z();
        if (t > 0.0 && z >= cyl.z0 && z <= cyl.z1) {
          best = t;
          break;
        }
      }
    }
  }
  if (dir.z() != 0.0) {
    const double t = cyl.z1 / dir.z();
    if (t > 0.0) {
      const double dx = t * dir.x() - cyl.cx;
      const double dy = t * dir.y() - cyl.cy;
      if (dx * dx + dy * dy <= cyl.radius * cyl.radius && (!best || t < *best)) best = t;
    }
  }
  return best;
}

std::optional<double> intersect(const Ground& g, const Vec3& dir, double max_range) {
  if (dir.z() >= 0.0) return std::nullopt;
  if (g.amplitude == 0.0) {
    const double t = g.height / dir.z();
    if (t > 0.0 && t <= max_range) return t;
    return std::nullopt;
  }
  const double amp = std::abs(g.amplitude);
  const double t_begin = std::max(0.0, (g.height + amp) / dir.z());
  const double t_end = std::min(max_range, (g.height - amp) / dir.z());
  if (t_begin > max_range) return std::nullopt;
  auto f = [&](double t) { return t * dir.z() - g.elevation(t * dir.x(), t * dir.y()); };
  constexpr double kStep = 0.1;
  double lo = t_begin;
  double flo = f(lo);
  if (flo <= 0.0) return lo > 0.0 ? std::optional<double>(lo) : std::nullopt;
  while (lo < t_end) {
    const double hi = std::min(lo + kStep, t_end);
    const double fhi = f(hi);
    if (fhi <= 0.0) {
      double a = lo;
      double b = hi;
      for (int i = 0; i < 60; ++i) {
        const double m = 0.5 * (a + b);
        if (f(m) > 0.0) {
          a = m;
        } else {
          b = m;
        }
      }
      return b <= max_range ? std::optional<double>(b) : std::nullopt;
    }
    lo = hi;
  }
  return std::nullopt;
}

std::optional<double> trace_ray(const Scene& scene, const Vec3& dir, double max_range) {
  std::optional<double> best = intersect(scene.ground, dir, max_range);
  auto consider = [&](std::optional<double> t) {
    if (t && *t <= max_range && (!best || *t < *best)) best = t;
  };
  for (const auto& s : scene.spheres) consider(intersect(s, dir));
  for (const auto& b : scene.boxes) consider(intersect(b, dir));
  for (const auto& c : scene.cylinders) consider(intersect(c, dir));
  return best;
}

RangeImage render(const Scene& scene, const ProjectionModel& model, double max_range) {
  model.validate();
  RangeImage image(model);
  for (int r = 0; r < model.rows; ++r) {
    for (int c = 0; c < model.cols; ++c) {
      if (auto t = trace_ray(scene, model.direction(r, c), max_range)) image.set(r, c, *t);
    }
  }
  return image;
}

// ---------------------------------------------------------------------------

std::string_view kind_name(GeneratorKind k) {
  switch (k) {
    case GeneratorKind::GeoSet:
      return "GeoSet";
    case GeneratorKind::Misc1:
      return "Misc1";
    case GeneratorKind::Misc2:
      return "Misc2";
    case GeneratorKind::Misc3:
      return "Misc3";
    case GeneratorKind::Misc4:
      return "Misc4";
    case GeneratorKind::PseudoReal:
      return "PseudoReal";
  }
  return "?";
}

GeneratorKind parse_kind(std::string_view name) {
  for (auto k : {GeneratorKind::GeoSet, GeneratorKind::Misc1, GeneratorKind::Misc2, GeneratorKind::Misc3,
                 GeneratorKind::Misc4, GeneratorKind::PseudoReal})
    if (kind_name(k) == name) return k;
  throw InvalidArgument("unknown generator kind '" + std::string(name) + "'");
}

PseudoRealParams PseudoRealParams::regime(int id) {
  PseudoRealParams p;
  switch (id) {
    case 0:
      p.dropout = 0.05;
      p.noise_base = 0.02;
      p.noise_per_meter = 0.0005;
      p.undulation_amplitude = 0.15;
      p.undulation_wavelength = 10.0;
      p.cylinders = {3, 10};
      p.composites = {1, 3};
      break;
    case 1:
      p.dropout = 0.20;
      p.noise_base = 0.04;
      p.noise_per_meter = 0.0015;
      p.undulation_amplitude = 0.35;
      p.undulation_wavelength = 6.0;
      p.cylinders = {6, 16};
      p.composites = {2, 5};
      break;
    case 2:
      p.dropout = 0.12;
      p.noise_base = 0.03;
      p.noise_per_meter = 0.001;
      p.undulation_amplitude = 0.25;
      p.undulation_wavelength = 8.0;
      p.cylinders = {4, 12};
      p.composites = {1, 4};
      break;
    default:
      throw InvalidArgument("pseudo-real regime must be 0, 1 or 2");
  }
  return p;
}

void GeneratorConfig::validate() const {
  projection.validate();
  LRM_REQUIRE(sensor_height > 0.0, "sensor height must be positive");
  LRM_REQUIRE(max_range > 0.0, "max range must be positive");
  require_count(geoset.spheres, "sphere");
  require_count(geoset.boxes, "box");
  require_nonneg(geoset.sphere_radius, "sphere radius");
  require_nonneg(geoset.box_footprint, "box footprint");
  require_nonneg(geoset.box_height, "box height");
  require_nonneg(geoset.placement_distance, "placement distance");
  require_nonneg(augment.sigma, "augmentation sigma");
  require_nonneg(misc.ramp, "ramp");
  LRM_REQUIRE(misc.ramp.lo > 0.0, "ramp start must be positive");
  require_nonneg(misc.ramp_noise, "ramp noise sigma");
  require_nonneg(misc.gaussian_mean, "gaussian mean");
  require_nonneg(misc.gaussian_sigma, "gaussian sigma");
  require_count(misc.patches, "patch");
  require_count(misc.patch_rows, "patch rows");
  require_count(misc.patch_cols, "patch cols");
  LRM_REQUIRE(misc.patch_rows.lo >= 1 && misc.patch_cols.lo >= 1, "patches must span at least one cell");
  require_nonneg(misc.patch_depth, "patch depth");
  require_nonneg(misc.patch_noise, "patch noise sigma");
  const auto& p = pseudoreal;
  LRM_REQUIRE(p.dropout >= 0.0 && p.dropout < 1.0, "dropout must lie in [0, 1)");
  LRM_REQUIRE(p.noise_base >= 0.0 && p.noise_per_meter >= 0.0, "pseudo-real noise must be nonnegative");
  LRM_REQUIRE(p.undulation_amplitude >= 0.0 && p.undulation_amplitude < sensor_height,
              "undulation amplitude must lie in [0, sensor height)");
  LRM_REQUIRE(p.undulation_wavelength > 0.0, "undulation wavelength must be positive");
  require_count(p.cylinders, "cylinder");
  require_count(p.composites, "composite");
  require_count(p.composite_parts, "composite part");
  require_nonneg(p.cylinder_radius, "cylinder radius");
  require_nonneg(p.cylinder_height, "cylinder height");
}

Scene sample_geoset_scene(const GeneratorConfig& config, Rng& rng) {
  const auto& g = config.geoset;
  Scene scene;
  scene.ground.height = -config.sensor_height;
  const int spheres = uniform_int(rng, g.spheres);
  for (int i = 0; i < spheres; ++i) {
    const auto [x, y] = place(rng, g.placement_distance);
    const double radius = uniform(rng, g.sphere_radius);
    const double lift = uniform(rng, {0.5, 1.0});
    scene.spheres.push_back({Vec3(x, y, scene.ground.height + radius * lift), radius});
  }
  const int boxes = uniform_int(rng, g.boxes);
  for (int i = 0; i < boxes; ++i) {
    const auto [x, y] = place(rng, g.placement_distance);
    const double sx = uniform(rng, g.box_footprint);
    const double sy = uniform(rng, g.box_footprint);
    const double h = uniform(rng, g.box_height);
    scene.boxes.push_back({Vec3(x - sx / 2, y - sy / 2, scene.ground.height), Vec3(x + sx / 2, y + sy / 2, scene.ground.height + h)});
  }
  return scene;
}

metric::SceneSample gen_geoset(const GeneratorConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, fnv1a("scene")));
  const Scene scene = sample_geoset_scene(config, rng);
  return to_sample(render(scene, config.projection, config.max_range), metric::Category::Syn);
}

RangeImage misc_image(int kind, const GeneratorConfig& config, std::uint64_t seed, std::vector<int>* patch_owner) {
  LRM_REQUIRE(kind >= 1 && kind <= 4, "Misc kind must be 1..4");
  config.validate();
  const auto& m = config.misc;
  const ProjectionModel& model = config.projection;
  RangeImage image(model);
  Rng rng(derive_seed(seed, fnv1a("misc"), static_cast<std::uint64_t>(kind)));
  const int rows = model.rows;
  const int cols = model.cols;
  if (kind == 1 || kind == 2) {
    const double sigma = uniform(rng, m.ramp_noise);
    const int steps = kind == 1 ? rows : cols;
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const int k = kind == 1 ? r : c;
        const double t = steps > 1 ? static_cast<double>(k) / (steps - 1) : 0.0;
        image.set(r, c, m.ramp.lo + t * (m.ramp.hi - m.ramp.lo));
      }
    }
    for (std::size_t i = 0; i < image.depth.size(); ++i) image.depth[i] = std::max(image.depth[i] + normal(rng, sigma), 1e-3);
    return image;
  }

  const double mean = uniform(rng, m.gaussian_mean);
  const double base_sigma = uniform(rng, m.gaussian_sigma);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) image.set(r, c, std::max(mean + normal(rng, base_sigma), 1e-3));
  if (kind == 3) return image;

  std::vector<int> owner(image.depth.size(), -1);
  const int patches = uniform_int(rng, m.patches);
  for (int p = 0; p < patches; ++p) {
    const int h = std::min(uniform_int(rng, m.patch_rows), rows);
    const int w = std::min(uniform_int(rng, m.patch_cols), cols);
    const int r0 = std::uniform_int_distribution<int>(0, rows - h)(rng);
    const int c0 = std::uniform_int_distribution<int>(0, cols - 1)(rng);
    const double d = uniform(rng, m.patch_depth);
    for (int r = r0; r < r0 + h; ++r) {
      for (int dc = 0; dc < w; ++dc) {
        const int c = (c0 + dc) % cols;
        image.set(r, c, d);
        owner[image.index(r, c)] = p;
      }
    }
  }
  const double sigma = uniform(rng, m.patch_noise);
  for (std::size_t i = 0; i < image.depth.size(); ++i) image.depth[i] = std::max(image.depth[i] + normal(rng, sigma), 1e-3);
  if (patch_owner) *patch_owner = std::move(owner);
  return image;
}

metric::SceneSample gen_misc(int kind, const GeneratorConfig& config, std::uint64_t seed) {
  return to_sample(misc_image(kind, config, seed), metric::Category::Misc);
}

PointCloud augment_syn(const PointCloud& cloud, Range sigma_range, std::uint64_t seed, double* drawn_sigma) {
  require_nonneg(sigma_range, "augmentation sigma");
  Rng rng(derive_seed(seed, fnv1a("augment")));
  const double sigma = uniform(rng, sigma_range);
  if (drawn_sigma) *drawn_sigma = sigma;
  PointCloud out = cloud;
  if (sigma == 0.0) return out;
  for (Vec3& p : out.points) {
    const double r = p.norm();
    if (r == 0.0) continue;
    const double moved = std::max(r + normal(rng, sigma), 1e-3);
    p *= moved / r;
  }
  return out;
}

RangeImage pseudoreal_image(const GeneratorConfig& config, std::uint64_t seed) {
  config.validate();
  const auto& p = config.pseudoreal;
  Rng base_rng(derive_seed(seed, fnv1a("scene")));
  Scene scene = sample_geoset_scene(config, base_rng);

  Rng rng(derive_seed(seed, fnv1a("enrich")));
  if (p.undulation_amplitude > 0.0) {
    scene.ground.amplitude = p.undulation_amplitude;
    scene.ground.wavelength = p.undulation_wavelength;
    scene.ground.phase_x = uniform(rng, {0.0, kTwoPi});
    scene.ground.phase_y = uniform(rng, {0.0, kTwoPi});
  }
  const double base = scene.ground.height - p.undulation_amplitude;
  const int cylinders = uniform_int(rng, p.cylinders);
  for (int i = 0; i < cylinders; ++i) {
    const auto [x, y] = place(rng, config.geoset.placement_distance);
    const double radius = uniform(rng, p.cylinder_radius);
    const double height = uniform(rng, p.cylinder_height);
    scene.cylinders.push_back({x, y, radius, base, scene.ground.height + height});
  }
  const int composites = uniform_int(rng, p.composites);
  for (int i = 0; i < composites; ++i) {
    const auto [x, y] = place(rng, config.geoset.placement_distance);
    const int parts = uniform_int(rng, p.composite_parts);
    double sx = uniform(rng, {1.5, 4.5});
    double sy = uniform(rng, {1.5, 4.5});
    double cx = x;
    double cy = y;
    double z = base;
    for (int k = 0; k < parts; ++k) {
      const double h = uniform(rng, {0.4, 1.6}) + (k == 0 ? p.undulation_amplitude : 0.0);
      scene.boxes.push_back({Vec3(cx - sx / 2, cy - sy / 2, z), Vec3(cx + sx / 2, cy + sy / 2, z + h)});
      z += h;
      cx += uniform(rng, {-0.25, 0.25}) * sx;
      cy += uniform(rng, {-0.25, 0.25}) * sy;
      sx *= uniform(rng, {0.4, 0.9});
      sy *= uniform(rng, {0.4, 0.9});
    }
  }

  RangeImage image = render(scene, config.projection, config.max_range);
  if (p.dropout > 0.0) {
    Rng drop_rng(derive_seed(seed, fnv1a("dropout")));
    std::bernoulli_distribution drop(p.dropout);
    for (std::size_t i = 0; i < image.depth.size(); ++i) {
      if (!image.valid[i]) continue;
      if (drop(drop_rng)) {
        image.valid[i] = 0;
        image.depth[i] = image.model.invalid_depth;
      }
    }
  }
  if (p.noise_base > 0.0 || p.noise_per_meter > 0.0) {
    Rng noise_rng(derive_seed(seed, fnv1a("noise")));
    for (std::size_t i = 0; i < image.depth.size(); ++i) {
      if (!image.valid[i]) continue;
      const double r = image.depth[i];
      image.depth[i] = std::max(r + normal(noise_rng, p.noise_base + p.noise_per_meter * r), 1e-3);
    }
  }
  return image;
}

metric::SceneSample gen_pseudoreal(const GeneratorConfig& config, std::uint64_t seed) {
  return to_sample(pseudoreal_image(config, seed), metric::Category::Real);
}

metric::SceneSample generate(const GeneratorConfig& config, std::uint64_t seed) {
  switch (config.kind) {
    case GeneratorKind::GeoSet: {
      auto s = gen_geoset(config, seed);
      if (config.augment.sigma.hi > 0.0) s.cloud = augment_syn(s.cloud, config.augment.sigma, seed);
      return s;
    }
    case GeneratorKind::Misc1:
      return gen_misc(1, config, seed);
    case GeneratorKind::Misc2:
      return gen_misc(2, config, seed);
    case GeneratorKind::Misc3:
      return gen_misc(3, config, seed);
    case GeneratorKind::Misc4:
      return gen_misc(4, config, seed);
    case GeneratorKind::PseudoReal:
      return gen_pseudoreal(config, seed);
  }
  throw InvalidArgument("unknown generator kind");
}

// ---------------------------------------------------------------------------

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train:
      return "train";
    case Split::Val:
      return "val";
    case Split::Test:
      return "test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  for (auto s : {Split::Train, Split::Val, Split::Test})
    if (split_name(s) == name) return s;
  throw InvalidArgument("unknown split '" + std::string(name) + "'");
}

void DatasetRegistry::validate() const {
  LRM_REQUIRE(!datasets.empty(), "registry has no datasets");
  std::array<bool, metric::kCategories> present{};
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    const auto& d = datasets[i];
    LRM_REQUIRE(!d.name.empty(), "dataset name must be nonempty");
    LRM_REQUIRE(d.dataset_id >= 0, "dataset_id must be nonnegative");
    for (int c : d.counts) LRM_REQUIRE(c >= 0, "split counts must be nonnegative");
    d.generator.validate();
    for (std::size_t j = 0; j < i; ++j) {
      LRM_REQUIRE(datasets[j].name != d.name, "duplicate dataset name " + d.name);
      LRM_REQUIRE(!(datasets[j].category == d.category && datasets[j].dataset_id == d.dataset_id),
                  "duplicate dataset_id within category for " + d.name);
    }
    if (!d.held_out) present[static_cast<std::size_t>(metric::index_of(d.category))] = true;
  }
  for (auto c : metric::kAllCategories)
    LRM_REQUIRE(present[static_cast<std::size_t>(metric::index_of(c))],
                "registry has no training dataset for category " + std::string(metric::category_name(c)));
  const auto widths = adversary_outputs();
  for (const auto& d : datasets)
    if (!d.held_out)
      LRM_REQUIRE(d.dataset_id < widths[static_cast<std::size_t>(metric::index_of(d.category))],
                  "training dataset ids must be dense per category");
}

std::array<int, metric::kCategories> DatasetRegistry::adversary_outputs() const {
  std::array<int, metric::kCategories> n{};
  for (const auto& d : datasets)
    if (!d.held_out) ++n[static_cast<std::size_t>(metric::index_of(d.category))];
  return n;
}

const DatasetSpec& DatasetRegistry::find(const std::string& name) const {
  for (const auto& d : datasets)
    if (d.name == name) return d;
  throw InvalidArgument("registry has no dataset named " + name);
}

DatasetRegistry DatasetRegistry::standard(const ProjectionModel& projection, std::array<int, 3> counts) {
  using metric::Category;
  GeneratorConfig base;
  base.projection = projection;
  auto make = [&](std::string name, Category cat, int id, GeneratorKind kind, bool held_out) {
    DatasetSpec d;
    d.name = std::move(name);
    d.category = cat;
    d.dataset_id = id;
    d.held_out = held_out;
    d.generator = base;
    d.generator.kind = kind;
    d.counts = counts;
    return d;
  };
  DatasetRegistry reg;
  for (int regime = 0; regime < 3; ++regime) {
    auto d = make("pseudoreal" + std::to_string(regime), Category::Real, regime, GeneratorKind::PseudoReal, regime == 2);
    d.generator.pseudoreal = PseudoRealParams::regime(regime);
    reg.datasets.push_back(std::move(d));
  }
  auto geo = make("geoset", Category::Syn, 0, GeneratorKind::GeoSet, false);
  geo.generator.augment.sigma = {0.0, 0.01};
  reg.datasets.push_back(std::move(geo));
  reg.datasets.push_back(make("misc1", Category::Misc, 0, GeneratorKind::Misc1, false));
  reg.datasets.push_back(make("misc2", Category::Misc, 1, GeneratorKind::Misc2, false));
  reg.datasets.push_back(make("misc3", Category::Misc, 2, GeneratorKind::Misc3, false));
  reg.datasets.push_back(make("misc4", Category::Misc, 3, GeneratorKind::Misc4, true));
  return reg;
}

std::uint64_t sample_seed(std::uint64_t seed, const std::string& dataset, Split split, int index) {
  return derive_seed(seed, fnv1a(dataset), static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(index));
}

std::vector<ManifestRecord> plan_registry(const DatasetRegistry& registry, std::uint64_t seed) {
  registry.validate();
  std::vector<ManifestRecord> out;
  for (auto split : {Split::Train, Split::Val, Split::Test}) {
    for (const auto& d : registry.datasets) {
      const int n = d.counts[static_cast<std::size_t>(split)];
      for (int i = 0; i < n; ++i) {
        std::ostringstream path;
        path << split_name(split) << '/' << d.name << '/' << std::setw(5) << std::setfill('0') << i << ".bin";
        out.push_back({path.str(), d.category, d.dataset_id, split, sample_seed(seed, d.name, split, i), d.name, d.held_out});
      }
    }
  }
  return out;
}

std::vector<metric::SceneSample> generate_records(const DatasetRegistry& registry,
                                                  const std::vector<ManifestRecord>& records) {
  std::vector<metric::SceneSample> out(records.size());
  const auto n = static_cast<std::ptrdiff_t>(records.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& rec = records[static_cast<std::size_t>(i)];
    try {
      auto s = generate(registry.find(rec.dataset).generator, rec.seed);
      // Match the float32 round trip through the on-disk format.
      double* d = s.cloud.points.data()->data();
      for (std::size_t k = 0; k < 3 * s.cloud.points.size(); ++k) d[k] = static_cast<float>(d[k]);
      s.category = rec.category;
      s.dataset_id = rec.dataset_id;
      out[static_cast<std::size_t>(i)] = std::move(s);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return out;
}

std::vector<ManifestRecord> materialize_registry(const DatasetRegistry& registry, std::uint64_t seed,
                                                 const std::filesystem::path& root) {
  const auto records = plan_registry(registry, seed);
  const auto n = static_cast<std::ptrdiff_t>(records.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& rec = records[static_cast<std::size_t>(i)];
    try {
      const auto s = generate(registry.find(rec.dataset).generator, rec.seed);
      io::write_kitti_bin(root / rec.relative_path, s.cloud);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  write_manifest(root / "manifest.jsonl", records);
  return records;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
  write_file_atomic(path, [&](std::ostream& out) {
    for (const auto& r : records) {
      nlohmann::ordered_json j;
      j["relative_path"] = r.relative_path;
      j["category"] = std::string(metric::category_name(r.category));
      j["dataset_id"] = r.dataset_id;
      j["split"] = std::string(split_name(r.split));
      j["seed"] = r.seed;
      j["dataset"] = r.dataset;
      j["held_out"] = r.held_out;
      out << j.dump() << '\n';
    }
  });
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<ManifestRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestRecord r;
      r.relative_path = j.at("relative_path").get<std::string>();
      r.category = metric::parse_category(j.at("category").get<std::string>());
      r.dataset_id = j.at("dataset_id").get<int>();
      r.split = parse_split(j.at("split").get<std::string>());
      r.seed = j.at("seed").get<std::uint64_t>();
      r.dataset = j.value("dataset", "");
      r.held_out = j.value("held_out", false);
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

metric::SceneSample load_sample(const std::filesystem::path& root, const ManifestRecord& record) {
  metric::SceneSample s;
  s.cloud = io::read_kitti_bin(root / record.relative_path);
  s.category = record.category;
  s.dataset_id = record.dataset_id;
  return s;
}

}  // namespace lrm::datagen
