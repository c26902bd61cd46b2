#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lrm/geom.hpp"
#include "lrm/metric.hpp"

namespace lrm::datagen {

// ---------------------------------------------------------------------------
// Scene primitives and ray casting. Rays start at the sensor origin.

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
};

/// Axis-aligned box.
struct Box {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Ones();
};

/// Vertical cylinder with a closed top.
struct Cylinder {
  double cx = 0.0;
  double cy = 0.0;
  double radius = 0.25;
  double z0 = -2.0;
  double z1 = 2.0;
};

/// z = height + amplitude * sin(2 pi x / wavelength + phase_x) * sin(2 pi y / wavelength + phase_y).
struct Ground {
  double height = -1.73;
  double amplitude = 0.0;
  double wavelength = 10.0;
  double phase_x = 0.0;
  double phase_y = 0.0;

  double elevation(double x, double y) const noexcept;
};

struct Scene {
  Ground ground;
  std::vector<Sphere> spheres;
  std::vector<Box> boxes;
  std::vector<Cylinder> cylinders;
};

/// Smallest positive hit distance along a unit direction, if any.
std::optional<double> intersect(const Sphere& s, const Vec3& dir);
std::optional<double> intersect(const Box& b, const Vec3& dir);
std::optional<double> intersect(const Cylinder& c, const Vec3& dir);
std::optional<double> intersect(const Ground& g, const Vec3& dir, double max_range);

/// Nearest hit over all primitives, or nullopt beyond max_range.
std::optional<double> trace_ray(const Scene& scene, const Vec3& dir, double max_range);

/// Casts one ray per cell-center direction of the model.
RangeImage render(const Scene& scene, const ProjectionModel& model, double max_range);

// ---------------------------------------------------------------------------
// Generators

enum class GeneratorKind { GeoSet, Misc1, Misc2, Misc3, Misc4, PseudoReal };

std::string_view kind_name(GeneratorKind k);
GeneratorKind parse_kind(std::string_view name);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct CountRange {
  int lo = 0;
  int hi = 0;
};

struct GeoSetParams {
  CountRange spheres{2, 8};
  CountRange boxes{2, 8};
  Range sphere_radius{0.3, 2.0};
  Range box_footprint{0.5, 4.0};
  Range box_height{0.5, 3.0};
  Range placement_distance{3.0, 40.0};
};

/// Radial noise applied to Syn scenes; sigma drawn once per scene.
struct AugmentParams {
  Range sigma{0.0, 0.0};
};

struct MiscParams {
  Range ramp{2.0, 80.0};               // Misc1/2 depth endpoints
  Range ramp_noise{0.0, 0.5};          // Misc1/2 noise sigma
  Range gaussian_mean{5.0, 40.0};      // Misc3/4 base depth
  Range gaussian_sigma{0.1, 2.0};      // Misc3/4 base sigma
  CountRange patches{5, 30};           // Misc4
  CountRange patch_rows{2, 16};
  CountRange patch_cols{4, 64};
  Range patch_depth{2.0, 60.0};
  Range patch_noise{0.0, 0.5};         // Misc4 noise added after patching
};

/// Enrichments over a GeoSet base scene; zero values disable each one.
struct PseudoRealParams {
  double dropout = 0.0;
  double noise_base = 0.0;       // range noise sigma = noise_base + noise_per_meter * r
  double noise_per_meter = 0.0;
  double undulation_amplitude = 0.0;
  double undulation_wavelength = 8.0;
  CountRange cylinders{0, 0};
  Range cylinder_radius{0.1, 0.5};
  Range cylinder_height{2.0, 6.0};
  CountRange composites{0, 0};
  CountRange composite_parts{2, 4};

  /// Built-in sub-regimes 0, 1 and 2.
  static PseudoRealParams regime(int id);
};

struct GeneratorConfig {
  GeneratorKind kind = GeneratorKind::GeoSet;
  ProjectionModel projection;
  double sensor_height = 1.73;
  double max_range = 80.0;
  GeoSetParams geoset;
  AugmentParams augment;
  MiscParams misc;
  PseudoRealParams pseudoreal;

  void validate() const;
};

/// Random GeoSet scene (ground plane, spheres, boxes).
Scene sample_geoset_scene(const GeneratorConfig& config, Rng& rng);

/// Ray-traced GeoSet scene; category Syn, dataset_id 0, no augmentation.
metric::SceneSample gen_geoset(const GeneratorConfig& config, std::uint64_t seed);

/// Misc1..Misc4 range-image families; category Misc, dataset_id 0.
metric::SceneSample gen_misc(int kind, const GeneratorConfig& config, std::uint64_t seed);
RangeImage misc_image(int kind, const GeneratorConfig& config, std::uint64_t seed, std::vector<int>* patch_owner = nullptr);

/// Moves every point along its ray by N(0, sigma), sigma ~ U(sigma_range) once per scene.
PointCloud augment_syn(const PointCloud& cloud, Range sigma_range, std::uint64_t seed, double* drawn_sigma = nullptr);

/// GeoSet base (same stream as gen_geoset) plus the configured enrichments; category Real.
metric::SceneSample gen_pseudoreal(const GeneratorConfig& config, std::uint64_t seed);
RangeImage pseudoreal_image(const GeneratorConfig& config, std::uint64_t seed);

/// Dispatches on config.kind; GeoSet output is augmented when augment.sigma.hi > 0.
metric::SceneSample generate(const GeneratorConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Registry and on-disk datasets

enum class Split { Train, Val, Test };
std::string_view split_name(Split s);
Split parse_split(std::string_view name);

struct DatasetSpec {
  std::string name;
  metric::Category category = metric::Category::Syn;
  int dataset_id = 0;
  bool held_out = false;  // never used for training
  GeneratorConfig generator;
  std::array<int, 3> counts{0, 0, 0};  // train, val, test
};

struct DatasetRegistry {
  std::vector<DatasetSpec> datasets;

  void validate() const;
  /// Adversary widths from the training (non-held-out) datasets.
  std::array<int, metric::kCategories> adversary_outputs() const;
  const DatasetSpec& find(const std::string& name) const;

  /// PseudoReal regimes 0/1, GeoSet with augmentation and Misc1-3 for training;
  /// Misc4 and PseudoReal regime 2 held out.
  static DatasetRegistry standard(const ProjectionModel& projection, std::array<int, 3> counts);
};

struct ManifestRecord {
  std::string relative_path;
  metric::Category category = metric::Category::Syn;
  int dataset_id = 0;
  Split split = Split::Train;
  std::uint64_t seed = 0;
  std::string dataset;
  bool held_out = false;

  bool operator==(const ManifestRecord&) const = default;
};

/// Seed of sample `index` of a dataset split.
std::uint64_t sample_seed(std::uint64_t seed, const std::string& dataset, Split split, int index);

/// Records in deterministic order without generating anything.
std::vector<ManifestRecord> plan_registry(const DatasetRegistry& registry, std::uint64_t seed);

/// Writes every sample as a KITTI binary plus manifest.jsonl under root.
std::vector<ManifestRecord> materialize_registry(const DatasetRegistry& registry, std::uint64_t seed,
                                                 const std::filesystem::path& root);

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

metric::SceneSample load_sample(const std::filesystem::path& root, const ManifestRecord& record);

/// Generates the samples of the given records in memory (parallel over records).
std::vector<metric::SceneSample> generate_records(const DatasetRegistry& registry,
                                                  const std::vector<ManifestRecord>& records);

}  // namespace lrm::datagen
