#include "lrm/config.hpp"

#include <fstream>

namespace lrm::config {

using nlohmann::json;

namespace {

json range_json(datagen::Range r) { return json::array({r.lo, r.hi}); }
json count_json(datagen::CountRange r) { return json::array({r.lo, r.hi}); }

datagen::Range range_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }
datagen::CountRange count_from(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>()}; }

json generator_params_json(const datagen::GeneratorConfig& g) {
  const auto& s = g.geoset;
  const auto& m = g.misc;
  const auto& p = g.pseudoreal;
  return {{"sensor_height", g.sensor_height},
          {"max_range", g.max_range},
          {"geoset",
           {{"spheres", count_json(s.spheres)},
            {"boxes", count_json(s.boxes)},
            {"sphere_radius", range_json(s.sphere_radius)},
            {"box_footprint", range_json(s.box_footprint)},
            {"box_height", range_json(s.box_height)},
            {"placement_distance", range_json(s.placement_distance)}}},
          {"augment", {{"sigma", range_json(g.augment.sigma)}}},
          {"misc",
           {{"ramp", range_json(m.ramp)},
            {"ramp_noise", range_json(m.ramp_noise)},
            {"gaussian_mean", range_json(m.gaussian_mean)},
            {"gaussian_sigma", range_json(m.gaussian_sigma)},
            {"patches", count_json(m.patches)},
            {"patch_rows", count_json(m.patch_rows)},
            {"patch_cols", count_json(m.patch_cols)},
            {"patch_depth", range_json(m.patch_depth)},
            {"patch_noise", range_json(m.patch_noise)}}},
          {"pseudoreal",
           {{"dropout", p.dropout},
            {"noise_base", p.noise_base},
            {"noise_per_meter", p.noise_per_meter},
            {"undulation_amplitude", p.undulation_amplitude},
            {"undulation_wavelength", p.undulation_wavelength},
            {"cylinders", count_json(p.cylinders)},
            {"cylinder_radius", range_json(p.cylinder_radius)},
            {"cylinder_height", range_json(p.cylinder_height)},
            {"composites", count_json(p.composites)},
            {"composite_parts", count_json(p.composite_parts)}}}};
}

void generator_params_from(const json& j, datagen::GeneratorConfig& g) {
  g.sensor_height = j.at("sensor_height");
  g.max_range = j.at("max_range");
  const auto& s = j.at("geoset");
  g.geoset.spheres = count_from(s.at("spheres"));
  g.geoset.boxes = count_from(s.at("boxes"));
  g.geoset.sphere_radius = range_from(s.at("sphere_radius"));
  g.geoset.box_footprint = range_from(s.at("box_footprint"));
  g.geoset.box_height = range_from(s.at("box_height"));
  g.geoset.placement_distance = range_from(s.at("placement_distance"));
  g.augment.sigma = range_from(j.at("augment").at("sigma"));
  const auto& m = j.at("misc");
  g.misc.ramp = range_from(m.at("ramp"));
  g.misc.ramp_noise = range_from(m.at("ramp_noise"));
  g.misc.gaussian_mean = range_from(m.at("gaussian_mean"));
  g.misc.gaussian_sigma = range_from(m.at("gaussian_sigma"));
  g.misc.patches = count_from(m.at("patches"));
  g.misc.patch_rows = count_from(m.at("patch_rows"));
  g.misc.patch_cols = count_from(m.at("patch_cols"));
  g.misc.patch_depth = range_from(m.at("patch_depth"));
  g.misc.patch_noise = range_from(m.at("patch_noise"));
  const auto& p = j.at("pseudoreal");
  g.pseudoreal.dropout = p.at("dropout");
  g.pseudoreal.noise_base = p.at("noise_base");
  g.pseudoreal.noise_per_meter = p.at("noise_per_meter");
  g.pseudoreal.undulation_amplitude = p.at("undulation_amplitude");
  g.pseudoreal.undulation_wavelength = p.at("undulation_wavelength");
  g.pseudoreal.cylinders = count_from(p.at("cylinders"));
  g.pseudoreal.cylinder_radius = range_from(p.at("cylinder_radius"));
  g.pseudoreal.cylinder_height = range_from(p.at("cylinder_height"));
  g.pseudoreal.composites = count_from(p.at("composites"));
  g.pseudoreal.composite_parts = count_from(p.at("composite_parts"));
}

json dataset_json(const datagen::DatasetSpec& d) {
  json j = {{"name", d.name},
            {"category", metric::category_name(d.category)},
            {"dataset_id", d.dataset_id},
            {"held_out", d.held_out},
            {"kind", datagen::kind_name(d.generator.kind)},
            {"counts", d.counts}};
  j["generator"] = generator_params_json(d.generator);
  return j;
}

datagen::DatasetSpec dataset_from(const json& j, const ProjectionModel& projection) {
  datagen::DatasetSpec d;
  d.name = j.at("name");
  d.category = metric::parse_category(j.at("category").get<std::string>());
  d.dataset_id = j.at("dataset_id");
  d.held_out = j.at("held_out");
  d.generator.kind = datagen::parse_kind(j.at("kind").get<std::string>());
  d.generator.projection = projection;
  d.counts = j.at("counts").get<std::array<int, 3>>();
  generator_params_from(j.at("generator"), d.generator);
  return d;
}

json arch_json(const metric::MetricArchConfig& a) {
  return {{"q1", a.q1},
          {"k1", a.k1},
          {"q2", a.q2},
          {"k2", a.k2},
          {"mlp1", a.mlp1},
          {"mlp2", a.mlp2},
          {"head_hidden", a.head_hidden},
          {"dropout", a.dropout},
          {"leak", a.leak},
          {"adversary_outputs", a.adversary_outputs}};
}

json adam_json(const nn::AdamConfig& a) {
  return {{"beta1", a.beta1},
          {"beta2", a.beta2},
          {"eps", a.eps},
          {"base_lr", a.schedule.base_lr},
          {"warmup_start_ratio", a.schedule.warmup_start_ratio},
          {"warmup_steps", a.schedule.warmup_steps},
          {"decay_rate", a.schedule.decay_rate},
          {"decay_steps", a.schedule.decay_steps}};
}

nn::AdamConfig adam_from(const json& j) {
  nn::AdamConfig a;
  a.beta1 = j.at("beta1");
  a.beta2 = j.at("beta2");
  a.eps = j.at("eps");
  a.schedule.base_lr = j.at("base_lr");
  a.schedule.warmup_start_ratio = j.at("warmup_start_ratio");
  a.schedule.warmup_steps = j.at("warmup_steps");
  a.schedule.decay_rate = j.at("decay_rate");
  a.schedule.decay_steps = j.at("decay_steps");
  return a;
}

json generator_json(const upsample::GeneratorConfig& c) {
  return {{"factor", c.factor},           {"residual_blocks", c.residual_blocks},
          {"channels", c.channels},       {"stage_channels", c.stage_channels},
          {"head_kernel", c.head_kernel}, {"tail_kernel", c.tail_kernel},
          {"log_offset", c.log_offset},   {"fill_depth", c.fill_depth},
          {"min_depth", c.min_depth},     {"max_depth", c.max_depth},
          {"bn_momentum", c.bn_momentum}, {"bn_eps", c.bn_eps}};
}

upsample::GeneratorConfig generator_from(const json& j) {
  upsample::GeneratorConfig c;
  c.factor = j.at("factor");
  c.residual_blocks = j.at("residual_blocks");
  c.channels = j.at("channels");
  c.stage_channels = j.at("stage_channels");
  c.head_kernel = j.at("head_kernel");
  c.tail_kernel = j.at("tail_kernel");
  c.log_offset = j.at("log_offset");
  c.fill_depth = j.at("fill_depth");
  c.min_depth = j.at("min_depth");
  c.max_depth = j.at("max_depth");
  c.bn_momentum = j.at("bn_momentum");
  c.bn_eps = j.at("bn_eps");
  return c;
}

// Every key of `patch` must exist in `base`; objects merge recursively, other values replace.
void merge_checked(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw InvalidArgument(where + " must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw InvalidArgument("unknown config key " + path);
    json& slot = base[it.key()];
    if (slot.is_object() && it->is_object())
      merge_checked(slot, *it, path);
    else
      slot = *it;
  }
}

}  // namespace

json projection_json(const ProjectionModel& m) {
  return {{"rows", m.rows},
          {"cols", m.cols},
          {"elevation_min", m.elevation_min},
          {"elevation_max", m.elevation_max},
          {"invalid_depth", m.invalid_depth}};
}

ProjectionModel projection_from_json(const json& j) {
  ProjectionModel m;
  m.rows = j.at("rows");
  m.cols = j.at("cols");
  m.elevation_min = j.at("elevation_min");
  m.elevation_max = j.at("elevation_max");
  m.invalid_depth = j.at("invalid_depth");
  return m;
}

datagen::DatasetRegistry RegistryConfig::build(const ProjectionModel& projection) const {
  if (preset == "standard") return datagen::DatasetRegistry::standard(projection, counts);
  LRM_REQUIRE(preset == "custom", "registry preset must be standard or custom");
  datagen::DatasetRegistry r;
  r.datasets = datasets;
  for (auto& d : r.datasets) d.generator.projection = projection;
  r.validate();
  return r;
}

void RunConfig::validate() const {
  projection.validate();
  metric.validate();
  train.validate();
  registry.build(projection);
  for (double l : sweep_lambdas) LRM_REQUIRE(l >= 0 && std::isfinite(l), "sweep lambdas must be finite and >= 0");
  LRM_REQUIRE(upsample.method == "nearest" || upsample.method == "bilinear" || upsample.method == "learned",
              "upsample method must be nearest, bilinear or learned");
  upsample.generator.validate();
  upsample.discriminator.validate();
  upsample.train.validate();
}

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["projection"] = projection_json(c.projection);
  json datasets = json::array();
  for (const auto& d : c.registry.datasets) datasets.push_back(dataset_json(d));
  j["registry"] = {{"preset", c.registry.preset}, {"counts", c.registry.counts}, {"datasets", datasets}};
  j["metric"] = arch_json(c.metric);
  j["train"] = {{"steps", c.train.steps},
                {"per_category", c.train.per_category},
                {"lambda", c.train.lambda},
                {"eval_every", c.train.eval_every},
                {"adversaries", c.train.adversaries},
                {"adam", adam_json(c.train.adam)}};
  j["sweep"] = {{"lambdas", c.sweep_lambdas}};
  j["score"] = {{"per_query", c.score.per_query}, {"ply", c.score.ply}};
  j["features"] = {{"layout", reports::layout_name(c.feature_layout)}};
  const auto& d = c.upsample.discriminator;
  const auto& t = c.upsample.train;
  j["upsample"] = {{"method", c.upsample.method},
                   {"generator", generator_json(c.upsample.generator)},
                   {"discriminator",
                    {{"height", d.height},
                     {"width", d.width},
                     {"widths", d.widths},
                     {"dense", d.dense},
                     {"leak", d.leak},
                     {"bn_momentum", d.bn_momentum},
                     {"bn_eps", d.bn_eps}}},
                   {"train",
                    {{"mode", upsample::mode_name(t.mode)},
                     {"steps", t.steps},
                     {"batch", t.batch},
                     {"crop_cols", t.crop_cols},
                     {"log_every", t.log_every},
                     {"adam", adam_json(t.adam)}}}};
  return j;
}

RunConfig from_json(const json& user) {
  json full = to_json(RunConfig{});
  try {
    json datasets;
    json patch = user;
    if (patch.contains("registry") && patch["registry"].is_object() && patch["registry"].contains("datasets")) {
      datasets = patch["registry"]["datasets"];
      patch["registry"].erase("datasets");
    }
    merge_checked(full, patch, "");
    if (!datasets.is_null()) {
      if (!datasets.is_array()) throw InvalidArgument("registry.datasets must be an array");
      json merged = json::array();
      datagen::DatasetSpec blank;
      blank.name = "";
      for (const auto& d : datasets) {
        json base = dataset_json(blank);
        merge_checked(base, d, "registry.datasets[]");
        merged.push_back(base);
      }
      full["registry"]["datasets"] = merged;
    }

    RunConfig c;
    c.seed = full.at("seed");
    c.projection = projection_from_json(full.at("projection"));
    const auto& r = full.at("registry");
    c.registry.preset = r.at("preset");
    c.registry.counts = r.at("counts").get<std::array<int, 3>>();
    for (const auto& d : r.at("datasets")) c.registry.datasets.push_back(dataset_from(d, c.projection));
    const auto& a = full.at("metric");
    c.metric.q1 = a.at("q1");
    c.metric.k1 = a.at("k1");
    c.metric.q2 = a.at("q2");
    c.metric.k2 = a.at("k2");
    c.metric.mlp1 = a.at("mlp1").get<std::vector<int>>();
    c.metric.mlp2 = a.at("mlp2").get<std::vector<int>>();
    c.metric.head_hidden = a.at("head_hidden");
    c.metric.dropout = a.at("dropout");
    c.metric.leak = a.at("leak");
    c.metric.adversary_outputs = a.at("adversary_outputs").get<std::array<int, metric::kCategories>>();
    const auto& t = full.at("train");
    c.train.steps = t.at("steps");
    c.train.per_category = t.at("per_category");
    c.train.lambda = t.at("lambda");
    c.train.eval_every = t.at("eval_every");
    c.train.adversaries = t.at("adversaries");
    c.train.adam = adam_from(t.at("adam"));
    c.train.seed = c.seed;
    c.sweep_lambdas = full.at("sweep").at("lambdas").get<std::vector<double>>();
    c.score.per_query = full.at("score").at("per_query");
    c.score.ply = full.at("score").at("ply");
    c.feature_layout = reports::parse_layout(full.at("features").at("layout").get<std::string>());
    const auto& u = full.at("upsample");
    c.upsample.method = u.at("method");
    c.upsample.generator = generator_from(u.at("generator"));
    const auto& d = u.at("discriminator");
    c.upsample.discriminator.height = d.at("height");
    c.upsample.discriminator.width = d.at("width");
    c.upsample.discriminator.widths = d.at("widths").get<std::vector<int>>();
    c.upsample.discriminator.dense = d.at("dense");
    c.upsample.discriminator.leak = d.at("leak");
    c.upsample.discriminator.bn_momentum = d.at("bn_momentum");
    c.upsample.discriminator.bn_eps = d.at("bn_eps");
    const auto& ut = u.at("train");
    c.upsample.train.mode = upsample::parse_mode(ut.at("mode").get<std::string>());
    c.upsample.train.steps = ut.at("steps");
    c.upsample.train.batch = ut.at("batch");
    c.upsample.train.crop_cols = ut.at("crop_cols");
    c.upsample.train.log_every = ut.at("log_every");
    c.upsample.train.adam = adam_from(ut.at("adam"));
    c.upsample.train.seed = c.seed;
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("bad config value: ") + e.what());
  }
}

RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidArgument("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

void save(const std::filesystem::path& path, const RunConfig& config) {
  const std::string text = to_json(config).dump(2) + "\n";
  write_file_atomic(path, [&](std::ostream& out) { out << text; });
}

}  // namespace lrm::config
