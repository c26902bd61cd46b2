#include "commands.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "lrm/baselines.hpp"
#include "lrm/config.hpp"
#include "lrm/datagen.hpp"
#include "lrm/io.hpp"
#include "lrm/metric_train.hpp"
#include "lrm/reports.hpp"
#include "lrm/upsample.hpp"

namespace lrm::cli {
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool need_out = true) {
  cmd->add_option("--config", c.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "global seed (overrides the config)");
  auto* o = cmd->add_option("--out", c.out, "output directory");
  if (need_out) o->required();
}

config::RunConfig resolve(const Common& c) {
  config::RunConfig cfg = c.config_path.empty() ? config::from_json(nlohmann::json::object()) : config::load(c.config_path);
  if (c.seed) cfg.seed = *c.seed;
  cfg.train.seed = cfg.seed;
  cfg.upsample.train.seed = cfg.seed;
  return cfg;
}

void snapshot(const fs::path& out, const config::RunConfig& cfg) {
  cfg.validate();
  config::save(out / "resolved_config.json", cfg);
}

std::string scene_id_of(const datagen::ManifestRecord& r) {
  fs::path p = r.relative_path;
  p.replace_extension();
  return p.generic_string();
}

std::string file_safe(std::string s) {
  std::replace(s.begin(), s.end(), '/', '_');
  return s;
}

struct LoadedSplit {
  std::vector<datagen::ManifestRecord> records;
  std::vector<metric::SceneSample> samples;
};

LoadedSplit load_split(const fs::path& root, datagen::Split split, bool held_out) {
  const auto manifest = root / "manifest.jsonl";
  if (!fs::exists(manifest)) throw IoError("no dataset at " + root.string() + " (manifest.jsonl missing)");
  LoadedSplit out;
  for (const auto& r : datagen::read_manifest(manifest)) {
    if (r.split != split || r.held_out != held_out) continue;
    out.records.push_back(r);
  }
  out.samples.resize(out.records.size());
  for (std::size_t i = 0; i < out.records.size(); ++i) out.samples[i] = datagen::load_sample(root, out.records[i]);
  return out;
}

/// Adversary widths implied by the training records.
std::array<int, metric::kCategories> widths_from(const std::vector<datagen::ManifestRecord>& records) {
  std::array<int, metric::kCategories> w{1, 1, 1};
  for (const auto& r : records) {
    auto& slot = w[static_cast<std::size_t>(metric::index_of(r.category))];
    slot = std::max(slot, r.dataset_id + 1);
  }
  return w;
}

metric::MetricModel<float> load_metric(const fs::path& path) {
  return metric::MetricModel<float>::from_checkpoint(nn::read_checkpoint(path));
}

/// Reads a scene file: KITTI .bin clouds or .rimg range images (backprojected).
PointCloud read_cloud(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".bin") return io::read_kitti_bin(path);
  if (ext == ".rimg") return backproject(io::read_range_image(path));
  throw InvalidArgument("unsupported scene file " + path.string() + " (expected .bin or .rimg)");
}

RangeImage read_image(const fs::path& path, const ProjectionModel& projection) {
  const auto ext = path.extension().string();
  if (ext == ".rimg") return io::read_range_image(path);
  if (ext == ".bin") return project_cylindrical(io::read_kitti_bin(path), projection);
  throw InvalidArgument("unsupported scene file " + path.string() + " (expected .bin or .rimg)");
}

std::string lambda_tag(double lambda) {
  std::ostringstream s;
  s << lambda;
  return s.str();
}

nlohmann::json accuracy_json(const metric::Accuracy& a) {
  return {{"classifier", a.classifier},
          {"scene", a.scene},
          {"adversary", a.adversary},
          {"adversary_samples", a.samples},
          {"adversary_weighted", a.adversary_weighted},
          {"chance", a.chance},
          {"weighted_chance", a.weighted_chance}};
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  const std::string text = j.dump(2) + "\n";
  write_file_atomic(path, [&](std::ostream& o) { o << text; });
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  Common common;
  std::optional<int> train, val, test;
};

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  auto cfg = resolve(a.common);
  if (a.train) cfg.registry.counts[0] = *a.train;
  if (a.val) cfg.registry.counts[1] = *a.val;
  if (a.test) cfg.registry.counts[2] = *a.test;
  const fs::path root = a.common.out;
  snapshot(root, cfg);
  const auto registry = cfg.registry.build(cfg.projection);
  const auto records = datagen::materialize_registry(registry, cfg.seed, root);
  out << "wrote " << records.size() << " samples to " << root.string() << "\n";
  return kOk;
}

struct TrainArgs {
  Common common;
  std::string data;
  std::optional<double> lambda;
  std::optional<int> steps;
  std::vector<double> lambdas;
};

struct TrainData {
  std::vector<metric::PreparedSample> train, val, test;
};

TrainData prepare_training(const fs::path& root, config::RunConfig& cfg) {
  auto train = load_split(root, datagen::Split::Train, false);
  if (train.samples.empty()) throw IoError("dataset has no training samples");
  cfg.metric.adversary_outputs = widths_from(train.records);
  TrainData d;
  d.train = metric::prepare_samples(train.samples, cfg.metric);
  d.val = metric::prepare_samples(load_split(root, datagen::Split::Val, false).samples, cfg.metric);
  d.test = metric::prepare_samples(load_split(root, datagen::Split::Test, false).samples, cfg.metric);
  return d;
}

/// Trains one model and writes checkpoint, history and summary under dir.
metric::Accuracy train_one(const TrainData& d, const config::RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const auto& monitor = d.val.empty() ? d.test : d.val;
  auto result = metric::train_metric(d.train, monitor, cfg.metric, cfg.train, [&](const metric::HistoryRow& r) {
    out << "step " << r.step << " loss " << r.loss << " cls " << r.classifier_acc << " adv_w " << r.adv_weighted_acc
        << "\n";
  });
  nlohmann::json extra = {{"lambda", cfg.train.lambda}, {"steps", cfg.train.steps}, {"seed", cfg.seed}};
  nn::write_checkpoint(dir / "metric.ckpt", result.model.to_checkpoint(extra.dump()));
  reports::write_history_csv(dir / "history.csv", result.history);
  metric::Accuracy acc;
  nlohmann::json summary = {{"lambda", cfg.train.lambda}};
  if (!d.test.empty()) {
    acc = metric::evaluate(result.model, d.test);
    summary["test"] = accuracy_json(acc);
  }
  write_json(dir / "summary.json", summary);
  return acc;
}

int cmd_train_metric(const TrainArgs& a, std::ostream& out) {
  auto cfg = resolve(a.common);
  if (a.lambda) cfg.train.lambda = *a.lambda;
  if (a.steps) cfg.train.steps = *a.steps;
  cfg.train.validate();
  const auto data = prepare_training(a.data, cfg);
  const fs::path dir = a.common.out;
  snapshot(dir, cfg);
  const auto acc = train_one(data, cfg, dir, out);
  out << "test scene accuracy " << acc.scene << "\n";
  return kOk;
}

int cmd_sweep(const TrainArgs& a, std::ostream& out) {
  auto cfg = resolve(a.common);
  if (!a.lambdas.empty()) cfg.sweep_lambdas = a.lambdas;
  if (a.steps) cfg.train.steps = *a.steps;
  const auto data = prepare_training(a.data, cfg);
  const fs::path dir = a.common.out;
  snapshot(dir, cfg);
  std::vector<std::pair<double, metric::Accuracy>> results;
  for (double lambda : cfg.sweep_lambdas) {
    auto run = cfg;
    run.train.lambda = lambda;
    out << "lambda " << lambda << "\n";
    results.emplace_back(lambda, train_one(data, run, dir / ("lambda_" + lambda_tag(lambda)), out));
  }
  write_file_atomic(dir / "sweep.csv", [&](std::ostream& o) {
    o.precision(17);
    o << "lambda,classifier_acc,scene_acc,adv_real_acc,adv_syn_acc,adv_misc_acc,adv_weighted_acc,weighted_chance\n";
    for (const auto& [l, acc] : results)
      o << l << ',' << acc.classifier << ',' << acc.scene << ',' << acc.adversary[0] << ',' << acc.adversary[1] << ','
        << acc.adversary[2] << ',' << acc.adversary_weighted << ',' << acc.weighted_chance << '\n';
  });
  return kOk;
}

struct ScoreArgs {
  Common common;
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::vector<std::string> inputs;
  bool per_query = false;
  bool ply = false;
};

struct NamedCloud {
  std::string id;
  PointCloud cloud;
  metric::Category category = metric::Category::Real;
  int dataset_id = 0;
};

std::vector<NamedCloud> gather_inputs(const std::string& data, const std::string& split,
                                      const std::vector<std::string>& inputs) {
  std::vector<NamedCloud> scenes;
  if (!data.empty()) {
    const auto s = datagen::parse_split(split);
    for (bool held : {false, true}) {
      auto loaded = load_split(data, s, held);
      for (std::size_t i = 0; i < loaded.records.size(); ++i)
        scenes.push_back({scene_id_of(loaded.records[i]), std::move(loaded.samples[i].cloud), loaded.records[i].category,
                          loaded.records[i].dataset_id});
    }
  }
  for (const auto& in : inputs) scenes.push_back({fs::path(in).stem().string(), read_cloud(in)});
  if (scenes.empty()) throw InvalidArgument("no scenes to process: pass --data or input files");
  return scenes;
}

void check_arch(const Common& c, const config::RunConfig& cfg, const metric::MetricModel<float>& model) {
  if (c.config_path.empty()) return;
  auto want = cfg.metric;
  want.adversary_outputs = model.config().adversary_outputs;
  if (want.digest() != model.config().digest())
    throw InvalidArgument("checkpoint architecture does not match the configured metric architecture");
}

int cmd_score(const ScoreArgs& a, std::ostream& out) {
  auto cfg = resolve(a.common);
  if (a.per_query) cfg.score.per_query = true;
  if (a.ply) cfg.score.ply = true;
  const auto model = load_metric(a.checkpoint);
  check_arch(a.common, cfg, model);
  const auto scenes = gather_inputs(a.data, a.split, a.inputs);
  const fs::path dir = a.common.out;
  snapshot(dir, cfg);
  std::vector<metric::MetricScores> scores(scenes.size());
  const auto n = static_cast<std::ptrdiff_t>(scenes.size());
  std::vector<std::string> errors(scenes.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      scores[static_cast<std::size_t>(i)] = model.score_scene(scenes[static_cast<std::size_t>(i)].cloud);
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty()) throw InvalidArgument(scenes[i].id + ": " + errors[i]);
  std::vector<reports::ScoreRow> rows;
  std::vector<reports::QueryRow> queries;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    rows.push_back({scenes[i].id, scores[i].scene});
    if (cfg.score.per_query) {
      auto q = reports::query_rows(scenes[i].id, scores[i]);
      queries.insert(queries.end(), q.begin(), q.end());
    }
    if (cfg.score.ply) reports::write_score_ply(dir / "ply" / (file_safe(scenes[i].id) + ".ply"), scores[i]);
  }
  reports::write_scores_csv(dir / "scores.csv", rows);
  if (cfg.score.per_query) reports::write_query_csv(dir / "queries.csv", queries);
  out << "scored " << rows.size() << " scenes\n";
  return kOk;
}

int cmd_export_features(const ScoreArgs& a, const std::string& layout, std::ostream& out) {
  auto cfg = resolve(a.common);
  if (!layout.empty()) cfg.feature_layout = reports::parse_layout(layout);
  const auto model = load_metric(a.checkpoint);
  check_arch(a.common, cfg, model);
  const auto scenes = gather_inputs(a.data, a.split, a.inputs);
  const fs::path dir = a.common.out;
  snapshot(dir, cfg);
  std::vector<reports::FeatureRow> rows;
  for (const auto& s : scenes) {
    auto r = reports::feature_rows(model.extract_features(s.cloud), s.category, s.dataset_id, cfg.feature_layout);
    rows.insert(rows.end(), std::make_move_iterator(r.begin()), std::make_move_iterator(r.end()));
  }
  reports::write_features_csv(dir / "features.csv", rows);
  out << "exported " << rows.size() << " feature rows\n";
  return kOk;
}

struct BaselineArgs {
  Common common;
  std::string pred;
  std::string target;
  std::string method;
};

std::map<std::string, fs::path> image_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::map<std::string, fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".rimg") files[e.path().stem().string()] = e.path();
  return files;
}

int cmd_eval_baselines(const BaselineArgs& a, std::ostream& out) {
  const auto cfg = resolve(a.common);
  const auto pred = image_files(a.pred);
  const auto target = image_files(a.target);
  if (pred.empty()) throw IoError("no .rimg files in " + a.pred);
  std::vector<std::string> missing;
  for (const auto& [id, _] : pred)
    if (!target.count(id)) missing.push_back(id);
  for (const auto& [id, _] : target)
    if (!pred.count(id)) missing.push_back(id);
  if (!missing.empty()) throw IoError("prediction and target lists are misaligned at " + missing.front());
  const std::string method = a.method.empty() ? fs::path(a.pred).lexically_normal().filename().string() : a.method;
  const fs::path dir = a.common.out;
  snapshot(dir, cfg);
  std::vector<baselines::BaselineRow> rows;
  for (const auto& [id, path] : pred)
    rows.push_back(baselines::evaluate_pair(id, method, io::read_range_image(path), io::read_range_image(target.at(id))));
  reports::write_baselines_csv(dir / "baselines.csv", rows);
  for (const auto& agg : baselines::aggregate(rows))
    out << agg.method << " cd " << agg.mean.cd_m << " mae " << agg.mean.mae_m << " mse " << agg.mean.mse_m2 << "\n";
  return kOk;
}

struct UpsampleArgs {
  Common common;
  std::string method;
  std::optional<int> factor;
  std::string checkpoint;
  bool from_hr = false;
  std::vector<std::string> inputs;
};

int cmd_upsample(const UpsampleArgs& a, std::ostream& out) {
  auto cfg = resolve(a.common);
  if (!a.method.empty()) cfg.upsample.method = a.method;
  if (a.factor) cfg.upsample.generator.factor = *a.factor;
  std::optional<upsample::SrGenerator<float>> generator;
  if (cfg.upsample.method == "learned") {
    if (a.checkpoint.empty()) throw InvalidArgument("learned up-sampling needs --checkpoint");
    generator.emplace(upsample::SrGenerator<float>::from_checkpoint(nn::read_checkpoint(a.checkpoint)));
    if (a.factor && *a.factor != generator->config().factor)
      throw InvalidArgument("--factor differs from the checkpoint's factor");
    cfg.upsample.generator = generator->config();
  }
  if (a.inputs.empty()) throw InvalidArgument("no input scenes");
  const int f = cfg.upsample.generator.factor;
  const fs::path dir = a.common.out;
  snapshot(dir, cfg);
  for (const auto& in : a.inputs) {
    RangeImage lr = read_image(in, cfg.projection);
    if (a.from_hr) lr = upsample::make_lr(lr, f);
    RangeImage hr;
    if (cfg.upsample.method == "nearest")
      hr = upsample::upsample_nearest(lr, f);
    else if (cfg.upsample.method == "bilinear")
      hr = upsample::upsample_bilinear(lr, f);
    else
      hr = generator->upsample(lr);
    const std::string stem = fs::path(in).stem().string();
    io::write_range_image(dir / (stem + ".rimg"), hr);
    io::write_kitti_bin(dir / (stem + ".bin"), backproject(hr));
  }
  out << "up-sampled " << a.inputs.size() << " scenes (" << cfg.upsample.method << ", x" << f << ")\n";
  return kOk;
}

struct TrainUpsamplerArgs {
  Common common;
  std::string data;
  std::vector<std::string> datasets;
  std::string mode;
  std::optional<int> steps;
};

int cmd_train_upsampler(const TrainUpsamplerArgs& a, std::ostream& out) {
  auto cfg = resolve(a.common);
  if (!a.mode.empty()) cfg.upsample.train.mode = upsample::parse_mode(a.mode);
  if (a.steps) cfg.upsample.train.steps = *a.steps;
  auto loaded = load_split(a.data, datagen::Split::Train, false);
  std::vector<RangeImage> images;
  for (std::size_t i = 0; i < loaded.records.size(); ++i) {
    const auto& r = loaded.records[i];
    const bool wanted = a.datasets.empty() ? r.category == metric::Category::Real
                                           : std::find(a.datasets.begin(), a.datasets.end(), r.dataset) != a.datasets.end();
    if (wanted) images.push_back(project_cylindrical(loaded.samples[i].cloud, cfg.projection));
  }
  if (images.empty()) throw IoError("no training scenes selected");
  const auto pairs = upsample::make_pairs(images, cfg.upsample.generator.factor);
  if (cfg.upsample.train.mode == upsample::TrainMode::Gan) {
    cfg.upsample.discriminator.height = images.front().rows();
    cfg.upsample.discriminator.width = cfg.upsample.train.crop_cols > 0
                                           ? std::min(cfg.upsample.train.crop_cols, images.front().cols())
                                           : images.front().cols();
  }
  const fs::path dir = a.common.out;
  snapshot(dir, cfg);
  auto result = upsample::train_upsampler(pairs, cfg.upsample.generator, cfg.upsample.discriminator, cfg.upsample.train,
                                          [&](const upsample::UpsampleLogRow& r) {
                                            out << "step " << r.step << " g " << r.generator_loss << " d "
                                                << r.discriminator_loss << "\n";
                                          });
  nlohmann::json extra = {{"mode", upsample::mode_name(cfg.upsample.train.mode)}, {"seed", cfg.seed}};
  nn::write_checkpoint(dir / "generator.ckpt", result.generator.to_checkpoint(extra.dump()));
  write_file_atomic(dir / "upsampler_log.csv", [&](std::ostream& o) {
    o.precision(17);
    o << "step,generator_loss,discriminator_loss\n";
    for (const auto& r : result.log) o << r.step << ',' << r.generator_loss << ',' << r.discriminator_loss << '\n';
  });
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"LiDAR realism metric toolkit", "lrm"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "materialize a synthetic dataset registry");
  add_common(g, gen.common);
  g->add_option("--train", gen.train, "training scenes per dataset");
  g->add_option("--val", gen.val, "validation scenes per dataset");
  g->add_option("--test", gen.test, "test scenes per dataset");

  TrainArgs tm;
  auto* t = app.add_subcommand("train-metric", "train the realism metric");
  add_common(t, tm.common);
  t->add_option("--data", tm.data, "dataset root")->required();
  t->add_option("--lambda", tm.lambda, "gradient reversal factor");
  t->add_option("--steps", tm.steps, "training steps");

  TrainArgs sw;
  auto* s = app.add_subcommand("sweep-lambda", "train one metric per lambda");
  add_common(s, sw.common);
  s->add_option("--data", sw.data, "dataset root")->required();
  s->add_option("--lambdas", sw.lambdas, "comma-separated lambda values")->delimiter(',');
  s->add_option("--steps", sw.steps, "training steps");

  ScoreArgs sc;
  auto* c = app.add_subcommand("score", "score scenes with a trained metric");
  add_common(c, sc.common);
  c->add_option("--checkpoint", sc.checkpoint, "metric checkpoint")->required()->check(CLI::ExistingFile);
  c->add_option("--data", sc.data, "dataset root");
  c->add_option("--split", sc.split, "split of --data to score");
  c->add_flag("--per-query", sc.per_query, "also write per-query probabilities");
  c->add_flag("--ply", sc.ply, "write a colored PLY per scene");
  c->add_option("inputs", sc.inputs, ".bin or .rimg scene files")->check(CLI::ExistingFile);

  ScoreArgs ex;
  std::string layout;
  auto* e = app.add_subcommand("export-features", "dump feature embeddings as CSV");
  add_common(e, ex.common);
  e->add_option("--checkpoint", ex.checkpoint, "metric checkpoint")->required()->check(CLI::ExistingFile);
  e->add_option("--data", ex.data, "dataset root");
  e->add_option("--split", ex.split, "split of --data to export");
  e->add_option("--layout", layout, "per-query or flattened");
  e->add_option("inputs", ex.inputs, ".bin or .rimg scene files")->check(CLI::ExistingFile);

  BaselineArgs bl;
  auto* b = app.add_subcommand("eval-baselines", "Chamfer/MAE/MSE of predicted against target range images");
  add_common(b, bl.common);
  b->add_option("--pred", bl.pred, "directory of predicted .rimg files")->required();
  b->add_option("--target", bl.target, "directory of target .rimg files")->required();
  b->add_option("--method", bl.method, "method label (default: prediction directory name)");

  UpsampleArgs up;
  auto* u = app.add_subcommand("upsample", "vertically up-sample range images");
  add_common(u, up.common);
  u->add_option("--method", up.method, "nearest, bilinear or learned");
  u->add_option("--factor", up.factor, "vertical factor");
  u->add_option("--checkpoint", up.checkpoint, "generator checkpoint for learned mode")->check(CLI::ExistingFile);
  u->add_flag("--from-hr", up.from_hr, "subsample the inputs first (paired evaluation)");
  u->add_option("inputs", up.inputs, ".rimg or .bin scene files")->check(CLI::ExistingFile);

  TrainUpsamplerArgs tu;
  auto* v = app.add_subcommand("train-upsampler", "train the super-resolution generator");
  add_common(v, tu.common);
  v->add_option("--data", tu.data, "dataset root")->required();
  v->add_option("--dataset", tu.datasets, "training dataset name (repeatable; default: every Real dataset)");
  v->add_option("--mode", tu.mode, "l1, l2 or gan");
  v->add_option("--steps", tu.steps, "training steps");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& ex_) {
    const int code = app.exit(ex_, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*g) return cmd_generate(gen, out);
    if (*t) return cmd_train_metric(tm, out);
    if (*s) return cmd_sweep(sw, out);
    if (*c) return cmd_score(sc, out);
    if (*e) return cmd_export_features(ex, layout, out);
    if (*b) return cmd_eval_baselines(bl, out);
    if (*u) return cmd_upsample(up, out);
    if (*v) return cmd_train_upsampler(tu, out);
  } catch (const InvalidArgument& ex_) {
    err << "error: " << ex_.what() << "\n";
    return kUsage;
  } catch (const std::exception& ex_) {
    err << "error: " << ex_.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}

}  // namespace lrm::cli
