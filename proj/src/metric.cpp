#include "lrm/metric.hpp"

#include <json.hpp>
#include <sstream>

#include "lrm/spatial.hpp"

namespace lrm::metric {

using nn::Grads;
using nn::Matrix;
using nn::Mode;

std::string_view category_name(Category c) {
  switch (c) {
    case Category::Real:
      return "Real";
    case Category::Syn:
      return "Syn";
    case Category::Misc:
      return "Misc";
  }
  return "?";
}

Category parse_category(std::string_view name) {
  for (Category c : kAllCategories)
    if (category_name(c) == name) return c;
  throw InvalidArgument("unknown category '" + std::string(name) + "'");
}

MetricArchConfig MetricArchConfig::desk() {
  MetricArchConfig c;
  c.q1 = 256;
  c.k1 = 16;
  c.q2 = 64;
  c.k2 = 8;
  return c;
}

void MetricArchConfig::validate() const {
  LRM_REQUIRE(q1 >= 1 && q2 >= 1 && k1 >= 1 && k2 >= 1, "query and neighbor counts must be positive");
  LRM_REQUIRE(q2 <= q1, "Q2 must not exceed Q1");
  LRM_REQUIRE(k2 <= q1, "K2 must not exceed Q1");
  LRM_REQUIRE(!mlp1.empty() && !mlp2.empty(), "MLP width lists must be nonempty");
  for (int w : mlp1) LRM_REQUIRE(w >= 1, "MLP widths must be positive");
  for (int w : mlp2) LRM_REQUIRE(w >= 1, "MLP widths must be positive");
  LRM_REQUIRE(head_hidden >= 1, "head hidden width must be positive");
  LRM_REQUIRE(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  LRM_REQUIRE(leak >= 0.0, "leaky slope must be nonnegative");
  for (int u : adversary_outputs) LRM_REQUIRE(u >= 1, "adversary output widths must be positive");
}

std::string MetricArchConfig::canonical() const {
  std::ostringstream s;
  s << "metric-arch/v1;q1=" << q1 << ";k1=" << k1 << ";q2=" << q2 << ";k2=" << k2 << ";mlp1=";
  for (int w : mlp1) s << w << ',';
  s << ";mlp2=";
  for (int w : mlp2) s << w << ',';
  s << ";hidden=" << head_hidden << ";uc=3;ua=" << adversary_outputs[0] << ',' << adversary_outputs[1] << ','
    << adversary_outputs[2];
  return s.str();
}

Category MetricScores::argmax() const {
  int best = 0;
  for (int c = 1; c < kCategories; ++c)
    if (scene[static_cast<std::size_t>(c)] > scene[static_cast<std::size_t>(best)]) best = c;
  return static_cast<Category>(best);
}

Neighborhoods build_neighborhoods(const PointCloud& cloud, const MetricArchConfig& config) {
  config.validate();
  if (cloud.size() < static_cast<std::size_t>(config.k1))
    throw InvalidArgument("scene has " + std::to_string(cloud.size()) + " points, fewer than K1=" + std::to_string(config.k1));
  const auto pts = cloud.view();
  Neighborhoods h;

  const spatial::IndexSet q1 = spatial::farthest_point_sample(pts, config.q1);
  const spatial::NeighborGrid n1 = spatial::knn(pts, q1, config.k1);
  h.level1.resize(static_cast<Eigen::Index>(config.q1) * config.k1, 3);
  h.level1_queries.resize(config.q1, 3);
  std::vector<Vec3> queries1(static_cast<std::size_t>(config.q1));
  for (int q = 0; q < config.q1; ++q) {
    const Vec3& center = pts[static_cast<std::size_t>(q1[static_cast<std::size_t>(q)])];
    queries1[static_cast<std::size_t>(q)] = center;
    h.level1_queries.row(q) = center.transpose();
    const std::vector<Vec3> hood = normalize_neighborhood(spatial::group(pts, {1, config.k1, {n1.row(q).begin(), n1.row(q).end()}}), center);
    for (int j = 0; j < config.k1; ++j) h.level1.row(static_cast<Eigen::Index>(q) * config.k1 + j) = hood[static_cast<std::size_t>(j)].transpose();
  }

  const spatial::IndexSet q2 = spatial::farthest_point_sample(queries1, config.q2);
  const spatial::NeighborGrid n2 = spatial::knn(queries1, q2, config.k2);
  h.level2.resize(static_cast<Eigen::Index>(config.q2) * config.k2, 3);
  h.query_points.resize(config.q2, 3);
  h.level2_index = n2.indices;
  for (int q = 0; q < config.q2; ++q) {
    const Vec3& center = queries1[static_cast<std::size_t>(q2[static_cast<std::size_t>(q)])];
    h.query_points.row(q) = center.transpose();
    for (int j = 0; j < config.k2; ++j) {
      const Vec3 d = queries1[static_cast<std::size_t>(n2.at(q, j))] - center;
      h.level2.row(static_cast<Eigen::Index>(q) * config.k2 + j) = d.transpose();
    }
  }
  return h;
}

PreparedSample prepare_sample(const SceneSample& sample, const MetricArchConfig& config) {
  return {build_neighborhoods(sample.cloud, config), sample.category, sample.dataset_id};
}

std::vector<PreparedSample> prepare_samples(std::span<const SceneSample> samples, const MetricArchConfig& config) {
  std::vector<PreparedSample> out(samples.size());
  const auto n = static_cast<std::ptrdiff_t>(samples.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      out[static_cast<std::size_t>(i)] = prepare_sample(samples[static_cast<std::size_t>(i)], config);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
struct MetricModel<T>::HeadTape {
  Matrix<T> hidden;  // post-activation
  Matrix<T> mask;
  Matrix<T> dropped;
};

template <typename T>
struct MetricModel<T>::SampleTape {
  Matrix<T> in1;
  std::vector<Matrix<T>> act1;
  std::vector<int> arg1;
  Matrix<T> in2;
  std::vector<Matrix<T>> act2;
  std::vector<int> arg2;
};

template <typename T>
MetricModel<T>::MetricModel(MetricArchConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(derive_seed(seed, fnv1a("metric-init")));
  auto add_layer = [&](const std::string& name, int cin, int cout) {
    Layer l;
    l.weight = params_.add(name + "/weight", {static_cast<std::size_t>(cin), static_cast<std::size_t>(cout)});
    l.bias = params_.add(name + "/bias", {static_cast<std::size_t>(cout)});
    nn::glorot_uniform(params_.value(l.weight), static_cast<std::size_t>(cin), static_cast<std::size_t>(cout), rng);
    return l;
  };
  int cin = 3;
  for (std::size_t i = 0; i < config_.mlp1.size(); ++i) {
    level1_.push_back(add_layer("extractor/sa1/mlp" + std::to_string(i), cin, config_.mlp1[i]));
    cin = config_.mlp1[i];
  }
  cin = config_.level2_input_width();
  for (std::size_t i = 0; i < config_.mlp2.size(); ++i) {
    level2_.push_back(add_layer("extractor/sa2/mlp" + std::to_string(i), cin, config_.mlp2[i]));
    cin = config_.mlp2[i];
  }
  auto add_head = [&](const std::string& name, int outputs) {
    Head h;
    h.hidden = add_layer(name + "/hidden", config_.feature_width(), config_.head_hidden);
    h.out = add_layer(name + "/out", config_.head_hidden, outputs);
    return h;
  };
  classifier_ = add_head("classifier", kCategories);
  for (Category c : kAllCategories) {
    std::string name = "adversary_" + std::string(category_name(c));
    for (auto& ch : name) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    adversaries_[static_cast<std::size_t>(index_of(c))] = add_head(name, config_.adversary_outputs[static_cast<std::size_t>(index_of(c))]);
  }
}

template <typename T>
Matrix<T> MetricModel<T>::forward_extractor(const Neighborhoods& hood, SampleTape* tape) const {
  const T leak = static_cast<T>(config_.leak);
  LRM_REQUIRE(hood.level1.rows() == static_cast<Eigen::Index>(config_.q1) * config_.k1 &&
                  hood.level2.rows() == static_cast<Eigen::Index>(config_.q2) * config_.k2,
              "neighborhoods were built for a different architecture");
  SampleTape local;
  SampleTape& t = tape ? *tape : local;
  t.in1 = hood.level1.template cast<T>();
  t.act1.clear();
  const Matrix<T>* x = &t.in1;
  for (const Layer& l : level1_) {
    t.act1.push_back(nn::shared_mlp_forward(*x, params_.value(l.weight), params_.value(l.bias), leak));
    x = &t.act1.back();
  }
  auto max1 = nn::reduce_max_neighbors(t.act1.back(), config_.k1);
  t.arg1 = std::move(max1.arg);
  const Matrix<T>& f1 = max1.out;

  const Eigen::Index rows2 = hood.level2.rows();
  t.in2.resize(rows2, config_.level2_input_width());
  t.in2.leftCols(3) = hood.level2.template cast<T>();
  for (Eigen::Index r = 0; r < rows2; ++r) t.in2.row(r).tail(f1.cols()) = f1.row(hood.level2_index[static_cast<std::size_t>(r)]);
  t.act2.clear();
  x = &t.in2;
  for (const Layer& l : level2_) {
    t.act2.push_back(nn::shared_mlp_forward(*x, params_.value(l.weight), params_.value(l.bias), leak));
    x = &t.act2.back();
  }
  auto max2 = nn::reduce_max_neighbors(t.act2.back(), config_.k2);
  t.arg2 = std::move(max2.arg);
  return std::move(max2.out);
}

template <typename T>
void MetricModel<T>::backward_extractor(const Neighborhoods& hood, const SampleTape& t, const Matrix<T>& dz,
                                        Grads<T>& grads) const {
  const T leak = static_cast<T>(config_.leak);
  Matrix<T> d = nn::reduce_max_backward(dz, t.arg2, config_.k2);
  for (std::size_t i = level2_.size(); i-- > 0;) {
    const Layer& l = level2_[i];
    const Matrix<T>& input = i == 0 ? t.in2 : t.act2[i - 1];
    Matrix<T> dinput;
    nn::shared_mlp_backward(input, params_.value(l.weight), t.act2[i], std::move(d), leak, &dinput, grads[l.weight],
                            grads[l.bias]);
    d = std::move(dinput);
  }
  const int width1 = config_.mlp1.back();
  Matrix<T> df1 = Matrix<T>::Zero(config_.q1, width1);
  for (Eigen::Index r = 0; r < d.rows(); ++r) df1.row(hood.level2_index[static_cast<std::size_t>(r)]) += d.row(r).tail(width1);
  d = nn::reduce_max_backward(df1, t.arg1, config_.k1);
  for (std::size_t i = level1_.size(); i-- > 0;) {
    const Layer& l = level1_[i];
    const Matrix<T>& input = i == 0 ? t.in1 : t.act1[i - 1];
    Matrix<T> dinput;
    nn::shared_mlp_backward(input, params_.value(l.weight), t.act1[i], std::move(d), leak, i == 0 ? nullptr : &dinput,
                            grads[l.weight], grads[l.bias]);
    d = std::move(dinput);
  }
}

template <typename T>
Matrix<T> MetricModel<T>::head_logits(const Head& head, const Matrix<T>& z, Mode mode, Rng* rng, HeadTape* tape) const {
  HeadTape local;
  HeadTape& t = tape ? *tape : local;
  t.hidden = nn::shared_mlp_forward(z, params_.value(head.hidden.weight), params_.value(head.hidden.bias),
                                    static_cast<T>(config_.leak));
  if (mode == Mode::Train && config_.dropout > 0.0) {
    LRM_REQUIRE(rng != nullptr, "train-mode dropout needs a random stream");
    auto drop = nn::dropout_forward(t.hidden, static_cast<T>(config_.dropout), Mode::Train, *rng);
    t.dropped = std::move(drop.out);
    t.mask = std::move(drop.mask);
  } else {
    t.dropped = t.hidden;
    t.mask.resize(0, 0);
  }
  return nn::dense_forward(t.dropped, params_.value(head.out.weight), params_.value(head.out.bias));
}

template <typename T>
void MetricModel<T>::head_backward(const Head& head, const Matrix<T>& z, const HeadTape& t, const Matrix<T>& dlogits,
                                   Grads<T>& grads, Matrix<T>& dz) const {
  Matrix<T> ddropped;
  nn::dense_backward(t.dropped, params_.value(head.out.weight), dlogits, &ddropped, grads[head.out.weight],
                     grads[head.out.bias]);
  Matrix<T> dhidden = nn::dropout_backward(ddropped, t.mask);
  Matrix<T> dinput;
  nn::shared_mlp_backward(z, params_.value(head.hidden.weight), t.hidden, std::move(dhidden), static_cast<T>(config_.leak),
                          &dinput, grads[head.hidden.weight], grads[head.hidden.bias]);
  dz = std::move(dinput);
}

template <typename T>
FeatureMatrix<T> MetricModel<T>::extract_features(const Neighborhoods& hood) const {
  return {forward_extractor(hood, nullptr), hood.query_points};
}

template <typename T>
FeatureMatrix<T> MetricModel<T>::extract_features(const PointCloud& cloud) const {
  return extract_features(build_neighborhoods(cloud, config_));
}

template <typename T>
MetricScores MetricModel<T>::classify(const FeatureMatrix<T>& features, Mode mode, Rng* rng) const {
  LRM_REQUIRE(features.z.cols() == config_.feature_width(), "feature width does not match the classifier");
  const Matrix<T> probs = nn::softmax_rows(head_logits(classifier_, features.z, mode, rng, nullptr));
  MetricScores s;
  s.per_query = probs.template cast<double>();
  s.query_points = features.query_points;
  const Eigen::Index q = s.per_query.rows();
  for (int c = 0; c < kCategories; ++c) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < q; ++i) sum += s.per_query(i, c);
    s.scene[static_cast<std::size_t>(c)] = q > 0 ? sum / static_cast<double>(q) : 0.0;
  }
  return s;
}

template <typename T>
Matrix<T> MetricModel<T>::adversary_predict(const FeatureMatrix<T>& features, Category category, Mode mode, Rng* rng) const {
  LRM_REQUIRE(features.z.cols() == config_.feature_width(), "feature width does not match the adversary");
  const Head& head = adversaries_[static_cast<std::size_t>(index_of(category))];
  return nn::softmax_rows(head_logits(head, nn::grad_reverse_forward(features.z), mode, rng, nullptr));
}

template <typename T>
MetricScores MetricModel<T>::score_scene(const PointCloud& cloud) const {
  return classify(extract_features(cloud), Mode::Eval, nullptr);
}

template <typename T>
T MetricModel<T>::sample_loss(const PreparedSample& sample, T lambda, T scale, Mode mode, Rng& rng, bool adversaries,
                              Grads<T>& grads, std::array<T, kCategories>& adv_losses, T& cls_loss) const {
  SampleTape tape;
  const Matrix<T> z = forward_extractor(sample.hood, &tape);
  const auto rows = static_cast<std::size_t>(z.rows());

  HeadTape ctape;
  const Matrix<T> logits = head_logits(classifier_, z, mode, &rng, &ctape);
  const std::vector<int> cls_targets(rows, index_of(sample.category));
  const std::vector<T> ones(rows, T(1));
  auto ce = nn::softmax_cross_entropy<T>(logits, cls_targets, ones);
  cls_loss = ce.loss;
  T total = ce.loss;
  Matrix<T> dz;
  head_backward(classifier_, z, ctape, scale * ce.grad, grads, dz);

  adv_losses.fill(T(0));
  if (adversaries) {
    const Matrix<T>& reversed_input = nn::grad_reverse_forward(z);
    Matrix<T> dz_adv = Matrix<T>::Zero(z.rows(), z.cols());
    for (Category c : kAllCategories) {
      const auto ci = static_cast<std::size_t>(index_of(c));
      const Head& head = adversaries_[ci];
      HeadTape atape;
      const Matrix<T> alogits = head_logits(head, reversed_input, mode, &rng, &atape);
      const bool member = sample.category == c;
      if (member) {
        LRM_REQUIRE(sample.dataset_id >= 0 && sample.dataset_id < config_.adversary_outputs[ci],
                    "dataset_id out of range for its category's adversary");
      }
      const std::vector<int> targets(rows, member ? sample.dataset_id : 0);
      const std::vector<T> weights(rows, member ? T(1) : T(0));
      auto ace = nn::softmax_cross_entropy<T>(alogits, targets, weights);
      adv_losses[ci] = ace.loss;
      total += ace.loss;
      Matrix<T> dz_head;
      head_backward(head, reversed_input, atape, scale * ace.grad, grads, dz_head);
      dz_adv += dz_head;
    }
    dz += nn::grad_reverse_backward(dz_adv, lambda);
  }
  backward_extractor(sample.hood, tape, dz, grads);
  return total;
}

template <typename T>
LossResult<T> MetricModel<T>::metric_loss(std::span<const PreparedSample> batch, T lambda, const LossOptions& options) const {
  LRM_REQUIRE(!batch.empty(), "metric loss over an empty batch");
  LRM_REQUIRE(lambda >= T(0), "gradient reversal factor must be nonnegative");
  const auto n = static_cast<std::ptrdiff_t>(batch.size());
  const T scale = T(1) / static_cast<T>(batch.size());
  std::vector<Grads<T>> per_sample(batch.size());
  std::vector<T> totals(batch.size());
  std::vector<T> cls(batch.size());
  std::vector<std::array<T, kCategories>> adv(batch.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    try {
      per_sample[u] = params_.zero_grads();
      Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(i)));
      totals[u] = sample_loss(batch[u], lambda, scale, options.head_mode, rng, options.include_adversaries,
                              per_sample[u], adv[u], cls[u]);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  // Fixed-order reduction keeps results independent of the thread count.
  LossResult<T> r;
  r.grads = std::move(per_sample[0]);
  for (std::size_t i = 1; i < batch.size(); ++i) nn::accumulate(r.grads, per_sample[i]);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    r.loss += totals[i] * scale;
    r.classifier_loss += cls[i] * scale;
    for (int c = 0; c < kCategories; ++c) r.adversary_loss[static_cast<std::size_t>(c)] += adv[i][static_cast<std::size_t>(c)] * scale;
  }
  if (!std::isfinite(static_cast<double>(r.loss))) throw NonFiniteError("non-finite metric loss");
  return r;
}

template <typename T>
nn::Checkpoint MetricModel<T>::to_checkpoint(const std::string& extra_metadata) const {
  nn::Checkpoint ckpt;
  ckpt.arch_digest = config_.digest();
  nlohmann::json meta;
  meta["kind"] = "realism-metric";
  meta["arch"] = {{"q1", config_.q1},
                  {"k1", config_.k1},
                  {"q2", config_.q2},
                  {"k2", config_.k2},
                  {"mlp1", config_.mlp1},
                  {"mlp2", config_.mlp2},
                  {"head_hidden", config_.head_hidden},
                  {"dropout", config_.dropout},
                  {"leak", config_.leak},
                  {"adversary_outputs", config_.adversary_outputs}};
  meta["extra"] = nlohmann::json::parse(extra_metadata);
  ckpt.metadata = meta.dump();
  nn::store_params(ckpt, params_);
  return ckpt;
}

template <typename T>
MetricModel<T> MetricModel<T>::from_checkpoint(const nn::Checkpoint& ckpt) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ckpt.metadata);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint metadata is not JSON: ") + e.what());
  }
  if (meta.value("kind", "") != "realism-metric") throw IoError("checkpoint does not hold a realism metric");
  const auto& a = meta.at("arch");
  MetricArchConfig config;
  config.q1 = a.at("q1");
  config.k1 = a.at("k1");
  config.q2 = a.at("q2");
  config.k2 = a.at("k2");
  config.mlp1 = a.at("mlp1").get<std::vector<int>>();
  config.mlp2 = a.at("mlp2").get<std::vector<int>>();
  config.head_hidden = a.at("head_hidden");
  config.dropout = a.at("dropout");
  config.leak = a.at("leak");
  config.adversary_outputs = a.at("adversary_outputs").get<std::array<int, kCategories>>();
  if (config.digest() != ckpt.arch_digest) throw IoError("checkpoint architecture digest does not match its metadata");
  MetricModel model(config, 0);
  nn::load_params(ckpt, model.params_);
  return model;
}

template class MetricModel<float>;
template class MetricModel<double>;

}  // namespace lrm::metric
