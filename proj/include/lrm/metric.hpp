#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lrm/geom.hpp"
#include "lrm/nn/checkpoint.hpp"
#include "lrm/nn/layers.hpp"
#include "lrm/nn/tensor.hpp"

namespace lrm::metric {

enum class Category : int { Real = 0, Syn = 1, Misc = 2 };
inline constexpr int kCategories = 3;
inline constexpr std::array<Category, kCategories> kAllCategories{Category::Real, Category::Syn, Category::Misc};

std::string_view category_name(Category c);
Category parse_category(std::string_view name);
inline int index_of(Category c) { return static_cast<int>(c); }

/// Layer sizes of the feature extractor and heads.
struct MetricArchConfig {
  int q1 = 2048;
  int k1 = 20;
  int q2 = 256;
  int k2 = 10;
  std::vector<int> mlp1{64, 64, 128};
  std::vector<int> mlp2{128, 128, 256};
  int head_hidden = 128;
  double dropout = 0.5;
  double leak = 0.2;
  /// Adversary output width per category (Real, Syn, Misc).
  std::array<int, kCategories> adversary_outputs{2, 2, 3};

  static MetricArchConfig full() { return {}; }
  /// Reduced query/neighbor counts for single-machine runs; widths unchanged.
  static MetricArchConfig desk();

  int feature_width() const { return mlp2.back(); }
  int level2_input_width() const { return 3 + mlp1.back(); }
  void validate() const;
  /// Canonical text used for the architecture digest.
  std::string canonical() const;
  std::uint64_t digest() const { return fnv1a(canonical()); }

  bool operator==(const MetricArchConfig&) const = default;
};

/// Point cloud with its supervision labels.
struct SceneSample {
  PointCloud cloud;
  Category category = Category::Real;
  int dataset_id = 0;
};

/// Parameter-independent neighborhood structure of one cloud.
struct Neighborhoods {
  nn::Matrix<double> level1;          // (Q1*K1) x 3, offsets to the level-1 query
  nn::Matrix<double> level2;          // (Q2*K2) x 3, offsets to the level-2 query
  std::vector<int> level2_index;      // Q2*K2 indices into the level-1 queries
  nn::Matrix<double> level1_queries;  // Q1 x 3
  nn::Matrix<double> query_points;    // Q2 x 3
};

/// FPS -> KNN -> normalize for both abstraction levels. Throws if N < K1.
Neighborhoods build_neighborhoods(const PointCloud& cloud, const MetricArchConfig& config);

/// Neighborhoods plus labels, ready for repeated training passes.
struct PreparedSample {
  Neighborhoods hood;
  Category category = Category::Real;
  int dataset_id = 0;
};

PreparedSample prepare_sample(const SceneSample& sample, const MetricArchConfig& config);
std::vector<PreparedSample> prepare_samples(std::span<const SceneSample> samples, const MetricArchConfig& config);

template <typename T>
struct FeatureMatrix {
  nn::Matrix<T> z;                  // Q2 x U_F
  nn::Matrix<double> query_points;  // Q2 x 3
};

struct MetricScores {
  nn::Matrix<double> per_query;  // Q2 x 3, rows sum to 1
  std::array<double, kCategories> scene{};
  nn::Matrix<double> query_points;

  Category argmax() const;
};

template <typename T>
struct LossResult {
  T loss{};
  T classifier_loss{};
  std::array<T, kCategories> adversary_loss{};
  nn::Grads<T> grads;
};

struct LossOptions {
  nn::Mode head_mode = nn::Mode::Train;  // Eval disables dropout
  std::uint64_t seed = 0;                // dropout stream
  bool include_adversaries = true;
};

/// Feature extractor F, classifier C and one adversary head per category.
template <typename T>
class MetricModel {
 public:
  MetricModel(MetricArchConfig config, std::uint64_t seed);

  const MetricArchConfig& config() const noexcept { return config_; }
  nn::ParamSet<T>& params() noexcept { return params_; }
  const nn::ParamSet<T>& params() const noexcept { return params_; }

  FeatureMatrix<T> extract_features(const PointCloud& cloud) const;
  FeatureMatrix<T> extract_features(const Neighborhoods& hood) const;

  /// Per-query category probabilities and their mean. Train mode needs an rng for dropout.
  MetricScores classify(const FeatureMatrix<T>& features, nn::Mode mode = nn::Mode::Eval, Rng* rng = nullptr) const;

  /// Q2 x U_A probabilities of the category's adversary.
  nn::Matrix<T> adversary_predict(const FeatureMatrix<T>& features, Category category, nn::Mode mode = nn::Mode::Eval,
                                  Rng* rng = nullptr) const;

  /// Eval-mode extraction plus classification.
  MetricScores score_scene(const PointCloud& cloud) const;

  /// Batch mean of L_C + sum_cat L_A^cat, with gradients for every parameter.
  /// Adversaries read z through a gradient-reversal node scaled by lambda, and
  /// rows of samples outside an adversary's category get weight 0.
  LossResult<T> metric_loss(std::span<const PreparedSample> batch, T lambda, const LossOptions& options) const;

  nn::Checkpoint to_checkpoint(const std::string& extra_metadata = "{}") const;
  static MetricModel from_checkpoint(const nn::Checkpoint& ckpt);

  template <typename U>
  MetricModel<U> cast() const {
    MetricModel<U> out(config_, 0);
    out.params() = params_.template cast<U>();
    return out;
  }

  struct Layer {
    std::size_t weight;
    std::size_t bias;
  };
  struct Head {
    Layer hidden;
    Layer out;
  };

 private:
  struct HeadTape;
  struct SampleTape;

  nn::Matrix<T> forward_extractor(const Neighborhoods& hood, SampleTape* tape) const;
  void backward_extractor(const Neighborhoods& hood, const SampleTape& tape, const nn::Matrix<T>& dz,
                          nn::Grads<T>& grads) const;
  nn::Matrix<T> head_logits(const Head& head, const nn::Matrix<T>& z, nn::Mode mode, Rng* rng, HeadTape* tape) const;
  void head_backward(const Head& head, const nn::Matrix<T>& z, const HeadTape& tape, const nn::Matrix<T>& dlogits,
                     nn::Grads<T>& grads, nn::Matrix<T>& dz) const;
  T sample_loss(const PreparedSample& sample, T lambda, T scale, nn::Mode mode, Rng& rng, bool adversaries,
                nn::Grads<T>& grads, std::array<T, kCategories>& adv_losses, T& cls_loss) const;

  MetricArchConfig config_;
  nn::ParamSet<T> params_;
  std::vector<Layer> level1_;
  std::vector<Layer> level2_;
  Head classifier_;
  std::array<Head, kCategories> adversaries_;
};

extern template class MetricModel<float>;
extern template class MetricModel<double>;

}  // namespace lrm::metric
