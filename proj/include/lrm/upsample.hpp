#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lrm/geom.hpp"
#include "lrm/nn/checkpoint.hpp"
#include "lrm/nn/conv.hpp"
#include "lrm/nn/optim.hpp"

namespace lrm::upsample {

/// Row replication; the mask is replicated likewise.
RangeImage upsample_nearest(const RangeImage& image, int factor);

/// Vertical linear interpolation with half-pixel alignment and edge clamping.
/// Output row y samples input coordinate (y + 0.5) / f - 0.5; a cell is valid
/// only if every input cell it reads is valid.
RangeImage upsample_bilinear(const RangeImage& image, int factor);

/// Keeps rows 0, f, 2f, ... with their mask. Throws if H is not divisible by f.
RangeImage make_lr(const RangeImage& image, int factor);

/// (1/alpha) * mean over target-valid cells of |target - pred|^alpha.
struct LAlpha {
  double loss = 0.0;
  std::size_t count = 0;
  std::vector<double> grad;  // d loss / d pred, zero outside the mask
};

LAlpha l_alpha_loss(std::span<const double> pred, std::span<const double> target, std::span<const std::uint8_t> valid,
                    double alpha);

/// Convenience overload on images of equal shape; the mask is the target's.
LAlpha l_alpha_loss(const RangeImage& pred, const RangeImage& target, double alpha);

struct GeneratorConfig {
  int factor = 4;
  int residual_blocks = 16;
  int channels = 64;        // trunk width
  int stage_channels = 128;  // width after each subpixel stage
  int head_kernel = 9;
  int tail_kernel = 9;
  double log_offset = 2.302585092994046;  // log(10 m); network sees log(r) - offset
  double fill_depth = 10.0;              // range written into invalid input cells
  double min_depth = 0.5;
  double max_depth = 120.0;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;

  static GeneratorConfig full() { return {}; }
  static GeneratorConfig desk();

  int stages() const;
  void validate() const;
  std::string canonical() const;
  bool operator==(const GeneratorConfig&) const = default;
};

/// Conv ladder: kernel and stride per layer; BN on every layer but the first.
struct DiscriminatorConfig {
  int height = 64;
  int width = 2048;
  std::vector<int> widths{64, 64, 128, 128, 256, 256, 512, 512};
  int dense = 1024;
  double leak = 0.2;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;

  static DiscriminatorConfig full(int height, int width) { return {height, width}; }
  static DiscriminatorConfig desk(int height, int width);

  static constexpr std::array<nn::ConvSpec, 8> kLadder{{{3, 3, 1, 1, 0, 0},
                                                        {5, 5, 2, 4, 0, 0},
                                                        {3, 3, 1, 1, 0, 0},
                                                        {3, 3, 2, 2, 0, 0},
                                                        {3, 3, 1, 1, 0, 0},
                                                        {3, 3, 1, 2, 0, 0},
                                                        {3, 3, 1, 1, 0, 0},
                                                        {3, 3, 2, 2, 0, 0}}};

  /// Shape after the last conv, derived from the strides.
  nn::ImageShape feature_shape() const;
  int flatten_size() const;
  void validate() const;
  std::string canonical() const;
  bool operator==(const DiscriminatorConfig&) const = default;
};

/// Batched network input: (n*h*w) x 1 log-depth matrix.
template <typename T>
struct ImageBatch {
  nn::Matrix<T> x;
  nn::ImageShape shape;
};

/// Encodes range images as network input: log(r) - offset, invalid cells at fill_depth.
template <typename T>
ImageBatch<T> encode_batch(std::span<const RangeImage> images, const GeneratorConfig& config);

/// Residual super-resolution generator. Output is log-depth minus the offset.
template <typename T>
class SrGenerator {
 public:
  /// Activations kept by a train-mode forward for the backward pass.
  struct Tape {
    nn::ImageShape lr;
    nn::Matrix<T> x;
    nn::Matrix<T> head_pre;
    nn::Matrix<T> h0;
    struct BlockTape {
      nn::Matrix<T> in, b, c;
      nn::BatchNormCache<T> bn1, bn2;
    };
    std::vector<BlockTape> blocks;
    nn::Matrix<T> trunk;
    nn::BatchNormCache<T> post;
    struct StageTape {
      nn::ImageShape in;
      nn::Matrix<T> x, shuffled;
    };
    std::vector<StageTape> stages;
    nn::ImageShape tail_in;
    nn::Matrix<T> tail_x;
  };

  /// zero_residual sets the scale of every block-final normalization (and of
  /// the post-trunk one) to zero so the residual section is an identity.
  SrGenerator(GeneratorConfig config, std::uint64_t seed, bool zero_residual = false);

  const GeneratorConfig& config() const noexcept { return config_; }
  nn::ParamSet<T>& params() noexcept { return params_; }
  const nn::ParamSet<T>& params() const noexcept { return params_; }

  /// Train mode uses batch statistics and updates the running averages.
  ImageBatch<T> forward(const ImageBatch<T>& input, nn::Mode mode, Tape* tape = nullptr);
  ImageBatch<T> forward(const ImageBatch<T>& input) const;  // eval mode

  /// Accumulates parameter gradients for the tape's last train-mode forward.
  void backward(const Tape& tape, const nn::Matrix<T>& dy, nn::Grads<T>& grads) const;

  /// Eval-mode up-sampling: exp, clamp, mask = nearest-upsampled input mask.
  RangeImage upsample(const RangeImage& lr) const;

  nn::Checkpoint to_checkpoint(const std::string& extra_metadata = "{}") const;
  static SrGenerator from_checkpoint(const nn::Checkpoint& ckpt);

  struct Conv {
    nn::ConvSpec spec;
    std::size_t weight;
    std::size_t bias;  // npos when followed by normalization
  };
  struct Norm {
    std::size_t gamma, beta, mean, var;
  };
  struct Block {
    Conv conv1;
    Norm norm1;
    std::size_t slope;
    Conv conv2;
    Norm norm2;
  };
  struct Stage {
    Conv conv;
    std::size_t slope;
  };

 private:
  ImageBatch<T> run(const ImageBatch<T>& input, nn::Mode mode, Tape* tape, nn::ParamSet<T>* stats) const;

  GeneratorConfig config_;
  nn::ParamSet<T> params_;
  Conv head_;
  std::size_t head_slope_;
  std::vector<Block> blocks_;
  Conv post_;
  Norm post_norm_;
  std::vector<Stage> stages_;
  Conv tail_;
};

/// Strided conv ladder, dense hidden layer and a single logit per image.
template <typename T>
class SrDiscriminator {
 public:
  struct Tape {
    std::vector<nn::ImageShape> shapes;  // input shape of each conv
    std::vector<nn::Matrix<T>> inputs;
    std::vector<nn::Matrix<T>> outputs;  // activation after each conv block
    std::vector<nn::BatchNormCache<T>> norms;
    nn::Matrix<T> flat;
    nn::Matrix<T> hidden;
  };

  SrDiscriminator(DiscriminatorConfig config, std::uint64_t seed);

  const DiscriminatorConfig& config() const noexcept { return config_; }
  nn::ParamSet<T>& params() noexcept { return params_; }
  const nn::ParamSet<T>& params() const noexcept { return params_; }

  /// Returns n x 1 logits.
  nn::Matrix<T> forward(const ImageBatch<T>& input, nn::Mode mode, Tape* tape = nullptr);
  nn::Matrix<T> forward(const ImageBatch<T>& input) const;

  /// Accumulates parameter gradients; writes the input gradient when dx is set.
  void backward(const Tape& tape, const nn::Matrix<T>& dlogits, nn::Grads<T>& grads, nn::Matrix<T>* dx) const;

  nn::Checkpoint to_checkpoint() const;
  static SrDiscriminator from_checkpoint(const nn::Checkpoint& ckpt);

 private:
  nn::Matrix<T> run(const ImageBatch<T>& input, nn::Mode mode, Tape* tape, nn::ParamSet<T>* stats) const;

  DiscriminatorConfig config_;
  nn::ParamSet<T> params_;
  std::vector<typename SrGenerator<T>::Conv> convs_;
  std::vector<typename SrGenerator<T>::Norm> norms_;  // one per conv after the first
  std::size_t hidden_weight_, hidden_bias_, out_weight_, out_bias_;
};

enum class TrainMode { L1, L2, Gan };
std::string_view mode_name(TrainMode m);
TrainMode parse_mode(std::string_view name);

struct UpsampleTrainConfig {
  TrainMode mode = TrainMode::L1;
  int steps = 500;
  int batch = 4;
  int crop_cols = 32;  // random column window per sample; 0 = full width
  std::uint64_t seed = 0;
  int log_every = 50;
  nn::AdamConfig adam;

  double alpha() const { return mode == TrainMode::L2 ? 2.0 : 1.0; }
  void validate() const;
};

struct UpsamplePair {
  RangeImage lr;
  RangeImage hr;
};

/// Pairs (make_lr(hr), hr).
std::vector<UpsamplePair> make_pairs(std::span<const RangeImage> hr, int factor);

struct UpsampleLogRow {
  std::int64_t step = 0;
  double generator_loss = 0.0;
  double discriminator_loss = 0.0;  // 0 outside gan mode
};

struct UpsampleTrainResult {
  SrGenerator<float> generator;
  std::vector<UpsampleLogRow> log;
};

/// Throws DivergenceError on a non-finite loss.
UpsampleTrainResult train_upsampler(std::span<const UpsamplePair> pairs, const GeneratorConfig& generator,
                                    const DiscriminatorConfig& discriminator, const UpsampleTrainConfig& config,
                                    const std::function<void(const UpsampleLogRow&)>& on_log = {});

extern template class SrGenerator<float>;
extern template class SrGenerator<double>;
extern template class SrDiscriminator<float>;
extern template class SrDiscriminator<double>;

}  // namespace lrm::upsample
