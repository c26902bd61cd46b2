#include "lrm/upsample.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "lrm/nn/layers.hpp"

namespace lrm::upsample {

using nn::ImageShape;
using nn::Matrix;
using nn::Mode;

namespace {

constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

void require_factor(int factor) { LRM_REQUIRE(factor >= 1, "up-sampling factor must be >= 1"); }

}  // namespace

RangeImage upsample_nearest(const RangeImage& image, int factor) {
  require_factor(factor);
  RangeImage out(image.model.upsampled(factor));
  for (int r = 0; r < out.rows(); ++r)
    for (int c = 0; c < out.cols(); ++c) {
      const int src = r / factor;
      if (image.is_valid(src, c)) out.set(r, c, image.at(src, c));
    }
  return out;
}

RangeImage upsample_bilinear(const RangeImage& image, int factor) {
  require_factor(factor);
  RangeImage out(image.model.upsampled(factor));
  const int h = image.rows();
  for (int r = 0; r < out.rows(); ++r) {
    const double src = std::clamp((r + 0.5) / factor - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(std::floor(src));
    const int y1 = std::min(y0 + 1, h - 1);
    const double t = src - y0;
    for (int c = 0; c < out.cols(); ++c) {
      if (!image.is_valid(y0, c)) continue;
      if (t == 0.0) {
        out.set(r, c, image.at(y0, c));
      } else if (image.is_valid(y1, c)) {
        out.set(r, c, (1.0 - t) * image.at(y0, c) + t * image.at(y1, c));
      }
    }
  }
  return out;
}

RangeImage make_lr(const RangeImage& image, int factor) {
  require_factor(factor);
  RangeImage out(image.model.subsampled(factor));
  for (int r = 0; r < out.rows(); ++r)
    for (int c = 0; c < out.cols(); ++c)
      if (image.is_valid(r * factor, c)) out.set(r, c, image.at(r * factor, c));
  return out;
}

LAlpha l_alpha_loss(std::span<const double> pred, std::span<const double> target, std::span<const std::uint8_t> valid,
                    double alpha) {
  LRM_REQUIRE(pred.size() == target.size() && valid.size() == target.size(), "loss inputs differ in size");
  LRM_REQUIRE(alpha > 0.0, "loss exponent must be positive");
  LAlpha out;
  out.grad.assign(pred.size(), 0.0);
  for (auto v : valid) out.count += v != 0;
  if (out.count == 0) throw InvalidArgument("loss over an empty validity mask");
  const double inv = 1.0 / static_cast<double>(out.count);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!valid[i]) continue;
    const double d = pred[i] - target[i];
    const double a = std::abs(d);
    out.loss += std::pow(a, alpha);
    if (a > 0.0) out.grad[i] = std::pow(a, alpha - 1.0) * (d > 0 ? 1.0 : -1.0) * inv;
  }
  out.loss *= inv / alpha;
  return out;
}

LAlpha l_alpha_loss(const RangeImage& pred, const RangeImage& target, double alpha) {
  LRM_REQUIRE(pred.rows() == target.rows() && pred.cols() == target.cols(), "loss images differ in shape");
  return l_alpha_loss(pred.depth, target.depth, target.valid, alpha);
}

// ---------------------------------------------------------------------------
// Configs

GeneratorConfig GeneratorConfig::desk() {
  GeneratorConfig c;
  c.residual_blocks = 4;
  c.channels = 32;
  c.stage_channels = 32;
  return c;
}

int GeneratorConfig::stages() const {
  int s = 0;
  for (int f = factor; f > 1; f >>= 1) ++s;
  return s;
}

void GeneratorConfig::validate() const {
  LRM_REQUIRE(factor >= 1 && (factor & (factor - 1)) == 0, "up-sampling factor must be a power of two");
  LRM_REQUIRE(residual_blocks >= 1, "generator needs at least one residual block");
  LRM_REQUIRE(channels >= 1 && stage_channels >= 1, "generator widths must be positive");
  LRM_REQUIRE(head_kernel >= 1 && tail_kernel >= 1, "generator kernels must be positive");
  LRM_REQUIRE(fill_depth > 0 && min_depth > 0 && max_depth > min_depth, "invalid generator depth range");
  LRM_REQUIRE(bn_momentum >= 0 && bn_momentum < 1 && bn_eps > 0, "invalid normalization constants");
}

std::string GeneratorConfig::canonical() const {
  std::ostringstream s;
  s.precision(17);
  s << "sr-generator;f=" << factor << ";blocks=" << residual_blocks << ";c=" << channels << ";s=" << stage_channels
    << ";head=" << head_kernel << ";tail=" << tail_kernel;
  return s.str();
}

DiscriminatorConfig DiscriminatorConfig::desk(int height, int width) {
  DiscriminatorConfig c;
  c.height = height;
  c.width = width;
  c.widths = {16, 16, 32, 32, 64, 64, 128, 128};
  c.dense = 128;
  return c;
}

nn::ImageShape DiscriminatorConfig::feature_shape() const {
  ImageShape s{1, height, width, 1};
  for (std::size_t i = 0; i < kLadder.size(); ++i) {
    nn::ConvSpec spec = kLadder[i];
    spec.cin = s.c;
    spec.cout = widths[i];
    s = spec.output_shape(s);
  }
  return s;
}

int DiscriminatorConfig::flatten_size() const {
  const ImageShape s = feature_shape();
  return s.h * s.w * s.c;
}

void DiscriminatorConfig::validate() const {
  LRM_REQUIRE(height >= 1 && width >= 1, "discriminator input must be nonempty");
  LRM_REQUIRE(widths.size() == kLadder.size(), "discriminator needs one width per ladder layer");
  for (int w : widths) LRM_REQUIRE(w >= 1, "discriminator widths must be positive");
  LRM_REQUIRE(dense >= 1, "discriminator dense width must be positive");
  LRM_REQUIRE(leak >= 0, "leak must be nonnegative");
}

std::string DiscriminatorConfig::canonical() const {
  std::ostringstream s;
  s << "sr-discriminator;h=" << height << ";w=" << width << ";widths=";
  for (int w : widths) s << w << ',';
  s << ";dense=" << dense;
  return s.str();
}

template <typename T>
ImageBatch<T> encode_batch(std::span<const RangeImage> images, const GeneratorConfig& config) {
  LRM_REQUIRE(!images.empty(), "empty image batch");
  const int h = images[0].rows();
  const int w = images[0].cols();
  ImageBatch<T> b;
  b.shape = {static_cast<int>(images.size()), h, w, 1};
  b.x.resize(b.shape.rows(), 1);
  const double fill = std::log(config.fill_depth) - config.log_offset;
  Eigen::Index p = 0;
  for (const auto& img : images) {
    LRM_REQUIRE(img.rows() == h && img.cols() == w, "batch images differ in shape");
    for (std::size_t i = 0; i < img.depth.size(); ++i, ++p)
      b.x(p, 0) = static_cast<T>(img.valid[i] ? std::log(img.depth[i]) - config.log_offset : fill);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Shared layer helpers

namespace {

template <typename T>
using Conv = typename SrGenerator<T>::Conv;
template <typename T>
using Norm = typename SrGenerator<T>::Norm;

template <typename T>
Conv<T> add_conv(nn::ParamSet<T>& params, const std::string& name, int k, int cin, int cout, bool bias, Rng& rng,
                 int sh = 1, int sw = 1, int kw = 0) {
  Conv<T> c;
  c.spec = {k, kw > 0 ? kw : k, sh, sw, cin, cout};
  const auto fan = static_cast<std::size_t>(c.spec.kh * c.spec.kw);
  c.weight = params.add(name + "/weight", {fan * static_cast<std::size_t>(cin), static_cast<std::size_t>(cout)});
  nn::glorot_uniform(params.value(c.weight), fan * cin, fan * cout, rng);
  c.bias = bias ? params.add(name + "/bias", {1, static_cast<std::size_t>(cout)}) : kNone;
  return c;
}

template <typename T>
Norm<T> add_norm(nn::ParamSet<T>& params, const std::string& name, int c) {
  const std::vector<std::size_t> shape{1, static_cast<std::size_t>(c)};
  Norm<T> n;
  n.gamma = params.add(name + "/gamma", shape);
  n.beta = params.add(name + "/beta", shape);
  n.mean = params.add(name + "/running_mean", shape, false);
  n.var = params.add(name + "/running_var", shape, false);
  params.value(n.gamma).setOnes();
  params.value(n.var).setOnes();
  return n;
}

template <typename T>
Matrix<T> conv_fwd(const nn::ParamSet<T>& params, const Conv<T>& c, const Matrix<T>& x, const ImageShape& in) {
  if (c.bias != kNone) return nn::conv2d_forward(x, in, params.value(c.weight), params.value(c.bias), c.spec);
  const Matrix<T> zero = Matrix<T>::Zero(1, c.spec.cout);
  return nn::conv2d_forward(x, in, params.value(c.weight), zero, c.spec);
}

template <typename T>
void conv_bwd(const nn::ParamSet<T>& params, const Conv<T>& c, const Matrix<T>& x, const ImageShape& in,
              const Matrix<T>& dy, Matrix<T>* dx, nn::Grads<T>& grads) {
  if (c.bias != kNone) {
    nn::conv2d_backward(x, in, params.value(c.weight), dy, c.spec, dx, grads[c.weight], grads[c.bias]);
  } else {
    Matrix<T> dbias = Matrix<T>::Zero(1, c.spec.cout);
    nn::conv2d_backward(x, in, params.value(c.weight), dy, c.spec, dx, grads[c.weight], dbias);
  }
}

// Train mode writes the running averages into `stats`; eval mode reads them.
template <typename T>
Matrix<T> norm_fwd(const nn::ParamSet<T>& params, nn::ParamSet<T>* stats, const Norm<T>& n, const Matrix<T>& x,
                   Mode mode, double momentum, double eps, nn::BatchNormCache<T>* cache) {
  if (mode == Mode::Train) {
    LRM_REQUIRE(stats != nullptr, "train-mode normalization needs mutable statistics");
    return nn::batchnorm_forward(x, params.value(n.gamma), params.value(n.beta), stats->value(n.mean),
                                 stats->value(n.var), mode, static_cast<T>(momentum), static_cast<T>(eps), cache);
  }
  Matrix<T> mean = params.value(n.mean);
  Matrix<T> var = params.value(n.var);
  return nn::batchnorm_forward(x, params.value(n.gamma), params.value(n.beta), mean, var, mode, static_cast<T>(momentum),
                               static_cast<T>(eps), cache);
}

template <typename T>
Matrix<T> norm_bwd(const nn::ParamSet<T>& params, const Norm<T>& n, const nn::BatchNormCache<T>& cache,
                   const Matrix<T>& dy, nn::Grads<T>& grads) {
  Matrix<T> dx;
  nn::batchnorm_backward(dy, params.value(n.gamma), cache, dx, grads[n.gamma], grads[n.beta]);
  return dx;
}

template <typename T>
std::size_t add_slope(nn::ParamSet<T>& params, const std::string& name, int c) {
  const auto i = params.add(name, {1, static_cast<std::size_t>(c)});
  params.value(i).setConstant(T(0.25));
  return i;
}

template <typename T>
Matrix<T> prelu_bwd(const nn::ParamSet<T>& params, std::size_t slope, const Matrix<T>& x, const Matrix<T>& dy,
                    nn::Grads<T>& grads) {
  Matrix<T> dx;
  nn::prelu_backward(x, params.value(slope), dy, dx, grads[slope]);
  return dx;
}

nlohmann::json generator_json(const GeneratorConfig& c) {
  return {{"factor", c.factor},           {"residual_blocks", c.residual_blocks},
          {"channels", c.channels},       {"stage_channels", c.stage_channels},
          {"head_kernel", c.head_kernel}, {"tail_kernel", c.tail_kernel},
          {"log_offset", c.log_offset},   {"fill_depth", c.fill_depth},
          {"min_depth", c.min_depth},     {"max_depth", c.max_depth},
          {"bn_momentum", c.bn_momentum}, {"bn_eps", c.bn_eps}};
}

GeneratorConfig generator_from_json(const nlohmann::json& j) {
  GeneratorConfig c;
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

nlohmann::json parse_meta(const nn::Checkpoint& ckpt, std::string_view kind) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(ckpt.metadata);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint metadata is not JSON: ") + e.what());
  }
  if (meta.value("kind", "") != kind) throw IoError("checkpoint does not hold a " + std::string(kind));
  return meta;
}

}  // namespace

// ---------------------------------------------------------------------------
// Generator

template <typename T>
SrGenerator<T>::SrGenerator(GeneratorConfig config, std::uint64_t seed, bool zero_residual)
    : config_(std::move(config)) {
  config_.validate();
  Rng rng(derive_seed(seed, fnv1a("sr-generator-init")));
  const int c = config_.channels;
  head_ = add_conv(params_, "generator/head", config_.head_kernel, 1, c, true, rng);
  head_slope_ = add_slope(params_, "generator/head/slope", c);
  for (int b = 0; b < config_.residual_blocks; ++b) {
    const std::string p = "generator/block" + std::to_string(b);
    Block blk;
    blk.conv1 = add_conv(params_, p + "/conv1", 3, c, c, false, rng);
    blk.norm1 = add_norm(params_, p + "/norm1", c);
    blk.slope = add_slope(params_, p + "/slope", c);
    blk.conv2 = add_conv(params_, p + "/conv2", 3, c, c, false, rng);
    blk.norm2 = add_norm(params_, p + "/norm2", c);
    if (zero_residual) params_.value(blk.norm2.gamma).setZero();
    blocks_.push_back(blk);
  }
  post_ = add_conv(params_, "generator/post", 3, c, c, false, rng);
  post_norm_ = add_norm(params_, "generator/post_norm", c);
  if (zero_residual) params_.value(post_norm_.gamma).setZero();
  int width = c;
  for (int s = 0; s < config_.stages(); ++s) {
    const std::string p = "generator/stage" + std::to_string(s);
    Stage st;
    st.conv = add_conv(params_, p + "/conv", 3, width, 2 * config_.stage_channels, true, rng);
    st.slope = add_slope(params_, p + "/slope", config_.stage_channels);
    stages_.push_back(st);
    width = config_.stage_channels;
  }
  tail_ = add_conv(params_, "generator/tail", config_.tail_kernel, width, 1, true, rng);
}

template <typename T>
ImageBatch<T> SrGenerator<T>::run(const ImageBatch<T>& input, Mode mode, Tape* tape, nn::ParamSet<T>* stats) const {
  LRM_REQUIRE(input.shape.c == 1 && input.x.rows() == input.shape.rows() && input.x.cols() == 1,
              "generator input must be a single-channel batch");
  const auto& P = params_;
  const T mom = static_cast<T>(config_.bn_momentum);
  const T eps = static_cast<T>(config_.bn_eps);
  ImageShape trunk_shape = input.shape;
  trunk_shape.c = config_.channels;

  Matrix<T> head_pre = conv_fwd(P, head_, input.x, input.shape);
  Matrix<T> h0 = nn::prelu_forward(head_pre, P.value(head_slope_));
  if (tape) {
    tape->lr = input.shape;
    tape->x = input.x;
    tape->blocks.assign(blocks_.size(), {});
  }
  Matrix<T> r = h0;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& blk = blocks_[i];
    auto* bt = tape ? &tape->blocks[i] : nullptr;
    Matrix<T> b = norm_fwd(P, stats, blk.norm1, conv_fwd(P, blk.conv1, r, trunk_shape), mode, mom, eps,
                           bt ? &bt->bn1 : nullptr);
    Matrix<T> c = nn::prelu_forward(b, P.value(blk.slope));
    Matrix<T> e = norm_fwd(P, stats, blk.norm2, conv_fwd(P, blk.conv2, c, trunk_shape), mode, mom, eps,
                           bt ? &bt->bn2 : nullptr);
    if (bt) {
      bt->in = r;
      bt->b = std::move(b);
      bt->c = std::move(c);
    }
    r += e;
  }
  Matrix<T> u = h0 + norm_fwd(P, stats, post_norm_, conv_fwd(P, post_, r, trunk_shape), mode, mom, eps,
                              tape ? &tape->post : nullptr);
  if (tape) {
    tape->trunk = std::move(r);
    tape->head_pre = std::move(head_pre);
    tape->h0 = std::move(h0);
    tape->stages.assign(stages_.size(), {});
  }
  ImageShape shape = trunk_shape;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const Stage& st = stages_[s];
    ImageShape conv_out = st.conv.spec.output_shape(shape);
    Matrix<T> shuffled = nn::subpixel_shuffle(conv_fwd(P, st.conv, u, shape), conv_out, 2);
    Matrix<T> next = nn::prelu_forward(shuffled, P.value(st.slope));
    if (tape) {
      tape->stages[s].in = shape;
      tape->stages[s].x = std::move(u);
      tape->stages[s].shuffled = std::move(shuffled);
    }
    u = std::move(next);
    shape = {shape.n, shape.h * 2, shape.w, config_.stage_channels};
  }
  ImageBatch<T> out;
  out.x = conv_fwd(P, tail_, u, shape);
  out.shape = {shape.n, shape.h, shape.w, 1};
  if (tape) {
    tape->tail_in = shape;
    tape->tail_x = std::move(u);
  }
  return out;
}

template <typename T>
ImageBatch<T> SrGenerator<T>::forward(const ImageBatch<T>& input, Mode mode, Tape* tape) {
  return run(input, mode, tape, &params_);
}

template <typename T>
ImageBatch<T> SrGenerator<T>::forward(const ImageBatch<T>& input) const {
  return run(input, Mode::Eval, nullptr, nullptr);
}

template <typename T>
void SrGenerator<T>::backward(const Tape& tape, const Matrix<T>& dy, nn::Grads<T>& grads) const {
  const auto& P = params_;
  Matrix<T> du;
  conv_bwd(P, tail_, tape.tail_x, tape.tail_in, dy, &du, grads);
  for (std::size_t s = stages_.size(); s-- > 0;) {
    const Stage& st = stages_[s];
    const auto& t = tape.stages[s];
    const Matrix<T> dshuffled = prelu_bwd(P, st.slope, t.shuffled, du, grads);
    const ImageShape conv_out = st.conv.spec.output_shape(t.in);
    const Matrix<T> dconv = nn::subpixel_unshuffle(dshuffled, {conv_out.n, conv_out.h * 2, conv_out.w, conv_out.c / 2}, 2);
    Matrix<T> dx;
    conv_bwd(P, st.conv, t.x, t.in, dconv, &dx, grads);
    du = std::move(dx);
  }
  ImageShape trunk_shape = tape.lr;
  trunk_shape.c = config_.channels;
  // du is now the gradient at h0 + post(trunk).
  Matrix<T> dh0 = du;
  Matrix<T> dr;
  conv_bwd(P, post_, tape.trunk, trunk_shape, norm_bwd(P, post_norm_, tape.post, du, grads), &dr, grads);
  for (std::size_t i = blocks_.size(); i-- > 0;) {
    const Block& blk = blocks_[i];
    const auto& bt = tape.blocks[i];
    Matrix<T> dc;
    conv_bwd(P, blk.conv2, bt.c, trunk_shape, norm_bwd(P, blk.norm2, bt.bn2, dr, grads), &dc, grads);
    const Matrix<T> db = prelu_bwd(P, blk.slope, bt.b, dc, grads);
    Matrix<T> din;
    conv_bwd(P, blk.conv1, bt.in, trunk_shape, norm_bwd(P, blk.norm1, bt.bn1, db, grads), &din, grads);
    dr += din;
  }
  dh0 += dr;
  const Matrix<T> dpre = prelu_bwd(P, head_slope_, tape.head_pre, dh0, grads);
  conv_bwd<T>(P, head_, tape.x, tape.lr, dpre, nullptr, grads);
}

template <typename T>
RangeImage SrGenerator<T>::upsample(const RangeImage& lr) const {
  const ImageBatch<T> in = encode_batch<T>(std::span<const RangeImage>(&lr, 1), config_);
  const ImageBatch<T> y = forward(in);
  const RangeImage mask = upsample_nearest(lr, config_.factor);
  RangeImage out(mask.model);
  for (std::size_t i = 0; i < out.depth.size(); ++i) {
    if (!mask.valid[i]) continue;
    const double d = std::exp(static_cast<double>(y.x(static_cast<Eigen::Index>(i), 0)) + config_.log_offset);
    out.depth[i] = std::clamp(std::isfinite(d) ? d : config_.max_depth, config_.min_depth, config_.max_depth);
    out.valid[i] = 1;
  }
  return out;
}

template <typename T>
nn::Checkpoint SrGenerator<T>::to_checkpoint(const std::string& extra_metadata) const {
  nn::Checkpoint ckpt;
  ckpt.arch_digest = fnv1a(config_.canonical());
  nlohmann::json meta;
  meta["kind"] = "sr-generator";
  meta["config"] = generator_json(config_);
  meta["extra"] = nlohmann::json::parse(extra_metadata);
  ckpt.metadata = meta.dump();
  nn::store_params(ckpt, params_);
  return ckpt;
}

template <typename T>
SrGenerator<T> SrGenerator<T>::from_checkpoint(const nn::Checkpoint& ckpt) {
  const auto meta = parse_meta(ckpt, "sr-generator");
  const GeneratorConfig config = generator_from_json(meta.at("config"));
  if (fnv1a(config.canonical()) != ckpt.arch_digest)
    throw IoError("checkpoint architecture digest does not match its metadata");
  SrGenerator g(config, 0);
  nn::load_params(ckpt, g.params_);
  return g;
}

// ---------------------------------------------------------------------------
// Discriminator

template <typename T>
SrDiscriminator<T>::SrDiscriminator(DiscriminatorConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(derive_seed(seed, fnv1a("sr-discriminator-init")));
  int cin = 1;
  for (std::size_t i = 0; i < DiscriminatorConfig::kLadder.size(); ++i) {
    const auto& l = DiscriminatorConfig::kLadder[i];
    const std::string p = "discriminator/conv" + std::to_string(i);
    convs_.push_back(add_conv(params_, p, l.kh, cin, config_.widths[i], i == 0, rng, l.sh, l.sw, l.kw));
    if (i > 0) norms_.push_back(add_norm(params_, p + "/norm", config_.widths[i]));
    cin = config_.widths[i];
  }
  const auto flat = static_cast<std::size_t>(config_.flatten_size());
  const auto dense = static_cast<std::size_t>(config_.dense);
  hidden_weight_ = params_.add("discriminator/hidden/weight", {flat, dense});
  hidden_bias_ = params_.add("discriminator/hidden/bias", {1, dense});
  out_weight_ = params_.add("discriminator/out/weight", {dense, 1});
  out_bias_ = params_.add("discriminator/out/bias", {1, 1});
  nn::glorot_uniform(params_.value(hidden_weight_), flat, dense, rng);
  nn::glorot_uniform(params_.value(out_weight_), dense, 1, rng);
}

template <typename T>
Matrix<T> SrDiscriminator<T>::run(const ImageBatch<T>& input, Mode mode, Tape* tape, nn::ParamSet<T>* stats) const {
  LRM_REQUIRE(input.shape.h == config_.height && input.shape.w == config_.width && input.shape.c == 1,
              "discriminator input shape does not match its configuration");
  LRM_REQUIRE(input.x.rows() == input.shape.rows() && input.x.cols() == 1, "discriminator input matrix mismatch");
  const auto& P = params_;
  const T leak = static_cast<T>(config_.leak);
  if (tape) *tape = {};
  Matrix<T> x = input.x;
  ImageShape shape = input.shape;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    Matrix<T> y = conv_fwd(P, convs_[i], x, shape);
    const ImageShape out_shape = convs_[i].spec.output_shape(shape);
    if (i > 0) {
      nn::BatchNormCache<T> cache;
      y = norm_fwd(P, stats, norms_[i - 1], y, mode, config_.bn_momentum, config_.bn_eps, tape ? &cache : nullptr);
      if (tape) tape->norms.push_back(std::move(cache));
    }
    nn::leaky_relu_inplace(y, leak);
    if (tape) {
      tape->shapes.push_back(shape);
      tape->inputs.push_back(std::move(x));
      tape->outputs.push_back(y);
    }
    x = std::move(y);
    shape = out_shape;
  }
  const Eigen::Index per = static_cast<Eigen::Index>(shape.h) * shape.w * shape.c;
  Matrix<T> flat = Eigen::Map<const Matrix<T>>(x.data(), shape.n, per);
  Matrix<T> hidden = nn::dense_forward(flat, P.value(hidden_weight_), P.value(hidden_bias_));
  nn::leaky_relu_inplace(hidden, leak);
  Matrix<T> logits = nn::dense_forward(hidden, P.value(out_weight_), P.value(out_bias_));
  if (tape) {
    tape->flat = std::move(flat);
    tape->hidden = std::move(hidden);
  }
  return logits;
}

template <typename T>
Matrix<T> SrDiscriminator<T>::forward(const ImageBatch<T>& input, Mode mode, Tape* tape) {
  return run(input, mode, tape, &params_);
}

template <typename T>
Matrix<T> SrDiscriminator<T>::forward(const ImageBatch<T>& input) const {
  return run(input, Mode::Eval, nullptr, nullptr);
}

template <typename T>
void SrDiscriminator<T>::backward(const Tape& tape, const Matrix<T>& dlogits, nn::Grads<T>& grads, Matrix<T>* dx) const {
  const auto& P = params_;
  const T leak = static_cast<T>(config_.leak);
  Matrix<T> dhidden;
  nn::dense_backward(tape.hidden, P.value(out_weight_), dlogits, &dhidden, grads[out_weight_], grads[out_bias_]);
  nn::leaky_relu_backward_inplace(tape.hidden, dhidden, leak);
  Matrix<T> dflat;
  nn::dense_backward(tape.flat, P.value(hidden_weight_), dhidden, &dflat, grads[hidden_weight_], grads[hidden_bias_]);
  const Matrix<T>& last = tape.outputs.back();
  Matrix<T> dy = Eigen::Map<const Matrix<T>>(dflat.data(), last.rows(), last.cols());
  for (std::size_t i = convs_.size(); i-- > 0;) {
    nn::leaky_relu_backward_inplace(tape.outputs[i], dy, leak);
    if (i > 0) dy = norm_bwd(P, norms_[i - 1], tape.norms[i - 1], dy, grads);
    Matrix<T> dinput;
    const bool need = i > 0 || dx != nullptr;
    conv_bwd(P, convs_[i], tape.inputs[i], tape.shapes[i], dy, need ? &dinput : nullptr, grads);
    dy = std::move(dinput);
  }
  if (dx) *dx = std::move(dy);
}

template <typename T>
nn::Checkpoint SrDiscriminator<T>::to_checkpoint() const {
  nn::Checkpoint ckpt;
  ckpt.arch_digest = fnv1a(config_.canonical());
  nlohmann::json meta;
  meta["kind"] = "sr-discriminator";
  meta["config"] = {{"height", config_.height}, {"width", config_.width},           {"widths", config_.widths},
                    {"dense", config_.dense},   {"leak", config_.leak},             {"bn_momentum", config_.bn_momentum},
                    {"bn_eps", config_.bn_eps}};
  ckpt.metadata = meta.dump();
  nn::store_params(ckpt, params_);
  return ckpt;
}

template <typename T>
SrDiscriminator<T> SrDiscriminator<T>::from_checkpoint(const nn::Checkpoint& ckpt) {
  const auto meta = parse_meta(ckpt, "sr-discriminator");
  const auto& j = meta.at("config");
  DiscriminatorConfig c;
  c.height = j.at("height");
  c.width = j.at("width");
  c.widths = j.at("widths").get<std::vector<int>>();
  c.dense = j.at("dense");
  c.leak = j.at("leak");
  c.bn_momentum = j.at("bn_momentum");
  c.bn_eps = j.at("bn_eps");
  if (fnv1a(c.canonical()) != ckpt.arch_digest) throw IoError("checkpoint architecture digest does not match its metadata");
  SrDiscriminator d(c, 0);
  nn::load_params(ckpt, d.params_);
  return d;
}

// ---------------------------------------------------------------------------
// Training

std::string_view mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::L1: return "l1";
    case TrainMode::L2: return "l2";
    case TrainMode::Gan: return "gan";
  }
  return "l1";
}

TrainMode parse_mode(std::string_view name) {
  if (name == "l1") return TrainMode::L1;
  if (name == "l2") return TrainMode::L2;
  if (name == "gan") return TrainMode::Gan;
  throw InvalidArgument("unknown up-sampler training mode " + std::string(name));
}

void UpsampleTrainConfig::validate() const {
  LRM_REQUIRE(steps >= 0, "step count must be nonnegative");
  LRM_REQUIRE(batch >= 1, "batch must hold at least one pair");
  LRM_REQUIRE(crop_cols >= 0, "crop width must be nonnegative");
  LRM_REQUIRE(log_every >= 1, "log cadence must be positive");
}

std::vector<UpsamplePair> make_pairs(std::span<const RangeImage> hr, int factor) {
  std::vector<UpsamplePair> pairs;
  pairs.reserve(hr.size());
  for (const auto& img : hr) pairs.push_back({make_lr(img, factor), img});
  return pairs;
}

namespace {

RangeImage crop_columns(const RangeImage& img, int c0, int width) {
  ProjectionModel m = img.model;
  m.cols = width;
  RangeImage out(m);
  for (int r = 0; r < img.rows(); ++r)
    for (int c = 0; c < width; ++c)
      if (img.is_valid(r, c0 + c)) out.set(r, c, img.at(r, c0 + c));
  return out;
}

struct Batch {
  std::vector<RangeImage> lr;
  std::vector<RangeImage> hr;
  std::vector<double> target;
  std::vector<std::uint8_t> valid;
};

Batch draw_batch(std::span<const UpsamplePair> pairs, const UpsampleTrainConfig& config, std::int64_t step) {
  Rng rng(derive_seed(config.seed, fnv1a("batch"), static_cast<std::uint64_t>(step)));
  std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);
  const int cols = pairs[0].hr.cols();
  const int width = config.crop_cols > 0 ? std::min(config.crop_cols, cols) : cols;
  std::uniform_int_distribution<int> offset(0, cols - width);
  Batch b;
  for (int i = 0; i < config.batch; ++i) {
    const auto& p = pairs[pick(rng)];
    const int c0 = offset(rng);
    b.lr.push_back(crop_columns(p.lr, c0, width));
    b.hr.push_back(crop_columns(p.hr, c0, width));
    b.target.insert(b.target.end(), b.hr.back().depth.begin(), b.hr.back().depth.end());
    b.valid.insert(b.valid.end(), b.hr.back().valid.begin(), b.hr.back().valid.end());
  }
  return b;
}

// Network output outside the target mask is replaced by the fill value.
ImageBatch<float> mask_fake(const ImageBatch<float>& y, const std::vector<std::uint8_t>& valid, const GeneratorConfig& g) {
  ImageBatch<float> out = y;
  const auto fill = static_cast<float>(std::log(g.fill_depth) - g.log_offset);
  for (Eigen::Index i = 0; i < out.x.rows(); ++i)
    if (!valid[static_cast<std::size_t>(i)]) out.x(i, 0) = fill;
  return out;
}

void check_finite(double v, std::int64_t step, const char* what) {
  if (!std::isfinite(v)) throw DivergenceError(step, std::string("non-finite ") + what);
}

}  // namespace

UpsampleTrainResult train_upsampler(std::span<const UpsamplePair> pairs, const GeneratorConfig& generator,
                                    const DiscriminatorConfig& discriminator, const UpsampleTrainConfig& config,
                                    const std::function<void(const UpsampleLogRow&)>& on_log) {
  config.validate();
  generator.validate();
  LRM_REQUIRE(!pairs.empty(), "no training pairs");
  for (const auto& p : pairs) {
    LRM_REQUIRE(p.hr.rows() == p.lr.rows() * generator.factor && p.hr.cols() == p.lr.cols(),
                "pair shapes do not match the up-sampling factor");
    LRM_REQUIRE(p.hr.rows() == pairs[0].hr.rows() && p.hr.cols() == pairs[0].hr.cols(), "pairs differ in shape");
  }
  UpsampleTrainResult result{SrGenerator<float>(generator, derive_seed(config.seed, fnv1a("init"))), {}};
  auto& g = result.generator;
  nn::Adam<float> adam_g(g.params(), config.adam);

  const bool gan = config.mode == TrainMode::Gan;
  std::optional<SrDiscriminator<float>> d;
  std::optional<nn::Adam<float>> adam_d;
  if (gan) {
    const int width = config.crop_cols > 0 ? std::min(config.crop_cols, pairs[0].hr.cols()) : pairs[0].hr.cols();
    LRM_REQUIRE(discriminator.height == pairs[0].hr.rows() && discriminator.width == width,
                "discriminator input shape does not match the training crops");
    d.emplace(discriminator, derive_seed(config.seed, fnv1a("init-discriminator")));
    adam_d.emplace(d->params(), config.adam);
  }

  for (std::int64_t step = 0; step < config.steps; ++step) {
    const Batch b = draw_batch(pairs, config, step);
    const ImageBatch<float> lr = encode_batch<float>(b.lr, generator);
    typename SrGenerator<float>::Tape gt;
    const ImageBatch<float> y = g.forward(lr, Mode::Train, &gt);
    UpsampleLogRow row;
    row.step = step + 1;
    Matrix<float> dy = Matrix<float>::Zero(y.x.rows(), 1);
    try {
      if (!gan) {
        std::vector<double> pred(static_cast<std::size_t>(y.x.rows()));
        for (std::size_t i = 0; i < pred.size(); ++i)
          pred[i] = std::exp(static_cast<double>(y.x(static_cast<Eigen::Index>(i), 0)) + generator.log_offset);
        const LAlpha loss = l_alpha_loss(pred, b.target, b.valid, config.alpha());
        check_finite(loss.loss, step, "generator loss");
        for (std::size_t i = 0; i < pred.size(); ++i)
          dy(static_cast<Eigen::Index>(i), 0) = static_cast<float>(loss.grad[i] * pred[i]);
        row.generator_loss = loss.loss;
      } else {
        const ImageBatch<float> real = encode_batch<float>(b.hr, generator);
        const ImageBatch<float> fake = mask_fake(y, b.valid, generator);
        auto dgrads = d->params().zero_grads();
        typename SrDiscriminator<float>::Tape tr, tf, tg;
        const auto real_loss = nn::sigmoid_bce(d->forward(real, Mode::Train, &tr), 1.0f);
        d->backward(tr, real_loss.grad, dgrads, nullptr);
        const auto fake_loss = nn::sigmoid_bce(d->forward(fake, Mode::Train, &tf), 0.0f);
        d->backward(tf, fake_loss.grad, dgrads, nullptr);
        row.discriminator_loss = real_loss.loss + fake_loss.loss;
        check_finite(row.discriminator_loss, step, "discriminator loss");
        adam_d->update(d->params(), dgrads);

        auto scratch = d->params().zero_grads();
        const auto gen_loss = nn::sigmoid_bce(d->forward(fake, Mode::Train, &tg), 1.0f);
        Matrix<float> dfake;
        d->backward(tg, gen_loss.grad, scratch, &dfake);
        for (Eigen::Index i = 0; i < dy.rows(); ++i)
          if (b.valid[static_cast<std::size_t>(i)]) dy(i, 0) = dfake(i, 0);
        row.generator_loss = gen_loss.loss;
        check_finite(row.generator_loss, step, "generator loss");
      }
      auto grads = g.params().zero_grads();
      g.backward(gt, dy, grads);
      adam_g.update(g.params(), grads);
    } catch (const NonFiniteError& e) {
      throw DivergenceError(step, e.what());
    }
    if ((step + 1) % config.log_every == 0 || step + 1 == config.steps) {
      result.log.push_back(row);
      if (on_log) on_log(row);
    }
  }
  return result;
}

template ImageBatch<float> encode_batch<float>(std::span<const RangeImage>, const GeneratorConfig&);
template ImageBatch<double> encode_batch<double>(std::span<const RangeImage>, const GeneratorConfig&);
template class SrGenerator<float>;
template class SrGenerator<double>;
template class SrDiscriminator<float>;
template class SrDiscriminator<double>;

}  // namespace lrm::upsample
