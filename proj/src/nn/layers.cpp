#include "lrm/nn/layers.hpp"

#include <cmath>
#include <random>

namespace lrm::nn {

template <typename T>
void glorot_uniform(Matrix<T>& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(dist(rng));
}

template <typename T>
Matrix<T> dense_forward(const Matrix<T>& x, const Matrix<T>& weight, const Matrix<T>& bias) {
  LRM_REQUIRE(x.cols() == weight.rows(), "dense input width does not match weight rows");
  LRM_REQUIRE(bias.rows() == 1 && bias.cols() == weight.cols(), "dense bias shape mismatch");
  Matrix<T> y(x.rows(), weight.cols());
  y.noalias() = x * weight;
  y.rowwise() += bias.row(0);
  return y;
}

template <typename T>
void dense_backward(const Matrix<T>& x, const Matrix<T>& weight, const Matrix<T>& dy, Matrix<T>* dx, Matrix<T>& dweight,
                    Matrix<T>& dbias) {
  dweight.noalias() += x.transpose() * dy;
  dbias += dy.colwise().sum();
  if (dx) {
    dx->resize(dy.rows(), weight.rows());
    dx->noalias() = dy * weight.transpose();
  }
}

template <typename T>
void leaky_relu_inplace(Matrix<T>& x, T slope) {
  x = x.unaryExpr([slope](T v) { return v > T(0) ? v : slope * v; });
}

template <typename T>
void leaky_relu_backward_inplace(const Matrix<T>& y, Matrix<T>& dy, T slope) {
  dy = dy.binaryExpr(y, [slope](T g, T v) { return v > T(0) ? g : slope * g; });
}

template <typename T>
Matrix<T> shared_mlp_forward(const Matrix<T>& block, const Matrix<T>& weight, const Matrix<T>& bias, T slope) {
  Matrix<T> y = dense_forward(block, weight, bias);
  leaky_relu_inplace(y, slope);
  return y;
}

template <typename T>
void shared_mlp_backward(const Matrix<T>& block, const Matrix<T>& weight, const Matrix<T>& y, Matrix<T> dy, T slope,
                         Matrix<T>* dblock, Matrix<T>& dweight, Matrix<T>& dbias) {
  leaky_relu_backward_inplace(y, dy, slope);
  dense_backward(block, weight, dy, dblock, dweight, dbias);
}

template <typename T>
MaxReduction<T> reduce_max_neighbors(const Matrix<T>& block, int k) {
  LRM_REQUIRE(k >= 1, "max reduction needs k >= 1");
  LRM_REQUIRE(block.rows() % k == 0, "row count is not a multiple of k");
  const Eigen::Index q = block.rows() / k;
  const Eigen::Index c = block.cols();
  MaxReduction<T> r{Matrix<T>(q, c), std::vector<int>(static_cast<std::size_t>(q * c), 0)};
  for (Eigen::Index i = 0; i < q; ++i) {
    r.out.row(i) = block.row(i * k);
    int* arg = r.arg.data() + i * c;
    for (int j = 1; j < k; ++j) {
      const T* src = block.data() + (i * k + j) * c;
      T* dst = r.out.data() + i * c;
      for (Eigen::Index ch = 0; ch < c; ++ch) {
        if (src[ch] > dst[ch]) {
          dst[ch] = src[ch];
          arg[ch] = j;
        }
      }
    }
  }
  return r;
}

template <typename T>
Matrix<T> reduce_max_backward(const Matrix<T>& dout, const std::vector<int>& arg, int k) {
  const Eigen::Index q = dout.rows();
  const Eigen::Index c = dout.cols();
  Matrix<T> din = Matrix<T>::Zero(q * k, c);
  for (Eigen::Index i = 0; i < q; ++i)
    for (Eigen::Index ch = 0; ch < c; ++ch) din(i * k + arg[static_cast<std::size_t>(i * c + ch)], ch) = dout(i, ch);
  return din;
}

template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& logits) {
  Matrix<T> p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const T m = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - m).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

template <typename T>
CrossEntropy<T> softmax_cross_entropy(const Matrix<T>& logits, std::span<const int> targets, std::span<const T> weights) {
  const auto rows = static_cast<std::size_t>(logits.rows());
  LRM_REQUIRE(targets.size() == rows && weights.size() == rows, "cross-entropy targets/weights do not match rows");
  LRM_REQUIRE(rows > 0, "cross-entropy over zero rows");
  if (!logits.allFinite()) throw NonFiniteError("non-finite logits in cross-entropy");
  CrossEntropy<T> ce;
  ce.probs = softmax_rows(logits);
  ce.grad = Matrix<T>::Zero(logits.rows(), logits.cols());
  const T inv_rows = T(1) / static_cast<T>(rows);
  T total = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    const T w = weights[i];
    LRM_REQUIRE(w >= T(0), "negative cross-entropy row weight");
    if (w == T(0)) continue;
    const int t = targets[i];
    LRM_REQUIRE(t >= 0 && t < logits.cols(), "cross-entropy target out of range");
    const auto r = static_cast<Eigen::Index>(i);
    // log-sum-exp form keeps the loss finite for saturated rows.
    const T m = logits.row(r).maxCoeff();
    const T lse = m + std::log((logits.row(r).array() - m).exp().sum());
    total += w * (lse - logits(r, t));
    ce.grad.row(r) = (w * inv_rows) * ce.probs.row(r);
    ce.grad(r, t) -= w * inv_rows;
  }
  ce.loss = total * inv_rows;
  return ce;
}

template <typename T>
DropoutResult<T> dropout_forward(const Matrix<T>& x, T rate, Mode mode, Rng& rng) {
  LRM_REQUIRE(rate >= T(0) && rate < T(1), "dropout rate must lie in [0, 1)");
  if (mode == Mode::Eval || rate == T(0)) return {x, Matrix<T>()};
  std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
  const T scale = T(1) / (T(1) - rate);
  Matrix<T> mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : T(0);
  return {x.cwiseProduct(mask), std::move(mask)};
}

template <typename T>
BinaryCrossEntropy<T> sigmoid_bce(const Matrix<T>& logits, T label) {
  LRM_REQUIRE(logits.size() > 0, "binary cross-entropy over an empty batch");
  if (!logits.allFinite()) throw NonFiniteError("non-finite discriminator logits");
  BinaryCrossEntropy<T> r;
  r.grad.resize(logits.rows(), logits.cols());
  const T inv = T(1) / static_cast<T>(logits.size());
  T total = 0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const T l = logits.data()[i];
    // softplus(l) - label * l, evaluated stably.
    const T softplus = std::max(l, T(0)) + std::log1p(std::exp(-std::abs(l)));
    total += softplus - label * l;
    const T sig = T(1) / (T(1) + std::exp(-l));
    r.grad.data()[i] = (sig - label) * inv;
  }
  r.loss = total * inv;
  return r;
}

#define LRM_INSTANTIATE_LAYERS(T)                                                                                      \
  template void glorot_uniform<T>(Matrix<T>&, std::size_t, std::size_t, Rng&);                                          \
  template Matrix<T> dense_forward<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&);                            \
  template void dense_backward<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, Matrix<T>*, Matrix<T>&,         \
                                  Matrix<T>&);                                                                          \
  template void leaky_relu_inplace<T>(Matrix<T>&, T);                                                                   \
  template void leaky_relu_backward_inplace<T>(const Matrix<T>&, Matrix<T>&, T);                                        \
  template Matrix<T> shared_mlp_forward<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, T);                    \
  template void shared_mlp_backward<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, Matrix<T>, T, Matrix<T>*,  \
                                       Matrix<T>&, Matrix<T>&);                                                         \
  template MaxReduction<T> reduce_max_neighbors<T>(const Matrix<T>&, int);                                              \
  template Matrix<T> reduce_max_backward<T>(const Matrix<T>&, const std::vector<int>&, int);                            \
  template Matrix<T> softmax_rows<T>(const Matrix<T>&);                                                                 \
  template CrossEntropy<T> softmax_cross_entropy<T>(const Matrix<T>&, std::span<const int>, std::span<const T>);        \
  template DropoutResult<T> dropout_forward<T>(const Matrix<T>&, T, Mode, Rng&);                                        \
  template BinaryCrossEntropy<T> sigmoid_bce<T>(const Matrix<T>&, T);

LRM_INSTANTIATE_LAYERS(float)
LRM_INSTANTIATE_LAYERS(double)

}  // namespace lrm::nn
