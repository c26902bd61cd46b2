#pragma once

#include "lrm/nn/tensor.hpp"

// Image layers over batches stored as (n*h*w) x c row-major matrices in NHWC order.

namespace lrm::nn {

struct ImageShape {
  int n = 1;
  int h = 1;
  int w = 1;
  int c = 1;

  Eigen::Index rows() const noexcept { return static_cast<Eigen::Index>(n) * h * w; }
  bool operator==(const ImageShape&) const = default;
};

/// 2-D convolution with "same" padding: output extent is ceil(in / stride).
/// Weights are (kh*kw*cin) x cout, offset-major: row (i*kw + j)*cin + ci.
struct ConvSpec {
  int kh = 3;
  int kw = 3;
  int sh = 1;
  int sw = 1;
  int cin = 1;
  int cout = 1;

  ImageShape output_shape(const ImageShape& in) const;
};

template <typename T>
Matrix<T> conv2d_forward(const Matrix<T>& x, const ImageShape& in, const Matrix<T>& weight, const Matrix<T>& bias,
                         const ConvSpec& spec);

/// dx may be null for the first layer.
template <typename T>
void conv2d_backward(const Matrix<T>& x, const ImageShape& in, const Matrix<T>& weight, const Matrix<T>& dy,
                     const ConvSpec& spec, Matrix<T>* dx, Matrix<T>& dweight, Matrix<T>& dbias);

template <typename T>
struct BatchNormCache {
  Matrix<T> xhat;
  Matrix<T> inv_std;  // 1 x c
};

/// Per-channel standardization with trainable scale/shift. Train mode uses batch
/// statistics and folds them into the running averages; eval mode reads the
/// running averages.
template <typename T>
Matrix<T> batchnorm_forward(const Matrix<T>& x, const Matrix<T>& gamma, const Matrix<T>& beta, Matrix<T>& running_mean,
                            Matrix<T>& running_var, Mode mode, T momentum, T eps, BatchNormCache<T>* cache);

/// Train-mode backward.
template <typename T>
void batchnorm_backward(const Matrix<T>& dy, const Matrix<T>& gamma, const BatchNormCache<T>& cache, Matrix<T>& dx,
                        Matrix<T>& dgamma, Matrix<T>& dbeta);

/// Per-channel parametric rectifier.
template <typename T>
Matrix<T> prelu_forward(const Matrix<T>& x, const Matrix<T>& slope);

template <typename T>
void prelu_backward(const Matrix<T>& x, const Matrix<T>& slope, const Matrix<T>& dy, Matrix<T>& dx, Matrix<T>& dslope);

/// Vertical subpixel shuffle: (n, h, w, s*c) -> (n, s*h, w, c) with
/// out(n, s*y + i, x, ch) = in(n, y, x, i*c + ch).
template <typename T>
Matrix<T> subpixel_shuffle(const Matrix<T>& x, const ImageShape& in, int s);

/// Exact inverse of subpixel_shuffle; `out` is the shuffled shape.
template <typename T>
Matrix<T> subpixel_unshuffle(const Matrix<T>& y, const ImageShape& out, int s);

}  // namespace lrm::nn
