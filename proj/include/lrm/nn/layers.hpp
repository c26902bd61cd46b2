#pragma once

#include <span>
#include <vector>

#include "lrm/nn/tensor.hpp"

// Forward/backward pairs for the dense layer vocabulary. Activations are
// row-major matrices with one row per position (query, neighbor, pixel) and one
// column per channel. Backward functions accumulate (+=) into parameter
// gradients and overwrite input gradients.

namespace lrm::nn {

template <typename T>
Matrix<T> dense_forward(const Matrix<T>& x, const Matrix<T>& weight, const Matrix<T>& bias);

/// dx may be null when the input gradient is not needed.
template <typename T>
void dense_backward(const Matrix<T>& x, const Matrix<T>& weight, const Matrix<T>& dy, Matrix<T>* dx, Matrix<T>& dweight,
                    Matrix<T>& dbias);

template <typename T>
void leaky_relu_inplace(Matrix<T>& x, T slope);

/// Uses the layer output: for slope >= 0 its sign equals the input's sign.
template <typename T>
void leaky_relu_backward_inplace(const Matrix<T>& y, Matrix<T>& dy, T slope);

/// Shared per-position affine map followed by a leaky rectifier (a 1x1 convolution).
template <typename T>
Matrix<T> shared_mlp_forward(const Matrix<T>& block, const Matrix<T>& weight, const Matrix<T>& bias, T slope);

template <typename T>
void shared_mlp_backward(const Matrix<T>& block, const Matrix<T>& weight, const Matrix<T>& y, Matrix<T> dy, T slope,
                         Matrix<T>* dblock, Matrix<T>& dweight, Matrix<T>& dbias);

template <typename T>
struct MaxReduction {
  Matrix<T> out;          // Q x C
  std::vector<int> arg;   // Q x C winning neighbor slot
};

/// Max over groups of k consecutive rows: (Q*k) x C -> Q x C. Ties go to the lowest slot.
template <typename T>
MaxReduction<T> reduce_max_neighbors(const Matrix<T>& block, int k);

template <typename T>
Matrix<T> reduce_max_backward(const Matrix<T>& dout, const std::vector<int>& arg, int k);

/// Identity forward pass.
template <typename T>
const Matrix<T>& grad_reverse_forward(const Matrix<T>& x) {
  return x;
}

/// Backward pass of the reversal node: upstream = -lambda * downstream.
template <typename T>
Matrix<T> grad_reverse_backward(const Matrix<T>& grad, T lambda) {
  return (-lambda) * grad;
}

template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& logits);

template <typename T>
struct CrossEntropy {
  T loss{};
  Matrix<T> probs;
  Matrix<T> grad;  // d loss / d logits
};

/// Mean over rows of weight * (-log softmax(logits)[target]).
/// Zero-weight rows contribute nothing to loss or gradient; their target is ignored.
template <typename T>
CrossEntropy<T> softmax_cross_entropy(const Matrix<T>& logits, std::span<const int> targets, std::span<const T> weights);

template <typename T>
struct DropoutResult {
  Matrix<T> out;
  Matrix<T> mask;  // 0 or 1/(1-rate); empty when the layer is an identity
};

template <typename T>
DropoutResult<T> dropout_forward(const Matrix<T>& x, T rate, Mode mode, Rng& rng);

template <typename T>
Matrix<T> dropout_backward(const Matrix<T>& dy, const Matrix<T>& mask) {
  if (mask.size() == 0) return dy;
  return dy.cwiseProduct(mask);
}

/// Mean binary cross-entropy of sigmoid(logits) against a constant label in {0, 1}.
template <typename T>
struct BinaryCrossEntropy {
  T loss{};
  Matrix<T> grad;
};

template <typename T>
BinaryCrossEntropy<T> sigmoid_bce(const Matrix<T>& logits, T label);

}  // namespace lrm::nn
