#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "lrm/common.hpp"

namespace lrm::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Mode { Train, Eval };

/// Named trainable (or buffer) tensor. Values are stored as a matrix whose
/// column count is the last dimension of `shape`.
template <typename T>
struct Param {
  std::string name;
  std::vector<std::size_t> shape;
  Matrix<T> value;
  bool trainable = true;

  std::size_t numel() const noexcept { return static_cast<std::size_t>(value.size()); }
};

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

template <typename T>
using Grads = std::vector<Matrix<T>>;

/// Ordered parameter collection; handles are the insertion indices.
template <typename T>
class ParamSet {
 public:
  std::size_t add(std::string name, std::vector<std::size_t> shape, bool trainable = true) {
    LRM_REQUIRE(!shape.empty(), "parameter shape must have rank >= 1");
    for (const auto& p : params_) LRM_REQUIRE(p.name != name, "duplicate parameter name " + name);
    const std::size_t cols = shape.back();
    const std::size_t rows = shape_numel(shape) / std::max<std::size_t>(cols, 1);
    Param<T> p{std::move(name), std::move(shape), Matrix<T>::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)),
               trainable};
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }

  std::size_t size() const noexcept { return params_.size(); }
  Param<T>& operator[](std::size_t i) { return params_[i]; }
  const Param<T>& operator[](std::size_t i) const { return params_[i]; }
  Matrix<T>& value(std::size_t i) { return params_[i].value; }
  const Matrix<T>& value(std::size_t i) const { return params_[i].value; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::size_t find(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return i;
    throw InvalidArgument("no parameter named " + name);
  }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
  }

  Grads<T> zero_grads() const {
    Grads<T> g;
    g.reserve(params_.size());
    for (const auto& p : params_) g.push_back(Matrix<T>::Zero(p.value.rows(), p.value.cols()));
    return g;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& p : params_) {
      const auto i = out.add(p.name, p.shape, p.trainable);
      out.value(i) = p.value.template cast<U>();
    }
    return out;
  }

 private:
  std::vector<Param<T>> params_;
};

/// Adds src into dst elementwise.
template <typename T>
void accumulate(Grads<T>& dst, const Grads<T>& src) {
  LRM_REQUIRE(dst.size() == src.size(), "gradient sets differ in size");
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
bool all_finite(const Grads<T>& g) {
  for (const auto& m : g)
    if (!m.allFinite()) return false;
  return true;
}

/// Glorot-uniform fill for a fan_in x fan_out weight.
template <typename T>
void glorot_uniform(Matrix<T>& w, std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace lrm::nn
