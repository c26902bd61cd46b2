#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "lrm/geom.hpp"
#include "lrm/nn/tensor.hpp"

namespace lrm::test {

inline PointCloud random_cloud(std::size_t n, Rng& rng, double extent = 10.0) {
  std::uniform_real_distribution<double> u(-extent, extent);
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) c.points.emplace_back(u(rng), u(rng), u(rng));
  return c;
}

inline double rel_error(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  if (scale < 1e-6) return std::abs(a - b) < 1e-9 ? 0.0 : std::abs(a - b) / 1e-6;
  return std::abs(a - b) / scale;
}

/// Moves every bias off zero so no pre-activation sits on a rectifier kink
/// (zero-initialized biases put zero input rows exactly on it).
template <typename T>
void nudge_biases(nn::ParamSet<T>& params, std::uint64_t seed, double scale = 0.1) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params[i].name;
    if (name.size() < 5 || name.compare(name.size() - 5, 5, "/bias") != 0) continue;
    for (Eigen::Index k = 0; k < params.value(i).size(); ++k) params.value(i).data()[k] = static_cast<T>(u(rng));
  }
}

struct GradCheck {
  double worst = 0.0;
  std::size_t checked = 0;
  std::string worst_param;
};

/// Central differences against an analytic gradient. At most `per_param`
/// randomly chosen entries of each tensor are probed (0 = all); `select`
/// restricts the check to parameters whose name it accepts.
inline GradCheck check_gradients(nn::ParamSet<double>& params, const nn::Grads<double>& analytic,
                                 const std::function<double()>& loss, std::size_t per_param = 0, double h = 1e-6,
                                 const std::function<bool(const std::string&)>& select = {}, std::uint64_t seed = 7) {
  GradCheck out;
  Rng rng(seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p].trainable || (select && !select(params[p].name))) continue;
    auto& w = params.value(p);
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(w.size()));
    for (Eigen::Index i = 0; i < w.size(); ++i) idx[static_cast<std::size_t>(i)] = i;
    if (per_param > 0 && idx.size() > per_param) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(per_param);
    }
    for (Eigen::Index i : idx) {
      const double saved = w.data()[i];
      w.data()[i] = saved + h;
      const double up = loss();
      w.data()[i] = saved - h;
      const double down = loss();
      w.data()[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double err = rel_error(analytic[p].data()[i], numeric);
      if (err > out.worst) {
        out.worst = err;
        out.worst_param = params[p].name;
      }
      ++out.checked;
    }
  }
  return out;
}

}  // namespace lrm::test
