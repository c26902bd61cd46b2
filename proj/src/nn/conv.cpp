#include "lrm/nn/conv.hpp"

#include <cmath>

namespace lrm::nn {
namespace {

struct Geometry {
  ImageShape out;
  int pad_top = 0;
  int pad_left = 0;
  // src[off * P + p]: input row feeding output row p at kernel offset off, or -1.
  std::vector<int> src;
};

Geometry make_geometry(const ImageShape& in, const ConvSpec& spec) {
  LRM_REQUIRE(in.c == spec.cin, "convolution input channels do not match the kernel");
  LRM_REQUIRE(spec.kh >= 1 && spec.kw >= 1 && spec.sh >= 1 && spec.sw >= 1, "invalid convolution spec");
  Geometry g;
  g.out = spec.output_shape(in);
  g.pad_top = std::max((g.out.h - 1) * spec.sh + spec.kh - in.h, 0) / 2;
  g.pad_left = std::max((g.out.w - 1) * spec.sw + spec.kw - in.w, 0) / 2;
  const auto P = static_cast<std::size_t>(g.out.rows());
  g.src.assign(static_cast<std::size_t>(spec.kh * spec.kw) * P, -1);
  for (int i = 0; i < spec.kh; ++i) {
    for (int j = 0; j < spec.kw; ++j) {
      int* row = g.src.data() + static_cast<std::size_t>(i * spec.kw + j) * P;
      std::size_t p = 0;
      for (int n = 0; n < g.out.n; ++n)
        for (int oy = 0; oy < g.out.h; ++oy) {
          const int iy = oy * spec.sh + i - g.pad_top;
          for (int ox = 0; ox < g.out.w; ++ox, ++p) {
            const int ix = ox * spec.sw + j - g.pad_left;
            if (iy >= 0 && iy < in.h && ix >= 0 && ix < in.w) row[p] = (n * in.h + iy) * in.w + ix;
          }
        }
    }
  }
  return g;
}

// Gathering the input per offset is cheaper when the input is narrower than the output.
bool gather_inputs(const ConvSpec& spec) { return spec.cin <= spec.cout; }

}  // namespace

ImageShape ConvSpec::output_shape(const ImageShape& in) const {
  return {in.n, (in.h + sh - 1) / sh, (in.w + sw - 1) / sw, cout};
}

template <typename T>
Matrix<T> conv2d_forward(const Matrix<T>& x, const ImageShape& in, const Matrix<T>& weight, const Matrix<T>& bias,
                         const ConvSpec& spec) {
  LRM_REQUIRE(x.rows() == in.rows() && x.cols() == in.c, "convolution input does not match its shape");
  LRM_REQUIRE(weight.rows() == spec.kh * spec.kw * spec.cin && weight.cols() == spec.cout, "convolution weight shape mismatch");
  const Geometry g = make_geometry(in, spec);
  const Eigen::Index P = g.out.rows();
  const int kk = spec.kh * spec.kw;
  Matrix<T> y(P, spec.cout);
  y.rowwise() = bias.row(0);
  if (gather_inputs(spec)) {
    Matrix<T> cols(P, spec.cin);
    for (int off = 0; off < kk; ++off) {
      const int* src = g.src.data() + static_cast<std::size_t>(off) * P;
      for (Eigen::Index p = 0; p < P; ++p) {
        if (src[p] >= 0)
          cols.row(p) = x.row(src[p]);
        else
          cols.row(p).setZero();
      }
      y.noalias() += cols * weight.middleRows(off * spec.cin, spec.cin);
    }
  } else {
    // Project every input pixel onto every offset, then sum the contributions.
    Matrix<T> wr(spec.cin, static_cast<Eigen::Index>(kk) * spec.cout);
    for (int off = 0; off < kk; ++off) wr.middleCols(off * spec.cout, spec.cout) = weight.middleRows(off * spec.cin, spec.cin);
    const Matrix<T> z = x * wr;
    for (int off = 0; off < kk; ++off) {
      const int* src = g.src.data() + static_cast<std::size_t>(off) * P;
      for (Eigen::Index p = 0; p < P; ++p)
        if (src[p] >= 0) y.row(p) += z.row(src[p]).segment(off * spec.cout, spec.cout);
    }
  }
  return y;
}

template <typename T>
void conv2d_backward(const Matrix<T>& x, const ImageShape& in, const Matrix<T>& weight, const Matrix<T>& dy,
                     const ConvSpec& spec, Matrix<T>* dx, Matrix<T>& dweight, Matrix<T>& dbias) {
  const Geometry g = make_geometry(in, spec);
  const Eigen::Index P = g.out.rows();
  LRM_REQUIRE(dy.rows() == P && dy.cols() == spec.cout, "convolution output gradient shape mismatch");
  const int kk = spec.kh * spec.kw;
  dbias += dy.colwise().sum();
  if (dx) *dx = Matrix<T>::Zero(x.rows(), x.cols());
  if (gather_inputs(spec)) {
    Matrix<T> cols(P, spec.cin);
    Matrix<T> dcols(P, spec.cin);
    for (int off = 0; off < kk; ++off) {
      const int* src = g.src.data() + static_cast<std::size_t>(off) * P;
      for (Eigen::Index p = 0; p < P; ++p) {
        if (src[p] >= 0)
          cols.row(p) = x.row(src[p]);
        else
          cols.row(p).setZero();
      }
      dweight.middleRows(off * spec.cin, spec.cin).noalias() += cols.transpose() * dy;
      if (dx) {
        dcols.noalias() = dy * weight.middleRows(off * spec.cin, spec.cin).transpose();
        for (Eigen::Index p = 0; p < P; ++p)
          if (src[p] >= 0) dx->row(src[p]) += dcols.row(p);
      }
    }
  } else {
    Matrix<T> wr(spec.cin, static_cast<Eigen::Index>(kk) * spec.cout);
    for (int off = 0; off < kk; ++off) wr.middleCols(off * spec.cout, spec.cout) = weight.middleRows(off * spec.cin, spec.cin);
    Matrix<T> dz = Matrix<T>::Zero(x.rows(), static_cast<Eigen::Index>(kk) * spec.cout);
    for (int off = 0; off < kk; ++off) {
      const int* src = g.src.data() + static_cast<std::size_t>(off) * P;
      for (Eigen::Index p = 0; p < P; ++p)
        if (src[p] >= 0) dz.row(src[p]).segment(off * spec.cout, spec.cout) += dy.row(p);
    }
    const Matrix<T> dwr = x.transpose() * dz;
    for (int off = 0; off < kk; ++off) dweight.middleRows(off * spec.cin, spec.cin) += dwr.middleCols(off * spec.cout, spec.cout);
    if (dx) dx->noalias() = dz * wr.transpose();
  }
}

template <typename T>
Matrix<T> batchnorm_forward(const Matrix<T>& x, const Matrix<T>& gamma, const Matrix<T>& beta, Matrix<T>& running_mean,
                            Matrix<T>& running_var, Mode mode, T momentum, T eps, BatchNormCache<T>* cache) {
  const Eigen::Index c = x.cols();
  LRM_REQUIRE(gamma.cols() == c && beta.cols() == c && running_mean.cols() == c && running_var.cols() == c,
              "batch norm parameter width mismatch");
  Matrix<T> mean(1, c);
  Matrix<T> var(1, c);
  if (mode == Mode::Train) {
    LRM_REQUIRE(x.rows() >= 1, "batch norm over an empty batch");
    mean = x.colwise().mean();
    var = (x.rowwise() - mean.row(0)).array().square().colwise().mean().matrix();
    running_mean = momentum * running_mean + (T(1) - momentum) * mean;
    running_var = momentum * running_var + (T(1) - momentum) * var;
  } else {
    mean = running_mean;
    var = running_var;
  }
  Matrix<T> inv_std = (var.array() + eps).rsqrt().matrix();
  Matrix<T> xhat = ((x.rowwise() - mean.row(0)).array().rowwise() * inv_std.row(0).array()).matrix();
  Matrix<T> y = ((xhat.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array()).matrix();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
void batchnorm_backward(const Matrix<T>& dy, const Matrix<T>& gamma, const BatchNormCache<T>& cache, Matrix<T>& dx,
                        Matrix<T>& dgamma, Matrix<T>& dbeta) {
  const T m = static_cast<T>(dy.rows());
  dbeta += dy.colwise().sum();
  const Matrix<T> dgamma_local = dy.cwiseProduct(cache.xhat).colwise().sum();
  dgamma += dgamma_local;
  const Matrix<T> dxhat = (dy.array().rowwise() * gamma.row(0).array()).matrix();
  const Matrix<T> sum_dxhat = dxhat.colwise().sum();
  const Matrix<T> sum_dxhat_xhat = dxhat.cwiseProduct(cache.xhat).colwise().sum();
  // dx = inv_std / m * (m * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
  dx = (((m * dxhat.array()).rowwise() - sum_dxhat.row(0).array()) -
        (cache.xhat.array().rowwise() * sum_dxhat_xhat.row(0).array()))
           .matrix();
  dx = (dx.array().rowwise() * (cache.inv_std.row(0).array() / m)).matrix();
}

template <typename T>
Matrix<T> prelu_forward(const Matrix<T>& x, const Matrix<T>& slope) {
  LRM_REQUIRE(slope.rows() == 1 && slope.cols() == x.cols(), "prelu slope width mismatch");
  Matrix<T> y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const T v = x(i, c);
      y(i, c) = v > T(0) ? v : slope(0, c) * v;
    }
  return y;
}

template <typename T>
void prelu_backward(const Matrix<T>& x, const Matrix<T>& slope, const Matrix<T>& dy, Matrix<T>& dx, Matrix<T>& dslope) {
  dx.resize(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const T v = x(i, c);
      if (v > T(0)) {
        dx(i, c) = dy(i, c);
      } else {
        dx(i, c) = slope(0, c) * dy(i, c);
        dslope(0, c) += v * dy(i, c);
      }
    }
}

template <typename T>
Matrix<T> subpixel_shuffle(const Matrix<T>& x, const ImageShape& in, int s) {
  LRM_REQUIRE(s >= 1, "shuffle factor must be >= 1");
  LRM_REQUIRE(in.c % s == 0, "channel count not divisible by the shuffle factor");
  LRM_REQUIRE(x.rows() == in.rows() && x.cols() == in.c, "shuffle input does not match its shape");
  const int c = in.c / s;
  Matrix<T> y(x.rows() * s, c);
  for (int n = 0; n < in.n; ++n)
    for (int yy = 0; yy < in.h; ++yy)
      for (int xx = 0; xx < in.w; ++xx) {
        const Eigen::Index src = (static_cast<Eigen::Index>(n) * in.h + yy) * in.w + xx;
        for (int i = 0; i < s; ++i) {
          const Eigen::Index dst = (static_cast<Eigen::Index>(n) * in.h * s + yy * s + i) * in.w + xx;
          y.row(dst) = x.row(src).segment(i * c, c);
        }
      }
  return y;
}

template <typename T>
Matrix<T> subpixel_unshuffle(const Matrix<T>& y, const ImageShape& out, int s) {
  LRM_REQUIRE(s >= 1 && out.h % s == 0, "unshuffle height not divisible by the factor");
  LRM_REQUIRE(y.rows() == out.rows() && y.cols() == out.c, "unshuffle input does not match its shape");
  const int h = out.h / s;
  Matrix<T> x(y.rows() / s, static_cast<Eigen::Index>(out.c) * s);
  for (int n = 0; n < out.n; ++n)
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < out.w; ++xx) {
        const Eigen::Index dst = (static_cast<Eigen::Index>(n) * h + yy) * out.w + xx;
        for (int i = 0; i < s; ++i) {
          const Eigen::Index src = (static_cast<Eigen::Index>(n) * out.h + yy * s + i) * out.w + xx;
          x.row(dst).segment(i * out.c, out.c) = y.row(src);
        }
      }
  return x;
}

#define LRM_INSTANTIATE_CONV(T)                                                                                          \
  template Matrix<T> conv2d_forward<T>(const Matrix<T>&, const ImageShape&, const Matrix<T>&, const Matrix<T>&,          \
                                       const ConvSpec&);                                                                 \
  template void conv2d_backward<T>(const Matrix<T>&, const ImageShape&, const Matrix<T>&, const Matrix<T>&,              \
                                   const ConvSpec&, Matrix<T>*, Matrix<T>&, Matrix<T>&);                                 \
  template Matrix<T> batchnorm_forward<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, Matrix<T>&, Matrix<T>&,  \
                                          Mode, T, T, BatchNormCache<T>*);                                               \
  template void batchnorm_backward<T>(const Matrix<T>&, const Matrix<T>&, const BatchNormCache<T>&, Matrix<T>&,          \
                                      Matrix<T>&, Matrix<T>&);                                                           \
  template Matrix<T> prelu_forward<T>(const Matrix<T>&, const Matrix<T>&);                                               \
  template void prelu_backward<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, Matrix<T>&, Matrix<T>&);         \
  template Matrix<T> subpixel_shuffle<T>(const Matrix<T>&, const ImageShape&, int);                                      \
  template Matrix<T> subpixel_unshuffle<T>(const Matrix<T>&, const ImageShape&, int);

LRM_INSTANTIATE_CONV(float)
LRM_INSTANTIATE_CONV(double)

}  // namespace lrm::nn
