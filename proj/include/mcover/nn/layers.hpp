#ifndef MCOVER_NN_LAYERS_HPP
#define MCOVER_NN_LAYERS_HPP

// Forward/backward kernels for the encoder's layer types. Every backward
// function accumulates (+=) into parameter gradients and overwrites input
// gradients. Activations are channels-last: [batch, time, freq, channels].

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <vector>

#include "mcover/error.hpp"
#include "mcover/nn/random.hpp"
#include "mcover/nn/tensor.hpp"

namespace mcover::nn {

enum class Mode { kTrain, kEval };

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

inline void require_rank4(const Shape& s, const char* what) {
  require(s.size() == 4, ErrorKind::kShape, std::string(what) + ": expected a rank-4 tensor, got " + shape_string(s));
}

// ---------------------------------------------------------------------------
// 3x3 convolution, stride 1, zero "same" padding (cross-correlation).

namespace detail {

// One sample [H, W, C] -> patch matrix [H*W, 9*C]; patch column order is (dt, df, c).
template <typename T>
void im2col3x3(const T* x, std::size_t h, std::size_t w, std::size_t c, T* cols) {
  const std::size_t patch = 9 * c;
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      T* row = cols + (i * w + j) * patch;
      for (int di = -1; di <= 1; ++di) {
        for (int dj = -1; dj <= 1; ++dj) {
          T* dst = row + static_cast<std::size_t>((di + 1) * 3 + (dj + 1)) * c;
          const auto si = static_cast<std::ptrdiff_t>(i) + di;
          const auto sj = static_cast<std::ptrdiff_t>(j) + dj;
          if (si < 0 || sj < 0 || si >= static_cast<std::ptrdiff_t>(h) || sj >= static_cast<std::ptrdiff_t>(w)) {
            std::fill(dst, dst + c, T{});
          } else {
            const T* src = x + (static_cast<std::size_t>(si) * w + static_cast<std::size_t>(sj)) * c;
            std::copy(src, src + c, dst);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im3x3(const T* cols, std::size_t h, std::size_t w, std::size_t c, T* dx) {
  const std::size_t patch = 9 * c;
  std::fill(dx, dx + h * w * c, T{});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const T* row = cols + (i * w + j) * patch;
      for (int di = -1; di <= 1; ++di) {
        const auto si = static_cast<std::ptrdiff_t>(i) + di;
        if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
        for (int dj = -1; dj <= 1; ++dj) {
          const auto sj = static_cast<std::ptrdiff_t>(j) + dj;
          if (sj < 0 || sj >= static_cast<std::ptrdiff_t>(w)) continue;
          const T* src = row + static_cast<std::size_t>((di + 1) * 3 + (dj + 1)) * c;
          T* dst = dx + (static_cast<std::size_t>(si) * w + static_cast<std::size_t>(sj)) * c;
          for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
void check_conv_shapes(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
  require_rank4(x.shape(), "conv2d input");
  require(kernel.rank() == 4 && kernel.dim(0) == 3 && kernel.dim(1) == 3, ErrorKind::kShape,
          "conv2d kernel must be [3, 3, Cin, Cout], got " + shape_string(kernel.shape()));
  require(kernel.dim(2) == x.dim(3), ErrorKind::kShape,
          "conv2d channel mismatch: input has " + std::to_string(x.dim(3)) + " channels, kernel expects " +
              std::to_string(kernel.dim(2)));
  require_shape(bias.shape(), {kernel.dim(3)}, "conv2d bias");
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias) {
  check_conv_shapes(x, kernel, bias);
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3), cout = kernel.dim(3);
  const auto pixels = static_cast<Eigen::Index>(h * w);
  const auto patch = static_cast<Eigen::Index>(9 * cin);
  Tensor<T> y({n, h, w, cout});
  AlignedVector<T> cols(static_cast<std::size_t>(pixels * patch));
  ConstMatMap<T> kmat(kernel.data(), patch, static_cast<Eigen::Index>(cout));
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bvec(bias.data(), static_cast<Eigen::Index>(cout));
  for (std::size_t s = 0; s < n; ++s) {
    detail::im2col3x3(x.data() + s * h * w * cin, h, w, cin, cols.data());
    MatMap<T> out(y.data() + s * h * w * cout, pixels, static_cast<Eigen::Index>(cout));
    out.noalias() = ConstMatMap<T>(cols.data(), pixels, patch) * kmat;
    out.rowwise() += bvec;
  }
  return y;
}

// dx may be null when the input gradient is not needed.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& dy, Tensor<T>* dx,
                     Tensor<T>& dkernel, Tensor<T>& dbias) {
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3), cout = kernel.dim(3);
  require_shape(dy.shape(), {n, h, w, cout}, "conv2d output gradient");
  require_shape(dkernel.shape(), kernel.shape(), "conv2d kernel gradient");
  require_shape(dbias.shape(), {cout}, "conv2d bias gradient");
  const auto pixels = static_cast<Eigen::Index>(h * w);
  const auto patch = static_cast<Eigen::Index>(9 * cin);
  const auto co = static_cast<Eigen::Index>(cout);
  AlignedVector<T> cols(static_cast<std::size_t>(pixels * patch));
  MatMap<T> dk(dkernel.data(), patch, co);
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(dbias.data(), co);
  ConstMatMap<T> kmat(kernel.data(), patch, co);
  if (dx) *dx = Tensor<T>(x.shape());
  for (std::size_t s = 0; s < n; ++s) {
    ConstMatMap<T> g(dy.data() + s * h * w * cout, pixels, co);
    detail::im2col3x3(x.data() + s * h * w * cin, h, w, cin, cols.data());
    MatMap<T> cm(cols.data(), pixels, patch);
    dk.noalias() += cm.transpose() * g;
    db += g.colwise().sum();
    if (dx) {
      cm.noalias() = g * kmat.transpose();
      detail::col2im3x3(cols.data(), h, w, cin, dx->data() + s * h * w * cin);
    }
  }
}

// ---------------------------------------------------------------------------
// Batch normalisation over every axis but the last (channel) axis.

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

template <typename T>
struct BatchNormCache {
  Tensor<T> normalized;        // x_hat
  std::vector<double> inv_std;  // per channel
  std::vector<double> mean;     // batch statistics, for the running-average update
  std::vector<double> var;
};

template <typename T>
Tensor<T> batchnorm_forward_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                                  BatchNormCache<T>& cache) {
  require(x.rank() >= 2, ErrorKind::kShape, "batchnorm input needs a batch axis and a channel axis");
  require(x.dim(0) >= 2, ErrorKind::kInvalidInput, "batchnorm in train mode needs a batch of at least 2");
  const std::size_t c = x.shape().back();
  require_shape(gamma.shape(), {c}, "batchnorm gamma");
  require_shape(beta.shape(), {c}, "batchnorm beta");
  const std::size_t rows = x.size() / c;

  std::vector<double> sum(c, 0.0), sq(c, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = x.data() + r * c;
    for (std::size_t k = 0; k < c; ++k) sum[k] += p[k];
  }
  cache.mean.assign(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) cache.mean[k] = sum[k] / static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = x.data() + r * c;
    for (std::size_t k = 0; k < c; ++k) {
      const double d = p[k] - cache.mean[k];
      sq[k] += d * d;
    }
  }
  cache.var.assign(c, 0.0);
  cache.inv_std.assign(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    cache.var[k] = sq[k] / static_cast<double>(rows);
    cache.inv_std[k] = 1.0 / std::sqrt(cache.var[k] + kBatchNormEps);
  }
  cache.normalized = Tensor<T>(x.shape());
  Tensor<T> y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = x.data() + r * c;
    T* xh = cache.normalized.data() + r * c;
    T* out = y.data() + r * c;
    for (std::size_t k = 0; k < c; ++k) {
      xh[k] = static_cast<T>((p[k] - cache.mean[k]) * cache.inv_std[k]);
      out[k] = gamma[k] * xh[k] + beta[k];
    }
  }
  return y;
}

template <typename T>
Tensor<T> batchnorm_forward_eval(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                                 const Tensor<T>& running_mean, const Tensor<T>& running_var) {
  require(x.rank() >= 1, ErrorKind::kShape, "batchnorm input needs a channel axis");
  const std::size_t c = x.shape().back();
  require_shape(gamma.shape(), {c}, "batchnorm gamma");
  require_shape(beta.shape(), {c}, "batchnorm beta");
  require_shape(running_mean.shape(), {c}, "batchnorm running mean");
  require_shape(running_var.shape(), {c}, "batchnorm running variance");
  std::vector<double> scale(c), shift(c);
  for (std::size_t k = 0; k < c; ++k) {
    scale[k] = gamma[k] / std::sqrt(static_cast<double>(running_var[k]) + kBatchNormEps);
    shift[k] = beta[k] - scale[k] * running_mean[k];
  }
  Tensor<T> y(x.shape());
  const std::size_t rows = x.size() / c;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = x.data() + r * c;
    T* out = y.data() + r * c;
    for (std::size_t k = 0; k < c; ++k) out[k] = static_cast<T>(scale[k] * p[k] + shift[k]);
  }
  return y;
}

template <typename T>
void batchnorm_update_running(const BatchNormCache<T>& cache, Tensor<T>& running_mean, Tensor<T>& running_var,
                              double momentum = kBatchNormMomentum) {
  for (std::size_t k = 0; k < cache.mean.size(); ++k) {
    running_mean[k] = static_cast<T>(momentum * running_mean[k] + (1.0 - momentum) * cache.mean[k]);
    running_var[k] = static_cast<T>(momentum * running_var[k] + (1.0 - momentum) * cache.var[k]);
  }
}

template <typename T>
Tensor<T> batchnorm_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma, const Tensor<T>& dy,
                             Tensor<T>& dgamma, Tensor<T>& dbeta) {
  require_shape(dy.shape(), cache.normalized.shape(), "batchnorm output gradient");
  const std::size_t c = gamma.size();
  const std::size_t rows = dy.size() / c;
  std::vector<double> sum_dy(c, 0.0), sum_dy_xh(c, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* g = dy.data() + r * c;
    const T* xh = cache.normalized.data() + r * c;
    for (std::size_t k = 0; k < c; ++k) {
      sum_dy[k] += g[k];
      sum_dy_xh[k] += static_cast<double>(g[k]) * xh[k];
    }
  }
  for (std::size_t k = 0; k < c; ++k) {
    dgamma[k] += static_cast<T>(sum_dy_xh[k]);
    dbeta[k] += static_cast<T>(sum_dy[k]);
  }
  Tensor<T> dx(dy.shape());
  const auto m = static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* g = dy.data() + r * c;
    const T* xh = cache.normalized.data() + r * c;
    T* out = dx.data() + r * c;
    for (std::size_t k = 0; k < c; ++k) {
      const double coef = gamma[k] * cache.inv_std[k] / m;
      out[k] = static_cast<T>(coef * (m * g[k] - sum_dy[k] - xh[k] * sum_dy_xh[k]));
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Non-overlapping mean pooling; trailing rows/columns that do not fill a
// window are dropped.

inline constexpr std::size_t kPoolTime = 3;
inline constexpr std::size_t kPoolFreq = 2;

template <typename T>
Tensor<T> meanpool_forward(const Tensor<T>& x, std::size_t pt = kPoolTime, std::size_t pf = kPoolFreq) {
  require_rank4(x.shape(), "meanpool input");
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  require(h >= pt && w >= pf, ErrorKind::kShape,
          "meanpool input " + shape_string(x.shape()) + " smaller than the pooling window");
  const std::size_t oh = h / pt, ow = w / pf;
  const double inv = 1.0 / static_cast<double>(pt * pf);
  Tensor<T> y({n, oh, ow, c});
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        T* out = y.data() + ((s * oh + i) * ow + j) * c;
        for (std::size_t di = 0; di < pt; ++di) {
          for (std::size_t dj = 0; dj < pf; ++dj) {
            const T* p = x.data() + ((s * h + i * pt + di) * w + j * pf + dj) * c;
            for (std::size_t k = 0; k < c; ++k) out[k] += p[k];
          }
        }
        for (std::size_t k = 0; k < c; ++k) out[k] = static_cast<T>(out[k] * inv);
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> meanpool_backward(const Tensor<T>& dy, const Shape& input_shape, std::size_t pt = kPoolTime,
                            std::size_t pf = kPoolFreq) {
  require_rank4(input_shape, "meanpool input");
  const std::size_t n = input_shape[0], h = input_shape[1], w = input_shape[2], c = input_shape[3];
  const std::size_t oh = h / pt, ow = w / pf;
  require_shape(dy.shape(), {n, oh, ow, c}, "meanpool output gradient");
  const auto inv = static_cast<T>(1.0 / static_cast<double>(pt * pf));
  Tensor<T> dx(input_shape);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const T* g = dy.data() + ((s * oh + i) * ow + j) * c;
        for (std::size_t di = 0; di < pt; ++di) {
          for (std::size_t dj = 0; dj < pf; ++dj) {
            T* out = dx.data() + ((s * h + i * pt + di) * w + j * pf + dj) * c;
            for (std::size_t k = 0; k < c; ++k) out[k] = g[k] * inv;
          }
        }
      }
    }
  }
  return dx;
}

// Mean over the two spatial axes: [N, H, W, C] -> [N, C].
template <typename T>
Tensor<T> global_meanpool_forward(const Tensor<T>& x) {
  require_rank4(x.shape(), "global mean pool input");
  const std::size_t n = x.dim(0), hw = x.dim(1) * x.dim(2), c = x.dim(3);
  Tensor<T> y({n, c});
  std::vector<double> acc(c);
  for (std::size_t s = 0; s < n; ++s) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < hw; ++p) {
      const T* v = x.data() + (s * hw + p) * c;
      for (std::size_t k = 0; k < c; ++k) acc[k] += v[k];
    }
    for (std::size_t k = 0; k < c; ++k) y[s * c + k] = static_cast<T>(acc[k] / static_cast<double>(hw));
  }
  return y;
}

template <typename T>
Tensor<T> global_meanpool_backward(const Tensor<T>& dy, const Shape& input_shape) {
  require_rank4(input_shape, "global mean pool input");
  const std::size_t n = input_shape[0], hw = input_shape[1] * input_shape[2], c = input_shape[3];
  require_shape(dy.shape(), {n, c}, "global mean pool output gradient");
  const auto inv = static_cast<T>(1.0 / static_cast<double>(hw));
  Tensor<T> dx(input_shape);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t p = 0; p < hw; ++p) {
      T* out = dx.data() + (s * hw + p) * c;
      for (std::size_t k = 0; k < c; ++k) out[k] = dy[s * c + k] * inv;
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Dense layer: [N, D] x [D, E] + [E].

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(x.rank() == 2 && weight.rank() == 2 && x.dim(1) == weight.dim(0), ErrorKind::kShape,
          "dense: input " + shape_string(x.shape()) + " incompatible with weight " + shape_string(weight.shape()));
  require_shape(bias.shape(), {weight.dim(1)}, "dense bias");
  const auto n = static_cast<Eigen::Index>(x.dim(0));
  const auto d = static_cast<Eigen::Index>(x.dim(1));
  const auto e = static_cast<Eigen::Index>(weight.dim(1));
  Tensor<T> y({x.dim(0), weight.dim(1)});
  MatMap<T> out(y.data(), n, e);
  ConstMatMap<T> xm(x.data(), n, d);
  ConstMatMap<T> wm(weight.data(), d, e);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bvec(bias.data(), e);
  // Row by row so each output row is bitwise independent of the batch it sits in.
  for (Eigen::Index r = 0; r < n; ++r) out.row(r).noalias() = xm.row(r) * wm + bvec;
  return y;
}

template <typename T>
Tensor<T> dense_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy, Tensor<T>& dweight,
                         Tensor<T>& dbias) {
  const auto n = static_cast<Eigen::Index>(x.dim(0));
  const auto d = static_cast<Eigen::Index>(x.dim(1));
  const auto e = static_cast<Eigen::Index>(weight.dim(1));
  require_shape(dy.shape(), {x.dim(0), weight.dim(1)}, "dense output gradient");
  ConstMatMap<T> g(dy.data(), n, e);
  ConstMatMap<T> xm(x.data(), n, d);
  MatMap<T>(dweight.data(), d, e).noalias() += xm.transpose() * g;
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(dbias.data(), e) += g.colwise().sum();
  Tensor<T> dx(x.shape());
  MatMap<T>(dx.data(), n, d).noalias() = g * ConstMatMap<T>(weight.data(), d, e).transpose();
  return dx;
}

// ---------------------------------------------------------------------------
// Element-wise activations.

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{} ? x[i] : T{};
  return y;
}

// Uses the forward output as the mask.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  require_shape(dy.shape(), y.shape(), "relu output gradient");
  Tensor<T> dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] > T{} ? dy[i] : T{};
  return dx;
}

// Inverted dropout. The returned mask holds 0 or 1/(1-rate) per unit and is
// empty in eval mode (identity).
template <typename T>
Tensor<T> dropout_forward(const Tensor<T>& x, double rate, Mode mode, Rng& rng, Tensor<T>& mask) {
  require(rate >= 0.0 && rate < 1.0, ErrorKind::kConfig, "dropout rate must lie in [0, 1)");
  if (mode == Mode::kEval || rate == 0.0) {
    mask = Tensor<T>();
    return x;
  }
  const auto keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  mask = Tensor<T>(x.shape());
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = rng.uniform() < rate ? T{} : keep_scale;
    y[i] = x[i] * mask[i];
  }
  return y;
}

template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& mask, const Tensor<T>& dy) {
  if (mask.size() == 0) return dy;
  require_shape(dy.shape(), mask.shape(), "dropout output gradient");
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask[i];
  return dx;
}

// ---------------------------------------------------------------------------
// Row-wise L2 normalisation of [N, E]; norms are returned for the backward pass.

inline constexpr double kMinNormalizeNorm = 1e-12;

template <typename T>
Tensor<T> l2_normalize_forward(const Tensor<T>& x, std::vector<double>& norms) {
  require(x.rank() == 2, ErrorKind::kShape, "l2_normalize expects [N, E]");
  const std::size_t n = x.dim(0), e = x.dim(1);
  norms.assign(n, 0.0);
  Tensor<T> y(x.shape());
  for (std::size_t s = 0; s < n; ++s) {
    double sq = 0.0;
    for (std::size_t k = 0; k < e; ++k) sq += static_cast<double>(x[s * e + k]) * x[s * e + k];
    const double norm = std::sqrt(sq);
    require(norm > kMinNormalizeNorm, ErrorKind::kNumeric, "cannot L2-normalise a zero or non-finite vector");
    norms[s] = norm;
    for (std::size_t k = 0; k < e; ++k) y[s * e + k] = static_cast<T>(x[s * e + k] / norm);
  }
  return y;
}

template <typename T>
Tensor<T> l2_normalize_backward(const Tensor<T>& y, const std::vector<double>& norms, const Tensor<T>& dy) {
  require_shape(dy.shape(), y.shape(), "l2_normalize output gradient");
  const std::size_t n = y.dim(0), e = y.dim(1);
  Tensor<T> dx(y.shape());
  for (std::size_t s = 0; s < n; ++s) {
    double dot = 0.0;
    for (std::size_t k = 0; k < e; ++k) dot += static_cast<double>(y[s * e + k]) * dy[s * e + k];
    for (std::size_t k = 0; k < e; ++k) {
      dx[s * e + k] = static_cast<T>((dy[s * e + k] - y[s * e + k] * dot) / norms[s]);
    }
  }
  return dx;
}

// Single-vector convenience form.
template <typename T>
std::vector<T> l2_normalize(std::span<const T> v) {
  double sq = 0.0;
  for (T x : v) sq += static_cast<double>(x) * x;
  const double norm = std::sqrt(sq);
  require(norm > kMinNormalizeNorm, ErrorKind::kNumeric, "cannot L2-normalise a zero or non-finite vector");
  std::vector<T> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<T>(v[i] / norm);
  return out;
}

}  // namespace mcover::nn

#endif  // MCOVER_NN_LAYERS_HPP
