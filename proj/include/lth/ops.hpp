#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "lth/tensor.hpp"

// Forward and backward kernels for the primitives backing the model zoo:
// matmul, 2-D convolution, bias add, relu, average/max pooling, flatten,
// softmax, cross-entropy. Each kernel is a free function templated on the
// scalar so the whole stack also runs in 64-bit mode for gradient
// verification. Eigen does the matrix work.

namespace lth {

template <typename S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using VecMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>;
template <typename S>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;

template <typename S>
ConstMatMap<S> as_matrix(const Tensor<S>& t, std::int64_t rows, std::int64_t cols) {
  if (rows * cols != t.numel()) throw std::invalid_argument("matrix view size mismatch");
  return ConstMatMap<S>(t.ptr(), rows, cols);
}

template <typename S>
MatMap<S> as_matrix(Tensor<S>& t, std::int64_t rows, std::int64_t cols) {
  if (rows * cols != t.numel()) throw std::invalid_argument("matrix view size mismatch");
  return MatMap<S>(t.ptr(), rows, cols);
}

// ---- matmul ----------------------------------------------------------------

template <typename S>
Tensor<S> matmul_fw(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape) + " x " +
                                shape_str(b.shape));
  Tensor<S> out({a.dim(0), b.dim(1)});
  as_matrix(out, a.dim(0), b.dim(1)).noalias() =
      as_matrix(a, a.dim(0), a.dim(1)) * as_matrix(b, b.dim(0), b.dim(1));
  return out;
}

template <typename S>
void matmul_bw(const Tensor<S>& a, const Tensor<S>& b, const Tensor<S>& dout, Tensor<S>& da,
               Tensor<S>& db) {
  auto A = as_matrix(a, a.dim(0), a.dim(1));
  auto B = as_matrix(b, b.dim(0), b.dim(1));
  auto D = as_matrix(dout, a.dim(0), b.dim(1));
  as_matrix(da, a.dim(0), a.dim(1)).noalias() += D * B.transpose();
  as_matrix(db, b.dim(0), b.dim(1)).noalias() += A.transpose() * D;
}

// ---- bias add --------------------------------------------------------------

// x: [batch, features] + b: [features]
template <typename S>
Tensor<S> add_bias_fw(const Tensor<S>& x, const Tensor<S>& b) {
  if (x.rank() != 2 || b.numel() != x.dim(1))
    throw std::invalid_argument("add_bias: bias length must match feature count");
  Tensor<S> out = x;
  auto M = as_matrix(out, x.dim(0), x.dim(1));
  M.rowwise() += ConstVecMap<S>(b.ptr(), b.numel()).transpose();
  return out;
}

template <typename S>
void add_bias_bw(const Tensor<S>& dout, Tensor<S>& dx, Tensor<S>& db) {
  VecMap<S>(dx.ptr(), dx.numel()) += ConstVecMap<S>(dout.ptr(), dout.numel());
  auto D = as_matrix(dout, dout.dim(0), dout.dim(1));
  VecMap<S>(db.ptr(), db.numel()) += D.colwise().sum().transpose();
}

// x: [n, channels, h, w] + b: [channels]
template <typename S>
Tensor<S> add_channel_bias_fw(const Tensor<S>& x, const Tensor<S>& b) {
  if (x.rank() != 4 || b.numel() != x.dim(1))
    throw std::invalid_argument("add_channel_bias: bias length must match channel count");
  Tensor<S> out = x;
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < c; ++j) {
      S* p = out.ptr() + (i * c + j) * hw;
      const S bj = b[j];
      for (std::int64_t k = 0; k < hw; ++k) p[k] += bj;
    }
  return out;
}

template <typename S>
void add_channel_bias_bw(const Tensor<S>& dout, Tensor<S>& dx, Tensor<S>& db) {
  VecMap<S>(dx.ptr(), dx.numel()) += ConstVecMap<S>(dout.ptr(), dout.numel());
  const std::int64_t n = dout.dim(0), c = dout.dim(1), hw = dout.dim(2) * dout.dim(3);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < c; ++j) {
      const S* p = dout.ptr() + (i * c + j) * hw;
      S acc = 0;
      for (std::int64_t k = 0; k < hw; ++k) acc += p[k];
      db[j] += acc;
    }
}

// ---- relu ------------------------------------------------------------------

template <typename S>
Tensor<S> relu_fw(const Tensor<S>& x) {
  Tensor<S> out = x;
  for (auto& v : out.data) v = v > S(0) ? v : S(0);
  return out;
}

// Subgradient 0 at the kink.
template <typename S>
void relu_bw(const Tensor<S>& x, const Tensor<S>& dout, Tensor<S>& dx) {
  for (std::int64_t i = 0; i < x.numel(); ++i)
    if (x[i] > S(0)) dx[i] += dout[i];
}

// ---- 2-D convolution (stride 1, square kernel, symmetric zero pad) ---------

template <typename S>
void im2col(const Tensor<S>& x, std::int64_t k, std::int64_t pad,
            Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& cols) {
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;
  cols.setZero(c * k * k, n * ho * wo);
  for (std::int64_t img = 0; img < n; ++img)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t ki = 0; ki < k; ++ki)
        for (std::int64_t kj = 0; kj < k; ++kj) {
          const std::int64_t row = (ch * k + ki) * k + kj;
          for (std::int64_t oi = 0; oi < ho; ++oi) {
            const std::int64_t ii = oi + ki - pad;
            if (ii < 0 || ii >= h) continue;
            const S* src = x.ptr() + ((img * c + ch) * h + ii) * w;
            S* dst = cols.data() + row * (n * ho * wo) + (img * ho + oi) * wo;
            for (std::int64_t oj = 0; oj < wo; ++oj) {
              const std::int64_t jj = oj + kj - pad;
              if (jj >= 0 && jj < w) dst[oj] = src[jj];
            }
          }
        }
}

template <typename S>
void col2im_accum(const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& cols,
                  std::int64_t k, std::int64_t pad, Tensor<S>& dx) {
  const std::int64_t n = dx.dim(0), c = dx.dim(1), h = dx.dim(2), w = dx.dim(3);
  const std::int64_t ho = h + 2 * pad - k + 1, wo = w + 2 * pad - k + 1;
  for (std::int64_t img = 0; img < n; ++img)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t ki = 0; ki < k; ++ki)
        for (std::int64_t kj = 0; kj < k; ++kj) {
          const std::int64_t row = (ch * k + ki) * k + kj;
          for (std::int64_t oi = 0; oi < ho; ++oi) {
            const std::int64_t ii = oi + ki - pad;
            if (ii < 0 || ii >= h) continue;
            S* dst = dx.ptr() + ((img * c + ch) * h + ii) * w;
            const S* src = cols.data() + row * (n * ho * wo) + (img * ho + oi) * wo;
            for (std::int64_t oj = 0; oj < wo; ++oj) {
              const std::int64_t jj = oj + kj - pad;
              if (jj >= 0 && jj < w) dst[jj] += src[oj];
            }
          }
        }
}

// x: [n, cin, h, w], kernel: [cout, cin, k, k] -> [n, cout, ho, wo]
template <typename S>
Tensor<S> conv2d_fw(const Tensor<S>& x, const Tensor<S>& kernel, std::int64_t pad) {
  if (x.rank() != 4 || kernel.rank() != 4 || x.dim(1) != kernel.dim(1) ||
      kernel.dim(2) != kernel.dim(3))
    throw std::invalid_argument("conv2d: incompatible shapes " + shape_str(x.shape) + " * " +
                                shape_str(kernel.shape));
  const std::int64_t n = x.dim(0), cout = kernel.dim(0), k = kernel.dim(2);
  const std::int64_t ho = x.dim(2) + 2 * pad - k + 1, wo = x.dim(3) + 2 * pad - k + 1;
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: kernel larger than padded input");

  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cols;
  im2col(x, k, pad, cols);
  auto K = as_matrix(kernel, cout, kernel.numel() / cout);

  Tensor<S> out({n, cout, ho, wo});
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> prod = K * cols;
  // prod rows: cout, cols: n*ho*wo indexed as (img, oi, oj); out wants [n][cout][oi][oj].
  for (std::int64_t co = 0; co < cout; ++co)
    for (std::int64_t img = 0; img < n; ++img) {
      const S* src = prod.data() + co * (n * ho * wo) + img * ho * wo;
      S* dst = out.ptr() + (img * cout + co) * ho * wo;
      std::copy(src, src + ho * wo, dst);
    }
  return out;
}

template <typename S>
void conv2d_bw(const Tensor<S>& x, const Tensor<S>& kernel, std::int64_t pad,
               const Tensor<S>& dout, Tensor<S>& dx, Tensor<S>& dkernel) {
  const std::int64_t n = x.dim(0), cout = kernel.dim(0), k = kernel.dim(2);
  const std::int64_t ho = dout.dim(2), wo = dout.dim(3);

  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dprod(cout, n * ho * wo);
  for (std::int64_t co = 0; co < cout; ++co)
    for (std::int64_t img = 0; img < n; ++img) {
      const S* src = dout.ptr() + (img * cout + co) * ho * wo;
      S* dst = dprod.data() + co * (n * ho * wo) + img * ho * wo;
      std::copy(src, src + ho * wo, dst);
    }

  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cols;
  im2col(x, k, pad, cols);
  as_matrix(dkernel, cout, kernel.numel() / cout).noalias() += dprod * cols.transpose();

  auto K = as_matrix(kernel, cout, kernel.numel() / cout);
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> dcols =
      K.transpose() * dprod;
  col2im_accum(dcols, k, pad, dx);
}

// ---- pooling (2x2, stride 2, floor on odd extents) --------------------------

template <typename S>
Tensor<S> max_pool2_fw(const Tensor<S>& x, std::vector<std::int32_t>* argmax) {
  if (x.rank() != 4) throw std::invalid_argument("max_pool2: expected [n,c,h,w]");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t ho = h / 2, wo = w / 2;
  if (ho == 0 || wo == 0) throw std::invalid_argument("max_pool2: spatial extent too small");
  Tensor<S> out({n, c, ho, wo});
  if (argmax) argmax->assign(std::size_t(out.numel()), 0);
  for (std::int64_t img = 0; img < n * c; ++img)
    for (std::int64_t oi = 0; oi < ho; ++oi)
      for (std::int64_t oj = 0; oj < wo; ++oj) {
        const S* base = x.ptr() + img * h * w;
        std::int64_t best = (2 * oi) * w + 2 * oj;
        for (std::int64_t di = 0; di < 2; ++di)
          for (std::int64_t dj = 0; dj < 2; ++dj) {
            const std::int64_t idx = (2 * oi + di) * w + (2 * oj + dj);
            if (base[idx] > base[best]) best = idx;
          }
        const std::int64_t o = (img * ho + oi) * wo + oj;
        out[o] = base[best];
        if (argmax) (*argmax)[std::size_t(o)] = std::int32_t(best);
      }
  return out;
}

template <typename S>
void max_pool2_bw(const Tensor<S>& x, const std::vector<std::int32_t>& argmax,
                  const Tensor<S>& dout, Tensor<S>& dx) {
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t ho = h / 2, wo = w / 2;
  for (std::int64_t img = 0; img < n * c; ++img)
    for (std::int64_t o = img * ho * wo; o < (img + 1) * ho * wo; ++o)
      dx[img * h * w + argmax[std::size_t(o)]] += dout[o];
}

template <typename S>
Tensor<S> avg_pool2_fw(const Tensor<S>& x) {
  if (x.rank() != 4) throw std::invalid_argument("avg_pool2: expected [n,c,h,w]");
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t ho = h / 2, wo = w / 2;
  if (ho == 0 || wo == 0) throw std::invalid_argument("avg_pool2: spatial extent too small");
  Tensor<S> out({n, c, ho, wo});
  for (std::int64_t img = 0; img < n * c; ++img)
    for (std::int64_t oi = 0; oi < ho; ++oi)
      for (std::int64_t oj = 0; oj < wo; ++oj) {
        const S* base = x.ptr() + img * h * w;
        S acc = base[(2 * oi) * w + 2 * oj] + base[(2 * oi) * w + 2 * oj + 1] +
                base[(2 * oi + 1) * w + 2 * oj] + base[(2 * oi + 1) * w + 2 * oj + 1];
        out[(img * ho + oi) * wo + oj] = acc / S(4);
      }
  return out;
}

template <typename S>
void avg_pool2_bw(const Tensor<S>& x, const Tensor<S>& dout, Tensor<S>& dx) {
  const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t ho = h / 2, wo = w / 2;
  for (std::int64_t img = 0; img < n * c; ++img)
    for (std::int64_t oi = 0; oi < ho; ++oi)
      for (std::int64_t oj = 0; oj < wo; ++oj) {
        const S g = dout[(img * ho + oi) * wo + oj] / S(4);
        S* base = dx.ptr() + img * h * w;
        base[(2 * oi) * w + 2 * oj] += g;
        base[(2 * oi) * w + 2 * oj + 1] += g;
        base[(2 * oi + 1) * w + 2 * oj] += g;
        base[(2 * oi + 1) * w + 2 * oj + 1] += g;
      }
}

// ---- flatten ----------------------------------------------------------------

template <typename S>
Tensor<S> flatten_fw(const Tensor<S>& x) {
  if (x.rank() < 1) throw std::invalid_argument("flatten: scalar input");
  return Tensor<S>({x.dim(0), x.numel() / x.dim(0)}, x.data);
}

// ---- softmax ----------------------------------------------------------------

// Row-wise softmax with max subtraction. K >= 2, finite entries required.
template <typename S>
Tensor<S> softmax_fw(const Tensor<S>& logits) {
  if (logits.rank() != 2 || logits.dim(1) < 2)
    throw std::invalid_argument("softmax: expected [batch, K] with K >= 2");
  for (auto v : logits.data)
    if (!std::isfinite(double(v))) throw std::domain_error("softmax: non-finite input");
  const std::int64_t b = logits.dim(0), k = logits.dim(1);
  Tensor<S> out({b, k});
  for (std::int64_t i = 0; i < b; ++i) {
    const S* row = logits.ptr() + i * k;
    S* o = out.ptr() + i * k;
    S mx = row[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    S sum = 0;
    for (std::int64_t j = 0; j < k; ++j) {
      o[j] = std::exp(row[j] - mx);
      sum += o[j];
    }
    for (std::int64_t j = 0; j < k; ++j) o[j] /= sum;
  }
  return out;
}

// d logits = p * (dout - sum_j dout_j p_j), row-wise.
template <typename S>
void softmax_bw(const Tensor<S>& probs, const Tensor<S>& dout, Tensor<S>& dlogits) {
  const std::int64_t b = probs.dim(0), k = probs.dim(1);
  for (std::int64_t i = 0; i < b; ++i) {
    const S* p = probs.ptr() + i * k;
    const S* g = dout.ptr() + i * k;
    S* d = dlogits.ptr() + i * k;
    S dot = 0;
    for (std::int64_t j = 0; j < k; ++j) dot += g[j] * p[j];
    for (std::int64_t j = 0; j < k; ++j) d[j] += p[j] * (g[j] - dot);
  }
}

// ---- cross-entropy ----------------------------------------------------------

// Probability floor inside the log; keeps confidently-wrong predictions finite.
inline constexpr double kProbFloor = 1e-12;

// Mean over the batch of -log(probs[i, labels[i]]).
template <typename S>
S cross_entropy_fw(const Tensor<S>& probs, const std::vector<std::int32_t>& labels) {
  if (probs.rank() != 2 || std::int64_t(labels.size()) != probs.dim(0))
    throw std::invalid_argument("cross_entropy: labels must match batch size");
  const std::int64_t b = probs.dim(0), k = probs.dim(1);
  S acc = 0;
  for (std::int64_t i = 0; i < b; ++i) {
    if (labels[std::size_t(i)] < 0 || labels[std::size_t(i)] >= k)
      throw std::out_of_range("cross_entropy: label out of range");
    const S p = probs[i * k + labels[std::size_t(i)]];
    acc += -std::log(std::max(p, S(kProbFloor)));
  }
  return acc / S(b);
}

// dprobs[i, y_i] += -dout / (batch * max(p, floor)), zero where p hit the floor's
// clamp region only through the clamped value itself.
template <typename S>
void cross_entropy_bw(const Tensor<S>& probs, const std::vector<std::int32_t>& labels, S dout,
                      Tensor<S>& dprobs) {
  const std::int64_t b = probs.dim(0), k = probs.dim(1);
  for (std::int64_t i = 0; i < b; ++i) {
    const std::int64_t idx = i * k + labels[std::size_t(i)];
    dprobs[idx] += -dout / (S(b) * std::max(probs[idx], S(kProbFloor)));
  }
}

}  // namespace lth
