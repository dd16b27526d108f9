#include <algorithm>
#include <cmath>
#include <vector>

#include "algstruct/kernels.hpp"

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace algstruct::kernels {

namespace {

// Output rows are split into fixed-size blocks so every block sees the same
// inner-product order whatever the thread count.
constexpr std::size_t kGemmRowBlock = 64;

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

template <typename OpA, typename OpB>
void gemm_blocks(const OpA& a, const OpB& b, double* c, std::size_t m, std::size_t n,
                 bool accumulate) {
  const auto blocks = static_cast<std::ptrdiff_t>((m + kGemmRowBlock - 1) / kGemmRowBlock);
  const auto cols = static_cast<Eigen::Index>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t blk = 0; blk < blocks; ++blk) {
    const auto i0 = static_cast<Eigen::Index>(static_cast<std::size_t>(blk) * kGemmRowBlock);
    const auto rows = static_cast<Eigen::Index>(std::min(kGemmRowBlock, m - static_cast<std::size_t>(i0)));
    MutMap out(c + i0 * cols, rows, cols);
    if (accumulate) {
      out.noalias() += a.middleRows(i0, rows) * b;
    } else {
      out.noalias() = a.middleRows(i0, rows) * b;
    }
  }
}

template <typename OpA>
void gemm_dispatch_b(const OpA& a, Trans tb, const double* b, double* c, std::size_t m,
                     std::size_t n, std::size_t k, bool accumulate) {
  const auto ki = static_cast<Eigen::Index>(k);
  const auto ni = static_cast<Eigen::Index>(n);
  if (tb == Trans::No) {
    gemm_blocks(a, ConstMap(b, ki, ni), c, m, n, accumulate);
  } else {
    gemm_blocks(a, ConstMap(b, ni, ki).transpose(), c, m, n, accumulate);
  }
}

}  // namespace

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(m * n), 0.0);
    return;
  }
  const auto mi = static_cast<Eigen::Index>(m);
  const auto ki = static_cast<Eigen::Index>(k);
  if (ta == Trans::No) {
    gemm_dispatch_b(ConstMap(a.data(), mi, ki), tb, b.data(), c.data(), m, n, k, accumulate);
  } else {
    gemm_dispatch_b(ConstMap(a.data(), ki, mi).transpose(), tb, b.data(), c.data(), m, n, k,
                    accumulate);
  }
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double* yr = y.data() + r * cols;
    double mx = xr[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

void layer_norm_forward(std::span<const double> x, std::span<const double> gain,
                        std::span<const double> bias, std::span<double> y, std::span<double> mean,
                        std::span<double> rstd, std::size_t rows, std::size_t cols, double eps) {
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    double mu = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mu += xr[j];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(cols);
    const double rs = 1.0 / std::sqrt(var + eps);
    mean[r] = mu;
    rstd[r] = rs;
    double* yr = y.data() + r * cols;
    for (std::size_t j = 0; j < cols; ++j) yr[j] = (xr[j] - mu) * rs * gain[j] + bias[j];
  }
}

void layer_norm_backward(std::span<const double> x, std::span<const double> gain,
                         std::span<const double> mean, std::span<const double> rstd,
                         std::span<const double> dy, std::span<double> dx,
                         std::span<double> dgain, std::span<double> dbias, std::size_t rows,
                         std::size_t cols) {
  const double inv_n = 1.0 / static_cast<double>(cols);
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * cols;
    const double* dyr = dy.data() + r * cols;
    double* dxr = dx.data() + r * cols;
    const double mu = mean[r];
    const double rs = rstd[r];
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double g = dyr[j] * gain[j];
      sum_g += g;
      sum_gx += g * (xr[j] - mu) * rs;
    }
    for (std::size_t j = 0; j < cols; ++j) {
      const double xhat = (xr[j] - mu) * rs;
      const double g = dyr[j] * gain[j];
      dxr[j] += rs * (g - inv_n * sum_g - xhat * inv_n * sum_gx);
    }
  }
#pragma omp parallel for schedule(static)
  for (std::size_t j = 0; j < cols; ++j) {
    double sg = 0.0, sb = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double xhat = (x[r * cols + j] - mean[r]) * rstd[r];
      sg += dy[r * cols + j] * xhat;
      sb += dy[r * cols + j];
    }
    dgain[j] += sg;
    dbias[j] += sb;
  }
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

namespace {

constexpr std::size_t kEltChunk = 4096;

// tanh through the vectorised exponential: 1 - 2 / (1 + e^{2u}). Saturates
// cleanly to +-1 for large |u|.
template <typename F>
void gelu_chunks(std::size_t n, const F& body) {
  const auto chunks = static_cast<std::ptrdiff_t>((n + kEltChunk - 1) / kEltChunk);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t c = 0; c < chunks; ++c) {
    const std::size_t begin = static_cast<std::size_t>(c) * kEltChunk;
    body(begin, std::min(n, begin + kEltChunk) - begin);
  }
}

using ArrayMap = Eigen::Map<const Eigen::ArrayXd>;
using MutArrayMap = Eigen::Map<Eigen::ArrayXd>;

}  // namespace

void gelu_forward(std::span<const double> x, std::span<double> y) {
  gelu_chunks(x.size(), [&](std::size_t begin, std::size_t len) {
    const auto l = static_cast<Eigen::Index>(len);
    const ArrayMap v(x.data() + begin, l);
    const Eigen::ArrayXd u = kGeluC * (v + kGeluA * v * v * v);
    const Eigen::ArrayXd t = 1.0 - 2.0 / (1.0 + (2.0 * u).exp());
    MutArrayMap(y.data() + begin, l) = 0.5 * v * (1.0 + t);
  });
}

void gelu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx) {
  gelu_chunks(x.size(), [&](std::size_t begin, std::size_t len) {
    const auto l = static_cast<Eigen::Index>(len);
    const ArrayMap v(x.data() + begin, l);
    const Eigen::ArrayXd u = kGeluC * (v + kGeluA * v * v * v);
    const Eigen::ArrayXd t = 1.0 - 2.0 / (1.0 + (2.0 * u).exp());
    const Eigen::ArrayXd du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
    MutArrayMap(dx.data() + begin, l) +=
        ArrayMap(dy.data() + begin, l) * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
  });
}

void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<double> out, std::span<double> probs,
                       std::size_t batch, std::size_t seq, std::size_t heads,
                       std::size_t head_dim) {
  const std::size_t width = heads * head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
#pragma omp parallel for collapse(2) schedule(static)
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * head_dim;
      double* pbh = probs.data() + (b * heads + h) * seq * seq;
      for (std::size_t i = 0; i < seq; ++i) {
        const double* qi = q.data() + (b * seq + i) * width + off;
        double* prow = pbh + i * seq;
        double mx = -1e300;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* kj = k.data() + (b * seq + j) * width + off;
          double s = 0.0;
          for (std::size_t d = 0; d < head_dim; ++d) s += qi[d] * kj[d];
          prow[j] = s * scale;
          mx = std::max(mx, prow[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          prow[j] = std::exp(prow[j] - mx);
          sum += prow[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j <= i; ++j) prow[j] *= inv;
        for (std::size_t j = i + 1; j < seq; ++j) prow[j] = 0.0;
        double* oi = out.data() + (b * seq + i) * width + off;
        for (std::size_t d = 0; d < head_dim; ++d) oi[d] = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* vj = v.data() + (b * seq + j) * width + off;
          const double p = prow[j];
          for (std::size_t d = 0; d < head_dim; ++d) oi[d] += p * vj[d];
        }
      }
    }
  }
}

void attention_backward(std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> dout, std::span<double> dq, std::span<double> dk,
                        std::span<double> dv, std::size_t batch, std::size_t seq,
                        std::size_t heads, std::size_t head_dim) {
  const std::size_t width = heads * head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
#pragma omp parallel for collapse(2) schedule(static)
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * head_dim;
      const double* pbh = probs.data() + (b * heads + h) * seq * seq;
      std::vector<double> dp(seq);
      for (std::size_t i = 0; i < seq; ++i) {
        const double* prow = pbh + i * seq;
        const double* doi = dout.data() + (b * seq + i) * width + off;
        double dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          const double* vj = v.data() + (b * seq + j) * width + off;
          double* dvj = dv.data() + (b * seq + j) * width + off;
          double s = 0.0;
          for (std::size_t d = 0; d < head_dim; ++d) {
            s += doi[d] * vj[d];
            dvj[d] += prow[j] * doi[d];
          }
          dp[j] = s;
          dot += prow[j] * s;
        }
        const double* qi = q.data() + (b * seq + i) * width + off;
        double* dqi = dq.data() + (b * seq + i) * width + off;
        for (std::size_t j = 0; j <= i; ++j) {
          const double ds = prow[j] * (dp[j] - dot) * scale;
          const double* kj = k.data() + (b * seq + j) * width + off;
          double* dkj = dk.data() + (b * seq + j) * width + off;
          for (std::size_t d = 0; d < head_dim; ++d) {
            dqi[d] += ds * kj[d];
            dkj[d] += ds * qi[d];
          }
        }
      }
    }
  }
}

void column_sums(std::span<const double> x, std::span<double> out, std::size_t rows, std::size_t cols) {
  // Column blocks keep the row loop innermost-contiguous; every column still
  // sums its rows in order.
  constexpr std::size_t kBlock = 64;
  const auto blocks = static_cast<std::ptrdiff_t>((cols + kBlock - 1) / kBlock);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t b = 0; b < blocks; ++b) {
    const std::size_t j0 = static_cast<std::size_t>(b) * kBlock;
    const std::size_t w = std::min(kBlock, cols - j0);
    double acc[kBlock] = {};
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = x.data() + r * cols + j0;
#pragma omp simd
      for (std::size_t j = 0; j < w; ++j) acc[j] += xr[j];
    }
    for (std::size_t j = 0; j < w; ++j) out[j0 + j] += acc[j];
  }
}

void set_num_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace algstruct::kernels
