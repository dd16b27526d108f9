#include <algorithm>
#include <cmath>

#include "algstruct/kernels.hpp"

namespace algstruct::kernels::reference {

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ta == Trans::No ? a[i * k + p] : a[p * m + i];
        const double bv = tb == Trans::No ? b[p * n + j] : b[j * k + p];
        s += av * bv;
      }
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = x[r * cols];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[r * cols + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) sum += std::exp(x[r * cols + j] - mx);
    for (std::size_t j = 0; j < cols; ++j) y[r * cols + j] = std::exp(x[r * cols + j] - mx) / sum;
  }
}

void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<double> out, std::span<double> probs,
                       std::size_t batch, std::size_t seq, std::size_t heads,
                       std::size_t head_dim) {
  const std::size_t width = heads * head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seq; ++i) {
        double* prow = probs.data() + ((b * heads + h) * seq + i) * seq;
        std::fill(prow, prow + seq, 0.0);
        double mx = -1e300;
        for (std::size_t j = 0; j <= i; ++j) {
          double s = 0.0;
          for (std::size_t d = 0; d < head_dim; ++d) {
            s += q[(b * seq + i) * width + h * head_dim + d] * k[(b * seq + j) * width + h * head_dim + d];
          }
          prow[j] = s * scale;
          mx = std::max(mx, prow[j]);
        }
        double sum = 0.0;
        for (std::size_t j = 0; j <= i; ++j) sum += std::exp(prow[j] - mx);
        for (std::size_t j = 0; j <= i; ++j) prow[j] = std::exp(prow[j] - mx) / sum;
        for (std::size_t d = 0; d < head_dim; ++d) {
          double s = 0.0;
          for (std::size_t j = 0; j <= i; ++j) s += prow[j] * v[(b * seq + j) * width + h * head_dim + d];
          out[(b * seq + i) * width + h * head_dim + d] = s;
        }
      }
    }
  }
}

}  // namespace algstruct::kernels::reference
