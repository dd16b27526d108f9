#pragma once

// Data-parallel kernels behind the tape ops. Every output element is owned by
// one thread and reduced in a fixed sequential order, so results do not depend
// on the thread count. `reference::` holds the plain serial versions the tests
// and the benchmark compare against.

#include <cstddef>
#include <span>

namespace algstruct::kernels {

enum class Trans { No, Yes };

// C[m x n] = op(A) * op(B)  (+ C when accumulate). op(A) is m x k, op(B) is k x n.
// A is stored m x k (or k x m when transposed), B k x n (or n x k).
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate = false);

void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows, std::size_t cols);

// y = (x - mean) * rstd * gain + bias. mean/rstd receive per-row statistics.
void layer_norm_forward(std::span<const double> x, std::span<const double> gain,
                        std::span<const double> bias, std::span<double> y, std::span<double> mean,
                        std::span<double> rstd, std::size_t rows, std::size_t cols, double eps);
// dx is accumulated into; dgain/dbias are accumulated with a fixed row order.
void layer_norm_backward(std::span<const double> x, std::span<const double> gain,
                         std::span<const double> mean, std::span<const double> rstd,
                         std::span<const double> dy, std::span<double> dx,
                         std::span<double> dgain, std::span<double> dbias, std::size_t rows,
                         std::size_t cols);

// tanh-approximated GELU (GPT-2).
void gelu_forward(std::span<const double> x, std::span<double> y);
void gelu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx);

// Causal multi-head attention over [batch*seq, heads*head_dim] row blocks.
// probs receives softmax weights laid out [batch, heads, seq, seq].
void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<double> out, std::span<double> probs,
                       std::size_t batch, std::size_t seq, std::size_t heads,
                       std::size_t head_dim);
// dq/dk/dv are accumulated into.
void attention_backward(std::span<const double> q, std::span<const double> k,
                        std::span<const double> v, std::span<const double> probs,
                        std::span<const double> dout, std::span<double> dq, std::span<double> dk,
                        std::span<double> dv, std::size_t batch, std::size_t seq,
                        std::size_t heads, std::size_t head_dim);

// Column sums of a rows x cols matrix accumulated into out, rows visited in order.
void column_sums(std::span<const double> x, std::span<double> out, std::size_t rows, std::size_t cols);

void set_num_threads(int threads);
int num_threads();

namespace reference {

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate = false);
void softmax_rows(std::span<const double> x, std::span<double> y, std::size_t rows, std::size_t cols);
void attention_forward(std::span<const double> q, std::span<const double> k,
                       std::span<const double> v, std::span<double> out, std::span<double> probs,
                       std::size_t batch, std::size_t seq, std::size_t heads,
                       std::size_t head_dim);

}  // namespace reference

}  // namespace algstruct::kernels
