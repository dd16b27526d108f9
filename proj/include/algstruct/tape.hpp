#pragma once

// Reverse-mode differentiation over a linear tape of tensor ops.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "algstruct/tensor.hpp"

namespace algstruct::nn {

class Tape;

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const std::vector<std::size_t>& shape() const { return value().shape(); }
};

class Tape {
 public:
  // With grad disabled no backward closures are recorded (inference).
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }

  // A constant input; never receives a gradient.
  Var constant(Tensor value);
  // A leaf referencing caller-owned storage (parameters). The tensor must
  // outlive the tape and stay unchanged until backward() returns.
  Var parameter(const Tensor& value);

  const Tensor& value(const Var& v) const;
  // Zero tensor if no gradient reached the node.
  const Tensor& grad(const Var& v);
  bool has_grad(const Var& v) const { return !nodes_[v.id].grad.data().empty(); }
  bool requires_grad(const Var& v) const { return nodes_[v.id].requires_grad; }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse order.
  void backward(const Var& loss);

  std::size_t size() const noexcept { return nodes_.size(); }

  // Op plumbing used by ops.cpp.
  using Backward = std::function<void(Tape&, const Var& self)>;
  Var record(Tensor value, std::span<const Var> inputs, Backward backward);
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward));
  }
  Tensor& grad_buffer(const Var& v);

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

// --- ops -----------------------------------------------------------------

Var matmul(const Var& a, const Var& b);     // [m,k] x [k,n]
Var matmul_nt(const Var& a, const Var& b);  // [m,k] x [n,k]^T
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // element-wise
Var add_bias(const Var& x, const Var& bias);  // [r,c] + [c]
Var scale(const Var& x, double s);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(const Var& x, std::size_t begin, std::size_t end);
// Row gather: out[i] = x[rows[i]]. Doubles as embedding lookup.
Var gather_rows(const Var& x, std::span<const std::size_t> rows);
Var softmax_rows(const Var& x);
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
Var gelu(const Var& x);
Var sum(const Var& x);
// Mean over rows of -log softmax(logits)[target].
Var cross_entropy(const Var& logits, std::span<const std::size_t> targets);
// Causal multi-head self-attention; q/k/v are [batch*seq, heads*head_dim].
Var causal_attention(const Var& q, const Var& k, const Var& v, std::size_t batch, std::size_t seq,
                     std::size_t heads);

// --- gradient check -----------------------------------------------------

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  bool passed = false;
};

// Compares `analytic` against central differences of `loss` on `samples`
// randomly chosen coordinates across `params`. Relative error is
// |a - n| / (|a| + |n| + 1e-12).
GradCheckResult grad_check(const std::function<double()>& loss, std::span<Tensor* const> params,
                           std::span<const Tensor> analytic, double epsilon, double tolerance,
                           std::size_t samples, std::uint64_t seed);

}  // namespace algstruct::nn
