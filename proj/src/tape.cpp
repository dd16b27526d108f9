#include "algstruct/tape.hpp"

#include <cmath>
#include <memory>

#include "algstruct/kernels.hpp"
#include "algstruct/rng.hpp"

namespace algstruct::nn {

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(const Tensor& value) {
  Node n;
  n.external = &value;
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

const Tensor& Tape::value(const Var& v) const {
  const Node& n = nodes_[v.id];
  return n.external ? *n.external : n.value;
}

Tensor& Tape::grad_buffer(const Var& v) {
  Node& n = nodes_[v.id];
  if (n.grad.data().empty()) n.grad = Tensor(value(v).shape());
  return n.grad;
}

const Tensor& Tape::grad(const Var& v) { return grad_buffer(v); }

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward backward) {
  Node n;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (const Var& in : inputs) {
      if (nodes_[in.id].requires_grad) n.requires_grad = true;
    }
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

void Tape::backward(const Var& loss) {
  if (value(loss).size() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + value(loss).shape_string());
  }
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss)[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.data().empty()) {
      auto fn = std::move(n.backward);
      fn(*this, Var{this, i});
    }
  }
}

namespace {

using kernels::Trans;

void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

void require_2d(const Tensor& t, const char* op) {
  require(t.ndim() == 2, std::string(op) + ": expected a 2-D tensor, got " + t.shape_string());
}

void accumulate(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_2d(A, "matmul");
  require_2d(B, "matmul");
  require(A.cols() == B.rows(), "matmul: " + A.shape_string() + " x " + B.shape_string());
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor out({m, n});
  kernels::gemm(Trans::No, Trans::No, m, n, k, A.data(), B.data(), out.data());
  return a.tape->record(std::move(out), {a, b}, [a, b, m, n, k](Tape& t, const Var& self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a)) {
      kernels::gemm(Trans::No, Trans::Yes, m, k, n, g.data(), t.value(b).data(),
                    t.grad_buffer(a).data(), true);
    }
    if (t.requires_grad(b)) {
      kernels::gemm(Trans::Yes, Trans::No, k, n, m, t.value(a).data(), g.data(),
                    t.grad_buffer(b).data(), true);
    }
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_2d(A, "matmul_nt");
  require_2d(B, "matmul_nt");
  require(A.cols() == B.cols(), "matmul_nt: " + A.shape_string() + " x " + B.shape_string() + "^T");
  const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
  Tensor out({m, n});
  kernels::gemm(Trans::No, Trans::Yes, m, n, k, A.data(), B.data(), out.data());
  return a.tape->record(std::move(out), {a, b}, [a, b, m, n, k](Tape& t, const Var& self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a)) {
      kernels::gemm(Trans::No, Trans::No, m, k, n, g.data(), t.value(b).data(),
                    t.grad_buffer(a).data(), true);
    }
    if (t.requires_grad(b)) {
      kernels::gemm(Trans::Yes, Trans::No, n, k, m, g.data(), t.value(a).data(),
                    t.grad_buffer(b).data(), true);
    }
  });
}

Var add(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.same_shape(B), "add: " + A.shape_string() + " vs " + B.shape_string());
  Tensor out = A;
  auto o = out.data();
  auto bd = B.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Var& self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(a)) accumulate(t.grad_buffer(a), g);
    if (t.requires_grad(b)) accumulate(t.grad_buffer(b), g);
  });
}

Var mul(const Var& a, const Var& b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.same_shape(B), "mul: " + A.shape_string() + " vs " + B.shape_string());
  Tensor out = A;
  auto o = out.data();
  auto bd = B.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Var& self) {
    const Tensor& g = t.grad(self);
    // Read both values before touching grad buffers; a and b may alias.
    const Tensor av = t.value(a);
    const Tensor bv = t.value(b);
    if (t.requires_grad(a)) {
      auto ga = t.grad_buffer(a).data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b)) {
      auto gb = t.grad_buffer(b).data();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var add_bias(const Var& x, const Var& bias) {
  const Tensor& X = x.value();
  const Tensor& B = bias.value();
  require_2d(X, "add_bias");
  require(B.size() == X.cols(), "add_bias: bias " + B.shape_string() + " for " + X.shape_string());
  const std::size_t rows = X.rows(), cols = X.cols();
  Tensor out = X;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += B[c];
  }
  return x.tape->record(std::move(out), {x, bias}, [x, bias, rows, cols](Tape& t, const Var& self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(x)) accumulate(t.grad_buffer(x), g);
    if (t.requires_grad(bias)) kernels::column_sums(g.data(), t.grad_buffer(bias).data(), rows, cols);
  });
}

Var scale(const Var& x, double s) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= s;
  return x.tape->record(std::move(out), {x}, [x, s](Tape& t, const Var& self) {
    const Tensor& g = t.grad(self);
    auto gx = t.grad_buffer(x).data();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += s * g[i];
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t rows = parts[0].value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    require_2d(p.value(), "concat_cols");
    require(p.value().rows() == rows, "concat_cols: row mismatch");
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Tensor out({rows, total});
  std::size_t off = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& P = parts[i].value();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < widths[i]; ++c) out[r * total + off + c] = P[r * widths[i] + c];
    }
    off += widths[i];
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(out), parts, [inputs, widths, rows, total](Tape& t, const Var& self) {
    const Tensor& g = t.grad(self);
    std::size_t o = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (t.requires_grad(inputs[i])) {
        auto gi = t.grad_buffer(inputs[i]).data();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < widths[i]; ++c) gi[r * widths[i] + c] += g[r * total + o + c];
        }
      }
      o += widths[i];
    }
  });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t end) {
  const Tensor& X = x.value();
  require_2d(X, "slice_cols");
  require(begin < end && end <= X.cols(), "slice_cols: bad range");
  const std::size_t rows = X.rows(), cols = X.cols(), w = end - begin;
  Tensor out({rows, w});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = X[r * cols + begin + c];
  }
  return x.tape->record(std::move(out), {x}, [x, begin, rows, cols, w](Tape& t, const Var& self) {
    const Tensor& g = t.grad(self);
    auto gx = t.grad_buffer(x).data();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) gx[r * cols + begin + c] += g[r * w + c];
    }
  });
}

Var gather_rows(const Var& x, std::span<const std::size_t> rows) {
  const Tensor& X = x.value();
  require_2d(X, "gather_rows");
  const std::size_t cols = X.cols();
  Tensor out({rows.size(), cols});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < X.rows(), "gather_rows: row " + std::to_string(rows[i]) + " out of range");
    for (std::size_t c = 0; c < cols; ++c) out[i * cols + c] = X[rows[i] * cols + c];
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return x.tape->record(std::move(out), {x}, [x, idx = std::move(idx), cols](Tape& t, const Var& self) {
    const Tensor& g = t.grad(self);
    auto gx = t.grad_buffer(x).data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t c = 0; c < cols; ++c) gx[idx[i] * cols + c] += g[i * cols + c];
    }
  });
}

Var softmax_rows(const Var& x) {
  const Tensor& X = x.value();
  require_2d(X, "softmax_rows");
  const std::size_t rows = X.rows(), cols = X.cols();
  Tensor out(X.shape());
  kernels::softmax_rows(X.data(), out.data(), rows, cols);
  return x.tape->record(std::move(out), {x}, [x, rows, cols](Tape& t, const Var& self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    auto gx = t.grad_buffer(x).data();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        gx[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
      }
    }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  const Tensor& X = x.value();
  require_2d(X, "layer_norm");
  const std::size_t rows = X.rows(), cols = X.cols();
  require(gain.value().size() == cols && bias.value().size() == cols, "layer_norm: gain/bias width");
  Tensor out(X.shape());
  auto stats = std::make_shared<std::pair<std::vector<double>, std::vector<double>>>(
      std::vector<double>(rows), std::vector<double>(rows));
  kernels::layer_norm_forward(X.data(), gain.value().data(), bias.value().data(), out.data(),
                              stats->first, stats->second, rows, cols, eps);
  return x.tape->record(std::move(out), {x, gain, bias},
                        [x, gain, bias, stats, rows, cols](Tape& t, const Var& self) {
                          const Tensor& g = t.grad(self);
                          Tensor scratch_dx, scratch_dg, scratch_db;
                          std::span<double> dx, dg, db;
                          if (t.requires_grad(x)) {
                            dx = t.grad_buffer(x).data();
                          } else {
                            scratch_dx = Tensor({rows, cols});
                            dx = scratch_dx.data();
                          }
                          if (t.requires_grad(gain)) {
                            dg = t.grad_buffer(gain).data();
                          } else {
                            scratch_dg = Tensor({cols});
                            dg = scratch_dg.data();
                          }
                          if (t.requires_grad(bias)) {
                            db = t.grad_buffer(bias).data();
                          } else {
                            scratch_db = Tensor({cols});
                            db = scratch_db.data();
                          }
                          kernels::layer_norm_backward(t.value(x).data(), t.value(gain).data(),
                                                       stats->first, stats->second, g.data(), dx,
                                                       dg, db, rows, cols);
                        });
}

Var gelu(const Var& x) {
  Tensor out(x.value().shape());
  kernels::gelu_forward(x.value().data(), out.data());
  return x.tape->record(std::move(out), {x}, [x](Tape& t, const Var& self) {
    kernels::gelu_backward(t.value(x).data(), t.grad(self).data(), t.grad_buffer(x).data());
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape->record(Tensor::scalar(s), {x}, [x](Tape& t, const Var& self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad_buffer(x).data()) v += g;
  });
}

Var cross_entropy(const Var& logits, std::span<const std::size_t> targets) {
  const Tensor& L = logits.value();
  require_2d(L, "cross_entropy");
  const std::size_t rows = L.rows(), cols = L.cols();
  require(targets.size() == rows, "cross_entropy: one target per row required");
  auto probs = std::make_shared<Tensor>(L.shape());
  kernels::softmax_rows(L.data(), probs->data(), rows, cols);
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    require(targets[r] < cols, "cross_entropy: target out of range");
    // log-softmax computed directly for accuracy on confident rows.
    double mx = L[r * cols];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, L[r * cols + c]);
    double se = 0.0;
    for (std::size_t c = 0; c < cols; ++c) se += std::exp(L[r * cols + c] - mx);
    loss += -(L[r * cols + targets[r]] - mx - std::log(se));
  }
  loss /= static_cast<double>(rows);
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  return logits.tape->record(Tensor::scalar(loss), {logits},
                             [logits, probs, tg = std::move(tg), rows, cols](Tape& t, const Var& self) {
                               const double g = t.grad(self)[0] / static_cast<double>(rows);
                               auto gl = t.grad_buffer(logits).data();
                               for (std::size_t r = 0; r < rows; ++r) {
                                 for (std::size_t c = 0; c < cols; ++c) {
                                   const double onehot = c == tg[r] ? 1.0 : 0.0;
                                   gl[r * cols + c] += g * ((*probs)[r * cols + c] - onehot);
                                 }
                               }
                             });
}

Var causal_attention(const Var& q, const Var& k, const Var& v, std::size_t batch, std::size_t seq,
                     std::size_t heads) {
  const Tensor& Q = q.value();
  require_2d(Q, "causal_attention");
  require(Q.same_shape(k.value()) && Q.same_shape(v.value()), "causal_attention: q/k/v shapes differ");
  require(Q.rows() == batch * seq, "causal_attention: rows != batch*seq");
  require(heads > 0 && Q.cols() % heads == 0, "causal_attention: width not divisible by heads");
  const std::size_t head_dim = Q.cols() / heads;
  Tensor out(Q.shape());
  auto probs = std::make_shared<Tensor>(std::vector<std::size_t>{batch, heads, seq, seq});
  kernels::attention_forward(Q.data(), k.value().data(), v.value().data(), out.data(),
                             probs->data(), batch, seq, heads, head_dim);
  return q.tape->record(
      std::move(out), {q, k, v},
      [q, k, v, probs, batch, seq, heads, head_dim](Tape& t, const Var& self) {
        const std::size_t n = t.value(q).size();
        Tensor sq, sk, sv;
        auto pick = [&](const Var& var, Tensor& scratch) -> std::span<double> {
          if (t.requires_grad(var)) return t.grad_buffer(var).data();
          scratch = Tensor({n});
          return scratch.data();
        };
        auto dq = pick(q, sq);
        auto dk = pick(k, sk);
        auto dv = pick(v, sv);
        kernels::attention_backward(t.value(q).data(), t.value(k).data(), t.value(v).data(),
                                    probs->data(), t.grad(self).data(), dq, dk, dv, batch, seq,
                                    heads, head_dim);
      });
}

GradCheckResult grad_check(const std::function<double()>& loss, std::span<Tensor* const> params,
                           std::span<const Tensor> analytic, double epsilon, double tolerance,
                           std::size_t samples, std::uint64_t seed) {
  if (params.size() != analytic.size()) throw ShapeError("grad_check: params/analytic count differ");
  std::size_t total = 0;
  for (const Tensor* p : params) total += p->size();
  GradCheckResult result;
  if (total == 0) return result;
  Rng rng(seed, "grad-check");
  for (std::size_t s = 0; s < samples; ++s) {
    std::size_t flat = static_cast<std::size_t>(rng.below(total));
    std::size_t which = 0;
    while (flat >= params[which]->size()) {
      flat -= params[which]->size();
      ++which;
    }
    double& x = (*params[which])[flat];
    const double saved = x;
    x = saved + epsilon;
    const double up = loss();
    x = saved - epsilon;
    const double down = loss();
    x = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = analytic[which][flat];
    const double rel = std::abs(a - numeric) / (std::abs(a) + std::abs(numeric) + 1e-12);
    result.max_relative_error = std::max(result.max_relative_error, rel);
    ++result.coordinates;
  }
  result.passed = result.max_relative_error <= tolerance;
  return result;
}

}  // namespace algstruct::nn
