#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "algstruct/error.hpp"
#include "algstruct/rng.hpp"
#include "algstruct/tape.hpp"

using namespace algstruct;
using namespace algstruct::nn;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& x : t.data()) x = scale * rng.normal();
  return t;
}

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Runs the analytic gradient of `build` against central differences over
// every coordinate of every input.
double check_all(const Builder& build, std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.parameter(t));
  const Var loss = build(tape, vars);
  tape.backward(loss);
  std::vector<Tensor> analytic;
  std::size_t total = 0;
  for (const auto& v : vars) {
    analytic.push_back(tape.grad(v));
    total += v.value().size();
  }
  std::vector<Tensor*> ptrs;
  for (auto& t : inputs) ptrs.push_back(&t);
  auto f = [&]() {
    Tape t(false);
    std::vector<Var> vs;
    for (const auto& x : inputs) vs.push_back(t.parameter(x));
    return build(t, vs).value()[0];
  };
  const auto r = grad_check(f, ptrs, analytic, 1e-5, 1e-6, total, 1);
  EXPECT_EQ(r.coordinates, total);
  return r.max_relative_error;
}

}  // namespace

TEST(Tape, SquareDerivative) {
  Tape tape;
  Tensor x = Tensor::scalar(3.0);
  Var v = tape.parameter(x);
  Var y = mul(v, v);
  tape.backward(y);
  EXPECT_DOUBLE_EQ(tape.grad(v)[0], 6.0);
}

TEST(Tape, ConstantsReceiveNoGradient) {
  Tape tape;
  Var c = tape.constant(Tensor::scalar(2.0));
  Tensor p = Tensor::scalar(5.0);
  Var v = tape.parameter(p);
  tape.backward(mul(c, v));
  EXPECT_FALSE(tape.requires_grad(c));
  EXPECT_DOUBLE_EQ(tape.grad(v)[0], 2.0);
}

TEST(Tape, NonScalarLossIsShapeError) {
  Tape tape;
  Tensor p({2, 2}, 1.0);
  Var v = tape.parameter(p);
  EXPECT_THROW(tape.backward(v), ShapeError);
}

TEST(Tape, ShapeMismatches) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3}));
  Var b = tape.constant(Tensor({2, 3}));
  EXPECT_THROW(matmul(a, b), ShapeError);
  EXPECT_THROW(add(a, tape.constant(Tensor({3, 2}))), ShapeError);
  EXPECT_THROW(add_bias(a, tape.constant(Tensor({2}))), ShapeError);
  EXPECT_THROW(slice_cols(a, 2, 5), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tape, MatmulHandComputed) {
  Tape tape(false);
  Var a = tape.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  Var b = tape.constant(Tensor({2, 2}, {5, 6, 7, 8}));
  EXPECT_EQ(matmul(a, b).value().data()[3], 50.0);
  EXPECT_EQ(matmul_nt(a, b).value().data()[1], 1 * 7 + 2 * 8);
}

TEST(Tape, CrossEntropyGradientIsSoftmaxMinusOneHot) {
  Rng rng(2);
  Tensor logits = random_tensor({3, 5}, rng);
  const std::vector<std::size_t> targets{1, 4, 0};
  Tape tape;
  Var l = tape.parameter(logits);
  Var loss = cross_entropy(l, targets);
  tape.backward(loss);
  const Tensor& g = tape.grad(l);
  double expected_loss = 0.0;
  for (std::size_t r = 0; r < 3; ++r) {
    double z = 0.0;
    for (std::size_t c = 0; c < 5; ++c) z += std::exp(logits.at(r, c));
    expected_loss -= std::log(std::exp(logits.at(r, targets[r])) / z);
    for (std::size_t c = 0; c < 5; ++c) {
      const double p = std::exp(logits.at(r, c)) / z - (c == targets[r] ? 1.0 : 0.0);
      EXPECT_NEAR(g.at(r, c), p / 3.0, 1e-15);
    }
  }
  EXPECT_NEAR(loss.value()[0], expected_loss / 3.0, 1e-14);
}

TEST(Tape, CrossEntropyNearZeroForConfidentCorrect) {
  Tape tape(false);
  Var l = tape.constant(Tensor({1, 3}, {100.0, 0.0, 0.0}));
  const std::vector<std::size_t> t{0};
  EXPECT_LT(cross_entropy(l, t).value()[0], 1e-40);
}

TEST(Tape, SoftmaxRowsSumToOne) {
  Rng rng(3);
  Tape tape(false);
  Var s = softmax_rows(tape.constant(random_tensor({10, 9}, rng, 20.0)));
  for (std::size_t r = 0; r < 10; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 9; ++c) total += s.value().at(r, c);
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Tape, LayerNormInvariantWithTinyEps) {
  Rng rng(4);
  Tape tape(false);
  Var x = tape.constant(random_tensor({6, 32}, rng, 5.0));
  Var y = layer_norm(x, tape.constant(Tensor({32}, 1.0)), tape.constant(Tensor({32}, 0.0)), 1e-12);
  for (std::size_t r = 0; r < 6; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 32; ++c) mu += y.value().at(r, c) / 32.0;
    for (std::size_t c = 0; c < 32; ++c) var += std::pow(y.value().at(r, c) - mu, 2) / 32.0;
    EXPECT_LT(std::abs(mu), 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-6);
  }
}

TEST(Tape, GatherRowsAccumulatesRepeatedRows) {
  Tensor table({3, 2}, {1, 2, 3, 4, 5, 6});
  Tape tape;
  Var t = tape.parameter(table);
  const std::vector<std::size_t> rows{2, 0, 2};
  Var g = gather_rows(t, rows);
  EXPECT_EQ(g.value().data()[0], 5.0);
  tape.backward(sum(g));
  EXPECT_EQ(tape.grad(t).data()[4], 2.0);
  EXPECT_EQ(tape.grad(t).data()[2], 0.0);
}

TEST(TapeGrad, ElementwiseAndLinearOps) {
  Rng rng(5);
  std::vector<Tensor> in{random_tensor({4, 6}, rng), random_tensor({6, 3}, rng),
                         random_tensor({4, 3}, rng), random_tensor({3}, rng)};
  const double err = check_all(
      [](Tape&, const std::vector<Var>& v) {
        Var h = add_bias(add(matmul(v[0], v[1]), v[2]), v[3]);
        return sum(mul(scale(h, 0.7), h));
      },
      in);
  EXPECT_LT(err, 1e-7);
}

TEST(TapeGrad, ConcatSliceMatmulNt) {
  Rng rng(6);
  std::vector<Tensor> in{random_tensor({3, 4}, rng), random_tensor({3, 2}, rng),
                         random_tensor({5, 6}, rng)};
  const double err = check_all(
      [](Tape&, const std::vector<Var>& v) {
        const std::vector<Var> parts{v[0], v[1]};
        Var c = concat_cols(parts);
        Var s = slice_cols(c, 1, 5);
        Var m = matmul_nt(c, v[2]);
        return add(sum(mul(s, s)), sum(m));
      },
      in);
  EXPECT_LT(err, 1e-7);
}

TEST(TapeGrad, SoftmaxLayerNormGelu) {
  Rng rng(7);
  std::vector<Tensor> in{random_tensor({4, 8}, rng), random_tensor({8}, rng),
                         random_tensor({8}, rng), random_tensor({4, 8}, rng)};
  const double err = check_all(
      [](Tape& t, const std::vector<Var>& v) {
        Var ln = layer_norm(v[0], v[1], v[2]);
        Var g = gelu(ln);
        Var s = softmax_rows(g);
        return sum(mul(s, v[3]));
      },
      in);
  EXPECT_LT(err, 1e-6);
}

TEST(TapeGrad, CausalAttentionAndCrossEntropy) {
  Rng rng(8);
  const std::size_t batch = 2, seq = 5, heads = 2, hd = 3;
  std::vector<Tensor> in{random_tensor({batch * seq, heads * hd}, rng),
                         random_tensor({batch * seq, heads * hd}, rng),
                         random_tensor({batch * seq, heads * hd}, rng),
                         random_tensor({heads * hd, 7}, rng)};
  const double err = check_all(
      [&](Tape&, const std::vector<Var>& v) {
        Var a = causal_attention(v[0], v[1], v[2], batch, seq, heads);
        const std::vector<std::size_t> rows{4, 9};
        const std::vector<std::size_t> targets{3, 6};
        return cross_entropy(matmul(gather_rows(a, rows), v[3]), targets);
      },
      in);
  EXPECT_LT(err, 1e-6);
}

TEST(GradCheck, DetectsWrongGradient) {
  Tensor x({3}, {1.0, 2.0, 3.0});
  std::vector<Tensor*> ptrs{&x};
  std::vector<Tensor> wrong{Tensor({3}, {2.0, 4.0, 7.0})};  // d(sum x^2) = 2x, last entry off
  auto f = [&]() { return x[0] * x[0] + x[1] * x[1] + x[2] * x[2]; };
  const auto r = grad_check(f, ptrs, wrong, 1e-5, 1e-4, 3, 1);
  EXPECT_FALSE(r.passed);
  EXPECT_NEAR(r.max_relative_error, 1.0 / 13.0, 1e-6);
}
