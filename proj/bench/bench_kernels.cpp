// OpenMP kernels against the serial reference versions.

#include <benchmark/benchmark.h>

#include <vector>

#include "algstruct/kernels.hpp"
#include "algstruct/rng.hpp"

using namespace algstruct;
using kernels::Trans;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

// Shapes follow the desk model: batch*seq rows against d_model / d_ff columns.
template <bool Reference>
void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto k = static_cast<std::size_t>(state.range(2));
  const auto a = random_vec(m * k, 1);
  const auto b = random_vec(k * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    if constexpr (Reference) {
      kernels::reference::gemm(Trans::No, Trans::No, m, n, k, a, b, c);
    } else {
      kernels::gemm(Trans::No, Trans::No, m, n, k, a, b, c);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOPS"] = benchmark::Counter(2.0 * static_cast<double>(m * n * k),
                                                benchmark::Counter::kIsIterationInvariantRate,
                                                benchmark::Counter::kIs1000);
}

template <bool Reference>
void BM_Attention(benchmark::State& state) {
  const std::size_t batch = static_cast<std::size_t>(state.range(0));
  const std::size_t seq = 12, heads = 4, hd = 32;
  const std::size_t n = batch * seq * heads * hd;
  const auto q = random_vec(n, 3), k = random_vec(n, 4), v = random_vec(n, 5);
  std::vector<double> out(n), probs(batch * heads * seq * seq);
  for (auto _ : state) {
    if constexpr (Reference) {
      kernels::reference::attention_forward(q, k, v, out, probs, batch, seq, heads, hd);
    } else {
      kernels::attention_forward(q, k, v, out, probs, batch, seq, heads, hd);
    }
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Reference>
void BM_Softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const std::size_t cols = 28;
  const auto x = random_vec(rows * cols, 6);
  std::vector<double> y(x.size());
  for (auto _ : state) {
    if constexpr (Reference) {
      kernels::reference::softmax_rows(x, y, rows, cols);
    } else {
      kernels::softmax_rows(x, y, rows, cols);
    }
    benchmark::DoNotOptimize(y.data());
  }
}

void gemm_shapes(benchmark::internal::Benchmark* b) {
  b->Args({768, 128, 128})->Args({768, 512, 128})->Args({768, 128, 512})->Args({64, 28, 128});
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("gemm/omp")->Apply(gemm_shapes);
BENCHMARK(BM_Gemm<true>)->Name("gemm/reference")->Apply(gemm_shapes);
BENCHMARK(BM_Attention<false>)->Name("attention/omp")->Arg(64)->Arg(1024);
BENCHMARK(BM_Attention<true>)->Name("attention/reference")->Arg(64)->Arg(1024);
BENCHMARK(BM_Softmax<false>)->Name("softmax/omp")->Arg(64)->Arg(12288);
BENCHMARK(BM_Softmax<true>)->Name("softmax/reference")->Arg(64)->Arg(12288);

BENCHMARK_MAIN();
