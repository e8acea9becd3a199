// Serial vs OpenMP kernels, plus one end-to-end explanation.

#include <benchmark/benchmark.h>

#include "omenn/engine.hpp"
#include "omenn/generate.hpp"
#include "omenn/kernels.hpp"

using namespace omenn;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Uniform rng(seed);
  Tensor t({r, c});
  for (double& v : t.storage()) v = rng.next(-1, 1);
  return t;
}

template <Tensor (*F)(const Tensor&, const Tensor&)>
void bm_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(F(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

using ConvFn = Tensor (*)(const Tensor&, const Tensor&, std::size_t, const ConvGeometry&);

template <ConvFn F, bool Adjoint>
void bm_conv(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  const std::size_t din = 8, dout = 16;
  const ConvGeometry g{side, side, 3, 3, 1, 1};
  const Tensor kernel = random_matrix(9 * din, dout, 3);
  const Tensor x = Adjoint ? random_matrix(g.out_tokens(), dout, 4)
                           : random_matrix(side * side, din, 4);
  for (auto _ : state) benchmark::DoNotOptimize(F(x, kernel, din, g));
}

void bm_explain(benchmark::State& state) {
  const ModelGraph m =
      generate_random_model(parse_arch_spec("vit-block:h=8,w=8,c=3,dim=16,heads=2,mlp=32"), 1);
  const Tensor x = random_input(m.input, 2);
  for (auto _ : state) benchmark::DoNotOptimize(explain(m, x, 0));
}

}  // namespace

BENCHMARK(bm_matmul<kernels::serial::matmul>)->Name("matmul/serial")->Arg(64)->Arg(256);
BENCHMARK(bm_matmul<kernels::parallel::matmul>)->Name("matmul/parallel")->Arg(64)->Arg(256);
BENCHMARK(bm_conv<kernels::serial::conv2d, false>)->Name("conv2d/serial")->Arg(16)->Arg(64);
BENCHMARK(bm_conv<kernels::parallel::conv2d, false>)->Name("conv2d/parallel")->Arg(16)->Arg(64);
BENCHMARK(bm_conv<kernels::serial::conv2d_adjoint, true>)
    ->Name("conv2d_adjoint/serial")
    ->Arg(16)
    ->Arg(64);
BENCHMARK(bm_conv<kernels::parallel::conv2d_adjoint, true>)
    ->Name("conv2d_adjoint/parallel")
    ->Arg(16)
    ->Arg(64);
BENCHMARK(bm_explain)->Name("explain/vit-block");

BENCHMARK_MAIN();
